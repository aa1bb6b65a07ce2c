use ndarray::{Array2, Array4, ArrayViewMut3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dag::FactorTable;
use crate::error::{Error, Result};
use crate::vae_core::ImageBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub size: usize,
    /// Standard deviation of the per-pixel texture noise.
    pub texture_noise: f64,
    /// Seeds the texture noise; sample `i` uses a stream derived from `(seed, i)`.
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { size: 64, texture_noise: 0.02, seed: 0 }
    }
}

/// Factor values and nuisance parameters for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundusParams {
    pub rim: f64,
    pub cup: f64,
    pub vessel: f64,
    pub brightness: f64,
    pub tint: f64,
    pub grad_x: f64,
    pub grad_y: f64,
}

impl Default for FundusParams {
    fn default() -> Self {
        Self { rim: 0.5, cup: 0.5, vessel: 0.5, brightness: 0.9, tint: 0.0, grad_x: 0.0, grad_y: 0.0 }
    }
}

/// Pixel regions each factor is allowed to change.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub cup: Array2<bool>,
    pub rim: Array2<bool>,
    pub vessel: Array2<bool>,
}

impl RegionMasks {
    pub fn by_name(&self, factor: &str) -> Option<&Array2<bool>> {
        match factor {
            "cup" => Some(&self.cup),
            "rim" => Some(&self.rim),
            "vessel" => Some(&self.vessel),
            _ => None,
        }
    }
}

const BACKGROUND: [f64; 3] = [0.55, 0.22, 0.10];
const DISC: [f64; 3] = [0.85, 0.55, 0.30];
const RIM: [f64; 3] = [0.95, 0.40, 0.22];
const CUP: [f64; 3] = [1.00, 0.95, 0.80];
const VESSEL: [f64; 3] = [0.30, 0.04, 0.04];
const TINT: [f64; 3] = [0.06, -0.03, -0.03];
const VESSEL_ANGLES: [f64; 4] = [0.35, 1.95, 3.5, 5.0];
const VESSEL_PHASES: [f64; 4] = [0.0, 1.3, 2.6, 4.1];

struct Geometry {
    centre: f64,
    disc: f64,
}

impl Geometry {
    fn new(size: usize) -> Self {
        Self { centre: (size as f64 - 1.0) / 2.0, disc: 0.30 * size as f64 }
    }

    fn cup_limit(&self) -> f64 {
        0.5 * self.disc
    }

    fn rim_inner(&self) -> f64 {
        0.55 * self.disc
    }

    fn vessel_start(&self) -> f64 {
        self.disc + 3.0
    }
}

/// Coverage of a disc of radius `radius` at distance `r`, with a one-pixel ramp.
fn inside(r: f64, radius: f64) -> f64 {
    (radius - r + 0.5).clamp(0.0, 1.0)
}

fn blend(px: &mut [f64; 3], colour: [f64; 3], w: f64) {
    for c in 0..3 {
        px[c] += w * (colour[c] - px[c]);
    }
}

/// Binary masks: the cup disc, the rim annulus, and everything outside the disc.
pub fn region_masks(size: usize) -> RegionMasks {
    let g = Geometry::new(size);
    let radius = |i: usize, j: usize| ((i as f64 - g.centre).powi(2) + (j as f64 - g.centre).powi(2)).sqrt();
    RegionMasks {
        cup: Array2::from_shape_fn((size, size), |(i, j)| radius(i, j) <= g.cup_limit() + 1.0),
        rim: Array2::from_shape_fn((size, size), |(i, j)| {
            let r = radius(i, j);
            r > g.cup_limit() + 1.0 && r <= g.disc + 1.5
        }),
        vessel: Array2::from_shape_fn((size, size), |(i, j)| radius(i, j) > g.disc + 1.5),
    }
}

fn vessel_strength(size: usize, g: &Geometry, vessel: f64) -> Array2<f64> {
    let mut strength = Array2::<f64>::zeros((size, size));
    let amplitude = 0.5 + 3.5 * vessel;
    let width = 0.9;
    let wavelength = 0.14 * size as f64;
    let end = size as f64 * 0.75;
    for (k, &theta) in VESSEL_ANGLES.iter().enumerate() {
        let (dir, perp) = ((theta.cos(), theta.sin()), (-theta.sin(), theta.cos()));
        let mut t = g.vessel_start();
        while t < end {
            let off = amplitude * (std::f64::consts::TAU * (t - g.vessel_start()) / wavelength + VESSEL_PHASES[k]).sin()
                // taper the wiggle in over the first pixels so the vessel leaves the disc edge cleanly
                * ((t - g.vessel_start()) / 3.0).min(1.0);
            let (y, x) = (g.centre + t * dir.0 + off * perp.0, g.centre + t * dir.1 + off * perp.1);
            let (i0, i1) = ((y - 3.0).floor().max(0.0) as usize, ((y + 3.0).ceil() as usize).min(size - 1));
            let (j0, j1) = ((x - 3.0).floor().max(0.0) as usize, ((x + 3.0).ceil() as usize).min(size - 1));
            if y > -3.0 && x > -3.0 && i0 <= i1 && j0 <= j1 {
                for i in i0..=i1 {
                    for j in j0..=j1 {
                        let d2 = (i as f64 - y).powi(2) + (j as f64 - x).powi(2);
                        let r = ((i as f64 - g.centre).powi(2) + (j as f64 - g.centre).powi(2)).sqrt();
                        if r > g.disc + 2.0 {
                            let s = &mut strength[[i, j]];
                            *s = s.max((-d2 / (2.0 * width * width)).exp());
                        }
                    }
                }
            }
            t += 0.25;
        }
    }
    strength
}

/// Draws one image into `out` (`size × size × 3`) without noise.
pub fn render_clean(p: &FundusParams, mut out: ArrayViewMut3<'_, f64>) {
    let size = out.shape()[0];
    let g = Geometry::new(size);
    let vessels = vessel_strength(size, &g, p.vessel);
    let rim_outer = g.rim_inner() + (0.12 + 0.33 * p.rim.clamp(0.0, 1.0)) * g.disc;
    let rim_weight = 0.4 + 0.6 * p.rim.clamp(0.0, 1.0);
    let cup_radius = p.cup.clamp(0.0, 1.0) * g.cup_limit();
    let vessel_contrast = 0.25 + 0.5 * p.vessel.clamp(0.0, 1.0);
    let half = size as f64 / 2.0;
    for i in 0..size {
        for j in 0..size {
            let (dy, dx) = (i as f64 - g.centre, j as f64 - g.centre);
            let r = (dy * dy + dx * dx).sqrt();
            let mut px = BACKGROUND;
            blend(&mut px, DISC, inside(r, g.disc));
            let annulus = inside(r, rim_outer) * (1.0 - inside(r, g.rim_inner()));
            blend(&mut px, RIM, rim_weight * annulus);
            if cup_radius > 0.0 {
                blend(&mut px, CUP, inside(r, cup_radius).min(cup_radius * 2.0));
            }
            blend(&mut px, VESSEL, vessel_contrast * vessels[[i, j]]);
            let light = p.brightness * (1.0 + p.grad_x * dx / half + p.grad_y * dy / half);
            for c in 0..3 {
                out[[i, j, c]] = (px[c] * light + p.tint * TINT[c]).clamp(0.0, 1.0);
            }
        }
    }
}

fn texture_stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One image with texture noise from stream `index` of `cfg.seed`.
pub fn render_one(p: &FundusParams, cfg: &RenderConfig, index: usize, mut out: ArrayViewMut3<'_, f64>) {
    render_clean(p, out.view_mut());
    if cfg.texture_noise > 0.0 {
        let normal = Normal::new(0.0, cfg.texture_noise).expect("finite noise scale");
        let mut rng = texture_stream(cfg.seed, index);
        out.mapv_inplace(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0));
    }
}

impl FundusParams {
    pub fn from_table(t: &FactorTable, row: usize) -> Result<Self> {
        let get = |name: &str| {
            t.column(name).map(|c| c[row]).ok_or_else(|| Error::invalid(format!("factor table lacks `{name}`")))
        };
        Ok(Self {
            rim: get("rim")?,
            cup: get("cup")?,
            vessel: get("vessel")?,
            brightness: get("brightness")?,
            tint: get("tint")?,
            grad_x: get("grad_x")?,
            grad_y: get("grad_y")?,
        })
    }
}

/// Renders every row of `factors`; image `i` uses texture stream `i`.
pub fn render_fundus(factors: &FactorTable, cfg: &RenderConfig) -> Result<ImageBatch> {
    if cfg.size < 16 {
        return Err(Error::invalid("render size must be at least 16"));
    }
    let n = factors.n();
    let mut out = Array4::zeros((n, cfg.size, cfg.size, 3));
    for (i, img) in out.outer_iter_mut().enumerate() {
        render_one(&FundusParams::from_table(factors, i)?, cfg, i, img);
    }
    ImageBatch::new(out)
}
