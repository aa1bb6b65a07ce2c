use std::path::Path;

use image::GrayImage;
use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vae_core::{ImageBatch, Vae};

/// Difference maps for one causal latent coordinate across a value grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceMapStack {
    /// Index within the causal block.
    pub factor: usize,
    pub baseline: f64,
    pub grid: Vec<f64>,
    /// One `height × width` map per grid value.
    pub maps: Vec<Array2<f64>>,
}

/// `steps` evenly spaced values from the minimum to the maximum of `values`.
pub fn traversal_grid(values: ArrayView1<'_, f64>, steps: usize) -> Vec<f64> {
    let lo = values.fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = values.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if steps <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
}

/// Median with linear interpolation between the two middle values.
pub fn median(values: ArrayView1<'_, f64>) -> f64 {
    quantile(&values.to_vec(), 0.5)
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return 0.0;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < v.len() {
        v[lo] + frac * (v[lo + 1] - v[lo])
    } else {
        v[lo]
    }
}

/// A seeded subset of `count` images (all of them when fewer exist).
pub fn sample_images(images: &ImageBatch, count: usize, seed: u64) -> ImageBatch {
    let n = images.n();
    if count >= n {
        return images.clone();
    }
    let mut rows = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, count).into_vec();
    rows.sort_unstable();
    images.select(&rows)
}

/// Mean absolute pixel change when one causal coordinate moves from
/// `baseline` to each grid value, averaged over `images` and channels.
///
/// The whole stack is scaled jointly so its maximum is 1, then every value
/// below the stack's 75th percentile is set to 0.
pub fn traversal_maps(model: &Vae, images: &ImageBatch, factor: usize, grid: &[f64], baseline: f64) -> Result<DifferenceMapStack> {
    if !model.is_trained() {
        return Err(Error::Untrained);
    }
    let cfg = model.config();
    if factor >= cfg.z2_dim {
        return Err(Error::invalid(format!("causal coordinate {factor} out of range 0..{}", cfg.z2_dim)));
    }
    let col = cfg.z1_dim + factor;
    let (mu, _) = model.encode(images)?;
    let mut z = mu;
    z.column_mut(col).fill(baseline);
    let base = model.decode(z.view())?.into_inner();
    let n = images.n() as f64;
    let mut maps = Vec::with_capacity(grid.len());
    for &g in grid {
        z.column_mut(col).fill(g);
        let moved = model.decode(z.view())?.into_inner();
        let diff = (&moved - &base).mapv(f64::abs);
        let per_pixel = diff.mean_axis(Axis(3)).expect("channels").sum_axis(Axis(0)) / n;
        maps.push(per_pixel);
    }
    let max = maps.iter().flat_map(|m| m.iter()).fold(0.0f64, |a, &b| a.max(b));
    if max > 0.0 {
        for m in &mut maps {
            m.mapv_inplace(|v| v / max);
        }
        let all: Vec<f64> = maps.iter().flat_map(|m| m.iter().copied()).collect();
        let cut = quantile(&all, 0.75);
        for m in &mut maps {
            m.mapv_inplace(|v| if v < cut { 0.0 } else { v });
        }
    }
    Ok(DifferenceMapStack { factor, baseline, grid: grid.to_vec(), maps })
}

/// Share of the stack's squared values that falls inside `mask`.
pub fn mask_energy(stack: &DifferenceMapStack, mask: &Array2<bool>) -> Result<f64> {
    let mut inside = 0.0;
    let mut total = 0.0;
    for m in &stack.maps {
        if m.dim() != mask.dim() {
            return Err(Error::shape(format!("map {:?} vs mask {:?}", m.shape(), mask.shape())));
        }
        for (v, &k) in m.iter().zip(mask.iter()) {
            total += v * v;
            if k {
                inside += v * v;
            }
        }
    }
    Ok(if total > 0.0 { inside / total } else { 0.0 })
}

/// Grayscale PNG with one row of tiles per stack and one tile per grid value.
pub fn write_traversal_png(path: &Path, stacks: &[DifferenceMapStack]) -> Result<()> {
    let Some(first) = stacks.first().and_then(|s| s.maps.first()) else {
        return Err(Error::invalid("nothing to draw"));
    };
    let (h, w) = first.dim();
    let cols = stacks.iter().map(|s| s.maps.len()).max().unwrap_or(0);
    let gap = 2;
    let width = cols * (w + gap);
    let height = stacks.len() * (h + gap);
    let mut img = GrayImage::new(width as u32, height as u32);
    for (r, s) in stacks.iter().enumerate() {
        for (c, m) in s.maps.iter().enumerate() {
            for ((i, j), &v) in m.indexed_iter() {
                let px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel((c * (w + gap) + j) as u32, (r * (h + gap) + i) as u32, image::Luma([px]));
            }
        }
    }
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })
}
