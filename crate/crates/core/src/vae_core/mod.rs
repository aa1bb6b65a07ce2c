//! Split-latent convolutional VAE.
//!
//! Latent columns `0..z1_dim` form the nuisance block Z1 and the remaining
//! `z2_dim` columns form the causal block Z2 in every API.

mod config;
mod loss;
mod params;

pub use config::{ConvSpec, VaeConfig};
pub use loss::{bce, bce_with_logits, cvae_loss, cvae_loss_with, latent_penalty, BceReduction};
pub use params::{load_params, read_params, save_params, write_params};
pub(crate) use params::assign_tensors;

use std::collections::HashMap;
use std::path::Path;

use ndarray::{concatenate, s, Array2, Array4, ArrayD, ArrayView2, ArrayView4, Axis, Ix2, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Conv2d, ConvTranspose2d, Dense, Layer, Param, Sequential, Tape};

/// Images in NHWC layout with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch(Array4<f64>);

impl ImageBatch {
    pub fn new(pixels: Array4<f64>) -> Result<Self> {
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image batch"));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(Self(pixels))
    }

    pub fn n(&self) -> usize {
        self.0.shape()[0]
    }

    /// `(height, width, channels)`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.0.shape();
        [s[1], s[2], s[3]]
    }

    pub fn pixels_per_image(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn view(&self) -> ArrayView4<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self(self.0.select(Axis(0), rows))
    }

    pub fn concat(parts: &[&ImageBatch]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).map(Self).map_err(|e| Error::shape(e.to_string()))
    }
}

/// Encoder outputs and the sampled latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub mu: Array2<f64>,
    pub log_var: Array2<f64>,
    pub noise: Array2<f64>,
    pub z: Array2<f64>,
    z1_dim: usize,
}

impl LatentState {
    pub fn new(mu: Array2<f64>, log_var: Array2<f64>, noise: Array2<f64>, z1_dim: usize) -> Result<Self> {
        let z = reparameterize(mu.view(), log_var.view(), noise.view())?;
        if z1_dim > mu.ncols() {
            return Err(Error::shape("z1 block wider than the latent code"));
        }
        Ok(Self { mu, log_var, noise, z, z1_dim })
    }

    pub fn z1(&self) -> ArrayView2<'_, f64> {
        self.z.slice(s![.., ..self.z1_dim])
    }

    pub fn z2(&self) -> ArrayView2<'_, f64> {
        self.z.slice(s![.., self.z1_dim..])
    }

    pub fn z1_dim(&self) -> usize {
        self.z1_dim
    }
}

/// `z = mu + exp(0.5 · log_var) ∘ noise`
pub fn reparameterize(mu: ArrayView2<'_, f64>, log_var: ArrayView2<'_, f64>, noise: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if mu.dim() != log_var.dim() || mu.dim() != noise.dim() {
        return Err(Error::shape("mu, log_var and noise must share a shape"));
    }
    let mut z = noise.to_owned();
    ndarray::Zip::from(&mut z).and(mu).and(log_var).for_each(|z, &m, &lv| *z = m + (0.5 * lv).exp() * *z);
    Ok(z)
}

/// Everything one training step needs from the forward pass.
#[derive(Debug)]
pub struct VaeForward {
    pub latent: LatentState,
    pub logits: Array4<f64>,
    enc_tape: Tape,
    dec_tape: Tape,
}

impl VaeForward {
    pub fn reconstruction(&self) -> Array4<f64> {
        self.logits.mapv(|l| Activation::Sigmoid.apply(l))
    }
}

#[derive(Debug, Clone)]
pub struct Vae {
    config: VaeConfig,
    pub encoder: Sequential,
    pub decoder: Sequential,
    trained: bool,
}

fn to2(x: ArrayD<f64>) -> Array2<f64> {
    x.into_dimensionality::<Ix2>().expect("dense output")
}

fn to4(x: ArrayD<f64>) -> Array4<f64> {
    x.into_dimensionality::<Ix4>().expect("image-shaped output")
}

impl Vae {
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let silu = Layer::Activation(Activation::Silu);
        let elu = Layer::Activation(Activation::Elu);

        let mut enc = Vec::new();
        let mut cin = config.channels;
        for s in &config.encoder_convs {
            enc.push(Layer::Conv2d(Conv2d::new(&mut rng, s.kernel, cin, s.filters, s.stride, config.padding)));
            enc.push(silu.clone());
            cin = s.filters;
        }
        enc.push(Layer::Flatten);
        let grid = config.feature_grid();
        let mut width = grid.iter().product::<usize>();
        for &u in &config.encoder_dense {
            enc.push(Layer::Dense(Dense::new(&mut rng, width, u)));
            enc.push(elu.clone());
            width = u;
        }
        enc.push(Layer::Dense(Dense::new(&mut rng, width, 2 * config.latent_dim())));

        let mut dec = Vec::new();
        let mut width = config.latent_dim();
        let flat = grid.iter().product::<usize>();
        for &u in config.decoder_dense.iter().chain(std::iter::once(&flat)) {
            dec.push(Layer::Dense(Dense::new(&mut rng, width, u)));
            dec.push(elu.clone());
            width = u;
        }
        dec.push(Layer::Reshape(grid.to_vec()));
        let mut cin = grid[2];
        for (k, s) in config.decoder_convs.iter().enumerate() {
            dec.push(Layer::ConvTranspose2d(ConvTranspose2d::new(
                &mut rng,
                s.kernel,
                cin,
                s.filters,
                s.stride,
                config.padding,
            )));
            if k + 1 < config.decoder_convs.len() {
                dec.push(silu.clone());
            }
            cin = s.filters;
        }
        Ok(Self { config, encoder: Sequential::new(enc), decoder: Sequential::new(dec), trained: false })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    /// True once parameters came from training or a parameter file.
    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn check_images(&self, x: &ImageBatch) -> Result<()> {
        if x.image_shape() != self.config.image_shape() {
            return Err(Error::shape(format!(
                "images are {:?}, model expects {:?}",
                x.image_shape(),
                self.config.image_shape()
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: ArrayView2<'_, f64>) -> Result<()> {
        if z.ncols() != self.config.latent_dim() {
            return Err(Error::shape(format!("latent width {} vs {}", z.ncols(), self.config.latent_dim())));
        }
        Ok(())
    }

    fn split(&self, out: Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let k = self.config.latent_dim();
        (out.slice(s![.., ..k]).to_owned(), out.slice(s![.., k..]).to_owned())
    }

    /// `(mu, log_var)`, each `n × latent_dim`.
    pub fn encode(&self, x: &ImageBatch) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_images(x)?;
        let mut mus = Vec::new();
        let mut lvs = Vec::new();
        for chunk in x.view().axis_chunks_iter(Axis(0), 256) {
            let (m, l) = self.split(to2(self.encoder.infer(&chunk.to_owned().into_dyn())));
            mus.push(m);
            lvs.push(l);
        }
        let cat = |v: Vec<Array2<f64>>| {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            concatenate(Axis(0), &views).expect("matching widths")
        };
        Ok((cat(mus), cat(lvs)))
    }

    pub fn decode_logits(&self, z: ArrayView2<'_, f64>) -> Result<Array4<f64>> {
        self.check_latent(z)?;
        Ok(to4(self.decoder.infer(&z.to_owned().into_dyn())))
    }

    /// Sigmoid images for latent codes `z`.
    pub fn decode(&self, z: ArrayView2<'_, f64>) -> Result<ImageBatch> {
        let p = self.decode_logits(z)?.mapv(|l| Activation::Sigmoid.apply(l));
        ImageBatch::new(p)
    }

    /// Recorded forward pass with explicit reparameterization noise.
    pub fn forward(&self, x: &ImageBatch, noise: Array2<f64>) -> Result<VaeForward> {
        self.check_images(x)?;
        let (out, enc_tape) = self.encoder.forward(&x.view().to_owned().into_dyn());
        let (mu, log_var) = self.split(to2(out));
        let latent = LatentState::new(mu, log_var, noise, self.config.z1_dim)?;
        let (logits, dec_tape) = self.decoder.forward(&latent.z.clone().into_dyn());
        Ok(VaeForward { latent, logits: to4(logits), enc_tape, dec_tape })
    }

    /// Accumulates gradients for `∂L/∂logits` and any extra `∂L/∂z` from
    /// losses defined on the latent code.
    pub fn backward(&mut self, fwd: &VaeForward, d_logits: Array4<f64>, d_z_extra: ArrayView2<'_, f64>) {
        let d_z = to2(self.decoder.backward(&fwd.dec_tape, d_logits.into_dyn(), true).expect("input gradient requested"));
        let d_z = d_z + d_z_extra;
        let lat = &fwd.latent;
        let d_mu = d_z.clone();
        let mut d_lv = d_z;
        ndarray::Zip::from(&mut d_lv)
            .and(&lat.noise)
            .and(&lat.log_var)
            .for_each(|g, &e, &lv| *g *= 0.5 * e * (0.5 * lv).exp());
        let d_out = concatenate(Axis(1), &[d_mu.view(), d_lv.view()]).expect("matching rows");
        self.encoder.backward(&fwd.enc_tape, d_out.into_dyn(), false);
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut p: Vec<_> = self.encoder.named_params().into_iter().map(|(n, p)| (format!("encoder.{n}"), p)).collect();
        p.extend(self.decoder.named_params().into_iter().map(|(n, p)| (format!("decoder.{n}"), p)));
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.parameter_count() + self.decoder.parameter_count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(path, self.named_params().into_iter().map(|(n, p)| (n, &p.value)))
    }

    /// Overwrites every parameter from `tensors`, matching by name and shape.
    /// Extra tensors are ignored.
    pub fn load_tensors(&mut self, tensors: Vec<(String, ArrayD<f64>)>) -> Result<()> {
        let mut pool: HashMap<String, ArrayD<f64>> = tensors.into_iter().collect();
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        assign_tensors(&names, self.params_mut(), &mut pool)?;
        self.trained = true;
        Ok(())
    }
}

/// Free-function form of [`Vae::encode`].
pub fn encode(x: &ImageBatch, model: &Vae) -> Result<(Array2<f64>, Array2<f64>)> {
    model.encode(x)
}

/// Free-function form of [`Vae::decode`].
pub fn decode(z: ArrayView2<'_, f64>, model: &Vae) -> Result<ImageBatch> {
    model.decode(z)
}
