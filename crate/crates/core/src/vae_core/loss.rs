use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Zip};
use serde::{Deserialize, Serialize};

use super::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::Activation;

/// How per-pixel cross-entropy terms are combined within one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BceReduction {
    /// Sum over pixels and channels, mean over images.
    #[default]
    SumPixels,
    /// Mean over every pixel and channel.
    MeanPixels,
}

impl BceReduction {
    fn scale(self, n: usize, per_image: usize) -> f64 {
        match self {
            BceReduction::SumPixels => 1.0 / n as f64,
            BceReduction::MeanPixels => 1.0 / (n * per_image) as f64,
        }
    }
}

fn check_shapes(x: ArrayView4<'_, f64>, other: &[usize]) -> Result<()> {
    if x.shape() != other {
        return Err(Error::shape(format!("images {:?} vs reconstruction {:?}", x.shape(), other)));
    }
    Ok(())
}

/// `β1 · 0.5 · Σ z²`, averaged over samples, and its gradient.
pub fn latent_penalty(z: ArrayView2<'_, f64>, beta1: f64) -> (f64, Array2<f64>) {
    let n = z.nrows().max(1) as f64;
    let value = beta1 * 0.5 * z.iter().map(|v| v * v).sum::<f64>() / n;
    (value, z.mapv(|v| beta1 * v / n))
}

/// Binary cross-entropy of probabilities `xhat` against targets `x`.
pub fn bce(x: &ImageBatch, xhat: &ImageBatch, reduction: BceReduction) -> Result<f64> {
    check_shapes(x.view(), xhat.view().shape())?;
    if xhat.view().iter().any(|&p| p <= 0.0 || p >= 1.0) {
        return Err(Error::invalid("reconstruction must lie strictly inside (0, 1)"));
    }
    let total: f64 = Zip::from(x.view())
        .and(xhat.view())
        .fold(0.0, |acc, &t, &p| acc - (t * p.ln() + (1.0 - t) * (-p).ln_1p()));
    Ok(total * reduction.scale(x.n(), x.pixels_per_image()))
}

/// BCE computed from pre-sigmoid logits, with its gradient in logit space.
pub fn bce_with_logits(x: &ImageBatch, logits: &Array4<f64>, reduction: BceReduction) -> Result<(f64, Array4<f64>)> {
    check_shapes(x.view(), logits.shape())?;
    let scale = reduction.scale(x.n(), x.pixels_per_image());
    let mut grad = Array4::<f64>::zeros(logits.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut grad).and(x.view()).and(logits).for_each(|g, &t, &l| {
        // log(1 + e^l) − t·l, evaluated without overflow
        total += l.max(0.0) - t * l + (-l.abs()).exp().ln_1p();
        *g = (Activation::Sigmoid.apply(l) - t) * scale;
    });
    Ok((total * scale, grad))
}

/// Reconstruction cross-entropy plus `β1 · 0.5 · Σ z²` per sample, with
/// pixels summed within each image.
pub fn cvae_loss(x: &ImageBatch, xhat: &ImageBatch, z: ArrayView2<'_, f64>, beta1: f64) -> Result<f64> {
    cvae_loss_with(x, xhat, z, beta1, BceReduction::SumPixels)
}

pub fn cvae_loss_with(
    x: &ImageBatch,
    xhat: &ImageBatch,
    z: ArrayView2<'_, f64>,
    beta1: f64,
    reduction: BceReduction,
) -> Result<f64> {
    if z.nrows() != x.n() {
        return Err(Error::shape("latent rows differ from image count"));
    }
    let value = bce(x, xhat, reduction)? + latent_penalty(z, beta1).0;
    if !value.is_finite() {
        return Err(Error::NonFinite("cvae loss"));
    }
    Ok(value)
}
