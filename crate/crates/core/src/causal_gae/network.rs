use ndarray::{Array2, ArrayView2, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adjacency::{acyclicity, acyclicity_gradient, WeightedAdjacency};
use super::lagrangian::LagrangianState;
use crate::error::{Error, Result};
use crate::kernel_stats::SampleMatrix;
use crate::nn::{Activation, Dense, Layer, Param, Sequential};

/// Shape of the per-variable sub-networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaeConfig {
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self { hidden_units: 4, hidden_layers: 2, activation: Activation::Elu }
    }
}

/// Block-diagonal mask from `d` blocks of width `a` to `d` blocks of width `b`.
pub fn block_mask(d: usize, a: usize, b: usize) -> Array2<f64> {
    Array2::from_shape_fn((d * a, d * b), |(i, j)| (i / a == j / b) as u8 as f64)
}

fn per_variable_stack<R: Rng>(rng: &mut R, d: usize, cfg: &GaeConfig) -> Sequential {
    let mut widths = vec![1];
    widths.extend(std::iter::repeat_n(cfg.hidden_units, cfg.hidden_layers));
    widths.push(1);
    let mut layers = Vec::new();
    for (k, pair) in widths.windows(2).enumerate() {
        layers.push(Layer::Dense(Dense::masked(rng, block_mask(d, pair[0], pair[1]))));
        if k + 2 < widths.len() {
            layers.push(Layer::Activation(cfg.activation));
        }
    }
    Sequential::new(layers)
}

/// Per-variable encoder `f1` and decoder `f2`, each a stack of block-masked
/// dense layers so variable `i`'s output sees only variable `i`'s input.
#[derive(Debug, Clone)]
pub struct GaeNetwork {
    pub f1: Sequential,
    pub f2: Sequential,
    d: usize,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct GaeTape {
    f1: crate::nn::Tape,
    f1_out: Array2<f64>,
    f2: crate::nn::Tape,
}

/// Loss value and gradients from [`GaeNetwork::loss_and_grad`].
#[derive(Debug, Clone)]
pub struct GaeStep {
    pub loss: f64,
    pub mse: f64,
    pub h: f64,
    /// `∂L/∂Z′`, both the reconstruction target path and the `f1` input path.
    pub d_input: Array2<f64>,
    /// `∂L/∂A`, zero on blacklisted entries.
    pub d_adjacency: Array2<f64>,
}

fn as2(x: ndarray::ArrayD<f64>) -> Array2<f64> {
    x.into_dimensionality::<Ix2>().expect("2-D activations")
}

impl GaeNetwork {
    pub fn new<R: Rng>(rng: &mut R, d: usize, cfg: &GaeConfig) -> Self {
        Self { f1: per_variable_stack(rng, d, cfg), f2: per_variable_stack(rng, d, cfg), d }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn check(&self, z: ArrayView2<'_, f64>, a: &WeightedAdjacency) -> Result<()> {
        if z.ncols() != self.d || a.d() != self.d {
            return Err(Error::shape(format!(
                "graph autoencoder over {} variables got {} columns and a {}-node adjacency",
                self.d,
                z.ncols(),
                a.d()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, z: ArrayView2<'_, f64>, a: &WeightedAdjacency) -> Result<(Array2<f64>, GaeTape)> {
        self.check(z, a)?;
        let (h1, f1) = self.f1.forward(&z.to_owned().into_dyn());
        let f1_out = as2(h1);
        let mixed = f1_out.dot(a.weights());
        let (out, f2) = self.f2.forward(&mixed.into_dyn());
        Ok((as2(out), GaeTape { f1, f1_out, f2 }))
    }

    /// Backpropagates `∂L/∂Ẑ`, accumulating sub-network gradients; returns
    /// `(∂L/∂Z′ through f1, ∂L/∂A)`.
    pub fn backward(&mut self, tape: &GaeTape, a: &WeightedAdjacency, d_out: Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let d_mixed = as2(self.f2.backward(&tape.f2, d_out.into_dyn(), true).expect("input gradient requested"));
        let mut d_a = tape.f1_out.t().dot(&d_mixed);
        d_a.zip_mut_with(a.blacklist(), |g, &b| {
            if b {
                *g = 0.0;
            }
        });
        let d_f1 = d_mixed.dot(&a.weights().t());
        let d_z = as2(self.f1.backward(&tape.f1, d_f1.into_dyn(), true).expect("input gradient requested"));
        (d_z, d_a)
    }

    /// Full objective and its gradients; sub-network gradients are
    /// accumulated into the parameters.
    pub fn loss_and_grad(
        &mut self,
        z: ArrayView2<'_, f64>,
        a: &WeightedAdjacency,
        lambda: f64,
        lag: &LagrangianState,
    ) -> Result<GaeStep> {
        let (zhat, tape) = self.forward(z, a)?;
        let n = z.nrows() as f64;
        let resid = &zhat - &z;
        let mse = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let h = acyclicity(a);
        let loss = mse + lambda * a.l1_norm() + lag.penalty(h);

        let d_zhat = resid.mapv(|r| 2.0 * r / n);
        let (mut d_input, mut d_adjacency) = self.backward(&tape, a, d_zhat.clone());
        d_input -= &d_zhat;
        let slope = lag.penalty_slope(h);
        let hg = acyclicity_gradient(a);
        ndarray::Zip::from(&mut d_adjacency).and(a.weights()).and(&hg).and(a.blacklist()).for_each(|g, &w, &hg, &b| {
            if b {
                *g = 0.0;
            } else {
                *g += lambda * l1_subgradient(w) + slope * hg;
            }
        });
        Ok(GaeStep { loss, mse, h, d_input, d_adjacency })
    }

    pub fn zero_grad(&mut self) {
        self.f1.zero_grad();
        self.f2.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.f1.params_mut();
        p.extend(self.f2.params_mut());
        p
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut p: Vec<_> = self.f1.named_params().into_iter().map(|(n, p)| (format!("f1.{n}"), p)).collect();
        p.extend(self.f2.named_params().into_iter().map(|(n, p)| (format!("f2.{n}"), p)));
        p
    }

    pub fn reproject(&mut self) {
        self.f1.reproject();
        self.f2.reproject();
    }
}

fn l1_subgradient(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-variable reconstruction `Ẑ = f2(f1(Z′) A)`.
pub fn gae_forward(zprime: &SampleMatrix, net: &GaeNetwork, a: &WeightedAdjacency) -> Result<SampleMatrix> {
    let (out, _) = net.forward(zprime.view(), a)?;
    SampleMatrix::new(out)
}

/// `(1/n) Σ‖Z′ − Ẑ‖² + λ‖A‖₁ + α h(A) + (ρ/2) h(A)²`
pub fn gae_loss(
    zprime: &SampleMatrix,
    zhat: &SampleMatrix,
    a: &WeightedAdjacency,
    lambda: f64,
    lag: &LagrangianState,
) -> Result<f64> {
    if zprime.view().dim() != zhat.view().dim() {
        return Err(Error::shape("reconstruction shape differs from input"));
    }
    let n = zprime.n() as f64;
    let mse = zprime.view().iter().zip(zhat.view().iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    Ok(mse + lambda * a.l1_norm() + lag.penalty(acyclicity(a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    fn identity_net(d: usize) -> GaeNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = GaeConfig { hidden_units: 1, hidden_layers: 0, activation: Activation::Identity };
        let mut net = GaeNetwork::new(&mut rng, d, &cfg);
        for stack in [&mut net.f1, &mut net.f2] {
            for layer in &mut stack.layers {
                if let Layer::Dense(l) = layer {
                    l.weight.value = Array2::<f64>::eye(d).into_dyn();
                    l.bias.value.fill(0.0);
                }
            }
        }
        net
    }

    #[test]
    fn zero_adjacency_reconstructs_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GaeConfig { activation: Activation::Identity, ..Default::default() };
        let net = GaeNetwork::new(&mut rng, 4, &cfg);
        let z = SampleMatrix::new(sample(&mut rng, 10, 4)).unwrap();
        let out = gae_forward(&z, &net, &WeightedAdjacency::with_label_sink(4)).unwrap();
        assert_eq!(out.view().dim(), (10, 4));
        assert!(out.view().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_subnetworks_give_linear_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = identity_net(4);
        let w = sample(&mut rng, 4, 4);
        let a = WeightedAdjacency::new(w, Array2::from_shape_fn((4, 4), |(i, j)| i == j)).unwrap();
        let z = sample(&mut rng, 6, 4);
        let out = gae_forward(&SampleMatrix::new(z.clone()).unwrap(), &net, &a).unwrap();
        let expected = z.dot(a.weights());
        for (x, y) in out.view().iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = GaeNetwork::new(&mut rng, 4, &GaeConfig::default());
        let z = SampleMatrix::new(sample(&mut rng, 5, 3)).unwrap();
        assert!(gae_forward(&z, &net, &WeightedAdjacency::zeros(4)).is_err());
    }

    #[test]
    fn masks_keep_variables_separate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = GaeNetwork::new(&mut rng, 4, &GaeConfig::default());
        let z = sample(&mut rng, 8, 4);
        for stack in [&net.f1, &net.f2] {
            let base = stack.infer(&z.clone().into_dyn());
            for j in 0..4 {
                let mut zp = z.clone();
                zp.column_mut(j).mapv_inplace(|v| v + 0.7);
                let moved = stack.infer(&zp.into_dyn());
                for i in (0..4).filter(|&i| i != j) {
                    for r in 0..8 {
                        assert_eq!(base[[r, i]], moved[[r, i]]);
                    }
                }
            }
        }
    }

    #[test]
    fn loss_examples() {
        let lag = LagrangianState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = sample(&mut rng, 7, 4);
        let zs = SampleMatrix::new(z.clone()).unwrap();
        let a0 = WeightedAdjacency::zeros(4);
        assert_eq!(gae_loss(&zs, &zs, &a0, 0.0, &lag).unwrap(), 0.0);
        let shifted = SampleMatrix::new(z.mapv(|v| v + 1.0)).unwrap();
        assert!((gae_loss(&zs, &shifted, &a0, 0.0, &lag).unwrap() - 4.0).abs() < 1e-12);

        let cycle = WeightedAdjacency::new(array![[0.0, 1.0], [1.0, 0.0]], Array2::from_elem((2, 2), false)).unwrap();
        let z2 = SampleMatrix::new(sample(&mut rng, 5, 2)).unwrap();
        let v = gae_loss(&z2, &z2, &cycle, 0.0, &lag).unwrap();
        let h = 2.0 * 1f64.cosh() - 2.0;
        assert!((v - (0.6 * h + 0.05 * h * h)).abs() < 1e-12);
        assert!((v - 0.71069).abs() < 1e-4);
    }

    /// Every gradient of the full objective against central differences.
    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = GaeNetwork::new(&mut rng, 4, &GaeConfig::default());
        let mut a = WeightedAdjacency::with_label_sink(4);
        a.set_weights(sample(&mut rng, 4, 4) * 0.8).unwrap();
        let z = sample(&mut rng, 9, 4);
        let lag = LagrangianState { alpha: 0.7, rho: 0.3, ..Default::default() };
        let lambda = 0.05;
        let value = |net: &GaeNetwork, a: &WeightedAdjacency, z: &Array2<f64>| {
            let zs = SampleMatrix::new(z.clone()).unwrap();
            let zhat = gae_forward(&zs, net, a).unwrap();
            gae_loss(&zs, &zhat, a, lambda, &lag).unwrap()
        };
        net.zero_grad();
        let step = net.loss_and_grad(z.view(), &a, lambda, &lag).unwrap();
        assert!((step.loss - value(&net, &a, &z)).abs() < 1e-12);
        let h = 1e-6;
        let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-5 * fd.abs().max(1e-3);

        for i in 0..4 {
            for j in 0..4 {
                let mut p = a.weights().clone();
                p[[i, j]] += h;
                let mut m = a.weights().clone();
                m[[i, j]] -= h;
                let ap = WeightedAdjacency::new(p, a.blacklist().clone()).unwrap();
                let am = WeightedAdjacency::new(m, a.blacklist().clone()).unwrap();
                let fd = (value(&net, &ap, &z) - value(&net, &am, &z)) / (2.0 * h);
                assert!(close(fd, step.d_adjacency[[i, j]]), "A[{i},{j}] fd {fd} vs {}", step.d_adjacency[[i, j]]);
            }
        }
        for r in [0, 4, 8] {
            for c in 0..4 {
                let mut zp = z.clone();
                zp[[r, c]] += h;
                let mut zm = z.clone();
                zm[[r, c]] -= h;
                let fd = (value(&net, &a, &zp) - value(&net, &a, &zm)) / (2.0 * h);
                assert!(close(fd, step.d_input[[r, c]]), "Z[{r},{c}]");
            }
        }
        let count = net.params_mut().len();
        for pi in 0..count {
            let len = net.params_mut()[pi].len();
            for idx in 0..len {
                let analytic = net.params_mut()[pi].grad.as_slice().unwrap()[idx];
                net.params_mut()[pi].value.as_slice_mut().unwrap()[idx] += h;
                let lp = value(&net, &a, &z);
                net.params_mut()[pi].value.as_slice_mut().unwrap()[idx] -= 2.0 * h;
                let lm = value(&net, &a, &z);
                net.params_mut()[pi].value.as_slice_mut().unwrap()[idx] += h;
                let fd = (lp - lm) / (2.0 * h);
                assert!(close(fd, analytic), "param {pi}[{idx}] fd {fd} vs {analytic}");
            }
        }
    }
}
