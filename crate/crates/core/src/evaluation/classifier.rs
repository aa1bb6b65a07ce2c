use ndarray::{Array1, Array2, ArrayView2, Axis, Ix1, Ix2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Dense, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: [usize; 3],
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: [32, 64, 32],
            epochs: 300,
            learning_rate: 1e-4,
            batch_size: 100,
            dropout: 0.05,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct BatchNorm {
    gamma: Param,
    beta: Param,
    moving_mean: Array1<f64>,
    moving_var: Array1<f64>,
    momentum: f64,
    eps: f64,
}

struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn vec1(p: &Param) -> ndarray::ArrayView1<'_, f64> {
    p.value.view().into_dimensionality::<Ix1>().expect("1-D parameter")
}

impl BatchNorm {
    fn new(width: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Param::new(Array1::ones(width).into_dyn()),
            beta: Param::zeros(&[width]),
            moving_mean: Array1::zeros(width),
            moving_var: Array1::ones(width),
            momentum,
            eps,
        }
    }

    fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let inv = self.moving_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        ((x - &self.moving_mean) * &inv) * vec1(&self.gamma) + vec1(&self.beta)
    }

    fn train_forward(&mut self, x: &Array2<f64>) -> (Array2<f64>, BnCache) {
        let mean = x.mean_axis(Axis(0)).expect("nonempty batch");
        let var = x.var_axis(Axis(0), 0.0);
        self.moving_mean = &self.moving_mean * self.momentum + &mean * (1.0 - self.momentum);
        self.moving_var = &self.moving_var * self.momentum + &var * (1.0 - self.momentum);
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &vec1(&self.gamma) + vec1(&self.beta);
        (y, BnCache { xhat, inv_std })
    }

    fn backward(&mut self, c: &BnCache, dy: &Array2<f64>) -> Array2<f64> {
        let n = dy.nrows() as f64;
        self.gamma.grad += &(dy * &c.xhat).sum_axis(Axis(0)).into_dyn();
        self.beta.grad += &dy.sum_axis(Axis(0)).into_dyn();
        let dxhat = dy * &vec1(&self.gamma);
        let s1 = dxhat.sum_axis(Axis(0));
        let s2 = (&dxhat * &c.xhat).sum_axis(Axis(0));
        ((&dxhat * n - &s1) - &c.xhat * &s2) * &(&c.inv_std / n)
    }
}

/// Three ELU hidden layers, each followed by batch normalization (dropout
/// after the first), and a sigmoid output unit.
#[derive(Debug, Clone)]
pub struct DownstreamClassifier {
    dense: Vec<Dense>,
    norms: Vec<BatchNorm>,
    dropout: f64,
    pub loss_history: Vec<f64>,
}

fn d2(x: ndarray::ArrayD<f64>) -> Array2<f64> {
    x.into_dimensionality::<Ix2>().expect("dense activations")
}

impl DownstreamClassifier {
    fn new(rng: &mut ChaCha8Rng, input: usize, cfg: &ClassifierConfig) -> Self {
        let widths = [input, cfg.hidden[0], cfg.hidden[1], cfg.hidden[2], 1];
        let dense = widths.windows(2).map(|w| Dense::new(rng, w[0], w[1])).collect();
        let norms = cfg.hidden.iter().map(|&w| BatchNorm::new(w, cfg.bn_momentum, cfg.bn_epsilon)).collect();
        Self { dense, norms, dropout: cfg.dropout, loss_history: Vec::new() }
    }

    pub fn input_dim(&self) -> usize {
        self.dense[0].in_dim()
    }

    /// Probability of the positive class per row, in inference mode.
    pub fn predict_proba(&self, z: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if z.ncols() != self.input_dim() {
            return Err(Error::shape(format!("classifier expects {} features, got {}", self.input_dim(), z.ncols())));
        }
        let mut h = z.to_owned();
        for k in 0..3 {
            let a = d2(self.dense[k].forward(&h.into_dyn()));
            h = self.norms[k].infer(&a.mapv(|v| Activation::Elu.apply(v)));
        }
        let logits = d2(self.dense[3].forward(&h.into_dyn()));
        Ok(logits.column(0).iter().map(|&l| Activation::Sigmoid.apply(l)).collect())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = Vec::new();
        for d in &mut self.dense {
            p.push(&mut d.weight);
            p.push(&mut d.bias);
        }
        for b in &mut self.norms {
            p.push(&mut b.gamma);
            p.push(&mut b.beta);
        }
        p
    }

    /// One training step on a batch; returns the mean cross-entropy.
    fn step(&mut self, x: &Array2<f64>, y: &[u8], rng: &mut ChaCha8Rng, opt: &mut Adam) -> f64 {
        for p in self.params_mut() {
            p.zero_grad();
        }
        let b = x.nrows() as f64;
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut caches = Vec::new();
        let mut keep_mask = None;
        let mut h = x.clone();
        for k in 0..3 {
            inputs.push(h.clone());
            let a = d2(self.dense[k].forward(&h.into_dyn()));
            let act = a.mapv(|v| Activation::Elu.apply(v));
            pre.push(a);
            let (mut out, cache) = self.norms[k].train_forward(&act);
            caches.push(cache);
            if k == 0 && self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let mask = Array2::from_shape_fn(out.raw_dim(), |_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 });
                out *= &mask;
                keep_mask = Some(mask);
            }
            h = out;
        }
        inputs.push(h.clone());
        let logits = d2(self.dense[3].forward(&h.into_dyn()));
        let mut loss = 0.0;
        let mut dlogit = Array2::zeros(logits.raw_dim());
        for (r, &t) in y.iter().enumerate() {
            let l = logits[[r, 0]];
            let t = t as f64;
            loss += l.max(0.0) - t * l + (-l.abs()).exp().ln_1p();
            dlogit[[r, 0]] = (Activation::Sigmoid.apply(l) - t) / b;
        }
        let mut g = d2(self.dense[3].backward(&inputs[3].clone().into_dyn(), &dlogit.into_dyn(), true).expect("requested"));
        for k in (0..3).rev() {
            if k == 0 {
                if let Some(m) = &keep_mask {
                    g *= m;
                }
            }
            let g_act = self.norms[k].backward(&caches[k], &g);
            let g_pre = Activation::Elu.backward(&pre[k].clone().into_dyn(), &g_act.into_dyn());
            let back = self.dense[k].backward(&inputs[k].clone().into_dyn(), &g_pre, k > 0);
            if let Some(next) = back {
                g = d2(next);
            }
        }
        opt.step(&mut self.params_mut());
        loss / b
    }
}

/// Mini-batch Adam training with seeded shuffling and dropout.
pub fn train_downstream_classifier(z: ArrayView2<'_, f64>, y: &[u8], cfg: &ClassifierConfig) -> Result<DownstreamClassifier> {
    if z.nrows() != y.len() || z.nrows() == 0 {
        return Err(Error::shape(format!("{} feature rows vs {} labels", z.nrows(), y.len())));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::SingleClass);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier features"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DownstreamClassifier::new(&mut rng, z.ncols(), cfg);
    let mut opt = Adam::new(cfg.learning_rate, AdamConfig::default());
    let mut order: Vec<usize> = (0..y.len()).collect();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let xb = z.select(Axis(0), chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
            total += model.step(&xb, &yb, &mut rng, &mut opt) * chunk.len() as f64;
        }
        model.loss_history.push(total / y.len() as f64);
    }
    Ok(model)
}
