//! Staged joint optimization of the split-latent VAE, the graph autoencoder
//! over `⟨Z2, Y⟩` and the two HSIC objectives.

mod run_dir;

pub use run_dir::{load_model, save_run, ModelSnapshot, TrainedModel};

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::causal_gae::{acyclicity, GaeConfig, GaeNetwork, LagrangianState, WeightedAdjacency};
use crate::error::{Error, Result};
use crate::kernel_stats::{disentanglement_loss_grad, redundancy_loss_grad, SampleMatrix};
use crate::nn::{Adam, AdamConfig, Param};
use crate::scm_synth::Dataset;
use crate::vae_core::{bce_with_logits, latent_penalty, BceReduction, ImageBatch, Vae, VaeConfig};

/// Smallest mini-batch for which per-batch kernel estimates are allowed.
pub const MIN_BATCH: usize = 32;

/// Piecewise-constant loss weights `(cvae, gae, hsic1, hsic2)` by epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSchedule {
    pub boundaries: [usize; 2],
    pub weights: [[f64; 4]; 3],
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self { boundaries: [50, 100], weights: [[1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 5.0, 0.0], [2.0, 1.0, 5.0, 0.5]] }
    }
}

pub fn stage_weights(epoch: usize, schedule: &StageSchedule) -> [f64; 4] {
    if epoch < schedule.boundaries[0] {
        schedule.weights[0]
    } else if epoch < schedule.boundaries[1] {
        schedule.weights[1]
    } else {
        schedule.weights[2]
    }
}

/// The four partial objectives of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub cvae: f64,
    pub gae: f64,
    pub hsic1: f64,
    pub hsic2: f64,
}

impl LossParts {
    fn as_array(&self) -> [f64; 4] {
        [self.cvae, self.gae, self.hsic1, self.hsic2]
    }

    fn check(&self, epoch: usize) -> Result<()> {
        let names = ["cvae", "gae", "hsic1", "hsic2"];
        for (v, term) in self.as_array().into_iter().zip(names) {
            if !v.is_finite() {
                return Err(Error::Divergence { term, epoch });
            }
        }
        Ok(())
    }
}

pub fn total_loss(parts: &LossParts, phi: [f64; 4]) -> f64 {
    parts.as_array().iter().zip(phi).map(|(p, w)| p * w).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Weight on the label-dependence reward for `Z2`.
    pub omega: f64,
    /// Weight of the latent magnitude penalty.
    pub beta1: f64,
    /// L1 weight on `A`.
    pub lambda: f64,
    pub lr_adjacency: f64,
    pub lr_gae: f64,
    pub lr_vae: f64,
    pub adam: AdamConfig,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub reconstruction: BceReduction,
    pub schedule: StageSchedule,
    pub lagrangian: LagrangianState,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            omega: 1.5,
            beta1: 0.001,
            lambda: 0.0,
            lr_adjacency: 0.005,
            lr_gae: 0.002,
            lr_vae: 0.0005,
            adam: AdamConfig::default(),
            batch_size: None,
            reconstruction: BceReduction::MeanPixels,
            schedule: StageSchedule::default(),
            lagrangian: LagrangianState::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.batch_size {
            if b < MIN_BATCH {
                return Err(Error::Config(format!("batch_size {b} is below the minimum of {MIN_BATCH}")));
            }
        }
        let rates = [self.lr_adjacency, self.lr_gae, self.lr_vae];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if !(self.omega.is_finite() && self.beta1.is_finite() && self.lambda.is_finite()) {
            return Err(Error::Config("omega, beta1 and lambda must be finite".into()));
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_cvae: f64,
    pub loss_gae: f64,
    pub loss_h1: f64,
    pub loss_h2: f64,
    pub h: f64,
    pub alpha: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
    pub model: TrainedModel,
    pub lagrangian: LagrangianState,
}

impl TrainRun {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.history.last()
    }
}

/// Loss values and the adjacency gradient from one joint evaluation.
#[derive(Debug, Clone)]
pub struct JointEvaluation {
    pub parts: LossParts,
    pub total: f64,
    /// `∂L_gae/∂A`, zero on blacklisted entries.
    pub d_adjacency: Array2<f64>,
}

/// Model, graph and optimizer state for the staged optimization.
///
/// [`train`] drives this over whole epochs; it is public so custom loops and
/// gradient checks can run single steps.
#[derive(Debug, Clone)]
pub struct JointTrainer {
    cfg: TrainConfig,
    pub vae: Vae,
    pub gae: GaeNetwork,
    adjacency: WeightedAdjacency,
    a_param: Param,
    lag: LagrangianState,
    opt_vae: Adam,
    opt_gae: Adam,
    opt_adj: Adam,
    rng: ChaCha8Rng,
}

impl JointTrainer {
    pub fn new(vae_cfg: &VaeConfig, gae_cfg: &GaeConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let vae = Vae::new(vae_cfg.clone(), cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_6ae0);
        let d = vae_cfg.z2_dim + 1;
        let gae = GaeNetwork::new(&mut rng, d, gae_cfg);
        let adjacency = WeightedAdjacency::with_label_sink(d);
        let a_param = Param::new(adjacency.weights().clone().into_dyn());
        Ok(Self {
            cfg: cfg.clone(),
            vae,
            gae,
            adjacency,
            a_param,
            lag: cfg.lagrangian,
            opt_vae: Adam::new(cfg.lr_vae, cfg.adam),
            opt_gae: Adam::new(cfg.lr_gae, cfg.adam),
            opt_adj: Adam::new(cfg.lr_adjacency, cfg.adam),
            rng,
        })
    }

    pub fn adjacency(&self) -> &WeightedAdjacency {
        &self.adjacency
    }

    pub fn set_adjacency(&mut self, weights: Array2<f64>) -> Result<()> {
        self.adjacency.set_weights(weights)?;
        self.a_param.value = self.adjacency.weights().clone().into_dyn();
        Ok(())
    }

    pub fn lagrangian(&self) -> LagrangianState {
        self.lag
    }

    /// Standard-normal reparameterization noise for `n` samples.
    pub fn draw_noise(&mut self, n: usize) -> Array2<f64> {
        let k = self.vae.config().latent_dim();
        Array2::from_shape_simple_fn((n, k), || self.rng.sample(StandardNormal))
    }

    /// Forward pass and gradients with fixed `noise`. Afterwards the VAE
    /// parameters hold `∂L_total/∂θ` with the graph treated as constant, and
    /// the graph autoencoder parameters hold `∂L_gae/∂θ`.
    pub fn evaluate(
        &mut self,
        images: &ImageBatch,
        labels: &[f64],
        noise: Array2<f64>,
        phi: [f64; 4],
        epoch: usize,
    ) -> Result<JointEvaluation> {
        let n = images.n();
        if labels.len() != n {
            return Err(Error::shape("label count differs from image count"));
        }
        let k = self.vae.config().latent_dim();
        let z1_dim = self.vae.config().z1_dim;
        let fwd = self.vae.forward(images, noise)?;

        let (bce, d_logits) = bce_with_logits(images, &fwd.logits, self.cfg.reconstruction)?;
        let (penalty, d_penalty) = latent_penalty(fwd.latent.z.view(), self.cfg.beta1);

        let z2 = fwd.latent.z2();
        let y = Array2::from_shape_vec((n, 1), labels.to_vec()).map_err(|e| Error::shape(e.to_string()))?;
        let zprime = concatenate(Axis(1), &[z2, y.view()]).map_err(|e| Error::shape(e.to_string()))?;
        self.gae.zero_grad();
        let gae = self.gae.loss_and_grad(zprime.view(), &self.adjacency, self.cfg.lambda, &self.lag)?;

        let z1m = SampleMatrix::from_view(fwd.latent.z1())?;
        let z2m = SampleMatrix::from_view(z2)?;
        let ym = SampleMatrix::new(y)?;
        let h1 = disentanglement_loss_grad(&z1m, &z2m, &ym, self.cfg.omega)?;
        let (h2, d_h2) = redundancy_loss_grad(&z2m)?;

        let parts = LossParts { cvae: bce + penalty, gae: gae.loss, hsic1: h1.value, hsic2: h2 };
        parts.check(epoch)?;
        let [p_cvae, p_gae, p_h1, p_h2] = phi;

        let mut d_z = d_penalty * p_cvae;
        d_z.slice_mut(s![.., ..z1_dim]).scaled_add(p_h1, &h1.d_z1);
        {
            let mut d2 = d_z.slice_mut(s![.., z1_dim..]);
            d2.scaled_add(p_h1, &h1.d_z2);
            d2.scaled_add(p_h2, &d_h2);
            d2.scaled_add(p_gae, &gae.d_input.slice(s![.., ..k - z1_dim]));
        }
        self.vae.zero_grad();
        self.vae.backward(&fwd, d_logits * p_cvae, d_z.view());
        Ok(JointEvaluation { total: total_loss(&parts, phi), parts, d_adjacency: gae.d_adjacency })
    }

    /// Optimizer steps from the gradients left by [`Self::evaluate`].
    pub fn apply(&mut self, d_adjacency: Array2<f64>) -> Result<()> {
        self.opt_vae.step(&mut self.vae.params_mut());
        self.opt_gae.step(&mut self.gae.params_mut());
        self.gae.reproject();
        self.a_param.grad = d_adjacency.into_dyn();
        self.opt_adj.step(&mut [&mut self.a_param]);
        let w = self.a_param.value.clone().into_dimensionality().map_err(|e| Error::shape(e.to_string()))?;
        self.set_adjacency(w)
    }

    /// Draws noise, evaluates and applies one update on a batch.
    pub fn step(&mut self, images: &ImageBatch, labels: &[f64], phi: [f64; 4], epoch: usize) -> Result<LossParts> {
        let noise = self.draw_noise(images.n());
        let eval = self.evaluate(images, labels, noise, phi, epoch)?;
        self.apply(eval.d_adjacency)?;
        Ok(eval.parts)
    }

    /// Updates the Lagrangian multipliers from the current `h(A)`.
    pub fn end_epoch(&mut self, epoch: usize) -> Result<f64> {
        let h = acyclicity(&self.adjacency);
        if !h.is_finite() {
            return Err(Error::Divergence { term: "acyclicity", epoch });
        }
        self.lag = self.lag.update(h);
        Ok(h)
    }

    pub fn into_model(self) -> TrainedModel {
        let mut vae = self.vae;
        vae.mark_trained();
        TrainedModel { vae, gae: self.gae, adjacency: self.adjacency }
    }
}

fn batches(n: usize, batch_size: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match batch_size {
        Some(b) if b < n => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let mut out: Vec<Vec<usize>> = order.chunks(b).map(<[usize]>::to_vec).collect();
            // fold a short tail into the previous batch so every batch has at least MIN_BATCH rows
            if out.len() > 1 && out.last().is_some_and(|t| t.len() < MIN_BATCH) {
                let tail = out.pop().unwrap_or_default();
                if let Some(prev) = out.last_mut() {
                    prev.extend(tail);
                }
            }
            out
        }
        _ => vec![(0..n).collect()],
    }
}

/// Runs the staged optimization over `dataset` and returns the full history
/// with the final model.
pub fn train(dataset: &Dataset, vae_cfg: &VaeConfig, gae_cfg: &GaeConfig, cfg: &TrainConfig) -> Result<TrainRun> {
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if dataset.images.n() != dataset.len() {
        return Err(Error::shape("image count differs from label count"));
    }
    let mut trainer = JointTrainer::new(vae_cfg, gae_cfg, cfg)?;
    let labels: Vec<f64> = dataset.labels.iter().map(|&l| l as f64).collect();
    let n = dataset.len();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let phi = stage_weights(epoch, &cfg.schedule);
        let mut sums = LossParts::default();
        for rows in batches(n, cfg.batch_size, &mut trainer.rng) {
            let w = rows.len() as f64 / n as f64;
            let parts = if rows.len() == n {
                trainer.step(&dataset.images, &labels, phi, epoch)?
            } else {
                let y: Vec<f64> = rows.iter().map(|&r| labels[r]).collect();
                trainer.step(&dataset.images.select(&rows), &y, phi, epoch)?
            };
            sums.cvae += w * parts.cvae;
            sums.gae += w * parts.gae;
            sums.hsic1 += w * parts.hsic1;
            sums.hsic2 += w * parts.hsic2;
        }
        let h = trainer.end_epoch(epoch)?;
        let lag = trainer.lagrangian();
        let rec = EpochRecord {
            epoch,
            loss_total: total_loss(&sums, phi),
            loss_cvae: sums.cvae,
            loss_gae: sums.gae,
            loss_h1: sums.hsic1,
            loss_h2: sums.hsic2,
            h,
            alpha: lag.alpha,
            rho: lag.rho,
        };
        log::info!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3e},{:.6},{:.6}",
            rec.epoch,
            rec.loss_total,
            rec.loss_cvae,
            rec.loss_gae,
            rec.loss_h1,
            rec.loss_h2,
            rec.h,
            rec.alpha,
            rec.rho
        );
        history.push(rec);
    }
    let lagrangian = trainer.lagrangian();
    Ok(TrainRun { history, model: trainer.into_model(), lagrangian })
}
