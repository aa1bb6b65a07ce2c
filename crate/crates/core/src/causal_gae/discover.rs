use std::fmt::Display;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adjacency::{acyclicity, WeightedAdjacency};
use super::lagrangian::LagrangianState;
use super::network::{GaeConfig, GaeNetwork};
use crate::error::{Error, Result};
use crate::kernel_stats::SampleMatrix;
use crate::nn::{Adam, AdamConfig, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoverConfig {
    pub epochs: usize,
    pub lr_network: f64,
    pub lr_adjacency: f64,
    /// L1 weight on `A`; keeps entries that carry no signal from drifting
    /// under Adam's normalized steps.
    pub lambda: f64,
    /// Treat the last column as a label that may not cause anything.
    pub label_sink: bool,
    pub keep_fraction: f64,
    pub seed: u64,
    pub network: GaeConfig,
    pub lagrangian: LagrangianState,
    pub adam: AdamConfig,
}

impl Default for DiscoverConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr_network: 0.002,
            lr_adjacency: 0.005,
            lambda: 0.002,
            label_sink: true,
            keep_fraction: 0.25,
            seed: 0,
            network: GaeConfig::default(),
            lagrangian: LagrangianState::default(),
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mse: f64,
    pub h: f64,
    pub alpha: f64,
    pub rho: f64,
}

/// Outcome of [`standalone_discover`].
#[derive(Debug, Clone)]
pub struct DiscoveryRun {
    pub history: Vec<DiscoveryRecord>,
    pub network: GaeNetwork,
    pub lagrangian: LagrangianState,
}

impl DiscoveryRun {
    pub fn final_h(&self) -> f64 {
        self.history.last().map_or(0.0, |r| r.h)
    }

    pub fn rho_grew(&self) -> bool {
        self.history.first().is_some_and(|first| self.lagrangian.rho > first.rho)
    }

    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.history {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.display().to_string(), line: 0, msg: e.to_string() }
}

/// Writes a square matrix as headerless CSV, row = source, column = target.
pub fn write_matrix_csv<T: Display>(path: &Path, m: &Array2<T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { path: path.display().to_string(), line: line + 1, msg: e.to_string() })?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse { path: path.display().to_string(), line: 0, msg: "ragged matrix".into() });
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| Error::shape(e.to_string()))
}

/// Fits a graph autoencoder to tabular data and returns the learned adjacency.
///
/// Each epoch takes one full-batch Adam step on the network and on `A`, then
/// updates the Lagrangian multipliers with the new `h(A)`.
pub fn standalone_discover(data: &SampleMatrix, config: &DiscoverConfig) -> Result<(WeightedAdjacency, DiscoveryRun)> {
    let d = data.p();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = GaeNetwork::new(&mut rng, d, &config.network);
    let mut adjacency =
        if config.label_sink && d > 1 { WeightedAdjacency::with_label_sink(d) } else { WeightedAdjacency::zeros(d) };
    let mut lag = config.lagrangian;
    let mut a_param = Param::new(adjacency.weights().clone().into_dyn());
    let mut opt_net = Adam::new(config.lr_network, config.adam);
    let mut opt_adj = Adam::new(config.lr_adjacency, config.adam);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        network.zero_grad();
        let step = network.loss_and_grad(data.view(), &adjacency, config.lambda, &lag)?;
        if !step.loss.is_finite() {
            return Err(Error::Divergence { term: "graph autoencoder loss", epoch });
        }
        opt_net.step(&mut network.params_mut());
        network.reproject();
        a_param.grad = step.d_adjacency.into_dyn();
        opt_adj.step(&mut [&mut a_param]);
        let w = a_param.value.clone().into_dimensionality().expect("square adjacency");
        adjacency.set_weights(w)?;
        a_param.value = adjacency.weights().clone().into_dyn();

        let h = acyclicity(&adjacency);
        lag = lag.update(h);
        history.push(DiscoveryRecord { epoch, loss: step.loss, mse: step.mse, h, alpha: lag.alpha, rho: lag.rho });
        if epoch % 200 == 0 {
            log::debug!("discover epoch {epoch}: loss {:.5} h {:.3e} rho {:.4}", step.loss, h, lag.rho);
        }
    }
    Ok((adjacency, DiscoveryRun { history, network, lagrangian: lag }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn single_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let data = SampleMatrix::from_column(&x).unwrap();
        let cfg = DiscoverConfig { epochs: 20, ..Default::default() };
        let (a, run) = standalone_discover(&data, &cfg).unwrap();
        assert_eq!(a.weights()[[0, 0]], 0.0);
        assert_eq!(run.final_h(), 0.0);
        assert_eq!(run.history.len(), 20);
    }

    #[test]
    fn blacklist_holds_through_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200;
        let mut x = Array2::<f64>::zeros((n, 3));
        for r in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = 1.5 * a + rng.sample::<f64, _>(StandardNormal);
            x[[r, 0]] = a;
            x[[r, 1]] = b;
            x[[r, 2]] = a - b + rng.sample::<f64, _>(StandardNormal);
        }
        let data = SampleMatrix::new(x).unwrap();
        let cfg = DiscoverConfig { epochs: 300, ..Default::default() };
        let (a, run) = standalone_discover(&data, &cfg).unwrap();
        for ((i, j), w) in a.weights().indexed_iter() {
            if i == j || i == 2 {
                assert_eq!(*w, 0.0);
            }
        }
        assert!(run.history.last().unwrap().mse < run.history[0].mse);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let m = Array2::from_shape_fn((3, 3), |(i, j)| i as f64 * 0.5 - j as f64 / 3.0);
        write_matrix_csv(&path, &m).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
    }
}
