use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainRun};
use crate::causal_gae::{read_matrix_csv, write_matrix_csv, GaeConfig, GaeNetwork, WeightedAdjacency};
use crate::error::{Error, Result};
use crate::vae_core::{assign_tensors, load_params, save_params, Vae, VaeConfig};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PARAMS_FILE: &str = "params.bin";
pub const ADJACENCY_FILE: &str = "adjacency.csv";

/// Architecture and optimizer settings stored next to a trained model.
///
/// Unknown top-level tables are tolerated so a full run configuration can be
/// stored as the snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSnapshot {
    pub vae: VaeConfig,
    pub gae: GaeConfig,
    pub train: TrainConfig,
}

/// Everything needed to encode, decode and read off the learned graph.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub vae: Vae,
    pub gae: GaeNetwork,
    pub adjacency: WeightedAdjacency,
}

impl TrainedModel {
    fn tensors(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out: Vec<_> = self.vae.named_params().into_iter().map(|(n, p)| (n, &p.value)).collect();
        out.extend(self.gae.named_params().into_iter().map(|(n, p)| (format!("gae.{n}"), &p.value)));
        out
    }
}

/// Writes the snapshot, per-epoch metrics, parameters and adjacency into
/// `dir`, creating it if needed. `snapshot_toml` overrides the serialized
/// snapshot when the caller has a richer configuration to record.
pub fn save_run(dir: &Path, run: &TrainRun, snapshot: &ModelSnapshot, snapshot_toml: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = match snapshot_toml {
        Some(t) => t.to_string(),
        None => toml::to_string(snapshot).map_err(|e| Error::Config(e.to_string()))?,
    };
    fs::write(dir.join(CONFIG_FILE), text)?;

    let metrics = dir.join(METRICS_FILE);
    let mut w = csv::Writer::from_path(&metrics).map_err(|e| csv_error(&metrics, e))?;
    for r in &run.history {
        w.serialize(r).map_err(|e| csv_error(&metrics, e))?;
    }
    w.flush()?;

    save_params(&dir.join(PARAMS_FILE), run.model.tensors())?;
    write_matrix_csv(&dir.join(ADJACENCY_FILE), run.model.adjacency.weights())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.display().to_string(), line: 0, msg: e.to_string() }
}

/// Rebuilds a trained model from a run directory.
pub fn load_model(dir: &Path) -> Result<(TrainedModel, ModelSnapshot)> {
    let cfg_path = dir.join(CONFIG_FILE);
    if !cfg_path.exists() {
        return Err(Error::MissingFile(cfg_path));
    }
    let snapshot: ModelSnapshot = toml::from_str(&fs::read_to_string(&cfg_path)?)
        .map_err(|e| Error::Parse { path: cfg_path.display().to_string(), line: 0, msg: e.to_string() })?;

    let tensors = load_params(&dir.join(PARAMS_FILE))?;
    let (gae_tensors, vae_tensors): (Vec<_>, Vec<_>) = tensors.into_iter().partition(|(n, _)| n.starts_with("gae."));
    let mut vae = Vae::new(snapshot.vae.clone(), snapshot.train.seed)?;
    vae.load_tensors(vae_tensors)?;

    let d = snapshot.vae.z2_dim + 1;
    let mut gae = GaeNetwork::new(&mut ChaCha8Rng::seed_from_u64(0), d, &snapshot.gae);
    let mut pool: HashMap<String, ArrayD<f64>> =
        gae_tensors.into_iter().map(|(n, t)| (n.trim_start_matches("gae.").to_string(), t)).collect();
    let names: Vec<String> = gae.named_params().into_iter().map(|(n, _)| n).collect();
    assign_tensors(&names, gae.params_mut(), &mut pool)?;

    let weights: Array2<f64> = read_matrix_csv(&dir.join(ADJACENCY_FILE))?;
    if weights.dim() != (d, d) {
        return Err(Error::shape(format!("adjacency is {:?}, expected {d}×{d}", weights.dim())));
    }
    let mut adjacency = WeightedAdjacency::with_label_sink(d);
    adjacency.set_weights(weights)?;
    Ok((TrainedModel { vae, gae, adjacency }, snapshot))
}
