use std::fs;
use std::path::Path;

use itertools::Itertools;
use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::classifier::{train_downstream_classifier, ClassifierConfig};
use super::metrics::{classification_metrics, MetricsReport};
use super::mi::mean_mutual_information;
use super::shd::shd_best_match;
use super::traversal::{mask_energy, median, sample_images, traversal_grid, traversal_maps, write_traversal_png, DifferenceMapStack};
use crate::causal_gae::binarize_adjacency;
use crate::error::{Error, Result};
use crate::scm_synth::{region_masks, Dataset, GroundTruthDag, LABEL};
use crate::training::TrainedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub k_neighbors: usize,
    pub keep_fraction: f64,
    pub threshold: f64,
    pub classifier: ClassifierConfig,
    pub traversal_images: usize,
    pub grid_points: usize,
    pub sample_seed: u64,
    /// Per-coordinate traversal baselines; training-set medians when absent.
    pub baselines: Option<Vec<f64>>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            keep_fraction: 0.25,
            threshold: 0.5,
            classifier: ClassifierConfig::default(),
            traversal_images: 50,
            grid_points: 8,
            sample_seed: 0,
            baselines: None,
        }
    }
}

/// One causal coordinate matched to a generating factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatch {
    pub coordinate: usize,
    pub factor: String,
    /// Pearson correlation on the training set.
    pub correlation: f64,
    /// Share of traversal energy inside the factor's region; absent when the
    /// factor has no known region.
    pub mask_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metrics: MetricsReport,
    pub mi_z1: Vec<f64>,
    pub mi_z2: Vec<f64>,
    pub mi_z1_mean: f64,
    pub mi_z2_mean: f64,
    /// Rows and columns: causal coordinates, then the label.
    pub adjacency: Vec<Vec<u8>>,
    pub shd: Option<usize>,
    pub factors: Vec<FactorMatch>,
}

impl EvaluationReport {
    /// `mean MI(Z2, Y) / mean MI(Z1, Y)`; infinite when the first block
    /// carries no measurable label information.
    pub fn mi_ratio(&self) -> f64 {
        if self.mi_z1_mean > 0.0 {
            self.mi_z2_mean / self.mi_z1_mean
        } else if self.mi_z2_mean > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    /// Markdown rendering of every table in the report.
    pub fn table(&self) -> String {
        let mut out = String::from("## Classification (held-out)\n\n");
        out += &self.metrics.table();
        out += "\n\n## Mutual information with the label\n\n| block | per coordinate | mean |\n|---|---|---|\n";
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).join(", ");
        out += &format!("| Z1 | {} | {:.4} |\n", fmt(&self.mi_z1), self.mi_z1_mean);
        out += &format!("| Z2 | {} | {:.4} |\n", fmt(&self.mi_z2), self.mi_z2_mean);
        out += &format!("\nratio Z2/Z1: {:.2}\n\n## Graph\n\n", self.mi_ratio());
        for row in &self.adjacency {
            out += &format!("    {}\n", row.iter().join(" "));
        }
        match self.shd {
            Some(s) => out += &format!("\nSHD (best match, label fixed): {s}\n"),
            None => out += "\nSHD: no reference graph\n",
        }
        if !self.factors.is_empty() {
            out += "\n## Causal coordinates\n\n| coordinate | factor | correlation | mask energy |\n|---|---|---|---|\n";
            for f in &self.factors {
                let e = f.mask_energy.map_or_else(|| "-".to_string(), |e| format!("{e:.3}"));
                out += &format!("| {} | {} | {:+.3} | {} |\n", f.coordinate, f.factor, f.correlation, e);
            }
        }
        out
    }
}

/// The report plus the raw traversal maps behind it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub traversals: Vec<DifferenceMapStack>,
}

fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}

/// Assigns each causal coordinate to a distinct factor so the summed absolute
/// correlation is maximal. Returns `(factor index, correlation)` per coordinate.
pub fn match_factors(z2: ndarray::ArrayView2<'_, f64>, factors: ndarray::ArrayView2<'_, f64>) -> Result<Vec<(usize, f64)>> {
    if z2.nrows() != factors.nrows() {
        return Err(Error::shape("latent and factor rows differ"));
    }
    let m = z2.ncols();
    let f = factors.ncols();
    let corr = Array2::from_shape_fn((m, f), |(i, j)| pearson(z2.column(i), factors.column(j)));
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..f).permutations(m.min(f)) {
        let score: f64 = perm.iter().enumerate().map(|(i, &j)| corr[[i, j]].abs()).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm));
        }
    }
    let perm = best.map(|(_, p)| p).unwrap_or_default();
    Ok(perm.into_iter().enumerate().map(|(i, j)| (j, corr[[i, j]])).collect())
}

/// Truth adjacency reordered so the label node comes last.
fn label_last(truth: &GroundTruthDag) -> Result<Array2<u8>> {
    let y = truth.index_of(LABEL).ok_or_else(|| Error::invalid("reference graph has no label node"))?;
    let order: Vec<usize> = (0..truth.d()).filter(|&i| i != y).chain(std::iter::once(y)).collect();
    let a = truth.adjacency();
    Ok(Array2::from_shape_fn(a.dim(), |(i, j)| a[[order[i], order[j]]]))
}

/// MI, downstream classification, graph distance and traversal maps for a
/// trained model. The classifier is fit on the training split and scored on
/// the test split; all latent statistics use the posterior means.
pub fn evaluate_model(
    model: &TrainedModel,
    train: &Dataset,
    test: &Dataset,
    truth: Option<&GroundTruthDag>,
    cfg: &EvaluationConfig,
) -> Result<Evaluation> {
    let vae = &model.vae;
    if !vae.is_trained() {
        return Err(Error::Untrained);
    }
    let z1_dim = vae.config().z1_dim;
    let (mu_train, _) = vae.encode(&train.images)?;
    let (mu_test, _) = vae.encode(&test.images)?;

    let (mi_z1_mean, mi_z1) = mean_mutual_information(mu_test.slice(s![.., ..z1_dim]), &test.labels, cfg.k_neighbors)?;
    let (mi_z2_mean, mi_z2) = mean_mutual_information(mu_test.slice(s![.., z1_dim..]), &test.labels, cfg.k_neighbors)?;

    let z2_train = mu_train.slice(s![.., z1_dim..]);
    let z2_test = mu_test.slice(s![.., z1_dim..]);
    let clf = train_downstream_classifier(z2_train, &train.labels, &cfg.classifier)?;
    let probs = clf.predict_proba(z2_test)?;
    let metrics = classification_metrics(&probs, &test.labels, cfg.threshold)?;

    let binary = binarize_adjacency(&model.adjacency, cfg.keep_fraction)?;
    let shd = match truth {
        Some(t) => {
            let reference = label_last(t)?;
            if reference.dim() != binary.dim() {
                return Err(Error::shape(format!(
                    "reference graph has {} nodes, model graph {}",
                    reference.nrows(),
                    binary.nrows()
                )));
            }
            Some(shd_best_match(&binary, &reference, &[binary.nrows() - 1])?)
        }
        None => None,
    };

    let m = vae.config().z2_dim;
    let baselines = match &cfg.baselines {
        Some(b) if b.len() == m => b.clone(),
        Some(b) => return Err(Error::invalid(format!("{} traversal baselines for {m} coordinates", b.len()))),
        None => (0..m).map(|j| median(z2_train.column(j))).collect(),
    };
    let sample = sample_images(&test.images, cfg.traversal_images, cfg.sample_seed);
    let mut traversals = Vec::with_capacity(m);
    for (j, &base) in baselines.iter().enumerate() {
        let grid = traversal_grid(z2_train.column(j), cfg.grid_points);
        traversals.push(traversal_maps(vae, &sample, j, &grid, base)?);
    }

    let factors = match &train.factors {
        Some(table) => {
            let names: Vec<String> = table.names.iter().filter(|n| n.as_str() != LABEL).cloned().collect();
            let cols: Vec<usize> = names.iter().filter_map(|n| table.names.iter().position(|x| x == n)).collect();
            let values = table.values.select(ndarray::Axis(1), &cols);
            let [h, w, _] = vae.config().image_shape();
            let masks = (h == w).then(|| region_masks(h));
            match_factors(z2_train, values.view())?
                .into_iter()
                .enumerate()
                .map(|(coord, (fi, correlation))| {
                    let factor = names[fi].clone();
                    let mask_energy = match masks.as_ref().and_then(|mk| mk.by_name(&factor)) {
                        Some(mask) => Some(mask_energy(&traversals[coord], mask)?),
                        None => None,
                    };
                    Ok(FactorMatch { coordinate: coord, factor, correlation, mask_energy })
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };

    let adjacency = binary.rows().into_iter().map(|r| r.to_vec()).collect();
    let report = EvaluationReport { metrics, mi_z1, mi_z2, mi_z1_mean, mi_z2_mean, adjacency, shd, factors };
    Ok(Evaluation { report, traversals })
}

/// Writes `report.json`, `report.md`, `traversal.png` and the raw maps as
/// `traversal_maps.json` into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = |e: serde_json::Error| Error::Config(e.to_string());
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&eval.report).map_err(json)?)?;
    fs::write(dir.join("report.md"), eval.report.table())?;
    fs::write(dir.join("traversal_maps.json"), serde_json::to_string(&eval.traversals).map_err(json)?)?;
    write_traversal_png(&dir.join("traversal.png"), &eval.traversals)
}
