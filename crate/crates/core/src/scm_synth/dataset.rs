use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops::FilterType, RgbImage};
use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dag::{sample_factors, FactorTable, GroundTruthDag, LABEL, NUISANCE_NAMES};
use super::render::{render_fundus, RenderConfig};
use crate::error::{Error, Result};
use crate::vae_core::ImageBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Images with binary labels and, for synthetic data, the generating factors.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: ImageBatch,
    pub labels: Vec<u8>,
    pub factors: Option<FactorTable>,
    pub filenames: Vec<String>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            images: self.images.select(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            factors: self.factors.as_ref().map(|f| f.select(rows)),
            filenames: rows.iter().map(|&r| self.filenames[r].clone()).collect(),
            split: self.split,
        }
    }

    pub fn prevalence(&self) -> f64 {
        self.labels.iter().map(|&v| v as f64).sum::<f64>() / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub n: usize,
    pub split_ratio: f64,
    pub seed: u64,
    /// Target label prevalence; the label intercept is recalibrated when set.
    pub prevalence: Option<f64>,
    pub render: RenderConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { n: 1200, split_ratio: 0.5, seed: 0, prevalence: Some(0.5), render: RenderConfig::default() }
    }
}

/// What gets written next to a synthetic split as `dag.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagFile {
    pub dag: GroundTruthDag,
    pub seed: u64,
    pub render: RenderConfig,
}

fn quantize(images: ImageBatch) -> Result<ImageBatch> {
    ImageBatch::new(images.into_inner().mapv(|v| (v * 255.0).round() / 255.0))
}

/// Samples factors, renders them, and splits the result at random.
///
/// Images are quantized to 8 bits so the in-memory splits equal what
/// [`load_image_dataset`] reads back. When `out_dir` is given both splits are
/// written under `out_dir/train` and `out_dir/test`.
pub fn generate_dataset(dag: &GroundTruthDag, cfg: &GenerateConfig, out_dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
    if cfg.n < 4 {
        return Err(Error::invalid(format!("need at least 4 samples, got {}", cfg.n)));
    }
    if !(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0) {
        return Err(Error::invalid("split_ratio out of range: must lie in (0, 1)"));
    }
    let mut dag = dag.clone();
    if let Some(p) = cfg.prevalence {
        dag.calibrate_prevalence(LABEL, p)?;
    }
    let factors = sample_factors(cfg.n, &dag, cfg.seed)?;
    let render = RenderConfig { seed: cfg.seed ^ 0x7e57_u64.rotate_left(32), ..cfg.render };
    let images = quantize(render_fundus(&factors, &render)?)?;
    let labels = factors.labels()?;

    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)));
    let n_train = ((cfg.n as f64 * cfg.split_ratio).round() as usize).clamp(1, cfg.n - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let build = |rows: &[usize], split: Split| Dataset {
        images: images.select(rows),
        labels: rows.iter().map(|&r| labels[r]).collect(),
        factors: Some(factors.select(rows)),
        filenames: (0..rows.len()).map(|i| format!("{i:04}.png")).collect(),
        split,
    };
    let train = build(train_idx, Split::Train);
    let test = build(test_idx, Split::Test);
    if let Some(dir) = out_dir {
        let record = DagFile { dag: dag.clone(), seed: cfg.seed, render };
        for ds in [&train, &test] {
            write_dataset(&dir.join(ds.split.dir_name()), ds, Some(&record))?;
        }
    }
    Ok((train, test))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { path: path.display().to_string(), line, msg: e.to_string() }
}

/// Writes `images/NNNN.png`, `labels.csv`, and for synthetic data
/// `factors.csv` and `dag.json`.
pub fn write_dataset(dir: &Path, ds: &Dataset, dag: Option<&DagFile>) -> Result<()> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir)?;
    let [h, w, c] = ds.images.image_shape();
    if c != 3 {
        return Err(Error::invalid("only RGB images can be written"));
    }
    for (i, img) in ds.images.view().outer_iter().enumerate() {
        let bytes: Vec<u8> = img.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        let path = img_dir.join(&ds.filenames[i]);
        RgbImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer matches dimensions")
            .save(&path)
            .map_err(|e| Error::Image { path: path.clone(), msg: e.to_string() })?;
    }
    let labels_path = dir.join("labels.csv");
    let mut wr = csv::Writer::from_path(&labels_path).map_err(|e| csv_err(&labels_path, e))?;
    wr.write_record(["filename", "label"]).map_err(|e| csv_err(&labels_path, e))?;
    for (f, l) in ds.filenames.iter().zip(&ds.labels) {
        wr.write_record([f.as_str(), &l.to_string()]).map_err(|e| csv_err(&labels_path, e))?;
    }
    wr.flush()?;
    if let Some(t) = &ds.factors {
        write_factors(&dir.join("factors.csv"), &ds.filenames, t)?;
    }
    if let Some(d) = dag {
        let json = serde_json::to_string_pretty(d).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(dir.join("dag.json"), json)?;
    }
    Ok(())
}

fn write_factors(path: &Path, filenames: &[String], t: &FactorTable) -> Result<()> {
    let mut wr = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<&str> =
        std::iter::once("filename").chain(t.names.iter().map(String::as_str)).chain(NUISANCE_NAMES).collect();
    wr.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (r, f) in filenames.iter().enumerate() {
        let (vals, nuis) = (t.values.row(r), t.nuisance.row(r));
        let row = std::iter::once(f.clone()).chain(vals.iter().chain(nuis.iter()).map(|v| v.to_string()));
        wr.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    wr.flush()?;
    Ok(())
}

fn read_factors(path: &Path, filenames: &[String], seed: u64) -> Result<FactorTable> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = rd.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("filename") || header.len() < 1 + NUISANCE_NAMES.len() {
        return Err(Error::Parse { path: path.display().to_string(), line: 1, msg: "unexpected header".into() });
    }
    let n_nodes = header.len() - 1 - NUISANCE_NAMES.len();
    let mut rows = std::collections::HashMap::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { path: path.display().to_string(), line: line + 2, msg: e.to_string() })?;
        rows.insert(rec[0].to_string(), vals);
    }
    let mut values = Array2::zeros((filenames.len(), n_nodes));
    let mut nuisance = Array2::zeros((filenames.len(), NUISANCE_NAMES.len()));
    for (r, f) in filenames.iter().enumerate() {
        let v = rows.get(f).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: format!("no factors for {f}"),
        })?;
        for k in 0..n_nodes {
            values[[r, k]] = v[k];
        }
        for k in 0..NUISANCE_NAMES.len() {
            nuisance[[r, k]] = v[n_nodes + k];
        }
    }
    Ok(FactorTable { names: header[1..=n_nodes].to_vec(), values, nuisance, seed })
}

pub fn load_dag(dir: &Path) -> Result<DagFile> {
    let path = dir.join("dag.json");
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingFile(path.clone()))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn decode_image(path: &Path, size: usize) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })?;
    let mut rgb = img.to_rgb8();
    if rgb.width() as usize != size || rgb.height() as usize != size {
        rgb = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
    }
    Ok(rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect())
}

fn class_label(dir_name: &str, position: usize) -> u8 {
    match dir_name.parse::<u8>() {
        Ok(v) => (v != 0) as u8,
        Err(_) => position as u8,
    }
}

/// Loads `root/labels.csv` (`filename,label`, images under `root/images/` or
/// `root/`) or, without one, exactly two class subdirectories.
///
/// Class directories named `0` / `1` map to those labels; otherwise the
/// lexicographically first directory is class 0. Samples are ordered by
/// relative path. A `factors.csv` next to the labels is loaded when present.
pub fn load_image_dataset(root: &Path, size: usize, split: Split) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let labels_path = root.join("labels.csv");
    let mut entries: Vec<(String, PathBuf, u8)> = Vec::new();
    if labels_path.exists() {
        let mut rd = csv::Reader::from_path(&labels_path).map_err(|e| csv_err(&labels_path, e))?;
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(&labels_path, e))?;
            let parse_err = |msg: String| Error::Parse { path: labels_path.display().to_string(), line: line + 2, msg };
            if rec.len() != 2 {
                return Err(parse_err("expected `filename,label`".into()));
            }
            let label: u8 = rec[1].trim().parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
            if label > 1 {
                return Err(parse_err(format!("label {label} is not binary")));
            }
            let name = rec[0].trim().to_string();
            let nested = root.join("images").join(&name);
            let path = if nested.exists() { nested } else { root.join(&name) };
            entries.push((name, path, label));
        }
    } else {
        let mut classes: Vec<PathBuf> =
            fs::read_dir(root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        classes.sort();
        if classes.len() != 2 {
            return Err(Error::MissingFile(labels_path));
        }
        for (pos, dir) in classes.iter().enumerate() {
            let dname = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            for f in fs::read_dir(dir)? {
                let p = f?.path();
                if p.is_file() {
                    let fname = p.file_name().and_then(|s| s.to_str()).unwrap_or_default();
                    entries.push((format!("{dname}/{fname}"), p.clone(), class_label(&dname, pos)));
                }
            }
        }
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    if entries.is_empty() {
        return Err(Error::invalid(format!("no images under {}", root.display())));
    }
    let mut pixels = Vec::with_capacity(entries.len() * size * size * 3);
    for (_, path, _) in &entries {
        pixels.extend(decode_image(path, size)?);
    }
    let images = ImageBatch::new(Array4::from_shape_vec((entries.len(), size, size, 3), pixels).expect("decoded sizes agree"))?;
    let filenames: Vec<String> = entries.iter().map(|e| e.0.clone()).collect();
    let factors_path = root.join("factors.csv");
    let factors = if factors_path.exists() {
        let seed = load_dag(root).map(|d| d.seed).unwrap_or(0);
        Some(read_factors(&factors_path, &filenames, seed)?)
    } else {
        None
    };
    Ok(Dataset { images, labels: entries.iter().map(|e| e.2).collect(), factors, filenames, split })
}
