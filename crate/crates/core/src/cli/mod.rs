//! Command-line front end: `generate`, `train`, `discover`, `evaluate` and
//! `traverse`.
//!
//! Settings come from an optional TOML file (`--config`); flags override it.
//! Exit status is 0 on success, 1 for usage errors and 2 for runtime errors.

mod config;

pub use config::{PathsConfig, RunConfig};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::causal_gae::{binarize_adjacency, standalone_discover, write_matrix_csv};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_model, median, sample_images, traversal_grid, traversal_maps, write_evaluation, write_traversal_png,
};
use crate::evaluation::shd_best_match;
use crate::kernel_stats::SampleMatrix;
use crate::scm_synth::{generate_dataset, load_dag, load_image_dataset, sample_factors, GroundTruthDag, Split, LABEL};
use crate::training::{load_model, save_run, train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lighthcg", version, about = "Split-latent VAE with causal discovery over the label-relevant latents")]
pub struct Cli {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed applied to every random component
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic image dataset (or tabular SCM samples)
    Generate(GenerateArgs),
    /// Train the model on an image dataset
    Train(TrainArgs),
    /// Learn a causal graph from a CSV of samples
    Discover(DiscoverArgs),
    /// Score a trained run: classifier metrics, MI, SHD, traversal maps
    Evaluate(EvaluateArgs),
    /// Render latent traversal difference maps for a trained run
    Traverse(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of samples (both splits together)
    #[arg(long)]
    pub n: Option<usize>,
    /// Fraction of samples in the training split
    #[arg(long)]
    pub split_ratio: Option<f64>,
    /// Write `samples.csv` from the structural model instead of images
    #[arg(long)]
    pub tabular: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root containing `train/`, or a single split directory
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory to create
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    /// CSV with one column per variable; an optional header row is skipped
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reference graph (JSON) for scoring
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Fraction of free adjacency entries kept as edges
    #[arg(long)]
    pub keep_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset root containing `train/` and `test/`
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (defaults to `<run>/evaluation`)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub keep_fraction: Option<f64>,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_seed(cli.seed);
    match cli.command {
        Command::Generate(a) => cmd_generate(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Discover(a) => cmd_discover(cfg, a),
        Command::Evaluate(a) => cmd_evaluate(cfg, a),
        Command::Traverse(a) => cmd_traverse(cfg, a),
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| Error::Config(format!("no {name} path: pass --{name} or set paths.{name}")))
}

pub fn cmd_generate(mut cfg: RunConfig, a: GenerateArgs) -> Result<()> {
    let out = required(a.out, &cfg.paths.out, "out")?;
    if let Some(n) = a.n {
        cfg.generate.n = n;
    }
    if let Some(r) = a.split_ratio {
        cfg.generate.split_ratio = r;
    }
    if a.tabular {
        let dag = cfg.dag.clone().unwrap_or_else(GroundTruthDag::linear_benchmark);
        let table = sample_factors(cfg.generate.n, &dag, cfg.generate.seed)?;
        fs::create_dir_all(&out)?;
        let path = out.join("samples.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        w.write_record(&table.names).map_err(|e| csv_error(&path, e))?;
        for row in table.values.rows() {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_error(&path, e))?;
        }
        w.flush()?;
        fs::write(out.join("dag.json"), serde_json::to_string_pretty(&dag).map_err(|e| Error::Config(e.to_string()))?)?;
        println!("wrote {} samples of {} variables to {}", table.n(), dag.d(), path.display());
        return Ok(());
    }
    let dag = cfg.dag.clone().unwrap_or_else(GroundTruthDag::fundus);
    let (train_set, test_set) = generate_dataset(&dag, &cfg.generate, Some(&out))?;
    println!(
        "wrote {} training and {} test images to {} (prevalence {:.3} / {:.3})",
        train_set.len(),
        test_set.len(),
        out.display(),
        train_set.prevalence(),
        test_set.prevalence()
    );
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { path: path.display().to_string(), line, msg: e.to_string() }
}

/// `root/<split>` when it exists, otherwise `root` itself.
fn split_dir(root: &Path, split: Split) -> PathBuf {
    let nested = root.join(split.dir_name());
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

pub fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let data = required(a.data, &cfg.paths.data, "data")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if cfg.vae.height != cfg.vae.width {
        return Err(Error::Config("image loading needs square images".into()));
    }
    let ds = load_image_dataset(&split_dir(&data, Split::Train), cfg.vae.height, Split::Train)?;
    log::info!("training on {} images for {} epochs", ds.len(), cfg.train.epochs);
    let run = train(&ds, &cfg.vae, &cfg.gae, &cfg.train)?;
    save_run(&out, &run, &cfg.snapshot(), Some(&cfg.to_toml()?))?;
    let last = run.last().copied().ok_or_else(|| Error::invalid("no epochs were run"))?;
    println!(
        "epoch {}: loss_total {:.6} loss_cvae {:.6} loss_gae {:.6} loss_h1 {:.6} loss_h2 {:.6} h {:.3e}",
        last.epoch, last.loss_total, last.loss_cvae, last.loss_gae, last.loss_h1, last.loss_h2, last.h
    );
    Ok(())
}

/// Numeric CSV; a first row that does not parse as numbers is a header.
pub fn read_samples_csv(path: &Path) -> Result<Array2<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if let Some(first) = rows.first() {
                    if first.len() != v.len() {
                        return Err(Error::Parse {
                            path: path.display().to_string(),
                            line: i + 1,
                            msg: format!("expected {} fields, found {}", first.len(), v.len()),
                        });
                    }
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Parse { path: path.display().to_string(), line: i + 1, msg: "non-finite value".into() });
                }
                rows.push(v);
            }
            Err(_) if i == 0 => {}
            Err(e) => return Err(Error::Parse { path: path.display().to_string(), line: i + 1, msg: e.to_string() }),
        }
    }
    let d = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || d == 0 {
        return Err(Error::Parse { path: path.display().to_string(), line: 0, msg: "no numeric rows".into() });
    }
    Array2::from_shape_vec((rows.len(), d), rows.concat()).map_err(|e| Error::shape(e.to_string()))
}

/// Reads a graph from `dag.json` as written by `generate`, with or without
/// the surrounding dataset record.
pub fn read_truth(path: &Path) -> Result<GroundTruthDag> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    #[derive(serde::Deserialize)]
    struct Wrapped {
        dag: GroundTruthDag,
    }
    serde_json::from_str::<GroundTruthDag>(&text)
        .or_else(|_| serde_json::from_str::<Wrapped>(&text).map(|w| w.dag))
        .map_err(|e| Error::Parse { path: path.display().to_string(), line: e.line(), msg: e.to_string() })
}

pub fn cmd_discover(mut cfg: RunConfig, a: DiscoverArgs) -> Result<()> {
    let data_path = required(a.data, &cfg.paths.data, "data")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    if let Some(e) = a.epochs {
        cfg.discover.epochs = e;
    }
    if let Some(k) = a.keep_fraction {
        cfg.discover.keep_fraction = k;
    }
    let values = read_samples_csv(&data_path)?;
    let d = values.ncols();
    let truth = match &a.truth {
        Some(p) => {
            let t = read_truth(p)?;
            if t.d() != d {
                return Err(Error::shape(format!("reference graph has {} nodes, data has {d} columns", t.d())));
            }
            Some(t)
        }
        None => None,
    };
    let (adjacency, run) = standalone_discover(&SampleMatrix::new(values)?, &cfg.discover)?;
    let binary = if adjacency.free_magnitudes().is_empty() {
        Array2::zeros((d, d))
    } else {
        binarize_adjacency(&adjacency, cfg.discover.keep_fraction)?
    };
    fs::create_dir_all(&out)?;
    write_matrix_csv(&out.join("adjacency.csv"), adjacency.weights())?;
    write_matrix_csv(&out.join("adjacency_binary.csv"), &binary)?;
    run.write_history_csv(&out.join("history.csv"))?;
    println!("final h(A) {:.3e}", run.final_h());
    if let Some(t) = truth {
        let fixed: Vec<usize> = if cfg.discover.label_sink { t.index_of(LABEL).into_iter().collect() } else { vec![] };
        let shd = shd_best_match(&binary, &t.adjacency(), &fixed)?;
        fs::write(out.join("shd.txt"), format!("{shd}\n"))?;
        println!("SHD {shd}");
    }
    Ok(())
}

struct Loaded {
    model: crate::training::TrainedModel,
    train: crate::scm_synth::Dataset,
    test: crate::scm_synth::Dataset,
    truth: Option<GroundTruthDag>,
}

fn load_for_evaluation(cfg: &RunConfig, a: &EvaluateArgs) -> Result<Loaded> {
    let data = required(a.data.clone(), &cfg.paths.data, "data")?;
    let (model, snapshot) = load_model(&a.run)?;
    let size = snapshot.vae.height;
    let train = load_image_dataset(&data.join("train"), size, Split::Train)?;
    let test = load_image_dataset(&data.join("test"), size, Split::Test)?;
    let truth = load_dag(&data.join("train")).ok().map(|f| f.dag);
    Ok(Loaded { model, train, test, truth })
}

pub fn cmd_evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    if let Some(k) = a.keep_fraction {
        cfg.evaluate.keep_fraction = k;
    }
    let l = load_for_evaluation(&cfg, &a)?;
    let eval = evaluate_model(&l.model, &l.train, &l.test, l.truth.as_ref(), &cfg.evaluate)?;
    let out = a.out.unwrap_or_else(|| a.run.join("evaluation"));
    write_evaluation(&out, &eval)?;
    println!("{}", eval.report.table());
    Ok(())
}

pub fn cmd_traverse(cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    let l = load_for_evaluation(&cfg, &a)?;
    let vae = &l.model.vae;
    let z1 = vae.config().z1_dim;
    let (mu, _) = vae.encode(&l.train.images)?;
    let sample = sample_images(&l.test.images, cfg.evaluate.traversal_images, cfg.evaluate.sample_seed);
    let mut stacks = Vec::new();
    for j in 0..vae.config().z2_dim {
        let col = mu.column(z1 + j);
        let base = match &cfg.evaluate.baselines {
            Some(b) => *b.get(j).ok_or_else(|| Error::Config("too few traversal baselines".into()))?,
            None => median(col),
        };
        stacks.push(traversal_maps(vae, &sample, j, &traversal_grid(col, cfg.evaluate.grid_points), base)?);
    }
    let out = a.out.unwrap_or_else(|| a.run.join("traversal"));
    fs::create_dir_all(&out)?;
    write_traversal_png(&out.join("traversal.png"), &stacks)?;
    fs::write(
        out.join("traversal_maps.json"),
        serde_json::to_string(&stacks).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    println!("wrote {} traversal rows to {}", stacks.len(), out.display());
    Ok(())
}
