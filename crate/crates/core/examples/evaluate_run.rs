//! Scores a run directory written by `train_synthetic` against freshly
//! regenerated data from the same seed.
//!
//! Usage: `evaluate_run [RUN_DIR]`

use std::path::PathBuf;

use lighthcg::evaluation::{evaluate_model, write_evaluation, EvaluationConfig};
use lighthcg::scm_synth::{generate_dataset, GenerateConfig, GroundTruthDag};
use lighthcg::training::load_model;

fn main() -> lighthcg::Result<()> {
    let run = std::env::args().nth(1).map_or_else(|| PathBuf::from("runs/synthetic"), PathBuf::from);
    let (model, _) = load_model(&run)?;
    let dag = GroundTruthDag::fundus();
    let (train, test) = generate_dataset(&dag, &GenerateConfig::default(), None)?;
    let eval = evaluate_model(&model, &train, &test, Some(&dag), &EvaluationConfig::default())?;
    println!("{}", eval.report.table());
    write_evaluation(&run.join("evaluation"), &eval)?;
    Ok(())
}
