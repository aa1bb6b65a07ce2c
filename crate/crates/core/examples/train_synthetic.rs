//! Trains the full model on rendered synthetic fundus images and writes a
//! run directory.
//!
//! Usage: `train_synthetic [EPOCHS] [RUN_DIR]`

use std::path::PathBuf;
use std::time::Instant;

use lighthcg::causal_gae::GaeConfig;
use lighthcg::scm_synth::{generate_dataset, GenerateConfig, GroundTruthDag};
use lighthcg::training::{save_run, train, ModelSnapshot, TrainConfig};
use lighthcg::vae_core::VaeConfig;

fn main() -> lighthcg::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);
    let out = args.next().map_or_else(|| PathBuf::from("runs/synthetic"), PathBuf::from);

    let (train_set, _) = generate_dataset(&GroundTruthDag::fundus(), &GenerateConfig::default(), None)?;
    let snapshot = ModelSnapshot {
        vae: VaeConfig::desk(),
        gae: GaeConfig::default(),
        train: TrainConfig { epochs, ..Default::default() },
    };
    let start = Instant::now();
    let run = train(&train_set, &snapshot.vae, &snapshot.gae, &snapshot.train)?;
    let last = run.last().copied().expect("at least one epoch");
    println!(
        "{} epochs in {:.1}s: total {:.4}, cvae {:.4}, gae {:.4}, hsic1 {:.4}, hsic2 {:.4}, h {:.2e}",
        run.history.len(),
        start.elapsed().as_secs_f64(),
        last.loss_total,
        last.loss_cvae,
        last.loss_gae,
        last.loss_h1,
        last.loss_h2,
        last.h
    );
    save_run(&out, &run, &snapshot, None)?;
    println!("run written to {}", out.display());
    Ok(())
}
