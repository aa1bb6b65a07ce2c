//! Generates a small synthetic fundus dataset and prints its summary.
//!
//! ```text
//! cargo run --example generate_dataset -- /tmp/fundus
//! ```

use std::path::PathBuf;

use lighthcg::scm_synth::{generate_dataset, GenerateConfig, GroundTruthDag};

fn main() -> lighthcg::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lighthcg-fundus"));
    let cfg = GenerateConfig { n: 200, seed: 7, ..Default::default() };
    let (train, test) = generate_dataset(&GroundTruthDag::fundus(), &cfg, Some(&out))?;
    println!("wrote {} train / {} test images to {}", train.len(), test.len(), out.display());
    println!("label prevalence: train {:.2}, test {:.2}", train.prevalence(), test.prevalence());
    let f = train.factors.as_ref().expect("synthetic data keeps its factors");
    for name in ["rim", "cup", "vessel"] {
        let col = f.column(name).expect("default graph has this factor");
        let mean = col.mean().unwrap_or(0.0);
        println!("{name:>7}: mean {mean:.3}, range [{:.3}, {:.3}]", col.fold(1.0, |a: f64, &b| a.min(b)), col.fold(0.0, |a: f64, &b| a.max(b)));
    }
    Ok(())
}
