//! Latent traversal of every causal coordinate of a trained run, written as a
//! PNG grid with one row per coordinate, plus the share of each row's energy
//! inside each renderer region.
//!
//! Usage: `traversal_maps RUN_DIR [OUT_PNG]`

use std::path::PathBuf;

use lighthcg::evaluation::{mask_energy, median, sample_images, traversal_grid, traversal_maps, write_traversal_png};
use lighthcg::scm_synth::{generate_dataset, region_masks, GenerateConfig, GroundTruthDag};
use lighthcg::training::load_model;
use lighthcg::Error;

fn main() -> lighthcg::Result<()> {
    let mut args = std::env::args().skip(1);
    let run = PathBuf::from(args.next().ok_or_else(|| Error::InvalidArgument("usage: traversal_maps RUN_DIR [OUT_PNG]".into()))?);
    let out = args.next().map_or_else(|| run.join("traversal.png"), PathBuf::from);

    let (model, snapshot) = load_model(&run)?;
    let (train, test) = generate_dataset(&GroundTruthDag::fundus(), &GenerateConfig::default(), None)?;
    let (mu, _) = model.vae.encode(&train.images)?;
    let images = sample_images(&test.images, 50, snapshot.train.seed);
    let z1 = model.vae.config().z1_dim;
    let masks = region_masks(model.vae.config().height);

    let mut stacks = Vec::new();
    for k in 0..model.vae.config().z2_dim {
        let column = mu.column(z1 + k);
        let stack = traversal_maps(&model.vae, &images, k, &traversal_grid(column, 8), median(column))?;
        let energy = |m| mask_energy(&stack, m);
        println!(
            "coordinate {k}: cup {:.3}, rim {:.3}, vessel {:.3}",
            energy(&masks.cup)?,
            energy(&masks.rim)?,
            energy(&masks.vessel)?
        );
        stacks.push(stack);
    }
    write_traversal_png(&out, &stacks)?;
    println!("wrote {}", out.display());
    Ok(())
}
