//! Compares normalized HSIC on independent and dependent sample pairs and
//! runs a small permutation test on each.
//!
//! Usage: `hsic_independence [N]`

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use lighthcg::kernel_stats::{hsic_normalized, SampleMatrix};

fn permutation_p_value(x: &SampleMatrix, y: &SampleMatrix, perms: usize, rng: &mut ChaCha8Rng) -> lighthcg::Result<f64> {
    let observed = hsic_normalized(x, y)?;
    let mut order: Vec<usize> = (0..y.n()).collect();
    let mut exceed = 0;
    for _ in 0..perms {
        order.shuffle(rng);
        let shuffled = SampleMatrix::new(y.view().select(Axis(0), &order))?;
        if hsic_normalized(x, &shuffled)? >= observed {
            exceed += 1;
        }
    }
    Ok((exceed + 1) as f64 / (perms + 1) as f64)
}

fn main() -> lighthcg::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut normal = |rows, cols| Array2::<f64>::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng));
    let x = normal(n, 2);
    let noise = normal(n, 1);
    let independent = normal(n, 1);
    // y depends on x only through a nonlinearity a correlation test would miss
    let dependent = Array2::from_shape_fn((n, 1), |(i, _)| x[[i, 0]].powi(2) + 0.3 * noise[[i, 0]]);

    let x = SampleMatrix::new(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, y) in [("independent", independent), ("y = x0^2 + noise", dependent)] {
        let y = SampleMatrix::new(y)?;
        let stat = hsic_normalized(&x, &y)?;
        let p = permutation_p_value(&x, &y, 99, &mut rng)?;
        println!("{name:>18}: nHSIC {stat:.4}, permutation p = {p:.3}");
    }
    println!("{:>18}: nHSIC {:.6}", "x with itself", hsic_normalized(&x, &x)?);
    Ok(())
}
