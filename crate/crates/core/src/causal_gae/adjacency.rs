use ndarray::Array2;

use super::expm::matrix_exponential;
use crate::error::{Error, Result};

/// Weighted adjacency `A` (row = source, column = target) with a blacklist of
/// entries that are forced to zero after every update.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAdjacency {
    weights: Array2<f64>,
    blacklist: Array2<bool>,
}

impl WeightedAdjacency {
    /// Zero weights with only the diagonal blacklisted.
    pub fn zeros(d: usize) -> Self {
        Self { weights: Array2::zeros((d, d)), blacklist: Array2::from_shape_fn((d, d), |(i, j)| i == j) }
    }

    /// Zero weights over `d - 1` latent nodes plus a trailing label node: the
    /// diagonal and every edge leaving the label are blacklisted.
    pub fn with_label_sink(d: usize) -> Self {
        let mut a = Self::zeros(d);
        if d > 0 {
            a.blacklist.row_mut(d - 1).fill(true);
        }
        a
    }

    pub fn new(weights: Array2<f64>, blacklist: Array2<bool>) -> Result<Self> {
        if weights.nrows() != weights.ncols() || weights.dim() != blacklist.dim() {
            return Err(Error::shape(format!(
                "adjacency {:?} with blacklist {:?}",
                weights.shape(),
                blacklist.shape()
            )));
        }
        let mut a = Self { weights, blacklist };
        a.apply_blacklist();
        Ok(a)
    }

    pub fn d(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn blacklist(&self) -> &Array2<bool> {
        &self.blacklist
    }

    pub fn is_blacklisted(&self, i: usize, j: usize) -> bool {
        self.blacklist[[i, j]]
    }

    /// Replaces the weights, then zeroes the blacklisted entries.
    pub fn set_weights(&mut self, weights: Array2<f64>) -> Result<()> {
        if weights.dim() != self.weights.dim() {
            return Err(Error::shape("adjacency weights changed shape"));
        }
        self.weights = weights;
        self.apply_blacklist();
        Ok(())
    }

    pub fn apply_blacklist(&mut self) {
        self.weights.zip_mut_with(&self.blacklist, |w, &b| {
            if b {
                *w = 0.0;
            }
        });
    }

    /// Magnitudes of the entries that are not blacklisted, row-major.
    pub fn free_magnitudes(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(self.blacklist.iter())
            .filter(|(_, &b)| !b)
            .map(|(w, _)| w.abs())
            .collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }
}

/// `h(A) = tr(exp(A ∘ A)) − d`; zero exactly when the support of `A` is acyclic.
pub fn acyclicity(a: &WeightedAdjacency) -> f64 {
    let sq = a.weights().mapv(|w| w * w);
    let e = matrix_exponential(sq.view()).expect("adjacency weights are finite");
    e.diag().sum() - a.d() as f64
}

/// `∇h(A) = 2A ∘ exp(A ∘ A)ᵀ`.
pub fn acyclicity_gradient(a: &WeightedAdjacency) -> Array2<f64> {
    let sq = a.weights().mapv(|w| w * w);
    let e = matrix_exponential(sq.view()).expect("adjacency weights are finite");
    let mut g = e.t().to_owned();
    g.zip_mut_with(a.weights(), |g, &w| *g *= 2.0 * w);
    g
}

/// Keeps the top `keep_fraction` of non-blacklisted weights by magnitude.
///
/// The threshold is the linearly interpolated `(1 − keep_fraction)` quantile
/// of the free magnitudes, and every entry at or above it is kept, so ties at
/// the threshold can push the count above the nominal fraction.
pub fn binarize_adjacency(a: &WeightedAdjacency, keep_fraction: f64) -> Result<Array2<u8>> {
    if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
        return Err(Error::invalid(format!("keep_fraction must lie in (0, 1), got {keep_fraction}")));
    }
    let mut free = a.free_magnitudes();
    if free.is_empty() || free.iter().all(|v| *v == free[0]) {
        return Err(Error::DegenerateWeights);
    }
    free.sort_by(f64::total_cmp);
    let pos = (1.0 - keep_fraction) * (free.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let threshold = if lo + 1 < free.len() { free[lo] + frac * (free[lo + 1] - free[lo]) } else { free[lo] };
    let d = a.d();
    Ok(Array2::from_shape_fn((d, d), |(i, j)| {
        (!a.is_blacklisted(i, j) && a.weights()[[i, j]].abs() >= threshold) as u8
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn adj(w: Array2<f64>) -> WeightedAdjacency {
        let d = w.nrows();
        WeightedAdjacency::new(w, Array2::from_elem((d, d), false)).unwrap()
    }

    #[test]
    fn label_sink_blacklist() {
        let a = WeightedAdjacency::with_label_sink(4);
        for i in 0..4 {
            assert!(a.is_blacklisted(i, i));
            assert!(a.is_blacklisted(3, i));
        }
        assert!(!a.is_blacklisted(0, 3));
        assert!(a.weights().iter().all(|w| *w == 0.0));
        assert_eq!(a.free_magnitudes().len(), 9);
    }

    #[test]
    fn blacklist_is_enforced_on_set() {
        let mut a = WeightedAdjacency::with_label_sink(3);
        a.set_weights(Array2::ones((3, 3))).unwrap();
        assert_eq!(a.weights()[[1, 1]], 0.0);
        assert_eq!(a.weights()[[2, 0]], 0.0);
        assert_eq!(a.weights()[[0, 1]], 1.0);
    }

    #[test]
    fn acyclicity_values() {
        assert_eq!(acyclicity(&WeightedAdjacency::zeros(4)), 0.0);
        let upper = array![[0.0, 2.0, -1.5, 3.0], [0.0, 0.0, 0.7, -4.0], [0.0, 0.0, 0.0, 1.1], [0.0, 0.0, 0.0, 0.0]];
        assert!(acyclicity(&adj(upper)).abs() < 1e-10);
        let cycle = array![[0.0, 1.0], [1.0, 0.0]];
        let expected = 2.0 * 1f64.cosh() - 2.0;
        assert!((acyclicity(&adj(cycle)) - expected).abs() < 1e-12);
        assert!((expected - 1.08616).abs() < 1e-5);
    }

    #[test]
    fn acyclicity_nonnegative_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let d = rng.random_range(1..7);
            let w = Array2::from_shape_fn((d, d), |_| rng.random_range(-2.0..2.0));
            assert!(acyclicity(&adj(w)) >= 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let w = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
            let g = acyclicity_gradient(&adj(w.clone()));
            let h = 1e-5;
            for i in 0..4 {
                for j in 0..4 {
                    let mut p = w.clone();
                    p[[i, j]] += h;
                    let mut m = w.clone();
                    m[[i, j]] -= h;
                    let fd = (acyclicity(&adj(p)) - acyclicity(&adj(m))) / (2.0 * h);
                    let rel = (fd - g[[i, j]]).abs() / fd.abs().max(1e-3);
                    assert!(rel < 1e-5, "seed {seed} ({i},{j}): fd {fd} analytic {}", g[[i, j]]);
                }
            }
        }
        assert!(acyclicity_gradient(&WeightedAdjacency::zeros(4)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_on_upper_triangular_support() {
        let w = array![[0.0, 0.5, 0.0], [0.0, 0.0, -2.0], [0.0, 0.0, 0.0]];
        let g = acyclicity_gradient(&adj(w.clone()));
        for ((i, j), v) in g.indexed_iter() {
            if w[[i, j]] == 0.0 {
                assert_eq!(*v, 0.0);
            }
        }
        // exp(A∘A)ᵀ of a nilpotent upper triangle: (i,j) entry of the transpose is exp(..)[j][i] = 0 for i<j
        assert_eq!(g[[0, 1]], 0.0);
        let h = 1e-5;
        let mut p = w.clone();
        p[[0, 1]] += h;
        let mut m = w.clone();
        m[[0, 1]] -= h;
        let fd = (acyclicity(&adj(p)) - acyclicity(&adj(m))) / (2.0 * h);
        assert!(fd.abs() < 1e-9);
    }

    #[test]
    fn binarize_counts() {
        let mut a = WeightedAdjacency::zeros(4);
        let mut k = 1.0;
        let mut w = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    w[[i, j]] = k;
                    k += 1.0;
                }
            }
        }
        a.set_weights(w.clone()).unwrap();
        let b = binarize_adjacency(&a, 0.25).unwrap();
        assert_eq!(b.iter().map(|&v| v as usize).sum::<usize>(), 3);
        assert_eq!(b[[3, 2]], 1);
        assert!(b.diag().iter().all(|&v| v == 0));

        let b = binarize_adjacency(&a, 0.05).unwrap();
        assert_eq!(b.iter().map(|&v| v as usize).sum::<usize>(), 1);
        assert_eq!(b[[3, 2]], 1);

        assert!(matches!(binarize_adjacency(&WeightedAdjacency::zeros(4), 0.25), Err(Error::DegenerateWeights)));
        assert!(binarize_adjacency(&a, 1.0).is_err());
    }

    /// Ties at the threshold are all kept; checked against a direct count.
    #[test]
    fn binarize_keeps_ties() {
        let mut a = WeightedAdjacency::zeros(4);
        let mut w = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 1.0 });
        for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
            w[[i, j]] = -2.0;
        }
        a.set_weights(w).unwrap();
        // Twelve free magnitudes: eight 1s and four 2s; the 0.75 quantile is 2.
        let b = binarize_adjacency(&a, 0.25).unwrap();
        let at_or_above = a.free_magnitudes().iter().filter(|&&v| v >= 2.0).count();
        assert_eq!(at_or_above, 4);
        assert_eq!(b.iter().map(|&v| v as usize).sum::<usize>(), 4);
    }

    fn has_cycle(adj: &[[bool; 4]; 4], d: usize) -> bool {
        // Repeatedly strip nodes without incoming edges.
        let mut alive = vec![true; d];
        loop {
            let source = (0..d).find(|&j| alive[j] && !(0..d).any(|i| alive[i] && adj[i][j]));
            match source {
                Some(j) => alive[j] = false,
                None => return alive.iter().any(|&a| a),
            }
        }
    }

    #[test]
    fn acyclicity_zero_iff_dag_exhaustive() {
        for d in 1..=4usize {
            let slots: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
            for pattern in 0u32..(1 << slots.len()) {
                let mut edges = [[false; 4]; 4];
                let mut w = Array2::zeros((d, d));
                for (bit, &(i, j)) in slots.iter().enumerate() {
                    if pattern >> bit & 1 == 1 {
                        edges[i][j] = true;
                        w[[i, j]] = 1.0;
                    }
                }
                let h = acyclicity(&adj(w));
                assert_eq!(h > 1e-8, has_cycle(&edges, d), "d={d} pattern={pattern:b} h={h}");
            }
        }
    }

}
