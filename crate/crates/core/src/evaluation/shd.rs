use itertools::Itertools;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Structural Hamming distance: for each unordered node pair, 1 if the edge
/// state (absent, either direction, or both) differs.
pub fn shd(estimated: &Array2<u8>, truth: &Array2<u8>) -> Result<usize> {
    if estimated.dim() != truth.dim() || estimated.nrows() != estimated.ncols() {
        return Err(Error::shape(format!("graphs {:?} and {:?}", estimated.shape(), truth.shape())));
    }
    let d = truth.nrows();
    let mut cost = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            let e = (estimated[[i, j]] != 0, estimated[[j, i]] != 0);
            let t = (truth[[i, j]] != 0, truth[[j, i]] != 0);
            cost += (e != t) as usize;
        }
    }
    Ok(cost)
}

/// Minimum [`shd`] over relabelings of the nodes not in `fixed_nodes`.
pub fn shd_best_match(estimated: &Array2<u8>, truth: &Array2<u8>, fixed_nodes: &[usize]) -> Result<usize> {
    let base = shd(estimated, truth)?;
    let d = truth.nrows();
    if fixed_nodes.iter().any(|&f| f >= d) {
        return Err(Error::invalid("fixed node index out of range"));
    }
    let free: Vec<usize> = (0..d).filter(|i| !fixed_nodes.contains(i)).collect();
    let mut best = base;
    for perm in free.iter().copied().permutations(free.len()) {
        let mut map: Vec<usize> = (0..d).collect();
        for (&from, &to) in free.iter().zip(&perm) {
            map[from] = to;
        }
        let mut relabeled = Array2::zeros((d, d));
        for ((i, j), &v) in estimated.indexed_iter() {
            relabeled[[map[i], map[j]]] = v;
        }
        best = best.min(shd(&relabeled, truth)?);
    }
    Ok(best)
}
