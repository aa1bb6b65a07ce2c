use statrs::function::gamma::digamma;

use crate::error::{Error, Result};

/// Mutual information (nats) between a continuous feature and a binary
/// label by nearest-neighbour counting.
///
/// Each point's radius is the distance to its `k`-th neighbour among points
/// of the same class, nudged just inside; the estimate combines digammas of
/// the sample size, `k`, the class sizes and the number of points of any
/// class within each radius. The feature is scaled to unit variance and given
/// a deterministic `1e-10 · index` jitter to break ties. Negative estimates
/// are clamped to 0.
pub fn mutual_information_knn(feature: &[f64], labels: &[u8], k: usize) -> Result<f64> {
    let n = feature.len();
    if labels.len() != n {
        return Err(Error::shape(format!("{n} feature values vs {} labels", labels.len())));
    }
    if k == 0 || n <= k {
        return Err(Error::invalid(format!("need more than k = {k} samples, got {n}")));
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mutual information feature"));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::SingleClass);
    }
    let mean = feature.iter().sum::<f64>() / n as f64;
    let var = feature.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let x: Vec<f64> = feature.iter().enumerate().map(|(i, v)| v / scale + 1e-10 * i as f64).collect();

    let mut radius = vec![0.0; n];
    let mut k_used = vec![0usize; n];
    let mut class_size = vec![0usize; n];
    for class in [0u8, 1u8] {
        let members: Vec<usize> = (0..n).filter(|&i| (labels[i] != 0) as u8 == class).collect();
        let count = members.len();
        let mut vals: Vec<f64> = members.iter().map(|&i| x[i]).collect();
        vals.sort_by(f64::total_cmp);
        for &i in &members {
            class_size[i] = count;
            if count > 1 {
                let kk = k.min(count - 1);
                radius[i] = kth_neighbour_distance(&vals, x[i], kk).next_down();
                k_used[i] = kk;
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| class_size[i] > 1).collect();
    let mut all: Vec<f64> = keep.iter().map(|&i| x[i]).collect();
    all.sort_by(f64::total_cmp);
    let m = keep.len() as f64;
    let mut acc_k = 0.0;
    let mut acc_class = 0.0;
    let mut acc_count = 0.0;
    for &i in &keep {
        let lo = all.partition_point(|&v| x[i] - v > radius[i]);
        let hi = all.partition_point(|&v| v - x[i] <= radius[i]);
        acc_k += digamma(k_used[i] as f64);
        acc_class += digamma(class_size[i] as f64);
        acc_count += digamma((hi - lo) as f64);
    }
    let mi = digamma(m) + (acc_k - acc_class - acc_count) / m;
    Ok(mi.max(0.0))
}

/// Distance from `x` (an element of sorted `vals`) to its `k`-th nearest
/// other element.
fn kth_neighbour_distance(vals: &[f64], x: f64, k: usize) -> f64 {
    let pos = vals.partition_point(|&v| v < x);
    // `pos` is the first copy of x; exclude exactly one copy (the point itself).
    let (mut left, mut right) = (pos as isize - 1, pos + 1);
    let mut d = 0.0;
    for _ in 0..k {
        let dl = if left >= 0 { x - vals[left as usize] } else { f64::INFINITY };
        let dr = if right < vals.len() { vals[right] - x } else { f64::INFINITY };
        if dl <= dr {
            d = dl;
            left -= 1;
        } else {
            d = dr;
            right += 1;
        }
    }
    d
}

/// Mean of per-column estimates of `MI(column, labels)`.
pub fn mean_mutual_information(columns: ndarray::ArrayView2<'_, f64>, labels: &[u8], k: usize) -> Result<(f64, Vec<f64>)> {
    let per: Vec<f64> = columns
        .columns()
        .into_iter()
        .map(|c| mutual_information_knn(&c.to_vec(), labels, k))
        .collect::<Result<_>>()?;
    Ok((per.iter().sum::<f64>() / per.len().max(1) as f64, per))
}
