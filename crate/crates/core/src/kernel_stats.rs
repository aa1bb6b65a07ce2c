//! Kernel dependence measures.
//!
//! RBF Gram matrices, double centering, the empirical HSIC estimate
//! `tr(K H L H) / (n-1)^2`, its normalized alignment form
//! `tr(K̃ L̃) / (‖K̃‖_F ‖L̃‖_F)`, and the two HSIC losses used while training
//! the split latent space. The losses come with analytic gradients with
//! respect to every sample entry; the RBF bandwidth follows the median
//! heuristic and its (almost everywhere defined) derivative is included.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `n × p` matrix of samples, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix(Array2<f64>);

impl SampleMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample matrix"));
        }
        Ok(Self(values))
    }

    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape"))
    }

    pub fn from_view(values: ArrayView2<'_, f64>) -> Result<Self> {
        Self::new(values.to_owned())
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn p(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn column(&self, j: usize) -> SampleMatrix {
        Self(self.0.column(j).to_owned().insert_axis(Axis(1)))
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// RBF Gram matrix together with the bandwidth that produced it.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    entries: Array2<f64>,
    bandwidth: f64,
}

impl KernelMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }
}

/// `H K H` for a symmetric `K`; rows and columns sum to zero.
#[derive(Debug, Clone)]
pub struct CenteredKernelMatrix {
    entries: Array2<f64>,
}

impl CenteredKernelMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }
}

fn squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[[i, j]] = s;
            d[[j, i]] = s;
        }
    }
    d
}

/// Median of the strictly positive pairwise distances, plus the pair(s) it
/// was read from with their averaging weights.
#[derive(Debug, Clone)]
struct MedianDistance {
    value: f64,
    pairs: Vec<(usize, usize, f64)>,
}

fn median_distance(sqdist: &Array2<f64>) -> Result<MedianDistance> {
    let n = sqdist.nrows();
    let mut dists: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = sqdist[[i, j]];
            if d2 > 0.0 {
                dists.push((d2.sqrt(), i, j));
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::DegenerateSamples);
    }
    let mid = dists.len() / 2;
    let by_dist = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    if dists.len() % 2 == 1 {
        let (_, m, _) = dists.select_nth_unstable_by(mid, by_dist);
        Ok(MedianDistance { value: m.0, pairs: vec![(m.1, m.2, 1.0)] })
    } else {
        let (lower, hi, _) = dists.select_nth_unstable_by(mid, by_dist);
        let hi = *hi;
        let lo = *lower.iter().max_by(|a, b| by_dist(a, b)).expect("nonempty lower half");
        Ok(MedianDistance {
            value: 0.5 * (lo.0 + hi.0),
            pairs: vec![(lo.1, lo.2, 0.5), (hi.1, hi.2, 0.5)],
        })
    }
}

/// Median heuristic: the median of all strictly positive pairwise Euclidean
/// distances between samples.
pub fn median_heuristic_bandwidth(samples: &SampleMatrix) -> Result<f64> {
    if samples.n() < 2 {
        return Err(Error::invalid("median heuristic needs at least two samples"));
    }
    Ok(median_distance(&squared_distances(samples.view()))?.value)
}

fn rbf_from_sqdist(sqdist: &Array2<f64>, bandwidth: f64) -> Array2<f64> {
    let scale = -0.5 / (bandwidth * bandwidth);
    sqdist.mapv(|d| (d * scale).exp())
}

/// `K_ij = exp(-‖x_i - x_j‖² / (2σ²))`.
pub fn rbf_kernel_matrix(samples: &SampleMatrix, bandwidth: f64) -> Result<KernelMatrix> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let entries = rbf_from_sqdist(&squared_distances(samples.view()), bandwidth);
    Ok(KernelMatrix { entries, bandwidth })
}

fn center(k: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = k.nrows() as f64;
    let row_means = k.sum_axis(Axis(1)) / n;
    let col_means = k.sum_axis(Axis(0)) / n;
    let grand = row_means.sum() / n;
    let mut out = k.to_owned();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v += grand - row_means[i] - col_means[j];
    }
    out
}

/// Double centering `H K H` with `H = I - (1/n) 1 1ᵀ`.
pub fn center_kernel(k: ArrayView2<'_, f64>) -> Result<CenteredKernelMatrix> {
    if k.nrows() != k.ncols() {
        return Err(Error::shape(format!("kernel must be square, got {:?}", k.shape())));
    }
    Ok(CenteredKernelMatrix { entries: center(k) })
}

fn frobenius_inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Biased empirical HSIC, `tr(K H L H) / (n-1)²`, with fixed bandwidths.
pub fn hsic_empirical(x: &SampleMatrix, y: &SampleMatrix, sigma_x: f64, sigma_y: f64) -> Result<f64> {
    if x.n() != y.n() {
        return Err(Error::shape(format!("HSIC inputs have {} and {} samples", x.n(), y.n())));
    }
    if x.n() < 2 {
        return Err(Error::invalid("HSIC needs at least two samples"));
    }
    let k = rbf_kernel_matrix(x, sigma_x)?;
    let l = rbf_kernel_matrix(y, sigma_y)?;
    let lc = center(l.view());
    let nm1 = (x.n() - 1) as f64;
    Ok(frobenius_inner(k.entries(), &lc) / (nm1 * nm1))
}

/// Everything about one input's Gram matrix that the normalized HSIC and its
/// gradient need. Built once per column and reused across pairings.
#[derive(Debug, Clone)]
pub(crate) struct Gram {
    x: Array2<f64>,
    sigma: f64,
    median: MedianDistance,
    sqdist: Array2<f64>,
    k: Array2<f64>,
    kc: Array2<f64>,
    self_alignment: f64,
}

impl Gram {
    pub(crate) fn new(x: &SampleMatrix) -> Result<Self> {
        if x.n() < 2 {
            return Err(Error::invalid("HSIC needs at least two samples"));
        }
        let sqdist = squared_distances(x.view());
        let median = median_distance(&sqdist).map_err(|_| Error::ZeroCenteredKernel)?;
        let sigma = median.value;
        let k = rbf_from_sqdist(&sqdist, sigma);
        let kc = center(k.view());
        let self_alignment = frobenius_inner(&kc, &kc);
        if !(self_alignment > 1e-300) {
            return Err(Error::ZeroCenteredKernel);
        }
        Ok(Self { x: x.view().to_owned(), sigma, median, sqdist, k, kc, self_alignment })
    }

    /// Pulls `∂f/∂K` back to `∂f/∂x`, bandwidth dependence included.
    fn input_grad(&self, dk: &Array2<f64>) -> Array2<f64> {
        let n = self.x.nrows();
        let s2 = self.sigma * self.sigma;
        let w = dk * &self.k;
        let row_sums = w.sum_axis(Axis(1));
        let wx = w.dot(&self.x);
        let mut grad = &self.x * &row_sums.insert_axis(Axis(1));
        grad -= &wx;
        grad *= -2.0 / s2;

        let dsigma_coef = (&w * &self.sqdist).sum() / (s2 * self.sigma);
        if dsigma_coef != 0.0 {
            for &(p, q, weight) in &self.median.pairs {
                let dist = self.sqdist[[p, q]].sqrt();
                for c in 0..self.x.ncols() {
                    let u = weight * dsigma_coef * (self.x[[p, c]] - self.x[[q, c]]) / dist;
                    grad[[p, c]] += u;
                    grad[[q, c]] -= u;
                }
            }
        }
        debug_assert_eq!(grad.nrows(), n);
        grad
    }
}

fn nhsic_value(a: &Gram, b: &Gram) -> f64 {
    frobenius_inner(&a.k, &b.kc) / (a.self_alignment * b.self_alignment).sqrt()
}

/// Normalized HSIC with gradients for both inputs.
fn nhsic_with_grads(a: &Gram, b: &Gram, want_b: bool) -> (f64, Array2<f64>, Option<Array2<f64>>) {
    let cross = frobenius_inner(&a.k, &b.kc);
    let norm = (a.self_alignment * b.self_alignment).sqrt();
    let value = cross / norm;
    let da = (&b.kc - &(&a.kc * (cross / a.self_alignment))) / norm;
    let ga = a.input_grad(&da);
    let gb = want_b.then(|| {
        let db = (&a.kc - &(&b.kc * (cross / b.self_alignment))) / norm;
        b.input_grad(&db)
    });
    (value, ga, gb)
}

/// `tr(K̃ L̃) / (‖K̃‖_F ‖L̃‖_F)` with median-heuristic bandwidths.
pub fn hsic_normalized(x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    if x.n() != y.n() {
        return Err(Error::shape(format!("HSIC inputs have {} and {} samples", x.n(), y.n())));
    }
    let gx = Gram::new(x)?;
    let gy = Gram::new(y)?;
    Ok(nhsic_value(&gx, &gy))
}

/// Normalized HSIC and its gradients `(∂/∂x, ∂/∂y)`.
pub fn hsic_normalized_grad(x: &SampleMatrix, y: &SampleMatrix) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if x.n() != y.n() {
        return Err(Error::shape(format!("HSIC inputs have {} and {} samples", x.n(), y.n())));
    }
    let gx = Gram::new(x)?;
    let gy = Gram::new(y)?;
    let (v, dx, dy) = nhsic_with_grads(&gx, &gy, true);
    Ok((v, dx, dy.expect("requested")))
}

/// Loss value with gradients for each latent block it depends on.
#[derive(Debug, Clone)]
pub struct HsicLossGrad {
    pub value: f64,
    pub d_z1: Array2<f64>,
    pub d_z2: Array2<f64>,
}

fn column_grams(z: &SampleMatrix, what: &str) -> Vec<Option<Gram>> {
    (0..z.p())
        .map(|j| match Gram::new(&z.column(j)) {
            Ok(g) => Some(g),
            Err(_) => {
                log::warn!("{what} column {j} is constant; its HSIC term contributes 0");
                None
            }
        })
        .collect()
}

/// `(1/J) Σ_j nHSIC(Z1_j, Y) − ω (1/M) Σ_m nHSIC(Z2_m, Y)`, feature-wise.
///
/// A constant latent column contributes 0 (with a warning) instead of
/// failing, since early-epoch latents can collapse momentarily.
pub fn disentanglement_loss_grad(
    z1: &SampleMatrix,
    z2: &SampleMatrix,
    y: &SampleMatrix,
    omega: f64,
) -> Result<HsicLossGrad> {
    if z1.n() != y.n() || z2.n() != y.n() {
        return Err(Error::shape("disentanglement loss inputs differ in sample count"));
    }
    if z1.p() == 0 || z2.p() == 0 {
        return Err(Error::invalid("latent blocks must have at least one column"));
    }
    let gy = Gram::new(y)?;
    let n = y.n();
    let mut value = 0.0;
    let mut d_z1 = Array2::zeros((n, z1.p()));
    let mut d_z2 = Array2::zeros((n, z2.p()));
    let j_scale = 1.0 / z1.p() as f64;
    for (j, g) in column_grams(z1, "Z1").iter().enumerate() {
        if let Some(g) = g {
            let (v, dx, _) = nhsic_with_grads(g, &gy, false);
            value += j_scale * v;
            d_z1.column_mut(j).scaled_add(j_scale, &dx.column(0));
        }
    }
    let m_scale = -omega / z2.p() as f64;
    for (m, g) in column_grams(z2, "Z2").iter().enumerate() {
        if let Some(g) = g {
            let (v, dx, _) = nhsic_with_grads(g, &gy, false);
            value += m_scale * v;
            d_z2.column_mut(m).scaled_add(m_scale, &dx.column(0));
        }
    }
    Ok(HsicLossGrad { value, d_z1, d_z2 })
}

pub fn disentanglement_loss(z1: &SampleMatrix, z2: &SampleMatrix, y: &SampleMatrix, omega: f64) -> Result<f64> {
    Ok(disentanglement_loss_grad(z1, z2, y, omega)?.value)
}

/// Mean normalized HSIC over all unordered column pairs of `Z2`, with its
/// gradient. Pairs involving a constant column contribute 0.
pub fn redundancy_loss_grad(z2: &SampleMatrix) -> Result<(f64, Array2<f64>)> {
    let m = z2.p();
    if m < 2 {
        return Err(Error::invalid(format!("redundancy loss needs at least 2 columns, got {m}")));
    }
    let grams = column_grams(z2, "Z2");
    let pairs = (m * (m - 1) / 2) as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros((z2.n(), m));
    for i in 0..m {
        for j in (i + 1)..m {
            if let (Some(gi), Some(gj)) = (&grams[i], &grams[j]) {
                let (v, di, dj) = nhsic_with_grads(gi, gj, true);
                value += v / pairs;
                grad.column_mut(i).scaled_add(1.0 / pairs, &di.column(0));
                grad.column_mut(j).scaled_add(1.0 / pairs, &dj.expect("requested").column(0));
            }
        }
    }
    Ok((value, grad))
}

pub fn redundancy_loss(z2: &SampleMatrix) -> Result<f64> {
    Ok(redundancy_loss_grad(z2)?.0)
}
