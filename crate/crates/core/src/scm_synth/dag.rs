use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

/// Name of the label node.
pub const LABEL: &str = "Y";

/// Structural equation family of a node; each evaluates
/// `intercept + Σ coefficient · parent + noise_scale · ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// Squashed through a sigmoid into `(0, 1)`.
    Logistic,
    /// Used as is.
    Gaussian,
    /// Sigmoid of the linear part without noise, then a Bernoulli draw.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagNode {
    pub name: String,
    pub kind: NodeKind,
    pub intercept: f64,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagEdge {
    pub source: String,
    pub target: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DagRecord {
    nodes: Vec<DagNode>,
    edges: Vec<DagEdge>,
}

/// A validated acyclic structural causal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DagRecord", into = "DagRecord")]
pub struct GroundTruthDag {
    nodes: Vec<DagNode>,
    edges: Vec<DagEdge>,
    order: Vec<usize>,
    /// `(source index, coefficient)` per node.
    parents: Vec<Vec<(usize, f64)>>,
}

impl TryFrom<DagRecord> for GroundTruthDag {
    type Error = Error;

    fn try_from(r: DagRecord) -> Result<Self> {
        Self::new(r.nodes, r.edges)
    }
}

impl From<GroundTruthDag> for DagRecord {
    fn from(d: GroundTruthDag) -> Self {
        Self { nodes: d.nodes, edges: d.edges }
    }
}

fn node(name: &str, kind: NodeKind, intercept: f64, noise_scale: f64) -> DagNode {
    DagNode { name: name.into(), kind, intercept, noise_scale }
}

fn edge(source: &str, target: &str, coefficient: f64) -> DagEdge {
    DagEdge { source: source.into(), target: target.into(), coefficient }
}

impl GroundTruthDag {
    pub fn new(nodes: Vec<DagNode>, edges: Vec<DagEdge>) -> Result<Self> {
        let d = nodes.len();
        let index = |name: &str| {
            nodes
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| Error::invalid(format!("edge references unknown node `{name}`")))
        };
        for (i, n) in nodes.iter().enumerate() {
            if nodes[..i].iter().any(|m| m.name == n.name) {
                return Err(Error::invalid(format!("duplicate node `{}`", n.name)));
            }
            if !(n.noise_scale >= 0.0 && n.noise_scale.is_finite() && n.intercept.is_finite()) {
                return Err(Error::invalid(format!("node `{}` has an invalid noise scale or intercept", n.name)));
            }
        }
        let mut parents = vec![Vec::new(); d];
        for e in &edges {
            let (s, t) = (index(&e.source)?, index(&e.target)?);
            if s == t {
                return Err(Error::invalid(format!("self-loop on `{}`", e.source)));
            }
            if e.source == LABEL {
                return Err(Error::invalid("the label node may not have outgoing edges"));
            }
            if parents[t].iter().any(|&(p, _)| p == s) {
                return Err(Error::invalid(format!("duplicate edge {} -> {}", e.source, e.target)));
            }
            parents[t].push((s, e.coefficient));
        }
        // Kahn's algorithm, always taking the lowest-index ready node.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut done = vec![false; d];
        let mut order = Vec::with_capacity(d);
        while let Some(next) = (0..d).find(|&i| !done[i] && indegree[i] == 0) {
            done[next] = true;
            order.push(next);
            for (t, ps) in parents.iter().enumerate() {
                if ps.iter().any(|&(p, _)| p == next) {
                    indegree[t] -= 1;
                }
            }
        }
        if order.len() != d {
            return Err(Error::invalid("graph contains a cycle"));
        }
        Ok(Self { nodes, edges, order, parents })
    }

    /// rim → cup, rim → Y, cup → Y, vessel → Y, with rim as thickness
    /// (thinning raises the cup ratio and the label odds).
    pub fn fundus() -> Self {
        Self::new(
            vec![
                node("rim", NodeKind::Logistic, 0.0, 1.5),
                node("cup", NodeKind::Logistic, 2.0, 1.0),
                node("vessel", NodeKind::Logistic, 0.0, 1.5),
                node(LABEL, NodeKind::Bernoulli, -6.0, 0.0),
            ],
            vec![edge("rim", "cup", -4.0), edge("rim", LABEL, -16.0), edge("cup", LABEL, 16.0), edge("vessel", LABEL, 12.0)],
        )
        .expect("built-in graph is valid")
    }

    /// Same topology as [`GroundTruthDag::fundus`] with linear-Gaussian
    /// equations and unit noise everywhere.
    pub fn linear_benchmark() -> Self {
        Self::new(
            vec![
                node("rim", NodeKind::Gaussian, 0.0, 1.0),
                node("cup", NodeKind::Gaussian, 0.0, 1.0),
                node("vessel", NodeKind::Gaussian, 0.0, 1.0),
                node(LABEL, NodeKind::Gaussian, 0.0, 1.0),
            ],
            vec![edge("rim", "cup", -1.0), edge("rim", LABEL, -0.8), edge("cup", LABEL, 1.0), edge("vessel", LABEL, 1.2)],
        )
        .expect("built-in graph is valid")
    }

    pub fn nodes(&self) -> &[DagNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[DagEdge] {
        &self.edges
    }

    pub fn d(&self) -> usize {
        self.nodes.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Binary adjacency in node order, row = source.
    pub fn adjacency(&self) -> Array2<u8> {
        let mut a = Array2::zeros((self.d(), self.d()));
        for (t, ps) in self.parents.iter().enumerate() {
            for &(s, _) in ps {
                a[[s, t]] = 1;
            }
        }
        a
    }

    fn linear_part(&self, i: usize, values: &[f64]) -> f64 {
        self.nodes[i].intercept + self.parents[i].iter().map(|&(p, c)| c * values[p]).sum::<f64>()
    }

    /// Draws one sample's node values in node order.
    pub(crate) fn sample_row<R: Rng>(&self, rng: &mut R, values: &mut [f64]) {
        for &i in &self.order {
            let n = &self.nodes[i];
            let lin = self.linear_part(i, values);
            values[i] = match n.kind {
                NodeKind::Gaussian => lin + n.noise_scale * rng.sample::<f64, _>(StandardNormal),
                NodeKind::Logistic => Activation::Sigmoid.apply(lin + n.noise_scale * rng.sample::<f64, _>(StandardNormal)),
                NodeKind::Bernoulli => {
                    let p = Activation::Sigmoid.apply(lin + n.noise_scale * rng.sample::<f64, _>(StandardNormal));
                    rng.random_bool(p) as u8 as f64
                }
            };
        }
    }

    /// Shifts the intercept of the Bernoulli node `name` so that its mean
    /// success probability over a fixed Monte-Carlo sample equals `target`.
    pub fn calibrate_prevalence(&mut self, name: &str, target: f64) -> Result<()> {
        let i = self.index_of(name).ok_or_else(|| Error::invalid(format!("no node `{name}`")))?;
        if self.nodes[i].kind != NodeKind::Bernoulli || !(target > 0.0 && target < 1.0) {
            return Err(Error::invalid("prevalence calibration needs a Bernoulli node and a target in (0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut probe = self.clone();
        probe.nodes[i].kind = NodeKind::Gaussian;
        probe.nodes[i].intercept = 0.0;
        let scale = self.nodes[i].noise_scale;
        probe.nodes[i].noise_scale = 0.0;
        let mut values = vec![0.0; self.d()];
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                probe.sample_row(&mut rng, &mut values);
                values[i] + scale * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let mean_p = |b: f64| draws.iter().map(|l| Activation::Sigmoid.apply(b + l)).sum::<f64>() / draws.len() as f64;
        let (mut lo, mut hi) = (-100.0, 100.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mean_p(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.nodes[i].intercept = 0.5 * (lo + hi);
        Ok(())
    }
}

/// Per-sample node values plus the nuisance appearance parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable {
    pub names: Vec<String>,
    /// `n × nodes`, node order.
    pub values: Array2<f64>,
    /// `n × 4`: brightness, tint, horizontal and vertical illumination slope.
    pub nuisance: Array2<f64>,
    pub seed: u64,
}

pub const NUISANCE_NAMES: [&str; 4] = ["brightness", "tint", "grad_x", "grad_y"];

impl FactorTable {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn column(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return Some(self.values.column(i));
        }
        NUISANCE_NAMES.iter().position(|n| *n == name).map(|i| self.nuisance.column(i))
    }

    pub fn labels(&self) -> Result<Vec<u8>> {
        let y = self.column(LABEL).ok_or_else(|| Error::invalid("factor table has no label column"))?;
        Ok(y.iter().map(|&v| (v >= 0.5) as u8).collect())
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            values: self.values.select(ndarray::Axis(0), rows),
            nuisance: self.nuisance.select(ndarray::Axis(0), rows),
            seed: self.seed,
        }
    }
}

/// Ancestral sampling of `n` rows; nuisance parameters are drawn after each
/// row's node values from the same stream.
pub fn sample_factors(n: usize, dag: &GroundTruthDag, seed: u64) -> Result<FactorTable> {
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dag.d();
    let mut values = Array2::zeros((n, d));
    let mut nuisance = Array2::zeros((n, NUISANCE_NAMES.len()));
    let mut row = vec![0.0; d];
    for r in 0..n {
        dag.sample_row(&mut rng, &mut row);
        values.row_mut(r).assign(&ArrayView1::from(&row));
        nuisance[[r, 0]] = rng.random_range(0.75..1.05);
        nuisance[[r, 1]] = rng.random_range(-1.0..1.0);
        nuisance[[r, 2]] = rng.random_range(-0.2..0.2);
        nuisance[[r, 3]] = rng.random_range(-0.2..0.2);
    }
    Ok(FactorTable { names: dag.names(), values, nuisance, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
        let cov: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn positive_edge_correlates() {
        let dag = GroundTruthDag::new(
            vec![node("rim", NodeKind::Logistic, 0.0, 1.0), node("cup", NodeKind::Logistic, -1.0, 0.5)],
            vec![edge("rim", "cup", 3.0)],
        )
        .unwrap();
        let t = sample_factors(2000, &dag, 1).unwrap();
        assert!(corr(t.column("rim").unwrap(), t.column("cup").unwrap()) > 0.3);
    }

    #[test]
    fn empty_graph_is_uncorrelated() {
        let dag = GroundTruthDag::new(
            ["rim", "cup", "vessel"].iter().map(|n| node(n, NodeKind::Logistic, 0.0, 1.0)).collect(),
            vec![],
        )
        .unwrap();
        let t = sample_factors(2000, &dag, 2).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!(corr(t.values.column(i), t.values.column(j)).abs() < 0.1);
            }
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let dag = GroundTruthDag::fundus();
        assert_eq!(sample_factors(50, &dag, 3).unwrap(), sample_factors(50, &dag, 3).unwrap());
        assert_ne!(sample_factors(50, &dag, 3).unwrap(), sample_factors(50, &dag, 4).unwrap());
    }

    #[test]
    fn factors_stay_in_range() {
        let t = sample_factors(500, &GroundTruthDag::fundus(), 5).unwrap();
        for name in ["rim", "cup", "vessel"] {
            assert!(t.column(name).unwrap().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(t.column(LABEL).unwrap().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn construction_rejects_bad_graphs() {
        let nodes = || vec![node("a", NodeKind::Gaussian, 0.0, 1.0), node("b", NodeKind::Gaussian, 0.0, 1.0)];
        assert!(GroundTruthDag::new(nodes(), vec![edge("a", "b", 1.0), edge("b", "a", 1.0)]).is_err());
        assert!(GroundTruthDag::new(nodes(), vec![edge("a", "c", 1.0)]).is_err());
        assert!(GroundTruthDag::new(nodes(), vec![edge("a", "a", 1.0)]).is_err());
        let with_label = vec![node("a", NodeKind::Gaussian, 0.0, 1.0), node(LABEL, NodeKind::Bernoulli, 0.0, 0.0)];
        assert!(GroundTruthDag::new(with_label, vec![edge(LABEL, "a", 1.0)]).is_err());
    }

    #[test]
    fn default_graph_shape() {
        let dag = GroundTruthDag::fundus();
        let a = dag.adjacency();
        let expected = ndarray::array![[0, 1, 0, 1], [0, 0, 0, 1], [0, 0, 0, 1], [0, 0, 0, 0]];
        assert_eq!(a, expected);
        let json = serde_json::to_string(&dag).unwrap();
        assert_eq!(serde_json::from_str::<GroundTruthDag>(&json).unwrap(), dag);
        assert!(serde_json::from_str::<GroundTruthDag>(&json.replace("\"target\":\"cup\"", "\"target\":\"rim\"")).is_err());
    }

    #[test]
    fn prevalence_calibration_hits_target() {
        let mut dag = GroundTruthDag::fundus();
        dag.calibrate_prevalence(LABEL, 0.3).unwrap();
        let t = sample_factors(4000, &dag, 9).unwrap();
        let prev = t.labels().unwrap().iter().map(|&v| v as f64).sum::<f64>() / 4000.0;
        assert!((prev - 0.3).abs() < 0.03, "prevalence {prev}");
    }
}
