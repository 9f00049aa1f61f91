//! Sliding-window correlation networks.
//!
//! Each window of log returns yields an `N × N` matrix of either Pearson
//! correlations or convergent-cross-mapping (CCM) skills. Negative entries
//! are clamped to zero and the result is read as the adjacency matrix of a
//! weighted directed graph.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReturnMatrix;

pub const DEFAULT_WINDOW: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start: usize,
    pub width: usize,
}

impl WindowSpec {
    pub fn new(start: usize, width: usize) -> Self {
        Self { start, width }
    }

    fn validate(&self, n_rows: usize) -> Result<()> {
        if self.width < 3 {
            return Err(Error::InvalidArgument(format!(
                "window width {} < 3",
                self.width
            )));
        }
        if self.start + self.width > n_rows {
            return Err(Error::InvalidArgument(format!(
                "window [{}, {}) exceeds {} return rows",
                self.start,
                self.start + self.width,
                n_rows
            )));
        }
        Ok(())
    }

    /// Index of the last return row covered by the window.
    pub fn last(&self) -> usize {
        self.start + self.width - 1
    }
}

/// Delay-embedding parameters for CCM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcmParams {
    pub embedding_dim: usize,
    pub lag: usize,
}

impl Default for CcmParams {
    fn default() -> Self {
        Self {
            embedding_dim: 2,
            lag: 1,
        }
    }
}

impl CcmParams {
    fn span(&self) -> usize {
        (self.embedding_dim - 1) * self.lag
    }

    fn validate(&self, width: usize) -> Result<()> {
        if self.embedding_dim < 2 || self.lag < 1 {
            return Err(Error::InvalidArgument(format!(
                "CCM needs E >= 2 and tau >= 1, got E={} tau={}",
                self.embedding_dim, self.lag
            )));
        }
        if self.span() + 1 >= width {
            return Err(Error::InvalidArgument(format!(
                "window of {width} too short for embedding E={} tau={}",
                self.embedding_dim, self.lag
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrKind {
    Pearson,
    Ccm,
}

impl std::str::FromStr for CorrKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(CorrKind::Pearson),
            "ccm" => Ok(CorrKind::Ccm),
            other => Err(Error::InvalidArgument(format!(
                "unknown correlation kind `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for CorrKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorrKind::Pearson => "pearson",
            CorrKind::Ccm => "ccm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub n: usize,
    /// Row-major `n × n`.
    pub values: Vec<f64>,
    pub window: WindowSpec,
    pub as_of: NaiveDate,
    pub kind: CorrKind,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    /// Rebuilds the thresholded matrix a graph was derived from.
    pub fn from_digraph(
        g: &WeightedDigraph,
        kind: CorrKind,
        window: WindowSpec,
        as_of: NaiveDate,
    ) -> Self {
        let n = g.n_vertices();
        let mut values = vec![0.0; n * n];
        for e in g.edges() {
            values[e.source * n + e.target] = e.weight;
            if kind == CorrKind::Pearson {
                values[e.target * n + e.source] = e.weight;
            }
        }
        Self {
            n,
            values,
            window,
            as_of,
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// Directed graph with strictly positive edge weights, no self-loops and at
/// most one edge per ordered pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightedDigraph {
    n_vertices: usize,
    edges: Vec<Edge>,
}

impl WeightedDigraph {
    pub fn new(n_vertices: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for e in &edges {
            if e.source >= n_vertices || e.target >= n_vertices {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) out of range for {n_vertices} vertices",
                    e.source, e.target
                )));
            }
            if e.source == e.target {
                return Err(Error::InvalidArgument(format!("self-loop at {}", e.source)));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) has non-positive weight {}",
                    e.source, e.target, e.weight
                )));
            }
            if !seen.insert((e.source, e.target)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate edge ({}, {})",
                    e.source, e.target
                )));
            }
        }
        Ok(Self { n_vertices, edges })
    }

    /// Convenience constructor from `(source, target, weight)` triples.
    pub fn from_triples(n_vertices: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        Self::new(
            n_vertices,
            triples
                .iter()
                .map(|&(source, target, weight)| Edge {
                    source,
                    target,
                    weight,
                })
                .collect(),
        )
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Same graph with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.n_vertices,
            self.edges
                .iter()
                .map(|e| Edge {
                    weight: e.weight * factor,
                    ..*e
                })
                .collect(),
        )
    }
}

/// Graph tagged with the date of the last return in its window.
#[derive(Debug, Clone, PartialEq)]
pub struct DatedGraph {
    pub as_of: NaiveDate,
    pub graph: WeightedDigraph,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation; zero when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if r.is_finite() {
        r.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

fn window_slices(returns: &ReturnMatrix, window: WindowSpec) -> Vec<Vec<f64>> {
    (0..returns.n_series())
        .map(|i| returns.slice(i, window.start, window.width))
        .collect()
}

pub fn pearson_corr(returns: &ReturnMatrix, window: WindowSpec) -> Result<CorrelationMatrix> {
    window.validate(returns.n_rows())?;
    let n = returns.n_series();
    let slices = window_slices(returns, window);
    let mut m = CorrelationMatrix {
        n,
        values: vec![0.0; n * n],
        window,
        as_of: returns.dates[window.last()],
        kind: CorrKind::Pearson,
    };
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(&slices[i], &slices[j]);
            m.set(i, j, r);
            m.set(j, i, r);
        }
    }
    Ok(m)
}

/// Nearest-neighbour simplex weights on the shadow manifold of one series.
///
/// Built once per source series and reused to cross-map every target.
#[derive(Debug, Clone)]
pub struct ShadowManifold {
    /// Time index of the first shadow point.
    offset: usize,
    /// For each shadow point: `(time index, weight)` of its neighbours.
    neighbours: Vec<Vec<(usize, f64)>>,
}

impl ShadowManifold {
    pub fn new(x: &[f64], params: CcmParams) -> Result<Self> {
        params.validate(x.len())?;
        let offset = params.span();
        let points: Vec<Vec<f64>> = (offset..x.len())
            .map(|k| (0..params.embedding_dim).map(|e| x[k - e * params.lag]).collect())
            .collect();
        let n_neighbours = (params.embedding_dim + 1).min(points.len() - 1);

        let neighbours = points
            .iter()
            .enumerate()
            .map(|(a, pa)| {
                let mut dists: Vec<(f64, usize)> = points
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(b, pb)| {
                        let d2: f64 = pa.iter().zip(pb).map(|(u, v)| (u - v) * (u - v)).sum();
                        (d2.sqrt(), b)
                    })
                    .collect();
                dists.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
                dists.truncate(n_neighbours);
                let nearest = dists[0].0;
                let raw: Vec<f64> = if nearest == 0.0 {
                    dists
                        .iter()
                        .map(|&(d, _)| if d == 0.0 { 1.0 } else { 0.0 })
                        .collect()
                } else {
                    dists.iter().map(|&(d, _)| (-d / nearest).exp()).collect()
                };
                let total: f64 = raw.iter().sum();
                dists
                    .iter()
                    .zip(&raw)
                    .map(|(&(_, b), &u)| (b + offset, u / total))
                    .collect()
            })
            .collect();
        Ok(Self { offset, neighbours })
    }

    /// Correlation between `y` and its cross-mapped estimate.
    pub fn skill(&self, y: &[f64]) -> f64 {
        let predicted: Vec<f64> = self
            .neighbours
            .iter()
            .map(|nb| nb.iter().map(|&(t, u)| u * y[t]).sum())
            .collect();
        let r = pearson(&predicted, &y[self.offset..]);
        if r.is_finite() {
            r
        } else {
            0.0
        }
    }
}

/// Cross-map skill of estimating `y` from the shadow manifold of `x`.
pub fn ccm_skill(x: &[f64], y: &[f64], params: CcmParams) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "ccm_skill",
            format!("{} vs {}", x.len(), y.len()),
        ));
    }
    Ok(ShadowManifold::new(x, params)?.skill(y))
}

/// `values[i][j]` is the skill of cross-mapping series `j` from the shadow
/// manifold of series `i`.
pub fn ccm_corr(
    returns: &ReturnMatrix,
    window: WindowSpec,
    params: CcmParams,
) -> Result<CorrelationMatrix> {
    window.validate(returns.n_rows())?;
    params.validate(window.width)?;
    let n = returns.n_series();
    let slices = window_slices(returns, window);
    let mut m = CorrelationMatrix {
        n,
        values: vec![0.0; n * n],
        window,
        as_of: returns.dates[window.last()],
        kind: CorrKind::Ccm,
    };
    for (i, x) in slices.iter().enumerate() {
        let manifold = ShadowManifold::new(x, params)?;
        for (j, y) in slices.iter().enumerate() {
            if i != j {
                m.set(i, j, manifold.skill(y));
            }
        }
    }
    Ok(m)
}

pub fn threshold_nonnegative(c: &CorrelationMatrix) -> CorrelationMatrix {
    CorrelationMatrix {
        values: c.values.iter().map(|&v| v.max(0.0)).collect(),
        ..c.clone()
    }
}

pub fn to_digraph(c: &CorrelationMatrix) -> Result<WeightedDigraph> {
    if let Some(pos) = c.values.iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "matrix not thresholded: entry ({}, {}) = {}",
            pos / c.n,
            pos % c.n,
            c.values[pos]
        )));
    }
    let n = c.n;
    let mut edges = Vec::new();
    for i in 0..n {
        let targets = match c.kind {
            CorrKind::Ccm => 0..n,
            CorrKind::Pearson => i + 1..n,
        };
        for j in targets {
            let w = c.get(i, j);
            if i != j && w > 0.0 {
                edges.push(Edge {
                    source: i,
                    target: j,
                    weight: w,
                });
            }
        }
    }
    WeightedDigraph::new(n, edges)
}

/// Correlation-construction settings for a whole series of windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub window: usize,
    pub kind: CorrKind,
    pub ccm: CcmParams,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            kind: CorrKind::Ccm,
            ccm: CcmParams::default(),
        }
    }
}

pub fn window_matrix(
    returns: &ReturnMatrix,
    window: WindowSpec,
    params: &NetworkParams,
) -> Result<CorrelationMatrix> {
    let raw = match params.kind {
        CorrKind::Pearson => pearson_corr(returns, window)?,
        CorrKind::Ccm => ccm_corr(returns, window, params.ccm)?,
    };
    Ok(threshold_nonnegative(&raw))
}

/// Thresholded matrices for every full window, in date order.
pub fn correlation_series(
    returns: &ReturnMatrix,
    params: &NetworkParams,
) -> Result<Vec<CorrelationMatrix>> {
    if returns.n_rows() < params.window {
        return Err(Error::InvalidArgument(format!(
            "{} return rows is shorter than window {}",
            returns.n_rows(),
            params.window
        )));
    }
    (0..=returns.n_rows() - params.window)
        .into_par_iter()
        .map(|start| window_matrix(returns, WindowSpec::new(start, params.window), params))
        .collect()
}

/// One graph per full window, in date order.
pub fn graph_series(returns: &ReturnMatrix, params: &NetworkParams) -> Result<Vec<DatedGraph>> {
    correlation_series(returns, params)?
        .par_iter()
        .map(|c| {
            Ok(DatedGraph {
                as_of: c.as_of,
                graph: to_digraph(c)?,
            })
        })
        .collect()
}
