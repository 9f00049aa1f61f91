//! Persistent homology of directed flag complexes.
//!
//! A weighted digraph is filtered by admitting edges in ascending weight
//! order. Directed 3-cliques `(a, b, c)` (edges `a→b`, `a→c`, `b→c`) enter
//! once their last edge does. Homology in dimensions 0 and 1 only depends on
//! this 2-skeleton, so higher cliques are never built.
//!
//! Coefficients are in GF(2). Bars of length zero are dropped.

use std::collections::HashMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrnet::{DatedGraph, WeightedDigraph};

/// A directed clique with at most three vertices, in clique order.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    pub vertices: Vec<usize>,
    pub value: f64,
}

impl Simplex {
    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }
}

/// Simplices sorted by `(value, dimension, vertex tuple)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    simplices: Vec<Simplex>,
}

impl Filtration {
    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn count_dim(&self, dim: usize) -> usize {
        self.simplices.iter().filter(|s| s.dim() == dim).count()
    }

    pub fn max_value(&self) -> f64 {
        self.simplices.iter().map(|s| s.value).fold(0.0, f64::max)
    }
}

pub fn build_filtration(g: &WeightedDigraph) -> Filtration {
    let n = g.n_vertices();
    let mut out: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];
    for e in g.edges() {
        out[e.source].insert(e.target, e.weight);
    }

    let mut simplices: Vec<Simplex> = (0..n)
        .map(|v| Simplex {
            vertices: vec![v],
            value: 0.0,
        })
        .collect();
    for e in g.edges() {
        simplices.push(Simplex {
            vertices: vec![e.source, e.target],
            value: e.weight,
        });
    }
    for a in 0..n {
        for (&b, &w_ab) in &out[a] {
            for (&c, &w_ac) in &out[a] {
                if let Some(&w_bc) = out[b].get(&c) {
                    simplices.push(Simplex {
                        vertices: vec![a, b, c],
                        value: w_ab.max(w_ac).max(w_bc),
                    });
                }
            }
        }
    }
    simplices.sort_by(|x, y| {
        x.value
            .total_cmp(&y.value)
            .then(x.vertices.len().cmp(&y.vertices.len()))
            .then_with(|| x.vertices.cmp(&y.vertices))
    });
    Filtration { simplices }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub birth: f64,
    pub death: f64,
    pub dim: usize,
}

impl Bar {
    pub fn length(&self) -> f64 {
        self.death - self.birth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssentialBar {
    pub birth: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub finite_bars: Vec<Bar>,
    pub essential_bars: Vec<EssentialBar>,
    /// Largest filtration value, used when essential bars are capped.
    pub max_value: f64,
}

impl PersistenceDiagram {
    pub fn finite(&self, dim: usize) -> impl Iterator<Item = &Bar> {
        self.finite_bars.iter().filter(move |b| b.dim == dim)
    }

    pub fn essential(&self, dim: usize) -> impl Iterator<Item = &EssentialBar> {
        self.essential_bars.iter().filter(move |b| b.dim == dim)
    }
}

/// Column of the boundary matrix as ascending row indices.
type Column = Vec<usize>;

/// Symmetric difference of two ascending index lists.
fn add_columns(a: &[usize], b: &[usize]) -> Column {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn boundary_columns(f: &Filtration) -> Vec<Column> {
    let index: HashMap<&[usize], usize> = f
        .simplices
        .iter()
        .enumerate()
        .map(|(i, s)| (s.vertices.as_slice(), i))
        .collect();
    f.simplices
        .iter()
        .map(|s| {
            let v = &s.vertices;
            let mut col: Column = (0..v.len())
                .filter(|_| v.len() > 1)
                .map(|skip| {
                    let face: Vec<usize> = v
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != skip)
                        .map(|(_, &x)| x)
                        .collect();
                    *index
                        .get(face.as_slice())
                        .expect("faces of a directed clique are in the filtration")
                })
                .collect();
            col.sort_unstable();
            col
        })
        .collect()
}

/// Standard column reduction over GF(2), processing dimension 2 before
/// dimension 1 so that columns of positive edges are cleared without work.
pub fn persistent_homology(f: &Filtration) -> PersistenceDiagram {
    let n = f.simplices.len();
    let mut columns = boundary_columns(f);
    // pivot row -> column that owns it
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut cleared = vec![false; n];

    for dim in [2usize, 1] {
        for j in 0..n {
            if f.simplices[j].dim() != dim || cleared[j] {
                continue;
            }
            let mut col = std::mem::take(&mut columns[j]);
            while let Some(&low) = col.last() {
                match owner[low] {
                    Some(k) => col = add_columns(&col, &columns[k]),
                    None => break,
                }
            }
            if let Some(&low) = col.last() {
                owner[low] = Some(j);
                cleared[low] = true;
            }
            columns[j] = col;
        }
    }

    let mut diagram = PersistenceDiagram {
        max_value: f.max_value(),
        ..Default::default()
    };
    for (i, s) in f.simplices.iter().enumerate() {
        if s.dim() > 1 {
            continue;
        }
        let negative = s.dim() > 0 && !cleared[i] && !columns[i].is_empty();
        if negative {
            continue;
        }
        match owner[i] {
            Some(j) => {
                let death = f.simplices[j].value;
                if death > s.value {
                    diagram.finite_bars.push(Bar {
                        birth: s.value,
                        death,
                        dim: s.dim(),
                    });
                }
            }
            None => diagram.essential_bars.push(EssentialBar {
                birth: s.value,
                dim: s.dim(),
            }),
        }
    }
    diagram
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

impl std::str::FromStr for Norm {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            other => Err(crate::Error::InvalidArgument(format!("unknown norm `{other}`"))),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

/// Treatment of never-dying classes when computing norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EssentialPolicy {
    /// Essential bars contribute nothing.
    #[default]
    Drop,
    /// Essential bars die at the largest filtration value.
    Cap,
}

impl std::str::FromStr for EssentialPolicy {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "drop" => Ok(Self::Drop),
            "cap" => Ok(Self::Cap),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown essential policy `{other}`"
            ))),
        }
    }
}

pub fn diagram_norm(d: &PersistenceDiagram, norm: Norm, dim: usize) -> f64 {
    diagram_norm_with(d, norm, dim, EssentialPolicy::Drop)
}

pub fn diagram_norm_with(
    d: &PersistenceDiagram,
    norm: Norm,
    dim: usize,
    policy: EssentialPolicy,
) -> f64 {
    let capped = d
        .essential(dim)
        .filter(|_| policy == EssentialPolicy::Cap)
        .map(|b| d.max_value - b.birth);
    let lengths = d.finite(dim).map(Bar::length).chain(capped);
    match norm {
        Norm::L1 => lengths.sum(),
        Norm::L2 => lengths.map(|l| l * l).sum::<f64>().sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdaFeature {
    pub as_of: NaiveDate,
    pub l1_h0: f64,
    pub l2_h0: f64,
    pub l1_h1: f64,
    pub l2_h1: f64,
}

impl TdaFeature {
    pub const COLUMNS: [&'static str; 4] = ["l1_h0", "l2_h0", "l1_h1", "l2_h1"];

    pub fn values(&self) -> [f64; 4] {
        [self.l1_h0, self.l2_h0, self.l1_h1, self.l2_h1]
    }
}

pub fn graph_feature(g: &DatedGraph, policy: EssentialPolicy) -> TdaFeature {
    let d = persistent_homology(&build_filtration(&g.graph));
    TdaFeature {
        as_of: g.as_of,
        l1_h0: diagram_norm_with(&d, Norm::L1, 0, policy),
        l2_h0: diagram_norm_with(&d, Norm::L2, 0, policy),
        l1_h1: diagram_norm_with(&d, Norm::L1, 1, policy),
        l2_h1: diagram_norm_with(&d, Norm::L2, 1, policy),
    }
}

pub fn tda_features(graphs: &[DatedGraph], policy: EssentialPolicy) -> Vec<TdaFeature> {
    graphs.par_iter().map(|g| graph_feature(g, policy)).collect()
}
