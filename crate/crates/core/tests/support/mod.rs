//! Independent reference implementations used as test oracles.
//!
//! Everything here is written from the definitions, deliberately slow and
//! without sharing code with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::NaiveDate;
use flagcrash_core::corrnet::WeightedDigraph;
use flagcrash_core::features::FeatureVector;
use flagcrash_core::gnn::GineModel;
use nalgebra::DMatrix;
use rand::Rng;

pub fn day(k: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap() + chrono::Days::new(k as u64)
}

pub fn vectors(rows: &[Vec<f64>]) -> Vec<FeatureVector> {
    rows.iter()
        .enumerate()
        .map(|(k, r)| FeatureVector {
            as_of: day(k),
            values: r.clone(),
        })
        .collect()
}

/// Random digraph; with `grid` set, weights come from `{0.1, …, 0.5}` so
/// that ties are common.
pub fn random_digraph(rng: &mut impl Rng, n: usize, p: f64, grid: bool) -> WeightedDigraph {
    let mut edges = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s != t && rng.random_bool(p) {
                let w = if grid {
                    rng.random_range(1..=5) as f64 / 10.0
                } else {
                    rng.random_range(0.01..1.0)
                };
                edges.push((s, t, w));
            }
        }
    }
    WeightedDigraph::from_triples(n, &edges).unwrap()
}

// ---------------------------------------------------------------------------
// Persistent homology by ranks

/// Rank over GF(2) of the rows given as bitsets.
fn rank_gf2(mut rows: Vec<Vec<u64>>) -> usize {
    let width = rows.first().map_or(0, |r| r.len() * 64);
    let mut rank = 0;
    for bit in 0..width {
        let (w, b) = (bit / 64, 1u64 << (bit % 64));
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][w] & b != 0) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[w] & b != 0 {
                for (x, y) in row.iter_mut().zip(&pivot) {
                    *x ^= y;
                }
            }
        }
        rank += 1;
    }
    rank
}

struct Complex {
    /// (vertices, value) per dimension 0, 1, 2.
    cells: [Vec<(Vec<usize>, f64)>; 3],
}

fn flag_complex(g: &WeightedDigraph) -> Complex {
    let n = g.n_vertices();
    let mut w = vec![vec![None; n]; n];
    for e in g.edges() {
        w[e.source][e.target] = Some(e.weight);
    }
    let vertices = (0..n).map(|v| (vec![v], 0.0)).collect();
    let edges = g.edges().iter().map(|e| (vec![e.source, e.target], e.weight)).collect();
    let mut triangles = Vec::new();
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                if let (Some(x), Some(y), Some(z)) = (w[a][b], w[a][c], w[b][c]) {
                    triangles.push((vec![a, b, c], x.max(y).max(z)));
                }
            }
        }
    }
    Complex {
        cells: [vertices, edges, triangles],
    }
}

/// Rank of the boundary map from dimension `k` cells with value ≤ `col_cut`
/// into dimension `k−1` cells, keeping only rows whose value exceeds
/// `row_floor` (all rows when `None`).
fn boundary_rank(c: &Complex, k: usize, col_cut: f64, row_floor: Option<f64>) -> usize {
    if k == 0 {
        return 0;
    }
    let faces = &c.cells[k - 1];
    let index: BTreeMap<&Vec<usize>, usize> = faces.iter().enumerate().map(|(i, (v, _))| (v, i)).collect();
    let words = faces.len().div_ceil(64).max(1);
    let rows: Vec<Vec<u64>> = c.cells[k]
        .iter()
        .filter(|(_, v)| *v <= col_cut)
        .map(|(verts, _)| {
            let mut bits = vec![0u64; words];
            for drop in 0..verts.len() {
                let face: Vec<usize> = verts.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, &x)| x).collect();
                let i = index[&face];
                if row_floor.is_none_or(|f| faces[i].1 > f) {
                    bits[i / 64] ^= 1 << (i % 64);
                }
            }
            bits
        })
        .collect();
    rank_gf2(rows)
}

/// Dimension of the image of `H_k(K_a) → H_k(K_b)` where `K_x` holds the
/// cells with value ≤ x and `a ≤ b`.
fn persistent_betti(c: &Complex, k: usize, a: f64, b: f64) -> i64 {
    let n_k = c.cells[k].iter().filter(|(_, v)| *v <= a).count() as i64;
    let cycles = n_k - boundary_rank(c, k, a, None) as i64;
    let bounds = boundary_rank(c, k + 1, b, None) as i64;
    let outside = boundary_rank(c, k + 1, b, Some(a)) as i64;
    cycles - (bounds - outside)
}

/// Finite bars `(birth, death, dim)` and essential bars `(birth, dim)`.
pub type Bars = (Vec<(f64, f64, usize)>, Vec<(f64, usize)>);

/// Bars in dimensions 0 and 1 by inclusion–exclusion over persistent Betti
/// numbers. Finite bars are `(birth, death, dim)`; essential are `(birth, dim)`.
pub fn ph_oracle(g: &WeightedDigraph) -> Bars {
    let c = flag_complex(g);
    let mut levels: Vec<f64> = c.cells.iter().flatten().map(|(_, v)| *v).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let m = levels.len();
    // beta[k][i][j] for level indices i ≤ j; index 0 is the empty complex.
    let mut table = vec![vec![vec![0i64; m + 1]; m + 1]; 2];
    for (k, rows) in table.iter_mut().enumerate() {
        for i in 1..=m {
            for j in i..=m {
                rows[i][j] = persistent_betti(&c, k, levels[i - 1], levels[j - 1]);
            }
        }
    }
    let beta = |k: usize, i: usize, j: usize| table[k][i][j];
    let mut finite = Vec::new();
    let mut essential = Vec::new();
    for k in 0..2 {
        for i in 1..=m {
            for j in i + 1..=m {
                let mu = beta(k, i, j - 1) - beta(k, i, j) - beta(k, i - 1, j - 1) + beta(k, i - 1, j);
                assert!(mu >= 0, "negative multiplicity");
                for _ in 0..mu {
                    finite.push((levels[i - 1], levels[j - 1], k));
                }
            }
            let mu = beta(k, i, m) - beta(k, i - 1, m);
            for _ in 0..mu {
                essential.push((levels[i - 1], k));
            }
        }
    }
    (finite, essential)
}

// ---------------------------------------------------------------------------
// H0 by union–find

/// Weights at which components merge when edges enter in ascending order.
pub fn h0_deaths_union_find(g: &WeightedDigraph) -> Vec<f64> {
    let n = g.n_vertices();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    let mut edges: Vec<_> = g.edges().to_vec();
    edges.sort_by(|a, b| a.weight.total_cmp(&b.weight));
    let mut deaths = Vec::new();
    for e in edges {
        let (a, b) = (find(&mut parent, e.source), find(&mut parent, e.target));
        if a != b {
            parent[a] = b;
            deaths.push(e.weight);
        }
    }
    deaths
}

// ---------------------------------------------------------------------------
// Detectors

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// LOF straight from its definition: N_k(p) holds every point within the
/// k-distance of p, reach-dist_k(p, o) = max(k-dist(o), d(p, o)), and the
/// density offset is 1e-10 of the data diameter.
pub fn lof_reference(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let t = points.len();
    let k_dist = |p: usize| {
        let mut d: Vec<f64> = (0..t).filter(|&o| o != p).map(|o| dist(&points[p], &points[o])).collect();
        d.sort_by(f64::total_cmp);
        d[k - 1]
    };
    let kd: Vec<f64> = (0..t).map(k_dist).collect();
    let hood = |p: usize| -> Vec<usize> {
        (0..t).filter(|&o| o != p && dist(&points[p], &points[o]) <= kd[p]).collect()
    };
    let diameter = (0..t)
        .flat_map(|a| (0..t).map(move |b| (a, b)))
        .map(|(a, b)| dist(&points[a], &points[b]))
        .fold(0.0, f64::max);
    if diameter == 0.0 {
        return vec![1.0; t];
    }
    let lrd: Vec<f64> = (0..t)
        .map(|p| {
            let nb = hood(p);
            let mean = nb.iter().map(|&o| kd[o].max(dist(&points[p], &points[o]))).sum::<f64>() / nb.len() as f64;
            1.0 / (mean + 1e-10 * diameter)
        })
        .collect();
    (0..t)
        .map(|p| {
            let nb = hood(p);
            nb.iter().map(|&o| lrd[o]).sum::<f64>() / nb.len() as f64 / lrd[p]
        })
        .collect()
}

/// Mahalanobis distance through an explicit covariance inverse.
pub fn mahalanobis_reference(points: &[Vec<f64>], eps: f64) -> Vec<f64> {
    let (t, d) = (points.len(), points[0].len());
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / t as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in points {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]) / (t - 1) as f64;
            }
        }
    }
    let ridge = eps * cov.trace() / d as f64;
    for a in 0..d {
        cov[(a, a)] += ridge;
    }
    let inv = cov.try_inverse().expect("invertible covariance");
    points
        .iter()
        .map(|p| {
            let x = DMatrix::from_fn(d, 1, |r, _| p[r] - mean[r]);
            (x.transpose() * &inv * &x)[(0, 0)].sqrt()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gradients

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientCheck {
    /// Largest relative error over the checked coordinates.
    pub worst: f64,
    pub checked: usize,
    /// Coordinates that needed a smaller step because a ReLU changes state
    /// within `h` of the evaluation point.
    pub refined: usize,
}

/// Compares `analytic` with central differences of `loss` over every model
/// parameter. Errors are relative to `max(|analytic|, |numeric|, floor)`.
/// A coordinate whose error exceeds `tol` at step `h` is retried at `h/10`
/// and `h/100`: a kink at distance δ spoils only steps larger than δ, while
/// a wrong analytic gradient fails at every step.
pub fn check_gradients(
    model: &GineModel,
    analytic: &[flagcrash_core::autodiff::Tensor],
    loss: impl Fn(&GineModel) -> f64,
    h: f64,
    floor: f64,
    tol: f64,
) -> GradientCheck {
    let mut out = GradientCheck::default();
    let error_at = |k: usize, i: usize, step: f64| {
        let mut plus = model.clone();
        plus.params_mut()[k].data_mut()[i] += step;
        let mut minus = model.clone();
        minus.params_mut()[k].data_mut()[i] -= step;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
        let a = analytic[k].data()[i];
        (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor)
    };
    for k in 0..model.params().len() {
        for i in 0..model.params()[k].data().len() {
            let mut err = error_at(k, i, h);
            if err >= tol {
                out.refined += 1;
                err = err.min(error_at(k, i, h / 10.0)).min(error_at(k, i, h / 100.0));
            }
            out.worst = out.worst.max(err);
            out.checked += 1;
        }
    }
    out
}
