//! Unsupervised anomaly scores over sequences of feature vectors.
//!
//! Both detectors score the whole series in-sample: every vector is
//! compared against the distribution of all vectors, including itself.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::table::DatedTable;

/// Relative ridge added to the covariance diagonal, scaled by `trace / d`.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Offset, relative to the data diameter, that keeps the local reachability
/// density finite on duplicates without breaking scale invariance.
const LRD_EPS: f64 = 1e-10;

/// Per-date anomaly scores; higher means more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySeries {
    pub dates: Vec<NaiveDate>,
    pub scores: Vec<f64>,
    pub method: String,
}

impl AnomalySeries {
    pub fn new(dates: Vec<NaiveDate>, scores: Vec<f64>, method: impl Into<String>) -> Result<Self> {
        if dates.len() != scores.len() {
            return Err(Error::shape(
                "AnomalySeries::new",
                format!("{} dates vs {} scores", dates.len(), scores.len()),
            ));
        }
        if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite score {} on {}",
                scores[bad], dates[bad]
            )));
        }
        Ok(Self {
            dates,
            scores,
            method: method.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn to_table(&self) -> DatedTable {
        DatedTable {
            dates: self.dates.clone(),
            columns: vec!["score".into()],
            rows: self.scores.iter().map(|&s| vec![s]).collect(),
        }
    }

    pub fn from_table(table: &DatedTable, method: impl Into<String>) -> Result<Self> {
        let col = table
            .columns
            .iter()
            .position(|c| c == "score")
            .ok_or_else(|| Error::Header {
                column: 1,
                reason: "missing `score` column".into(),
            })?;
        Self::new(
            table.dates.clone(),
            table.rows.iter().map(|r| r[col]).collect(),
            method,
        )
    }
}

fn check_matrix(vectors: &[FeatureVector], op: &'static str) -> Result<usize> {
    let d = vectors.first().map_or(0, |v| v.values.len());
    if vectors.iter().any(|v| v.values.len() != d) {
        return Err(Error::shape(op, "vectors of unequal length"));
    }
    if d == 0 {
        return Err(Error::InvalidArgument(format!("{op}: feature dimension is 0")));
    }
    Ok(d)
}

pub fn mahalanobis_scores(vectors: &[FeatureVector]) -> Result<AnomalySeries> {
    mahalanobis_scores_with_ridge(vectors, DEFAULT_RIDGE)
}

/// Mahalanobis distance of every vector to the sample mean, using the
/// sample covariance plus `eps · trace/d · I`.
pub fn mahalanobis_scores_with_ridge(vectors: &[FeatureVector], eps: f64) -> Result<AnomalySeries> {
    let d = check_matrix(vectors, "mahalanobis_scores")?;
    let t = vectors.len();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "mahalanobis_scores needs at least 2 vectors, got {t}"
        )));
    }
    let data = DMatrix::from_fn(d, t, |r, c| vectors[c].values[r]);
    let mean = data.column_mean();
    let mut centred = data;
    for mut col in centred.column_iter_mut() {
        col -= &mean;
    }
    let mut cov = (&centred * centred.transpose()) / (t - 1) as f64;
    let trace = cov.trace();
    let dates = vectors.iter().map(|v| v.as_of).collect();
    if trace == 0.0 {
        return AnomalySeries::new(dates, vec![0.0; t], "mahalanobis");
    }
    let ridge = eps * trace / d as f64;
    for k in 0..d {
        cov[(k, k)] += ridge;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?;
    let whitened = chol
        .l()
        .solve_lower_triangular(&centred)
        .ok_or_else(|| Error::InvalidArgument("singular covariance factor".into()))?;
    let scores = whitened.column_iter().map(|c| c.norm()).collect();
    AnomalySeries::new(dates, scores, "mahalanobis")
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Local Outlier Factor with neighbourhoods that include every point tied
/// at the k-distance.
pub fn lof_scores(vectors: &[FeatureVector], k: usize) -> Result<AnomalySeries> {
    check_matrix(vectors, "lof_scores")?;
    let t = vectors.len();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "lof_scores needs at least 2 vectors, got {t}"
        )));
    }
    if k == 0 || k >= t {
        return Err(Error::InvalidArgument(format!(
            "neighbour count {k} outside [1, {})",
            t
        )));
    }

    // For each point: (neighbour indices, distances) sorted by distance.
    let neighbourhoods: Vec<(f64, Vec<(usize, f64)>)> = (0..t)
        .into_par_iter()
        .map(|a| {
            let mut dists: Vec<(usize, f64)> = (0..t)
                .filter(|&b| b != a)
                .map(|b| (b, euclidean(&vectors[a].values, &vectors[b].values)))
                .collect();
            dists.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            let k_dist = dists[k - 1].1;
            let cut = dists.partition_point(|&(_, dist)| dist <= k_dist);
            dists.truncate(cut);
            (k_dist, dists)
        })
        .collect();
    let diameter = (0..t)
        .into_par_iter()
        .map(|a| (0..a).map(|b| euclidean(&vectors[a].values, &vectors[b].values)).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    let dates = vectors.iter().map(|v| v.as_of).collect();
    if diameter == 0.0 {
        return AnomalySeries::new(dates, vec![1.0; t], format!("lof-{k}"));
    }

    let lrd: Vec<f64> = neighbourhoods
        .iter()
        .map(|(_, nb)| {
            let reach: f64 = nb
                .iter()
                .map(|&(b, dist)| neighbourhoods[b].0.max(dist))
                .sum::<f64>()
                / nb.len() as f64;
            1.0 / (reach + LRD_EPS * diameter)
        })
        .collect();

    let scores = neighbourhoods
        .iter()
        .enumerate()
        .map(|(a, (_, nb))| nb.iter().map(|&(b, _)| lrd[b]).sum::<f64>() / nb.len() as f64 / lrd[a])
        .collect();
    AnomalySeries::new(dates, scores, format!("lof-{k}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(rows: &[Vec<f64>]) -> Vec<FeatureVector> {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        rows.iter()
            .enumerate()
            .map(|(k, r)| FeatureVector {
                as_of: start + chrono::Days::new(k as u64),
                values: r.clone(),
            })
            .collect()
    }

    #[test]
    fn mahalanobis_at_mean_is_zero() {
        let v = vecs(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0], vec![0.0, 0.0]]);
        let s = mahalanobis_scores(&v).unwrap();
        assert!(s.scores[4].abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_identity_covariance_is_euclidean() {
        // Columns centred with sample covariance I: ±sqrt(3/2) on each axis
        // over four points gives Σ = diag(3/2·2/3) = I.
        let a = (1.5f64).sqrt();
        let v = vecs(&[vec![a, 0.0], vec![-a, 0.0], vec![0.0, a], vec![0.0, -a]]);
        let s = mahalanobis_scores_with_ridge(&v, 0.0).unwrap();
        for (score, row) in s.scores.iter().zip(&v) {
            let euclid = row.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((score - euclid).abs() < 1e-6);
        }
        let s = mahalanobis_scores(&v).unwrap();
        for (score, row) in s.scores.iter().zip(&v) {
            let euclid = row.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((score - euclid).abs() < 1e-6);
        }
    }

    #[test]
    fn mahalanobis_single_outlier_is_largest() {
        let v = vecs(&[vec![0.0], vec![0.0], vec![0.0], vec![0.0], vec![10.0]]);
        let s = mahalanobis_scores(&v).unwrap();
        // mean 2, variance 20: outlier 8/sqrt(20), others 2/sqrt(20).
        assert!((s.scores[4] - 8.0 / 20f64.sqrt()).abs() < 1e-5);
        assert!(s.scores[..4].iter().all(|&x| x < s.scores[4]));
    }

    #[test]
    fn mahalanobis_errors() {
        assert!(mahalanobis_scores(&vecs(&[vec![], vec![]])).is_err());
        assert!(mahalanobis_scores(&vecs(&[vec![1.0]])).is_err());
        let same = mahalanobis_scores(&vecs(&vec![vec![1.0, 2.0]; 4])).unwrap();
        assert_eq!(same.scores, vec![0.0; 4]);
    }

    fn grid(extra: Option<Vec<f64>>) -> Vec<FeatureVector> {
        let mut rows: Vec<Vec<f64>> = (0..10)
            .flat_map(|i| (0..10).map(move |j| vec![i as f64, j as f64]))
            .collect();
        rows.extend(extra);
        vecs(&rows)
    }

    #[test]
    fn lof_uniform_grid_interior_is_inlier() {
        let s = lof_scores(&grid(None), 5).unwrap();
        for i in 2..8 {
            for j in 2..8 {
                let v = s.scores[i * 10 + j];
                assert!((0.9..=1.1).contains(&v), "({i},{j}) -> {v}");
            }
        }
    }

    #[test]
    fn lof_far_point_is_outlier() {
        let s = lof_scores(&grid(Some(vec![4.5, 19.0])), 5).unwrap();
        assert!(s.scores[100] > 1.5, "{}", s.scores[100]);
    }

    #[test]
    fn lof_identical_points_score_one() {
        let s = lof_scores(&vecs(&vec![vec![3.0, 3.0]; 6]), 3).unwrap();
        assert!(s.scores.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn lof_ties_enlarge_neighbourhood() {
        // Point 0 has two neighbours at distance 1 with k = 1.
        let v = vecs(&[vec![0.0], vec![1.0], vec![-1.0], vec![5.0]]);
        let s = lof_scores(&v, 1).unwrap();
        assert!(s.scores.iter().all(|x| x.is_finite()));
        assert!(s.scores[3] > s.scores[0]);
    }

    #[test]
    fn lof_errors() {
        let v = vecs(&[vec![0.0], vec![1.0], vec![2.0]]);
        assert!(lof_scores(&v, 0).is_err());
        assert!(lof_scores(&v, 3).is_err());
        assert!(lof_scores(&v[..1], 1).is_err());
    }

    #[test]
    fn score_table_roundtrip() {
        let s = AnomalySeries::new(
            vec![NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()],
            vec![0.25],
            "x",
        )
        .unwrap();
        assert_eq!(AnomalySeries::from_table(&s.to_table(), "x").unwrap(), s);
        assert!(AnomalySeries::new(s.dates.clone(), vec![f64::NAN], "x").is_err());
    }
}
