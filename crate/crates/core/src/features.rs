//! Flattened correlation matrices and their PCA projections.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corrnet::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::table::DatedTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub as_of: NaiveDate,
    pub values: Vec<f64>,
}

/// Row-major flattening into an `N²`-vector.
pub fn flatten(c: &CorrelationMatrix) -> FeatureVector {
    FeatureVector {
        as_of: c.as_of,
        values: c.values.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d × D`, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    /// Nonincreasing variance along each component.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// `mean + componentsᵀ · coords`.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(coords) {
            for (o, &x) in out.iter_mut().zip(c) {
                *o += w * x;
            }
        }
        out
    }
}

/// Fits a `d`-component PCA by thin SVD of the centred data matrix.
///
/// Each component is signed so that its largest-magnitude entry is positive.
pub fn fit_pca(data: &[Vec<f64>], d: usize) -> Result<PcaModel> {
    let t = data.len();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 rows, got {t}"
        )));
    }
    let dim = data[0].len();
    if data.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("fit_pca", "ragged data rows"));
    }
    if d == 0 || d > t.min(dim) {
        return Err(Error::InvalidArgument(format!(
            "target dimension {d} outside [1, {}]",
            t.min(dim)
        )));
    }

    let mut mean = vec![0.0; dim];
    for row in data {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let centred = DMatrix::from_fn(t, dim, |r, c| data[r][c] - mean[c]);
    let svd = centred.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut components = Vec::with_capacity(d);
    let mut explained_variance = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let mut row: Vec<f64> = v_t.row(k).iter().copied().collect();
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            })
            .1;
        if pivot < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(row);
        let s = svd.singular_values[k];
        explained_variance.push(s * s / (t - 1) as f64);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

pub fn project(model: &PcaModel, v: &FeatureVector) -> Result<FeatureVector> {
    if v.values.len() != model.input_dim() {
        return Err(Error::shape(
            "project",
            format!("vector of {} vs model input {}", v.values.len(), model.input_dim()),
        ));
    }
    let centred: Vec<f64> = v.values.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
    let values = model
        .components
        .iter()
        .map(|c| c.iter().zip(&centred).map(|(a, b)| a * b).sum())
        .collect();
    Ok(FeatureVector {
        as_of: v.as_of,
        values,
    })
}

/// How flattened matrices are turned into detector inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PcaDim {
    /// Flattened matrix as-is.
    Raw,
    Reduced(usize),
}

impl std::str::FromStr for PcaDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("raw") {
            return Ok(PcaDim::Raw);
        }
        s.parse::<usize>()
            .map(PcaDim::Reduced)
            .map_err(|_| Error::InvalidArgument(format!("PCA dimension `{s}` is not raw or an integer")))
    }
}

impl std::fmt::Display for PcaDim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PcaDim::Raw => f.write_str("raw"),
            PcaDim::Reduced(d) => write!(f, "{d}"),
        }
    }
}

/// Flattens every matrix and, unless `dim` is raw, projects onto a PCA fit
/// over the whole series.
pub fn pca_features(matrices: &[CorrelationMatrix], dim: PcaDim) -> Result<Vec<FeatureVector>> {
    let flat: Vec<FeatureVector> = matrices.iter().map(flatten).collect();
    match dim {
        PcaDim::Raw => Ok(flat),
        PcaDim::Reduced(d) => {
            let data: Vec<Vec<f64>> = flat.iter().map(|f| f.values.clone()).collect();
            let model = fit_pca(&data, d)?;
            flat.iter().map(|f| project(&model, f)).collect()
        }
    }
}

pub fn features_to_table(features: &[FeatureVector], prefix: &str) -> Result<DatedTable> {
    let width = features.first().map_or(0, |f| f.values.len());
    DatedTable::new(
        features.iter().map(|f| f.as_of).collect(),
        (1..=width).map(|k| format!("{prefix}{k}")).collect(),
        features.iter().map(|f| f.values.clone()).collect(),
    )
}
