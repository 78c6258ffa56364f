use nalgebra::{DMatrix, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::MapperError;
use crate::geometry::Vec2;

pub const FEATURE_LEN: usize = 7;

/// `(1, u, v, uv, u^2, v^2, u^2 v^2)`
pub type PolyFeature = SVector<f64, FEATURE_LEN>;

/// Feature-to-output weights, one column per output coordinate.
pub type Weights = SMatrix<f64, FEATURE_LEN, 2>;

pub fn poly_features(p: &Vec2) -> PolyFeature {
    let (u, v) = (p.x, p.y);
    PolyFeature::from([1.0, u, v, u * v, u * u, v * v, u * u * v * v])
}

/// Affine map from eye-image pixels into `[-1, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilNormalizer {
    pub width: f64,
    pub height: f64,
}

impl PupilNormalizer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width: f64::from(width),
            height: f64::from(height),
        }
    }

    pub fn normalize(&self, px: &Vec2) -> Vec2 {
        Vec2::new(
            2.0 * px.x / self.width - 1.0,
            2.0 * px.y / self.height - 1.0,
        )
    }

    pub fn features(&self, px: &Vec2) -> PolyFeature {
        poly_features(&self.normalize(px))
    }
}

/// Least-squares weights for `features * w ~= targets`.
///
/// Fails when fewer than seven rows are given or the feature matrix is rank deficient.
pub(crate) fn solve_weights(
    features: &[PolyFeature],
    targets: &[Vec2],
) -> Result<Weights, MapperError> {
    let n = features.len();
    debug_assert_eq!(n, targets.len());
    if n < FEATURE_LEN {
        return Err(MapperError::RankDeficient { rank: n });
    }
    let q = DMatrix::from_fn(n, FEATURE_LEN, |i, j| features[i][j]);
    let y = DMatrix::from_fn(n, 2, |i, j| targets[i][j]);
    let svd = q.svd(true, true);
    let max_sv = svd.singular_values.max();
    let threshold = max_sv * 1e-12 * n as f64;
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > threshold)
        .count();
    if rank < FEATURE_LEN {
        return Err(MapperError::RankDeficient { rank });
    }
    let w = svd
        .solve(&y, threshold)
        .map_err(|_| MapperError::RankDeficient { rank })?;
    Ok(Weights::from_fn(|i, j| w[(i, j)]))
}

/// Sum of squared residuals of `features * w` against `targets`.
pub(crate) fn linear_cost(features: &[PolyFeature], targets: &[Vec2], w: &Weights) -> f64 {
    features
        .iter()
        .zip(targets)
        .map(|(q, t)| (t - w.transpose() * q).norm_squared())
        .sum()
}
