//! Poincaré-ball primitives used by every other module.
//!
//! Latent states are produced by translating a pooled hidden vector by the
//! root's pooled vector, scaling by `1/sqrt(H)` and pushing the result through
//! the exponential map at the origin. The root therefore sits exactly at the
//! center of the ball and deeper states drift toward the boundary.
//!
//! Curvature is fixed to 1. Everything is computed in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_STABILITY_DELTA: f64 = 1e-7;
pub const DEFAULT_PROJECTION_MARGIN: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("every mask entry is false; nothing to pool")]
    AllMasked,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector has zero dimension")]
    EmptyVector,
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("point norm {norm} is outside the usable ball (limit {limit})")]
    OutsideBall { norm: f64, limit: f64 },
    #[error("invalid geometry config: {0}")]
    InvalidConfig(String),
}

/// A pooled hidden-state vector in the backbone's ambient space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AmbientVector(Vec<f64>);

impl AmbientVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GeoError> {
        if values.is_empty() {
            return Err(GeoError::EmptyVector);
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(GeoError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "ambient dimension must be positive");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl TryFrom<Vec<f64>> for AmbientVector {
    type Error = GeoError;
    fn try_from(v: Vec<f64>) -> Result<Self, GeoError> {
        Self::new(v)
    }
}

impl From<AmbientVector> for Vec<f64> {
    fn from(v: AmbientVector) -> Self {
        v.0
    }
}

/// A point strictly inside the open unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    /// Validates finiteness and `||coords|| < 1`.
    pub fn new(coords: Vec<f64>) -> Result<Self, GeoError> {
        if coords.is_empty() {
            return Err(GeoError::EmptyVector);
        }
        if let Some(i) = coords.iter().position(|x| !x.is_finite()) {
            return Err(GeoError::NonFinite(i));
        }
        let norm = l2_norm(&coords);
        if norm >= 1.0 {
            return Err(GeoError::OutsideBall { norm, limit: 1.0 });
        }
        Ok(Self(coords))
    }

    pub fn origin(dim: usize) -> Self {
        assert!(dim > 0, "ball dimension must be positive");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl TryFrom<Vec<f64>> for BallPoint {
    type Error = GeoError;
    fn try_from(v: Vec<f64>) -> Result<Self, GeoError> {
        Self::new(v)
    }
}

impl From<BallPoint> for Vec<f64> {
    fn from(p: BallPoint) -> Self {
        p.0
    }
}

/// Numerical safeguards for the exponential map and ball projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoConfig {
    /// Added to the norm in the exponential map denominator.
    pub stability_delta: f64,
    /// Points are kept at norm `<= 1 - projection_margin`.
    pub projection_margin: f64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            stability_delta: DEFAULT_STABILITY_DELTA,
            projection_margin: DEFAULT_PROJECTION_MARGIN,
        }
    }
}

impl GeoConfig {
    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.stability_delta > 0.0 && self.stability_delta < 1e-3) {
            return Err(GeoError::InvalidConfig(format!(
                "stability_delta must lie in (0, 1e-3), got {}",
                self.stability_delta
            )));
        }
        if !(self.projection_margin > 0.0 && self.projection_margin < 1e-3) {
            return Err(GeoError::InvalidConfig(format!(
                "projection_margin must lie in (0, 1e-3), got {}",
                self.projection_margin
            )));
        }
        Ok(())
    }

    fn distance_limit(&self) -> f64 {
        1.0 - self.projection_margin / 2.0
    }
}

pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    // hypot-style scaling is unnecessary here: coordinates are O(1) to O(100)
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_dims(a: usize, b: usize) -> Result<(), GeoError> {
    if a != b {
        return Err(GeoError::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

/// Masked mean over token rows. Accumulates in `f64` whatever the input type.
pub fn mean_pool<T, R>(hidden: &[R], mask: &[bool]) -> Result<AmbientVector, GeoError>
where
    T: Copy + Into<f64>,
    R: AsRef<[T]>,
{
    check_dims(hidden.len(), mask.len())?;
    let width = hidden.first().map(|r| r.as_ref().len()).ok_or(GeoError::AllMasked)?;
    if width == 0 {
        return Err(GeoError::EmptyVector);
    }
    let mut acc = vec![0.0f64; width];
    let mut count = 0usize;
    for (row, &keep) in hidden.iter().zip(mask) {
        let row = row.as_ref();
        check_dims(width, row.len())?;
        if !keep {
            continue;
        }
        count += 1;
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += x.into();
        }
    }
    if count == 0 {
        return Err(GeoError::AllMasked);
    }
    let n = count as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    AmbientVector::new(acc)
}

/// Rescales `y` onto the sphere of radius `1 - margin` when it reaches or
/// crosses it; interior points pass through unchanged.
pub fn project_into_ball(y: &[f64], cfg: &GeoConfig) -> Result<BallPoint, GeoError> {
    if y.is_empty() {
        return Err(GeoError::EmptyVector);
    }
    if let Some(i) = y.iter().position(|x| !x.is_finite()) {
        return Err(GeoError::NonFinite(i));
    }
    let max_norm = 1.0 - cfg.projection_margin;
    let norm = l2_norm(y);
    if norm >= max_norm {
        let scale = max_norm / norm;
        let mut out: Vec<f64> = y.iter().map(|v| v * scale).collect();
        // rounding can leave the rescaled norm a few ulps above max_norm
        while l2_norm(&out) >= 1.0 {
            out.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
        }
        return Ok(BallPoint(out));
    }
    Ok(BallPoint(y.to_vec()))
}

/// `tanh(||v||) * v / (||v|| + delta)`, followed by ball projection.
pub fn exp_map_origin(v: &AmbientVector, cfg: &GeoConfig) -> BallPoint {
    exp_map_slice(v.as_slice(), cfg)
}

fn exp_map_slice(v: &[f64], cfg: &GeoConfig) -> BallPoint {
    let norm = l2_norm(v);
    if norm == 0.0 {
        return BallPoint(vec![0.0; v.len()]);
    }
    let scale = norm.tanh() / (norm + cfg.stability_delta);
    let mapped: Vec<f64> = v.iter().map(|x| x * scale).collect();
    project_into_ball(&mapped, cfg).expect("finite input yields finite ball point")
}

/// Root-centered latent: `exp0((pooled - root_pooled) / sqrt(H))`.
pub fn to_latent(
    pooled: &AmbientVector,
    root_pooled: &AmbientVector,
    cfg: &GeoConfig,
) -> Result<BallPoint, GeoError> {
    check_dims(root_pooled.dim(), pooled.dim())?;
    let inv_sqrt_h = 1.0 / (pooled.dim() as f64).sqrt();
    let diff: Vec<f64> = pooled
        .as_slice()
        .iter()
        .zip(root_pooled.as_slice())
        .map(|(p, r)| (p - r) * inv_sqrt_h)
        .collect();
    Ok(exp_map_slice(&diff, cfg))
}

/// `arcosh(1 + x)` evaluated as `log1p(x + sqrt(x (x + 2)))`, accurate for small `x`.
pub(crate) fn acosh1p(x: f64) -> f64 {
    (x + (x * (x + 2.0)).sqrt()).ln_1p()
}

/// Geodesic distance with the default safeguards.
pub fn geodesic_distance(u: &BallPoint, v: &BallPoint) -> Result<f64, GeoError> {
    geodesic_distance_with(u, v, &GeoConfig::default())
}

/// Poincaré geodesic distance. Points whose norm reaches `1 - margin/2` are
/// rejected since the conformal factor is no longer trustworthy there.
pub fn geodesic_distance_with(u: &BallPoint, v: &BallPoint, cfg: &GeoConfig) -> Result<f64, GeoError> {
    check_dims(u.dim(), v.dim())?;
    let limit = cfg.distance_limit();
    let nu = u.norm();
    let nv = v.norm();
    for norm in [nu, nv] {
        if norm >= limit {
            return Err(GeoError::OutsideBall { norm, limit });
        }
    }
    let diff_sq: f64 = u.0.iter().zip(&v.0).map(|(a, b)| (a - b) * (a - b)).sum();
    if diff_sq == 0.0 {
        return Ok(0.0);
    }
    let denom = ((1.0 - nu) * (1.0 + nu)) * ((1.0 - nv) * (1.0 + nv));
    Ok(acosh1p(2.0 * diff_sq / denom))
}

pub fn euclidean_distance(u: &BallPoint, v: &BallPoint) -> Result<f64, GeoError> {
    check_dims(u.dim(), v.dim())?;
    Ok(u.0.iter().zip(&v.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Full symmetric matrix of pairwise geodesic distances.
pub fn pairwise_geodesic(points: &[&BallPoint], cfg: &GeoConfig) -> Result<Vec<Vec<f64>>, GeoError> {
    let n = points.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = geodesic_distance_with(points[i], points[j], cfg)?;
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}
