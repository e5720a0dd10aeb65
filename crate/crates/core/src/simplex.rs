//! Simplex geometry: distributions, reduced ("tilde") coordinates, the affine
//! embedding back into the full simplex, and deterministic interior grids.
//!
//! A point `p` of the simplex over `m` items is stored with all `m` weights.
//! Its tilde coordinates drop the last weight; [`amalg`] restores it as the
//! affine residual `1 - sum(u)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance on the weight sum of a stored distribution.
pub const SUM_TOL: f64 = 1e-12;
/// Largest sum deviation that construction silently renormalizes.
pub const RENORM_TOL: f64 = 1e-9;
/// Default interior margin for grids.
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution {
    weights: Vec<f64>,
}

impl Distribution {
    /// Validates `weights`; sums within [`RENORM_TOL`] of one are renormalized,
    /// larger deviations are rejected. Negative entries down to `-SUM_TOL` are
    /// clamped to zero.
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Dimension(
                "distribution needs at least one weight".into(),
            ));
        }
        for w in weights.iter_mut() {
            if !w.is_finite() {
                return Err(Error::Domain(format!("non-finite weight {w}")));
            }
            if *w < 0.0 {
                if *w < -SUM_TOL {
                    return Err(Error::Domain(format!("negative weight {w}")));
                }
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > RENORM_TOL {
            return Err(Error::Domain(format!("weights sum to {sum}, not 1")));
        }
        if sum != 1.0 {
            weights.iter_mut().for_each(|w| *w /= sum);
        }
        Ok(Self { weights })
    }

    /// Normalizes a nonnegative mass vector of any positive total.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Domain(
                "masses must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("all masses are zero".into()));
        }
        Ok(Self {
            weights: masses.into_iter().map(|m| m / total).collect(),
        })
    }

    /// Normalizes `exp(log_masses)` stably; `-inf` entries get weight zero.
    pub fn from_log_masses(log_masses: &[f64]) -> Result<Self> {
        let max = log_masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::Degenerate("every log-mass is -inf".into()));
        }
        if max == f64::INFINITY {
            return Err(Error::Domain("log-mass of +inf".into()));
        }
        Self::from_masses(log_masses.iter().map(|l| (l - max).exp()).collect())
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m >= 1, "uniform distribution over zero items");
        Self {
            weights: vec![1.0 / m as f64; m],
        }
    }

    /// The vertex `e_i` of the simplex over `m` items.
    pub fn vertex(m: usize, i: usize) -> Self {
        assert!(i < m, "vertex {i} out of range for dimension {m}");
        let mut weights = vec![0.0; m];
        weights[i] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Every weight strictly positive.
    pub fn is_interior(&self) -> bool {
        self.min_weight() > 0.0
    }

    /// `Some(i)` when this is the vertex `e_i`.
    pub fn vertex_index(&self) -> Option<usize> {
        let mut hit = None;
        for (i, &w) in self.weights.iter().enumerate() {
            if w == 1.0 {
                hit = Some(i);
            } else if w != 0.0 {
                return None;
            }
        }
        hit
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        dot_zero_inf(&self.weights, v)
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.weights
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

/// Inner product with the convention `0 * (+-inf) = 0`.
pub fn dot_zero_inf(w: &[f64], v: &[f64]) -> f64 {
    w.iter()
        .zip(v)
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, b)| a * b)
        .sum()
}

/// Reduced coordinates of a simplex point: the first `m - 1` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TildePoint {
    coords: Vec<f64>,
}

impl TildePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Domain(
                "tilde coordinates must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = coords.iter().sum();
        if sum > 1.0 + SUM_TOL {
            return Err(Error::Domain(format!("tilde coordinates sum to {sum} > 1")));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Dimension `m` of the full simplex.
    pub fn dim_full(&self) -> usize {
        self.coords.len() + 1
    }

    /// The implied last weight `1 - sum(coords)`.
    pub fn residual(&self) -> f64 {
        1.0 - self.coords.iter().sum::<f64>()
    }

    /// Smallest weight of the full point, residual included.
    pub fn min_implied(&self) -> f64 {
        self.coords.iter().copied().fold(self.residual(), f64::min)
    }
}

/// The affine embedding `u -> [u_1, .., u_{m-1}, 1 - sum(u)]`.
pub fn amalg(u: &TildePoint) -> Result<Distribution> {
    let mut residual = u.residual();
    if residual < -SUM_TOL {
        return Err(Error::Domain(format!("negative residual {residual}")));
    }
    if residual < 0.0 {
        residual = 0.0;
    }
    let mut weights = u.coords.clone();
    weights.push(residual);
    Ok(Distribution { weights })
}

/// Drops the last coordinate.
pub fn project_tilde(p: &Distribution) -> TildePoint {
    TildePoint {
        coords: p.weights[..p.dim() - 1].to_vec(),
    }
}

/// Deterministic interior grid over the simplex of dimension `dim_full`.
///
/// Points are the integer compositions `c` of `resolution - 1` into
/// `dim_full` parts, mapped to `epsilon + (1 - m * epsilon) * c / (resolution - 1)`,
/// enumerated with the first part ascending (lexicographic). Infima over the
/// open simplex evaluated on such a grid only approximate the true value:
/// from above when the infimum is approached at the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexGrid {
    pub dim_full: usize,
    pub resolution: usize,
    pub epsilon: f64,
}

impl SimplexGrid {
    pub fn new(dim_full: usize, resolution: usize, epsilon: f64) -> Result<Self> {
        let grid = Self {
            dim_full,
            resolution,
            epsilon,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn with_default_epsilon(dim_full: usize, resolution: usize) -> Result<Self> {
        Self::new(dim_full, resolution, DEFAULT_EPSILON)
    }

    fn validate(&self) -> Result<()> {
        if self.dim_full < 1 {
            return Err(Error::Config("grid dimension must be at least 1".into()));
        }
        if self.dim_full == 1 {
            return Ok(());
        }
        if self.resolution < 2 {
            return Err(Error::Config(format!(
                "grid resolution {} < 2",
                self.resolution
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 / self.dim_full as f64) {
            return Err(Error::Config(format!(
                "grid epsilon {} outside (0, 1/{})",
                self.epsilon, self.dim_full
            )));
        }
        Ok(())
    }

    /// Same resolution and margin over a simplex of another dimension.
    pub fn with_dim_full(&self, dim_full: usize) -> Result<Self> {
        Self::new(dim_full, self.resolution, self.epsilon)
    }

    /// Nested refinement: doubles the number of intervals per axis, so every
    /// point of `self` is also a point of the refined grid.
    pub fn refined(&self) -> Self {
        Self {
            resolution: 2 * self.resolution - 1,
            ..*self
        }
    }

    /// Number of points `points()` yields.
    pub fn len(&self) -> usize {
        if self.dim_full == 1 {
            return 1;
        }
        // C(R - 1 + m - 1, m - 1)
        let n = self.resolution - 1 + self.dim_full - 1;
        let k = self.dim_full - 1;
        (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<Distribution> {
        interior_grid(self).expect("grid validated on construction")
    }
}

/// Enumerates the grid points of `grid`; see [`SimplexGrid`].
pub fn interior_grid(grid: &SimplexGrid) -> Result<Vec<Distribution>> {
    grid.validate()?;
    let m = grid.dim_full;
    if m == 1 {
        return Ok(vec![Distribution { weights: vec![1.0] }]);
    }
    let total = grid.resolution - 1;
    let scale = 1.0 - m as f64 * grid.epsilon;
    let mut out = Vec::with_capacity(grid.len());
    let mut parts = vec![0usize; m];
    compositions(&mut parts, 0, total, &mut |c| {
        let weights: Vec<f64> = c
            .iter()
            .map(|&ci| grid.epsilon + scale * ci as f64 / total as f64)
            .collect();
        let sum: f64 = weights.iter().sum();
        out.push(Distribution {
            weights: weights.into_iter().map(|w| w / sum).collect(),
        });
    });
    Ok(out)
}

fn compositions(
    parts: &mut [usize],
    pos: usize,
    remaining: usize,
    emit: &mut impl FnMut(&[usize]),
) {
    if pos == parts.len() - 1 {
        parts[pos] = remaining;
        emit(parts);
        return;
    }
    for c in 0..=remaining {
        parts[pos] = c;
        compositions(parts, pos + 1, remaining - c, emit);
    }
}
