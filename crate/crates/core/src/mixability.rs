//! Mix operators, mixability constants and convexity certificates.
//!
//! `Mix^eta_phi(d, q) = inf_mu <mu, d> + D_phi(mu, q) / eta` is evaluated through
//! the entropic dual:
//!
//! ```text
//! Mix = (phi*(grad phi(q)) - phi*(grad phi(q) - eta d)) / eta
//! ```
//!
//! with the minimizer `grad phi*(grad phi(q) - eta d)`. Shannon-type entropies
//! use the closed form `-log <q, exp(-eta d)> / eta`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::entropies::{divergence, entropic_dual, Entropy, EntropyKind};
use crate::exec::{self, Execution};
use crate::losses::{LossKind, LossSpec};
use crate::simplex::{dot_zero_inf, project_tilde, Distribution, SimplexGrid};
use crate::{Error, Result};

/// Convexity margins at or above this count as convex.
pub const MARGIN_TOL: f64 = -1e-8;
/// Margins in `[INCONCLUSIVE_BAND, MARGIN_TOL)` are reported as inconclusive.
pub const INCONCLUSIVE_BAND: f64 = -1e-6;
/// Largest change of a constant under one grid refinement that still counts
/// as converged.
pub const REFINEMENT_TOL: f64 = 1e-3;

/// Mix values and minimizers, one per outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub values: Vec<f64>,
    pub minimizers: Vec<Distribution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Mixable,
    NotMixable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixabilityCertificate {
    pub eta_lower: f64,
    pub eta_phi: f64,
    /// Grid minimum of `lambda_min(eta_lower * H phi~ - H S~)`.
    pub convexity_margin: f64,
    pub grid: SimplexGrid,
    pub verdict: Verdict,
    /// `eta_lower` and `eta_phi` recomputed on the refined grid.
    pub refined_eta_lower: f64,
    pub refined_eta_phi: f64,
    pub refinement_stable: bool,
}

fn check_mix_input(phi: &Entropy, eta: f64, d: &[f64], q: &Distribution) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate {eta} must be positive"
        )));
    }
    if d.len() != q.dim() {
        return Err(Error::LengthMismatch {
            left: d.len(),
            right: q.dim(),
        });
    }
    if d.len() != phi.dim_full() {
        return Err(Error::Dimension(format!(
            "entropy over {} experts, {} losses",
            phi.dim_full(),
            d.len()
        )));
    }
    if d.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::Domain("Mix losses must be nonnegative".into()));
    }
    Ok(())
}

/// Closed form `-log <q, exp(-eta d)> / eta`, shifted by the smallest active
/// loss for stability; `+inf` entries contribute nothing.
fn shannon_mix(eta: f64, d: &[f64], q: &Distribution) -> Result<(f64, Distribution)> {
    let floor = d
        .iter()
        .zip(q.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::INFINITY, f64::min);
    if floor == f64::INFINITY {
        // Every expert with positive weight has infinite loss.
        return Ok((f64::INFINITY, q.clone()));
    }
    let logs: Vec<f64> = d
        .iter()
        .zip(q.weights())
        .map(|(&v, &w)| {
            if w == 0.0 || v == f64::INFINITY {
                f64::NEG_INFINITY
            } else {
                w.ln() - eta * (v - floor)
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    let value = floor - (max + sum.ln()) / eta;
    Ok((value, Distribution::from_log_masses(&logs)?))
}

/// `Mix^eta_phi(d, q)` and its minimizer.
///
/// Steep entropies collapse to `d_theta` at a vertex `e_theta`; at other
/// boundary points the infimum runs over the face of `q`.
pub fn mix(phi: &Entropy, eta: f64, d: &[f64], q: &Distribution) -> Result<(f64, Distribution)> {
    check_mix_input(phi, eta, d, q)?;
    match phi.kind() {
        EntropyKind::Shannon => return shannon_mix(eta, d, q),
        EntropyKind::ScaledShannon { eta: c } => return shannon_mix(c * eta, d, q),
        _ => {}
    }
    if phi.boundary_steep() {
        if let Some(theta) = q.vertex_index() {
            return Ok((d[theta], q.clone()));
        }
    }
    // Off the interior the separable gradients carry -inf on the zero
    // coordinates, which confines the dual to the face of q.
    let grad = phi.full_gradient(q)?;
    // phi*(grad phi(q)) = <grad phi(q), q> - phi(q) for q where the gradient exists.
    let anchor = dot_zero_inf(q.weights(), &grad) - phi.value(q)?;
    let shifted: Vec<f64> = grad
        .iter()
        .zip(d)
        .map(|(&g, &v)| {
            if v == f64::INFINITY {
                f64::NEG_INFINITY
            } else {
                g - eta * v
            }
        })
        .collect();
    if shifted.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Ok((f64::INFINITY, q.clone()));
    }
    let dual = entropic_dual(phi, &shifted)?;
    Ok(((anchor - dual.value) / eta, dual.maximizer))
}

/// `Mix` of the loss vectors `l_x(A)` for every outcome `x`, where `experts[theta]`
/// is expert `theta`'s prediction.
pub fn mix_all(
    phi: &Entropy,
    eta: f64,
    loss: &LossSpec,
    experts: &[Distribution],
    q: &Distribution,
) -> Result<MixResult> {
    let table = loss_table(loss, experts)?;
    let mut values = Vec::with_capacity(table.len());
    let mut minimizers = Vec::with_capacity(table.len());
    for row in &table {
        let (v, m) = mix(phi, eta, row, q)?;
        values.push(v);
        minimizers.push(m);
    }
    Ok(MixResult { values, minimizers })
}

/// `table[x][theta] = loss(x, experts[theta])`.
pub fn loss_table(loss: &LossSpec, experts: &[Distribution]) -> Result<Vec<Vec<f64>>> {
    (0..loss.n_outcomes())
        .map(|x| experts.iter().map(|a| loss.loss(x, a)).collect())
        .collect()
}

/// Grid oracle for `Mix`: minimum of `<mu, d> + D_phi(mu, q) / eta` over the
/// `resolution` grid (default interior offset), the vertices and `q` itself.
pub fn mix_bruteforce(
    phi: &Entropy,
    eta: f64,
    d: &[f64],
    q: &Distribution,
    resolution: usize,
) -> Result<f64> {
    mix_bruteforce_with(Execution::default(), phi, eta, d, q, resolution)
}

pub fn mix_bruteforce_with(
    exec: Execution,
    phi: &Entropy,
    eta: f64,
    d: &[f64],
    q: &Distribution,
    resolution: usize,
) -> Result<f64> {
    check_mix_input(phi, eta, d, q)?;
    let k = d.len();
    let mut candidates = SimplexGrid::with_default_epsilon(k, resolution)?.points();
    candidates.extend((0..k).map(|i| Distribution::vertex(k, i)));
    candidates.push(q.clone());
    let objective = |mu: &Distribution| -> f64 {
        let lin = dot_zero_inf(mu.weights(), d);
        match divergence(phi, mu, q) {
            Ok(div) => lin + div / eta,
            Err(_) => f64::INFINITY,
        }
    };
    Ok(exec::argmin(exec, &candidates, objective)
        .map(|(_, v)| v)
        .unwrap_or(f64::INFINITY))
}

/// Inverse SPD square root via the symmetric eigendecomposition.
fn inverse_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::LinAlg("matrix is not positive definite".into()));
    }
    let inv = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// `lambda_max([H L_log]^{-1} H L_loss)` at `p`, computed on the congruent
/// symmetric matrix `G^{-1} (-H L_loss) G^{-1}` with `G G = -H L_log`.
pub fn curvature_ratio(loss: &LossSpec, p: &Distribution) -> Result<f64> {
    if loss.kind() == LossKind::Log {
        return Ok(1.0);
    }
    curvature_ratio_numeric(loss, p)
}

fn curvature_ratio_numeric(loss: &LossSpec, p: &Distribution) -> Result<f64> {
    let t = project_tilde(p);
    let log = LossSpec::log(loss.n_outcomes())?;
    let g_inv = inverse_sqrt(&(-log.bayes_hessian_tilde(&t)?))?;
    let m = &g_inv * (-loss.bayes_hessian_tilde(&t)?) * &g_inv;
    Ok(symmetric_part(&m).symmetric_eigenvalues().max())
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Grid infimum of `1 / lambda_max([H L_log]^{-1} H L_loss)` over the
/// outcome simplex; `0` if the loss has no positive curvature somewhere.
pub fn mixability_constant(loss: &LossSpec, grid: &SimplexGrid) -> Result<f64> {
    mixability_constant_with(Execution::default(), loss, grid)
}

pub fn mixability_constant_with(
    exec: Execution,
    loss: &LossSpec,
    grid: &SimplexGrid,
) -> Result<f64> {
    let n = loss.n_outcomes();
    if n < 2 {
        return Err(Error::Dimension(
            "mixability needs at least two outcomes".into(),
        ));
    }
    let points = grid.with_dim_full(n)?.points();
    let ratios = exec::try_map(exec, &points, |p| curvature_ratio(loss, p))?;
    if ratios.iter().any(|&r| r <= 0.0) {
        return Ok(0.0);
    }
    Ok(ratios.iter().map(|r| 1.0 / r).fold(f64::INFINITY, f64::min))
}

/// `lambda_min(H phi~(q~) (H S~(q~))^{-1})` at `q`, using
/// `(H S~)^{-1} = Diag q~ - q~ q~^T` and the Cholesky factor of that matrix.
pub fn entropy_curvature_ratio(phi: &Entropy, q: &Distribution) -> Result<f64> {
    let t = project_tilde(q);
    let b = crate::entropies::shannon_hessian_inverse(&t);
    let l = b
        .cholesky()
        .ok_or_else(|| Error::LinAlg("inverse Shannon Hessian is not positive definite".into()))?
        .l();
    let m = l.transpose() * phi.tilde_hessian(&t)? * &l;
    Ok(symmetric_part(&m).symmetric_eigenvalues().min())
}

fn entropy_curvature_infimum(exec: Execution, phi: &Entropy, grid: &SimplexGrid) -> Result<f64> {
    let k = phi.dim_full();
    if k < 2 {
        return Err(Error::Dimension(
            "generalized mixability needs at least two experts".into(),
        ));
    }
    let points = grid.with_dim_full(k)?.points();
    let ratios = exec::try_map(exec, &points, |q| entropy_curvature_ratio(phi, q))?;
    Ok(ratios.into_iter().fold(f64::INFINITY, f64::min))
}

/// `eta_lower * inf lambda_min(H phi~ (H S~)^{-1})`. The loss part is scanned over
/// the outcome simplex and the entropy part over the expert simplex, both
/// with the resolution and offset of `grid`.
pub fn generalized_mixability_constant(
    loss: &LossSpec,
    phi: &Entropy,
    grid: &SimplexGrid,
) -> Result<f64> {
    generalized_mixability_constant_with(Execution::default(), loss, phi, grid)
}

pub fn generalized_mixability_constant_with(
    exec: Execution,
    loss: &LossSpec,
    phi: &Entropy,
    grid: &SimplexGrid,
) -> Result<f64> {
    let eta = mixability_constant_with(exec, loss, grid)?;
    generalized_from_lower(exec, eta, phi, grid)
}

fn generalized_from_lower(
    exec: Execution,
    eta_lower: f64,
    phi: &Entropy,
    grid: &SimplexGrid,
) -> Result<f64> {
    if phi.is_shannon_type() {
        // H phi~ (H S~)^{-1} is a multiple of the identity.
        let scale = match phi.kind() {
            EntropyKind::ScaledShannon { eta } => 1.0 / eta,
            _ => 1.0,
        };
        return Ok(eta_lower * scale);
    }
    Ok(eta_lower * entropy_curvature_infimum(exec, phi, grid)?)
}

fn convexity_margin(
    exec: Execution,
    eta_lower: f64,
    phi: &Entropy,
    grid: &SimplexGrid,
) -> Result<f64> {
    let k = phi.dim_full();
    let shannon = Entropy::shannon(k);
    let points = grid.with_dim_full(k)?.points();
    let margins = exec::try_map(exec, &points, |q| {
        let t = project_tilde(q);
        let m = phi.tilde_hessian(&t)? * eta_lower - shannon.tilde_hessian(&t)?;
        Ok(symmetric_part(&m).symmetric_eigenvalues().min())
    })?;
    Ok(margins.into_iter().fold(f64::INFINITY, f64::min))
}

/// Checks convexity of `eta_lower * phi - S` on the grid and reports both
/// constants at `grid` and at its refinement.
pub fn certify_phi_mixable(
    loss: &LossSpec,
    phi: &Entropy,
    grid: &SimplexGrid,
) -> Result<MixabilityCertificate> {
    certify_phi_mixable_with(Execution::default(), loss, phi, grid)
}

pub fn certify_phi_mixable_with(
    exec: Execution,
    loss: &LossSpec,
    phi: &Entropy,
    grid: &SimplexGrid,
) -> Result<MixabilityCertificate> {
    let eta_lower = mixability_constant_with(exec, loss, grid)?;
    let eta_phi = generalized_from_lower(exec, eta_lower, phi, grid)?;
    let margin = convexity_margin(exec, eta_lower, phi, grid)?;
    let refined = grid.refined();
    let refined_eta_lower = mixability_constant_with(exec, loss, &refined)?;
    let refined_eta_phi = generalized_from_lower(exec, refined_eta_lower, phi, &refined)?;
    let refinement_stable = (eta_lower - refined_eta_lower).abs() < REFINEMENT_TOL
        && (eta_phi - refined_eta_phi).abs() < REFINEMENT_TOL;
    let verdict = if !refinement_stable || (INCONCLUSIVE_BAND..MARGIN_TOL).contains(&margin) {
        Verdict::Inconclusive
    } else if margin >= MARGIN_TOL && eta_lower > 0.0 {
        Verdict::Mixable
    } else {
        Verdict::NotMixable
    };
    Ok(MixabilityCertificate {
        eta_lower,
        eta_phi,
        convexity_margin: margin,
        grid: *grid,
        verdict,
        refined_eta_lower,
        refined_eta_phi,
        refinement_stable,
    })
}

/// Default search grid for [`regret_bound`]: about 10^4 points.
fn regret_grid(k: usize) -> Result<SimplexGrid> {
    let resolution = match k {
        2 => 10_001,
        3 => 141,
        4 => 41,
        5 => 21,
        _ => 9,
    };
    SimplexGrid::with_default_epsilon(k, resolution)
}

/// `inf_q max_theta D_phi(e_theta, q) / eta_phi` and the minimizing prior.
pub fn regret_bound(phi: &Entropy, eta_phi: f64, k: usize) -> Result<(f64, Distribution)> {
    if k != phi.dim_full() {
        return Err(Error::Dimension(format!(
            "entropy over {} experts, bound requested for {k}",
            phi.dim_full()
        )));
    }
    regret_bound_on(Execution::default(), phi, eta_phi, &regret_grid(k)?)
}

/// [`regret_bound`] with an explicit search grid (the centroid is always a
/// candidate).
pub fn regret_bound_on(
    exec: Execution,
    phi: &Entropy,
    eta_phi: f64,
    grid: &SimplexGrid,
) -> Result<(f64, Distribution)> {
    if !(eta_phi > 0.0 && eta_phi.is_finite()) {
        return Err(Error::Config(format!("eta {eta_phi} must be positive")));
    }
    let k = phi.dim_full();
    match phi.kind() {
        EntropyKind::Shannon => return Ok(((k as f64).ln() / eta_phi, Distribution::uniform(k))),
        EntropyKind::ScaledShannon { eta } => {
            return Ok(((k as f64).ln() / (eta * eta_phi), Distribution::uniform(k)))
        }
        _ => {}
    }
    let mut candidates = vec![Distribution::uniform(k)];
    candidates.extend(grid.with_dim_full(k)?.points());
    let worst = |q: &Distribution| -> f64 {
        (0..k)
            .map(|theta| {
                divergence(phi, &Distribution::vertex(k, theta), q).unwrap_or(f64::INFINITY)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (i, v) = exec::argmin(exec, &candidates, worst).expect("nonempty candidates");
    Ok((v / eta_phi, candidates.swap_remove(i)))
}
