//! Entropies on the expert simplex: values, tilde-coordinate derivatives,
//! divergences and entropic duals.
//!
//! The entropic dual of `phi` is `phi*(z) = sup_{q in simplex} <q, z> - phi(q)`;
//! its maximizer is `grad phi*(z)`, the mirror map used by the aggregation
//! algorithms.
//!
//! Shannon-type entropies have closed-form duals (log-sum-exp / softmax).
//! Separable entropies (`Quadratic`, `Mixture`) are solved exactly through
//! their Lagrange multiplier; the two-expert Legendre counterexample through
//! a one-dimensional root find in logit space. [`entropic_dual_mirror_ascent`]
//! is a slower generic route that only needs gradients, kept as an
//! independent cross-check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::simplex::{amalg, dot_zero_inf, project_tilde, Distribution, SimplexGrid, TildePoint};
use crate::{Error, Result};

const SIMPSON_TOL: f64 = 1e-10;
const SIMPSON_MAX_DEPTH: u32 = 60;
/// Frank-Wolfe gap (relative to the scale of `z`) a dual maximizer must meet.
pub const DUAL_OPTIMALITY_TOL: f64 = 1e-7;
const MIRROR_ASCENT_CAP: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntropyKind {
    Shannon,
    /// `phi(q) = |q|^2 / 2`; not steep at the boundary.
    Quadratic,
    /// `alpha * Shannon + (1 - alpha) * Quadratic`.
    Mixture {
        alpha: f64,
    },
    /// Two-expert entropy defined through `phi~'(q) = log(log(1 - q) / log q)`.
    LegendreCounterexample,
    /// `Shannon / eta`.
    ScaledShannon {
        eta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entropy {
    dim_full: usize,
    kind: EntropyKind,
}

/// Value and maximizer of an entropic dual evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DualResult {
    pub value: f64,
    pub maximizer: Distribution,
}

impl Entropy {
    pub fn shannon(k: usize) -> Self {
        assert!(k >= 1);
        Self {
            dim_full: k,
            kind: EntropyKind::Shannon,
        }
    }

    pub fn quadratic(k: usize) -> Self {
        assert!(k >= 1);
        Self {
            dim_full: k,
            kind: EntropyKind::Quadratic,
        }
    }

    pub fn mixture(k: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "mixture weight {alpha} outside [0, 1]"
            )));
        }
        Self::new(k, EntropyKind::Mixture { alpha })
    }

    pub fn legendre_counterexample() -> Self {
        Self {
            dim_full: 2,
            kind: EntropyKind::LegendreCounterexample,
        }
    }

    pub fn scaled_shannon(k: usize, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("scale {eta} must be positive")));
        }
        Self::new(k, EntropyKind::ScaledShannon { eta })
    }

    pub fn new(k: usize, kind: EntropyKind) -> Result<Self> {
        if k < 1 {
            return Err(Error::Dimension("entropy over an empty simplex".into()));
        }
        match kind {
            EntropyKind::LegendreCounterexample if k != 2 => Err(Error::Dimension(
                "the Legendre counterexample entropy is defined for two experts only".into(),
            )),
            EntropyKind::Mixture { alpha } if !(0.0..=1.0).contains(&alpha) => Err(Error::Config(
                format!("mixture weight {alpha} outside [0, 1]"),
            )),
            EntropyKind::ScaledShannon { eta } if !(eta > 0.0 && eta.is_finite()) => {
                Err(Error::Config(format!("scale {eta} must be positive")))
            }
            _ => Ok(Self { dim_full: k, kind }),
        }
    }

    /// Parses `shannon`, `quadratic`, `mixture:<alpha>`, `legendre`,
    /// `scaled-shannon:<eta>`.
    pub fn from_id(id: &str, k: usize) -> Result<Self> {
        let (head, arg) = match id.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (id, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::Config(format!("entropy `{id}` needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("entropy `{id}`: {e}")))
        };
        let kind = match head {
            "shannon" => EntropyKind::Shannon,
            "quadratic" => EntropyKind::Quadratic,
            "mixture" => EntropyKind::Mixture { alpha: num(arg)? },
            "legendre" => EntropyKind::LegendreCounterexample,
            "scaled-shannon" => EntropyKind::ScaledShannon { eta: num(arg)? },
            _ => return Err(Error::Config(format!("unknown entropy `{id}`"))),
        };
        Self::new(k, kind)
    }

    pub fn id(&self) -> String {
        match self.kind {
            EntropyKind::Shannon => "shannon".into(),
            EntropyKind::Quadratic => "quadratic".into(),
            EntropyKind::Mixture { alpha } => format!("mixture:{alpha}"),
            EntropyKind::LegendreCounterexample => "legendre".into(),
            EntropyKind::ScaledShannon { eta } => format!("scaled-shannon:{eta}"),
        }
    }

    pub fn dim_full(&self) -> usize {
        self.dim_full
    }

    pub fn kind(&self) -> EntropyKind {
        self.kind
    }

    /// Same kind over `k` experts (face restriction for separable kinds).
    pub fn with_dim(&self, k: usize) -> Result<Self> {
        Self::new(k, self.kind)
    }

    /// Directional derivatives at the relative boundary are `-inf`.
    pub fn boundary_steep(&self) -> bool {
        match self.kind {
            EntropyKind::Quadratic => false,
            EntropyKind::Mixture { alpha } => alpha > 0.0,
            _ => true,
        }
    }

    /// Differentiable on a neighbourhood of the closed simplex, so gradients
    /// at boundary points are meaningful.
    pub fn smooth_on_closure(&self) -> bool {
        !self.boundary_steep()
    }

    pub fn is_shannon_type(&self) -> bool {
        matches!(
            self.kind,
            EntropyKind::Shannon | EntropyKind::ScaledShannon { .. }
        )
    }

    fn check_dim(&self, m: usize) -> Result<()> {
        if m != self.dim_full {
            return Err(Error::Dimension(format!(
                "entropy over {} experts applied to a point of dimension {m}",
                self.dim_full
            )));
        }
        Ok(())
    }

    /// Scalar pieces of a separable entropy `sum_i phi(q_i)`.
    fn scalar(&self) -> Option<Scalar> {
        match self.kind {
            EntropyKind::Shannon => Some(Scalar {
                shannon: 1.0,
                quad: 0.0,
            }),
            EntropyKind::ScaledShannon { eta } => Some(Scalar {
                shannon: 1.0 / eta,
                quad: 0.0,
            }),
            EntropyKind::Quadratic => Some(Scalar {
                shannon: 0.0,
                quad: 1.0,
            }),
            EntropyKind::Mixture { alpha } => Some(Scalar {
                shannon: alpha,
                quad: 1.0 - alpha,
            }),
            EntropyKind::LegendreCounterexample => None,
        }
    }

    pub fn value(&self, q: &Distribution) -> Result<f64> {
        self.check_dim(q.dim())?;
        Ok(match self.scalar() {
            Some(s) => q.weights().iter().map(|&x| s.phi(x)).sum(),
            None => legendre_value(q[0]),
        })
    }

    pub fn tilde_value(&self, u: &TildePoint) -> Result<f64> {
        self.value(&amalg(u)?)
    }

    /// A representative of the full gradient; the tilde gradient is its
    /// difference against the last entry. Steep kinds return `-inf` where
    /// a weight is zero.
    pub fn full_gradient(&self, q: &Distribution) -> Result<Vec<f64>> {
        self.check_dim(q.dim())?;
        Ok(match self.scalar() {
            Some(s) => q.weights().iter().map(|&x| s.dphi(x)).collect(),
            None => vec![legendre_derivative(q[0]), 0.0],
        })
    }

    /// Gradient of `phi o amalg` at `u`.
    pub fn tilde_gradient(&self, u: &TildePoint) -> Result<DVector<f64>> {
        let q = amalg(u)?;
        self.check_dim(q.dim())?;
        if self.boundary_steep() && !q.is_interior() {
            return Err(Error::Domain(
                "gradient of a steep entropy at the boundary".into(),
            ));
        }
        let g = self.full_gradient(&q)?;
        let last = g[g.len() - 1];
        Ok(DVector::from_iterator(
            g.len() - 1,
            g[..g.len() - 1].iter().map(|v| v - last),
        ))
    }

    /// Hessian of `phi o amalg` at interior `u`.
    pub fn tilde_hessian(&self, u: &TildePoint) -> Result<DMatrix<f64>> {
        let q = amalg(u)?;
        self.check_dim(q.dim())?;
        if self.boundary_steep() && !q.is_interior() {
            return Err(Error::Domain(
                "Hessian of a steep entropy at the boundary".into(),
            ));
        }
        let d = self.dim_full - 1;
        Ok(match self.scalar() {
            Some(s) => {
                let last = s.ddphi(q[d]);
                DMatrix::from_fn(
                    d,
                    d,
                    |i, j| if i == j { s.ddphi(q[i]) + last } else { last },
                )
            }
            None => DMatrix::from_element(1, 1, legendre_counterexample_hessian(q[0])?),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Scalar {
    shannon: f64,
    quad: f64,
}

impl Scalar {
    fn phi(&self, x: f64) -> f64 {
        let s = if x > 0.0 { x * x.ln() } else { 0.0 };
        self.shannon * s + self.quad * 0.5 * x * x
    }

    fn dphi(&self, x: f64) -> f64 {
        let s = if self.shannon > 0.0 {
            self.shannon * (x.ln() + 1.0)
        } else {
            0.0
        };
        s + self.quad * x
    }

    fn ddphi(&self, x: f64) -> f64 {
        let s = if self.shannon > 0.0 {
            self.shannon / x
        } else {
            0.0
        };
        s + self.quad
    }

    /// Smallest `x >= 0` with `dphi(x) >= y` (zero when `dphi(0+) >= y`).
    fn dphi_inverse(&self, y: f64) -> f64 {
        if y == f64::NEG_INFINITY {
            return 0.0;
        }
        if self.shannon == 0.0 {
            return (y / self.quad).max(0.0);
        }
        if self.quad == 0.0 {
            return (y / self.shannon - 1.0).exp();
        }
        // Solve a (w + 1) + b e^w = y in w = ln x; increasing in w.
        let (a, b) = (self.shannon, self.quad);
        let hi = (y - a) / a;
        let lo = hi - b * hi.exp() / a;
        let w = safeguarded_newton(
            |w| a * (w + 1.0) + b * w.exp() - y,
            |w| a + b * w.exp(),
            lo,
            hi,
        );
        w.exp()
    }
}

/// Root of an increasing function bracketed by `[lo, hi]`, Newton steps that
/// leave the bracket fall back to bisection.
fn safeguarded_newton(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let flo = f(lo);
    if flo >= 0.0 {
        return lo;
    }
    if f(hi) <= 0.0 {
        return hi;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = df(x);
        let mut next = x - fx / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0)
            || hi - lo <= f64::EPSILON * x.abs().max(1.0)
        {
            return next;
        }
        x = next;
    }
    x
}

/// `S(q) = sum_{q_i > 0} q_i log q_i`.
pub fn shannon_value(q: &Distribution) -> f64 {
    q.weights()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum()
}

/// `d^2/dq^2` of the two-expert Legendre counterexample in tilde coordinates:
/// `-1 / (q log q) - 1 / ((1 - q) log(1 - q))`.
pub fn legendre_counterexample_hessian(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!(
            "Legendre counterexample Hessian at q = {q}"
        )));
    }
    Ok(-1.0 / (q * q.ln()) - 1.0 / ((1.0 - q) * (-q).ln_1p()))
}

/// `log(log(1 - q) / log q)`, with the limits `-inf` at 0 and `+inf` at 1.
fn legendre_derivative(q: f64) -> f64 {
    if q <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if q >= 1.0 {
        return f64::INFINITY;
    }
    (-(-q).ln_1p()).ln() - (-q.ln()).ln()
}

/// Same derivative at `q = sigmoid(u)`, stable for large `|u|`.
fn legendre_derivative_logit(u: f64) -> f64 {
    softplus(u).ln() - softplus(-u).ln()
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u + (-u).exp()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `phi~(q) = int_{1/2}^q log(log(1 - t) / log t) dt`; symmetric about 1/2.
fn legendre_value(q: f64) -> f64 {
    let q = if q > 0.5 { 1.0 - q } else { q };
    if q == 0.5 {
        return 0.0;
    }
    // Integrand on (0, 1/2]; the log singularity at 0 is integrable.
    let g = |t: f64| legendre_derivative(t.max(f64::MIN_POSITIVE));
    -adaptive_simpson(&g, q, 0.5, SIMPSON_TOL)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, SIMPSON_MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `D_phi(v, u) = phi(v) - phi(u) - phi'(u; v - u)`.
///
/// Separable entropies sum per-coordinate Bregman terms, which is exact on
/// faces: a coordinate with `u_i = 0 < v_i` contributes `+inf` when the
/// entropy is steep. The Legendre counterexample is `+inf` at vertices
/// `u != v`.
pub fn divergence(phi: &Entropy, v: &Distribution, u: &Distribution) -> Result<f64> {
    phi.check_dim(v.dim())?;
    phi.check_dim(u.dim())?;
    if v == u {
        return Ok(0.0);
    }
    let Some(s) = phi.scalar() else {
        if !u.is_interior() {
            return Ok(f64::INFINITY);
        }
        let slope = legendre_derivative(u[0]);
        return Ok(legendre_value(v[0]) - legendre_value(u[0]) - slope * (v[0] - u[0]));
    };
    let mut total = 0.0;
    for (&a, &b) in v.weights().iter().zip(u.weights()) {
        if a == b {
            continue;
        }
        if s.shannon > 0.0 {
            if b == 0.0 {
                return Ok(f64::INFINITY);
            }
            let kl = if a > 0.0 { a * (a / b).ln() } else { 0.0 } - a + b;
            total += s.shannon * kl;
        }
        total += s.quad * 0.5 * (a - b) * (a - b);
    }
    Ok(total)
}

fn validate_dual_input(phi: &Entropy, z: &[f64]) -> Result<()> {
    phi.check_dim(z.len())?;
    if z.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Domain("dual argument must be finite or -inf".into()));
    }
    if z.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Degenerate("every dual coordinate is -inf".into()));
    }
    Ok(())
}

/// `phi*(z)` and its maximizer. Entries of `z` equal to `-inf` force the
/// corresponding weight to zero.
pub fn entropic_dual(phi: &Entropy, z: &[f64]) -> Result<DualResult> {
    validate_dual_input(phi, z)?;
    let shift = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zs: Vec<f64> = z.iter().map(|v| v - shift).collect();
    let maximizer = match phi.kind {
        EntropyKind::Shannon => Distribution::from_log_masses(&zs)?,
        EntropyKind::ScaledShannon { eta } => {
            Distribution::from_log_masses(&zs.iter().map(|v| eta * v).collect::<Vec<_>>())?
        }
        EntropyKind::LegendreCounterexample => legendre_dual_maximizer(&zs)?,
        EntropyKind::Quadratic | EntropyKind::Mixture { .. } => {
            separable_dual_maximizer(phi.scalar().expect("separable"), &zs)?
        }
    };
    let value = match phi.kind {
        EntropyKind::Shannon => shift + log_sum_exp(&zs),
        EntropyKind::ScaledShannon { eta } => {
            shift + log_sum_exp(&zs.iter().map(|v| eta * v).collect::<Vec<_>>()) / eta
        }
        _ => shift + dot_zero_inf(maximizer.weights(), &zs) - phi.value(&maximizer)?,
    };
    let gap = dual_optimality_gap(phi, &zs, &maximizer)?;
    let scale = zs
        .iter()
        .filter(|v| v.is_finite())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    if gap > DUAL_OPTIMALITY_TOL * scale {
        return Err(Error::Solver(format!(
            "dual maximizer gap {gap:.3e} after solve"
        )));
    }
    Ok(DualResult { value, maximizer })
}

/// `grad phi*(z)`, the unique dual maximizer for strictly convex `phi`.
pub fn dual_gradient(phi: &Entropy, z: &[f64]) -> Result<Distribution> {
    Ok(entropic_dual(phi, z)?.maximizer)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Frank-Wolfe gap `max_i g_i - <q, g>` of `g = z - grad phi(q)`. Weights that
/// are zero under a steep entropy are excluded (their gradient is `-inf`).
pub fn dual_optimality_gap(phi: &Entropy, z: &[f64], q: &Distribution) -> Result<f64> {
    let grad = phi.full_gradient(q)?;
    let steep = phi.boundary_steep();
    let mut best = f64::NEG_INFINITY;
    let mut avg = 0.0;
    for i in 0..z.len() {
        if z[i] == f64::NEG_INFINITY || (steep && q[i] == 0.0) {
            continue;
        }
        let g = z[i] - grad[i];
        best = best.max(g);
        avg += q[i] * g;
    }
    Ok((best - avg).max(0.0))
}

fn separable_dual_maximizer(s: Scalar, z: &[f64]) -> Result<Distribution> {
    let k = z.len();
    let weights =
        |lambda: f64| -> Vec<f64> { z.iter().map(|&zi| s.dphi_inverse(zi - lambda)).collect() };
    let total = |lambda: f64| weights(lambda).iter().sum::<f64>();
    // With max z = 0: lambda = -dphi(1) puts weight >= 1 on the argmax,
    // lambda = -dphi(1/k) caps every weight at 1/k.
    let lo = -s.dphi(1.0);
    let hi = -s.dphi(1.0 / k as f64);
    let dtotal = |lambda: f64| -> f64 {
        weights(lambda)
            .iter()
            .filter(|&&q| q > 0.0)
            .map(|&q| -1.0 / s.ddphi(q))
            .sum()
    };
    // total is decreasing in lambda: solve 1 - total(lambda) = 0.
    let lambda = safeguarded_newton(|l| 1.0 - total(l), |l| -dtotal(l), lo, hi);
    Distribution::from_masses(weights(lambda))
}

fn legendre_dual_maximizer(z: &[f64]) -> Result<Distribution> {
    if z[0] == f64::NEG_INFINITY {
        return Ok(Distribution::vertex(2, 1));
    }
    if z[1] == f64::NEG_INFINITY {
        return Ok(Distribution::vertex(2, 0));
    }
    let target = z[0] - z[1];
    let f = |u: f64| legendre_derivative_logit(u) - target;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo) > 0.0 {
        lo *= 2.0;
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let df = |u: f64| {
        let q = sigmoid(u);
        let one_minus = sigmoid(-u);
        legendre_counterexample_hessian(q)
            .map(|h| h * q * one_minus)
            .unwrap_or(1.0)
    };
    let u = safeguarded_newton(f, df, lo, hi);
    Distribution::new(vec![sigmoid(u), sigmoid(-u)])
}

/// Generic dual solver: entropic mirror ascent on `<q, z> - phi(q)` with
/// step `1/L`, `L` the largest eigenvalue of `H phi~ (H S~)^{-1}` over a
/// resolution-21 grid (the smoothness constant relative to the Shannon
/// mirror map). Needs only gradients; converges linearly when `phi` is
/// strongly convex relative to Shannon.
pub fn entropic_dual_mirror_ascent(
    phi: &Entropy,
    z: &[f64],
    max_iter: Option<usize>,
) -> Result<DualResult> {
    validate_dual_input(phi, z)?;
    let k = z.len();
    let shift = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zs: Vec<f64> = z.iter().map(|v| v - shift).collect();
    let smoothness = if k == 1 {
        1.0
    } else {
        relative_smoothness(phi)?
    };
    let step = 1.0 / smoothness;
    let mut q: Vec<f64> = zs
        .iter()
        .map(|v| if *v == f64::NEG_INFINITY { 0.0 } else { 1.0 })
        .collect();
    let active = q.iter().filter(|v| **v > 0.0).count() as f64;
    q.iter_mut().for_each(|v| *v /= active);
    let scale = zs
        .iter()
        .filter(|v| v.is_finite())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let cap = max_iter.unwrap_or(MIRROR_ASCENT_CAP);
    for _ in 0..cap {
        let dist = Distribution::from_masses(q.clone())?;
        if dual_optimality_gap(phi, &zs, &dist)? <= DUAL_OPTIMALITY_TOL * scale {
            let value = shift + dot_zero_inf(dist.weights(), &zs) - phi.value(&dist)?;
            return Ok(DualResult {
                value,
                maximizer: dist,
            });
        }
        let grad = phi.full_gradient(&dist)?;
        let logs: Vec<f64> = (0..k)
            .map(|i| {
                if q[i] == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    q[i].ln() + step * (zs[i] - grad[i])
                }
            })
            .collect();
        q = Distribution::from_log_masses(&logs)?.into_vec();
    }
    Err(Error::Solver(format!(
        "mirror ascent did not reach the optimality tolerance in {cap} iterations"
    )))
}

fn relative_smoothness(phi: &Entropy) -> Result<f64> {
    let grid = SimplexGrid::with_default_epsilon(phi.dim_full, 21)?;
    let mut worst: f64 = 0.0;
    for p in grid.points() {
        let t = project_tilde(&p);
        let h = phi.tilde_hessian(&t)?;
        let m = shannon_hessian_inverse(&t);
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::LinAlg("Shannon inverse Hessian not SPD".into()))?;
        let l = chol.l();
        let sym = l.transpose() * h * &l;
        worst = worst.max(sym.symmetric_eigen().eigenvalues.max());
    }
    Ok(worst.max(f64::MIN_POSITIVE))
}

/// `(H S~(q~))^{-1} = Diag q~ - q~ q~^T`.
pub fn shannon_hessian_inverse(u: &TildePoint) -> DMatrix<f64> {
    let c = u.coords();
    let d = c.len();
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            c[i] - c[i] * c[j]
        } else {
            -c[i] * c[j]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d(w: &[f64]) -> Distribution {
        Distribution::new(w.to_vec()).unwrap()
    }

    fn all_kinds(k: usize) -> Vec<Entropy> {
        let mut v = vec![
            Entropy::shannon(k),
            Entropy::quadratic(k),
            Entropy::mixture(k, 0.5).unwrap(),
            Entropy::mixture(k, 0.2).unwrap(),
            Entropy::scaled_shannon(k, 2.5).unwrap(),
        ];
        if k == 2 {
            v.push(Entropy::legendre_counterexample());
        }
        v
    }

    #[test]
    fn shannon_value_examples() {
        assert_abs_diff_eq!(
            shannon_value(&Distribution::uniform(2)),
            -(2f64.ln()),
            epsilon = 1e-15
        );
        assert_eq!(shannon_value(&Distribution::vertex(3, 0)), 0.0);
        assert_abs_diff_eq!(
            shannon_value(&d(&[0.25, 0.75])),
            -0.562_335_144_618_808_5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn divergence_examples() {
        for k in [2, 3, 7] {
            let s = Entropy::shannon(k);
            let v = divergence(&s, &Distribution::vertex(k, 0), &Distribution::uniform(k)).unwrap();
            assert_abs_diff_eq!(v, (k as f64).ln(), epsilon = 1e-12);
            let u = d(&vec![1.0 / k as f64; k]);
            for phi in all_kinds(k) {
                assert_eq!(divergence(&phi, &u, &u).unwrap(), 0.0);
            }
            let inf =
                divergence(&s, &Distribution::uniform(k), &Distribution::vertex(k, 0)).unwrap();
            assert_eq!(inf, f64::INFINITY);
        }
    }

    #[test]
    fn quadratic_divergence_is_half_squared_distance() {
        let q = Entropy::quadratic(3);
        let v = d(&[0.2, 0.3, 0.5]);
        let u = d(&[0.0, 0.5, 0.5]);
        let expect = 0.5 * (0.04 + 0.04 + 0.0);
        assert_abs_diff_eq!(divergence(&q, &v, &u).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn dual_examples() {
        let s2 = Entropy::shannon(2);
        let r = entropic_dual(&Entropy::shannon(4), &[0.0; 4]).unwrap();
        assert_abs_diff_eq!(r.value, 4f64.ln(), epsilon = 1e-15);
        assert!(r.maximizer.max_abs_diff(&Distribution::uniform(4)) < 1e-15);

        let r = entropic_dual(&s2, &[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(r.value, (e + 1.0).ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(r.maximizer[0], e / (e + 1.0), epsilon = 1e-15);

        let r = entropic_dual(&Entropy::quadratic(2), &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(r.value, -0.25, epsilon = 1e-15);
        assert!(r.maximizer.max_abs_diff(&Distribution::uniform(2)) < 1e-15);
    }

    #[test]
    fn dual_gradient_examples() {
        let s = Entropy::shannon(2);
        let g = dual_gradient(&s, &[2f64.ln(), 0.0]).unwrap();
        assert!(g.max_abs_diff(&d(&[2.0 / 3.0, 1.0 / 3.0])) < 1e-15);
        for c in [-3.0, 0.0, 17.5] {
            let g = dual_gradient(&Entropy::shannon(5), &[c; 5]).unwrap();
            assert!(g.max_abs_diff(&Distribution::uniform(5)) < 1e-15);
        }
        let g = dual_gradient(&Entropy::mixture(2, 0.5).unwrap(), &[0.0, 0.0]).unwrap();
        assert!(g.max_abs_diff(&Distribution::uniform(2)) < 1e-14);
    }

    #[test]
    fn dual_handles_negative_infinity() {
        for phi in all_kinds(3) {
            let r = entropic_dual(&phi, &[0.3, f64::NEG_INFINITY, -0.2]).unwrap();
            assert_eq!(r.maximizer[1], 0.0, "{}", phi.id());
        }
        assert!(entropic_dual(&Entropy::shannon(2), &[f64::NEG_INFINITY; 2]).is_err());
        assert!(entropic_dual(&Entropy::shannon(2), &[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn quadratic_dual_is_sparse_projection() {
        let r = entropic_dual(&Entropy::quadratic(3), &[2.0, 0.0, -1.0]).unwrap();
        assert!(r.maximizer.max_abs_diff(&Distribution::vertex(3, 0)) < 1e-15);
        // value = <e_0, z> - 1/2 = 1.5
        assert_abs_diff_eq!(r.value, 1.5, epsilon = 1e-14);
    }

    #[test]
    fn legendre_hessian_examples() {
        assert_abs_diff_eq!(
            legendre_counterexample_hessian(0.5).unwrap(),
            5.770_780_163_555_854,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            legendre_counterexample_hessian(0.9).unwrap(),
            14.888_746_575_732_41,
            epsilon = 1e-9
        );
        for q in [0.01, 0.2, 0.37] {
            assert_abs_diff_eq!(
                legendre_counterexample_hessian(q).unwrap(),
                legendre_counterexample_hessian(1.0 - q).unwrap(),
                epsilon = 1e-9
            );
        }
        assert!(legendre_counterexample_hessian(0.0).is_err());
        assert!(legendre_counterexample_hessian(1.0).is_err());
    }

    #[test]
    fn legendre_value_matches_derivative() {
        let phi = Entropy::legendre_counterexample();
        for q in [0.05, 0.3, 0.7, 0.95] {
            let h = 1e-5;
            let fd = (phi.value(&d(&[q + h, 1.0 - q - h])).unwrap()
                - phi.value(&d(&[q - h, 1.0 - q + h])).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(fd, legendre_derivative(q), epsilon = 1e-5);
        }
        // Finite at the vertices.
        let v = phi.value(&Distribution::vertex(2, 0)).unwrap();
        assert!(v.is_finite() && v > 0.0);
        assert_abs_diff_eq!(
            v,
            phi.value(&Distribution::vertex(2, 1)).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        for k in [2, 3, 4] {
            for phi in all_kinds(k) {
                for p in SimplexGrid::new(k, 6, 0.05).unwrap().points() {
                    let t = project_tilde(&p);
                    let g = phi.tilde_gradient(&t).unwrap();
                    for i in 0..k - 1 {
                        let h = 1e-6;
                        let mut up = t.coords().to_vec();
                        up[i] += h;
                        let mut dn = t.coords().to_vec();
                        dn[i] -= h;
                        let fd = (phi.tilde_value(&TildePoint::new(up).unwrap()).unwrap()
                            - phi.tilde_value(&TildePoint::new(dn).unwrap()).unwrap())
                            / (2.0 * h);
                        assert!(
                            (fd - g[i]).abs() <= 1e-5,
                            "{} at {:?}: {fd} vs {}",
                            phi.id(),
                            p,
                            g[i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hessians_are_positive_semidefinite() {
        for k in [2, 3] {
            for phi in all_kinds(k) {
                for p in SimplexGrid::new(k, 11, 1e-3).unwrap().points() {
                    let h = phi.tilde_hessian(&project_tilde(&p)).unwrap();
                    let min = h.symmetric_eigen().eigenvalues.min();
                    assert!(min >= -1e-12, "{}: {min}", phi.id());
                    if phi.kind() != EntropyKind::Quadratic {
                        assert!(min > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn shannon_hessian_inverse_identity() {
        for k in [2, 3, 5] {
            let s = Entropy::shannon(k);
            for p in SimplexGrid::new(k, 7, 1e-3).unwrap().points() {
                let t = project_tilde(&p);
                let inv = s.tilde_hessian(&t).unwrap().try_inverse().unwrap();
                let diff = (inv - shannon_hessian_inverse(&t)).abs().max();
                assert!(diff <= 1e-9, "{diff}");
            }
        }
    }

    #[test]
    fn dual_optimality_against_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in [2, 3] {
            let grid = SimplexGrid::new(k, 21, 1e-4).unwrap().points();
            for phi in all_kinds(k) {
                for _ in 0..10 {
                    let z: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let r = entropic_dual(&phi, &z).unwrap();
                    let direct =
                        dot_zero_inf(r.maximizer.weights(), &z) - phi.value(&r.maximizer).unwrap();
                    assert_abs_diff_eq!(direct, r.value, epsilon = 1e-10);
                    for q in &grid {
                        let cand = dot_zero_inf(q.weights(), &z) - phi.value(q).unwrap();
                        assert!(cand <= r.value + 1e-8, "{}: {cand} > {}", phi.id(), r.value);
                    }
                }
            }
        }
    }

    #[test]
    fn shannon_fenchel_identities() {
        let s = Entropy::shannon(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let q =
                Distribution::from_masses((0..4).map(|_| rng.random_range(0.05..1.0)).collect())
                    .unwrap();
            let g = s.full_gradient(&q).unwrap();
            let r = entropic_dual(&s, &g).unwrap();
            let expect = dot_zero_inf(q.weights(), &g) - s.value(&q).unwrap();
            assert_abs_diff_eq!(r.value, expect, epsilon = 1e-10);
            assert!(r.maximizer.max_abs_diff(&q) <= 1e-9);

            let c = rng.random_range(-5.0..5.0);
            let shifted: Vec<f64> = g.iter().map(|v| v + c).collect();
            assert_abs_diff_eq!(
                entropic_dual(&s, &shifted).unwrap().value,
                r.value + c,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn mirror_ascent_agrees_with_exact_solvers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cases = [
            Entropy::mixture(3, 0.5).unwrap(),
            Entropy::mixture(2, 0.3).unwrap(),
            Entropy::legendre_counterexample(),
            Entropy::shannon(4),
        ];
        for phi in cases {
            for _ in 0..5 {
                let z: Vec<f64> = (0..phi.dim_full())
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect();
                let exact = entropic_dual(&phi, &z).unwrap();
                let ma = entropic_dual_mirror_ascent(&phi, &z, None).unwrap();
                assert_abs_diff_eq!(exact.value, ma.value, epsilon = 1e-7);
                assert!(
                    exact.maximizer.max_abs_diff(&ma.maximizer) < 1e-5,
                    "{}",
                    phi.id()
                );
            }
        }
    }

    #[test]
    fn mirror_ascent_reports_cap() {
        let err = entropic_dual_mirror_ascent(
            &Entropy::mixture(3, 0.01).unwrap(),
            &[1.0, 0.0, -1.0],
            Some(3),
        );
        assert!(matches!(err, Err(Error::Solver(_))));
    }

    #[test]
    fn from_id_round_trip() {
        for phi in all_kinds(2) {
            assert_eq!(Entropy::from_id(&phi.id(), 2).unwrap(), phi);
        }
        assert!(Entropy::from_id("legendre", 3).is_err());
        assert!(Entropy::from_id("mixture", 3).is_err());
        assert!(Entropy::from_id("tsallis", 3).is_err());
    }
}
