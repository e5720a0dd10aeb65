//! Proper losses on the outcome simplex, their Bayes risks and substitution
//! functions.
//!
//! A loss assigns to every outcome `x` and action `p` (a distribution over the
//! outcomes) a value in `[0, +inf]`. All losses here are proper, so the Bayes
//! risk is `<p, l(p)>`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::simplex::{amalg, dot_zero_inf, Distribution, SimplexGrid, TildePoint, DEFAULT_EPSILON};
use crate::{Error, Result};

/// Excess tolerated by [`LossSpec::substitute`] before reporting infeasibility.
pub const SUBSTITUTION_TOL: f64 = 1e-6;
/// Central finite-difference step for Bayes-risk Hessians.
pub const FD_STEP: f64 = 1e-5;
/// Closest a Hessian evaluation point may get to the simplex boundary.
pub const HESSIAN_INTERIOR: f64 = 1e-6;
const PROPERNESS_RESOLUTION: usize = 13;
const PROPERNESS_TOL: f64 = 1e-9;
const SEARCH_TOL: f64 = 1e-9;
const SUBGRADIENT_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Brier,
    Log,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Loss evaluator `(outcome, action) -> loss`.
pub type Evaluator = Arc<dyn Fn(usize, &Distribution) -> f64 + Send + Sync>;

/// Vector of candidate loss values, one per outcome (entries may be `+inf`).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedPrediction {
    values: Vec<f64>,
}

impl GeneralizedPrediction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Domain(
                "generalized prediction entries must be >= 0 (inf allowed)".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Brier loss `sum_y (1{x = y} - p_y)^2`.
pub fn brier_loss(x: usize, p: &Distribution) -> Result<f64> {
    check_outcome(x, p.dim())?;
    Ok(p.weights()
        .iter()
        .enumerate()
        .map(|(y, &py)| {
            let d = if y == x { 1.0 - py } else { py };
            d * d
        })
        .sum())
}

/// Log loss `-log p_x`, `+inf` when `p_x = 0`.
pub fn log_loss(x: usize, p: &Distribution) -> Result<f64> {
    check_outcome(x, p.dim())?;
    Ok(-p[x].ln())
}

fn check_outcome(x: usize, n: usize) -> Result<()> {
    if x >= n {
        return Err(Error::Index { index: x, len: n });
    }
    Ok(())
}

/// An `n`-outcome proper loss.
#[derive(Clone)]
pub struct LossSpec {
    n_outcomes: usize,
    kind: LossKind,
    name: String,
    evaluator: Option<Evaluator>,
    hessian_mode: HessianMode,
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossSpec")
            .field("name", &self.name)
            .field("n_outcomes", &self.n_outcomes)
            .field("kind", &self.kind)
            .field("hessian_mode", &self.hessian_mode)
            .finish()
    }
}

impl LossSpec {
    pub fn brier(n_outcomes: usize) -> Result<Self> {
        Self::builtin(LossKind::Brier, "brier", n_outcomes)
    }

    pub fn log(n_outcomes: usize) -> Result<Self> {
        Self::builtin(LossKind::Log, "log", n_outcomes)
    }

    fn builtin(kind: LossKind, name: &str, n_outcomes: usize) -> Result<Self> {
        if n_outcomes < 2 {
            return Err(Error::Config(format!("{name} loss needs >= 2 outcomes")));
        }
        Ok(Self {
            n_outcomes,
            kind,
            name: name.into(),
            evaluator: None,
            hessian_mode: HessianMode::Analytic,
        })
    }

    /// Wraps a user evaluator. Properness is checked on an interior grid of
    /// resolution 13; improper losses are rejected with a config error.
    pub fn custom<F>(name: impl Into<String>, n_outcomes: usize, evaluator: F) -> Result<Self>
    where
        F: Fn(usize, &Distribution) -> f64 + Send + Sync + 'static,
    {
        if n_outcomes < 2 {
            return Err(Error::Config("custom loss needs >= 2 outcomes".into()));
        }
        let spec = Self {
            n_outcomes,
            kind: LossKind::Custom,
            name: name.into(),
            evaluator: Some(Arc::new(evaluator)),
            hessian_mode: HessianMode::FiniteDifference,
        };
        let grid = SimplexGrid::new(n_outcomes, PROPERNESS_RESOLUTION, DEFAULT_EPSILON)?;
        if let Some((p, q, gap)) = spec.properness_violation(&grid) {
            return Err(Error::Config(format!(
                "loss {} is not proper: <p, l(q)> undercuts the Bayes risk by {gap:.3e} at p={:?}, q={:?}",
                spec.name,
                p.weights(),
                q.weights()
            )));
        }
        Ok(spec)
    }

    /// Selects how [`bayes_hessian_tilde`](Self::bayes_hessian_tilde) is computed.
    /// Custom losses only support finite differences.
    pub fn with_hessian_mode(mut self, mode: HessianMode) -> Self {
        self.hessian_mode = if self.kind == LossKind::Custom {
            HessianMode::FiniteDifference
        } else {
            mode
        };
        self
    }

    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn hessian_mode(&self) -> HessianMode {
        self.hessian_mode
    }

    fn check_action(&self, p: &Distribution) -> Result<()> {
        if p.dim() != self.n_outcomes {
            return Err(Error::Dimension(format!(
                "action has {} weights, loss has {} outcomes",
                p.dim(),
                self.n_outcomes
            )));
        }
        Ok(())
    }

    /// `l_x(p)`.
    pub fn loss(&self, x: usize, p: &Distribution) -> Result<f64> {
        self.check_action(p)?;
        check_outcome(x, self.n_outcomes)?;
        Ok(self.eval(x, p))
    }

    fn eval(&self, x: usize, p: &Distribution) -> f64 {
        match self.kind {
            LossKind::Brier => brier_loss(x, p).expect("outcome checked"),
            LossKind::Log => log_loss(x, p).expect("outcome checked"),
            LossKind::Custom => (self.evaluator.as_ref().expect("custom evaluator"))(x, p),
        }
    }

    /// The loss vector `(l_x(p))_x`.
    pub fn losses(&self, p: &Distribution) -> Result<Vec<f64>> {
        self.check_action(p)?;
        Ok((0..self.n_outcomes).map(|x| self.eval(x, p)).collect())
    }

    /// `<p, l(p)>`, with `0 * inf = 0`.
    pub fn bayes_risk(&self, p: &Distribution) -> Result<f64> {
        let l = self.losses(p)?;
        Ok(dot_zero_inf(p.weights(), &l))
    }

    /// Largest violation of `<p, l(p)> <= <p, l(q)> + tol` over grid pairs.
    pub fn properness_violation(
        &self,
        grid: &SimplexGrid,
    ) -> Option<(Distribution, Distribution, f64)> {
        let pts = grid.points();
        let table: Vec<Vec<f64>> = pts.iter().map(|q| self.losses(q).expect("dims")).collect();
        let mut worst: Option<(usize, usize, f64)> = None;
        for (i, p) in pts.iter().enumerate() {
            let own = dot_zero_inf(p.weights(), &table[i]);
            for (j, lq) in table.iter().enumerate() {
                let gap = own - dot_zero_inf(p.weights(), lq);
                if gap > PROPERNESS_TOL && worst.is_none_or(|w| gap > w.2) {
                    worst = Some((i, j, gap));
                }
            }
        }
        worst.map(|(i, j, g)| (pts[i].clone(), pts[j].clone(), g))
    }

    fn tilde_bayes_risk(&self, u: &[f64]) -> f64 {
        let p = amalg(&TildePoint::new(u.to_vec()).expect("interior step")).expect("interior step");
        self.bayes_risk(&p).expect("dims")
    }

    /// Hessian of the Bayes risk in tilde coordinates, an `(n-1) x (n-1)`
    /// negative semidefinite matrix.
    pub fn bayes_hessian_tilde(&self, p_tilde: &TildePoint) -> Result<DMatrix<f64>> {
        if p_tilde.dim_full() != self.n_outcomes {
            return Err(Error::Dimension(format!(
                "tilde point of full dimension {} for a loss with {} outcomes",
                p_tilde.dim_full(),
                self.n_outcomes
            )));
        }
        let min = p_tilde.min_implied();
        if min < HESSIAN_INTERIOR {
            return Err(Error::Domain(format!(
                "Hessian requested at {:?}, closer than {HESSIAN_INTERIOR} to the boundary",
                p_tilde.coords()
            )));
        }
        match (self.kind, self.hessian_mode) {
            (LossKind::Brier, HessianMode::Analytic) => Ok(brier_hessian(self.n_outcomes)),
            (LossKind::Log, HessianMode::Analytic) => Ok(log_hessian(p_tilde)),
            _ => Ok(self.fd_hessian(p_tilde)),
        }
    }

    fn fd_hessian(&self, p_tilde: &TildePoint) -> DMatrix<f64> {
        let x = p_tilde.coords();
        let d = x.len();
        // Each probe moves the residual by at most 2h.
        let h = FD_STEP.min(p_tilde.min_implied() / 4.0);
        let f = |dx: &[(usize, f64)]| {
            let mut u = x.to_vec();
            for &(i, s) in dx {
                u[i] += s;
            }
            self.tilde_bayes_risk(&u)
        };
        let f0 = f(&[]);
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..d {
            hess[(i, i)] = (f(&[(i, h)]) - 2.0 * f0 + f(&[(i, -h)])) / (h * h);
            for j in 0..i {
                let v = (f(&[(i, h), (j, h)]) - f(&[(i, h), (j, -h)]) - f(&[(i, -h), (j, h)])
                    + f(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        hess
    }

    /// Maps a generalized prediction `s` to an action `a` with
    /// `l_x(a) <= s_x` for every outcome, up to [`SUBSTITUTION_TOL`].
    ///
    /// Log loss uses `a_x = exp(-s_x) / Z`. Brier solves the min-max problem
    /// `min_p max_x (l_x(p) - s_x)` exactly by equalizing the active outcomes.
    /// Custom losses run a golden-section search (nested for three outcomes)
    /// or projected subgradient descent for more outcomes.
    pub fn substitute(&self, s: &GeneralizedPrediction) -> Result<Distribution> {
        if s.values().len() != self.n_outcomes {
            return Err(Error::Dimension(format!(
                "generalized prediction has {} entries for {} outcomes",
                s.values().len(),
                self.n_outcomes
            )));
        }
        let s = s.values();
        if s.iter().all(|v| v.is_infinite()) {
            return Ok(Distribution::uniform(self.n_outcomes));
        }
        let action = match self.kind {
            LossKind::Log => {
                Distribution::from_log_masses(&s.iter().map(|v| -v).collect::<Vec<_>>())?
            }
            LossKind::Brier => brier_equalizer(s),
            LossKind::Custom => self.minmax_search(s),
        };
        let excess = self.minmax_excess(&action, s);
        if excess > SUBSTITUTION_TOL {
            return Err(Error::Infeasible { excess });
        }
        Ok(action)
    }

    /// `max_x (l_x(a) - s_x)` over outcomes with finite `s_x`.
    pub fn minmax_excess(&self, a: &Distribution, s: &[f64]) -> f64 {
        s.iter()
            .enumerate()
            .filter(|(_, sx)| sx.is_finite())
            .map(|(x, sx)| self.eval(x, a) - sx)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn minmax_search(&self, s: &[f64]) -> Distribution {
        let n = self.n_outcomes;
        let objective = |w: &[f64]| -> f64 {
            match Distribution::from_masses(w.to_vec()) {
                Ok(p) => self.minmax_excess(&p, s),
                Err(_) => f64::INFINITY,
            }
        };
        match n {
            2 => {
                let p0 = golden_min(0.0, 1.0, |t| objective(&[t, 1.0 - t])).0;
                Distribution::from_masses(vec![p0, 1.0 - p0]).expect("valid")
            }
            3 => {
                let inner = |p0: f64| {
                    golden_min(0.0, 1.0 - p0, |p1| {
                        objective(&[p0, p1, (1.0 - p0 - p1).max(0.0)])
                    })
                };
                let p0 = golden_min(0.0, 1.0, |p0| inner(p0).1).0;
                let p1 = inner(p0).0;
                Distribution::from_masses(vec![p0, p1, (1.0 - p0 - p1).max(0.0)]).expect("valid")
            }
            _ => self.projected_subgradient(s),
        }
    }

    fn projected_subgradient(&self, s: &[f64]) -> Distribution {
        let n = self.n_outcomes;
        let mut p = vec![1.0 / n as f64; n];
        let eval = |p: &[f64]| {
            self.minmax_excess(&Distribution::from_masses(p.to_vec()).expect("simplex"), s)
        };
        let mut best = (eval(&p), p.clone());
        for it in 0..SUBGRADIENT_CAP {
            let dist = Distribution::from_masses(p.clone()).expect("simplex");
            let (xstar, val) = s
                .iter()
                .enumerate()
                .filter(|(_, sx)| sx.is_finite())
                .map(|(x, sx)| (x, self.eval(x, &dist) - sx))
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            if val < best.0 {
                best = (val, p.clone());
            }
            if val <= -SEARCH_TOL {
                break;
            }
            // Finite-difference gradient of the active loss, projected back.
            let h = 1e-7;
            let grad: Vec<f64> = (0..n)
                .map(|i| {
                    let mut up = p.clone();
                    up[i] += h;
                    let mut dn = p.clone();
                    dn[i] = (dn[i] - h).max(0.0);
                    let lu =
                        self.eval(xstar, &Distribution::from_masses(up.clone()).expect("mass"));
                    let ld =
                        self.eval(xstar, &Distribution::from_masses(dn.clone()).expect("mass"));
                    (lu - ld) / (up[i] - dn[i])
                })
                .collect();
            let mean = grad.iter().sum::<f64>() / n as f64;
            let g: Vec<f64> = grad.iter().map(|v| v - mean).collect();
            let gn2: f64 = g.iter().map(|v| v * v).sum();
            if gn2 < 1e-30 {
                break;
            }
            // Polyak step towards the target level 0.
            let step = (val.max(0.0) + 1.0 / (it as f64 + 10.0)) / gn2;
            let moved: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            p = project_simplex(&moved);
        }
        Distribution::from_masses(best.1).expect("simplex")
    }
}

fn brier_hessian(n: usize) -> DMatrix<f64> {
    let d = n - 1;
    DMatrix::from_fn(d, d, |i, j| if i == j { -4.0 } else { -2.0 })
}

/// `-(diag(1/p~) + 11^T / p_n)`, i.e. `-(X_p)^{-1} (diag p~)^{-1}` with
/// `X_p = I - 1 p~^T`.
pub(crate) fn log_hessian(p_tilde: &TildePoint) -> DMatrix<f64> {
    let u = p_tilde.coords();
    let last = p_tilde.residual();
    let d = u.len();
    DMatrix::from_fn(d, d, |i, j| {
        let diag = if i == j { 1.0 / u[i] } else { 0.0 };
        -(diag + 1.0 / last)
    })
}

/// Exact minimizer of `max_x (|p|^2 + 1 - 2 p_x - s_x)` over the simplex:
/// `p_x = max(0, (c - s_x) / 2)` with `c` fixed by `sum p = 1`.
fn brier_equalizer(s: &[f64]) -> Distribution {
    let mut order: Vec<usize> = (0..s.len()).filter(|&x| s[x].is_finite()).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
    let mut prefix = 0.0;
    let mut level = f64::NAN;
    for (j, &x) in order.iter().enumerate() {
        prefix += s[x];
        let c = (2.0 + prefix) / (j + 1) as f64;
        level = c;
        let next_ok = order.get(j + 1).is_none_or(|&y| c <= s[y]);
        if c > s[x] && next_ok {
            break;
        }
    }
    let masses: Vec<f64> = s
        .iter()
        .map(|&sx| {
            if sx.is_finite() {
                ((level - sx) / 2.0).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    Distribution::from_masses(masses).expect("equalizer has positive mass")
}

/// Golden-section minimization on `[lo, hi]`; returns `(argmin, min)`, the
/// endpoints included as candidates.
fn golden_min(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > SEARCH_TOL * 1e-3 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(lo, f(lo)), (mid, f(mid)), (hi, f(hi))].into_iter().fold(
        (mid, f64::INFINITY),
        |best, cand| if cand.1 < best.1 { cand } else { best },
    )
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}
