//! Online aggregation of expert advice: the Aggregating Algorithm (AA), its
//! entropy-generalized form (GAA), the adaptive variant with correction
//! vectors (AGAA) and an AA meta-learner over two component learners.
//!
//! Learner states are values: every update returns a new state.

use serde::{Deserialize, Serialize};

use crate::entropies::{dual_gradient, Entropy};
use crate::losses::{GeneralizedPrediction, LossSpec};
use crate::mixability::{loss_table, mix};
use crate::simplex::{dot_zero_inf, Distribution};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Algorithm {
    AA,
    GAA,
    AGAA,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::AA => "AA",
            Algorithm::GAA => "GAA",
            Algorithm::AGAA => "AGAA",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub algorithm: Algorithm,
    pub entropy: Entropy,
    pub eta: f64,
    /// Prior weights.
    pub q0: Distribution,
    /// Current weights `q^t`.
    pub q: Distribution,
    /// `-eta * sum_s (l^s + v^s)`.
    pub dual_iterate: Vec<f64>,
    pub correction_history: Vec<Vec<f64>>,
    pub loss_history: Vec<Vec<f64>>,
    pub round: usize,
}

impl LearnerState {
    pub fn new(algorithm: Algorithm, entropy: Entropy, eta: f64, q0: Distribution) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {eta} must be positive"
            )));
        }
        if q0.dim() != entropy.dim_full() {
            return Err(Error::Dimension(format!(
                "prior over {} experts for an entropy over {}",
                q0.dim(),
                entropy.dim_full()
            )));
        }
        if algorithm == Algorithm::AA
            && !matches!(entropy.kind(), crate::entropies::EntropyKind::Shannon)
        {
            return Err(Error::Config(
                "AA is defined with the Shannon entropy".into(),
            ));
        }
        Ok(Self {
            algorithm,
            entropy,
            eta,
            q: q0.clone(),
            dual_iterate: vec![0.0; q0.dim()],
            q0,
            correction_history: Vec::new(),
            loss_history: Vec::new(),
            round: 0,
        })
    }

    /// AA with a uniform prior.
    pub fn aa(k: usize, eta: f64) -> Result<Self> {
        Self::new(
            Algorithm::AA,
            Entropy::shannon(k),
            eta,
            Distribution::uniform(k),
        )
    }

    pub fn gaa(entropy: Entropy, eta: f64, q0: Distribution) -> Result<Self> {
        Self::new(Algorithm::GAA, entropy, eta, q0)
    }

    pub fn agaa(entropy: Entropy, eta: f64, q0: Distribution) -> Result<Self> {
        Self::new(Algorithm::AGAA, entropy, eta, q0)
    }

    pub fn n_experts(&self) -> usize {
        self.q.dim()
    }

    /// Merged prediction for this round's expert predictions.
    pub fn predict(&self, experts: &[Distribution], loss: &LossSpec) -> Result<Distribution> {
        match self.algorithm {
            Algorithm::AA => aa_predict(self, experts, loss),
            Algorithm::GAA | Algorithm::AGAA => gaa_predict(self, experts, loss),
        }
    }

    fn advance(&self, q: Distribution, losses: &[f64], correction: Vec<f64>) -> Self {
        let dual_iterate = self
            .dual_iterate
            .iter()
            .zip(losses.iter().zip(&correction))
            .map(|(&th, (&l, &v))| {
                if l == f64::INFINITY || th == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    th - self.eta * (l + v)
                }
            })
            .collect();
        let mut correction_history = self.correction_history.clone();
        correction_history.push(correction);
        let mut loss_history = self.loss_history.clone();
        loss_history.push(losses.to_vec());
        Self {
            algorithm: self.algorithm,
            entropy: self.entropy,
            eta: self.eta,
            q0: self.q0.clone(),
            q,
            dual_iterate,
            correction_history,
            loss_history,
            round: self.round + 1,
        }
    }
}

fn check_experts(state: &LearnerState, experts: &[Distribution], loss: &LossSpec) -> Result<()> {
    if experts.len() != state.n_experts() {
        return Err(Error::LengthMismatch {
            left: experts.len(),
            right: state.n_experts(),
        });
    }
    if let Some(a) = experts.iter().find(|a| a.dim() != loss.n_outcomes()) {
        return Err(Error::Dimension(format!(
            "expert predicts over {} outcomes, loss has {}",
            a.dim(),
            loss.n_outcomes()
        )));
    }
    Ok(())
}

fn check_losses(state: &LearnerState, losses: &[f64]) -> Result<()> {
    if losses.len() != state.n_experts() {
        return Err(Error::LengthMismatch {
            left: losses.len(),
            right: state.n_experts(),
        });
    }
    if losses.iter().any(|l| l.is_nan() || *l < 0.0) {
        return Err(Error::Domain("expert losses must be nonnegative".into()));
    }
    Ok(())
}

/// Substitutes `s_x = -log <q, exp(-eta l_x(A))> / eta`.
pub fn aa_predict(
    state: &LearnerState,
    experts: &[Distribution],
    loss: &LossSpec,
) -> Result<Distribution> {
    check_experts(state, experts, loss)?;
    let shannon = Entropy::shannon(state.n_experts());
    substitute_mix(&shannon, state.eta, &state.q, experts, loss)
}

/// Substitutes `[Mix^eta_phi(l_x(A), q)]_x`.
pub fn gaa_predict(
    state: &LearnerState,
    experts: &[Distribution],
    loss: &LossSpec,
) -> Result<Distribution> {
    check_experts(state, experts, loss)?;
    substitute_mix(&state.entropy, state.eta, &state.q, experts, loss)
}

fn substitute_mix(
    phi: &Entropy,
    eta: f64,
    q: &Distribution,
    experts: &[Distribution],
    loss: &LossSpec,
) -> Result<Distribution> {
    let table = loss_table(loss, experts)?;
    let values = table
        .iter()
        .map(|row| mix(phi, eta, row, q).map(|(v, _)| v))
        .collect::<Result<Vec<_>>>()?;
    loss.substitute(&GeneralizedPrediction::new(values)?)
}

/// Multiplicative weights: `q = softmax(log q0 - eta * cumulative losses)`.
pub fn aa_update(state: &LearnerState, expert_losses: &[f64]) -> Result<LearnerState> {
    check_losses(state, expert_losses)?;
    let zero = vec![0.0; expert_losses.len()];
    let next = state.advance(state.q.clone(), expert_losses, zero);
    let logs: Vec<f64> = state
        .q0
        .weights()
        .iter()
        .zip(&next.dual_iterate)
        .map(|(&w, &th)| {
            if w == 0.0 {
                f64::NEG_INFINITY
            } else {
                w.ln() + th
            }
        })
        .collect();
    let q = Distribution::from_log_masses(&logs).map_err(|_| {
        Error::Degenerate("every expert with positive weight has infinite loss".into())
    })?;
    Ok(LearnerState { q, ..next })
}

/// Mirror step `q^t = grad phi*(grad phi(q^{t-1}) - eta * (l + v))`.
fn mirror_step(
    state: &LearnerState,
    expert_losses: &[f64],
    correction: &[f64],
) -> Result<Distribution> {
    let grad = state.entropy.full_gradient(&state.q)?;
    let z: Vec<f64> = grad
        .iter()
        .zip(expert_losses.iter().zip(correction))
        .map(|(&g, (&l, &v))| {
            if l == f64::INFINITY || g == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                g - state.eta * (l + v)
            }
        })
        .collect();
    if z.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Degenerate(
            "every expert with positive weight has infinite loss".into(),
        ));
    }
    dual_gradient(&state.entropy, &z)
}

/// `argmin_mu <mu, l> + D_phi(mu, q) / eta` through the entropic dual.
pub fn gaa_update(state: &LearnerState, expert_losses: &[f64]) -> Result<LearnerState> {
    check_losses(state, expert_losses)?;
    let zero = vec![0.0; expert_losses.len()];
    let q = mirror_step(state, expert_losses, &zero)?;
    Ok(state.advance(q, expert_losses, zero))
}

/// Source of the AGAA correction vectors.
pub trait CorrectionProtocol: Send + Sync {
    /// `v^t` for round `t >= 1`, given the expert losses of rounds `1..=t`.
    fn correction(&self, t: usize, loss_history: &[Vec<f64>]) -> Vec<f64>;

    fn id(&self) -> String;
}

/// Built-in correction protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Correction {
    Zero,
    /// `v^t = -(alpha / t) * sum_{s <= t} l^s`.
    AverageLoss {
        alpha: f64,
    },
    Constant {
        value: Vec<f64>,
    },
}

impl Correction {
    /// Parses `zero`, `average-loss:<alpha>`.
    pub fn from_id(id: &str) -> Result<Self> {
        match id.split_once(':') {
            None if id == "zero" => Ok(Correction::Zero),
            Some(("average-loss", a)) => {
                let alpha = a
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("correction `{id}`: {e}")))?;
                if !alpha.is_finite() {
                    return Err(Error::Config(format!(
                        "correction `{id}`: alpha must be finite"
                    )));
                }
                Ok(Correction::AverageLoss { alpha })
            }
            _ => Err(Error::Config(format!("unknown correction `{id}`"))),
        }
    }
}

impl CorrectionProtocol for Correction {
    fn correction(&self, t: usize, loss_history: &[Vec<f64>]) -> Vec<f64> {
        let k = loss_history.first().map_or(0, Vec::len);
        match self {
            Correction::Zero => vec![0.0; k],
            Correction::Constant { value } => value.clone(),
            Correction::AverageLoss { alpha } => {
                let mut sum = vec![0.0; k];
                for row in &loss_history[..t] {
                    sum.iter_mut().zip(row).for_each(|(s, l)| *s += l);
                }
                sum.iter().map(|s| -alpha * s / t as f64).collect()
            }
        }
    }

    fn id(&self) -> String {
        match self {
            Correction::Zero => "zero".into(),
            Correction::AverageLoss { alpha } => format!("average-loss:{alpha}"),
            Correction::Constant { value } => format!("constant:{value:?}"),
        }
    }
}

/// One AGAA round: predict with Mix at `q^{t-1}`, observe the outcome, then
/// take the corrected mirror step.
pub fn agaa_step(
    state: &LearnerState,
    experts: &[Distribution],
    outcome: usize,
    loss: &LossSpec,
    protocol: &dyn CorrectionProtocol,
) -> Result<(Distribution, LearnerState)> {
    let prediction = gaa_predict(state, experts, loss)?;
    let losses = experts
        .iter()
        .map(|a| loss.loss(outcome, a))
        .collect::<Result<Vec<_>>>()?;
    let next = agaa_update(state, &losses, protocol)?;
    Ok((prediction, next))
}

/// Corrected mirror step with `v^t` drawn from `protocol`.
pub fn agaa_update(
    state: &LearnerState,
    expert_losses: &[f64],
    protocol: &dyn CorrectionProtocol,
) -> Result<LearnerState> {
    check_losses(state, expert_losses)?;
    let mut history = state.loss_history.clone();
    history.push(expert_losses.to_vec());
    let v = protocol.correction(state.round + 1, &history);
    if v.len() != expert_losses.len() {
        return Err(Error::LengthMismatch {
            left: v.len(),
            right: expert_losses.len(),
        });
    }
    let q = mirror_step(state, expert_losses, &v)?;
    Ok(state.advance(q, expert_losses, v))
}

/// `sum_t (v^t_theta - <v^t, q^t>)` over the supplied rounds.
///
/// The regret bound at horizon `T` uses rounds `1..T-1`, so callers pass the
/// first `T - 1` entries.
pub fn delta_regret(corrections: &[Vec<f64>], qs: &[Distribution], theta: usize) -> Result<f64> {
    if corrections.len() != qs.len() {
        return Err(Error::LengthMismatch {
            left: corrections.len(),
            right: qs.len(),
        });
    }
    let mut total = 0.0;
    for (v, q) in corrections.iter().zip(qs) {
        if theta >= v.len() {
            return Err(Error::Index {
                index: theta,
                len: v.len(),
            });
        }
        if v.len() != q.dim() {
            return Err(Error::LengthMismatch {
                left: v.len(),
                right: q.dim(),
            });
        }
        total += v[theta] - dot_zero_inf(q.weights(), v);
    }
    Ok(total)
}

/// One round of the game: expert predictions and the realized outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRound {
    pub experts: Vec<Distribution>,
    pub outcome: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub expert_predictions: Vec<Distribution>,
    pub learner_prediction: Distribution,
    pub outcome: usize,
    pub expert_losses: Vec<f64>,
    pub learner_loss: f64,
    /// Weights after the round's update.
    pub weights: Distribution,
    pub correction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTrace {
    pub algorithm: String,
    pub rounds: Vec<RoundRecord>,
    pub cumulative_expert_losses: Vec<f64>,
    pub cumulative_learner_loss: f64,
}

impl GameTrace {
    fn new(algorithm: impl Into<String>, k: usize) -> Self {
        Self {
            algorithm: algorithm.into(),
            rounds: Vec::new(),
            cumulative_expert_losses: vec![0.0; k],
            cumulative_learner_loss: 0.0,
        }
    }

    fn push(&mut self, record: RoundRecord) {
        self.cumulative_learner_loss += record.learner_loss;
        self.cumulative_expert_losses
            .iter_mut()
            .zip(&record.expert_losses)
            .for_each(|(c, l)| *c += l);
        self.rounds.push(record);
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Cumulative learner loss after each round.
    pub fn learner_curve(&self) -> Vec<f64> {
        self.rounds
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r.learner_loss;
                Some(*acc)
            })
            .collect()
    }

    /// Cumulative loss of expert `theta` after each round.
    pub fn expert_curve(&self, theta: usize) -> Vec<f64> {
        self.rounds
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r.expert_losses[theta];
                Some(*acc)
            })
            .collect()
    }

    /// Index of the expert with the smallest final cumulative loss (lowest
    /// index on ties).
    pub fn best_expert(&self) -> usize {
        self.cumulative_expert_losses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map_or(0, |(i, _)| i)
    }

    /// `Loss_learner(T) - min_theta Loss_theta(T)`.
    pub fn regret_vs_best(&self) -> f64 {
        self.cumulative_learner_loss - self.cumulative_expert_losses[self.best_expert()]
    }

    /// `Delta R_theta(T)` for `T = 1..=len`, each summing rounds `1..T-1`.
    pub fn delta_regret_curve(&self, theta: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for r in &self.rounds {
            out.push(acc);
            acc += r.correction[theta] - dot_zero_inf(r.weights.weights(), &r.correction);
        }
        out
    }

    /// `Delta R_theta(T)` at the final round.
    pub fn delta_regret(&self, theta: usize) -> Result<f64> {
        let t = self.len().saturating_sub(1);
        let corrections: Vec<Vec<f64>> = self.rounds[..t]
            .iter()
            .map(|r| r.correction.clone())
            .collect();
        let qs: Vec<Distribution> = self.rounds[..t].iter().map(|r| r.weights.clone()).collect();
        delta_regret(&corrections, &qs, theta)
    }
}

/// Runs `state` through `game`; AGAA draws its corrections from `protocol`
/// (ignored by AA and GAA).
pub fn play(
    state: &LearnerState,
    loss: &LossSpec,
    protocol: &dyn CorrectionProtocol,
    game: &[GameRound],
) -> Result<(GameTrace, LearnerState)> {
    let mut trace = GameTrace::new(state.algorithm.name(), state.n_experts());
    let mut state = state.clone();
    for round in game {
        let prediction = state.predict(&round.experts, loss)?;
        let expert_losses = round
            .experts
            .iter()
            .map(|a| loss.loss(round.outcome, a))
            .collect::<Result<Vec<_>>>()?;
        let learner_loss = loss.loss(round.outcome, &prediction)?;
        state = match state.algorithm {
            Algorithm::AA => aa_update(&state, &expert_losses)?,
            Algorithm::GAA => gaa_update(&state, &expert_losses)?,
            Algorithm::AGAA => agaa_update(&state, &expert_losses, protocol)?,
        };
        trace.push(RoundRecord {
            expert_predictions: round.experts.clone(),
            learner_prediction: prediction,
            outcome: round.outcome,
            expert_losses,
            learner_loss,
            weights: state.q.clone(),
            correction: state.correction_history.last().cloned().unwrap_or_default(),
        });
    }
    Ok((trace, state))
}

/// AA over two meta-experts whose predictions are the learner predictions
/// recorded in `first` and `second`.
pub fn meta_aa(
    first: &GameTrace,
    second: &GameTrace,
    loss: &LossSpec,
    eta: f64,
) -> Result<GameTrace> {
    if first.len() != second.len() {
        return Err(Error::LengthMismatch {
            left: first.len(),
            right: second.len(),
        });
    }
    if let Some(t) = first
        .rounds
        .iter()
        .zip(&second.rounds)
        .position(|(a, b)| a.outcome != b.outcome)
    {
        return Err(Error::Config(format!(
            "component traces disagree on the outcome of round {}",
            t + 1
        )));
    }
    let game: Vec<GameRound> = first
        .rounds
        .iter()
        .zip(&second.rounds)
        .map(|(a, b)| GameRound {
            experts: vec![a.learner_prediction.clone(), b.learner_prediction.clone()],
            outcome: a.outcome,
        })
        .collect();
    let (mut trace, _) = play(&LearnerState::aa(2, eta)?, loss, &Correction::Zero, &game)?;
    trace.algorithm = format!("META({},{})", first.algorithm, second.algorithm);
    Ok(trace)
}
