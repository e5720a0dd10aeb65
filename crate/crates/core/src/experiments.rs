//! Scenario harness: the two-expert Brier example, seeded synthetic games and
//! bookmaker-odds games, with per-round CSV and JSON summary output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp1};
use serde::{Deserialize, Serialize};

use crate::aggregation::{meta_aa, play, Correction, GameRound, GameTrace, LearnerState};
use crate::entropies::Entropy;
use crate::exec::{self, Execution};
use crate::losses::LossSpec;
use crate::mixability::{
    certify_phi_mixable, mixability_constant, regret_bound, MixabilityCertificate, REFINEMENT_TOL,
};
use crate::odds::{ingest_odds_csv, ColumnMap};
use crate::simplex::{Distribution, SimplexGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Example1,
    SyntheticRandom,
    OddsDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerId {
    AA,
    GAA,
    AGAA,
    MetaAAAGAA,
}

impl LearnerId {
    pub fn file_stem(self) -> &'static str {
        match self {
            LearnerId::AA => "aa",
            LearnerId::GAA => "gaa",
            LearnerId::AGAA => "agaa",
            LearnerId::MetaAAAGAA => "meta_aa_agaa",
        }
    }
}

fn default_algorithms() -> Vec<LearnerId> {
    vec![
        LearnerId::AA,
        LearnerId::GAA,
        LearnerId::AGAA,
        LearnerId::MetaAAAGAA,
    ]
}
fn default_loss() -> String {
    "brier".into()
}
fn default_entropy() -> String {
    "shannon".into()
}
fn default_n_outcomes() -> usize {
    2
}
fn default_n_experts() -> usize {
    3
}
fn default_resolution() -> usize {
    201
}
fn default_epsilon() -> f64 {
    crate::simplex::DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<LearnerId>,
    /// `brier` or `log`.
    #[serde(default = "default_loss")]
    pub loss: String,
    /// See [`Entropy::from_id`].
    #[serde(default = "default_entropy")]
    pub entropy: String,
    /// Learning rate; defaults to the computed mixability constants.
    #[serde(default)]
    pub eta: Option<f64>,
    /// See [`Correction::from_id`]; defaults to `average-loss:0.125` for the
    /// two-expert example and `average-loss:0.5` otherwise.
    #[serde(default)]
    pub correction: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default = "default_n_outcomes")]
    pub n_outcomes: usize,
    #[serde(default = "default_n_experts")]
    pub n_experts: usize,
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    /// JSON [`ColumnMap`] for the odds dataset.
    #[serde(default)]
    pub column_map: Option<PathBuf>,
    pub output_path: PathBuf,
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, output_path: impl Into<PathBuf>) -> Self {
        Self {
            scenario,
            algorithms: default_algorithms(),
            loss: default_loss(),
            entropy: default_entropy(),
            eta: None,
            correction: None,
            seed: 0,
            rounds: None,
            n_outcomes: default_n_outcomes(),
            n_experts: default_n_experts(),
            dataset_path: None,
            column_map: None,
            output_path: output_path.into(),
            grid_resolution: default_resolution(),
            epsilon: default_epsilon(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("eta {eta} must be positive")));
            }
        }
        match self.scenario {
            Scenario::Example1 => {
                if self.loss != "brier" {
                    return Err(Error::Config(
                        "the two-expert example uses the Brier loss".into(),
                    ));
                }
            }
            Scenario::SyntheticRandom => {
                if self.n_outcomes < 2 || self.n_experts < 1 {
                    return Err(Error::Config(
                        "synthetic games need n >= 2 outcomes and k >= 1 experts".into(),
                    ));
                }
            }
            Scenario::OddsDataset => {
                if self.dataset_path.is_none() {
                    return Err(Error::Config("odds scenario needs dataset_path".into()));
                }
            }
        }
        if self.rounds == Some(0) {
            return Err(Error::Config("rounds must be positive".into()));
        }
        SimplexGrid::new(2, self.grid_resolution, self.epsilon)?;
        self.correction()?;
        Ok(())
    }

    pub fn correction(&self) -> Result<Correction> {
        match &self.correction {
            Some(id) => Correction::from_id(id),
            None if self.scenario == Scenario::Example1 => {
                Ok(Correction::AverageLoss { alpha: 0.125 })
            }
            None => Ok(Correction::AverageLoss { alpha: 0.5 }),
        }
    }

    fn loss_spec(&self, n: usize) -> Result<LossSpec> {
        match self.loss.as_str() {
            "brier" => LossSpec::brier(n),
            "log" => LossSpec::log(n),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

/// The two-expert Brier game: expert 1 always says `(1/2, 1/2)`; expert 2 says
/// `(1/4, 3/4)` for 50 rounds and `(3/4, 1/4)` afterwards; the outcome is
/// always 0.
pub fn example1_game(rounds: usize) -> Vec<GameRound> {
    (0..rounds)
        .map(|t| {
            let second = if t < 50 { [0.25, 0.75] } else { [0.75, 0.25] };
            GameRound {
                experts: vec![
                    Distribution::new(vec![0.5, 0.5]).expect("valid"),
                    Distribution::new(second.to_vec()).expect("valid"),
                ],
                outcome: 0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example1Report {
    pub agaa: GameTrace,
    pub aa: GameTrace,
    pub best_expert: usize,
    /// `log 2 / eta`, the Shannon bound.
    pub bound: f64,
    pub delta_regret: f64,
    pub bound_plus_delta_regret: f64,
    /// `Loss_AGAA(T) - Loss_best(T)`.
    pub agaa_regret: f64,
    /// `Loss_AA(T) - Loss_best(T)`.
    pub aa_regret: f64,
}

/// Shannon entropy, `eta = 1`, uniform prior, `v^t = -(1 / 8t) sum_s l^s`.
pub fn run_example1(rounds: usize) -> Result<Example1Report> {
    if rounds == 0 {
        return Err(Error::Config("rounds must be positive".into()));
    }
    let brier = LossSpec::brier(2)?;
    let game = example1_game(rounds);
    let correction = Correction::AverageLoss { alpha: 0.125 };
    let (agaa, _) = play(
        &LearnerState::agaa(Entropy::shannon(2), 1.0, Distribution::uniform(2))?,
        &brier,
        &correction,
        &game,
    )?;
    let (aa, _) = play(&LearnerState::aa(2, 1.0)?, &brier, &Correction::Zero, &game)?;
    let best_expert = agaa.best_expert();
    let bound = 2f64.ln();
    let delta_regret = agaa.delta_regret(best_expert)?;
    Ok(Example1Report {
        best_expert,
        bound,
        delta_regret,
        bound_plus_delta_regret: bound + delta_regret,
        agaa_regret: agaa.regret_vs_best(),
        aa_regret: aa.regret_vs_best(),
        agaa,
        aa,
    })
}

/// Seeded random game. Each round draws a truth `p ~ Dir(1)` and the outcome
/// from it; expert `theta` predicts `(1 - w) p + w r` with `r ~ Dir(1)` and
/// noise level `w = theta / k`.
pub fn synthetic_game(
    n_outcomes: usize,
    n_experts: usize,
    rounds: usize,
    seed: u64,
) -> Result<Vec<GameRound>> {
    if n_outcomes < 2 || n_experts < 1 {
        return Err(Error::Config(
            "synthetic games need n >= 2 outcomes and k >= 1 experts".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Normalized unit exponentials are Dir(1) draws.
    let dir = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let e: Vec<f64> = (0..n_outcomes).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    };
    let mut game = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let truth = dir(&mut rng);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut outcome = n_outcomes - 1;
        for (x, p) in truth.iter().enumerate() {
            acc += p;
            if u < acc {
                outcome = x;
                break;
            }
        }
        let experts = (0..n_experts)
            .map(|theta| {
                let w = theta as f64 / n_experts as f64;
                let noise = dir(&mut rng);
                Distribution::from_masses(
                    truth
                        .iter()
                        .zip(&noise)
                        .map(|(p, r)| ((1.0 - w) * p + w * r).max(1e-12))
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        game.push(GameRound { experts, outcome });
    }
    Ok(game)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSummary {
    pub algorithm: LearnerId,
    pub eta: f64,
    pub eta_phi: f64,
    pub final_learner_loss: f64,
    pub final_expert_losses: Vec<f64>,
    /// 1-based index of the best expert.
    pub best_expert: usize,
    pub regret_vs_best: f64,
    pub bound: f64,
    pub delta_regret: f64,
    pub bound_plus_delta_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub scenario: Scenario,
    pub seed: u64,
    pub rounds: usize,
    pub loss: String,
    pub entropy: String,
    pub correction: String,
    pub certification: MixabilityCertificate,
    pub dropped_rows: Option<usize>,
    pub learners: Vec<LearnerSummary>,
}

/// A finished experiment: the summary plus each learner's trace.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub summary: ExperimentSummary,
    pub traces: Vec<(LearnerId, GameTrace)>,
}

fn load_game(config: &ExperimentConfig) -> Result<(Vec<GameRound>, usize, Option<usize>)> {
    match config.scenario {
        Scenario::Example1 => Ok((example1_game(config.rounds.unwrap_or(150)), 2, None)),
        Scenario::SyntheticRandom => Ok((
            synthetic_game(
                config.n_outcomes,
                config.n_experts,
                config.rounds.unwrap_or(100),
                config.seed,
            )?,
            config.n_outcomes,
            None,
        )),
        Scenario::OddsDataset => {
            let columns = match &config.column_map {
                Some(p) => ColumnMap::from_json_file(p)?,
                None => ColumnMap::default(),
            };
            let path = config.dataset_path.as_ref().expect("validated");
            let ingested = ingest_odds_csv(path, &columns)?;
            let mut games = ingested.games()?;
            if let Some(t) = config.rounds {
                games.truncate(t);
            }
            Ok((games, 3, Some(ingested.dropped)))
        }
    }
}

/// Grid constants approximate infima from above; default learning rates are
/// floored to the refinement tolerance.
pub fn conservative_rate(grid_constant: f64) -> f64 {
    if grid_constant >= REFINEMENT_TOL {
        (grid_constant / REFINEMENT_TOL).floor() * REFINEMENT_TOL
    } else {
        grid_constant
    }
}

/// Runs the configured learners without writing files.
pub fn simulate(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    let (game, n, dropped_rows) = load_game(config)?;
    let k = game.first().map_or(
        match config.scenario {
            Scenario::Example1 => 2,
            _ => config.n_experts,
        },
        |g| g.experts.len(),
    );
    if game.is_empty() {
        return Err(Error::Config("the scenario produced no rounds".into()));
    }
    let loss = config.loss_spec(n)?;
    let phi = Entropy::from_id(&config.entropy, k)?;
    let correction = config.correction()?;
    let grid = SimplexGrid::new(k.max(2), config.grid_resolution, config.epsilon)?;
    let certification = if k >= 2 {
        certify_phi_mixable(&loss, &phi, &grid)?
    } else {
        let eta_lower = mixability_constant(&loss, &grid)?;
        MixabilityCertificate {
            eta_lower,
            eta_phi: eta_lower,
            convexity_margin: 0.0,
            grid,
            verdict: crate::mixability::Verdict::Mixable,
            refined_eta_lower: eta_lower,
            refined_eta_phi: eta_lower,
            refinement_stable: true,
        }
    };
    let eta_aa = config
        .eta
        .unwrap_or_else(|| conservative_rate(certification.eta_lower));
    let eta_phi = config
        .eta
        .unwrap_or_else(|| conservative_rate(certification.eta_phi));
    for (name, eta) in [("AA", eta_aa), ("GAA", eta_phi)] {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Degenerate(format!(
                "{name} learning rate {eta} from the mixability constants is not positive; set eta explicitly"
            )));
        }
    }

    let needs = |id: LearnerId| config.algorithms.contains(&id);
    let meta = needs(LearnerId::MetaAAAGAA);
    let (aa_bound, _) = regret_bound(&Entropy::shannon(k), eta_aa, k)?;
    let (phi_bound, q0) = if needs(LearnerId::GAA) || needs(LearnerId::AGAA) || meta {
        regret_bound(&phi, eta_phi, k)?
    } else {
        (f64::NAN, Distribution::uniform(k))
    };

    let mut traces: Vec<(LearnerId, GameTrace, f64, f64, f64)> = Vec::new();
    let mut aa_trace = None;
    let mut agaa_trace = None;
    if needs(LearnerId::AA) || meta {
        let (t, _) = play(
            &LearnerState::aa(k, eta_aa)?,
            &loss,
            &Correction::Zero,
            &game,
        )?;
        aa_trace = Some(t);
    }
    if needs(LearnerId::AGAA) || meta {
        let (t, _) = play(
            &LearnerState::agaa(phi, eta_phi, q0.clone())?,
            &loss,
            &correction,
            &game,
        )?;
        agaa_trace = Some(t);
    }
    for id in &config.algorithms {
        match id {
            LearnerId::AA => traces.push((
                *id,
                aa_trace.clone().expect("ran"),
                eta_aa,
                eta_aa,
                aa_bound,
            )),
            LearnerId::GAA => {
                let (t, _) = play(
                    &LearnerState::gaa(phi, eta_phi, q0.clone())?,
                    &loss,
                    &Correction::Zero,
                    &game,
                )?;
                traces.push((*id, t, eta_phi, eta_phi, phi_bound));
            }
            LearnerId::AGAA => traces.push((
                *id,
                agaa_trace.clone().expect("ran"),
                eta_phi,
                eta_phi,
                phi_bound,
            )),
            LearnerId::MetaAAAGAA => {
                let t = meta_aa(
                    aa_trace.as_ref().expect("ran"),
                    agaa_trace.as_ref().expect("ran"),
                    &loss,
                    eta_aa,
                )?;
                traces.push((*id, t, eta_aa, eta_aa, 2f64.ln() / eta_aa));
            }
        }
    }

    let learners = traces
        .iter()
        .map(|(id, t, eta, eta_phi, bound)| {
            let best = t.best_expert();
            let delta = t.delta_regret(best)?;
            Ok(LearnerSummary {
                algorithm: *id,
                eta: *eta,
                eta_phi: *eta_phi,
                final_learner_loss: t.cumulative_learner_loss,
                final_expert_losses: t.cumulative_expert_losses.clone(),
                best_expert: best + 1,
                regret_vs_best: t.regret_vs_best(),
                bound: *bound,
                delta_regret: delta,
                bound_plus_delta_regret: bound + delta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentRun {
        summary: ExperimentSummary {
            scenario: config.scenario,
            seed: config.seed,
            rounds: game.len(),
            loss: config.loss.clone(),
            entropy: phi.id(),
            correction: crate::aggregation::CorrectionProtocol::id(&correction),
            certification,
            dropped_rows,
            learners,
        },
        traces: traces.into_iter().map(|(id, t, ..)| (id, t)).collect(),
    })
}

/// Header of the per-round CSV for `k` experts.
pub fn round_csv_header(k: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "learner_cumulative_loss".to_string()];
    h.extend((1..=k).map(|i| format!("expert_{i}_cumulative_loss")));
    h.extend((1..=k).map(|i| format!("expert_{i}_minus_learner")));
    h.push("delta_regret_best".into());
    h
}

/// Writes the per-round CSV of one trace; the last column is the running
/// `Delta R` of the final best expert.
pub fn write_round_csv(path: &Path, trace: &GameTrace) -> Result<()> {
    let k = trace.cumulative_expert_losses.len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(round_csv_header(k))?;
    let learner = trace.learner_curve();
    let experts: Vec<Vec<f64>> = (0..k).map(|i| trace.expert_curve(i)).collect();
    let delta = trace.delta_regret_curve(trace.best_expert());
    for t in 0..trace.len() {
        let mut row = vec![(t + 1).to_string(), learner[t].to_string()];
        row.extend(experts.iter().map(|e| e[t].to_string()));
        row.extend(experts.iter().map(|e| (e[t] - learner[t]).to_string()));
        row.push(delta[t].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the experiment and writes `<stem>.csv` per learner plus
/// `summary.json` into `output_path`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    let run = simulate(config)?;
    fs::create_dir_all(&config.output_path)?;
    for (id, trace) in &run.traces {
        write_round_csv(
            &config.output_path.join(format!("{}.csv", id.file_stem())),
            trace,
        )?;
    }
    let json = serde_json::to_string_pretty(&run.summary)?;
    fs::write(config.output_path.join("summary.json"), json + "\n")?;
    Ok(run.summary)
}

/// Runs independent experiments, in parallel under [`Execution::Parallel`].
/// Output paths must be distinct.
pub fn run_experiments(
    execution: Execution,
    configs: &[ExperimentConfig],
) -> Vec<Result<ExperimentSummary>> {
    exec::map(execution, configs, run_experiment)
}
