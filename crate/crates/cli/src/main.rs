use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mixagg::entropies::Entropy;
use mixagg::experiments::{
    run_example1, run_experiment, simulate, write_round_csv, ExperimentConfig, LearnerId, Scenario,
};
use mixagg::losses::LossSpec;
use mixagg::mixability::{
    certify_phi_mixable, generalized_mixability_constant, mixability_constant, Verdict,
};
use mixagg::simplex::{SimplexGrid, DEFAULT_EPSILON};
use mixagg::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "mixagg",
    version,
    about = "Aggregating algorithms and mixability calculus"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// RNG seed for synthetic games.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV and JSON files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Grid resolution for mixability constants.
    #[arg(long, global = true)]
    grid_resolution: Option<usize>,
    /// Interior offset of the grids.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Two-expert Brier game with the adaptive algorithm and AA.
    Example1 {
        #[arg(long, default_value_t = 150)]
        rounds: usize,
    },
    /// Seeded synthetic game; prints the summary.
    Simulate(GameArgs),
    /// Runs a configured experiment and writes its output files.
    Experiment(ExperimentArgs),
    /// Certifies (eta, Phi)-mixability; exits 4 unless the verdict is Mixable.
    Certify(ConstantArgs),
    /// Prints the mixability constants.
    Constants(ConstantArgs),
}

#[derive(Args, Debug)]
struct GameArgs {
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    #[arg(long, default_value_t = 2)]
    n_outcomes: usize,
    #[arg(long, default_value_t = 3)]
    n_experts: usize,
    #[arg(long, default_value = "brier")]
    loss: String,
    #[arg(long, default_value = "shannon")]
    entropy: String,
    #[arg(long)]
    eta: Option<f64>,
    /// `zero` or `average-loss:<alpha>`.
    #[arg(long)]
    correction: Option<String>,
    /// Comma-separated subset of AA, GAA, AGAA, MetaAAAGAA.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Used when no --config is given.
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    column_map: Option<PathBuf>,
    #[command(flatten)]
    game: GameArgs,
}

#[derive(Args, Debug)]
struct ConstantArgs {
    #[arg(long, default_value = "brier")]
    loss: String,
    #[arg(long, default_value_t = 2)]
    n_outcomes: usize,
    #[arg(long, default_value = "shannon")]
    entropy: String,
    #[arg(long, default_value_t = 2)]
    n_experts: usize,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown scenario `{s}` (example1, synthetic-random, odds-dataset)"))
}

fn parse_learner(s: &str) -> Result<LearnerId> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
        .map_err(|_| Error::Config(format!("unknown algorithm `{s}`")).into())
}

fn loss_spec(id: &str, n: usize) -> Result<LossSpec> {
    Ok(match id {
        "brier" => LossSpec::brier(n)?,
        "log" => LossSpec::log(n)?,
        other => return Err(Error::Config(format!("unknown loss `{other}`")).into()),
    })
}

fn grid(global: &Global, dim: usize) -> Result<SimplexGrid> {
    Ok(SimplexGrid::new(
        dim.max(2),
        global.grid_resolution.unwrap_or(1001),
        global.epsilon.unwrap_or(DEFAULT_EPSILON),
    )?)
}

fn apply_game_args(config: &mut ExperimentConfig, game: &GameArgs) -> Result<()> {
    config.rounds = Some(game.rounds);
    config.n_outcomes = game.n_outcomes;
    config.n_experts = game.n_experts;
    config.loss = game.loss.clone();
    config.entropy = game.entropy.clone();
    config.eta = game.eta;
    config.correction = game.correction.clone();
    if let Some(names) = &game.algorithms {
        config.algorithms = names
            .iter()
            .map(|s| parse_learner(s))
            .collect::<Result<_>>()?;
    }
    Ok(())
}

fn apply_global(config: &mut ExperimentConfig, global: &Global) {
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(out) = &global.out {
        config.output_path = out.clone();
    }
    if let Some(r) = global.grid_resolution {
        config.grid_resolution = r;
    }
    if let Some(e) = global.epsilon {
        config.epsilon = e;
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let global = &cli.global;
    match &cli.command {
        Command::Example1 { rounds } => {
            let start = Instant::now();
            let r = run_example1(*rounds)?;
            let elapsed = start.elapsed();
            println!("rounds: {rounds}");
            println!("best expert: theta{}", r.best_expert + 1);
            println!(
                "R^S + Delta R (AGAA bound): {:.6}",
                r.bound_plus_delta_regret
            );
            println!("AGAA regret vs best expert: {:.6}", r.agaa_regret);
            println!("AA regret vs best expert: {:.6}", r.aa_regret);
            println!("learner beats best expert: {}", r.agaa_regret < 0.0);
            println!("elapsed: {:.3} s", elapsed.as_secs_f64());
            if let Some(out) = &global.out {
                std::fs::create_dir_all(out)
                    .with_context(|| format!("creating {}", out.display()))?;
                write_round_csv(&out.join("agaa.csv"), &r.agaa)?;
                write_round_csv(&out.join("aa.csv"), &r.aa)?;
                let summary = serde_json::json!({
                    "scenario": "example1",
                    "rounds": rounds,
                    "best_expert": r.best_expert + 1,
                    "bound": r.bound,
                    "delta_regret": r.delta_regret,
                    "bound_plus_delta_regret": r.bound_plus_delta_regret,
                    "agaa_regret_vs_best": r.agaa_regret,
                    "aa_regret_vs_best": r.aa_regret,
                });
                std::fs::write(
                    out.join("summary.json"),
                    serde_json::to_string_pretty(&summary)? + "\n",
                )?;
            }
        }
        Command::Simulate(game) => {
            let mut config = ExperimentConfig::new(Scenario::SyntheticRandom, ".");
            apply_game_args(&mut config, game)?;
            apply_global(&mut config, global);
            let summary = if global.out.is_some() {
                run_experiment(&config)?
            } else {
                simulate(&config)?.summary
            };
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Experiment(args) => {
            let mut config = match &global.config {
                Some(path) => ExperimentConfig::from_json_file(path)?,
                None => {
                    let scenario = args.scenario.ok_or_else(|| {
                        Error::Config("experiment needs --config or --scenario".into())
                    })?;
                    let mut c = ExperimentConfig::new(scenario, "results");
                    apply_game_args(&mut c, &args.game)?;
                    if scenario == Scenario::OddsDataset {
                        c.rounds = None;
                    }
                    c.dataset_path = args.dataset.clone();
                    c.column_map = args.column_map.clone();
                    c
                }
            };
            apply_global(&mut config, global);
            let summary = run_experiment(&config)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            eprintln!("wrote {}", config.output_path.display());
        }
        Command::Certify(args) => {
            let loss = loss_spec(&args.loss, args.n_outcomes)?;
            let phi = Entropy::from_id(&args.entropy, args.n_experts)?;
            let cert = certify_phi_mixable(&loss, &phi, &grid(global, args.n_experts)?)?;
            println!("{}", serde_json::to_string_pretty(&cert)?);
            if cert.verdict != Verdict::Mixable {
                return Ok(ExitCode::from(EXIT_NUMERICAL));
            }
        }
        Command::Constants(args) => {
            let loss = loss_spec(&args.loss, args.n_outcomes)?;
            let phi = Entropy::from_id(&args.entropy, args.n_experts)?;
            let g = grid(global, args.n_experts)?;
            let eta = mixability_constant(&loss, &g)?;
            let eta_phi = generalized_mixability_constant(&loss, &phi, &g)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "loss": args.loss,
                    "n_outcomes": args.n_outcomes,
                    "entropy": phi.id(),
                    "n_experts": args.n_experts,
                    "grid_resolution": g.resolution,
                    "epsilon": g.epsilon,
                    "eta_lower": eta,
                    "eta_phi": eta_phi,
                }))?
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io(_) | Error::Csv(_) | Error::Parse { .. } | Error::Schema(_)) => EXIT_DATA,
        Some(
            Error::Domain(_)
            | Error::Infeasible { .. }
            | Error::Solver(_)
            | Error::LinAlg(_)
            | Error::Degenerate(_),
        ) => EXIT_NUMERICAL,
        Some(_) => EXIT_CONFIG,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_DATA,
        None => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
