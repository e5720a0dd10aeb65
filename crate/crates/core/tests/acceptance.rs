//! Acceptance criteria. Every check prints one `[PASS]`/`[FAIL]` line; a test
//! fails if any of its checks fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use mixagg::aggregation::{meta_aa, play, Correction, GameTrace, LearnerState};
use mixagg::entropies::{shannon_hessian_inverse, Entropy};
use mixagg::experiments::{run_example1, synthetic_game};
use mixagg::losses::{HessianMode, LossSpec};
use mixagg::mixability::{
    certify_phi_mixable, generalized_mixability_constant, mix, mix_bruteforce, mixability_constant,
    regret_bound, Verdict,
};
use mixagg::odds::{ingest_odds_csv, ColumnMap};
use mixagg::simplex::{project_tilde, Distribution, SimplexGrid, TildePoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Gamma};

struct Report {
    criterion: u32,
    failures: Vec<String>,
}

impl Report {
    fn new(criterion: u32) -> Self {
        Self {
            criterion,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, ok: bool, detail: impl std::fmt::Display) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {}: {name} ({detail})", self.criterion);
        if !ok {
            self.failures.push(name.to_string());
        }
    }

    fn finish(self) {
        assert!(
            self.failures.is_empty(),
            "criterion {} failed checks: {:?}",
            self.criterion,
            self.failures
        );
    }
}

fn grid(dim: usize, resolution: usize) -> SimplexGrid {
    SimplexGrid::with_default_epsilon(dim, resolution).unwrap()
}

fn dirichlet(rng: &mut ChaCha8Rng, k: usize, concentration: f64) -> Distribution {
    let g = Gamma::new(concentration, 1.0).unwrap();
    Distribution::from_masses((0..k).map(|_| g.sample(rng)).collect()).unwrap()
}

#[test]
fn criterion_1_example1_reproduction() {
    let mut r = Report::new(1);
    let start = Instant::now();
    let ex = run_example1(150).unwrap();
    let elapsed = start.elapsed();
    r.check(
        "best expert is theta2",
        ex.best_expert == 1,
        format!("theta{}", ex.best_expert + 1),
    );
    r.check(
        "R^S + Delta R = -5 +/- 0.5",
        (ex.bound_plus_delta_regret + 5.0).abs() <= 0.5,
        format!("{:.6}", ex.bound_plus_delta_regret),
    );
    r.check(
        "learner beats best expert",
        ex.agaa_regret < 0.0,
        format!("regret {:.6}", ex.agaa_regret),
    );
    r.check(
        "AA trails theta2 by log 2 +/- 0.05",
        (ex.aa_regret - 2f64.ln()).abs() <= 0.05,
        format!("{:.6}", ex.aa_regret),
    );
    r.check(
        "runtime < 1 s",
        elapsed < Duration::from_secs(1),
        format!("{elapsed:?}"),
    );
    r.finish();
}

#[test]
fn criterion_2_mixability_constants() {
    let mut r = Report::new(2);
    let start = Instant::now();
    let g = grid(2, 1001);
    let brier = LossSpec::brier(2).unwrap();
    let eta = mixability_constant(&brier, &g).unwrap();
    r.check("Brier n=2 eta = 1 +/- 1e-3", (eta - 1.0).abs() <= 1e-3, eta);
    for n in [2, 3, 5] {
        let v = mixability_constant(&LossSpec::log(n).unwrap(), &grid(n, 21)).unwrap();
        r.check(&format!("log loss n={n} eta = 1 exactly"), v == 1.0, v);
    }
    let s = generalized_mixability_constant(&brier, &Entropy::shannon(2), &g).unwrap();
    r.check(
        "Shannon eta^Phi = eta_lower +/- 1e-9",
        (s - eta).abs() <= 1e-9,
        s,
    );
    for alpha in [0.25, 0.5, 0.75] {
        let v = generalized_mixability_constant(&brier, &Entropy::mixture(2, alpha).unwrap(), &g)
            .unwrap();
        r.check(
            &format!("Mixture({alpha}) eta^Phi = alpha +/- 1e-3"),
            (v - alpha).abs() <= 1e-3,
            v,
        );
    }
    let elapsed = start.elapsed();
    r.check(
        "runtime < 5 s",
        elapsed < Duration::from_secs(5),
        format!("{elapsed:?}"),
    );
    r.finish();
}

#[test]
fn criterion_3_shannon_equivalences() {
    let mut r = Report::new(3);
    let mut worst: f64 = 0.0;
    let mut games = 0;
    for k in [2, 5] {
        for n in [2, 3] {
            let brier = LossSpec::brier(n).unwrap();
            for seed in 0..25 {
                let game = synthetic_game(n, k, 200, 1_000 + seed).unwrap();
                let (aa, _) = play(
                    &LearnerState::aa(k, 1.0).unwrap(),
                    &brier,
                    &Correction::Zero,
                    &game,
                )
                .unwrap();
                let gaa_state =
                    LearnerState::gaa(Entropy::shannon(k), 1.0, Distribution::uniform(k)).unwrap();
                let (gaa, _) = play(&gaa_state, &brier, &Correction::Zero, &game).unwrap();
                for (a, b) in aa.rounds.iter().zip(&gaa.rounds) {
                    worst = worst
                        .max(a.weights.max_abs_diff(&b.weights))
                        .max(a.learner_prediction.max_abs_diff(&b.learner_prediction));
                }
                games += 1;
            }
        }
    }
    r.check(
        &format!("GAA(Shannon) == AA over {games} games to 1e-9"),
        games == 100 && worst <= 1e-9,
        format!("max deviation {worst:.3e}"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let eta = rng.random_range(0.1..3.0);
        let q = dirichlet(&mut rng, k, 1.0);
        let d: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5.0)).collect();
        let (v, _) = mix(&Entropy::shannon(k), eta, &d, &q).unwrap();
        let direct = -(q
            .weights()
            .iter()
            .zip(&d)
            .map(|(w, x)| w * (-eta * x).exp())
            .sum::<f64>())
        .ln()
            / eta;
        worst = worst.max((v - direct).abs());
    }
    r.check(
        "mix(Shannon) == closed form on 1000 inputs to 1e-10",
        worst <= 1e-10,
        format!("{worst:.3e}"),
    );
    r.finish();
}

struct OracleRun {
    over: Vec<(Vec<f64>, Distribution)>,
    worst: f64,
}

/// `d ~ U[0, 5]^k`, `q ~ Dir(2)`, seed fixed before the first run.
fn oracle_agreement(phi: &Entropy, resolution: usize, tol: f64, seed: u64) -> OracleRun {
    let k = phi.dim_full();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut over = Vec::new();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let q = dirichlet(&mut rng, k, 2.0);
        let d: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5.0)).collect();
        let (v, _) = mix(phi, 1.0, &d, &q).unwrap();
        let b = mix_bruteforce(phi, 1.0, &d, &q, resolution).unwrap();
        let gap = (v - b).abs();
        worst = worst.max(gap);
        if gap > tol {
            over.push((d, q));
        }
    }
    OracleRun { over, worst }
}

#[test]
fn criterion_4_mix_oracle_equivalence() {
    let mut r = Report::new(4);
    let start = Instant::now();
    for (k, resolution, tol) in [(2, 2001, 2e-3), (3, 61, 5e-3)] {
        for phi in [
            Entropy::shannon(k),
            Entropy::mixture(k, 0.5).unwrap(),
            Entropy::quadratic(k),
        ] {
            let run = oracle_agreement(&phi, resolution, tol, 0x5EED);
            r.check(
                &format!(
                    "k={k} {} dual vs grid within {tol:e} on 200 pairs",
                    phi.id()
                ),
                run.over.is_empty(),
                format!(
                    "{} over tolerance, max gap {:.3e}",
                    run.over.len(),
                    run.worst
                ),
            );
            if !run.over.is_empty() {
                // Diagnostic only: the same pairs against a finer oracle grid.
                let fine = 4 * (resolution - 1) + 1;
                let gap = run
                    .over
                    .iter()
                    .map(|(d, q)| {
                        let (v, _) = mix(&phi, 1.0, d, q).unwrap();
                        (mix_bruteforce(&phi, 1.0, d, q, fine).unwrap() - v).abs()
                    })
                    .fold(0.0f64, f64::max);
                println!(
                    "[INFO] criterion 4: the {} pairs over tolerance have max gap {gap:.3e} at resolution {fine}",
                    run.over.len()
                );
            }
        }
    }
    let elapsed = start.elapsed();
    r.check(
        "runtime < 30 s",
        elapsed < Duration::from_secs(30),
        format!("{elapsed:?}"),
    );
    r.finish();
}

fn running_min_slack(
    learner: &GameTrace,
    bound: impl Fn(usize, usize) -> f64,
    theta: Option<usize>,
) -> f64 {
    let k = learner.cumulative_expert_losses.len();
    let curve = learner.learner_curve();
    let experts: Vec<Vec<f64>> = (0..k).map(|i| learner.expert_curve(i)).collect();
    let mut worst = f64::INFINITY;
    for t in 0..learner.len() {
        let thetas: Vec<usize> = match theta {
            Some(th) => vec![th],
            None => (0..k).collect(),
        };
        for th in thetas {
            let regret = curve[t] - experts[th][t];
            worst = worst.min(bound(th, t) - regret);
        }
    }
    worst
}

#[test]
fn criterion_5_regret_bounds() {
    let mut r = Report::new(5);
    let k = 3;
    for (phi, eta) in [
        (Entropy::shannon(k), 1.0),
        (Entropy::mixture(k, 0.5).unwrap(), 0.5),
    ] {
        let (bound, q0) = regret_bound(&phi, eta, k).unwrap();
        let mut gaa_worst = f64::INFINITY;
        let mut agaa_worst = f64::INFINITY;
        let mut meta_worst = f64::INFINITY;
        for seed in 0..50u64 {
            let n = 2 + (seed % 2) as usize;
            let brier = LossSpec::brier(n).unwrap();
            let game = synthetic_game(n, k, 500, 5_000 + seed).unwrap();
            let (gaa, _) = play(
                &LearnerState::gaa(phi, eta, q0.clone()).unwrap(),
                &brier,
                &Correction::Zero,
                &game,
            )
            .unwrap();
            // Regret against the best expert so far: the minimum over all theta.
            let slack = {
                let curve = gaa.learner_curve();
                let experts: Vec<Vec<f64>> = (0..k).map(|i| gaa.expert_curve(i)).collect();
                (0..gaa.len())
                    .map(|t| {
                        let best = experts.iter().map(|e| e[t]).fold(f64::INFINITY, f64::min);
                        bound - (curve[t] - best)
                    })
                    .fold(f64::INFINITY, f64::min)
            };
            gaa_worst = gaa_worst.min(slack);

            let protocol = Correction::AverageLoss { alpha: 0.5 };
            let (agaa, _) = play(
                &LearnerState::agaa(phi, eta, q0.clone()).unwrap(),
                &brier,
                &protocol,
                &game,
            )
            .unwrap();
            let deltas: Vec<Vec<f64>> = (0..k).map(|th| agaa.delta_regret_curve(th)).collect();
            agaa_worst = agaa_worst.min(running_min_slack(
                &agaa,
                |th, t| bound + deltas[th][t],
                None,
            ));

            let (aa, _) = play(
                &LearnerState::aa(k, 1.0).unwrap(),
                &brier,
                &Correction::Zero,
                &game,
            )
            .unwrap();
            let meta = meta_aa(&aa, &agaa, &brier, 1.0).unwrap();
            let (a, b, m) = (
                aa.learner_curve(),
                agaa.learner_curve(),
                meta.learner_curve(),
            );
            let s = (0..m.len())
                .map(|t| 2f64.ln() - (m[t] - a[t].min(b[t])))
                .fold(f64::INFINITY, f64::min);
            meta_worst = meta_worst.min(s);
        }
        let id = phi.id();
        r.check(
            &format!("GAA {id} eta={eta}: bound slack >= -1e-6 every round, 50 games"),
            gaa_worst >= -1e-6,
            format!("min slack {gaa_worst:.3e}"),
        );
        r.check(
            &format!("AGAA {id} eta={eta}: bound + Delta R slack >= -1e-6, every expert and round"),
            agaa_worst >= -1e-6,
            format!("min slack {agaa_worst:.3e}"),
        );
        r.check(
            &format!("meta(AA, AGAA {id}) within log 2 of the better component"),
            meta_worst >= -1e-6,
            format!("min slack {meta_worst:.3e}"),
        );
    }
    r.finish();
}

#[test]
fn criterion_6_certification_shannon_and_quadratic() {
    let mut r = Report::new(6);
    let brier = LossSpec::brier(2).unwrap();
    let g = grid(2, 1001);
    let c = certify_phi_mixable(&brier, &Entropy::shannon(2), &g).unwrap();
    r.check(
        "(Brier, Shannon) -> Mixable",
        c.verdict == Verdict::Mixable,
        format!("{:?}, margin {:.3e}", c.verdict, c.convexity_margin),
    );
    let c = certify_phi_mixable(&brier, &Entropy::quadratic(2), &g).unwrap();
    r.check(
        "(Brier, Quadratic) -> NotMixable",
        c.verdict == Verdict::NotMixable,
        format!("{:?}, margin {:.3e}", c.verdict, c.convexity_margin),
    );
    r.finish();
}

#[test]
fn criterion_6_certification_legendre_counterexample() {
    let mut r = Report::new(6);
    let brier = LossSpec::brier(2).unwrap();
    let phi = Entropy::legendre_counterexample();
    let mut resolutions = vec![11usize];
    while *resolutions.last().unwrap() < 10_000 {
        let next = 2 * resolutions.last().unwrap() - 1;
        resolutions.push(next);
    }
    let estimates: Vec<f64> = resolutions
        .iter()
        .map(|&res| generalized_mixability_constant(&brier, &phi, &grid(2, res)).unwrap())
        .collect();
    let monotone = estimates.windows(2).all(|w| w[1] <= w[0]);
    r.check(
        "eta^Phi non-increasing under refinement",
        monotone,
        format!(
            "{:?}",
            resolutions
                .iter()
                .zip(&estimates)
                .map(|(r, e)| format!("{r}:{e:.4}"))
                .collect::<Vec<_>>()
        ),
    );
    let last = *estimates.last().unwrap();
    r.check(
        &format!(
            "eta^Phi < 0.05 at resolution {}",
            resolutions.last().unwrap()
        ),
        last < 0.05,
        format!("{last:.6}"),
    );
    let c = certify_phi_mixable(&brier, &phi, &grid(2, 10_001)).unwrap();
    r.check(
        "(Brier, LegendreCounterexample) -> NotMixable",
        c.verdict == Verdict::NotMixable,
        format!(
            "{:?}, margin {:.3e}, eta_phi {:.6}",
            c.verdict, c.convexity_margin, c.eta_phi
        ),
    );
    r.finish();
}

#[test]
fn criterion_7_numerical_cross_checks() {
    let mut r = Report::new(7);
    let mut worst_h: f64 = 0.0;
    for n in [2, 3, 4] {
        for loss in [LossSpec::brier(n).unwrap(), LossSpec::log(n).unwrap()] {
            let fd = loss
                .clone()
                .with_hessian_mode(HessianMode::FiniteDifference);
            for p in SimplexGrid::new(n, 9, 0.05).unwrap().points() {
                let t = project_tilde(&p);
                let a = loss.bayes_hessian_tilde(&t).unwrap();
                let b = fd.bayes_hessian_tilde(&t).unwrap();
                worst_h = worst_h.max((a - b).abs().max());
            }
        }
    }
    r.check(
        "analytic vs finite-difference Bayes Hessians <= 1e-4",
        worst_h <= 1e-4,
        format!("{worst_h:.3e}"),
    );

    // H S~ (Diag q~ - q~ q~^T) = I on the default grid, where H S~ has entries
    // up to 1/epsilon; explicit inversion is compared on a grid kept 1e-2
    // away from the boundary.
    let mut worst_p: f64 = 0.0;
    let mut worst_i: f64 = 0.0;
    for k in [2, 3, 5] {
        let s = Entropy::shannon(k);
        for q in grid(k, 11).points() {
            let t = project_tilde(&q);
            let prod = s.tilde_hessian(&t).unwrap() * shannon_hessian_inverse(&t);
            let eye = nalgebra::DMatrix::<f64>::identity(k - 1, k - 1);
            worst_p = worst_p.max((prod - eye).abs().max());
        }
        for q in SimplexGrid::new(k, 11, 1e-2).unwrap().points() {
            let t = project_tilde(&q);
            let inv = s.tilde_hessian(&t).unwrap().try_inverse().unwrap();
            worst_i = worst_i.max((inv - shannon_hessian_inverse(&t)).abs().max());
        }
    }
    r.check(
        "Shannon Hessian-inverse identity <= 1e-9 (product residual)",
        worst_p <= 1e-9,
        format!("{worst_p:.3e}"),
    );
    r.check(
        "Shannon Hessian-inverse identity <= 1e-9 (explicit inverse)",
        worst_i <= 1e-9,
        format!("{worst_i:.3e}"),
    );

    let mut worst_g: f64 = 0.0;
    for k in [2, 3, 4] {
        let mut kinds = vec![
            Entropy::shannon(k),
            Entropy::quadratic(k),
            Entropy::mixture(k, 0.5).unwrap(),
        ];
        if k == 2 {
            kinds.push(Entropy::legendre_counterexample());
        }
        for phi in kinds {
            for q in SimplexGrid::new(k, 7, 0.05).unwrap().points() {
                let t = project_tilde(&q);
                let g = phi.tilde_gradient(&t).unwrap();
                for i in 0..k - 1 {
                    let h = 1e-6;
                    let shift = |delta: f64| {
                        let mut c = t.coords().to_vec();
                        c[i] += delta;
                        phi.tilde_value(&TildePoint::new(c).unwrap()).unwrap()
                    };
                    let fd = (shift(h) - shift(-h)) / (2.0 * h);
                    worst_g = worst_g.max((fd - g[i]).abs());
                }
            }
        }
    }
    r.check(
        "entropy gradients vs finite differences <= 1e-5",
        worst_g <= 1e-5,
        format!("{worst_g:.3e}"),
    );
    r.finish();
}

#[test]
fn criterion_8_ingestion() {
    let mut r = Report::new(8);
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/odds_fixture.csv");
    let got = ingest_odds_csv(&path, &ColumnMap::with_bookmakers(["B365", "BW"])).unwrap();
    r.check(
        "parsed + dropped = 10 rows",
        got.parsed() + got.dropped == 10,
        format!("{} + {}", got.parsed(), got.dropped),
    );

    let (h, d, a) = ([0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]);
    // (home team, outcome, B365 probabilities, BW probabilities), sorted by date, league, home.
    let expected: [(&str, usize, [f64; 3], [f64; 3]); 10] = [
        ("Aston Villa", 1, d, d),
        ("Everton", 2, a, a),
        ("Leeds", 1, d, d),
        ("Fulham", 1, d, d),
        ("Burnley", 0, h, h),
        ("Arsenal", 0, h, h),
        ("Chelsea", 0, h, h),
        ("Brighton", 2, a, a),
        ("Wigan", 0, h, h),
        ("Bolton", 2, a, a),
    ];
    let games = got.games().unwrap();
    let mut exact = games.len() == expected.len();
    for ((rec, game), (home, outcome, b365, bw)) in got.records.iter().zip(&games).zip(&expected) {
        exact &= rec.home_team == *home
            && game.outcome == *outcome
            && game.experts[0].weights() == b365
            && game.experts[1].weights() == bw;
    }
    r.check(
        "fixture round-trips to hand-computed probabilities exactly",
        exact,
        format!("{} games", games.len()),
    );
    r.finish();
}
