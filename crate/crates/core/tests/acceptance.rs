//! Acceptance suite P1-P13. Each test prints one `P<n> PASS|FAIL` line with the
//! measured value, the tolerance and the runtime, then asserts.

use std::io::Write;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use emphasis_core::explanation::{ExplanationEmbeddings, ExplanationSet, HashingEmbedder, TemplateExplainer};
use emphasis_core::harness::{
    correlation_per_user, mean, run_experiment, run_to_dir, sample_sd, BetaSpec, Condition, Experiment,
    ExperimentResult, PopulationGroup, ReportOptions, Scenario,
};
use emphasis_core::market_data::{daily_correctness, select_window, window_accuracy, PriceSeries, SynthSpec};
use emphasis_core::policy::{
    naive_decide, oracle_decide, rl_decide, train_rl_policy, AdvisorPolicy, DdpgHyperParams, NaiveVariant, TradingEnv,
};
use emphasis_core::predictor::make_calibrated_predictor;
use emphasis_core::selector::{enumerate_patterns, expected_gap, select_emphasis, EmphasisStrategy, StrategyKind};
use emphasis_core::sim::{apply_order, PortfolioState, TrajectoryRecord, UserKind};
use emphasis_core::types::{EPISODE_DAYS, INITIAL_CASH, POSITIONS};
use emphasis_core::user_model::{
    build_sequences, mean_cross_entropy, sequence_loss_and_grad, train, Context, DayInput, DecisionModel,
    ObservedDay, TrainingSequence, UserModel, UserModelHyperParams, UserModelParams, GROUP_NAMES,
};
use emphasis_core::{AdvisorDecision, ClassProbabilities, DecisionDistribution, EmphasisPattern, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes straight to the stdout handle, bypassing libtest capture.
fn verdict(id: &str, pass: bool, detail: String, elapsed: Duration) -> bool {
    let line = format!(
        "{id} {} {detail} [{:.2} s]\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    pass
}

fn random_distribution(rng: &mut ChaCha8Rng) -> DecisionDistribution {
    let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
    let s: f64 = raw.iter().sum();
    let mut probs = [0.0; 6];
    for (p, r) in probs.iter_mut().zip(&raw) {
        *p = r / s;
    }
    DecisionDistribution::new(probs).unwrap()
}

#[test]
fn p01_expected_gap_exact() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dist = random_distribution(&mut rng);
        let d_ai = rng.random_range(0.0..=500.0);
        let got = expected_gap(&dist, AdvisorDecision::new(d_ai).unwrap());
        let mut direct = 0.0;
        for (k, p) in dist.probs().iter().enumerate() {
            direct += p * (100.0 * k as f64 - d_ai).abs();
        }
        worst = worst.max((got - direct).abs());
    }
    let elapsed = t0.elapsed();
    let pass = worst <= 1e-12 && elapsed < Duration::from_secs(1);
    assert!(verdict("P1", pass, format!("max |gap - direct sum| = {worst:e} (tol 1e-12, < 1 s)"), elapsed));
}

/// Returns a fixed distribution per pattern; some patterns share one so ties occur.
struct TableModel(Vec<DecisionDistribution>);

impl DecisionModel for TableModel {
    fn counterfactual(&self, _: &[ObservedDay], _: &DayInput, pattern: EmphasisPattern) -> Result<DecisionDistribution> {
        Ok(self.0[usize::from(pattern.bits())])
    }
}

fn dummy_day() -> DayInput {
    DayInput {
        context: Context {
            t: 0,
            delta: 0.0,
            p: ClassProbabilities::uniform(),
            d_prev: 0,
        },
        explanations: ExplanationEmbeddings([vec![0.0], vec![0.0], vec![0.0]]),
    }
}

#[test]
fn p02_argmin_matches_brute_force() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let current = dummy_day();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let pool: Vec<DecisionDistribution> = (0..rng.random_range(1..=7)).map(|_| random_distribution(&mut rng)).collect();
        let table: Vec<DecisionDistribution> = (0..7).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        let d_ai = f64::from(POSITIONS[rng.random_range(0..6)]);
        let model = TableModel(table.clone());
        let got = select_emphasis(&model, &[], &current, AdvisorDecision::new(d_ai).unwrap()).unwrap().chosen;

        // Brute force: smallest gap, then fewest emphasized classes, then the
        // lexicographically smallest (BULL, NEUTRAL, BEAR) flags.
        let mut best: Option<(f64, u32, [bool; 3], u8)> = None;
        for code in 0u8..7 {
            let flags = [code & 4 != 0, code & 2 != 0, code & 1 != 0];
            let gap: f64 = table[usize::from(code)]
                .probs()
                .iter()
                .enumerate()
                .map(|(k, p)| p * (100.0 * k as f64 - d_ai).abs())
                .sum();
            let count = flags.iter().filter(|&&f| f).count() as u32;
            let better = match best {
                None => true,
                Some((g, c, f, _)) => gap < g || (gap == g && (count < c || (count == c && flags < f))),
            };
            if better {
                best = Some((gap, count, flags, code));
            }
        }
        if got.bits() != best.unwrap().3 {
            mismatches += 1;
        }
    }
    let elapsed = t0.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(5);
    assert!(verdict("P2", pass, format!("{mismatches} / 1000 mismatches against brute force (< 5 s)"), elapsed));
}

#[test]
fn p03_pattern_space() {
    let t0 = Instant::now();
    let patterns = enumerate_patterns();
    let mut codes: Vec<u8> = patterns.iter().map(|p| p.bits()).collect();
    codes.sort_unstable();
    codes.dedup();
    let pass = patterns.len() == 7 && codes.len() == 7 && patterns.iter().all(|p| !p.is_all());
    assert!(verdict("P3", pass, format!("{} distinct patterns, all-true excluded", codes.len()), t0.elapsed()));
}

fn random_sequence(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> TrainingSequence {
    let mut days = Vec::new();
    let mut targets = Vec::new();
    let mut d_prev = 0;
    for t in 0..len {
        let target = rng.random_range(0..6);
        let v = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (a, b, c): (f64, f64, f64) = (rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
        let s = a + b + c;
        days.push(ObservedDay {
            input: DayInput {
                context: Context {
                    t,
                    delta: rng.random_range(-2.0..2.0),
                    p: ClassProbabilities::new(a / s, b / s, 1.0 - a / s - b / s).unwrap(),
                    d_prev,
                },
                explanations: ExplanationEmbeddings([v(rng), v(rng), v(rng)]),
            },
            pattern: EmphasisPattern::from_bits(rng.random_range(0..7)),
        });
        targets.push(target);
        d_prev = POSITIONS[target];
    }
    TrainingSequence { days, targets }
}

#[test]
fn p04_user_model_gradient_check() {
    let t0 = Instant::now();
    let (dim, max_days, eps) = (6, 8, 1e-5);
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for point in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + point);
        let params = UserModelParams::init(dim, max_days, &mut rng);
        let len = rng.random_range(2..=max_days);
        let seq = random_sequence(&mut rng, len, dim);
        let mut grad = params.zeros_like();
        sequence_loss_and_grad(&params, &seq, Some(&mut grad)).unwrap();
        for (g, name) in GROUP_NAMES.iter().enumerate() {
            for i in 0..params.groups()[g].len() {
                let mut plus = params.clone();
                plus.groups_mut()[g][i] += eps;
                let mut minus = params.clone();
                minus.groups_mut()[g][i] -= eps;
                let numeric = (sequence_loss_and_grad(&plus, &seq, None).unwrap()
                    - sequence_loss_and_grad(&minus, &seq, None).unwrap())
                    / (2.0 * eps);
                let analytic = grad.groups()[g][i];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                if rel > worst {
                    worst = rel;
                    worst_at = format!("{name}[{i}] at point {point}");
                }
            }
        }
    }
    let elapsed = t0.elapsed();
    let pass = worst < 1e-4 && elapsed < Duration::from_secs(30);
    assert!(verdict(
        "P4",
        pass,
        format!("max relative error {worst:.2e} ({worst_at}) over {} groups x 10 points (tol 1e-4, < 30 s)", GROUP_NAMES.len()),
        elapsed
    ));
}

fn study_scenario() -> Scenario {
    let series = "seed=11,days=400,regime=random_walk".parse::<SynthSpec>().unwrap().generate().unwrap();
    let predictor = make_calibrated_predictor(&series, 5, 0.6, 0.5).unwrap();
    let window_start = select_window(&series, &predictor, EPISODE_DAYS, 0.6, 0.03).unwrap();
    Scenario {
        series: Arc::new(series),
        window_start,
        predictor: Arc::new(predictor),
        explainer: Arc::new(TemplateExplainer { seed: 0 }),
    }
}

fn susceptible(scenario: &Scenario, conditions: Vec<Condition>, users: usize, master_seed: u64) -> Experiment {
    Experiment {
        scenario: scenario.clone(),
        conditions,
        population: vec![PopulationGroup {
            kind: UserKind::Susceptible,
            count: users,
            beta: BetaSpec::Fixed(0.7),
            noise: None,
        }],
        replications: 1,
        master_seed,
        report: ReportOptions::default(),
    }
}

fn baseline(kind: StrategyKind) -> Condition {
    Condition::new(EmphasisStrategy::baseline(kind).unwrap(), AdvisorPolicy::Oracle)
}

struct Trained {
    model: Arc<UserModel>,
    held_out_ce: f64,
    elapsed: Duration,
}

fn trained_model() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let t0 = Instant::now();
        let scenario = study_scenario();
        let roulette = baseline(StrategyKind::Roulette);
        let logs = |users, seed| -> Vec<Vec<TrajectoryRecord>> {
            run_experiment(&susceptible(&scenario, vec![roulette.clone()], users, seed))
                .unwrap()
                .episodes
                .into_iter()
                .map(|e| e.outcome.records)
                .collect()
        };
        let embedder = HashingEmbedder::default();
        let train_seqs = build_sequences(&logs(80, 1), &embedder).unwrap();
        let test_seqs = build_sequences(&logs(20, 2), &embedder).unwrap();
        let report = train(&train_seqs, UserModelHyperParams::default()).unwrap();
        let held_out_ce = mean_cross_entropy(&report.model, &test_seqs).unwrap();
        Trained {
            model: Arc::new(report.model),
            held_out_ce,
            elapsed: t0.elapsed(),
        }
    })
}

#[test]
fn p05_user_model_learns() {
    let t = trained_model();
    let limit = 0.8 * 6f64.ln();
    let pass = t.held_out_ce <= limit && t.elapsed < Duration::from_secs(300);
    assert!(verdict(
        "P5",
        pass,
        format!("held-out cross-entropy {:.4} (limit {limit:.4}, < 300 s)", t.held_out_ce),
        t.elapsed
    ));
}

struct Closed {
    result: ExperimentResult,
    elapsed: Duration,
}

fn closed_loop() -> &'static Closed {
    static CELL: OnceLock<Closed> = OnceLock::new();
    CELL.get_or_init(|| {
        let model = trained_model().model.clone();
        let t0 = Instant::now();
        let conditions = vec![
            Condition::with_model(model, AdvisorPolicy::Oracle),
            baseline(StrategyKind::Roulette),
            baseline(StrategyKind::Flat),
            baseline(StrategyKind::Argmax),
        ];
        let result = run_experiment(&susceptible(&study_scenario(), conditions, 100, 3)).unwrap();
        Closed {
            result,
            elapsed: t0.elapsed() + trained_model().elapsed,
        }
    })
}

fn finals(result: &ExperimentResult, id: &str) -> Vec<f64> {
    result
        .episodes
        .iter()
        .filter(|e| e.strategy_id == id)
        .map(|e| e.outcome.final_assets)
        .collect()
}

#[test]
fn p06_method_outperforms_baselines() {
    let c = closed_loop();
    let method = finals(&c.result, "method-oracle");
    let mut pass = c.elapsed < Duration::from_secs(600);
    let mut detail = format!("method-oracle mean {:.0}", mean(&method));
    for other in ["roulette", "flat"] {
        let base = finals(&c.result, other);
        let diffs: Vec<f64> = method.iter().zip(&base).map(|(m, b)| m - b).collect();
        let (m, se) = (mean(&diffs), sample_sd(&diffs) / (diffs.len() as f64).sqrt());
        pass &= mean(&method) > mean(&base) && m > 2.0 * se;
        detail += &format!("; vs {other} mean {:.0}, paired diff {m:.0} (2 se = {:.0})", mean(&base), 2.0 * se);
    }
    assert!(verdict("P6", pass, detail + " (< 600 s)", c.elapsed));
}

#[test]
fn p07_flat_has_widest_spread() {
    let c = closed_loop();
    let sd = |id: &str| sample_sd(&finals(&c.result, id));
    let (flat, argmax, method) = (sd("flat"), sd("argmax"), sd("method-oracle"));
    let pass = flat >= argmax && flat >= method;
    assert!(verdict(
        "P7",
        pass,
        format!("SD flat {flat:.0} >= argmax {argmax:.0} and method-oracle {method:.0}"),
        c.elapsed
    ));
}

#[test]
fn p08_rl_beats_top1() {
    let t0 = Instant::now();
    let series = "seed=21,days=1500,regime=momentum,drift=0.001".parse::<SynthSpec>().unwrap().generate().unwrap();
    let predictor = make_calibrated_predictor(&series, 3, 0.9, 0.6).unwrap();
    let mut env = TradingEnv::with_episode_days(&series, &predictor).unwrap();
    let trained = train_rl_policy(&mut env, DdpgHyperParams::default()).unwrap();
    let starts = env.starts().to_vec();
    let (mut rl, mut top1) = (0.0, 0.0);
    for seed in 0..20u64 {
        let start = starts[ChaCha8Rng::seed_from_u64(seed).random_range(0..starts.len())];
        rl += env.rollout(start, |o| rl_decide(&trained.policy, o).shares()).unwrap() / 20.0;
        top1 += env
            .rollout(start, |o| naive_decide(o.today(), NaiveVariant::Top1).shares())
            .unwrap()
            / 20.0;
    }
    let elapsed = t0.elapsed();
    let pass = rl > top1 && elapsed < Duration::from_secs(600);
    assert!(verdict(
        "P8",
        pass,
        format!("mean 45-day profit over 20 seeded windows: rl {rl:.0} vs top1 {top1:.0} (< 600 s)"),
        elapsed
    ));
}

/// Best achievable profit over position sequences in D, by dynamic programming
/// over the held position. Prices are low enough that every position is affordable.
fn dp_optimum(closes: &[f64]) -> f64 {
    let mut value = [0.0f64; 6];
    for t in (0..closes.len() - 1).rev() {
        let step = closes[t + 1] - closes[t];
        let best_next = value.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (k, v) in value.iter_mut().enumerate() {
            *v = f64::from(POSITIONS[k]) * step + best_next;
        }
    }
    value.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Exhaustive search over every sequence, for short series.
fn brute_force(closes: &[f64]) -> f64 {
    let days = closes.len() - 1;
    let mut best = f64::NEG_INFINITY;
    for code in 0..6usize.pow(days as u32) {
        let mut c = code;
        let mut profit = 0.0;
        for t in 0..days {
            profit += f64::from(POSITIONS[c % 6]) * (closes[t + 1] - closes[t]);
            c /= 6;
        }
        best = best.max(profit);
    }
    best
}

#[test]
fn p09_oracle_is_optimal() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = 0;
    let cases = 300;
    for case in 0..cases {
        let days = rng.random_range(1..=10usize);
        let closes: Vec<f64> = (0..=days).map(|_| f64::from(rng.random_range(80u32..=120))).collect();
        let series = PriceSeries::from_closes(&closes, "p9").unwrap();
        let mut state = PortfolioState::initial(closes[0]);
        for (t, &close) in closes[..days].iter().enumerate() {
            let target = oracle_decide(&series, t).unwrap().shares() as u32;
            state = apply_order(&state, target, close).unwrap();
        }
        let profit = state.cash + f64::from(state.position) * closes[days] - INITIAL_CASH;
        let optimum = if days <= 6 { brute_force(&closes) } else { dp_optimum(&closes) };
        if profit != optimum || (days <= 6 && dp_optimum(&closes) != optimum) {
            failures += 1;
            eprintln!("case {case}: oracle {profit} optimum {optimum}");
        }
    }
    let pass = failures == 0;
    assert!(verdict("P9", pass, format!("{failures} / {cases} series where the oracle misses the optimum (exact)"), t0.elapsed()));
}

fn mixed_experiment(master_seed: u64) -> Experiment {
    let scenario = Scenario {
        window_start: 30,
        ..study_scenario()
    };
    Experiment {
        scenario,
        conditions: vec![
            baseline(StrategyKind::Flat),
            baseline(StrategyKind::Argmax),
            baseline(StrategyKind::Roulette),
            Condition::new(EmphasisStrategy::baseline(StrategyKind::Roulette).unwrap(), AdvisorPolicy::Naive(NaiveVariant::Top2))
                .with_id("roulette-top2"),
        ],
        population: vec![
            PopulationGroup {
                kind: UserKind::Susceptible,
                count: 8,
                beta: BetaSpec::Uniform { min: 0.2, max: 1.0 },
                noise: None,
            },
            PopulationGroup {
                kind: UserKind::Contrarian,
                count: 4,
                beta: BetaSpec::Fixed(0.8),
                noise: None,
            },
            PopulationGroup {
                kind: UserKind::Independent,
                count: 4,
                beta: BetaSpec::Fixed(0.5),
                noise: Some(0.3),
            },
        ],
        replications: 2,
        master_seed,
        report: ReportOptions::default(),
    }
}

#[test]
fn p10_accounting_identity() {
    let t0 = Instant::now();
    let exp = mixed_experiment(10);
    let result = run_experiment(&exp).unwrap();
    let series = &exp.scenario.series;
    let mut checked = 0;
    let mut violations = 0;
    for e in &result.episodes {
        let mut prev_assets = INITIAL_CASH;
        let mut prev_position = 0u32;
        let mut prev_close = series.close(exp.scenario.window_start).unwrap();
        for r in &e.outcome.records {
            let expected = f64::from(prev_position) * (r.close - prev_close);
            violations += usize::from(r.total_assets - prev_assets != expected);
            prev_assets = r.total_assets;
            prev_position = r.d_u;
            prev_close = r.close;
            checked += 1;
        }
        let settle = series.close(exp.scenario.window_start + EPISODE_DAYS).unwrap();
        violations += usize::from(e.outcome.final_assets - prev_assets != f64::from(prev_position) * (settle - prev_close));
        checked += 1;
    }
    let pass = violations == 0;
    assert!(verdict(
        "P10",
        pass,
        format!("{violations} violations of assets change = position x price change over {checked} steps (exact)"),
        t0.elapsed()
    ));
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn p11_runs_are_byte_identical() {
    let t0 = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_to_dir(&mixed_experiment(11), a.path()).unwrap();
    run_to_dir(&mixed_experiment(11), b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    let pass = !ta.is_empty() && ta == tb;
    assert!(verdict("P11", pass, format!("{} files compared byte for byte", ta.len()), t0.elapsed()));
}

#[test]
fn p12_calibration_and_window() {
    let t0 = Instant::now();
    let series = "seed=12,days=10001,regime=random_walk".parse::<SynthSpec>().unwrap().generate().unwrap();
    let predictor = make_calibrated_predictor(&series, 12, 0.6, 0.5).unwrap();
    let flags: Vec<bool> = daily_correctness(&series, &predictor).into_iter().flatten().collect();
    let accuracy = flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64;
    let window = select_window(&series, &predictor, EPISODE_DAYS, 0.6, 0.03);
    let window_acc = window
        .as_ref()
        .ok()
        .and_then(|&s| window_accuracy(&series, &predictor, s, EPISODE_DAYS));
    let pass = flags.len() == 10_000
        && (0.57..=0.63).contains(&accuracy)
        && window_acc.is_some_and(|a| (a - 0.6).abs() <= 0.03 + 1e-12);
    assert!(verdict(
        "P12",
        pass,
        format!(
            "accuracy {accuracy:.4} over {} days (want [0.57, 0.63]); window {:?} accuracy {:?} (want 0.6 +/- 0.03)",
            flags.len(),
            window.ok(),
            window_acc
        ),
        t0.elapsed()
    ));
}

fn record(day: usize, d_ai: f64, d_u: u32) -> TrajectoryRecord {
    TrajectoryRecord {
        day,
        series_day: day,
        p: ClassProbabilities::uniform(),
        explanations: ExplanationSet::new(day, ["a".into(), "b".into(), "c".into()]).unwrap(),
        pattern: EmphasisPattern::FLAT,
        d_prev: 0,
        d_u,
        d_ai,
        delta: 0.0,
        close: 100.0,
        total_assets: INITIAL_CASH,
        strategy_id: "p13".into(),
    }
}

#[test]
fn p13_contrarian_metric() {
    let t0 = Instant::now();
    let advice = [500.0, 0.0, 300.0, 100.0, 500.0, 200.0];
    let complier: Vec<_> = advice.iter().enumerate().map(|(t, &a)| record(t, a, a as u32)).collect();
    let contrarian: Vec<_> = advice.iter().enumerate().map(|(t, &a)| record(t, a, 500 - a as u32)).collect();
    let (c, k) = (correlation_per_user(&complier), correlation_per_user(&contrarian));
    let pass = c == Some(1.0) && k == Some(-1.0);
    assert!(verdict("P13", pass, format!("complier r = {c:?}, contrarian r = {k:?}"), t0.elapsed()));
}
