//! Seeded batch experiments over synthetic user populations.
//!
//! Every (condition, user, replication) episode runs with its own derived
//! seeds. The user's noise stream depends only on (master seed, user,
//! replication), so conditions are compared user by user. The strategy's own
//! randomness is keyed by a hash of the condition id, which keeps other
//! conditions' trajectories unchanged when a condition is added or removed.

mod config;
mod metrics;
mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    BetaSpec, Condition, ConditionSpec, Experiment, ExperimentConfig, ExplanationSpec, PopulationGroup,
    PredictorSpec, ReportOptions, Scenario, ScenarioSpec, SeriesSpec, WindowSpec,
};
pub use metrics::{
    correlation_per_user, final_assets_from_records, flag_outliers, mean, pearson, quantile, sample_sd,
    summarize_all, summarize_condition, ConditionSummary, EpisodeStat, Histogram,
};
pub use report::render_report;

pub(crate) use config::{resolve_condition, ModelCache};

use crate::error::{Error, Result};
use crate::sim::{run_episode, save_jsonl, EpisodeEnv, EpisodeOutcome, SyntheticAgent, SyntheticUser};
use crate::types::{derive_seed, fnv1a};

pub(crate) const USER_STREAM: u64 = 0x7573_6572;
pub(crate) const BETA_STREAM: u64 = 0x6265_7461;

/// Seed of the condition's own randomness (e.g. ROULETTE draws).
pub fn strategy_seed(master: u64, strategy_id: &str, user: usize, rep: usize) -> u64 {
    derive_seed(master, &[fnv1a(strategy_id.as_bytes()), user as u64, rep as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub strategy_id: String,
    pub user_index: usize,
    pub replication: usize,
    pub user: SyntheticUser,
    pub outcome: EpisodeOutcome,
}

impl EpisodeLog {
    pub fn file_name(&self) -> String {
        format!("u{:04}_r{:02}.jsonl", self.user_index, self.replication)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Ordered by condition, then user, then replication.
    pub episodes: Vec<EpisodeLog>,
    pub summaries: Vec<ConditionSummary>,
}

impl Experiment {
    pub fn env(&self, condition: &Condition) -> EpisodeEnv {
        EpisodeEnv::new(
            self.scenario.series.clone(),
            self.scenario.window_start,
            self.scenario.predictor.clone(),
            self.scenario.explainer.clone(),
            condition.strategy.clone(),
            condition.policy.clone(),
        )
        .with_embedder(condition.embedder.clone())
        .with_strategy_id(condition.id.clone())
    }
}

/// Runs every episode on the rayon pool and summarizes per condition.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentResult> {
    if exp.conditions.is_empty() {
        return Err(Error::Config("strategy list is empty".into()));
    }
    if exp.replications == 0 || exp.user_count() == 0 {
        return Err(Error::Config("population and replications must be non-empty".into()));
    }
    let users = exp.user_count();
    let mut jobs = Vec::with_capacity(exp.conditions.len() * users * exp.replications);
    for c in 0..exp.conditions.len() {
        for u in 0..users {
            for r in 0..exp.replications {
                jobs.push((c, u, r));
            }
        }
    }
    let episodes = jobs
        .par_iter()
        .map(|&(c, u, r)| {
            let cond = &exp.conditions[c];
            let user = exp.user(u, r)?;
            let mut agent = SyntheticAgent::new(user);
            let seed = strategy_seed(exp.master_seed, &cond.id, u, r);
            let outcome = run_episode(exp.env(cond), seed, &mut agent)?;
            Ok(EpisodeLog {
                strategy_id: cond.id.clone(),
                user_index: u,
                replication: r,
                user,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize_episodes(&exp.conditions, &episodes, exp.report)?;
    Ok(ExperimentResult { episodes, summaries })
}

fn summarize_episodes(
    conditions: &[Condition],
    episodes: &[EpisodeLog],
    options: ReportOptions,
) -> Result<Vec<ConditionSummary>> {
    let grouped = conditions
        .iter()
        .map(|c| {
            let stats = episodes
                .iter()
                .filter(|e| e.strategy_id == c.id)
                .map(|e| EpisodeStat {
                    user_index: e.user_index,
                    replication: e.replication,
                    final_assets: e.outcome.final_assets,
                    correlation: correlation_per_user(&e.outcome.records),
                    outlier: false,
                })
                .collect();
            (c.id.clone(), stats)
        })
        .collect();
    summarize_all(grouped, options.histogram_bins, options.outlier_sd)
}

/// Writes one JSONL file per episode under `dir/<strategy_id>/`.
pub fn write_logs(episodes: &[EpisodeLog], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(episodes.len());
    for e in episodes {
        let sub = dir.join(&e.strategy_id);
        std::fs::create_dir_all(&sub).map_err(|err| Error::io(&sub, err))?;
        let path = sub.join(e.file_name());
        save_jsonl(&path, &e.outcome.records)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Runs the experiment and writes `logs/` and `report/` under `out_dir`.
pub fn run_to_dir(exp: &Experiment, out_dir: &Path) -> Result<ExperimentResult> {
    let result = run_experiment(exp)?;
    write_logs(&result.episodes, &out_dir.join("logs"))?;
    render_report(&result.summaries, &out_dir.join("report"))?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::UserKind;

    fn config(strategies: &str, population: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "series": {{"synth": "seed=3,days=120,regime=momentum"}},
                "window": {{"start": 10}},
                "predictor": {{"calibrated": {{"seed": 1, "target_accuracy": 0.6}}}},
                "strategies": {strategies},
                "population": {population},
                "master_seed": 9
            }}"#
        );
        serde_json::from_str(&text).unwrap()
    }

    const TWO: &str = r#"[{"emphasis": "flat"}, {"emphasis": "roulette"}]"#;
    const TEN: &str = r#"[{"kind": "susceptible", "count": 10, "beta": 0.7}]"#;

    #[test]
    fn counts_one_log_per_episode() {
        let exp = config(TWO, TEN).resolve(Path::new(".")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let result = run_experiment(&exp).unwrap();
        let paths = write_logs(&result.episodes, dir.path()).unwrap();
        assert_eq!(paths.len(), 20);
        assert!(paths.iter().all(|p| p.exists()));
        assert_eq!(result.summaries.len(), 2);
        assert!(result.summaries.iter().all(|s| s.episodes == 10));
    }

    #[test]
    fn same_seed_same_summaries() {
        let exp = config(TWO, TEN).resolve(Path::new(".")).unwrap();
        let a = run_experiment(&exp).unwrap();
        let b = run_experiment(&exp).unwrap();
        assert_eq!(a.summaries, b.summaries);
        assert_eq!(a.episodes, b.episodes);
    }

    #[test]
    fn independent_users_ignore_emphasis() {
        let pop = r#"[{"kind": "independent", "count": 6, "beta": 0.5}]"#;
        let strategies = r#"[{"emphasis": "flat"}, {"emphasis": "argmax"}, {"emphasis": "roulette"}]"#;
        let exp = config(strategies, pop).resolve(Path::new(".")).unwrap();
        let result = run_experiment(&exp).unwrap();
        let finals = |id: &str| -> Vec<f64> {
            result
                .episodes
                .iter()
                .filter(|e| e.strategy_id == id)
                .map(|e| e.outcome.final_assets)
                .collect()
        };
        assert_eq!(finals("flat"), finals("argmax"));
        assert_eq!(finals("flat"), finals("roulette"));
    }

    #[test]
    fn adding_a_condition_keeps_others() {
        let one = config(r#"[{"emphasis": "roulette"}]"#, TEN).resolve(Path::new(".")).unwrap();
        let two = config(r#"[{"emphasis": "argmax"}, {"emphasis": "roulette"}]"#, TEN)
            .resolve(Path::new("."))
            .unwrap();
        let a = run_experiment(&one).unwrap();
        let b = run_experiment(&two).unwrap();
        let roulette: Vec<_> = b.episodes.iter().filter(|e| e.strategy_id == "roulette").cloned().collect();
        assert_eq!(a.episodes, roulette);
    }

    #[test]
    fn beta_ranges_are_sampled_per_user() {
        let pop = r#"[{"kind": "contrarian", "count": 5, "beta": {"min": 0.2, "max": 0.8}}, {"kind": "susceptible", "count": 1, "beta": 1.0}]"#;
        let exp = config(TWO, pop).resolve(Path::new(".")).unwrap();
        let betas: Vec<f64> = (0..5).map(|u| exp.user(u, 0).unwrap().beta).collect();
        assert!(betas.iter().all(|b| (0.2..=0.8).contains(b)));
        assert_eq!(exp.user(2, 0).unwrap().beta, exp.user(2, 1).unwrap().beta);
        assert_ne!(exp.user(2, 0).unwrap().seed, exp.user(2, 1).unwrap().seed);
        assert_eq!(exp.user(5, 0).unwrap().kind, UserKind::Susceptible);
        assert!(exp.user(6, 0).is_err());
    }

    #[test]
    fn configuration_errors_surface_before_running() {
        let bad = |s: &str, p: &str| config(s, p).resolve(Path::new(".")).err().unwrap();
        assert!(matches!(bad("[]", TEN), Error::Config(_)));
        assert!(matches!(bad(TWO, "[]"), Error::Config(_)));
        assert!(matches!(bad(r#"[{"emphasis": "method"}]"#, TEN), Error::Config(_)));
        assert!(matches!(
            bad(r#"[{"emphasis": "method", "user_model": "missing.json"}]"#, TEN),
            Error::Config(_)
        ));
        assert!(matches!(bad(r#"[{"emphasis": "flat", "policy": "rl"}]"#, TEN), Error::Config(_)));
        assert!(matches!(bad(r#"[{"emphasis": "flat"}, {"emphasis": "flat"}]"#, TEN), Error::Config(_)));
        assert!(matches!(bad(r#"[{"emphasis": "flat", "id": "a/b"}]"#, TEN), Error::Config(_)));
        let pop = r#"[{"kind": "susceptible", "count": 1, "beta": 1.5}]"#;
        assert!(matches!(bad(TWO, pop), Error::Config(_)));
    }

    #[test]
    fn report_is_byte_deterministic() {
        let exp = config(TWO, TEN).resolve(Path::new(".")).unwrap();
        let result = run_experiment(&exp).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = render_report(&result.summaries, a.path()).unwrap();
        let pb = render_report(&result.summaries, b.path()).unwrap();
        assert_eq!(pa.len(), 2 * 2 + 3);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        assert!(matches!(render_report(&[], a.path()), Err(Error::Config(_))));
    }
}
