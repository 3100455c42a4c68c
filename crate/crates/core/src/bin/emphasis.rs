//! Command-line entry point: predictors, explanation corpora, user models,
//! advisor policies, emphasis selection, batch experiments and the session
//! server.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use emphasis_core::explanation::{write_corpus, Corpus, ExplanationSource, HashingEmbedder, TemplateExplainer};
use emphasis_core::harness::{run_to_dir, ExperimentConfig};
use emphasis_core::market_data::{load_series, select_window, window_accuracy, PriceSeries, SynthSpec};
use emphasis_core::policy::{naive_decide, oracle_decide, rl_decide, train_rl_policy, DdpgHyperParams, NaiveVariant, RlPolicy, TradingEnv};
use emphasis_core::predictor::{
    build_dataset, make_calibrated_predictor, train_softmax_predictor, PredictorFile, ProbabilitySource,
    SoftmaxHyperParams,
};
use emphasis_core::selector::select_emphasis;
use emphasis_core::session::http::router;
use emphasis_core::session::{SessionConfig, SessionManager};
use emphasis_core::sim::load_episodes;
use emphasis_core::user_model::{build_sequences, mean_cross_entropy, train, UserModel, UserModelHyperParams};
use emphasis_core::AdvisorDecision;

#[derive(Parser)]
#[command(name = "emphasis", version, about = "Emphasis selection for explanation-guided trading advice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic price series as CSV.
    Series {
        #[arg(long)]
        synth: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, evaluate or calibrate the class-probability predictor.
    #[command(subcommand)]
    Predictor(PredictorCmd),
    /// Generate explanation corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Train or evaluate the user decision model.
    #[command(subcommand)]
    Usermodel(UserModelCmd),
    /// Train or evaluate advisor policies.
    #[command(subcommand)]
    Policy(PolicyCmd),
    /// Score the seven emphasis patterns for one logged day.
    Select {
        #[arg(long)]
        model: PathBuf,
        /// Episode log (JSONL); days before `--day` form the history.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        day: usize,
        /// Advisor decision in shares; defaults to the logged one.
        #[arg(long)]
        d_ai: Option<f64>,
    },
    /// Run batch experiments over synthetic users.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Serve the session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `store_dir`.
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SeriesArg {
    /// CSV with date_index,open,high,low,close.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Synthetic series, e.g. `seed=1,days=500,regime=momentum`.
    #[arg(long)]
    synth: Option<String>,
}

impl SeriesArg {
    fn load(&self) -> Result<PriceSeries> {
        match (&self.series, &self.synth) {
            (Some(path), _) => Ok(load_series(path)?),
            (_, Some(spec)) => Ok(spec.parse::<SynthSpec>()?.generate()?),
            _ => bail!("one of --series or --synth is required"),
        }
    }
}

#[derive(Subcommand)]
enum PredictorCmd {
    /// Fit the softmax chart classifier.
    Train {
        #[command(flatten)]
        series: SeriesArg,
        #[arg(long, default_value_t = 20)]
        lookback: usize,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report argmax accuracy over the series.
    Eval {
        #[command(flatten)]
        series: SeriesArg,
        #[arg(long)]
        predictor: PathBuf,
    },
    /// Build a predictor with a target accuracy and find a matching window.
    Calibrate {
        #[command(flatten)]
        series: SeriesArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.6)]
        target: f64,
        #[arg(long, default_value_t = 0.5)]
        confidence: f64,
        #[arg(long, default_value_t = 0.03)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Write template explanations for every scoreable day.
    Generate {
        #[command(flatten)]
        series: SeriesArg,
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum UserModelCmd {
    /// Train on a directory (or file) of episode logs.
    Train {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mean per-day cross-entropy on held-out logs.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        logs: PathBuf,
    },
}

#[derive(Subcommand)]
enum PolicyCmd {
    /// Train the actor-critic advisor.
    TrainRl {
        #[command(flatten)]
        series: SeriesArg,
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a trained policy with the naive policies and holding, or with
    /// `--strategy` write one window's daily decisions as CSV.
    Eval {
        #[command(flatten)]
        series: SeriesArg,
        #[arg(long)]
        predictor: PathBuf,
        /// Trained actor; required for the comparison and for `--strategy rl`.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Evaluate every n-th eligible start.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Window start for `--strategy`; defaults to the first eligible one.
        #[arg(long)]
        start: Option<usize>,
        /// CSV destination for `--strategy`; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StrategyArg {
    Oracle,
    Rl,
    Top1,
    Top2,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run a configured experiment and write logs and the report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_predictor(path: &Path) -> Result<Box<dyn ProbabilitySource>> {
    Ok(PredictorFile::load(path)
        .with_context(|| format!("loading predictor {}", path.display()))?
        .into_source())
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn accuracy(series: &PriceSeries, predictor: &dyn ProbabilitySource) -> Option<f64> {
    let flags: Vec<bool> = emphasis_core::market_data::daily_correctness(series, predictor)
        .into_iter()
        .flatten()
        .collect();
    (!flags.is_empty()).then(|| flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

fn predictor_cmd(cmd: PredictorCmd) -> Result<()> {
    match cmd {
        PredictorCmd::Train {
            series,
            lookback,
            epochs,
            lr,
            seed,
            out,
        } => {
            let series = series.load()?;
            let data = build_dataset(&series, lookback)?;
            let hp = SoftmaxHyperParams {
                learning_rate: lr,
                epochs,
                seed,
                ..Default::default()
            };
            let trained = train_softmax_predictor(&data, hp)?;
            trained.predictor.save(&out)?;
            let first = trained.loss_curve.first().copied().unwrap_or(f64::NAN);
            let last = trained.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!("trained on {} days, loss {first:.4} -> {last:.4}", data.len());
            if let Some(acc) = accuracy(&series, &trained.predictor) {
                println!("in-sample accuracy {acc:.4}");
            }
        }
        PredictorCmd::Eval { series, predictor } => {
            let series = series.load()?;
            let p = load_predictor(&predictor)?;
            match accuracy(&series, p.as_ref()) {
                Some(acc) => println!("accuracy {acc:.4}"),
                None => bail!("no scoreable days"),
            }
        }
        PredictorCmd::Calibrate {
            series,
            seed,
            target,
            confidence,
            tolerance,
            out,
        } => {
            let series = series.load()?;
            let p = make_calibrated_predictor(&series, seed, target, confidence)?;
            p.save(&out)?;
            println!("overall accuracy {:.4}", accuracy(&series, &p).unwrap_or(f64::NAN));
            let start = select_window(&series, &p, emphasis_core::types::EPISODE_DAYS, target, tolerance)?;
            let acc = window_accuracy(&series, &p, start, emphasis_core::types::EPISODE_DAYS).unwrap_or(f64::NAN);
            println!("window start {start} accuracy {acc:.4}");
        }
    }
    Ok(())
}

fn corpus_cmd(cmd: CorpusCmd) -> Result<()> {
    let CorpusCmd::Generate {
        series,
        predictor,
        seed,
        out,
    } = cmd;
    let series = series.load()?;
    let p = load_predictor(&predictor)?;
    let explainer = TemplateExplainer { seed };
    let mut corpus = Corpus::new();
    for t in 0..series.len() {
        let Ok(probs) = p.probabilities(&series, t) else { continue };
        if let Ok(set) = explainer.explanations(&series, t, &probs) {
            corpus.insert(t, set);
        }
    }
    write_corpus(&out, &corpus)?;
    println!("wrote {} days to {}", corpus.len(), out.display());
    Ok(())
}

fn usermodel_cmd(cmd: UserModelCmd) -> Result<()> {
    match cmd {
        UserModelCmd::Train {
            logs,
            out,
            epochs,
            lr,
            batch_size,
            dim,
            seed,
        } => {
            let defaults = UserModelHyperParams::default();
            let hp = UserModelHyperParams {
                epochs: epochs.unwrap_or(defaults.epochs),
                learning_rate: lr.unwrap_or(defaults.learning_rate),
                batch_size: batch_size.unwrap_or(defaults.batch_size),
                dim: dim.unwrap_or(defaults.dim),
                seed,
                ..defaults
            };
            let episodes = load_episodes(&logs)?;
            let sequences = build_sequences(&episodes, &HashingEmbedder { dim: hp.dim })?;
            let report = train(&sequences, hp)?;
            report.model.save(&out)?;
            let first = report.loss_curve.first().copied().unwrap_or(f64::NAN);
            let last = report.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!("{} episodes, cross-entropy {first:.4} -> {last:.4}", sequences.len());
        }
        UserModelCmd::Eval { model, logs } => {
            let model = UserModel::load(&model)?;
            let sequences = build_sequences(&load_episodes(&logs)?, &model.embedder())?;
            println!("cross-entropy {:.4}", mean_cross_entropy(&model, &sequences)?);
        }
    }
    Ok(())
}

fn policy_cmd(cmd: PolicyCmd) -> Result<()> {
    match cmd {
        PolicyCmd::TrainRl {
            series,
            predictor,
            episodes,
            seed,
            out,
        } => {
            let series = series.load()?;
            let p = load_predictor(&predictor)?;
            let mut env = TradingEnv::with_episode_days(&series, p.as_ref())?;
            let defaults = DdpgHyperParams::default();
            let hp = DdpgHyperParams {
                episodes: episodes.unwrap_or(defaults.episodes),
                seed,
                ..defaults
            };
            let trained = train_rl_policy(&mut env, hp)?;
            trained.policy.save(&out)?;
            let tail = &trained.episode_returns[trained.episode_returns.len().saturating_sub(50)..];
            if !tail.is_empty() {
                println!(
                    "{} episodes, mean return of the last {} {:.0}",
                    trained.episode_returns.len(),
                    tail.len(),
                    tail.iter().sum::<f64>() / tail.len() as f64
                );
            }
        }
        PolicyCmd::Eval {
            series,
            predictor,
            policy,
            stride,
            strategy,
            start,
            out,
        } => {
            let series = series.load()?;
            let p = load_predictor(&predictor)?;
            let policy = policy.as_deref().map(RlPolicy::load).transpose()?;
            let mut env = TradingEnv::with_episode_days(&series, p.as_ref())?;
            if let Some(strategy) = strategy {
                return decisions_csv(&mut env, &series, policy.as_ref(), strategy, start, out.as_deref());
            }
            let policy = policy.context("--policy is required without --strategy")?;
            let starts: Vec<usize> = env.starts().iter().copied().step_by(stride.max(1)).collect();
            let mut totals = [0.0; 4];
            for &s in &starts {
                totals[0] += env.rollout(s, |o| rl_decide(&policy, o).shares())?;
                totals[1] += env.rollout(s, |o| naive_decide(o.today(), NaiveVariant::Top1).shares())?;
                totals[2] += env.rollout(s, |o| naive_decide(o.today(), NaiveVariant::Top2).shares())?;
                totals[3] += env.rollout(s, |_| 500.0)?;
            }
            println!("mean 45-day profit over {} starts", starts.len());
            for (name, total) in ["rl", "top1", "top2", "hold"].iter().zip(totals) {
                println!("{name:>5} {:>12.0}", total / starts.len() as f64);
            }
        }
    }
    Ok(())
}

fn decisions_csv(
    env: &mut TradingEnv,
    series: &PriceSeries,
    policy: Option<&RlPolicy>,
    strategy: StrategyArg,
    start: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    if matches!(strategy, StrategyArg::Rl) && policy.is_none() {
        bail!("--strategy rl needs --policy");
    }
    let start = start.unwrap_or(env.starts()[0]);
    let mut obs = env.reset_to(start)?;
    let sink: Box<dyn std::io::Write> = match out {
        Some(path) => Box::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["day", "series_day", "d_ai", "reward"])?;
    let mut day = 0;
    loop {
        let d_ai = match strategy {
            StrategyArg::Oracle => oracle_decide(series, start + day)?,
            StrategyArg::Rl => rl_decide(policy.expect("checked above"), &obs),
            StrategyArg::Top1 => naive_decide(obs.today(), NaiveVariant::Top1),
            StrategyArg::Top2 => naive_decide(obs.today(), NaiveVariant::Top2),
        };
        let (next, reward, done) = env.step(d_ai.shares());
        w.write_record([day.to_string(), (start + day).to_string(), d_ai.shares().to_string(), (reward + 0.0).to_string()])?;
        if done {
            break;
        }
        obs = next;
        day += 1;
    }
    w.flush()?;
    Ok(())
}

fn select_cmd(model: &Path, log: &Path, day: usize, d_ai: Option<f64>) -> Result<()> {
    let model = UserModel::load(model)?;
    let records = emphasis_core::sim::load_jsonl(log)?;
    let idx = records
        .iter()
        .position(|r| r.day == day)
        .with_context(|| format!("day {day} not in {}", log.display()))?;
    let seq = build_sequences(&[records[..=idx].to_vec()], &model.embedder())?
        .pop()
        .context("empty log")?;
    let (current, history) = seq.days.split_last().context("empty log")?;
    let d_ai = AdvisorDecision::new(d_ai.unwrap_or(records[idx].d_ai))?;
    let result = select_emphasis(&model, history, &current.input, d_ai)?;
    for s in &result.scores {
        let mark = if s.pattern == result.chosen { "*" } else { " " };
        println!("{mark} {} expected gap {:.3}", s.pattern, s.expected_gap);
    }
    Ok(())
}

fn serve(port: u16, config: &Path, store: Option<PathBuf>) -> Result<()> {
    let mut cfg = SessionConfig::load(config)?;
    if store.is_some() {
        cfg.store_dir = store;
    }
    let manager = Arc::new(SessionManager::from_config(&cfg, &base_dir(config))?);
    log::info!("{} session(s) resumed", manager.session_count());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        println!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(manager)).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Series { synth, out } => {
            let series = synth.parse::<SynthSpec>()?.generate()?;
            series.write_csv(&out)?;
            println!("wrote {} bars to {}", series.len(), out.display());
        }
        Command::Predictor(cmd) => predictor_cmd(cmd)?,
        Command::Corpus(cmd) => corpus_cmd(cmd)?,
        Command::Usermodel(cmd) => usermodel_cmd(cmd)?,
        Command::Policy(cmd) => policy_cmd(cmd)?,
        Command::Select { model, log, day, d_ai } => select_cmd(&model, &log, day, d_ai)?,
        Command::Experiment(ExperimentCmd::Run { config, out }) => {
            let exp = ExperimentConfig::load(&config)?.resolve(&base_dir(&config))?;
            let result = run_to_dir(&exp, &out)?;
            for s in &result.summaries {
                println!("{:<20} n={:<5} mean {:>12.0} sd {:>10.0}", s.strategy_id, s.episodes, s.mean, s.sd);
            }
            println!("report written to {}", out.join("report").display());
        }
        Command::Serve { port, config, store } => serve(port, &config, store)?,
    }
    Ok(())
}
