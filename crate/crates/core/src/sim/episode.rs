use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::portfolio::{apply_order, max_affordable_position, PortfolioState};
use super::record::TrajectoryRecord;
use super::user::{synthetic_decide, SyntheticUser};
use crate::error::{Error, Result};
use crate::explanation::{EmbeddingProvider, ExplanationEmbeddings, ExplanationSet, ExplanationSource, HashingEmbedder};
use crate::market_data::PriceSeries;
use crate::policy::{AdvisorPolicy, PolicyObservation};
use crate::predictor::ProbabilitySource;
use crate::selector::{EmphasisStrategy, SelectionResult};
use crate::types::{derive_seed, AdvisorDecision, ClassProbabilities, EPISODE_DAYS};
use crate::user_model::{Context, DayInput, ObservedDay};

/// Everything an episode needs besides the decision maker. Cheap to clone.
#[derive(Clone)]
pub struct EpisodeEnv {
    pub series: Arc<PriceSeries>,
    pub window_start: usize,
    pub predictor: Arc<dyn ProbabilitySource>,
    pub explainer: Arc<dyn ExplanationSource>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub strategy: EmphasisStrategy,
    pub policy: AdvisorPolicy,
    /// Label written into every record, e.g. `method-oracle`.
    pub strategy_id: String,
}

impl EpisodeEnv {
    pub fn new(
        series: Arc<PriceSeries>,
        window_start: usize,
        predictor: Arc<dyn ProbabilitySource>,
        explainer: Arc<dyn ExplanationSource>,
        strategy: EmphasisStrategy,
        policy: AdvisorPolicy,
    ) -> Self {
        let strategy_id = default_strategy_id(&strategy, &policy);
        Self {
            series,
            window_start,
            predictor,
            explainer,
            embedder: Arc::new(HashingEmbedder::default()),
            strategy,
            policy,
            strategy_id,
        }
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn with_strategy_id(mut self, id: impl Into<String>) -> Self {
        self.strategy_id = id.into();
        self
    }

    /// Settlement day index (the close after the last trading day).
    pub fn settlement_day(&self) -> usize {
        self.window_start + EPISODE_DAYS
    }

    pub fn validate(&self) -> Result<()> {
        if self.settlement_day() >= self.series.len() {
            return Err(Error::OutOfRange(format!(
                "window starting at {} needs {} closes but the series has {}",
                self.window_start,
                EPISODE_DAYS + 1,
                self.series.len().saturating_sub(self.window_start)
            )));
        }
        Ok(())
    }
}

/// `method-oracle` for the method, bare baseline name otherwise.
pub fn default_strategy_id(strategy: &EmphasisStrategy, policy: &AdvisorPolicy) -> String {
    match strategy.kind {
        crate::selector::StrategyKind::Method => format!("method-{}", policy.id()),
        other => other.id().to_string(),
    }
}

/// What is decided before the user acts on a day.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayPlan {
    pub day: usize,
    pub series_day: usize,
    pub p: ClassProbabilities,
    pub explanations: ExplanationSet,
    pub selection: SelectionResult,
    pub d_ai: AdvisorDecision,
    pub delta: f64,
    pub close: f64,
    /// Portfolio marked to today's close, before the order.
    pub state: PortfolioState,
}

/// Source of the user's daily position.
pub trait DecisionSource {
    fn decide(&mut self, plan: &DayPlan) -> Result<u32>;
}

/// Synthetic user with its own seeded noise stream.
#[derive(Debug, Clone)]
pub struct SyntheticAgent {
    pub user: SyntheticUser,
    rng: ChaCha8Rng,
}

impl SyntheticAgent {
    pub fn new(user: SyntheticUser) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(user.seed),
            user,
        }
    }
}

impl DecisionSource for SyntheticAgent {
    fn decide(&mut self, plan: &DayPlan) -> Result<u32> {
        Ok(synthetic_decide(
            &self.user,
            &plan.p,
            plan.selection.chosen,
            &plan.state,
            plan.close,
            &mut self.rng,
        ))
    }
}

impl<F: FnMut(&DayPlan) -> Result<u32>> DecisionSource for F {
    fn decide(&mut self, plan: &DayPlan) -> Result<u32> {
        self(plan)
    }
}

/// Day-by-day episode state machine shared by batch runs and live sessions.
pub struct Episode {
    env: EpisodeEnv,
    seed: u64,
    state: PortfolioState,
    day: usize,
    records: Vec<TrajectoryRecord>,
    history: Vec<ObservedDay>,
    p_history: Vec<ClassProbabilities>,
    plan: Option<(DayPlan, ExplanationEmbeddings)>,
    prev_assets: f64,
}

impl Episode {
    pub fn new(env: EpisodeEnv, seed: u64) -> Result<Self> {
        env.validate()?;
        let state = PortfolioState::initial(env.series.close(env.window_start)?);
        let prev_assets = state.total_assets();
        Ok(Self {
            env,
            seed,
            state,
            day: 0,
            records: Vec::with_capacity(EPISODE_DAYS),
            history: Vec::new(),
            p_history: Vec::new(),
            plan: None,
            prev_assets,
        })
    }

    pub fn env(&self) -> &EpisodeEnv {
        &self.env
    }

    pub fn day(&self) -> usize {
        self.day
    }

    pub fn is_complete(&self) -> bool {
        self.day >= EPISODE_DAYS
    }

    pub fn state(&self) -> &PortfolioState {
        &self.state
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    /// Today's plan, computed once per day.
    pub fn plan(&mut self) -> Result<&DayPlan> {
        if self.is_complete() {
            return Err(Error::Conflict("episode already completed".into()));
        }
        if self.plan.is_none() {
            self.plan = Some(self.compute_plan()?);
        }
        Ok(&self.plan.as_ref().expect("just computed").0)
    }

    fn compute_plan(&mut self) -> Result<(DayPlan, ExplanationEmbeddings)> {
        let env = &self.env;
        let series = env.series.as_ref();
        let t = env.window_start + self.day;
        let close = series.close(t)?;
        let mut state = self.state;
        state.mark(close);
        let assets = state.total_assets();
        let delta = if self.day == 0 {
            0.0
        } else {
            (assets / self.prev_assets - 1.0) * 100.0
        };
        let p = env.predictor.probabilities(series, t)?;
        let explanations = env.explainer.explanations(series, t, &p)?;
        let mut recent = self.p_history.clone();
        recent.push(p);
        let obs = PolicyObservation::new(&recent, f64::from(state.position));
        let d_ai = env.policy.decide(series, t, &obs)?;
        let embeddings = if env.strategy.needs_embeddings() {
            ExplanationEmbeddings::embed(&explanations, env.embedder.as_ref())?
        } else {
            ExplanationEmbeddings([Vec::new(), Vec::new(), Vec::new()])
        };
        let current = DayInput {
            context: Context {
                t: self.day,
                delta,
                p,
                d_prev: state.position,
            },
            explanations: embeddings,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.day as u64]));
        let selection = env.strategy.choose(&self.history, &current, d_ai, &mut rng)?;
        Ok((
            DayPlan {
                day: self.day,
                series_day: t,
                p,
                explanations,
                selection,
                d_ai,
                delta,
                close,
                state,
            },
            current.explanations,
        ))
    }

    /// Executes today's order at the close and advances one day. A rejected
    /// order leaves the episode unchanged.
    pub fn submit(&mut self, target: u32) -> Result<&TrajectoryRecord> {
        self.plan()?;
        let (plan, embeddings) = self.plan.as_ref().expect("planned");
        let after = apply_order(&plan.state, target, plan.close)?;
        let record = TrajectoryRecord {
            day: plan.day,
            series_day: plan.series_day,
            p: plan.p,
            explanations: plan.explanations.clone(),
            pattern: plan.selection.chosen,
            d_prev: plan.state.position,
            d_u: target,
            d_ai: plan.d_ai.shares(),
            delta: plan.delta,
            close: plan.close,
            total_assets: after.total_assets(),
            strategy_id: self.env.strategy_id.clone(),
        };
        if self.env.strategy.needs_embeddings() {
            self.history.push(ObservedDay {
                input: DayInput {
                    context: Context {
                        t: plan.day,
                        delta: plan.delta,
                        p: plan.p,
                        d_prev: plan.state.position,
                    },
                    explanations: embeddings.clone(),
                },
                pattern: plan.selection.chosen,
            });
        }
        self.p_history.push(plan.p);
        self.prev_assets = after.total_assets();
        self.state = after;
        self.records.push(record);
        self.day += 1;
        self.plan = None;
        Ok(self.records.last().expect("just pushed"))
    }

    /// Largest order the account can currently afford.
    pub fn max_affordable(&mut self) -> Result<u32> {
        let plan = self.plan()?;
        Ok(max_affordable_position(&plan.state, plan.close))
    }

    /// Total assets marked at the settlement close once complete, otherwise at
    /// the latest close.
    pub fn final_assets(&self) -> f64 {
        if self.is_complete() {
            match self.env.series.close(self.env.settlement_day()) {
                Ok(price) => self.state.cash + f64::from(self.state.position) * price,
                Err(_) => self.state.total_assets(),
            }
        } else {
            self.state.total_assets()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub records: Vec<TrajectoryRecord>,
    pub final_assets: f64,
}

/// Runs a full episode. Rejected orders are clamped to the largest affordable
/// position.
pub fn run_episode(env: EpisodeEnv, seed: u64, source: &mut dyn DecisionSource) -> Result<EpisodeOutcome> {
    let mut episode = Episode::new(env, seed)?;
    while !episode.is_complete() {
        let plan = episode.plan()?;
        let target = source.decide(plan)?;
        match episode.submit(target) {
            Ok(_) => {}
            Err(Error::RejectedOrder(_)) => {
                let max = episode.max_affordable()?;
                episode.submit(target.min(max))?;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EpisodeOutcome {
        final_assets: episode.final_assets(),
        records: episode.records,
    })
}
