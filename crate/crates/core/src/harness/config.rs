use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explanation::{load_corpus, EmbeddingProvider, ExplanationSource, HashingEmbedder, TemplateExplainer};
use crate::market_data::{load_series, select_window, PriceSeries, SynthSpec};
use crate::policy::{AdvisorPolicy, NaiveVariant, PolicyKind, RlPolicy};
use crate::predictor::{make_calibrated_predictor, PredictorFile, ProbabilitySource};
use crate::selector::{EmphasisStrategy, StrategyKind};
use crate::sim::{default_strategy_id, SyntheticUser, UserKind};
use crate::types::EPISODE_DAYS;
use crate::user_model::UserModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesSpec {
    /// `seed=..,days=..,regime=..[,volatility=..]`
    Synth(String),
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowSpec {
    Start { start: usize },
    Accuracy { target_accuracy: f64, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorSpec {
    Calibrated {
        seed: u64,
        target_accuracy: f64,
        #[serde(default = "default_confidence")]
        confidence: f64,
    },
    File(PathBuf),
}

fn default_confidence() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationSpec {
    Template { seed: u64 },
    Corpus(PathBuf),
}

impl Default for ExplanationSpec {
    fn default() -> Self {
        ExplanationSpec::Template { seed: 0 }
    }
}

/// Market, predictor and explanations shared by every condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub series: SeriesSpec,
    pub window: WindowSpec,
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub explanations: ExplanationSpec,
    /// Default user model for `method` conditions.
    #[serde(default)]
    pub user_model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub emphasis: StrategyKind,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    /// Trained actor-critic file, required for `rl`.
    #[serde(default)]
    pub policy_file: Option<PathBuf>,
    #[serde(default)]
    pub user_model: Option<PathBuf>,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Oracle
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationGroup {
    pub kind: UserKind,
    pub count: usize,
    pub beta: BetaSpec,
    #[serde(default)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub histogram_bins: usize,
    /// Drop final assets further than this many SDs from the mean from the
    /// summary statistics. Off by default.
    pub outlier_sd: Option<f64>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            histogram_bins: 20,
            outlier_sd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub scenario: ScenarioSpec,
    pub strategies: Vec<ConditionSpec>,
    pub population: Vec<PopulationGroup>,
    #[serde(default = "one")]
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub report: ReportOptions,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Resolves every referenced file and model. Relative paths are taken
    /// relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Experiment> {
        if self.strategies.is_empty() {
            return Err(Error::Config("strategy list is empty".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        validate_population(&self.population)?;
        if self.report.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be >= 1".into()));
        }
        let scenario = self.scenario.resolve(base_dir)?;
        let mut models = ModelCache::default();
        let mut conditions = Vec::with_capacity(self.strategies.len());
        for spec in &self.strategies {
            let cond = resolve_condition(spec, &self.scenario, base_dir, &mut models)?;
            if conditions.iter().any(|c: &Condition| c.id == cond.id) {
                return Err(Error::Config(format!("duplicate strategy id {:?}", cond.id)));
            }
            conditions.push(cond);
        }
        Ok(Experiment {
            scenario,
            conditions,
            population: self.population.clone(),
            replications: self.replications,
            master_seed: self.master_seed,
            report: self.report,
        })
    }
}

pub(crate) fn validate_population(groups: &[PopulationGroup]) -> Result<()> {
    if groups.iter().map(|g| g.count).sum::<usize>() == 0 {
        return Err(Error::Config("population is empty".into()));
    }
    for g in groups {
        let (lo, hi) = match g.beta {
            BetaSpec::Fixed(b) => (b, b),
            BetaSpec::Uniform { min, max } => (min, max),
        };
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!("beta range [{lo}, {hi}] outside [0, 1]")));
        }
        if let Some(noise) = g.noise {
            if !(noise >= 0.0) {
                return Err(Error::Config(format!("noise {noise} must be >= 0")));
            }
        }
    }
    Ok(())
}

fn resolve_path(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn config_err(what: &str, e: Error) -> Error {
    Error::Config(format!("{what}: {e}"))
}

/// Resolved market scenario.
#[derive(Clone)]
pub struct Scenario {
    pub series: Arc<PriceSeries>,
    pub window_start: usize,
    pub predictor: Arc<dyn ProbabilitySource>,
    pub explainer: Arc<dyn ExplanationSource>,
}

impl ScenarioSpec {
    pub fn resolve(&self, base_dir: &Path) -> Result<Scenario> {
        let series = match &self.series {
            SeriesSpec::Synth(s) => s
                .parse::<SynthSpec>()
                .and_then(|spec| spec.generate())
                .map_err(|e| config_err("series", e))?,
            SeriesSpec::Csv(p) => load_series(&resolve_path(base_dir, p)).map_err(|e| config_err("series", e))?,
        };
        let predictor: Arc<dyn ProbabilitySource> = match &self.predictor {
            PredictorSpec::Calibrated {
                seed,
                target_accuracy,
                confidence,
            } => Arc::new(
                make_calibrated_predictor(&series, *seed, *target_accuracy, *confidence)
                    .map_err(|e| config_err("predictor", e))?,
            ),
            PredictorSpec::File(p) => Arc::from(
                PredictorFile::load(&resolve_path(base_dir, p))
                    .map_err(|e| config_err("predictor", e))?
                    .into_source(),
            ),
        };
        let window_start = match self.window {
            WindowSpec::Start { start } => start,
            WindowSpec::Accuracy {
                target_accuracy,
                tolerance,
            } => select_window(&series, predictor.as_ref(), EPISODE_DAYS, target_accuracy, tolerance)
                .map_err(|e| config_err("window", e))?,
        };
        if window_start + EPISODE_DAYS >= series.len() {
            return Err(Error::Config(format!(
                "window start {window_start} leaves fewer than {} closes in a {}-day series",
                EPISODE_DAYS + 1,
                series.len()
            )));
        }
        let explainer: Arc<dyn ExplanationSource> = match &self.explanations {
            ExplanationSpec::Template { seed } => Arc::new(TemplateExplainer { seed: *seed }),
            ExplanationSpec::Corpus(p) => {
                let corpus = load_corpus(&resolve_path(base_dir, p)).map_err(|e| config_err("explanations", e))?;
                for t in window_start..window_start + EPISODE_DAYS {
                    if !corpus.contains_key(&t) {
                        return Err(Error::Config(format!("explanations: no corpus entry for day {t}")));
                    }
                }
                Arc::new(corpus)
            }
        };
        Ok(Scenario {
            series: Arc::new(series),
            window_start,
            predictor,
            explainer,
        })
    }
}

/// One experimental condition: an emphasis strategy paired with an advisor policy.
#[derive(Clone)]
pub struct Condition {
    pub id: String,
    pub strategy: EmphasisStrategy,
    pub policy: AdvisorPolicy,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl Condition {
    pub fn new(strategy: EmphasisStrategy, policy: AdvisorPolicy) -> Self {
        Self {
            id: default_strategy_id(&strategy, &policy),
            strategy,
            policy,
            embedder: Arc::new(HashingEmbedder::default()),
        }
    }

    pub fn with_model(model: Arc<UserModel>, policy: AdvisorPolicy) -> Self {
        let embedder = Arc::new(model.embedder());
        let mut cond = Self::new(EmphasisStrategy::method(model), policy);
        cond.embedder = embedder;
        cond
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

#[derive(Default)]
pub(crate) struct ModelCache {
    user_models: HashMap<PathBuf, Arc<UserModel>>,
    policies: HashMap<PathBuf, Arc<RlPolicy>>,
}

impl ModelCache {
    fn user_model(&mut self, path: PathBuf) -> Result<Arc<UserModel>> {
        if let Some(m) = self.user_models.get(&path) {
            return Ok(m.clone());
        }
        let model = Arc::new(UserModel::load(&path).map_err(|e| config_err("user_model", e))?);
        self.user_models.insert(path, model.clone());
        Ok(model)
    }

    fn policy(&mut self, path: PathBuf) -> Result<Arc<RlPolicy>> {
        if let Some(p) = self.policies.get(&path) {
            return Ok(p.clone());
        }
        let policy = Arc::new(RlPolicy::load(&path).map_err(|e| config_err("policy_file", e))?);
        self.policies.insert(path, policy.clone());
        Ok(policy)
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub(crate) fn resolve_condition(
    spec: &ConditionSpec,
    scenario: &ScenarioSpec,
    base_dir: &Path,
    models: &mut ModelCache,
) -> Result<Condition> {
    let policy = match spec.policy {
        PolicyKind::Oracle => AdvisorPolicy::Oracle,
        PolicyKind::Top1 => AdvisorPolicy::Naive(NaiveVariant::Top1),
        PolicyKind::Top2 => AdvisorPolicy::Naive(NaiveVariant::Top2),
        PolicyKind::Rl => {
            let path = spec
                .policy_file
                .as_ref()
                .ok_or_else(|| Error::Config("policy rl needs policy_file".into()))?;
            AdvisorPolicy::Rl(models.policy(resolve_path(base_dir, path))?)
        }
    };
    let model_path = spec.user_model.as_ref().or(scenario.user_model.as_ref());
    let cond = match (spec.emphasis, model_path) {
        (StrategyKind::Method, None) => {
            return Err(Error::Config("method strategy needs a user_model".into()))
        }
        (StrategyKind::Method, Some(p)) => {
            Condition::with_model(models.user_model(resolve_path(base_dir, p))?, policy)
        }
        (kind, _) => Condition::new(EmphasisStrategy::baseline(kind)?, policy),
    };
    let cond = match &spec.id {
        Some(id) => cond.with_id(id.clone()),
        None => cond,
    };
    if !valid_id(&cond.id) {
        return Err(Error::Config(format!(
            "strategy id {:?} may only contain letters, digits, '-' and '_'",
            cond.id
        )));
    }
    Ok(cond)
}

/// A fully resolved experiment.
#[derive(Clone)]
pub struct Experiment {
    pub scenario: Scenario,
    pub conditions: Vec<Condition>,
    pub population: Vec<PopulationGroup>,
    pub replications: usize,
    pub master_seed: u64,
    pub report: ReportOptions,
}

impl Experiment {
    pub fn user_count(&self) -> usize {
        self.population.iter().map(|g| g.count).sum()
    }

    /// The population's user `index` for replication `rep`. β depends only on
    /// the user; the noise stream on user and replication.
    pub fn user(&self, index: usize, rep: usize) -> Result<SyntheticUser> {
        let mut offset = 0;
        for g in &self.population {
            if index < offset + g.count {
                let beta = match g.beta {
                    BetaSpec::Fixed(b) => b,
                    BetaSpec::Uniform { min, max } => {
                        let u = crate::types::derive_seed(self.master_seed, &[super::BETA_STREAM, index as u64]) as f64
                            / u64::MAX as f64;
                        min + (max - min) * u
                    }
                };
                let seed = crate::types::derive_seed(
                    self.master_seed,
                    &[super::USER_STREAM, index as u64, rep as u64],
                );
                let mut user = SyntheticUser::new(g.kind, beta, seed)?;
                if let Some(noise) = g.noise {
                    user.noise = noise;
                }
                user.validate()?;
                return Ok(user);
            }
            offset += g.count;
        }
        Err(Error::OutOfRange(format!("user index {index} beyond population of {offset}")))
    }
}
