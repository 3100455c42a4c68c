//! Interactive sessions: the daily episode loop driven by a human through
//! [`SessionManager`], persisted as append-only event files.
//!
//! Each session replays deterministically from its condition, seed and order
//! list, which is all the store keeps.

#[cfg(feature = "server")]
pub mod http;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{correlation_per_user, resolve_condition, Condition, ConditionSpec, ModelCache, Scenario, ScenarioSpec};
use crate::market_data::PriceBar;
use crate::selector::StrategyKind;
use crate::sim::{affordable_positions, apply_order, to_jsonl_string, Episode, EpisodeEnv, TrajectoryRecord};
use crate::types::{validate_position, Class, ClassProbabilities, EPISODE_DAYS};

pub const AUTO_CONDITION: &str = "auto";

fn default_lookback() -> usize {
    30
}

fn default_auto_weights() -> BTreeMap<String, u32> {
    [("roulette", 2), ("flat", 1), ("argmax", 1)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

fn default_conditions() -> Vec<ConditionSpec> {
    [StrategyKind::Flat, StrategyKind::Argmax, StrategyKind::Roulette]
        .into_iter()
        .map(|emphasis| ConditionSpec {
            id: None,
            emphasis,
            policy: crate::policy::PolicyKind::Oracle,
            policy_file: None,
            user_model: None,
        })
        .collect()
}

/// Service configuration: the scenario shown to every session plus the
/// conditions sessions can be assigned to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(flatten)]
    pub scenario: ScenarioSpec,
    /// Defaults to flat, argmax and roulette with the oracle policy.
    #[serde(default = "default_conditions")]
    pub conditions: Vec<ConditionSpec>,
    /// Relative weights used when a session asks for `"auto"`.
    #[serde(default = "default_auto_weights")]
    pub auto_weights: BTreeMap<String, u32>,
    /// Number of bars in the day view's chart.
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    /// Directory of the event store; sessions are memory-only when absent.
    #[serde(default)]
    pub store_dir: Option<PathBuf>,
    /// Seeds condition assignment and sessions created without a seed.
    #[serde(default)]
    pub master_seed: u64,
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub condition: String,
    pub seed: u64,
    pub day: usize,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationCard {
    pub class: Class,
    pub text: String,
    pub emphasized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSnapshot {
    pub cash: f64,
    pub position: u32,
    pub price: f64,
    pub total_assets: f64,
}

/// Everything the user sees on a trading day. The advisor's decision is
/// deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayView {
    pub session_id: String,
    pub day: usize,
    pub days_total: usize,
    pub bars: Vec<PriceBar>,
    pub p: ClassProbabilities,
    pub explanations: Vec<ExplanationCard>,
    pub portfolio: PortfolioSnapshot,
    pub valid_targets: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderRequest {
    /// Day the order is meant for; a stale day is a conflict, which makes
    /// resubmission safe.
    pub day: usize,
    pub target_position: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderResult {
    pub day: usize,
    pub target_position: u32,
    pub total_assets: f64,
    /// Day index of the next trading day (45 once completed).
    pub next_day: usize,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub condition: String,
    pub final_assets: f64,
    /// Advisor/user position correlation; `None` when either side is constant.
    pub correlation: Option<f64>,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
enum StoreEvent {
    Created { condition: String, seed: u64 },
    Order { day: usize, target: u32 },
}

struct Session {
    id: String,
    condition: String,
    seed: u64,
    episode: Episode,
}

impl Session {
    fn status(&self) -> SessionStatus {
        if self.episode.is_complete() {
            SessionStatus::Completed
        } else {
            SessionStatus::Active
        }
    }

    fn descriptor(&self) -> SessionDescriptor {
        SessionDescriptor {
            session_id: self.id.clone(),
            condition: self.condition.clone(),
            seed: self.seed,
            day: self.episode.day(),
            status: self.status(),
        }
    }
}

/// Owns every session; each session sits behind its own lock.
pub struct SessionManager {
    scenario: Scenario,
    conditions: BTreeMap<String, Condition>,
    auto: Vec<(String, u32)>,
    lookback: usize,
    store_dir: Option<PathBuf>,
    rng: Mutex<ChaCha8Rng>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionManager {
    /// Resolves the configuration and replays any sessions found in the store.
    pub fn from_config(config: &SessionConfig, base_dir: &Path) -> Result<Self> {
        let scenario = config.scenario.resolve(base_dir)?;
        let mut models = ModelCache::default();
        let mut conditions = BTreeMap::new();
        for spec in &config.conditions {
            let cond = resolve_condition(spec, &config.scenario, base_dir, &mut models)?;
            if cond.id == AUTO_CONDITION {
                return Err(Error::Config(format!("condition id {AUTO_CONDITION:?} is reserved")));
            }
            if conditions.insert(cond.id.clone(), cond).is_some() {
                return Err(Error::Config("duplicate condition id".into()));
            }
        }
        let manager = Self::new(scenario, conditions.into_values().collect(), &config.auto_weights)?
            .with_lookback(config.lookback)
            .with_master_seed(config.master_seed);
        match &config.store_dir {
            Some(dir) => manager.with_store(dir),
            None => Ok(manager),
        }
    }

    pub fn new(scenario: Scenario, conditions: Vec<Condition>, auto_weights: &BTreeMap<String, u32>) -> Result<Self> {
        if conditions.is_empty() {
            return Err(Error::Config("no session conditions".into()));
        }
        let conditions: BTreeMap<String, Condition> = conditions.into_iter().map(|c| (c.id.clone(), c)).collect();
        let mut auto = Vec::new();
        for (id, &w) in auto_weights {
            if !conditions.contains_key(id) {
                return Err(Error::Config(format!("auto weight for unknown condition {id:?}")));
            }
            if w > 0 {
                auto.push((id.clone(), w));
            }
        }
        Ok(Self {
            scenario,
            conditions,
            auto,
            lookback: default_lookback(),
            store_dir: None,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(0)),
            sessions: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_lookback(mut self, lookback: usize) -> Self {
        self.lookback = lookback.max(1);
        self
    }

    pub fn with_master_seed(self, seed: u64) -> Self {
        *self.rng.lock() = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    /// Persists sessions under `dir` and resumes the ones already stored there.
    pub fn with_store(mut self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for path in files {
            let session = self.replay(&path)?;
            self.sessions
                .write()
                .insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        self.store_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn condition_ids(&self) -> Vec<String> {
        self.conditions.keys().cloned().collect()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().len()
    }

    fn env(&self, condition: &Condition) -> EpisodeEnv {
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

    fn pick_auto(&self) -> Result<String> {
        let total: u64 = self.auto.iter().map(|(_, w)| u64::from(*w)).sum();
        if total == 0 {
            return Err(Error::Validation("automatic assignment has no weighted conditions".into()));
        }
        let mut x = self.rng.lock().random_range(0..total);
        for (id, w) in &self.auto {
            if x < u64::from(*w) {
                return Ok(id.clone());
            }
            x -= u64::from(*w);
        }
        unreachable!("draw below total weight")
    }

    fn open_session(&self, id: String, condition: &str, seed: u64) -> Result<Session> {
        let cond = self
            .conditions
            .get(condition)
            .ok_or_else(|| Error::Validation(format!("unknown condition {condition:?}")))?;
        Ok(Session {
            id,
            condition: condition.to_string(),
            seed,
            episode: Episode::new(self.env(cond), seed)?,
        })
    }

    /// Starts a session for `condition` (or a weighted draw for `"auto"`).
    pub fn create(&self, condition: &str, seed: Option<u64>) -> Result<SessionDescriptor> {
        let condition = if condition == AUTO_CONDITION {
            self.pick_auto()?
        } else {
            condition.to_string()
        };
        let seed = seed.unwrap_or_else(|| self.rng.lock().random());
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = self.open_session(id.clone(), &condition, seed)?;
        self.append(&id, &StoreEvent::Created { condition, seed }, true)?;
        let descriptor = session.descriptor();
        self.sessions.write().insert(id, Arc::new(Mutex::new(session)));
        Ok(descriptor)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    pub fn descriptor(&self, id: &str) -> Result<SessionDescriptor> {
        Ok(self.get(id)?.lock().descriptor())
    }

    /// Today's payload. Emphasis flags are computed on first access and cached.
    pub fn day_view(&self, id: &str) -> Result<DayView> {
        let handle = self.get(id)?;
        let mut session = handle.lock();
        if session.episode.is_complete() {
            return Err(Error::Conflict(format!("session {id} is completed")));
        }
        let plan = session.episode.plan()?.clone();
        let bars = self.scenario.series.bars();
        let first = (plan.series_day + 1).saturating_sub(self.lookback);
        let explanations = Class::ALL
            .into_iter()
            .map(|class| ExplanationCard {
                class,
                text: plan.explanations.text(class).to_string(),
                emphasized: plan.selection.chosen.get(class),
            })
            .collect();
        Ok(DayView {
            session_id: session.id.clone(),
            day: plan.day,
            days_total: EPISODE_DAYS,
            bars: bars[first..=plan.series_day].to_vec(),
            p: plan.p,
            explanations,
            portfolio: PortfolioSnapshot {
                cash: plan.state.cash,
                position: plan.state.position,
                price: plan.close,
                total_assets: plan.state.total_assets(),
            },
            valid_targets: affordable_positions(&plan.state, plan.close),
        })
    }

    /// Executes the day's order. Orders for any day but the current one are
    /// conflicts; unaffordable orders are rejected without changing the session.
    pub fn submit_order(&self, id: &str, order: OrderRequest) -> Result<OrderResult> {
        let handle = self.get(id)?;
        let mut session = handle.lock();
        if session.episode.is_complete() {
            return Err(Error::Conflict(format!("session {id} is completed")));
        }
        let day = session.episode.day();
        if order.day != day {
            return Err(Error::Conflict(format!(
                "order is for day {} but the session is on day {day}",
                order.day
            )));
        }
        validate_position(order.target_position)?;
        let plan = session.episode.plan()?;
        apply_order(&plan.state, order.target_position, plan.close)?;
        self.append(
            id,
            &StoreEvent::Order {
                day,
                target: order.target_position,
            },
            false,
        )?;
        let total_assets = session.episode.submit(order.target_position)?.total_assets;
        Ok(OrderResult {
            day,
            target_position: order.target_position,
            total_assets,
            next_day: session.episode.day(),
            status: session.status(),
        })
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary> {
        let handle = self.get(id)?;
        let session = handle.lock();
        if !session.episode.is_complete() {
            return Err(Error::Conflict(format!(
                "session {id} is still active on day {}",
                session.episode.day()
            )));
        }
        let records = session.episode.records().to_vec();
        Ok(SessionSummary {
            session_id: session.id.clone(),
            condition: session.condition.clone(),
            final_assets: session.episode.final_assets(),
            correlation: correlation_per_user(&records),
            records,
        })
    }

    /// The records so far in the batch JSONL format.
    pub fn log_jsonl(&self, id: &str) -> Result<String> {
        let handle = self.get(id)?;
        let session = handle.lock();
        to_jsonl_string(session.episode.records())
    }

    fn append(&self, id: &str, event: &StoreEvent, create: bool) -> Result<()> {
        let Some(dir) = &self.store_dir else {
            return Ok(());
        };
        let path = dir.join(format!("{id}.jsonl"));
        let mut file = OpenOptions::new()
            .create_new(create)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        file.sync_data().map_err(|e| Error::io(&path, e))
    }

    fn replay(&self, path: &Path) -> Result<Session> {
        let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| bad("unusable file name".into()))?
            .to_string();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let mut session: Option<Session> = None;
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: StoreEvent = match serde_json::from_str(line) {
                Ok(e) => e,
                // A torn final write: the order was never acknowledged.
                Err(_) if i + 1 == lines.len() => {
                    log::warn!("{}: ignoring incomplete last line", path.display());
                    break;
                }
                Err(e) => return Err(bad(format!("line {}: {e}", i + 1))),
            };
            match (event, session.as_mut()) {
                (StoreEvent::Created { condition, seed }, None) => {
                    session = Some(self.open_session(id.clone(), &condition, seed).map_err(|e| bad(e.to_string()))?);
                }
                (StoreEvent::Order { day, target }, Some(s)) if day == s.episode.day() => {
                    s.episode.submit(target).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
                }
                (event, _) => return Err(bad(format!("line {}: unexpected {event:?}", i + 1))),
            }
        }
        session.ok_or_else(|| bad("no creation event".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::final_assets_from_records;

    fn config(store: Option<&Path>) -> SessionConfig {
        let mut c: SessionConfig = serde_json::from_str(
            r#"{
                "series": {"synth": "seed=4,days=120,regime=momentum"},
                "window": {"start": 40},
                "predictor": {"calibrated": {"seed": 2, "target_accuracy": 0.6}},
                "master_seed": 5
            }"#,
        )
        .unwrap();
        c.store_dir = store.map(Path::to_path_buf);
        c
    }

    fn manager() -> SessionManager {
        SessionManager::from_config(&config(None), Path::new(".")).unwrap()
    }

    fn order(day: usize, target: u32) -> OrderRequest {
        OrderRequest {
            day,
            target_position: target,
        }
    }

    #[test]
    fn creates_distinct_sessions() {
        let m = manager();
        let a = m.create("flat", None).unwrap();
        let b = m.create("flat", None).unwrap();
        assert_ne!(a.session_id, b.session_id);
        assert_eq!(a.day, 0);
        assert_eq!(a.status, SessionStatus::Active);
        assert!(matches!(m.create("nope", None), Err(Error::Validation(_))));
    }

    #[test]
    fn flat_condition_never_emphasizes() {
        let m = manager();
        let id = m.create("flat", Some(1)).unwrap().session_id;
        for day in 0..EPISODE_DAYS {
            let view = m.day_view(&id).unwrap();
            assert!(view.explanations.iter().all(|c| !c.emphasized));
            m.submit_order(&id, order(day, 0)).unwrap();
        }
    }

    #[test]
    fn day_view_is_idempotent_and_offers_current_position() {
        let m = manager();
        let id = m.create("roulette", Some(3)).unwrap().session_id;
        m.submit_order(&id, order(0, 300)).unwrap();
        let a = m.day_view(&id).unwrap();
        let b = m.day_view(&id).unwrap();
        assert_eq!(a, b);
        assert!(a.valid_targets.contains(&a.portfolio.position));
        assert_eq!(a.bars.len(), 30);
        assert_eq!(a.bars.last().unwrap().close, a.portfolio.price);
    }

    #[test]
    fn rejected_and_stale_orders_leave_state_unchanged() {
        let m = manager();
        let id = m.create("argmax", Some(2)).unwrap().session_id;
        assert!(matches!(m.submit_order(&id, order(0, 250)), Err(Error::Validation(_))));
        m.submit_order(&id, order(0, 100)).unwrap();
        assert!(matches!(m.submit_order(&id, order(0, 100)), Err(Error::Conflict(_))));
        assert_eq!(m.descriptor(&id).unwrap().day, 1);
    }

    #[test]
    fn full_session_summary_matches_records() {
        let m = manager();
        let id = m.create("roulette", Some(8)).unwrap().session_id;
        assert!(matches!(m.summary(&id), Err(Error::Conflict(_))));
        for day in 0..EPISODE_DAYS {
            let target = [0, 500, 200, 100][day % 4];
            let r = m.submit_order(&id, order(day, target)).unwrap();
            assert_eq!(r.next_day, day + 1);
        }
        assert!(matches!(m.day_view(&id), Err(Error::Conflict(_))));
        assert!(matches!(m.submit_order(&id, order(45, 0)), Err(Error::Conflict(_))));
        let s = m.summary(&id).unwrap();
        assert_eq!(s.records.len(), EPISODE_DAYS);
        let recomputed = final_assets_from_records(&s.records, &m.scenario.series).unwrap();
        assert!((s.final_assets - recomputed).abs() < 1e-6);
        let parsed = crate::sim::read_jsonl(m.log_jsonl(&id).unwrap().as_bytes()).unwrap();
        assert_eq!(parsed, s.records);
    }

    #[test]
    fn never_traded_session_keeps_initial_cash() {
        let m = manager();
        let id = m.create("flat", Some(0)).unwrap().session_id;
        for day in 0..EPISODE_DAYS {
            m.submit_order(&id, order(day, 0)).unwrap();
        }
        assert_eq!(m.summary(&id).unwrap().final_assets, crate::types::INITIAL_CASH);
    }

    #[test]
    fn auto_assignment_follows_weights() {
        let m = manager();
        let n = 10_000;
        let roulette = (0..n)
            .filter(|_| m.create(AUTO_CONDITION, Some(0)).unwrap().condition == "roulette")
            .count();
        let p = 0.5;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((roulette as f64 / n as f64 - p).abs() <= 3.0 * sigma, "{roulette}");
    }

    #[test]
    fn concurrent_duplicate_orders_accept_once() {
        let m = Arc::new(manager());
        let id = m.create("roulette", Some(4)).unwrap().session_id;
        let accepted: usize = std::thread::scope(|s| {
            let handles: Vec<_> = (0..8)
                .map(|_| {
                    let (m, id) = (m.clone(), id.clone());
                    s.spawn(move || m.submit_order(&id, order(0, 200)).is_ok() as usize)
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).sum()
        });
        assert_eq!(accepted, 1);
        assert_eq!(m.descriptor(&id).unwrap().day, 1);
    }

    #[test]
    fn store_resumes_sessions_after_restart() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(Some(dir.path()));
        let (id, view, records) = {
            let m = SessionManager::from_config(&cfg, Path::new(".")).unwrap();
            let id = m.create("roulette", Some(6)).unwrap().session_id;
            for day in 0..7 {
                m.submit_order(&id, order(day, 100 * (day as u32 % 6))).unwrap();
            }
            let _ = m.submit_order(&id, order(7, 700));
            (id.clone(), m.day_view(&id).unwrap(), m.log_jsonl(&id).unwrap())
        };
        let m = SessionManager::from_config(&cfg, Path::new(".")).unwrap();
        assert_eq!(m.session_count(), 1);
        assert_eq!(m.descriptor(&id).unwrap().day, 7);
        assert_eq!(m.day_view(&id).unwrap(), view);
        assert_eq!(m.log_jsonl(&id).unwrap(), records);
    }

    #[test]
    fn unknown_session_is_not_found() {
        let m = manager();
        assert!(matches!(m.day_view("missing"), Err(Error::NotFound(_))));
        assert!(matches!(m.summary("missing"), Err(Error::NotFound(_))));
    }
}
