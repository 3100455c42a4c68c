//! Emphasis selection: score every admissible pattern by the expected absolute
//! gap between the predicted user decision and the advisor's suggestion, and
//! pick the minimizer. FLAT, ARGMAX and ROULETTE baselines share the same
//! strategy interface.

use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    AdvisorDecision, Class, ClassProbabilities, DecisionDistribution, EmphasisPattern, POSITIONS,
};
use crate::user_model::{DayInput, DecisionModel, ObservedDay};

/// The seven patterns searched, lexicographic with false < true over
/// (BULL, NEUTRAL, BEAR); all-emphasized is excluded.
pub fn enumerate_patterns() -> Vec<EmphasisPattern> {
    (0..7u8).map(EmphasisPattern::from_bits).collect()
}

/// `Σ_d P(d) · |d − d_AI|` over the position grid.
pub fn expected_gap(dist: &DecisionDistribution, d_ai: AdvisorDecision) -> f64 {
    let target = d_ai.shares();
    dist.probs()
        .iter()
        .zip(POSITIONS)
        .map(|(p, d)| p * (f64::from(d) - target).abs())
        .sum()
}

/// [`expected_gap`] over unvalidated inputs.
pub fn expected_gap_checked(probs: &[f64], d_ai: f64) -> Result<f64> {
    let arr: [f64; 6] = probs.try_into().map_err(|_| {
        Error::Validation(format!("expected 6 probabilities, got {}", probs.len()))
    })?;
    Ok(expected_gap(
        &DecisionDistribution::new(arr)?,
        AdvisorDecision::new(d_ai)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternScore {
    pub pattern: EmphasisPattern,
    pub expected_gap: f64,
    pub distribution: DecisionDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: EmphasisPattern,
    /// One entry per admissible pattern in enumeration order; empty when a
    /// baseline ran without a user model.
    pub scores: Vec<PatternScore>,
    pub strategy_id: String,
}

/// Minimum gap; ties go to fewer emphasized classes, then lexicographic order.
pub fn argmin_pattern(scores: &[PatternScore]) -> Option<EmphasisPattern> {
    scores
        .iter()
        .min_by(|a, b| {
            a.expected_gap
                .total_cmp(&b.expected_gap)
                .then(a.pattern.emphasized_count().cmp(&b.pattern.emphasized_count()))
                .then(a.pattern.bits().cmp(&b.pattern.bits()))
        })
        .map(|s| s.pattern)
}

pub fn score_patterns<M: DecisionModel + ?Sized>(
    model: &M,
    history: &[ObservedDay],
    current: &DayInput,
    d_ai: AdvisorDecision,
) -> Result<Vec<PatternScore>> {
    let patterns = enumerate_patterns();
    let dists = model.counterfactual_many(history, current, &patterns)?;
    Ok(patterns
        .into_iter()
        .zip(dists)
        .map(|(pattern, distribution)| PatternScore {
            pattern,
            expected_gap: expected_gap(&distribution, d_ai),
            distribution,
        })
        .collect())
}

pub fn select_emphasis<M: DecisionModel + ?Sized>(
    model: &M,
    history: &[ObservedDay],
    current: &DayInput,
    d_ai: AdvisorDecision,
) -> Result<SelectionResult> {
    let scores = score_patterns(model, history, current, d_ai)?;
    let chosen = argmin_pattern(&scores).expect("seven patterns scored");
    Ok(SelectionResult {
        chosen,
        scores,
        strategy_id: StrategyKind::Method.id().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Method,
    Flat,
    Argmax,
    Roulette,
}

impl StrategyKind {
    pub fn id(self) -> &'static str {
        match self {
            StrategyKind::Method => "method",
            StrategyKind::Flat => "flat",
            StrategyKind::Argmax => "argmax",
            StrategyKind::Roulette => "roulette",
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "method" => Ok(StrategyKind::Method),
            "flat" => Ok(StrategyKind::Flat),
            "argmax" => Ok(StrategyKind::Argmax),
            "roulette" => Ok(StrategyKind::Roulette),
            other => Err(Error::Config(format!("unknown emphasis strategy {other:?}"))),
        }
    }
}

/// Model-free baseline patterns. ROULETTE draws one uniform per class in class
/// order and may emphasize all three.
pub fn baseline_select<R: Rng + ?Sized>(
    kind: StrategyKind,
    p: &ClassProbabilities,
    rng: &mut R,
) -> Result<EmphasisPattern> {
    match kind {
        StrategyKind::Flat => Ok(EmphasisPattern::FLAT),
        StrategyKind::Argmax => Ok(EmphasisPattern::only(p.argmax())),
        StrategyKind::Roulette => {
            let mut pattern = EmphasisPattern::FLAT;
            for class in Class::ALL {
                let u: f64 = rng.random();
                pattern.set(class, u < p.get(class));
            }
            Ok(pattern)
        }
        StrategyKind::Method => Err(Error::Config(
            "the method strategy needs a user model; use select_emphasis".into(),
        )),
    }
}

pub type SharedDecisionModel = Arc<dyn DecisionModel + Send + Sync>;

/// A configured emphasis strategy.
#[derive(Clone)]
pub struct EmphasisStrategy {
    pub kind: StrategyKind,
    pub model: Option<SharedDecisionModel>,
}

impl std::fmt::Debug for EmphasisStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmphasisStrategy")
            .field("kind", &self.kind)
            .field("model", &self.model.is_some())
            .finish()
    }
}

impl EmphasisStrategy {
    pub fn baseline(kind: StrategyKind) -> Result<Self> {
        if kind == StrategyKind::Method {
            return Err(Error::Config("the method strategy needs a user model".into()));
        }
        Ok(Self { kind, model: None })
    }

    pub fn method(model: SharedDecisionModel) -> Self {
        Self {
            kind: StrategyKind::Method,
            model: Some(model),
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        self.model.is_some()
    }

    /// Chooses today's pattern. When a model is attached, baselines also report
    /// the seven scores for logging.
    pub fn choose<R: Rng + ?Sized>(
        &self,
        history: &[ObservedDay],
        current: &DayInput,
        d_ai: AdvisorDecision,
        rng: &mut R,
    ) -> Result<SelectionResult> {
        match (self.kind, &self.model) {
            (StrategyKind::Method, Some(model)) => select_emphasis(model.as_ref(), history, current, d_ai),
            (StrategyKind::Method, None) => Err(Error::Config(
                "the method strategy needs a user model".into(),
            )),
            (kind, model) => {
                let chosen = baseline_select(kind, &current.context.p, rng)?;
                let scores = match model {
                    Some(m) => score_patterns(m.as_ref(), history, current, d_ai)?,
                    None => Vec::new(),
                };
                Ok(SelectionResult {
                    chosen,
                    scores,
                    strategy_id: kind.id().to_string(),
                })
            }
        }
    }
}
