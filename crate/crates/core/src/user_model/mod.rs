//! Model of a user's position decision given the episode so far, the current
//! context and the (possibly emphasized) per-class explanations.
//!
//! Each day is encoded additively from embedding tables (day of episode,
//! previous position), linear maps (asset change, `p`) and the explanation
//! vector. The explanation vector is the element-wise sum over classes of
//! `text ⊙ emphasis_row ⊙ class_row`. A single-head causal attention block with
//! the current day as query, a residual connection and a softmax over the six
//! positions produce the decision distribution.

mod params;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use params::{Matrix, UserModelParams, GROUP_NAMES};
pub use train::{
    build_sequences, mean_cross_entropy, sequence_loss_and_grad, train, TrainingReport,
    TrainingSequence, UserModelHyperParams,
};

use crate::error::{Error, Result};
use crate::explanation::{ExplanationEmbeddings, HashingEmbedder};
use crate::types::{
    softmax_in_place, validate_position, Class, ClassProbabilities, DecisionDistribution,
    EmphasisPattern, EPISODE_DAYS, NUM_POSITIONS,
};

/// Observable state of one day before the user's order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Context {
    /// Day of the episode, 0-based.
    pub t: usize,
    /// Percent change of total assets versus the previous day.
    pub delta: f64,
    pub p: ClassProbabilities,
    /// Position held before today's order.
    pub d_prev: u32,
}

/// A day's context together with the embedded explanations shown that day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayInput {
    pub context: Context,
    pub explanations: ExplanationEmbeddings,
}

/// A past day including the emphasis pattern that was actually shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDay {
    pub input: DayInput,
    pub pattern: EmphasisPattern,
}

/// Anything that can answer "what would the user do if we emphasized this?".
pub trait DecisionModel: Sync {
    fn counterfactual(
        &self,
        history: &[ObservedDay],
        current: &DayInput,
        pattern: EmphasisPattern,
    ) -> Result<DecisionDistribution>;

    /// Distributions for several patterns at once, in the given order.
    fn counterfactual_many(
        &self,
        history: &[ObservedDay],
        current: &DayInput,
        patterns: &[EmphasisPattern],
    ) -> Result<Vec<DecisionDistribution>> {
        patterns
            .iter()
            .map(|&p| self.counterfactual(history, current, p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserModelConfig {
    pub dim: usize,
    pub max_days: usize,
    pub seed: u64,
}

impl Default for UserModelConfig {
    fn default() -> Self {
        Self {
            dim: crate::explanation::DEFAULT_EMBEDDING_DIM,
            max_days: EPISODE_DAYS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    pub config: UserModelConfig,
    pub params: UserModelParams,
}

pub(crate) struct Attention {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

/// Scaled dot-product attention of `query` over `keys`/`values`.
pub(crate) fn attend(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Attention {
    let inv = 1.0 / (query.len() as f64).sqrt();
    let mut weights: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() * inv)
        .collect();
    softmax_in_place(&mut weights);
    let mut context = vec![0.0; query.len()];
    for (a, v) in weights.iter().zip(values) {
        params::add_scaled(&mut context, v, *a);
    }
    Attention { weights, context }
}

impl UserModel {
    pub fn new(config: UserModelConfig, params: UserModelParams) -> Result<Self> {
        params.validate()?;
        if params.dim() != config.dim || params.max_days() != config.max_days {
            return Err(Error::Validation(
                "user model config does not match parameter shapes".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn embedder(&self) -> HashingEmbedder {
        HashingEmbedder {
            dim: self.config.dim,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: UserModel = serde_json::from_str(&text)?;
        Self::new(model.config, model.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::predictor::write_json(path, self)
    }

    /// Σ over classes of `text ⊙ emphasis_table[e] ⊙ class_table[class]`.
    pub fn combine_explanations(
        &self,
        explanations: &ExplanationEmbeddings,
        pattern: EmphasisPattern,
    ) -> Result<Vec<f64>> {
        combine_explanations(&self.params, explanations, pattern)
    }

    pub fn encode_day(&self, context: &Context, x_embedding: &[f64]) -> Result<Vec<f64>> {
        encode_day(&self.params, context, x_embedding)
    }

    pub fn encode_observed(&self, day: &ObservedDay) -> Result<Vec<f64>> {
        let x = self.combine_explanations(&day.input.explanations, day.pattern)?;
        self.encode_day(&day.input.context, &x)
    }

    /// Decision distribution for the last day of `history` (the query), attending
    /// over every day in `history`.
    pub fn predict_distribution(&self, history: &[Vec<f64>]) -> Result<DecisionDistribution> {
        let current = history
            .last()
            .ok_or_else(|| Error::Validation("empty history".into()))?;
        let keys: Vec<Vec<f64>> = history.iter().map(|h| self.params.key.matvec(h)).collect();
        let values: Vec<Vec<f64>> = history.iter().map(|h| self.params.value.matvec(h)).collect();
        Ok(self.readout(current, &keys, &values))
    }

    fn readout(&self, current: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> DecisionDistribution {
        let q = self.params.query.matvec(current);
        let att = attend(&q, keys, values);
        let z: Vec<f64> = current.iter().zip(&att.context).map(|(h, c)| h + c).collect();
        let mut logits = self.params.output_weight.matvec(&z);
        for (l, b) in logits.iter_mut().zip(&self.params.output_bias) {
            *l += b;
        }
        softmax_in_place(&mut logits);
        let mut probs = [0.0; NUM_POSITIONS];
        probs.copy_from_slice(&logits);
        DecisionDistribution::from_softmax_unchecked(probs)
    }

    /// Prediction for `current` if it were shown with `pattern`; history days
    /// keep their realized patterns.
    pub fn counterfactual_query(
        &self,
        history: &[ObservedDay],
        current: &DayInput,
        pattern: EmphasisPattern,
    ) -> Result<DecisionDistribution> {
        Ok(self
            .counterfactual_many(history, current, &[pattern])?
            .remove(0))
    }
}

impl DecisionModel for UserModel {
    fn counterfactual(
        &self,
        history: &[ObservedDay],
        current: &DayInput,
        pattern: EmphasisPattern,
    ) -> Result<DecisionDistribution> {
        self.counterfactual_query(history, current, pattern)
    }

    fn counterfactual_many(
        &self,
        history: &[ObservedDay],
        current: &DayInput,
        patterns: &[EmphasisPattern],
    ) -> Result<Vec<DecisionDistribution>> {
        let encoded = history
            .iter()
            .map(|d| self.encode_observed(d))
            .collect::<Result<Vec<_>>>()?;
        let mut keys: Vec<Vec<f64>> = encoded.iter().map(|h| self.params.key.matvec(h)).collect();
        let mut values: Vec<Vec<f64>> = encoded.iter().map(|h| self.params.value.matvec(h)).collect();
        patterns
            .iter()
            .map(|&pattern| {
                let x = self.combine_explanations(&current.explanations, pattern)?;
                let h = self.encode_day(&current.context, &x)?;
                keys.push(self.params.key.matvec(&h));
                values.push(self.params.value.matvec(&h));
                let dist = self.readout(&h, &keys, &values);
                keys.pop();
                values.pop();
                Ok(dist)
            })
            .collect()
    }
}

pub fn combine_explanations(
    params: &UserModelParams,
    explanations: &ExplanationEmbeddings,
    pattern: EmphasisPattern,
) -> Result<Vec<f64>> {
    let dim = params.dim();
    let mut out = vec![0.0; dim];
    for class in Class::ALL {
        let text = explanations.get(class);
        if text.len() != dim {
            return Err(Error::Validation(format!(
                "{} explanation embedding has dimension {}, model expects {dim}",
                class.name(),
                text.len()
            )));
        }
        let emph = params.emphasis_table.row(usize::from(pattern.get(class)));
        let cls = params.class_table.row(class.index());
        for i in 0..dim {
            out[i] += text[i] * emph[i] * cls[i];
        }
    }
    Ok(out)
}

pub fn encode_day(params: &UserModelParams, context: &Context, x_embedding: &[f64]) -> Result<Vec<f64>> {
    let dim = params.dim();
    if x_embedding.len() != dim {
        return Err(Error::Validation(format!(
            "explanation vector has dimension {}, expected {dim}",
            x_embedding.len()
        )));
    }
    if context.t >= params.max_days() {
        return Err(Error::Validation(format!(
            "day {} beyond the model's {} day table",
            context.t,
            params.max_days()
        )));
    }
    if !context.delta.is_finite() {
        return Err(Error::Validation("non-finite asset change".into()));
    }
    let pos = validate_position(context.d_prev)?;
    let mut h = params.prob_weight.matvec(context.p.as_array());
    let day = params.day_table.row(context.t);
    let position = params.position_table.row(pos);
    for i in 0..dim {
        h[i] += day[i]
            + position[i]
            + context.delta * params.delta_weight[i]
            + params.input_bias[i]
            + x_embedding[i];
    }
    Ok(h)
}
