//! Daily class-probability predictors (the `p` source).
//!
//! Two implementations share the [`ProbabilitySource`] trait: a softmax
//! classifier over return-based chart features, and a calibrated synthetic
//! predictor whose argmax accuracy is pinned to a target by construction.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{true_class, PriceSeries};
use crate::types::{softmax_in_place, Class, ClassProbabilities};

/// Anything that can emit `p` for day `t` of a series.
pub trait ProbabilitySource: Send + Sync {
    fn probabilities(&self, series: &PriceSeries, t: usize) -> Result<ClassProbabilities>;
}

/// Return-based features: `lookback` lagged returns (most recent first),
/// rolling volatility, long momentum and short momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartFeatures {
    pub values: Vec<f64>,
    pub lookback: usize,
}

impl ChartFeatures {
    pub fn len_for(lookback: usize) -> usize {
        lookback + 3
    }
}

pub fn extract_features(series: &PriceSeries, t: usize, lookback: usize) -> Result<ChartFeatures> {
    if lookback == 0 {
        return Err(Error::Parameter("lookback must be >= 1".into()));
    }
    if t < lookback || t >= series.len() {
        return Err(Error::OutOfRange(format!(
            "day {t} needs {lookback} days of history within a series of {}",
            series.len()
        )));
    }
    let bars = series.bars();
    let close = |i: usize| bars[i].close;
    let mut values = Vec::with_capacity(ChartFeatures::len_for(lookback));
    for k in 0..lookback {
        let s = t - k;
        values.push((close(s) - close(s - 1)) / close(s - 1));
    }
    let n = lookback as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    values.push(var.sqrt());
    values.push(close(t) / close(t - lookback) - 1.0);
    let short = (lookback / 2).max(1);
    values.push(close(t) / close(t - short) - 1.0);
    Ok(ChartFeatures { values, lookback })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftmaxHyperParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for SoftmaxHyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 300,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression over standardized [`ChartFeatures`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPredictor {
    pub lookback: usize,
    /// 3 rows (BULL, NEUTRAL, BEAR) of `dim` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: [f64; 3],
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SoftmaxTraining {
    pub predictor: SoftmaxPredictor,
    /// Mean cross-entropy before each epoch, plus the final value.
    pub loss_curve: Vec<f64>,
}

impl SoftmaxPredictor {
    pub fn zeros(dim: usize, lookback: usize) -> Self {
        Self {
            lookback,
            weights: vec![vec![0.0; dim]; 3],
            bias: [0.0; 3],
            feature_mean: vec![0.0; dim],
            feature_scale: vec![1.0; dim],
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.feature_mean.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn logits(&self, z: &[f64]) -> [f64; 3] {
        let mut out = self.bias;
        for (o, row) in out.iter_mut().zip(&self.weights) {
            *o += row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
        }
        out
    }

    pub fn predict(&self, features: &ChartFeatures) -> Result<ClassProbabilities> {
        if features.values.len() != self.dim() {
            return Err(Error::Validation(format!(
                "feature length {} does not match trained dimension {}",
                features.values.len(),
                self.dim()
            )));
        }
        let mut probs = self.logits(&self.standardize(&features.values));
        softmax_in_place(&mut probs);
        ClassProbabilities::from_array(probs)
    }

    /// Mean cross-entropy (plus L2 penalty) over standardized inputs and its
    /// gradient, as `(loss, grad_weights, grad_bias)`.
    pub fn loss_and_grad(
        &self,
        inputs: &[Vec<f64>],
        labels: &[Class],
        l2: f64,
    ) -> (f64, Vec<Vec<f64>>, [f64; 3]) {
        let n = inputs.len() as f64;
        let mut loss = 0.0;
        let mut gw = vec![vec![0.0; self.dim()]; 3];
        let mut gb = [0.0; 3];
        for (z, label) in inputs.iter().zip(labels) {
            let mut probs = self.logits(z);
            softmax_in_place(&mut probs);
            loss -= probs[label.index()].max(f64::MIN_POSITIVE).ln();
            for k in 0..3 {
                let err = probs[k] - f64::from(u8::from(k == label.index()));
                gb[k] += err / n;
                for (g, x) in gw[k].iter_mut().zip(z) {
                    *g += err * x / n;
                }
            }
        }
        loss /= n;
        for (grow, wrow) in gw.iter_mut().zip(&self.weights) {
            for (g, w) in grow.iter_mut().zip(wrow) {
                loss += 0.5 * l2 * w * w;
                *g += l2 * w;
            }
        }
        (loss, gw, gb)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &PredictorFile::Softmax(self.clone()))
    }
}

impl ProbabilitySource for SoftmaxPredictor {
    fn probabilities(&self, series: &PriceSeries, t: usize) -> Result<ClassProbabilities> {
        self.predict(&extract_features(series, t, self.lookback)?)
    }
}

/// Builds a labelled dataset from every day with enough history and a next-day close.
pub fn build_dataset(series: &PriceSeries, lookback: usize) -> Result<Vec<(ChartFeatures, Class)>> {
    (lookback..series.len().saturating_sub(1))
        .map(|t| Ok((extract_features(series, t, lookback)?, true_class(series, t)?)))
        .collect()
}

pub fn train_softmax_predictor(
    dataset: &[(ChartFeatures, Class)],
    hp: SoftmaxHyperParams,
) -> Result<SoftmaxTraining> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Validation("empty training dataset".into()))?;
    let dim = first.0.values.len();
    let lookback = first.0.lookback;
    if let Some((f, _)) = dataset.iter().find(|(f, _)| f.values.len() != dim) {
        return Err(Error::Validation(format!(
            "inconsistent feature lengths: {} vs {dim}",
            f.values.len()
        )));
    }
    if !(hp.learning_rate >= 0.0) || !(hp.l2 >= 0.0) {
        return Err(Error::Parameter("learning rate and l2 must be >= 0".into()));
    }

    let n = dataset.len() as f64;
    let mut mean = vec![0.0; dim];
    for (f, _) in dataset {
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for (f, _) in dataset {
        for ((s, v), m) in scale.iter_mut().zip(&f.values).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut model = SoftmaxPredictor {
        lookback,
        weights: (0..3)
            .map(|_| (0..dim).map(|_| init.sample(&mut rng)).collect())
            .collect(),
        bias: [0.0; 3],
        feature_mean: mean,
        feature_scale: scale,
        seed: hp.seed,
    };
    let inputs: Vec<Vec<f64>> = dataset.iter().map(|(f, _)| model.standardize(&f.values)).collect();
    let labels: Vec<Class> = dataset.iter().map(|(_, c)| *c).collect();

    let mut loss_curve = Vec::with_capacity(hp.epochs + 1);
    for epoch in 0..hp.epochs {
        let (loss, gw, gb) = model.loss_and_grad(&inputs, &labels, hp.l2);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("loss {loss}"),
            });
        }
        loss_curve.push(loss);
        for (wrow, grow) in model.weights.iter_mut().zip(&gw) {
            for (w, g) in wrow.iter_mut().zip(grow) {
                *w -= hp.learning_rate * g;
            }
        }
        for (b, g) in model.bias.iter_mut().zip(gb) {
            *b -= hp.learning_rate * g;
        }
    }
    loss_curve.push(model.loss_and_grad(&inputs, &labels, hp.l2).0);
    Ok(SoftmaxTraining {
        predictor: model,
        loss_curve,
    })
}

/// Predictor with a seeded, per-day precomputed `p` whose argmax matches the
/// true class with probability `target_accuracy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPredictor {
    pub seed: u64,
    pub target_accuracy: f64,
    pub confidence: f64,
    pub source_id: String,
    pub daily: Vec<ClassProbabilities>,
}

impl SyntheticPredictor {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &PredictorFile::Calibrated(self.clone()))
    }
}

impl ProbabilitySource for SyntheticPredictor {
    fn probabilities(&self, _series: &PriceSeries, t: usize) -> Result<ClassProbabilities> {
        self.daily.get(t).copied().ok_or_else(|| {
            Error::OutOfRange(format!(
                "calibrated predictor covers {} days, asked for day {t}",
                self.daily.len()
            ))
        })
    }
}

/// `confidence` is the mass placed on the emitted argmax class; it must lie in
/// `(1/3, 1]` so the argmax is unambiguous.
pub fn make_calibrated_predictor(
    series: &PriceSeries,
    seed: u64,
    target_accuracy: f64,
    confidence: f64,
) -> Result<SyntheticPredictor> {
    if !(1.0 / 3.0..=1.0).contains(&target_accuracy) {
        return Err(Error::Parameter(format!(
            "target accuracy {target_accuracy} outside [1/3, 1]"
        )));
    }
    if !(confidence > 1.0 / 3.0 && confidence <= 1.0) {
        return Err(Error::Parameter(format!(
            "confidence {confidence} outside (1/3, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = 1.0 - confidence;
    // Each of the other two classes must stay strictly below `confidence`.
    let (lo, hi) = if rest > 0.0 {
        let cap = (confidence / rest).min(1.0);
        let lo = (1.0 - cap).max(0.0);
        let margin = (cap - lo) * 1e-6;
        (lo + margin, cap - margin)
    } else {
        (0.0, 1.0)
    };
    let mut daily = Vec::with_capacity(series.len());
    for t in 0..series.len() {
        let hit: f64 = rng.random();
        let other: bool = rng.random();
        let split: f64 = rng.random();
        let pick: usize = rng.random_range(0..3);
        let chosen = match true_class(series, t) {
            Ok(truth) if hit < target_accuracy => truth,
            Ok(truth) => {
                let alt = [(truth.index() + 1) % 3, (truth.index() + 2) % 3];
                Class::from_index(alt[usize::from(other)]).expect("index < 3")
            }
            Err(_) => Class::from_index(pick).expect("index < 3"),
        };
        let w = lo + (hi - lo) * split;
        let mut probs = [0.0; 3];
        probs[chosen.index()] = confidence;
        probs[(chosen.index() + 1) % 3] = rest * w;
        probs[(chosen.index() + 2) % 3] = rest * (1.0 - w);
        let sum: f64 = probs.iter().sum();
        for v in &mut probs {
            *v /= sum;
        }
        daily.push(ClassProbabilities::from_array(probs)?);
    }
    Ok(SyntheticPredictor {
        seed,
        target_accuracy,
        confidence,
        source_id: series.source_id().to_string(),
        daily,
    })
}

/// On-disk predictor document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorFile {
    Softmax(SoftmaxPredictor),
    Calibrated(SyntheticPredictor),
}

impl PredictorFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_source(self) -> Box<dyn ProbabilitySource> {
        match self {
            PredictorFile::Softmax(p) => Box::new(p),
            PredictorFile::Calibrated(p) => Box::new(p),
        }
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
