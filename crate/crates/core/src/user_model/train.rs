use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{add_scaled, UserModelParams};
use super::{attend, combine_explanations, encode_day, Context, DayInput, ObservedDay, UserModel, UserModelConfig};
use crate::error::{Error, Result};
use crate::explanation::{EmbeddingProvider, ExplanationEmbeddings};
use crate::sim::TrajectoryRecord;
use crate::types::{softmax_in_place, validate_position, Class, EPISODE_DAYS, NUM_POSITIONS};

/// One episode of observed days with the position the user actually chose.
#[derive(Debug, Clone)]
pub struct TrainingSequence {
    pub days: Vec<ObservedDay>,
    /// Index into [`crate::types::POSITIONS`] per day.
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserModelHyperParams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Episodes per gradient step.
    pub batch_size: usize,
    pub seed: u64,
    pub dim: usize,
    pub max_days: usize,
    pub clip_norm: f64,
}

impl Default for UserModelHyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 60,
            batch_size: 4,
            seed: 0,
            dim: crate::explanation::DEFAULT_EMBEDDING_DIM,
            max_days: EPISODE_DAYS,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub model: UserModel,
    /// Mean cross-entropy over the training set before training and after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Converts logged episodes into training sequences. `d_prev` of each day is
/// the previous record's `d_u` (0 on the first day).
pub fn build_sequences(
    episodes: &[Vec<TrajectoryRecord>],
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<TrainingSequence>> {
    let mut cache: HashMap<String, Vec<f64>> = HashMap::new();
    let mut embed = |text: &str| -> Result<Vec<f64>> {
        if let Some(v) = cache.get(text) {
            return Ok(v.clone());
        }
        let v = embedder.embed(text)?.into_vec();
        cache.insert(text.to_string(), v.clone());
        Ok(v)
    };
    let mut out = Vec::with_capacity(episodes.len());
    for episode in episodes {
        let mut days = Vec::with_capacity(episode.len());
        let mut targets = Vec::with_capacity(episode.len());
        let mut d_prev = 0;
        for (i, rec) in episode.iter().enumerate() {
            if i > 0 && rec.day <= episode[i - 1].day {
                return Err(Error::Validation(format!(
                    "episode records out of order at day {}",
                    rec.day
                )));
            }
            let target = validate_position(rec.d_u)?;
            let texts = rec.explanations.texts();
            let explanations = ExplanationEmbeddings([
                embed(&texts[Class::Bull.index()])?,
                embed(&texts[Class::Neutral.index()])?,
                embed(&texts[Class::Bear.index()])?,
            ]);
            days.push(ObservedDay {
                input: DayInput {
                    context: Context {
                        t: rec.day,
                        delta: rec.delta,
                        p: rec.p,
                        d_prev,
                    },
                    explanations,
                },
                pattern: rec.pattern,
            });
            targets.push(target);
            d_prev = rec.d_u;
        }
        if !days.is_empty() {
            out.push(TrainingSequence { days, targets });
        }
    }
    Ok(out)
}

/// Summed cross-entropy of one sequence (every day predicted causally from
/// its prefix). Gradients are accumulated into `grad` unscaled.
pub fn sequence_loss_and_grad(
    params: &UserModelParams,
    seq: &TrainingSequence,
    grad: Option<&mut UserModelParams>,
) -> Result<f64> {
    let n = seq.days.len();
    let dim = params.dim();
    let inv = 1.0 / (dim as f64).sqrt();

    let mut hs = Vec::with_capacity(n);
    for day in &seq.days {
        let x = combine_explanations(params, &day.input.explanations, day.pattern)?;
        hs.push(encode_day(params, &day.input.context, &x)?);
    }
    let keys: Vec<Vec<f64>> = hs.iter().map(|h| params.key.matvec(h)).collect();
    let values: Vec<Vec<f64>> = hs.iter().map(|h| params.value.matvec(h)).collect();

    let mut grad = grad;
    let mut dh = vec![vec![0.0; dim]; n];
    let mut dk = vec![vec![0.0; dim]; n];
    let mut dv = vec![vec![0.0; dim]; n];
    let mut loss = 0.0;

    for t in 0..n {
        let q = params.query.matvec(&hs[t]);
        let att = attend(&q, &keys[..=t], &values[..=t]);
        let z: Vec<f64> = hs[t].iter().zip(&att.context).map(|(h, c)| h + c).collect();
        let mut probs = params.output_weight.matvec(&z);
        for (l, b) in probs.iter_mut().zip(&params.output_bias) {
            *l += b;
        }
        softmax_in_place(&mut probs);
        let target = seq.targets[t];
        loss -= probs[target].max(f64::MIN_POSITIVE).ln();

        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        let mut dlogits = probs;
        dlogits[target] -= 1.0;
        g.output_weight.add_outer(&dlogits, &z);
        add_scaled(&mut g.output_bias, &dlogits, 1.0);
        let dz = params.output_weight.matvec_t(&dlogits);

        add_scaled(&mut dh[t], &dz, 1.0);
        let da: Vec<f64> = values[..=t]
            .iter()
            .map(|v| v.iter().zip(&dz).map(|(a, b)| a * b).sum())
            .collect();
        let mean: f64 = att.weights.iter().zip(&da).map(|(a, d)| a * d).sum();
        let mut dq = vec![0.0; dim];
        for s in 0..=t {
            let a = att.weights[s];
            add_scaled(&mut dv[s], &dz, a);
            let dscore = a * (da[s] - mean) * inv;
            add_scaled(&mut dq, &keys[s], dscore);
            add_scaled(&mut dk[s], &q, dscore);
        }
        g.query.add_outer(&dq, &hs[t]);
        add_scaled(&mut dh[t], &params.query.matvec_t(&dq), 1.0);
    }

    let Some(g) = grad else {
        return Ok(loss);
    };
    for s in 0..n {
        g.key.add_outer(&dk[s], &hs[s]);
        g.value.add_outer(&dv[s], &hs[s]);
        add_scaled(&mut dh[s], &params.key.matvec_t(&dk[s]), 1.0);
        add_scaled(&mut dh[s], &params.value.matvec_t(&dv[s]), 1.0);

        let day = &seq.days[s];
        let ctx = &day.input.context;
        let d = &dh[s];
        add_scaled(g.day_table.row_mut(ctx.t), d, 1.0);
        let pos = validate_position(ctx.d_prev)?;
        add_scaled(g.position_table.row_mut(pos), d, 1.0);
        add_scaled(&mut g.delta_weight, d, ctx.delta);
        g.prob_weight.add_outer(d, ctx.p.as_array());
        add_scaled(&mut g.input_bias, d, 1.0);
        for class in Class::ALL {
            let text = day.input.explanations.get(class);
            let e = usize::from(day.pattern.get(class));
            let c = class.index();
            for i in 0..dim {
                let emph = params.emphasis_table.row(e)[i];
                let cls = params.class_table.row(c)[i];
                g.class_table.row_mut(c)[i] += d[i] * text[i] * emph;
                g.emphasis_table.row_mut(e)[i] += d[i] * text[i] * cls;
            }
        }
    }
    Ok(loss)
}

/// Mean per-day cross-entropy of `model` on `sequences`.
pub fn mean_cross_entropy(model: &UserModel, sequences: &[TrainingSequence]) -> Result<f64> {
    let (sum, count) = sequences
        .par_iter()
        .map(|s| Ok((sequence_loss_and_grad(&model.params, s, None)?, s.days.len())))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0, 0usize), |(a, n), (l, c)| (a + l, n + c));
    if count == 0 {
        return Err(Error::Validation("no days to evaluate".into()));
    }
    Ok(sum / count as f64)
}

/// Mini-batch gradient descent on mean cross-entropy with global-norm clipping.
pub fn train(sequences: &[TrainingSequence], hp: UserModelHyperParams) -> Result<TrainingReport> {
    if sequences.is_empty() || sequences.iter().all(|s| s.days.is_empty()) {
        return Err(Error::Validation("empty training dataset".into()));
    }
    if hp.dim == 0 || hp.max_days == 0 || hp.batch_size == 0 {
        return Err(Error::Parameter("dim, max_days and batch_size must be >= 1".into()));
    }
    if !(hp.learning_rate >= 0.0) || !(hp.clip_norm > 0.0) {
        return Err(Error::Parameter("learning rate must be >= 0 and clip norm > 0".into()));
    }
    for seq in sequences {
        if seq.targets.len() != seq.days.len() || seq.targets.iter().any(|&t| t >= NUM_POSITIONS) {
            return Err(Error::Validation("sequence targets must index the position space".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let config = UserModelConfig {
        dim: hp.dim,
        max_days: hp.max_days,
        seed: hp.seed,
    };
    let mut model = UserModel::new(config, UserModelParams::init(hp.dim, hp.max_days, &mut rng))?;
    let mut loss_curve = vec![mean_cross_entropy(&model, sequences)?];
    let mut order: Vec<usize> = (0..sequences.len()).collect();

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            let params = &model.params;
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let mut g = params.zeros_like();
                    sequence_loss_and_grad(params, &sequences[i], Some(&mut g))?;
                    Ok((g, sequences[i].days.len()))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = model.params.zeros_like();
            let mut count = 0;
            for (g, c) in &parts {
                grad.axpy(1.0, g);
                count += c;
            }
            if count == 0 {
                continue;
            }
            grad.scale(1.0 / count as f64);
            let norm = grad.norm();
            if !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    message: "non-finite gradient".into(),
                });
            }
            if norm > hp.clip_norm {
                grad.scale(hp.clip_norm / norm);
            }
            model.params.axpy(-hp.learning_rate, &grad);
        }
        let loss = mean_cross_entropy(&model, sequences)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("loss {loss}"),
            });
        }
        log::debug!("user model epoch {epoch}: loss {loss:.4}");
        loss_curve.push(loss);
    }
    Ok(TrainingReport { model, loss_curve })
}
