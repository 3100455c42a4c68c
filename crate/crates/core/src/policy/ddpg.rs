//! DDPG actor-critic for the continuous position `d_AI`.
//!
//! Reward is the day's change in total assets, `position × (close[t+1] − close[t])`.
//! Actor and critic are single-hidden-layer tanh perceptrons trained with Adam,
//! Gaussian exploration noise decayed linearly over episodes, uniform replay
//! and soft target updates.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::{Adam, Mlp, MlpGrad};
use super::{Actor, PolicyObservation, OBSERVATION_DIM};
use crate::error::{Error, Result};
use crate::market_data::PriceSeries;
use crate::predictor::ProbabilitySource;
use crate::types::{ClassProbabilities, EPISODE_DAYS, MAX_POSITION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgHyperParams {
    pub gamma: f64,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Initial exploration noise std in shares, decayed linearly to 0.
    pub noise_scale: f64,
    pub replay_size: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub episodes: usize,
    /// JPY rewards are multiplied by this before entering the critic.
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for DdpgHyperParams {
    fn default() -> Self {
        Self {
            gamma: 0.6,
            hidden: 32,
            actor_lr: 3e-4,
            critic_lr: 3e-3,
            noise_scale: 150.0,
            replay_size: 10_000,
            batch_size: 64,
            tau: 0.01,
            episodes: 1000,
            reward_scale: 1e-4,
            seed: 0,
        }
    }
}

const HALF_RANGE: f64 = MAX_POSITION as f64 / 2.0;

/// Trained actor (and the critic it was trained against).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlPolicy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub hyper: DdpgHyperParams,
}

impl RlPolicy {
    pub fn init(hp: &DdpgHyperParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        Self {
            actor: Mlp::init(OBSERVATION_DIM, hp.hidden, &mut rng),
            critic: Mlp::init(OBSERVATION_DIM + 1, hp.hidden, &mut rng),
            hyper: *hp,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::predictor::write_json(path, self)
    }

    /// Unclipped action in shares, `250 · (1 + out)`.
    fn action_of(actor: &Mlp, obs: &[f64]) -> f64 {
        HALF_RANGE * (1.0 + actor.output(obs))
    }
}

impl Actor for RlPolicy {
    fn mean_action(&self, obs: &PolicyObservation) -> f64 {
        Self::action_of(&self.actor, &obs.to_vec())
    }
}

/// Single-asset environment over a price series with precomputed `p`.
#[derive(Debug, Clone)]
pub struct TradingEnv {
    closes: Vec<f64>,
    probs: Vec<Option<ClassProbabilities>>,
    episode_len: usize,
    starts: Vec<usize>,
    start: usize,
    step: usize,
    position: f64,
}

impl TradingEnv {
    /// Every start with `episode_len` scoreable days and a settlement close is eligible.
    pub fn new<P: ProbabilitySource + ?Sized>(
        series: &PriceSeries,
        predictor: &P,
        episode_len: usize,
    ) -> Result<Self> {
        if episode_len == 0 {
            return Err(Error::Parameter("episode length must be >= 1".into()));
        }
        let probs: Vec<Option<ClassProbabilities>> = (0..series.len())
            .map(|t| predictor.probabilities(series, t).ok())
            .collect();
        let starts: Vec<usize> = (0..series.len().saturating_sub(episode_len))
            .filter(|&s| probs[s..s + episode_len].iter().all(Option::is_some))
            .collect();
        if starts.is_empty() {
            return Err(Error::Validation(format!(
                "series of {} days has no {episode_len}-day window with predictions and a settlement day",
                series.len()
            )));
        }
        Ok(Self {
            closes: series.closes().collect(),
            probs,
            episode_len,
            start: starts[0],
            starts,
            step: 0,
            position: 0.0,
        })
    }

    pub fn with_episode_days(series: &PriceSeries, predictor: &dyn ProbabilitySource) -> Result<Self> {
        Self::new(series, predictor, EPISODE_DAYS)
    }

    /// Restricts episodes to one fixed start.
    pub fn fix_start(&mut self, start: usize) -> Result<()> {
        if !self.starts.contains(&start) {
            return Err(Error::OutOfRange(format!("start {start} is not an eligible window")));
        }
        self.starts = vec![start];
        Ok(())
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn reset<R: Rng>(&mut self, rng: &mut R) -> PolicyObservation {
        let idx = rng.random_range(0..self.starts.len());
        self.reset_at_index(idx)
    }

    fn reset_at_index(&mut self, idx: usize) -> PolicyObservation {
        self.start = self.starts[idx];
        self.step = 0;
        self.position = 0.0;
        self.observation()
    }

    pub fn reset_to(&mut self, start: usize) -> Result<PolicyObservation> {
        let idx = self
            .starts
            .iter()
            .position(|&s| s == start)
            .ok_or_else(|| Error::OutOfRange(format!("start {start} is not an eligible window")))?;
        Ok(self.reset_at_index(idx))
    }

    pub fn observation(&self) -> PolicyObservation {
        let t = self.start + self.step;
        let from = t.saturating_sub(2).max(self.start);
        let history: Vec<ClassProbabilities> = self.probs[from..=t]
            .iter()
            .map(|p| p.expect("eligible window has predictions"))
            .collect();
        PolicyObservation::new(&history, self.position)
    }

    /// Holds `action` shares (clipped) through the next close. Returns the next
    /// observation, the reward in JPY and whether the episode ended.
    pub fn step(&mut self, action: f64) -> (PolicyObservation, f64, bool) {
        let t = self.start + self.step;
        self.position = action.clamp(0.0, f64::from(MAX_POSITION));
        let reward = self.position * (self.closes[t + 1] - self.closes[t]);
        self.step += 1;
        let done = self.step >= self.episode_len;
        let obs = if done {
            // Terminal observation mirrors the last day; it is never acted upon.
            self.step -= 1;
            let o = self.observation();
            self.step += 1;
            o
        } else {
            self.observation()
        };
        (obs, reward, done)
    }

    /// Total reward of one episode from `start` under `decide`.
    pub fn rollout(
        &mut self,
        start: usize,
        mut decide: impl FnMut(&PolicyObservation) -> f64,
    ) -> Result<f64> {
        let mut obs = self.reset_to(start)?;
        let mut total = 0.0;
        loop {
            let (next, r, done) = self.step(decide(&obs));
            total += r;
            if done {
                return Ok(total);
            }
            obs = next;
        }
    }
}

#[derive(Debug, Clone)]
struct Transition {
    obs: Vec<f64>,
    action: f64,
    reward: f64,
    next: Vec<f64>,
}

#[derive(Debug)]
struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    fn new(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
        }
    }

    fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn sample<'a, R: Rng>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Half mean squared error of `critic` against `targets` and its gradient.
pub fn critic_loss_and_grad(critic: &Mlp, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, MlpGrad) {
    let n = inputs.len() as f64;
    let mut grad = critic.zeros_like();
    let mut loss = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let (q, h) = critic.forward(x);
        let err = q - y;
        loss += 0.5 * err * err / n;
        critic.backward(x, &h, err / n, &mut grad);
    }
    (loss, grad)
}

fn critic_input(obs: &[f64], action: f64) -> Vec<f64> {
    let mut x = obs.to_vec();
    x.push(action / f64::from(MAX_POSITION));
    x
}

#[derive(Debug, Clone)]
pub struct RlTraining {
    pub policy: RlPolicy,
    /// Undiscounted JPY return of each training episode.
    pub episode_returns: Vec<f64>,
    /// Mean critic loss per episode (NaN before the first update).
    pub critic_losses: Vec<f64>,
}

pub fn train_rl_policy(env: &mut TradingEnv, hp: DdpgHyperParams) -> Result<RlTraining> {
    if !(0.0..1.0).contains(&hp.gamma) {
        return Err(Error::Parameter(format!("gamma {} outside [0, 1)", hp.gamma)));
    }
    if hp.hidden == 0 || hp.batch_size == 0 || hp.replay_size == 0 {
        return Err(Error::Parameter("hidden, batch_size and replay_size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&hp.tau) || !(hp.noise_scale >= 0.0) {
        return Err(Error::Parameter("tau must be in [0, 1] and noise_scale >= 0".into()));
    }

    let mut policy = RlPolicy::init(&hp);
    let mut target_actor = policy.actor.clone();
    let mut target_critic = policy.critic.clone();
    let mut actor_opt = Adam::new(&policy.actor, hp.actor_lr);
    let mut critic_opt = Adam::new(&policy.critic, hp.critic_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(1));
    let mut replay = ReplayBuffer::new(hp.replay_size);
    let mut episode_returns = Vec::with_capacity(hp.episodes);
    let mut critic_losses = Vec::with_capacity(hp.episodes);
    let max = f64::from(MAX_POSITION);

    for episode in 0..hp.episodes {
        let sigma = hp.noise_scale * (1.0 - episode as f64 / hp.episodes as f64);
        let mut obs = env.reset(&mut rng).to_vec();
        let mut total = 0.0;
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        loop {
            let noise = if sigma > 0.0 {
                Normal::new(0.0, sigma).expect("finite std").sample(&mut rng)
            } else {
                0.0
            };
            let action = (RlPolicy::action_of(&policy.actor, &obs) + noise).clamp(0.0, max);
            let (next, reward, done) = env.step(action);
            total += reward;
            let next = next.to_vec();
            replay.push(Transition {
                obs: obs.clone(),
                action,
                reward: reward * hp.reward_scale,
                next: next.clone(),
            });
            obs = next;

            if replay.len() >= hp.batch_size {
                let batch = replay.sample(hp.batch_size, &mut rng);
                let inputs: Vec<Vec<f64>> = batch.iter().map(|t| critic_input(&t.obs, t.action)).collect();
                let targets: Vec<f64> = batch
                    .iter()
                    .map(|t| {
                        let a = RlPolicy::action_of(&target_actor, &t.next).clamp(0.0, max);
                        t.reward + hp.gamma * target_critic.output(&critic_input(&t.next, a))
                    })
                    .collect();
                let (loss, grad) = critic_loss_and_grad(&policy.critic, &inputs, &targets);
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch: episode,
                        message: format!("critic loss {loss}"),
                    });
                }
                critic_opt.apply(&mut policy.critic, &grad);
                loss_sum += loss;
                updates += 1;

                // Deterministic policy gradient: ascend Q(s, μ(s)), stopping once
                // the raw actor output is past a bound in the ascent direction.
                let mut actor_grad = policy.actor.zeros_like();
                let n = batch.len() as f64;
                for t in &batch {
                    let (o, h) = policy.actor.forward(&t.obs);
                    let a = HALF_RANGE * (1.0 + o);
                    let x = critic_input(&t.obs, a.clamp(0.0, max));
                    let (_, ch) = policy.critic.forward(&x);
                    let mut scratch = policy.critic.zeros_like();
                    let dx = policy.critic.backward(&x, &ch, 1.0, &mut scratch);
                    let dq_da = dx[OBSERVATION_DIM] / max;
                    if (a >= max && dq_da > 0.0) || (a <= 0.0 && dq_da < 0.0) {
                        continue;
                    }
                    let dout = -dq_da * HALF_RANGE / n;
                    policy.actor.backward(&t.obs, &h, dout, &mut actor_grad);
                }
                actor_opt.apply(&mut policy.actor, &actor_grad);
                target_actor.soft_update(&policy.actor, hp.tau);
                target_critic.soft_update(&policy.critic, hp.tau);
                if !policy.actor.is_finite() || !policy.critic.is_finite() {
                    return Err(Error::Divergence {
                        epoch: episode,
                        message: "non-finite network parameters".into(),
                    });
                }
            }
            if done {
                break;
            }
        }
        episode_returns.push(total);
        critic_losses.push(if updates > 0 {
            loss_sum / updates as f64
        } else {
            f64::NAN
        });
    }
    Ok(RlTraining {
        policy,
        episode_returns,
        critic_losses,
    })
}
