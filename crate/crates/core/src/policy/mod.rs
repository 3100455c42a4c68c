//! Advisor policies producing the suggested position `d_AI`.

mod ddpg;
mod mlp;

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ddpg::{
    critic_loss_and_grad, train_rl_policy, DdpgHyperParams, RlPolicy, RlTraining, TradingEnv,
};
pub use mlp::{Mlp, MlpGrad};

use crate::error::{Error, Result};
use crate::market_data::PriceSeries;
use crate::types::{AdvisorDecision, Class, ClassProbabilities, MAX_POSITION};

/// `p` for the last three days (oldest first) and the held position scaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyObservation {
    pub recent_p: [ClassProbabilities; 3],
    pub position: f64,
}

pub const OBSERVATION_DIM: usize = 10;

impl PolicyObservation {
    /// `history` holds `p` for the episode so far, ending with today; missing
    /// days are padded with uniform `p`.
    pub fn new(history: &[ClassProbabilities], d_prev: f64) -> Self {
        let mut recent_p = [ClassProbabilities::uniform(); 3];
        let n = history.len();
        for (slot, back) in (0..3).rev().enumerate() {
            if back < n {
                recent_p[slot] = history[n - 1 - back];
            }
        }
        Self {
            recent_p,
            position: (d_prev / f64::from(MAX_POSITION)).clamp(0.0, 1.0),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBSERVATION_DIM);
        for p in &self.recent_p {
            v.extend_from_slice(p.as_array());
        }
        v.push(self.position);
        v
    }

    pub fn today(&self) -> &ClassProbabilities {
        &self.recent_p[2]
    }
}

/// Buy the maximum position iff tomorrow's close is strictly higher.
pub fn oracle_decide(series: &PriceSeries, t: usize) -> Result<AdvisorDecision> {
    let r = series.next_return(t)?;
    Ok(AdvisorDecision::clipped(if r > 0.0 {
        f64::from(MAX_POSITION)
    } else {
        0.0
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NaiveVariant {
    Top1,
    Top2,
}

pub fn naive_decide(p: &ClassProbabilities, variant: NaiveVariant) -> AdvisorDecision {
    let top = p.argmax();
    let buy = match variant {
        NaiveVariant::Top1 => top == Class::Bull,
        NaiveVariant::Top2 => top != Class::Bear,
    };
    AdvisorDecision::clipped(if buy { f64::from(MAX_POSITION) } else { 0.0 })
}

/// A deterministic continuous-action policy network.
pub trait Actor {
    /// Raw mean action in shares, before clipping.
    fn mean_action(&self, obs: &PolicyObservation) -> f64;
}

/// Mean action clipped to `[0, 500]`; no exploration noise.
pub fn rl_decide<A: Actor + ?Sized>(actor: &A, obs: &PolicyObservation) -> AdvisorDecision {
    AdvisorDecision::clipped(actor.mean_action(obs))
}

#[derive(Debug, Clone)]
pub enum AdvisorPolicy {
    Oracle,
    Naive(NaiveVariant),
    Rl(Arc<RlPolicy>),
}

impl AdvisorPolicy {
    pub fn id(&self) -> &'static str {
        match self {
            AdvisorPolicy::Oracle => "oracle",
            AdvisorPolicy::Naive(NaiveVariant::Top1) => "top1",
            AdvisorPolicy::Naive(NaiveVariant::Top2) => "top2",
            AdvisorPolicy::Rl(_) => "rl",
        }
    }

    pub fn decide(
        &self,
        series: &PriceSeries,
        t: usize,
        obs: &PolicyObservation,
    ) -> Result<AdvisorDecision> {
        match self {
            AdvisorPolicy::Oracle => oracle_decide(series, t),
            AdvisorPolicy::Naive(v) => Ok(naive_decide(obs.today(), *v)),
            AdvisorPolicy::Rl(policy) => Ok(rl_decide(policy.as_ref(), obs)),
        }
    }
}

/// Policy kind named on the command line or in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Oracle,
    Rl,
    Top1,
    Top2,
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(PolicyKind::Oracle),
            "rl" => Ok(PolicyKind::Rl),
            "top1" => Ok(PolicyKind::Top1),
            "top2" => Ok(PolicyKind::Top2),
            other => Err(Error::Config(format!("unknown policy {other:?}"))),
        }
    }
}
