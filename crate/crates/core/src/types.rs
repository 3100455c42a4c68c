//! Value types shared by every stage of the guidance loop.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of selectable post-order positions.
pub const NUM_POSITIONS: usize = 6;

/// The position space `{0, 100, ..., 500}` shares.
pub const POSITIONS: [u32; NUM_POSITIONS] = [0, 100, 200, 300, 400, 500];

/// Trading lot size in shares.
pub const LOT: u32 = 100;

/// Largest holdable position in shares.
pub const MAX_POSITION: u32 = 500;

/// Length of one trading episode in days.
pub const EPISODE_DAYS: usize = 45;

/// Starting budget in JPY.
pub const INITIAL_CASH: f64 = 1_000_000.0;

/// Index of `shares` in [`POSITIONS`], if it is a valid position.
pub fn position_index(shares: u32) -> Option<usize> {
    if shares.is_multiple_of(LOT) && shares <= MAX_POSITION {
        Some((shares / LOT) as usize)
    } else {
        None
    }
}

pub fn validate_position(shares: u32) -> Result<usize> {
    position_index(shares).ok_or_else(|| {
        Error::Validation(format!(
            "position {shares} is not a multiple of {LOT} in [0, {MAX_POSITION}]"
        ))
    })
}

/// Next-day movement class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Bull,
    Neutral,
    Bear,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Bull, Class::Neutral, Class::Bear];

    pub fn index(self) -> usize {
        match self {
            Class::Bull => 0,
            Class::Neutral => 1,
            Class::Bear => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Class::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Bull => "BULL",
            Class::Neutral => "NEUTRAL",
            Class::Bear => "BEAR",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(values: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &v in values {
        if !v.is_finite() || !(0.0..=1.0 + SIMPLEX_TOL).contains(&v) {
            return Err(Error::Validation(format!(
                "{what}: component {v} outside [0, 1]"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Validation(format!(
            "{what}: components sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Predictor output `p` over (BULL, NEUTRAL, BEAR).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ClassProbabilities([f64; 3]);

impl ClassProbabilities {
    pub fn new(bull: f64, neutral: f64, bear: f64) -> Result<Self> {
        Self::from_array([bull, neutral, bear])
    }

    pub fn from_array(values: [f64; 3]) -> Result<Self> {
        check_simplex(&values, "class probabilities")?;
        Ok(Self(values))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn as_array(&self) -> &[f64; 3] {
        &self.0
    }

    pub fn get(&self, class: Class) -> f64 {
        self.0[class.index()]
    }

    /// Most probable class. Ties resolve to the most conservative class
    /// (BEAR before NEUTRAL before BULL).
    pub fn argmax(&self) -> Class {
        let mut best = Class::Bear;
        for class in [Class::Neutral, Class::Bull] {
            if self.get(class) > self.get(best) {
                best = class;
            }
        }
        best
    }
}

impl TryFrom<[f64; 3]> for ClassProbabilities {
    type Error = Error;

    fn try_from(values: [f64; 3]) -> Result<Self> {
        Self::from_array(values)
    }
}

impl From<ClassProbabilities> for [f64; 3] {
    fn from(p: ClassProbabilities) -> Self {
        p.0
    }
}

/// Which of the three per-class explanations are emphasized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct EmphasisPattern {
    pub bull: bool,
    pub neutral: bool,
    pub bear: bool,
}

impl EmphasisPattern {
    pub const FLAT: EmphasisPattern = EmphasisPattern {
        bull: false,
        neutral: false,
        bear: false,
    };

    pub const fn new(bull: bool, neutral: bool, bear: bool) -> Self {
        Self {
            bull,
            neutral,
            bear,
        }
    }

    pub fn only(class: Class) -> Self {
        let mut p = Self::FLAT;
        p.set(class, true);
        p
    }

    pub fn get(&self, class: Class) -> bool {
        match class {
            Class::Bull => self.bull,
            Class::Neutral => self.neutral,
            Class::Bear => self.bear,
        }
    }

    pub fn set(&mut self, class: Class, on: bool) {
        match class {
            Class::Bull => self.bull = on,
            Class::Neutral => self.neutral = on,
            Class::Bear => self.bear = on,
        }
    }

    pub fn as_array(&self) -> [bool; 3] {
        [self.bull, self.neutral, self.bear]
    }

    pub fn emphasized_count(&self) -> usize {
        self.as_array().iter().filter(|&&b| b).count()
    }

    pub fn is_all(&self) -> bool {
        self.bull && self.neutral && self.bear
    }

    /// Bit code with BULL as the most significant bit; ascending codes give
    /// lexicographic order with false < true.
    pub fn bits(&self) -> u8 {
        (u8::from(self.bull) << 2) | (u8::from(self.neutral) << 1) | u8::from(self.bear)
    }

    pub fn from_bits(bits: u8) -> Self {
        Self::new(bits & 4 != 0, bits & 2 != 0, bits & 1 != 0)
    }
}

impl fmt::Display for EmphasisPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |b: bool, ch: char| if b { ch } else { '-' };
        write!(
            f,
            "{}{}{}",
            c(self.bull, 'B'),
            c(self.neutral, 'N'),
            c(self.bear, 'b')
        )
    }
}

/// Probability of each post-order position in [`POSITIONS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; NUM_POSITIONS]", into = "[f64; NUM_POSITIONS]")]
pub struct DecisionDistribution([f64; NUM_POSITIONS]);

impl DecisionDistribution {
    pub fn new(probs: [f64; NUM_POSITIONS]) -> Result<Self> {
        check_simplex(&probs, "decision distribution")?;
        Ok(Self(probs))
    }

    pub fn point_mass(shares: u32) -> Result<Self> {
        let idx = validate_position(shares)?;
        let mut probs = [0.0; NUM_POSITIONS];
        probs[idx] = 1.0;
        Ok(Self(probs))
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_POSITIONS as f64; NUM_POSITIONS])
    }

    pub fn probs(&self) -> &[f64; NUM_POSITIONS] {
        &self.0
    }

    /// Mean position in shares.
    pub fn expected_position(&self) -> f64 {
        self.0
            .iter()
            .zip(POSITIONS)
            .map(|(p, d)| p * f64::from(d))
            .sum()
    }

    pub(crate) fn from_softmax_unchecked(probs: [f64; NUM_POSITIONS]) -> Self {
        Self(probs)
    }
}

impl TryFrom<[f64; NUM_POSITIONS]> for DecisionDistribution {
    type Error = Error;

    fn try_from(probs: [f64; NUM_POSITIONS]) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<DecisionDistribution> for [f64; NUM_POSITIONS] {
    fn from(d: DecisionDistribution) -> Self {
        d.0
    }
}

/// Advisor-suggested position `d_AI`, continuous in `[0, 500]` shares.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AdvisorDecision(f64);

impl AdvisorDecision {
    pub fn new(shares: f64) -> Result<Self> {
        if shares.is_finite() && (0.0..=f64::from(MAX_POSITION)).contains(&shares) {
            Ok(Self(shares))
        } else {
            Err(Error::Validation(format!(
                "advisor decision {shares} outside [0, {MAX_POSITION}]"
            )))
        }
    }

    /// Clamp an arbitrary actor output into the admissible range. NaN maps to 0.
    pub fn clipped(raw: f64) -> Self {
        if raw.is_nan() {
            return Self(0.0);
        }
        Self(raw.clamp(0.0, f64::from(MAX_POSITION)))
    }

    pub fn shares(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AdvisorDecision {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AdvisorDecision> for f64 {
    fn from(d: AdvisorDecision) -> Self {
        d.0
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// Counter-based seed derivation (SplitMix64 finalizer over a running state).
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mut state = mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15));
    for &p in parts {
        state = mix(state ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    state
}

/// Stable 64-bit FNV-1a hash, used for seed labels and feature hashing.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
