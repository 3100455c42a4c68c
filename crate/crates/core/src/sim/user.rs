use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::portfolio::{max_affordable_position, PortfolioState};
use crate::error::{Error, Result};
use crate::types::{Class, ClassProbabilities, EmphasisPattern, LOT, MAX_POSITION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserKind {
    /// Pulled toward the position the emphasized explanations argue for.
    Susceptible,
    /// Pushed away from it.
    Contrarian,
    /// Ignores emphasis.
    Independent,
}

/// Heuristic stand-in for a human participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub kind: UserKind,
    /// Compliance in `[0, 1]`.
    pub beta: f64,
    /// Std of the noise added to `p_bull - p_bear` before banding.
    pub noise: f64,
    /// `|p_bull - p_bear + noise|` above this picks the 0 / 500 bands, else 300.
    pub band: f64,
    pub seed: u64,
}

impl SyntheticUser {
    pub fn new(kind: UserKind, beta: f64, seed: u64) -> Result<Self> {
        let user = Self {
            kind,
            beta,
            noise: 0.15,
            band: 0.1,
            seed,
        };
        user.validate()?;
        Ok(user)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Parameter(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.noise >= 0.0) || !(self.band >= 0.0) {
            return Err(Error::Parameter("noise and band must be >= 0".into()));
        }
        Ok(())
    }
}

/// Position the emphasized classes argue for, averaged over emphasized classes.
fn implied_position(pattern: EmphasisPattern, current: u32) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for class in Class::ALL {
        if pattern.get(class) {
            sum += match class {
                Class::Bull => f64::from(MAX_POSITION),
                Class::Neutral => f64::from(current),
                Class::Bear => 0.0,
            };
            n += 1;
        }
    }
    (n > 0).then(|| sum / f64::from(n))
}

fn round_to_lot(x: f64) -> u32 {
    let lots = (x / f64::from(LOT)).round().clamp(0.0, f64::from(MAX_POSITION / LOT));
    lots as u32 * LOT
}

/// One decision. Draws exactly one normal variate from `rng` whatever the
/// user kind or pattern, so paired runs stay aligned.
pub fn synthetic_decide<R: Rng>(
    user: &SyntheticUser,
    p: &ClassProbabilities,
    pattern: EmphasisPattern,
    state: &PortfolioState,
    price: f64,
    rng: &mut R,
) -> u32 {
    let noise = if user.noise > 0.0 {
        Normal::new(0.0, user.noise).expect("finite std").sample(rng)
    } else {
        let _: f64 = rng.random();
        0.0
    };
    let signal = p.get(Class::Bull) - p.get(Class::Bear) + noise;
    let base = if signal > user.band {
        f64::from(MAX_POSITION)
    } else if signal < -user.band {
        0.0
    } else {
        300.0
    };
    let target = match (user.kind, implied_position(pattern, state.position)) {
        (UserKind::Independent, _) | (_, None) => base,
        (UserKind::Susceptible, Some(implied)) => base + user.beta * (implied - base),
        (UserKind::Contrarian, Some(implied)) => {
            base + user.beta * ((f64::from(MAX_POSITION) - implied) - base)
        }
    };
    round_to_lot(target).min(max_affordable_position(state, price))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::enumerate_patterns;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state() -> PortfolioState {
        PortfolioState::initial(2000.0)
    }

    #[test]
    fn independent_user_ignores_pattern() {
        let user = SyntheticUser::new(UserKind::Independent, 0.9, 3).unwrap();
        let p = ClassProbabilities::new(0.3, 0.3, 0.4).unwrap();
        let decisions: Vec<u32> = enumerate_patterns()
            .into_iter()
            .map(|pat| {
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                synthetic_decide(&user, &p, pat, &state(), 2000.0, &mut rng)
            })
            .collect();
        assert!(decisions.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn full_compliance_follows_bull() {
        let user = SyntheticUser::new(UserKind::Susceptible, 1.0, 3).unwrap();
        let p = ClassProbabilities::new(0.1, 0.2, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let d = synthetic_decide(&user, &p, EmphasisPattern::only(Class::Bull), &state(), 2000.0, &mut rng);
            assert_eq!(d, 500);
        }
    }

    #[test]
    fn full_contrarian_opposes_bull() {
        let user = SyntheticUser::new(UserKind::Contrarian, 1.0, 3).unwrap();
        let p = ClassProbabilities::new(0.7, 0.2, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let d = synthetic_decide(&user, &p, EmphasisPattern::only(Class::Bull), &state(), 2000.0, &mut rng);
            assert_eq!(d, 0);
        }
    }

    #[test]
    fn decisions_are_affordable_lots() {
        let user = SyntheticUser::new(UserKind::Susceptible, 0.7, 3).unwrap();
        let poor = PortfolioState::new(250_000.0, 2000.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for bits in 0..7u8 {
            let p = ClassProbabilities::new(0.8, 0.1, 0.1).unwrap();
            let d = synthetic_decide(&user, &p, EmphasisPattern::from_bits(bits), &poor, 2000.0, &mut rng);
            assert!(d <= 100 && d % 100 == 0);
        }
    }

    #[test]
    fn beta_is_validated() {
        assert!(SyntheticUser::new(UserKind::Susceptible, 1.2, 0).is_err());
    }
}
