use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{validate_position, INITIAL_CASH, LOT, MAX_POSITION};

/// Single-asset long-only account. Orders fill at the given price with no fees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub cash: f64,
    pub position: u32,
    pub last_price: f64,
}

impl PortfolioState {
    pub fn new(cash: f64, price: f64) -> Self {
        Self {
            cash,
            position: 0,
            last_price: price,
        }
    }

    pub fn initial(price: f64) -> Self {
        Self::new(INITIAL_CASH, price)
    }

    pub fn total_assets(&self) -> f64 {
        self.cash + f64::from(self.position) * self.last_price
    }

    /// Marks the holding to a new price.
    pub fn mark(&mut self, price: f64) {
        self.last_price = price;
    }
}

fn check_price(price: f64) -> Result<()> {
    if price.is_finite() && price > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("price {price} must be positive")))
    }
}

/// Moves to `target` shares at `price`. Unaffordable targets are rejected and
/// leave `state` untouched.
pub fn apply_order(state: &PortfolioState, target: u32, price: f64) -> Result<PortfolioState> {
    validate_position(target)?;
    check_price(price)?;
    let wealth = state.cash + f64::from(state.position) * price;
    let cost = f64::from(target) * price;
    if cost > wealth {
        return Err(Error::RejectedOrder(format!(
            "{target} shares at {price} JPY cost {cost} JPY but only {wealth} JPY is available"
        )));
    }
    let trade = f64::from(target) - f64::from(state.position);
    Ok(PortfolioState {
        cash: state.cash - trade * price,
        position: target,
        last_price: price,
    })
}

/// Largest position in the lot grid the account can hold at `price`.
pub fn max_affordable_position(state: &PortfolioState, price: f64) -> u32 {
    if !(price > 0.0) {
        return state.position;
    }
    let wealth = state.cash + f64::from(state.position) * price;
    let mut best = 0;
    let mut d = LOT;
    while d <= MAX_POSITION {
        if f64::from(d) * price <= wealth {
            best = d;
        }
        d += LOT;
    }
    best.max(state.position.min(MAX_POSITION))
}

/// Every position in the grid the account could move to at `price`.
pub fn affordable_positions(state: &PortfolioState, price: f64) -> Vec<u32> {
    let max = max_affordable_position(state, price);
    crate::types::POSITIONS
        .into_iter()
        .filter(|&d| d <= max)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_allocation() {
        let s = PortfolioState::new(1_000_000.0, 2000.0);
        let after = apply_order(&s, 500, 2000.0).unwrap();
        assert_eq!(after.cash, 0.0);
        assert_eq!(after.total_assets(), 1_000_000.0);
    }

    #[test]
    fn same_target_is_noop() {
        let s = PortfolioState {
            cash: 400_000.0,
            position: 300,
            last_price: 2000.0,
        };
        assert_eq!(apply_order(&s, 300, 2000.0).unwrap(), s);
    }

    #[test]
    fn unaffordable_is_rejected() {
        let s = PortfolioState::new(100_000.0, 2000.0);
        assert!(matches!(
            apply_order(&s, 100, 2000.0),
            Err(Error::RejectedOrder(_))
        ));
        assert!(matches!(apply_order(&s, 150, 2000.0), Err(Error::Validation(_))));
    }

    #[test]
    fn max_affordable_examples() {
        let s = PortfolioState::new(1_000_000.0, 2000.0);
        assert_eq!(max_affordable_position(&s, 2000.0), 500);
        let s = PortfolioState {
            cash: 0.0,
            position: 300,
            last_price: 2000.0,
        };
        assert_eq!(max_affordable_position(&s, 2000.0), 300);
        let s = PortfolioState::new(1_000_000.0, 10_000.0);
        assert_eq!(max_affordable_position(&s, 10_000.0), 100);
    }

    #[test]
    fn conservation_at_constant_price() {
        let mut s = PortfolioState::initial(1987.0);
        let before = s.total_assets();
        for target in [300, 0, 500, 100, 400, 400, 200] {
            s = apply_order(&s, target, 1987.0).unwrap();
            assert_eq!(s.total_assets(), before);
        }
    }
}
