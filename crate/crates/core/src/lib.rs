//! Emphasis selection for explanation-guided trading decisions.
//!
//! A learned user model predicts how a user's daily position responds to which
//! explanation classes are emphasized; the selector picks the emphasis pattern
//! that minimizes the expected gap to an advisor policy's suggestion. The crate
//! also contains the market-data and predictor pipeline, advisor policies, a
//! trading simulator with synthetic users, the batch experiment harness and the
//! session service behind the HTTP API.

pub mod error;
pub mod explanation;
pub mod harness;
pub mod market_data;
pub mod policy;
pub mod predictor;
pub mod selector;
pub mod session;
pub mod sim;
pub mod types;
pub mod user_model;

pub use error::{Error, Result};
pub use types::{
    AdvisorDecision, Class, ClassProbabilities, DecisionDistribution, EmphasisPattern, POSITIONS,
};
