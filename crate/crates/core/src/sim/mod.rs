//! Portfolio accounting, synthetic users and the daily episode loop.

mod episode;
mod portfolio;
mod record;
mod user;

pub use episode::{
    default_strategy_id, run_episode, DayPlan, DecisionSource, Episode, EpisodeEnv,
    EpisodeOutcome, SyntheticAgent,
};
pub use portfolio::{affordable_positions, apply_order, max_affordable_position, PortfolioState};
pub use record::{
    load_episodes, load_jsonl, read_jsonl, save_jsonl, to_jsonl_string, write_jsonl,
    TrajectoryRecord,
};
pub use user::{synthetic_decide, SyntheticUser, UserKind};
