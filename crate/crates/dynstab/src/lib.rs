//! Stable matchings in finite-horizon two-sided markets with stochastic arrivals.
//!
//! Economies are arrival trees over agents with exact rational utilities and discount factors.
//! The crate checks static and dynamic stability, enumerates dynamically stable matchings,
//! builds one constructively, and analyzes participation incentives under sequential spot
//! mechanisms.

pub mod cli;
pub mod construct;
pub mod dynamic;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod matching;
pub mod model;
pub mod payoff;
pub mod stability;
pub mod strategic;

pub use error::{Error, Result};
pub use matching::{Matching, PeriodMatching};
pub use model::{AgentId, Economy, NodeId, Side, Q};
