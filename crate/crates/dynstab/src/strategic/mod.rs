//! Participation incentives: late arrival reports and sequential spot-mechanism games.

pub mod delay;
pub mod game;

pub use delay::{delay_incentive_witness, is_exchangeable, DelayCheck, DelayWitness, Precondition};
pub use game::{check_equilibrium_stability, find_pure_spne, spot_run, Equilibrium, GameSpec, Mechanism, Variant};
