//! Semantic-aware transmission scheduling for remote state estimation.
//!
//! The crate models `N` devices sharing `M` fading channels, solves small
//! instances exactly to check the structure of the optimal value functions,
//! and trains DDPG schedulers whose critics are pushed toward (or built to
//! be) non-increasing in the age-of-information and channel-state inputs.

pub mod channel;
pub mod env;
pub mod error;
pub mod estimation;
pub mod ddpg;
pub mod exact;
pub mod harness;
pub mod neural;

pub use error::{Error, Result};
