//! Swing option pricing by backward dynamic programming on diffusion
//! transitions, with tools to verify convex-ordering properties of the value
//! functions.

pub mod bdpp_solver;
pub mod convex_order;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod market_models;
pub mod quadrature;
pub mod schemes;
pub mod swing_contract;

pub use error::{Result, SwingError};
