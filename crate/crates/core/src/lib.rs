//! Stochastic differential game between a seller and a buyer who share a
//! goodwill state, solved through coupled Riccati equations.
//!
//! Each player leads with one control and follows with another: the seller
//! leads with innovation effort and follows with the wholesale price, the
//! buyer leads with the retail price and follows with innovation effort.

pub mod fmt;
pub mod hamnash;
pub mod model;
pub mod plot;
pub mod riccati;
pub mod sim;
pub mod strategies;
pub mod sweep;

pub use model::{ModelError, ModelParams, TimeCurve};
pub use riccati::{RiccatiSolution, TimeMesh};
pub use strategies::{Controls, StrategyCoefficients};
