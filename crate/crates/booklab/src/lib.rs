//! A one-level limit order book laboratory.
//!
//! The crate solves the market maker and pair-trader impulse-control problems
//! by explicit backward dynamic programming on discrete grids, implements the
//! broker Volume and VWAP controllers, and replays every agent against one
//! shared book.

pub mod book;
pub mod broker;
pub mod dp;
pub mod hft;
pub mod market;
pub mod mm;
pub mod prior;
pub mod rng;
pub mod stats;
pub mod vwap;

pub use book::{AgentState, BookState, Caps, FlowAction, MarketEvent, RegenDraw};
pub use prior::{KernelModel, PriorConfig};

/// Price of one tick in currency units.
pub const DEFAULT_TICK: f64 = 0.01;
