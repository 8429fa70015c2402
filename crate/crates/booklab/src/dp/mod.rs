//! Backward dynamic programming on reduced state spaces.
//!
//! A problem is compiled once into sparse edge lists (exogenous events and
//! agent actions, each with their probability and utility factor already
//! folded in). The explicit scheme then alternates a flow step and an
//! impulse step over the whole grid.

pub mod model;
pub mod rollout;
pub mod scheme;
pub mod space;
pub mod table;

pub use model::{compile, Economics, Model};
pub use rollout::{
    rollout, Passive, PathPoint, PolicySource, RolloutPath, RolloutSpec, TablePolicy,
};
pub use scheme::{scheme_step, solve_backward, Exec, Solution, SolveOptions};
pub use space::{Reduced, SpaceSpec, StateSpace};
pub use table::{PolicyTable, ValueTable};

use crate::book::BookError;
use crate::prior::PriorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpError {
    #[error(transparent)]
    Book(#[from] BookError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("explicit scheme unstable: dt * gamma_max = {0} >= 1")]
    Unstable(f64),
    #[error("transition leaves the state space: {0}")]
    Leaves(String),
    #[error("{0} admissible actions in one state; at most 255 are supported")]
    TooManyActions(usize),
    #[error("table mismatch: {0}")]
    Mismatch(String),
    #[error("bad table file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Runs `f` over every slot of `out`, in parallel when the feature is on and
/// the caller asks for it.
pub(crate) fn fill<T, F>(exec: Exec, out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel {
        use rayon::prelude::*;
        out.par_iter_mut()
            .with_min_len(256)
            .enumerate()
            .for_each(|(k, o)| f(k, o));
        return;
    }
    let _ = exec;
    out.iter_mut().enumerate().for_each(|(k, o)| f(k, o));
}

/// Ordered parallel map over `0..n`.
pub fn map_range<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}
