//! Forward simulation of a solved policy against the exogenous flow.
//!
//! Each grid step: the agent acts (if the policy says so), then at most one
//! exogenous event arrives, then the extra layer state moves.

use super::space::StateSpace;
use super::table::PolicyTable;
use super::DpError;
use crate::book::{
    admissible_actions, step_exogenous, step_own, AgentState, BookState, Caps, FlowAction,
    MarketEvent,
};
use crate::prior::{
    draw_weighted, enumerate_lambda, sample_event, EventKind, KernelModel, Thinning,
};
use rand::Rng;

pub trait PolicySource {
    fn action(
        &self,
        step: usize,
        layer: usize,
        book: &BookState,
        x: &AgentState,
    ) -> Option<FlowAction>;
}

/// Looks actions up in a solved policy table. States outside the grid get no
/// action.
pub struct TablePolicy<'a> {
    pub space: &'a StateSpace,
    pub policy: &'a PolicyTable,
    pub caps: Caps,
}

impl PolicySource for TablePolicy<'_> {
    fn action(
        &self,
        step: usize,
        layer: usize,
        book: &BookState,
        x: &AgentState,
    ) -> Option<FlowAction> {
        if step >= self.policy.header.steps {
            return None;
        }
        let slot = self.space.find_pair(book, x)?;
        let ord = self.policy.get(step, layer, slot.index);
        if ord == 0 {
            return None;
        }
        let (b0, x0) = self.space.state(slot.index).embed();
        let x0 = AgentState { j: x.j, ..x0 };
        let acts = admissible_actions(&b0, &x0, &self.caps).ok()?;
        let c = *acts.get(ord as usize - 1)?;
        Some(if slot.mirrored { c.mirrored() } else { c })
    }
}

/// Never acts.
pub struct Passive;

impl PolicySource for Passive {
    fn action(&self, _: usize, _: usize, _: &BookState, _: &AgentState) -> Option<FlowAction> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub step: usize,
    pub t: f64,
    pub layer: usize,
    pub book: BookState,
    pub agent: AgentState,
    /// Action taken at the start of the step that led here.
    pub action: Option<FlowAction>,
    /// State right after that action, before the step's event.
    pub acted: Option<(BookState, AgentState)>,
    pub event: Option<EventKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPath {
    /// Starts with the initial state at t = 0.
    pub points: Vec<PathPoint>,
}

impl RolloutPath {
    pub fn last(&self) -> &PathPoint {
        self.points
            .last()
            .expect("path has at least the initial point")
    }

    pub fn actions(&self) -> usize {
        self.points.iter().filter(|p| p.action.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutSpec {
    pub dt: f64,
    pub steps: usize,
    pub thinning: Thinning,
}

#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    policy: &dyn PolicySource,
    km: &KernelModel,
    spec: &RolloutSpec,
    book: BookState,
    x: AgentState,
    layer: usize,
    mut layer_step: impl FnMut(usize, &mut R) -> usize,
    rng: &mut R,
) -> Result<RolloutPath, DpError> {
    let (mut book, mut x, mut layer) = (book, x, layer);
    let mut points = vec![PathPoint {
        step: 0,
        t: 0.0,
        layer,
        book,
        agent: x,
        action: None,
        acted: None,
        event: None,
    }];
    for k in 0..spec.steps {
        let action = policy.action(k, layer, &book, &x);
        let mut acted = None;
        if let Some(c) = action {
            let regen = draw_weighted(rng, &enumerate_lambda(km, &book, &c));
            let (out, y) = step_own(&book, &x, &MarketEvent::new(c, regen))?;
            book = out.book;
            x = y;
            acted = Some((book, x));
        }
        let mut event = None;
        if let Some((kind, ev)) = sample_event(km, &book, spec.dt, spec.thinning, rng)? {
            let (out, y) = step_exogenous(&book, &x, &ev)?;
            book = out.book;
            x = y;
            event = Some(kind);
        }
        layer = layer_step(layer, rng);
        points.push(PathPoint {
            step: k + 1,
            t: (k + 1) as f64 * spec.dt,
            layer,
            book,
            agent: x,
            action,
            acted,
            event,
        });
    }
    Ok(RolloutPath { points })
}
