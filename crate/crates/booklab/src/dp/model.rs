//! Compiled transition structure for one agent problem.

use super::space::{Reduced, StateSpace};
use super::{map_range, DpError, Exec};
use crate::book::{
    admissible_actions, step_exogenous, step_own, AgentState, BookState, Caps, MarketEvent,
};
use crate::prior::{enumerate_lambda, KernelModel};

/// Problem-specific utility bookkeeping on top of the shared book mechanics.
pub trait Economics: Sync {
    /// Number of layers of the extra exogenous state (1 if there is none).
    fn layers(&self) -> usize {
        1
    }

    /// Log of the utility factor picked up on the transition from `(pre, x)`
    /// to `(post, y)` (both in the reference frame of `pre`), plus a tag that
    /// selects a per-layer factor.
    fn edge(&self, pre: &BookState, x: &AgentState, post: &BookState, y: &AgentState) -> (f64, i8);

    /// Multiplier on every action edge (used to fold a per-action cost).
    fn action_factor(&self) -> f64 {
        1.0
    }

    /// Per-layer factor for a tag.
    fn tag_factor(&self, _layer: usize, _tag: i8) -> f64 {
        1.0
    }

    fn terminal(&self, layer: usize, z: &Reduced) -> f64;
}

/// Edges in struct-of-arrays form; row `r` owns `start[r]..start[r + 1]`.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub start: Vec<u32>,
    pub next: Vec<u32>,
    pub weight: Vec<f64>,
    /// Empty when every tag is zero.
    pub tag: Vec<i8>,
}

impl Csr {
    fn push_row(&mut self) {
        self.start.push(self.next.len() as u32);
    }

    pub fn rows(&self) -> usize {
        self.start.len().saturating_sub(1)
    }

    pub fn edges(&self) -> usize {
        self.next.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> std::ops::Range<usize> {
        self.start[r] as usize..self.start[r + 1] as usize
    }
}

pub const TAG_SPAN: i8 = 64;

#[derive(Debug, Clone)]
pub struct Model {
    pub n_states: usize,
    pub n_layers: usize,
    pub space_hash: u64,
    /// Largest total event intensity, null events included.
    pub gamma_max: f64,
    /// Intensity of events that change something, per state.
    pub gamma: Vec<f64>,
    /// Rows are states; weights are rate * probability * utility factor.
    pub flow: Csr,
    /// Row range of each state's actions in `actions`, in admissible order.
    pub action_start: Vec<u32>,
    /// Rows are actions; weights are probability * utility factor.
    pub actions: Csr,
    /// Layer-major terminal values.
    pub terminal: Vec<f64>,
    /// `tag_factor[layer * (2 * TAG_SPAN + 1) + tag + TAG_SPAN]`.
    pub tag_factor: Vec<f64>,
    /// Row-stochastic mixing between layers over one step of the solve.
    pub mixing: Option<Vec<Vec<(usize, f64)>>>,
}

#[derive(Default)]
struct Local {
    gamma: f64,
    flow: Vec<(u32, f64, i8)>,
    actions: Vec<Vec<(u32, f64, i8)>>,
}

fn successor(
    space: &StateSpace,
    pre: &BookState,
    post: &BookState,
    y: &AgentState,
) -> Result<u32, DpError> {
    space
        .find_pair(post, y)
        .map(|s| s.index as u32)
        .ok_or_else(|| DpError::Leaves(format!("{pre:?} -> {post:?}, agent {y:?}")))
}

fn compile_state<E: Economics + ?Sized>(
    space: &StateSpace,
    km: &KernelModel,
    caps: &Caps,
    econ: &E,
    z: &Reduced,
) -> Result<Local, DpError> {
    let (book, x) = z.embed();
    let mut loc = Local::default();
    for e in km.entries(&book)? {
        if e.action.is_zero() {
            continue;
        }
        loc.gamma += e.rate;
        for (regen, p) in enumerate_lambda(km, &book, &e.action) {
            let (out, y) = step_exogenous(&book, &x, &MarketEvent::new(e.action, regen))?;
            let (logw, tag) = econ.edge(&book, &x, &out.book, &y);
            let k = successor(space, &book, &out.book, &y)?;
            loc.flow.push((k, e.rate * p * logw.exp(), tag));
        }
    }
    let af = econ.action_factor();
    let acts = admissible_actions(&book, &x, caps)?;
    if acts.len() > 255 {
        return Err(DpError::TooManyActions(acts.len()));
    }
    for c in acts {
        let mut edges = Vec::new();
        for (regen, p) in enumerate_lambda(km, &book, &c) {
            let (out, y) = step_own(&book, &x, &MarketEvent::new(c, regen))?;
            let (logw, tag) = econ.edge(&book, &x, &out.book, &y);
            let k = successor(space, &book, &out.book, &y)?;
            edges.push((k, p * logw.exp() * af, tag));
        }
        loc.actions.push(edges);
    }
    Ok(loc)
}

/// Compiles the flow and action edges of every state in `space`.
///
/// Fails if any reachable successor is missing from the space; the agent caps
/// must match the space bounds.
pub fn compile<E: Economics + ?Sized>(
    space: &StateSpace,
    km: &KernelModel,
    caps: &Caps,
    econ: &E,
    exec: Exec,
) -> Result<Model, DpError> {
    let n = space.len();
    let n_layers = econ.layers();
    let mut m = Model {
        n_states: n,
        n_layers,
        space_hash: space.spec.hash(),
        gamma_max: km.max_gamma(),
        gamma: Vec::with_capacity(n),
        flow: Csr::default(),
        action_start: Vec::with_capacity(n + 1),
        actions: Csr::default(),
        terminal: Vec::new(),
        tag_factor: Vec::new(),
        mixing: None,
    };
    let mut any_tag = false;
    let mut tags_f: Vec<i8> = Vec::new();
    let mut tags_a: Vec<i8> = Vec::new();
    const CHUNK: usize = 8192;
    for lo in (0..n).step_by(CHUNK) {
        let hi = (lo + CHUNK).min(n);
        let locals = map_range(exec, hi - lo, |k| {
            compile_state(space, km, caps, econ, space.state(lo + k))
        });
        for loc in locals {
            let loc = loc?;
            m.gamma.push(loc.gamma);
            m.flow.push_row();
            for (k, w, t) in loc.flow {
                if t.abs() > TAG_SPAN {
                    return Err(DpError::Leaves(format!("tag {t} out of range")));
                }
                any_tag |= t != 0;
                m.flow.next.push(k);
                m.flow.weight.push(w);
                tags_f.push(t);
            }
            m.action_start.push(m.actions.start.len() as u32);
            for edges in loc.actions {
                m.actions.push_row();
                for (k, w, t) in edges {
                    if t.abs() > TAG_SPAN {
                        return Err(DpError::Leaves(format!("tag {t} out of range")));
                    }
                    any_tag |= t != 0;
                    m.actions.next.push(k);
                    m.actions.weight.push(w);
                    tags_a.push(t);
                }
            }
        }
    }
    m.flow.push_row();
    m.actions.push_row();
    m.action_start.push(m.actions.start.len() as u32 - 1);
    if any_tag {
        m.flow.tag = tags_f;
        m.actions.tag = tags_a;
    }

    m.terminal = (0..n_layers)
        .flat_map(|l| space.states().iter().map(move |z| (l, z)))
        .map(|(l, z)| econ.terminal(l, z))
        .collect();
    let width = 2 * TAG_SPAN as usize + 1;
    m.tag_factor = vec![1.0; n_layers * width];
    if any_tag {
        for l in 0..n_layers {
            for t in -TAG_SPAN..=TAG_SPAN {
                m.tag_factor[l * width + (t as i16 + TAG_SPAN as i16) as usize] =
                    econ.tag_factor(l, t);
            }
        }
    }
    Ok(m)
}

impl Model {
    pub fn len(&self) -> usize {
        self.n_states * self.n_layers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_actions(&self, z: usize) -> usize {
        (self.action_start[z + 1] - self.action_start[z]) as usize
    }

    #[inline]
    pub(crate) fn tag_row(&self, layer: usize) -> &[f64] {
        let width = 2 * TAG_SPAN as usize + 1;
        &self.tag_factor[layer * width..(layer + 1) * width]
    }

    /// Bytes held by the edge arrays.
    pub fn edge_bytes(&self) -> usize {
        let csr = |c: &Csr| c.start.len() * 4 + c.next.len() * 12 + c.tag.len();
        csr(&self.flow) + csr(&self.actions) + self.action_start.len() * 4
    }
}
