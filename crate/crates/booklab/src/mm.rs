//! Market maker: exponential utility of the liquidated portfolio, the
//! reduced problem (cash and price level factored out, bid/ask mirror) and
//! the solve and Monte-Carlo pipeline.

use crate::book::{
    admissible_actions, step_exogenous, step_own, AgentState, BookState, Caps, FlowAction,
    MarketEvent,
};
use crate::dp::rollout::{rollout, PolicySource, RolloutPath, RolloutSpec, TablePolicy};
use crate::dp::space::{Reduced, SpaceSpec, StateSpace};
use crate::dp::{
    compile, map_range, solve_backward, DpError, Economics, Exec, Model, Solution, SolveOptions,
};
use crate::prior::{enumerate_beta, enumerate_lambda, KernelModel, Thinning};
use crate::rng::{purpose, stream};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// How trades are valued between decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    /// Plain cash plus stock marked at the current mid.
    Mid,
    /// Every trade valued against the mid at trade time; later mid moves do
    /// not touch the position. This is the pair trader with a flat spread.
    Hedged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmParams {
    pub eta: f64,
    /// Liquidation penalty per unit beyond the touch queue, currency.
    pub kappa: f64,
    /// Penalty per action, currency.
    pub rho_cost: f64,
    pub i_star: i32,
    pub j_cap: Option<u32>,
    pub horizon: f64,
    pub dt: f64,
    pub max_order: u32,
    pub q_max: u32,
    pub full_cancel_only: bool,
    pub tick: f64,
    pub mirror: bool,
    pub mark: Mark,
}

impl Default for MmParams {
    fn default() -> Self {
        MmParams {
            eta: 1.0,
            kappa: 0.02,
            rho_cost: 1e-20,
            i_star: 7,
            j_cap: None,
            horizon: 59.0,
            dt: 0.5,
            max_order: 3,
            q_max: 12,
            full_cancel_only: true,
            tick: crate::DEFAULT_TICK,
            mirror: true,
            mark: Mark::Mid,
        }
    }
}

impl MmParams {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn caps(&self) -> Caps {
        Caps {
            i_star: self.i_star,
            j_cap: self.j_cap,
            max_order: self.max_order,
            q_max: self.q_max,
            full_cancel_only: self.full_cancel_only,
        }
    }

    pub fn space_spec(&self) -> SpaceSpec {
        SpaceSpec {
            q_max: self.q_max,
            i_star: self.i_star,
            n_max: self.caps().max_resting(),
            j_cap: self.j_cap,
            mirror: self.mirror,
        }
    }
}

fn overflow(i: i32, q_b: u32, q_a: u32) -> f64 {
    let long = (i.max(0) as i64 - q_b as i64).max(0);
    let short = ((-i).max(0) as i64 - q_a as i64).max(0);
    (long + short) as f64
}

/// Liquidation value of the position in currency, before the penalty:
/// g + i+ p_b - i- p_a.
fn marked(p: &MmParams, book: &BookState, x: &AgentState) -> f64 {
    let i = x.i as i64;
    (x.g + i.max(0) * book.p_b - (-i).max(0) * book.p_a) as f64 * p.tick
}

/// The exponent inside the utility, so large portfolios can be handled
/// without overflow.
pub fn utility_exponent_mm(p: &MmParams, book: &BookState, x: &AgentState) -> f64 {
    let rho_j = p.rho_cost * x.j as f64;
    -p.eta * (marked(p, book, x) - p.kappa * overflow(x.i, book.q_b, book.q_a) - rho_j)
}

pub fn utility_mm(p: &MmParams, book: &BookState, x: &AgentState) -> f64 {
    -utility_exponent_mm(p, book, x).exp()
}

/// Bookkeeping for the reduced market-maker problem.
pub struct MmEconomics<'a> {
    pub p: &'a MmParams,
}

impl Economics for MmEconomics<'_> {
    fn edge(&self, pre: &BookState, x: &AgentState, post: &BookState, y: &AgentState) -> (f64, i8) {
        let dg = (y.g - x.g) as f64;
        let e = match self.p.mark {
            Mark::Mid => 2.0 * dg + (y.i as i64 * post.mid2() - x.i as i64 * pre.mid2()) as f64,
            Mark::Hedged => 2.0 * dg + ((y.i - x.i) as i64 * pre.mid2()) as f64,
        };
        (-self.p.eta * self.p.tick * 0.5 * e, 0)
    }

    fn action_factor(&self) -> f64 {
        if self.p.j_cap.is_none() {
            (self.p.eta * self.p.rho_cost).exp()
        } else {
            1.0
        }
    }

    fn terminal(&self, _layer: usize, z: &Reduced) -> f64 {
        let p = self.p;
        let half = 0.5 * z.spread as f64 * p.tick;
        let i = z.i as f64;
        let mark = i.max(0.0) * -half - (-i).max(0.0) * half;
        let rho_j = if p.j_cap.is_some() {
            p.rho_cost * z.j as f64
        } else {
            0.0
        };
        -(-p.eta * (mark - p.kappa * overflow(z.i, z.q_b, z.q_a) - rho_j)).exp()
    }
}

/// Reduced index of a full state and the log of the factor that maps the
/// reduced value back: v(book, x) = exp(log_factor) * w(index).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reduction {
    pub index: usize,
    pub mirrored: bool,
    pub log_factor: f64,
}

pub fn reduce_state(
    space: &StateSpace,
    p: &MmParams,
    book: &BookState,
    x: &AgentState,
) -> Option<Reduction> {
    let slot = space.find_pair(book, x)?;
    let mid = book.mid2() as f64 * 0.5 * p.tick;
    let mut log_factor = -p.eta * (x.g as f64 * p.tick + x.i as f64 * mid);
    if p.j_cap.is_none() {
        log_factor += p.eta * p.rho_cost * x.j as f64;
    }
    Some(Reduction {
        index: slot.index,
        mirrored: slot.mirrored,
        log_factor,
    })
}

pub struct MmSolve {
    pub params: MmParams,
    pub space: StateSpace,
    pub model: Model,
    pub solution: Solution,
}

impl MmSolve {
    /// Value at t = 0 of a full state, if it lies on the grid.
    pub fn value0(&self, book: &BookState, x: &AgentState) -> Option<f64> {
        let r = reduce_state(&self.space, &self.params, book, x)?;
        Some(r.log_factor.exp() * self.solution.values.get(0, 0, r.index)?)
    }

    pub fn policy(&self) -> TablePolicy<'_> {
        TablePolicy {
            space: &self.space,
            policy: &self.solution.policy,
            caps: self.params.caps(),
        }
    }
}

pub fn build_mm(
    p: &MmParams,
    km: &KernelModel,
    exec: Exec,
) -> Result<(StateSpace, Model), DpError> {
    if p.mirror && !km.is_mirror_symmetric() {
        return Err(DpError::Mismatch(
            "mirror reduction needs a mirror-symmetric kernel".into(),
        ));
    }
    let space = StateSpace::new(p.space_spec());
    let model = compile(&space, km, &p.caps(), &MmEconomics { p }, exec)?;
    Ok((space, model))
}

pub fn solve_mm(
    p: &MmParams,
    km: &KernelModel,
    keep_all: bool,
    exec: Exec,
) -> Result<MmSolve, DpError> {
    let (space, model) = build_mm(p, km, exec)?;
    let solution = solve_backward(
        &model,
        &SolveOptions {
            dt: p.dt,
            steps: p.steps(),
            keep_all,
            exec,
        },
    )?;
    Ok(MmSolve {
        params: *p,
        space,
        model,
        solution,
    })
}

/// Liquidation value in currency: stock sold at the bid (bought at the ask)
/// up to the touch queue, the rest one tick worse.
pub fn liquidation_value(tick: f64, book: &BookState, x: &AgentState) -> f64 {
    let i = x.i as i64;
    let mut v = x.g;
    if i > 0 {
        let at_touch = i.min(book.q_b as i64);
        v += at_touch * book.p_b + (i - at_touch) * (book.p_b - 1);
    } else if i < 0 {
        let n = -i;
        let at_touch = n.min(book.q_a as i64);
        v -= at_touch * book.p_a + (n - at_touch) * (book.p_a + 1);
    }
    v as f64 * tick
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialBook {
    pub p_b: i64,
    pub spread: i64,
    pub q_b: u32,
    pub q_a: u32,
}

impl InitialBook {
    pub fn book(&self) -> BookState {
        BookState::new(self.p_b, self.p_b + self.spread, self.q_b, self.q_a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub gain: f64,
    pub utility: f64,
    pub actions: usize,
    pub final_inventory: i32,
}

/// Runs `n_paths` independent rollouts from `init` with a flat agent. Path
/// `k` uses its own substream of `seed`, so results do not depend on the
/// thread count. Full paths are kept for the first `keep_paths`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_mm(
    policy: &dyn PolicySourceSync,
    km: &KernelModel,
    p: &MmParams,
    init: &InitialBook,
    n_paths: usize,
    keep_paths: usize,
    seed: u64,
    exec: Exec,
) -> Result<(Vec<PathSummary>, Vec<RolloutPath>), DpError> {
    let spec = RolloutSpec {
        dt: p.dt,
        steps: p.steps(),
        thinning: Thinning::Linear,
    };
    let book0 = init.book();
    let runs = map_range(exec, n_paths, |k| {
        let mut rng = stream(seed, &[purpose::PATH, k as u64]);
        rollout(
            policy.as_source(),
            km,
            &spec,
            book0,
            AgentState::flat(),
            0,
            |l, _| l,
            &mut rng,
        )
    });
    let mut out = Vec::with_capacity(n_paths);
    let mut kept = Vec::new();
    for (k, r) in runs.into_iter().enumerate() {
        let path = r?;
        let last = path.last();
        out.push(PathSummary {
            gain: liquidation_value(p.tick, &last.book, &last.agent)
                - liquidation_value(p.tick, &book0, &AgentState::flat()),
            utility: utility_mm(p, &last.book, &last.agent),
            actions: path.actions(),
            final_inventory: last.agent.i,
        });
        if k < keep_paths {
            kept.push(path);
        }
    }
    Ok((out, kept))
}

/// A policy that can be shared across threads.
pub trait PolicySourceSync: Sync {
    fn as_source(&self) -> &dyn PolicySource;
}

impl<T: PolicySource + Sync> PolicySourceSync for T {
    fn as_source(&self) -> &dyn PolicySource {
        self
    }
}

pub fn action_code(a: &Option<FlowAction>) -> String {
    a.map_or_else(|| "none".to_string(), |c| c.code())
}

/// Path CSV: t, action, p_b, p_a, q_b, q_a, n_b, n_a, b_b, b_a, i, g,
/// liquidation value (prices and cash in currency).
pub fn write_path_csv(
    w: &mut impl Write,
    header: &str,
    tick: f64,
    path: &RolloutPath,
) -> std::io::Result<()> {
    writeln!(w, "{header}")?;
    writeln!(
        w,
        "t,action,p_b,p_a,q_b,q_a,n_b,n_a,b_b,b_a,i,g,liquidation_value"
    )?;
    for pt in &path.points {
        let (b, x) = (&pt.book, &pt.agent);
        writeln!(
            w,
            "{},{},{:.2},{:.2},{},{},{},{},{},{},{},{:.2},{:.6}",
            pt.t,
            action_code(&pt.action),
            b.p_b as f64 * tick,
            b.p_a as f64 * tick,
            b.q_b,
            b.q_a,
            x.n_b,
            x.n_a,
            x.b_b,
            x.b_a,
            x.i,
            x.g as f64 * tick,
            liquidation_value(tick, b, x)
        )?;
    }
    Ok(())
}

/// Exhaustive backward recursion over full states: cash and price level are
/// kept, nothing is mirrored and no model is compiled. The cost grows like
/// (actions x events)^steps, so this is a reference for tiny instances.
/// Only the `Mid` mark has a full-state utility to compare against.
pub fn brute_force_value(
    p: &MmParams,
    km: &KernelModel,
    book: &BookState,
    x: &AgentState,
) -> Result<f64, DpError> {
    if p.mark != Mark::Mid {
        return Err(DpError::Mismatch("brute force needs the mid mark".into()));
    }
    brute_value(p, km, 0, book, x)
}

fn brute_value(
    p: &MmParams,
    km: &KernelModel,
    step: usize,
    book: &BookState,
    x: &AgentState,
) -> Result<f64, DpError> {
    if step == p.steps() {
        return Ok(utility_mm(p, book, x));
    }
    let mut best = brute_flow(p, km, step, book, x)?;
    for c in admissible_actions(book, x, &p.caps())? {
        let mut v = 0.0;
        for (r, pr) in enumerate_lambda(km, book, &c) {
            let (out, y) = step_own(book, x, &MarketEvent::new(c, r))?;
            v += pr * brute_flow(p, km, step, &out.book, &y)?;
        }
        best = best.max(v);
    }
    Ok(best)
}

/// One step of exogenous flow with linear thinning, then the next decision.
fn brute_flow(
    p: &MmParams,
    km: &KernelModel,
    step: usize,
    book: &BookState,
    x: &AgentState,
) -> Result<f64, DpError> {
    let gamma = km.gamma(book)?;
    let mut v = (1.0 - p.dt * gamma) * brute_value(p, km, step + 1, book, x)?;
    for (c, rate) in enumerate_beta(km, book)? {
        for (r, pr) in enumerate_lambda(km, book, &c) {
            let (out, y) = step_exogenous(book, x, &MarketEvent::new(c, r))?;
            v += p.dt * rate * pr * brute_value(p, km, step + 1, &out.book, &y)?;
        }
    }
    Ok(v)
}
