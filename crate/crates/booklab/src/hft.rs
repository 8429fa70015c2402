//! Pair trader on the stock/futures spread: futures-hedged accounting, the
//! trinomial tree for the spread process, and the layered solve.

use crate::book::{AgentState, BookState, Caps};
use crate::dp::rollout::{rollout, RolloutPath, RolloutSpec, TablePolicy};
use crate::dp::space::{Reduced, SpaceSpec, StateSpace};
use crate::dp::{
    compile, map_range, solve_backward, DpError, Economics, Exec, Model, Solution, SolveOptions,
};
use crate::mm::{action_code, InitialBook, PathSummary, PolicySourceSync};
use crate::prior::{KernelModel, Thinning};
use crate::rng::{purpose, stream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("spread grid needs at least {0} nodes")]
    TooFewNodes(usize),
    #[error("spread grid must be increasing with a uniform mesh (node {0})")]
    NonUniform(usize),
    #[error("negative parameter {0} = {1}")]
    Negative(&'static str, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub s_bar: f64,
    pub rho: f64,
    pub sigma: f64,
    pub grid: Vec<f64>,
}

impl OuParams {
    /// `n` nodes with spacing `mesh`, centred on `centre`.
    pub fn centred_grid(centre: f64, n: usize, mesh: f64) -> Vec<f64> {
        let mid = (n as f64 - 1.0) / 2.0;
        (0..n).map(|k| centre + (k as f64 - mid) * mesh).collect()
    }

    fn mesh(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    pub fn nearest(&self, s: f64) -> usize {
        let k = ((s - self.grid[0]) / self.mesh()).round();
        k.clamp(0.0, (self.grid.len() - 1) as f64) as usize
    }

    /// Node at or below `s` (the first node if `s` is below the grid).
    pub fn left(&self, s: f64) -> usize {
        let k = ((s - self.grid[0]) / self.mesh() + 1e-9).floor();
        k.clamp(0.0, (self.grid.len() - 1) as f64) as usize
    }
}

impl Default for OuParams {
    fn default() -> Self {
        OuParams {
            s_bar: 0.0,
            rho: 50.0,
            sigma: 0.2,
            grid: OuParams::centred_grid(0.0, 6, 0.005),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuTree {
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Rows whose drift target fell outside the grid and was pulled back.
    pub mean_clamped: Vec<bool>,
    /// Rows whose variance was moved to keep probabilities in [0, 1].
    pub var_clamped: Vec<bool>,
    /// Conditional mean each row was built to match.
    pub target_mean: Vec<f64>,
}

impl OuTree {
    pub fn mean(&self, grid: &[f64], k: usize) -> f64 {
        self.rows[k].iter().map(|&(j, p)| p * grid[j]).sum()
    }

    pub fn clamp_report(&self) -> String {
        let n = self.rows.len();
        let m = self.mean_clamped.iter().filter(|&&c| c).count();
        let v = self.var_clamped.iter().filter(|&&c| c).count();
        format!("mean clamped on {m}/{n} rows, variance clamped on {v}/{n} rows")
    }

    pub fn step<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> usize {
        crate::prior::draw_weighted(rng, &self.rows[k])
    }
}

/// Trinomial moment-matching tree for dS = rho (s_bar - S) dt + sigma dW on
/// the grid, using Euler moments over `dt`. Out-of-grid mass is pulled back
/// inside and reported.
pub fn ou_tree(oup: &OuParams, dt: f64) -> Result<OuTree, TreeError> {
    let g = &oup.grid;
    let n = g.len();
    for (name, v) in [("rho", oup.rho), ("sigma", oup.sigma), ("dt", dt)] {
        if v < 0.0 {
            return Err(TreeError::Negative(name, v));
        }
    }
    let need = if oup.sigma > 0.0 { 3 } else { 1 };
    if n < need {
        return Err(TreeError::TooFewNodes(need));
    }
    if n > 1 {
        let h = g[1] - g[0];
        for k in 1..n {
            if !(h > 0.0) || ((g[k] - g[k - 1]) - h).abs() > 1e-9 * h.abs().max(1e-12) {
                return Err(TreeError::NonUniform(k));
            }
        }
    }
    let mut tree = OuTree {
        rows: Vec::with_capacity(n),
        mean_clamped: Vec::with_capacity(n),
        var_clamped: Vec::with_capacity(n),
        target_mean: Vec::with_capacity(n),
    };
    for &s in g {
        let raw = s + oup.rho * (oup.s_bar - s) * dt;
        let mu = raw.clamp(g[0], g[n - 1]);
        tree.mean_clamped.push(mu != raw);
        tree.target_mean.push(mu);
        if oup.sigma == 0.0 {
            tree.rows.push(vec![(oup.left(mu), 1.0)]);
            tree.var_clamped.push(false);
            continue;
        }
        let h = g[1] - g[0];
        let m = oup.nearest(mu).clamp(1, n - 2);
        let d = (mu - g[m]) / h;
        let v_raw = oup.sigma * oup.sigma * dt / (h * h);
        let v = v_raw.clamp(d.abs() - d * d, 1.0 - d * d);
        tree.var_clamped.push(v != v_raw);
        let p_u = (v + d * d + d) / 2.0;
        let p_d = (v + d * d - d) / 2.0;
        let p_0 = 1.0 - p_u - p_d;
        let row: Vec<(usize, f64)> = [(m - 1, p_d), (m, p_0), (m + 1, p_u)]
            .into_iter()
            .map(|(j, p)| (j, p.max(0.0)))
            .filter(|e| e.1 > 0.0)
            .collect();
        tree.rows.push(row);
    }
    Ok(tree)
}

/// F = mid + s, currency.
pub fn futures_price(tick: f64, book: &BookState, s: f64) -> f64 {
    book.mid2() as f64 * 0.5 * tick + s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEdges {
    pub b_minus: f64,
    pub b_plus: f64,
    pub a_minus: f64,
    pub a_plus: f64,
}

/// Touch prices net of the futures hedge: p - mid - s -/+ kappa_fut.
pub fn delta_edges(tick: f64, book: &BookState, s: f64, kappa_fut: f64) -> DeltaEdges {
    let mid = book.mid2() as f64 * 0.5 * tick;
    let b = book.p_b as f64 * tick - mid - s;
    let a = book.p_a as f64 * tick - mid - s;
    DeltaEdges {
        b_minus: b - kappa_fut,
        b_plus: b + kappa_fut,
        a_minus: a - kappa_fut,
        a_plus: a + kappa_fut,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HftParams {
    pub eta: f64,
    /// Liquidation penalty per unit beyond the touch queue.
    pub kappa: f64,
    /// Proportional cost of each futures hedge.
    pub kappa_fut: f64,
    pub rho_cost: f64,
    pub i_star: i32,
    pub j_cap: Option<u32>,
    pub horizon: f64,
    pub dt: f64,
    pub max_order: u32,
    pub q_max: u32,
    pub full_cancel_only: bool,
    pub tick: f64,
}

impl Default for HftParams {
    fn default() -> Self {
        HftParams {
            eta: 1.0,
            kappa: 0.02,
            kappa_fut: 0.0,
            rho_cost: 1e-20,
            i_star: 7,
            j_cap: None,
            horizon: 59.0,
            dt: 0.5,
            max_order: 3,
            q_max: 12,
            full_cancel_only: true,
            tick: crate::DEFAULT_TICK,
        }
    }
}

impl HftParams {
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

    /// No mirror: the spread process breaks the bid/ask symmetry.
    pub fn space_spec(&self) -> SpaceSpec {
        SpaceSpec {
            q_max: self.q_max,
            i_star: self.i_star,
            n_max: self.caps().max_resting(),
            j_cap: self.j_cap,
            mirror: false,
        }
    }
}

fn overflow(i: i32, q_b: u32, q_a: u32) -> f64 {
    let long = (i.max(0) as i64 - q_b as i64).max(0);
    let short = ((-i).max(0) as i64 - q_a as i64).max(0);
    (long + short) as f64
}

/// Utility of hedged cash `g_h` (currency) plus the stock position unwound
/// at the touch against the futures hedge.
pub fn utility_hft(p: &HftParams, book: &BookState, x: &AgentState, g_h: f64, s: f64) -> f64 {
    let d = delta_edges(p.tick, book, s, p.kappa_fut);
    let i = x.i as f64;
    let mark = i.max(0.0) * d.b_minus - (-i).max(0.0) * d.a_plus;
    -(-p.eta * (g_h + mark - p.kappa * overflow(x.i, book.q_b, book.q_a) - p.rho_cost * x.j as f64))
        .exp()
}

/// Change of hedged cash (currency) when the agent goes from `x` to `y`
/// while the book shows `pre`: stock cash plus the futures leg at F.
pub fn hedged_increment(
    p: &HftParams,
    pre: &BookState,
    x: &AgentState,
    y: &AgentState,
    s: f64,
) -> f64 {
    let di = (y.i - x.i) as f64;
    (y.g - x.g) as f64 * p.tick + di * futures_price(p.tick, pre, s) - p.kappa_fut * di.abs()
}

pub struct HftEconomics<'a> {
    pub p: &'a HftParams,
    pub grid: &'a [f64],
}

impl Economics for HftEconomics<'_> {
    fn layers(&self) -> usize {
        self.grid.len()
    }

    fn edge(
        &self,
        pre: &BookState,
        x: &AgentState,
        _post: &BookState,
        y: &AgentState,
    ) -> (f64, i8) {
        let di = y.i - x.i;
        let c0 = self.p.tick * 0.5 * (2 * (y.g - x.g) + di as i64 * pre.mid2()) as f64
            - self.p.kappa_fut * di.abs() as f64;
        (-self.p.eta * c0, di as i8)
    }

    fn action_factor(&self) -> f64 {
        if self.p.j_cap.is_none() {
            (self.p.eta * self.p.rho_cost).exp()
        } else {
            1.0
        }
    }

    fn tag_factor(&self, layer: usize, tag: i8) -> f64 {
        (-self.p.eta * tag as f64 * self.grid[layer]).exp()
    }

    fn terminal(&self, layer: usize, z: &Reduced) -> f64 {
        let p = self.p;
        let s = self.grid[layer];
        let half = 0.5 * z.spread as f64 * p.tick;
        let b_minus = -half - s - p.kappa_fut;
        let a_plus = half - s + p.kappa_fut;
        let i = z.i as f64;
        let mark = i.max(0.0) * b_minus - (-i).max(0.0) * a_plus;
        let rho_j = if p.j_cap.is_some() {
            p.rho_cost * z.j as f64
        } else {
            0.0
        };
        -(-p.eta * (mark - p.kappa * overflow(z.i, z.q_b, z.q_a) - rho_j)).exp()
    }
}

pub struct HftSolve {
    pub params: HftParams,
    pub ou: OuParams,
    pub tree: OuTree,
    pub space: StateSpace,
    pub model: Model,
    pub solution: Solution,
}

impl HftSolve {
    /// Value at t = 0 with hedged cash `g_h` at grid node `layer`.
    pub fn value0(&self, book: &BookState, x: &AgentState, g_h: f64, layer: usize) -> Option<f64> {
        let slot = self.space.find_pair(book, x)?;
        let mut log_factor = -self.params.eta * g_h;
        if self.params.j_cap.is_none() {
            log_factor += self.params.eta * self.params.rho_cost * x.j as f64;
        }
        Some(log_factor.exp() * self.solution.values.get(0, layer, slot.index)?)
    }

    pub fn policy(&self) -> TablePolicy<'_> {
        TablePolicy {
            space: &self.space,
            policy: &self.solution.policy,
            caps: self.params.caps(),
        }
    }
}

#[derive(Debug, Error)]
pub enum HftError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Dp(#[from] DpError),
}

pub fn solve_hft(
    p: &HftParams,
    ou: &OuParams,
    km: &KernelModel,
    keep_all: bool,
    exec: Exec,
) -> Result<HftSolve, HftError> {
    let tree = ou_tree(ou, p.dt)?;
    let space = StateSpace::new(p.space_spec());
    let mut model = compile(
        &space,
        km,
        &p.caps(),
        &HftEconomics { p, grid: &ou.grid },
        exec,
    )?;
    model.mixing = Some(tree.rows.clone());
    let solution = solve_backward(
        &model,
        &SolveOptions {
            dt: p.dt,
            steps: p.steps(),
            keep_all,
            exec,
        },
    )?;
    Ok(HftSolve {
        params: *p,
        ou: ou.clone(),
        tree,
        space,
        model,
        solution,
    })
}

/// How the spread moves in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpreadSim {
    /// The same tree the solve uses.
    Tree,
    /// Exact OU transition, then the node at or below.
    Exact,
}

/// Exact OU step over `dt` from `s`.
pub fn ou_exact_step<R: Rng + ?Sized>(ou: &OuParams, s: f64, dt: f64, rng: &mut R) -> f64 {
    let a = (-ou.rho * dt).exp();
    let mean = ou.s_bar + (s - ou.s_bar) * a;
    let var = if ou.rho > 0.0 {
        ou.sigma * ou.sigma * (1.0 - a * a) / (2.0 * ou.rho)
    } else {
        ou.sigma * ou.sigma * dt
    };
    mean + var.sqrt() * standard_normal(rng)
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A simulated path with the spread value at every point and the hedged cash.
#[derive(Debug, Clone)]
pub struct HftPath {
    pub path: RolloutPath,
    pub s: Vec<f64>,
    pub hedged_cash: Vec<f64>,
}

/// Hedged cash along a rollout, replaying own and exogenous legs separately.
fn hedged_cash_series(p: &HftParams, path: &RolloutPath, s: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(path.points.len());
    let mut gh = 0.0;
    out.push(gh);
    for w in 1..path.points.len() {
        let prev = &path.points[w - 1];
        let cur = &path.points[w];
        // Decisions and events of step w - 1 see the spread observed at its start.
        let s_now = s[w - 1];
        let (mut book, mut x) = (prev.book, prev.agent);
        if let Some((b2, x2)) = cur.acted {
            gh += hedged_increment(p, &book, &x, &x2, s_now);
            book = b2;
            x = x2;
        }
        gh += hedged_increment(p, &book, &x, &cur.agent, s_now);
        out.push(gh);
    }
    out
}

/// Final gain: hedged cash plus the stock unwound at the touch (one tick
/// worse past the queue) and the futures hedge closed at F.
pub fn hft_gain(p: &HftParams, book: &BookState, x: &AgentState, g_h: f64, s: f64) -> f64 {
    let stock = crate::mm::liquidation_value(p.tick, book, &AgentState { g: 0, ..*x });
    let i = x.i as f64;
    g_h + stock - i * futures_price(p.tick, book, s) - p.kappa_fut * i.abs()
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_hft(
    policy: &dyn PolicySourceSync,
    km: &KernelModel,
    ou: &OuParams,
    tree: &OuTree,
    p: &HftParams,
    mode: SpreadSim,
    init: &InitialBook,
    s0: f64,
    n_paths: usize,
    keep_paths: usize,
    seed: u64,
    exec: Exec,
) -> Result<(Vec<PathSummary>, Vec<HftPath>), DpError> {
    let spec = RolloutSpec {
        dt: p.dt,
        steps: p.steps(),
        thinning: Thinning::Linear,
    };
    let book0 = init.book();
    let layer0 = ou.left(s0);
    let runs = map_range(exec, n_paths, |k| -> Result<HftPath, DpError> {
        let mut rng = stream(seed, &[purpose::PATH, k as u64]);
        let mut s_rng = stream(seed, &[purpose::SPREAD, k as u64]);
        let mut s_cont = s0;
        let mut s_path = vec![match mode {
            SpreadSim::Tree => ou.grid[layer0],
            SpreadSim::Exact => s0,
        }];
        let path = rollout(
            policy.as_source(),
            km,
            &spec,
            book0,
            AgentState::flat(),
            layer0,
            |l, _| {
                let next = match mode {
                    SpreadSim::Tree => tree.step(l, &mut s_rng),
                    SpreadSim::Exact => {
                        s_cont = ou_exact_step(ou, s_cont, p.dt, &mut s_rng);
                        ou.left(s_cont)
                    }
                };
                s_path.push(match mode {
                    SpreadSim::Tree => ou.grid[next],
                    SpreadSim::Exact => s_cont,
                });
                next
            },
            &mut rng,
        )?;
        let hedged_cash = hedged_cash_series(p, &path, &s_path);
        Ok(HftPath {
            path,
            s: s_path,
            hedged_cash,
        })
    });
    let mut out = Vec::with_capacity(n_paths);
    let mut kept = Vec::new();
    for (k, r) in runs.into_iter().enumerate() {
        let hp = r?;
        let last = hp.path.last();
        let s_t = *hp.s.last().unwrap();
        let g_h = *hp.hedged_cash.last().unwrap();
        out.push(PathSummary {
            gain: hft_gain(p, &last.book, &last.agent, g_h, s_t),
            utility: utility_hft(p, &last.book, &last.agent, g_h, s_t),
            actions: hp.path.actions(),
            final_inventory: last.agent.i,
        });
        if k < keep_paths {
            kept.push(hp);
        }
    }
    Ok((out, kept))
}

/// Path CSV with the spread and futures columns added.
pub fn write_path_csv(
    w: &mut impl Write,
    header: &str,
    tick: f64,
    hp: &HftPath,
) -> std::io::Result<()> {
    writeln!(w, "{header}")?;
    writeln!(
        w,
        "t,action,p_b,p_a,q_b,q_a,n_b,n_a,b_b,b_a,i,g,hedged_cash,s,F"
    )?;
    for (k, pt) in hp.path.points.iter().enumerate() {
        let (b, x) = (&pt.book, &pt.agent);
        writeln!(
            w,
            "{},{},{:.2},{:.2},{},{},{},{},{},{},{},{:.2},{:.6},{:.6},{:.6}",
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
            hp.hedged_cash[k],
            hp.s[k],
            futures_price(tick, b, hp.s[k])
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn futures_and_edges() {
        let b = BookState::new(1000, 1001, 3, 3);
        assert!((futures_price(0.01, &b, 0.005) - 10.01).abs() < 1e-12);
        let d = delta_edges(0.01, &b, 0.0, 0.0);
        assert!((d.b_minus + 0.005).abs() < 1e-12 && (d.a_plus - 0.005).abs() < 1e-12);
        let d = delta_edges(0.01, &b, 0.02, 0.0);
        assert!(d.b_minus < 0.0 && d.a_plus < 0.0);
        let k = delta_edges(0.01, &b, 0.0, 0.001);
        assert!((k.b_minus + 0.006).abs() < 1e-12 && (k.a_plus - 0.006).abs() < 1e-12);
    }

    #[test]
    fn tree_rows_are_distributions() {
        let ou = OuParams::default();
        for dt in [0.5, 1.0, 0.01] {
            let t = ou_tree(&ou, dt).unwrap();
            for row in &t.rows {
                let s: f64 = row.iter().map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-15);
                assert!(row.iter().all(|e| e.1 >= 0.0 && e.1 <= 1.0));
            }
            for k in 0..ou.grid.len() {
                assert!((t.mean(&ou.grid, k) - t.target_mean[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tree_symmetric_at_the_mean() {
        let ou = OuParams {
            grid: OuParams::centred_grid(0.0, 7, 0.005),
            rho: 1.0,
            sigma: 0.002,
            ..OuParams::default()
        };
        let t = ou_tree(&ou, 0.5).unwrap();
        let row = &t.rows[3];
        assert_eq!(row.len(), 3);
        assert!((row[0].1 - row[2].1).abs() < 1e-15);
    }

    #[test]
    fn zero_vol_is_a_point_mass() {
        let ou = OuParams {
            sigma: 0.0,
            rho: 1.0,
            grid: OuParams::centred_grid(0.0, 5, 0.005),
            ..OuParams::default()
        };
        let t = ou_tree(&ou, 0.5).unwrap();
        assert_eq!(t.rows[2], vec![(2, 1.0)]);
        // 0.01 -> 0.005 exactly on a node
        assert_eq!(t.rows[4], vec![(3, 1.0)]);
    }

    #[test]
    fn bad_grids() {
        let ou = OuParams {
            grid: vec![0.0, 0.1],
            ..OuParams::default()
        };
        assert!(matches!(ou_tree(&ou, 0.5), Err(TreeError::TooFewNodes(3))));
        let ou = OuParams {
            grid: vec![0.0, 0.1, 0.3],
            ..OuParams::default()
        };
        assert!(matches!(ou_tree(&ou, 0.5), Err(TreeError::NonUniform(2))));
    }
}
