//! Several agents sharing one book. Queues keep owner-tagged slices so fills
//! follow price-time priority; the only randomness is the spread process and
//! the size of regenerated queues.

use crate::book::{
    book_transition, check_representable, exe, AgentState, BookError, BookState, FlowAction,
    MarketEvent, RegenDraw,
};
use crate::broker::{Controller, Side};
use crate::dp::PolicySource;
use crate::hft::{futures_price, ou_exact_step, OuParams, OuTree, SpreadSim};
use crate::prior::{draw_weighted, regen_draws, RegenLaw, SizeTable};
use crate::rng::{purpose, stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error(transparent)]
    Book(#[from] BookError),
    #[error("roster mismatch: {0}")]
    Roster(String),
    #[error("replay diverged: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Owner {
    Exo,
    Agent(u8),
}

/// One side's queue, front first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompositeQueue {
    pub slices: Vec<(Owner, u32)>,
}

impl CompositeQueue {
    pub fn exogenous(size: u32) -> Self {
        CompositeQueue {
            slices: vec![(Owner::Exo, size)],
        }
    }

    pub fn owned(owner: Owner, size: u32) -> Self {
        CompositeQueue {
            slices: vec![(owner, size)],
        }
    }

    pub fn total(&self) -> u32 {
        self.slices.iter().map(|s| s.1).sum()
    }

    /// (n, b): own size and the size ahead of the agent's first unit.
    pub fn view(&self, id: u8) -> (u32, u32) {
        let mut ahead = 0;
        let mut first = None;
        let mut n = 0;
        for &(o, s) in &self.slices {
            if o == Owner::Agent(id) {
                first.get_or_insert(ahead);
                n += s;
            }
            ahead += s;
        }
        (n, if n == 0 { 0 } else { first.unwrap_or(0) })
    }

    pub fn push_back(&mut self, owner: Owner, size: u32) {
        if size == 0 {
            return;
        }
        match self.slices.last_mut() {
            Some(last) if last.0 == owner => last.1 += size,
            _ => self.slices.push((owner, size)),
        }
    }

    /// Removes `m` units of the owner's size, back first.
    pub fn cancel(&mut self, id: u8, mut m: u32) {
        for k in (0..self.slices.len()).rev() {
            if m == 0 {
                break;
            }
            if self.slices[k].0 == Owner::Agent(id) {
                let take = m.min(self.slices[k].1);
                self.slices[k].1 -= take;
                m -= take;
            }
        }
        self.compact();
    }

    /// Consumes `a` units front first and reports who was filled.
    pub fn execute(&mut self, mut a: u32) -> Vec<(Owner, u32)> {
        let mut fills = Vec::new();
        for s in self.slices.iter_mut() {
            if a == 0 {
                break;
            }
            let take = a.min(s.1);
            if take > 0 {
                fills.push((s.0, take));
                s.1 -= take;
                a -= take;
            }
        }
        self.compact();
        fills
    }

    fn compact(&mut self) {
        self.slices.retain(|s| s.1 > 0);
        let mut out: Vec<(Owner, u32)> = Vec::with_capacity(self.slices.len());
        for &(o, s) in &self.slices {
            match out.last_mut() {
                Some(last) if last.0 == o => last.1 += s,
                _ => out.push((o, s)),
            }
        }
        self.slices = out;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub buyer: Owner,
    pub seller: Owner,
    /// Ticks.
    pub price: i64,
    pub size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Account {
    /// Cash, ticks x units.
    pub g: i64,
    pub i: i32,
    /// Orders sent.
    pub j: u32,
    pub fills: u32,
    pub bought: u32,
    pub sold: u32,
    /// Cash of the futures-hedged book, currency. Only hedged agents use it.
    pub g_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Mm,
    Hft,
    Volume(Side),
    Vwap(Side),
}

impl AgentKind {
    fn priority(self) -> u8 {
        match self {
            AgentKind::Hft => 0,
            AgentKind::Mm => 1,
            _ => 2,
        }
    }

    pub fn label(self) -> String {
        match self {
            AgentKind::Mm => "mm".into(),
            AgentKind::Hft => "hft".into(),
            AgentKind::Volume(s) => format!("volume_{}", side_label(s)),
            AgentKind::Vwap(s) => format!("vwap_{}", side_label(s)),
        }
    }
}

fn side_label(s: Side) -> &'static str {
    match s {
        Side::Buy => "buy",
        Side::Sell => "sell",
    }
}

/// Bounds used to clip an intended action to what the book allows now.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub q_max: u32,
    pub i_star: Option<i32>,
    pub full_cancel_only: bool,
}

pub fn inventory_ok(x: &AgentState, c: &FlowAction, i_star: i32) -> bool {
    let ex_b = exe(c.a_b, x.n_b, x.b_b);
    let ex_a = exe(c.a_a, x.n_a, x.b_a);
    let i = x.i as i64 + (c.a_a - ex_a) as i64 - (c.a_b - ex_b) as i64;
    let n_b = x.n_b as i64 - ex_b as i64 - c.m_b as i64 + c.l_b as i64 + c.l_b_half as i64;
    let n_a = x.n_a as i64 - ex_a as i64 - c.m_a as i64 + c.l_a as i64 + c.l_a_half as i64;
    let s = i_star as i64;
    i.abs() <= s && i + n_b <= s && i - n_a >= -s
}

/// Clips an intended bundle to the current book and the agent's current
/// orders. Sizes only shrink, so the bundle constraints keep holding.
pub fn clip_action(
    book: &BookState,
    x: &AgentState,
    intended: &FlowAction,
    lim: &Limits,
) -> FlowAction {
    let mut c = *intended;
    c.m_b = c.m_b.min(x.n_b);
    c.m_a = c.m_a.min(x.n_a);
    if lim.full_cancel_only {
        if c.m_b > 0 {
            c.m_b = x.n_b;
        }
        if c.m_a > 0 {
            c.m_a = x.n_a;
        }
    }
    if x.n_b > 0 {
        c.l_b = 0;
    }
    if x.n_a > 0 {
        c.l_a = 0;
    }
    c.l_b = c.l_b.min(lim.q_max.saturating_sub(book.q_b));
    c.l_a = c.l_a.min(lim.q_max.saturating_sub(book.q_a));
    if book.spread() != 2 {
        c.l_b_half = 0;
        c.l_a_half = 0;
    }
    c.l_b_half = c.l_b_half.min(lim.q_max);
    c.l_a_half = c.l_a_half.min(lim.q_max);
    c.a_b = c.a_b.min(book.q_b - c.m_b);
    c.a_a = c.a_a.min(book.q_a - c.m_a);
    if let Some(s) = lim.i_star {
        while !inventory_ok(x, &c, s) && (c.a_a > 0 || c.a_b > 0) {
            c.a_a = c.a_a.saturating_sub(1);
            c.a_b = c.a_b.saturating_sub(1);
        }
        if !inventory_ok(x, &c, s) {
            c.l_b = 0;
            c.l_a = 0;
            c.l_b_half = 0;
            c.l_a_half = 0;
        }
        if !inventory_ok(x, &c, s) {
            return FlowAction::ZERO;
        }
    }
    if check_representable(book, &c).is_err() {
        c.l_b_half = 0;
        c.l_a_half = 0;
    }
    if check_representable(book, &c).is_err() {
        // Both queues emptied at once: keep the cancellations.
        c.a_b = 0;
        c.a_a = 0;
    }
    if check_representable(book, &c).is_err() {
        return FlowAction::ZERO;
    }
    c
}

/// Static description of a run, needed for replay and summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub name: String,
    pub kind: AgentKind,
    /// Units to trade, for brokers.
    pub target: Option<u32>,
    /// Hedges every inventory change in the futures.
    pub hedged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub seed: u64,
    pub horizon: f64,
    pub dt: f64,
    pub tick: f64,
    pub kappa_fut: f64,
    pub q_max: u32,
    pub initial: BookState,
    pub agents: Vec<AgentMeta>,
}

/// The matching engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub book: BookState,
    pub bid: CompositeQueue,
    pub ask: CompositeQueue,
    pub accounts: Vec<Account>,
    hedged: Vec<bool>,
    tick: f64,
    kappa_fut: f64,
}

impl Exchange {
    pub fn new(meta: &LogMeta) -> Self {
        Exchange {
            book: meta.initial,
            bid: CompositeQueue::exogenous(meta.initial.q_b),
            ask: CompositeQueue::exogenous(meta.initial.q_a),
            accounts: vec![Account::default(); meta.agents.len()],
            hedged: meta.agents.iter().map(|a| a.hedged).collect(),
            tick: meta.tick,
            kappa_fut: meta.kappa_fut,
        }
    }

    /// The agent's state as its own single-agent model would see it.
    pub fn view(&self, id: u8) -> AgentState {
        let a = &self.accounts[id as usize];
        let (n_b, b_b) = self.bid.view(id);
        let (n_a, b_a) = self.ask.view(id);
        AgentState {
            g: a.g,
            i: a.i,
            n_b,
            n_a,
            b_b,
            b_a,
            j: a.j,
        }
    }

    /// Regeneration draw when the bundle empties a queue. Prices always move
    /// on depletion here.
    pub fn draw_regen<R: rand::Rng + ?Sized>(
        &self,
        c: &FlowAction,
        law: &RegenLaw,
        rng: &mut R,
    ) -> Option<RegenDraw> {
        let dep = c.hat_b() == self.book.q_b || c.hat_a() == self.book.q_a;
        dep.then(|| draw_weighted(rng, &regen_draws(law, &self.book, c)))
    }

    /// Applies an already clipped bundle for agent `id`; `s` is the spread
    /// value used for hedges.
    pub fn apply(
        &mut self,
        id: u8,
        c: &FlowAction,
        regen: Option<RegenDraw>,
        s: f64,
    ) -> Result<Vec<Trade>, MarketError> {
        let pre = self.book;
        let before: Vec<Account> = self.accounts.clone();
        let out = book_transition(
            &pre,
            &MarketEvent::new(*c, regen.unwrap_or(RegenDraw::UNUSED)),
        )?;
        let me = Owner::Agent(id);
        let mut trades = Vec::new();
        if c.a_b > 0 {
            for (o, n) in self.bid.execute(c.a_b) {
                trades.push(Trade {
                    buyer: o,
                    seller: me,
                    price: pre.p_b,
                    size: n,
                });
            }
        }
        if c.a_a > 0 {
            for (o, n) in self.ask.execute(c.a_a) {
                trades.push(Trade {
                    buyer: me,
                    seller: o,
                    price: pre.p_a,
                    size: n,
                });
            }
        }
        self.bid.cancel(id, c.m_b);
        self.ask.cancel(id, c.m_a);
        self.bid.push_back(me, c.l_b);
        self.ask.push_back(me, c.l_a);
        if out.inside_b {
            self.bid = CompositeQueue::owned(me, c.l_b_half);
        } else if out.regen_b {
            self.bid = CompositeQueue::exogenous(out.book.q_b);
        }
        if out.inside_a {
            self.ask = CompositeQueue::owned(me, c.l_a_half);
        } else if out.regen_a {
            self.ask = CompositeQueue::exogenous(out.book.q_a);
        }
        self.book = out.book;
        if self.bid.total() != self.book.q_b || self.ask.total() != self.book.q_a {
            return Err(MarketError::Replay(format!(
                "queue composition out of sync at {:?}",
                self.book
            )));
        }
        trades.retain(|t| t.buyer != t.seller);
        for t in &trades {
            let notional = t.price * t.size as i64;
            if let Owner::Agent(b) = t.buyer {
                let a = &mut self.accounts[b as usize];
                a.g -= notional;
                a.i += t.size as i32;
                a.bought += t.size;
                a.fills += 1;
            }
            if let Owner::Agent(s) = t.seller {
                let a = &mut self.accounts[s as usize];
                a.g += notional;
                a.i -= t.size as i32;
                a.sold += t.size;
                a.fills += 1;
            }
        }
        if !c.is_zero() {
            self.accounts[id as usize].j += 1;
        }
        let f_pre = futures_price(self.tick, &pre, s);
        for (k, (a, b)) in self.accounts.iter_mut().zip(&before).enumerate() {
            if self.hedged[k] && a.i != b.i {
                let di = (a.i - b.i) as f64;
                a.g_h += (a.g - b.g) as f64 * self.tick + di * f_pre - self.kappa_fut * di.abs();
            }
        }
        Ok(trades)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyRecord {
    pub actor: u8,
    pub intended: FlowAction,
    pub applied: FlowAction,
    pub regen: Option<RegenDraw>,
    pub before: BookState,
    pub after: BookState,
    pub trades: Vec<Trade>,
    pub accounts: Vec<Account>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    /// Spread value the agents saw this step.
    pub s: f64,
    pub layer: usize,
    pub apps: Vec<ApplyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub meta: LogMeta,
    pub steps: Vec<StepRecord>,
}

/// What replay needs: the applied bundles and the random draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayLog {
    pub meta: LogMeta,
    pub steps: Vec<ReplayStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub s: f64,
    pub layer: usize,
    /// (actor, intended, applied, regen) in execution order.
    pub apps: Vec<(u8, FlowAction, FlowAction, Option<RegenDraw>)>,
}

impl EventLog {
    pub fn to_replay(&self) -> ReplayLog {
        ReplayLog {
            meta: self.meta.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| ReplayStep {
                    s: s.s,
                    layer: s.layer,
                    apps: s
                        .apps
                        .iter()
                        .map(|a| (a.actor, a.intended, a.applied, a.regen))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn final_accounts(&self) -> Vec<Account> {
        self.steps
            .iter()
            .rev()
            .flat_map(|s| s.apps.last())
            .next()
            .map(|a| a.accounts.clone())
            .unwrap_or_else(|| vec![Account::default(); self.meta.agents.len()])
    }

    pub fn final_book(&self) -> BookState {
        self.steps
            .iter()
            .rev()
            .flat_map(|s| s.apps.last())
            .next()
            .map_or(self.meta.initial, |a| a.after)
    }
}

/// Re-executes the applied bundles and rebuilds the full log.
pub fn replay(r: &ReplayLog) -> Result<EventLog, MarketError> {
    let mut ex = Exchange::new(&r.meta);
    let mut steps = Vec::with_capacity(r.steps.len());
    for (k, st) in r.steps.iter().enumerate() {
        let mut apps = Vec::with_capacity(st.apps.len());
        for &(actor, intended, applied, regen) in &st.apps {
            let before = ex.book;
            let trades = ex.apply(actor, &applied, regen, st.s)?;
            apps.push(ApplyRecord {
                actor,
                intended,
                applied,
                regen,
                before,
                after: ex.book,
                trades,
                accounts: ex.accounts.clone(),
            });
        }
        steps.push(StepRecord {
            k,
            t: k as f64 * r.meta.dt,
            s: st.s,
            layer: st.layer,
            apps,
        });
    }
    Ok(EventLog {
        meta: r.meta.clone(),
        steps,
    })
}

/// Decision rule of one participant.
pub enum Brain<'a> {
    /// A solved policy, looked up by time to go. Before the policy's own
    /// horizon is reached the first slice is used.
    Policy {
        policy: &'a dyn PolicySource,
        steps: usize,
        dt: f64,
        limits: Limits,
    },
    Broker {
        ctrl: Box<dyn Controller + 'a>,
        limits: Limits,
    },
    Idle,
}

pub struct MarketAgent<'a> {
    pub meta: AgentMeta,
    pub brain: Brain<'a>,
}

impl MarketAgent<'_> {
    fn limits(&self, q_max: u32) -> Limits {
        match &self.brain {
            Brain::Policy { limits, .. } | Brain::Broker { limits, .. } => *limits,
            Brain::Idle => Limits {
                q_max,
                i_star: None,
                full_cancel_only: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub horizon: f64,
    pub dt: f64,
    pub tick: f64,
    pub q_max: u32,
    pub initial: BookState,
    pub regen_near: SizeTable,
    pub regen_far: SizeTable,
    /// Spread process; `None` keeps S at `s0`.
    pub ou: Option<OuParams>,
    pub spread_sim: SpreadSim,
    pub s0: f64,
    pub kappa_fut: f64,
}

impl MarketSpec {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Step index into a policy with `steps` slices of length `dt`, matched on
/// the time left.
pub fn policy_step(horizon: f64, t: f64, steps: usize, dt: f64) -> usize {
    let left = ((horizon - t) / dt).round() as i64;
    (steps as i64 - left).clamp(0, steps as i64 - 1) as usize
}

struct SpreadState<'a> {
    ou: Option<&'a OuParams>,
    tree: Option<OuTree>,
    mode: SpreadSim,
    s: f64,
    node: usize,
}

impl SpreadState<'_> {
    fn observed(&self) -> (f64, usize) {
        match self.ou {
            Some(ou) => (ou.grid[self.node], self.node),
            None => (self.s, 0),
        }
    }

    fn advance<R: rand::Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        let Some(ou) = self.ou else { return };
        match (self.mode, &self.tree) {
            (SpreadSim::Tree, Some(tree)) => {
                self.node = tree.step(self.node, rng);
                self.s = ou.grid[self.node];
            }
            _ => {
                self.s = ou_exact_step(ou, self.s, dt, rng);
                self.node = ou.left(self.s);
            }
        }
    }
}

/// Runs the shared-book market. Decisions use the snapshot taken after the
/// spread moves; applications go HFT, MM, then brokers in a random order.
pub fn run_market(
    spec: &MarketSpec,
    agents: &mut [MarketAgent<'_>],
    seed: u64,
) -> Result<EventLog, MarketError> {
    if agents.is_empty() || agents.len() > u8::MAX as usize {
        return Err(MarketError::Roster(format!("{} agents", agents.len())));
    }
    spec.initial.check(Some(spec.q_max))?;
    let meta = LogMeta {
        seed,
        horizon: spec.horizon,
        dt: spec.dt,
        tick: spec.tick,
        kappa_fut: spec.kappa_fut,
        q_max: spec.q_max,
        initial: spec.initial,
        agents: agents.iter().map(|a| a.meta.clone()).collect(),
    };
    let law = RegenLaw {
        move_prob: 1.0,
        near: spec.regen_near.clone(),
        far: spec.regen_far.clone(),
    };
    let mut ex = Exchange::new(&meta);
    let mut rng_spread = stream(seed, &[purpose::SPREAD]);
    let mut rng_regen = stream(seed, &[purpose::REGEN]);
    let mut rng_order = stream(seed, &[purpose::ORDERING]);
    let tree = match (&spec.ou, spec.spread_sim) {
        (Some(ou), SpreadSim::Tree) => {
            Some(crate::hft::ou_tree(ou, spec.dt).map_err(|e| MarketError::Roster(e.to_string()))?)
        }
        _ => None,
    };
    let mut spread = SpreadState {
        ou: spec.ou.as_ref(),
        node: spec.ou.as_ref().map_or(0, |o| o.nearest(spec.s0)),
        tree,
        mode: spec.spread_sim,
        s: spec.s0,
    };
    let fixed: Vec<u8> = {
        let mut v: Vec<u8> = (0..agents.len() as u8)
            .filter(|&k| agents[k as usize].meta.kind.priority() < 2)
            .collect();
        v.sort_by_key(|&k| agents[k as usize].meta.kind.priority());
        v
    };
    let brokers: Vec<u8> = (0..agents.len() as u8)
        .filter(|&k| agents[k as usize].meta.kind.priority() == 2)
        .collect();
    let mut steps = Vec::with_capacity(spec.steps());
    for k in 0..spec.steps() {
        let t = k as f64 * spec.dt;
        spread.advance(spec.dt, &mut rng_spread);
        let (s, layer) = spread.observed();
        let snapshot = ex.book;
        let intended: Vec<FlowAction> = agents
            .iter_mut()
            .enumerate()
            .map(|(id, a)| {
                let x = ex.view(id as u8);
                match &mut a.brain {
                    Brain::Policy {
                        policy, steps, dt, ..
                    } => {
                        let st = policy_step(spec.horizon, t, *steps, *dt);
                        let l = if a.meta.kind == AgentKind::Hft {
                            layer
                        } else {
                            0
                        };
                        policy
                            .action(st, l, &snapshot, &x)
                            .unwrap_or(FlowAction::ZERO)
                    }
                    Brain::Broker { ctrl, .. } => ctrl.decide(t, &snapshot, &x),
                    Brain::Idle => FlowAction::ZERO,
                }
            })
            .collect();
        let mut order = fixed.clone();
        let mut b = brokers.clone();
        b.shuffle(&mut rng_order);
        order.extend(b);
        let mut apps = Vec::with_capacity(order.len());
        for &id in &order {
            let a = &agents[id as usize];
            let x = ex.view(id);
            let applied = clip_action(&ex.book, &x, &intended[id as usize], &a.limits(spec.q_max));
            let regen = ex.draw_regen(&applied, &law, &mut rng_regen);
            let before = ex.book;
            let trades = ex.apply(id, &applied, regen, s)?;
            apps.push(ApplyRecord {
                actor: id,
                intended: intended[id as usize],
                applied,
                regen,
                before,
                after: ex.book,
                trades,
                accounts: ex.accounts.clone(),
            });
        }
        let volume: u32 = apps.iter().flat_map(|a| &a.trades).map(|t| t.size).sum();
        for (id, a) in agents.iter_mut().enumerate() {
            if let Brain::Broker { ctrl, .. } = &mut a.brain {
                let me = Owner::Agent(id as u8);
                let own: u32 = apps
                    .iter()
                    .flat_map(|a| &a.trades)
                    .filter(|t| t.buyer == me || t.seller == me)
                    .map(|t| t.size)
                    .sum();
                ctrl.observe(volume - own);
            }
        }
        steps.push(StepRecord {
            k,
            t,
            s,
            layer,
            apps,
        });
    }
    Ok(EventLog { meta, steps })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentSummary {
    pub name: String,
    pub kind: String,
    pub final_inventory: i32,
    /// Currency.
    pub cash: f64,
    /// Marked-to-liquidation gain for market makers and the hedged gain for
    /// the HFT; cash plus inventory at mid for brokers.
    pub gain: f64,
    pub fills: u32,
    pub orders: u32,
    pub bought: u32,
    pub sold: u32,
    pub avg_price: Option<f64>,
    pub market_vwap: Option<f64>,
    pub rel_error_pct: Option<f64>,
    pub finished_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarketSummary {
    pub steps: usize,
    pub trades: usize,
    pub volume: u64,
    pub price_moves: usize,
    pub mid_first: f64,
    pub mid_last: f64,
    pub mid_min: f64,
    pub mid_max: f64,
    pub agents: Vec<AgentSummary>,
}

pub fn summarize(log: &EventLog) -> MarketSummary {
    let meta = &log.meta;
    let tick = meta.tick;
    let n = meta.agents.len();
    let mid = |b: &BookState| b.mid2() as f64 * 0.5 * tick;
    let mut out = MarketSummary {
        steps: log.steps.len(),
        mid_first: mid(&meta.initial),
        mid_last: mid(&meta.initial),
        mid_min: mid(&meta.initial),
        mid_max: mid(&meta.initial),
        ..Default::default()
    };
    // Market tape frozen per broker when it completes.
    let mut tape = (0.0f64, 0.0f64);
    let mut frozen: Vec<Option<(f64, f64, f64)>> = vec![None; n];
    let mut own = vec![(0.0f64, 0.0f64); n];
    let mut last_book = meta.initial;
    for st in &log.steps {
        for a in &st.apps {
            for t in &a.trades {
                out.trades += 1;
                out.volume += t.size as u64;
                let px = t.price as f64 * tick;
                tape.0 += px * t.size as f64;
                tape.1 += t.size as f64;
                for o in [t.buyer, t.seller] {
                    if let Owner::Agent(k) = o {
                        own[k as usize].0 += px * t.size as f64;
                        own[k as usize].1 += t.size as f64;
                    }
                }
            }
            if (a.after.p_b, a.after.p_a) != (a.before.p_b, a.before.p_a) {
                out.price_moves += 1;
            }
            let m = mid(&a.after);
            out.mid_min = out.mid_min.min(m);
            out.mid_max = out.mid_max.max(m);
            out.mid_last = m;
            last_book = a.after;
            for (k, am) in meta.agents.iter().enumerate() {
                if let (Some(target), None) = (am.target, frozen[k]) {
                    let traded =
                        (a.accounts[k].bought as i64 - a.accounts[k].sold as i64).unsigned_abs();
                    if traded >= target as u64 {
                        frozen[k] = Some((tape.0, tape.1, st.t + meta.dt));
                    }
                }
            }
        }
    }
    let accounts = log.final_accounts();
    let s_last = log.steps.last().map_or(0.0, |s| s.s);
    for (k, am) in meta.agents.iter().enumerate() {
        let a = accounts[k];
        let x = AgentState {
            g: a.g,
            i: a.i,
            j: a.j,
            ..AgentState::flat()
        };
        let gain = match am.kind {
            AgentKind::Mm => crate::mm::liquidation_value(tick, &last_book, &x),
            AgentKind::Hft => {
                let stock =
                    crate::mm::liquidation_value(tick, &last_book, &AgentState { g: 0, ..x });
                let i = a.i as f64;
                a.g_h + stock
                    - i * futures_price(tick, &last_book, s_last)
                    - meta.kappa_fut * i.abs()
            }
            _ => a.g as f64 * tick + a.i as f64 * mid(&last_book),
        };
        let avg = (own[k].1 > 0.0).then(|| own[k].0 / own[k].1);
        let (mkt, finished_at) = match frozen[k] {
            Some((w, v, t)) => ((v > 0.0).then(|| w / v), Some(t)),
            None => ((tape.1 > 0.0).then(|| tape.0 / tape.1), None),
        };
        let is_broker = am.target.is_some();
        let rel = match (avg, mkt) {
            (Some(p), Some(m)) if is_broker => Some(100.0 * (p - m) / m),
            _ => None,
        };
        out.agents.push(AgentSummary {
            name: am.name.clone(),
            kind: am.kind.label(),
            final_inventory: a.i,
            cash: a.g as f64 * tick,
            gain,
            fills: a.fills,
            orders: a.j,
            bought: a.bought,
            sold: a.sold,
            avg_price: if is_broker { avg } else { None },
            market_vwap: if is_broker { mkt } else { None },
            rel_error_pct: rel,
            finished_at,
        });
    }
    out
}

/// Flat key=value report.
pub fn write_summary(w: &mut impl Write, header: &str, s: &MarketSummary) -> std::io::Result<()> {
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    let opt = |v: Option<f64>| v.map_or("none".to_string(), |v| format!("{v:.6}"));
    kv.insert("market.steps".into(), s.steps.to_string());
    kv.insert("market.trades".into(), s.trades.to_string());
    kv.insert("market.volume".into(), s.volume.to_string());
    kv.insert("market.price_moves".into(), s.price_moves.to_string());
    kv.insert("market.mid_first".into(), format!("{:.4}", s.mid_first));
    kv.insert("market.mid_last".into(), format!("{:.4}", s.mid_last));
    kv.insert("market.mid_min".into(), format!("{:.4}", s.mid_min));
    kv.insert("market.mid_max".into(), format!("{:.4}", s.mid_max));
    kv.insert("market.agents".into(), s.agents.len().to_string());
    for (k, a) in s.agents.iter().enumerate() {
        let p = format!("agent.{k}");
        kv.insert(format!("{p}.name"), a.name.clone());
        kv.insert(format!("{p}.kind"), a.kind.clone());
        kv.insert(
            format!("{p}.final_inventory"),
            a.final_inventory.to_string(),
        );
        kv.insert(format!("{p}.cash"), format!("{:.6}", a.cash));
        kv.insert(format!("{p}.gain"), format!("{:.6}", a.gain));
        kv.insert(format!("{p}.fills"), a.fills.to_string());
        kv.insert(format!("{p}.orders"), a.orders.to_string());
        kv.insert(format!("{p}.bought"), a.bought.to_string());
        kv.insert(format!("{p}.sold"), a.sold.to_string());
        kv.insert(format!("{p}.avg_price"), opt(a.avg_price));
        kv.insert(format!("{p}.market_vwap"), opt(a.market_vwap));
        kv.insert(format!("{p}.rel_error_pct"), opt(a.rel_error_pct));
        kv.insert(format!("{p}.finished_at"), opt(a.finished_at));
    }
    writeln!(w, "{header}")?;
    for (k, v) in kv {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}

/// One row per application: step, actor, intended and applied bundles, the
/// book around it, the spread and every agent's inventory and cash.
pub fn write_log_csv(w: &mut impl Write, header: &str, log: &EventLog) -> std::io::Result<()> {
    writeln!(w, "{header}")?;
    let mut cols = vec![
        "step", "t", "actor", "kind", "intended", "applied", "regen", "p_b0", "p_a0", "q_b0",
        "q_a0", "p_b1", "p_a1", "q_b1", "q_a1", "s", "F", "traded",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    for k in 0..log.meta.agents.len() {
        cols.push(format!("i_{k}"));
        cols.push(format!("cash_{k}"));
    }
    writeln!(w, "{}", cols.join(","))?;
    let tick = log.meta.tick;
    let code = |c: &FlowAction| {
        if c.is_zero() {
            "none".to_string()
        } else {
            c.code()
        }
    };
    for st in &log.steps {
        for a in &st.apps {
            let regen = a.regen.map_or("none".to_string(), |r| {
                format!("{}:{}:{}", r.eps, r.eps_b, r.eps_a)
            });
            let traded: u32 = a.trades.iter().map(|t| t.size).sum();
            write!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{}",
                st.k,
                st.t,
                a.actor,
                log.meta.agents[a.actor as usize].kind.label(),
                code(&a.intended),
                code(&a.applied),
                regen,
                a.before.p_b,
                a.before.p_a,
                a.before.q_b,
                a.before.q_a,
                a.after.p_b,
                a.after.p_a,
                a.after.q_b,
                a.after.q_a,
                st.s,
                futures_price(tick, &a.after, st.s),
                traded
            )?;
            for acc in &a.accounts {
                write!(w, ",{},{:.4}", acc.i, acc.g as f64 * tick)?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Per-agent rows for one participant: the book right after its own
/// application and after everyone has played, as in the single-agent path
/// files.
pub fn write_agent_csv(
    w: &mut impl Write,
    header: &str,
    log: &EventLog,
    id: u8,
) -> std::io::Result<()> {
    writeln!(w, "{header}")?;
    writeln!(
        w,
        "t,applied,p_b_own,p_a_own,q_b_own,q_a_own,n_b,n_a,p_b_all,p_a_all,q_b_all,q_a_all,inventory,cash,hedged_cash,s"
    )?;
    let tick = log.meta.tick;
    let mut ex = Exchange::new(&log.meta);
    for st in &log.steps {
        let mut own = None;
        for a in &st.apps {
            ex.apply(a.actor, &a.applied, a.regen, st.s)
                .map_err(std::io::Error::other)?;
            if a.actor == id {
                own = Some((a.applied, ex.book, ex.view(id)));
            }
        }
        let (c, b, x) = own.unwrap_or((FlowAction::ZERO, ex.book, ex.view(id)));
        let acc = ex.accounts[id as usize];
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.4},{:.6},{:.6}",
            st.t + log.meta.dt,
            if c.is_zero() {
                "none".to_string()
            } else {
                c.code()
            },
            b.p_b,
            b.p_a,
            b.q_b,
            b.q_a,
            x.n_b,
            x.n_a,
            ex.book.p_b,
            ex.book.p_a,
            ex.book.q_b,
            ex.book.q_a,
            acc.i,
            acc.g as f64 * tick,
            acc.g_h,
            st.s
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_view_and_priority() {
        let mut q = CompositeQueue::exogenous(3);
        q.push_back(Owner::Agent(1), 2);
        q.push_back(Owner::Exo, 1);
        assert_eq!(q.view(1), (2, 3));
        assert_eq!(q.view(0), (0, 0));
        let fills = q.execute(4);
        assert_eq!(fills, vec![(Owner::Exo, 3), (Owner::Agent(1), 1)]);
        assert_eq!(q.view(1), (1, 0));
        q.cancel(1, 1);
        assert_eq!(q.slices, vec![(Owner::Exo, 1)]);
    }

    #[test]
    fn clip_aggressive_to_queue() {
        let book = BookState::new(100, 101, 4, 2);
        let lim = Limits {
            q_max: 12,
            i_star: None,
            full_cancel_only: false,
        };
        let c = FlowAction {
            a_a: 3,
            ..FlowAction::ZERO
        };
        assert_eq!(clip_action(&book, &AgentState::flat(), &c, &lim).a_a, 2);
    }

    #[test]
    fn broker_walks_through_mm_slice() {
        let meta = LogMeta {
            seed: 0,
            horizon: 1.0,
            dt: 1.0,
            tick: 0.01,
            kappa_fut: 0.0,
            q_max: 12,
            initial: BookState::new(1000, 1001, 5, 5),
            agents: vec![
                AgentMeta {
                    name: "mm".into(),
                    kind: AgentKind::Mm,
                    target: None,
                    hedged: false,
                },
                AgentMeta {
                    name: "ib".into(),
                    kind: AgentKind::Volume(Side::Buy),
                    target: Some(10),
                    hedged: false,
                },
            ],
        };
        let mut ex = Exchange::new(&meta);
        ex.ask = CompositeQueue {
            slices: vec![(Owner::Agent(0), 1), (Owner::Exo, 4)],
        };
        let trades = ex
            .apply(
                1,
                &FlowAction {
                    a_a: 2,
                    ..FlowAction::ZERO
                },
                None,
                0.0,
            )
            .unwrap();
        assert_eq!(trades.len(), 2);
        assert_eq!(ex.accounts[0].i, -1);
        assert_eq!(ex.accounts[0].g, 1001);
        assert_eq!(ex.accounts[1].i, 2);
        assert_eq!(ex.accounts[1].g, -2002);
    }

    #[test]
    fn policy_step_by_time_left() {
        assert_eq!(policy_step(300.0, 0.0, 118, 0.5), 0);
        assert_eq!(policy_step(300.0, 299.0, 118, 0.5), 116);
        assert_eq!(policy_step(59.0, 0.0, 118, 0.5), 0);
        assert_eq!(policy_step(59.0, 58.5, 118, 0.5), 117);
    }
}
