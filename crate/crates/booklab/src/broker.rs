//! Institutional broker controllers: a participation-band Volume strategy and
//! a VWAP tracker that follows the continuous-time optimal inventory curve.
//!
//! Both are written for a buyer; a seller runs the same logic on the
//! mirrored book and mirrors the resulting action back.

use crate::book::{
    mirror_book, step_exogenous, step_own, AgentState, BookState, FlowAction, MarketEvent,
};
use crate::prior::{draw_weighted, enumerate_lambda, sample_event, KernelModel, Thinning};
use crate::vwap::VwapModel;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    fn frame(self, book: &BookState, x: &AgentState) -> (BookState, AgentState) {
        match self {
            Side::Buy => (*book, *x),
            Side::Sell => (mirror_book(book), x.mirrored()),
        }
    }

    fn unframe(self, c: FlowAction) -> FlowAction {
        match self {
            Side::Buy => c,
            Side::Sell => c.mirrored(),
        }
    }

    /// Inventory at the start: short the target for a buyer, long for a seller.
    pub fn initial_inventory(self, target: u32) -> i32 {
        match self {
            Side::Buy => -(target as i32),
            Side::Sell => target as i32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Active,
    Paused,
    CatchingUp,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeParams {
    /// Participation rate in (0, 1).
    pub f: f64,
    /// Band half-width in units.
    pub delta_i: f64,
    /// Units to trade.
    pub target: u32,
    /// Length of the re-estimation intervals, seconds.
    pub interval: f64,
    /// Assumed probability that a trade hits the bid.
    pub p_hat: f64,
    /// Largest single order.
    pub max_order: u32,
    pub q_max: u32,
}

impl Default for VolumeParams {
    fn default() -> Self {
        VolumeParams {
            f: 0.2,
            delta_i: 4.0,
            target: 250,
            interval: 60.0,
            p_hat: 0.5,
            max_order: 3,
            q_max: 12,
        }
    }
}

/// Resting size to hold at the bid: ceil(f / (1 - f) * q_b / p_hat).
pub fn resting_target(f: f64, q_b: u32, p_hat: f64) -> u32 {
    if f <= 0.0 {
        return 0;
    }
    ((f / (1.0 - f)) * q_b as f64 / p_hat - 1e-9)
        .ceil()
        .max(0.0) as u32
}

/// What a controller is compared against after an event, in units of
/// bought volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub delta_i: f64,
    pub lo: f64,
    pub hi: f64,
    /// Converts a distance in units of delta_i into the units the band rule
    /// is stated in (1 - f for the Volume rule).
    pub scale: f64,
}

impl Band {
    /// How far outside the band, in the rule's own units; <= 0 inside.
    pub fn excess(&self) -> f64 {
        (self.delta_i - self.hi).max(self.lo - self.delta_i) * self.scale
    }
}

pub trait Controller {
    fn decide(&mut self, t: f64, book: &BookState, x: &AgentState) -> FlowAction;
    /// Market volume traded by everyone else since the last call.
    fn observe(&mut self, other_volume: u32);
    fn band(&self, t: f64, x: &AgentState) -> Band;
    fn mode(&self) -> Mode;
    fn side(&self) -> Side;
    /// Units to trade in total.
    fn target(&self) -> u32;
    /// Units still to trade.
    fn remaining(&self, x: &AgentState) -> i64;
}

fn buy_frame_i(side: Side, x: &AgentState) -> i32 {
    match side {
        Side::Buy => x.i,
        Side::Sell => -x.i,
    }
}

/// Units bought (sold, for a seller) since the controller first saw `x`.
fn buy_frame_delta(side: Side, start: Option<i32>, x: &AgentState) -> i64 {
    start.map_or(0, |s| (buy_frame_i(side, x) - s) as i64)
}

/// Shared buy-side order logic once the band status is known.
#[allow(clippy::too_many_arguments)]
fn buy_action(
    remaining: i64,
    over: bool,
    deficit: i64,
    resting: u32,
    book: &BookState,
    x: &AgentState,
    max_order: u32,
    q_max: u32,
) -> (FlowAction, Mode) {
    if remaining <= 0 {
        let c = if x.n_b > 0 {
            FlowAction {
                m_b: x.n_b,
                ..FlowAction::ZERO
            }
        } else {
            FlowAction::ZERO
        };
        return (c, Mode::Done);
    }
    if over {
        let c = if x.n_b > 0 {
            FlowAction {
                m_b: x.n_b,
                ..FlowAction::ZERO
            }
        } else {
            FlowAction::ZERO
        };
        return (c, Mode::Paused);
    }
    if deficit > 0 {
        let room = (remaining - x.n_b as i64).max(0);
        let u = deficit.min(room).min(book.q_a as i64).min(max_order as i64);
        if u > 0 {
            return (
                FlowAction {
                    a_a: u as u32,
                    ..FlowAction::ZERO
                },
                Mode::CatchingUp,
            );
        }
        if x.n_b > 0 && book.q_a > 0 {
            // The resting order blocks the buy (it would overshoot the target
            // if both filled). Aggressive orders cannot carry a cancel, so
            // pull it now and buy on the next decision.
            return (
                FlowAction {
                    m_b: x.n_b,
                    ..FlowAction::ZERO
                },
                Mode::CatchingUp,
            );
        }
    }
    if x.n_b == 0 && resting > 0 {
        let l = (resting as i64)
            .min(max_order as i64)
            .min(remaining)
            .min(q_max.saturating_sub(book.q_b) as i64);
        if l > 0 {
            return (
                FlowAction {
                    l_b: l as u32,
                    ..FlowAction::ZERO
                },
                Mode::Active,
            );
        }
    }
    (FlowAction::ZERO, Mode::Active)
}

#[derive(Debug, Clone)]
pub struct VolumeController {
    pub p: VolumeParams,
    pub side: Side,
    /// Buy-frame inventory when first seen.
    i_start: Option<i32>,
    /// Volume traded by others since the start.
    pub other_volume: f64,
    interval: Option<usize>,
    resting: u32,
    mode: Mode,
}

impl VolumeController {
    pub fn new(p: VolumeParams, side: Side) -> Self {
        VolumeController {
            p,
            side,
            i_start: None,
            other_volume: 0.0,
            interval: None,
            resting: 0,
            mode: Mode::Active,
        }
    }

    fn delta(&self, x: &AgentState) -> i64 {
        buy_frame_delta(self.side, self.i_start, x)
    }

    /// Fixes the starting inventory instead of taking the first one seen.
    pub fn starting_at(mut self, i: i32) -> Self {
        self.i_start = Some(buy_frame_i(
            self.side,
            &AgentState {
                i,
                ..AgentState::flat()
            },
        ));
        self
    }
}

impl Controller for VolumeController {
    fn decide(&mut self, t: f64, book: &BookState, x: &AgentState) -> FlowAction {
        let (b, y) = self.side.frame(book, x);
        self.i_start.get_or_insert(y.i);
        let k = (t / self.p.interval + 1e-9).floor() as usize;
        if self.interval != Some(k) {
            self.interval = Some(k);
            self.resting = resting_target(self.p.f, b.q_b, self.p_hat());
        }
        let d = self.delta(x);
        let f = self.p.f;
        let lhs = d as f64 * (1.0 - f);
        let upper = f * self.other_volume + self.p.delta_i;
        let lower = f * self.other_volume - self.p.delta_i;
        let deficit = if lhs < lower {
            (lower / (1.0 - f) - d as f64 - 1e-9).ceil() as i64
        } else {
            0
        };
        let remaining = self.p.target as i64 - d;
        let (c, mode) = buy_action(
            remaining,
            lhs > upper,
            deficit,
            self.resting,
            &b,
            &y,
            self.p.max_order,
            self.p.q_max,
        );
        self.mode = mode;
        self.side.unframe(c)
    }

    fn observe(&mut self, other_volume: u32) {
        self.other_volume += other_volume as f64;
    }

    fn band(&self, _t: f64, x: &AgentState) -> Band {
        let f = self.p.f;
        Band {
            delta_i: self.delta(x) as f64,
            lo: (f * self.other_volume - self.p.delta_i) / (1.0 - f),
            hi: (f * self.other_volume + self.p.delta_i) / (1.0 - f),
            scale: 1.0 - f,
        }
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn side(&self) -> Side {
        self.side
    }

    fn target(&self) -> u32 {
        self.p.target
    }

    fn remaining(&self, x: &AgentState) -> i64 {
        self.p.target as i64 - self.delta(x)
    }
}

impl VolumeController {
    fn p_hat(&self) -> f64 {
        self.p.p_hat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VwapTrackParams {
    /// Outer band half-width around the target curve, units.
    pub delta_bar: f64,
    pub interval: f64,
    pub p_hat: f64,
    pub max_order: u32,
    pub q_max: u32,
}

impl Default for VwapTrackParams {
    fn default() -> Self {
        VwapTrackParams {
            delta_bar: 4.0,
            interval: 60.0,
            p_hat: 0.5,
            max_order: 3,
            q_max: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VwapController {
    pub model: VwapModel,
    pub p: VwapTrackParams,
    pub side: Side,
    target: u32,
    i_start: Option<i32>,
    pub other_volume: f64,
    interval: Option<usize>,
    resting: u32,
    /// Participation rate of the current interval.
    pub f_interval: f64,
    mode: Mode,
}

impl VwapController {
    pub fn new(model: VwapModel, p: VwapTrackParams, side: Side) -> Self {
        let target = model.inputs.i0.round() as u32;
        VwapController {
            model,
            p,
            side,
            target,
            i_start: None,
            other_volume: 0.0,
            interval: None,
            resting: 0,
            f_interval: 0.0,
            mode: Mode::Active,
        }
    }

    fn delta(&self, x: &AgentState) -> i64 {
        buy_frame_delta(self.side, self.i_start, x)
    }

    pub fn starting_at(mut self, i: i32) -> Self {
        self.i_start = Some(buy_frame_i(
            self.side,
            &AgentState {
                i,
                ..AgentState::flat()
            },
        ));
        self
    }

    /// Bought volume the target curve asks for at t.
    pub fn target_delta(&self, t: f64) -> f64 {
        self.model
            .target_inventory(t.min(self.model.inputs.horizon))
            + self.model.inputs.i0
    }
}

/// f = V / (V_market + V).
pub fn interval_rate(quota: f64, market: f64) -> f64 {
    if quota + market <= 0.0 {
        0.0
    } else {
        quota / (market + quota)
    }
}

impl Controller for VwapController {
    fn decide(&mut self, t: f64, book: &BookState, x: &AgentState) -> FlowAction {
        let (b, y) = self.side.frame(book, x);
        self.i_start.get_or_insert(y.i);
        let h = self.model.inputs.horizon;
        let k = (t / self.p.interval + 1e-9).floor() as usize;
        if self.interval != Some(k) {
            self.interval = Some(k);
            let (t0, t1) = (
                k as f64 * self.p.interval,
                ((k + 1) as f64 * self.p.interval).min(h),
            );
            let quota = if t0 < h {
                self.model.quota(t0, t1, y.i as f64)
            } else {
                0.0
            };
            let market = self.model.volume_between(t0.min(h), t1);
            self.f_interval = interval_rate(quota, market);
            self.resting = resting_target(self.f_interval, b.q_b, self.p.p_hat);
        }
        let d = self.delta(x) as f64;
        let goal = self.target_delta(t);
        let over = d > goal + self.p.delta_bar;
        let deficit = if d < goal - self.p.delta_bar {
            (goal - self.p.delta_bar - d - 1e-9).ceil() as i64
        } else {
            0
        };
        let remaining = self.target as i64 - d as i64;
        let (c, mode) = buy_action(
            remaining,
            over,
            deficit,
            self.resting,
            &b,
            &y,
            self.p.max_order,
            self.p.q_max,
        );
        self.mode = mode;
        self.side.unframe(c)
    }

    fn observe(&mut self, other_volume: u32) {
        self.other_volume += other_volume as f64;
    }

    fn band(&self, t: f64, x: &AgentState) -> Band {
        let goal = self.target_delta(t);
        Band {
            delta_i: self.delta(x) as f64,
            lo: goal - self.p.delta_bar,
            hi: goal + self.p.delta_bar,
            scale: 1.0,
        }
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn side(&self) -> Side {
        self.side
    }

    fn target(&self) -> u32 {
        self.target
    }

    fn remaining(&self, x: &AgentState) -> i64 {
        self.target as i64 - self.delta(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerRecord {
    pub t: f64,
    pub band: Band,
    pub other_volume: f64,
    pub action: FlowAction,
    pub mode: Mode,
    pub book: BookState,
    pub agent: AgentState,
    /// Broker's average execution price so far, currency.
    pub avg_price: Option<f64>,
    pub market_vwap: Option<f64>,
}

impl BrokerRecord {
    /// (avg - market) / market in percent.
    pub fn rel_error_pct(&self) -> Option<f64> {
        match (self.avg_price, self.market_vwap) {
            (Some(a), Some(m)) if m != 0.0 => Some(100.0 * (a - m) / m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerRun {
    pub records: Vec<BrokerRecord>,
    /// Time the target was reached, if it was.
    pub finished_at: Option<f64>,
    pub traded: i64,
    pub avg_price: Option<f64>,
    pub market_vwap: Option<f64>,
}

impl BrokerRun {
    /// Largest band excess over the records where the controller was still
    /// trading.
    pub fn max_band_excess(&self) -> f64 {
        self.records
            .iter()
            .filter(|r| r.mode != Mode::Done)
            .map(|r| r.band.excess())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn rel_error_pct(&self) -> Option<f64> {
        match (self.avg_price, self.market_vwap) {
            (Some(a), Some(m)) if m != 0.0 => Some(100.0 * (a - m) / m),
            _ => None,
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Tape {
    notional: f64,
    volume: f64,
}

impl Tape {
    fn add(&mut self, price: f64, size: u32) {
        self.notional += price * size as f64;
        self.volume += size as f64;
    }

    fn vwap(&self) -> Option<f64> {
        (self.volume > 0.0).then(|| self.notional / self.volume)
    }
}

/// Runs one broker alone against the exogenous flow until the target is
/// reached or the horizon ends.
#[allow(clippy::too_many_arguments)]
pub fn simulate_broker<R: Rng + ?Sized>(
    ctrl: &mut dyn Controller,
    km: &KernelModel,
    dt: f64,
    horizon: f64,
    tick: f64,
    book0: BookState,
    thinning: Thinning,
    rng: &mut R,
) -> Result<BrokerRun, crate::dp::DpError> {
    let target = ctrl.target();
    let mut x = AgentState {
        i: ctrl.side().initial_inventory(target),
        ..AgentState::flat()
    };
    let x0 = x;
    let mut book = book0;
    let mut market = Tape::default();
    let mut own = Tape::default();
    let mut records = Vec::new();
    let steps = (horizon / dt).round() as usize;
    let mut finished_at = None;
    let mut other_total = 0.0;
    let px = |p: i64| p as f64 * tick;
    for k in 0..steps {
        let t = k as f64 * dt;
        if ctrl.remaining(&x) <= 0 {
            finished_at = Some(t);
            break;
        }
        let c = ctrl.decide(t, &book, &x);
        if !c.is_zero() {
            let regen = draw_weighted(rng, &enumerate_lambda(km, &book, &c));
            let (out, y) = step_own(&book, &x, &MarketEvent::new(c, regen))?;
            let bought = c.a_a - crate::book::exe(c.a_a, x.n_a, x.b_a);
            let sold = c.a_b - crate::book::exe(c.a_b, x.n_b, x.b_b);
            market.add(px(book.p_a), bought);
            own.add(px(book.p_a), bought);
            market.add(px(book.p_b), sold);
            own.add(px(book.p_b), sold);
            book = out.book;
            x = y;
        }
        let mut other = 0;
        if let Some((_, ev)) = sample_event(km, &book, dt, thinning, rng)? {
            let (out, y) = step_exogenous(&book, &x, &ev)?;
            let a = &ev.action;
            let fill_b = crate::book::exe(a.a_b, x.n_b, x.b_b);
            let fill_a = crate::book::exe(a.a_a, x.n_a, x.b_a);
            market.add(px(book.p_b), a.a_b);
            market.add(px(book.p_a), a.a_a);
            own.add(px(book.p_b), fill_b);
            own.add(px(book.p_a), fill_a);
            other = a.a_b + a.a_a - fill_b - fill_a;
            book = out.book;
            x = y;
        }
        ctrl.observe(other);
        other_total += other as f64;
        let t_next = (k + 1) as f64 * dt;
        records.push(BrokerRecord {
            t: t_next,
            band: ctrl.band(t_next, &x),
            other_volume: other_total,
            action: c,
            mode: ctrl.mode(),
            book,
            agent: x,
            avg_price: own.vwap(),
            market_vwap: market.vwap(),
        });
    }
    if finished_at.is_none() && ctrl.remaining(&x) <= 0 {
        finished_at = Some(steps as f64 * dt);
    }
    Ok(BrokerRun {
        records,
        finished_at,
        traded: (x.i - x0.i).abs() as i64,
        avg_price: own.vwap(),
        market_vwap: market.vwap(),
    })
}

/// Per-run CSV: t, delta_i, band_lo, band_hi, action, avg_price,
/// market_vwap, rel_error_pct.
pub fn write_broker_csv(w: &mut impl Write, header: &str, run: &BrokerRun) -> std::io::Result<()> {
    writeln!(w, "{header}")?;
    writeln!(
        w,
        "t,delta_i,band_lo,band_hi,action,mode,p_b,p_a,q_b,q_a,avg_price,market_vwap,rel_error_pct"
    )?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for r in &run.records {
        writeln!(
            w,
            "{},{},{:.4},{:.4},{},{:?},{},{},{},{},{},{},{}",
            r.t,
            r.band.delta_i,
            r.band.lo,
            r.band.hi,
            if r.action.is_zero() {
                "none".to_string()
            } else {
                r.action.code()
            },
            r.mode,
            r.book.p_b,
            r.book.p_a,
            r.book.q_b,
            r.book.q_a,
            opt(r.avg_price),
            opt(r.market_vwap),
            opt(r.rel_error_pct())
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_example_stays_active() {
        // f = 0.2, delta I = 10, other volume 30, delta 4: 8 <= 10, inside.
        let mut c = VolumeController::new(VolumeParams::default(), Side::Buy).starting_at(-250);
        c.observe(30);
        let x = AgentState {
            i: -240,
            ..AgentState::flat()
        };
        let b = c.band(0.0, &x);
        assert_eq!(b.delta_i, 10.0);
        assert!(b.delta_i * 0.8 <= 0.2 * 30.0 + 4.0);
        assert!(b.delta_i * 0.8 >= 0.2 * 30.0 - 4.0);
        c.decide(0.0, &BookState::new(100, 101, 5, 5), &x);
        assert_eq!(c.mode(), Mode::Active);
    }

    #[test]
    fn resting_target_rounds_up() {
        assert_eq!(resting_target(0.2, 5, 0.5), 3);
        assert_eq!(resting_target(0.2, 4, 0.5), 2);
        assert_eq!(interval_rate(6.0, 24.0), 0.2);
    }

    #[test]
    fn done_means_no_orders() {
        let mut c = VolumeController::new(VolumeParams::default(), Side::Buy).starting_at(-250);
        let x = AgentState {
            i: 0,
            ..AgentState::flat()
        };
        for t in 0..5 {
            assert!(c
                .decide(t as f64, &BookState::new(100, 101, 5, 5), &x)
                .is_zero());
        }
        assert_eq!(c.mode(), Mode::Done);
    }

    #[test]
    fn deficit_triggers_aggressive_buy() {
        let mut c = VolumeController::new(VolumeParams::default(), Side::Buy);
        c.observe(100);
        // lower edge: (0.2 * 100 - 4) / 0.8 = 20 units; we have 0.
        let x = AgentState {
            i: -250,
            ..AgentState::flat()
        };
        let a = c.decide(0.0, &BookState::new(100, 101, 5, 5), &x);
        assert_eq!(a.a_a, 3);
    }

    #[test]
    fn seller_mirrors_buyer() {
        let p = VolumeParams::default();
        let mut buy = VolumeController::new(p, Side::Buy);
        let mut sell = VolumeController::new(p, Side::Sell);
        let book = BookState::new(100, 101, 5, 7);
        let xb = AgentState {
            i: -250,
            ..AgentState::flat()
        };
        for v in [0, 40, 3, 90] {
            buy.observe(v);
            sell.observe(v);
            let a = buy.decide(1.0, &mirror_book(&book), &xb);
            let b = sell.decide(1.0, &book, &xb.mirrored());
            assert_eq!(a.mirrored(), b);
        }
    }
}
