//! One-level book mechanics: admissible order bundles, the price/queue map,
//! and the agent's own and exogenous state maps.
//!
//! Prices are integer ticks, cash is integer ticks times units. The tick size
//! is only applied when values leave the crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BookError {
    #[error("invalid book {0:?}")]
    InvalidBook(BookState),
    #[error("state outside the agent domain: {0}")]
    OutsideDomain(String),
    #[error("action violates the order-bundle constraints: {0:?}")]
    Inadmissible(FlowAction),
    #[error("aggressive plus cancelled size exceeds the queue: {0:?}")]
    Oversized(FlowAction),
    #[error("event leaves the one-level model: {0}")]
    Unsupported(&'static str),
    #[error("regenerated queue size must be at least 1")]
    EmptyRegen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BookState {
    pub p_b: i64,
    pub p_a: i64,
    pub q_b: u32,
    pub q_a: u32,
}

impl BookState {
    pub fn new(p_b: i64, p_a: i64, q_b: u32, q_a: u32) -> Self {
        BookState { p_b, p_a, q_b, q_a }
    }

    pub fn spread(&self) -> i64 {
        self.p_a - self.p_b
    }

    /// Twice the mid price, in ticks (always an integer).
    pub fn mid2(&self) -> i64 {
        self.p_a + self.p_b
    }

    pub fn is_valid(&self) -> bool {
        matches!(self.spread(), 1 | 2) && self.q_b >= 1 && self.q_a >= 1
    }

    pub fn check(&self, q_max: Option<u32>) -> Result<(), BookError> {
        let capped = q_max.is_none_or(|m| self.q_b <= m && self.q_a <= m);
        if self.is_valid() && capped {
            Ok(())
        } else {
            Err(BookError::InvalidBook(*self))
        }
    }
}

/// (a_b, a_a, l_b, l_a, l_b_half, l_a_half, m_b, m_a). `a_b` hits the bid
/// (a sell), `a_a` lifts the ask (a buy).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct FlowAction {
    pub a_b: u32,
    pub a_a: u32,
    pub l_b: u32,
    pub l_a: u32,
    pub l_b_half: u32,
    pub l_a_half: u32,
    pub m_b: u32,
    pub m_a: u32,
}

impl FlowAction {
    pub const ZERO: FlowAction = FlowAction {
        a_b: 0,
        a_a: 0,
        l_b: 0,
        l_a: 0,
        l_b_half: 0,
        l_a_half: 0,
        m_b: 0,
        m_a: 0,
    };

    pub fn from_array(v: [u32; 8]) -> Self {
        FlowAction {
            a_b: v[0],
            a_a: v[1],
            l_b: v[2],
            l_a: v[3],
            l_b_half: v[4],
            l_a_half: v[5],
            m_b: v[6],
            m_a: v[7],
        }
    }

    pub fn to_array(&self) -> [u32; 8] {
        [
            self.a_b,
            self.a_a,
            self.l_b,
            self.l_a,
            self.l_b_half,
            self.l_a_half,
            self.m_b,
            self.m_a,
        ]
    }

    pub fn is_zero(&self) -> bool {
        *self == FlowAction::ZERO
    }

    /// Aggressive plus cancelled size on the bid.
    pub fn hat_b(&self) -> u32 {
        self.a_b + self.m_b
    }

    pub fn hat_a(&self) -> u32 {
        self.a_a + self.m_a
    }

    pub fn mirrored(&self) -> Self {
        FlowAction {
            a_b: self.a_a,
            a_a: self.a_b,
            l_b: self.l_a,
            l_a: self.l_b,
            l_b_half: self.l_a_half,
            l_a_half: self.l_b_half,
            m_b: self.m_a,
            m_a: self.m_b,
        }
    }

    /// Compact text form used in CSV files: eight values joined by '|'.
    pub fn code(&self) -> String {
        let v = self.to_array();
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}",
            v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegenDraw {
    pub eps: u8,
    pub eps_b: u32,
    pub eps_a: u32,
}

impl RegenDraw {
    /// Draw used when nothing regenerates; the fields are never read.
    pub const UNUSED: RegenDraw = RegenDraw {
        eps: 0,
        eps_b: 1,
        eps_a: 1,
    };

    pub fn mirrored(&self) -> Self {
        RegenDraw {
            eps: self.eps,
            eps_b: self.eps_a,
            eps_a: self.eps_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarketEvent {
    pub action: FlowAction,
    pub regen: RegenDraw,
}

impl MarketEvent {
    pub fn new(action: FlowAction, regen: RegenDraw) -> Self {
        MarketEvent { action, regen }
    }

    pub fn mirrored(&self) -> Self {
        MarketEvent {
            action: self.action.mirrored(),
            regen: self.regen.mirrored(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AgentState {
    /// Cash in ticks x units.
    pub g: i64,
    pub i: i32,
    pub n_b: u32,
    pub n_a: u32,
    pub b_b: u32,
    pub b_a: u32,
    pub j: u32,
}

impl AgentState {
    pub fn flat() -> Self {
        AgentState::default()
    }

    pub fn mirrored(&self) -> Self {
        AgentState {
            g: self.g,
            i: -self.i,
            n_b: self.n_a,
            n_a: self.n_b,
            b_b: self.b_a,
            b_a: self.b_b,
            j: self.j,
        }
    }
}

/// Bounds that shape the agent's admissible set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub i_star: i32,
    /// `None` means no bound on the number of actions.
    pub j_cap: Option<u32>,
    /// Per-order size cap for aggressive, limit and in-spread orders.
    pub max_order: u32,
    pub q_max: u32,
    pub full_cancel_only: bool,
}

impl Caps {
    /// Largest resting size an agent can hold on one side.
    pub fn max_resting(&self) -> u32 {
        self.max_order.min(2 * self.i_star.max(0) as u32)
    }
}

pub fn exe(a: u32, n: u32, b: u32) -> u32 {
    a.saturating_sub(b).min(n)
}

pub fn is_admissible_flow(c: &FlowAction) -> bool {
    let agg = c.a_b.max(c.a_a);
    if c.a_b > 0 && c.a_a > 0 {
        return false;
    }
    if agg >= 1 && (c.l_b > 0 || c.l_a > 0) {
        return false;
    }
    if agg.max(c.l_b) >= 1 && c.l_b_half > 0 {
        return false;
    }
    if agg.max(c.l_a) >= 1 && c.l_a_half > 0 {
        return false;
    }
    if agg.max(c.l_b).max(c.l_b_half) >= 1 && c.m_b > 0 {
        return false;
    }
    if agg.max(c.l_a).max(c.l_a_half) >= 1 && c.m_a > 0 {
        return false;
    }
    true
}

pub fn imbalance(book: &BookState) -> f64 {
    let (b, a) = (book.q_b as f64, book.q_a as f64);
    (b - a) / (b + a)
}

pub fn mirror(
    book: &BookState,
    x: &AgentState,
    c: &FlowAction,
) -> (BookState, AgentState, FlowAction) {
    (mirror_book(book), x.mirrored(), c.mirrored())
}

pub fn mirror_book(book: &BookState) -> BookState {
    BookState {
        p_b: -book.p_a,
        p_a: -book.p_b,
        q_b: book.q_a,
        q_a: book.q_b,
    }
}

/// Checks the D_Z constraints for the pair.
pub fn check_domain(book: &BookState, x: &AgentState, i_star: i32) -> Result<(), BookError> {
    let bad = |m: String| Err(BookError::OutsideDomain(m));
    if !book.is_valid() {
        return Err(BookError::InvalidBook(*book));
    }
    if x.i.abs() > i_star {
        return bad(format!("|i| = {} > I* = {}", x.i.abs(), i_star));
    }
    if x.n_b as i64 + x.i as i64 > i_star as i64 {
        return bad(format!("n_b + i = {} > I*", x.n_b as i64 + x.i as i64));
    }
    if x.i as i64 - (x.n_a as i64) < -(i_star as i64) {
        return bad(format!("i - n_a = {} < -I*", x.i as i64 - x.n_a as i64));
    }
    if x.b_b + x.n_b > book.q_b {
        return bad(format!(
            "b_b + n_b = {} > q_b = {}",
            x.b_b + x.n_b,
            book.q_b
        ));
    }
    if x.b_a + x.n_a > book.q_a {
        return bad(format!(
            "b_a + n_a = {} > q_a = {}",
            x.b_a + x.n_a,
            book.q_a
        ));
    }
    Ok(())
}

/// What happened to each side in a book transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BookOutcome {
    pub book: BookState,
    /// The side's queue was replaced by a regenerated one (depletion, with or
    /// without a price move, or dragged by the other side's move).
    pub regen_b: bool,
    pub regen_a: bool,
    /// A new queue was created inside the spread on that side.
    pub inside_b: bool,
    pub inside_a: bool,
}

/// Rejects bundles the one-level model cannot represent, even if they satisfy
/// the order-bundle constraints.
pub fn check_representable(book: &BookState, c: &FlowAction) -> Result<(), BookError> {
    if !is_admissible_flow(c) {
        return Err(BookError::Inadmissible(*c));
    }
    if c.hat_b() > book.q_b || c.hat_a() > book.q_a {
        return Err(BookError::Oversized(*c));
    }
    let dep_b = c.hat_b() == book.q_b;
    let dep_a = c.hat_a() == book.q_a;
    if dep_b && dep_a {
        return Err(BookError::Unsupported("both queues depleted at once"));
    }
    if (c.l_b_half > 0 || c.l_a_half > 0) && book.spread() != 2 {
        return Err(BookError::Unsupported(
            "in-spread limit with a one-tick spread",
        ));
    }
    if c.l_b_half > 0 && c.l_a_half > 0 {
        return Err(BookError::Unsupported("in-spread limits on both sides"));
    }
    if (c.l_b_half > 0 && dep_a) || (c.l_a_half > 0 && dep_b) {
        return Err(BookError::Unsupported("in-spread limit with a depletion"));
    }
    Ok(())
}

pub fn book_transition(book: &BookState, ev: &MarketEvent) -> Result<BookOutcome, BookError> {
    check_representable(book, &ev.action)?;
    let c = &ev.action;
    let r = &ev.regen;
    let dep_b = c.hat_b() == book.q_b;
    let dep_a = c.hat_a() == book.q_a;
    let two = book.spread() == 2;
    let moved = r.eps == 1;
    let mut dpb = (c.l_b_half > 0) as i64;
    let mut dpa = -((c.l_a_half > 0) as i64);
    if moved {
        dpb += -(dep_b as i64) + (two && dep_a) as i64;
        dpa += (dep_a as i64) - (two && dep_b) as i64;
    }
    // Regeneration happens on depletion, or when a depletion move drags the side.
    let regen_b = dep_b || (moved && two && dep_a);
    let regen_a = dep_a || (moved && two && dep_b);
    if (regen_b && r.eps_b == 0) || (regen_a && r.eps_a == 0) {
        return Err(BookError::EmptyRegen);
    }
    let q_b = if c.l_b_half > 0 {
        c.l_b_half
    } else if regen_b {
        r.eps_b
    } else {
        book.q_b + c.l_b - c.hat_b()
    };
    let q_a = if c.l_a_half > 0 {
        c.l_a_half
    } else if regen_a {
        r.eps_a
    } else {
        book.q_a + c.l_a - c.hat_a()
    };
    let out = BookState {
        p_b: book.p_b + dpb,
        p_a: book.p_a + dpa,
        q_b,
        q_a,
    };
    if !out.is_valid() {
        return Err(BookError::InvalidBook(out));
    }
    Ok(BookOutcome {
        book: out,
        regen_b,
        regen_a,
        inside_b: c.l_b_half > 0,
        inside_a: c.l_a_half > 0,
    })
}

pub fn apply_book_transition(book: &BookState, ev: &MarketEvent) -> Result<BookState, BookError> {
    book_transition(book, ev).map(|o| o.book)
}

fn clear_side(n: &mut u32, b: &mut u32) {
    *n = 0;
    *b = 0;
}

fn tidy(x: &mut AgentState) {
    if x.n_b == 0 {
        x.b_b = 0;
    }
    if x.n_a == 0 {
        x.b_a = 0;
    }
}

/// Own-order map for one side: (n', b') before regeneration resets.
fn own_side(n: u32, b: u32, q: u32, a: u32, l: u32, l_half: u32, m: u32) -> (u32, u32) {
    let ex = exe(a, n, b) as i64;
    let (n, b, q) = (n as i64, b as i64, q as i64);
    let n2 = n + (l as i64 - n).max(0) + l_half as i64 - m as i64 - ex;
    let mut b2 = b;
    if l != 0 {
        b2 += q - b;
    }
    if m as i64 == n {
        b2 -= b;
    }
    if a != 0 {
        b2 -= b.min(a as i64);
    }
    if l_half != 0 {
        b2 -= b;
    }
    debug_assert!(n2 >= 0 && b2 >= 0);
    (n2.max(0) as u32, b2.max(0) as u32)
}

/// Applies the agent's own bundle: the book moves and the agent's state
/// follows the own-order map. Residual orders on regenerated sides are dropped.
pub fn step_own(
    book: &BookState,
    x: &AgentState,
    ev: &MarketEvent,
) -> Result<(BookOutcome, AgentState), BookError> {
    let out = book_transition(book, ev)?;
    let c = &ev.action;
    let ex_b = exe(c.a_b, x.n_b, x.b_b);
    let ex_a = exe(c.a_a, x.n_a, x.b_a);
    let sold = (c.a_b - ex_b) as i64;
    let bought = (c.a_a - ex_a) as i64;
    let (n_b, b_b) = own_side(x.n_b, x.b_b, book.q_b, c.a_b, c.l_b, c.l_b_half, c.m_b);
    let (n_a, b_a) = own_side(x.n_a, x.b_a, book.q_a, c.a_a, c.l_a, c.l_a_half, c.m_a);
    let mut y = AgentState {
        g: x.g + sold * book.p_b - bought * book.p_a,
        i: x.i - sold as i32 + bought as i32,
        n_b,
        n_a,
        b_b,
        b_a,
        j: x.j + 1,
    };
    if out.regen_b {
        clear_side(&mut y.n_b, &mut y.b_b);
    }
    if out.regen_a {
        clear_side(&mut y.n_a, &mut y.b_a);
    }
    tidy(&mut y);
    Ok((out, y))
}

fn exo_side(n: u32, b: u32, q: u32, a: u32, m: u32) -> (u32, u32) {
    let ex = exe(a, n, b);
    let b2 = if m == 0 {
        b.saturating_sub(a)
    } else {
        let behind = q as i64 - b as i64 - n as i64;
        let eaten = (m as i64 - behind).max(0);
        (b as i64 - eaten).max(0) as u32
    };
    (n - ex, b2)
}

/// Applies an event from the rest of the market. Exogenous cancellations are
/// clipped so they never touch the agent's own size.
pub fn step_exogenous(
    book: &BookState,
    x: &AgentState,
    ev: &MarketEvent,
) -> Result<(BookOutcome, AgentState), BookError> {
    let mut ev = *ev;
    ev.action.m_b = ev.action.m_b.min(book.q_b.saturating_sub(x.n_b));
    ev.action.m_a = ev.action.m_a.min(book.q_a.saturating_sub(x.n_a));
    let out = book_transition(book, &ev)?;
    let c = &ev.action;
    let ex_b = exe(c.a_b, x.n_b, x.b_b);
    let ex_a = exe(c.a_a, x.n_a, x.b_a);
    let (n_b, b_b) = exo_side(x.n_b, x.b_b, book.q_b, c.a_b, c.m_b);
    let (n_a, b_a) = exo_side(x.n_a, x.b_a, book.q_a, c.a_a, c.m_a);
    let mut y = AgentState {
        g: x.g - ex_b as i64 * book.p_b + ex_a as i64 * book.p_a,
        i: x.i + ex_b as i32 - ex_a as i32,
        n_b,
        n_a,
        b_b,
        b_a,
        j: x.j,
    };
    if out.regen_b || out.inside_b {
        clear_side(&mut y.n_b, &mut y.b_b);
    }
    if out.regen_a || out.inside_a {
        clear_side(&mut y.n_a, &mut y.b_a);
    }
    tidy(&mut y);
    Ok((out, y))
}

pub fn apply_own_transition(
    book: &BookState,
    x: &AgentState,
    ev: &MarketEvent,
) -> Result<AgentState, BookError> {
    step_own(book, x, ev).map(|(_, y)| y)
}

pub fn apply_exogenous_transition(
    book: &BookState,
    x: &AgentState,
    ev: &MarketEvent,
) -> Result<AgentState, BookError> {
    step_exogenous(book, x, ev).map(|(_, y)| y)
}

/// Options for one side of a passive bundle: (limit, in-spread, cancel).
fn side_options(n: u32, l_max: u32, half_max: u32, full_cancel_only: bool) -> Vec<(u32, u32, u32)> {
    let mut v = vec![(0, 0, 0)];
    if n > 0 {
        if full_cancel_only {
            v.push((0, 0, n));
        } else {
            v.extend((1..=n).map(|m| (0, 0, m)));
        }
    }
    v.extend((1..=l_max).map(|l| (l, 0, 0)));
    v.extend((1..=half_max).map(|h| (0, h, 0)));
    v
}

/// Every nonzero admissible bundle at (book, x), in lexicographic order of
/// (a_b, a_a, l_b, l_a, l_b_half, l_a_half, m_b, m_a).
pub fn admissible_actions(
    book: &BookState,
    x: &AgentState,
    caps: &Caps,
) -> Result<Vec<FlowAction>, BookError> {
    check_domain(book, x, caps.i_star)?;
    if caps.j_cap.is_some_and(|jc| x.j >= jc) {
        return Ok(Vec::new());
    }
    let i_star = caps.i_star as i64;
    let i = x.i as i64;
    let clip = |v: i64| v.max(0) as u32;
    let ab_max = clip((i + i_star - x.n_a as i64).min(book.q_b as i64)).min(caps.max_order);
    let aa_max = clip((i_star - i - x.n_b as i64).min(book.q_a as i64)).min(caps.max_order);
    let two = book.spread() == 2;
    let room_b = caps.q_max.saturating_sub(book.q_b);
    let room_a = caps.q_max.saturating_sub(book.q_a);
    let (lb_max, lbh_max) = if x.n_b == 0 {
        let cap = clip(i_star - i).min(caps.max_order);
        (cap.min(room_b), if two { cap.min(caps.q_max) } else { 0 })
    } else {
        (0, 0)
    };
    let (la_max, lah_max) = if x.n_a == 0 {
        let cap = clip(i + i_star).min(caps.max_order);
        (cap.min(room_a), if two { cap.min(caps.q_max) } else { 0 })
    } else {
        (0, 0)
    };

    let mut out = Vec::new();
    for a in 1..=ab_max {
        out.push(FlowAction {
            a_b: a,
            ..FlowAction::ZERO
        });
    }
    for a in 1..=aa_max {
        out.push(FlowAction {
            a_a: a,
            ..FlowAction::ZERO
        });
    }
    let bid = side_options(x.n_b, lb_max, lbh_max, caps.full_cancel_only);
    let ask = side_options(x.n_a, la_max, lah_max, caps.full_cancel_only);
    for &(l_b, l_b_half, m_b) in &bid {
        for &(l_a, l_a_half, m_a) in &ask {
            let c = FlowAction {
                a_b: 0,
                a_a: 0,
                l_b,
                l_a,
                l_b_half,
                l_a_half,
                m_b,
                m_a,
            };
            if c.is_zero() || check_representable(book, &c).is_err() {
                continue;
            }
            out.push(c);
        }
    }
    out.sort_by_key(|c| c.to_array());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps() -> Caps {
        Caps {
            i_star: 3,
            j_cap: None,
            max_order: 3,
            q_max: 12,
            full_cancel_only: true,
        }
    }

    #[test]
    fn exe_examples() {
        assert_eq!(exe(0, 5, 2), 0);
        assert_eq!(exe(5, 3, 2), 3);
        assert_eq!(exe(2, 3, 4), 0);
    }

    #[test]
    fn admissible_flow_examples() {
        let both = FlowAction {
            a_b: 1,
            a_a: 1,
            ..FlowAction::ZERO
        };
        assert!(!is_admissible_flow(&both));
        assert!(is_admissible_flow(&FlowAction::ZERO));
        let limits = FlowAction {
            l_b: 2,
            l_a: 3,
            ..FlowAction::ZERO
        };
        assert!(is_admissible_flow(&limits));
        let cancel_with_limit = FlowAction {
            l_b: 1,
            m_b: 1,
            ..FlowAction::ZERO
        };
        assert!(!is_admissible_flow(&cancel_with_limit));
        let cancel_other_side = FlowAction {
            l_b: 1,
            m_a: 1,
            ..FlowAction::ZERO
        };
        assert!(is_admissible_flow(&cancel_other_side));
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance(&BookState::new(0, 1, 2, 2)), 0.0);
        assert_eq!(imbalance(&BookState::new(0, 1, 12, 4)), 0.5);
        assert_eq!(imbalance(&BookState::new(0, 1, 1, 3)), -0.5);
    }

    #[test]
    fn book_examples() {
        let book = BookState::new(0, 1, 2, 2);
        let ev = MarketEvent::new(
            FlowAction {
                a_a: 2,
                ..FlowAction::ZERO
            },
            RegenDraw {
                eps: 1,
                eps_b: 3,
                eps_a: 4,
            },
        );
        assert_eq!(
            apply_book_transition(&book, &ev).unwrap(),
            BookState::new(0, 2, 2, 4)
        );

        let wide = BookState::new(10, 12, 5, 7);
        let ev = MarketEvent::new(
            FlowAction {
                l_b_half: 3,
                ..FlowAction::ZERO
            },
            RegenDraw::UNUSED,
        );
        assert_eq!(
            apply_book_transition(&wide, &ev).unwrap(),
            BookState::new(11, 12, 3, 7)
        );

        let ev = MarketEvent::new(
            FlowAction::ZERO,
            RegenDraw {
                eps: 1,
                eps_b: 9,
                eps_a: 9,
            },
        );
        assert_eq!(apply_book_transition(&book, &ev).unwrap(), book);
    }

    #[test]
    fn depletion_without_move_regenerates_in_place() {
        let book = BookState::new(0, 1, 2, 5);
        let ev = MarketEvent::new(
            FlowAction {
                a_b: 2,
                ..FlowAction::ZERO
            },
            RegenDraw {
                eps: 0,
                eps_b: 3,
                eps_a: 1,
            },
        );
        assert_eq!(
            apply_book_transition(&book, &ev).unwrap(),
            BookState::new(0, 1, 3, 5)
        );
    }

    #[test]
    fn double_move_on_two_tick_spread() {
        let book = BookState::new(0, 2, 2, 5);
        let ev = MarketEvent::new(
            FlowAction {
                a_b: 2,
                ..FlowAction::ZERO
            },
            RegenDraw {
                eps: 1,
                eps_b: 10,
                eps_a: 2,
            },
        );
        let out = book_transition(&book, &ev).unwrap();
        assert_eq!(out.book, BookState::new(-1, 1, 10, 2));
        assert!(out.regen_b && out.regen_a);
    }

    #[test]
    fn own_examples() {
        let book = BookState::new(1000, 1001, 4, 4);
        let x = AgentState::flat();
        let ev = MarketEvent::new(
            FlowAction {
                a_a: 1,
                ..FlowAction::ZERO
            },
            RegenDraw::UNUSED,
        );
        let y = apply_own_transition(&book, &x, &ev).unwrap();
        assert_eq!((y.g, y.i, y.j), (-1001, 1, 1));

        let book = BookState::new(0, 1, 5, 5);
        let ev = MarketEvent::new(
            FlowAction {
                l_b: 2,
                ..FlowAction::ZERO
            },
            RegenDraw::UNUSED,
        );
        let y = apply_own_transition(&book, &x, &ev).unwrap();
        assert_eq!((y.n_b, y.b_b, y.g, y.i), (2, 5, 0, 0));

        let x = AgentState {
            n_b: 2,
            b_b: 1,
            ..AgentState::flat()
        };
        let ev = MarketEvent::new(
            FlowAction {
                m_b: 2,
                ..FlowAction::ZERO
            },
            RegenDraw::UNUSED,
        );
        let y = apply_own_transition(&book, &x, &ev).unwrap();
        assert_eq!((y.n_b, y.b_b), (0, 0));
    }

    #[test]
    fn exogenous_examples() {
        let book = BookState::new(100, 101, 5, 5);
        let x = AgentState {
            n_b: 2,
            b_b: 1,
            ..AgentState::flat()
        };
        let ev = MarketEvent::new(
            FlowAction {
                a_b: 2,
                ..FlowAction::ZERO
            },
            RegenDraw::UNUSED,
        );
        let y = apply_exogenous_transition(&book, &x, &ev).unwrap();
        assert_eq!((y.g, y.i, y.n_b, y.b_b), (-100, 1, 1, 0));

        let book = BookState::new(100, 101, 6, 5);
        let x = AgentState {
            n_b: 2,
            b_b: 3,
            ..AgentState::flat()
        };
        let ev = MarketEvent::new(
            FlowAction {
                m_b: 1,
                ..FlowAction::ZERO
            },
            RegenDraw::UNUSED,
        );
        let y = apply_exogenous_transition(&book, &x, &ev).unwrap();
        assert_eq!(y.b_b, 3);

        let ev = MarketEvent::new(FlowAction::ZERO, RegenDraw::UNUSED);
        assert_eq!(apply_exogenous_transition(&book, &x, &ev).unwrap(), x);
    }

    #[test]
    fn mirror_examples() {
        let book = BookState::new(0, 1, 3, 5);
        assert_eq!(mirror_book(&book), BookState::new(-1, 0, 5, 3));
        let c = FlowAction {
            a_b: 2,
            ..FlowAction::ZERO
        };
        assert_eq!(
            c.mirrored(),
            FlowAction {
                a_a: 2,
                ..FlowAction::ZERO
            }
        );
        let x = AgentState {
            g: 7,
            i: 2,
            n_b: 1,
            n_a: 0,
            b_b: 2,
            b_a: 0,
            j: 4,
        };
        let (b2, x2, c2) = mirror(&book, &x, &c);
        assert_eq!(mirror(&b2, &x2, &c2), (book, x, c));
    }

    #[test]
    fn admissible_examples() {
        let book = BookState::new(0, 2, 4, 4);
        let x = AgentState {
            j: 5,
            ..AgentState::flat()
        };
        let capped = Caps {
            j_cap: Some(5),
            ..caps()
        };
        assert!(admissible_actions(&book, &x, &capped).unwrap().is_empty());

        let x = AgentState {
            i: 3,
            ..AgentState::flat()
        };
        let acts = admissible_actions(&book, &x, &caps()).unwrap();
        assert!(acts.iter().all(|c| c.l_b == 0 && c.l_b_half == 0));
        assert!(!acts.is_empty());

        let tight = BookState::new(0, 1, 4, 4);
        let acts = admissible_actions(&tight, &AgentState::flat(), &caps()).unwrap();
        assert!(acts.iter().all(|c| c.l_b_half == 0 && c.l_a_half == 0));

        let mut sorted = acts.clone();
        sorted.sort_by_key(|c| c.to_array());
        assert_eq!(acts, sorted);
    }

    #[test]
    fn admissible_rejects_outside_domain() {
        let book = BookState::new(0, 1, 2, 2);
        let x = AgentState {
            n_b: 2,
            b_b: 1,
            ..AgentState::flat()
        };
        assert!(admissible_actions(&book, &x, &caps()).is_err());
    }
}
