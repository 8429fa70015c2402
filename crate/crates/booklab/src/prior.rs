//! Exogenous order flow: finite kernels for event intensities and for queue
//! regeneration, with the imbalance-driven default calibration.

use crate::book::{imbalance, BookState, FlowAction, RegenDraw};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("probability table `{0}` must have nonnegative entries summing to 1 (sum = {1})")]
    BadTable(&'static str, f64),
    #[error("parameter `{0}` out of range: {1}")]
    BadParam(&'static str, f64),
    #[error("book {0:?} outside the kernel domain")]
    OutsideDomain(BookState),
}

/// Discrete law on queue or order sizes.
pub type SizeTable = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub limit_rate: f64,
    pub market_rate: f64,
    /// Slope of the side probabilities in the imbalance: 0.5 + slope * Imb.
    pub imb_slope: f64,
    pub limit_sizes: SizeTable,
    /// Market size centre is ceil((base + slope * Imb) * Q) at the ask.
    pub market_size_base: f64,
    pub market_size_slope: f64,
    /// Probability of the centre size; the rest splits evenly on centre +/- 1.
    pub market_centre_prob: f64,
    pub price_move_prob: f64,
    pub regen_near: SizeTable,
    pub regen_far: SizeTable,
    pub inspread_prob: f64,
    /// Total rate of exogenous cancellations (split evenly between sides).
    pub cancel_rate: f64,
    pub cancel_sizes: SizeTable,
    pub q_max: u32,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            limit_rate: 0.6,
            market_rate: 0.6,
            imb_slope: 0.35,
            limit_sizes: vec![(1, 0.35), (2, 0.55), (3, 0.10)],
            market_size_base: 0.7,
            market_size_slope: 0.3,
            market_centre_prob: 0.6,
            price_move_prob: 0.75,
            regen_near: vec![(2, 0.60), (1, 0.25), (3, 0.15)],
            regen_far: vec![(10, 0.60), (5, 0.25), (12, 0.15)],
            inspread_prob: 0.9,
            cancel_rate: 0.0,
            cancel_sizes: vec![(1, 1.0)],
            q_max: 12,
        }
    }
}

fn check_table(name: &'static str, t: &SizeTable) -> Result<(), PriorError> {
    let sum: f64 = t.iter().map(|e| e.1).sum();
    if t.iter().any(|e| e.1 < 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(PriorError::BadTable(name, sum));
    }
    Ok(())
}

fn check_prob(name: &'static str, p: f64) -> Result<(), PriorError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(PriorError::BadParam(name, p))
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), PriorError> {
        check_table("limit_sizes", &self.limit_sizes)?;
        check_table("regen_near", &self.regen_near)?;
        check_table("regen_far", &self.regen_far)?;
        check_table("cancel_sizes", &self.cancel_sizes)?;
        check_prob("price_move_prob", self.price_move_prob)?;
        check_prob("inspread_prob", self.inspread_prob)?;
        check_prob("market_centre_prob", self.market_centre_prob)?;
        for (name, v) in [
            ("limit_rate", self.limit_rate),
            ("market_rate", self.market_rate),
            ("cancel_rate", self.cancel_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PriorError::BadParam(name, v));
            }
        }
        if self.q_max == 0 {
            return Err(PriorError::BadParam("q_max", 0.0));
        }
        if self
            .regen_near
            .iter()
            .chain(&self.regen_far)
            .any(|e| e.0 == 0)
        {
            return Err(PriorError::BadParam("regenerated size", 0.0));
        }
        Ok(())
    }
}

/// Label of a kernel entry, kept so samplers and statistics can tell sides
/// apart even when the clipped action is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    LimitBid,
    LimitAsk,
    InsideBid,
    InsideAsk,
    /// Aggressive sell hitting the bid.
    MarketBid,
    /// Aggressive buy lifting the ask.
    MarketAsk,
    CancelBid,
    CancelAsk,
    Other,
}

impl EventKind {
    pub fn mirrored(self) -> Self {
        use EventKind::*;
        match self {
            LimitBid => LimitAsk,
            LimitAsk => LimitBid,
            InsideBid => InsideAsk,
            InsideAsk => InsideBid,
            MarketBid => MarketAsk,
            MarketAsk => MarketBid,
            CancelBid => CancelAsk,
            CancelAsk => CancelBid,
            Other => Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub kind: EventKind,
    pub action: FlowAction,
    pub rate: f64,
}

/// Regeneration law: price-move probability on depletion plus the size
/// tables for queues at an unchanged or inward-moved price (near) and for
/// queues discovered by an outward move (far).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenLaw {
    pub move_prob: f64,
    pub near: SizeTable,
    pub far: SizeTable,
}

fn clip_table(t: &SizeTable, q_max: u32) -> SizeTable {
    let mut m: BTreeMap<u32, f64> = BTreeMap::new();
    for &(v, p) in t {
        *m.entry(v.min(q_max)).or_default() += p;
    }
    m.into_iter().filter(|e| e.1 > 0.0).collect()
}

impl RegenLaw {
    pub fn clipped(&self, q_max: u32) -> RegenLaw {
        RegenLaw {
            move_prob: self.move_prob,
            near: clip_table(&self.near, q_max),
            far: clip_table(&self.far, q_max),
        }
    }
}

/// Kernel over all books with spread in {1,2} and queues in 1..=q_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub q_max: u32,
    pub regen: RegenLaw,
    beta: Vec<Vec<KernelEntry>>,
    gamma: Vec<f64>,
}

impl KernelModel {
    fn slot(q_max: u32, spread: i64, q_b: u32, q_a: u32) -> usize {
        let q = q_max as usize;
        ((spread as usize - 1) * q + (q_b as usize - 1)) * q + (q_a as usize - 1)
    }

    fn in_domain(&self, book: &BookState) -> bool {
        book.is_valid() && book.q_b <= self.q_max && book.q_a <= self.q_max
    }

    /// Builds a kernel from an arbitrary intensity function. Entries with the
    /// same kind and action are merged; the function must only depend on the
    /// spread and the queues.
    pub fn from_fn<F>(q_max: u32, regen: RegenLaw, mut f: F) -> Self
    where
        F: FnMut(&BookState) -> Vec<KernelEntry>,
    {
        let regen = regen.clipped(q_max);
        let n = 2 * (q_max as usize).pow(2);
        let mut beta = vec![Vec::new(); n];
        let mut gamma = vec![0.0; n];
        for spread in 1..=2i64 {
            for q_b in 1..=q_max {
                for q_a in 1..=q_max {
                    let book = BookState::new(0, spread, q_b, q_a);
                    let mut merged: BTreeMap<(EventKind, [u32; 8]), f64> = BTreeMap::new();
                    for e in f(&book) {
                        if e.rate > 0.0 {
                            *merged.entry((e.kind, e.action.to_array())).or_default() += e.rate;
                        }
                    }
                    let entries: Vec<KernelEntry> = merged
                        .into_iter()
                        .map(|((kind, a), rate)| KernelEntry {
                            kind,
                            action: FlowAction::from_array(a),
                            rate,
                        })
                        .collect();
                    let k = Self::slot(q_max, spread, q_b, q_a);
                    gamma[k] = entries.iter().map(|e| e.rate).sum();
                    beta[k] = entries;
                }
            }
        }
        KernelModel {
            q_max,
            regen,
            beta,
            gamma,
        }
    }

    pub fn entries(&self, book: &BookState) -> Result<&[KernelEntry], PriorError> {
        if !self.in_domain(book) {
            return Err(PriorError::OutsideDomain(*book));
        }
        Ok(&self.beta[Self::slot(self.q_max, book.spread(), book.q_b, book.q_a)])
    }

    pub fn gamma(&self, book: &BookState) -> Result<f64, PriorError> {
        if !self.in_domain(book) {
            return Err(PriorError::OutsideDomain(*book));
        }
        Ok(self.gamma[Self::slot(self.q_max, book.spread(), book.q_b, book.q_a)])
    }

    pub fn max_gamma(&self) -> f64 {
        self.gamma.iter().cloned().fold(0.0, f64::max)
    }

    /// True if swapping the sides of every book swaps the sides of its
    /// events at the same rates. The regeneration law is shared by both
    /// sides, so only the intensities can break the symmetry.
    pub fn is_mirror_symmetric(&self) -> bool {
        let key = |e: &KernelEntry| (e.kind, e.action.to_array());
        for spread in 1..=2i64 {
            for q_b in 1..=self.q_max {
                for q_a in 1..=self.q_max {
                    let k = Self::slot(self.q_max, spread, q_b, q_a);
                    let m = Self::slot(self.q_max, spread, q_a, q_b);
                    let mut a: Vec<_> = self.beta[k]
                        .iter()
                        .map(|e| KernelEntry {
                            kind: e.kind.mirrored(),
                            action: e.action.mirrored(),
                            rate: e.rate,
                        })
                        .collect();
                    let mut b = self.beta[m].clone();
                    a.sort_by_key(key);
                    b.sort_by_key(key);
                    let same = a.len() == b.len()
                        && a.iter().zip(&b).all(|(x, y)| {
                            key(x) == key(y)
                                && (x.rate - y.rate).abs() <= 1e-12 * x.rate.abs().max(1.0)
                        });
                    if !same {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Centre of the market-order size law, ceil(frac * q) clipped to [0, q].
/// A small tolerance keeps products such as 0.7 * 10 from rounding up.
fn market_centre(frac: f64, q: u32) -> i64 {
    let x = frac * q as f64;
    ((x - 1e-9).ceil() as i64).clamp(0, q as i64)
}

fn market_sizes(cfg: &PriorConfig, frac: f64, q: u32) -> Vec<(u32, f64)> {
    let c = market_centre(frac, q);
    let side = (1.0 - cfg.market_centre_prob) / 2.0;
    [(c - 1, side), (c, cfg.market_centre_prob), (c + 1, side)]
        .iter()
        .map(|&(s, p)| (s.clamp(0, q as i64) as u32, p))
        .collect()
}

pub fn build_default_kernel(cfg: &PriorConfig) -> Result<KernelModel, PriorError> {
    cfg.validate()?;
    let regen = RegenLaw {
        move_prob: cfg.price_move_prob,
        near: cfg.regen_near.clone(),
        far: cfg.regen_far.clone(),
    };
    let q_max = cfg.q_max;
    Ok(KernelModel::from_fn(q_max, regen, |book| {
        let imb = imbalance(book);
        let side_bid = (0.5 + cfg.imb_slope * imb).clamp(0.0, 1.0);
        let mut v = Vec::new();
        let entry = |kind, action, rate| KernelEntry { kind, action, rate };

        let touch_share = if book.spread() == 2 {
            1.0 - cfg.inspread_prob
        } else {
            1.0
        };
        for &(s, p) in &cfg.limit_sizes {
            let r = cfg.limit_rate * p;
            let lb = s.min(q_max - book.q_b);
            let la = s.min(q_max - book.q_a);
            v.push(entry(
                EventKind::LimitBid,
                FlowAction {
                    l_b: lb,
                    ..FlowAction::ZERO
                },
                r * touch_share * 0.5,
            ));
            v.push(entry(
                EventKind::LimitAsk,
                FlowAction {
                    l_a: la,
                    ..FlowAction::ZERO
                },
                r * touch_share * 0.5,
            ));
            if book.spread() == 2 {
                let h = s.min(q_max);
                let r_in = r * cfg.inspread_prob;
                v.push(entry(
                    EventKind::InsideBid,
                    FlowAction {
                        l_b_half: h,
                        ..FlowAction::ZERO
                    },
                    r_in * side_bid,
                ));
                v.push(entry(
                    EventKind::InsideAsk,
                    FlowAction {
                        l_a_half: h,
                        ..FlowAction::ZERO
                    },
                    r_in * (1.0 - side_bid),
                ));
            }
        }

        let p_ask = side_bid;
        let frac_a = cfg.market_size_base + cfg.market_size_slope * imb;
        let frac_b = cfg.market_size_base - cfg.market_size_slope * imb;
        for (s, p) in market_sizes(cfg, frac_a, book.q_a) {
            v.push(entry(
                EventKind::MarketAsk,
                FlowAction {
                    a_a: s,
                    ..FlowAction::ZERO
                },
                cfg.market_rate * p_ask * p,
            ));
        }
        for (s, p) in market_sizes(cfg, frac_b, book.q_b) {
            v.push(entry(
                EventKind::MarketBid,
                FlowAction {
                    a_b: s,
                    ..FlowAction::ZERO
                },
                cfg.market_rate * (1.0 - p_ask) * p,
            ));
        }

        if cfg.cancel_rate > 0.0 {
            for &(s, p) in &cfg.cancel_sizes {
                let r = cfg.cancel_rate * 0.5 * p;
                v.push(entry(
                    EventKind::CancelBid,
                    FlowAction {
                        m_b: s.min(book.q_b),
                        ..FlowAction::ZERO
                    },
                    r,
                ));
                v.push(entry(
                    EventKind::CancelAsk,
                    FlowAction {
                        m_a: s.min(book.q_a),
                        ..FlowAction::ZERO
                    },
                    r,
                ));
            }
        }
        v
    }))
}

pub fn enumerate_beta(
    km: &KernelModel,
    book: &BookState,
) -> Result<Vec<(FlowAction, f64)>, PriorError> {
    Ok(km
        .entries(book)?
        .iter()
        .map(|e| (e.action, e.rate))
        .collect())
}

/// Regeneration law for a bundle `c` hitting `book`. Non-depleting bundles get
/// a single unused draw.
pub fn regen_draws(law: &RegenLaw, book: &BookState, c: &FlowAction) -> Vec<(RegenDraw, f64)> {
    let dep_b = c.hat_b() == book.q_b;
    let dep_a = c.hat_a() == book.q_a;
    if dep_b == dep_a {
        // Neither side depleted (both at once is not representable).
        return vec![(RegenDraw::UNUSED, 1.0)];
    }
    let two = book.spread() == 2;
    let pm = law.move_prob;
    let mut out = Vec::new();
    let side = |v: u32, w: u32| if dep_b { (v, w) } else { (w, v) };
    if pm < 1.0 {
        for &(s, p) in &law.near {
            let (eb, ea) = side(s, 1);
            out.push((
                RegenDraw {
                    eps: 0,
                    eps_b: eb,
                    eps_a: ea,
                },
                (1.0 - pm) * p,
            ));
        }
    }
    if pm > 0.0 {
        for &(s, p) in &law.far {
            if two {
                for &(s2, p2) in &law.near {
                    let (eb, ea) = side(s, s2);
                    out.push((
                        RegenDraw {
                            eps: 1,
                            eps_b: eb,
                            eps_a: ea,
                        },
                        pm * p * p2,
                    ));
                }
            } else {
                let (eb, ea) = side(s, 1);
                out.push((
                    RegenDraw {
                        eps: 1,
                        eps_b: eb,
                        eps_a: ea,
                    },
                    pm * p,
                ));
            }
        }
    }
    out
}

pub fn enumerate_lambda(
    km: &KernelModel,
    book: &BookState,
    c: &FlowAction,
) -> Vec<(RegenDraw, f64)> {
    regen_draws(&km.regen, book, c)
}

/// How the per-step event probability is derived from the total intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Thinning {
    /// gamma * dt, the one-event-per-step chain the scheme solves.
    Linear,
    /// 1 - exp(-gamma * dt).
    Exponential,
}

impl Thinning {
    pub fn event_prob(self, gamma: f64, dt: f64) -> f64 {
        match self {
            Thinning::Linear => (gamma * dt).min(1.0),
            Thinning::Exponential => 1.0 - (-gamma * dt).exp(),
        }
    }
}

pub fn draw_weighted<R: Rng + ?Sized, T: Copy>(rng: &mut R, items: &[(T, f64)]) -> T {
    let total: f64 = items.iter().map(|e| e.1).sum();
    let mut u = rng.random::<f64>() * total;
    for &(x, w) in items {
        if u < w {
            return x;
        }
        u -= w;
    }
    items
        .iter()
        .rev()
        .find(|e| e.1 > 0.0)
        .map(|e| e.0)
        .unwrap_or(items[0].0)
}

/// One step of the exogenous flow: with the thinning probability, one event
/// drawn from the intensities, with its regeneration draw.
pub fn sample_event<R: Rng + ?Sized>(
    km: &KernelModel,
    book: &BookState,
    dt: f64,
    thinning: Thinning,
    rng: &mut R,
) -> Result<Option<(EventKind, crate::book::MarketEvent)>, PriorError> {
    let gamma = km.gamma(book)?;
    let u: f64 = rng.random();
    if gamma <= 0.0 || u >= thinning.event_prob(gamma, dt) {
        return Ok(None);
    }
    let entries = km.entries(book)?;
    let pairs: Vec<(usize, f64)> = entries
        .iter()
        .enumerate()
        .map(|(k, e)| (k, e.rate))
        .collect();
    let e = entries[draw_weighted(rng, &pairs)];
    let regen = draw_weighted(rng, &enumerate_lambda(km, book, &e.action));
    Ok(Some((
        e.kind,
        crate::book::MarketEvent::new(e.action, regen),
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::mirror_book;

    fn km() -> KernelModel {
        build_default_kernel(&PriorConfig::default()).unwrap()
    }

    fn side_rate(km: &KernelModel, book: &BookState, kind: EventKind) -> f64 {
        km.entries(book)
            .unwrap()
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.rate)
            .sum()
    }

    #[test]
    fn market_side_probabilities() {
        let km = km();
        let flat = BookState::new(0, 1, 4, 4);
        let p = side_rate(&km, &flat, EventKind::MarketAsk) / 0.6;
        assert!((p - 0.5).abs() < 1e-12);
        // Imb = 1 is out of reach with queues >= 1; check the formula end point.
        assert!(((0.5f64 + 0.35 * 1.0) - 0.85).abs() < 1e-15);
        let tilted = BookState::new(0, 1, 12, 4);
        let p = side_rate(&km, &tilted, EventKind::MarketAsk) / 0.6;
        assert!((p - 0.675).abs() < 1e-12);
    }

    #[test]
    fn market_size_split_at_flat_book() {
        let km = km();
        let book = BookState::new(0, 1, 4, 4);
        let sizes: Vec<(u32, f64)> = km
            .entries(&book)
            .unwrap()
            .iter()
            .filter(|e| e.kind == EventKind::MarketAsk)
            .map(|e| (e.action.a_a, e.rate / (0.6 * 0.5)))
            .collect();
        assert_eq!(sizes.len(), 3);
        for (s, p) in sizes {
            let want = match s {
                3 => 0.6,
                2 | 4 => 0.2,
                _ => panic!("unexpected size {s}"),
            };
            assert!((p - want).abs() < 1e-12);
        }
    }

    #[test]
    fn centre_is_not_pushed_up_by_rounding() {
        assert_eq!(market_centre(0.7, 10), 7);
        assert_eq!(market_centre(0.7, 4), 3);
    }

    #[test]
    fn total_rate_is_constant() {
        let km = km();
        for spread in 1..=2 {
            for q_b in 1..=12 {
                for q_a in 1..=12 {
                    let g = km.gamma(&BookState::new(5, 5 + spread, q_b, q_a)).unwrap();
                    assert!((g - 1.2).abs() < 1e-12, "{g}");
                }
            }
        }
    }

    #[test]
    fn lambda_examples() {
        let km = km();
        let book = BookState::new(0, 1, 3, 3);
        let quiet = FlowAction {
            a_a: 1,
            ..FlowAction::ZERO
        };
        assert_eq!(
            enumerate_lambda(&km, &book, &quiet),
            vec![(RegenDraw::UNUSED, 1.0)]
        );
        let dep = FlowAction {
            a_b: 3,
            ..FlowAction::ZERO
        };
        let law = enumerate_lambda(&km, &book, &dep);
        let moved: f64 = law.iter().filter(|e| e.0.eps == 1).map(|e| e.1).sum();
        assert!((moved - 0.75).abs() < 1e-12);
        let far: Vec<(u32, f64)> = law
            .iter()
            .filter(|e| e.0.eps == 1)
            .map(|e| (e.0.eps_b, e.1 / 0.75))
            .collect();
        assert_eq!(far.len(), 3);
        for (s, p) in far {
            let want = match s {
                10 => 0.60,
                5 => 0.25,
                12 => 0.15,
                _ => panic!(),
            };
            assert!((p - want).abs() < 1e-12);
        }
        let total: f64 = law.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_is_mirror_symmetric() {
        let km = km();
        assert!(km.is_mirror_symmetric());
        let lopsided = KernelModel::from_fn(2, km.regen.clone(), |b| {
            vec![KernelEntry {
                kind: EventKind::LimitBid,
                action: FlowAction {
                    l_b: u32::from(b.q_b < 2),
                    ..FlowAction::ZERO
                },
                rate: 0.4,
            }]
        });
        assert!(!lopsided.is_mirror_symmetric());
        for spread in 1..=2 {
            for q_b in 1..=12 {
                for q_a in 1..=12 {
                    let book = BookState::new(0, spread, q_b, q_a);
                    let mut a: Vec<_> = km
                        .entries(&book)
                        .unwrap()
                        .iter()
                        .map(|e| (e.kind.mirrored(), e.action.mirrored().to_array(), e.rate))
                        .collect();
                    let mut b: Vec<_> = km
                        .entries(&mirror_book(&book))
                        .unwrap()
                        .iter()
                        .map(|e| (e.kind, e.action.to_array(), e.rate))
                        .collect();
                    a.sort_by_key(|x| (x.0, x.1));
                    b.sort_by_key(|x| (x.0, x.1));
                    assert_eq!(a.len(), b.len());
                    for (x, y) in a.iter().zip(&b) {
                        assert_eq!((x.0, x.1), (y.0, y.1));
                        assert!((x.2 - y.2).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn bad_table_is_rejected() {
        let cfg = PriorConfig {
            limit_sizes: vec![(1, 0.5)],
            ..PriorConfig::default()
        };
        assert!(matches!(
            build_default_kernel(&cfg),
            Err(PriorError::BadTable("limit_sizes", _))
        ));
    }
}
