//! Sample moments, fixed-bin histograms and the exogenous flow statistics.

use crate::book::BookState;
use crate::prior::{sample_event, EventKind, KernelModel, PriorError, Thinning};
use crate::rng::{purpose, stream};
use std::io::Write;

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1).
pub fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn stderr(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        sd(x) / (x.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// (lower edge, upper edge, count); the last bin is closed.
    pub bins: Vec<(f64, f64, usize)>,
}

/// `n` equal bins spanning the data range. A constant sample gets a unit-wide
/// range around its value.
pub fn histogram(x: &[f64], n: usize) -> Histogram {
    let n = n.max(1);
    let (mut lo, mut hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let w = (hi - lo) / n as f64;
    let mut counts = vec![0usize; n];
    for &v in x {
        let k = (((v - lo) / w).floor() as usize).min(n - 1);
        counts[k] += 1;
    }
    Histogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(k, c)| (lo + k as f64 * w, lo + (k + 1) as f64 * w, c))
            .collect(),
    }
}

pub fn write_histogram_csv(
    w: &mut impl Write,
    header: &str,
    value: &str,
    h: &Histogram,
) -> std::io::Result<()> {
    writeln!(w, "{header}")?;
    writeln!(w, "{value}_lo,{value}_hi,count")?;
    for (lo, hi, c) in &h.bins {
        writeln!(w, "{lo:.8},{hi:.8},{c}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStats {
    pub book: BookState,
    pub draws: usize,
    pub market_orders: usize,
    /// Share of market orders that lift the ask.
    pub ask_share: f64,
    pub steps: usize,
    pub dt: f64,
    pub events: usize,
    pub events_per_second: f64,
}

/// Market-order side frequencies from `draws` forced events on `book`, and
/// the event rate over `steps` thinned steps of length `dt`.
pub fn flow_stats(
    km: &KernelModel,
    book: &BookState,
    draws: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<FlowStats, PriorError> {
    let mut rng = stream(seed, &[purpose::FLOW, 0]);
    let gamma = km.gamma(book)?;
    // dt = 1 / gamma makes every linear-thinned step an event.
    let sure = 1.0 / gamma;
    let (mut market, mut ask) = (0usize, 0usize);
    for _ in 0..draws {
        if let Some((kind, _)) = sample_event(km, book, sure, Thinning::Linear, &mut rng)? {
            match kind {
                EventKind::MarketAsk => {
                    market += 1;
                    ask += 1;
                }
                EventKind::MarketBid => market += 1,
                _ => {}
            }
        }
    }
    let mut rng = stream(seed, &[purpose::FLOW, 1]);
    let mut events = 0usize;
    for _ in 0..steps {
        if sample_event(km, book, dt, Thinning::Linear, &mut rng)?.is_some() {
            events += 1;
        }
    }
    Ok(FlowStats {
        book: *book,
        draws,
        market_orders: market,
        ask_share: if market > 0 {
            ask as f64 / market as f64
        } else {
            0.0
        },
        steps,
        dt,
        events,
        events_per_second: events as f64 / (steps as f64 * dt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((sd(&x) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((stderr(&x) - sd(&x) / 2.0).abs() < 1e-15);
        assert_eq!((mean(&[]), sd(&[1.0])), (0.0, 0.0));
    }

    #[test]
    fn histogram_counts_everything() {
        let x: Vec<f64> = (0..100).map(|k| k as f64 * 0.37).collect();
        let h = histogram(&x, 7);
        assert_eq!(h.bins.len(), 7);
        assert_eq!(h.bins.iter().map(|b| b.2).sum::<usize>(), 100);
        assert_eq!(
            histogram(&[2.0, 2.0], 3)
                .bins
                .iter()
                .map(|b| b.2)
                .sum::<usize>(),
            2
        );
    }
}
