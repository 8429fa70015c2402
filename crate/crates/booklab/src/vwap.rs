//! Continuous-time VWAP execution with linear permanent and temporary impact:
//! closed-form h2, tabulated h1 and h0, the optimal speed and the target
//! inventory curve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VwapError {
    #[error("parameter {0} must be positive (got {1})")]
    NonPositive(&'static str, f64),
    #[error(
        "degenerate coefficients: {0} (eta={1}, sigma={2}, beta={3}, kappa={4}, kappa_tilde={5})"
    )]
    Degenerate(&'static str, f64, f64, f64, f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VwapInputs {
    pub eta: f64,
    pub sigma: f64,
    /// Permanent impact.
    pub beta: f64,
    /// Temporary impact.
    pub kappa: f64,
    /// Terminal penalty on the remaining inventory.
    pub kappa_tilde: f64,
    pub horizon: f64,
    /// Units to buy.
    pub i0: f64,
    /// Market volume rate per segment; segments split the horizon evenly.
    pub volume: Vec<f64>,
    /// Step of the tabulated ODE solutions.
    pub h_step: f64,
}

impl Default for VwapInputs {
    fn default() -> Self {
        VwapInputs {
            eta: 1.0,
            sigma: 0.2,
            beta: 0.0004,
            kappa: 0.003,
            kappa_tilde: 0.003 * 60.0,
            horizon: 1800.0,
            i0: 250.0,
            volume: vec![1.2],
            h_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coeffs {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub y: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Coeffs {
    /// 1 / (c1 + c2 e^{c3 tau}) - c4, written to stay finite for large c3 tau.
    pub fn h2_at(&self, tau: f64) -> f64 {
        let x = self.c3 * tau;
        if x > 0.0 {
            let e = (-x).exp();
            e / (self.c1 * e + self.c2) - self.c4
        } else {
            1.0 / (self.c1 + self.c2 * x.exp()) - self.c4
        }
    }
}

pub fn a_coeffs(m: &VwapInputs) -> (f64, f64, f64) {
    let k = 2.0 * m.kappa_tilde - m.beta;
    let a0 = -m.eta * m.eta * m.sigma * m.sigma / 2.0 + m.eta * k * k / (4.0 * m.kappa);
    let a1 = k / m.kappa;
    let a2 = 1.0 / (m.kappa * m.eta);
    (a0, a1, a2)
}

/// Both roots of (4 a0 a2 - a1^2) y^2 + (a1^2 - 4 a0 a2) y + a0 a2 = 0,
/// smaller first.
pub fn y_roots(a0: f64, a1: f64, a2: f64) -> Option<(f64, f64)> {
    let a = 4.0 * a0 * a2 - a1 * a1;
    let b = -a;
    let c = a0 * a2;
    if a == 0.0 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Stable pair: q = -(b + sign(b) sqrt(disc)) / 2.
    let q = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if q != 0.0 {
        (q / a, c / q)
    } else {
        ((-b) / (2.0 * a), (-b) / (2.0 * a))
    };
    Some((r1.min(r2), r1.max(r2)))
}

pub fn coeffs_for_root(m: &VwapInputs, y: f64) -> Result<Coeffs, VwapError> {
    let (a0, a1, a2) = a_coeffs(m);
    let degen = |what| VwapError::Degenerate(what, m.eta, m.sigma, m.beta, m.kappa, m.kappa_tilde);
    if (1.0 - 2.0 * y).abs() < 1e-300 {
        return Err(degen("1 - 2 y = 0"));
    }
    let c3 = a1 / (1.0 - 2.0 * y);
    if c3 == 0.0 || (1.0 - y) == 0.0 {
        return Err(degen("c3 = 0 or y = 1"));
    }
    let c4 = a0 / ((1.0 - y) * c3);
    if c4 == 0.0 {
        return Err(degen("c4 = 0"));
    }
    let c1 = y / c4;
    let c2 = 1.0 / c4 - c1;
    Ok(Coeffs {
        a0,
        a1,
        a2,
        y,
        c1,
        c2,
        c3,
        c4,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VwapModel {
    pub inputs: VwapInputs,
    pub coeffs: Coeffs,
    /// Signed initial inventory over total volume: -i0 / v(0, T).
    pub m_bar: f64,
    /// h1 and h0 on t = k * h_step (last node at T).
    pub h1: Vec<f64>,
    pub h0: Vec<f64>,
    pub grid: Vec<f64>,
    /// Target inventory on the same grid.
    pub target: Vec<f64>,
}

impl VwapModel {
    pub fn h2(&self, t: f64) -> f64 {
        self.coeffs.h2_at(self.inputs.horizon - t)
    }

    fn interp(&self, tab: &[f64], t: f64) -> f64 {
        let n = self.grid.len() - 1;
        let h = self.inputs.horizon / n.max(1) as f64;
        let x = (t / h).clamp(0.0, n as f64);
        let k = (x.floor() as usize).min(n.saturating_sub(1));
        let w = x - k as f64;
        if n == 0 {
            return tab[0];
        }
        tab[k] * (1.0 - w) + tab[k + 1] * w
    }

    pub fn h1(&self, t: f64) -> f64 {
        self.interp(&self.h1, t)
    }

    pub fn h0(&self, t: f64) -> f64 {
        self.interp(&self.h0, t)
    }

    /// Market volume expected over [a, b].
    pub fn volume_between(&self, a: f64, b: f64) -> f64 {
        volume_between(&self.inputs, a, b)
    }

    /// Optimal trading speed, floored at 0.
    pub fn optimal_speed(&self, t: f64, i: f64) -> f64 {
        self.raw_speed(t, i).max(0.0)
    }

    /// The unfloored affine expression.
    pub fn raw_speed(&self, t: f64, i: f64) -> f64 {
        let m = &self.inputs;
        let vt = self.volume_between(t, m.horizon);
        (m.beta * (i - vt * self.m_bar)
            - 2.0 * m.kappa_tilde * i
            - (self.h1(t) + 2.0 * self.h2(t) * i) / m.eta)
            / (2.0 * m.kappa)
    }

    /// Target inventory at t, starting from -i0.
    pub fn target_inventory(&self, t: f64) -> f64 {
        self.interp(&self.target, t)
    }

    /// Units the frozen-inventory speed prescribes over [a, b].
    pub fn quota(&self, a: f64, b: f64, i: f64) -> f64 {
        let n = 200;
        let h = (b - a) / n as f64;
        if h <= 0.0 {
            return 0.0;
        }
        let f = |t: f64| self.optimal_speed(t, i);
        // composite Simpson
        let mut s = f(a) + f(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + k as f64 * h);
        }
        s * h / 3.0
    }
}

pub fn volume_rate(m: &VwapInputs, t: f64) -> f64 {
    let n = m.volume.len();
    let k = ((t / m.horizon) * n as f64)
        .floor()
        .clamp(0.0, (n - 1) as f64) as usize;
    m.volume[k]
}

pub fn volume_between(m: &VwapInputs, a: f64, b: f64) -> f64 {
    let n = m.volume.len();
    let seg = m.horizon / n as f64;
    let mut total = 0.0;
    for (k, &r) in m.volume.iter().enumerate() {
        let lo = (k as f64 * seg).max(a);
        let hi = ((k + 1) as f64 * seg).min(b);
        if hi > lo {
            total += r * (hi - lo);
        }
    }
    total
}

fn rk4<F: Fn(f64, f64) -> f64>(f: F, t: f64, y: f64, h: f64) -> f64 {
    let k1 = f(t, y);
    let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
    let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
    let k4 = f(t + h, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

fn rk4_vec<F: Fn(f64, [f64; 2]) -> [f64; 2]>(f: F, t: f64, y: [f64; 2], h: f64) -> [f64; 2] {
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    let k1 = f(t, y);
    let k2 = f(t + h / 2.0, add(y, k1, h / 2.0));
    let k3 = f(t + h / 2.0, add(y, k2, h / 2.0));
    let k4 = f(t + h, add(y, k3, h));
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Solves for the coefficients and tabulates h1, h0 and the target inventory.
pub fn vwap_coeffs(m: &VwapInputs) -> Result<VwapModel, VwapError> {
    for (name, v) in [
        ("eta", m.eta),
        ("kappa", m.kappa),
        ("horizon", m.horizon),
        ("h_step", m.h_step),
    ] {
        if !(v > 0.0) {
            return Err(VwapError::NonPositive(name, v));
        }
    }
    if m.sigma < 0.0 {
        return Err(VwapError::NonPositive("sigma", m.sigma));
    }
    let (a0, a1, a2) = a_coeffs(m);
    let (y, _) = y_roots(a0, a1, a2).ok_or(VwapError::Degenerate(
        "no real root",
        m.eta,
        m.sigma,
        m.beta,
        m.kappa,
        m.kappa_tilde,
    ))?;
    let coeffs = coeffs_for_root(m, y)?;
    let v_total = volume_between(m, 0.0, m.horizon);
    if !(v_total > 0.0) {
        return Err(VwapError::NonPositive("total volume", v_total));
    }
    let m_bar = -m.i0 / v_total;

    let n = (m.horizon / m.h_step).round().max(1.0) as usize;
    let h = m.horizon / n as f64;
    let grid: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
    let (eta, sig, beta, kap, kt) = (m.eta, m.sigma, m.beta, m.kappa, m.kappa_tilde);
    let vt = |t: f64| volume_between(m, t, m.horizon);
    let h2 = |t: f64| coeffs.h2_at(m.horizon - t);
    let dh1 = |t: f64, h1: f64| {
        let v = vt(t);
        sig * sig * eta * eta * v * m_bar
            + (h1 + beta * eta * v * m_bar) * (-beta * eta + 2.0 * eta * kt + 2.0 * h2(t))
                / (2.0 * kap * eta)
    };
    let dh0 = |t: f64, h1: f64| {
        let v = vt(t);
        let x = h1 + beta * eta * v * m_bar;
        -0.5 * sig * sig * (eta * v * m_bar).powi(2) + x * x / (4.0 * kap * eta)
    };
    // Integrate (h1, h0) jointly in tau = T - t from tau = 0.
    let rhs = |tau: f64, y: [f64; 2]| {
        let t = m.horizon - tau;
        [-dh1(t, y[0]), -dh0(t, y[0])]
    };
    let mut h1 = vec![0.0; n + 1];
    let mut h0 = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let tau = m.horizon - grid[k + 1];
        let y = rk4_vec(rhs, tau, [h1[k + 1], h0[k + 1]], h);
        h1[k] = y[0];
        h0[k] = y[1];
    }
    let mut model = VwapModel {
        inputs: m.clone(),
        coeffs,
        m_bar,
        h1,
        h0,
        grid,
        target: Vec::new(),
    };
    let mut target = vec![-m.i0; n + 1];
    for k in 0..n {
        let t = model.grid[k];
        target[k + 1] = rk4(|s, i| model.optimal_speed(s, i), t, target[k], h);
    }
    model.target = target;
    Ok(model)
}
