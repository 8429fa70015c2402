//! Explicit backward scheme: one flow step, then the impulse obstacle.

use super::model::{Model, TAG_SPAN};
use super::table::{PolicyTable, ValueTable};
use super::{fill, DpError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub dt: f64,
    pub steps: usize,
    /// Keep every value slice instead of only t = 0 and t = T.
    pub keep_all: bool,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueTable,
    pub policy: PolicyTable,
}

#[inline]
fn tag_of(tags: &[i8], e: usize) -> usize {
    if tags.is_empty() {
        TAG_SPAN as usize
    } else {
        (tags[e] as i16 + TAG_SPAN as i16) as usize
    }
}

/// Rate-weighted flow operator at one (layer, state): the sum over events of
/// rate * probability * utility factor * v(next).
pub fn op_kc(m: &Model, v: &[f64], layer: usize, z: usize) -> f64 {
    let n = m.n_states;
    let tf = m.tag_row(layer);
    let vl = &v[layer * n..(layer + 1) * n];
    let mut s = 0.0;
    for e in m.flow.row(z) {
        s += m.flow.weight[e] * tf[tag_of(&m.flow.tag, e)] * vl[m.flow.next[e] as usize];
    }
    s
}

/// Value of every admissible action at (layer, state), in admissible order.
pub fn evaluate_actions(m: &Model, c: &[f64], layer: usize, z: usize) -> Vec<f64> {
    let n = m.n_states;
    let tf = m.tag_row(layer);
    let cl = &c[layer * n..(layer + 1) * n];
    (m.action_start[z] as usize..m.action_start[z + 1] as usize)
        .map(|a| {
            m.actions
                .row(a)
                .map(|e| {
                    m.actions.weight[e]
                        * tf[tag_of(&m.actions.tag, e)]
                        * cl[m.actions.next[e] as usize]
                })
                .sum()
        })
        .collect()
}

/// Impulse operator: best action value and its 1-based ordinal, or
/// (-inf, 0) if no action is admissible. Ties keep the first action.
pub fn op_i(m: &Model, c: &[f64], layer: usize, z: usize) -> (f64, u8) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0u8;
    for (k, val) in evaluate_actions(m, c, layer, z).into_iter().enumerate() {
        if val > best {
            best = val;
            arg = k as u8 + 1;
        }
    }
    (best, arg)
}

/// Flow part of one backward step: values just after the decision.
pub fn continuation(m: &Model, v: &[f64], dt: f64, exec: Exec) -> Vec<f64> {
    let n = m.n_states;
    // The layer moves at the end of the step, independently of the book, so
    // the flow step acts on the layer-averaged values.
    let mixed;
    let w = match &m.mixing {
        Some(rows) => {
            let mut out = vec![0.0; v.len()];
            fill(exec, &mut out, |k, o| {
                let (l, z) = (k / n, k % n);
                *o = rows[l].iter().map(|&(l2, p)| p * v[l2 * n + z]).sum();
            });
            mixed = out;
            &mixed[..]
        }
        None => v,
    };
    let mut c = vec![0.0; v.len()];
    fill(exec, &mut c, |k, out| {
        let (l, z) = (k / n, k % n);
        *out = w[k] - dt * m.gamma[z] * w[k] + dt * op_kc(m, w, l, z);
    });
    c
}

fn obstacle(m: &Model, c: &[f64], exec: Exec) -> (Vec<f64>, Vec<u8>) {
    let n = m.n_states;
    let mut out = vec![(0.0, 0u8); c.len()];
    fill(exec, &mut out, |k, o| {
        let (l, z) = (k / n, k % n);
        let tf = m.tag_row(l);
        let cl = &c[l * n..(l + 1) * n];
        let mut best = c[k];
        let mut arg = 0u8;
        for (j, a) in (m.action_start[z] as usize..m.action_start[z + 1] as usize).enumerate() {
            let mut val = 0.0;
            for e in m.actions.row(a) {
                val += m.actions.weight[e]
                    * tf[tag_of(&m.actions.tag, e)]
                    * cl[m.actions.next[e] as usize];
            }
            if val > best {
                best = val;
                arg = j as u8 + 1;
            }
        }
        *o = (best, arg);
    });
    out.into_iter().unzip()
}

/// One backward step from `v_next` (values at t + dt) to values and policy at t.
pub fn scheme_step(m: &Model, v_next: &[f64], dt: f64, exec: Exec) -> (Vec<f64>, Vec<u8>) {
    let c = continuation(m, v_next, dt, exec);
    obstacle(m, &c, exec)
}

pub fn check_stability(m: &Model, dt: f64) -> Result<(), DpError> {
    let r = dt * m.gamma_max;
    if r >= 1.0 {
        return Err(DpError::Unstable(r));
    }
    Ok(())
}

/// Solves from the terminal condition back to t = 0.
pub fn solve_backward(m: &Model, opt: &SolveOptions) -> Result<Solution, DpError> {
    check_stability(m, opt.dt)?;
    let mut values = ValueTable::new(m.space_hash, m.n_states, m.n_layers, opt.dt, opt.steps);
    let mut policy = PolicyTable::new(m.space_hash, m.n_states, m.n_layers, opt.dt, opt.steps);
    let mut v = m.terminal.clone();
    values.push(opt.steps, v.clone());
    for k in (0..opt.steps).rev() {
        let (vk, pk) = scheme_step(m, &v, opt.dt, opt.exec);
        v = vk;
        policy.insert(k, pk);
        if opt.keep_all || k == 0 {
            values.push(k, v.clone());
        }
    }
    values.sort();
    Ok(Solution { values, policy })
}
