//! Reduced state spaces: spread, queues and the agent's inventory and resting
//! orders. Cash and the absolute price level are factored out; the action
//! count is kept only when it is bounded. Optionally each bid/ask mirror pair
//! is stored once.

use crate::book::{check_domain, AgentState, BookState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub q_max: u32,
    pub i_star: i32,
    /// Largest resting size on one side.
    pub n_max: u32,
    /// Action-count bound kept in the state; `None` folds the count out.
    pub j_cap: Option<u32>,
    pub mirror: bool,
}

impl SpaceSpec {
    pub fn hash(&self) -> u64 {
        let text = format!(
            "q_max={};i_star={};n_max={};j_cap={:?};mirror={}",
            self.q_max, self.i_star, self.n_max, self.j_cap, self.mirror
        );
        let d = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reduced {
    pub spread: u8,
    pub q_b: u32,
    pub q_a: u32,
    pub i: i32,
    pub n_b: u32,
    pub n_a: u32,
    pub b_b: u32,
    pub b_a: u32,
    pub j: u32,
}

impl Reduced {
    pub fn from_pair(book: &BookState, x: &AgentState) -> Self {
        Reduced {
            spread: book.spread() as u8,
            q_b: book.q_b,
            q_a: book.q_a,
            i: x.i,
            n_b: x.n_b,
            n_a: x.n_a,
            b_b: x.b_b,
            b_a: x.b_a,
            j: x.j,
        }
    }

    /// Reference embedding: best bid at 0 ticks, cash 0.
    pub fn embed(&self) -> (BookState, AgentState) {
        (
            BookState::new(0, self.spread as i64, self.q_b, self.q_a),
            AgentState {
                g: 0,
                i: self.i,
                n_b: self.n_b,
                n_a: self.n_a,
                b_b: self.b_b,
                b_a: self.b_a,
                j: self.j,
            },
        )
    }

    pub fn mirrored(&self) -> Self {
        Reduced {
            spread: self.spread,
            q_b: self.q_a,
            q_a: self.q_b,
            i: -self.i,
            n_b: self.n_a,
            n_a: self.n_b,
            b_b: self.b_a,
            b_a: self.b_b,
            j: self.j,
        }
    }
}

const MIRROR_BIT: u32 = 1 << 31;
const NONE: u32 = u32::MAX;

/// Lookup result: reduced index and whether the state is the mirror image of
/// the stored representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub index: usize,
    pub mirrored: bool,
}

#[derive(Debug, Clone)]
pub struct StateSpace {
    pub spec: SpaceSpec,
    states: Vec<Reduced>,
    lookup: Vec<u32>,
    radix: [usize; 9],
}

impl StateSpace {
    pub fn new(spec: SpaceSpec) -> Self {
        let q = spec.q_max as usize;
        let ni = (2 * spec.i_star + 1) as usize;
        let nn = spec.n_max as usize + 1;
        let nj = spec.j_cap.map_or(1, |j| j as usize + 1);
        let radix = [2, q, q, ni, nn, nn, q, q, nj];
        let total: usize = radix.iter().product();
        let mut lookup = vec![NONE; total];
        let mut states = Vec::new();
        let mut sp = StateSpace {
            spec,
            states: Vec::new(),
            lookup: Vec::new(),
            radix,
        };
        for full in 0..total {
            let z = sp.decode_full(full);
            if !sp.valid(&z) {
                continue;
            }
            if spec.mirror {
                let m = sp.full_index(&z.mirrored()).expect("mirror stays in range");
                if m < full {
                    let slot = lookup[m];
                    debug_assert!(slot != NONE && slot & MIRROR_BIT == 0);
                    lookup[full] = slot | MIRROR_BIT;
                    continue;
                }
            }
            lookup[full] = states.len() as u32;
            states.push(z);
        }
        sp.states = states;
        sp.lookup = lookup;
        sp
    }

    fn valid(&self, z: &Reduced) -> bool {
        let (book, x) = z.embed();
        if check_domain(&book, &x, self.spec.i_star).is_err() {
            return false;
        }
        (z.n_b > 0 || z.b_b == 0) && (z.n_a > 0 || z.b_a == 0)
    }

    fn decode_full(&self, mut k: usize) -> Reduced {
        let mut d = [0usize; 9];
        for p in (0..9).rev() {
            d[p] = k % self.radix[p];
            k /= self.radix[p];
        }
        Reduced {
            spread: d[0] as u8 + 1,
            q_b: d[1] as u32 + 1,
            q_a: d[2] as u32 + 1,
            i: d[3] as i32 - self.spec.i_star,
            n_b: d[4] as u32,
            n_a: d[5] as u32,
            b_b: d[6] as u32,
            b_a: d[7] as u32,
            j: d[8] as u32,
        }
    }

    fn full_index(&self, z: &Reduced) -> Option<usize> {
        let s = &self.spec;
        let j = if s.j_cap.is_some() { z.j as i64 } else { 0 };
        let d = [
            z.spread as i64 - 1,
            z.q_b as i64 - 1,
            z.q_a as i64 - 1,
            (z.i + s.i_star) as i64,
            z.n_b as i64,
            z.n_a as i64,
            z.b_b as i64,
            z.b_a as i64,
            j,
        ];
        let mut k = 0usize;
        for p in 0..9 {
            if d[p] < 0 || d[p] as usize >= self.radix[p] {
                return None;
            }
            k = k * self.radix[p] + d[p] as usize;
        }
        Some(k)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &Reduced {
        &self.states[k]
    }

    pub fn states(&self) -> &[Reduced] {
        &self.states
    }

    /// Looks up a reduced state (the `j` field is ignored when the count is
    /// folded out).
    pub fn find(&self, z: &Reduced) -> Option<Slot> {
        let slot = self.lookup[self.full_index(z)?];
        if slot == NONE {
            return None;
        }
        Some(Slot {
            index: (slot & !MIRROR_BIT) as usize,
            mirrored: slot & MIRROR_BIT != 0,
        })
    }

    pub fn find_pair(&self, book: &BookState, x: &AgentState) -> Option<Slot> {
        self.find(&Reduced::from_pair(book, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mirror: bool) -> SpaceSpec {
        SpaceSpec {
            q_max: 4,
            i_star: 2,
            n_max: 2,
            j_cap: None,
            mirror,
        }
    }

    #[test]
    fn indexing_is_a_bijection() {
        let sp = StateSpace::new(spec(false));
        for (k, z) in sp.states().iter().enumerate() {
            assert_eq!(
                sp.find(z),
                Some(Slot {
                    index: k,
                    mirrored: false
                })
            );
        }
    }

    #[test]
    fn mirror_pairs_share_a_slot() {
        let full = StateSpace::new(spec(false));
        let red = StateSpace::new(spec(true));
        assert!(red.len() < full.len());
        assert!(2 * red.len() >= full.len());
        for z in full.states() {
            let a = red.find(z).unwrap();
            let b = red.find(&z.mirrored()).unwrap();
            assert_eq!(a.index, b.index);
            if z != &z.mirrored() {
                assert_ne!(a.mirrored, b.mirrored);
            }
        }
    }

    #[test]
    fn price_level_is_not_part_of_the_state() {
        let sp = StateSpace::new(spec(true));
        let x = AgentState {
            i: 1,
            n_a: 1,
            b_a: 2,
            ..AgentState::flat()
        };
        let a = sp.find_pair(&BookState::new(100, 101, 3, 4), &x);
        let b = sp.find_pair(&BookState::new(105, 106, 3, 4), &x);
        assert!(a.is_some());
        assert_eq!(a, b);
    }
}
