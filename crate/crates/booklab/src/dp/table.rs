//! Value and policy tables with a small versioned binary format.
//!
//! Layout (little endian): 8-byte magic, u32 version, u64 space hash,
//! u32 states, u32 layers, u32 steps, f64 dt, a length-prefixed UTF-8
//! provenance note, then the payload.

use super::DpError;
use std::io::{Read, Write};
use std::path::Path;

const VERSION: u32 = 1;
const VALUE_MAGIC: &[u8; 8] = b"BLABVALS";
const POLICY_MAGIC: &[u8; 8] = b"BLABPOLS";

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub space_hash: u64,
    pub n_states: usize,
    pub n_layers: usize,
    pub steps: usize,
    pub dt: f64,
    /// Free text, e.g. tool version, config hash and seed.
    pub note: String,
}

impl Header {
    fn write(&self, w: &mut impl Write, magic: &[u8; 8]) -> std::io::Result<()> {
        w.write_all(magic)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.space_hash.to_le_bytes())?;
        w.write_all(&(self.n_states as u32).to_le_bytes())?;
        w.write_all(&(self.n_layers as u32).to_le_bytes())?;
        w.write_all(&(self.steps as u32).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&(self.note.len() as u32).to_le_bytes())?;
        w.write_all(self.note.as_bytes())
    }

    fn read(r: &mut impl Read, magic: &[u8; 8]) -> Result<Self, DpError> {
        let mut m = [0u8; 8];
        r.read_exact(&mut m)?;
        if &m != magic {
            return Err(DpError::Format("wrong magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(DpError::Format(format!("unsupported version {version}")));
        }
        Ok(Header {
            space_hash: read_u64(r)?,
            n_states: read_u32(r)? as usize,
            n_layers: read_u32(r)? as usize,
            steps: read_u32(r)? as usize,
            dt: f64::from_bits(read_u64(r)?),
            note: {
                let n = read_u32(r)? as usize;
                if n > 1 << 16 {
                    return Err(DpError::Format("note too long".into()));
                }
                let mut b = vec![0u8; n];
                r.read_exact(&mut b)?;
                String::from_utf8(b).map_err(|_| DpError::Format("note is not UTF-8".into()))?
            },
        })
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_f64s(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Value slices on the time grid; by default only t = 0 and t = T are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub header: Header,
    slices: Vec<(usize, Vec<f64>)>,
}

impl ValueTable {
    pub fn new(space_hash: u64, n_states: usize, n_layers: usize, dt: f64, steps: usize) -> Self {
        ValueTable {
            header: Header {
                space_hash,
                n_states,
                n_layers,
                steps,
                dt,
                note: String::new(),
            },
            slices: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, step: usize, v: Vec<f64>) {
        debug_assert_eq!(v.len(), self.header.n_states * self.header.n_layers);
        self.slices.push((step, v));
    }

    pub(crate) fn sort(&mut self) {
        self.slices.sort_by_key(|s| s.0);
    }

    pub fn steps_kept(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.0).collect()
    }

    pub fn slice(&self, step: usize) -> Option<&[f64]> {
        self.slices
            .iter()
            .find(|s| s.0 == step)
            .map(|s| s.1.as_slice())
    }

    pub fn get(&self, step: usize, layer: usize, z: usize) -> Option<f64> {
        self.slice(step)
            .map(|v| v[layer * self.header.n_states + z])
    }

    pub fn write_to(&self, path: &Path) -> Result<(), DpError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.header.write(&mut w, VALUE_MAGIC)?;
        w.write_all(&(self.slices.len() as u32).to_le_bytes())?;
        for (step, v) in &self.slices {
            w.write_all(&(*step as u32).to_le_bytes())?;
            write_f64s(&mut w, v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, DpError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let header = Header::read(&mut r, VALUE_MAGIC)?;
        let count = read_u32(&mut r)? as usize;
        let len = header.n_states * header.n_layers;
        let mut slices = Vec::with_capacity(count);
        for _ in 0..count {
            let step = read_u32(&mut r)? as usize;
            slices.push((step, read_f64s(&mut r, len)?));
        }
        Ok(ValueTable { header, slices })
    }
}

/// Action ordinals per (step, layer, state): 0 means wait, k means the k-th
/// admissible action of the stored state. Identical consecutive slices are
/// stored once.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub header: Header,
    unique: Vec<Vec<u8>>,
    index: Vec<u32>,
}

impl PolicyTable {
    pub fn new(space_hash: u64, n_states: usize, n_layers: usize, dt: f64, steps: usize) -> Self {
        PolicyTable {
            header: Header {
                space_hash,
                n_states,
                n_layers,
                steps,
                dt,
                note: String::new(),
            },
            unique: Vec::new(),
            index: vec![u32::MAX; steps],
        }
    }

    /// Slices are expected in decreasing or increasing step order; only
    /// neighbours in insertion order are compared.
    pub(crate) fn insert(&mut self, step: usize, p: Vec<u8>) {
        debug_assert_eq!(p.len(), self.header.n_states * self.header.n_layers);
        if self.unique.last() != Some(&p) {
            self.unique.push(p);
        }
        self.index[step] = self.unique.len() as u32 - 1;
    }

    pub fn distinct_slices(&self) -> usize {
        self.unique.len()
    }

    pub fn slice(&self, step: usize) -> &[u8] {
        &self.unique[self.index[step] as usize]
    }

    pub fn get(&self, step: usize, layer: usize, z: usize) -> u8 {
        self.slice(step)[layer * self.header.n_states + z]
    }

    pub fn check_space(&self, space_hash: u64) -> Result<(), DpError> {
        if self.header.space_hash != space_hash {
            return Err(DpError::Mismatch(format!(
                "policy built for space {:016x}, expected {:016x}",
                self.header.space_hash, space_hash
            )));
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<(), DpError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.header.write(&mut w, POLICY_MAGIC)?;
        w.write_all(&(self.unique.len() as u32).to_le_bytes())?;
        for p in &self.unique {
            w.write_all(p)?;
        }
        for k in &self.index {
            w.write_all(&k.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, DpError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let header = Header::read(&mut r, POLICY_MAGIC)?;
        let count = read_u32(&mut r)? as usize;
        let len = header.n_states * header.n_layers;
        let mut unique = Vec::with_capacity(count);
        for _ in 0..count {
            let mut p = vec![0u8; len];
            r.read_exact(&mut p)?;
            unique.push(p);
        }
        let mut index = Vec::with_capacity(header.steps);
        for _ in 0..header.steps {
            let k = read_u32(&mut r)?;
            if k as usize >= count {
                return Err(DpError::Format(format!("slice index {k} out of range")));
            }
            index.push(k);
        }
        Ok(PolicyTable {
            header,
            unique,
            index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = PolicyTable::new(7, 3, 1, 0.5, 4);
        p.insert(3, vec![0, 1, 2]);
        p.insert(2, vec![0, 1, 2]);
        p.insert(1, vec![1, 1, 2]);
        p.insert(0, vec![1, 1, 2]);
        assert_eq!(p.distinct_slices(), 2);
        let path = dir.path().join("p.bin");
        p.write_to(&path).unwrap();
        let q = PolicyTable::read_from(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.get(0, 0, 0), 1);
        assert_eq!(q.get(3, 0, 0), 0);

        let mut v = ValueTable::new(7, 3, 1, 0.5, 4);
        v.push(4, vec![1.0, 2.0, 3.0]);
        v.push(0, vec![-1.0, -2.0, f64::MIN_POSITIVE]);
        v.sort();
        let path = dir.path().join("v.bin");
        v.write_to(&path).unwrap();
        let w = ValueTable::read_from(&path).unwrap();
        assert_eq!(v, w);
        assert_eq!(w.steps_kept(), vec![0, 4]);
        assert!(PolicyTable::read_from(&path).is_err());
    }
}
