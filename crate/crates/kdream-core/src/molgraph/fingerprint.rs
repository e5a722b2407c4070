//! Hashed circular substructure fingerprints and Tanimoto similarity.
//!
//! Each atom contributes one hashed feature per neighborhood radius 0..=2,
//! built from the same refinement-style labels the canonical key uses, so the
//! fingerprint is independent of atom numbering.

use super::MolecularGraph;
use thiserror::Error;

pub const DEFAULT_BITS: usize = 2048;
const RADIUS: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("fingerprint lengths differ: {a} vs {b} bits")]
    BitsMismatch { a: usize, b: usize },
    #[error("bit count {bits} is not a power of two")]
    BadBits { bits: usize },
}

/// Fixed-width bitset. Bit order is little-endian within each word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    bits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn empty(bits: usize) -> Result<Self, FingerprintError> {
        if bits == 0 || !bits.is_power_of_two() {
            return Err(FingerprintError::BadBits { bits });
        }
        Ok(Fingerprint {
            bits,
            words: vec![0; bits / 64 + usize::from(bits % 64 != 0)],
        })
    }

    pub fn n_bits(&self) -> usize {
        self.bits
    }

    pub fn set(&mut self, bit: usize) {
        debug_assert!(bit < self.bits);
        self.words[bit / 64] |= 1u64 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }
}

fn fnv1a64(data: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in data {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Circular fingerprint with radius 2 over `bits` positions (power of two).
pub fn fingerprint(g: &MolecularGraph, bits: usize) -> Result<Fingerprint, FingerprintError> {
    let mut fp = Fingerprint::empty(bits)?;
    let n = g.n_atoms();
    let mut labels: Vec<u64> = (0..n)
        .map(|a| {
            let atom = g.atom(a);
            fnv1a64(&[
                atom.element.channel() as u64,
                (atom.charge as i64 + 128) as u64,
                atom.explicit_h.map(|h| h as u64 + 1).unwrap_or(0),
                g.neighbors(a).len() as u64,
            ])
        })
        .collect();
    for radius in 0..=RADIUS {
        for &label in &labels {
            let feature = fnv1a64(&[radius as u64, label]);
            fp.set((feature & (bits as u64 - 1)) as usize);
        }
        if radius == RADIUS {
            break;
        }
        let next: Vec<u64> = (0..n)
            .map(|a| {
                let mut nb: Vec<u64> = g
                    .neighbors(a)
                    .iter()
                    .map(|&(b, o)| fnv1a64(&[o as u64, labels[b]]))
                    .collect();
                nb.sort_unstable();
                let mut payload = vec![labels[a]];
                payload.extend(nb);
                fnv1a64(&payload)
            })
            .collect();
        labels = next;
    }
    Ok(fp)
}

/// Tanimoto similarity |A ∩ B| / |A ∪ B|; two all-zero prints count as 0.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.bits != b.bits {
        return Err(FingerprintError::BitsMismatch { a: a.bits, b: b.bits });
    }
    let mut inter = 0u32;
    let mut union = 0u32;
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(f64::from(inter) / f64::from(union))
}
