//! Canonical atom ordering and a 64-bit isomorphism-invariant key.
//!
//! Ordering works by iterative neighborhood-label refinement. When refinement
//! stalls on a tied class, one member is artificially distinguished and the
//! search branches, keeping the lexicographically smallest resulting graph
//! signature. Branching makes the order independent of input atom numbering
//! even for symmetric molecules.

use super::MolecularGraph;

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

fn atom_invariant(g: &MolecularGraph, a: usize) -> (usize, i8, i16, usize, i32) {
    let atom = g.atom(a);
    (
        atom.element.channel(),
        atom.charge,
        atom.explicit_h.map(i16::from).unwrap_or(-1),
        g.neighbors(a).len(),
        g.neighbors(a).iter().map(|(_, o)| *o as i32).sum(),
    )
}

fn dense_rank<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).unwrap())
        .collect()
}

/// Refine labels to a fixpoint from atom invariants plus branching marks.
fn refine(g: &MolecularGraph, marks: &[u32]) -> Vec<usize> {
    let n = g.n_atoms();
    let init: Vec<((usize, i8, i16, usize, i32), u32)> =
        (0..n).map(|a| (atom_invariant(g, a), marks[a])).collect();
    let mut labels = dense_rank(&init);
    loop {
        let keys: Vec<(usize, Vec<(u8, usize)>)> = (0..n)
            .map(|a| {
                let mut nb: Vec<(u8, usize)> =
                    g.neighbors(a).iter().map(|&(b, o)| (o, labels[b])).collect();
                nb.sort();
                (labels[a], nb)
            })
            .collect();
        let next = dense_rank(&keys);
        if next == labels {
            return labels;
        }
        labels = next;
    }
}

/// Serialized structure under a candidate order, for lexicographic comparison.
fn signature(g: &MolecularGraph, rank: &[usize]) -> Vec<u64> {
    let n = g.n_atoms();
    let mut by_rank = vec![0usize; n];
    for (atom, &r) in rank.iter().enumerate() {
        by_rank[r] = atom;
    }
    let mut sig = Vec::with_capacity(1 + 3 * n + 3 * g.bonds().len());
    sig.push(n as u64);
    for &atom in &by_rank {
        let a = g.atom(atom);
        sig.push(a.element.channel() as u64);
        sig.push((a.charge as i64 + 128) as u64);
        sig.push(a.explicit_h.map(|h| h as u64 + 1).unwrap_or(0));
    }
    let mut edges: Vec<(u64, u64, u64)> = g
        .bonds()
        .iter()
        .map(|b| {
            let (ra, rb) = (rank[b.a] as u64, rank[b.b] as u64);
            (ra.min(rb), ra.max(rb), b.order as u64)
        })
        .collect();
    edges.sort();
    for (a, b, o) in edges {
        sig.extend([a, b, o]);
    }
    sig
}

fn solve(g: &MolecularGraph, marks: &mut Vec<u32>, depth: u32) -> (Vec<u64>, Vec<usize>) {
    let labels = refine(g, marks);
    let n = g.n_atoms();
    let mut count = vec![0usize; n];
    for &l in &labels {
        count[l] += 1;
    }
    if count.iter().all(|&c| c <= 1) {
        return (signature(g, &labels), labels);
    }
    // branch on the first tied class
    let tied = count.iter().position(|&c| c > 1).unwrap();
    let mut best: Option<(Vec<u64>, Vec<usize>)> = None;
    for atom in 0..n {
        if labels[atom] != tied {
            continue;
        }
        let prev = marks[atom];
        marks[atom] = depth;
        let cand = solve(g, marks, depth + 1);
        marks[atom] = prev;
        if best.as_ref().map_or(true, |b| cand.0 < b.0) {
            best = Some(cand);
        }
    }
    best.unwrap()
}

/// Canonical rank per atom: `rank[a]` is atom `a`'s position in the canonical
/// order. Isomorphic graphs produce identical signatures and, written from
/// this order, identical SMILES.
pub(crate) fn canonical_rank(g: &MolecularGraph) -> Vec<usize> {
    if g.n_atoms() == 0 {
        return Vec::new();
    }
    // marks: u32::MAX = unmarked; branching assigns small depth values which
    // sort first in the initial key.
    let mut marks = vec![u32::MAX; g.n_atoms()];
    solve(g, &mut marks, 0).1
}

fn diameter(g: &MolecularGraph) -> usize {
    let n = g.n_atoms();
    let mut best = 0;
    for start in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(a) = queue.pop_front() {
            for &(b, _) in g.neighbors(a) {
                if dist[b] == usize::MAX {
                    dist[b] = dist[a] + 1;
                    queue.push_back(b);
                }
            }
        }
        best = best.max(dist.iter().filter(|d| **d != usize::MAX).copied().max().unwrap_or(0));
    }
    best
}

/// 64-bit key equal for isomorphic graphs: neighborhood-label refinement run
/// for 3·diameter rounds, then an order-independent hash of the final labels.
pub fn canonical_key(g: &MolecularGraph) -> u64 {
    let n = g.n_atoms();
    if n == 0 {
        return fnv1a64(&[0]);
    }
    let rounds = 3 * diameter(g).max(1);
    let mut labels: Vec<u64> = (0..n)
        .map(|a| {
            let (e, c, h, d, s) = atom_invariant(g, a);
            fnv1a64(&[e as u64, (c as i64 + 128) as u64, (h + 1) as u64, d as u64, s as u64])
        })
        .collect();
    for _ in 0..rounds {
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
    labels.sort_unstable();
    let mut payload = vec![n as u64, g.bonds().len() as u64];
    payload.extend(labels);
    fnv1a64(&payload)
}
