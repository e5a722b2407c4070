//! Backtracking graph isomorphism (VF2-style candidate pruning).
//!
//! Independent of the canonicalization code on purpose: round-trip and
//! canonical-key tests use this as their oracle.

use super::MolecularGraph;

fn atom_compatible(a: &MolecularGraph, i: usize, b: &MolecularGraph, j: usize) -> bool {
    let (x, y) = (a.atom(i), b.atom(j));
    x.element == y.element
        && x.charge == y.charge
        && x.explicit_h == y.explicit_h
        && a.neighbors(i).len() == b.neighbors(j).len()
}

/// True iff the two graphs are isomorphic respecting atom labels and bond
/// orders. Intended for small graphs (tests use ≤ 30 atoms).
pub fn isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    let n = a.n_atoms();
    if n != b.n_atoms() || a.bonds().len() != b.bonds().len() {
        return false;
    }
    if n == 0 {
        return true;
    }
    let mut mapping = vec![usize::MAX; n]; // a -> b
    let mut used = vec![false; n];
    extend(a, b, &mut mapping, &mut used, 0)
}

fn extend(
    a: &MolecularGraph,
    b: &MolecularGraph,
    mapping: &mut Vec<usize>,
    used: &mut Vec<bool>,
    depth: usize,
) -> bool {
    let n = a.n_atoms();
    if depth == n {
        return true;
    }
    // next atom of `a`: prefer one adjacent to the mapped frontier
    let next = (0..n)
        .filter(|&i| mapping[i] == usize::MAX)
        .min_by_key(|&i| {
            let frontier = a
                .neighbors(i)
                .iter()
                .filter(|(nb, _)| mapping[*nb] != usize::MAX)
                .count();
            (std::cmp::Reverse(frontier), i)
        })
        .unwrap();

    for cand in 0..n {
        if used[cand] || !atom_compatible(a, next, b, cand) {
            continue;
        }
        // every mapped neighbor must correspond with equal bond order
        let consistent = a.neighbors(next).iter().all(|&(nb, order)| {
            if mapping[nb] == usize::MAX {
                true
            } else {
                b.bond_order(cand, mapping[nb]) == order
            }
        }) && b.neighbors(cand).iter().all(|&(nb, order)| {
            match mapping.iter().position(|&m| m == nb) {
                Some(src) => a.bond_order(next, src) == order,
                None => true,
            }
        });
        if !consistent {
            continue;
        }
        mapping[next] = cand;
        used[cand] = true;
        if extend(a, b, mapping, used, depth + 1) {
            return true;
        }
        mapping[next] = usize::MAX;
        used[cand] = false;
    }
    false
}
