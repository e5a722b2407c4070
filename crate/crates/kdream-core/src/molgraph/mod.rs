//! Discrete molecular graphs: heavy atoms, explicit bond orders, validity
//! semantics, canonical identity and fingerprints.
//!
//! The supported alphabet is the ZINC heavy-atom set (C, N, O, F, P, S, Cl,
//! Br, I) with single/double/triple bonds. Inputs must be kekulized; there is
//! no aromaticity model. Charges enter via bracket atoms and shift the
//! allowed valence by their signed value.

mod canon;
mod fingerprint;
pub mod iso;
mod smiles;

pub use canon::canonical_key;
pub use fingerprint::{fingerprint, tanimoto, Fingerprint, FingerprintError, DEFAULT_BITS};
pub use smiles::{parse_smiles, parse_smiles_lenient, write_smiles, SmilesError};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

pub const ELEMENTS: [Element; 9] = [
    Element::C,
    Element::N,
    Element::O,
    Element::F,
    Element::P,
    Element::S,
    Element::Cl,
    Element::Br,
    Element::I,
];

impl Element {
    pub fn symbol(&self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        ELEMENTS.iter().copied().find(|e| e.symbol() == s)
    }

    /// Maximum valence over common oxidation states.
    pub fn max_valence(&self) -> i32 {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::F => 1,
            Element::P => 5,
            Element::S => 6,
            Element::Cl => 1,
            Element::Br => 1,
            Element::I => 1,
        }
    }

    /// Channel index used by the diffusion state encoding.
    pub fn channel(&self) -> usize {
        ELEMENTS.iter().position(|e| e == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    /// Hydrogen count fixed by a bracket atom; `None` means implicit.
    pub explicit_h: Option<u8>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            charge: 0,
            explicit_h: None,
        }
    }

    /// Max valence shifted by the formal charge, floored at zero.
    pub fn allowed_valence(&self) -> i32 {
        (self.element.max_valence() + self.charge as i32).max(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: u8,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("bond ({a}, {b}) endpoint out of range for {atoms} atoms")]
    EndpointOutOfRange { a: usize, b: usize, atoms: usize },
    #[error("bond ({a}, {b}) joins an atom to itself")]
    SelfBond { a: usize, b: usize },
    #[error("more than one bond between atoms {a} and {b}")]
    DuplicateBond { a: usize, b: usize },
    #[error("bond order {order} out of range 1..=3 on ({a}, {b})")]
    BadOrder { a: usize, b: usize, order: u8 },
    #[error("valence exceeded at atom {atom} ({symbol}): total {total} > allowed {allowed}")]
    Valence {
        atom: usize,
        symbol: &'static str,
        total: i32,
        allowed: i32,
    },
}

/// Reason a graph fails [`is_valid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidReason {
    Empty,
    Valence { atom: usize },
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Immutable after construction; all operations are pure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, u8)>>,
}

impl MolecularGraph {
    /// Structurally and chemically checked construction: rejects valence
    /// violations. Parsing uses this path.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        let g = Self::new_lenient(atoms, bonds)?;
        for atom in 0..g.atoms.len() {
            let total = g.valence_used(atom);
            let allowed = g.atoms[atom].allowed_valence();
            if total > allowed {
                return Err(GraphError::Valence {
                    atom,
                    symbol: g.atoms[atom].element.symbol(),
                    total,
                    allowed,
                });
            }
        }
        Ok(g)
    }

    /// Structurally checked construction that permits valence violations;
    /// quantized diffusion output uses this path and [`is_valid`] is the
    /// downstream metric.
    pub fn new_lenient(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        let n = atoms.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::new();
        for bond in &bonds {
            let (a, b) = (bond.a, bond.b);
            if a >= n || b >= n {
                return Err(GraphError::EndpointOutOfRange { a, b, atoms: n });
            }
            if a == b {
                return Err(GraphError::SelfBond { a, b });
            }
            if !(1..=3).contains(&bond.order) {
                return Err(GraphError::BadOrder {
                    a,
                    b,
                    order: bond.order,
                });
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(GraphError::DuplicateBond { a, b });
            }
            adjacency[a].push((b, bond.order));
            adjacency[b].push((a, bond.order));
        }
        Ok(MolecularGraph {
            atoms,
            bonds,
            adjacency,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, u8)] {
        &self.adjacency[i]
    }

    pub fn bond_order(&self, a: usize, b: usize) -> u8 {
        self.adjacency[a]
            .iter()
            .find(|(n, _)| *n == b)
            .map(|(_, o)| *o)
            .unwrap_or(0)
    }

    /// Sum of bond orders plus any bracket-fixed hydrogens.
    pub fn valence_used(&self, atom: usize) -> i32 {
        let bonds: i32 = self.adjacency[atom].iter().map(|(_, o)| *o as i32).sum();
        bonds + self.atoms[atom].explicit_h.unwrap_or(0) as i32
    }

    /// Hydrogens implied by the valence model. Bracket atoms have exactly
    /// their stated count.
    pub fn implicit_hydrogens(&self, atom: usize) -> i32 {
        match self.atoms[atom].explicit_h {
            Some(h) => h as i32,
            None => (self.atoms[atom].allowed_valence() - self.valence_used(atom)).max(0),
        }
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(a) = stack.pop() {
            for &(b, _) in &self.adjacency[a] {
                if !seen[b] {
                    seen[b] = true;
                    count += 1;
                    stack.push(b);
                }
            }
        }
        count == self.atoms.len()
    }

    /// The atom indices of the largest connected component (ties broken by
    /// smallest contained index).
    pub fn largest_component(&self) -> Vec<usize> {
        let n = self.atoms.len();
        let mut comp = vec![usize::MAX; n];
        let mut sizes = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut size = 0;
            let mut stack = vec![start];
            comp[start] = id;
            while let Some(a) = stack.pop() {
                size += 1;
                for &(b, _) in &self.adjacency[a] {
                    if comp[b] == usize::MAX {
                        comp[b] = id;
                        stack.push(b);
                    }
                }
            }
            sizes.push(size);
        }
        let best = sizes
            .iter()
            .enumerate()
            .max_by_key(|(id, s)| (**s, std::cmp::Reverse(*id)))
            .map(|(id, _)| id)
            .unwrap_or(0);
        (0..n).filter(|&a| comp[a] == best).collect()
    }

    /// Induced subgraph on the given (sorted, deduplicated) atom indices.
    pub fn induced(&self, keep: &[usize]) -> MolecularGraph {
        let mut remap = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let atoms = keep.iter().map(|&i| self.atoms[i]).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| remap[b.a] != usize::MAX && remap[b.b] != usize::MAX)
            .map(|b| Bond {
                a: remap[b.a],
                b: remap[b.b],
                order: b.order,
            })
            .collect();
        MolecularGraph::new_lenient(atoms, bonds).expect("induced subgraph is structurally sound")
    }
}

/// Validity metric: valence table satisfied and a single connected component.
pub fn is_valid(g: &MolecularGraph) -> Validity {
    if g.n_atoms() == 0 {
        return Validity::Invalid(InvalidReason::Empty);
    }
    for atom in 0..g.n_atoms() {
        if g.valence_used(atom) > g.atom(atom).allowed_valence() {
            return Validity::Invalid(InvalidReason::Valence { atom });
        }
    }
    if !g.is_connected() {
        return Validity::Invalid(InvalidReason::Disconnected);
    }
    Validity::Valid
}

/// Deterministic random valid molecule, used by tests and corpus tooling.
/// Builds a random tree over `n_atoms` heavy atoms, then upgrades bond orders
/// and adds ring-closing edges while the valence budget allows.
pub fn random_molecule<R: rand::Rng>(rng: &mut R, n_atoms: usize) -> MolecularGraph {
    use rand::seq::SliceRandom;
    assert!(n_atoms >= 1);
    let palette = [
        Element::C,
        Element::C,
        Element::C,
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::P,
        Element::F,
        Element::Cl,
    ];
    let mut atoms: Vec<Atom> = vec![Atom::new(Element::C)];
    let mut bonds: Vec<Bond> = Vec::new();
    let mut used = vec![0i32];
    let free = |used: &[i32], atoms: &[Atom], i: usize| atoms[i].allowed_valence() - used[i];

    while atoms.len() < n_atoms {
        let b = atoms.len();
        let candidates: Vec<usize> = (0..b).filter(|&a| free(&used, &atoms, a) >= 1).collect();
        let Some(&a) = candidates.choose(rng) else {
            break; // everything saturated, stop growing
        };
        atoms.push(Atom::new(*palette.choose(rng).unwrap()));
        used.push(0);
        bonds.push(Bond { a, b, order: 1 });
        used[a] += 1;
        used[b] += 1;
    }
    let n_atoms = atoms.len();
    // upgrade some bonds
    for bond in bonds.iter_mut() {
        if rng.gen_bool(0.2) {
            let room = free(&used, &atoms, bond.a).min(free(&used, &atoms, bond.b));
            if room >= 1 && bond.order < 3 {
                let bump = 1 + rng.gen_range(0..=(room.min(2) - 1)) as u8;
                let bump = bump.min(3 - bond.order);
                bond.order += bump;
                used[bond.a] += bump as i32;
                used[bond.b] += bump as i32;
            }
        }
    }
    // a few ring closures
    let existing: std::collections::HashSet<(usize, usize)> = bonds
        .iter()
        .map(|b| (b.a.min(b.b), b.a.max(b.b)))
        .collect();
    for _ in 0..n_atoms / 3 {
        let a = rng.gen_range(0..n_atoms);
        let b = rng.gen_range(0..n_atoms);
        let key = (a.min(b), a.max(b));
        if a == b || existing.contains(&key) {
            continue;
        }
        if free(&used, &atoms, a) >= 1 && free(&used, &atoms, b) >= 1 {
            bonds.push(Bond { a, b, order: 1 });
            used[a] += 1;
            used[b] += 1;
        }
    }
    // dedupe any closure collisions introduced above
    let mut seen = std::collections::HashSet::new();
    bonds.retain(|b| seen.insert((b.a.min(b.b), b.a.max(b.b))));
    MolecularGraph::new(atoms, bonds).expect("construction respects valence budget")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn carbon_with_four_single_bonds_is_valid() {
        let atoms = vec![
            Atom::new(Element::C),
            Atom::new(Element::C),
            Atom::new(Element::C),
            Atom::new(Element::C),
            Atom::new(Element::C),
        ];
        let bonds = (1..5).map(|b| Bond { a: 0, b, order: 1 }).collect();
        let g = MolecularGraph::new(atoms, bonds).unwrap();
        assert!(is_valid(&g).is_valid());
    }

    #[test]
    fn uncharged_nitrogen_with_order_four_is_invalid() {
        let atoms = vec![
            Atom::new(Element::N),
            Atom::new(Element::C),
            Atom::new(Element::C),
        ];
        let bonds = vec![
            Bond { a: 0, b: 1, order: 2 },
            Bond { a: 0, b: 2, order: 2 },
        ];
        let g = MolecularGraph::new_lenient(atoms, bonds).unwrap();
        assert_eq!(
            is_valid(&g),
            Validity::Invalid(InvalidReason::Valence { atom: 0 })
        );
    }

    #[test]
    fn disconnected_fragments_are_invalid() {
        let atoms = vec![Atom::new(Element::C), Atom::new(Element::C)];
        let g = MolecularGraph::new(atoms, vec![]).unwrap();
        assert_eq!(is_valid(&g), Validity::Invalid(InvalidReason::Disconnected));
    }

    #[test]
    fn charged_nitrogen_gains_a_valence() {
        let mut n = Atom::new(Element::N);
        n.charge = 1;
        let atoms = vec![n, Atom::new(Element::C), Atom::new(Element::C)];
        let bonds = vec![
            Bond { a: 0, b: 1, order: 2 },
            Bond { a: 0, b: 2, order: 2 },
        ];
        let g = MolecularGraph::new(atoms, bonds).unwrap();
        assert!(is_valid(&g).is_valid());
    }

    #[test]
    fn duplicate_bond_rejected() {
        let atoms = vec![Atom::new(Element::C), Atom::new(Element::C)];
        let bonds = vec![
            Bond { a: 0, b: 1, order: 1 },
            Bond { a: 1, b: 0, order: 2 },
        ];
        assert!(matches!(
            MolecularGraph::new(atoms, bonds),
            Err(GraphError::DuplicateBond { .. })
        ));
    }

    /// Exhaustive agreement with direct valence summation on all connected
    /// graphs up to 6 atoms over a reduced palette.
    #[test]
    fn validity_agrees_with_brute_force_enumeration() {
        let palette = [Element::C, Element::N, Element::O];
        let mut checked = 0usize;
        for n in 1..=4usize {
            // all edge subsets of the complete graph with orders 1..=2
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
                .collect();
            let m = pairs.len();
            for atom_code in 0..3usize.pow(n as u32) {
                let atoms: Vec<Atom> = (0..n)
                    .map(|i| Atom::new(palette[(atom_code / 3usize.pow(i as u32)) % 3]))
                    .collect();
                for edge_code in 0..3usize.pow(m as u32) {
                    let mut bonds = Vec::new();
                    for (i, &(a, b)) in pairs.iter().enumerate() {
                        let o = (edge_code / 3usize.pow(i as u32)) % 3;
                        if o > 0 {
                            bonds.push(Bond { a, b, order: o as u8 });
                        }
                    }
                    let g = MolecularGraph::new_lenient(atoms.clone(), bonds.clone()).unwrap();
                    let got = is_valid(&g).is_valid();

                    // oracle: straight loops, no shared helpers
                    let mut ok = n > 0;
                    for a in 0..n {
                        let mut total = 0i32;
                        for bond in &bonds {
                            if bond.a == a || bond.b == a {
                                total += bond.order as i32;
                            }
                        }
                        if total > atoms[a].element.max_valence() {
                            ok = false;
                        }
                    }
                    if ok {
                        // connectivity by repeated expansion
                        let mut reach = vec![false; n];
                        reach[0] = true;
                        loop {
                            let mut grew = false;
                            for bond in &bonds {
                                if reach[bond.a] != reach[bond.b] {
                                    reach[bond.a] = true;
                                    reach[bond.b] = true;
                                    grew = true;
                                }
                            }
                            if !grew {
                                break;
                            }
                        }
                        ok = reach.iter().all(|r| *r);
                    }
                    assert_eq!(got, ok, "n={n} atoms={atoms:?} bonds={bonds:?}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 10_000);
    }

    #[test]
    fn random_molecules_are_valid() {
        let mut rng = stream_rng(30, "molgraph-test", 0);
        for i in 0..200 {
            let g = random_molecule(&mut rng, 2 + i % 12);
            for atom in 0..g.n_atoms() {
                assert!(g.valence_used(atom) <= g.atom(atom).allowed_valence());
            }
        }
    }

    #[test]
    fn largest_component_keeps_biggest_fragment() {
        let atoms = vec![
            Atom::new(Element::C),
            Atom::new(Element::C),
            Atom::new(Element::C),
            Atom::new(Element::O),
        ];
        let bonds = vec![
            Bond { a: 0, b: 1, order: 1 },
            Bond { a: 1, b: 2, order: 1 },
        ];
        let g = MolecularGraph::new(atoms, bonds).unwrap();
        assert_eq!(g.largest_component(), vec![0, 1, 2]);
        let sub = g.induced(&g.largest_component());
        assert!(is_valid(&sub).is_valid());
    }
}
