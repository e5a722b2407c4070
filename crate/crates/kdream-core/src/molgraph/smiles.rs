//! SMILES subset parser and canonical writer.
//!
//! Supported input: bare atoms C N O F P S Cl Br I, bond symbols `-` `=` `#`,
//! branches `( )`, ring closures `1`-`9` and `%nn`, bracket atoms with an
//! optional hydrogen count and formal charge. No aromatic lowercase and no
//! stereo markers; inputs must be kekulized.

use super::canon::canonical_rank;
use super::{Atom, Bond, Element, GraphError, MolecularGraph};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SmilesError {
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("ring bond {label} opened at byte {offset} was never closed")]
    UnclosedRingBond { label: u32, offset: usize },
    #[error("unknown or misplaced symbol at byte {offset}")]
    UnknownSymbol { offset: usize },
    #[error("valence violation at the atom starting at byte {offset}: total {total} > allowed {allowed}")]
    ValenceViolation {
        offset: usize,
        total: i32,
        allowed: i32,
    },
    #[error("duplicate bond closing at byte {offset}")]
    DuplicateBond { offset: usize },
    #[error("ring bond at byte {offset} would join an atom to itself")]
    SelfRingBond { offset: usize },
    #[error("empty input")]
    Empty,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    atom_offsets: Vec<usize>,
    bonds: Vec<Bond>,
    bond_pairs: std::collections::HashSet<(usize, usize)>,
    prev: Option<usize>,
    pending_bond: Option<u8>,
    branch_stack: Vec<(Option<usize>, usize)>,
    ring_open: HashMap<u32, (usize, Option<u8>, usize)>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            bytes: text.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            atom_offsets: Vec::new(),
            bonds: Vec::new(),
            bond_pairs: std::collections::HashSet::new(),
            prev: None,
            pending_bond: None,
            branch_stack: Vec::new(),
            ring_open: HashMap::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn push_atom(&mut self, atom: Atom, offset: usize) {
        let id = self.atoms.len();
        self.atoms.push(atom);
        self.atom_offsets.push(offset);
        if let Some(p) = self.prev {
            let order = self.pending_bond.take().unwrap_or(1);
            self.bond_pairs.insert((p.min(id), p.max(id)));
            self.bonds.push(Bond { a: p, b: id, order });
        }
        self.prev = Some(id);
    }

    fn close_ring(&mut self, label: u32, offset: usize) -> Result<(), SmilesError> {
        let current = self.prev.ok_or(SmilesError::UnknownSymbol { offset })?;
        match self.ring_open.remove(&label) {
            Some((other, open_order, _)) => {
                let close_order = self.pending_bond.take();
                let order = match (open_order, close_order) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(SmilesError::UnknownSymbol { offset })
                    }
                    (Some(a), _) => a,
                    (None, Some(b)) => b,
                    (None, None) => 1,
                };
                if other == current {
                    return Err(SmilesError::SelfRingBond { offset });
                }
                let key = (other.min(current), other.max(current));
                if !self.bond_pairs.insert(key) {
                    return Err(SmilesError::DuplicateBond { offset });
                }
                self.bonds.push(Bond {
                    a: other,
                    b: current,
                    order,
                });
            }
            None => {
                let order = self.pending_bond.take();
                self.ring_open.insert(label, (current, order, offset));
            }
        }
        Ok(())
    }

    fn parse_bare_element(&mut self) -> Option<(Element, usize)> {
        let offset = self.pos;
        let rest = &self.bytes[self.pos..];
        for (sym, elem) in [
            ("Cl", Element::Cl),
            ("Br", Element::Br),
            ("C", Element::C),
            ("N", Element::N),
            ("O", Element::O),
            ("F", Element::F),
            ("P", Element::P),
            ("S", Element::S),
            ("I", Element::I),
        ] {
            if rest.starts_with(sym.as_bytes()) {
                self.pos += sym.len();
                return Some((elem, offset));
            }
        }
        None
    }

    fn parse_number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().map_or(false, |b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }

    fn parse_bracket(&mut self) -> Result<(), SmilesError> {
        let offset = self.pos;
        self.pos += 1; // consume '['
        let (element, _) = self
            .parse_bare_element()
            .ok_or(SmilesError::UnknownSymbol { offset: self.pos })?;
        let mut atom = Atom::new(element);
        atom.explicit_h = Some(0);
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let count = self.parse_number().unwrap_or(1);
            if count > 8 {
                return Err(SmilesError::UnknownSymbol { offset: self.pos });
            }
            atom.explicit_h = Some(count as u8);
        }
        match self.peek() {
            Some(sign @ (b'+' | b'-')) => {
                let mut count = 0i32;
                while self.peek() == Some(sign) {
                    count += 1;
                    self.pos += 1;
                }
                if count == 1 {
                    if let Some(n) = self.parse_number() {
                        count = n as i32;
                    }
                }
                if count > 8 {
                    return Err(SmilesError::UnknownSymbol { offset: self.pos });
                }
                atom.charge = if sign == b'+' { count as i8 } else { -(count as i8) };
            }
            _ => {}
        }
        if self.peek() != Some(b']') {
            return Err(SmilesError::UnknownSymbol { offset: self.pos });
        }
        self.pos += 1;
        self.push_atom(atom, offset);
        Ok(())
    }

    fn run(mut self, lenient: bool) -> Result<MolecularGraph, SmilesError> {
        while let Some(b) = self.peek() {
            let offset = self.pos;
            match b {
                b'C' | b'N' | b'O' | b'F' | b'P' | b'S' | b'I' | b'B' => {
                    let (elem, off) = self
                        .parse_bare_element()
                        .ok_or(SmilesError::UnknownSymbol { offset })?;
                    self.push_atom(Atom::new(elem), off);
                }
                b'[' => self.parse_bracket()?,
                b'-' | b'=' | b'#' => {
                    if self.pending_bond.is_some() || self.prev.is_none() {
                        return Err(SmilesError::UnknownSymbol { offset });
                    }
                    self.pending_bond = Some(match b {
                        b'-' => 1,
                        b'=' => 2,
                        _ => 3,
                    });
                    self.pos += 1;
                }
                b'(' => {
                    if self.prev.is_none() {
                        return Err(SmilesError::UnbalancedParenthesis { offset });
                    }
                    self.branch_stack.push((self.prev, offset));
                    self.pos += 1;
                }
                b')' => {
                    let (restored, _) = self
                        .branch_stack
                        .pop()
                        .ok_or(SmilesError::UnbalancedParenthesis { offset })?;
                    if self.pending_bond.is_some() {
                        return Err(SmilesError::UnknownSymbol { offset });
                    }
                    self.prev = restored;
                    self.pos += 1;
                }
                b'1'..=b'9' => {
                    self.pos += 1;
                    self.close_ring((b - b'0') as u32, offset)?;
                }
                b'%' => {
                    self.pos += 1;
                    let d1 = self.peek().filter(u8::is_ascii_digit).ok_or(
                        SmilesError::UnknownSymbol { offset },
                    )?;
                    self.pos += 1;
                    let d2 = self.peek().filter(u8::is_ascii_digit).ok_or(
                        SmilesError::UnknownSymbol { offset },
                    )?;
                    self.pos += 1;
                    let label = ((d1 - b'0') as u32) * 10 + (d2 - b'0') as u32;
                    self.close_ring(label, offset)?;
                }
                _ => return Err(SmilesError::UnknownSymbol { offset }),
            }
        }
        if let Some((_, offset)) = self.branch_stack.last() {
            return Err(SmilesError::UnbalancedParenthesis { offset: *offset });
        }
        if let Some((&label, &(_, _, offset))) = self.ring_open.iter().min_by_key(|(_, v)| v.2) {
            return Err(SmilesError::UnclosedRingBond { label, offset });
        }
        if self.pending_bond.is_some() {
            return Err(SmilesError::UnknownSymbol {
                offset: self.bytes.len().saturating_sub(1),
            });
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::Empty);
        }
        let offsets = self.atom_offsets.clone();
        let build = if lenient {
            MolecularGraph::new_lenient
        } else {
            MolecularGraph::new
        };
        build(self.atoms, self.bonds).map_err(|e| match e {
            GraphError::Valence {
                atom,
                total,
                allowed,
                ..
            } => SmilesError::ValenceViolation {
                offset: offsets[atom],
                total,
                allowed,
            },
            // structural errors are caught with offsets during parsing
            _ => SmilesError::UnknownSymbol { offset: 0 },
        })
    }
}

pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(SmilesError::Empty);
    }
    Parser::new(trimmed).run(false)
}

/// Parse without rejecting valence violations. Sampled molecules are not
/// guaranteed chemically valid, and validity is a metric downstream code
/// measures rather than a parse precondition.
pub fn parse_smiles_lenient(text: &str) -> Result<MolecularGraph, SmilesError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(SmilesError::Empty);
    }
    Parser::new(trimmed).run(true)
}

fn bond_symbol(order: u8) -> &'static str {
    match order {
        2 => "=",
        3 => "#",
        _ => "",
    }
}

fn atom_token(atom: &Atom) -> String {
    if atom.charge == 0 && atom.explicit_h.is_none() {
        return atom.element.symbol().to_string();
    }
    let mut s = String::from("[");
    s.push_str(atom.element.symbol());
    if let Some(h) = atom.explicit_h {
        if h > 0 {
            s.push('H');
            if h > 1 {
                s.push_str(&h.to_string());
            }
        }
    }
    match atom.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

/// Canonical SMILES writer. Output is deterministic under any input atom
/// ordering and re-parses to an isomorphic graph. Disconnected graphs are
/// written as `.`-separated components (outside the parser subset).
pub fn write_smiles(g: &MolecularGraph) -> String {
    if g.n_atoms() == 0 {
        return String::new();
    }
    let rank = canonical_rank(g);
    let mut visited = vec![false; g.n_atoms()];
    let mut parts = Vec::new();
    // component roots in canonical order
    let mut roots: Vec<usize> = (0..g.n_atoms()).collect();
    roots.sort_by_key(|&a| rank[a]);
    let mut writer = Writer {
        g,
        rank: &rank,
        ring_edges: find_ring_edges(g, &rank),
        ring_numbers: HashMap::new(),
        free_numbers: (1..100).collect(),
        out: String::new(),
    };
    writer.free_numbers.reverse(); // pop from the small end
    for root in roots {
        if visited[root] {
            continue;
        }
        if !writer.out.is_empty() {
            writer.out.push('.');
        }
        writer.emit(root, usize::MAX, &mut visited);
    }
    parts.push(writer.out);
    parts.concat()
}

/// Non-tree edges under the same canonical-order recursive traversal the
/// writer uses, so both passes agree on which edges become ring closures.
fn find_ring_edges(g: &MolecularGraph, rank: &[usize]) -> std::collections::HashSet<(usize, usize)> {
    fn walk(
        g: &MolecularGraph,
        rank: &[usize],
        a: usize,
        parent: usize,
        visited: &mut [bool],
        ring: &mut std::collections::HashSet<(usize, usize)>,
    ) {
        visited[a] = true;
        let mut nbs: Vec<usize> = g.neighbors(a).iter().map(|(b, _)| *b).collect();
        nbs.sort_by_key(|&b| rank[b]);
        for b in nbs {
            if b == parent {
                continue;
            }
            if visited[b] {
                ring.insert((a.min(b), a.max(b)));
            } else {
                walk(g, rank, b, a, visited, ring);
            }
        }
    }
    let mut visited = vec![false; g.n_atoms()];
    let mut ring = std::collections::HashSet::new();
    let mut roots: Vec<usize> = (0..g.n_atoms()).collect();
    roots.sort_by_key(|&a| rank[a]);
    for root in roots {
        if !visited[root] {
            walk(g, rank, root, usize::MAX, &mut visited, &mut ring);
        }
    }
    ring
}

struct Writer<'a> {
    g: &'a MolecularGraph,
    rank: &'a [usize],
    ring_edges: std::collections::HashSet<(usize, usize)>,
    ring_numbers: HashMap<(usize, usize), u32>,
    free_numbers: Vec<u32>,
    out: String,
}

impl Writer<'_> {
    fn push_ring_number(&mut self, n: u32) {
        if n < 10 {
            self.out.push_str(&n.to_string());
        } else {
            self.out.push_str(&format!("%{n:02}"));
        }
    }

    fn emit(&mut self, atom: usize, parent: usize, visited: &mut Vec<bool>) {
        visited[atom] = true;
        self.out.push_str(&atom_token(self.g.atom(atom)));

        // ring closure tokens, partners in canonical order
        let mut ring_partners: Vec<(usize, u8)> = self
            .g
            .neighbors(atom)
            .iter()
            .filter(|(b, _)| {
                let key = (atom.min(*b), atom.max(*b));
                self.ring_edges.contains(&key)
            })
            .map(|&(b, o)| (b, o))
            .collect();
        ring_partners.sort_by_key(|&(b, _)| self.rank[b]);
        for (partner, order) in ring_partners {
            let key = (atom.min(partner), atom.max(partner));
            match self.ring_numbers.get(&key).copied() {
                Some(n) => {
                    self.out.push_str(bond_symbol(order));
                    self.push_ring_number(n);
                    self.ring_numbers.remove(&key);
                    self.free_numbers.push(n);
                    // keep allocation smallest-first
                    self.free_numbers.sort_unstable_by(|a, b| b.cmp(a));
                }
                None => {
                    let n = self.free_numbers.pop().expect("ring number pool exhausted");
                    self.ring_numbers.insert(key, n);
                    self.out.push_str(bond_symbol(order));
                    self.push_ring_number(n);
                }
            }
        }

        // tree children in canonical order
        let mut children: Vec<(usize, u8)> = self
            .g
            .neighbors(atom)
            .iter()
            .filter(|&&(b, _)| {
                b != parent
                    && !visited[b]
                    && !self.ring_edges.contains(&(atom.min(b), atom.max(b)))
            })
            .copied()
            .collect();
        children.sort_by_key(|&(b, _)| self.rank[b]);
        let last = children.len().saturating_sub(1);
        for (i, (child, order)) in children.into_iter().enumerate() {
            if visited[child] {
                continue; // reached through a shorter path meanwhile
            }
            if i < last {
                self.out.push('(');
                self.out.push_str(bond_symbol(order));
                self.emit(child, atom, visited);
                self.out.push(')');
            } else {
                self.out.push_str(bond_symbol(order));
                self.emit(child, atom, visited);
            }
        }
    }
}
