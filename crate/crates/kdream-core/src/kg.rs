//! Directed knowledge-graph triples: ingestion, normalization, splitting.
//!
//! Triple files are UTF-8 TSV, one `head<TAB>relation<TAB>tail` per line,
//! `#` comments and blank lines ignored. An optional role file
//! (`entity<TAB>role`, role in {drug, target, other}) tags entity subsets.

use rand::seq::SliceRandom;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine {
        path: String,
        line: usize,
        found: usize,
    },
    #[error("{path}: no triples found")]
    Empty { path: String },
    #[error("{path}:{line}: unknown role {role:?} (expected drug, target or other)")]
    UnknownRole {
        path: String,
        line: usize,
        role: String,
    },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
}

/// Interned directed triple (head, relation, tail).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Drug,
    Target,
    Other,
}

/// Immutable after construction; safe for unlimited concurrent readers.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    pub triples: Vec<Triple>,
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    pub drug_entities: BTreeSet<usize>,
    pub target_entities: BTreeSet<usize>,
}

/// Counts reported by [`KnowledgeGraph::normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NormalizeReport {
    pub duplicates_removed: usize,
    pub reverses_removed: usize,
}

impl fmt::Display for NormalizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "removed {} duplicate and {} reversed triples",
            self.duplicates_removed, self.reverses_removed
        )
    }
}

impl KnowledgeGraph {
    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entity_names[id]
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relation_names[id]
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    fn intern_entity(&mut self, name: &str) -> usize {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = self.entity_names.len();
        self.entity_names.push(name.to_string());
        self.entity_index.insert(name.to_string(), id);
        id
    }

    fn intern_relation(&mut self, name: &str) -> usize {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relation_names.len();
        self.relation_names.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        id
    }

    /// Parse triples from TSV text. Vocabularies are built in first-seen
    /// order; triples keep file order (duplicates included until
    /// [`normalize`](Self::normalize)).
    pub fn from_tsv(text: &str, origin: &str) -> Result<Self, KgError> {
        let mut kg = KnowledgeGraph::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(KgError::MalformedLine {
                    path: origin.to_string(),
                    line: lineno + 1,
                    found: fields.iter().filter(|f| !f.trim().is_empty()).count(),
                });
            }
            let head = kg.intern_entity(fields[0].trim());
            let relation = kg.intern_relation(fields[1].trim());
            let tail = kg.intern_entity(fields[2].trim());
            kg.triples.push(Triple {
                head,
                relation,
                tail,
            });
        }
        if kg.triples.is_empty() {
            return Err(KgError::Empty {
                path: origin.to_string(),
            });
        }
        Ok(kg)
    }

    pub fn load(path: &Path) -> Result<Self, KgError> {
        let text = std::fs::read_to_string(path).map_err(|source| KgError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text, &path.display().to_string())
    }

    /// Attach drug/target roles from `entity<TAB>role` TSV text. Entities not
    /// present in the vocabulary are ignored.
    pub fn apply_roles(&mut self, text: &str, origin: &str) -> Result<(), KgError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(KgError::MalformedLine {
                    path: origin.to_string(),
                    line: lineno + 1,
                    found: fields.len(),
                });
            }
            let role = match fields[1].trim() {
                "drug" => Role::Drug,
                "target" => Role::Target,
                "other" => Role::Other,
                other => {
                    return Err(KgError::UnknownRole {
                        path: origin.to_string(),
                        line: lineno + 1,
                        role: other.to_string(),
                    })
                }
            };
            if let Some(id) = self.entity_id(fields[0].trim()) {
                match role {
                    Role::Drug => {
                        self.drug_entities.insert(id);
                    }
                    Role::Target => {
                        self.target_entities.insert(id);
                    }
                    Role::Other => {}
                }
            }
        }
        Ok(())
    }

    pub fn load_roles(&mut self, path: &Path) -> Result<(), KgError> {
        let text = std::fs::read_to_string(path).map_err(|source| KgError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_roles(&text, &path.display().to_string())
    }

    /// Remove duplicate triples and, for each pair {(s,r,o), (o,r,s)} with the
    /// same relation, the later occurrence. First occurrence in input order is
    /// the kept direction. Idempotent.
    pub fn normalize(&self) -> (KnowledgeGraph, NormalizeReport) {
        let mut seen: HashSet<Triple> = HashSet::new();
        let mut kept = Vec::with_capacity(self.triples.len());
        let mut report = NormalizeReport::default();
        for t in &self.triples {
            if seen.contains(t) {
                report.duplicates_removed += 1;
                continue;
            }
            let reverse = Triple {
                head: t.tail,
                relation: t.relation,
                tail: t.head,
            };
            // Self-loops are their own reverse; keep them.
            if t.head != t.tail && seen.contains(&reverse) {
                report.reverses_removed += 1;
                continue;
            }
            seen.insert(*t);
            kept.push(*t);
        }
        let mut out = self.clone();
        out.triples = kept;
        (out, report)
    }

    /// Deterministic train/valid/test split. Triples whose entities or
    /// relation would otherwise be unseen in train are reassigned to train.
    pub fn split(
        &self,
        ratios: (f64, f64, f64),
        seed: u64,
    ) -> Result<(KnowledgeGraph, KnowledgeGraph, KnowledgeGraph), KgError> {
        let (a, b, c) = ratios;
        if !(a >= 0.0 && b >= 0.0 && c >= 0.0 && a > 0.0 && (a + b + c - 1.0).abs() <= 1e-9) {
            return Err(KgError::BadRatios([a, b, c]));
        }
        let mut order: Vec<usize> = (0..self.triples.len()).collect();
        let mut rng = stream_rng(seed, "kg-split", 0);
        order.shuffle(&mut rng);

        let n = self.triples.len();
        let n_valid = (b * n as f64).round() as usize;
        let n_test = (c * n as f64).round() as usize;
        let n_train = n.saturating_sub(n_valid + n_test);

        let mut train: Vec<Triple> = order[..n_train].iter().map(|&i| self.triples[i]).collect();
        let mut valid: Vec<Triple> = Vec::new();
        let mut test: Vec<Triple> = Vec::new();

        let mut train_entities: HashSet<usize> = HashSet::new();
        let mut train_relations: HashSet<usize> = HashSet::new();
        for t in &train {
            train_entities.insert(t.head);
            train_entities.insert(t.tail);
            train_relations.insert(t.relation);
        }
        for (slot, idx_range) in [
            (&mut valid, n_train..n_train + n_valid),
            (&mut test, n_train + n_valid..n),
        ] {
            for &i in &order[idx_range] {
                let t = self.triples[i];
                if train_entities.contains(&t.head)
                    && train_entities.contains(&t.tail)
                    && train_relations.contains(&t.relation)
                {
                    slot.push(t);
                } else {
                    train_entities.insert(t.head);
                    train_entities.insert(t.tail);
                    train_relations.insert(t.relation);
                    train.push(t);
                }
            }
        }

        let mk = |triples: Vec<Triple>| {
            let mut kg = self.clone();
            kg.triples = triples;
            kg
        };
        Ok((mk(train), mk(valid), mk(test)))
    }

    /// Serialize back to triple TSV (names, not indices).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.entity_names[t.head], self.relation_names[t.relation], self.entity_names[t.tail]
            ));
        }
        out
    }
}
