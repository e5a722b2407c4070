//! Translational knowledge-graph embeddings: TransE training under the
//! stochastic local closed-world assumption, filtered link-prediction
//! evaluation, and the `KDRM` binary embedding format.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::kg::{KnowledgeGraph, Triple};
use crate::rng::stream_rng;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"KDRM";
pub const EMBEDDING_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("entity or relation id out of range: triple ({head}, {relation}, {tail}) vs {entities} entities / {relations} relations")]
    IdOutOfRange {
        head: usize,
        relation: usize,
        tail: usize,
        entities: usize,
        relations: usize,
    },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("embedding file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad embedding file: {0}")]
    BadFile(String),
}

/// Entity and relation vectors of dimension `dim`. Entity rows are kept at
/// unit L2 norm by training. Values are stored as f32, matching the on-disk
/// format, so save/load round trips are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    entities: Vec<f32>,
    relations: Vec<f32>,
}

impl EmbeddingTable {
    pub fn zeros(entity_names: Vec<String>, relation_names: Vec<String>, dim: usize) -> Self {
        let (ne, nr) = (entity_names.len(), relation_names.len());
        EmbeddingTable {
            dim,
            entity_names,
            relation_names,
            entities: vec![0.0; ne * dim],
            relations: vec![0.0; nr * dim],
        }
    }

    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_vec(&self, id: usize) -> &[f32] {
        &self.entities[id * self.dim..(id + 1) * self.dim]
    }

    pub fn relation_vec(&self, id: usize) -> &[f32] {
        &self.relations[id * self.dim..(id + 1) * self.dim]
    }

    pub fn entity_vec_mut(&mut self, id: usize) -> &mut [f32] {
        &mut self.entities[id * self.dim..(id + 1) * self.dim]
    }

    pub fn relation_vec_mut(&mut self, id: usize) -> &mut [f32] {
        &mut self.relations[id * self.dim..(id + 1) * self.dim]
    }

    pub fn entity_vec_f64(&self, id: usize) -> Vec<f64> {
        self.entity_vec(id).iter().map(|v| *v as f64).collect()
    }

    pub fn relation_vec_f64(&self, id: usize) -> Vec<f64> {
        self.relation_vec(id).iter().map(|v| *v as f64).collect()
    }

    pub fn check_dim(&self, expected: usize) -> Result<(), KgeError> {
        if self.dim != expected {
            return Err(KgeError::DimMismatch {
                expected,
                found: self.dim,
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct KgeTrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for KgeTrainConfig {
    fn default() -> Self {
        // Full-scale defaults; desk-scale runs override dim to 64 or less.
        KgeTrainConfig {
            dim: 512,
            epochs: 100,
            learning_rate: 1e-3,
            margin: 1.0,
            negatives_per_positive: 1,
            seed: 0,
        }
    }
}

impl KgeTrainConfig {
    fn validate(&self) -> Result<(), KgeError> {
        if self.dim < 1 || self.epochs < 1 {
            return Err(KgeError::BadConfig("dim and epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || self.margin <= 0.0 {
            return Err(KgeError::BadConfig(
                "learning_rate and margin must be positive".into(),
            ));
        }
        if self.negatives_per_positive < 1 {
            return Err(KgeError::BadConfig(
                "negatives_per_positive must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// TransE plausibility: ‖e_s + e_r − e_o‖₂, lower is better.
pub fn transe_score(table: &EmbeddingTable, t: &Triple) -> Result<f64, KgeError> {
    if t.head >= table.n_entities() || t.tail >= table.n_entities() || t.relation >= table.n_relations()
    {
        return Err(KgeError::IdOutOfRange {
            head: t.head,
            relation: t.relation,
            tail: t.tail,
            entities: table.n_entities(),
            relations: table.n_relations(),
        });
    }
    let (s, r, o) = (
        table.entity_vec(t.head),
        table.relation_vec(t.relation),
        table.entity_vec(t.tail),
    );
    let mut acc = 0.0f64;
    for i in 0..table.dim {
        let d = s[i] as f64 + r[i] as f64 - o[i] as f64;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Corrupting negative sampler with membership filtering against the
/// training graph. Build once, sample many times.
pub struct NegativeSampler {
    present: HashSet<Triple>,
    n_entities: usize,
    retry_cap: usize,
    /// Negatives accepted unfiltered after the retry cap.
    pub warnings: usize,
}

impl NegativeSampler {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        NegativeSampler {
            present: kg.triples.iter().copied().collect(),
            n_entities: kg.n_entities(),
            retry_cap: 100,
            warnings: 0,
        }
    }

    /// Each negative corrupts exactly one of head/tail (coin flip), with the
    /// replacement drawn uniformly over all entities. Candidates present in
    /// the graph are resampled up to the retry cap, after which the last
    /// candidate not equal to the positive is accepted and counted.
    pub fn sample(&mut self, t: &Triple, k: usize, rng: &mut ChaCha8Rng) -> Vec<Triple> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let corrupt_head = rng.gen_bool(0.5);
            let mut chosen = None;
            let mut fallback = None;
            for _ in 0..self.retry_cap {
                let e = rng.gen_range(0..self.n_entities);
                let cand = if corrupt_head {
                    Triple {
                        head: e,
                        relation: t.relation,
                        tail: t.tail,
                    }
                } else {
                    Triple {
                        head: t.head,
                        relation: t.relation,
                        tail: e,
                    }
                };
                if cand != *t {
                    fallback = Some(cand);
                }
                if !self.present.contains(&cand) {
                    chosen = Some(cand);
                    break;
                }
            }
            let neg = match chosen {
                Some(c) => c,
                None => {
                    self.warnings += 1;
                    // Every candidate was a known triple; emit the corruption
                    // anyway so training can proceed.
                    fallback.unwrap_or_else(|| {
                        let e = (t.head + 1) % self.n_entities.max(2);
                        Triple {
                            head: e,
                            relation: t.relation,
                            tail: t.tail,
                        }
                    })
                }
            };
            out.push(neg);
        }
        out
    }
}

/// Convenience wrapper matching the one-shot call shape; training code keeps
/// a persistent [`NegativeSampler`].
pub fn sample_negatives_slcwa(
    kg: &KnowledgeGraph,
    t: &Triple,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Triple>, usize) {
    let mut sampler = NegativeSampler::new(kg);
    let negs = sampler.sample(t, k, rng);
    (negs, sampler.warnings)
}

pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub negative_warnings: usize,
}

fn normalize_entity(table: &mut EmbeddingTable, id: usize) {
    let v = table.entity_vec_mut(id);
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// Margin ranking loss over one (positive, negative) pair:
/// max(0, γ + ‖s+r−o‖ − ‖s'+r−o'‖). Exposed for gradient-check tests.
pub fn margin_loss(
    pos: (&[f64], &[f64], &[f64]),
    neg: (&[f64], &[f64], &[f64]),
    margin: f64,
) -> f64 {
    let dist = |(s, r, o): (&[f64], &[f64], &[f64])| {
        s.iter()
            .zip(r)
            .zip(o)
            .map(|((a, b), c)| (a + b - c) * (a + b - c))
            .sum::<f64>()
            .sqrt()
    };
    (margin + dist(pos) - dist(neg)).max(0.0)
}

/// Stochastic gradient descent on the margin ranking loss; entity vectors are
/// renormalized to unit L2 after every update.
pub fn train_transe(
    kg: &KnowledgeGraph,
    cfg: &KgeTrainConfig,
) -> Result<(EmbeddingTable, TrainLog), KgeError> {
    cfg.validate()?;
    if kg.triples.is_empty() {
        return Err(KgeError::BadConfig("knowledge graph has no triples".into()));
    }

    let mut init_rng = stream_rng(cfg.seed, "kge-init", 0);
    let entity_names: Vec<String> = (0..kg.n_entities()).map(|i| kg.entity_name(i).to_string()).collect();
    let relation_names: Vec<String> =
        (0..kg.n_relations()).map(|i| kg.relation_name(i).to_string()).collect();
    let mut table = EmbeddingTable::zeros(entity_names, relation_names, cfg.dim);
    let bound = 6.0 / (cfg.dim as f64).sqrt();
    for v in table.entities.iter_mut().chain(table.relations.iter_mut()) {
        *v = init_rng.gen_range(-bound..bound) as f32;
    }
    for e in 0..table.n_entities() {
        normalize_entity(&mut table, e);
    }
    // Relations are normalized once at init only; afterwards they move
    // freely so translations can be shorter than unit length.
    for r in 0..table.n_relations() {
        let row = table.relation_vec_mut(r);
        let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
    }

    let mut sampler = NegativeSampler::new(kg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..kg.triples.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, "kge-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut terms = 0usize;

        for &ti in &order {
            let pos = kg.triples[ti];
            let negs = sampler.sample(&pos, cfg.negatives_per_positive, &mut rng);
            for neg in negs {
                let (loss, touched) = sgd_pair_update(&mut table, &pos, &neg, cfg);
                if !loss.is_finite() {
                    return Err(KgeError::Diverged { epoch });
                }
                epoch_loss += loss;
                terms += 1;
                for id in touched {
                    normalize_entity(&mut table, id);
                }
            }
        }
        epoch_losses.push(epoch_loss / terms.max(1) as f64);
    }

    Ok((
        table,
        TrainLog {
            epoch_losses,
            negative_warnings: sampler.warnings,
        },
    ))
}

/// One SGD step on max(0, γ + d(pos) − d(neg)). Returns the loss and the
/// entity ids whose rows changed.
fn sgd_pair_update(
    table: &mut EmbeddingTable,
    pos: &Triple,
    neg: &Triple,
    cfg: &KgeTrainConfig,
) -> (f64, Vec<usize>) {
    let dim = table.dim;
    let diff = |t: &Triple, table: &EmbeddingTable| -> Vec<f64> {
        let (s, r, o) = (
            table.entity_vec(t.head),
            table.relation_vec(t.relation),
            table.entity_vec(t.tail),
        );
        (0..dim).map(|i| s[i] as f64 + r[i] as f64 - o[i] as f64).collect()
    };
    let dp = diff(pos, table);
    let dn = diff(neg, table);
    let norm_p = dp.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_n = dn.iter().map(|v| v * v).sum::<f64>().sqrt();
    let loss = (cfg.margin + norm_p - norm_n).max(0.0);
    if loss == 0.0 {
        return (0.0, Vec::new());
    }

    let lr = cfg.learning_rate;
    let mut touched = vec![pos.head, pos.tail, neg.head, neg.tail];
    touched.sort_unstable();
    touched.dedup();

    // d‖v‖/dv = v/‖v‖; guard the non-differentiable point at zero.
    let gp: Vec<f64> = dp.iter().map(|v| if norm_p > 0.0 { v / norm_p } else { 0.0 }).collect();
    let gn: Vec<f64> = dn.iter().map(|v| if norm_n > 0.0 { v / norm_n } else { 0.0 }).collect();

    let apply = |row: &mut [f32], g: &[f64], sign: f64| {
        for i in 0..g.len() {
            row[i] = (row[i] as f64 - lr * sign * g[i]) as f32;
        }
    };
    // Positive distance is ascended by +grad, so descend: subtract.
    apply(table.entity_vec_mut(pos.head), &gp, 1.0);
    apply(table.entity_vec_mut(pos.tail), &gp, -1.0);
    apply(table.relation_vec_mut(pos.relation), &gp, 1.0);
    // Negative distance enters with a minus sign.
    apply(table.entity_vec_mut(neg.head), &gn, -1.0);
    apply(table.entity_vec_mut(neg.tail), &gn, 1.0);
    apply(table.relation_vec_mut(neg.relation), &gn, -1.0);

    (loss, touched)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPredictionMetrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_10: f64,
}

/// Filtered ranking over all candidate heads and tails. True triples other
/// than the query are excluded from the candidate pool; tied scores receive
/// the average rank of the tied block.
pub fn evaluate_link_prediction(
    table: &EmbeddingTable,
    test: &KnowledgeGraph,
    all: &KnowledgeGraph,
) -> Result<LinkPredictionMetrics, KgeError> {
    if test.triples.is_empty() {
        return Err(KgeError::EmptyTestSet);
    }
    let known: HashSet<Triple> = all.triples.iter().copied().collect();
    let mut rr = 0.0;
    let mut h1 = 0.0;
    let mut h10 = 0.0;
    let mut queries = 0usize;

    for t in &test.triples {
        for corrupt_head in [false, true] {
            let true_score = transe_score(table, t)?;
            let mut better = 0usize;
            let mut ties = 1usize; // the true answer itself
            for e in 0..table.n_entities() {
                let cand = if corrupt_head {
                    Triple {
                        head: e,
                        relation: t.relation,
                        tail: t.tail,
                    }
                } else {
                    Triple {
                        head: t.head,
                        relation: t.relation,
                        tail: e,
                    }
                };
                if cand == *t {
                    continue;
                }
                if known.contains(&cand) {
                    continue; // filtered
                }
                let s = transe_score(table, &cand)?;
                if s < true_score {
                    better += 1;
                } else if s == true_score {
                    ties += 1;
                }
            }
            let rank = better as f64 + (ties as f64 + 1.0) / 2.0;
            rr += 1.0 / rank;
            if rank <= 1.0 {
                h1 += 1.0;
            }
            if rank <= 10.0 {
                h10 += 1.0;
            }
            queries += 1;
        }
    }
    let n = queries as f64;
    Ok(LinkPredictionMetrics {
        mrr: rr / n,
        hits_at_1: h1 / n,
        hits_at_10: h10 / n,
    })
}

/// `KDRM` v1: magic, u16 version, u32 entity count, u32 relation count,
/// u32 dim, length-prefixed UTF-8 names (entities then relations), then
/// row-major f32 little-endian values (entities then relations).
pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<(), KgeError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_u16::<LittleEndian>(EMBEDDING_VERSION)?;
    w.write_u32::<LittleEndian>(table.n_entities() as u32)?;
    w.write_u32::<LittleEndian>(table.n_relations() as u32)?;
    w.write_u32::<LittleEndian>(table.dim as u32)?;
    for name in table.entity_names.iter().chain(&table.relation_names) {
        let bytes = name.as_bytes();
        w.write_u32::<LittleEndian>(bytes.len() as u32)?;
        w.write_all(bytes)?;
    }
    for v in table.entities.iter().chain(&table.relations) {
        w.write_f32::<LittleEndian>(*v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, KgeError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| KgeError::BadFile("truncated before magic".into()))?;
    if &magic != EMBEDDING_MAGIC {
        return Err(KgeError::BadFile(format!(
            "bad magic {:?}, expected {:?}",
            magic, EMBEDDING_MAGIC
        )));
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| KgeError::BadFile("truncated version".into()))?;
    if version != EMBEDDING_VERSION {
        return Err(KgeError::BadFile(format!(
            "unsupported version {version}, expected {EMBEDDING_VERSION}"
        )));
    }
    let truncated = |what: &str| KgeError::BadFile(format!("truncated {what}"));
    let ne = r.read_u32::<LittleEndian>().map_err(|_| truncated("entity count"))? as usize;
    let nr = r.read_u32::<LittleEndian>().map_err(|_| truncated("relation count"))? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(|_| truncated("dim"))? as usize;

    let mut read_names = |count: usize, what: &str| -> Result<Vec<String>, KgeError> {
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r
                .read_u32::<LittleEndian>()
                .map_err(|_| KgeError::BadFile(format!("truncated {what} name length")))?
                as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)
                .map_err(|_| KgeError::BadFile(format!("truncated {what} name")))?;
            names.push(
                String::from_utf8(buf)
                    .map_err(|_| KgeError::BadFile(format!("non-UTF-8 {what} name")))?,
            );
        }
        Ok(names)
    };
    let entity_names = read_names(ne, "entity")?;
    let relation_names = read_names(nr, "relation")?;

    let mut read_block = |count: usize, what: &str| -> Result<Vec<f32>, KgeError> {
        let mut vals = Vec::with_capacity(count);
        for _ in 0..count {
            vals.push(
                r.read_f32::<LittleEndian>()
                    .map_err(|_| KgeError::BadFile(format!("truncated {what} values")))?,
            );
        }
        Ok(vals)
    };
    let entities = read_block(ne * dim, "entity")?;
    let relations = read_block(nr * dim, "relation")?;

    Ok(EmbeddingTable {
        dim,
        entity_names,
        relation_names,
        entities,
        relations,
    })
}
