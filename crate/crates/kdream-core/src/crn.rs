//! Graph-attention regressor from (possibly noised) continuous graph states
//! into knowledge-embedding space, plus the input gradients that steer the
//! diffusion sampler.
//!
//! Forward pass: H¹ = tanh(E·X·W⁰), then L self-attention layers
//! α_ij = softmax_j(leaky_relu(a·[W h_i ⊕ W h_j])), h_i ← Σ_j α_ij W h_j,
//! then a permutation-invariant node-sum readout into R^d. Attention support
//! is either every pair (dense) or edges with E_ij above a threshold plus the
//! self edge (masked) — during diffusion E is dense noise, so the masked mode
//! keeps attention on plausible bonds.

use crate::diffkit::{Tape, Tensor, Var};
use crate::diffusion::{encode, forward_perturb, GraphState, NoiseSchedule, CHANNELS, T_EPS};
use crate::molgraph::MolecularGraph;
use crate::rng::stream_rng;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

/// Slope of the attention-logit activation.
pub const ATTN_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum CrnError {
    #[error("state has {found} feature columns, expected {expected}")]
    BadFeatureDim { found: usize, expected: usize },
    #[error("embedding has dim {found}, expected {expected}")]
    BadTargetDim { found: usize, expected: usize },
    #[error("edge matrix is {rows}x{cols}, expected square matching {nodes} nodes")]
    BadEdgeShape {
        rows: usize,
        cols: usize,
        nodes: usize,
    },
    #[error("empty training set")]
    EmptyDataset,
    #[error("molecule {index} has {atoms} atoms, exceeding the state size {max}")]
    TooManyAtoms {
        index: usize,
        atoms: usize,
        max: usize,
    },
    #[error("non-finite training loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("bad checkpoint: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Support = pairs with E_ij > τ, plus the self edge.
    Masked,
    /// Full softmax over all node pairs.
    Dense,
}

/// Frozen regressor parameters. Layout: aggregation W⁰ (M×h); per layer an
/// h×h transform plus the attention vector split into its source and
/// destination halves (h×1 each); readout h×d with a 1×d bias.
#[derive(Debug, Clone)]
pub struct CrnParams {
    pub layers: usize,
    pub hidden: usize,
    pub dim: usize,
    pub tau: f64,
    pub attention: AttentionMode,
    pub(crate) params: Vec<Tensor>,
}

fn crn_param_shapes(layers: usize, hidden: usize, dim: usize) -> Vec<Vec<usize>> {
    let mut shapes = vec![vec![CHANNELS, hidden]];
    for _ in 0..layers {
        shapes.push(vec![hidden, hidden]);
        shapes.push(vec![hidden, 1]);
        shapes.push(vec![hidden, 1]);
    }
    shapes.push(vec![hidden, dim]);
    shapes.push(vec![1, dim]);
    shapes
}

impl CrnParams {
    pub fn init(
        layers: usize,
        hidden: usize,
        dim: usize,
        tau: f64,
        attention: AttentionMode,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, "crn-init", 0);
        let shapes = crn_param_shapes(layers, hidden, dim);
        let params = shapes
            .iter()
            .enumerate()
            .map(|(i, shape)| {
                if i == shapes.len() - 1 {
                    // readout bias starts at zero
                    Tensor::zeros(shape)
                } else {
                    let std = 1.0 / (shape[0] as f64).sqrt();
                    Tensor::randn(shape, std, &mut rng)
                }
            })
            .collect();
        CrnParams {
            layers,
            hidden,
            dim,
            tau,
            attention,
            params,
        }
    }

    fn check_state(&self, g: &GraphState) -> Result<(), CrnError> {
        if g.x.cols() != CHANNELS {
            return Err(CrnError::BadFeatureDim {
                found: g.x.cols(),
                expected: CHANNELS,
            });
        }
        let n = g.x.rows();
        if g.e.rows() != n || g.e.cols() != n {
            return Err(CrnError::BadEdgeShape {
                rows: g.e.rows(),
                cols: g.e.cols(),
                nodes: n,
            });
        }
        Ok(())
    }

    /// Attention-support bias: 0 where attention is allowed, −1e30 where it
    /// is not (softmax then underflows those entries to exactly zero).
    fn support_bias(&self, e: &Tensor) -> Tensor {
        let n = e.rows();
        let mut bias = Tensor::zeros(&[n, n]);
        if self.attention == AttentionMode::Dense {
            return bias;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && e.at(i, j) <= self.tau {
                    bias.set(i, j, -1e30);
                }
            }
        }
        bias
    }

    /// Build the forward pass on a tape; returns the 1×d output var.
    pub(crate) fn forward_on_tape(&self, tape: &mut Tape, pvars: &[Var], x: Var, e: Var) -> Var {
        let n = tape.value(x).rows();
        let bias = self.support_bias(tape.value(e));
        let ones_row = tape.leaf(Tensor::new(vec![1, n], vec![1.0; n]));
        let ones_col = tape.leaf(Tensor::new(vec![n, 1], vec![1.0; n]));

        let xw = tape.matmul(x, pvars[0]);
        let agg = tape.matmul(e, xw);
        let mut h = tape.tanh(agg);
        for l in 0..self.layers {
            let (w, a_src, a_dst) = (pvars[3 * l + 1], pvars[3 * l + 2], pvars[3 * l + 3]);
            let wh = tape.matmul(h, w);
            let col = tape.matmul(wh, a_src); // n×1, logit contribution of i
            let row = tape.matmul(wh, a_dst); // n×1, logit contribution of j
            let col_grid = tape.matmul(col, ones_row);
            let row_t = tape.transpose(row);
            let row_grid = tape.matmul(ones_col, row_t);
            let outer = tape.add(col_grid, row_grid);
            let logits = tape.leaky_relu(outer, ATTN_SLOPE);
            let masked = tape.add_const(logits, &bias);
            let alpha = tape.row_softmax(masked);
            h = tape.matmul(alpha, wh);
        }
        let summed = tape.matmul(ones_row, h);
        let projected = tape.matmul(summed, pvars[3 * self.layers + 1]);
        tape.add_row(projected, pvars[3 * self.layers + 2])
    }

    pub(crate) fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }
}

/// Evaluate P_φ(g) → R^d.
pub fn crn_forward(p: &CrnParams, g: &GraphState) -> Result<Vec<f64>, CrnError> {
    p.check_state(g)?;
    let mut tape = Tape::new();
    let pvars = p.leaves(&mut tape);
    let xv = tape.leaf(g.x.clone());
    let ev = tape.leaf(g.e.clone());
    let out = p.forward_on_tape(&mut tape, &pvars, xv, ev);
    Ok(tape.value(out).data().to_vec())
}

/// Gradients of ‖y − P_φ(g)‖² with respect to the state. The edge gradient
/// is returned symmetrized with zero diagonal, matching the state invariant.
pub fn input_gradient(
    p: &CrnParams,
    g: &GraphState,
    y: &[f64],
) -> Result<(Tensor, Tensor), CrnError> {
    p.check_state(g)?;
    if y.len() != p.dim {
        return Err(CrnError::BadTargetDim {
            found: y.len(),
            expected: p.dim,
        });
    }
    let mut tape = Tape::new();
    let pvars = p.leaves(&mut tape);
    let xv = tape.leaf(g.x.clone());
    let ev = tape.leaf(g.e.clone());
    let out = p.forward_on_tape(&mut tape, &pvars, xv, ev);
    let target = tape.leaf(Tensor::new(vec![1, y.len()], y.to_vec()));
    let loss = tape.sse(out, target);
    let grads = tape.backward(loss).expect("loss is scalar");
    let gx = grads.wrt(xv).clone();
    let mut ge = grads.wrt(ev).clone();
    crate::diffusion::symmetrize_edges(&mut ge);
    Ok((gx, ge))
}

#[derive(Debug, Clone)]
pub struct CrnTrainConfig {
    /// State size molecules are encoded at.
    pub n: usize,
    pub layers: usize,
    pub hidden: usize,
    pub tau: f64,
    pub attention: AttentionMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling; zero disables.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for CrnTrainConfig {
    fn default() -> Self {
        CrnTrainConfig {
            n: 16,
            layers: 3,
            hidden: 64,
            tau: 0.05,
            attention: AttentionMode::Masked,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrnTrainLog {
    pub epoch_losses: Vec<f64>,
}

/// Train the regressor on (molecule, target embedding) pairs. Each step draws
/// a diffusion time t ~ Uniform(ε, 1), perturbs the clean state, and descends
/// ‖P_φ(G_t) − y‖² — noised variants of a molecule share its clean target.
pub fn train_crn(
    pairs: &[(MolecularGraph, Vec<f64>)],
    schedule: &NoiseSchedule,
    cfg: &CrnTrainConfig,
) -> Result<(CrnParams, CrnTrainLog), CrnError> {
    if pairs.is_empty() {
        return Err(CrnError::EmptyDataset);
    }
    let dim = pairs[0].1.len();
    let mut states = Vec::with_capacity(pairs.len());
    for (index, (m, y)) in pairs.iter().enumerate() {
        if y.len() != dim {
            return Err(CrnError::BadTargetDim {
                found: y.len(),
                expected: dim,
            });
        }
        let state = encode(m, cfg.n).map_err(|_| CrnError::TooManyAtoms {
            index,
            atoms: m.n_atoms(),
            max: cfg.n,
        })?;
        states.push(state);
    }
    let mut model = CrnParams::init(
        cfg.layers,
        cfg.hidden,
        dim,
        cfg.tau,
        cfg.attention,
        cfg.seed,
    );
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, "crn-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..states.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let pvars = model.leaves(&mut tape);
            let mut terms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let t = rng.gen_range(T_EPS..=1.0);
                let gt = forward_perturb(&states[i], schedule, t, &mut rng)
                    .expect("t is within (0, 1]");
                let xv = tape.leaf(gt.x);
                let ev = tape.leaf(gt.e);
                let out = model.forward_on_tape(&mut tape, &pvars, xv, ev);
                let target = tape.leaf(Tensor::new(vec![1, dim], pairs[i].1.clone()));
                terms.push(tape.sse(out, target));
            }
            let mut total = terms[0];
            for &term in &terms[1..] {
                total = tape.add(total, term);
            }
            let loss = tape.scale(total, 1.0 / chunk.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(CrnError::Diverged { epoch });
            }
            let grads = tape.backward(loss).expect("loss is scalar");
            let grad_norm: f64 = pvars
                .iter()
                .map(|v| grads.wrt(*v).norm().powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = if cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip {
                cfg.grad_clip / grad_norm
            } else {
                1.0
            };
            for (param, var) in model.params.iter_mut().zip(&pvars) {
                let g = grads.wrt(*var);
                for (p, d) in param.data_mut().iter_mut().zip(g.data()) {
                    *p -= cfg.learning_rate * scale * d;
                }
            }
            epoch_loss += value;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }
    Ok((model, CrnTrainLog { epoch_losses }))
}

const MAGIC: &[u8; 4] = b"KDCR";
const VERSION: u16 = 1;
const ACT_TANH: u8 = 0;
const ACT_LEAKY_RELU: u8 = 1;

pub fn save_crn(p: &CrnParams, path: &Path) -> Result<(), CrnError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    for v in [
        p.layers as u32,
        p.hidden as u32,
        p.dim as u32,
        CHANNELS as u32,
    ] {
        w.write_u32::<LittleEndian>(v)?;
    }
    w.write_f64::<LittleEndian>(p.tau)?;
    w.write_u8(match p.attention {
        AttentionMode::Masked => 0,
        AttentionMode::Dense => 1,
    })?;
    w.write_u8(ACT_TANH)?;
    w.write_u8(ACT_LEAKY_RELU)?;
    w.write_f64::<LittleEndian>(ATTN_SLOPE)?;
    w.write_u32::<LittleEndian>(p.params.len() as u32)?;
    for t in &p.params {
        w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in t.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_crn(path: &Path) -> Result<CrnParams, CrnError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let bad = |reason: &str| CrnError::BadFile(reason.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated before magic"))?;
    if &magic != MAGIC {
        return Err(CrnError::BadFile(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| bad("truncated version"))?;
    if version != VERSION {
        return Err(CrnError::BadFile(format!("unsupported version {version}")));
    }
    let mut header = [0u32; 4];
    for slot in header.iter_mut() {
        *slot = r
            .read_u32::<LittleEndian>()
            .map_err(|_| bad("truncated header"))?;
    }
    let [layers, hidden, dim, m] = header.map(|v| v as usize);
    if m != CHANNELS {
        return Err(bad("feature channel count does not match this build"));
    }
    let tau = r
        .read_f64::<LittleEndian>()
        .map_err(|_| bad("truncated threshold"))?;
    let attention = match r.read_u8().map_err(|_| bad("truncated attention mode"))? {
        0 => AttentionMode::Masked,
        1 => AttentionMode::Dense,
        other => return Err(CrnError::BadFile(format!("unknown attention mode {other}"))),
    };
    let act = r.read_u8().map_err(|_| bad("truncated activation id"))?;
    let attn_act = r.read_u8().map_err(|_| bad("truncated activation id"))?;
    let slope = r
        .read_f64::<LittleEndian>()
        .map_err(|_| bad("truncated activation slope"))?;
    if act != ACT_TANH || attn_act != ACT_LEAKY_RELU || slope != ATTN_SLOPE {
        return Err(bad("unsupported activation configuration"));
    }
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated tensor count"))? as usize;
    let expected = crn_param_shapes(layers, hidden, dim);
    if count != expected.len() {
        return Err(bad("tensor count does not match architecture"));
    }
    let mut params = Vec::with_capacity(count);
    for shape in &expected {
        let ndim = r
            .read_u32::<LittleEndian>()
            .map_err(|_| bad("truncated tensor header"))? as usize;
        if ndim != shape.len() {
            return Err(bad("tensor rank mismatch"));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(
                r.read_u32::<LittleEndian>()
                    .map_err(|_| bad("truncated tensor dims"))? as usize,
            );
        }
        if &dims != shape {
            return Err(bad("tensor shape mismatch"));
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(
                r.read_f64::<LittleEndian>()
                    .map_err(|_| bad("truncated tensor values"))?,
            );
        }
        params.push(Tensor::new(dims, data));
    }
    Ok(CrnParams {
        layers,
        hidden,
        dim,
        tau,
        attention,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkit::grad_check;
    use crate::molgraph::parse_smiles;
    use tempfile::tempdir;

    fn toy_model(layers: usize, hidden: usize, dim: usize, seed: u64) -> CrnParams {
        CrnParams::init(layers, hidden, dim, 0.05, AttentionMode::Masked, seed)
    }

    fn random_state(n: usize, seed: u64) -> GraphState {
        let mut rng = stream_rng(seed, "crn-test-state", 0);
        let x = Tensor::randn(&[n, CHANNELS], 1.0, &mut rng);
        let mut e = Tensor::randn(&[n, n], 0.5, &mut rng);
        crate::diffusion::symmetrize_edges(&mut e);
        GraphState { x, e, t: 0.3 }
    }

    #[test]
    fn single_node_with_zero_edges_maps_to_zero() {
        // H¹ = tanh(E·X·W⁰) with E = [[0]] is a zero row; attention over the
        // lone self edge keeps it zero, so the readout reduces to its bias,
        // which starts at zero.
        let p = toy_model(2, 8, 5, 1);
        let g = GraphState {
            x: Tensor::randn(&[1, CHANNELS], 1.0, &mut stream_rng(1, "crn-test", 0)),
            e: Tensor::zeros(&[1, 1]),
            t: 0.0,
        };
        let y = crn_forward(&p, &g).unwrap();
        assert_eq!(y, vec![0.0; 5]);
    }

    #[test]
    fn forward_is_permutation_invariant() {
        let p = toy_model(3, 8, 4, 2);
        let n = 6;
        let g = random_state(n, 3);
        let y = crn_forward(&p, &g).unwrap();
        let mut rng = stream_rng(4, "crn-test", 1);
        for _ in 0..10 {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut x = Tensor::zeros(&[n, CHANNELS]);
            let mut e = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for c in 0..CHANNELS {
                    x.set(perm[i], c, g.x.at(i, c));
                }
                for j in 0..n {
                    e.set(perm[i], perm[j], g.e.at(i, j));
                }
            }
            let yp = crn_forward(&p, &GraphState { x, e, t: g.t }).unwrap();
            for (a, b) in y.iter().zip(&yp) {
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    /// Straight-line reimplementation with plain loops, no shared code.
    fn forward_oracle(p: &CrnParams, g: &GraphState) -> Vec<f64> {
        let n = g.x.rows();
        let h = p.hidden;
        let w0 = &p.params[0];
        // H1 = tanh(E X W0)
        let mut h1 = vec![vec![0.0; h]; n];
        for i in 0..n {
            for k in 0..h {
                let mut acc = 0.0;
                for j in 0..n {
                    let mut xw = 0.0;
                    for c in 0..CHANNELS {
                        xw += g.x.at(j, c) * w0.at(c, k);
                    }
                    acc += g.e.at(i, j) * xw;
                }
                h1[i][k] = acc.tanh();
            }
        }
        let mut cur = h1;
        for l in 0..p.layers {
            let w = &p.params[3 * l + 1];
            let a_src = &p.params[3 * l + 2];
            let a_dst = &p.params[3 * l + 3];
            let mut wh = vec![vec![0.0; h]; n];
            for i in 0..n {
                for k in 0..h {
                    let mut acc = 0.0;
                    for q in 0..h {
                        acc += cur[i][q] * w.at(q, k);
                    }
                    wh[i][k] = acc;
                }
            }
            let mut next = vec![vec![0.0; h]; n];
            for i in 0..n {
                let allowed: Vec<usize> = (0..n)
                    .filter(|&j| {
                        j == i
                            || p.attention == AttentionMode::Dense
                            || g.e.at(i, j) > p.tau
                    })
                    .collect();
                let logits: Vec<f64> = allowed
                    .iter()
                    .map(|&j| {
                        let mut s = 0.0;
                        for k in 0..h {
                            s += wh[i][k] * a_src.at(k, 0) + wh[j][k] * a_dst.at(k, 0);
                        }
                        if s >= 0.0 {
                            s
                        } else {
                            ATTN_SLOPE * s
                        }
                    })
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for (&j, w_ij) in allowed.iter().zip(&exps) {
                    for k in 0..h {
                        next[i][k] += w_ij / denom * wh[j][k];
                    }
                }
            }
            cur = next;
        }
        let readout = &p.params[3 * p.layers + 1];
        let bias = &p.params[3 * p.layers + 2];
        let mut out = vec![0.0; p.dim];
        for d in 0..p.dim {
            out[d] = bias.at(0, d);
            for node in cur.iter() {
                for k in 0..h {
                    out[d] += node[k] * readout.at(k, d);
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        for (seed, mode) in [(5, AttentionMode::Masked), (6, AttentionMode::Dense)] {
            let mut p = toy_model(3, 8, 4, seed);
            p.attention = mode;
            let g = random_state(6, seed + 10);
            let fast = crn_forward(&p, &g).unwrap();
            let slow = forward_oracle(&p, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b} in {mode:?}");
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let p = toy_model(2, 4, 3, 7);
        let g = random_state(4, 8);
        let y = Tensor::new(vec![1, 3], vec![0.3, -0.7, 1.1]);
        let worst = grad_check(
            |tape, vars| {
                let xv = tape.leaf(g.x.clone());
                let ev = tape.leaf(g.e.clone());
                let out = p.forward_on_tape(tape, vars, xv, ev);
                let target = tape.leaf(y.clone());
                tape.sse(out, target)
            },
            &p.params,
            1e-5,
        );
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    /// Central differences with symmetric E perturbations (the state keeps E
    /// symmetric with zero diagonal, so that is the function's domain).
    #[test]
    fn input_gradient_matches_finite_differences() {
        let p = toy_model(2, 4, 3, 9);
        // keep every E entry away from τ so the attention support is stable
        // under the probe
        let mut g = random_state(4, 10);
        for i in 0..4 {
            for j in 0..4 {
                if i != j && (g.e.at(i, j) - p.tau).abs() < 0.01 {
                    g.e.set(i, j, p.tau + 0.05);
                }
            }
        }
        let y = vec![0.5, -0.2, 0.9];
        let (gx, ge) = input_gradient(&p, &g, &y).unwrap();
        let loss = |state: &GraphState| -> f64 {
            let out = crn_forward(&p, state).unwrap();
            out.iter().zip(&y).map(|(o, t)| (t - o).powi(2)).sum()
        };
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..4 {
            for c in 0..CHANNELS {
                let mut plus = g.clone();
                plus.x.set(i, c, g.x.at(i, c) + eps);
                let mut minus = g.clone();
                minus.x.set(i, c, g.x.at(i, c) - eps);
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let a = gx.at(i, c);
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                let mut plus = g.clone();
                plus.e.set(i, j, g.e.at(i, j) + eps);
                plus.e.set(j, i, g.e.at(j, i) + eps);
                let mut minus = g.clone();
                minus.e.set(i, j, g.e.at(i, j) - eps);
                minus.e.set(j, i, g.e.at(j, i) - eps);
                // symmetric probe moves two coordinates, so it measures
                // (∂+∂ᵀ)_ij = twice the symmetrized gradient entry
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps) / 2.0;
                let a = ge.at(i, j);
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradient_is_zero_at_the_exact_target() {
        let p = toy_model(2, 4, 3, 11);
        let g = random_state(4, 12);
        let y = crn_forward(&p, &g).unwrap();
        let (gx, ge) = input_gradient(&p, &g, &y).unwrap();
        assert!(gx.data().iter().all(|v| v.abs() < 1e-12));
        assert!(ge.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn edge_gradient_is_symmetric_with_zero_diagonal() {
        let p = toy_model(2, 4, 3, 13);
        let g = random_state(5, 14);
        let (_, ge) = input_gradient(&p, &g, &[1.0, 2.0, 3.0]).unwrap();
        for i in 0..5 {
            assert_eq!(ge.at(i, i), 0.0);
            for j in 0..5 {
                assert_eq!(ge.at(i, j), ge.at(j, i));
            }
        }
    }

    #[test]
    fn dim_mismatches_are_rejected() {
        let p = toy_model(2, 4, 3, 15);
        let g = random_state(4, 16);
        assert!(matches!(
            input_gradient(&p, &g, &[1.0, 2.0]),
            Err(CrnError::BadTargetDim { found: 2, expected: 3 })
        ));
        let bad = GraphState {
            x: Tensor::zeros(&[4, 3]),
            e: Tensor::zeros(&[4, 4]),
            t: 0.0,
        };
        assert!(matches!(
            crn_forward(&p, &bad),
            Err(CrnError::BadFeatureDim { found: 3, .. })
        ));
    }

    #[test]
    fn training_memorizes_a_single_pair() {
        let m = parse_smiles("CCO").unwrap();
        let y = vec![0.8, -0.4, 0.2, 0.6];
        let schedule = NoiseSchedule::desk_default();
        let cfg = CrnTrainConfig {
            n: 4,
            layers: 2,
            hidden: 16,
            epochs: 3000,
            batch_size: 1,
            learning_rate: 5e-3,
            seed: 17,
            ..CrnTrainConfig::default()
        };
        let (model, log) = train_crn(&[(m.clone(), y.clone())], &schedule, &cfg).unwrap();
        assert!(log.epoch_losses.last().unwrap() < &1.0);
        // near-clean probe: prediction should be close to the memorized target
        let g0 = encode(&m, 4).unwrap();
        let mut rng = stream_rng(18, "crn-test", 0);
        let gt = forward_perturb(&g0, &schedule, 0.01, &mut rng).unwrap();
        let out = crn_forward(&model, &gt).unwrap();
        let err: f64 = out.iter().zip(&y).map(|(o, t)| (t - o).powi(2)).sum();
        assert!(err < 1e-3, "memorization error {err}");
    }

    #[test]
    fn distinct_molecules_classify_to_their_own_targets() {
        let pairs = vec![
            (parse_smiles("CCCCC").unwrap(), vec![3.0, 0.0, 0.0, 0.0]),
            (parse_smiles("O=S(=O)(O)O").unwrap(), vec![0.0, 3.0, 0.0, 0.0]),
        ];
        let schedule = NoiseSchedule::desk_default();
        let cfg = CrnTrainConfig {
            n: 6,
            layers: 2,
            hidden: 16,
            epochs: 2000,
            batch_size: 2,
            learning_rate: 1e-2,
            seed: 19,
            ..CrnTrainConfig::default()
        };
        let (model, _) = train_crn(&pairs, &schedule, &cfg).unwrap();
        let mut rng = stream_rng(20, "crn-test", 1);
        let mut correct = 0usize;
        let mut drift = Vec::new();
        let total = 200usize;
        for probe in 0..total {
            let (m, y) = &pairs[probe % 2];
            let other = &pairs[(probe + 1) % 2].1;
            let g0 = encode(m, 6).unwrap();
            let t = T_EPS + rng.gen_range(0.0..0.2);
            let gt = forward_perturb(&g0, &schedule, t, &mut rng).unwrap();
            let out = crn_forward(&model, &gt).unwrap();
            let d_own: f64 = out.iter().zip(y).map(|(o, t)| (t - o).powi(2)).sum();
            let d_other: f64 = out.iter().zip(other).map(|(o, t)| (t - o).powi(2)).sum();
            if d_own < d_other {
                correct += 1;
            }
            if t <= 0.3 {
                let clean = crn_forward(&model, &g0).unwrap();
                let moved: f64 = out
                    .iter()
                    .zip(&clean)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                drift.push(moved);
            }
        }
        assert!(
            correct as f64 / total as f64 >= 0.95,
            "only {correct}/{total} probes landed nearer their own target"
        );
        // noised embeddings should stay nearer the clean embedding than the
        // distance separating the two targets
        let inter: f64 = pairs[0]
            .1
            .iter()
            .zip(&pairs[1].1)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let mean_drift: f64 = drift.iter().sum::<f64>() / drift.len() as f64;
        assert!(mean_drift < inter, "drift {mean_drift} vs target gap {inter}");
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.kdcr");
        let mut p = toy_model(3, 8, 4, 21);
        p.attention = AttentionMode::Dense;
        save_crn(&p, &path).unwrap();
        let loaded = load_crn(&path).unwrap();
        assert_eq!(p.layers, loaded.layers);
        assert_eq!(p.hidden, loaded.hidden);
        assert_eq!(p.dim, loaded.dim);
        assert_eq!(p.tau, loaded.tau);
        assert_eq!(p.attention, loaded.attention);
        for (a, b) in p.params.iter().zip(&loaded.params) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.kdcr");
        let p = toy_model(2, 4, 3, 23);
        save_crn(&p, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load_crn(&path), Err(CrnError::BadFile(_))));
    }

    use crate::rng::stream_rng;
}
