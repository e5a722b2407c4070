//! Score-based diffusion over continuous graph states.
//!
//! A molecule is relaxed into a pair of real matrices: `X` holds one-hot atom
//! channels (nine elements plus a "no atom" padding channel) and `E` holds
//! bond orders scaled into [0,1]. A variance-preserving SDE perturbs the pair
//! toward an isotropic Gaussian; a small message-passing score network is
//! trained by denoising score matching; reverse-time Euler–Maruyama sampling
//! with one Langevin corrector step per predictor step generates new states,
//! which quantize back to discrete molecules.

use crate::diffkit::{Tape, Tensor, Var};
use crate::molgraph::{Atom, Bond, MolecularGraph, ELEMENTS};
use crate::rng::stream_rng;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

/// Atom channels: the nine supported elements plus one padding channel.
pub const CHANNELS: usize = 10;
/// Channel index meaning "no atom here".
pub const NO_ATOM_CHANNEL: usize = 9;
/// Smallest diffusion time used anywhere; below this the marginal is too
/// close to a delta for stable score targets.
pub const T_EPS: f64 = 1e-3;
/// Corrector signal-to-noise ratio.
pub const CORRECTOR_SNR: f64 = 0.16;

const TIME_DIM: usize = 16;
const E_RANK: usize = 16;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("diffusion time {t} outside (0, 1]")]
    TimeOutOfRange { t: f64 },
    #[error("noise schedule needs 0 < beta_min < beta_max, got {beta_min} and {beta_max}")]
    BadSchedule { beta_min: f64, beta_max: f64 },
    #[error("noise schedule needs at least 10 steps, got {steps}")]
    TooFewSteps { steps: usize },
    #[error("molecule {index} has {atoms} atoms, exceeding the state size {max}")]
    TooManyAtoms {
        index: usize,
        atoms: usize,
        max: usize,
    },
    #[error("empty training set")]
    EmptyDataset,
    #[error("state dims {x_rows}x{x_cols} do not match the network ({n}x{m})")]
    DimMismatch {
        x_rows: usize,
        x_cols: usize,
        n: usize,
        m: usize,
    },
    #[error("non-finite state at sampler step {step}")]
    NonFinite { step: usize },
    #[error("non-finite training loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("bad checkpoint: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Linear variance-preserving schedule: β(t) = β_min + (β_max − β_min)·t,
/// drift f_t(G) = −½β(t)·G, dispersion g_t = √β(t).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub steps: usize,
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64, steps: usize) -> Result<Self, DiffusionError> {
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max.is_finite()) {
            return Err(DiffusionError::BadSchedule { beta_min, beta_max });
        }
        if steps < 10 {
            return Err(DiffusionError::TooFewSteps { steps });
        }
        Ok(NoiseSchedule {
            beta_min,
            beta_max,
            steps,
        })
    }

    /// Desk-scale default: β ∈ [0.1, 10], 200 steps.
    pub fn desk_default() -> Self {
        NoiseSchedule {
            beta_min: 0.1,
            beta_max: 10.0,
            steps: 200,
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t
    }

    /// Marginal signal coefficient α(t) = exp(−½∫₀ᵗ β).
    pub fn alpha(&self, t: f64) -> f64 {
        (-0.5 * (self.beta_min * t + (self.beta_max - self.beta_min) * t * t / 2.0)).exp()
    }

    /// Marginal noise scale σ(t) = √(1 − α(t)²).
    pub fn sigma(&self, t: f64) -> f64 {
        (1.0 - self.alpha(t).powi(2)).sqrt()
    }
}

/// Continuous graph state: `x` is N×CHANNELS, `e` is N×N symmetric with zero
/// diagonal, `t` is the diffusion time the state lives at.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    pub x: Tensor,
    pub e: Tensor,
    pub t: f64,
}

impl GraphState {
    pub fn n_nodes(&self) -> usize {
        self.x.rows()
    }
}

/// Symmetrize in place and zero the diagonal.
pub fn symmetrize_edges(e: &mut Tensor) {
    let n = e.rows();
    for i in 0..n {
        e.set(i, i, 0.0);
        for j in (i + 1)..n {
            let v = 0.5 * (e.at(i, j) + e.at(j, i));
            e.set(i, j, v);
            e.set(j, i, v);
        }
    }
}

/// Symmetric zero-diagonal standard-normal draw (entries mirrored, not
/// re-averaged, so off-diagonal marginals stay N(0,1)).
pub(crate) fn symmetric_noise<R: Rng>(n: usize, rng: &mut R) -> Tensor {
    let mut e = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rng.sample(StandardNormal);
            e.set(i, j, v);
            e.set(j, i, v);
        }
    }
    e
}

/// Embed a discrete molecule as a clean (t=0) state of size `n`, padding
/// missing nodes with the "no atom" channel.
pub fn encode(m: &MolecularGraph, n: usize) -> Result<GraphState, DiffusionError> {
    if m.n_atoms() > n {
        return Err(DiffusionError::TooManyAtoms {
            index: 0,
            atoms: m.n_atoms(),
            max: n,
        });
    }
    let mut x = Tensor::zeros(&[n, CHANNELS]);
    for node in 0..n {
        let channel = if node < m.n_atoms() {
            m.atom(node).element.channel()
        } else {
            NO_ATOM_CHANNEL
        };
        x.set(node, channel, 1.0);
    }
    let mut e = Tensor::zeros(&[n, n]);
    for bond in m.bonds() {
        let v = f64::from(bond.order) / 3.0;
        e.set(bond.a, bond.b, v);
        e.set(bond.b, bond.a, v);
    }
    Ok(GraphState { x, e, t: 0.0 })
}

/// One pre-sampled perturbation draw.
#[derive(Debug, Clone)]
pub(crate) struct Draw {
    pub(crate) t: f64,
    pub(crate) zx: Tensor,
    pub(crate) ze: Tensor,
}

fn perturb_with(g0: &GraphState, schedule: &NoiseSchedule, draw: &Draw) -> GraphState {
    let a = schedule.alpha(draw.t);
    let s = schedule.sigma(draw.t);
    let mut x = g0.x.clone();
    for (v, z) in x.data_mut().iter_mut().zip(draw.zx.data()) {
        *v = a * *v + s * z;
    }
    let mut e = g0.e.clone();
    for (v, z) in e.data_mut().iter_mut().zip(draw.ze.data()) {
        *v = a * *v + s * z;
    }
    symmetrize_edges(&mut e);
    GraphState { x, e, t: draw.t }
}

/// Closed-form forward marginal G_t = α(t)·G₀ + σ(t)·ξ.
pub fn forward_perturb<R: Rng>(
    g0: &GraphState,
    schedule: &NoiseSchedule,
    t: f64,
    rng: &mut R,
) -> Result<GraphState, DiffusionError> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(DiffusionError::TimeOutOfRange { t });
    }
    let n = g0.n_nodes();
    let draw = Draw {
        t,
        zx: Tensor::randn(&[n, CHANNELS], 1.0, rng),
        ze: symmetric_noise(n, rng),
    };
    Ok(perturb_with(g0, schedule, &draw))
}

/// Message-passing score model with separate X and E heads. The network
/// predicts the negated noise; outputs are divided by σ(t) to produce scores.
#[derive(Debug, Clone)]
pub struct ScoreNetwork {
    pub layers: usize,
    pub hidden: usize,
    /// State size (node count) the network was built for.
    pub n: usize,
    pub schedule: NoiseSchedule,
    /// Prior-width adjustment: sampling starts from std (1 + ood).
    pub ood: f64,
    pub(crate) params: Vec<Tensor>,
}

/// Parameter layout: per layer [message W, self W, bias], then X head
/// [weight, bias], then E head [U weight, V weight].
fn param_shapes(layers: usize, hidden: usize) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    for l in 0..layers {
        let fan_in = if l == 0 { CHANNELS + TIME_DIM } else { hidden };
        shapes.push(vec![fan_in, hidden]);
        shapes.push(vec![fan_in, hidden]);
        shapes.push(vec![1, hidden]);
    }
    shapes.push(vec![hidden, CHANNELS]);
    shapes.push(vec![1, CHANNELS]);
    shapes.push(vec![hidden, E_RANK]);
    shapes.push(vec![hidden, E_RANK]);
    shapes
}

fn time_features(n: usize, t: f64) -> Tensor {
    let mut row = [0.0; TIME_DIM];
    for k in 0..TIME_DIM / 2 {
        let omega = f64::powi(2.0, k as i32);
        row[2 * k] = (omega * t).sin();
        row[2 * k + 1] = (omega * t).cos();
    }
    let mut out = Tensor::zeros(&[n, TIME_DIM]);
    for node in 0..n {
        for (c, v) in row.iter().enumerate() {
            out.set(node, c, *v);
        }
    }
    out
}

fn identity(n: usize) -> Tensor {
    let mut eye = Tensor::zeros(&[n, n]);
    for i in 0..n {
        eye.set(i, i, 1.0);
    }
    eye
}

fn off_diagonal_mask(n: usize) -> Tensor {
    let mut mask = Tensor::new(vec![n, n], vec![1.0; n * n]);
    for i in 0..n {
        mask.set(i, i, 0.0);
    }
    mask
}

impl ScoreNetwork {
    pub fn init(
        layers: usize,
        hidden: usize,
        n: usize,
        schedule: NoiseSchedule,
        ood: f64,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, "score-init", 0);
        let params = param_shapes(layers, hidden)
            .iter()
            .map(|shape| {
                let std = 1.0 / (shape[0] as f64).sqrt();
                Tensor::randn(shape, std, &mut rng)
            })
            .collect();
        ScoreNetwork {
            layers,
            hidden,
            n,
            schedule,
            ood,
            params,
        }
    }

    fn check_dims(&self, x: &Tensor, e: &Tensor) -> Result<(), DiffusionError> {
        if x.rows() != self.n || x.cols() != CHANNELS || e.rows() != self.n || e.cols() != self.n {
            return Err(DiffusionError::DimMismatch {
                x_rows: x.rows(),
                x_cols: x.cols(),
                n: self.n,
                m: CHANNELS,
            });
        }
        Ok(())
    }

    /// Build the forward pass on a tape from parameter vars; returns the two
    /// score heads. Shared by training (params are leaves being optimized)
    /// and sampling (params are frozen leaves).
    fn forward_on_tape(
        &self,
        tape: &mut Tape,
        pvars: &[Var],
        x: Var,
        e: Var,
        t: f64,
    ) -> (Var, Var) {
        let n = self.n;
        let tfeat = tape.leaf(time_features(n, t));
        let mut h = tape.concat_cols(x, tfeat);
        let e_hat = tape.add_const(e, &identity(n));
        for l in 0..self.layers {
            let (w_msg, w_self, bias) = (pvars[3 * l], pvars[3 * l + 1], pvars[3 * l + 2]);
            let pooled = tape.matmul(e_hat, h);
            let msg = tape.matmul(pooled, w_msg);
            let own = tape.matmul(h, w_self);
            let pre = tape.add(msg, own);
            let pre = tape.add_row(pre, bias);
            h = tape.tanh(pre);
        }
        let base = 3 * self.layers;
        let inv_sigma = 1.0 / self.schedule.sigma(t);
        let xw = tape.matmul(h, pvars[base]);
        let xb = tape.add_row(xw, pvars[base + 1]);
        let score_x = tape.scale(xb, inv_sigma);
        let u = tape.matmul(h, pvars[base + 2]);
        let v = tape.matmul(h, pvars[base + 3]);
        let vt = tape.transpose(v);
        let uv = tape.matmul(u, vt);
        let sym = tape.symmetrize(uv);
        let masked = tape.hadamard_const(sym, &off_diagonal_mask(n));
        let score_e = tape.scale(masked, inv_sigma);
        (score_x, score_e)
    }

    /// Evaluate the score s_θ(G, t) at a frozen parameter set.
    pub fn score(&self, g: &GraphState, t: f64) -> Result<(Tensor, Tensor), DiffusionError> {
        self.check_dims(&g.x, &g.e)?;
        let mut tape = Tape::new();
        let pvars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let xv = tape.leaf(g.x.clone());
        let ev = tape.leaf(g.e.clone());
        let (sx, se) = self.forward_on_tape(&mut tape, &pvars, xv, ev, t);
        Ok((tape.value(sx).clone(), tape.value(se).clone()))
    }
}

/// Denoising loss for a batch under pre-sampled draws: per sample,
/// σ(t)²·‖s_θ(G_t, t) − (−ξ/σ(t))‖² over both heads, averaged over the batch.
pub(crate) fn dsm_loss_on_tape(
    net: &ScoreNetwork,
    tape: &mut Tape,
    pvars: &[Var],
    batch: &[GraphState],
    draws: &[Draw],
) -> Var {
    let mut terms = Vec::with_capacity(batch.len());
    for (g0, draw) in batch.iter().zip(draws) {
        let gt = perturb_with(g0, &net.schedule, draw);
        let sigma = net.schedule.sigma(draw.t);
        let scale = -1.0 / sigma;
        let mut target_x = draw.zx.clone();
        for v in target_x.data_mut() {
            *v *= scale;
        }
        // the E noise actually applied is the symmetrized zero-diagonal draw
        let mut target_e = draw.ze.clone();
        symmetrize_edges(&mut target_e);
        for v in target_e.data_mut() {
            *v *= scale;
        }
        let xv = tape.leaf(gt.x);
        let ev = tape.leaf(gt.e);
        let (sx, se) = net.forward_on_tape(tape, pvars, xv, ev, draw.t);
        let tx = tape.leaf(target_x);
        let te = tape.leaf(target_e);
        let lx = tape.sse(sx, tx);
        let le = tape.sse(se, te);
        let both = tape.add(lx, le);
        terms.push(tape.scale(both, sigma * sigma));
    }
    let mut total = terms[0];
    for &term in &terms[1..] {
        total = tape.add(total, term);
    }
    tape.scale(total, 1.0 / batch.len() as f64)
}

fn sample_draws<R: Rng>(n: usize, count: usize, rng: &mut R) -> Vec<Draw> {
    (0..count)
        .map(|_| Draw {
            t: rng.gen_range(T_EPS..=1.0),
            zx: Tensor::randn(&[n, CHANNELS], 1.0, rng),
            ze: symmetric_noise(n, rng),
        })
        .collect()
}

/// Denoising score-matching loss over a batch of clean states.
pub fn dsm_loss<R: Rng>(
    net: &ScoreNetwork,
    batch: &[GraphState],
    rng: &mut R,
) -> Result<f64, DiffusionError> {
    if batch.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    for g in batch {
        net.check_dims(&g.x, &g.e)?;
    }
    let draws = sample_draws(net.n, batch.len(), rng);
    let mut tape = Tape::new();
    let pvars: Vec<Var> = net.params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = dsm_loss_on_tape(net, &mut tape, &pvars, batch, &draws);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(DiffusionError::Diverged { epoch: 0 });
    }
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct ScoreTrainConfig {
    /// State size; molecules with more atoms are rejected.
    pub n: usize,
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling applied before each SGD step; the
    /// bilinear E head can otherwise enter a positive feedback loop.
    /// Zero disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub schedule: NoiseSchedule,
    pub ood: f64,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        ScoreTrainConfig {
            n: 16,
            layers: 3,
            hidden: 64,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            seed: 0,
            schedule: NoiseSchedule::desk_default(),
            ood: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreTrainLog {
    pub epoch_losses: Vec<f64>,
}

/// Train a score network by stochastic gradient descent on the denoising
/// objective. Deterministic for a fixed config.
pub fn train_score(
    dataset: &[MolecularGraph],
    cfg: &ScoreTrainConfig,
) -> Result<(ScoreNetwork, ScoreTrainLog), DiffusionError> {
    if dataset.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    let mut states = Vec::with_capacity(dataset.len());
    for (index, m) in dataset.iter().enumerate() {
        let state = encode(m, cfg.n).map_err(|_| DiffusionError::TooManyAtoms {
            index,
            atoms: m.n_atoms(),
            max: cfg.n,
        })?;
        states.push(state);
    }
    let mut net = ScoreNetwork::init(
        cfg.layers,
        cfg.hidden,
        cfg.n,
        cfg.schedule.clone(),
        cfg.ood,
        cfg.seed,
    );
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, "score-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..states.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<GraphState> = chunk.iter().map(|&i| states[i].clone()).collect();
            let draws = sample_draws(cfg.n, batch.len(), &mut rng);
            let mut tape = Tape::new();
            let pvars: Vec<Var> = net.params.iter().map(|p| tape.leaf(p.clone())).collect();
            let loss = dsm_loss_on_tape(&net, &mut tape, &pvars, &batch, &draws);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(DiffusionError::Diverged { epoch });
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
            for (param, var) in net.params.iter_mut().zip(&pvars) {
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
    Ok((net, ScoreTrainLog { epoch_losses }))
}

/// Extra score added on top of s_θ at each predictor and corrector step.
/// Returning `None` means "no adjustment" and leaves the trajectory
/// bit-identical to the unguided run.
pub type ScoreAdjustment<'a> =
    &'a (dyn Fn(&GraphState) -> Option<(Tensor, Tensor)> + Sync);

fn add_in_place(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn total_score(
    net: &ScoreNetwork,
    state: &GraphState,
    t: f64,
    adjustment: Option<ScoreAdjustment<'_>>,
) -> Result<(Tensor, Tensor), DiffusionError> {
    let (mut sx, mut se) = net.score(state, t)?;
    if let Some(adjust) = adjustment {
        if let Some((gx, ge)) = adjust(state) {
            add_in_place(&mut sx, &gx);
            add_in_place(&mut se, &ge);
        }
    }
    Ok((sx, se))
}

/// Reverse-time sampler: Euler–Maruyama predictor on
/// dG = [f_t(G) − g_t²·s(G,t)]dt̄ + g_t dw̄ from t=1 down to T_EPS, with one
/// Langevin corrector step per predictor step. Deterministic for a fixed RNG
/// stream; the RNG draw order never depends on the adjustment hook.
pub fn reverse_sample<R: Rng>(
    net: &ScoreNetwork,
    steps: usize,
    rng: &mut R,
    adjustment: Option<ScoreAdjustment<'_>>,
) -> Result<GraphState, DiffusionError> {
    if steps < 10 {
        return Err(DiffusionError::TooFewSteps { steps });
    }
    let n = net.n;
    let prior_std = 1.0 + net.ood;
    let mut x = Tensor::randn(&[n, CHANNELS], prior_std, rng);
    let mut e = symmetric_noise(n, rng);
    for v in e.data_mut() {
        *v *= prior_std;
    }
    let dt = (1.0 - T_EPS) / steps as f64;
    for step in 0..steps {
        let t = 1.0 - step as f64 * dt;
        let state = GraphState {
            x: x.clone(),
            e: e.clone(),
            t,
        };
        let beta = net.schedule.beta(t);
        let (sx, se) = total_score(net, &state, t, adjustment)?;
        let zx = Tensor::randn(&[n, CHANNELS], 1.0, rng);
        let ze = symmetric_noise(n, rng);
        let noise_scale = (beta * dt).sqrt();
        for i in 0..x.len() {
            x.data_mut()[i] +=
                (0.5 * beta * x.data()[i] + beta * sx.data()[i]) * dt + noise_scale * zx.data()[i];
        }
        for i in 0..e.len() {
            e.data_mut()[i] +=
                (0.5 * beta * e.data()[i] + beta * se.data()[i]) * dt + noise_scale * ze.data()[i];
        }
        symmetrize_edges(&mut e);
        if !(x.is_finite() && e.is_finite()) {
            return Err(DiffusionError::NonFinite { step });
        }

        // Langevin corrector at the post-predictor time
        let tc = (t - dt).max(T_EPS);
        let state = GraphState {
            x: x.clone(),
            e: e.clone(),
            t: tc,
        };
        let (sx, se) = total_score(net, &state, tc, adjustment)?;
        let zx = Tensor::randn(&[n, CHANNELS], 1.0, rng);
        let ze = symmetric_noise(n, rng);
        let s_norm = (sx.norm().powi(2) + se.norm().powi(2)).sqrt();
        let z_norm = (zx.norm().powi(2) + ze.norm().powi(2)).sqrt();
        if s_norm > 0.0 {
            let eta = 2.0 * (CORRECTOR_SNR * z_norm / s_norm).powi(2);
            let kick = (2.0 * eta).sqrt();
            for i in 0..x.len() {
                x.data_mut()[i] += eta * sx.data()[i] + kick * zx.data()[i];
            }
            for i in 0..e.len() {
                e.data_mut()[i] += eta * se.data()[i] + kick * ze.data()[i];
            }
            symmetrize_edges(&mut e);
        }
        if !(x.is_finite() && e.is_finite()) {
            return Err(DiffusionError::NonFinite { step });
        }
        debug_assert!((0..n).all(|i| e.at(i, i) == 0.0));
    }
    Ok(GraphState { x, e, t: T_EPS })
}

/// Collapse a continuous state to a discrete molecule. Atom per node is the
/// argmax channel (ties to the lowest index; the padding channel drops the
/// node); bond order rounds 3·clamp(E, 0, 1) with exact halves rounding down;
/// only the largest connected component survives. The result may still be
/// invalid — validity is a downstream metric, not a guarantee.
pub fn quantize(g: &GraphState) -> MolecularGraph {
    let n = g.n_nodes();
    let mut keep = Vec::new();
    let mut atoms = Vec::new();
    for node in 0..n {
        let mut best = 0usize;
        for c in 1..CHANNELS {
            if g.x.at(node, c) > g.x.at(node, best) {
                best = c;
            }
        }
        if best != NO_ATOM_CHANNEL {
            keep.push(node);
            atoms.push(Atom::new(ELEMENTS[best]));
        }
    }
    let mut bonds = Vec::new();
    for (ia, &a) in keep.iter().enumerate() {
        for (ib, &b) in keep.iter().enumerate().skip(ia + 1) {
            let clamped = g.e.at(a, b).clamp(0.0, 1.0);
            // round half down: ceil(3v − ½)
            let order = (3.0 * clamped - 0.5).ceil().max(0.0) as u8;
            if order > 0 {
                bonds.push(Bond {
                    a: ia,
                    b: ib,
                    order: order.min(3),
                });
            }
        }
    }
    let graph =
        MolecularGraph::new_lenient(atoms, bonds).expect("quantized structure is well formed");
    if graph.n_atoms() == 0 {
        return graph;
    }
    graph.induced(&graph.largest_component())
}

const MAGIC: &[u8; 4] = b"KDSN";
const VERSION: u16 = 1;

/// Write a score-network checkpoint.
pub fn save_score_network(net: &ScoreNetwork, path: &Path) -> Result<(), DiffusionError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    for v in [
        net.layers as u32,
        net.hidden as u32,
        net.n as u32,
        CHANNELS as u32,
        TIME_DIM as u32,
        E_RANK as u32,
    ] {
        w.write_u32::<LittleEndian>(v)?;
    }
    w.write_f64::<LittleEndian>(net.schedule.beta_min)?;
    w.write_f64::<LittleEndian>(net.schedule.beta_max)?;
    w.write_u32::<LittleEndian>(net.schedule.steps as u32)?;
    w.write_f64::<LittleEndian>(net.ood)?;
    w.write_u32::<LittleEndian>(net.params.len() as u32)?;
    for p in &net.params {
        w.write_u32::<LittleEndian>(p.shape().len() as u32)?;
        for &d in p.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in p.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a score-network checkpoint, validating magic, version and shapes.
pub fn load_score_network(path: &Path) -> Result<ScoreNetwork, DiffusionError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let bad = |reason: &str| DiffusionError::BadFile(reason.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated before magic"))?;
    if &magic != MAGIC {
        return Err(DiffusionError::BadFile(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| bad("truncated version"))?;
    if version != VERSION {
        return Err(DiffusionError::BadFile(format!(
            "unsupported version {version}"
        )));
    }
    let mut header = [0u32; 6];
    for slot in header.iter_mut() {
        *slot = r
            .read_u32::<LittleEndian>()
            .map_err(|_| bad("truncated header"))?;
    }
    let [layers, hidden, n, m, time_dim, e_rank] = header.map(|v| v as usize);
    if m != CHANNELS || time_dim != TIME_DIM || e_rank != E_RANK {
        return Err(bad("architecture constants do not match this build"));
    }
    let beta_min = r
        .read_f64::<LittleEndian>()
        .map_err(|_| bad("truncated schedule"))?;
    let beta_max = r
        .read_f64::<LittleEndian>()
        .map_err(|_| bad("truncated schedule"))?;
    let steps = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated schedule"))? as usize;
    let ood = r
        .read_f64::<LittleEndian>()
        .map_err(|_| bad("truncated header"))?;
    let schedule = NoiseSchedule::new(beta_min, beta_max, steps)
        .map_err(|e| DiffusionError::BadFile(format!("invalid schedule: {e}")))?;
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated tensor count"))? as usize;
    let expected = param_shapes(layers, hidden);
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
    Ok(ScoreNetwork {
        layers,
        hidden,
        n,
        schedule,
        ood,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkit::grad_check;
    use crate::molgraph::{is_valid, parse_smiles, random_molecule};
    use tempfile::tempdir;

    fn toy_net(n: usize, seed: u64) -> ScoreNetwork {
        ScoreNetwork::init(2, 8, n, NoiseSchedule::desk_default(), 0.0, seed)
    }

    #[test]
    fn schedule_validation() {
        assert!(matches!(
            NoiseSchedule::new(1.0, 0.5, 100),
            Err(DiffusionError::BadSchedule { .. })
        ));
        assert!(matches!(
            NoiseSchedule::new(0.1, 10.0, 5),
            Err(DiffusionError::TooFewSteps { steps: 5 })
        ));
        assert!(NoiseSchedule::new(0.1, 10.0, 10).is_ok());
    }

    #[test]
    fn encode_pads_with_no_atom_channel() {
        let m = parse_smiles("CCO").unwrap();
        let g = encode(&m, 5).unwrap();
        assert_eq!(g.x.at(0, 0), 1.0);
        assert_eq!(g.x.at(2, 2), 1.0); // oxygen channel
        assert_eq!(g.x.at(3, NO_ATOM_CHANNEL), 1.0);
        assert_eq!(g.x.at(4, NO_ATOM_CHANNEL), 1.0);
        assert!((g.e.at(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.e.at(0, 1), g.e.at(1, 0));
    }

    #[test]
    fn encode_rejects_oversized_molecules() {
        let m = parse_smiles("CCCCCC").unwrap();
        assert!(matches!(
            encode(&m, 4),
            Err(DiffusionError::TooManyAtoms { atoms: 6, max: 4, .. })
        ));
    }

    #[test]
    fn perturbation_vanishes_as_t_approaches_zero() {
        let m = parse_smiles("CCO").unwrap();
        let g0 = encode(&m, 4).unwrap();
        let sched = NoiseSchedule::desk_default();
        let mut prev = f64::INFINITY;
        for &t in &[0.5, 0.1, 0.01, 1e-4] {
            // fixed noise across scales
            let mut rng = stream_rng(1, "difftest", 0);
            let gt = forward_perturb(&g0, &sched, t, &mut rng).unwrap();
            let dist = gt
                .x
                .data()
                .iter()
                .zip(g0.x.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(dist < prev);
            prev = dist;
        }
        assert!(prev < 0.02);
    }

    #[test]
    fn forward_perturb_rejects_bad_times() {
        let g0 = encode(&parse_smiles("C").unwrap(), 2).unwrap();
        let sched = NoiseSchedule::desk_default();
        let mut rng = stream_rng(1, "difftest", 1);
        for t in [0.0, -0.5, 1.5] {
            assert!(matches!(
                forward_perturb(&g0, &sched, t, &mut rng),
                Err(DiffusionError::TimeOutOfRange { .. })
            ));
        }
    }

    /// At t=1 with β ∈ [0.1, 20] the signal coefficient is ~6.6e-3, so node
    /// marginals should match N(0,1) closely.
    #[test]
    fn marginal_moments_match_standard_normal_at_t_one() {
        let sched = NoiseSchedule::new(0.1, 20.0, 200).unwrap();
        assert!(sched.alpha(1.0) < 0.01);
        let m = random_molecule(&mut stream_rng(2, "difftest", 2), 12);
        let g0 = encode(&m, 25).unwrap();
        let mut rng = stream_rng(2, "difftest", 3);
        let mut samples = Vec::new();
        while samples.len() < 10_000 {
            let gt = forward_perturb(&g0, &sched, 1.0, &mut rng).unwrap();
            samples.extend_from_slice(gt.x.data());
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn perturbed_edges_stay_symmetric_with_zero_diagonal() {
        let g0 = encode(&parse_smiles("C1CC1").unwrap(), 6).unwrap();
        let sched = NoiseSchedule::desk_default();
        let mut rng = stream_rng(3, "difftest", 4);
        let gt = forward_perturb(&g0, &sched, 0.7, &mut rng).unwrap();
        for i in 0..6 {
            assert_eq!(gt.e.at(i, i), 0.0);
            for j in 0..6 {
                assert_eq!(gt.e.at(i, j), gt.e.at(j, i));
            }
        }
    }

    /// With λ(t)=σ(t)² the per-sample loss of the all-zero network collapses
    /// to ‖ξ‖², independent of t.
    #[test]
    fn zero_network_loss_equals_noise_energy() {
        let n = 3;
        let mut net = toy_net(n, 7);
        for p in net.params.iter_mut() {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
        let g0 = encode(&parse_smiles("CCO").unwrap(), n).unwrap();
        for (i, t) in [0.05, 0.3, 0.9].iter().enumerate() {
            let mut rng = stream_rng(4, "difftest", i as u64);
            let draw = Draw {
                t: *t,
                zx: Tensor::randn(&[n, CHANNELS], 1.0, &mut rng),
                ze: symmetric_noise(n, &mut rng),
            };
            let mut tape = Tape::new();
            let pvars: Vec<Var> = net.params.iter().map(|p| tape.leaf(p.clone())).collect();
            let loss = dsm_loss_on_tape(&net, &mut tape, &pvars, &[g0.clone()], &[draw.clone()]);
            let noise_energy = draw.zx.norm().powi(2) + draw.ze.norm().powi(2);
            let got = tape.value(loss).item();
            assert!(
                (got - noise_energy).abs() / noise_energy < 1e-12,
                "t={t}: {got} vs {noise_energy}"
            );
        }
    }

    #[test]
    fn dsm_gradient_matches_finite_differences() {
        let n = 2;
        let net = toy_net(n, 11);
        let g0 = encode(&parse_smiles("C=C").unwrap(), n).unwrap();
        let mut rng = stream_rng(5, "difftest", 0);
        // fixed moderate time: tiny t makes the 1/σ factor swamp the
        // finite-difference probe with cancellation error
        let draws = vec![Draw {
            t: 0.6,
            zx: Tensor::randn(&[n, CHANNELS], 1.0, &mut rng),
            ze: symmetric_noise(n, &mut rng),
        }];
        let batch = vec![g0];
        let worst = grad_check(
            |tape, vars| dsm_loss_on_tape(&net, tape, vars, &batch, &draws),
            &net.params,
            1e-5,
        );
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn training_reduces_loss_on_a_tiny_corpus() {
        let dataset: Vec<MolecularGraph> =
            ["C", "CC", "C=C", "CCO"].iter().map(|s| parse_smiles(s).unwrap()).collect();
        let cfg = ScoreTrainConfig {
            n: 4,
            layers: 2,
            hidden: 16,
            epochs: 60,
            batch_size: 4,
            learning_rate: 5e-3,
            seed: 9,
            ..ScoreTrainConfig::default()
        };
        let (_, log) = train_score(&dataset, &cfg).unwrap();
        let head: f64 = log.epoch_losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = log.epoch_losses[log.epoch_losses.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "loss did not decrease: {head} -> {tail}");
    }

    #[test]
    fn train_rejects_oversized_molecule_with_its_index() {
        let dataset = vec![parse_smiles("C").unwrap(), parse_smiles("CCCCCC").unwrap()];
        let cfg = ScoreTrainConfig {
            n: 4,
            epochs: 1,
            ..ScoreTrainConfig::default()
        };
        assert!(matches!(
            train_score(&dataset, &cfg),
            Err(DiffusionError::TooManyAtoms { index: 1, atoms: 6, max: 4 })
        ));
    }

    #[test]
    fn sampling_is_deterministic_for_a_fixed_seed() {
        let net = toy_net(3, 13);
        let a = reverse_sample(&net, 20, &mut stream_rng(6, "difftest", 0), None).unwrap();
        let b = reverse_sample(&net, 20, &mut stream_rng(6, "difftest", 0), None).unwrap();
        assert_eq!(a.x.data(), b.x.data());
        assert_eq!(a.e.data(), b.e.data());
    }

    #[test]
    fn no_op_adjustment_is_bit_identical_to_unguided() {
        let net = toy_net(3, 13);
        let unguided = reverse_sample(&net, 20, &mut stream_rng(6, "difftest", 1), None).unwrap();
        let hook: &(dyn Fn(&GraphState) -> Option<(Tensor, Tensor)> + Sync) = &|_| None;
        let guided =
            reverse_sample(&net, 20, &mut stream_rng(6, "difftest", 1), Some(hook)).unwrap();
        assert_eq!(unguided.x.data(), guided.x.data());
        assert_eq!(unguided.e.data(), guided.e.data());
    }

    #[test]
    fn sampler_aborts_with_step_index_on_blowup() {
        let net = toy_net(3, 13);
        let hook: &(dyn Fn(&GraphState) -> Option<(Tensor, Tensor)> + Sync) = &|g| {
            Some((
                Tensor::new(
                    vec![g.n_nodes(), CHANNELS],
                    vec![f64::INFINITY; g.n_nodes() * CHANNELS],
                ),
                Tensor::zeros(&[g.n_nodes(), g.n_nodes()]),
            ))
        };
        match reverse_sample(&net, 20, &mut stream_rng(6, "difftest", 2), Some(hook)) {
            Err(DiffusionError::NonFinite { step }) => assert!(step < 20),
            other => panic!("expected NonFinite abort, got {other:?}"),
        }
    }

    #[test]
    fn sampled_edges_are_symmetric() {
        let net = toy_net(4, 17);
        let g = reverse_sample(&net, 25, &mut stream_rng(7, "difftest", 0), None).unwrap();
        for i in 0..4 {
            assert_eq!(g.e.at(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(g.e.at(i, j), g.e.at(j, i));
            }
        }
    }

    #[test]
    fn quantize_bond_rounding_rules() {
        let mut g = encode(&parse_smiles("CC").unwrap(), 2).unwrap();
        g.e.set(0, 1, 0.34);
        g.e.set(1, 0, 0.34);
        assert_eq!(quantize(&g).bond_order(0, 1), 1);
        // exact half-way ties round down: 3·0.5 = 1.5 → order 1
        g.e.set(0, 1, 0.5);
        g.e.set(1, 0, 0.5);
        assert_eq!(quantize(&g).bond_order(0, 1), 1);
        g.e.set(0, 1, 0.1);
        g.e.set(1, 0, 0.1);
        // 0.3 rounds down to no bond; lone pair splits, one carbon survives
        let q = quantize(&g);
        assert_eq!(q.n_atoms(), 1);
    }

    #[test]
    fn quantize_argmax_ties_take_lowest_channel() {
        let mut g = GraphState {
            x: Tensor::zeros(&[1, CHANNELS]),
            e: Tensor::zeros(&[1, 1]),
            t: 0.0,
        };
        g.x.set(0, 1, 0.8); // N
        g.x.set(0, 2, 0.8); // O, tied
        let q = quantize(&g);
        assert_eq!(q.atom(0).element, ELEMENTS[1]);
    }

    #[test]
    fn quantize_drops_no_atom_nodes_and_keeps_largest_component() {
        let m = parse_smiles("CCO").unwrap();
        let g = encode(&m, 6).unwrap();
        let q = quantize(&g);
        assert_eq!(q.n_atoms(), 3);
        assert!(is_valid(&q).is_valid());
    }

    #[test]
    fn encode_quantize_round_trip_is_identity() {
        let mut rng = stream_rng(8, "difftest", 0);
        for i in 0..60 {
            let m = random_molecule(&mut rng, 2 + i % 10);
            let g = encode(&m, 14).unwrap();
            let q = quantize(&g);
            assert!(
                crate::molgraph::iso::isomorphic(&m, &q),
                "round trip changed the molecule at case {i}"
            );
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.kdsn");
        let net = toy_net(5, 21);
        save_score_network(&net, &path).unwrap();
        let loaded = load_score_network(&path).unwrap();
        assert_eq!(net.layers, loaded.layers);
        assert_eq!(net.hidden, loaded.hidden);
        assert_eq!(net.n, loaded.n);
        assert_eq!(net.schedule, loaded.schedule);
        for (a, b) in net.params.iter().zip(&loaded.params) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.kdsn");
        let net = toy_net(3, 23);
        save_score_network(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_score_network(&path),
            Err(DiffusionError::BadFile(_))
        ));
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            load_score_network(&path),
            Err(DiffusionError::BadFile(_))
        ));
    }
}
