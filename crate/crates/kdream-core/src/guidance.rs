//! Target-embedding resolution and knowledge-guided sampling.
//!
//! A target embedding y lives in the span (or convex hull) of known drug
//! embeddings. During reverse diffusion the sampler's score is shifted by the
//! gradient of log N(y; P_φ(G_t), σ_y²·I) — descent on ‖y − P_φ(G_t)‖² —
//! steering generation toward molecules the regressor maps near y.

use crate::crn::{crn_forward, input_gradient, CrnError, CrnParams};
use crate::diffkit::Tensor;
use crate::diffusion::{quantize, reverse_sample, DiffusionError, GraphState, ScoreNetwork};
use crate::molgraph::MolecularGraph;
use crate::rng::stream_rng;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("vector dims differ: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("no targets supplied")]
    EmptyTargets,
    #[error("interpolation weight {alpha} outside [0, 1]")]
    BadAlpha { alpha: f64 },
    #[error("invalid guidance spec: {0}")]
    BadSpec(String),
    #[error("invalid drug domain: {0}")]
    BadDomain(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Crn(#[from] CrnError),
}

/// Target for one guided run: embedding, per-channel guidance weights, and
/// the Gaussian width of the embedding-space likelihood.
#[derive(Debug, Clone)]
pub struct GuidanceSpec {
    pub y: Vec<f64>,
    pub lambda_x: f64,
    pub lambda_e: f64,
    pub sigma_y_sq: f64,
}

impl GuidanceSpec {
    /// σ_y is fixed at 1 by convention; λ absorbs the scale.
    pub fn new(y: Vec<f64>, lambda_x: f64, lambda_e: f64) -> Result<Self, GuidanceError> {
        if !(lambda_x >= 0.0 && lambda_e >= 0.0) {
            return Err(GuidanceError::BadSpec(
                "guidance weights must be non-negative".into(),
            ));
        }
        Ok(GuidanceSpec {
            y,
            lambda_x,
            lambda_e,
            sigma_y_sq: 1.0,
        })
    }

    /// Same guidance weight on both channels.
    pub fn uniform(y: Vec<f64>, lambda: f64) -> Result<Self, GuidanceError> {
        GuidanceSpec::new(y, lambda, lambda)
    }
}

/// Guidance-weight sweep grid: 0.0 to 1.0 in steps of 0.1.
pub fn lambda_sweep_grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Published per-target guidance weights (X channel).
pub fn recommended_guidance_weight(target: &str) -> Option<f64> {
    match target.to_ascii_lowercase().as_str() {
        "parp1" => Some(0.5),
        "fa7" => Some(0.6),
        "5ht1b" => Some(0.7),
        "braf" => Some(0.8),
        "jak2" => Some(0.95),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainMode {
    /// All linear combinations of the basis rows.
    Span,
    /// Convex combinations only (weights on the probability simplex).
    Convex,
}

/// The reachable region of embedding space: combinations of known drug
/// embeddings (rows of `basis`).
#[derive(Debug, Clone)]
pub struct DrugDomain {
    /// k×d, one known drug embedding per row.
    pub basis: DMatrix<f64>,
    pub mode: DomainMode,
}

impl DrugDomain {
    pub fn new(rows: &[Vec<f64>], mode: DomainMode) -> Result<Self, GuidanceError> {
        if rows.is_empty() {
            return Err(GuidanceError::BadDomain("need at least one basis row".into()));
        }
        let d = rows[0].len();
        for row in rows {
            if row.len() != d {
                return Err(GuidanceError::DimMismatch {
                    a: row.len(),
                    b: d,
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(GuidanceError::BadDomain("non-finite basis entry".into()));
            }
        }
        let basis = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Ok(DrugDomain { basis, mode })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(w: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = w.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - 1.0) / (i + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    w.map(|v| (v - theta).max(0.0))
}

/// Resolve one target embedding from several (relation, entity) pairs:
/// argmin over the domain of Σᵢ ‖y + rᵢ − tᵢ‖².
///
/// Span mode solves the k×k normal equations (m·B·Bᵀ)·w = B·Σᵢ(tᵢ − rᵢ) with
/// a minimum-norm w via pseudo-inverse and returns y = Bᵀ·w. Convex mode runs
/// projected gradient descent on the simplex (500 iterations, step
/// 1/(m·σ_max(B)²), stopping when the objective change falls below 1e-10).
pub fn resolve_target_multi(
    domain: &DrugDomain,
    targets: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<f64>, GuidanceError> {
    if targets.is_empty() {
        return Err(GuidanceError::EmptyTargets);
    }
    let d = domain.dim();
    for (r, t) in targets {
        for v in [r, t] {
            if v.len() != d {
                return Err(GuidanceError::DimMismatch { a: v.len(), b: d });
            }
        }
    }
    let m = targets.len() as f64;
    let mut diff_sum = DVector::zeros(d);
    for (r, t) in targets {
        for j in 0..d {
            diff_sum[j] += t[j] - r[j];
        }
    }
    let b = &domain.basis;
    let rhs = b * &diff_sum; // k-vector
    match domain.mode {
        DomainMode::Span => {
            let gram = (b * b.transpose()).scale(m);
            let pinv = gram
                .pseudo_inverse(1e-12)
                .map_err(|e| GuidanceError::BadDomain(format!("pseudo-inverse failed: {e}")))?;
            let w = pinv * rhs;
            let y = b.transpose() * w;
            Ok(y.iter().copied().collect())
        }
        DomainMode::Convex => {
            let k = b.nrows();
            let sigma_max = b
                .clone()
                .singular_values()
                .iter()
                .cloned()
                .fold(0.0_f64, f64::max);
            if sigma_max == 0.0 {
                // all-zero basis: every convex combination is the zero vector
                return Ok(vec![0.0; d]);
            }
            let step = 1.0 / (m * sigma_max * sigma_max);
            let gram = (b * b.transpose()).scale(m);
            let objective = |w: &DVector<f64>| -> f64 {
                let y = b.transpose() * w;
                targets
                    .iter()
                    .map(|(r, t)| {
                        (0..d).map(|j| (y[j] + r[j] - t[j]).powi(2)).sum::<f64>()
                    })
                    .sum()
            };
            let mut w = DVector::from_element(k, 1.0 / k as f64);
            let mut prev = objective(&w);
            for _ in 0..500 {
                // step applied to the residual (half-gradient): a full
                // 2·(gram·w − rhs) step at 1/(m·σ_max²) sits exactly on the
                // stability boundary and can oscillate forever
                let grad = &gram * &w - &rhs;
                w = project_simplex(&(&w - grad.scale(step)));
                let cur = objective(&w);
                if (prev - cur).abs() < 1e-10 {
                    break;
                }
                prev = cur;
            }
            let y = b.transpose() * w;
            Ok(y.iter().copied().collect())
        }
    }
}

/// Linear interpolation (1−α)·y1 + α·y2 with α restricted to [0, 1].
pub fn interpolate(y1: &[f64], y2: &[f64], alpha: f64) -> Result<Vec<f64>, GuidanceError> {
    if y1.len() != y2.len() {
        return Err(GuidanceError::DimMismatch {
            a: y1.len(),
            b: y2.len(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GuidanceError::BadAlpha { alpha });
    }
    Ok(y1
        .iter()
        .zip(y2)
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect())
}

/// The additive score shift at one state, or `None` when both weights are
/// zero (leaving the sampler trajectory bit-identical to the unguided run).
fn guidance_terms(
    crn: &CrnParams,
    spec: &GuidanceSpec,
    g: &GraphState,
) -> Result<Option<(Tensor, Tensor)>, CrnError> {
    if spec.lambda_x == 0.0 && spec.lambda_e == 0.0 {
        return Ok(None);
    }
    let (mut gx, mut ge) = input_gradient(crn, g, &spec.y)?;
    let cx = -spec.lambda_x / (2.0 * spec.sigma_y_sq);
    let ce = -spec.lambda_e / (2.0 * spec.sigma_y_sq);
    for v in gx.data_mut() {
        *v *= cx;
    }
    for v in ge.data_mut() {
        *v *= ce;
    }
    Ok(Some((gx, ge)))
}

/// Combined score: s_θ minus λ/(2σ_y²) times the gradient of the squared
/// embedding distance, per channel. With both λ at zero this is exactly s_θ.
pub fn guided_score(
    net: &ScoreNetwork,
    crn: &CrnParams,
    spec: &GuidanceSpec,
    g: &GraphState,
    t: f64,
) -> Result<(Tensor, Tensor), GuidanceError> {
    let (mut sx, mut se) = net.score(g, t)?;
    if let Some((gx, ge)) = guidance_terms(crn, spec, g)? {
        for (s, v) in sx.data_mut().iter_mut().zip(gx.data()) {
            *s += v;
        }
        for (s, v) in se.data_mut().iter_mut().zip(ge.data()) {
            *s += v;
        }
    }
    Ok((sx, se))
}

#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub steps: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { steps: 200, seed: 0 }
    }
}

/// Outcome of one sampling chain. Failures are recorded, never fatal to the
/// batch.
#[derive(Debug, Clone)]
pub struct ChainRecord {
    pub chain: u64,
    pub seed: u64,
    pub lambda_x: f64,
    pub lambda_e: f64,
    pub molecule: Option<MolecularGraph>,
    /// ‖y − P_φ(G)‖ at the final continuous state.
    pub final_distance: Option<f64>,
    pub error: Option<String>,
}

/// Run `count` independent guided chains and quantize the results. Chains are
/// parallel; chain i draws from the RNG stream (seed, "generate", i), so the
/// output is identical for any worker count.
pub fn generate(
    net: &ScoreNetwork,
    crn: &CrnParams,
    spec: &GuidanceSpec,
    count: usize,
    cfg: &GenerateConfig,
) -> Vec<ChainRecord> {
    (0..count as u64)
        .into_par_iter()
        .map(|chain| {
            let mut rng = stream_rng(cfg.seed, "generate", chain);
            let hook = |g: &GraphState| -> Option<(Tensor, Tensor)> {
                guidance_terms(crn, spec, g).ok().flatten()
            };
            let mut record = ChainRecord {
                chain,
                seed: cfg.seed,
                lambda_x: spec.lambda_x,
                lambda_e: spec.lambda_e,
                molecule: None,
                final_distance: None,
                error: None,
            };
            match reverse_sample(net, cfg.steps, &mut rng, Some(&hook)) {
                Ok(state) => {
                    if let Ok(out) = crn_forward(crn, &state) {
                        let dist = out
                            .iter()
                            .zip(&spec.y)
                            .map(|(o, y)| (y - o).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        record.final_distance = Some(dist);
                    }
                    record.molecule = Some(quantize(&state));
                }
                Err(e) => record.error = Some(e.to_string()),
            }
            record
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crn::{train_crn, AttentionMode, CrnTrainConfig};
    use crate::diffusion::{encode, forward_perturb, NoiseSchedule, CHANNELS};
    use crate::molgraph::{parse_smiles, write_smiles};
    use rand::Rng;

    fn vecs(rows: &[&[f64]]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn attainable_target_is_recovered_exactly() {
        let domain = DrugDomain::new(
            &vecs(&[&[1.0, 0.0, 0.0, 2.0], &[0.0, 1.0, 0.0, -1.0]]),
            DomainMode::Span,
        )
        .unwrap();
        let t = vec![2.0, 3.0, 0.0, 1.0]; // = b0·2 + b1·3
        let r = vec![0.0; 4];
        let y = resolve_target_multi(&domain, &[(r.clone(), t.clone())]).unwrap();
        for (a, b) in y.iter().zip(&t) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_targets_match_the_single_target_answer() {
        let domain = DrugDomain::new(
            &vecs(&[&[1.0, 2.0, 0.5], &[0.0, -1.0, 1.5]]),
            DomainMode::Span,
        )
        .unwrap();
        let pair = (vec![0.2, -0.1, 0.4], vec![1.0, 1.0, 1.0]);
        let single = resolve_target_multi(&domain, &[pair.clone()]).unwrap();
        let triple =
            resolve_target_multi(&domain, &[pair.clone(), pair.clone(), pair]).unwrap();
        for (a, b) in single.iter().zip(&triple) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    /// Independent oracle: the span-mode optimum is the orthogonal projection
    /// of mean(tᵢ − rᵢ) onto the basis row space (Gram–Schmidt by hand).
    #[test]
    fn span_mode_matches_projection_oracle() {
        let mut rng = stream_rng(50, "guidance-test", 0);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let domain = DrugDomain::new(&rows, DomainMode::Span).unwrap();
            let targets: Vec<(Vec<f64>, Vec<f64>)> = (0..2)
                .map(|_| {
                    (
                        (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    )
                })
                .collect();
            let y = resolve_target_multi(&domain, &targets).unwrap();

            // oracle: orthonormalize rows, project the mean difference
            let mean: Vec<f64> = (0..8)
                .map(|j| {
                    targets.iter().map(|(r, t)| t[j] - r[j]).sum::<f64>()
                        / targets.len() as f64
                })
                .collect();
            let mut ortho: Vec<Vec<f64>> = Vec::new();
            for row in &rows {
                let mut v = row.clone();
                for q in &ortho {
                    let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= dot * qi;
                    }
                }
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-10 {
                    ortho.push(v.iter().map(|x| x / norm).collect());
                }
            }
            let mut projected = vec![0.0; 8];
            for q in &ortho {
                let dot: f64 = mean.iter().zip(q).map(|(a, b)| a * b).sum();
                for (p, qi) in projected.iter_mut().zip(q) {
                    *p += dot * qi;
                }
            }
            for (a, b) in y.iter().zip(&projected) {
                assert!((a - b).abs() < 1e-8, "{a} vs oracle {b}");
            }

            // normal-equations residual
            let b = &domain.basis;
            let m = targets.len() as f64;
            let diff = DVector::from_iterator(8, (0..8).map(|j| mean[j] * m));
            let rhs = b * &diff;
            let yv = DVector::from_vec(y.clone());
            // recover w by projecting y back (y = Bᵀw with min-norm w)
            let gram = (b * b.transpose()).scale(m);
            let w = gram.clone().pseudo_inverse(1e-12).unwrap() * &rhs;
            let residual = (&gram * &w - &rhs).norm();
            assert!(residual < 1e-8 * rhs.norm().max(1e-12));
            // and y really is Bᵀw
            assert!((b.transpose() * w - yv).norm() < 1e-8);
        }
    }

    #[test]
    fn scaling_the_differences_scales_the_answer() {
        let domain = DrugDomain::new(
            &vecs(&[&[1.0, 0.5, -0.5], &[0.3, -1.0, 0.2]]),
            DomainMode::Span,
        )
        .unwrap();
        let r = vec![0.1, 0.2, 0.3];
        let t = vec![1.0, -0.5, 0.7];
        let y1 = resolve_target_multi(&domain, &[(r.clone(), t.clone())]).unwrap();
        // scale t − r by 2 (a power of two, so scaling commutes exactly)
        let t2: Vec<f64> = r.iter().zip(&t).map(|(ri, ti)| ri + 2.0 * (ti - ri)).collect();
        let y2 = resolve_target_multi(&domain, &[(r.clone(), t2)]).unwrap();
        for (a, b) in y1.iter().zip(&y2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn convex_mode_recovers_an_interior_combination() {
        let domain = DrugDomain::new(
            &vecs(&[&[2.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]),
            DomainMode::Convex,
        )
        .unwrap();
        // 0.3·b0 + 0.7·b1 is inside the hull
        let t = vec![0.6, 1.4, 0.0];
        let y = resolve_target_multi(&domain, &[(vec![0.0; 3], t.clone())]).unwrap();
        for (a, b) in y.iter().zip(&t) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn convex_mode_stays_in_the_hull_for_outside_targets() {
        let domain = DrugDomain::new(
            &vecs(&[&[1.0, 0.0], &[0.0, 1.0]]),
            DomainMode::Convex,
        )
        .unwrap();
        // far outside the simplex; optimum is the nearest hull point
        let y = resolve_target_multi(&domain, &[(vec![0.0; 2], vec![5.0, 5.0])]).unwrap();
        let sum: f64 = y.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "hull combination sums to {sum}");
        assert!(y.iter().all(|v| *v >= -1e-12));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let y1 = vec![1.0, 2.0, -3.0];
        let y2 = vec![-1.0, 0.5, 4.0];
        assert_eq!(interpolate(&y1, &y2, 0.0).unwrap(), y1);
        assert_eq!(interpolate(&y1, &y2, 1.0).unwrap(), y2);
        let neg: Vec<f64> = y1.iter().map(|v| -v).collect();
        for v in interpolate(&y1, &neg, 0.5).unwrap() {
            assert_eq!(v, 0.0);
        }
        let mid = interpolate(&y1, &y2, 0.5).unwrap();
        let d1: f64 = mid.iter().zip(&y1).map(|(a, b)| (a - b).powi(2)).sum();
        let d2: f64 = mid.iter().zip(&y2).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((d1.sqrt() - d2.sqrt()).abs() < 1e-12);
        assert!(matches!(
            interpolate(&y1, &y2, 1.5),
            Err(GuidanceError::BadAlpha { .. })
        ));
        assert!(matches!(
            interpolate(&y1, &y2[..2], 0.5),
            Err(GuidanceError::DimMismatch { .. })
        ));
    }

    fn toy_system() -> (ScoreNetwork, CrnParams, NoiseSchedule) {
        let schedule = NoiseSchedule::desk_default();
        let net = ScoreNetwork::init(2, 8, 4, schedule.clone(), 0.0, 60);
        let pairs = vec![(parse_smiles("CCO").unwrap(), vec![1.0, -1.0, 0.5, 0.0])];
        let cfg = CrnTrainConfig {
            n: 4,
            layers: 2,
            hidden: 8,
            epochs: 200,
            batch_size: 1,
            learning_rate: 5e-3,
            attention: AttentionMode::Dense,
            seed: 61,
            ..CrnTrainConfig::default()
        };
        let (crn, _) = train_crn(&pairs, &schedule, &cfg).unwrap();
        (net, crn, schedule)
    }

    #[test]
    fn zero_guidance_is_exactly_the_raw_score() {
        let (net, crn, schedule) = toy_system();
        let g0 = encode(&parse_smiles("CCO").unwrap(), 4).unwrap();
        let mut rng = stream_rng(62, "guidance-test", 0);
        let gt = forward_perturb(&g0, &schedule, 0.5, &mut rng).unwrap();
        let spec = GuidanceSpec::uniform(vec![1.0, -1.0, 0.5, 0.0], 0.0).unwrap();
        let (gx, ge) = guided_score(&net, &crn, &spec, &gt, 0.5).unwrap();
        let (rx, re) = net.score(&gt, 0.5).unwrap();
        assert_eq!(gx.data(), rx.data());
        assert_eq!(ge.data(), re.data());
    }

    #[test]
    fn guidance_vanishes_at_the_exact_embedding() {
        let (net, crn, schedule) = toy_system();
        let g0 = encode(&parse_smiles("CCO").unwrap(), 4).unwrap();
        let mut rng = stream_rng(63, "guidance-test", 0);
        let gt = forward_perturb(&g0, &schedule, 0.4, &mut rng).unwrap();
        let at_state = crn_forward(&crn, &gt).unwrap();
        let spec = GuidanceSpec::uniform(at_state, 2.0).unwrap();
        let (gx, ge) = guided_score(&net, &crn, &spec, &gt, 0.4).unwrap();
        let (rx, re) = net.score(&gt, 0.4).unwrap();
        for (a, b) in gx.data().iter().zip(rx.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in ge.data().iter().zip(re.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    /// One guided Euler step should land closer to the target embedding than
    /// the unguided step from the same state and noise.
    #[test]
    fn guided_step_decreases_embedding_distance() {
        let (net, crn, schedule) = toy_system();
        let g0 = encode(&parse_smiles("CCO").unwrap(), 4).unwrap();
        let mut rng = stream_rng(64, "guidance-test", 0);
        let t = 0.5;
        let gt = forward_perturb(&g0, &schedule, t, &mut rng).unwrap();
        let y = vec![1.0, -1.0, 0.5, 0.0];
        let dt = 0.01;
        let beta = schedule.beta(t);
        let zx = Tensor::randn(&[4, CHANNELS], 1.0, &mut rng);
        let euler = |sx: &Tensor, se: &Tensor| -> GraphState {
            let mut x = gt.x.clone();
            for i in 0..x.len() {
                x.data_mut()[i] += (0.5 * beta * gt.x.data()[i] + beta * sx.data()[i]) * dt
                    + (beta * dt).sqrt() * zx.data()[i];
            }
            let mut e = gt.e.clone();
            for i in 0..e.len() {
                e.data_mut()[i] += (0.5 * beta * gt.e.data()[i] + beta * se.data()[i]) * dt;
            }
            crate::diffusion::symmetrize_edges(&mut e);
            GraphState { x, e, t: t - dt }
        };
        let dist = |g: &GraphState| -> f64 {
            crn_forward(&crn, g)
                .unwrap()
                .iter()
                .zip(&y)
                .map(|(o, t)| (t - o).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let (ux, ue) = net.score(&gt, t).unwrap();
        let unguided = dist(&euler(&ux, &ue));
        for lambda in [1.0, 5.0] {
            let spec = GuidanceSpec::uniform(y.clone(), lambda).unwrap();
            let (gx, ge) = guided_score(&net, &crn, &spec, &gt, t).unwrap();
            let guided = dist(&euler(&gx, &ge));
            assert!(
                guided < unguided,
                "λ={lambda}: guided {guided} vs unguided {unguided}"
            );
        }
    }

    #[test]
    fn generation_is_deterministic_and_zero_guidance_matches_unguided() {
        let (net, crn, _) = toy_system();
        let spec = GuidanceSpec::uniform(vec![1.0, -1.0, 0.5, 0.0], 0.0).unwrap();
        let cfg = GenerateConfig { steps: 20, seed: 65 };
        let a = generate(&net, &crn, &spec, 6, &cfg);
        let b = generate(&net, &crn, &spec, 6, &cfg);
        let smiles = |records: &[ChainRecord]| -> Vec<String> {
            records
                .iter()
                .map(|r| r.molecule.as_ref().map(write_smiles).unwrap_or_default())
                .collect()
        };
        assert_eq!(smiles(&a), smiles(&b));

        // elementwise equal to direct unguided sampling on the same streams
        for (chain, record) in a.iter().enumerate() {
            let mut rng = stream_rng(65, "generate", chain as u64);
            let state = reverse_sample(&net, 20, &mut rng, None).unwrap();
            let reference = quantize(&state);
            let got = record.molecule.as_ref().unwrap();
            assert_eq!(write_smiles(got), write_smiles(&reference));
        }
    }

    #[test]
    fn chain_failures_are_recorded_not_fatal() {
        let (net, crn, _) = toy_system();
        let mut spec = GuidanceSpec::uniform(vec![1.0, -1.0, 0.5, 0.0], 1.0).unwrap();
        spec.lambda_x = f64::INFINITY; // force a non-finite trajectory
        let cfg = GenerateConfig { steps: 20, seed: 66 };
        let records = generate(&net, &crn, &spec, 3, &cfg);
        assert_eq!(records.len(), 3);
        for r in &records {
            assert!(r.error.is_some());
            assert!(r.molecule.is_none());
        }
    }

    #[test]
    fn sweep_grid_and_presets() {
        let grid = lambda_sweep_grid();
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[10], 1.0);
        assert!((grid[3] - 0.3).abs() < 1e-12);
        assert_eq!(recommended_guidance_weight("PARP1"), Some(0.5));
        assert_eq!(recommended_guidance_weight("jak2"), Some(0.95));
        assert_eq!(recommended_guidance_weight("unknown"), None);
    }

    use crate::rng::stream_rng;
}
