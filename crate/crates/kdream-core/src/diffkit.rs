//! Dense-tensor math with reverse-mode differentiation.
//!
//! A [`Tape`] records operation nodes as they are built; [`Tape::backward`]
//! walks them once in reverse order and accumulates gradients into every
//! node, including leaves. Shapes are explicit everywhere; the only implicit
//! broadcast is row-vector bias addition ([`Tape::add_row`]).
//!
//! [`grad_check`] is the verification oracle used by every trained module:
//! central finite differences per coordinate against the tape gradient.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {a:?} vs {b:?}")]
    ShapeMismatch {
        op: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}

/// Row-major dense tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let data = (0..shape.iter().product())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    AddConst(Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    Hadamard(Var, Var),
    HadamardConst(Var),
    ConcatCols(Var, Var),
    RowSoftmax(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Sum(Var),
    Mse(Var, Var),
}

struct Node {
    op: Op,
    value: Tensor,
    /// Saved constant operand for AddConst / HadamardConst.
    aux: Option<Tensor>,
}

/// Records a computation for one backward pass. Single-owner; independent
/// tapes may run concurrently.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, aux: Option<Tensor>) -> Var {
        self.nodes.push(Node { op, value, aux });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, None)
    }

    fn require_same(&self, op: &'static str, a: Var, b: Var) {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            ta.same_shape(tb),
            "shape mismatch in {op}: {:?} vs {:?}",
            ta.shape,
            tb.shape
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.require_same("add", a, b);
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v, None)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.require_same("sub", a, b);
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v, None)
    }

    /// Add a constant tensor (not differentiated through).
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        assert!(
            self.value(a).same_shape(c),
            "shape mismatch in add_const: {:?} vs {:?}",
            self.value(a).shape,
            c.shape
        );
        let v = zip(self.value(a), c, |x, y| x + y);
        self.push(Op::AddConst(a), v, None)
    }

    /// Broadcast-add a 1×k row vector to every row of an n×k matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        assert!(
            ta.shape.len() == 2 && tr.shape.len() == 2 && tr.rows() == 1 && tr.cols() == ta.cols(),
            "shape mismatch in add_row: {:?} vs {:?}",
            ta.shape,
            tr.shape
        );
        let cols = ta.cols();
        let data = ta
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + tr.data[i % cols])
            .collect();
        let v = Tensor::new(ta.shape.clone(), data);
        self.push(Op::AddRow(a, row), v, None)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = map(self.value(a), |x| x * c);
        self.push(Op::Scale(a, c), v, None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.shape.len() == 2 && tb.shape.len() == 2 && ta.cols() == tb.rows(),
            "shape mismatch in matmul: {:?} vs {:?}",
            ta.shape,
            tb.shape
        );
        let v = matmul_raw(ta, tb);
        self.push(Op::Matmul(a, b), v, None)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = transpose_raw(self.value(a));
        self.push(Op::Transpose(a), v, None)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        self.require_same("hadamard", a, b);
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Hadamard(a, b), v, None)
    }

    /// Element-wise product with a constant mask (not differentiated through).
    pub fn hadamard_const(&mut self, a: Var, mask: &Tensor) -> Var {
        assert!(
            self.value(a).same_shape(mask),
            "shape mismatch in hadamard_const: {:?} vs {:?}",
            self.value(a).shape,
            mask.shape
        );
        let v = zip(self.value(a), mask, |x, y| x * y);
        self.push(Op::HadamardConst(a), v, Some(mask.clone()))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.shape.len() == 2 && tb.shape.len() == 2 && ta.rows() == tb.rows(),
            "shape mismatch in concat_cols: {:?} vs {:?}",
            ta.shape,
            tb.shape
        );
        let (n, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for r in 0..n {
            data.extend_from_slice(&ta.data[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data[r * cb..(r + 1) * cb]);
        }
        let v = Tensor::matrix(n, ca + cb, data);
        self.push(Op::ConcatCols(a, b), v, None)
    }

    /// Softmax over each row of a matrix.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        assert!(
            ta.shape.len() == 2,
            "row_softmax expects a matrix, got {:?}",
            ta.shape
        );
        let (n, k) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; n * k];
        for r in 0..n {
            let row = &ta.data[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, x) in row.iter().enumerate() {
                let e = (x - m).exp();
                data[r * k + j] = e;
                z += e;
            }
            for j in 0..k {
                data[r * k + j] /= z;
            }
        }
        let v = Tensor::matrix(n, k, data);
        self.push(Op::RowSoftmax(a), v, None)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = map(self.value(a), |x| if x >= 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v, None)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::tanh);
        self.push(Op::Tanh(a), v, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v, None)
    }

    /// Sum of all elements, producing a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(Op::Sum(a), v, None)
    }

    /// Mean squared error between two same-shape tensors, producing a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        self.require_same("mse", a, b);
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push(Op::Mse(a, b), Tensor::scalar(s / n), None)
    }

    /// Sum of squared differences, ‖a − b‖².
    pub fn sse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.hadamard(d, d);
        self.sum(sq)
    }

    /// Symmetrize a square matrix: (A + Aᵀ)/2.
    pub fn symmetrize(&mut self, a: Var) -> Var {
        let at = self.transpose(a);
        let s = self.add(a, at);
        self.scale(s, 0.5)
    }

    /// Reverse-mode sweep from a scalar output. Returns per-node gradients;
    /// index with the `Var`s returned during construction.
    pub fn backward(&mut self, output: Var) -> Result<Gradients, DiffError> {
        let out_shape = self.value(output).shape.clone();
        if !out_shape.is_empty() && out_shape.iter().product::<usize>() != 1 {
            return Err(DiffError::NonScalarOutput(out_shape));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(&n.value.shape))
            .collect();
        grads[output.0].data[0] = 1.0;

        for i in (0..=output.0).rev() {
            let g = grads[i].clone();
            if g.data.iter().all(|v| *v == 0.0) {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], &g);
                    acc(&mut grads[b.0], &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[a.0], &g);
                    acc_scaled(&mut grads[b.0], &g, -1.0);
                }
                Op::AddConst(a) => acc(&mut grads[a.0], &g),
                Op::AddRow(a, row) => {
                    acc(&mut grads[a.0], &g);
                    let cols = g.cols();
                    for (idx, v) in g.data.iter().enumerate() {
                        grads[row.0].data[idx % cols] += v;
                    }
                }
                Op::Scale(a, c) => acc_scaled(&mut grads[a.0], &g, *c),
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let bt = transpose_raw(&self.nodes[b.0].value);
                    let da = matmul_raw(&g, &bt);
                    acc(&mut grads[a.0], &da);
                    let at = transpose_raw(&self.nodes[a.0].value);
                    let db = matmul_raw(&at, &g);
                    acc(&mut grads[b.0], &db);
                }
                Op::Transpose(a) => {
                    let gt = transpose_raw(&g);
                    acc(&mut grads[a.0], &gt);
                }
                Op::Hadamard(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = zip(&g, &self.nodes[b.0].value, |x, y| x * y);
                    acc(&mut grads[a.0], &da);
                    let db = zip(&g, &self.nodes[a.0].value, |x, y| x * y);
                    acc(&mut grads[b.0], &db);
                }
                Op::HadamardConst(a) => {
                    let mask = self.nodes[i].aux.as_ref().expect("mask saved");
                    let da = zip(&g, mask, |x, y| x * y);
                    acc(&mut grads[a.0], &da);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let ca = self.nodes[a.0].value.cols();
                    let cb = self.nodes[b.0].value.cols();
                    for r in 0..g.rows() {
                        for c in 0..ca {
                            grads[a.0].data[r * ca + c] += g.at(r, c);
                        }
                        for c in 0..cb {
                            grads[b.0].data[r * cb + c] += g.at(r, ca + c);
                        }
                    }
                }
                Op::RowSoftmax(a) => {
                    let s = &self.nodes[i].value;
                    let (n, k) = (s.rows(), s.cols());
                    let mut da = Tensor::zeros(s.shape());
                    for r in 0..n {
                        let dot: f64 = (0..k).map(|j| g.at(r, j) * s.at(r, j)).sum();
                        for j in 0..k {
                            da.set(r, j, s.at(r, j) * (g.at(r, j) - dot));
                        }
                    }
                    acc(&mut grads[a.0], &da);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &self.nodes[a.0].value;
                    let da = zip(&g, x, |gv, xv| if xv >= 0.0 { gv } else { gv * slope });
                    acc(&mut grads[a.0], &da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let da = zip(&g, y, |gv, yv| gv * (1.0 - yv * yv));
                    acc(&mut grads[a.0], &da);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let da = zip(&g, y, |gv, yv| gv * yv * (1.0 - yv));
                    acc(&mut grads[a.0], &da);
                }
                Op::Sum(a) => {
                    let gv = g.data[0];
                    for v in grads[a.0].data.iter_mut() {
                        *v += gv;
                    }
                }
                Op::Mse(a, b) => {
                    let (a, b) = (*a, *b);
                    let gv = g.data[0];
                    let n = self.nodes[a.0].value.len() as f64;
                    let diff = zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| {
                        2.0 * (x - y) / n
                    });
                    acc_scaled(&mut grads[a.0], &diff, gv);
                    acc_scaled(&mut grads[b.0], &diff, -gv);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> &Tensor {
        &self.grads[v.0]
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|x| f(*x)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| f(*x, *y))
            .collect(),
    }
}

fn acc(into: &mut Tensor, g: &Tensor) {
    for (d, s) in into.data.iter_mut().zip(&g.data) {
        *d += s;
    }
}

fn acc_scaled(into: &mut Tensor, g: &Tensor, c: f64) {
    for (d, s) in into.data.iter_mut().zip(&g.data) {
        *d += c * s;
    }
}

pub fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(n, m, out)
}

pub fn transpose_raw(a: &Tensor) -> Tensor {
    let (n, m) = (a.rows(), a.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.data[i * m + j];
        }
    }
    Tensor::matrix(m, n, out)
}

/// Central-difference gradient check.
///
/// `f` rebuilds the scalar computation on a fresh tape from the given leaves.
/// Returns the worst relative error over every coordinate of every input.
pub fn grad_check<F>(f: F, points: &[Tensor], eps: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).expect("grad_check output must be scalar");

    let mut worst = 0.0f64;
    for (pi, point) in points.iter().enumerate() {
        let analytic = grads.wrt(vars[pi]);
        for ci in 0..point.len() {
            let mut plus = points.to_vec();
            plus[pi].data[ci] += eps;
            let mut minus = points.to_vec();
            minus[pi].data[ci] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data[ci];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn matmul_identity() {
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(matmul_raw(&eye, &a), a);
    }

    #[test]
    fn row_softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 3, vec![0.0; 3]));
        let s = tape.row_softmax(x);
        for v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        let y = tape.sum(x);
        let g = tape.backward(y).unwrap();
        assert!(g.wrt(x).data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn mse_of_identical_inputs_has_zero_gradient() {
        let mut tape = Tape::new();
        let t = Tensor::matrix(2, 2, vec![1., -2., 3., 0.5]);
        let a = tape.leaf(t.clone());
        let b = tape.leaf(t);
        let y = tape.mse(a, b);
        assert_eq!(tape.value(y).item(), 0.0);
        let g = tape.backward(y).unwrap();
        assert!(g.wrt(a).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![1.0; 4]));
        let y = tape.add(x, x);
        assert!(matches!(
            tape.backward(y),
            Err(DiffError::NonScalarOutput(_))
        ));
    }

    #[test]
    fn backward_is_linear_over_shared_leaves() {
        let x0 = Tensor::matrix(2, 2, vec![0.3, -1.2, 0.7, 2.0]);
        let grad_of = |which: u8| -> Vec<f64> {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let f = {
                let t = tape.tanh(x);
                tape.sum(t)
            };
            let g = {
                let h = tape.hadamard(x, x);
                tape.sum(h)
            };
            let out = match which {
                0 => f,
                1 => g,
                _ => tape.add(f, g),
            };
            let grads = tape.backward(out).unwrap();
            grads.wrt(x).data().to_vec()
        };
        let (gf, gg, gsum) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..4 {
            assert!((gf[i] + gg[i] - gsum[i]).abs() < 1e-12);
        }
    }

    // Every primitive adjoint against central differences on random inputs.
    #[test]
    fn primitive_adjoints_match_finite_differences() {
        let mut rng = stream_rng(11, "diffkit-test", 0);
        let a = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let w = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let row = Tensor::randn(&[1, 5], 1.0, &mut rng);
        let mask = Tensor::randn(&[4, 5], 1.0, &mut rng);

        let checks: Vec<(&str, f64)> = vec![
            (
                "add",
                grad_check(
                    |t, v| {
                        let s = t.add(v[0], v[1]);
                        let s = t.tanh(s);
                        t.sum(s)
                    },
                    &[a.clone(), b.clone()],
                    1e-4,
                ),
            ),
            (
                "sub",
                grad_check(
                    |t, v| {
                        let s = t.sub(v[0], v[1]);
                        let s = t.sigmoid(s);
                        t.sum(s)
                    },
                    &[a.clone(), b.clone()],
                    1e-4,
                ),
            ),
            (
                "matmul",
                grad_check(
                    |t, v| {
                        let m = t.matmul(v[0], v[1]);
                        let m = t.tanh(m);
                        t.sum(m)
                    },
                    &[a.clone(), w.clone()],
                    1e-4,
                ),
            ),
            (
                "hadamard",
                grad_check(
                    |t, v| {
                        let m = t.hadamard(v[0], v[1]);
                        t.sum(m)
                    },
                    &[a.clone(), b.clone()],
                    1e-4,
                ),
            ),
            (
                "concat",
                grad_check(
                    |t, v| {
                        let c = t.concat_cols(v[0], v[1]);
                        let c = t.tanh(c);
                        t.sum(c)
                    },
                    &[a.clone(), b.clone()],
                    1e-4,
                ),
            ),
            (
                "row_softmax",
                grad_check(
                    |t, v| {
                        let s = t.row_softmax(v[0]);
                        let sq = t.hadamard(s, s);
                        t.sum(sq)
                    },
                    &[a.clone()],
                    1e-4,
                ),
            ),
            (
                "leaky_relu",
                grad_check(
                    |t, v| {
                        let r = t.leaky_relu(v[0], 0.2);
                        t.sum(r)
                    },
                    &[a.clone()],
                    1e-4,
                ),
            ),
            (
                "tanh",
                grad_check(
                    |t, v| {
                        let r = t.tanh(v[0]);
                        t.sum(r)
                    },
                    &[a.clone()],
                    1e-4,
                ),
            ),
            (
                "sigmoid",
                grad_check(
                    |t, v| {
                        let r = t.sigmoid(v[0]);
                        t.sum(r)
                    },
                    &[a.clone()],
                    1e-4,
                ),
            ),
            (
                "mse",
                grad_check(|t, v| t.mse(v[0], v[1]), &[a.clone(), b.clone()], 1e-4),
            ),
            (
                "add_row",
                grad_check(
                    |t, v| {
                        let s = t.add_row(v[0], v[1]);
                        let s = t.tanh(s);
                        t.sum(s)
                    },
                    &[a.clone(), row.clone()],
                    1e-4,
                ),
            ),
            (
                "transpose+scale+mask",
                grad_check(
                    |t, v| {
                        let tr = t.transpose(v[0]);
                        let tr = t.transpose(tr);
                        let sc = t.scale(tr, 1.7);
                        let mk = t.hadamard_const(sc, &mask);
                        t.sum(mk)
                    },
                    &[a.clone()],
                    1e-4,
                ),
            ),
        ];
        for (name, err) in checks {
            assert!(err < 1e-5, "{name} adjoint error {err}");
        }
    }
}
