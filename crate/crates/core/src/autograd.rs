//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation applied during a forward pass. Calling
//! [`Tape::backward`] on a `1x1` node walks the record in reverse and returns
//! the gradient of that scalar with respect to every recorded node. Parameters
//! enter the tape by name so their gradients can be collected into a map.

use std::collections::BTreeMap;

use crate::tensor::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    LogClamp(Var, f64, f64),
    LogSigmoid(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    NormalizeRows(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        exclude_diag: bool,
    },
    Bce(Var, Matrix, f64),
}

struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients of one scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to `v`, zeros when `v` did not influence the output.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Matrix::zeros(r, c)
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// Leaf that receives a gradient but is not a named parameter.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, true)
    }

    /// Named parameter leaf. Repeated calls with the same name return the same node.
    pub fn param(&mut self, name: &str, value: &Matrix) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(Op::Param, value.clone(), true);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Parameter nodes recorded so far, by name.
    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMulBt(a, b), value, ng)
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(bias);
        assert_eq!(bv.rows, 1, "bias must be a single row");
        assert_eq!(av.cols, bv.cols, "bias width");
        let mut value = av.clone();
        for r in 0..value.rows {
            for (o, b) in value.row_mut(r).iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(Op::AddBias(a, bias), value, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Sub(a, b), value, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Mul(a, b), value, ng)
    }

    pub fn add_n(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "add_n of nothing");
        let mut value = self.value(vars[0]).clone();
        for &v in &vars[1..] {
            value.add_assign(self.value(v));
        }
        let ng = vars.iter().any(|&v| self.ng(v));
        self.push(Op::AddN(vars.to_vec()), value, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(Op::Scale(a, s), value, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(Op::Sigmoid(a), value, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(Op::Tanh(a), value, ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(Op::Exp(a), value, ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(Op::Square(a), value, ng)
    }

    /// Elementwise clamp; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(Op::Clamp(a, lo, hi), value, ng)
    }

    /// `ln(clamp(a, lo, hi))`.
    pub fn log_clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi).ln());
        let ng = self.ng(a);
        self.push(Op::LogClamp(a, lo, hi), value, ng)
    }

    /// `ln σ(a)`, stable for large |a|.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(log_sigmoid);
        let ng = self.ng(a);
        self.push(Op::LogSigmoid(a), value, ng)
    }

    pub fn concat_cols(&mut self, vars: &[Var]) -> Var {
        let rows = self.value(vars[0]).rows;
        let cols: usize = vars.iter().map(|&v| self.value(v).cols).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &v in vars {
                let m = self.value(v);
                assert_eq!(m.rows, rows, "concat_cols row count");
                value.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        let ng = vars.iter().any(|&v| self.ng(v));
        self.push(Op::ConcatCols(vars.to_vec()), value, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.cols, "slice_cols out of range");
        let mut value = Matrix::zeros(m.rows, len);
        for r in 0..m.rows {
            value
                .row_mut(r)
                .copy_from_slice(&m.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(Op::SliceCols(a, start, len), value, ng)
    }

    pub fn concat_rows(&mut self, vars: &[Var]) -> Var {
        let cols = self.value(vars[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in vars {
            let m = self.value(v);
            assert_eq!(m.cols, cols, "concat_rows column count");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        let ng = vars.iter().any(|&v| self.ng(v));
        self.push(
            Op::ConcatRows(vars.to_vec()),
            Matrix { rows, cols, data },
            ng,
        )
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select_rows(idx);
        let ng = self.ng(a);
        self.push(Op::SelectRows(a, idx.to_vec()), value, ng)
    }

    /// Sum of all entries as a `1x1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.ng(a);
        self.push(Op::Sum(a), value, ng)
    }

    /// Scales each row to unit Euclidean norm. Rows must be non-zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut value = m.clone();
        for r in 0..m.rows {
            let n = m.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            for v in value.row_mut(r) {
                *v /= n;
            }
        }
        let ng = self.ng(a);
        self.push(Op::NormalizeRows(a), value, ng)
    }

    /// Mean over rows of `logsumexp(row) − row[target]`. With `exclude_diag`,
    /// entry `(r, r)` is left out of row `r`'s normaliser.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize], exclude_diag: bool) -> Var {
        let m = self.value(logits);
        assert_eq!(m.rows, targets.len(), "one target per row");
        let mut total = 0.0;
        for (r, &tgt) in targets.iter().enumerate() {
            let row = m.row(r);
            total += logsumexp_row(row, exclude_diag.then_some(r)) - row[tgt];
        }
        let value = Matrix::filled(1, 1, total / m.rows as f64);
        let ng = self.ng(logits);
        self.push(
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                exclude_diag,
            },
            value,
            ng,
        )
    }

    /// Elementwise binary cross-entropy of probabilities `p` against fixed
    /// targets, with `p` clamped to `[eps, 1 − eps]`.
    pub fn bce(&mut self, p: Var, target: &Matrix, eps: f64) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.shape(), target.shape(), "bce target shape");
        let value = pv.zip_map(target, |p, y| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        });
        let ng = self.ng(p);
        self.push(Op::Bce(p, target.clone(), eps), value, ng)
    }

    /// Gradients of the `1x1` node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Gradient map for every named parameter that influenced `out`.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Matrix> {
        self.params
            .iter()
            .filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_bt(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).matmul_at(g));
                }
            }
            Op::MatMulBt(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.matmul_at(self.value(*a)));
                }
            }
            Op::AddBias(a, bias) => {
                if self.ng(*bias) {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*bias, gb);
                }
                acc(*a, g.clone());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddN(vars) => {
                for &v in vars {
                    acc(v, g.clone());
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |g, y| g * y * (1.0 - y))),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |g, y| g * (1.0 - y * y))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |g, y| g * y)),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |g, x| 2.0 * g * x)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                g.zip_map(self.value(*a), |g, x| if x < *lo || x > *hi { 0.0 } else { g }),
            ),
            Op::LogClamp(a, lo, hi) => acc(
                *a,
                g.zip_map(self.value(*a), |g, x| if x < *lo || x > *hi { 0.0 } else { g / x }),
            ),
            Op::LogSigmoid(a) => acc(*a, g.zip_map(self.value(*a), |g, x| g * sigmoid(-x))),
            Op::ConcatCols(vars) => {
                let mut off = 0;
                for &v in vars {
                    let cols = self.value(v).cols;
                    if self.ng(v) {
                        let mut part = Matrix::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            part.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        acc(v, part);
                    }
                    off += cols;
                }
            }
            Op::SliceCols(a, start, len) => {
                let src = self.value(*a);
                let mut full = Matrix::zeros(src.rows, src.cols);
                for r in 0..src.rows {
                    full.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                acc(*a, full);
            }
            Op::ConcatRows(vars) => {
                let mut off = 0;
                for &v in vars {
                    let m = self.value(v);
                    let n = m.rows * m.cols;
                    if self.ng(v) {
                        acc(
                            v,
                            Matrix {
                                rows: m.rows,
                                cols: m.cols,
                                data: g.data[off..off + n].to_vec(),
                            },
                        );
                    }
                    off += n;
                }
            }
            Op::SelectRows(a, idx) => {
                let src = self.value(*a);
                let mut full = Matrix::zeros(src.rows, src.cols);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in full.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*a, full);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.data[0]));
            }
            Op::NormalizeRows(a) => {
                let x = self.value(*a);
                let y = &node.value;
                let mut dx = Matrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = (gv - yv * proj) / norm;
                    }
                }
                acc(*a, dx);
            }
            Op::SoftmaxXent {
                logits,
                targets,
                exclude_diag,
            } => {
                let m = self.value(*logits);
                let scale = g.data[0] / m.rows as f64;
                let mut d = Matrix::zeros(m.rows, m.cols);
                for (r, &tgt) in targets.iter().enumerate() {
                    let row = m.row(r);
                    let skip = exclude_diag.then_some(r);
                    let lse = logsumexp_row(row, skip);
                    let out = d.row_mut(r);
                    for (c, o) in out.iter_mut().enumerate() {
                        if Some(c) != skip {
                            *o = (row[c] - lse).exp() * scale;
                        }
                    }
                    out[tgt] -= scale;
                }
                acc(*logits, d);
            }
            Op::Bce(p, target, eps) => {
                let pv = self.value(*p);
                let mut d = Matrix::zeros(pv.rows, pv.cols);
                for (k, o) in d.data.iter_mut().enumerate() {
                    let x = pv.data[k];
                    if x < *eps || x > 1.0 - eps {
                        continue;
                    }
                    let y = target.data[k];
                    *o = g.data[k] * (-(y / x) + (1.0 - y) / (1.0 - x));
                }
                acc(*p, d);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn logsumexp_row(row: &[f64], skip: Option<usize>) -> f64 {
    let max = row
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != skip)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != skip)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    max + s.ln()
}

pub mod gradcheck {
    //! Central finite-difference gradient checker.

    use super::*;

    /// Magnitude below which errors are measured in absolute terms.
    pub const ABS_FLOOR: f64 = 1e-4;

    /// Largest relative error between tape gradients and central differences
    /// of `f` with respect to each of `inputs`, using step `h`.
    pub fn max_rel_error(
        inputs: &[Matrix],
        h: f64,
        f: impl Fn(&mut Tape, &[Var]) -> Var,
    ) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.input(m.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out);
        let eval = |xs: &[Matrix]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|m| t.input(m.clone())).collect();
            let o = f(&mut t, &vs);
            t.scalar(o)
        };
        let mut worst: f64 = 0.0;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(&tape, vars[k]);
            for e in 0..input.data.len() {
                let mut plus = inputs.to_vec();
                plus[k].data[e] += h;
                let mut minus = inputs.to_vec();
                minus[k].data[e] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data[e];
                let denom = a.abs().max(numeric.abs()).max(ABS_FLOOR);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::max_rel_error;
    use super::*;

    fn m(rows: usize, cols: usize, seed: f64) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|i| ((i as f64 + 1.0) * seed).sin() * 0.8)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn elementwise_and_matmul_ops_pass_gradcheck() {
        let inputs = [m(3, 4, 0.7), m(4, 2, 1.3), m(1, 2, 2.1)];
        let err = max_rel_error(&inputs, 1e-5, |t, v| {
            let y = t.matmul(v[0], v[1]);
            let y = t.add_bias(y, v[2]);
            let s = t.sigmoid(y);
            let th = t.tanh(y);
            let p = t.mul(s, th);
            let e = t.exp(p);
            let sq = t.square(e);
            let sl = t.slice_cols(sq, 1, 1);
            let c = t.concat_cols(&[sq, sl]);
            let ls = t.log_sigmoid(c);
            t.sum(ls)
        });
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn softmax_and_normalize_pass_gradcheck() {
        let inputs = [m(4, 3, 0.9)];
        let err = max_rel_error(&inputs, 1e-5, |t, v| {
            let n = t.normalize_rows(v[0]);
            let s = t.matmul_bt(n, n);
            let s = t.scale(s, 2.0);
            t.softmax_xent(s, &[1, 0, 3, 2], true)
        });
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn bce_and_rows_pass_gradcheck() {
        let p = m(2, 3, 0.4).map(|x| 0.5 + 0.4 * x);
        let y = Matrix::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let err = max_rel_error(&[p, m(2, 3, 1.1)], 1e-5, |t, v| {
            let b = t.bce(v[0], &y, 1e-7);
            let r = t.concat_rows(&[b, v[1]]);
            let r = t.select_rows(r, &[0, 3, 3]);
            let l = t.log_clamp(r, 1e-3, 10.0);
            t.sum(l)
        });
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn shared_param_accumulates() {
        let mut tape = Tape::new();
        let w = Matrix::filled(1, 1, 3.0);
        let a = tape.param("w", &w);
        let b = tape.param("w", &w);
        assert_eq!(a, b);
        let y = tape.mul(a, b);
        let s = tape.sum(y);
        let g = tape.backward(s);
        assert_eq!(tape.param_grads(&g)["w"].data[0], 6.0);
    }
}
