//! Layer primitives on the tape: initializers, affine maps and the gated
//! recurrent cell shared by every recurrent network in the crate.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Tape, Var};
use crate::datamodel::ModelBundle;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Glorot-uniform `[fan_in, fan_out]`.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix {
        rows: fan_in,
        cols: fan_out,
        data: (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect(),
    }
}

/// Random `n x n` orthogonal matrix (Gram-Schmidt on a Gaussian draw).
pub fn orthogonal(n: usize, rng: &mut Rng) -> Matrix {
    loop {
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let proj: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = rows.split_at_mut(i);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= proj * y;
                }
            }
            let norm = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            rows[i].iter_mut().for_each(|x| *x /= norm);
        }
        if ok {
            return Matrix::from_rows(&rows).expect("square");
        }
    }
}

/// Recurrent matrix `[h, 4h]` made of four orthogonal gate blocks.
pub fn orthogonal_gates(h: usize, rng: &mut Rng) -> Matrix {
    let blocks: Vec<Matrix> = (0..4).map(|_| orthogonal(h, rng)).collect();
    let mut out = Matrix::zeros(h, 4 * h);
    for (g, b) in blocks.iter().enumerate() {
        for r in 0..h {
            out.row_mut(r)[g * h..(g + 1) * h].copy_from_slice(b.row(r));
        }
    }
    out
}

/// Gate bias `[1, 4h]`: zeros except the forget block, which is 1.
pub fn gate_bias(h: usize) -> Matrix {
    let mut b = Matrix::zeros(1, 4 * h);
    for v in &mut b.data[h..2 * h] {
        *v = 1.0;
    }
    b
}

/// Inserts `{prefix}.w` `[fan_in, fan_out]` and `{prefix}.b` `[1, fan_out]`.
pub fn init_linear(bundle: &mut ModelBundle, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
    bundle
        .params
        .insert(format!("{prefix}.w"), glorot(fan_in, fan_out, rng));
    bundle
        .params
        .insert(format!("{prefix}.b"), Matrix::zeros(1, fan_out));
}

/// Inserts `{prefix}.w_in`, `{prefix}.w_rec`, `{prefix}.bias` for an LSTM layer.
pub fn init_lstm(bundle: &mut ModelBundle, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) {
    bundle
        .params
        .insert(format!("{prefix}.w_in"), glorot(input, 4 * hidden, rng));
    bundle
        .params
        .insert(format!("{prefix}.w_rec"), orthogonal_gates(hidden, rng));
    bundle
        .params
        .insert(format!("{prefix}.bias"), gate_bias(hidden));
}

/// `x · w + b` with parameters `{prefix}.w`, `{prefix}.b`.
pub fn linear(tape: &mut Tape, bundle: &ModelBundle, prefix: &str, x: Var) -> Result<Var> {
    let wn = format!("{prefix}.w");
    let bn = format!("{prefix}.b");
    let w = tape.param(&wn, bundle.get(&wn)?);
    let b = tape.param(&bn, bundle.get(&bn)?);
    let y = tape.matmul(x, w);
    Ok(tape.add_bias(y, b))
}

/// Applies the LSTM gate nonlinearities to pre-activations `[n, 4h]` laid out
/// as input, forget, output, candidate. Returns `(h, c)`.
pub fn gated_update(tape: &mut Tape, pre: Var, c_prev: Var, hidden: usize) -> (Var, Var) {
    let i = tape.slice_cols(pre, 0, hidden);
    let f = tape.slice_cols(pre, hidden, hidden);
    let o = tape.slice_cols(pre, 2 * hidden, hidden);
    let g = tape.slice_cols(pre, 3 * hidden, hidden);
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let o = tape.sigmoid(o);
    let g = tape.tanh(g);
    let keep = tape.mul(f, c_prev);
    let write = tape.mul(i, g);
    let c = tape.add(keep, write);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    (h, c)
}

/// Tape handles of one LSTM layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_in: Var,
    pub w_rec: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl LstmVars {
    pub fn load(tape: &mut Tape, bundle: &ModelBundle, prefix: &str) -> Result<Self> {
        let names = [
            format!("{prefix}.w_in"),
            format!("{prefix}.w_rec"),
            format!("{prefix}.bias"),
        ];
        let w_rec = bundle.get(&names[1])?;
        let hidden = w_rec.rows;
        Ok(LstmVars {
            w_in: tape.param(&names[0], bundle.get(&names[0])?),
            w_rec: tape.param(&names[1], w_rec),
            bias: tape.param(&names[2], bundle.get(&names[2])?),
            hidden,
        })
    }

    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var) {
        let a = tape.matmul(x, self.w_in);
        let b = tape.matmul(h, self.w_rec);
        let pre = tape.add(a, b);
        let pre = tape.add_bias(pre, self.bias);
        gated_update(tape, pre, c, self.hidden)
    }

    /// Runs the layer over `inputs` from a zero state, returning every hidden state.
    pub fn run(&self, tape: &mut Tape, inputs: &[Var]) -> Vec<Var> {
        let Some(&first) = inputs.first() else {
            return Vec::new();
        };
        let n = tape.value(first).rows;
        let mut h = tape.constant(Matrix::zeros(n, self.hidden));
        let mut c = tape.constant(Matrix::zeros(n, self.hidden));
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (nh, nc) = self.step(tape, x, h, c);
            h = nh;
            c = nc;
            out.push(h);
        }
        out
    }
}

/// Per-step `[n, d]` constants for a sequence tensor, optionally with the same
/// label block appended to every step.
pub fn sequence_inputs(
    tape: &mut Tape,
    x: &crate::tensor::Tensor3,
    labels: Option<&Matrix>,
) -> Vec<Var> {
    (0..x.t)
        .map(|t| {
            let step = x.step(t);
            match labels {
                Some(l) => tape.constant(hcat(&step, l)),
                None => tape.constant(step),
            }
        })
        .collect()
}

/// Horizontal concatenation of two matrices with equal row counts.
pub fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows);
    let mut out = Matrix::zeros(a.rows, a.cols + b.cols);
    for r in 0..a.rows {
        out.row_mut(r)[..a.cols].copy_from_slice(a.row(r));
        out.row_mut(r)[a.cols..].copy_from_slice(b.row(r));
    }
    out
}
