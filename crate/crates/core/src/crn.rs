//! Bilateral LSTM cell and the coupled recurrent generator.
//!
//! Each domain's gates see its own input, its own previous hidden state and
//! the other domain's previous hidden state. Gate blocks are fused along the
//! column axis in the order input, forget, output, candidate.

use crate::autograd::{Tape, Var};
use crate::datamodel::{ModelBundle, ModelDims, NoiseSequence};
use crate::dualvae::Domain;
use crate::error::{Error, Result};
use crate::nn;
use crate::rng::{stream, stream_rng};
use crate::tensor::{Matrix, Tensor3};

/// Plain LSTM cell parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    /// `[V, 4H]`
    pub w_input: Matrix,
    /// `[H, 4H]`
    pub w_rec: Matrix,
    /// `[1, 4H]`
    pub bias: Matrix,
}

impl LstmWeights {
    pub fn zeros(v: usize, h: usize) -> Self {
        LstmWeights {
            w_input: Matrix::zeros(v, 4 * h),
            w_rec: Matrix::zeros(h, 4 * h),
            bias: Matrix::zeros(1, 4 * h),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_rec.rows
    }
}

/// One domain's half of a bilateral cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchWeights {
    /// `[V, 4H]`
    pub w_input: Matrix,
    /// Counterpart's previous hidden state, `[H, 4H]`.
    pub w_cross: Matrix,
    /// Own previous hidden state, `[H, 4H]`.
    pub w_self: Matrix,
    /// `[1, 4H]`
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlstmWeights {
    pub cont: BranchWeights,
    pub disc: BranchWeights,
}

impl BranchWeights {
    pub fn zeros(v: usize, h: usize) -> Self {
        BranchWeights {
            w_input: Matrix::zeros(v, 4 * h),
            w_cross: Matrix::zeros(h, 4 * h),
            w_self: Matrix::zeros(h, 4 * h),
            bias: Matrix::zeros(1, 4 * h),
        }
    }

    /// The same branch without its cross-domain term.
    pub fn own_lstm(&self) -> LstmWeights {
        LstmWeights {
            w_input: self.w_input.clone(),
            w_rec: self.w_self.clone(),
            bias: self.bias.clone(),
        }
    }
}

impl BlstmWeights {
    pub fn branch(&self, domain: Domain) -> &BranchWeights {
        match domain {
            Domain::Continuous => &self.cont,
            Domain::Discrete => &self.disc,
        }
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        let branch = |d: Domain| -> Result<BranchWeights> {
            let p = blstm_prefix(d);
            Ok(BranchWeights {
                w_input: bundle.get(&format!("{p}.w_input"))?.clone(),
                w_cross: bundle.get(&format!("{p}.w_cross"))?.clone(),
                w_self: bundle.get(&format!("{p}.w_self"))?.clone(),
                bias: bundle.get(&format!("{p}.bias"))?.clone(),
            })
        };
        Ok(BlstmWeights {
            cont: branch(Domain::Continuous)?,
            disc: branch(Domain::Discrete)?,
        })
    }
}

/// Hidden and cell states of both domains, each `[N, H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    pub hc: Matrix,
    pub cc: Matrix,
    pub hd: Matrix,
    pub cd: Matrix,
}

impl CoupledState {
    pub fn zeros(n: usize, h: usize) -> Self {
        CoupledState {
            hc: Matrix::zeros(n, h),
            cc: Matrix::zeros(n, h),
            hd: Matrix::zeros(n, h),
            cd: Matrix::zeros(n, h),
        }
    }
}

fn expect_shape(ctx: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::shape(
            ctx,
            format!("[{rows}, {cols}]"),
            format!("[{}, {}]", m.rows, m.cols),
        ));
    }
    Ok(())
}

/// One LSTM transition. Returns `(h_t, c_t)`.
pub fn lstm_step(
    x: &Matrix,
    h_prev: &Matrix,
    c_prev: &Matrix,
    w: &LstmWeights,
) -> Result<(Matrix, Matrix)> {
    let h = w.hidden();
    let n = x.rows;
    expect_shape("lstm input", x, n, w.w_input.rows)?;
    expect_shape("lstm hidden state", h_prev, n, h)?;
    expect_shape("lstm cell state", c_prev, n, h)?;
    expect_shape("lstm input weights", &w.w_input, x.cols, 4 * h)?;
    expect_shape("lstm bias", &w.bias, 1, 4 * h)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let cv = tape.constant(c_prev.clone());
    let wi = tape.constant(w.w_input.clone());
    let wr = tape.constant(w.w_rec.clone());
    let b = tape.constant(w.bias.clone());
    let (h, c) = lstm_on_tape(&mut tape, xv, hv, cv, wi, wr, b, h);
    Ok((tape.value(h).clone(), tape.value(c).clone()))
}

#[allow(clippy::too_many_arguments)]
pub fn lstm_on_tape(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w_input: Var,
    w_rec: Var,
    bias: Var,
    hidden: usize,
) -> (Var, Var) {
    let a = tape.matmul(x, w_input);
    let r = tape.matmul(h_prev, w_rec);
    let pre = tape.add(a, r);
    let pre = tape.add_bias(pre, bias);
    nn::gated_update(tape, pre, c_prev, hidden)
}

/// Tape handles of one branch.
#[derive(Clone, Copy, Debug)]
pub struct BranchVars {
    pub w_input: Var,
    pub w_cross: Var,
    pub w_self: Var,
    pub bias: Var,
}

/// Tape handles of a coupled state.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub hc: Var,
    pub cc: Var,
    pub hd: Var,
    pub cd: Var,
}

fn branch_on_tape(
    tape: &mut Tape,
    x: Var,
    h_own: Var,
    h_other: Var,
    c_own: Var,
    w: &BranchVars,
    hidden: usize,
) -> (Var, Var) {
    let a = tape.matmul(x, w.w_input);
    let s = tape.matmul(h_own, w.w_self);
    let pre = tape.add(a, s);
    let x_term = tape.matmul(h_other, w.w_cross);
    let pre = tape.add(pre, x_term);
    let pre = tape.add_bias(pre, w.bias);
    nn::gated_update(tape, pre, c_own, hidden)
}

/// One bilateral transition recorded on `tape`. Both branches read the
/// previous state, so the update is simultaneous.
pub fn blstm_on_tape(
    tape: &mut Tape,
    vc: Var,
    vd: Var,
    state: StateVars,
    wc: &BranchVars,
    wd: &BranchVars,
    hidden: usize,
) -> StateVars {
    let (hc, cc) = branch_on_tape(tape, vc, state.hc, state.hd, state.cc, wc, hidden);
    let (hd, cd) = branch_on_tape(tape, vd, state.hd, state.hc, state.cd, wd, hidden);
    StateVars { hc, cc, hd, cd }
}

fn check_branch(ctx: &str, w: &BranchWeights, v: usize, h: usize) -> Result<()> {
    expect_shape(&format!("{ctx} input weights"), &w.w_input, v, 4 * h)?;
    expect_shape(&format!("{ctx} cross weights"), &w.w_cross, h, 4 * h)?;
    expect_shape(&format!("{ctx} self weights"), &w.w_self, h, 4 * h)?;
    expect_shape(&format!("{ctx} bias"), &w.bias, 1, 4 * h)
}

/// One bilateral LSTM transition.
pub fn blstm_step(
    vc: &Matrix,
    vd: &Matrix,
    state: &CoupledState,
    w: &BlstmWeights,
) -> Result<CoupledState> {
    let h = w.cont.w_self.rows;
    let n = vc.rows;
    check_branch("continuous branch", &w.cont, vc.cols, h)?;
    check_branch("discrete branch", &w.disc, vd.cols, h)?;
    expect_shape("discrete input", vd, n, vd.cols)?;
    for (name, m) in [("hC", &state.hc), ("cC", &state.cc), ("hD", &state.hd), ("cD", &state.cd)] {
        expect_shape(&format!("state {name}"), m, n, h)?;
    }
    let mut tape = Tape::new();
    let mut load = |b: &BranchWeights| BranchVars {
        w_input: tape.constant(b.w_input.clone()),
        w_cross: tape.constant(b.w_cross.clone()),
        w_self: tape.constant(b.w_self.clone()),
        bias: tape.constant(b.bias.clone()),
    };
    let wc = load(&w.cont);
    let wd = load(&w.disc);
    let sv = StateVars {
        hc: tape.constant(state.hc.clone()),
        cc: tape.constant(state.cc.clone()),
        hd: tape.constant(state.hd.clone()),
        cd: tape.constant(state.cd.clone()),
    };
    let xc = tape.constant(vc.clone());
    let xd = tape.constant(vd.clone());
    let out = blstm_on_tape(&mut tape, xc, xd, sv, &wc, &wd, h);
    Ok(CoupledState {
        hc: tape.value(out.hc).clone(),
        cc: tape.value(out.cc).clone(),
        hd: tape.value(out.hd).clone(),
        cd: tape.value(out.cd).clone(),
    })
}

pub(crate) fn blstm_prefix(domain: Domain) -> String {
    format!("gen.blstm_{}", domain.tag())
}

/// Adds generator parameters to `bundle`. The two branches draw from
/// independent streams.
pub fn init_generator(bundle: &mut ModelBundle, dims: &ModelDims, seed: u64) {
    let v = dims.noise;
    let h = dims.gen_hidden;
    for domain in Domain::BOTH {
        let s = match domain {
            Domain::Continuous => stream::INIT_GEN_C,
            Domain::Discrete => stream::INIT_GEN_D,
        };
        let mut rng = stream_rng(seed, s);
        let tag = domain.tag();
        nn::init_linear(bundle, &format!("gen_{tag}.in"), v + dims.l, v, &mut rng);
        let p = blstm_prefix(domain);
        bundle
            .params
            .insert(format!("{p}.w_input"), nn::glorot(v, 4 * h, &mut rng));
        bundle
            .params
            .insert(format!("{p}.w_self"), nn::orthogonal_gates(h, &mut rng));
        bundle
            .params
            .insert(format!("{p}.w_cross"), nn::orthogonal_gates(h, &mut rng));
        bundle.params.insert(format!("{p}.bias"), nn::gate_bias(h));
        nn::init_linear(bundle, &format!("gen_{tag}.conn"), h, dims.latent, &mut rng);
    }
}

fn load_branch(tape: &mut Tape, bundle: &ModelBundle, domain: Domain) -> Result<BranchVars> {
    let p = blstm_prefix(domain);
    let mut get = |suffix: &str| -> Result<Var> {
        let name = format!("{p}.{suffix}");
        Ok(tape.param(&name, bundle.get(&name)?))
    };
    Ok(BranchVars {
        w_input: get("w_input")?,
        w_cross: get("w_cross")?,
        w_self: get("w_self")?,
        bias: get("bias")?,
    })
}

/// Records the coupled generator over noise `[N,T,V]` per domain. Returns
/// per-step latent codes `[N,S]` for both domains.
pub fn generate_latent_on_tape(
    tape: &mut Tape,
    bundle: &ModelBundle,
    noise_c: &Tensor3,
    noise_d: &Tensor3,
    labels: Option<&Matrix>,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if noise_c.shape() != noise_d.shape() {
        return Err(Error::shape(
            "generator noise",
            format!("{:?}", noise_c.shape()),
            format!("{:?}", noise_d.shape()),
        ));
    }
    let dims = bundle.dims()?;
    match (dims.conditional(), labels) {
        (true, None) => {
            return Err(Error::ConditionalMismatch(
                "conditional generator requires labels".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(Error::ConditionalMismatch(
                "unconditional generator does not accept labels".into(),
            ))
        }
        (true, Some(l)) if l.rows != noise_c.n || l.cols != dims.l => {
            return Err(Error::shape(
                "generator labels",
                format!("[{}, {}]", noise_c.n, dims.l),
                format!("[{}, {}]", l.rows, l.cols),
            ))
        }
        _ => {}
    }
    let w_in = bundle.get("gen_c.in.w")?;
    if w_in.rows != noise_c.d + dims.l {
        return Err(Error::shape("generator noise width", w_in.rows - dims.l, noise_c.d));
    }
    let h = dims.gen_hidden;
    let n = noise_c.n;
    let wc = load_branch(tape, bundle, Domain::Continuous)?;
    let wd = load_branch(tape, bundle, Domain::Discrete)?;
    let xc = nn::sequence_inputs(tape, noise_c, labels);
    let xd = nn::sequence_inputs(tape, noise_d, labels);
    let zero = tape.constant(Matrix::zeros(n, h));
    let mut state = StateVars {
        hc: zero,
        cc: zero,
        hd: zero,
        cd: zero,
    };
    let mut zc = Vec::with_capacity(noise_c.t);
    let mut zd = Vec::with_capacity(noise_c.t);
    for t in 0..noise_c.t {
        let vc = nn::linear(tape, bundle, "gen_c.in", xc[t])?;
        let vd = nn::linear(tape, bundle, "gen_d.in", xd[t])?;
        state = blstm_on_tape(tape, vc, vd, state, &wc, &wd, h);
        zc.push(nn::linear(tape, bundle, "gen_c.conn", state.hc)?);
        zd.push(nn::linear(tape, bundle, "gen_d.conn", state.hd)?);
    }
    Ok((zc, zd))
}

/// Latent sequences `[N,T,S]` for both domains from their noise sequences.
pub fn generate_latent(
    noise_c: &NoiseSequence,
    noise_d: &NoiseSequence,
    bundle: &ModelBundle,
    labels: Option<&Matrix>,
) -> Result<(Tensor3, Tensor3)> {
    let mut tape = Tape::new();
    let (zc, zd) = generate_latent_on_tape(&mut tape, bundle, &noise_c.values, &noise_d.values, labels)?;
    let collect = |vars: &[Var]| {
        let steps: Vec<Matrix> = vars.iter().map(|&v| tape.value(v).clone()).collect();
        Tensor3::from_steps(&steps)
    };
    Ok((collect(&zc)?, collect(&zd)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::NoisePrior;

    fn dims(l: usize) -> ModelDims {
        ModelDims {
            j: 2,
            k: 2,
            l,
            t: 6,
            latent: 3,
            hidden: 4,
            noise: 5,
            gen_hidden: 4,
            disc_hidden: 4,
        }
    }

    fn bundle(l: usize) -> ModelBundle {
        let mut b = ModelBundle::default();
        b.hyper.dims = Some(dims(l));
        init_generator(&mut b, &dims(l), 11);
        b
    }

    #[test]
    fn zero_weights_zero_state() {
        let w = LstmWeights::zeros(3, 2);
        let x = Matrix::filled(1, 3, 0.7);
        let (h, c) = lstm_step(&x, &Matrix::zeros(1, 2), &Matrix::zeros(1, 2), &w).unwrap();
        assert!(h.data.iter().chain(&c.data).all(|&v| v == 0.0));
    }

    #[test]
    fn generator_shapes_and_determinism() {
        let b = bundle(0);
        let nc = NoiseSequence::sample(8, 6, 5, 1, NoisePrior::Uniform);
        let nd = NoiseSequence::sample(8, 6, 5, 2, NoisePrior::Uniform);
        let (zc, zd) = generate_latent(&nc, &nd, &b, None).unwrap();
        assert_eq!(zc.shape(), [8, 6, 3]);
        assert_eq!(zd.shape(), [8, 6, 3]);
        assert_eq!((zc.clone(), zd.clone()), generate_latent(&nc, &nd, &b, None).unwrap());
    }

    #[test]
    fn cross_weights_zeroed_decouple_branches() {
        let mut b = bundle(0);
        let cross = b.params.get_mut("gen.blstm_c.w_cross").unwrap();
        cross.data.iter_mut().for_each(|v| *v = 0.0);
        let nc = NoiseSequence::sample(3, 6, 5, 1, NoisePrior::Uniform);
        let nd = NoiseSequence::sample(3, 6, 5, 2, NoisePrior::Uniform);
        let nd2 = NoiseSequence::sample(3, 6, 5, 9, NoisePrior::Uniform);
        let (a, _) = generate_latent(&nc, &nd, &b, None).unwrap();
        let (c, _) = generate_latent(&nc, &nd2, &b, None).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn conditional_contract() {
        let nc = NoiseSequence::sample(2, 6, 5, 1, NoisePrior::Uniform);
        let y = Matrix::from_vec(2, 2, vec![1., 0., 0., 1.]).unwrap();
        assert!(matches!(
            generate_latent(&nc, &nc, &bundle(0), Some(&y)),
            Err(Error::ConditionalMismatch(_))
        ));
        assert!(matches!(
            generate_latent(&nc, &nc, &bundle(2), None),
            Err(Error::ConditionalMismatch(_))
        ));
        assert!(generate_latent(&nc, &nc, &bundle(2), Some(&y)).is_ok());
    }
}
