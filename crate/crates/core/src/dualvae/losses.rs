//! Dual-VAE objectives. Each loss has a tape builder (used in training and
//! gradient checks) and a plain evaluator over tensors.

use super::Domain;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor3};

/// Probability clamp used by the Bernoulli reconstruction term.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub recon: Var,
    pub kl: Var,
    /// `recon + beta_kl · kl`.
    pub total: Var,
}

/// Records the ELBO loss.
///
/// Reconstruction is the squared error (continuous) or binary cross-entropy
/// (discrete), summed over time and channels. The KL term is the closed form
/// against `N(0, I)`, summed over time and latent dimensions. Both are
/// averaged over the batch.
pub fn elbo_on_tape(
    tape: &mut Tape,
    x: &Tensor3,
    recon: &[Var],
    mu: &[Var],
    logvar: &[Var],
    domain: Domain,
    beta_kl: f64,
) -> ElboTerms {
    let n = x.n as f64;
    let mut rec_terms = Vec::with_capacity(recon.len());
    let mut kl_terms = Vec::with_capacity(mu.len());
    for (t, &r) in recon.iter().enumerate() {
        let target = x.step(t);
        let per_elem = match domain {
            Domain::Continuous => {
                let xt = tape.constant(target);
                let diff = tape.sub(r, xt);
                tape.square(diff)
            }
            Domain::Discrete => tape.bce(r, &target, BCE_EPS),
        };
        rec_terms.push(tape.sum(per_elem));
    }
    for (&m, &lv) in mu.iter().zip(logvar) {
        // ½ Σ (μ² + e^{lv} − 1 − lv)
        let m2 = tape.square(m);
        let var = tape.exp(lv);
        let a = tape.add(m2, var);
        let b = tape.sub(a, lv);
        let s = tape.sum(b);
        let (rows, cols) = tape.value(m).shape();
        let ones = tape.constant(Matrix::filled(1, 1, (rows * cols) as f64));
        let s = tape.sub(s, ones);
        kl_terms.push(tape.scale(s, 0.5));
    }
    let rec = tape.add_n(&rec_terms);
    let recon = tape.scale(rec, 1.0 / n);
    let kl = tape.add_n(&kl_terms);
    let kl = tape.scale(kl, 1.0 / n);
    let weighted = tape.scale(kl, beta_kl);
    let total = tape.add(recon, weighted);
    ElboTerms { recon, kl, total }
}

fn steps(tape: &mut Tape, x: &Tensor3) -> Vec<Var> {
    (0..x.t).map(|t| tape.constant(x.step(t))).collect()
}

/// ELBO loss of reconstructions `x_recon` and posterior parameters.
pub fn elbo_loss(
    x: &Tensor3,
    x_recon: &Tensor3,
    mu: &Tensor3,
    logvar: &Tensor3,
    domain: Domain,
    beta_kl: f64,
) -> Result<f64> {
    if x.shape() != x_recon.shape() {
        return Err(Error::shape(
            "elbo reconstruction",
            format!("{:?}", x.shape()),
            format!("{:?}", x_recon.shape()),
        ));
    }
    if mu.shape() != logvar.shape() || mu.n != x.n || mu.t != x.t {
        return Err(Error::shape(
            "elbo posterior",
            format!("{:?}", mu.shape()),
            format!("{:?}", logvar.shape()),
        ));
    }
    let mut tape = Tape::new();
    let r = steps(&mut tape, x_recon);
    let m = steps(&mut tape, mu);
    let lv = steps(&mut tape, logvar);
    let terms = elbo_on_tape(&mut tape, x, &r, &m, &lv, domain, beta_kl);
    Ok(tape.scalar(terms.total))
}

/// Records `mean_n Σ_t ‖zC_t − zD_t‖²`.
pub fn matching_on_tape(tape: &mut Tape, zc: &[Var], zd: &[Var]) -> Var {
    let n = tape.value(zc[0]).rows as f64;
    let terms: Vec<Var> = zc
        .iter()
        .zip(zd)
        .map(|(&a, &b)| {
            let d = tape.sub(a, b);
            let sq = tape.square(d);
            tape.sum(sq)
        })
        .collect();
    let s = tape.add_n(&terms);
    tape.scale(s, 1.0 / n)
}

pub fn matching_loss(zc: &Tensor3, zd: &Tensor3) -> Result<f64> {
    if zc.shape() != zd.shape() {
        return Err(Error::shape(
            "matching loss",
            format!("{:?}", zc.shape()),
            format!("{:?}", zd.shape()),
        ));
    }
    let mut tape = Tape::new();
    let a = steps(&mut tape, zc);
    let b = steps(&mut tape, zd);
    let l = matching_on_tape(&mut tape, &a, &b);
    Ok(tape.scalar(l))
}

/// Mean over time of per-step codes, `[N,S]`.
pub fn mean_pool(tape: &mut Tape, z: &[Var]) -> Var {
    let s = tape.add_n(z);
    tape.scale(s, 1.0 / z.len() as f64)
}

fn check_nonzero_rows(m: &Matrix, offset: usize) -> Result<()> {
    for r in 0..m.rows {
        if m.row(r).iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroNormEmbedding(offset + r));
        }
    }
    Ok(())
}

/// Records NT-Xent over the `2N` pooled embeddings. Row `i` of `hc` and row
/// `i` of `hd` form the positive pair; both orderings are averaged.
pub fn contrastive_on_tape(tape: &mut Tape, hc: Var, hd: Var, tau: f64) -> Result<Var> {
    check_nonzero_rows(tape.value(hc), 0)?;
    let n = tape.value(hc).rows;
    check_nonzero_rows(tape.value(hd), n)?;
    let all = tape.concat_rows(&[hc, hd]);
    let unit = tape.normalize_rows(all);
    let sim = tape.matmul_bt(unit, unit);
    let logits = tape.scale(sim, 1.0 / tau);
    let targets: Vec<usize> = (0..2 * n).map(|i| if i < n { i + n } else { i - n }).collect();
    Ok(tape.softmax_xent(logits, &targets, true))
}

pub fn contrastive_loss(hc: &Matrix, hd: &Matrix, tau: f64) -> Result<f64> {
    if hc.shape() != hd.shape() {
        return Err(Error::shape(
            "contrastive loss",
            format!("{:?}", hc.shape()),
            format!("{:?}", hd.shape()),
        ));
    }
    let mut tape = Tape::new();
    let a = tape.constant(hc.clone());
    let b = tape.constant(hd.clone());
    let l = contrastive_on_tape(&mut tape, a, b, tau)?;
    Ok(tape.scalar(l))
}

/// Logistic-regression head over pooled latent codes, one per domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifierParams {
    /// `[S, L]`
    pub weight: Matrix,
    /// `[1, L]`
    pub bias: Matrix,
}

fn targets_from_one_hot(y: &Matrix) -> Vec<usize> {
    (0..y.rows)
        .map(|r| {
            y.row(r)
                .iter()
                .position(|&v| v == 1.0)
                .unwrap_or(0)
        })
        .collect()
}

/// Records the mean softmax cross-entropy of `z · W + b` against one-hot `y`.
pub fn semantic_on_tape(tape: &mut Tape, z: Var, y: &Matrix, weight: Var, bias: Var) -> Var {
    let logits = tape.matmul(z, weight);
    let logits = tape.add_bias(logits, bias);
    tape.softmax_xent(logits, &targets_from_one_hot(y), false)
}

/// Semantic (classification) loss. Fails when `conditional` is false.
pub fn semantic_loss(
    z: &Matrix,
    y: &Matrix,
    clf: &LinearClassifierParams,
    conditional: bool,
) -> Result<f64> {
    if !conditional {
        return Err(Error::NotConditional);
    }
    if z.cols != clf.weight.rows || y.cols != clf.weight.cols || z.rows != y.rows {
        return Err(Error::shape(
            "semantic loss",
            format!("z [N, {}], y [N, {}]", clf.weight.rows, clf.weight.cols),
            format!("z [{}, {}], y [{}, {}]", z.rows, z.cols, y.rows, y.cols),
        ));
    }
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let w = tape.constant(clf.weight.clone());
    let b = tape.constant(clf.bias.clone());
    let l = semantic_on_tape(&mut tape, zv, y, w, b);
    Ok(tape.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck::max_rel_error;

    fn t3(n: usize, t: usize, d: usize, f: impl Fn(usize) -> f64) -> Tensor3 {
        Tensor3::from_vec(n, t, d, (0..n * t * d).map(f).collect()).unwrap()
    }

    #[test]
    fn elbo_zero_for_perfect_prior_matching() {
        let x = t3(2, 3, 2, |i| (i as f64 * 0.1) % 1.0);
        let z = Tensor3::zeros(2, 3, 4);
        let v = elbo_loss(&x, &x, &z, &z, Domain::Continuous, 0.1).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn elbo_kl_unit_mean() {
        let x = t3(1, 1, 1, |_| 0.3);
        let mu = t3(1, 1, 1, |_| 1.0);
        let lv = Tensor3::zeros(1, 1, 1);
        let v = elbo_loss(&x, &x, &mu, &lv, Domain::Continuous, 0.1).unwrap();
        assert!((v - 0.05).abs() < 1e-12);
    }

    #[test]
    fn discrete_reconstruction_is_bce() {
        let x = t3(1, 1, 2, |i| if i == 0 { 1.0 } else { 0.0 });
        let r = t3(1, 1, 2, |_| 0.25);
        let z = Tensor3::zeros(1, 1, 1);
        let v = elbo_loss(&x, &r, &z, &z, Domain::Discrete, 1.0).unwrap();
        let want = -(0.25f64.ln()) - (0.75f64.ln());
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn matching_unit_distances() {
        let a = t3(1, 2, 3, |_| 1.0);
        let b = Tensor3::zeros(1, 2, 3);
        assert_eq!(matching_loss(&a, &b).unwrap(), 6.0);
        assert_eq!(matching_loss(&a, &a).unwrap(), 0.0);
        assert!(matching_loss(&a, &Tensor3::zeros(1, 3, 3)).is_err());
    }

    #[test]
    fn contrastive_single_pair_is_zero() {
        let h = Matrix::from_vec(1, 3, vec![0.2, -1.0, 0.5]).unwrap();
        let g = Matrix::from_vec(1, 3, vec![1.0, 0.0, 0.3]).unwrap();
        assert!(contrastive_loss(&h, &g, 0.5).unwrap().abs() < 1e-15);
    }

    #[test]
    fn contrastive_zero_row_is_rejected() {
        let h = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let g = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            contrastive_loss(&h, &g, 1.0),
            Err(Error::ZeroNormEmbedding(1))
        ));
    }

    #[test]
    fn semantic_requires_conditional() {
        let clf = LinearClassifierParams {
            weight: Matrix::zeros(2, 2),
            bias: Matrix::zeros(1, 2),
        };
        let z = Matrix::zeros(1, 2);
        let y = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            semantic_loss(&z, &y, &clf, false),
            Err(Error::NotConditional)
        ));
        let v = semantic_loss(&z, &y, &clf, true).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        let x = t3(2, 3, 2, |i| ((i * 7) % 5) as f64 / 5.0);
        let xd = t3(2, 3, 2, |i| (i % 2) as f64);
        let mk = |seed: f64, lo: f64, span: f64| {
            (0..3)
                .map(|t| {
                    Matrix::from_vec(
                        2,
                        2,
                        (0..4)
                            .map(|i| lo + span * (((i + 4 * t) as f64 + 1.0) * seed).sin().abs())
                            .collect(),
                    )
                    .unwrap()
                })
                .collect::<Vec<_>>()
        };
        for (domain, target) in [(Domain::Continuous, &x), (Domain::Discrete, &xd)] {
            let mut inputs = mk(1.3, 0.1, 0.8);
            inputs.extend(mk(0.7, -1.0, 2.0));
            inputs.extend(mk(2.1, -1.0, 2.0));
            let err = max_rel_error(&inputs, 1e-5, |tape, v| {
                let e = elbo_on_tape(tape, target, &v[0..3], &v[3..6], &v[6..9], domain, 0.3);
                e.total
            });
            assert!(err < 1e-4, "{domain:?} {err}");
        }
    }
}
