use mixgan_core::autograd::gradcheck::max_rel_error;
use mixgan_core::autograd::Tape;
use mixgan_core::adversarial::{gan_losses_on_tape, LossForm};
use mixgan_core::crn::{blstm_on_tape, lstm_on_tape, BranchVars, StateVars};
use mixgan_core::dualvae::{contrastive_on_tape, elbo_on_tape, matching_on_tape, mean_pool, semantic_on_tape, Domain};
use mixgan_core::tensor::{Matrix, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn rand_unit(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
}

#[test]
fn elbo_gradients_both_domains() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, t, s, d) = (2, 3, 4, 3);
    for domain in Domain::BOTH {
        let x = match domain {
            Domain::Continuous => Tensor3::from_vec(n, t, d, (0..n * t * d).map(|_| rng.random()).collect()).unwrap(),
            Domain::Discrete => Tensor3::from_vec(
                n,
                t,
                d,
                (0..n * t * d).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect(),
            )
            .unwrap(),
        };
        let mut inputs = Vec::new();
        for _ in 0..t {
            inputs.push(rand_unit(&mut rng, n, d));
        }
        for _ in 0..2 * t {
            inputs.push(rand_matrix(&mut rng, n, s, 1.0));
        }
        let err = max_rel_error(&inputs, H, |tape: &mut Tape, v| {
            elbo_on_tape(tape, &x, &v[..t], &v[t..2 * t], &v[2 * t..], domain, 0.3).total
        });
        assert!(err < TOL, "{domain:?}: {err}");
    }
}

#[test]
fn matching_contrastive_semantic_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, t, s, l) = (2, 3, 4, 2);
    let z: Vec<Matrix> = (0..2 * t).map(|_| rand_matrix(&mut rng, n, s, 1.0)).collect();
    let err = max_rel_error(&z, H, |tape, v| matching_on_tape(tape, &v[..t], &v[t..]));
    assert!(err < TOL, "matching: {err}");

    let err = max_rel_error(&z, H, |tape, v| {
        let hc = mean_pool(tape, &v[..t]);
        let hd = mean_pool(tape, &v[t..]);
        contrastive_on_tape(tape, hc, hd, 0.5).unwrap()
    });
    assert!(err < TOL, "contrastive: {err}");

    let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let mut inputs = z[..t].to_vec();
    inputs.push(rand_matrix(&mut rng, s, l, 1.0));
    inputs.push(rand_matrix(&mut rng, 1, l, 1.0));
    let err = max_rel_error(&inputs, H, |tape, v| {
        let pooled = mean_pool(tape, &v[..t]);
        semantic_on_tape(tape, pooled, &y, v[t], v[t + 1])
    });
    assert!(err < TOL, "semantic: {err}");
}

#[test]
fn gan_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let probs: Vec<Matrix> = (0..4).map(|_| rand_unit(&mut rng, 5, 1)).collect();
    for form in [LossForm::Saturating, LossForm::NonSaturating] {
        for pick_g in [false, true] {
            let err = max_rel_error(&probs, H, |tape, v| {
                let (d, g) = gan_losses_on_tape(tape, v[0], v[1], v[2], v[3], form);
                if pick_g { g } else { d }
            });
            assert!(err < TOL, "{form:?} {pick_g}: {err}");
        }
    }
}

#[test]
fn lstm_and_blstm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, v, h) = (2, 3, 4);
    let inputs = vec![
        rand_matrix(&mut rng, n, v, 1.0),
        rand_matrix(&mut rng, n, h, 0.8),
        rand_matrix(&mut rng, n, h, 0.8),
        rand_matrix(&mut rng, v, 4 * h, 0.6),
        rand_matrix(&mut rng, h, 4 * h, 0.6),
        rand_matrix(&mut rng, 1, 4 * h, 0.3),
    ];
    let err = max_rel_error(&inputs, H, |tape, x| {
        let (hh, cc) = lstm_on_tape(tape, x[0], x[1], x[2], x[3], x[4], x[5], h);
        let a = tape.sum(hh);
        let sq = tape.square(cc);
        let b = tape.sum(sq);
        tape.add(a, b)
    });
    assert!(err < TOL, "lstm: {err}");

    let mut inputs = vec![rand_matrix(&mut rng, n, v, 1.0), rand_matrix(&mut rng, n, v, 1.0)];
    for _ in 0..4 {
        inputs.push(rand_matrix(&mut rng, n, h, 0.8));
    }
    for _ in 0..2 {
        inputs.push(rand_matrix(&mut rng, v, 4 * h, 0.6));
        inputs.push(rand_matrix(&mut rng, h, 4 * h, 0.6));
        inputs.push(rand_matrix(&mut rng, h, 4 * h, 0.6));
        inputs.push(rand_matrix(&mut rng, 1, 4 * h, 0.3));
    }
    let err = max_rel_error(&inputs, H, |tape, x| {
        let state = StateVars { hc: x[2], cc: x[3], hd: x[4], cd: x[5] };
        let wc = BranchVars { w_input: x[6], w_cross: x[7], w_self: x[8], bias: x[9] };
        let wd = BranchVars { w_input: x[10], w_cross: x[11], w_self: x[12], bias: x[13] };
        let out = blstm_on_tape(tape, x[0], x[1], state, &wc, &wd, h);
        let parts: Vec<_> = [out.hc, out.cc, out.hd, out.cd]
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                let s = tape.sum(p);
                tape.scale(s, 1.0 + k as f64)
            })
            .collect();
        tape.add_n(&parts)
    });
    assert!(err < TOL, "blstm: {err}");
}
