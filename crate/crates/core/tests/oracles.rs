//! Loss and metric values checked against direct scalar computations.

use mixgan_core::adversarial::{gan_losses, LossForm};
use mixgan_core::dualvae::{contrastive_loss, elbo_loss, matching_loss, semantic_loss, Domain, LinearClassifierParams};
use mixgan_core::evalsuite::{mmd, MmdConfig, MmdEstimator};
use mixgan_core::privacy::{dp_sgd_step, privacy_accountant, rdp_subsampled_gaussian, DpConfig};
use mixgan_core::rng::{stream, stream_rng};
use mixgan_core::tensor::{Matrix, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn tensor(rng: &mut ChaCha8Rng, n: usize, t: usize, d: usize, lo: f64, hi: f64) -> Tensor3 {
    Tensor3::from_vec(n, t, d, (0..n * t * d).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn elbo_matches_elementwise_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, t, d, s) = (3, 4, 2, 3);
    let x = tensor(&mut rng, n, t, d, 0.0, 1.0);
    let xb = Tensor3::from_vec(n, t, d, x.data.iter().map(|v| (*v > 0.5) as u8 as f64).collect()).unwrap();
    let r = tensor(&mut rng, n, t, d, 0.05, 0.95);
    let mu = tensor(&mut rng, n, t, s, -1.0, 1.0);
    let lv = tensor(&mut rng, n, t, s, -1.0, 1.0);
    let kl: f64 = mu.data.iter().zip(&lv.data).map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l)).sum::<f64>() / n as f64;
    let mse: f64 = x.data.iter().zip(&r.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let bce: f64 = xb
        .data
        .iter()
        .zip(&r.data)
        .map(|(a, p)| -(a * p.ln() + (1.0 - a) * (1.0 - p).ln()))
        .sum::<f64>()
        / n as f64;
    let beta = 0.7;
    let c = elbo_loss(&x, &r, &mu, &lv, Domain::Continuous, beta).unwrap();
    let dd = elbo_loss(&xb, &r, &mu, &lv, Domain::Discrete, beta).unwrap();
    assert!((c - (mse + beta * kl)).abs() < 1e-10);
    assert!((dd - (bce + beta * kl)).abs() < 1e-10);
}

#[test]
fn kl_term_agrees_with_monte_carlo() {
    let (mu, lv) = (0.6f64, -0.4f64);
    let sd = (0.5 * lv).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let samples = 100_000;
    // E_q[log q(z) − log p(z)]
    let mc: f64 = (0..samples)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = mu + sd * e;
            -0.5 * e * e - sd.ln() + 0.5 * z * z
        })
        .sum::<f64>()
        / samples as f64;
    let one = |v: f64| Tensor3::from_vec(1, 1, 1, vec![v]).unwrap();
    let zero_recon = elbo_loss(&one(0.0), &one(0.0), &one(mu), &one(lv), Domain::Continuous, 1.0).unwrap();
    assert!((zero_recon - mc).abs() < 0.01, "{zero_recon} vs {mc}");
}

#[test]
fn matching_is_a_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (n, t, s) = (4, 3, 5);
    let a = tensor(&mut rng, n, t, s, -2.0, 2.0);
    let b = tensor(&mut rng, n, t, s, -2.0, 2.0);
    let mut expected = 0.0;
    for i in 0..n {
        for h in 0..t {
            for k in 0..s {
                expected += (a.get(i, h, k) - b.get(i, h, k)).powi(2);
            }
        }
    }
    expected /= n as f64;
    assert!((matching_loss(&a, &b).unwrap() - expected).abs() < 1e-10);
    assert_eq!(matching_loss(&a, &a).unwrap(), 0.0);
}

#[test]
fn contrastive_two_pairs_by_enumeration() {
    let hc = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.8]]).unwrap();
    let hd = Matrix::from_rows(&[vec![0.9, 0.2], vec![-0.5, 1.0]]).unwrap();
    let tau = 0.4;
    let rows = [hc.row(0), hc.row(1), hd.row(0), hd.row(1)];
    let unit: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / norm).collect()
        })
        .collect();
    let sim = |i: usize, j: usize| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
    let positive = [2, 3, 0, 1];
    let mut expected = 0.0;
    for i in 0..4 {
        let denom: f64 = (0..4).filter(|&k| k != i).map(|k| sim(i, k).exp()).sum();
        expected += -(sim(i, positive[i]).exp() / denom).ln();
    }
    expected /= 4.0;
    let got = contrastive_loss(&hc, &hd, tau).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn semantic_is_softmax_cross_entropy() {
    let z = Matrix::from_rows(&[vec![0.2, -1.0], vec![1.5, 0.3], vec![-0.4, 0.9]]).unwrap();
    let y = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let clf = LinearClassifierParams {
        weight: Matrix::from_rows(&[vec![0.5, -0.2, 0.1], vec![0.3, 0.8, -0.6]]).unwrap(),
        bias: Matrix::from_rows(&[vec![0.1, 0.0, -0.1]]).unwrap(),
    };
    let mut expected = 0.0;
    for i in 0..3 {
        let logits: Vec<f64> = (0..3)
            .map(|c| (0..2).map(|k| z.get(i, k) * clf.weight.get(k, c)).sum::<f64>() + clf.bias.get(0, c))
            .collect();
        let target = (0..3).find(|&c| y.get(i, c) == 1.0).unwrap();
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        expected += lse - logits[target];
    }
    expected /= 3.0;
    assert!((semantic_loss(&z, &y, &clf, true).unwrap() - expected).abs() < 1e-12);
    assert!(semantic_loss(&z, &y, &clf, false).is_err());
}

#[test]
fn gan_losses_scalar_loop() {
    let rc = [0.9, 0.6, 0.7];
    let fc = [0.2, 0.4, 0.1];
    let rd = [0.8, 0.55, 0.65];
    let fd = [0.3, 0.35, 0.05];
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&p| f(p)).sum::<f64>() / v.len() as f64;
    let ln = |p: f64| p.ln();
    let ln1m = |p: f64| (1.0 - p).ln();
    let ld = -(mean(&rc, &ln) + mean(&rd, &ln) + mean(&fc, &ln1m) + mean(&fd, &ln1m));
    let (d, g) = gan_losses(&rc, &fc, &rd, &fd, LossForm::NonSaturating);
    assert!((d - ld).abs() < 1e-12);
    assert!((g + mean(&fc, &ln) + mean(&fd, &ln)).abs() < 1e-12);
    let (_, gs) = gan_losses(&rc, &fc, &rd, &fd, LossForm::Saturating);
    assert!((gs - (mean(&fc, &ln1m) + mean(&fd, &ln1m))).abs() < 1e-12);
}

fn brute_mmd(x: &Matrix, y: &Matrix, sigmas: &[f64], unbiased: bool) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        sigmas.iter().map(|s| (-d / (s * s)).exp()).sum::<f64>()
    };
    let within = |m: &Matrix| {
        let mut s = 0.0;
        let mut c = 0.0;
        for i in 0..m.rows {
            for j in 0..m.rows {
                if unbiased && i == j {
                    continue;
                }
                s += k(m.row(i), m.row(j));
                c += 1.0;
            }
        }
        s / c
    };
    let mut cross = 0.0;
    for i in 0..x.rows {
        for j in 0..y.rows {
            cross += k(x.row(i), y.row(j));
        }
    }
    cross /= (x.rows * y.rows) as f64;
    (within(x) + within(y) - 2.0 * cross).max(0.0).sqrt()
}

#[test]
fn mmd_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = Matrix::from_vec(7, 3, (0..21).map(|_| rng.random()).collect()).unwrap();
    let y = Matrix::from_vec(5, 3, (0..15).map(|_| rng.random::<f64>() + 0.3).collect()).unwrap();
    let sigmas = vec![0.5, 1.0, 2.0];
    let mut cfg = MmdConfig::fixed(sigmas.clone());
    assert!((mmd(&x, &y, &cfg).unwrap() - brute_mmd(&x, &y, &sigmas, false)).abs() < 1e-12);
    cfg.estimator = MmdEstimator::Unbiased;
    assert!((mmd(&x, &y, &cfg).unwrap() - brute_mmd(&x, &y, &sigmas, true)).abs() < 1e-12);

    let two = mmd(
        &Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap(),
        &Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
        &MmdConfig::fixed(vec![2.0]),
    )
    .unwrap();
    assert!((two - (2.0 - 2.0 * (-0.5f64).exp()).sqrt()).abs() < 1e-12);
}

#[test]
fn accountant_full_batch_closed_form() {
    let cfg = DpConfig {
        noise_multiplier: 1.3,
        delta: 1e-5,
        sample_rate: 1.0,
        ..Default::default()
    };
    for steps in [1u64, 10, 250] {
        let expected = (2..=64u32)
            .map(|a| {
                let a = a as f64;
                steps as f64 * a / (2.0 * 1.3 * 1.3) + ((a - 1.0) / a).ln() - (1e-5f64.ln() + a.ln()) / (a - 1.0)
            })
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        let got = privacy_accountant(steps, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-9, "{steps}: {got} vs {expected}");
    }
}

#[test]
fn subsampled_rdp_direct_binomial_sum() {
    for (q, sigma) in [(0.01, 1.0), (0.1, 2.0), (0.5, 0.8)] {
        for alpha in [2u32, 3, 8] {
            let mut a_sum = 0.0;
            for k in 0..=alpha {
                let binom = (1..=k).fold(1.0, |acc, i| acc * (alpha - k + i) as f64 / i as f64);
                a_sum += binom
                    * (1.0f64 - q).powi((alpha - k) as i32)
                    * q.powi(k as i32)
                    * (((k * k) as f64 - k as f64) / (2.0 * sigma * sigma)).exp();
            }
            let expected = a_sum.ln() / (alpha as f64 - 1.0);
            let got = rdp_subsampled_gaussian(q, sigma, alpha);
            assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0), "{q} {sigma} {alpha}");
        }
    }
}

#[test]
fn accountant_is_monotone_in_steps_and_noise() {
    let base = DpConfig::default();
    let e1 = privacy_accountant(100, &base).unwrap();
    let e2 = privacy_accountant(1000, &base).unwrap();
    let quieter = DpConfig {
        noise_multiplier: 2.0,
        ..base.clone()
    };
    assert!(e2 > e1);
    assert!(privacy_accountant(1000, &quieter).unwrap() < e2);
}

#[test]
fn dp_step_noise_is_regenerable() {
    let per_example = Matrix::from_rows(&[vec![3.0, 4.0, 0.0], vec![0.1, 0.0, 0.2], vec![0.0, -6.0, 8.0]]).unwrap();
    let cfg = DpConfig {
        clip_c: 1.0,
        noise_multiplier: 1.1,
        ..Default::default()
    };
    let seed = 99;
    let got = dp_sgd_step(&per_example, &cfg, seed);

    let mut clipped_mean = vec![0.0; 3];
    for r in 0..3 {
        let row = per_example.row(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = if norm > cfg.clip_c { cfg.clip_c / norm } else { 1.0 };
        for (m, v) in clipped_mean.iter_mut().zip(row) {
            *m += v * s / 3.0;
        }
    }
    let mut rng = stream_rng(seed, stream::DP_NOISE);
    let noise = Normal::new(0.0, cfg.clip_c * cfg.noise_multiplier / 3.0).unwrap();
    for (g, m) in got.iter().zip(&clipped_mean) {
        let expected = m + noise.sample(&mut rng);
        assert!((g - expected).abs() < 1e-12);
    }
}
