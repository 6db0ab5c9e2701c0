use super::DpConfig;
use crate::error::{Error, Result};

/// Integer Rényi orders searched by the accountant.
pub const RDP_ORDERS: std::ops::RangeInclusive<u32> = 2..=64;

fn ln_binomial(n: u32, k: u32) -> f64 {
    let lf = |m: u32| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    lf(n) - lf(k) - lf(n - k)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Rényi divergence of order `alpha` for one step of the Poisson-subsampled
/// Gaussian mechanism with sampling rate `q` and noise multiplier `sigma`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> f64 {
    if q >= 1.0 {
        return alpha as f64 / (2.0 * sigma * sigma);
    }
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        let term = ln_binomial(alpha, k)
            + (alpha - k) as f64 * (1.0 - q).ln()
            + kf * q.ln()
            + (kf * kf - kf) / (2.0 * sigma * sigma);
        log_a = log_add(log_a, term);
    }
    log_a / (alpha as f64 - 1.0)
}

/// ε after `steps` updates at `cfg.delta`, minimized over [`RDP_ORDERS`].
pub fn privacy_accountant(steps: u64, cfg: &DpConfig) -> Result<f64> {
    if cfg.noise_multiplier <= 0.0 {
        return Err(Error::InfiniteEpsilon);
    }
    let q = cfg.sample_rate.clamp(0.0, 1.0);
    if q == 0.0 || steps == 0 {
        return Ok(0.0);
    }
    let ln_delta = cfg.delta.ln();
    let eps = RDP_ORDERS
        .map(|alpha| {
            let a = alpha as f64;
            let rdp = rdp_subsampled_gaussian(q, cfg.noise_multiplier, alpha) * steps as f64;
            rdp + ((a - 1.0) / a).ln() - (ln_delta + a.ln()) / (a - 1.0)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(eps.max(0.0))
}
