use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::MixedBatch;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::tensor::{Matrix, Tensor3};

/// Number of hidden drivers shared by both data types.
const DRIVERS: usize = 2;
const DRIVER_AR: f64 = 0.85;
const SWITCH_AR: f64 = 0.9;
const OFFSET_SD: f64 = 0.5;
const READOUT_NOISE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub n_patients: usize,
    pub t: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    /// Weight of the shared driver in each discrete channel's latent, in [0,1].
    pub coupling: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            n_patients: 512,
            t: 24,
            j: 8,
            k: 4,
            l: 2,
            coupling: 0.8,
            seed: 7,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.t == 0 || self.j == 0 || self.k == 0 || self.l == 0 {
            return Err(Error::InvalidConfig("fixture dimensions must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::InvalidConfig(format!("coupling {} outside [0,1]", self.coupling)));
        }
        Ok(())
    }
}

/// A generated cohort and the hidden quantities behind it.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub batch: MixedBatch,
    pub spec: FixtureSpec,
    /// Driver trajectories `[N, T, DRIVERS]`, patient offset included.
    pub drivers: Tensor3,
    /// Signed loading of each continuous channel on its driver.
    pub loadings: Vec<f64>,
    /// Driver feeding each continuous / discrete channel.
    pub cont_driver: Vec<usize>,
    pub disc_driver: Vec<usize>,
}

fn ar1_path(rng: &mut crate::rng::Rng, t: usize, rho: f64) -> Vec<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(t);
    let mut u: f64 = StandardNormal.sample(rng);
    for _ in 0..t {
        out.push(u);
        let e: f64 = StandardNormal.sample(rng);
        u = rho * u + innov * e;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Synthetic ICU-like cohort.
///
/// Each patient carries `DRIVERS` AR(1) processes plus a per-patient offset.
/// Continuous channels are noisy sigmoid readouts of one driver; discrete
/// channels threshold a mix of the standardized driver (weight `coupling`)
/// and an independent persistent process. Labels split patients by the time
/// mean of driver 0: top quartile is class 1 when `l == 2`, otherwise equal
/// quantile bins.
pub fn make_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    spec.validate()?;
    let FixtureSpec { n_patients: n, t, j, k, l, coupling, seed } = *spec;
    let mut rng = stream_rng(seed, stream::FIXTURE);
    let loadings: Vec<f64> = (0..j)
        .map(|c| {
            let mag = rng.random_range(1.2..2.2);
            if c % 3 == 2 { -mag } else { mag }
        })
        .collect();
    let cont_driver: Vec<usize> = (0..j).map(|c| c % DRIVERS).collect();
    let disc_driver: Vec<usize> = (0..k).map(|c| c % DRIVERS).collect();
    let disc_offset: Vec<f64> = (0..k).map(|_| rng.random_range(-0.4..0.4)).collect();
    let offset = Normal::new(0.0, OFFSET_SD).expect("positive sd");
    let driver_sd = (1.0 + OFFSET_SD * OFFSET_SD).sqrt();
    let mix = (1.0 - coupling * coupling).sqrt();

    let mut drivers = Tensor3::zeros(n, t, DRIVERS);
    let mut cont = Tensor3::zeros(n, t, j);
    let mut disc = Tensor3::zeros(n, t, k);
    for i in 0..n {
        for r in 0..DRIVERS {
            let m = offset.sample(&mut rng);
            for (h, u) in ar1_path(&mut rng, t, DRIVER_AR).into_iter().enumerate() {
                drivers.set(i, h, r, m + u);
            }
        }
        for c in 0..j {
            for h in 0..t {
                let e: f64 = StandardNormal.sample(&mut rng);
                let a = drivers.get(i, h, cont_driver[c]);
                cont.set(i, h, c, sigmoid(loadings[c] * a + READOUT_NOISE * e));
            }
        }
        for c in 0..k {
            let w = ar1_path(&mut rng, t, SWITCH_AR);
            for h in 0..t {
                let a = drivers.get(i, h, disc_driver[c]) / driver_sd;
                let on = coupling * a + mix * w[h] + disc_offset[c] > 0.0;
                disc.set(i, h, c, if on { 1.0 } else { 0.0 });
            }
        }
    }

    let score: Vec<f64> = (0..n)
        .map(|i| (0..t).map(|h| drivers.get(i, h, 0)).sum::<f64>() / t as f64)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
    let mut labels = Matrix::zeros(n, l);
    for (rank, &i) in order.iter().enumerate() {
        let q = rank as f64 / n as f64;
        let class = if l == 2 {
            usize::from(q >= 0.75)
        } else {
            ((q * l as f64) as usize).min(l - 1)
        };
        labels.set(i, class, 1.0);
    }

    let batch = MixedBatch::with_default_names(cont, disc, Some(labels))?;
    Ok(Fixture {
        batch,
        spec: spec.clone(),
        drivers,
        loadings,
        cont_driver,
        disc_driver,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::validate_batch;

    #[test]
    fn valid_and_deterministic() {
        let spec = FixtureSpec {
            n_patients: 40,
            ..Default::default()
        };
        let a = make_fixture(&spec).unwrap();
        assert!(validate_batch(&a.batch).is_empty());
        let b = make_fixture(&spec).unwrap();
        assert_eq!(a.batch, b.batch);
        let ones = a.batch.label_indices().unwrap().iter().filter(|&&c| c == 1).count();
        assert_eq!(ones, 10);
    }

    #[test]
    fn rejects_bad_coupling() {
        let spec = FixtureSpec {
            coupling: 1.5,
            ..Default::default()
        };
        assert!(make_fixture(&spec).is_err());
    }
}
