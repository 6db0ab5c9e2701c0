use mixgan_core::datamodel::MixedBatch;
use mixgan_core::downstream::{augment, label_intervention_status, AugmentMode, InterventionStatus};
use mixgan_core::dualvae::matching_loss;
use mixgan_core::evalsuite::{mmd, MmdConfig};
use mixgan_core::ingest::{
    denormalize, impute_simple, normalize, EventKind, HourlyGrid, NormStats, VariableSpec,
};
use mixgan_core::privacy::clip_gradient;
use mixgan_core::tensor::{Matrix, Tensor3};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = HourlyGrid> {
    (1usize..5, 1usize..6).prop_flat_map(|(subjects, t)| {
        let vars = 3;
        prop::collection::vec(prop::option::weighted(0.6, -5.0f64..5.0), subjects * t * vars).prop_map(
            move |cells| {
                let variables = vec![
                    VariableSpec { name: "a".into(), kind: EventKind::Continuous },
                    VariableSpec { name: "b".into(), kind: EventKind::Continuous },
                    VariableSpec { name: "c".into(), kind: EventKind::Discrete },
                ];
                let names = (0..subjects).map(|s| format!("s{s}")).collect();
                let mut g = HourlyGrid::empty(names, variables, t);
                for s in 0..subjects {
                    for h in 0..t {
                        for v in 0..vars {
                            g.set(s, h, v, cells[(s * t + h) * vars + v]);
                        }
                    }
                }
                // keep every continuous variable observed at least once
                g.set(0, 0, 0, Some(cells[0].unwrap_or(1.0)));
                g.set(0, 0, 1, Some(cells[1].unwrap_or(-1.0)));
                g
            },
        )
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn batch(n: usize) -> MixedBatch {
    let cont = Tensor3::from_vec(n, 2, 1, (0..2 * n).map(|i| i as f64).collect()).unwrap();
    let disc = Tensor3::from_vec(n, 2, 1, (0..2 * n).map(|i| (i % 2) as f64).collect()).unwrap();
    MixedBatch::with_default_names(cont, disc, None).unwrap()
}

proptest! {
    #[test]
    fn imputation_fills_and_is_idempotent(g in grid_strategy()) {
        let once = impute_simple(&g).unwrap();
        prop_assert_eq!(once.missing_count(), 0);
        let twice = impute_simple(&once).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn normalize_roundtrips(g in grid_strategy()) {
        let filled = impute_simple(&g).unwrap();
        let stats = NormStats::fit(&filled, None);
        let norm = normalize(&filled, &stats).unwrap();
        prop_assert!(norm.batch.cont.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let back = denormalize(&norm.batch.cont, &stats).unwrap();
        for s in 0..filled.subjects.len() {
            for h in 0..filled.t {
                for (j, r) in stats.ranges.iter().enumerate() {
                    if r.degenerate() {
                        continue;
                    }
                    let orig = filled.get(s, h, j).unwrap();
                    prop_assert!((back.get(s, h, j) - orig).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn augment_adds_floor_ratio_records(real_n in 1usize..20, syn_n in 0usize..20, ratio in 0.0f64..=1.0, seed: u64) {
        let real = batch(real_n);
        let syn = batch(syn_n.max(1));
        let out = augment(&real, &syn, AugmentMode::Alpha, ratio, seed).unwrap();
        prop_assert_eq!(out.n(), real_n + (ratio * syn.n() as f64 + 1e-9).floor() as usize);
        let out = augment(&real, &syn, AugmentMode::Beta, ratio, seed).unwrap();
        prop_assert_eq!(out.n(), syn.n() + (ratio * real_n as f64 + 1e-9).floor() as usize);
    }

    #[test]
    fn status_is_total_and_consistent(start_on: bool, window in prop::collection::vec(prop::bool::ANY, 1..8)) {
        let w: Vec<f64> = window.iter().map(|&b| b as u8 as f64).collect();
        let s = label_intervention_status(start_on, &w);
        prop_assert!(InterventionStatus::ALL.contains(&s));
        let any_on = window.iter().any(|&b| b);
        let all_on = window.iter().all(|&b| b);
        let expected = match (start_on, all_on, any_on) {
            (true, true, _) => InterventionStatus::StayOn,
            (true, false, _) => InterventionStatus::SwitchOff,
            (false, _, true) => InterventionStatus::Onset,
            (false, _, false) => InterventionStatus::StayOff,
        };
        prop_assert_eq!(s, expected);
    }

    #[test]
    fn matching_is_symmetric(a in prop::collection::vec(-2.0f64..2.0, 12), b in prop::collection::vec(-2.0f64..2.0, 12)) {
        let x = Tensor3::from_vec(2, 3, 2, a).unwrap();
        let y = Tensor3::from_vec(2, 3, 2, b).unwrap();
        let l = matching_loss(&x, &y).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - matching_loss(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mmd_is_symmetric(x in matrix(4, 3), y in matrix(6, 3)) {
        let cfg = MmdConfig::default();
        let a = mmd(&x, &y, &cfg).unwrap();
        let b = mmd(&y, &x, &cfg).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_norm(mut g in prop::collection::vec(-100.0f64..100.0, 1..20), c in 0.01f64..10.0) {
        let before = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let after = clip_gradient(&mut g, c);
        prop_assert!(after <= c + 1e-9);
        if before <= c {
            prop_assert!((after - before).abs() < 1e-12);
        }
    }
}
