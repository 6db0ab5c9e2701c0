use mixgan_core::adversarial::{sample, train_joint, GanConfig, JointTrainer};
use mixgan_core::checkpoint;
use mixgan_core::datamodel::{MixedBatch, ModelBundle};
use mixgan_core::dualvae::{pretrain, VaeConfig};
use mixgan_core::ingest::{make_fixture, FixtureSpec};

fn setup() -> (MixedBatch, ModelBundle) {
    let data = make_fixture(&FixtureSpec { n_patients: 32, t: 6, j: 3, k: 2, seed: 9, ..Default::default() })
        .unwrap()
        .batch;
    let vae = VaeConfig { epochs: 1, hidden: 6, latent_dim: 4, batch_size: 16, ..Default::default() };
    let pre = pretrain(&data, &vae, 9).unwrap().bundle;
    (data, pre)
}

fn gan(ema: f64) -> GanConfig {
    GanConfig {
        iterations: 4,
        batch_size: 16,
        noise_dim: 4,
        gen_hidden: 6,
        disc_hidden: 6,
        lr_g: 1e-2,
        lr_d: 1e-2,
        generator_ema: ema,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn averaged_generator_replaces_raw_weights() {
    let (data, pre) = setup();
    let plain = train_joint(&data, &pre, &gan(0.0)).unwrap().bundle;
    assert!(!plain.has_prefix("raw."));

    let avg = train_joint(&data, &pre, &gan(0.9)).unwrap().bundle;
    let raw = avg.names_with_prefixes(&["raw."]);
    assert!(!raw.is_empty());
    for name in &raw {
        let live = &name["raw.".len()..];
        assert!(live.starts_with("gen"), "{name}");
        assert_eq!(avg.get(name).unwrap(), plain.get(live).unwrap());
        assert_ne!(avg.get(live).unwrap(), avg.get(name).unwrap());
    }
}

#[test]
fn resume_restores_raw_weights() {
    let (data, pre) = setup();
    let done = train_joint(&data, &pre, &gan(0.9)).unwrap().bundle;
    let trainer = JointTrainer::new(&data, &done, &gan(0.9), None).unwrap();
    assert!(!trainer.bundle.has_prefix("raw."));
    assert_eq!(trainer.bundle.hyper.iteration, 4);
    for name in done.names_with_prefixes(&["raw."]) {
        assert_eq!(trainer.bundle.get(&name["raw.".len()..]).unwrap(), done.get(&name).unwrap());
    }
    let again = trainer.finish().bundle;
    assert_eq!(again.names_with_prefixes(&["raw."]), done.names_with_prefixes(&["raw."]));
}

#[test]
fn checkpoint_roundtrip_keeps_sampling() {
    let (data, pre) = setup();
    let done = train_joint(&data, &pre, &gan(0.9)).unwrap().bundle;
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&done, dir.path()).unwrap();
    let loaded = checkpoint::load(dir.path()).unwrap();
    let a = sample(&loaded, 8, data.t(), None, 1).unwrap();
    let b = sample(&checkpoint::load(dir.path()).unwrap(), 8, data.t(), None, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n(), 8);
}
