use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mixgan_core::adversarial::GanConfig;
use mixgan_core::dualvae::VaeConfig;
use mixgan_core::evalsuite::EvalConfig;
use mixgan_core::ingest::{CohortCriteria, FixtureSpec, VariableSpec};
use mixgan_core::pipeline::{AttackSettings, DownstreamSettings, ModelConfig};
use mixgan_core::privacy::DpConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Where training data comes from: a dataset directory or a generated fixture.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    pub fixture: Option<FixtureSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    pub enabled: bool,
    pub clip_c: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
    pub sample_rate: f64,
    pub pretraining: bool,
}

impl Default for DpSection {
    fn default() -> Self {
        let d = DpConfig::default();
        DpSection {
            enabled: false,
            clip_c: d.clip_c,
            noise_multiplier: d.noise_multiplier,
            delta: d.delta,
            sample_rate: d.sample_rate,
            pretraining: d.pretraining,
        }
    }
}

impl DpSection {
    pub fn config(&self) -> Option<DpConfig> {
        self.enabled.then(|| DpConfig {
            clip_c: self.clip_c,
            noise_multiplier: self.noise_multiplier,
            delta: self.delta,
            sample_rate: self.sample_rate,
            pretraining: self.pretraining,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub candidates_per_side: usize,
    pub pretrain_steps: usize,
    pub fractions: Vec<f64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        let s = AttackSettings::default();
        AttackSection {
            candidates_per_side: s.candidates_per_side,
            pretrain_steps: s.pretrain_steps,
            fractions: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

impl AttackSection {
    pub fn settings(&self, pool: usize) -> AttackSettings {
        AttackSettings {
            pool,
            candidates_per_side: self.candidates_per_side,
            pretrain_steps: self.pretrain_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub vae: VaeConfig,
    pub gan: GanConfig,
    pub dp: DpSection,
    pub eval: EvalConfig,
    pub downstream: DownstreamSettings,
    pub attack: AttackSection,
    pub seeds: Vec<u64>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSection::default(),
            vae: VaeConfig::default(),
            gan: GanConfig::default(),
            dp: DpSection::default(),
            eval: EvalConfig::default(),
            downstream: DownstreamSettings::default(),
            attack: AttackSection::default(),
            seeds: Vec::new(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        if let Some(dir) = &cfg.data.dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data.dir = Some(base.join(dir));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.data.dir.is_some() == self.data.fixture.is_some() {
            return Err(UsageError("data: give exactly one of `dir` or `fixture`".into()).into());
        }
        let checks = [
            self.vae.validate().context("vae"),
            self.gan.validate().context("gan"),
            self.downstream.windows.validate().context("downstream.windows"),
            self.eval.mmd.validate().context("eval.mmd"),
        ];
        for c in checks {
            c.map_err(|e| UsageError(format!("{e:#}")))?;
        }
        if self.vae.conditional != self.gan.conditional {
            bail!(UsageError("vae.conditional and gan.conditional must agree".into()));
        }
        if let Some(dp) = self.dp.config() {
            dp.validate().map_err(|e| UsageError(format!("dp: {e}")))?;
        }
        if let Some(f) = self.attack.fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            bail!(UsageError(format!("attack.fractions: {f} is outside (0, 1)")));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            vae: self.vae.clone(),
            gan: GanConfig {
                seed: self.seed,
                ..self.gan.clone()
            },
        }
    }

    /// Seeds for multi-seed sweeps; falls back to the run seed.
    pub fn sweep_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }
}

/// Ingestion settings for `mixgan ingest`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSpec {
    pub variables: Vec<VariableSpec>,
    pub horizon_hours: usize,
    pub cohort: CohortCriteria,
    /// Plausible range per variable; values outside become missing.
    pub clip: BTreeMap<String, (f64, f64)>,
}

impl Default for IngestSpec {
    fn default() -> Self {
        IngestSpec {
            variables: Vec::new(),
            horizon_hours: 24,
            cohort: CohortCriteria::default(),
            clip: BTreeMap::new(),
        }
    }
}

/// Parses JSON and reports the path to any offending key.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = fs::read(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        UsageError(format!("{}: at `{at}`: {}", path.display(), e.inner())).into()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> anyhow::Result<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        fs::write(&p, text).unwrap();
        RunConfig::load(&p)
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = parse(r#"{"data": {"fixture": {}}, "gan": {"lr_gg": 1.0}}"#).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("gan.lr_gg"), "{msg}");
    }

    #[test]
    fn data_source_is_exclusive() {
        assert!(parse(r#"{"data": {}}"#).is_err());
        assert!(parse(r#"{"data": {"dir": "x", "fixture": {}}}"#).is_err());
        let cfg = parse(r#"{"data": {"dir": "x"}}"#).unwrap();
        assert!(cfg.data.dir.unwrap().ends_with("x"));
    }

    #[test]
    fn dp_section_maps_to_config() {
        let cfg = parse(r#"{"data": {"fixture": {}}, "dp": {"enabled": true, "noise_multiplier": 2.0}}"#).unwrap();
        let dp = cfg.dp.config().unwrap();
        assert_eq!(dp.noise_multiplier, 2.0);
        assert_eq!(dp.clip_c, 1.0);
    }
}
