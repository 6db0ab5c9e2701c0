mod config;
mod plots;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mixgan_core::adversarial::{sample, train_joint_with, GanTraceRow};
use mixgan_core::checkpoint;
use mixgan_core::datamodel::{MixedBatch, ModelBundle};
use mixgan_core::dualvae::{pretrain_with, LossTraceRow};
use mixgan_core::evalsuite::{self, export_embeddings, write_correlation_csv, write_dimwise_csv, write_embeddings_csv};
use mixgan_core::ingest::{
    aggregate_hourly, clip_outliers, impute_simple, make_fixture, normalize, read_dataset, read_events, read_stays,
    select_cohort, write_dataset, FixtureSpec, NormStats,
};
use mixgan_core::parallel;
use mixgan_core::pipeline::{attack_run_on, class_labels, downstream_run, sample_like, AttackRow};
use mixgan_core::privacy::privacy_accountant;
use serde::Serialize;

use config::{read_json, IngestSpec, RunConfig};

/// Bad input, bad configuration or a missing file. Exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "mixgan", version, about = "Mixed-type clinical timeseries synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Output directory.
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated cohort with planted cross-domain coupling.
    Fixture {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 24)]
        t: usize,
        #[arg(long, default_value_t = 8)]
        j: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        l: usize,
        #[arg(long, default_value_t = 0.8)]
        coupling: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Turn long-format event logs into a normalized dataset.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        stays: PathBuf,
        /// JSON file with variables, horizon, cohort criteria and clip ranges.
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Pretrain the dual VAE and run joint adversarial training.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue joint training from the checkpoint in the output directory.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Sample a synthetic dataset from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short = 'n', long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset whose labels are reused, in order, for a conditional model.
        #[arg(long)]
        labels_from: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Score a synthetic dataset against a real one.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also export pooled latent codes of the real records.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// TRTR, TSTR and augmentation scenarios over the configured seeds.
    Downstream {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Membership inference over training fractions and seeds.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: Output,
    },
}

fn prepare_output(out: &Output) -> anyhow::Result<()> {
    if out.out.exists() {
        let non_empty = fs::read_dir(&out.out)
            .with_context(|| format!("reading {}", out.out.display()))?
            .next()
            .is_some();
        if non_empty && !out.force {
            return Err(UsageError(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.out.display()
            ))
            .into());
        }
    }
    fs::create_dir_all(&out.out)?;
    Ok(())
}

fn require(path: &Path) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(UsageError(format!("missing input: {}", path.display())).into())
    }
}

fn load_dataset(dir: &Path) -> anyhow::Result<MixedBatch> {
    require(dir)?;
    let (batch, _) = read_dataset(dir).map_err(|e| UsageError(format!("{}: {e}", dir.display())))?;
    Ok(batch)
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<ModelBundle> {
    require(&dir.join(checkpoint::MANIFEST))?;
    Ok(checkpoint::load(dir)?)
}

fn run_data(cfg: &RunConfig) -> anyhow::Result<MixedBatch> {
    match (&cfg.data.dir, &cfg.data.fixture) {
        (Some(dir), _) => load_dataset(dir),
        (None, Some(spec)) => Ok(make_fixture(spec)?.batch),
        (None, None) => Err(UsageError("data section is empty".into()).into()),
    }
}

/// The model sees labels only when conditional.
fn training_view(mut data: MixedBatch, conditional: bool) -> anyhow::Result<MixedBatch> {
    if conditional {
        if data.labels.is_none() {
            return Err(UsageError("conditional training needs a labelled dataset".into()).into());
        }
    } else {
        data.labels = None;
    }
    Ok(data)
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_fixture(spec: FixtureSpec, output: &Output) -> anyhow::Result<()> {
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    prepare_output(output)?;
    let fx = make_fixture(&spec)?;
    let manifest = write_dataset(&output.out, &fx.batch, None, &[])?;
    log::info!(
        "wrote fixture {:?} / {:?} to {}",
        manifest.cont_shape,
        manifest.disc_shape,
        output.out.display()
    );
    Ok(())
}

fn cmd_ingest(events: &Path, stays: &Path, spec: &Path, output: &Output) -> anyhow::Result<()> {
    require(events)?;
    require(stays)?;
    let spec: IngestSpec = read_json(spec)?;
    if spec.variables.is_empty() || spec.horizon_hours == 0 {
        return Err(UsageError("ingest spec needs variables and a positive horizon".into()).into());
    }
    prepare_output(output)?;
    let cohort = select_cohort(&read_stays(stays)?, &spec.cohort);
    let keep: std::collections::HashSet<&str> = cohort.iter().map(|s| s.subject_id.as_str()).collect();
    let events: Vec<_> = read_events(events)?
        .into_iter()
        .filter(|e| keep.contains(e.subject_id.as_str()))
        .collect();
    log::info!("{} stays admitted, {} events kept", cohort.len(), events.len());
    let grid = aggregate_hourly(&events, &spec.variables, spec.horizon_hours)?;
    let grid = impute_simple(&clip_outliers(&grid, &spec.clip))?;
    let stats = NormStats::fit(&grid, None);
    let norm = normalize(&grid, &stats)?;
    write_dataset(&output.out, &norm.batch, Some(&stats), &norm.flagged)?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, resume: bool, output: &Output) -> anyhow::Result<()> {
    let dp = cfg.dp.config();
    if let Some(dp) = &dp {
        privacy_accountant(1, dp).map_err(|e| UsageError(format!("dp: {e}")))?;
    }
    let data = training_view(run_data(cfg)?, cfg.vae.conditional)?;
    let model = cfg.model();
    let dir = &output.out;
    let (start, mut pre_trace): (ModelBundle, Vec<LossTraceRow>) = if resume {
        let bundle = load_checkpoint(dir)?;
        (bundle, read_rows(&dir.join("pretrain_trace.csv"))?)
    } else {
        prepare_output(output)?;
        let pre = pretrain_with(&data, &model.vae, cfg.seed, dp.as_ref().filter(|d| d.pretraining))?;
        (pre.bundle, pre.trace)
    };
    let joint = train_joint_with(&data, &start, &model.gan, dp.as_ref())?;
    let mut gan_trace: Vec<GanTraceRow> = if resume {
        read_rows(&dir.join("gan_trace.csv"))?
    } else {
        Vec::new()
    };
    gan_trace.extend(joint.trace);
    checkpoint::save(&joint.bundle, dir)?;
    pre_trace.sort_by_key(|r| r.epoch);
    write_rows(&pre_trace, &dir.join("pretrain_trace.csv"))?;
    write_rows(&gan_trace, &dir.join("gan_trace.csv"))?;
    write_json(cfg, &dir.join("run_config.json"))?;
    if let Some(dp) = &dp {
        let steps = gan_trace.len() as u64 * model.gan.d_steps_per_g as u64;
        let epsilon = privacy_accountant(steps, dp)?;
        write_json(
            &serde_json::json!({ "steps": steps, "epsilon": epsilon, "delta": dp.delta }),
            &dir.join("privacy.json"),
        )?;
        log::info!("privacy: epsilon {epsilon:.4} at delta {} after {steps} steps", dp.delta);
    }
    log::info!("checkpoint at iteration {} in {}", joint.bundle.hyper.iteration, dir.display());
    Ok(())
}

fn cmd_generate(ckpt: &Path, n: usize, seed: u64, labels_from: Option<&Path>, output: &Output) -> anyhow::Result<()> {
    if n == 0 {
        return Err(UsageError("-n must be at least 1".into()).into());
    }
    let bundle = load_checkpoint(ckpt)?;
    let dims = bundle.dims()?.clone();
    let syn = match (dims.conditional(), labels_from) {
        (true, Some(dir)) => sample_like(&bundle, &load_dataset(dir)?, n, seed)?,
        (true, None) => {
            let marginal = bundle
                .hyper
                .label_marginal
                .clone()
                .ok_or_else(|| UsageError("conditional checkpoint has no label marginal; pass --labels-from".into()))?;
            let mut counts: Vec<usize> = marginal.iter().map(|p| (p * n as f64).floor() as usize).collect();
            let short = n - counts.iter().sum::<usize>();
            counts[0] += short;
            sample(&bundle, n, dims.t, Some(&class_labels(&counts)), seed)?
        }
        (false, Some(_)) => return Err(UsageError("--labels-from needs a conditional checkpoint".into()).into()),
        (false, None) => sample(&bundle, n, dims.t, None, seed)?,
    };
    prepare_output(output)?;
    write_dataset(&output.out, &syn, None, &[])?;
    Ok(())
}

fn cmd_evaluate(
    real: &Path,
    synthetic: &Path,
    cfg: Option<&RunConfig>,
    ckpt: Option<&Path>,
    seed: u64,
    output: &Output,
) -> anyhow::Result<()> {
    let real = load_dataset(real)?;
    let syn = load_dataset(synthetic)?;
    let bundle = ckpt.map(load_checkpoint).transpose()?;
    let eval_cfg = cfg.map(|c| c.eval.clone()).unwrap_or_default();
    prepare_output(output)?;
    let report = evalsuite::evaluate(&real, &syn, &eval_cfg, seed)?;
    let out = &output.out;
    write_json(&report, &out.join("report.json"))?;
    write_dimwise_csv(&report.dimwise, &out.join("dimwise.csv"))?;
    write_correlation_csv(&report.corr_real, &out.join("corr_real.csv"))?;
    write_correlation_csv(&report.corr_syn, &out.join("corr_syn.csv"))?;
    plots::dimwise_scatter(&report.dimwise, &out.join("dimwise.png"))?;
    plots::correlation_heatmap(&report.corr_real, &out.join("corr_real.png"))?;
    plots::correlation_heatmap(&report.corr_syn, &out.join("corr_syn.png"))?;
    if let Some(b) = &bundle {
        let rows = export_embeddings(b, &real, seed)?;
        write_embeddings_csv(&rows, &out.join("embeddings.csv"))?;
    }
    log::info!(
        "mmd {:.4}, dimension-wise gap {:.4}, discriminative score {:.4}",
        report.mmd,
        report.dimwise_mean_abs_gap,
        report.disc_score
    );
    Ok(())
}

fn cmd_downstream(cfg: &RunConfig, output: &Output) -> anyhow::Result<()> {
    let data = training_view(run_data(cfg)?, cfg.vae.conditional)?;
    prepare_output(output)?;
    let model = cfg.model();
    let results = parallel::map_jobs(cfg.sweep_seeds(), |seed| {
        downstream_run(&data, &model, &cfg.downstream, seed)
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    write_rows(&rows, &output.out.join("downstream.csv"))?;
    Ok(())
}

fn cmd_attack(cfg: &RunConfig, output: &Output) -> anyhow::Result<()> {
    let pool = training_view(run_data(cfg)?, cfg.vae.conditional)?;
    prepare_output(output)?;
    let model = cfg.model();
    let settings = cfg.attack.settings(pool.n());
    let jobs: Vec<(u64, f64)> = cfg
        .sweep_seeds()
        .into_iter()
        .flat_map(|s| cfg.attack.fractions.iter().map(move |&f| (s, f)))
        .collect();
    let results = parallel::map_jobs(jobs, |(seed, fraction)| {
        attack_run_on(&pool, &model, &settings, fraction, seed)
    });
    let rows: Vec<AttackRow> = results.into_iter().collect::<Result<_, _>>()?;
    write_rows(&rows, &output.out.join("attack.csv"))?;
    Ok(())
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("MIXGAN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| UsageError(format!("MIXGAN_THREADS must be a positive integer, got `{v}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("building the worker pool")?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Fixture {
            n,
            t,
            j,
            k,
            l,
            coupling,
            seed,
            output,
        } => cmd_fixture(
            FixtureSpec {
                n_patients: n,
                t,
                j,
                k,
                l,
                coupling,
                seed,
            },
            &output,
        ),
        Command::Ingest {
            events,
            stays,
            spec,
            output,
        } => cmd_ingest(&events, &stays, &spec, &output),
        Command::Train {
            config,
            seed,
            resume,
            output,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cmd_train(&cfg, resume, &output)
        }
        Command::Generate {
            checkpoint,
            n,
            seed,
            labels_from,
            output,
        } => cmd_generate(&checkpoint, n, seed, labels_from.as_deref(), &output),
        Command::Evaluate {
            real,
            synthetic,
            config,
            checkpoint,
            seed,
            output,
        } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let seed = seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            cmd_evaluate(&real, &synthetic, cfg.as_ref(), checkpoint.as_deref(), seed, &output)
        }
        Command::Downstream { config, output } => cmd_downstream(&RunConfig::load(&config)?, &output),
        Command::Attack { config, output } => cmd_attack(&RunConfig::load(&config)?, &output),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<mixgan_core::Error>().is_some_and(|e| e.is_numerical()));
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
