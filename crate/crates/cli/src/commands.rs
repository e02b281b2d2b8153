use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fdrc_core::eval::{self, ComparisonReport, Oracle};
use fdrc_core::fdm::{self, Trajectory};
use fdrc_core::grid::new_domain_with;
use fdrc_core::io::{self, Snapshot};
use fdrc_core::trainer::Trainer;
use fdrc_core::{FieldGrid, Precision, Real, SourceSpec, WaveState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{load_cases, RunConfig};

pub const EXPORT_FORMATS: &[&str] = &["csv", "pgm"];

pub fn snapshot_name(step: u64) -> String {
    format!("snap_{step:06}.wfld")
}

/// Configured sources, or a random draw from `seed` using the source layout.
pub fn resolve_sources(config: &RunConfig, seed: Option<u64>) -> Result<Vec<SourceSpec>> {
    if let Some(s) = &config.sources {
        return Ok(s.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(config.train.seed));
    let (_, sources) = new_domain_with::<f64, _>(&config.domain, &config.layout, &mut rng)?;
    Ok(sources)
}

/// Writes every snapshot as a single-precision `u, v, p` record.
fn write_trajectory<T: Real>(traj: &Trajectory<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    traj.snapshots
        .iter()
        .map(|s| {
            let path = dir.join(snapshot_name(s.step));
            let narrow: WaveState<f32> = s.cast();
            io::write_snapshot(&path, &Snapshot::from_state(&narrow, None))?;
            Ok(path)
        })
        .collect()
}

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub resume: Option<&'a Path>,
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
    pub reproducible: bool,
}

pub fn train(args: &TrainArgs<'_>) -> Result<()> {
    let config = args.config.map(RunConfig::load).transpose()?;
    let precision = match (args.precision, &config, args.resume) {
        (Some(p), _, _) => p,
        (None, _, Some(dir)) => io::checkpoint_precision(&dir.join(fdrc_core::trainer::MODEL_FILE))?,
        (None, Some(c), None) => c.train.precision,
        (None, None, None) => bail!("train needs --config or --resume"),
    };
    match precision {
        Precision::Single => train_as::<f32>(args, config.as_ref()),
        Precision::Double => train_as::<f64>(args, config.as_ref()),
    }
}

fn train_as<T: Real>(args: &TrainArgs<'_>, config: Option<&RunConfig>) -> Result<()> {
    let (mut trainer, out) = match args.resume {
        Some(dir) => {
            let mut t = Trainer::<T>::resume(dir).with_context(|| format!("cannot resume from {}", dir.display()))?;
            if let Some(c) = config {
                t.set_epochs(c.train.epochs);
            }
            let out = args.out.map(Path::to_path_buf).or_else(|| config.and_then(|c| c.output.clone())).unwrap_or_else(|| dir.to_path_buf());
            eprintln!("resuming after epoch {} of {}", t.epochs_completed(), t.config().epochs);
            (t, out)
        }
        None => {
            let config = config.context("train needs --config")?;
            let mut tc = config.train_config();
            tc.precision = T::PRECISION;
            if let Some(seed) = args.seed {
                tc.seed = seed;
            }
            (Trainer::<T>::new(tc)?, config.output_or(args.out)?)
        }
    };
    trainer.set_reproducible(args.reproducible);
    let total = trainer.config().epochs;
    trainer.run_with(Some(&out), |epoch, records| {
        let mean = records.iter().map(|r| r.loss.total).sum::<f64>() / records.len().max(1) as f64;
        eprintln!("epoch {epoch}/{total}: mean loss {mean:e}");
    })?;
    eprintln!("model written to {}", out.join(fdrc_core::trainer::MODEL_FILE).display());
    Ok(())
}

pub struct SimArgs<'a> {
    pub config: &'a Path,
    pub steps: u64,
    pub stride: u64,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
}

pub fn simulate(args: &SimArgs<'_>) -> Result<Vec<PathBuf>> {
    let config = RunConfig::load(args.config)?;
    let out = config.output_or(args.out)?;
    let sources = resolve_sources(&config, args.seed)?;
    match args.precision.unwrap_or(Precision::Double) {
        Precision::Single => write_trajectory(&fdm::simulate::<f32>(&config.domain, &sources, args.steps, args.stride)?, &out),
        Precision::Double => write_trajectory(&fdm::simulate::<f64>(&config.domain, &sources, args.steps, args.stride)?, &out),
    }
}

pub struct RolloutArgs<'a> {
    pub model: &'a Path,
    pub config: &'a Path,
    pub steps: u64,
    pub stride: u64,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
}

pub fn rollout(args: &RolloutArgs<'_>) -> Result<Vec<PathBuf>> {
    let config = RunConfig::load(args.config)?;
    let out = config.output_or(args.out)?;
    let sources = resolve_sources(&config, args.seed)?;
    let precision = match args.precision {
        Some(p) => p,
        None => io::checkpoint_precision(args.model).with_context(|| format!("cannot read model {}", args.model.display()))?,
    };
    fn run<T: Real>(args: &RolloutArgs<'_>, config: &RunConfig, sources: &[SourceSpec], out: &Path) -> Result<Vec<PathBuf>> {
        let ckpt = io::read_checkpoint::<T>(args.model).with_context(|| format!("cannot read model {}", args.model.display()))?;
        let traj = eval::rollout(&ckpt.params, &config.domain, sources, args.steps, args.stride).context("rollout failed")?;
        write_trajectory(&traj, out)
    }
    match precision {
        Precision::Single => run::<f32>(args, &config, &sources, &out),
        Precision::Double => run::<f64>(args, &config, &sources, &out),
    }
}

pub struct CompareArgs<'a> {
    /// `None` compares the oracle with itself.
    pub model: Option<&'a Path>,
    pub config: &'a Path,
    pub cases: Option<&'a Path>,
    pub stride: u64,
    pub out: Option<&'a Path>,
    pub precision: Option<Precision>,
}

/// Writes the per-snapshot report and a `<stem>_summary.csv` beside it.
/// Fails after writing if any case failed.
pub fn compare(args: &CompareArgs<'_>) -> Result<ComparisonReport> {
    let config = RunConfig::load(args.config)?;
    let out = config.output_or(args.out)?;
    let cases = match args.cases {
        Some(p) => load_cases(p, &config.domain)?,
        None => config.cases.clone(),
    };
    if cases.is_empty() {
        bail!("no evaluation cases: pass --cases or set \"cases\" in the config");
    }
    let report = match args.model {
        None => eval::compare::<f64, _>(&Oracle, &config.domain, &cases, args.stride, config.region),
        Some(model) => {
            let precision = match args.precision {
                Some(p) => p,
                None => io::checkpoint_precision(model).with_context(|| format!("cannot read model {}", model.display()))?,
            };
            match precision {
                Precision::Single => {
                    let ckpt = io::read_checkpoint::<f32>(model).with_context(|| format!("cannot read model {}", model.display()))?;
                    eval::compare(&ckpt.params, &config.domain, &cases, args.stride, config.region)
                }
                Precision::Double => {
                    let ckpt = io::read_checkpoint::<f64>(model).with_context(|| format!("cannot read model {}", model.display()))?;
                    eval::compare(&ckpt.params, &config.domain, &cases, args.stride, config.region)
                }
            }
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(&out, report.to_csv()).with_context(|| format!("cannot write {}", out.display()))?;
    let summary = summary_path(&out);
    fs::write(&summary, report.summary_csv()).with_context(|| format!("cannot write {}", summary.display()))?;
    let failed: Vec<String> = report.failed().map(|c| format!("case {}: {}", c.case_id, c.error.as_deref().unwrap_or(""))).collect();
    if !failed.is_empty() {
        bail!("{} of {} cases failed:\n  {}", failed.len(), report.cases.len(), failed.join("\n  "));
    }
    Ok(report)
}

pub fn summary_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    report.with_file_name(format!("{stem}_summary.csv"))
}

pub struct ExportArgs<'a> {
    pub snapshot: &'a Path,
    pub format: &'a str,
    pub channel: &'a str,
    pub out: &'a Path,
}

fn channel_index(name: &str, available: usize) -> Result<usize> {
    let idx = match name {
        "u" => 0,
        "v" => 1,
        "p" => 2,
        "sigma" => 3,
        other => other.parse().map_err(|_| anyhow::anyhow!("unknown channel `{other}` (use u, v, p, sigma or an index)"))?,
    };
    if idx >= available {
        bail!("channel `{name}` not present: snapshot has {available} channels");
    }
    Ok(idx)
}

pub fn export(args: &ExportArgs<'_>) -> Result<()> {
    if !EXPORT_FORMATS.contains(&args.format) {
        bail!("unsupported format `{}`; supported formats: {}", args.format, EXPORT_FORMATS.join(", "));
    }
    let snap = io::read_snapshot::<f64>(args.snapshot).with_context(|| format!("cannot read snapshot {}", args.snapshot.display()))?;
    let field: &FieldGrid<f64> = &snap.channels[channel_index(args.channel, snap.channels.len())?];
    let bytes = match args.format {
        "csv" => io::field_to_csv(field).into_bytes(),
        _ => io::field_to_pgm(field),
    };
    fs::write(args.out, bytes).with_context(|| format!("cannot write {}", args.out.display()))
}
