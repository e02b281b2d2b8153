use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fdrc_core::eval::{EvalCase, MreRegion};
use fdrc_core::fdm::require_cfl;
use fdrc_core::grid::validate_sources;
use fdrc_core::nn::InitScheme;
use fdrc_core::pool::DEFAULT_RESET_PROB;
use fdrc_core::trainer::TrainConfig;
use fdrc_core::{DomainSpec, Precision, SourceLayout, SourceSpec};
use serde::{Deserialize, Serialize};

/// Training hyper-parameters as they appear under `"train"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub pool_size: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub epochs: u32,
    pub reset_prob: f64,
    pub seed: u64,
    pub precision: Precision,
    pub hidden_channels: usize,
    pub init: InitScheme,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            pool_size: d.pool_size,
            batch_size: d.batch_size,
            samples_per_epoch: d.samples_per_epoch,
            epochs: d.epochs,
            reset_prob: DEFAULT_RESET_PROB,
            seed: d.seed,
            precision: d.precision,
            hidden_channels: d.hidden_channels,
            init: d.init,
        }
    }
}

/// Everything a command may need, read from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    #[serde(default)]
    pub layout: SourceLayout,
    #[serde(default)]
    pub train: TrainSettings,
    /// Fixed sources for `simulate` and `rollout`; drawn from the seed when absent.
    #[serde(default)]
    pub sources: Option<Vec<SourceSpec>>,
    /// Evaluation cases for `compare` when no cases file is given.
    #[serde(default)]
    pub cases: Vec<EvalCase>,
    #[serde(default)]
    pub region: MreRegion,
    /// Default output location when `--out` is not passed.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        config.validate().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        require_cfl(&self.domain)?;
        self.layout.validate(&self.domain)?;
        self.train_config().validate()?;
        if let Some(sources) = &self.sources {
            validate_sources(sources, &self.domain)?;
        }
        for (k, case) in self.cases.iter().enumerate() {
            validate_sources(&case.sources, &self.domain).with_context(|| format!("case {k}"))?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            domain: self.domain.clone(),
            layout: self.layout.clone(),
            pool_size: t.pool_size,
            batch_size: t.batch_size,
            samples_per_epoch: t.samples_per_epoch,
            epochs: t.epochs,
            reset_prob: t.reset_prob,
            seed: t.seed,
            precision: t.precision,
            hidden_channels: t.hidden_channels,
            init: t.init,
        }
    }

    /// `--out` if given, else the configured output path.
    pub fn output_or(&self, out: Option<&Path>) -> Result<PathBuf> {
        match (out, &self.output) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(p)) => Ok(p.clone()),
            (None, None) => bail!("no output path: pass --out or set \"output\" in the config"),
        }
    }
}

/// Cases file: either a bare JSON array of cases or `{"cases": [...]}`.
pub fn load_cases(path: &Path, domain: &DomainSpec) -> Result<Vec<EvalCase>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum CasesFile {
        List(Vec<EvalCase>),
        Wrapped { cases: Vec<EvalCase> },
    }
    let text = fs::read_to_string(path).with_context(|| format!("cannot read cases {}", path.display()))?;
    let cases = match serde_json::from_str(&text).with_context(|| format!("invalid cases file {}", path.display()))? {
        CasesFile::List(c) | CasesFile::Wrapped { cases: c } => c,
    };
    for (k, case) in cases.iter().enumerate() {
        validate_sources(&case.sources, domain).with_context(|| format!("{}: case {k}", path.display()))?;
    }
    Ok(cases)
}
