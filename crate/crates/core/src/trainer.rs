//! The label-free training loop: sample domains from the pool, predict one
//! step with the surrogate, score the prediction by its finite-difference
//! residual, update the network, and write the predictions back.
//!
//! Batch entries are evaluated in parallel but reduced serially in sampled
//! order, so a run is bitwise reproducible for a fixed seed regardless of
//! thread count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::require_cfl;
use crate::fdrc::{loss_and_grad, LossTerms};
use crate::grid::{loss_mask, DomainSpec, SigmaField, SourceLayout, SourceSpec, WaveState};
use crate::io::{self, Checkpoint, Snapshot};
use crate::nn::{backward, init_params_scheme, predict_step_cached, FieldStack, InitScheme, ModelParams, HIDDEN_CHANNELS};
use crate::optim::{adam_step, lr_schedule, AdamState};
use crate::pool::{PoolEntry, TrainingPool, DEFAULT_RESET_PROB};
use crate::real::{Precision, Real};

pub const METRICS_HEADER: &str = "epoch,batch,L_u,L_v,L_p,total,lr,wall_time_s";
pub const MODEL_FILE: &str = "model.wnet";
pub const POOL_FILE: &str = "pool.wfld";
pub const STATE_FILE: &str = "train_state.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub domain: DomainSpec,
    pub layout: SourceLayout,
    pub pool_size: usize,
    pub batch_size: usize,
    /// Pool samples per epoch; a whole number of batches.
    pub samples_per_epoch: usize,
    pub epochs: u32,
    pub reset_prob: f64,
    pub seed: u64,
    pub precision: Precision,
    pub hidden_channels: usize,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    /// 200×200 domains, a pool of 1000, batches of 50, 10 000 samples per
    /// epoch for 200 epochs.
    fn default() -> Self {
        TrainConfig {
            domain: DomainSpec::reference(),
            layout: SourceLayout::default(),
            pool_size: 1000,
            batch_size: 50,
            samples_per_epoch: 10_000,
            epochs: 200,
            reset_prob: DEFAULT_RESET_PROB,
            seed: 0,
            precision: Precision::Single,
            hidden_channels: HIDDEN_CHANNELS,
            init: InitScheme::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        require_cfl(&self.domain)?;
        self.layout.validate(&self.domain)?;
        if self.pool_size == 0 || self.batch_size == 0 || self.batch_size > self.pool_size {
            return Err(Error::Config(format!(
                "batch size {} must lie in 1..={} (the pool size)",
                self.batch_size, self.pool_size
            )));
        }
        if self.samples_per_epoch == 0 || self.samples_per_epoch % self.batch_size != 0 {
            return Err(Error::Config(format!(
                "samples per epoch ({}) must be a positive multiple of the batch size ({})",
                self.samples_per_epoch, self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reset_prob) {
            return Err(Error::Config(format!("reset probability {} outside [0, 1]", self.reset_prob)));
        }
        if self.hidden_channels == 0 {
            return Err(Error::Config("hidden channel count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples_per_epoch / self.batch_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: u32,
    pub batch: usize,
    pub loss: LossTerms,
    pub lr: f64,
    pub wall_time_s: f64,
}

impl MetricsRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{:.3}",
            self.epoch, self.batch, self.loss.l_u, self.loss.l_v, self.loss.l_p, self.loss.total, self.lr, self.wall_time_s
        )
    }
}

/// Result of one optimizer update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Mean of the per-entry losses before the update.
    pub loss: LossTerms,
    pub resets: usize,
}

/// Loss of one surrogate step from `state` and its gradient with respect to
/// every network parameter. Returns the prediction as well.
pub fn entry_loss_and_grad<T: Real>(
    params: &ModelParams<T>,
    state: &WaveState<T>,
    sigma: &SigmaField<T>,
    spec: &DomainSpec,
    sources: &[SourceSpec],
) -> Result<(WaveState<T>, LossTerms, ModelParams<T>)> {
    let (pred, cache) = predict_step_cached(params, state, sigma, spec, sources)?;
    let mask = loss_mask::<T>(spec, sources);
    let (loss, g) = loss_and_grad(state, &pred, sigma, spec, &mask)?;
    let mut grad_delta = FieldStack::zeros(3, spec.nx, spec.ny);
    grad_delta.channel_mut(0).copy_from_slice(g.g_u.as_slice());
    grad_delta.channel_mut(1).copy_from_slice(g.g_v.as_slice());
    grad_delta.channel_mut(2).copy_from_slice(g.g_p.as_slice());
    // Overwritten source cells do not depend on the predicted increment.
    let p = grad_delta.channel_mut(2);
    for src in sources {
        for (i, j) in src.cells() {
            p[i * spec.ny + j] = T::zero();
        }
    }
    let grads = backward(params, &cache, &grad_delta)?;
    Ok((pred, loss, grads))
}

fn describe_entry<T: Real>(entry: &PoolEntry<T>) -> String {
    let sources: Vec<String> = entry
        .sources
        .iter()
        .map(|s| format!("[{},{} {}x{} T={} bias={:.4}]", s.i0, s.j0, s.w, s.h, s.period, s.bias))
        .collect();
    format!("age {}, sources {}", entry.age, sources.join(" "))
}

/// One optimizer update over a freshly sampled batch. The pool is only
/// modified after the update succeeds.
pub fn train_step<T: Real>(
    pool: &mut TrainingPool<T>,
    params: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    batch_size: usize,
    lr: f64,
) -> Result<StepOutcome> {
    let indices = pool.sample_batch(batch_size)?;
    let spec = pool.spec().clone();
    let evals: Vec<Result<(WaveState<T>, LossTerms, ModelParams<T>)>> = {
        let pool = &*pool;
        let params = &*params;
        indices
            .par_iter()
            .map(|&i| {
                let e = &pool.entries()[i];
                entry_loss_and_grad(params, &e.state, &e.sigma, &spec, &e.sources)
            })
            .collect()
    };

    let k = T::lit(1.0 / batch_size as f64);
    let mut grads = params.zeros_like();
    let mut losses = Vec::with_capacity(batch_size);
    let mut preds = Vec::with_capacity(batch_size);
    for (&i, eval) in indices.iter().zip(evals) {
        let (pred, loss, entry_grads) = eval?;
        if !loss.is_finite() || pred.first_non_finite().is_some() {
            let entry = &pool.entries()[i];
            return Err(Error::NonFiniteLoss { entry: i, step: entry.state.step, detail: describe_entry(entry) });
        }
        grads.add_scaled(&entry_grads, k);
        losses.push(loss);
        preds.push(pred);
    }
    adam_step(params, &grads, adam, lr)?;
    let resets = pool.write_back(&indices, preds)?;
    Ok(StepOutcome { loss: LossTerms::mean(&losses), resets })
}

/// Generator position, serialisable without exposing internals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed().to_vec(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] =
            self.seed.as_slice().try_into().map_err(|_| Error::Config(format!("rng seed has {} bytes, expected 32", self.seed.len())))?;
        let word_pos: u128 = self.word_pos.parse().map_err(|_| Error::Config(format!("bad rng position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SavedEntry {
    sources: Vec<SourceSpec>,
    age: u64,
}

/// Everything besides the model and pool fields needed to resume a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainState {
    epochs_completed: u32,
    config: TrainConfig,
    rng: RngState,
    entries: Vec<SavedEntry>,
}

/// Owns the model, optimizer state and pool of one training run.
pub struct Trainer<T: Real> {
    config: TrainConfig,
    params: ModelParams<T>,
    adam: AdamState<T>,
    pool: TrainingPool<T>,
    epochs_completed: u32,
    clock: Instant,
    reproducible: bool,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.precision != T::PRECISION {
            return Err(Error::Config(format!(
                "configured for {:?} precision but the session runs {:?}",
                config.precision,
                T::PRECISION
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_params_scheme::<T, _>(config.hidden_channels, config.init, &mut rng);
        let adam = AdamState::new(&params);
        let pool = TrainingPool::init_with(config.pool_size, &config.domain, &config.layout, config.reset_prob, rng)?;
        Ok(Trainer { config, params, adam, pool, epochs_completed: 0, clock: Instant::now(), reproducible: false })
    }

    /// Replaces the freshly initialised parameters, resetting the optimizer.
    pub fn with_params(mut self, params: ModelParams<T>) -> Result<Self> {
        params.validate()?;
        self.adam = AdamState::new(&params);
        self.params = params;
        Ok(self)
    }

    /// Records zero wall time so metrics files are bitwise repeatable.
    pub fn set_reproducible(&mut self, on: bool) {
        self.reproducible = on;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn pool(&self) -> &TrainingPool<T> {
        &self.pool
    }

    pub fn epochs_completed(&self) -> u32 {
        self.epochs_completed
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    /// One update at the learning rate of `epoch`.
    pub fn step(&mut self, epoch: u32, batch: usize) -> Result<MetricsRecord> {
        let lr = lr_schedule(epoch);
        let outcome = train_step(&mut self.pool, &mut self.params, &mut self.adam, self.config.batch_size, lr)?;
        let wall_time_s = if self.reproducible { 0.0 } else { self.clock.elapsed().as_secs_f64() };
        Ok(MetricsRecord { epoch, batch, loss: outcome.loss, lr, wall_time_s })
    }

    /// Runs the next epoch, reporting every batch to `on_batch`.
    pub fn run_epoch(&mut self, mut on_batch: impl FnMut(&MetricsRecord) -> Result<()>) -> Result<Vec<MetricsRecord>> {
        let epoch = self.epochs_completed + 1;
        let mut records = Vec::with_capacity(self.config.batches_per_epoch());
        for batch in 0..self.config.batches_per_epoch() {
            let record = self.step(epoch, batch)?;
            on_batch(&record)?;
            records.push(record);
        }
        self.epochs_completed = epoch;
        Ok(records)
    }

    /// Writes model + optimizer, pool fields and the resume sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_checkpoint(&dir.join(MODEL_FILE), &Checkpoint { params: self.params.clone(), adam: Some(self.adam.clone()) })?;
        let snaps: Vec<Snapshot<T>> =
            self.pool.entries().iter().map(|e| Snapshot::from_state(&e.state, Some(&e.sigma))).collect();
        io::write_snapshots(&dir.join(POOL_FILE), &snaps)?;
        let state = TrainState {
            epochs_completed: self.epochs_completed,
            config: self.config.clone(),
            rng: RngState::capture(self.pool.rng()),
            entries: self.pool.entries().iter().map(|e| SavedEntry { sources: e.sources.clone(), age: e.age }).collect(),
        };
        let path = dir.join(STATE_FILE);
        let text = serde_json::to_string_pretty(&state).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Restores a run saved by [`save`](Self::save).
    pub fn resume(dir: &Path) -> Result<Self> {
        let path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: TrainState =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config = state.config;
        config.validate()?;
        if config.precision != T::PRECISION {
            return Err(Error::Config(format!("checkpoint in {} was trained in {:?} precision", dir.display(), config.precision)));
        }
        let ckpt = io::read_checkpoint::<T>(&dir.join(MODEL_FILE))?;
        let adam = ckpt.adam.ok_or_else(|| Error::Config("checkpoint carries no optimizer state".into()))?;
        let snaps = io::read_snapshots::<T>(&dir.join(POOL_FILE))?;
        if snaps.len() != state.entries.len() {
            return Err(Error::Config(format!("{} pool records for {} entries", snaps.len(), state.entries.len())));
        }
        let saved = snaps
            .iter()
            .zip(state.entries)
            .map(|(snap, e)| Ok((snap.to_state()?, e.sources, e.age)))
            .collect::<Result<Vec<_>>>()?;
        let pool = TrainingPool::restore(&config.domain, &config.layout, config.reset_prob, saved, state.rng.restore()?)?;
        Ok(Trainer { config, params: ckpt.params, adam, pool, epochs_completed: state.epochs_completed, clock: Instant::now(), reproducible: false })
    }

    /// Extends or shortens the target epoch count of a resumed run.
    pub fn set_epochs(&mut self, epochs: u32) {
        self.config.epochs = epochs;
    }

    /// Trains until the configured epoch count. With an output directory,
    /// appends every batch to `metrics.csv` and saves a resumable checkpoint
    /// after each epoch; on a non-finite loss the offending entry is dumped
    /// to `diverged_entry_<index>.wfld` there before the error is returned.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        self.run_with(out_dir, |_, _| {})
    }

    /// [`run`](Self::run), calling `on_epoch` with each finished epoch's records.
    pub fn run_with(&mut self, out_dir: Option<&Path>, mut on_epoch: impl FnMut(u32, &[MetricsRecord])) -> Result<()> {
        let mut metrics = match out_dir {
            Some(dir) => Some(MetricsWriter::open(dir, self.epochs_completed)?),
            None => None,
        };
        while self.epochs_completed < self.config.epochs {
            let result = self.run_epoch(|record| match metrics.as_mut() {
                Some(w) => w.append(record),
                None => Ok(()),
            });
            let records = match result {
                Ok(r) => r,
                Err(err) => {
                    if let (Error::NonFiniteLoss { entry, .. }, Some(dir)) = (&err, out_dir) {
                        self.dump_entry(dir, *entry)?;
                    }
                    return Err(err);
                }
            };
            if let Some(dir) = out_dir {
                self.save(dir)?;
            }
            on_epoch(self.epochs_completed, &records);
        }
        Ok(())
    }

    fn dump_entry(&self, dir: &Path, index: usize) -> Result<()> {
        if let Some(entry) = self.pool.entry(index) {
            let path = dir.join(format!("diverged_entry_{index}.wfld"));
            io::write_snapshot(&path, &Snapshot::from_state(&entry.state, Some(&entry.sigma)))?;
        }
        Ok(())
    }
}

/// Append-only metrics CSV. On resume, rows from epochs after the last
/// checkpoint are discarded so the file matches the restored state.
struct MetricsWriter {
    path: PathBuf,
    file: fs::File,
}

impl MetricsWriter {
    fn open(dir: &Path, epochs_completed: u32) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let mut kept = format!("{METRICS_HEADER}\n");
        if epochs_completed > 0 {
            if let Ok(text) = fs::read_to_string(&path) {
                for line in text.lines().skip(1) {
                    let epoch = line.split(',').next().and_then(|e| e.parse::<u32>().ok());
                    if epoch.is_some_and(|e| e <= epochs_completed) {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                }
            }
        }
        fs::write(&path, kept).map_err(|e| Error::io(&path, e))?;
        let file = fs::OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter { path, file })
    }

    fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.file, "{}", record.csv_line()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains from scratch and returns the final parameters.
pub fn train<T: Real>(config: TrainConfig, out_dir: Option<&Path>) -> Result<ModelParams<T>> {
    let mut trainer = Trainer::<T>::new(config)?;
    trainer.run(out_dir)?;
    Ok(trainer.into_params())
}
