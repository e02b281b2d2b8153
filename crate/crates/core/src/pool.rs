//! A fixed-size population of evolving simulation domains. The surrogate's
//! own predictions are written back as future training inputs; entries are
//! occasionally re-drawn so the pool keeps covering whole propagation
//! histories from quiet start to steady oscillation.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{build_sigma, new_domain_with, DomainSpec, SigmaField, SourceLayout, SourceSpec, WaveState};
use crate::real::Real;

/// Default probability that a written-back entry is re-drawn.
pub const DEFAULT_RESET_PROB: f64 = 0.005;

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry<T = f64> {
    pub state: WaveState<T>,
    pub sources: Vec<SourceSpec>,
    /// Shared between entries: the absorbing layer is fixed for a run.
    pub sigma: Arc<SigmaField<T>>,
    /// Write-backs since the entry was last (re)drawn.
    pub age: u64,
}

#[derive(Clone, Debug)]
pub struct TrainingPool<T = f64> {
    entries: Vec<PoolEntry<T>>,
    reset_prob: f64,
    spec: DomainSpec,
    layout: SourceLayout,
    sigma: Arc<SigmaField<T>>,
    rng: ChaCha8Rng,
}

impl<T: Real> TrainingPool<T> {
    pub fn init(n: usize, spec: &DomainSpec, reset_prob: f64, rng: ChaCha8Rng) -> Result<Self> {
        Self::init_with(n, spec, &SourceLayout::default(), reset_prob, rng)
    }

    pub fn init_with(n: usize, spec: &DomainSpec, layout: &SourceLayout, reset_prob: f64, mut rng: ChaCha8Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("pool size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&reset_prob) {
            return Err(Error::Config(format!("reset probability {reset_prob} outside [0, 1]")));
        }
        spec.validate()?;
        let sigma = Arc::new(build_sigma::<T>(spec));
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let (state, sources) = new_domain_with(spec, layout, &mut rng)?;
            entries.push(PoolEntry { state, sources, sigma: Arc::clone(&sigma), age: 0 });
        }
        Ok(TrainingPool { entries, reset_prob, spec: spec.clone(), layout: layout.clone(), sigma, rng })
    }

    /// Rebuilds a pool from saved entries and generator state.
    pub fn restore(
        spec: &DomainSpec,
        layout: &SourceLayout,
        reset_prob: f64,
        saved: Vec<(WaveState<T>, Vec<SourceSpec>, u64)>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if saved.is_empty() {
            return Err(Error::Config("pool size must be at least 1".into()));
        }
        spec.validate()?;
        let sigma = Arc::new(build_sigma::<T>(spec));
        let entries = saved
            .into_iter()
            .map(|(state, sources, age)| {
                state.check_shape(spec.nx, spec.ny)?;
                crate::grid::validate_sources(&sources, spec)?;
                Ok(PoolEntry { state, sources, sigma: Arc::clone(&sigma), age })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingPool { entries, reset_prob, spec: spec.clone(), layout: layout.clone(), sigma, rng })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry<T>] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Option<&PoolEntry<T>> {
        self.entries.get(index)
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn layout(&self) -> &SourceLayout {
        &self.layout
    }

    pub fn reset_prob(&self) -> f64 {
        self.reset_prob
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// `k` distinct indices, uniformly at random without replacement.
    pub fn sample_batch(&mut self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.entries.len() {
            return Err(Error::Config(format!("batch size {k} outside 1..={}", self.entries.len())));
        }
        Ok(index::sample(&mut self.rng, self.entries.len(), k).into_vec())
    }

    /// Replaces each indexed entry's state with its successor, then re-draws
    /// each one independently with the reset probability. Nothing is modified
    /// if any index or state is invalid. Returns the number of resets.
    pub fn write_back(&mut self, indices: &[usize], new_states: Vec<WaveState<T>>) -> Result<usize> {
        if indices.len() != new_states.len() {
            return Err(Error::Config(format!("{} indices for {} states", indices.len(), new_states.len())));
        }
        for (&i, s) in indices.iter().zip(&new_states) {
            if i >= self.entries.len() {
                return Err(Error::Config(format!("pool index {i} out of range (pool holds {})", self.entries.len())));
            }
            s.check_shape(self.spec.nx, self.spec.ny)?;
        }
        let mut seen = vec![false; self.entries.len()];
        for &i in indices {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("pool index {i} written twice in one batch")));
            }
        }

        let mut resets = 0;
        for (&i, state) in indices.iter().zip(new_states) {
            if self.rng.random_bool(self.reset_prob) {
                let (fresh, sources) = new_domain_with(&self.spec, &self.layout, &mut self.rng)?;
                self.entries[i] = PoolEntry { state: fresh, sources, sigma: Arc::clone(&self.sigma), age: 0 };
                resets += 1;
            } else {
                let entry = &mut self.entries[i];
                entry.state = state;
                entry.age += 1;
            }
        }
        Ok(resets)
    }
}
