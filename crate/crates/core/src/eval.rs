//! Surrogate rollouts, the mean relative error metric, and side-by-side
//! comparison against the finite-difference oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::{self, keeps_snapshot, require_cfl, Trajectory};
use crate::fdrc::{fdrc_loss, residuals, LossTerms};
use crate::grid::{build_sigma, interior_mask, loss_mask, validate_sources, DomainSpec, FieldGrid, SigmaField, SourceSpec, WaveState};
use crate::nn::{predict_step, ModelParams};
use crate::real::Real;

/// Anything that advances a wave state by one step.
pub trait Stepper<T: Real>: Sync {
    fn step(&self, state: &WaveState<T>, sigma: &SigmaField<T>, spec: &DomainSpec, sources: &[SourceSpec]) -> Result<WaveState<T>>;
}

/// The finite-difference stepper, usable wherever a surrogate is expected.
#[derive(Clone, Copy, Debug, Default)]
pub struct Oracle;

impl<T: Real> Stepper<T> for Oracle {
    fn step(&self, state: &WaveState<T>, sigma: &SigmaField<T>, spec: &DomainSpec, sources: &[SourceSpec]) -> Result<WaveState<T>> {
        fdm::fdm_step(state, sigma, spec, sources)
    }
}

impl<T: Real> Stepper<T> for ModelParams<T> {
    fn step(&self, state: &WaveState<T>, sigma: &SigmaField<T>, spec: &DomainSpec, sources: &[SourceSpec]) -> Result<WaveState<T>> {
        predict_step(self, state, sigma, spec, sources)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout<T = f64> {
    pub trajectory: Trajectory<T>,
    /// Residual loss of every transition, in step order (index `k` is the
    /// transition into step `k + 1`).
    pub step_losses: Vec<LossTerms>,
}

/// Autoregressive surrogate rollout from the zero state.
pub fn rollout<T: Real>(params: &ModelParams<T>, spec: &DomainSpec, sources: &[SourceSpec], steps: u64, stride: u64) -> Result<Trajectory<T>> {
    rollout_with(params, spec, sources, steps, stride).map(|r| r.trajectory)
}

/// Rollout with any stepper, tracking the residual loss of each transition.
/// Aborts with the first step at which a field becomes non-finite.
pub fn rollout_with<T: Real, S: Stepper<T> + ?Sized>(
    stepper: &S,
    spec: &DomainSpec,
    sources: &[SourceSpec],
    steps: u64,
    stride: u64,
) -> Result<Rollout<T>> {
    spec.validate()?;
    require_cfl(spec)?;
    validate_sources(sources, spec)?;
    if stride == 0 {
        return Err(Error::Config("snapshot stride must be at least 1".into()));
    }
    let sigma = build_sigma::<T>(spec);
    let mask = loss_mask::<T>(spec, sources);
    let mut state = WaveState::zeros(spec.nx, spec.ny);
    let mut snapshots = vec![state.clone()];
    let mut step_losses = Vec::with_capacity(steps as usize);
    for n in 1..=steps {
        let next = stepper.step(&state, &sigma, spec, sources)?;
        if let Some(name) = next.first_non_finite() {
            return Err(Error::NonFinite { what: format!("surrogate field {name}"), step: next.step });
        }
        let loss = fdrc_loss(&residuals(&state, &next, &sigma, spec, &mask)?)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "residual loss".into(), step: next.step });
        }
        step_losses.push(loss);
        state = next;
        if keeps_snapshot(n, steps, stride) {
            snapshots.push(state.clone());
        }
    }
    Ok(Rollout { trajectory: Trajectory { snapshots }, step_losses })
}

/// `Σ|X−Y| / Σ|Y| × 100` over cells where `mask` is nonzero.
pub fn mre<T: Real>(pred: &FieldGrid<T>, truth: &FieldGrid<T>, mask: &FieldGrid<T>) -> Result<f64> {
    if pred.shape() != truth.shape() || mask.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "mre over {:?}, {:?} and mask {:?}",
            pred.shape(),
            truth.shape(),
            mask.shape()
        )));
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for ((&x, &y), &m) in pred.as_slice().iter().zip(truth.as_slice()).zip(mask.as_slice()) {
        if m != T::zero() {
            num += (x.as_f64() - y.as_f64()).abs();
            den += y.as_f64().abs();
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(num / den * 100.0)
}

/// Which cells the relative error is computed over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MreRegion {
    #[default]
    Interior,
    Full,
}

impl MreRegion {
    pub fn mask<T: Real>(self, spec: &DomainSpec) -> FieldGrid<T> {
        match self {
            MreRegion::Interior => interior_mask(spec),
            MreRegion::Full => FieldGrid::filled(spec.nx, spec.ny, T::one()),
        }
    }
}

/// One evaluation scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCase {
    pub sources: Vec<SourceSpec>,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotMetric {
    pub step: u64,
    pub mre_p: f64,
    /// Residual loss of the surrogate transition into this step.
    pub fdrc_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub case_id: usize,
    pub source_count: usize,
    pub periods: Vec<f64>,
    pub steps: u64,
    /// Per retained snapshot after step 0 (the zero initial state has no
    /// defined relative error).
    pub snapshots: Vec<SnapshotMetric>,
    /// Mean of the per-snapshot errors.
    pub mean_mre_p: f64,
    /// Mean residual loss over every surrogate transition.
    pub mean_fdrc_loss: f64,
    /// Set when the case failed; the metrics then cover nothing.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub cases: Vec<CaseReport>,
}

fn compare_case<T: Real, S: Stepper<T> + ?Sized>(
    stepper: &S,
    spec: &DomainSpec,
    case: &EvalCase,
    stride: u64,
    region: MreRegion,
) -> Result<(Vec<SnapshotMetric>, f64)> {
    let truth = fdm::simulate::<f64>(spec, &case.sources, case.steps, stride)?;
    let surrogate = rollout_with::<T, S>(stepper, spec, &case.sources, case.steps, stride)?;
    let mask = region.mask::<f64>(spec);
    let mut metrics = Vec::new();
    for (y, x) in truth.snapshots.iter().zip(&surrogate.trajectory.snapshots) {
        debug_assert_eq!(x.step, y.step);
        if y.step == 0 {
            continue;
        }
        let mre_p = mre(&x.p.cast::<f64>(), &y.p, &mask)?;
        let fdrc_loss = surrogate.step_losses[y.step as usize - 1].total;
        metrics.push(SnapshotMetric { step: y.step, mre_p, fdrc_loss });
    }
    let n = surrogate.step_losses.len().max(1) as f64;
    let mean_loss = surrogate.step_losses.iter().map(|l| l.total).sum::<f64>() / n;
    Ok((metrics, mean_loss))
}

/// Runs the oracle and the stepper side by side for each case. A failing
/// case is recorded in its report and does not stop the others.
pub fn compare<T: Real, S: Stepper<T> + ?Sized>(
    stepper: &S,
    spec: &DomainSpec,
    cases: &[EvalCase],
    stride: u64,
    region: MreRegion,
) -> ComparisonReport {
    let cases = cases
        .par_iter()
        .enumerate()
        .map(|(case_id, case)| {
            let mut report = CaseReport {
                case_id,
                source_count: case.sources.len(),
                periods: case.sources.iter().map(|s| s.period).collect(),
                steps: case.steps,
                snapshots: Vec::new(),
                mean_mre_p: f64::NAN,
                mean_fdrc_loss: f64::NAN,
                error: None,
            };
            match compare_case::<T, S>(stepper, spec, case, stride, region) {
                Ok((metrics, mean_loss)) => {
                    let n = metrics.len().max(1) as f64;
                    report.mean_mre_p = metrics.iter().map(|m| m.mre_p).sum::<f64>() / n;
                    report.mean_fdrc_loss = mean_loss;
                    report.snapshots = metrics;
                }
                Err(e) => report.error = Some(e.to_string()),
            }
            report
        })
        .collect();
    ComparisonReport { cases }
}

fn periods_label(periods: &[f64]) -> String {
    periods.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";")
}

impl ComparisonReport {
    /// Per-snapshot rows: `case_id,sources,T,step,mre_p_percent,fdrc_loss`.
    /// Multiple source periods are joined with `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case_id,sources,T,step,mre_p_percent,fdrc_loss\n");
        for c in &self.cases {
            for m in &c.snapshots {
                out.push_str(&format!(
                    "{},{},{},{},{},{:e}\n",
                    c.case_id,
                    c.source_count,
                    periods_label(&c.periods),
                    m.step,
                    m.mre_p,
                    m.fdrc_loss
                ));
            }
        }
        out
    }

    /// One row per case with the averaged metrics and a status column.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("case_id,sources,T,steps,mean_mre_p_percent,mean_fdrc_loss,status\n");
        for c in &self.cases {
            let status = c.error.as_deref().map(|e| format!("error: {}", e.replace(',', ";"))).unwrap_or_else(|| "ok".into());
            out.push_str(&format!(
                "{},{},{},{},{},{:e},{}\n",
                c.case_id,
                c.source_count,
                periods_label(&c.periods),
                c.steps,
                c.mean_mre_p,
                c.mean_fdrc_loss,
                status
            ));
        }
        out
    }

    pub fn failed(&self) -> impl Iterator<Item = &CaseReport> {
        self.cases.iter().filter(|c| c.error.is_some())
    }
}
