//! Reference staggered-grid finite-difference stepper.
//!
//! One step solves the discrete momentum and continuity equations for the
//! new fields with semi-implicit damping:
//!
//! ```text
//! u' = [u - dt·Dx⁻p / ρ₀] / (1 + σ·dt)
//! v' = [v - dt·Dy⁻p / ρ₀] / (1 + σ·dt)
//! p' = [p - dt·ρ₀c²·(Dx⁺u' + Dy⁺v')] / (1 + σ·dt)
//! ```
//!
//! where `D⁻` is the backward difference onto faces and `D⁺` the forward
//! difference back onto centres. This is the exact zero of the residuals in
//! [`crate::fdrc`], which reuses the same kernels.

use crate::error::{Error, Result};
use crate::grid::{inject_sources, validate_sources, DomainSpec, FieldGrid, SigmaField, SourceSpec, WaveState};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// A one-dimensional stencil applied along one grid axis with zero reads
/// outside the lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceKernel {
    pub axis: Axis,
    /// `(offset, coefficient)` pairs.
    pub taps: Vec<(isize, f64)>,
}

impl DifferenceKernel {
    /// `(f(k) - f(k-1)) / h`: centre values onto the face at the cell's low side.
    pub fn backward(axis: Axis, h: f64) -> Self {
        DifferenceKernel { axis, taps: vec![(-1, -1.0 / h), (0, 1.0 / h)] }
    }

    /// `(f(k+1) - f(k)) / h`: face values back onto the cell centre.
    pub fn forward(axis: Axis, h: f64) -> Self {
        DifferenceKernel { axis, taps: vec![(0, -1.0 / h), (1, 1.0 / h)] }
    }

    pub fn coefficient_sum(&self) -> f64 {
        self.taps.iter().map(|&(_, c)| c).sum()
    }

    pub fn apply<T: Real>(&self, field: &FieldGrid<T>) -> FieldGrid<T> {
        self.apply_shifted(field, 1)
    }

    /// Adjoint of [`apply`](Self::apply) under the Euclidean inner product on
    /// the truncated lattice.
    pub fn apply_transpose<T: Real>(&self, field: &FieldGrid<T>) -> FieldGrid<T> {
        self.apply_shifted(field, -1)
    }

    fn apply_shifted<T: Real>(&self, field: &FieldGrid<T>, sign: isize) -> FieldGrid<T> {
        let taps: Vec<(isize, T)> = self.taps.iter().map(|&(o, c)| (sign * o, T::lit(c))).collect();
        let (nx, ny) = field.shape();
        FieldGrid::from_fn(nx, ny, |i, j| {
            let (i, j) = (i as isize, j as isize);
            taps.iter().fold(T::zero(), |acc, &(o, c)| {
                let value = match self.axis {
                    Axis::X => field.at(i + o, j),
                    Axis::Y => field.at(i, j + o),
                };
                acc + c * value
            })
        })
    }
}

/// The four kernels used by the staggered scheme for a given spacing.
#[derive(Clone, Debug)]
pub struct StaggeredKernels {
    pub dx_back: DifferenceKernel,
    pub dy_back: DifferenceKernel,
    pub dx_fwd: DifferenceKernel,
    pub dy_fwd: DifferenceKernel,
}

impl StaggeredKernels {
    pub fn new(spec: &DomainSpec) -> Self {
        StaggeredKernels {
            dx_back: DifferenceKernel::backward(Axis::X, spec.dx),
            dy_back: DifferenceKernel::backward(Axis::Y, spec.dy),
            dx_fwd: DifferenceKernel::forward(Axis::X, spec.dx),
            dy_fwd: DifferenceKernel::forward(Axis::Y, spec.dy),
        }
    }
}

pub fn check_cfl(spec: &DomainSpec) -> bool {
    spec.cfl_number() <= 1.0
}

pub fn require_cfl(spec: &DomainSpec) -> Result<()> {
    if check_cfl(spec) {
        Ok(())
    } else {
        Err(Error::Cfl { cfl: spec.cfl_number() })
    }
}

fn check_inputs<T: Real>(state: &WaveState<T>, sigma: &SigmaField<T>, spec: &DomainSpec) -> Result<()> {
    state.check_shape(spec.nx, spec.ny)?;
    if sigma.shape() != (spec.nx, spec.ny) {
        return Err(Error::Shape(format!("sigma is {:?}, domain is {}x{}", sigma.shape(), spec.nx, spec.ny)));
    }
    if let Some(name) = state.first_non_finite() {
        return Err(Error::NonFinite { what: format!("input field {name}"), step: state.step });
    }
    Ok(())
}

/// One time step without source injection.
pub fn advance<T: Real>(state: &WaveState<T>, sigma: &SigmaField<T>, spec: &DomainSpec) -> Result<WaveState<T>> {
    check_inputs(state, sigma, spec)?;
    let k = StaggeredKernels::new(spec);
    let dt = T::lit(spec.dt);
    let inv_rho = T::lit(1.0 / spec.rho0);
    let bulk = T::lit(spec.rho0 * spec.c * spec.c);
    let damp = |s: T| T::one() + s * dt;

    let dpx = k.dx_back.apply(&state.p);
    let dpy = k.dy_back.apply(&state.p);
    let mut u = FieldGrid::zeros(spec.nx, spec.ny);
    let mut v = FieldGrid::zeros(spec.nx, spec.ny);
    for idx in 0..spec.cells() {
        let d = damp(sigma.as_slice()[idx]);
        u.as_mut_slice()[idx] = (state.u.as_slice()[idx] - dt * dpx.as_slice()[idx] * inv_rho) / d;
        v.as_mut_slice()[idx] = (state.v.as_slice()[idx] - dt * dpy.as_slice()[idx] * inv_rho) / d;
    }

    let dux = k.dx_fwd.apply(&u);
    let dvy = k.dy_fwd.apply(&v);
    let mut p = FieldGrid::zeros(spec.nx, spec.ny);
    for idx in 0..spec.cells() {
        let d = damp(sigma.as_slice()[idx]);
        let div = dux.as_slice()[idx] + dvy.as_slice()[idx];
        p.as_mut_slice()[idx] = (state.p.as_slice()[idx] - dt * bulk * div) / d;
    }
    Ok(WaveState { u, v, p, step: state.step + 1 })
}

/// One oracle step: [`advance`] followed by source injection at the new time.
pub fn fdm_step<T: Real>(
    state: &WaveState<T>,
    sigma: &SigmaField<T>,
    spec: &DomainSpec,
    sources: &[SourceSpec],
) -> Result<WaveState<T>> {
    let mut next = advance(state, sigma, spec)?;
    inject_sources(&mut next, sources, spec)?;
    Ok(next)
}

/// Retained states of a time-marching run, in increasing step order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T = f64> {
    pub snapshots: Vec<WaveState<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> &WaveState<T> {
        self.snapshots.last().expect("a trajectory always holds its initial state")
    }

    pub fn steps(&self) -> Vec<u64> {
        self.snapshots.iter().map(|s| s.step).collect()
    }
}

/// Whether a state reached at `step` of a `steps`-long run is retained.
pub(crate) fn keeps_snapshot(step: u64, steps: u64, stride: u64) -> bool {
    step % stride == 0 || step == steps
}

/// Marches the oracle `steps` times from the zero state, keeping step 0,
/// every `stride`-th step and the final step.
pub fn simulate<T: Real>(spec: &DomainSpec, sources: &[SourceSpec], steps: u64, stride: u64) -> Result<Trajectory<T>> {
    simulate_from(WaveState::zeros(spec.nx, spec.ny), spec, sources, steps, stride)
}

/// As [`simulate`] but from an arbitrary initial state.
pub fn simulate_from<T: Real>(
    initial: WaveState<T>,
    spec: &DomainSpec,
    sources: &[SourceSpec],
    steps: u64,
    stride: u64,
) -> Result<Trajectory<T>> {
    spec.validate()?;
    require_cfl(spec)?;
    validate_sources(sources, spec)?;
    if stride == 0 {
        return Err(Error::Config("snapshot stride must be at least 1".into()));
    }
    let sigma = crate::grid::build_sigma::<T>(spec);
    let start = initial.step;
    let mut state = initial;
    let mut snapshots = vec![state.clone()];
    for n in 1..=steps {
        state = fdm_step(&state, &sigma, spec, sources)?;
        if let Some(name) = state.first_non_finite() {
            return Err(Error::NonFinite { what: format!("oracle field {name}"), step: state.step });
        }
        if keeps_snapshot(n, steps, stride) {
            debug_assert_eq!(state.step, start + n);
            snapshots.push(state.clone());
        }
    }
    Ok(Trajectory { snapshots })
}
