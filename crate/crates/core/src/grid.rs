//! Domain geometry, staggered field storage, the PML damping profile and
//! hard oscillating sources.
//!
//! Index convention: `(i, j)` with `i` along x and `j` along y. Storage is
//! row-major with `i` as the row, so element `(i, j)` sits at `i * ny + j`.
//!
//! Staggering: `p(i, j)` lives at the centre of cell `(i, j)`, `u(i, j)` on
//! its left x-face (between `p(i-1, j)` and `p(i, j)`), and `v(i, j)` on its
//! bottom y-face (between `p(i, j-1)` and `p(i, j)`). Reads outside the
//! lattice return zero.

use std::f64::consts::PI;
use std::ops::{Deref, Index, IndexMut, Range};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Geometry, discretization, medium and absorbing-layer parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    /// Wave speed.
    pub c: f64,
    /// Medium density.
    pub rho0: f64,
    /// Absorbing layer thickness in cells, on every side.
    pub pml_thickness: usize,
    /// Target reflection coefficient of the absorbing layer.
    pub pml_r: f64,
}

impl DomainSpec {
    /// 200×200 cells of size 2, unit time step, unit speed and density,
    /// a 30-cell absorbing layer with R = 0.001.
    pub fn reference() -> Self {
        DomainSpec {
            nx: 200,
            ny: 200,
            dx: 2.0,
            dy: 2.0,
            dt: 1.0,
            c: 1.0,
            rho0: 1.0,
            pml_thickness: 30,
            pml_r: 0.001,
        }
    }

    /// Square domain with the reference discretization and medium.
    pub fn square(n: usize, pml_thickness: usize) -> Self {
        DomainSpec { nx: n, ny: n, pml_thickness, ..Self::reference() }
    }

    pub fn validate(&self) -> Result<()> {
        let min_cells = 2 * self.pml_thickness + 4;
        if self.nx < min_cells || self.ny < min_cells {
            return Err(Error::InvalidDomain(format!(
                "{}x{} cells leave no interior with a {}-cell absorbing layer (need at least {min_cells} per axis)",
                self.nx, self.ny, self.pml_thickness
            )));
        }
        for (name, value) in [
            ("dx", self.dx),
            ("dy", self.dy),
            ("dt", self.dt),
            ("c", self.c),
            ("rho0", self.rho0),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidDomain(format!("{name} must be positive and finite, got {value}")));
            }
        }
        if !(self.pml_r > 0.0 && self.pml_r < 1.0) {
            return Err(Error::InvalidDomain(format!("pml_r must lie in (0, 1), got {}", self.pml_r)));
        }
        Ok(())
    }

    /// `c·dt·sqrt(1/dx² + 1/dy²)`.
    pub fn cfl_number(&self) -> f64 {
        self.c * self.dt * (1.0 / (self.dx * self.dx) + 1.0 / (self.dy * self.dy)).sqrt()
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn interior_x(&self) -> Range<usize> {
        self.pml_thickness..self.nx - self.pml_thickness
    }

    pub fn interior_y(&self) -> Range<usize> {
        self.pml_thickness..self.ny - self.pml_thickness
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        self.interior_x().contains(&i) && self.interior_y().contains(&j)
    }
}

/// One scalar quantity sampled on an `nx × ny` lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid<T = f64> {
    nx: usize,
    ny: usize,
    data: Vec<T>,
}

impl<T: Real> FieldGrid<T> {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::filled(nx, ny, T::zero())
    }

    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        FieldGrid { nx, ny, data: vec![value; nx * ny] }
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                data.push(f(i, j));
            }
        }
        FieldGrid { nx, ny, data }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::Shape(format!("{} values for a {nx}x{ny} grid", data.len())));
        }
        Ok(FieldGrid { nx, ny, data })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Zero-extended read: indices outside the lattice yield 0.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> T {
        if i < 0 || j < 0 || i as usize >= self.nx || j as usize >= self.ny {
            T::zero()
        } else {
            self.data[i as usize * self.ny + j as usize]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        FieldGrid { nx: self.nx, ny: self.ny, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip_map over grids of different shape");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        FieldGrid { nx: self.nx, ny: self.ny, data }
    }

    pub fn cast<U: Real>(&self) -> FieldGrid<U> {
        FieldGrid { nx: self.nx, ny: self.ny, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

impl<T> Index<(usize, usize)> for FieldGrid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        assert!(i < self.nx && j < self.ny, "({i}, {j}) outside {}x{} grid", self.nx, self.ny);
        &self.data[i * self.ny + j]
    }
}

impl<T> IndexMut<(usize, usize)> for FieldGrid<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        assert!(i < self.nx && j < self.ny, "({i}, {j}) outside {}x{} grid", self.nx, self.ny);
        &mut self.data[i * self.ny + j]
    }
}

/// Staggered fields `(u, v, p)` at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveState<T = f64> {
    pub u: FieldGrid<T>,
    pub v: FieldGrid<T>,
    pub p: FieldGrid<T>,
    pub step: u64,
}

impl<T: Real> WaveState<T> {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        WaveState { u: FieldGrid::zeros(nx, ny), v: FieldGrid::zeros(nx, ny), p: FieldGrid::zeros(nx, ny), step: 0 }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.p.shape()
    }

    pub fn time(&self, dt: f64) -> f64 {
        self.step as f64 * dt
    }

    pub fn check_shape(&self, nx: usize, ny: usize) -> Result<()> {
        for (name, f) in [("u", &self.u), ("v", &self.v), ("p", &self.p)] {
            if f.shape() != (nx, ny) {
                let (fx, fy) = f.shape();
                return Err(Error::Shape(format!("{name} is {fx}x{fy}, domain is {nx}x{ny}")));
            }
        }
        Ok(())
    }

    /// Name of the first field holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [("u", &self.u), ("v", &self.v), ("p", &self.p)]
            .into_iter()
            .find(|(_, f)| !f.is_finite())
            .map(|(name, _)| name)
    }

    pub fn cast<U: Real>(&self) -> WaveState<U> {
        WaveState { u: self.u.cast(), v: self.v.cast(), p: self.p.cast(), step: self.step }
    }
}

/// Absorption coefficients of the perfectly matched layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaField<T = f64> {
    pub sigma: FieldGrid<T>,
}

impl<T> Deref for SigmaField<T> {
    type Target = FieldGrid<T>;

    fn deref(&self) -> &FieldGrid<T> {
        &self.sigma
    }
}

/// Depth in cells of index `k` into the absorbing band of an axis with `n`
/// cells and a `thickness`-cell layer. The outermost cell has depth
/// `thickness`, the first interior cell depth 0.
fn band_depth(k: usize, n: usize, thickness: usize) -> usize {
    if k < thickness {
        thickness - k
    } else if k + thickness >= n {
        k + thickness + 1 - n
    } else {
        0
    }
}

/// Single-band profile `ln(1/R)·(3c/(2δ))·(l/δ)²` for penetration depth `l`.
pub fn sigma_profile(depth: f64, delta: f64, c: f64, r: f64) -> f64 {
    (1.0 / r).ln() * (3.0 * c / (2.0 * delta)) * (depth / delta).powi(2)
}

/// Builds the damping field. Corner cells receive the sum of both axis
/// contributions; the y band uses `δ = pml_thickness·dy`.
pub fn build_sigma<T: Real>(spec: &DomainSpec) -> SigmaField<T> {
    let n = spec.pml_thickness;
    let axis = |k: usize, len: usize, h: f64| -> f64 {
        let depth = band_depth(k, len, n);
        if depth == 0 {
            0.0
        } else {
            let delta = n as f64 * h;
            sigma_profile(depth as f64 * h, delta, spec.c, spec.pml_r)
        }
    };
    let sx: Vec<f64> = (0..spec.nx).map(|i| axis(i, spec.nx, spec.dx)).collect();
    let sy: Vec<f64> = (0..spec.ny).map(|j| axis(j, spec.ny, spec.dy)).collect();
    SigmaField { sigma: FieldGrid::from_fn(spec.nx, spec.ny, |i, j| T::lit(sx[i] + sy[j])) }
}

/// 1 on interior cells, 0 inside the absorbing layer.
pub fn interior_mask<T: Real>(spec: &DomainSpec) -> FieldGrid<T> {
    FieldGrid::from_fn(spec.nx, spec.ny, |i, j| if spec.is_interior(i, j) { T::one() } else { T::zero() })
}

/// A rectangular hard source driven by `sin(2π·t/T + bias)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub i0: usize,
    pub j0: usize,
    pub w: usize,
    pub h: usize,
    /// Oscillation period `T`.
    pub period: f64,
    /// Phase offset in radians.
    pub bias: f64,
}

impl SourceSpec {
    /// A `size × size` source centred on the domain.
    pub fn centered(spec: &DomainSpec, size: usize, period: f64, bias: f64) -> Self {
        SourceSpec { i0: (spec.nx - size) / 2, j0: (spec.ny - size) / 2, w: size, h: size, period, bias }
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.i0..self.i0 + self.w).flat_map(move |i| (self.j0..self.j0 + self.h).map(move |j| (i, j)))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..self.i0 + self.w).contains(&i) && (self.j0..self.j0 + self.h).contains(&j)
    }

    pub fn overlaps(&self, other: &SourceSpec) -> bool {
        self.i0 < other.i0 + other.w
            && other.i0 < self.i0 + self.w
            && self.j0 < other.j0 + other.h
            && other.j0 < self.j0 + self.h
    }

    pub fn validate(&self, index: usize, spec: &DomainSpec) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidSource { index, reason });
        if self.w == 0 || self.h == 0 {
            return fail(format!("empty rectangle {}x{}", self.w, self.h));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return fail(format!("period must be positive, got {}", self.period));
        }
        if !self.bias.is_finite() {
            return fail("bias must be finite".into());
        }
        let (xs, ys) = (spec.interior_x(), spec.interior_y());
        if self.i0 < xs.start || self.i0 + self.w > xs.end || self.j0 < ys.start || self.j0 + self.h > ys.end {
            return fail(format!(
                "rectangle [{}, {}) x [{}, {}) leaves the interior [{}, {}) x [{}, {})",
                self.i0,
                self.i0 + self.w,
                self.j0,
                self.j0 + self.h,
                xs.start,
                xs.end,
                ys.start,
                ys.end
            ));
        }
        Ok(())
    }
}

pub fn source_value(src: &SourceSpec, time: f64) -> f64 {
    (2.0 * PI * time / src.period + src.bias).sin()
}

/// Checks every source against the domain and rejects overlapping pairs.
pub fn validate_sources(sources: &[SourceSpec], spec: &DomainSpec) -> Result<()> {
    for (k, s) in sources.iter().enumerate() {
        s.validate(k, spec)?;
        if let Some(first) = sources[..k].iter().position(|o| o.overlaps(s)) {
            return Err(Error::OverlappingSources { first, second: k });
        }
    }
    Ok(())
}

/// Overwrites `p` over every source rectangle with the source value at the
/// state's own time. `u` and `v` are left untouched.
pub fn inject_sources<T: Real>(state: &mut WaveState<T>, sources: &[SourceSpec], spec: &DomainSpec) -> Result<()> {
    validate_sources(sources, spec)?;
    state.check_shape(spec.nx, spec.ny)?;
    let time = state.time(spec.dt);
    for src in sources {
        let value = T::lit(source_value(src, time));
        for (i, j) in src.cells() {
            state.p[(i, j)] = value;
        }
    }
    Ok(())
}

/// 1 where the finite-difference residual is enforced, 0 on source cells.
pub fn loss_mask<T: Real>(spec: &DomainSpec, sources: &[SourceSpec]) -> FieldGrid<T> {
    FieldGrid::from_fn(spec.nx, spec.ny, |i, j| {
        if sources.iter().any(|s| s.contains(i, j)) {
            T::zero()
        } else {
            T::one()
        }
    })
}

/// How random source configurations are drawn for fresh domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceLayout {
    /// Rectangle width and height in cells.
    pub size: usize,
    /// Minimum distance in cells between a source and the absorbing layer.
    pub margin: usize,
    pub min_count: usize,
    pub max_count: usize,
    pub period_min: f64,
    pub period_max: f64,
}

impl Default for SourceLayout {
    fn default() -> Self {
        SourceLayout { size: 5, margin: 10, min_count: 1, max_count: 4, period_min: 20.0, period_max: 100.0 }
    }
}

impl SourceLayout {
    pub fn validate(&self, spec: &DomainSpec) -> Result<()> {
        if self.size == 0 || self.min_count == 0 || self.min_count > self.max_count {
            return Err(Error::SourceLayout(format!(
                "need size >= 1 and 1 <= min_count <= max_count, got size {} count {}..={}",
                self.size, self.min_count, self.max_count
            )));
        }
        if !(self.period_min > 0.0 && self.period_min <= self.period_max && self.period_max.is_finite()) {
            return Err(Error::SourceLayout(format!(
                "bad period range [{}, {}]",
                self.period_min, self.period_max
            )));
        }
        let span = |len: usize| len.saturating_sub(2 * self.margin);
        let (wx, wy) = (span(spec.interior_x().len()), span(spec.interior_y().len()));
        if wx < self.size || wy < self.size {
            return Err(Error::SourceLayout(format!(
                "{}-cell sources with a {}-cell margin do not fit a {}x{} interior",
                self.size,
                self.margin,
                spec.interior_x().len(),
                spec.interior_y().len()
            )));
        }
        Ok(())
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Fresh zero-field domain at step 0 with a random, non-overlapping source set
/// drawn with the default [`SourceLayout`].
pub fn new_domain<T: Real, R: Rng + ?Sized>(spec: &DomainSpec, rng: &mut R) -> Result<(WaveState<T>, Vec<SourceSpec>)> {
    new_domain_with(spec, &SourceLayout::default(), rng)
}

pub fn new_domain_with<T: Real, R: Rng + ?Sized>(
    spec: &DomainSpec,
    layout: &SourceLayout,
    rng: &mut R,
) -> Result<(WaveState<T>, Vec<SourceSpec>)> {
    spec.validate()?;
    layout.validate(spec)?;
    let count = rng.random_range(layout.min_count..=layout.max_count);
    let (xs, ys) = (spec.interior_x(), spec.interior_y());
    let i_range = xs.start + layout.margin..=xs.end - layout.margin - layout.size;
    let j_range = ys.start + layout.margin..=ys.end - layout.margin - layout.size;

    let mut sources: Vec<SourceSpec> = Vec::with_capacity(count);
    let mut attempts = 0;
    while sources.len() < count {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::SourceLayout(format!(
                "could not place {count} disjoint sources after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )));
        }
        let candidate = SourceSpec {
            i0: rng.random_range(i_range.clone()),
            j0: rng.random_range(j_range.clone()),
            w: layout.size,
            h: layout.size,
            period: rng.random_range(layout.period_min..=layout.period_max),
            bias: rng.random_range(0.0..2.0 * PI),
        };
        if sources.iter().all(|s| !s.overlaps(&candidate)) {
            sources.push(candidate);
        }
    }
    Ok((WaveState::zeros(spec.nx, spec.ny), sources))
}
