//! Finite-difference residual constraint: pointwise residuals of the
//! discrete wave equations evaluated on a predicted step, their
//! mean-square reduction, and the exact gradient of that loss with respect
//! to the predicted fields.
//!
//! The velocity residuals use the previous pressure; the pressure residual
//! uses the predicted velocities, mirroring the update order of the
//! staggered scheme in [`crate::fdm`].

use crate::error::{Error, Result};
use crate::fdm::StaggeredKernels;
use crate::grid::{DomainSpec, FieldGrid, SigmaField, WaveState};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSet<T = f64> {
    pub r_u: FieldGrid<T>,
    pub r_v: FieldGrid<T>,
    pub r_p: FieldGrid<T>,
    /// Loss weight per cell: 1 where the residual counts, 0 on source cells.
    pub mask: FieldGrid<T>,
}

/// Mean-square residual of each equation and their unweighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l_u: f64,
    pub l_v: f64,
    pub l_p: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn new(l_u: f64, l_v: f64, l_p: f64) -> Self {
        LossTerms { l_u, l_v, l_p, total: l_u + l_v + l_p }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }

    /// Componentwise arithmetic mean.
    pub fn mean(terms: &[LossTerms]) -> LossTerms {
        let n = terms.len().max(1) as f64;
        let sum = |f: fn(&LossTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;
        LossTerms::new(sum(|t| t.l_u), sum(|t| t.l_v), sum(|t| t.l_p))
    }
}

/// Gradient of the total loss with respect to the predicted `(û, v̂, p̂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredGradient<T = f64> {
    pub g_u: FieldGrid<T>,
    pub g_v: FieldGrid<T>,
    pub g_p: FieldGrid<T>,
}

fn check_pair<T: Real>(
    prev: &WaveState<T>,
    pred: &WaveState<T>,
    sigma: &SigmaField<T>,
    spec: &DomainSpec,
    mask: &FieldGrid<T>,
) -> Result<()> {
    if pred.step != prev.step + 1 {
        return Err(Error::StepMismatch { pred: pred.step, expected: prev.step + 1 });
    }
    prev.check_shape(spec.nx, spec.ny)?;
    pred.check_shape(spec.nx, spec.ny)?;
    for (name, f) in [("sigma", &sigma.sigma), ("mask", mask)] {
        if f.shape() != (spec.nx, spec.ny) {
            return Err(Error::Shape(format!("{name} is {:?}, domain is {}x{}", f.shape(), spec.nx, spec.ny)));
        }
    }
    Ok(())
}

pub fn residuals<T: Real>(
    prev: &WaveState<T>,
    pred: &WaveState<T>,
    sigma: &SigmaField<T>,
    spec: &DomainSpec,
    mask: &FieldGrid<T>,
) -> Result<ResidualSet<T>> {
    check_pair(prev, pred, sigma, spec, mask)?;
    let k = StaggeredKernels::new(spec);
    let inv_dt = T::lit(1.0 / spec.dt);
    let inv_rho = T::lit(1.0 / spec.rho0);
    let bulk = T::lit(spec.rho0 * spec.c * spec.c);

    let dpx = k.dx_back.apply(&prev.p);
    let dpy = k.dy_back.apply(&prev.p);
    let dux = k.dx_fwd.apply(&pred.u);
    let dvy = k.dy_fwd.apply(&pred.v);

    let n = spec.cells();
    let (mut r_u, mut r_v, mut r_p) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for idx in 0..n {
        let s = sigma.as_slice()[idx];
        let m = mask.as_slice()[idx];
        let (u0, u1) = (prev.u.as_slice()[idx], pred.u.as_slice()[idx]);
        let (v0, v1) = (prev.v.as_slice()[idx], pred.v.as_slice()[idx]);
        let (p0, p1) = (prev.p.as_slice()[idx], pred.p.as_slice()[idx]);
        // Masked cells hold an exact zero rather than a weighted value.
        let keep = |r: T| if m == T::zero() { T::zero() } else { r };
        r_u.push(keep((u1 - u0) * inv_dt + s * u1 + dpx.as_slice()[idx] * inv_rho));
        r_v.push(keep((v1 - v0) * inv_dt + s * v1 + dpy.as_slice()[idx] * inv_rho));
        r_p.push(keep((p1 - p0) * inv_dt + s * p1 + bulk * (dux.as_slice()[idx] + dvy.as_slice()[idx])));
    }
    Ok(ResidualSet {
        r_u: FieldGrid::from_vec(spec.nx, spec.ny, r_u)?,
        r_v: FieldGrid::from_vec(spec.nx, spec.ny, r_v)?,
        r_p: FieldGrid::from_vec(spec.nx, spec.ny, r_p)?,
        mask: mask.clone(),
    })
}

/// Mask-weighted mean of squared residuals per equation, summed.
/// Accumulates in double precision regardless of `T`.
pub fn fdrc_loss<T: Real>(res: &ResidualSet<T>) -> Result<LossTerms> {
    let weight: f64 = res.mask.as_slice().iter().map(|m| m.as_f64()).sum();
    if weight <= 0.0 {
        return Err(Error::EmptyMask);
    }
    let mean_sq = |r: &FieldGrid<T>| -> f64 {
        r.as_slice()
            .iter()
            .zip(res.mask.as_slice())
            .map(|(&r, &m)| {
                let r = r.as_f64();
                m.as_f64() * r * r
            })
            .sum::<f64>()
            / weight
    };
    Ok(LossTerms::new(mean_sq(&res.r_u), mean_sq(&res.r_v), mean_sq(&res.r_p)))
}

/// Loss and its gradient with respect to the predicted fields in one pass.
pub fn loss_and_grad<T: Real>(
    prev: &WaveState<T>,
    pred: &WaveState<T>,
    sigma: &SigmaField<T>,
    spec: &DomainSpec,
    mask: &FieldGrid<T>,
) -> Result<(LossTerms, PredGradient<T>)> {
    let res = residuals(prev, pred, sigma, spec, mask)?;
    let loss = fdrc_loss(&res)?;
    let weight: f64 = mask.as_slice().iter().map(|m| m.as_f64()).sum();

    // dL/dr = 2·m·r / Σm for each term.
    let scale = T::lit(2.0 / weight);
    let adj = |r: &FieldGrid<T>| r.zip_map(mask, |r, m| scale * m * r);
    let (a_u, a_v, a_p) = (adj(&res.r_u), adj(&res.r_v), adj(&res.r_p));

    let k = StaggeredKernels::new(spec);
    let inv_dt = T::lit(1.0 / spec.dt);
    let bulk = T::lit(spec.rho0 * spec.c * spec.c);
    let diag = sigma.map(|s| inv_dt + s);

    let g_p = a_p.zip_map(&diag, |a, d| a * d);
    let back_x = k.dx_fwd.apply_transpose(&a_p);
    let back_y = k.dy_fwd.apply_transpose(&a_p);
    let g_u = FieldGrid::from_fn(spec.nx, spec.ny, |i, j| diag[(i, j)] * a_u[(i, j)] + bulk * back_x[(i, j)]);
    let g_v = FieldGrid::from_fn(spec.nx, spec.ny, |i, j| diag[(i, j)] * a_v[(i, j)] + bulk * back_y[(i, j)]);
    Ok((loss, PredGradient { g_u, g_v, g_p }))
}

pub fn loss_grad_wrt_pred<T: Real>(
    prev: &WaveState<T>,
    pred: &WaveState<T>,
    sigma: &SigmaField<T>,
    spec: &DomainSpec,
    mask: &FieldGrid<T>,
) -> Result<PredGradient<T>> {
    loss_and_grad(prev, pred, sigma, spec, mask).map(|(_, g)| g)
}
