//! Acceptance checks, one line of output per criterion. Runs as a plain
//! binary (no libtest harness) so the verdicts are always printed. Failed
//! criteria only change the exit status when `FDRC_ACCEPTANCE_STRICT` is set.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fdrc_core::eval::{self, mre, MreRegion, Oracle, Stepper};
use fdrc_core::fdm::{self, advance, fdm_step};
use fdrc_core::fdrc::{fdrc_loss, loss_grad_wrt_pred, residuals};
use fdrc_core::grid::{build_sigma, loss_mask, new_domain_with, source_value};
use fdrc_core::io::{self, Checkpoint, Snapshot};
use fdrc_core::nn::{init_params_with, predict_step, ModelParams};
use fdrc_core::optim::AdamState;
use fdrc_core::trainer::{entry_loss_and_grad, TrainConfig, Trainer};
use fdrc_core::{DomainSpec, Error, FieldGrid, Precision, Real, SigmaField, SourceLayout, SourceSpec, WaveState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_field(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> FieldGrid<f64> {
    FieldGrid::from_fn(n, n, |_, _| rng.random_range(-scale..scale))
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> WaveState<f64> {
    WaveState {
        u: random_field(rng, n, 1.0),
        v: random_field(rng, n, 1.0),
        p: random_field(rng, n, 1.0),
        step: rng.random_range(0..1000),
    }
}

fn max_abs_diff(a: &FieldGrid<f64>, b: &FieldGrid<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn state_diff(a: &WaveState<f64>, b: &WaveState<f64>) -> f64 {
    max_abs_diff(&a.u, &b.u).max(max_abs_diff(&a.v, &b.v)).max(max_abs_diff(&a.p, &b.p))
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// 1. The oracle's own update has zero residual.
fn oracle_loss_consistency() -> Verdict {
    let start = Instant::now();
    let spec = DomainSpec::square(32, 4);
    let layout = SourceLayout { size: 3, margin: 2, ..SourceLayout::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_res, mut worst_loss) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let sigma = SigmaField { sigma: FieldGrid::from_fn(32, 32, |_, _| rng.random_range(0.0..0.5)) };
        let state = random_state(&mut rng, 32);
        let (_, sources) = new_domain_with::<f64, _>(&spec, &layout, &mut rng).unwrap();
        let next = fdm_step(&state, &sigma, &spec, &sources).unwrap();
        let res = residuals(&state, &next, &sigma, &spec, &loss_mask(&spec, &sources)).unwrap();
        for r in [&res.r_u, &res.r_v, &res.r_p] {
            worst_res = worst_res.max(r.max_abs());
        }
        worst_loss = worst_loss.max(fdrc_loss(&res).unwrap().total);
    }
    let elapsed = start.elapsed();
    verdict(
        worst_res <= 1e-12 && worst_loss <= 1e-20 && elapsed < Duration::from_secs(5),
        format!("max residual {worst_res:.2e}, max loss {worst_loss:.2e} over 100 states, {}", secs(elapsed)),
    )
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// 2. Loss adjoint and network backpropagation against finite differences.
fn adjoint_and_backprop() -> Verdict {
    let start = Instant::now();
    let spec = DomainSpec::square(16, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let sigma = build_sigma::<f64>(&spec);
    let src = SourceSpec { i0: 7, j0: 6, w: 2, h: 3, period: 30.0, bias: 0.4 };
    let sources = [src];
    let mask = loss_mask::<f64>(&spec, &sources);

    // Loss with respect to the predicted fields: it is quadratic, so wide
    // central differences are exact up to rounding.
    let prev = random_state(&mut rng, 16);
    let mut pred = random_state(&mut rng, 16);
    pred.step = prev.step + 1;
    let g = loss_grad_wrt_pred(&prev, &pred, &sigma, &spec, &mask).unwrap();
    let loss_at = |s: &WaveState<f64>| fdrc_loss(&residuals(&prev, s, &sigma, &spec, &mask).unwrap()).unwrap().total;
    let gmax = [&g.g_u, &g.g_v, &g.g_p].iter().map(|f| f.max_abs()).fold(0.0, f64::max);
    let mut worst_field = 0.0f64;
    for which in 0..3 {
        for idx in 0..256 {
            let bump = |h: f64| {
                let mut s = pred.clone();
                [&mut s.u, &mut s.v, &mut s.p][which].as_mut_slice()[idx] += h;
                loss_at(&s)
            };
            let fd = (bump(1e-2) - bump(-1e-2)) / 2e-2;
            let an = [&g.g_u, &g.g_v, &g.g_p][which].as_slice()[idx];
            worst_field = worst_field.max(rel_err(fd, an, 1e-6 * gmax));
        }
    }
    for _ in 0..20 {
        let d = random_state(&mut rng, 16);
        let along = |h: f64| {
            let s = WaveState { u: pred.u.zip_map(&d.u, |a, b| a + h * b), v: pred.v.zip_map(&d.v, |a, b| a + h * b), p: pred.p.zip_map(&d.p, |a, b| a + h * b), step: pred.step };
            loss_at(&s)
        };
        let fd = (along(1e-2) - along(-1e-2)) / 2e-2;
        let an: f64 = [(&g.g_u, &d.u), (&g.g_v, &d.v), (&g.g_p, &d.p)]
            .iter()
            .map(|(gf, df)| gf.as_slice().iter().zip(df.as_slice()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        worst_field = worst_field.max(rel_err(fd, an, 0.0));
    }

    // Parameters: the full pipeline of prediction, injection and loss.
    let params = init_params_with::<f64, _>(32, &mut rng);
    let state = WaveState { step: 37, ..random_state(&mut rng, 16) };
    let (_, _, grads) = entry_loss_and_grad(&params, &state, &sigma, &spec, &sources).unwrap();
    let loss_of = |p: &ModelParams<f64>| {
        let next = predict_step(p, &state, &sigma, &spec, &sources).unwrap();
        fdrc_loss(&residuals(&state, &next, &sigma, &spec, &mask).unwrap()).unwrap().total
    };
    let h = 1e-6;
    let mut worst_param = 0.0f64;
    let mut checked = 0usize;
    for (l, layer) in grads.layers.iter().enumerate() {
        let gscale = layer.weights.iter().chain(&layer.biases).fold(0.0f64, |m, g| m.max(g.abs()));
        // Every parameter of the outer layers and all biases; a random sample
        // of the 9216 middle-layer weights.
        let weights: Vec<usize> = if l == 1 {
            (0..400).map(|_| rng.random_range(0..layer.weights.len())).collect()
        } else {
            (0..layer.weights.len()).collect()
        };
        let mut check = |bias: bool, k: usize| {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                let t = if bias { &mut p.layers[l].biases } else { &mut p.layers[l].weights };
                t[k] += delta;
                loss_of(&p)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let an = if bias { layer.biases[k] } else { layer.weights[k] };
            worst_param = worst_param.max(rel_err(fd, an, 1e-3 * gscale));
            checked += 1;
        };
        for k in weights {
            check(false, k);
        }
        for k in 0..layer.biases.len() {
            check(true, k);
        }
    }
    let mut worst_dir = 0.0f64;
    for _ in 0..5 {
        let mut dir = params.zeros_like();
        for t in dir.tensors_mut() {
            for x in t.iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        let along = |s: f64| {
            let mut p = params.clone();
            p.add_scaled(&dir, s);
            loss_of(&p)
        };
        let fd = (along(h) - along(-h)) / (2.0 * h);
        let an: f64 = grads.tensors().zip(dir.tensors()).map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>()).sum();
        worst_dir = worst_dir.max(rel_err(fd, an, 0.0));
    }
    let elapsed = start.elapsed();
    let worst = worst_field.max(worst_param).max(worst_dir);
    verdict(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "field grad rel err {worst_field:.1e}, {checked} parameters rel err {worst_param:.1e}, directional {worst_dir:.1e}, {}",
            secs(elapsed)
        ),
    )
}

fn gaussian_pulse(n: usize, centre: f64, width: f64) -> WaveState<f64> {
    let mut s = WaveState::zeros(n, n);
    s.p = FieldGrid::from_fn(n, n, |i, j| {
        let r2 = (i as f64 - centre).powi(2) + (j as f64 - centre).powi(2);
        (-r2 / (2.0 * width * width)).exp()
    });
    s
}

/// 3. The absorbing layer swallows an outgoing pulse.
fn pml_absorption() -> Verdict {
    let start = Instant::now();
    let spec = DomainSpec { pml_r: 0.001, ..DomainSpec::square(100, 20) };
    // Reference: the same interior embedded in a domain large enough that
    // nothing returns from its boundary within the window.
    let pad = 80;
    let big = DomainSpec { nx: 100 + 2 * pad, ny: 100 + 2 * pad, ..spec.clone() };
    let steps = 260u64;
    let width = 2.5;
    let small = fdm::simulate_from(gaussian_pulse(100, 49.5, width), &spec, &[], steps, 1).unwrap();
    let large = fdm::simulate_from(gaussian_pulse(100 + 2 * pad, 49.5 + pad as f64, width), &big, &[], steps, 1).unwrap();

    let (lo, hi) = (spec.pml_thickness, 100 - spec.pml_thickness);
    let mut peak_rms = 0.0f64;
    let mut incident = 0.0f64;
    let mut reflected = 0.0f64;
    let mut rms = Vec::new();
    for (a, b) in small.snapshots.iter().zip(&large.snapshots) {
        let mut sum = 0.0;
        for i in lo..hi {
            for j in lo..hi {
                let p = a.p[(i, j)];
                sum += p * p;
                let q = b.p[(i + pad, j + pad)];
                reflected = reflected.max((p - q).abs());
                // Amplitude arriving at the interior edge, from the reference.
                if i == lo || j == lo || i == hi - 1 || j == hi - 1 {
                    incident = incident.max(q.abs());
                }
            }
        }
        let r = (sum / ((hi - lo) * (hi - lo)) as f64).sqrt();
        peak_rms = peak_rms.max(r);
        rms.push(r);
    }
    // The trailing edge (4 widths behind the peak) has passed the farthest
    // interior corner.
    let reach = ((49.5 - lo as f64).hypot(49.5 - lo as f64) + 4.0 * width) * spec.dx;
    let exit_step = (reach / spec.c / spec.dt).ceil() as usize;
    let after = rms[exit_step..].iter().cloned().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let ratio_rms = after / peak_rms;
    let ratio_refl = reflected / incident;
    verdict(
        ratio_rms <= 0.05 && ratio_refl <= 0.05 && elapsed < Duration::from_secs(30),
        format!(
            "interior rms after step {} is {:.2}% of peak, largest reflection {:.2}% of incident, {}",
            exit_step,
            100.0 * ratio_rms,
            100.0 * ratio_refl,
            secs(elapsed)
        ),
    )
}

/// Compactly supported bump centred between two cells.
fn bump(n: usize, ci: f64, cj: f64, radius: f64) -> FieldGrid<f64> {
    FieldGrid::from_fn(n, n, |i, j| {
        let r = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
        if r < radius {
            (std::f64::consts::FRAC_PI_2 * r / radius).cos().powi(2)
        } else {
            0.0
        }
    })
}

/// Runs with hard sources, where `driven` selects which rectangles follow
/// their signal and the rest are held at zero.
fn clamped_run(spec: &DomainSpec, sources: &[SourceSpec], driven: &[bool], steps: u64) -> Vec<WaveState<f64>> {
    let sigma = build_sigma::<f64>(spec);
    let mut state = WaveState::zeros(spec.nx, spec.ny);
    let mut out = vec![state.clone()];
    for _ in 0..steps {
        state = advance(&state, &sigma, spec).unwrap();
        let t = state.time(spec.dt);
        for (src, &on) in sources.iter().zip(driven) {
            let value = if on { source_value(src, t) } else { 0.0 };
            for (i, j) in src.cells() {
                state.p[(i, j)] = value;
            }
        }
        out.push(state.clone());
    }
    out
}

/// 4. Mirror symmetry and superposition of the oracle.
fn symmetry_and_linearity() -> Verdict {
    let start = Instant::now();

    // Diagonal reflection swaps the staggered u and v exactly, absorbing
    // layer included, for the whole run.
    let spec = DomainSpec::square(64, 10);
    let sigma = build_sigma::<f64>(&spec);
    let mut s = WaveState::zeros(64, 64);
    s.p = bump(64, 25.0, 36.0, 6.0);
    let mut t = WaveState { u: s.v.clone(), v: s.u.clone(), p: FieldGrid::from_fn(64, 64, |i, j| s.p[(j, i)]), step: 0 };
    let transpose = |f: &FieldGrid<f64>| FieldGrid::from_fn(64, 64, |i, j| f[(j, i)]);
    let mut diag = 0.0f64;
    for _ in 0..200 {
        s = advance(&s, &sigma, &spec).unwrap();
        t = advance(&t, &sigma, &spec).unwrap();
        diag = diag
            .max(max_abs_diff(&s.p, &transpose(&t.p)))
            .max(max_abs_diff(&s.u, &transpose(&t.v)))
            .max(max_abs_diff(&s.v, &transpose(&t.u)));
    }

    // Reflection across the vertical mid-line: p(i) ↔ p(n-1-i) and the face
    // velocity u(i) ↔ -u(n-i). Exact while the disturbance stays clear of the
    // outer frame, whose unstored right-hand faces break the mirror.
    let n = 128;
    let spec_m = DomainSpec::square(n, 16);
    let sigma_m = build_sigma::<f64>(&spec_m);
    let mut m = WaveState::zeros(n, n);
    m.p = bump(n, 63.5, 50.0, 6.0);
    let mut mirror = 0.0f64;
    let mirror_steps = 40;
    for _ in 0..mirror_steps {
        m = advance(&m, &sigma_m, &spec_m).unwrap();
        for i in 0..n {
            for j in 0..n {
                mirror = mirror.max((m.p[(i, j)] - m.p[(n - 1 - i, j)]).abs()).max((m.v[(i, j)] - m.v[(n - 1 - i, j)]).abs());
                if i > 0 {
                    mirror = mirror.max((m.u[(i, j)] + m.u[(n - i, j)]).abs());
                }
            }
        }
    }

    // Superposition with hard sources: each single-source run holds the
    // other rectangle at zero, so the clamps stay linear constraints.
    let spec_s = DomainSpec::square(80, 10);
    let a = SourceSpec { i0: 25, j0: 30, w: 4, h: 4, period: 40.0, bias: 0.3 };
    let b = SourceSpec { i0: 50, j0: 44, w: 5, h: 3, period: 27.0, bias: 2.0 };
    let srcs = [a.clone(), b.clone()];
    let steps = 300;
    let only_a = clamped_run(&spec_s, &srcs, &[true, false], steps);
    let only_b = clamped_run(&spec_s, &srcs, &[false, true], steps);
    let both = fdm::simulate::<f64>(&spec_s, &srcs, steps, 1).unwrap();
    let mut superpose = 0.0f64;
    for ((x, y), z) in only_a.iter().zip(&only_b).zip(&both.snapshots) {
        let sum = WaveState { u: x.u.zip_map(&y.u, |p, q| p + q), v: x.v.zip_map(&y.v, |p, q| p + q), p: x.p.zip_map(&y.p, |p, q| p + q), step: z.step };
        superpose = superpose.max(state_diff(&sum, z));
    }
    // Free single-source runs agree too, until one source's disturbance
    // reaches the other's rectangle (one cell per step at most).
    let free_a = fdm::simulate::<f64>(&spec_s, &[a.clone()], steps, 1).unwrap();
    let free_b = fdm::simulate::<f64>(&spec_s, &[b.clone()], steps, 1).unwrap();
    let gap = (b.i0 - (a.i0 + a.w)).max(b.j0 - (a.j0 + a.h)) as usize;
    let mut free = 0.0f64;
    for k in 0..gap {
        let (x, y, z) = (&free_a.snapshots[k], &free_b.snapshots[k], &both.snapshots[k]);
        let sum = WaveState { u: x.u.zip_map(&y.u, |p, q| p + q), v: x.v.zip_map(&y.v, |p, q| p + q), p: x.p.zip_map(&y.p, |p, q| p + q), step: z.step };
        free = free.max(state_diff(&sum, z));
    }

    let elapsed = start.elapsed();
    verdict(
        diag <= 1e-12 && mirror <= 1e-12 && superpose <= 1e-10 && free <= 1e-10,
        format!(
            "diagonal mirror {diag:.1e} (200 steps), axis mirror {mirror:.1e} ({mirror_steps} steps), superposition {superpose:.1e} (clamped, {steps} steps), {free:.1e} (free, {gap} steps), {}",
            secs(elapsed)
        ),
    )
}

/// Desk-scale training shared by criteria 5 and 8.
struct DeskRun {
    params: ModelParams<f32>,
    epoch_means: Vec<f64>,
    elapsed: Duration,
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        domain: DomainSpec::square(64, 10),
        pool_size: 100,
        batch_size: 16,
        samples_per_epoch: 2000,
        epochs: 10,
        seed: 1,
        precision: Precision::Single,
        ..TrainConfig::default()
    }
}

fn desk_training() -> DeskRun {
    let start = Instant::now();
    let mut trainer = Trainer::<f32>::new(desk_config()).unwrap();
    let mut epoch_means = Vec::new();
    trainer
        .run_with(None, |_, records| {
            epoch_means.push(records.iter().map(|r| r.loss.total).sum::<f64>() / records.len() as f64);
        })
        .unwrap();
    DeskRun { params: trainer.into_params(), epoch_means, elapsed: start.elapsed() }
}

/// 5. Desk-scale training lowers the loss and tracks the oracle.
fn desk_scale(run: &DeskRun) -> Verdict {
    let spec = desk_config().domain;
    let first = run.epoch_means[0];
    let last = *run.epoch_means.last().unwrap();
    let src = SourceSpec::centered(&spec, 5, 40.0, 0.0);
    let case = eval::EvalCase { sources: vec![src], steps: 100 };
    let report = eval::compare(&run.params, &spec, &[case], 10, MreRegion::Interior);
    let c = &report.cases[0];
    let final_mre = c.snapshots.last().map(|m| m.mre_p).unwrap_or(f64::NAN);
    let decay = last / first;
    verdict(
        decay <= 1e-2 && c.error.is_none() && c.mean_mre_p <= 25.0,
        format!(
            "epoch loss {first:.3e} -> {last:.3e} (ratio {decay:.2e}, need <= 1e-2); T=40 rollout MRE mean {:.2}% (step 100: {final_mre:.2}%, need <= 25%); trained in {}",
            c.mean_mre_p,
            secs(run.elapsed)
        ),
    )
}

/// 6. The relative error metric on hand-checkable inputs.
fn mre_exactness() -> Verdict {
    let g = |v: &[f64]| FieldGrid::from_vec(1, v.len(), v.to_vec()).unwrap();
    let ones = g(&[1.0, 1.0]);
    let hand = mre(&g(&[1.0, 2.0]), &g(&[2.0, 2.0]), &ones).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let x = random_field(&mut rng, 20, 3.0);
    let y = random_field(&mut rng, 20, 3.0);
    let mask = FieldGrid::filled(20, 20, 1.0);
    let same = mre(&x, &x, &mask).unwrap();
    let base = mre(&x, &y, &mask).unwrap();
    let mut worst = 0.0f64;
    for a in [1e-3, 0.5, 7.0, 1e4] {
        let scaled = mre(&x.map(|v| a * v), &y.map(|v| a * v), &mask).unwrap();
        worst = worst.max((scaled - base).abs() / base);
    }
    verdict(
        hand == 25.0 && same == 0.0 && worst <= 1e-12,
        format!("mre([1,2],[2,2]) = {hand}%, mre(X,X) = {same}%, scale invariance {worst:.1e}"),
    )
}

fn random_bits_f32(rng: &mut ChaCha8Rng) -> f32 {
    // Any finite bit pattern, plus the awkward ones.
    match rng.random_range(0..10) {
        0 => -0.0,
        1 => f32::MIN_POSITIVE / 3.0,
        2 => f32::MAX,
        _ => loop {
            let v = f32::from_bits(rng.random());
            if v.is_finite() {
                break v;
            }
        },
    }
}

fn random_bits_f64(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..10) {
        0 => -0.0,
        1 => f64::MIN_POSITIVE / 3.0,
        2 => f64::MAX,
        _ => loop {
            let v = f64::from_bits(rng.random());
            if v.is_finite() {
                break v;
            }
        },
    }
}

fn bits_equal<T: Real>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
}

fn params_bits_equal<T: Real>(a: &ModelParams<T>, b: &ModelParams<T>) -> bool {
    a.same_shape(b) && a.tensors().zip(b.tensors()).all(|(x, y)| bits_equal(x, y))
}

fn random_params<T: Real>(rng: &mut ChaCha8Rng, hidden: usize, draw: &mut impl FnMut(&mut ChaCha8Rng) -> T) -> ModelParams<T> {
    let mut p = ModelParams::<T>::zeros(hidden);
    for t in p.tensors_mut() {
        for x in t.iter_mut() {
            *x = draw(rng);
        }
    }
    p
}

fn checkpoint_round_trip<T: Real>(rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng) -> T) -> bool {
    let hidden = rng.random_range(1..6);
    let params = random_params(rng, hidden, &mut draw);
    let adam = if rng.random_bool(0.5) {
        let mut a = AdamState::new(&params);
        a.m = random_params(rng, hidden, &mut draw);
        a.v = random_params(rng, hidden, &mut draw);
        a.step = rng.random();
        a.beta1 = rng.random();
        Some(a)
    } else {
        None
    };
    let ckpt = Checkpoint { params, adam };
    let back = io::decode_checkpoint::<T>(&io::encode_checkpoint(&ckpt).unwrap()).unwrap();
    params_bits_equal(&ckpt.params, &back.params)
        && match (&ckpt.adam, &back.adam) {
            (None, None) => true,
            (Some(a), Some(b)) => {
                params_bits_equal(&a.m, &b.m)
                    && params_bits_equal(&a.v, &b.v)
                    && a.step == b.step
                    && a.beta1.to_bits() == b.beta1.to_bits()
                    && a.beta2.to_bits() == b.beta2.to_bits()
                    && a.eps.to_bits() == b.eps.to_bits()
            }
            _ => false,
        }
}

fn snapshot_round_trip<T: Real>(rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng) -> T) -> bool {
    let (nx, ny) = (rng.random_range(1..24), rng.random_range(1..24));
    let channels = (0..rng.random_range(1..6)).map(|_| FieldGrid::from_fn(nx, ny, |_, _| draw(rng))).collect();
    let snap = Snapshot { step: rng.random(), channels };
    let bytes = snap.encode().unwrap();
    let back = Snapshot::<T>::decode(&bytes).unwrap();
    back.step == snap.step
        && back.channels.len() == snap.channels.len()
        && back.channels.iter().zip(&snap.channels).all(|(a, b)| a.shape() == b.shape() && bits_equal(a.as_slice(), b.as_slice()))
        && back.encode().unwrap() == bytes
}

/// 7. Binary formats are lossless.
fn format_round_trips() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut failures = 0;
    for k in 0..1000 {
        let ok = match k % 4 {
            0 => snapshot_round_trip::<f32>(&mut rng, random_bits_f32),
            1 => snapshot_round_trip::<f64>(&mut rng, random_bits_f64),
            2 => checkpoint_round_trip::<f32>(&mut rng, random_bits_f32),
            _ => checkpoint_round_trip::<f64>(&mut rng, random_bits_f64),
        };
        failures += usize::from(!ok);
    }
    // And through the file system once per kind.
    let dir = tempfile::tempdir().unwrap();
    let state: WaveState<f32> = random_state(&mut rng, 12).cast();
    let path = dir.path().join("s.wfld");
    io::write_snapshot(&path, &Snapshot::from_state(&state, None)).unwrap();
    let files_ok = io::read_snapshot::<f32>(&path).unwrap().to_state().unwrap() == state;
    let params = init_params_with::<f64, _>(8, &mut rng);
    let cpath = dir.path().join("m.wnet");
    io::write_checkpoint(&cpath, &Checkpoint { params: params.clone(), adam: Some(AdamState::new(&params)) }).unwrap();
    let files_ok = files_ok && io::read_checkpoint::<f64>(&cpath).unwrap().params == params;
    let elapsed = start.elapsed();
    verdict(
        failures == 0 && files_ok && elapsed < Duration::from_secs(10),
        format!("{failures} mismatches in 1000 randomized snapshot/checkpoint round trips, files ok: {files_ok}, {}", secs(elapsed)),
    )
}

/// Steps the surrogate by hand and reports the first step with a non-finite field.
fn first_bad_step<S: Stepper<f32>>(stepper: &S, spec: &DomainSpec, sources: &[SourceSpec], steps: u64) -> Option<u64> {
    // Fields, then the residual of the transition (which overflows first in
    // single precision).
    let sigma = build_sigma::<f32>(spec);
    let mask = loss_mask::<f32>(spec, sources);
    let mut s = WaveState::zeros(spec.nx, spec.ny);
    for _ in 0..steps {
        let next = stepper.step(&s, &sigma, spec, sources).unwrap();
        if next.first_non_finite().is_some() {
            return Some(next.step);
        }
        let loss = fdrc_loss(&residuals(&s, &next, &sigma, spec, &mask).unwrap()).unwrap();
        if !loss.is_finite() {
            return Some(next.step);
        }
        s = next;
    }
    None
}

/// 8. A high-frequency source either stays finite or fails loudly at the
/// first bad step.
fn divergence_detection(run: &DeskRun) -> Verdict {
    let spec = desk_config().domain;
    let src = SourceSpec::centered(&spec, 5, 10.0, 0.0);
    let steps = 400;
    let check = |params: &ModelParams<f32>| -> (bool, String) {
        let expected = first_bad_step(params, &spec, std::slice::from_ref(&src), steps);
        match (eval::rollout(params, &spec, std::slice::from_ref(&src), steps, 50), expected) {
            (Ok(traj), None) => {
                let finite = traj.snapshots.iter().all(|s| s.first_non_finite().is_none());
                (finite, format!("finite for {steps} steps (peak |p| {:.3})", traj.last().p.max_abs()))
            }
            (Err(Error::NonFinite { step, .. }), Some(first)) => (step == first, format!("aborted at step {step}, first non-finite step {first}")),
            (other, first) => (false, format!("unexpected outcome {:?} (first non-finite step {first:?})", other.err())),
        }
    };
    let (trained_ok, trained) = check(&run.params);
    // A deliberately unstable model exercises the abort path.
    let mut unstable = ModelParams::<f32>::zeros(4);
    unstable.layers[2].biases[2] = 1e37;
    let (unstable_ok, unstable_detail) = check(&unstable);
    // The oracle itself stays bounded for the same source.
    let oracle_ok = first_bad_step(&Oracle, &spec, std::slice::from_ref(&src), steps).is_none();
    verdict(
        trained_ok && unstable_ok && oracle_ok,
        format!("desk model with T=10: {trained}; unstable model: {unstable_detail}; oracle finite: {oracle_ok}"),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: u32, name: &str, v: Verdict| {
        all &= v.pass;
        println!("criterion {n} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    report(1, "oracle/loss consistency", oracle_loss_consistency());
    report(2, "adjoint and backprop", adjoint_and_backprop());
    report(3, "PML absorption", pml_absorption());
    report(4, "symmetry and linearity", symmetry_and_linearity());
    let desk = desk_training();
    report(5, "desk-scale training", desk_scale(&desk));
    report(6, "MRE exactness", mre_exactness());
    report(7, "format round trips", format_round_trips());
    report(8, "divergence detection", divergence_detection(&desk));
    let strict = std::env::var_os("FDRC_ACCEPTANCE_STRICT").is_some();
    if all || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
