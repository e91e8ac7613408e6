//! One function per task; each returns an [`Outcome`] and never touches disk.

use serde::Serialize;
use serde_json::{json, Value};

use pulsefront_core::barriers::{
    build_critical_pair_with, build_sub_omega_with, build_super_h_with, verify_barrier_with, BarrierOptions,
    VerifyWindow,
};
use pulsefront_core::cauchy::{bump, extinction_test, hair_trigger_test, spreading_speed, SimGrid, SimulationState};
use pulsefront_core::eigen::{dispersion_curve, k_of};
use pulsefront_core::model::{check_structure, SamplePlan};
use pulsefront_core::report::sig;
use pulsefront_core::speed::{characteristic_roots, minimal_speed};
use pulsefront_core::wave::{construct_pulsating_wave, rational_frame, verify_wave, WaveCheck, WaveOptions};
use pulsefront_core::{Error, ModelSpec};

use crate::config::{unit, BarrierChoice, ExperimentConfig, InitialDatum, Task};
use crate::output::Outcome;
use crate::CliError;

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    match cfg.task {
        Task::Eigen => eigen(cfg, &model),
        Task::Dispersion => dispersion(cfg, &model),
        Task::Speed => speed(cfg, &model),
        Task::Wave => wave(cfg, &model),
        Task::Simulate => simulate(cfg, &model),
        Task::Barrier => barrier(cfg, &model),
        Task::VerifyAll => verify_all(cfg, &model),
    }
}

fn direction(p: &Option<Vec<f64>>, dim: usize) -> Vec<f64> {
    unit(p.as_deref(), dim)
}

fn axis_names(prefix: &str, n: usize) -> String {
    (1..=n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

fn row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(sig).collect::<Vec<_>>().join(",")
}

fn eigen(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<Outcome, CliError> {
    let dim = model.dim();
    let e = direction(&cfg.eigen.direction, dim);
    let grid = cfg.grid(dim)?;
    let pair = k_of(model, &e, cfg.eigen.lambda, &grid, &cfg.eigen_options())?;
    let d = pair.components;
    let mut csv = format!("{},{}\n", axis_names("x", dim), axis_names("phi", d));
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let phi = (0..d).map(|i| pair.component(i)[idx]);
        csv.push_str(&format!("{},{}\n", row(x[..dim].iter().copied()), row(phi)));
    }
    let summary = json!({
        "lambda": pair.lambda,
        "direction": e,
        "k": pair.value,
        "bracket": [pair.bracket.0, pair.bracket.1],
        "min_value": pair.min_value,
        "residual": pair.residual,
        "iterations": pair.iterations,
        "points": grid.len(),
    });
    let mut out = Outcome::new(summary.clone());
    out.lines.push(format!("k={:.6}", pair.value));
    out.file("eigenfunction.csv", csv);
    out.json("eigen.json", &summary);
    Ok(out)
}

fn dispersion(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<Outcome, CliError> {
    let b = &cfg.dispersion;
    let e = direction(&b.direction, model.dim());
    let step = (b.lambda_max - b.lambda_min) / (b.samples - 1) as f64;
    let lambdas: Vec<f64> = (0..b.samples).map(|j| b.lambda_min + step * j as f64).collect();
    let curve = dispersion_curve(model, &e, &lambdas, &cfg.grid(model.dim())?, &cfg.eigen_options())?;
    let worst = curve.samples.iter().map(|s| s.residual).fold(0.0, f64::max);
    let summary = json!({"direction": e, "samples": curve.samples.len(), "max_residual": worst});
    let mut out = Outcome::new(summary.clone());
    out.lines.push(format!("samples={} max_residual={:.3e}", curve.samples.len(), worst));
    out.file("dispersion.csv", curve.to_csv());
    out.json("dispersion.json", &summary);
    Ok(out)
}

fn speed(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<Outcome, CliError> {
    let dim = model.dim();
    let e = direction(&cfg.speed.direction, dim);
    let s = minimal_speed(model, &e, &cfg.grid(dim)?, &cfg.eigen_options())?;
    let csv = format!(
        "{},c_star,lambda_star\n{},{},{}\n",
        axis_names("e_", dim),
        row(e.iter().copied()),
        sig(s.c_star),
        sig(s.lambda_star)
    );
    let summary = json!({
        "direction": e,
        "c_star": s.c_star,
        "lambda_star": s.lambda_star,
        "k_at_star": s.k_at_star,
        "k_at_zero": s.k_at_zero,
        "bracket": [s.bracket.0, s.bracket.1],
    });
    let mut out = Outcome::new(summary.clone());
    out.lines.push(format!("c_star={:.6} lambda_star={:.6}", s.c_star, s.lambda_star));
    out.file("speed.csv", csv);
    out.json("speed.json", &summary);
    Ok(out)
}

fn wave_direction(cfg: &ExperimentConfig, dim: usize) -> Vec<i64> {
    match &cfg.wave.direction {
        Some(p) => p.iter().map(|&v| v as i64).collect(),
        None => {
            let mut p = vec![0; dim];
            p[0] = 1;
            p
        }
    }
}

fn wave_options(cfg: &ExperimentConfig, critical: bool) -> WaveOptions {
    let w = &cfg.wave;
    let mut o = WaveOptions {
        a: w.a,
        r_max: w.r_max,
        tol: w.tol,
        max_iter: w.max_iter.unwrap_or(if critical { 2000 } else { 400 }),
        eigen_points: cfg.numerics.points,
        ..WaveOptions::default()
    };
    o.barrier.eigen = cfg.eigen_options();
    o
}

fn wave(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<Outcome, CliError> {
    let dim = model.dim();
    let frame = rational_frame(&wave_direction(cfg, dim)).map_err(|e| match e {
        Error::ZeroVector => CliError::config("wave.direction", "direction vector is zero"),
        e => e.into(),
    })?;
    let c_star = minimal_speed(model, &frame.e, &cfg.grid(dim)?, &cfg.eigen_options())?.c_star;
    let c = cfg.wave.speed.resolve(c_star);
    let critical = cfg.wave.speed.is_critical();
    let profile = construct_pulsating_wave(model, &frame, c, &wave_options(cfg, critical))?;
    let report = verify_wave(model, &profile, &WaveCheck::ALL)?;
    let residual = profile.trace.last().copied().unwrap_or(f64::NAN);
    let summary = json!({
        "speed": c,
        "c_star": c_star,
        "critical": profile.critical,
        "decay_rate": profile.decay_rate,
        "direction": frame.p,
        "tau1": frame.tau1,
        "iterations": profile.iterations,
        "picard_residual": residual,
        "grid": {"a": profile.grid.a, "r_max": profile.grid.r_max(), "h_r": profile.grid.h_r, "nr": profile.grid.nr},
        "diagnostics": profile.diagnostics,
        "report": report,
    });
    let mut out = Outcome::new(summary.clone());
    out.passed = report.passed;
    out.lines.push(format!(
        "c={:.6} c_star={:.6} iterations={} residual={:.3e} passed={}",
        c, c_star, profile.iterations, residual, report.passed
    ));
    out.file("profile.csv", profile.to_csv());
    out.json("wave.json", &summary);
    Ok(out)
}

fn sim_grid(cfg: &ExperimentConfig, dim: usize) -> Result<SimGrid, CliError> {
    let s = &cfg.simulate;
    if let Some(cells) = &s.cells {
        if cells.len() != dim {
            return Err(CliError::config("simulate.cells", format!("expected {dim} entries")));
        }
        return Ok(SimGrid::torus(cells, s.per_cell)?);
    }
    let lo = s.lo.clone().unwrap_or_else(|| vec![-50.0; dim]);
    let hi = s.hi.clone().unwrap_or_else(|| vec![50.0; dim]);
    if lo.len() != dim || hi.len() != dim {
        return Err(CliError::config("simulate.lo", format!("box corners need {dim} entries")));
    }
    Ok(SimGrid::boxed(&lo, &hi, s.h)?)
}

fn floor_within(grid: &SimGrid, u: &[f64], components: usize, radius: f64) -> Vec<f64> {
    let n = grid.len();
    let dim = grid.dim();
    let mut floor = vec![f64::INFINITY; components];
    for idx in 0..n {
        let x = grid.point(idx);
        if x[..dim].iter().map(|v| v * v).sum::<f64>().sqrt() <= radius {
            for (i, f) in floor.iter_mut().enumerate() {
                *f = f.min(u[i * n + idx]);
            }
        }
    }
    floor
}

fn simulate(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<Outcome, CliError> {
    let s = &cfg.simulate;
    let d = model.components();
    if s.component >= d {
        return Err(CliError::config("simulate.component", format!("model has {d} components")));
    }
    let grid = sim_grid(cfg, model.dim())?;
    let u0 = match s.initial {
        InitialDatum::Bump => bump(&grid, d, s.component, s.height, s.radius),
        InitialDatum::Constant => vec![model.eta_hat(); d * grid.len()],
    };
    let dim = grid.dim();
    let n = grid.len();
    let mut state = SimulationState::new(model, grid.clone(), u0.clone(), s.dt)?;
    let mut snapshots = format!("t,{},{}\n", axis_names("x", dim), axis_names("u", d));
    let snap = |st: &SimulationState, out: &mut String| {
        for idx in 0..n {
            let x = st.grid.point(idx);
            let u = (0..d).map(|i| st.u[i * n + idx]);
            out.push_str(&format!("{},{},{}\n", sig(st.t), row(x[..dim].iter().copied()), row(u)));
        }
    };
    snap(&state, &mut snapshots);
    let mut traces = vec![(state.t, state.sup())];
    let mut steps = 0usize;
    let mut next_sample = s.sample_every;
    while state.t < s.horizon - 1e-12 {
        state.dt = state.dt.min(s.horizon - state.t);
        state.step()?;
        steps += 1;
        if state.t >= next_sample - 1e-9 || state.t >= s.horizon - 1e-12 {
            traces.push((state.t, state.sup()));
            next_sample += s.sample_every;
        }
        if steps % s.snapshot_every == 0 {
            snap(&state, &mut snapshots);
        }
    }
    if steps % s.snapshot_every != 0 {
        snap(&state, &mut snapshots);
    }
    let floor = floor_within(&grid, &state.u, d, s.floor_radius);
    let final_sup = state.sup();
    let (speed, speed_note) = if grid.periodic {
        (Value::Null, Value::from("torus grid"))
    } else {
        match spreading_speed(model, &grid, u0, s.horizon, s.theta, s.dt, s.sample_every) {
            Ok(r) => (json!({"right": r.right.speed, "left": r.left.speed}), Value::Null),
            Err(e) => (Value::Null, Value::from(e.to_string())),
        }
    };
    let summary = json!({
        "speed": speed,
        "speed_note": speed_note,
        "floor": floor,
        "final_sup": final_sup,
        "extinct": final_sup < s.extinction_threshold,
        "halvings": state.halvings,
        "traces": traces.iter().map(|&(t, v)| [t, v]).collect::<Vec<_>>(),
    });
    let mut out = Outcome::new(summary.clone());
    out.lines.push(format!(
        "t={} sup={:.6e} floor={} extinct={}",
        sig(state.t),
        final_sup,
        row(floor.iter().copied()),
        final_sup < s.extinction_threshold
    ));
    out.file("snapshots.csv", snapshots);
    out.json("summary.json", &summary);
    Ok(out)
}

fn barrier(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<Outcome, CliError> {
    let dim = model.dim();
    let e = direction(&cfg.barrier.direction, dim);
    let grid = cfg.grid(dim)?;
    let opts = BarrierOptions {
        eigen: cfg.eigen_options(),
        ..BarrierOptions::default()
    };
    let s = minimal_speed(model, &e, &grid, &opts.eigen)?;
    let c = cfg.barrier.speed.resolve(s.c_star);
    let b = match cfg.barrier.kind {
        BarrierChoice::SuperH => build_super_h_with(model, &s, c, &grid, &opts)?,
        BarrierChoice::SubOmega => build_sub_omega_with(model, &s, c, &grid, &opts)?,
        BarrierChoice::SubOmegaStar => build_critical_pair_with(model, &s, &grid, &opts)?.0,
        BarrierChoice::SuperHStar => build_critical_pair_with(model, &s, &grid, &opts)?.1,
    };
    let rep = verify_barrier_with(model, &b, &VerifyWindow::default_for(&b), &opts.eigen)?;
    let summary = json!({
        "kind": rep.kind,
        "speed": b.speed,
        "constants": rep.constants,
        "max_violation": rep.max_violation,
        "tol_fd": rep.tol_fd,
        "refinement_ratio": rep.refinement_ratio,
        "points": rep.points,
        "passed": rep.passed,
    });
    let mut out = Outcome::new(summary.clone());
    out.passed = rep.passed;
    out.lines.push(format!(
        "kind={} max_violation={:.3e} tol_fd={:.3e} ratio={:.3} passed={}",
        rep.kind.name(),
        rep.max_violation,
        rep.tol_fd,
        rep.refinement_ratio,
        rep.passed
    ));
    out.json("barrier.json", &summary);
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct Claim {
    name: String,
    passed: bool,
    detail: String,
}

struct Claims(Vec<Claim>);

impl Claims {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.0.push(Claim {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

/// Runs the speed, wave, monotonicity, hair-trigger and extinction claims
/// that apply to `model` and reports each one.
pub fn verify_all(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<Outcome, CliError> {
    let v = &cfg.verify;
    let dim = model.dim();
    let eta = model.eta_hat();
    let eo = cfg.eigen_options();
    let grid = cfg.grid(dim)?;
    let frame = rational_frame(&wave_direction(cfg, dim))?;
    let structure = check_structure(model, &SamplePlan::dense(dim))?;
    let k0 = k_of(model, &frame.e, 0.0, &grid, &eo)?.value;
    let mut claims = Claims(Vec::new());
    let mut waves = Vec::new();
    claims.push(
        "structure",
        structure.cooperative && structure.fully_coupled && structure.upper_bound_ok,
        format!(
            "cooperative={} fully_coupled={} upper_bound={} subhomogeneous={}",
            structure.cooperative, structure.fully_coupled, structure.upper_bound_ok, structure.subhomogeneous
        ),
    );
    if k0 < 0.0 {
        let s = minimal_speed(model, &frame.e, &grid, &eo)?;
        let ok = s.c_star > 0.0 && s.k_at_zero < 0.0;
        let cs = s.c_star;
        // c* = min over lambda of -k/lambda: every sampled ratio bounds it from above.
        let sampled = s
            .curve
            .samples
            .iter()
            .filter(|p| p.lambda > 0.0)
            .all(|p| -p.k / p.lambda >= cs - 1e-9 * (1.0 + cs));
        claims.push(
            "minimal_speed",
            ok && sampled,
            format!("c_star={} lambda_star={}", sig(cs), sig(s.lambda_star)),
        );
        match characteristic_roots(model, &frame.e, 0.99 * cs, &grid, &eo) {
            Ok(r) => claims.push("no_root_below_c_star", r.decay_rate().is_none(), format!("{r:?}")),
            Err(e) => claims.push("no_root_below_c_star", false, e.to_string()),
        }
        for &f in &v.factors {
            let c = f * cs;
            let critical = (f - 1.0).abs() < 1e-12;
            let mut o = wave_options(cfg, critical);
            o.max_iter = if critical { v.critical_max_iter } else { v.max_iter };
            let tag = format!("wave_{}c*", sig(f));
            match construct_pulsating_wave(model, &frame, c, &o) {
                Ok(p) => {
                    let rep = verify_wave(model, &p, &WaveCheck::ALL)?;
                    claims.push(
                        format!("{tag}.constructed"),
                        true,
                        format!("iterations={} slope={}", p.iterations, sig(p.diagnostics.right_tail_slope)),
                    );
                    claims.push(
                        format!("{tag}.pulsating"),
                        rep.pulsating_ok == Some(true),
                        format!("residual={}", sig(rep.pulsating_residual.unwrap_or(f64::NAN))),
                    );
                    claims.push(
                        format!("{tag}.limits"),
                        rep.limits_ok == Some(true),
                        format!(
                            "right_tail={} left_plateau={}",
                            sig(rep.right_tail.unwrap_or(f64::NAN)),
                            sig(rep.left_plateau.unwrap_or(f64::NAN))
                        ),
                    );
                    claims.push(format!("{tag}.speed_bound"), rep.speed_ok == Some(true), format!("c={}", sig(c)));
                    if let Some(m) = &rep.monotonicity {
                        claims.push(
                            format!("{tag}.monotonicity"),
                            m.passed,
                            format!("min={} margin={}", sig(m.min_dt), sig(m.margin)),
                        );
                    }
                    waves.push(json!({"factor": f, "speed": c, "iterations": p.iterations,
                        "diagnostics": p.diagnostics, "report": rep}));
                }
                Err(e) => claims.push(format!("{tag}.constructed"), false, e.to_string()),
            }
        }
        let c = v.below_factor * cs;
        match construct_pulsating_wave(model, &frame, c, &wave_options(cfg, false)) {
            Err(Error::SpeedBelowMinimal { .. }) | Err(Error::EnvelopeCollapse { .. }) => {
                claims.push("below_c_star_refused", true, format!("c={}", sig(c)))
            }
            Err(e) => claims.push("below_c_star_refused", false, format!("unexpected error: {e}")),
            Ok(p) => {
                let top = p.u.iter().cloned().fold(0.0, f64::max);
                claims.push("below_c_star_refused", top < 1e-6, format!("profile sup {}", sig(top)));
            }
        }
        let (hw, h) = hair_box(v.half_width, v.h, dim);
        let sg = SimGrid::boxed(&vec![-hw; dim], &vec![hw; dim], h)?;
        let u0 = bump(&sg, model.components(), 0, v.bump_height * eta, 1.0);
        match hair_trigger_test(model, &sg, u0, v.horizon, v.floor_radius, v.dt) {
            Ok(r) => claims.push(
                "hair_trigger",
                r.persisted,
                format!("floor={} lambda_1={}", row(r.floor.iter().copied()), sig(r.lambda_1)),
            ),
            Err(e) => claims.push("hair_trigger", false, e.to_string()),
        }
    } else {
        claims.push("zero_state_stable", true, format!("k(0)={}", sig(k0)));
        let torus = SimGrid::torus(&vec![1; dim], 16)?;
        match extinction_test(model, &torus, v.horizon, v.dt) {
            Ok(r) => claims.push(
                "extinction",
                r.extinct && r.nonincreasing,
                format!("final_sup={} nonincreasing={}", sig(r.final_sup), r.nonincreasing),
            ),
            Err(e) => claims.push("extinction", false, e.to_string()),
        }
        match construct_pulsating_wave(model, &frame, 1.0, &wave_options(cfg, false)) {
            Err(Error::UnstableZeroState { .. }) => claims.push("wave_refused", true, "UnstableZeroState"),
            Err(e) => claims.push("wave_refused", false, format!("unexpected error: {e}")),
            Ok(_) => claims.push("wave_refused", false, "a wave was constructed"),
        }
    }
    let passed = claims.0.iter().all(|c| c.passed);
    let summary = json!({
        "model": model.name(),
        "k0": k0,
        "passed": passed,
        "claims": claims.0,
        "waves": waves,
    });
    let mut out = Outcome::new(summary.clone());
    out.passed = passed;
    for c in &claims.0 {
        out.lines
            .push(format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    out.json("verify.json", &summary);
    Ok(out)
}

/// Coarsens the hair-trigger box so it stays near 2e5 nodes in higher dimensions.
fn hair_box(half_width: f64, h: f64, dim: usize) -> (f64, f64) {
    let per_axis = (2e5f64).powf(1.0 / dim as f64);
    (half_width, h.max(2.0 * half_width / per_axis))
}
