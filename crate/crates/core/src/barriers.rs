//! Explicit sub- and supersolutions built from principal eigenfunctions,
//! and their finite-difference verification.
//!
//! Every barrier is a finite sum `coef * s^p * exp(-mu s) * psi(x)` on its
//! smooth branch, with `s = x.e - ct` and `psi` a nodal periodic field, so
//! `d/dt = -c d/ds` is exact and only the spatial operator is discretized.

use rayon::prelude::*;
use serde::Serialize;

use crate::disc::{assemble_weighted, MatrixField, PeriodicGrid};
use crate::eigen::{guarded_grid, periodic_principal_eigenpair, EigenOptions, EigenPair};
use crate::error::{Error, Result};
use crate::model::{check_structure, ModelSpec, SamplePlan, MAX_DIM};
use crate::optimize::bisect;
use crate::speed::{characteristic_roots_with, minimal_speed, CharacteristicRoots, SpeedResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    SuperH,
    SubOmega,
    SubOmegaStar,
    SuperHStar,
}

impl BarrierKind {
    pub fn name(self) -> &'static str {
        match self {
            BarrierKind::SuperH => "super_h",
            BarrierKind::SubOmega => "sub_omega",
            BarrierKind::SubOmegaStar => "sub_omega_star",
            BarrierKind::SuperHStar => "super_h_star",
        }
    }

    pub fn is_sub(self) -> bool {
        matches!(self, BarrierKind::SubOmega | BarrierKind::SubOmegaStar)
    }
}

/// Constants of a barrier; fields not used by a kind stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BarrierConstants {
    pub lambda: f64,
    pub delta: Option<f64>,
    pub k: Option<f64>,
    pub a0: Option<f64>,
    pub b0: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub r_delta: Option<f64>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub s0: Option<f64>,
    pub w_bar: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub m_crit: Option<f64>,
    pub gamma_hat: Option<f64>,
    /// Times `K` (and `s0`) were doubled before validation passed.
    pub doublings: usize,
}

/// How a nodal field is obtained from the eigenproblem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
enum FieldSpec {
    /// `phi_lambda`, sup-normalized.
    Eigen { lambda: f64 },
    /// Central difference of `phi` in `lambda`, both sides rescaled to
    /// agree with `phi_lambda` at a pinned point.
    Derivative { lambda: f64, step: f64, pin: [f64; MAX_DIM] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Term {
    coef: f64,
    power: i32,
    rate: f64,
    field: usize,
}

/// Constant value taken below the cut in `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Cut {
    /// `true`: the constant applies for `s < 0`; `false`: for `s <= 0`.
    strict: bool,
    value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierFunction {
    pub kind: BarrierKind,
    pub speed: f64,
    pub direction: Vec<f64>,
    pub constants: BarrierConstants,
    pub eta_hat: f64,
    /// Eigenpairs behind the fields (the derivative field has none).
    pub eigenpairs: Vec<EigenPair>,
    pub grid: PeriodicGrid,
    pub components: usize,
    specs: Vec<FieldSpec>,
    fields: Vec<Vec<f64>>,
    terms: Vec<Term>,
    cut: Option<Cut>,
}

impl BarrierFunction {
    pub fn s(&self, t: f64, x: &[f64]) -> f64 {
        x.iter().zip(&self.direction).map(|(a, b)| a * b).sum::<f64>() - self.speed * t
    }

    fn below_cut(&self, s: f64) -> Option<f64> {
        self.cut.and_then(|c| {
            let below = if c.strict { s < 0.0 } else { s <= 0.0 };
            below.then_some(c.value)
        })
    }

    /// Whether `s` lies on the smooth (eigenfunction) branch.
    pub fn on_smooth_branch(&self, s: f64) -> bool {
        self.below_cut(s).is_none()
    }

    fn combine<F: Fn(usize, usize) -> f64>(&self, s: f64, ds: bool, get: F, out: &mut [f64]) {
        if let Some(v) = self.below_cut(s) {
            out.iter_mut().for_each(|o| *o = if ds { 0.0 } else { v });
            return;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for term in &self.terms {
            let ex = (-term.rate * s).exp();
            let g = match (term.power, ds) {
                (0, false) => ex,
                (0, true) => -term.rate * ex,
                (_, false) => s * ex,
                (_, true) => (1.0 - term.rate * s) * ex,
            };
            let w = term.coef * g;
            for (i, o) in out.iter_mut().enumerate() {
                *o += w * get(term.field, i);
            }
        }
    }

    fn field_at(&self, field: usize, comp: usize, x: &[f64]) -> f64 {
        let m = self.grid.len();
        self.grid.interpolate(&self.fields[field][comp * m..(comp + 1) * m], x)
    }

    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let s = self.s(t, x);
        self.combine(s, false, |f, i| self.field_at(f, i, x), out);
    }

    /// Barrier value at `(t, x)`, fields interpolated between grid nodes.
    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.components];
        self.eval_into(t, x, &mut out);
        out
    }

    /// `d/dt` of the barrier on its smooth branch.
    pub fn dt_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let s = self.s(t, x);
        self.combine(s, true, |f, i| self.field_at(f, i, x), out);
        out.iter_mut().for_each(|o| *o *= -self.speed);
    }

    /// Value at a lattice node `j / n` using exact nodal field values.
    fn node_into(&self, t: f64, j: &[i64], ds: bool, out: &mut [f64]) -> f64 {
        let n = self.grid.dim();
        let mut x = [0.0; MAX_DIM];
        let mut wrapped = [0usize; MAX_DIM];
        for l in 0..n {
            let nl = self.grid.points_per_axis()[l] as i64;
            x[l] = j[l] as f64 / nl as f64;
            wrapped[l] = j[l].rem_euclid(nl) as usize;
        }
        let idx = self.grid.index(&wrapped[..n]);
        let m = self.grid.len();
        let s = self.s(t, &x[..n]);
        self.combine(s, ds, |f, i| self.fields[f][i * m + idx], out);
        s
    }

    /// The same barrier with its fields recomputed on another grid,
    /// keeping every constant.
    pub fn on_grid(&self, model: &ModelSpec, grid: &PeriodicGrid, opts: &EigenOptions) -> Result<BarrierFunction> {
        let (fields, eigenpairs) = compute_fields(model, &self.direction, grid, &self.specs, opts)?;
        Ok(BarrierFunction {
            grid: grid.clone(),
            fields,
            eigenpairs,
            ..self.clone()
        })
    }
}

fn eigen_on(model: &ModelSpec, e: &[f64], lambda: f64, grid: &PeriodicGrid, opts: &EigenOptions) -> Result<EigenPair> {
    let h = MatrixField::linearization(model, grid);
    let op = assemble_weighted(model, grid, lambda, e, Some(&h))?;
    periodic_principal_eigenpair(&op, opts)
}

fn node_of(grid: &PeriodicGrid, x: &[f64]) -> usize {
    let mut j = [0usize; MAX_DIM];
    for l in 0..grid.dim() {
        let n = grid.points_per_axis()[l];
        j[l] = ((x[l] * n as f64).round() as i64).rem_euclid(n as i64) as usize;
    }
    grid.index(&j[..grid.dim()])
}

fn compute_fields(
    model: &ModelSpec,
    e: &[f64],
    grid: &PeriodicGrid,
    specs: &[FieldSpec],
    opts: &EigenOptions,
) -> Result<(Vec<Vec<f64>>, Vec<EigenPair>)> {
    let mut fields = Vec::with_capacity(specs.len());
    let mut pairs = Vec::new();
    for spec in specs {
        match *spec {
            FieldSpec::Eigen { lambda } => {
                let p = eigen_on(model, e, lambda, grid, opts)?;
                fields.push(p.eigenfunction.clone());
                pairs.push(p);
            }
            FieldSpec::Derivative { lambda, step, pin } => {
                let base = eigen_on(model, e, lambda, grid, opts)?;
                let plus = eigen_on(model, e, lambda + step, grid, opts)?;
                let minus = eigen_on(model, e, lambda - step, grid, opts)?;
                let node = node_of(grid, &pin[..grid.dim()]);
                let d = model.components();
                let m = grid.len();
                let mut spread: f64 = 0.0;
                let mut field = vec![0.0; d * m];
                for comp in 0..d {
                    let k = comp * m + node;
                    let sp = base.eigenfunction[k] / plus.eigenfunction[k];
                    let sm = base.eigenfunction[k] / minus.eigenfunction[k];
                    for p in 0..m {
                        let q = comp * m + p;
                        let (a, b) = (sp * plus.eigenfunction[q], sm * minus.eigenfunction[q]);
                        spread = spread.max((a / b - 1.0).abs());
                        field[q] = (a - b) / (2.0 * step);
                    }
                }
                if spread > 0.5 {
                    return Err(Error::EigenDerivativeUnstable { spread });
                }
                fields.push(field);
            }
        }
    }
    Ok((fields, pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierOptions {
    pub eigen: EigenOptions,
    /// Run `verify_barrier` after construction and grow constants on failure.
    pub validate: bool,
    pub max_doublings: usize,
    pub window: Option<VerifyWindow>,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            eigen: EigenOptions::default(),
            validate: true,
            max_doublings: 8,
            window: None,
        }
    }
}

fn require_sublinear(model: &ModelSpec) -> Result<()> {
    let report = check_structure(model, &SamplePlan::dense(model.dim()))?;
    if !report.sublinear {
        return Err(Error::HypothesisUnmet(
            "reaction is not dominated by its linearization at 0".into(),
        ));
    }
    Ok(())
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// `exp(-lambda_c s) phi_{lambda_c}`, any `c >= c*`.
pub fn build_super_h(model: &ModelSpec, e: &[f64], c: f64, grid: &PeriodicGrid) -> Result<BarrierFunction> {
    let opts = BarrierOptions::default();
    let speed = minimal_speed(model, e, grid, &opts.eigen)?;
    build_super_h_with(model, &speed, c, grid, &opts)
}

pub fn build_super_h_with(
    model: &ModelSpec,
    speed: &SpeedResult,
    c: f64,
    grid: &PeriodicGrid,
    opts: &BarrierOptions,
) -> Result<BarrierFunction> {
    require_sublinear(model)?;
    let roots = characteristic_roots_with(model, speed, c, grid, &opts.eigen)?;
    let lambda = roots.decay_rate().ok_or(Error::SpeedBelowMinimal {
        c,
        c_star: speed.c_star,
    })?;
    let g = guarded_grid(model, &speed.direction, lambda, grid, &opts.eigen)?;
    let specs = vec![FieldSpec::Eigen { lambda }];
    let (fields, eigenpairs) = compute_fields(model, &speed.direction, &g, &specs, &opts.eigen)?;
    let b = BarrierFunction {
        kind: BarrierKind::SuperH,
        speed: c,
        direction: speed.direction.clone(),
        constants: BarrierConstants {
            lambda,
            ..Default::default()
        },
        eta_hat: model.eta_hat(),
        eigenpairs,
        grid: g,
        components: model.components(),
        specs,
        fields,
        terms: vec![Term {
            coef: 1.0,
            power: 0,
            rate: lambda,
            field: 0,
        }],
        cut: None,
    };
    if opts.validate {
        check_valid(model, &b, opts)?;
    }
    Ok(b)
}

/// `exp(-lambda_c s) phi_{lambda_c} - K exp(-(lambda_c + delta) s) phi_{lambda_c + delta}`, `c > c*`.
pub fn build_sub_omega(model: &ModelSpec, e: &[f64], c: f64, grid: &PeriodicGrid) -> Result<BarrierFunction> {
    let opts = BarrierOptions::default();
    let speed = minimal_speed(model, e, grid, &opts.eigen)?;
    build_sub_omega_with(model, &speed, c, grid, &opts)
}

pub fn build_sub_omega_with(
    model: &ModelSpec,
    speed: &SpeedResult,
    c: f64,
    grid: &PeriodicGrid,
    opts: &BarrierOptions,
) -> Result<BarrierFunction> {
    let (lc, lp) = match characteristic_roots_with(model, speed, c, grid, &opts.eigen)? {
        CharacteristicRoots::Two {
            lambda_minus,
            lambda_plus,
        } => (lambda_minus, lambda_plus),
        _ => {
            return Err(Error::SpeedNotSupercritical {
                c,
                c_star: speed.c_star,
            })
        }
    };
    let gap = lp - lc;
    if gap < 1e-8 {
        return Err(Error::DegenerateDelta { gap });
    }
    let reg = model.regularity();
    let delta = 0.5 * (reg.beta * lc).min(gap);
    let e = &speed.direction;
    let g = guarded_grid(model, e, lc + delta, grid, &opts.eigen)?;
    let specs = vec![FieldSpec::Eigen { lambda: lc }, FieldSpec::Eigen { lambda: lc + delta }];
    let (fields, eigenpairs) = compute_fields(model, e, &g, &specs, &opts.eigen)?;
    let a0 = min_of(&fields[0]);
    let b0 = min_of(&fields[1]);
    let r_delta = c * (lc + delta) + eigenpairs[1].value;
    if !(r_delta > 0.0) {
        return Err(Error::DegenerateDelta { gap: r_delta });
    }
    let q = delta / lc;
    let rho = lc / (lc + delta);
    let k1 = (1.0 / b0) * (1.0 / reg.sigma).powf(q) * (rho.powf(1.0 / q) - rho.powf((lc + delta) / delta)).powf(q);
    // The bound on the negative part needs the 1/b0 prefactor as well.
    let k2 = (1.0 / b0) * ((1.0 - a0 * b0) / (reg.sigma * b0)).max(0.0).powf(q);
    let k_min = k1.max(k2).max(1.0 / b0).max(reg.m / (b0 * r_delta));
    let mut b = BarrierFunction {
        kind: BarrierKind::SubOmega,
        speed: c,
        direction: e.clone(),
        constants: BarrierConstants {
            lambda: lc,
            delta: Some(delta),
            k: Some(1.01 * k_min),
            a0: Some(a0),
            b0: Some(b0),
            k1: Some(k1),
            k2: Some(k2),
            r_delta: Some(r_delta),
            ..Default::default()
        },
        eta_hat: model.eta_hat(),
        eigenpairs,
        grid: g,
        components: model.components(),
        specs,
        fields,
        terms: Vec::new(),
        cut: None,
    };
    let set_terms = |b: &mut BarrierFunction| {
        let k = b.constants.k.unwrap();
        b.terms = vec![
            Term {
                coef: 1.0,
                power: 0,
                rate: lc,
                field: 0,
            },
            Term {
                coef: -k,
                power: 0,
                rate: lc + delta,
                field: 1,
            },
        ];
    };
    set_terms(&mut b);
    if !opts.validate {
        return Ok(b);
    }
    let mut last = None;
    for attempt in 0..=opts.max_doublings {
        match check_valid(model, &b, opts) {
            Ok(()) => return Ok(b),
            Err(err @ Error::BarrierInvalid { .. }) if attempt < opts.max_doublings => {
                last = Some(err);
                b.constants.k = b.constants.k.map(|k| 2.0 * k);
                b.constants.doublings += 1;
                set_terms(&mut b);
            }
            Err(err) => return Err(err),
        }
    }
    Err(last.unwrap_or(Error::WindowOutsideValidity))
}

/// `max_{s >= s_lo} |(a s + b) exp(-lambda s)|`, attained at `s_lo` or at the critical point.
fn sup_abs_affine_exp(a: f64, b: f64, lambda: f64, s_lo: f64) -> f64 {
    let g = |s: f64| ((a * s + b) * (-lambda * s).exp()).abs();
    let mut best = g(s_lo);
    if a != 0.0 {
        let sc = 1.0 / lambda - b / a;
        if sc > s_lo {
            best = best.max(g(sc));
        }
    }
    best
}

/// Critical-speed constants derived from the eigen-fields and given `K`, `s0` floors.
struct Critical {
    lambda: f64,
    delta: f64,
    r_delta: f64,
    k: f64,
    s0: f64,
    w_bar: f64,
    c1: f64,
    c2: f64,
    kappa1: f64,
    kappa2: f64,
    m1: f64,
    m2: f64,
    m: f64,
    gamma_hat: f64,
}

fn critical_constants(
    model: &ModelSpec,
    fields: &[Vec<f64>],
    lambda: f64,
    delta: f64,
    r_delta: f64,
    k_floor: f64,
    s0_floor: f64,
) -> Result<Critical> {
    let reg = model.regularity();
    let (phi, phi_d, dphi) = (&fields[0], &fields[1], &fields[2]);
    let min_phi = min_of(phi);
    let max_phi_d = max_of(phi_d);
    // K-choice: max phi_{lambda+delta} - d_lambda phi <= K min phi, with margin.
    let k_need = dphi.iter().map(|d| max_phi_d - d).fold(f64::NEG_INFINITY, f64::max) / min_phi;
    let k = k_floor.max(1.05 * k_need.max(0.0) + 1e-3);

    // s0 from the sandwich exp(-delta s) <= s phi - dphi - K phi <= 2 s.
    let mut s0 = s0_floor.max(1e-3);
    for (p, d) in phi.iter().zip(dphi) {
        let (a, b) = (*p, -d - k * p);
        s0 = s0.max(b / (2.0 - a));
        let lower = |s: f64| Ok(a * s + b - (-delta * s).exp());
        if lower(s0)? < 0.0 {
            let mut hi = 2.0 * s0 + 1.0;
            while lower(hi)? < 0.0 {
                hi *= 2.0;
            }
            s0 = bisect(lower, s0, hi, 1e-12 * hi)? * (1.0 + 1e-9);
        }
    }

    let w_bar = phi
        .iter()
        .zip(dphi)
        .map(|(p, d)| sup_abs_affine_exp(*p, -d - k * p, lambda, 0.0))
        .fold(0.0, f64::max);

    let beta = reg.beta;
    let inv_r = -1.0 / r_delta;
    let mu = beta * lambda - delta;
    let p = 1.0 + beta;
    let s_peak = (p / mu).max(s0);
    let c1 = inv_r * 4f64.powf(p) * reg.m * s_peak.powf(p) * (-mu * s_peak).exp();
    let c2 = inv_r * reg.m * (1.0 + w_bar).powf(p) * ((lambda + delta) * s0).exp();
    let cc = c1.max(c2);
    let kappa2 = (reg.sigma / (1.0 + w_bar)).min(cc.powf(-1.0 / beta));
    let kappa1 = (cc * kappa2.powf(p)).min(kappa2);

    let m1 = (kappa1 * max_phi_d / min_phi - kappa2 * k).max(0.0);
    let m2 = (kappa2 * max_of(dphi) / min_phi).max(0.0);
    let m = m1.max(m2) + 1.0;
    let sup_h = phi
        .iter()
        .zip(dphi)
        .map(|(p, d)| sup_abs_affine_exp(kappa2 * p, m * p - kappa2 * d, lambda, 0.0))
        .fold(0.0, f64::max);
    let gamma_hat = 1f64
        .max(sup_h / model.eta_hat())
        .max(1.0 + kappa2 / (std::f64::consts::E * lambda));
    Ok(Critical {
        lambda,
        delta,
        r_delta,
        k,
        s0,
        w_bar,
        c1,
        c2,
        kappa1,
        kappa2,
        m1,
        m2,
        m,
        gamma_hat,
    })
}

fn critical_barriers(
    model: &ModelSpec,
    speed: &SpeedResult,
    template: (&PeriodicGrid, &[FieldSpec], &[Vec<f64>], &[EigenPair]),
    cr: &Critical,
    doublings: usize,
) -> (BarrierFunction, BarrierFunction) {
    let (grid, specs, fields, pairs) = template;
    let l = cr.lambda;
    let constants = BarrierConstants {
        lambda: l,
        delta: Some(cr.delta),
        k: Some(cr.k),
        r_delta: Some(cr.r_delta),
        kappa1: Some(cr.kappa1),
        kappa2: Some(cr.kappa2),
        s0: Some(cr.s0),
        w_bar: Some(cr.w_bar),
        c1: Some(cr.c1),
        c2: Some(cr.c2),
        m1: Some(cr.m1),
        m2: Some(cr.m2),
        m_crit: Some(cr.m),
        gamma_hat: Some(cr.gamma_hat),
        doublings,
        ..Default::default()
    };
    let t = |coef, power, rate, field| Term {
        coef,
        power,
        rate,
        field,
    };
    let base = BarrierFunction {
        kind: BarrierKind::SubOmegaStar,
        speed: speed.c_star,
        direction: speed.direction.clone(),
        constants,
        eta_hat: model.eta_hat(),
        eigenpairs: pairs.to_vec(),
        grid: grid.clone(),
        components: model.components(),
        specs: specs.to_vec(),
        fields: fields.to_vec(),
        terms: Vec::new(),
        cut: None,
    };
    let sub = BarrierFunction {
        terms: vec![
            t(cr.kappa1, 0, l + cr.delta, 1),
            t(cr.kappa2, 1, l, 0),
            t(-cr.kappa2, 0, l, 2),
            t(-cr.kappa2 * cr.k, 0, l, 0),
        ],
        cut: Some(Cut {
            strict: true,
            value: 0.0,
        }),
        ..base.clone()
    };
    let sup = BarrierFunction {
        kind: BarrierKind::SuperHStar,
        terms: vec![t(cr.m, 0, l, 0), t(cr.kappa2, 1, l, 0), t(-cr.kappa2, 0, l, 2)],
        cut: Some(Cut {
            strict: false,
            value: model.eta_hat(),
        }),
        ..base
    };
    (sub, sup)
}

/// The critical pair `(omega*, h*)` at `c = c*`.
pub fn build_critical_pair(
    model: &ModelSpec,
    e: &[f64],
    grid: &PeriodicGrid,
) -> Result<(BarrierFunction, BarrierFunction)> {
    let opts = BarrierOptions::default();
    let speed = minimal_speed(model, e, grid, &opts.eigen)?;
    build_critical_pair_with(model, &speed, grid, &opts)
}

pub fn build_critical_pair_with(
    model: &ModelSpec,
    speed: &SpeedResult,
    grid: &PeriodicGrid,
    opts: &BarrierOptions,
) -> Result<(BarrierFunction, BarrierFunction)> {
    require_sublinear(model)?;
    let reg = model.regularity();
    let l = speed.lambda_star;
    let delta = 0.5 * reg.beta * l;
    let step = 1e-4 * (1.0 + l);
    let e = &speed.direction;
    let g = guarded_grid(model, e, l + delta, grid, &opts.eigen)?;
    let star = eigen_on(model, e, l, &g, &opts.eigen)?;
    let argmax = star
        .eigenfunction
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b })
        .0;
    let pin = g.point(argmax % g.len());
    let specs = vec![
        FieldSpec::Eigen { lambda: l },
        FieldSpec::Eigen { lambda: l + delta },
        FieldSpec::Derivative { lambda: l, step, pin },
    ];
    let (fields, pairs) = compute_fields(model, e, &g, &specs, &opts.eigen)?;
    let r_delta = (l + delta) * speed.c_star + pairs[1].value;
    if !(r_delta < 0.0) {
        return Err(Error::DegenerateDelta { gap: r_delta });
    }
    let mut cr = critical_constants(model, &fields, l, delta, r_delta, 0.0, 0.0)?;
    let template = (&g, specs.as_slice(), fields.as_slice(), pairs.as_slice());
    let mut pair = critical_barriers(model, speed, template, &cr, 0);
    if !opts.validate {
        return Ok(pair);
    }
    let mut last = None;
    for attempt in 0..=opts.max_doublings {
        let res = check_valid(model, &pair.0, opts).and_then(|_| check_valid(model, &pair.1, opts));
        match res {
            Ok(()) => return Ok(pair),
            Err(err @ Error::BarrierInvalid { .. }) if attempt < opts.max_doublings => {
                last = Some(err);
                cr = critical_constants(model, &fields, l, delta, r_delta, 2.0 * cr.k, 2.0 * cr.s0)?;
                pair = critical_barriers(model, speed, template, &cr, attempt + 1);
            }
            Err(err) => return Err(err),
        }
    }
    Err(last.unwrap_or(Error::WindowOutsideValidity))
}

fn check_valid(model: &ModelSpec, b: &BarrierFunction, opts: &BarrierOptions) -> Result<()> {
    let window = opts.window.clone().unwrap_or_else(|| VerifyWindow::default_for(b));
    let report = verify_barrier_with(model, b, &window, &opts.eigen)?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::BarrierInvalid {
            kind: b.kind.name().into(),
            violation: report.max_violation,
            tol: report.tol_fd,
        })
    }
}

impl BarrierFunction {
    /// Start of the region where every component is positive, from nodal
    /// extremes of the fields (0 for the supersolutions).
    pub fn positivity_onset(&self) -> f64 {
        let c = &self.constants;
        match self.kind {
            BarrierKind::SuperH | BarrierKind::SuperHStar => 0.0,
            BarrierKind::SubOmega => {
                let ratio = c.k.unwrap() * max_of(&self.fields[1]) / min_of(&self.fields[0]);
                (ratio.max(1.0).ln() / c.delta.unwrap()).max(0.0)
            }
            BarrierKind::SubOmegaStar => c.s0.unwrap(),
        }
    }
}

/// Sample box for verification: grid nodes with `x` in `[lo, hi]` at each time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyWindow {
    pub times: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Multiplier on the Richardson error estimate.
    pub safety: f64,
}

impl VerifyWindow {
    pub fn new(times: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self {
            times,
            lo,
            hi,
            safety: 2.0,
        }
    }

    /// Window around the transition of `b`: from about two decay lengths
    /// behind the front to eight decay lengths past where it turns positive.
    pub fn default_for(b: &BarrierFunction) -> Self {
        let l = b.constants.lambda;
        let on = b.positivity_onset();
        Self::along(&b.direction, on.min(0.0) - 2.0 / l, on + 8.0 / l, vec![0.0, 0.5, 1.0])
    }

    /// Box covering `x.e in [s_lo, s_hi]` along the dominant axis of `e`,
    /// one cell wide across it.
    pub fn along(e: &[f64], s_lo: f64, s_hi: f64, times: Vec<f64>) -> Self {
        let j = (0..e.len()).fold(0, |b, l| if e[l].abs() > e[b].abs() { l } else { b });
        let mut lo = vec![0.0; e.len()];
        let mut hi = vec![1.0; e.len()];
        let (a, b) = (s_lo / e[j], s_hi / e[j]);
        lo[j] = a.min(b);
        hi[j] = a.max(b);
        Self::new(times, lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolatingPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub component: usize,
    pub residual: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStat {
    pub spacing: f64,
    pub max_violation: f64,
    /// Largest `|R_h - R_{h/2}|` over checked points.
    pub max_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierReport {
    pub kind: BarrierKind,
    pub constants: BarrierConstants,
    /// Worst signed violation on the base grid (0 when the inequality holds).
    pub max_violation: f64,
    /// Largest pointwise discretization tolerance on the base grid.
    pub tol_fd: f64,
    /// `tol_fd(h) / tol_fd(h/2)`; about 4 for a second-order stencil.
    pub refinement_ratio: f64,
    pub levels: Vec<LevelStat>,
    pub points: usize,
    pub violating_points: Vec<ViolatingPoint>,
    pub passed: bool,
}

/// Checks the barrier's differential inequality with default eigen options.
pub fn verify_barrier(model: &ModelSpec, barrier: &BarrierFunction, window: &VerifyWindow) -> Result<BarrierReport> {
    verify_barrier_with(model, barrier, window, &EigenOptions::default())
}

/// Nodal residual `d_t w + L w - f(x, w)` on the base grid and two
/// refinements. The pointwise tolerance is the Richardson estimate
/// `safety * 4/3 |R_h - R_{h/2}|` plus a rounding floor.
pub fn verify_barrier_with(
    model: &ModelSpec,
    barrier: &BarrierFunction,
    window: &VerifyWindow,
    opts: &EigenOptions,
) -> Result<BarrierReport> {
    let n = model.dim();
    if window.lo.len() != n || window.hi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: window.lo.len(),
        });
    }
    let levels = [
        barrier.clone(),
        barrier.on_grid(model, &barrier.grid.refined(2), opts)?,
        barrier.on_grid(model, &barrier.grid.refined(4), opts)?,
    ];
    let ppa = barrier.grid.points_per_axis();
    let mut ranges = Vec::with_capacity(n);
    for l in 0..n {
        let nl = ppa[l] as f64;
        let a = (window.lo[l] * nl).ceil() as i64;
        let b = (window.hi[l] * nl).floor() as i64;
        if b < a {
            return Err(Error::WindowOutsideValidity);
        }
        ranges.push((a, b));
    }
    let mut nodes: Vec<(f64, [i64; MAX_DIM])> = Vec::new();
    for &t in &window.times {
        let mut j = [0i64; MAX_DIM];
        for l in 0..n {
            j[l] = ranges[l].0;
        }
        loop {
            nodes.push((t, j));
            let mut l = 0;
            loop {
                if l == n {
                    break;
                }
                j[l] += 1;
                if j[l] <= ranges[l].1 {
                    break;
                }
                j[l] = ranges[l].0;
                l += 1;
            }
            if l == n {
                break;
            }
        }
    }

    let d = model.components();
    let results: Vec<Option<[Vec<(f64, f64)>; 3]>> = nodes
        .par_iter()
        .map(|(t, j)| {
            let mut out: [Vec<(f64, f64)>; 3] = Default::default();
            for (lev, b) in levels.iter().enumerate() {
                let scale = 1i64 << lev;
                let mut jj = [0i64; MAX_DIM];
                for l in 0..n {
                    jj[l] = j[l] * scale;
                }
                out[lev] = nodal_residual(model, b, *t, &jj[..n])?;
            }
            Some(out)
        })
        .collect();

    let sub = barrier.kind.is_sub();
    let signed = |r: f64| if sub { r } else { -r };
    let mut points = 0;
    let mut max_violation: f64 = 0.0;
    let mut tol_fd: f64 = 0.0;
    let mut change = [0.0f64; 2];
    let mut viol = [0.0f64; 3];
    let mut violating = Vec::new();
    let mut passed = true;
    for ((t, j), res) in nodes.iter().zip(&results) {
        let Some(res) = res else { continue };
        points += 1;
        for i in 0..d {
            let (r0, f0) = res[0][i];
            let (r1, f1) = res[1][i];
            let (r2, _) = res[2][i];
            change[0] = change[0].max((r0 - r1).abs());
            change[1] = change[1].max((r1 - r2).abs());
            for (lev, v) in viol.iter_mut().enumerate() {
                *v = v.max(signed(res[lev][i].0).max(0.0));
            }
            let tol = window.safety * (4.0 / 3.0) * (r0 - r1).abs() + f0.max(f1);
            tol_fd = tol_fd.max(tol);
            let v = signed(r0);
            max_violation = max_violation.max(v.max(0.0));
            if v > tol {
                passed = false;
                if violating.len() < 100 {
                    violating.push(ViolatingPoint {
                        t: *t,
                        x: (0..n).map(|l| j[l] as f64 / ppa[l] as f64).collect(),
                        component: i,
                        residual: r0,
                        tol,
                    });
                }
            }
        }
    }
    if points == 0 {
        return Err(Error::WindowOutsideValidity);
    }
    let refinement_ratio = if change[1] > 0.0 {
        change[0] / change[1]
    } else {
        f64::INFINITY
    };
    let level_stats = levels
        .iter()
        .enumerate()
        .map(|(lev, b)| LevelStat {
            spacing: b.grid.spacing(0),
            max_violation: viol[lev],
            max_change: if lev < 2 { change[lev] } else { f64::NAN },
        })
        .collect();
    Ok(BarrierReport {
        kind: barrier.kind,
        constants: barrier.constants.clone(),
        max_violation,
        tol_fd,
        refinement_ratio,
        levels: level_stats,
        points,
        violating_points: violating,
        passed,
    })
}

/// Per-component `(residual, rounding floor)` at lattice node `j`, or `None`
/// when some stencil point leaves the validity region.
fn nodal_residual(model: &ModelSpec, b: &BarrierFunction, t: f64, j: &[i64]) -> Option<Vec<(f64, f64)>> {
    let n = j.len();
    let d = b.components;
    let mut x = [0.0; MAX_DIM];
    let mut h = [0.0; MAX_DIM];
    for l in 0..n {
        let nl = b.grid.points_per_axis()[l] as f64;
        x[l] = j[l] as f64 / nl;
        h[l] = 1.0 / nl;
    }
    let xs = &x[..n];
    let inside = |w: &[f64], s: f64| -> bool {
        let smooth = b.on_smooth_branch(s);
        match b.kind {
            BarrierKind::SuperH => true,
            BarrierKind::SuperHStar => smooth,
            BarrierKind::SubOmega => w.iter().any(|v| *v > 0.0),
            BarrierKind::SubOmegaStar => smooth && w.iter().any(|v| *v > 0.0),
        }
    };
    let mut buf = vec![0.0; d];
    let mut value = |off: &[i64], out: &mut Vec<f64>| -> bool {
        let mut jj = [0i64; MAX_DIM];
        for l in 0..n {
            jj[l] = j[l] + off[l];
        }
        let s = b.node_into(t, &jj[..n], false, &mut buf);
        out.clear();
        out.extend_from_slice(&buf);
        inside(&buf, s)
    };

    let mut w0 = Vec::with_capacity(d);
    if !value(&[0; MAX_DIM][..n], &mut w0) {
        return None;
    }
    let mut dt = vec![0.0; d];
    b.node_into(t, j, true, &mut dt);
    dt.iter_mut().for_each(|v| *v *= -b.speed);

    let mut a = vec![0.0; n * n];
    let mut q = vec![0.0; n];
    let mut lw = vec![0.0; d];
    let mut magnitude = vec![0.0; d];
    let mut wp = Vec::with_capacity(d);
    let mut wm = Vec::with_capacity(d);
    let mut wc = Vec::with_capacity(d);
    let mut off: [i64; MAX_DIM];
    for i in 0..d {
        model.diffusion_into(i, xs, &mut a);
        model.advection_into(i, xs, &mut q);
        for l in 0..n {
            off = [0; MAX_DIM];
            off[l] = 1;
            if !value(&off[..n], &mut wp) {
                return None;
            }
            off[l] = -1;
            if !value(&off[..n], &mut wm) {
                return None;
            }
            let all = a[l * n + l] / (h[l] * h[l]);
            lw[i] += -all * (wp[i] - 2.0 * w0[i] + wm[i]) + q[l] * (wp[i] - wm[i]) / (2.0 * h[l]);
            magnitude[i] += (4.0 * all + q[l].abs() / h[l]) * wp[i].abs().max(wm[i].abs()).max(w0[i].abs());
        }
        for l in 0..n {
            for k in (l + 1)..n {
                let alk = a[l * n + k];
                if alk == 0.0 {
                    continue;
                }
                let c = 2.0 * alk / (4.0 * h[l] * h[k]);
                for (sl, sk, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                    off = [0; MAX_DIM];
                    off[l] = sl;
                    off[k] = sk;
                    if !value(&off[..n], &mut wc) {
                        return None;
                    }
                    lw[i] -= sign * c * wc[i];
                    magnitude[i] += c.abs() * wc[i].abs();
                }
            }
        }
    }
    let mut f = vec![0.0; d];
    model.reaction_into(xs, &w0, &mut f);
    Some(
        (0..d)
            .map(|i| {
                let r = dt[i] + lw[i] - f[i];
                let floor = 1e3 * f64::EPSILON * (magnitude[i] + dt[i].abs() + f[i].abs());
                (r, floor)
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Builtin;

    fn kpp() -> ModelSpec {
        Builtin::ScalarKpp {
            r: 1.0,
            diffusion: vec![1.0],
            dim: 1,
        }
        .build()
        .unwrap()
    }

    fn grid() -> PeriodicGrid {
        PeriodicGrid::uniform(1, 16).unwrap()
    }

    #[test]
    fn super_h_kpp_values() {
        let h = build_super_h(&kpp(), &[1.0], 2.5, &grid()).unwrap();
        assert!((h.constants.lambda - 0.5).abs() < 1e-9);
        assert!((h.eval(0.0, &[0.0])[0] - 1.0).abs() < 1e-12);
        assert!((h.eval(0.0, &[10.0])[0] - (-5.0f64).exp()).abs() < 1e-9);
        // Pulsating identity with k = 3.
        let a = h.eval(0.3 + 3.0 / 2.5, &[0.7])[0];
        let b = h.eval(0.3, &[0.7 - 3.0])[0];
        assert!((a - b).abs() < 1e-12 * b);
    }

    #[test]
    fn super_h_below_minimal_speed() {
        let err = build_super_h(&kpp(), &[1.0], 1.5, &grid()).unwrap_err();
        assert!(matches!(err, Error::SpeedBelowMinimal { .. }));
    }

    #[test]
    fn sub_omega_kpp_constants() {
        let w = build_sub_omega(&kpp(), &[1.0], 2.5, &grid()).unwrap();
        let c = &w.constants;
        assert!((c.delta.unwrap() - 0.25).abs() < 1e-8);
        assert!((c.r_delta.unwrap() - 0.3125).abs() < 1e-8);
        let h = build_super_h(&kpp(), &[1.0], 2.5, &grid()).unwrap();
        for i in 0..200 {
            let x = -10.0 + 0.1 * i as f64;
            let (wv, hv) = (w.eval(0.2, &[x])[0], h.eval(0.2, &[x])[0]);
            assert!(wv <= hv);
            if x <= 0.5 {
                assert!(wv < 0.0, "omega({x}) = {wv}");
            }
            assert!(wv < 1.0);
        }
    }

    #[test]
    fn sub_omega_needs_supercritical_speed() {
        let err = build_sub_omega(&kpp(), &[1.0], 2.0, &grid()).unwrap_err();
        assert!(matches!(err, Error::SpeedNotSupercritical { .. }));
    }

    #[test]
    fn critical_pair_kpp_shape() {
        let (w, h) = build_critical_pair(&kpp(), &[1.0], &grid()).unwrap();
        let c = &w.constants;
        let (k1, k2, s0) = (c.kappa1.unwrap(), c.kappa2.unwrap(), c.s0.unwrap());
        assert!(0.0 < k1 && k1 <= k2);
        // At t = 0 the line s = 0 is x = 0.
        assert!(w.eval(0.0, &[0.0])[0] < 0.0);
        for i in 0..50 {
            let s = s0 + 0.5 * i as f64;
            assert!(w.eval(0.0, &[s])[0] > 0.0);
        }
        for i in 0..400 {
            let x = -5.0 + 0.1 * i as f64;
            assert!(h.eval(0.0, &[x])[0] > w.eval(0.0, &[x])[0]);
        }
        // Constant eigenfunctions: d_lambda phi vanishes and W ~ s e^{-s}.
        let s = 40.0;
        let lead = k2 * s * (-s).exp();
        assert!((w.eval(0.0, &[s])[0] / lead - 1.0).abs() < 0.05);
    }

    #[test]
    fn verify_detects_a_wrong_barrier() {
        let mut h = build_super_h(&kpp(), &[1.0], 2.5, &grid()).unwrap();
        // exp(-0.1 s) decays too slowly at c = 2.5 for a supersolution: k + c lambda < 0.
        h.terms[0].rate = 0.1;
        let window = VerifyWindow::new(vec![0.0], vec![10.0], vec![20.0]);
        let rep = verify_barrier(&kpp(), &h, &window).unwrap();
        assert!(!rep.passed);
        assert!(rep.max_violation > 0.05);
    }

    #[test]
    fn sup_affine_exp_matches_scan() {
        let (a, b, l) = (0.7, -1.3, 0.9);
        let scan = (0..200_000)
            .map(|i| {
                let s = i as f64 * 1e-4;
                ((a * s + b) * (-l * s).exp()).abs()
            })
            .fold(0.0, f64::max);
        assert!((sup_abs_affine_exp(a, b, l, 0.0) - scan).abs() < 1e-6);
    }
}
