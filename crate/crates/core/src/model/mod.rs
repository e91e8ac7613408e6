//! Reaction-diffusion model descriptors.
//!
//! A [`ModelSpec`] bundles the periodic coefficient fields of the
//! nondivergence operators `L^i u = -tr(A^i D^2 u) + q^i . grad u`, the
//! nonlinearity `f(x, u)` with its Jacobian, and the structural constants
//! used by the barrier constructions (`eta_hat`, and `(sigma, beta, M)` of
//! the local Taylor bound `|f(x,u) - D_uf(x,0)u| <= M |u|^{1+beta}`).
//!
//! All fields are evaluated on wrapped coordinates, so every field is
//! 1-periodic on the lattice by construction.

mod builtin;
mod config;
mod structure;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub use builtin::Builtin;
pub use config::{ModelConfig, TabulatedModel};
pub use structure::{check_structure, SamplePlan, StructureReport, Witness};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// `(component, x, out)` with `out` the row-major `N x N` matrix `A^i(x)`.
pub type DiffusionFn = Arc<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>;
/// `(component, x, out)` with `out` the drift `q^i(x)` of length `N`.
pub type AdvectionFn = Arc<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>;
/// `(x, u, out)` with `out = f(x, u)`.
pub type ReactionFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(x, u, out)` with `out` the row-major `d x d` Jacobian `D_uf(x, u)`.
pub type JacobianFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Constants of the local Taylor bound on the nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regularity {
    pub sigma: f64,
    pub beta: f64,
    pub m: f64,
}

#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    components: usize,
    diffusion: DiffusionFn,
    advection: AdvectionFn,
    reaction: ReactionFn,
    jacobian: JacobianFn,
    analytic_jacobian: bool,
    homogeneous: bool,
    eta_hat: f64,
    regularity: Regularity,
    ellipticity: (f64, f64),
    lipschitz: f64,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("components", &self.components)
            .field("homogeneous", &self.homogeneous)
            .field("eta_hat", &self.eta_hat)
            .field("regularity", &self.regularity)
            .field("ellipticity", &self.ellipticity)
            .finish_non_exhaustive()
    }
}

#[inline]
pub(crate) fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[inline]
fn wrapped(x: &[f64]) -> [f64; MAX_DIM] {
    let mut out = [0.0; MAX_DIM];
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = wrap_unit(xi);
    }
    out
}

impl ModelSpec {
    pub fn builder(name: impl Into<String>, dim: usize, components: usize) -> ModelBuilder {
        ModelBuilder::new(name, dim, components)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn components(&self) -> usize {
        self.components
    }
    pub fn eta_hat(&self) -> f64 {
        self.eta_hat
    }
    pub fn regularity(&self) -> Regularity {
        self.regularity
    }
    /// Sampled bounds `(gamma_lo, gamma_hi)` on the eigenvalues of every `A^i(x)`.
    pub fn ellipticity(&self) -> (f64, f64) {
        self.ellipticity
    }
    /// Sampled bound on `|D_uf|_inf` over `[0, eta_hat]^d`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    /// True when no coefficient depends on `x`.
    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }
    pub fn has_analytic_jacobian(&self) -> bool {
        self.analytic_jacobian
    }

    pub fn diffusion_into(&self, comp: usize, x: &[f64], out: &mut [f64]) {
        let xw = wrapped(x);
        (self.diffusion)(comp, &xw[..self.dim], out)
    }

    pub fn advection_into(&self, comp: usize, x: &[f64], out: &mut [f64]) {
        let xw = wrapped(x);
        (self.advection)(comp, &xw[..self.dim], out)
    }

    pub fn reaction_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let xw = wrapped(x);
        (self.reaction)(&xw[..self.dim], u, out)
    }

    pub fn jacobian_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let xw = wrapped(x);
        (self.jacobian)(&xw[..self.dim], u, out)
    }

    pub fn diffusion(&self, comp: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.diffusion_into(comp, x, &mut out);
        out
    }

    pub fn advection(&self, comp: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.advection_into(comp, x, &mut out);
        out
    }

    pub fn reaction(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.components];
        self.reaction_into(x, u, &mut out);
        out
    }

    pub fn jacobian(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.components * self.components];
        self.jacobian_into(x, u, &mut out);
        out
    }

    /// `D_uf(x, 0)`, the linearization at the trivial state.
    pub fn linearization(&self, x: &[f64]) -> Vec<f64> {
        let zero = vec![0.0; self.components];
        self.jacobian(x, &zero)
    }
}

/// Regularly spaced points of the unit cell, `per_axis^dim` of them.
pub(crate) fn cell_points(dim: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            (0..dim)
                .map(|_| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    (i as f64 + 0.5) / per_axis as f64
                })
                .collect()
        })
        .collect()
}

fn finite_difference_jacobian(reaction: ReactionFn, components: usize) -> JacobianFn {
    Arc::new(move |x, u, out| {
        let d = components;
        let mut up = u.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for j in 0..d {
            let h = 1e-6 * (1.0 + u[j].abs());
            up[j] = u[j] + h;
            reaction(x, &up, &mut fp);
            up[j] = u[j] - h;
            reaction(x, &up, &mut fm);
            up[j] = u[j];
            for i in 0..d {
                out[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    })
}

pub struct ModelBuilder {
    name: String,
    dim: usize,
    components: usize,
    diffusion: Option<DiffusionFn>,
    advection: Option<AdvectionFn>,
    reaction: Option<ReactionFn>,
    jacobian: Option<JacobianFn>,
    homogeneous: bool,
    eta_hat: Option<f64>,
    regularity: Option<Regularity>,
}

impl ModelBuilder {
    fn new(name: impl Into<String>, dim: usize, components: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            components,
            diffusion: None,
            advection: None,
            reaction: None,
            jacobian: None,
            homogeneous: false,
            eta_hat: None,
            regularity: None,
        }
    }

    pub fn diffusion(mut self, f: DiffusionFn) -> Self {
        self.diffusion = Some(f);
        self
    }

    /// Constant diagonal diffusion matrices, one row of diagonal entries per component.
    pub fn constant_diagonal_diffusion(mut self, diag: Vec<Vec<f64>>) -> Self {
        let n = self.dim;
        self.diffusion = Some(Arc::new(move |comp, _x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for l in 0..n {
                out[l * n + l] = diag[comp][l];
            }
        }));
        self
    }

    pub fn advection(mut self, f: AdvectionFn) -> Self {
        self.advection = Some(f);
        self
    }

    pub fn reaction(mut self, f: ReactionFn) -> Self {
        self.reaction = Some(f);
        self
    }

    pub fn jacobian(mut self, f: JacobianFn) -> Self {
        self.jacobian = Some(f);
        self
    }

    pub fn homogeneous(mut self, yes: bool) -> Self {
        self.homogeneous = yes;
        self
    }

    pub fn eta_hat(mut self, value: f64) -> Self {
        self.eta_hat = Some(value);
        self
    }

    pub fn regularity(mut self, reg: Regularity) -> Self {
        self.regularity = Some(reg);
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let dim = self.dim;
        let d = self.components;
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::param("dim", format!("must lie in 1..={MAX_DIM}")));
        }
        if d == 0 {
            return Err(Error::param("components", "must be positive"));
        }
        let reaction = self
            .reaction
            .ok_or_else(|| Error::param("reaction", "missing"))?;
        let analytic_jacobian = self.jacobian.is_some();
        let jacobian = self
            .jacobian
            .unwrap_or_else(|| finite_difference_jacobian(reaction.clone(), d));
        let diffusion = self.diffusion.unwrap_or_else(|| {
            Arc::new(move |_c, _x, out: &mut [f64]| {
                out.iter_mut().for_each(|v| *v = 0.0);
                for l in 0..dim {
                    out[l * dim + l] = 1.0;
                }
            })
        });
        let advection = self
            .advection
            .unwrap_or_else(|| Arc::new(|_c, _x, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)));

        let mut spec = ModelSpec {
            name: self.name,
            dim,
            components: d,
            diffusion,
            advection,
            reaction,
            jacobian,
            analytic_jacobian,
            homogeneous: self.homogeneous,
            eta_hat: f64::NAN,
            regularity: Regularity {
                sigma: f64::NAN,
                beta: 1.0,
                m: f64::NAN,
            },
            ellipticity: (0.0, 0.0),
            lipschitz: 0.0,
        };

        let xs = cell_points(dim, if dim == 1 { 16 } else if dim == 2 { 8 } else { 5 });
        spec.ellipticity = audit_diffusion(&spec, &xs)?;
        audit_advection(&spec, &xs)?;
        audit_zero_state(&spec, &xs)?;

        spec.eta_hat = match self.eta_hat {
            Some(v) if v > 0.0 && v.is_finite() => v,
            Some(v) => return Err(Error::param("eta_hat", format!("must be positive, got {v}"))),
            None => bisect_eta_hat(&spec, &xs)?,
        };
        audit_upper_bound(&spec, &xs)?;
        spec.lipschitz = sampled_lipschitz(&spec, &xs)?;

        spec.regularity = match self.regularity {
            Some(r) => r,
            None => fit_regularity(&spec, &xs)?,
        };
        audit_regularity(&spec, &xs)?;
        Ok(spec)
    }
}

fn check_finite(what: &'static str, x: &[f64], u: &[f64], vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteEvaluation {
            what,
            x: x.to_vec(),
            u: u.to_vec(),
        })
    }
}

fn audit_diffusion(spec: &ModelSpec, xs: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n = spec.dim;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut a = vec![0.0; n * n];
    for comp in 0..spec.components {
        for x in xs {
            spec.diffusion_into(comp, x, &mut a);
            check_finite("diffusion", x, &[], &a)?;
            for l in 0..n {
                for m in 0..l {
                    if (a[l * n + m] - a[m * n + l]).abs() > 1e-12 * (1.0 + a[l * n + m].abs()) {
                        return Err(Error::param(
                            "diffusion",
                            format!("A^{comp}({x:?}) is not symmetric"),
                        ));
                    }
                }
            }
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &a)).eigenvalues;
            lo = lo.min(eig.min());
            hi = hi.max(eig.max());
        }
    }
    if lo <= 0.0 {
        return Err(Error::param(
            "diffusion",
            format!("not uniformly elliptic (smallest sampled eigenvalue {lo})"),
        ));
    }
    if hi / lo > 20.0 {
        log::warn!("strongly anisotropic diffusion: gamma_hi/gamma_lo = {}", hi / lo);
    }
    Ok((lo, hi))
}

fn audit_advection(spec: &ModelSpec, xs: &[Vec<f64>]) -> Result<()> {
    let mut q = vec![0.0; spec.dim];
    for comp in 0..spec.components {
        for x in xs {
            spec.advection_into(comp, x, &mut q);
            check_finite("advection", x, &[], &q)?;
        }
    }
    Ok(())
}

fn audit_zero_state(spec: &ModelSpec, xs: &[Vec<f64>]) -> Result<()> {
    let zero = vec![0.0; spec.components];
    for x in xs {
        let f = spec.reaction(x, &zero);
        check_finite("reaction", x, &zero, &f)?;
        if f.iter().any(|v| v.abs() > 1e-14) {
            return Err(Error::param("reaction", format!("f(x, 0) != 0 at x = {x:?}")));
        }
        let j = spec.jacobian(x, &zero);
        check_finite("jacobian", x, &zero, &j)?;
    }
    Ok(())
}

fn max_reaction_on_diagonal(spec: &ModelSpec, xs: &[Vec<f64>], s: f64) -> f64 {
    let u = vec![s; spec.components];
    xs.iter()
        .flat_map(|x| spec.reaction(x, &u))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest `s` (up to bisection accuracy) with `max_x max_i f_i(x, s 1) <= 0`.
fn bisect_eta_hat(spec: &ModelSpec, xs: &[Vec<f64>]) -> Result<f64> {
    let mut hi = 1.0;
    while max_reaction_on_diagonal(spec, xs, hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::param(
                "eta_hat",
                "no s > 0 with f(x, s 1) <= 0 found below 1e8",
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if max_reaction_on_diagonal(spec, xs, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

fn audit_upper_bound(spec: &ModelSpec, xs: &[Vec<f64>]) -> Result<()> {
    let worst = max_reaction_on_diagonal(spec, xs, spec.eta_hat);
    if worst > 1e-12 {
        return Err(Error::param(
            "eta_hat",
            format!("f(x, eta_hat 1) has a positive component ({worst:e})"),
        ));
    }
    Ok(())
}

fn sampled_lipschitz(spec: &ModelSpec, xs: &[Vec<f64>]) -> Result<f64> {
    let d = spec.components;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best: f64 = 0.0;
    let mut u = vec![0.0; d];
    for x in xs {
        for k in 0..24 {
            for ui in u.iter_mut() {
                *ui = if k == 0 {
                    0.0
                } else if k == 1 {
                    spec.eta_hat
                } else {
                    rng.random::<f64>() * spec.eta_hat
                };
            }
            let j = spec.jacobian(x, &u);
            check_finite("jacobian", x, &u, &j)?;
            for i in 0..d {
                let row: f64 = (0..d).map(|c| j[i * d + c].abs()).sum();
                best = best.max(row);
            }
        }
    }
    Ok(best)
}

/// Samples `u` with `|u|_inf <= sigma`, mixed signs, over several scales.
fn regularity_samples(d: usize, sigma: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for level in 0..8 {
        let t = sigma * 0.5f64.powi(level);
        for k in 0..12 {
            let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            if k == 0 {
                v.iter_mut().for_each(|x| *x = 1.0);
            } else if k == 1 {
                v.iter_mut().for_each(|x| *x = -1.0);
            }
            let m = v.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
            out.push(v.iter().map(|x| t * x / m).collect());
        }
    }
    out
}

fn taylor_remainder_ratio(spec: &ModelSpec, x: &[f64], u: &[f64], beta: f64) -> f64 {
    let d = spec.components;
    let f = spec.reaction(x, u);
    let j0 = spec.linearization(x);
    let norm = u.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if norm == 0.0 {
        return 0.0;
    }
    let rem = (0..d)
        .map(|i| {
            let lin: f64 = (0..d).map(|c| j0[i * d + c] * u[c]).sum();
            (f[i] - lin).abs()
        })
        .fold(0.0, f64::max);
    rem / norm.powf(1.0 + beta)
}

fn fit_regularity(spec: &ModelSpec, xs: &[Vec<f64>]) -> Result<Regularity> {
    let sigma = spec.eta_hat / 10.0;
    let beta = 1.0;
    let samples = regularity_samples(spec.components, sigma, 11);
    let mut m: f64 = 0.0;
    for x in xs {
        for u in &samples {
            m = m.max(taylor_remainder_ratio(spec, x, u, beta));
        }
    }
    Ok(Regularity {
        sigma,
        beta,
        m: 2.0 * m,
    })
}

fn audit_regularity(spec: &ModelSpec, xs: &[Vec<f64>]) -> Result<()> {
    let reg = spec.regularity;
    if !(reg.sigma > 0.0 && reg.sigma < spec.eta_hat) {
        return Err(Error::param("regularity.sigma", "must lie in (0, eta_hat)"));
    }
    if !(reg.beta > 0.0 && reg.beta <= 1.0) {
        return Err(Error::param("regularity.beta", "must lie in (0, 1]"));
    }
    if reg.m.is_nan() || reg.m < 0.0 {
        return Err(Error::param("regularity.m", "must be nonnegative"));
    }
    let samples = regularity_samples(spec.components, reg.sigma, 97);
    for x in xs {
        for u in &samples {
            let ratio = taylor_remainder_ratio(spec, x, u, reg.beta);
            let norm = u.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if ratio * norm.powf(1.0 + reg.beta) > reg.m * norm.powf(1.0 + reg.beta) + 1e-13 {
                return Err(Error::param(
                    "regularity",
                    format!("Taylor bound violated at x={x:?}, u={u:?} (ratio {ratio}, M {})", reg.m),
                ));
            }
        }
    }
    Ok(())
}

/// Random dyadic points of the unit cell; dyadic coordinates make lattice
/// shifts exact in floating point.
pub fn dyadic_points(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..dim)
                .map(|_| rng.random_range(0u32..(1 << 20)) as f64 / (1u32 << 20) as f64)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_handles_negative_and_integer_points() {
        assert_eq!(wrap_unit(-0.25), 0.75);
        assert_eq!(wrap_unit(3.0), 0.0);
        assert_eq!(wrap_unit(0.5), 0.5);
    }

    #[test]
    fn rejects_nonzero_reaction_at_zero() {
        let err = ModelSpec::builder("bad", 1, 1)
            .reaction(Arc::new(|_x, u, out| out[0] = 1.0 + u[0]))
            .eta_hat(1.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn rejects_degenerate_diffusion() {
        let err = ModelSpec::builder("flat", 1, 1)
            .constant_diagonal_diffusion(vec![vec![0.0]])
            .reaction(Arc::new(|_x, u, out| out[0] = u[0] * (1.0 - u[0])))
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { ref name, .. } if name == "diffusion"));
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        let m = ModelSpec::builder("kpp", 1, 1)
            .reaction(Arc::new(|_x, u, out| out[0] = u[0] * (1.0 - u[0])))
            .build()
            .unwrap();
        assert!(!m.has_analytic_jacobian());
        let j = m.jacobian(&[0.3], &[0.25]);
        assert!((j[0] - 0.5).abs() < 1e-8);
        assert!((m.eta_hat() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_reaction_is_reported() {
        let err = ModelSpec::builder("nan", 1, 1)
            .reaction(Arc::new(|_x, u, out| out[0] = if u[0] == 0.0 { 0.0 } else { f64::NAN }))
            .jacobian(Arc::new(|_x, _u, out| out[0] = f64::NAN))
            .eta_hat(1.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteEvaluation { .. }));
    }
}
