//! Principal eigenpairs of cooperative, fully coupled periodic systems.
//!
//! The periodic solver is a shifted inverse iteration whose shift follows
//! the Collatz-Wielandt lower bound `min_i (B x)_i / x_i`. Every shift stays
//! below the principal eigenvalue, so `B - sigma I` remains a nonsingular
//! M-matrix with a nonnegative inverse and the iterates stay positive. The
//! lower and upper ratio bounds bracket the eigenvalue at every step and
//! double as the max-min certificate.

use rayon::prelude::*;
use serde::Serialize;

use crate::disc::{
    assemble_lambda_derivative, assemble_weighted, drift_ratio, DiscreteOperator, MatrixField, PeriodicGrid,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, CsrMatrix, TripletBuilder};
use crate::model::{ModelSpec, MAX_DIM};
use crate::optimize::{bisect, golden_section_min};
use crate::report::sig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenOptions {
    /// Relative width of the Collatz-Wielandt bracket at convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Grid doublings allowed by the drift guard.
    pub max_refine: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 200,
            max_refine: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenPair {
    pub value: f64,
    /// Component-major nodal values, `sup = 1`.
    pub eigenfunction: Vec<f64>,
    pub components: usize,
    pub grid: PeriodicGrid,
    pub lambda: f64,
    pub direction: Vec<f64>,
    pub min_value: f64,
    pub residual: f64,
    /// Max-min / min-max ratio bounds on the eigenvalue.
    pub bracket: (f64, f64),
    pub iterations: usize,
}

impl EigenPair {
    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let m = self.grid.len();
        &self.eigenfunction[i * m..(i + 1) * m]
    }

    /// Interpolated eigenfunction at an arbitrary point (wrapped into the cell).
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.grid.interpolate(self.component(i), x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.components];
        self.eval_into(x, &mut out);
        out
    }
}

struct Perron {
    value: f64,
    vector: Vec<f64>,
    bracket: (f64, f64),
    iterations: usize,
    residual: f64,
}

fn check_cooperative(matrix: &CsrMatrix, block: usize) -> Result<()> {
    for row in 0..matrix.dim() {
        for (col, v) in matrix.row(row) {
            if row / block != col / block && v > 0.0 {
                return Err(Error::NotCooperative { row, col, value: v });
            }
        }
    }
    Ok(())
}

fn ratio_bounds(matrix: &CsrMatrix, x: &[f64], bx: &mut [f64]) -> (f64, f64) {
    matrix.matvec(x, bx);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (b, v) in bx.iter().zip(x) {
        let r = b / v;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

fn perron(matrix: &CsrMatrix, opts: &EigenOptions) -> Result<Perron> {
    let n = matrix.dim();
    let mut x = vec![1.0; n];
    let mut bx = vec![0.0; n];
    let (mut lo, mut hi) = ratio_bounds(matrix, &x, &mut bx);
    let mut sigma = matrix.gershgorin_lower() - 1.0;
    let mut prev_gap = f64::INFINITY;
    let mut stalls = 0;
    for it in 1..=opts.max_iter {
        let gap = hi - lo;
        let scale = 1.0 + 0.5 * (lo + hi).abs();
        if gap <= opts.tol * scale || (stalls >= 3 && gap <= 1e-7 * scale) {
            let value = 0.5 * (lo + hi);
            let residual = bx
                .iter()
                .zip(&x)
                .fold(0.0f64, |m, (b, v)| m.max((b - value * v).abs()));
            return Ok(Perron {
                value,
                vector: x,
                bracket: (lo, hi),
                iterations: it - 1,
                residual,
            });
        }
        if gap >= 0.5 * prev_gap {
            stalls += 1;
        } else {
            stalls = 0;
        }
        prev_gap = prev_gap.min(gap);

        let lu = matrix.shifted(-sigma).lu()?;
        lu.solve_in_place(&mut x)?;
        let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::SignFailure { min });
        }
        let max = x.iter().cloned().fold(0.0, f64::max);
        x.iter_mut().for_each(|v| *v /= max);
        (lo, hi) = ratio_bounds(matrix, &x, &mut bx);
        if lo.is_finite() && hi.is_finite() {
            let margin = (hi - lo).max(1e-9 * (1.0 + lo.abs()));
            sigma = sigma.max(lo - margin);
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: hi - lo,
    })
}

/// Principal eigenpair of an assembled `L_{lambda e} - H`.
pub fn periodic_principal_eigenpair(op: &DiscreteOperator, opts: &EigenOptions) -> Result<EigenPair> {
    check_cooperative(&op.matrix, op.nodes())?;
    let p = perron(&op.matrix, opts)?;
    let min_value = p.vector.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(EigenPair {
        value: p.value,
        eigenfunction: p.vector,
        components: op.components,
        grid: op.grid.clone(),
        lambda: op.lambda,
        direction: op.direction.clone(),
        min_value,
        residual: p.residual,
        bracket: p.bracket,
        iterations: p.iterations,
    })
}

/// Grid on which the central drift stays dominated by diffusion for this
/// `lambda`, refining by doubling.
pub fn guarded_grid(
    model: &ModelSpec,
    e: &[f64],
    lambda: f64,
    grid: &PeriodicGrid,
    opts: &EigenOptions,
) -> Result<PeriodicGrid> {
    let mut g = grid.clone();
    for _ in 0..=opts.max_refine {
        let ratio = drift_ratio(model, &g, lambda, e);
        if ratio < 1.0 {
            return Ok(g);
        }
        g = g.refined(2);
    }
    Err(Error::GridTooCoarse(format!(
        "drift/diffusion ratio stays >= 1 at lambda = {lambda} after {} refinements",
        opts.max_refine
    )))
}

fn weighted_operator(
    model: &ModelSpec,
    e: &[f64],
    lambda: f64,
    grid: &PeriodicGrid,
    opts: &EigenOptions,
) -> Result<DiscreteOperator> {
    let g = guarded_grid(model, e, lambda, grid, opts)?;
    let h = MatrixField::linearization(model, &g);
    assemble_weighted(model, &g, lambda, e, Some(&h))
}

/// `k(lambda, e)` with `H = D_uf(x, 0)`.
pub fn k_of(model: &ModelSpec, e: &[f64], lambda: f64, grid: &PeriodicGrid, opts: &EigenOptions) -> Result<EigenPair> {
    let op = weighted_operator(model, e, lambda, grid, opts)?;
    periodic_principal_eigenpair(&op, opts)
}

/// `k(lambda, e)` together with `dk/dlambda` from the left Perron vector.
pub fn k_with_derivative(
    model: &ModelSpec,
    e: &[f64],
    lambda: f64,
    grid: &PeriodicGrid,
    opts: &EigenOptions,
) -> Result<(EigenPair, f64)> {
    let op = weighted_operator(model, e, lambda, grid, opts)?;
    let right = periodic_principal_eigenpair(&op, opts)?;
    let left = perron(&op.matrix.transpose(), opts)?;
    let db = assemble_lambda_derivative(model, &op.grid, lambda, e)?;
    let slope = dot(&left.vector, &db.mul_vec(&right.eigenfunction)) / dot(&left.vector, &right.eigenfunction);
    Ok((right, slope))
}

#[derive(Debug, Clone, Serialize)]
pub struct DispersionSample {
    pub lambda: f64,
    pub k: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DispersionCurve {
    pub direction: Vec<f64>,
    pub samples: Vec<DispersionSample>,
    pub grid: PeriodicGrid,
    pub options: EigenOptions,
}

impl DispersionCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,k,residual,iterations\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", sig(s.lambda), sig(s.k), sig(s.residual), s.iterations));
        }
        out
    }
}

/// Samples `k(lambda, e)` at strictly increasing `lambdas`, in parallel.
pub fn dispersion_curve(
    model: &ModelSpec,
    e: &[f64],
    lambdas: &[f64],
    grid: &PeriodicGrid,
    opts: &EigenOptions,
) -> Result<DispersionCurve> {
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("lambdas", "must be strictly increasing"));
    }
    let samples = lambdas
        .par_iter()
        .map(|&lambda| {
            k_of(model, e, lambda, grid, opts).map(|p| DispersionSample {
                lambda,
                k: p.value,
                residual: p.residual,
                iterations: p.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DispersionCurve {
        direction: e.to_vec(),
        samples,
        grid: grid.clone(),
        options: *opts,
    })
}

/// Dirichlet principal eigenpair of `L - H` on the discrete ball `|x| < R`.
#[derive(Debug, Clone, Serialize)]
pub struct DirichletEigenPair {
    pub value: f64,
    pub radius: f64,
    pub spacing: f64,
    /// Box nodes per axis; node `j` sits at `-R + j h`.
    pub box_points: usize,
    pub dim: usize,
    pub components: usize,
    /// Component-major values on the full box, zero outside the ball.
    pub eigenfunction: Vec<f64>,
    pub inside: Vec<bool>,
    pub min_interior: f64,
    pub residual: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
}

pub fn dirichlet_principal_eigenpair(
    model: &ModelSpec,
    radius: f64,
    resolution: f64,
    opts: &EigenOptions,
) -> Result<DirichletEigenPair> {
    if !(radius > 0.0) || !(resolution > 0.0) {
        return Err(Error::param("radius", "radius and resolution must be positive"));
    }
    let dim = model.dim();
    let d = model.components();
    let intervals = (2.0 * radius * resolution).round().max(4.0) as usize;
    let h = 2.0 * radius / intervals as f64;
    let nb = intervals + 1;
    let total = nb.pow(dim as u32);
    let coords = |mut idx: usize| {
        let mut m = [0usize; MAX_DIM];
        for slot in m.iter_mut().take(dim) {
            *slot = idx % nb;
            idx /= nb;
        }
        m
    };
    let point = |m: &[usize; MAX_DIM]| {
        let mut x = [0.0; MAX_DIM];
        for l in 0..dim {
            x[l] = -radius + m[l] as f64 * h;
        }
        x
    };
    let inside: Vec<bool> = (0..total)
        .map(|idx| {
            let x = point(&coords(idx));
            x[..dim].iter().map(|v| v * v).sum::<f64>().sqrt() < radius - 1e-12 * radius
        })
        .collect();
    let mut local = vec![usize::MAX; total];
    let mut count = 0;
    for idx in 0..total {
        if inside[idx] {
            local[idx] = count;
            count += 1;
        }
    }
    let lookup = |m: &[usize; MAX_DIM], shift: &[isize]| -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for l in 0..dim {
            let j = m[l] as isize + shift[l];
            if j < 0 || j >= nb as isize {
                return None;
            }
            idx += j as usize * stride;
            stride *= nb;
        }
        (local[idx] != usize::MAX).then_some(local[idx])
    };

    let mut tb = TripletBuilder::new(d * count);
    let mut a = vec![0.0; dim * dim];
    let mut q = vec![0.0; dim];
    let mut jac = vec![0.0; d * d];
    let zero = vec![0.0; d];
    for idx in 0..total {
        if !inside[idx] {
            continue;
        }
        let m = coords(idx);
        let x = point(&m);
        let xs = &x[..dim];
        let p = local[idx];
        model.jacobian_into(xs, &zero, &mut jac);
        for comp in 0..d {
            model.diffusion_into(comp, xs, &mut a);
            model.advection_into(comp, xs, &mut q);
            let row = comp * count + p;
            let mut diag = 0.0;
            let mut s = [0isize; MAX_DIM];
            for l in 0..dim {
                let all = a[l * dim + l] / (h * h);
                let adv = q[l] / (2.0 * h);
                diag += 2.0 * all;
                for (step, coef) in [(1isize, -all + adv), (-1, -all - adv)] {
                    s[l] = step;
                    if let Some(nbr) = lookup(&m, &s[..dim]) {
                        tb.push(row, comp * count + nbr, coef);
                    }
                }
                s[l] = 0;
            }
            for l in 0..dim {
                for k in (l + 1)..dim {
                    let c = 2.0 * a[l * dim + k] / (4.0 * h * h);
                    if c == 0.0 {
                        continue;
                    }
                    for (sl, sk, sign) in [(1, 1, -1.0), (1, -1, 1.0), (-1, 1, 1.0), (-1, -1, -1.0)] {
                        s[l] = sl;
                        s[k] = sk;
                        if let Some(nbr) = lookup(&m, &s[..dim]) {
                            tb.push(row, comp * count + nbr, sign * c);
                        }
                        s[l] = 0;
                        s[k] = 0;
                    }
                }
            }
            tb.push(row, row, diag);
            for j in 0..d {
                let v = jac[comp * d + j];
                if v != 0.0 {
                    tb.push(row, j * count + p, -v);
                }
            }
        }
    }
    let matrix = tb.build();
    check_cooperative(&matrix, count)?;
    let pr = perron(&matrix, opts)?;
    let mut eigenfunction = vec![0.0; d * total];
    for idx in 0..total {
        if inside[idx] {
            for comp in 0..d {
                eigenfunction[comp * total + idx] = pr.vector[comp * count + local[idx]];
            }
        }
    }
    let min_interior = pr.vector.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(DirichletEigenPair {
        value: pr.value,
        radius,
        spacing: h,
        box_points: nb,
        dim,
        components: d,
        eigenfunction,
        inside,
        min_interior,
        residual: pr.residual,
        bracket: pr.bracket,
        iterations: pr.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralizedEigenvalue {
    pub lambda_1: f64,
    pub lambda_bar: f64,
}

/// `lambda_1 = max_lambda k(lambda, e)` and its maximizer.
pub fn generalized_principal_eigenvalue(
    model: &ModelSpec,
    e: &[f64],
    grid: &PeriodicGrid,
    opts: &EigenOptions,
) -> Result<GeneralizedEigenvalue> {
    let k = |lambda: f64| k_of(model, e, lambda, grid, opts).map(|p| p.value);
    let k0 = k(0.0)?;
    let kp = k(1.0)?;
    let km = k(-1.0)?;
    if kp > k0 && km > k0 {
        return Err(Error::BracketFailure(format!(
            "k rises on both sides of 0 ({km:e}, {k0:e}, {kp:e}); not concave"
        )));
    }
    let (lo, hi) = if kp > k0 {
        expand(&k, 0.0, 1.0, kp)?
    } else if km > k0 {
        expand(&k, 0.0, -1.0, km)?
    } else {
        (-1.0, 1.0)
    };
    let (x, _, (a, b)) = golden_section_min(|l| k(l).map(|v| -v), lo.min(hi), lo.max(hi), 1e-5, 200)?;
    let slope = |l: f64| k_with_derivative(model, e, l, grid, opts).map(|(_, s)| s);
    let w = 2.0 * (b - a).max(1e-6);
    let lambda_bar = match bisect(slope, x - w, x + w, 1e-11) {
        Ok(root) => root,
        Err(Error::BracketFailure(_)) => x,
        Err(err) => return Err(err),
    };
    Ok(GeneralizedEigenvalue {
        lambda_1: k(lambda_bar)?,
        lambda_bar,
    })
}

/// Walks from `start` in steps that double until `k` decreases; returns the
/// outer points of a three-point bracket of the maximum.
fn expand<F: Fn(f64) -> Result<f64>>(k: &F, start: f64, step: f64, mut best: f64) -> Result<(f64, f64)> {
    let mut prev = start;
    let mut cur = start + step;
    let mut h = step;
    loop {
        h *= 2.0;
        let next = cur + h;
        if next.abs() > 1e3 {
            return Err(Error::BracketFailure("k keeps increasing beyond |lambda| = 1e3".into()));
        }
        let kn = k(next)?;
        if kn <= best {
            return Ok((prev, next));
        }
        best = kn;
        prev = cur;
        cur = next;
    }
}
