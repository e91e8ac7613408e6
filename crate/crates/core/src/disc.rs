//! Finite differences on the periodic unit cell.
//!
//! Unknowns are stored component-major: entry `i * M + p` is component `i`
//! at node `p`, with `M` the number of grid nodes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, TripletBuilder};
use crate::model::{ModelSpec, MAX_DIM};

/// Uniform grid of `[0,1)^N` with nodes at `x_l = j / n_l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct PeriodicGrid {
    n: Vec<usize>,
}

impl PeriodicGrid {
    pub fn new(points_per_axis: Vec<usize>) -> Result<Self> {
        if points_per_axis.is_empty() || points_per_axis.len() > MAX_DIM {
            return Err(Error::param("points_per_axis", format!("need 1..={MAX_DIM} axes")));
        }
        if let Some(&bad) = points_per_axis.iter().find(|&&k| k < 4) {
            return Err(Error::GridTooCoarse(format!("{bad} points on an axis (need >= 4)")));
        }
        Ok(Self { n: points_per_axis })
    }

    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.n
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        1.0 / self.n[axis] as f64
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Each axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n: self.n.iter().map(|k| k * factor).collect(),
        }
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (l, &j) in multi.iter().enumerate() {
            idx += (j % self.n[l]) * stride;
            stride *= self.n[l];
        }
        idx
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for (l, &k) in self.n.iter().enumerate() {
            out[l] = idx % k;
            idx /= k;
        }
        out
    }

    pub fn point(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(idx);
        let mut x = [0.0; MAX_DIM];
        for l in 0..self.dim() {
            x[l] = m[l] as f64 / self.n[l] as f64;
        }
        x
    }

    /// Node reached from `idx` by integer offsets along each axis, with wrap.
    pub fn offset(&self, idx: usize, shift: &[isize]) -> usize {
        let m = self.multi_index(idx);
        let mut idx = 0;
        let mut stride = 1;
        for l in 0..self.dim() {
            let k = self.n[l] as isize;
            let j = (m[l] as isize + shift.get(l).copied().unwrap_or(0)).rem_euclid(k);
            idx += j as usize * stride;
            stride *= self.n[l];
        }
        idx
    }

    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> usize {
        let mut shift = [0isize; MAX_DIM];
        shift[axis] = step;
        self.offset(idx, &shift[..self.dim()])
    }

    /// Periodic tensor-product cubic (4-point Lagrange) interpolation of a
    /// nodal field at an arbitrary point.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let dim = self.dim();
        let mut base = [0isize; MAX_DIM];
        let mut w = [[0.0f64; 4]; MAX_DIM];
        for l in 0..dim {
            let s = x[l] * self.n[l] as f64;
            let j = s.floor();
            let t = s - j;
            base[l] = j as isize - 1;
            w[l] = [
                -t * (t - 1.0) * (t - 2.0) / 6.0,
                (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
                -(t + 1.0) * t * (t - 2.0) / 2.0,
                (t + 1.0) * t * (t - 1.0) / 6.0,
            ];
        }
        let combos = 4usize.pow(dim as u32);
        let mut acc = 0.0;
        for c in 0..combos {
            let mut weight = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            let mut cc = c;
            for l in 0..dim {
                let o = cc % 4;
                cc /= 4;
                weight *= w[l][o];
                let k = self.n[l] as isize;
                idx += (base[l] + o as isize).rem_euclid(k) as usize * stride;
                stride *= self.n[l];
            }
            acc += weight * values[idx];
        }
        acc
    }
}

/// Nodal matrix field `H(x)` sampled on a grid, row-major `d x d` per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixField {
    pub components: usize,
    pub values: Vec<f64>,
}

impl MatrixField {
    pub fn zero(components: usize, nodes: usize) -> Self {
        Self {
            components,
            values: vec![0.0; components * components * nodes],
        }
    }

    pub fn constant(components: usize, nodes: usize, matrix: &[f64]) -> Self {
        assert_eq!(matrix.len(), components * components);
        Self {
            components,
            values: matrix.repeat(nodes),
        }
    }

    /// `D_uf(x, 0)` at every node.
    pub fn linearization(model: &ModelSpec, grid: &PeriodicGrid) -> Self {
        let d = model.components();
        let zero = vec![0.0; d];
        let mut values = vec![0.0; d * d * grid.len()];
        for p in 0..grid.len() {
            let x = grid.point(p);
            model.jacobian_into(&x[..grid.dim()], &zero, &mut values[p * d * d..(p + 1) * d * d]);
        }
        Self { components: d, values }
    }

    #[inline]
    pub fn at(&self, node: usize, i: usize, j: usize) -> f64 {
        let d = self.components;
        self.values[node * d * d + i * d + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    PlainL,
    WeightedL,
    WeightedMinusH,
}

/// Assembled `L`, `L_{lambda e}` or `L_{lambda e} - H` on a periodic grid.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub matrix: CsrMatrix,
    pub grid: PeriodicGrid,
    pub components: usize,
    pub lambda: f64,
    pub direction: Vec<f64>,
    pub kind: OperatorKind,
}

impl DiscreteOperator {
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(u)
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }
}

fn check_direction(e: &[f64], dim: usize) -> Result<()> {
    if e.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: e.len(),
        });
    }
    let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::param("e", format!("must be a unit vector (|e| = {norm})")));
    }
    Ok(())
}

/// Drift of the weighted operator, `q^i + 2 lambda A^i e`.
#[inline]
pub(crate) fn weighted_drift(a: &[f64], q: &[f64], lambda: f64, e: &[f64], out: &mut [f64]) {
    let n = q.len();
    for l in 0..n {
        let ae: f64 = (0..n).map(|m| a[l * n + m] * e[m]).sum();
        out[l] = q[l] + 2.0 * lambda * ae;
    }
}

/// Largest value of `|b_l| h_l / (2 a_ll)` over nodes, components and axes;
/// below 1 the drift keeps every neighbour coefficient nonpositive.
pub fn drift_ratio(model: &ModelSpec, grid: &PeriodicGrid, lambda: f64, e: &[f64]) -> f64 {
    let n = grid.dim();
    let mut a = vec![0.0; n * n];
    let mut q = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for comp in 0..model.components() {
        for p in 0..grid.len() {
            let x = grid.point(p);
            model.diffusion_into(comp, &x[..n], &mut a);
            model.advection_into(comp, &x[..n], &mut q);
            weighted_drift(&a, &q, lambda, e, &mut b);
            for l in 0..n {
                worst = worst.max(b[l].abs() * grid.spacing(l) / (2.0 * a[l * n + l]));
            }
        }
    }
    worst
}

fn assemble(
    model: &ModelSpec,
    grid: &PeriodicGrid,
    lambda: f64,
    e: &[f64],
    h: Option<&MatrixField>,
) -> Result<CsrMatrix> {
    let n = grid.dim();
    if model.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: n,
        });
    }
    let d = model.components();
    let m = grid.len();
    if let Some(h) = h {
        if h.components != d || h.values.len() != d * d * m {
            return Err(Error::DimensionMismatch {
                expected: d * d * m,
                got: h.values.len(),
            });
        }
    }
    let per_row = 1 + 2 * n + 2 * n * (n - 1) + d;
    let mut tb = TripletBuilder::with_capacity(d * m, d * m * per_row);
    let mut a = vec![0.0; n * n];
    let mut q = vec![0.0; n];
    let mut b = vec![0.0; n];
    for comp in 0..d {
        for p in 0..m {
            let x = grid.point(p);
            let xs = &x[..n];
            model.diffusion_into(comp, xs, &mut a);
            model.advection_into(comp, xs, &mut q);
            weighted_drift(&a, &q, lambda, e, &mut b);
            let row = comp * m + p;
            let mut diag = 0.0;
            for l in 0..n {
                let hl = grid.spacing(l);
                let all = a[l * n + l] / (hl * hl);
                let adv = b[l] / (2.0 * hl);
                diag += 2.0 * all;
                tb.push(row, comp * m + grid.neighbor(p, l, 1), -all + adv);
                tb.push(row, comp * m + grid.neighbor(p, l, -1), -all - adv);
            }
            for l in 0..n {
                for k in (l + 1)..n {
                    let alk = a[l * n + k];
                    if alk == 0.0 {
                        continue;
                    }
                    let c = 2.0 * alk / (4.0 * grid.spacing(l) * grid.spacing(k));
                    let mut s = [0isize; MAX_DIM];
                    for (sl, sk, sign) in [(1, 1, -1.0), (1, -1, 1.0), (-1, 1, 1.0), (-1, -1, -1.0)] {
                        s[l] = sl;
                        s[k] = sk;
                        tb.push(row, comp * m + grid.offset(p, &s[..n]), sign * c);
                    }
                }
            }
            tb.push(row, row, diag);
            if lambda != 0.0 {
                let eae: f64 = (0..n)
                    .map(|l| e[l] * (0..n).map(|k| a[l * n + k] * e[k]).sum::<f64>())
                    .sum();
                let qe: f64 = (0..n).map(|l| q[l] * e[l]).sum();
                tb.push(row, row, -(lambda * lambda * eae + lambda * qe));
            }
            if let Some(h) = h {
                for j in 0..d {
                    let v = h.at(p, comp, j);
                    if v != 0.0 {
                        tb.push(row, j * m + p, -v);
                    }
                }
            }
        }
    }
    Ok(tb.build())
}

/// The plain nondivergence operator `L^i`, block diagonal over components.
pub fn assemble_plain(model: &ModelSpec, grid: &PeriodicGrid) -> Result<DiscreteOperator> {
    let direction = {
        let mut e = vec![0.0; grid.dim()];
        e[0] = 1.0;
        e
    };
    Ok(DiscreteOperator {
        matrix: assemble(model, grid, 0.0, &direction, None)?,
        grid: grid.clone(),
        components: model.components(),
        lambda: 0.0,
        direction,
        kind: OperatorKind::PlainL,
    })
}

/// `L_{lambda e} - H`, or `L_{lambda e}` when `h` is `None`.
pub fn assemble_weighted(
    model: &ModelSpec,
    grid: &PeriodicGrid,
    lambda: f64,
    e: &[f64],
    h: Option<&MatrixField>,
) -> Result<DiscreteOperator> {
    check_direction(e, grid.dim())?;
    if !lambda.is_finite() {
        return Err(Error::param("lambda", "must be finite"));
    }
    Ok(DiscreteOperator {
        matrix: assemble(model, grid, lambda, e, h)?,
        grid: grid.clone(),
        components: model.components(),
        lambda,
        direction: e.to_vec(),
        kind: if h.is_some() {
            OperatorKind::WeightedMinusH
        } else {
            OperatorKind::WeightedL
        },
    })
}

/// Derivative in `lambda` of the weighted operator: drift `2 A^i e . grad`
/// and zero-order term `-(2 lambda eA^ie + q^i.e)`. `H` does not depend on
/// `lambda`.
pub fn assemble_lambda_derivative(
    model: &ModelSpec,
    grid: &PeriodicGrid,
    lambda: f64,
    e: &[f64],
) -> Result<CsrMatrix> {
    check_direction(e, grid.dim())?;
    let n = grid.dim();
    let d = model.components();
    let m = grid.len();
    let mut tb = TripletBuilder::with_capacity(d * m, d * m * (2 * n + 1));
    let mut a = vec![0.0; n * n];
    let mut q = vec![0.0; n];
    for comp in 0..d {
        for p in 0..m {
            let x = grid.point(p);
            model.diffusion_into(comp, &x[..n], &mut a);
            model.advection_into(comp, &x[..n], &mut q);
            let row = comp * m + p;
            let mut eae = 0.0;
            for l in 0..n {
                let ae: f64 = (0..n).map(|k| a[l * n + k] * e[k]).sum();
                eae += e[l] * ae;
                let c = 2.0 * ae / (2.0 * grid.spacing(l));
                tb.push(row, comp * m + grid.neighbor(p, l, 1), c);
                tb.push(row, comp * m + grid.neighbor(p, l, -1), -c);
            }
            let qe: f64 = (0..n).map(|l| q[l] * e[l]).sum();
            tb.push(row, row, -(2.0 * lambda * eae + qe));
        }
    }
    Ok(tb.build())
}

/// Uniform grid on the cylinder `[a, r_max] x T_{periods}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderGrid {
    pub a: f64,
    pub h_r: f64,
    pub nr: usize,
    /// Cross-section periods and node counts per cross axis.
    pub periods: Vec<f64>,
    pub ny: Vec<usize>,
}

impl CylinderGrid {
    pub fn new(a: f64, r_max: f64, h_r: f64, periods: Vec<f64>, ny: Vec<usize>) -> Result<Self> {
        if !(r_max > a) || !(h_r > 0.0) {
            return Err(Error::param("cylinder", "need r_max > a and h_r > 0"));
        }
        if periods.len() != ny.len() {
            return Err(Error::DimensionMismatch {
                expected: periods.len(),
                got: ny.len(),
            });
        }
        if ny.iter().any(|&k| k < 4) {
            return Err(Error::GridTooCoarse("cross-section needs >= 4 nodes per axis".into()));
        }
        let nr = ((r_max - a) / h_r).round() as usize + 1;
        Ok(Self {
            a,
            h_r,
            nr,
            periods,
            ny,
        })
    }

    pub fn r_max(&self) -> f64 {
        self.a + (self.nr - 1) as f64 * self.h_r
    }

    pub fn cross_len(&self) -> usize {
        self.ny.iter().product()
    }

    pub fn len(&self) -> usize {
        self.nr * self.cross_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn r(&self, ir: usize) -> f64 {
        self.a + ir as f64 * self.h_r
    }

    pub fn h_y(&self, axis: usize) -> f64 {
        self.periods[axis] / self.ny[axis] as f64
    }

    /// Node index: axial index fastest within each cross-section column.
    pub fn index(&self, ir: usize, iy: usize) -> usize {
        iy * self.nr + ir
    }

    pub fn cross_multi(&self, mut iy: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for (l, &k) in self.ny.iter().enumerate() {
            out[l] = iy % k;
            iy /= k;
        }
        out
    }

    pub fn y(&self, iy: usize) -> [f64; MAX_DIM] {
        let m = self.cross_multi(iy);
        let mut y = [0.0; MAX_DIM];
        for l in 0..self.ny.len() {
            y[l] = m[l] as f64 * self.h_y(l);
        }
        y
    }

    pub fn cross_offset(&self, iy: usize, axis: usize, step: isize) -> usize {
        let mut m = self.cross_multi(iy);
        let k = self.ny[axis] as isize;
        m[axis] = (m[axis] as isize + step).rem_euclid(k) as usize;
        let mut idx = 0;
        let mut stride = 1;
        for (l, &kk) in self.ny.iter().enumerate() {
            idx += m[l] * stride;
            stride *= kk;
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sup_norm;
    use crate::model::Builtin;
    use std::f64::consts::TAU;

    fn kpp() -> ModelSpec {
        Builtin::by_name("scalar_kpp", 1).unwrap().build().unwrap()
    }

    #[test]
    fn coarse_grid_rejected() {
        assert!(matches!(PeriodicGrid::uniform(1, 3), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn index_round_trip_and_wrap() {
        let g = PeriodicGrid::new(vec![4, 5, 6]).unwrap();
        for idx in 0..g.len() {
            let m = g.multi_index(idx);
            assert_eq!(g.index(&m[..3]), idx);
        }
        let last = g.index(&[3, 0, 0]);
        assert_eq!(g.neighbor(last, 0, 1), g.index(&[0, 0, 0]));
        assert_eq!(g.neighbor(0, 2, -1), g.index(&[0, 0, 5]));
    }

    #[test]
    fn plain_kills_constants() {
        let g = PeriodicGrid::uniform(1, 16).unwrap();
        let op = assemble_plain(&kpp(), &g).unwrap();
        let r = op.apply(&vec![1.0; 16]);
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plain_second_derivative_of_sine() {
        let g = PeriodicGrid::uniform(1, 16).unwrap();
        let op = assemble_plain(&kpp(), &g).unwrap();
        let u: Vec<f64> = (0..16).map(|p| (TAU * g.point(p)[0]).sin()).collect();
        let lu = op.apply(&u);
        let err = lu
            .iter()
            .zip(&u)
            .map(|(l, s)| (l - TAU * TAU * s).abs())
            .fold(0.0, f64::max);
        let h = 1.0 / 16.0;
        assert!(err < 4.0 * TAU.powi(4) * h * h / 12.0, "err {err}");
    }

    #[test]
    fn weighted_at_zero_matches_plain_bitwise() {
        let m = Builtin::PeriodicScalar {
            amplitude: 0.5,
            diffusion_amplitude: 0.3,
            drift: 0.7,
            dim: 2,
        }
        .build()
        .unwrap();
        let g = PeriodicGrid::uniform(2, 8).unwrap();
        let plain = assemble_plain(&m, &g).unwrap();
        let zero = MatrixField::zero(1, g.len());
        let w = assemble_weighted(&m, &g, 0.0, &[0.6, 0.8], Some(&zero)).unwrap();
        assert_eq!(plain.matrix, w.matrix);
    }

    #[test]
    fn weighted_constant_vector_eigen_relation() {
        let g = PeriodicGrid::uniform(1, 12).unwrap();
        let m = Builtin::PeriodicScalar {
            amplitude: 0.0,
            diffusion_amplitude: 0.0,
            drift: 1.0,
            dim: 1,
        }
        .build()
        .unwrap();
        let op = assemble_weighted(&m, &g, 2.0, &[1.0], None).unwrap();
        let r = op.apply(&vec![1.0; 12]);
        assert!(r.iter().all(|&v| (v + 6.0).abs() < 1e-12));
    }

    #[test]
    fn cubic_interpolation_reproduces_nodes_and_cubics() {
        let g = PeriodicGrid::uniform(1, 32).unwrap();
        let u: Vec<f64> = (0..32).map(|p| (TAU * g.point(p)[0]).cos()).collect();
        assert_eq!(g.interpolate(&u, &[5.0 / 32.0]), u[5]);
        let x = 0.3141;
        assert!((g.interpolate(&u, &[x]) - (TAU * x).cos()).abs() < 1e-4);
        assert!((g.interpolate(&u, &[x + 2.0]) - (TAU * x).cos()).abs() < 1e-4);
        assert!(sup_norm(&u) <= 1.0);
    }

    #[test]
    fn drift_ratio_scales_with_lambda() {
        let g = PeriodicGrid::uniform(1, 10).unwrap();
        let r = drift_ratio(&kpp(), &g, 3.0, &[1.0]);
        assert!((r - 6.0 * 0.1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_derivative_matches_difference_quotient() {
        let m = Builtin::PeriodicScalar {
            amplitude: 0.4,
            diffusion_amplitude: 0.2,
            drift: 0.3,
            dim: 2,
        }
        .build()
        .unwrap();
        let g = PeriodicGrid::uniform(2, 6).unwrap();
        let e = [0.6, 0.8];
        let lam = 0.7;
        let hstep = 1e-5;
        let u: Vec<f64> = (0..g.len()).map(|p| 1.0 + 0.1 * (p as f64).sin()).collect();
        let plus = assemble_weighted(&m, &g, lam + hstep, &e, None).unwrap().apply(&u);
        let minus = assemble_weighted(&m, &g, lam - hstep, &e, None).unwrap().apply(&u);
        let d = assemble_lambda_derivative(&m, &g, lam, &e).unwrap().mul_vec(&u);
        for p in 0..g.len() {
            assert!(((plus[p] - minus[p]) / (2.0 * hstep) - d[p]).abs() < 1e-6);
        }
    }
}
