//! Pulsating fronts in rational directions.
//!
//! A primitive integer direction `p` gives an orthogonal frame `(e, zeta^i)`
//! in which a pulsating front is a function of the axial coordinate
//! `r = x.e` and a periodic cross-section `y`. The solver works in the
//! co-moving coordinate `r' = r - ct` on a truncated cylinder `[a, r_max]`
//! and looks for a fixed point of the period map between two barriers.

use serde::Serialize;

use crate::barriers::{
    build_critical_pair_with, build_sub_omega_with, build_super_h_with, BarrierFunction, BarrierOptions,
};
use crate::disc::{CylinderGrid, PeriodicGrid};
use crate::error::{Error, Result};
use crate::linalg::{SparseLu, TripletBuilder};
use crate::model::{check_structure, ModelSpec, SamplePlan, MAX_DIM};
use crate::report::sig;
use crate::speed::minimal_speed;

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (g, x, y) = ext_gcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

fn dot_i(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn reduce(v: &mut [i64]) {
    let g = v.iter().fold(0, |g, &x| gcd(g, x));
    if g > 1 {
        v.iter_mut().for_each(|x| *x /= g);
    }
}

/// Orthonormal frame adapted to a rational direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalFrame {
    /// Primitive direction vector.
    pub p: Vec<i64>,
    pub e: Vec<f64>,
    /// Smallest positive value of `k.e` over the lattice, `1/|p|`.
    pub tau1: f64,
    /// Integer vectors orthogonal to `p`, pairwise orthogonal.
    pub cross_vectors: Vec<Vec<i64>>,
    /// Unit cross directions `zeta^i = q_i / |q_i|`.
    pub zeta: Vec<Vec<f64>>,
    /// Lattice steps `tau_i = 1/|q_i|` along each cross direction.
    pub cross_periods: Vec<f64>,
    /// Periods `|q_i|` of the cross-section torus.
    pub torus_periods: Vec<f64>,
    /// Lattice vector `b` with `b.p = 1`.
    pub bezout: Vec<i64>,
    /// Cross-section offset of `b`, reduced into `[0, |q_i|)`.
    pub y_shift: Vec<f64>,
    /// `y_shift_i / |q_i|` as a reduced fraction `(num, den)`.
    pub y_shift_ratio: Vec<(i64, i64)>,
    /// Row-major `N x N` matrix with columns `e, zeta^1, ...`.
    pub rotation: Vec<f64>,
}

/// Frame for the integer direction `p`, reduced to primitive form.
pub fn rational_frame(p: &[i64]) -> Result<RationalFrame> {
    let n = p.len();
    if n == 0 || n > MAX_DIM {
        return Err(Error::param("direction", format!("need 1..={MAX_DIM} entries")));
    }
    if p.iter().all(|&x| x == 0) {
        return Err(Error::ZeroVector);
    }
    let mut p = p.to_vec();
    reduce(&mut p);
    let pp = dot_i(&p, &p);
    let norm = (pp as f64).sqrt();
    let e: Vec<f64> = p.iter().map(|&x| x as f64 / norm).collect();

    let mut g = p[0];
    let mut bezout = vec![1i64];
    for &pk in &p[1..] {
        let (g2, x, y) = ext_gcd(g, pk);
        bezout.iter_mut().for_each(|b| *b *= x);
        bezout.push(y);
        g = g2;
    }
    if g < 0 {
        bezout.iter_mut().for_each(|b| *b = -*b);
    }
    debug_assert_eq!(dot_i(&bezout, &p), 1);

    let mut qs: Vec<Vec<i64>> = Vec::new();
    for k in 0..n {
        if qs.len() == n - 1 {
            break;
        }
        let mut v: Vec<i64> = (0..n).map(|j| if j == k { pp } else { 0 } - p[k] * p[j]).collect();
        reduce(&mut v);
        for q in &qs {
            let (qq, vq) = (dot_i(q, q), dot_i(&v, q));
            v.iter_mut().zip(q).for_each(|(a, b)| *a = qq * *a - vq * b);
            reduce(&mut v);
        }
        if v.iter().any(|&x| x != 0) {
            qs.push(v);
        }
    }

    let mut zeta = Vec::new();
    let mut cross_periods = Vec::new();
    let mut torus_periods = Vec::new();
    let mut y_shift = Vec::new();
    let mut y_shift_ratio = Vec::new();
    for q in &qs {
        let qq = dot_i(q, q);
        let len = (qq as f64).sqrt();
        zeta.push(q.iter().map(|&x| x as f64 / len).collect::<Vec<_>>());
        cross_periods.push(1.0 / len);
        torus_periods.push(len);
        let num = dot_i(&bezout, q).rem_euclid(qq);
        let g = gcd(num, qq);
        y_shift_ratio.push((num / g, qq / g));
        y_shift.push(num as f64 / len);
    }
    let mut rotation = vec![0.0; n * n];
    for i in 0..n {
        rotation[i * n] = e[i];
        for (l, z) in zeta.iter().enumerate() {
            rotation[i * n + l + 1] = z[i];
        }
    }
    Ok(RationalFrame {
        tau1: 1.0 / norm,
        p,
        e,
        cross_vectors: qs,
        zeta,
        cross_periods,
        torus_periods,
        bezout,
        y_shift,
        y_shift_ratio,
        rotation,
    })
}

/// Nearest primitive integer direction with `|p| <= max_norm`, by angle.
pub fn nearest_rational(e: &[f64], max_norm: f64) -> Result<Vec<i64>> {
    let n = e.len();
    if n == 0 || n > MAX_DIM {
        return Err(Error::param("direction", format!("need 1..={MAX_DIM} entries")));
    }
    let len = dot(e, e).sqrt();
    if !(len > 0.0) {
        return Err(Error::ZeroVector);
    }
    let m = max_norm.floor() as i64;
    let mut best = (f64::NEG_INFINITY, vec![0i64; n]);
    let mut k = vec![-m; n];
    loop {
        let kk = dot_i(&k, &k);
        if kk > 0 && (kk as f64) <= max_norm * max_norm {
            let kf: Vec<f64> = k.iter().map(|&x| x as f64).collect();
            let cos = dot(&kf, e) / ((kk as f64).sqrt() * len);
            if cos > best.0 + 1e-15 {
                best = (cos, k.clone());
            }
        }
        let mut j = 0;
        while j < n {
            k[j] += 1;
            if k[j] <= m {
                break;
            }
            k[j] = -m;
            j += 1;
        }
        if j == n {
            break;
        }
    }
    let mut p = best.1;
    reduce(&mut p);
    Ok(p)
}

impl RationalFrame {
    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn cross_dim(&self) -> usize {
        self.zeta.len()
    }

    /// `x = r e + sum_i y_i zeta^i`.
    pub fn point(&self, r: f64, y: &[f64]) -> [f64; MAX_DIM] {
        let mut x = [0.0; MAX_DIM];
        for j in 0..self.dim() {
            x[j] = r * self.e[j] + self.zeta.iter().zip(y).map(|(z, yl)| yl * z[j]).sum::<f64>();
        }
        x
    }

    /// Coordinates of the integer vector `k` in the lattice basis
    /// `(tau1 e, tau_i zeta^i)`; integral for every `k`.
    pub fn lattice_coordinates(&self, k: &[i64]) -> Vec<f64> {
        let kf: Vec<f64> = k.iter().map(|&x| x as f64).collect();
        let mut out = vec![dot(&kf, &self.e) / self.tau1];
        for (z, t) in self.zeta.iter().zip(&self.cross_periods) {
            out.push(dot(&kf, z) / t);
        }
        out
    }

    /// Rotated coefficients `zeta^l . A zeta^k` (with `zeta^0 = e`).
    fn rotate_matrix(&self, a: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for l in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += self.rotation[i * n + l] * a[i * n + j] * self.rotation[j * n + k];
                    }
                }
                out[l * n + k] = s;
            }
        }
    }

    fn rotate_vector(&self, q: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for l in 0..n {
            out[l] = (0..n).map(|i| self.rotation[i * n + l] * q[i]).sum();
        }
    }
}

/// Barrier pair bounding the iterates.
#[derive(Debug, Clone, Serialize)]
pub struct Envelope {
    pub critical: bool,
    /// Multiplier on the upper barrier (1 off the critical speed).
    pub gamma: f64,
    pub eta_hat: f64,
    /// Number of lattice translates in the lower envelope.
    pub translates: usize,
    tau1: f64,
    bezout: Vec<f64>,
    pub upper: BarrierFunction,
    pub lower: BarrierFunction,
}

impl Envelope {
    pub fn upper_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.upper.eval_into(t, x, out);
        for o in out.iter_mut() {
            *o = (self.gamma * *o).min(self.eta_hat);
        }
    }

    /// `max(0, max_n omega(t, x + n b))` over the translates by the
    /// lattice vector `b` that advances `r` by `tau1`.
    pub fn lower_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let s = self.lower.s(t, x);
        let n0 = ((-s / self.tau1).ceil().max(0.0)) as usize;
        let mut buf = [0.0; 16];
        let d = out.len();
        let mut xs = [0.0; MAX_DIM];
        for n in n0..=self.translates {
            for (j, xj) in x.iter().enumerate() {
                xs[j] = xj + n as f64 * self.bezout[j];
            }
            self.lower.eval_into(t, &xs[..x.len()], &mut buf[..d]);
            for i in 0..d {
                out[i] = out[i].max(buf[i]);
            }
        }
    }
}

/// Discrete period map on a cylinder grid.
pub struct WaveProblem {
    model: ModelSpec,
    pub frame: RationalFrame,
    pub speed: f64,
    pub grid: CylinderGrid,
    pub dt: f64,
    pub steps: usize,
    /// Right cells pinned to the upper barrier (0 means Neumann there).
    pub band: usize,
    pub envelope: Option<Envelope>,
    shift: Option<Vec<usize>>,
    lower0: Vec<f64>,
    upper0: Vec<f64>,
    lus: Vec<Vec<SparseLu>>,
}

fn default_steps(horizon: f64, lip: f64) -> usize {
    ((horizon * lip / 0.45).ceil().max((horizon / 0.05).ceil()) as usize).max(1)
}

impl WaveProblem {
    /// `horizon` is the solve length; the map shifts the cross-section
    /// only when the horizon is the period `tau1 / c`.
    pub fn new(
        model: &ModelSpec,
        frame: &RationalFrame,
        c: f64,
        grid: CylinderGrid,
        horizon: f64,
        steps: Option<usize>,
        envelope: Option<Envelope>,
        band: usize,
    ) -> Result<Self> {
        if model.dim() != frame.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: frame.dim(),
            });
        }
        if grid.ny.len() != frame.cross_dim() {
            return Err(Error::DimensionMismatch {
                expected: frame.cross_dim(),
                got: grid.ny.len(),
            });
        }
        if !(horizon > 0.0) {
            return Err(Error::param("horizon", "must be positive"));
        }
        let band = if envelope.is_some() { band } else { 0 };
        if band + 3 > grid.nr {
            return Err(Error::GridTooCoarse("axial grid shorter than the clamp band".into()));
        }
        let lip = model.lipschitz();
        let steps = steps.unwrap_or_else(|| default_steps(horizon, lip)).max(1);
        let dt = horizon / steps as f64;
        if dt * lip >= 0.5 {
            return Err(Error::CflViolation { value: dt * lip });
        }
        let shift = frame
            .y_shift
            .iter()
            .enumerate()
            .map(|(l, &s)| {
                let v = s / grid.h_y(l);
                ((v - v.round()).abs() < 1e-8).then(|| (v.round() as usize) % grid.ny[l])
            })
            .collect::<Option<Vec<_>>>();
        let mut pb = Self {
            model: model.clone(),
            frame: frame.clone(),
            speed: c,
            grid,
            dt,
            steps,
            band,
            envelope,
            shift,
            lower0: Vec::new(),
            upper0: Vec::new(),
            lus: Vec::new(),
        };
        let factor_times: Vec<usize> = if model.is_homogeneous() {
            vec![0]
        } else {
            (0..steps).collect()
        };
        // Coefficients are evaluated at the end of each step.
        pb.lus = factor_times
            .iter()
            .map(|&k| {
                let t = (k + 1) as f64 * dt;
                (0..model.components()).map(|i| pb.assemble(i, t)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if pb.envelope.is_some() {
            pb.upper0 = pb.envelope_slice(0.0, true);
            pb.lower0 = pb.envelope_slice(0.0, false);
        }
        Ok(pb)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn components(&self) -> usize {
        self.model.components()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Physical point of node `(ir, iy)` at time `t`.
    pub fn node_point(&self, t: f64, ir: usize, iy: usize) -> [f64; MAX_DIM] {
        let y = self.grid.y(iy);
        self.frame.point(self.grid.r(ir) + self.speed * t, &y[..self.frame.cross_dim()])
    }

    fn is_band(&self, ir: usize) -> bool {
        self.band > 0 && ir >= self.grid.nr - self.band
    }

    /// Node reached from `(ir, iy)` by axis steps; axis 0 is `r` and
    /// reflects at the ends, the others wrap.
    fn neighbor(&self, ir: usize, iy: usize, moves: &[(usize, isize)]) -> usize {
        let last = self.grid.nr as isize - 1;
        let mut jr = ir as isize;
        let mut jy = iy;
        for &(axis, step) in moves {
            if axis == 0 {
                jr += step;
            } else {
                jy = self.grid.cross_offset(jy, axis - 1, step);
            }
        }
        if jr < 0 {
            jr = -jr;
        }
        if jr > last {
            jr = 2 * last - jr;
        }
        self.grid.index(jr as usize, jy)
    }

    fn spacing(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.grid.h_r
        } else {
            self.grid.h_y(axis - 1)
        }
    }

    fn rotated_coefficients(&self, comp: usize, x: &[f64], a: &mut [f64], b: &mut [f64]) {
        let n = self.frame.dim();
        let mut raw = [0.0; MAX_DIM * MAX_DIM];
        self.model.diffusion_into(comp, &x[..n], &mut raw[..n * n]);
        self.frame.rotate_matrix(&raw[..n * n], a);
        let mut q = [0.0; MAX_DIM];
        self.model.advection_into(comp, &x[..n], &mut q[..n]);
        self.frame.rotate_vector(&q[..n], b);
    }

    /// `I + dt (L - c d_r)` for component `comp` with coefficients at time `t`.
    fn assemble(&self, comp: usize, t: f64) -> Result<SparseLu> {
        let n = self.frame.dim();
        let g = &self.grid;
        let mut tb = TripletBuilder::with_capacity(g.len(), g.len() * (1 + 2 * n + 2 * n * n));
        let dt = self.dt;
        let mut a = [0.0; MAX_DIM * MAX_DIM];
        let mut b = [0.0; MAX_DIM];
        for iy in 0..g.cross_len() {
            for ir in 0..g.nr {
                let row = g.index(ir, iy);
                if self.is_band(ir) {
                    tb.push(row, row, 1.0);
                    continue;
                }
                let x = self.node_point(t, ir, iy);
                self.rotated_coefficients(comp, &x, &mut a, &mut b);
                b[0] -= self.speed;
                let mut diag = 1.0;
                for l in 0..n {
                    let h = self.spacing(l);
                    let all = a[l * n + l];
                    let (mut lo, mut hi) = (-all / (h * h), -all / (h * h));
                    let mut mid = 2.0 * all / (h * h);
                    if b[l].abs() * h < 2.0 * all {
                        lo -= b[l] / (2.0 * h);
                        hi += b[l] / (2.0 * h);
                    } else if b[l] > 0.0 {
                        lo -= b[l] / h;
                        mid += b[l] / h;
                    } else {
                        hi += b[l] / h;
                        mid -= b[l] / h;
                    }
                    diag += dt * mid;
                    tb.push(row, self.neighbor(ir, iy, &[(l, -1)]), dt * lo);
                    tb.push(row, self.neighbor(ir, iy, &[(l, 1)]), dt * hi);
                    for k in l + 1..n {
                        let alk = a[l * n + k] + a[k * n + l];
                        if alk == 0.0 {
                            continue;
                        }
                        let w = -dt * alk / (4.0 * h * self.spacing(k));
                        for (sl, sk, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                            tb.push(row, self.neighbor(ir, iy, &[(l, sl), (k, sk)]), sign * w);
                        }
                    }
                }
                tb.push(row, row, diag);
            }
        }
        tb.build().lu()
    }

    fn envelope_slice(&self, t: f64, upper: bool) -> Vec<f64> {
        let env = self.envelope.as_ref().expect("envelope");
        let d = self.components();
        let nn = self.grid.len();
        let mut out = vec![0.0; d * nn];
        let mut buf = vec![0.0; d];
        for iy in 0..self.grid.cross_len() {
            for ir in 0..self.grid.nr {
                let x = self.node_point(t, ir, iy);
                let x = &x[..self.frame.dim()];
                if upper {
                    env.upper_into(t, x, &mut buf);
                } else {
                    env.lower_into(t, x, &mut buf);
                }
                let p = self.grid.index(ir, iy);
                for i in 0..d {
                    out[i * nn + p] = buf[i];
                }
            }
        }
        out
    }

    /// Upper envelope at `t = 0`, component-major.
    pub fn upper_slice(&self) -> &[f64] {
        &self.upper0
    }

    /// Lower envelope at `t = 0`, component-major.
    pub fn lower_slice(&self) -> &[f64] {
        &self.lower0
    }

    /// IMEX solve of the co-moving problem over the horizon.
    pub fn advance(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let d = self.components();
        let nn = self.grid.len();
        if phi.len() != d * nn {
            return Err(Error::DimensionMismatch {
                expected: d * nn,
                got: phi.len(),
            });
        }
        let dim = self.frame.dim();
        let mut v = phi.to_vec();
        let mut rhs = vec![0.0; d * nn];
        let mut u = vec![0.0; d];
        let mut f = vec![0.0; d];
        for k in 0..self.steps {
            let t = k as f64 * self.dt;
            let t1 = t + self.dt;
            for iy in 0..self.grid.cross_len() {
                for ir in 0..self.grid.nr {
                    let p = self.grid.index(ir, iy);
                    if self.is_band(ir) {
                        let x = self.node_point(t1, ir, iy);
                        self.envelope.as_ref().unwrap().upper_into(t1, &x[..dim], &mut f);
                        for i in 0..d {
                            rhs[i * nn + p] = f[i];
                        }
                        continue;
                    }
                    let x = self.node_point(t, ir, iy);
                    for i in 0..d {
                        u[i] = v[i * nn + p];
                    }
                    self.model.reaction_into(&x[..dim], &u, &mut f);
                    for i in 0..d {
                        rhs[i * nn + p] = u[i] + self.dt * f[i];
                    }
                }
            }
            let lus = &self.lus[k % self.lus.len()];
            for (i, lu) in lus.iter().enumerate() {
                lu.solve_in_place(&mut rhs[i * nn..(i + 1) * nn])?;
            }
            let min = rhs.iter().cloned().fold(f64::INFINITY, f64::min);
            if !min.is_finite() || min < -1e-10 {
                return Err(Error::NonpositiveIterate { min });
            }
            for (vi, ri) in v.iter_mut().zip(&rhs) {
                *vi = ri.max(0.0);
            }
        }
        Ok(v)
    }

    /// `w(r, y) = v(r, y + shift)` in index units.
    fn shift_cross(&self, v: &[f64]) -> Result<Vec<f64>> {
        let shift = self
            .shift
            .as_ref()
            .ok_or_else(|| Error::GridTooCoarse("cross grid does not resolve the lattice shift".into()))?;
        if shift.iter().all(|&s| s == 0) {
            return Ok(v.to_vec());
        }
        let nn = self.grid.len();
        let d = self.components();
        let mut out = vec![0.0; v.len()];
        for iy in 0..self.grid.cross_len() {
            let mut jy = iy;
            for (l, &s) in shift.iter().enumerate() {
                jy = self.grid.cross_offset(jy, l, s as isize);
            }
            for ir in 0..self.grid.nr {
                let (p, q) = (self.grid.index(ir, iy), self.grid.index(ir, jy));
                for i in 0..d {
                    out[i * nn + p] = v[i * nn + q];
                }
            }
        }
        Ok(out)
    }

    /// One period of the flow followed by the lattice shift, optionally
    /// clamped into the envelope.
    pub fn map(&self, phi: &[f64], clamp: bool) -> Result<Vec<f64>> {
        let v = self.advance(phi)?;
        let mut out = self.shift_cross(&v)?;
        if clamp && self.envelope.is_some() {
            for ((o, lo), hi) in out.iter_mut().zip(&self.lower0).zip(&self.upper0) {
                *o = o.max(*lo).min(*hi);
            }
        }
        Ok(out)
    }

    /// `L v` at node `(ir, iy)` for component `comp` in the original frame
    /// at `t = 0`, central differences with spacing `skip * h`.
    fn operator_at(&self, v: &[f64], comp: usize, ir: usize, iy: usize, skip: isize) -> f64 {
        let n = self.frame.dim();
        let nn = self.grid.len();
        let vc = &v[comp * nn..(comp + 1) * nn];
        let mut a = [0.0; MAX_DIM * MAX_DIM];
        let mut b = [0.0; MAX_DIM];
        let x = self.node_point(0.0, ir, iy);
        self.rotated_coefficients(comp, &x, &mut a, &mut b);
        let c0 = vc[self.grid.index(ir, iy)];
        let mut out = 0.0;
        for l in 0..n {
            let h = skip as f64 * self.spacing(l);
            let up = vc[self.neighbor(ir, iy, &[(l, skip)])];
            let dn = vc[self.neighbor(ir, iy, &[(l, -skip)])];
            out += -a[l * n + l] * (up - 2.0 * c0 + dn) / (h * h) + b[l] * (up - dn) / (2.0 * h);
            for k in l + 1..n {
                let hk = skip as f64 * self.spacing(k);
                let mut dd = 0.0;
                for (sl, sk, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                    dd += sign * vc[self.neighbor(ir, iy, &[(l, sl * skip), (k, sk * skip)])];
                }
                out -= (a[l * n + k] + a[k * n + l]) * dd / (4.0 * h * hk);
            }
        }
        out
    }
}

/// IMEX solve of the co-moving problem from `phi0` over `[0, horizon]`,
/// Neumann at both ends of the axial window.
pub fn solve_moving_boundary(
    model: &ModelSpec,
    frame: &RationalFrame,
    c: f64,
    grid: &CylinderGrid,
    phi0: &[f64],
    horizon: f64,
) -> Result<Vec<f64>> {
    WaveProblem::new(model, frame, c, grid.clone(), horizon, None, None, 0)?.advance(phi0)
}

/// The period map `tau1 / c` followed by the lattice shift, without envelope.
pub fn fixed_point_map(
    model: &ModelSpec,
    frame: &RationalFrame,
    c: f64,
    grid: &CylinderGrid,
    phi: &[f64],
) -> Result<Vec<f64>> {
    WaveProblem::new(model, frame, c, grid.clone(), frame.tau1 / c, None, None, 0)?.map(phi, false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveOptions {
    /// Left end of the axial window; rounded down to a multiple of `tau1`.
    pub a: Option<f64>,
    pub r_max: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Axial cells per `tau1`.
    pub cells_per_period: Option<usize>,
    pub cross_nodes: Option<Vec<usize>>,
    pub steps_per_map: Option<usize>,
    pub band: usize,
    /// Points per axis of the unit-cell grid behind the barriers.
    pub eigen_points: usize,
    /// Relative distance above `c*` handled with the critical envelope.
    pub critical_window: f64,
    pub barrier: BarrierOptions,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self {
            a: None,
            r_max: None,
            tol: 1e-7,
            max_iter: 400,
            cells_per_period: None,
            cross_nodes: None,
            steps_per_map: None,
            band: 5,
            eigen_points: 16,
            critical_window: 0.01,
            barrier: BarrierOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveDiagnostics {
    /// `-d ln u / dr` fitted over the last decade before the clamp band.
    pub right_tail_slope: f64,
    pub left_plateau_min: f64,
    /// `sup |Q(u) - u|` without clamping, on a fresh solve.
    pub pulsating_residual: f64,
    /// Largest value in the last unclamped column.
    pub right_tail_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WaveProfile {
    pub frame: RationalFrame,
    pub speed: f64,
    pub c_star: f64,
    /// Decay rate of the upper barrier (`lambda_c` or `lambda*`).
    pub decay_rate: f64,
    pub critical: bool,
    pub grid: CylinderGrid,
    pub components: usize,
    pub dt: f64,
    pub steps_per_map: usize,
    pub band: usize,
    pub tol: f64,
    pub eta_hat: f64,
    /// Component-major nodal values at `t = 0`.
    pub u: Vec<f64>,
    /// Sup-norm change per Picard iterate.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub diagnostics: WaveDiagnostics,
    #[serde(skip)]
    pub envelope: Envelope,
}

impl WaveProfile {
    pub fn component(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.u[i * n..(i + 1) * n]
    }

    pub fn value(&self, comp: usize, ir: usize, iy: usize) -> f64 {
        self.u[comp * self.grid.len() + self.grid.index(ir, iy)]
    }

    /// Rebuilds the period map this profile is a fixed point of.
    pub fn problem(&self, model: &ModelSpec) -> Result<WaveProblem> {
        WaveProblem::new(
            model,
            &self.frame,
            self.speed,
            self.grid.clone(),
            self.frame.tau1 / self.speed,
            Some(self.steps_per_map),
            Some(self.envelope.clone()),
            self.band,
        )
    }

    /// Rows `r, y..., u_1..u_d`.
    pub fn to_csv(&self) -> String {
        let m = self.frame.cross_dim();
        let mut s = String::from("r");
        for l in 0..m {
            s += &format!(",y{}", l + 1);
        }
        for i in 0..self.components {
            s += &format!(",u{}", i + 1);
        }
        s.push('\n');
        for iy in 0..self.grid.cross_len() {
            let y = self.grid.y(iy);
            for ir in 0..self.grid.nr {
                s += &sig(self.grid.r(ir));
                for yl in &y[..m] {
                    s.push(',');
                    s += &sig(*yl);
                }
                for i in 0..self.components {
                    s.push(',');
                    s += &sig(self.value(i, ir, iy));
                }
                s.push('\n');
            }
        }
        s
    }
}

fn wave_grid(frame: &RationalFrame, model: &ModelSpec, lambda: f64, opts: &WaveOptions) -> Result<CylinderGrid> {
    let tau1 = frame.tau1;
    let m = opts
        .cells_per_period
        .unwrap_or_else(|| (tau1 / (1.0f64 / 16.0).min(0.2 / lambda)).ceil() as usize)
        .max(1);
    let h_r = tau1 / m as f64;
    let a_req = opts.a.unwrap_or(-40.0 / lambda);
    if !(a_req < 0.0) {
        return Err(Error::param("a", "must be negative"));
    }
    let a = -tau1 * (-a_req / tau1 - 1e-9).ceil();
    let r_req = opts.r_max.unwrap_or(20.0 / lambda);
    let r_max = h_r * (r_req / h_r - 1e-9).ceil();
    if r_max - a < 20.0 / lambda - 1e-9 {
        return Err(Error::param("r_max", "window shorter than 20 decay lengths"));
    }
    let ny = match &opts.cross_nodes {
        Some(ny) => ny.clone(),
        None => frame
            .y_shift_ratio
            .iter()
            .zip(&frame.torus_periods)
            .map(|(&(_, den), &period)| {
                let den = den as usize;
                let want = if model.is_homogeneous() {
                    4
                } else {
                    (8.0 * period).ceil().max(4.0) as usize
                };
                den * want.div_ceil(den)
            })
            .collect(),
    };
    CylinderGrid::new(a, r_max, h_r, frame.torus_periods.clone(), ny)
}

fn diagnostics(pb: &WaveProblem, u: &[f64]) -> Result<WaveDiagnostics> {
    let g = &pb.grid;
    let nn = g.len();
    let d = pb.components();
    let col_max = |ir: usize| {
        (0..g.cross_len())
            .flat_map(|iy| (0..d).map(move |i| u[i * nn + g.index(ir, iy)]))
            .fold(0.0, f64::max)
    };
    let hi = g.nr - pb.band - 1;
    let top = col_max(hi);
    let mut lo = hi;
    while lo > 0 && col_max(lo - 1) <= 10.0 * top && col_max(lo - 1) > 0.0 {
        lo -= 1;
    }
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .filter_map(|ir| {
            let m = col_max(ir);
            (m > 0.0).then(|| (g.r(ir), m.ln()))
        })
        .collect();
    let slope = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        -sxy / sxx
    } else {
        f64::NAN
    };
    let mut plateau = f64::INFINITY;
    for ir in 0..g.nr {
        if g.r(ir) > g.a + 2.0 + 1e-12 {
            break;
        }
        for iy in 0..g.cross_len() {
            for i in 0..d {
                plateau = plateau.min(u[i * nn + g.index(ir, iy)]);
            }
        }
    }
    let q = pb.map(u, false)?;
    let residual = q.iter().zip(u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(WaveDiagnostics {
        right_tail_slope: slope,
        left_plateau_min: plateau,
        pulsating_residual: residual,
        right_tail_max: top,
    })
}

/// Picard iteration of the clamped period map from the upper envelope.
pub fn construct_pulsating_wave(
    model: &ModelSpec,
    frame: &RationalFrame,
    c: f64,
    opts: &WaveOptions,
) -> Result<WaveProfile> {
    if model.dim() != frame.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: frame.dim(),
        });
    }
    if !(c > 0.0) {
        return Err(Error::param("speed", "must be positive"));
    }
    let eg = PeriodicGrid::uniform(model.dim(), opts.eigen_points)?;
    let speed = minimal_speed(model, &frame.e, &eg, &opts.barrier.eigen)?;
    let c_star = speed.c_star;
    if c < c_star - 1e-6 * (1.0 + c_star) {
        return Err(Error::SpeedBelowMinimal { c, c_star });
    }
    let critical = c <= c_star * (1.0 + opts.critical_window);
    let (lower, upper, gamma, lambda) = if critical {
        let (lo, up) = build_critical_pair_with(model, &speed, &eg, &opts.barrier)?;
        let gamma = up.constants.gamma_hat.unwrap_or(1.0);
        (lo, up, gamma, speed.lambda_star)
    } else {
        let up = build_super_h_with(model, &speed, c, &eg, &opts.barrier)?;
        let lo = build_sub_omega_with(model, &speed, c, &eg, &opts.barrier)?;
        let l = up.constants.lambda;
        (lo, up, 1.0, l)
    };
    let grid = wave_grid(frame, model, lambda, opts)?;
    let translates = (-grid.a / frame.tau1 + 1e-9).floor() as usize;
    let envelope = Envelope {
        critical,
        gamma,
        eta_hat: model.eta_hat(),
        translates,
        tau1: frame.tau1,
        bezout: frame.bezout.iter().map(|&b| b as f64).collect(),
        upper,
        lower,
    };
    let pb = WaveProblem::new(
        model,
        frame,
        c,
        grid,
        frame.tau1 / c,
        opts.steps_per_map,
        Some(envelope),
        opts.band,
    )?;
    let nn = pb.grid.len();
    for (k, (lo, hi)) in pb.lower0.iter().zip(&pb.upper0).enumerate() {
        if lo > &(hi + 1e-12) {
            return Err(Error::EnvelopeCollapse {
                node: k % nn,
                gap: lo - hi,
            });
        }
    }
    let mut u = pb.upper0.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let next = pb.map(&u, true)?;
        let res = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        u = next;
        trace.push(res);
        if res < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: trace.len(),
            residual: trace.last().copied().unwrap_or(f64::NAN),
        });
    }
    let diagnostics = diagnostics(&pb, &u)?;
    Ok(WaveProfile {
        frame: frame.clone(),
        speed: c,
        c_star,
        decay_rate: lambda,
        critical,
        components: model.components(),
        dt: pb.dt,
        steps_per_map: pb.steps,
        band: pb.band,
        tol: opts.tol,
        eta_hat: model.eta_hat(),
        iterations: trace.len(),
        u,
        trace,
        diagnostics,
        envelope: pb.envelope.clone().unwrap(),
        grid: pb.grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveCheck {
    Pulsating,
    Limits,
    Speed,
    Monotonicity,
}

impl WaveCheck {
    pub const ALL: [WaveCheck; 4] = [
        WaveCheck::Pulsating,
        WaveCheck::Limits,
        WaveCheck::Speed,
        WaveCheck::Monotonicity,
    ];
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    /// Smallest nodal `f - L u`.
    pub min_dt: f64,
    /// Largest nodal tolerance used.
    pub tol_fd: f64,
    /// Smallest `f - L u + tol` over the checked nodes.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct WaveReport {
    pub pulsating_residual: Option<f64>,
    pub pulsating_ok: Option<bool>,
    pub right_tail: Option<f64>,
    pub left_plateau: Option<f64>,
    pub limits_ok: Option<bool>,
    pub c_star: f64,
    pub speed_ok: Option<bool>,
    /// `None` when not requested or the model is not subhomogeneous.
    pub monotonicity: Option<MonotonicityReport>,
    pub subhomogeneous: Option<bool>,
    pub passed: bool,
}

/// Post-hoc checks of a computed profile.
pub fn verify_wave(model: &ModelSpec, profile: &WaveProfile, checks: &[WaveCheck]) -> Result<WaveReport> {
    let pb = profile.problem(model)?;
    let g = &pb.grid;
    let nn = g.len();
    let d = pb.components();
    let u = &profile.u;
    let want = |c: WaveCheck| checks.contains(&c);
    let mut report = WaveReport {
        pulsating_residual: None,
        pulsating_ok: None,
        right_tail: None,
        left_plateau: None,
        limits_ok: None,
        c_star: profile.c_star,
        speed_ok: None,
        monotonicity: None,
        subhomogeneous: None,
        passed: true,
    };
    let mut residual = 0.0;
    if want(WaveCheck::Pulsating) || want(WaveCheck::Monotonicity) {
        let q = pb.map(u, false)?;
        residual = q.iter().zip(u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    }
    if want(WaveCheck::Pulsating) {
        let ok = residual < 10.0 * profile.tol;
        report.pulsating_residual = Some(residual);
        report.pulsating_ok = Some(ok);
        report.passed &= ok;
    }
    if want(WaveCheck::Limits) {
        let diag = diagnostics(&pb, u)?;
        let ok = diag.right_tail_max < 1e-6 * profile.eta_hat && diag.left_plateau_min >= 1e-3 * profile.eta_hat;
        report.right_tail = Some(diag.right_tail_max);
        report.left_plateau = Some(diag.left_plateau_min);
        report.limits_ok = Some(ok);
        report.passed &= ok;
    }
    if want(WaveCheck::Speed) {
        let ok = profile.speed >= profile.c_star - 1e-6 * (1.0 + profile.c_star);
        report.speed_ok = Some(ok);
        report.passed &= ok;
    }
    if want(WaveCheck::Monotonicity) {
        let sub = check_structure(model, &SamplePlan::dense(model.dim()))?.subhomogeneous;
        report.subhomogeneous = Some(sub);
        if sub {
            let period = profile.frame.tau1 / profile.speed;
            let dim = pb.frame.dim();
            let mut uu = vec![0.0; d];
            let mut f = vec![0.0; d];
            let (mut min_dt, mut tol_max, mut margin) = (f64::INFINITY, 0.0f64, f64::INFINITY);
            let last = g.nr - pb.band - 4;
            for iy in 0..g.cross_len() {
                for ir in 4..last {
                    let p = g.index(ir, iy);
                    let x = pb.node_point(0.0, ir, iy);
                    for i in 0..d {
                        uu[i] = u[i * nn + p];
                    }
                    model.reaction_into(&x[..dim], &uu, &mut f);
                    for i in 0..d {
                        let l1 = pb.operator_at(u, i, ir, iy, 1);
                        let l2 = pb.operator_at(u, i, ir, iy, 2);
                        let dt = f[i] - l1;
                        let tol = 2.0 * (l1 - l2).abs() + 2.0 * residual / period + 1e-12 * (1.0 + f[i].abs());
                        min_dt = min_dt.min(dt);
                        tol_max = tol_max.max(tol);
                        margin = margin.min(dt + tol);
                    }
                }
            }
            let ok = margin >= 0.0;
            report.monotonicity = Some(MonotonicityReport {
                min_dt,
                tol_fd: tol_max,
                margin,
                passed: ok,
            });
            report.passed &= ok;
        }
    }
    Ok(report)
}

/// `sup |Q^m(u)(r, y) - u(r, y + m b_perp - k_perp)|` with `m = k.p`: the
/// lattice relation for `k` read through `m` period maps, with periodic
/// interpolation across the section.
pub fn lattice_residual(model: &ModelSpec, profile: &WaveProfile, k: &[i64]) -> Result<f64> {
    let fr = &profile.frame;
    if k.len() != fr.dim() {
        return Err(Error::DimensionMismatch {
            expected: fr.dim(),
            got: k.len(),
        });
    }
    let m = dot_i(k, &fr.p);
    if m <= 0 {
        return Err(Error::param("k", "need k.p > 0"));
    }
    let pb = profile.problem(model)?;
    let mut v = profile.u.clone();
    for _ in 0..m {
        v = pb.map(&v, false)?;
    }
    let g = &pb.grid;
    let nn = g.len();
    let cd = fr.cross_dim();
    let diff: Vec<f64> = fr.bezout.iter().zip(k).map(|(&b, &kj)| (m * b - kj) as f64).collect();
    let shift: Vec<f64> = fr.zeta.iter().map(|z| dot(&diff, z)).collect();
    let cross = if cd > 0 { Some(PeriodicGrid::new(g.ny.clone())?) } else { None };
    let mut col = vec![0.0; g.cross_len()];
    let mut worst = 0.0f64;
    for i in 0..pb.components() {
        for ir in 0..g.nr {
            for iy in 0..g.cross_len() {
                col[iy] = profile.u[i * nn + g.index(ir, iy)];
            }
            for iy in 0..g.cross_len() {
                let target = match &cross {
                    None => col[0],
                    Some(pg) => {
                        let y = g.y(iy);
                        let mut z = [0.0; MAX_DIM];
                        for l in 0..cd {
                            z[l] = ((y[l] + shift[l]) / g.periods[l]).rem_euclid(1.0);
                        }
                        pg.interpolate(&col, &z[..cd])
                    }
                };
                worst = worst.max((v[i * nn + g.index(ir, iy)] - target).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct ARefinement {
    pub a: f64,
    pub a_doubled: f64,
    /// Sup difference over the common nodes.
    pub change: f64,
}

/// Recomputes the wave with `|a|` doubled and compares on the common window.
pub fn a_refinement_study(
    model: &ModelSpec,
    frame: &RationalFrame,
    c: f64,
    base: &WaveProfile,
    opts: &WaveOptions,
) -> Result<ARefinement> {
    let mut o = opts.clone();
    o.a = Some(2.0 * base.grid.a);
    o.r_max = Some(base.grid.r_max());
    o.cross_nodes = Some(base.grid.ny.clone());
    o.cells_per_period = Some((frame.tau1 / base.grid.h_r).round() as usize);
    o.steps_per_map = Some(base.steps_per_map);
    let wide = construct_pulsating_wave(model, frame, c, &o)?;
    let off = ((base.grid.a - wide.grid.a) / base.grid.h_r).round() as usize;
    let mut change = 0.0f64;
    for i in 0..base.components {
        for iy in 0..base.grid.cross_len() {
            for ir in 0..base.grid.nr {
                change = change.max((base.value(i, ir, iy) - wide.value(i, ir + off, iy)).abs());
            }
        }
    }
    Ok(ARefinement {
        a: base.grid.a,
        a_doubled: wide.grid.a,
        change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Builtin;

    fn kpp() -> ModelSpec {
        Builtin::by_name("scalar_kpp", 1).unwrap().build().unwrap()
    }

    #[test]
    fn frames_of_spec_directions() {
        let f = rational_frame(&[1, 0]).unwrap();
        assert_eq!(f.e, vec![1.0, 0.0]);
        assert_eq!(f.tau1, 1.0);
        assert_eq!(f.cross_periods, vec![1.0]);
        let f = rational_frame(&[3, 4]).unwrap();
        assert!((f.tau1 - 0.2).abs() < 1e-15);
        assert!((f.e[0] - 0.6).abs() < 1e-15 && (f.e[1] - 0.8).abs() < 1e-15);
        assert_eq!(f.cross_vectors, vec![vec![4, -3]]);
        assert_eq!(dot_i(&f.bezout, &f.p), 1);
        assert_eq!(rational_frame(&[2, 0]).unwrap().p, vec![1, 0]);
        let f = rational_frame(&[-3]).unwrap();
        assert_eq!((f.e.clone(), f.tau1, f.cross_dim()), (vec![-1.0], 1.0, 0));
        assert!(matches!(rational_frame(&[0, 0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn frame_rotation_and_lattice() {
        for p in [vec![3, 4], vec![1, 2, 2], vec![2, -3, 5], vec![0, 0, 7]] {
            let f = rational_frame(&p).unwrap();
            let n = p.len();
            for i in 0..n {
                for j in 0..n {
                    let s: f64 = (0..n).map(|k| f.rotation[k * n + i] * f.rotation[k * n + j]).sum();
                    assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
            for k in 0..n {
                let unit: Vec<i64> = (0..n).map(|j| (j == k) as i64).collect();
                for c in f.lattice_coordinates(&unit) {
                    assert!((c - c.round()).abs() < 1e-9, "{p:?}");
                }
            }
        }
    }

    #[test]
    fn nearest_rational_direction() {
        let a = 0.3f64;
        let p = nearest_rational(&[a.cos(), a.sin()], 50.0).unwrap();
        let n = ((p[0] * p[0] + p[1] * p[1]) as f64).sqrt();
        assert!(n <= 50.0);
        assert!(((p[1] as f64).atan2(p[0] as f64) - a).abs() < 1e-3);
        assert_eq!(nearest_rational(&[0.0, 2.0], 50.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn constants_are_preserved_without_reaction() {
        let m = ModelSpec::builder("heat", 2, 1)
            .reaction(std::sync::Arc::new(|_x, _u, out| out[0] = 0.0))
            .homogeneous(true)
            .build()
            .unwrap();
        let f = rational_frame(&[1, 1]).unwrap();
        let g = CylinderGrid::new(-2.0, 2.0, 0.1, f.torus_periods.clone(), vec![8]).unwrap();
        let phi = vec![0.7; g.len()];
        let out = solve_moving_boundary(&m, &f, 1.5, &g, &phi, 0.5).unwrap();
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn solves_are_ordered() {
        let m = kpp();
        let f = rational_frame(&[1]).unwrap();
        let g = CylinderGrid::new(-10.0, 10.0, 0.125, vec![], vec![]).unwrap();
        let lo: Vec<f64> = (0..g.nr).map(|i| 0.5 / (1.0 + g.r(i).exp())).collect();
        let hi: Vec<f64> = lo.iter().enumerate().map(|(i, v)| v + 0.1 * (i % 3) as f64).collect();
        let a = solve_moving_boundary(&m, &f, 2.5, &g, &lo, 1.0).unwrap();
        let b = solve_moving_boundary(&m, &f, 2.5, &g, &hi, 1.0).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
    }

    fn kpp_problem() -> WaveProblem {
        let m = kpp();
        let f = rational_frame(&[1]).unwrap();
        let eg = PeriodicGrid::uniform(1, 16).unwrap();
        let o = BarrierOptions::default();
        let speed = minimal_speed(&m, &[1.0], &eg, &o.eigen).unwrap();
        let upper = build_super_h_with(&m, &speed, 2.5, &eg, &o).unwrap();
        let lower = build_sub_omega_with(&m, &speed, 2.5, &eg, &o).unwrap();
        let g = CylinderGrid::new(-20.0, 40.0, 0.0625, vec![], vec![]).unwrap();
        let env = Envelope {
            critical: false,
            gamma: 1.0,
            eta_hat: 1.0,
            translates: 20,
            tau1: 1.0,
            bezout: vec![1.0],
            upper,
            lower,
        };
        WaveProblem::new(&m, &f, 2.5, g, 0.4, None, Some(env), 5).unwrap()
    }

    #[test]
    fn map_respects_the_envelope() {
        let pb = kpp_problem();
        let up = pb.upper_slice().to_vec();
        let lo = pb.lower_slice().to_vec();
        assert!(lo.iter().zip(&up).all(|(l, u)| l <= u));
        assert!(lo.iter().any(|&l| l > 0.0));
        let qu = pb.map(&up, false).unwrap();
        assert!(qu.iter().zip(&up).all(|(q, u)| *q <= u + 1e-12));
        let ql = pb.map(&lo, false).unwrap();
        assert!(ql.iter().zip(&lo).all(|(q, l)| *q >= l - 1e-12));
    }

    #[test]
    fn solve_stays_below_the_exact_supersolution() {
        let pb = kpp_problem();
        let env = pb.envelope.as_ref().unwrap();
        let v = pb.advance(pb.upper_slice()).unwrap();
        let t = pb.horizon();
        let mut h = [0.0];
        for ir in 0..pb.grid.nr {
            let x = pb.node_point(t, ir, 0);
            env.upper_into(t, &x[..1], &mut h);
            assert!(v[ir] <= h[0] + 1e-9, "{ir}");
        }
    }

    #[test]
    fn below_minimal_speed_is_refused() {
        let f = rational_frame(&[1]).unwrap();
        let err = construct_pulsating_wave(&kpp(), &f, 1.8, &WaveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SpeedBelowMinimal { .. }));
    }
}
