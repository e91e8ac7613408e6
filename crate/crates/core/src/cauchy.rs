//! Direct simulation of the Cauchy problem `u_t + L u = f(x, u)`.
//!
//! Backward Euler for diffusion and advection (one sparse LU per
//! component, reused across steps), forward Euler for the reaction.

use serde::Serialize;

use crate::disc::PeriodicGrid;
use crate::eigen::{generalized_principal_eigenvalue, k_of, EigenOptions};
use crate::error::{Error, Result};
use crate::linalg::{SparseLu, TripletBuilder};
use crate::model::{check_structure, ModelSpec, SamplePlan, MAX_DIM};

const OVERSHOOT: f64 = 1e-10;
const MAX_HALVINGS: usize = 20;

/// Rectangular node grid, periodic (a torus of whole cells) or a box
/// with Neumann walls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimGrid {
    pub lo: Vec<f64>,
    pub h: Vec<f64>,
    pub n: Vec<usize>,
    pub periodic: bool,
}

impl SimGrid {
    /// `cells[l]` unit cells along axis `l`, `per_cell` nodes per cell.
    pub fn torus(cells: &[usize], per_cell: usize) -> Result<Self> {
        if cells.is_empty() || cells.len() > MAX_DIM || cells.iter().any(|&c| c == 0) || per_cell < 2 {
            return Err(Error::param("grid", "need 1..=3 positive cell counts and >= 2 nodes per cell"));
        }
        Ok(Self {
            lo: vec![0.0; cells.len()],
            h: vec![1.0 / per_cell as f64; cells.len()],
            n: cells.iter().map(|c| c * per_cell).collect(),
            periodic: true,
        })
    }

    /// Nodes `lo + j h` up to `hi` inclusive on every axis.
    pub fn boxed(lo: &[f64], hi: &[f64], h: f64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > MAX_DIM {
            return Err(Error::param("grid", "lo and hi need 1..=3 matching entries"));
        }
        if !(h > 0.0) || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(Error::param("grid", "need hi > lo and h > 0"));
        }
        Ok(Self {
            lo: lo.to_vec(),
            h: vec![h; lo.len()],
            n: lo.iter().zip(hi).map(|(a, b)| ((b - a) / h).round() as usize + 1).collect(),
            periodic: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut m = [0; MAX_DIM];
        for (l, &k) in self.n.iter().enumerate() {
            m[l] = idx % k;
            idx /= k;
        }
        m
    }

    pub fn index(&self, m: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (l, &k) in self.n.iter().enumerate() {
            idx += m[l] * stride;
            stride *= k;
        }
        idx
    }

    pub fn point(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.multi(idx);
        let mut x = [0.0; MAX_DIM];
        for l in 0..self.dim() {
            x[l] = self.lo[l] + m[l] as f64 * self.h[l];
        }
        x
    }

    fn shifted(&self, idx: usize, moves: &[(usize, isize)]) -> usize {
        let mut m = self.multi(idx);
        for &(axis, step) in moves {
            let k = self.n[axis] as isize;
            let mut j = m[axis] as isize + step;
            if self.periodic {
                j = j.rem_euclid(k);
            } else {
                if j < 0 {
                    j = -j;
                }
                if j > k - 1 {
                    j = 2 * (k - 1) - j;
                }
            }
            m[axis] = j as usize;
        }
        self.index(&m)
    }

    /// Nodes on the outer faces of a box (none on a torus).
    pub fn is_wall(&self, idx: usize) -> bool {
        let m = self.multi(idx);
        !self.periodic && (0..self.dim()).any(|l| m[l] == 0 || m[l] == self.n[l] - 1)
    }
}

fn assemble(model: &ModelSpec, grid: &SimGrid, comp: usize, dt: f64) -> Result<SparseLu> {
    let n = grid.dim();
    let mut tb = TripletBuilder::with_capacity(grid.len(), grid.len() * (1 + 2 * n + 2 * n * n));
    let mut a = [0.0; MAX_DIM * MAX_DIM];
    let mut q = [0.0; MAX_DIM];
    for row in 0..grid.len() {
        let x = grid.point(row);
        model.diffusion_into(comp, &x[..n], &mut a[..n * n]);
        model.advection_into(comp, &x[..n], &mut q[..n]);
        let mut diag = 1.0;
        for l in 0..n {
            let h = grid.h[l];
            let all = a[l * n + l];
            let (mut lo, mut hi) = (-all / (h * h), -all / (h * h));
            let mut mid = 2.0 * all / (h * h);
            if q[l].abs() * h < 2.0 * all {
                lo -= q[l] / (2.0 * h);
                hi += q[l] / (2.0 * h);
            } else if q[l] > 0.0 {
                lo -= q[l] / h;
                mid += q[l] / h;
            } else {
                hi += q[l] / h;
                mid -= q[l] / h;
            }
            diag += dt * mid;
            tb.push(row, grid.shifted(row, &[(l, -1)]), dt * lo);
            tb.push(row, grid.shifted(row, &[(l, 1)]), dt * hi);
            for k in l + 1..n {
                let alk = a[l * n + k] + a[k * n + l];
                if alk == 0.0 {
                    continue;
                }
                let w = -dt * alk / (4.0 * h * grid.h[k]);
                for (sl, sk, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                    tb.push(row, grid.shifted(row, &[(l, sl), (k, sk)]), sign * w);
                }
            }
        }
        tb.push(row, row, diag);
    }
    tb.build().lu()
}

pub struct SimulationState {
    model: ModelSpec,
    pub grid: SimGrid,
    /// Component-major nodal values.
    pub u: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    /// Step-size halvings triggered by overshoot so far.
    pub halvings: usize,
    bound: Option<f64>,
    lus: Vec<SparseLu>,
}

impl SimulationState {
    pub fn new(model: &ModelSpec, grid: SimGrid, u0: Vec<f64>, dt: f64) -> Result<Self> {
        if grid.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: grid.dim(),
            });
        }
        let d = model.components();
        if u0.len() != d * grid.len() {
            return Err(Error::DimensionMismatch {
                expected: d * grid.len(),
                got: u0.len(),
            });
        }
        if u0.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::param("u0", "initial data must be finite and nonnegative"));
        }
        if !(dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        let lip = model.lipschitz();
        if dt * lip >= 0.5 {
            return Err(Error::CflViolation { value: dt * lip });
        }
        let eta = model.eta_hat();
        let bound = (u0.iter().cloned().fold(0.0, f64::max) <= eta).then_some(eta);
        let lus = (0..d).map(|i| assemble(model, &grid, i, dt)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: model.clone(),
            grid,
            u: u0,
            t: 0.0,
            dt,
            halvings: 0,
            bound,
            lus,
        })
    }

    pub fn components(&self) -> usize {
        self.model.components()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.u[i * n..(i + 1) * n]
    }

    pub fn sup(&self) -> f64 {
        self.u.iter().cloned().fold(0.0, f64::max)
    }

    fn try_step(&self) -> Result<(Vec<f64>, f64)> {
        let d = self.components();
        let nn = self.grid.len();
        let dim = self.grid.dim();
        let mut rhs = vec![0.0; d * nn];
        let mut u = vec![0.0; d];
        let mut f = vec![0.0; d];
        for p in 0..nn {
            let x = self.grid.point(p);
            for i in 0..d {
                u[i] = self.u[i * nn + p];
            }
            self.model.reaction_into(&x[..dim], &u, &mut f);
            for i in 0..d {
                rhs[i * nn + p] = u[i] + self.dt * f[i];
            }
        }
        for (i, lu) in self.lus.iter().enumerate() {
            lu.solve_in_place(&mut rhs[i * nn..(i + 1) * nn])?;
        }
        let mut over = rhs.iter().fold(0.0f64, |m, v| m.max(-v));
        if let Some(b) = self.bound {
            over = over.max(rhs.iter().fold(0.0f64, |m, v| m.max(v - b)));
        }
        if !over.is_finite() {
            return Err(Error::NonFiniteEvaluation {
                what: "simulation step",
                x: Vec::new(),
                u: Vec::new(),
            });
        }
        Ok((rhs, over))
    }

    fn set_dt(&mut self, dt: f64) -> Result<()> {
        self.dt = dt;
        self.lus = (0..self.components())
            .map(|i| assemble(&self.model, &self.grid, i, dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    /// One IMEX step; the step size is halved (for this and later steps)
    /// while the update leaves `[0, eta_hat]` by more than `1e-10`.
    pub fn step(&mut self) -> Result<()> {
        loop {
            let (mut next, over) = self.try_step()?;
            if over > OVERSHOOT {
                if self.halvings < MAX_HALVINGS {
                    self.halvings += 1;
                    self.set_dt(0.5 * self.dt)?;
                    continue;
                }
                let min = next.iter().cloned().fold(f64::INFINITY, f64::min);
                return Err(Error::NegativeOvershoot { min });
            }
            next.iter_mut().for_each(|v| *v = v.max(0.0));
            self.u = next;
            self.t += self.dt;
            return Ok(());
        }
    }

    /// Steps until `t >= t_end` (within `1e-9 dt`).
    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end - 1e-9 * self.dt {
            self.step()?;
        }
        Ok(())
    }
}

pub fn step(state: &mut SimulationState) -> Result<()> {
    state.step()
}

/// `height * (1 - |x| / radius)_+` in component `comp`, zero elsewhere.
pub fn bump(grid: &SimGrid, components: usize, comp: usize, height: f64, radius: f64) -> Vec<f64> {
    let nn = grid.len();
    let mut u = vec![0.0; components * nn];
    for p in 0..nn {
        let x = grid.point(p);
        let r = x[..grid.dim()].iter().map(|v| v * v).sum::<f64>().sqrt();
        u[comp * nn + p] = height * (1.0 - r / radius).max(0.0);
    }
    u
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontTrack {
    /// +1 for the right front, -1 for the left one.
    pub side: i32,
    pub times: Vec<f64>,
    pub positions: Vec<Option<f64>>,
    /// Least-squares slope of `side * x_theta(t)` on `[T/2, T]`.
    pub speed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpreadingReport {
    pub theta: f64,
    pub horizon: f64,
    pub right: FrontTrack,
    pub left: FrontTrack,
    pub max_wall: f64,
}

/// Outermost `theta` crossing of component 0 along axis 0, interpolated
/// between nodes; `side` is +1 (rightmost) or -1 (leftmost).
fn front_position(grid: &SimGrid, u: &[f64], theta: f64, side: i32) -> Option<f64> {
    let n0 = grid.n[0];
    let h = grid.h[0];
    let cross = grid.len() / n0;
    let mut best: Option<f64> = None;
    for c in 0..cross {
        let at = |j: usize| u[c * n0 + j];
        let hit = if side > 0 {
            (0..n0).rev().find(|&j| at(j) >= theta)
        } else {
            (0..n0).find(|&j| at(j) >= theta)
        };
        let Some(j) = hit else { continue };
        let x = grid.lo[0] + j as f64 * h;
        let nb = if side > 0 { j + 1 } else { j.wrapping_sub(1) };
        let pos = if nb < n0 {
            let (a, b) = (at(j), at(nb));
            x + side as f64 * h * (a - theta) / (a - b)
        } else {
            x
        };
        best = Some(match best {
            None => pos,
            Some(p) if side > 0 => p.max(pos),
            Some(p) => p.min(pos),
        });
    }
    best
}

fn fit_slope(ts: &[f64], xs: &[f64]) -> f64 {
    let k = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / k;
    let mx = xs.iter().sum::<f64>() / k;
    let sxy: f64 = ts.iter().zip(xs).map(|(t, x)| (t - mt) * (x - mx)).sum();
    let stt: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    sxy / stt
}

/// Speeds of the `theta` level set of component 0 in the directions `+-e^1`
/// on a box grid, from samples every `sample_every` in time.
pub fn spreading_speed(
    model: &ModelSpec,
    grid: &SimGrid,
    u0: Vec<f64>,
    horizon: f64,
    theta: f64,
    dt: f64,
    sample_every: f64,
) -> Result<SpreadingReport> {
    if grid.periodic {
        return Err(Error::param("grid", "spreading speeds need a box grid"));
    }
    if !(horizon > 0.0) || !(sample_every > 0.0) {
        return Err(Error::param("horizon", "horizon and sample spacing must be positive"));
    }
    let mut st = SimulationState::new(model, grid.clone(), u0, dt)?;
    let nn = grid.len();
    let mut times = Vec::new();
    let mut right = Vec::new();
    let mut left = Vec::new();
    let mut max_wall = 0.0f64;
    let samples = (horizon / sample_every).round() as usize;
    for s in 1..=samples {
        st.run_until(s as f64 * sample_every)?;
        let wall = (0..nn)
            .filter(|&p| grid.is_wall(p))
            .flat_map(|p| (0..st.components()).map(move |i| i * nn + p))
            .map(|k| st.u[k])
            .fold(0.0, f64::max);
        max_wall = max_wall.max(wall);
        if wall > 1e-8 {
            return Err(Error::FrontHitWall { value: wall });
        }
        times.push(st.t);
        right.push(front_position(grid, &st.u[..nn], theta, 1));
        left.push(front_position(grid, &st.u[..nn], theta, -1));
    }
    let track = |side: i32, pos: Vec<Option<f64>>| -> Result<FrontTrack> {
        let mut ts = Vec::new();
        let mut xs = Vec::new();
        for (t, p) in times.iter().zip(&pos) {
            if *t >= 0.5 * horizon - 1e-12 {
                let x = p.ok_or(Error::FrontNotFormed { t: *t })?;
                ts.push(*t);
                xs.push(side as f64 * x);
            }
        }
        if ts.len() < 2 {
            return Err(Error::FrontNotFormed { t: horizon });
        }
        Ok(FrontTrack {
            side,
            times: times.clone(),
            speed: fit_slope(&ts, &xs),
            positions: pos,
        })
    };
    Ok(SpreadingReport {
        theta,
        horizon,
        right: track(1, right)?,
        left: track(-1, left)?,
        max_wall,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HairTriggerReport {
    pub lambda_1: f64,
    /// Per-component minimum over `|x| <= radius` at the horizon.
    pub floor: Vec<f64>,
    /// Every component's floor exceeds `1e-3 * eta_hat`.
    pub persisted: bool,
}

fn eigen_grid(dim: usize) -> Result<PeriodicGrid> {
    PeriodicGrid::uniform(dim, 16)
}

fn first_axis(dim: usize) -> Vec<f64> {
    (0..dim).map(|l| if l == 0 { 1.0 } else { 0.0 }).collect()
}

pub fn hair_trigger_test(
    model: &ModelSpec,
    grid: &SimGrid,
    u0: Vec<f64>,
    horizon: f64,
    radius: f64,
    dt: f64,
) -> Result<HairTriggerReport> {
    if u0.iter().all(|&v| v == 0.0) {
        return Err(Error::param("u0", "initial datum vanishes identically"));
    }
    let e = first_axis(model.dim());
    let ge = generalized_principal_eigenvalue(model, &e, &eigen_grid(model.dim())?, &EigenOptions::default())?;
    if ge.lambda_1 >= 0.0 {
        return Err(Error::HypothesisUnmet(format!(
            "lambda_1 = {:e} is not negative",
            ge.lambda_1
        )));
    }
    let mut st = SimulationState::new(model, grid.clone(), u0, dt)?;
    st.run_until(horizon)?;
    let nn = grid.len();
    let d = st.components();
    let mut floor = vec![f64::INFINITY; d];
    for p in 0..nn {
        let x = grid.point(p);
        if x[..grid.dim()].iter().map(|v| v * v).sum::<f64>().sqrt() <= radius {
            for (i, fl) in floor.iter_mut().enumerate() {
                *fl = fl.min(st.u[i * nn + p]);
            }
        }
    }
    if floor.iter().any(|f| f.is_infinite()) {
        return Err(Error::param("radius", "no grid node within the radius"));
    }
    let persisted = floor.iter().all(|&f| f > 1e-3 * model.eta_hat());
    Ok(HairTriggerReport {
        lambda_1: ge.lambda_1,
        floor,
        persisted,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtinctionReport {
    pub lambda_p1: f64,
    pub final_sup: f64,
    pub extinct: bool,
    /// `(t, sup u(t))` after every step.
    pub sup_trace: Vec<(f64, f64)>,
    pub nonincreasing: bool,
}

/// Runs from `u0 = eta_hat` and records the sup norm.
pub fn extinction_test(model: &ModelSpec, grid: &SimGrid, horizon: f64, dt: f64) -> Result<ExtinctionReport> {
    let e = first_axis(model.dim());
    let lambda_p1 = k_of(model, &e, 0.0, &eigen_grid(model.dim())?, &EigenOptions::default())?.value;
    if lambda_p1 < 0.0 {
        return Err(Error::HypothesisUnmet(format!(
            "periodic principal eigenvalue {lambda_p1:e} is negative"
        )));
    }
    if !check_structure(model, &SamplePlan::dense(model.dim()))?.strictly_sublinear {
        return Err(Error::HypothesisUnmet("reaction is not strictly sublinear".into()));
    }
    let u0 = vec![model.eta_hat(); model.components() * grid.len()];
    let mut st = SimulationState::new(model, grid.clone(), u0, dt)?;
    let mut sup_trace = vec![(0.0, st.sup())];
    while st.t < horizon - 1e-9 * st.dt {
        st.step()?;
        sup_trace.push((st.t, st.sup()));
    }
    let nonincreasing = sup_trace.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let final_sup = st.sup();
    Ok(ExtinctionReport {
        lambda_p1,
        final_sup,
        extinct: final_sup < 1e-4,
        sup_trace,
        nonincreasing,
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
    fn logistic_reduction() {
        let g = SimGrid::torus(&[2], 8).unwrap();
        let mut st = SimulationState::new(&kpp(), g, vec![0.5; 16], 1e-3).unwrap();
        st.run_until(1.0).unwrap();
        let e = 1f64.exp();
        let exact = 0.5 * e / (1.0 + 0.5 * (e - 1.0));
        assert!(st.u.iter().all(|v| (v - exact).abs() < 1e-4));
        assert!((st.t - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constants_without_reaction() {
        let m = ModelSpec::builder("heat", 2, 2)
            .reaction(std::sync::Arc::new(|_x, _u, out| out.iter_mut().for_each(|o| *o = 0.0)))
            .homogeneous(true)
            .build()
            .unwrap();
        let g = SimGrid::boxed(&[-1.0, -1.0], &[1.0, 1.0], 0.25).unwrap();
        let mut st = SimulationState::new(&m, g.clone(), vec![0.3; 2 * g.len()], 0.01).unwrap();
        for _ in 0..20 {
            st.step().unwrap();
        }
        assert!(st.u.iter().all(|v| (v - 0.3).abs() < 1e-13));
    }

    #[test]
    fn zero_datum_is_rejected() {
        let m = Builtin::by_name("constant_coop2", 1).unwrap().build().unwrap();
        let g = SimGrid::boxed(&[-5.0], &[5.0], 0.5).unwrap();
        let err = hair_trigger_test(&m, &g, vec![0.0; 2 * g.len()], 1.0, 1.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn extinction_needs_a_stable_zero_state() {
        let g = SimGrid::torus(&[1], 8).unwrap();
        assert!(matches!(
            extinction_test(&kpp(), &g, 1.0, 0.01),
            Err(Error::HypothesisUnmet(_))
        ));
    }

    #[test]
    fn front_position_interpolates() {
        let g = SimGrid::boxed(&[0.0], &[4.0], 1.0).unwrap();
        let u = [1.0, 1.0, 0.6, 0.2, 0.0];
        assert!((front_position(&g, &u, 0.4, 1).unwrap() - 2.5).abs() < 1e-12);
        assert!((front_position(&g, &u, 0.4, -1).unwrap() - 0.0).abs() < 1e-12);
    }
}
