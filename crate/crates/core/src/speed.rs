//! Minimal speeds and the characteristic equation `k(lambda) + c lambda = 0`.

use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;

use crate::disc::PeriodicGrid;
use crate::eigen::{k_of, DispersionCurve, DispersionSample, EigenOptions};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::optimize::{bisect, golden_section_min};

const LAMBDA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SpeedResult {
    pub direction: Vec<f64>,
    pub c_star: f64,
    pub lambda_star: f64,
    pub k_at_star: f64,
    pub k_at_zero: f64,
    pub bracket: (f64, f64),
    /// Every `(lambda, k)` evaluated by the search, sorted by `lambda`.
    pub curve: DispersionCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CharacteristicRoots {
    Two { lambda_minus: f64, lambda_plus: f64 },
    Double { lambda_star: f64 },
    NoRoot,
}

impl CharacteristicRoots {
    /// Decay rate `lambda_c`: the smaller root, or the double root.
    pub fn decay_rate(&self) -> Option<f64> {
        match *self {
            CharacteristicRoots::Two { lambda_minus, .. } => Some(lambda_minus),
            CharacteristicRoots::Double { lambda_star } => Some(lambda_star),
            CharacteristicRoots::NoRoot => None,
        }
    }
}

struct Recorder<'a> {
    model: &'a ModelSpec,
    e: &'a [f64],
    grid: &'a PeriodicGrid,
    opts: &'a EigenOptions,
    samples: Mutex<Vec<DispersionSample>>,
}

impl Recorder<'_> {
    fn k(&self, lambda: f64) -> Result<f64> {
        let p = k_of(self.model, self.e, lambda, self.grid, self.opts)?;
        self.samples.lock().unwrap().push(DispersionSample {
            lambda,
            k: p.value,
            residual: p.residual,
            iterations: p.iterations,
        });
        Ok(p.value)
    }

    fn g(&self, lambda: f64) -> Result<f64> {
        Ok(-self.k(lambda)? / lambda)
    }

    fn into_curve(self) -> DispersionCurve {
        let mut samples = self.samples.into_inner().unwrap();
        samples.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        samples.dedup_by(|a, b| a.lambda == b.lambda);
        DispersionCurve {
            direction: self.e.to_vec(),
            samples,
            grid: self.grid.clone(),
            options: *self.opts,
        }
    }
}

/// `c*(e) = min_{lambda > 0} -k(lambda, e) / lambda` by golden section.
pub fn minimal_speed(model: &ModelSpec, e: &[f64], grid: &PeriodicGrid, opts: &EigenOptions) -> Result<SpeedResult> {
    let rec = Recorder {
        model,
        e,
        grid,
        opts,
        samples: Mutex::new(Vec::new()),
    };
    let k0 = rec.k(0.0)?;
    if k0 >= 0.0 {
        return Err(Error::UnstableZeroState { k0 });
    }
    let (lo, hi) = bracket_minimum(&rec)?;
    let (lambda_star, c_star, bracket) = golden_section_min(|l| rec.g(l), lo, hi, 1e-9 * (1.0 + hi), 400)?;
    let k_at_star = -c_star * lambda_star;
    Ok(SpeedResult {
        direction: e.to_vec(),
        c_star,
        lambda_star,
        k_at_star,
        k_at_zero: k0,
        bracket,
        curve: rec.into_curve(),
    })
}

/// Three-point bracket of the minimum of `g = -k/lambda`, starting from 1.
fn bracket_minimum(rec: &Recorder<'_>) -> Result<(f64, f64)> {
    let g1 = rec.g(1.0)?;
    let g2 = rec.g(2.0)?;
    if g2 < g1 {
        let (mut a, mut b, mut gb) = (1.0, 2.0, g2);
        loop {
            let c = 2.0 * b;
            if c > 1e4 {
                return Err(Error::BracketFailure("-k/lambda keeps decreasing up to 1e4".into()));
            }
            let gc = rec.g(c)?;
            if gc >= gb {
                return Ok((a, c));
            }
            (a, b, gb) = (b, c, gc);
        }
    }
    let (mut b, mut c, mut gb) = (1.0, 2.0, g1);
    loop {
        let a = 0.5 * b;
        if a < LAMBDA_FLOOR {
            return Err(Error::BracketFailure("-k/lambda keeps decreasing toward 0".into()));
        }
        let ga = rec.g(a)?;
        if ga >= gb {
            return Ok((a, c));
        }
        (c, b, gb) = (b, a, ga);
    }
}

/// Classification of `k(lambda) + c lambda = 0` on `(0, infinity)`.
pub fn characteristic_roots(
    model: &ModelSpec,
    e: &[f64],
    c: f64,
    grid: &PeriodicGrid,
    opts: &EigenOptions,
) -> Result<CharacteristicRoots> {
    let speed = minimal_speed(model, e, grid, opts)?;
    characteristic_roots_with(model, &speed, c, grid, opts)
}

/// As [`characteristic_roots`], reusing a computed minimal speed.
pub fn characteristic_roots_with(
    model: &ModelSpec,
    speed: &SpeedResult,
    c: f64,
    grid: &PeriodicGrid,
    opts: &EigenOptions,
) -> Result<CharacteristicRoots> {
    let c_star = speed.c_star;
    if (c - c_star).abs() <= 1e-6 * (1.0 + c_star) {
        return Ok(CharacteristicRoots::Double {
            lambda_star: speed.lambda_star,
        });
    }
    if c < c_star {
        return Ok(CharacteristicRoots::NoRoot);
    }
    let e = &speed.direction;
    let psi = |l: f64| k_of(model, e, l, grid, opts).map(|p| p.value + c * l);
    let ls = speed.lambda_star;
    let lambda_minus = bisect(psi, 0.0, ls, 1e-13 * (1.0 + ls))?;
    let mut hi = 2.0 * ls;
    while psi(hi)? > 0.0 {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::BracketFailure("upper characteristic root beyond 1e4".into()));
        }
    }
    let lambda_plus = bisect(psi, ls, hi, 1e-13 * (1.0 + hi))?;
    Ok(CharacteristicRoots::Two {
        lambda_minus,
        lambda_plus,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedPolar {
    pub results: Vec<SpeedResult>,
    /// Largest `|c*(e_j) - c*(e_{j+1})|` over consecutive directions.
    pub max_adjacent_jump: f64,
}

/// Minimal speeds over a list of directions, computed in parallel.
pub fn speed_polar(
    model: &ModelSpec,
    directions: &[Vec<f64>],
    grid: &PeriodicGrid,
    opts: &EigenOptions,
) -> Result<SpeedPolar> {
    if directions.len() < 2 {
        return Err(Error::param("directions", "need at least two directions"));
    }
    let results = directions
        .par_iter()
        .map(|e| minimal_speed(model, e, grid, opts))
        .collect::<Result<Vec<_>>>()?;
    let max_adjacent_jump = results
        .windows(2)
        .map(|w| (w[0].c_star - w[1].c_star).abs())
        .fold(0.0, f64::max);
    Ok(SpeedPolar {
        results,
        max_adjacent_jump,
    })
}

/// `count` unit vectors evenly spaced on the circle, starting at `(1, 0)`.
pub fn circle_directions(count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|j| {
            let t = std::f64::consts::TAU * j as f64 / count as f64;
            vec![t.cos(), t.sin()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Builtin;

    fn kpp(r: f64) -> ModelSpec {
        Builtin::ScalarKpp {
            r,
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
    fn kpp_closed_form() {
        let s = minimal_speed(&kpp(4.0), &[1.0], &grid(), &EigenOptions::default()).unwrap();
        assert!((s.c_star - 4.0).abs() < 1e-10);
        assert!((s.lambda_star - 2.0).abs() < 1e-6);
        assert!((s.k_at_star + s.c_star * s.lambda_star).abs() < 1e-12);
        assert!(s.curve.samples.windows(2).all(|w| w[0].lambda < w[1].lambda));
    }

    #[test]
    fn stable_zero_state_has_no_speed() {
        let m = Builtin::by_name("saturating_decay", 1).unwrap().build().unwrap();
        let err = minimal_speed(&m, &[1.0], &grid(), &EigenOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnstableZeroState { k0 } if (k0 - 0.5).abs() < 1e-10));
    }

    #[test]
    fn root_classification() {
        let m = kpp(1.0);
        let o = EigenOptions::default();
        match characteristic_roots(&m, &[1.0], 2.5, &grid(), &o).unwrap() {
            CharacteristicRoots::Two {
                lambda_minus,
                lambda_plus,
            } => {
                assert!((lambda_minus - 0.5).abs() < 1e-9);
                assert!((lambda_plus - 2.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            characteristic_roots(&m, &[1.0], 1.5, &grid(), &o).unwrap(),
            CharacteristicRoots::NoRoot
        );
        let d = characteristic_roots(&m, &[1.0], 2.0, &grid(), &o).unwrap();
        assert!((d.decay_rate().unwrap() - 1.0).abs() < 1e-4);
    }
}
