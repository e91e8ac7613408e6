//! Scalar search helpers.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a unimodal function on `[a, b]`.
/// Returns the final bracket midpoint and its value.
pub fn golden_section_min<F>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> Result<(f64, f64, (f64, f64))>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut it = 0;
    while (b - a).abs() > tol {
        if it == max_iter {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: b - a,
            });
        }
        it += 1;
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let (x, fx) = if fc < fd { (c, fc) } else { (d, fd) };
    Ok((x, fx, (a, b)))
}

/// Bisection for a sign change of `f` on `[a, b]`.
pub fn bisect<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut fa = f(a)?;
    let fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::BracketFailure(format!(
            "no sign change on [{a}, {b}] ({fa:e}, {fb:e})"
        )));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol || m == a || m == b {
            return Ok(m);
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_vertex() {
        let (x, fx, (a, b)) = golden_section_min(|x| Ok((x - 0.3) * (x - 0.3) + 1.0), -2.0, 5.0, 1e-9, 200).unwrap();
        // A flat minimum is only resolvable to about sqrt(eps).
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-15);
        assert!(a <= x && x <= b);
    }

    #[test]
    fn bisect_root_and_bracket_error() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(matches!(bisect(|x| Ok(x * x + 1.0), 0.0, 2.0, 1e-10), Err(Error::BracketFailure(_))));
    }
}
