use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Error, Result};

/// Catalogue of ready-made models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case", deny_unknown_fields)]
pub enum Builtin {
    /// `f(u) = r u (1 - u)` with constant diagonal diffusion.
    ScalarKpp {
        #[serde(default = "one")]
        r: f64,
        /// Diagonal of `A`; a single entry is broadcast over all axes.
        #[serde(default = "unit_vec")]
        diffusion: Vec<f64>,
        #[serde(default = "one_usize")]
        dim: usize,
    },
    /// Two components, `f(u) = H u - u_i |u|_inf` with `H = [[-1, 2], [2, -1]]`.
    ConstantCoop2 {
        #[serde(default = "one_usize")]
        dim: usize,
    },
    /// Cyclic gene-regulation loop `f_1 = g(u_d) - a_1 u_1`,
    /// `f_i = u_{i-1} - a_i u_i`, with `g(s) = s^p / (1 + s^p)`.
    FeedbackLoop {
        #[serde(default = "one_u32")]
        p: u32,
        #[serde(default = "feedback_alpha")]
        alpha: Vec<f64>,
        #[serde(default = "one_usize")]
        dim: usize,
    },
    /// Two-population SIR-type rabies model after the monotone change of
    /// variables: `f_i = S_i^0(x) (1 - exp(-sum_j beta_ij u_j)) - delta_i u_i`.
    RabiesSir {
        #[serde(default = "pair_one")]
        s0: [f64; 2],
        #[serde(default = "rabies_beta")]
        beta: [[f64; 2]; 2],
        #[serde(default = "pair_half")]
        delta: [f64; 2],
        /// Amplitude of the periodic modulation `S_i^0 (1 + m sin 2 pi x_1)`.
        #[serde(default)]
        modulation: f64,
        #[serde(default = "pair_one")]
        diffusion: [f64; 2],
        #[serde(default = "one_usize")]
        dim: usize,
    },
    /// Logistic patches with nearest-neighbour migration on a ring:
    /// `f_i = r_i u_i (1 - u_i / K_i) + eps (u_{i-1} + u_{i+1} - 2 u_i)`.
    PatchLogistic {
        #[serde(default = "one")]
        eps: f64,
        r: Vec<f64>,
        k: Vec<f64>,
        #[serde(default = "one_usize")]
        dim: usize,
    },
    /// Scalar KPP in a periodic medium: `r(x) = 1 + m mean_j sin(2 pi x_j)`,
    /// `A(x) = (1 + m_A sin(2 pi x_1)) I`, constant drift `q = q_0 e^1`.
    PeriodicScalar {
        #[serde(default = "half")]
        amplitude: f64,
        #[serde(default)]
        diffusion_amplitude: f64,
        #[serde(default)]
        drift: f64,
        #[serde(default = "one_usize")]
        dim: usize,
    },
    /// Stable scalar model `f(u) = u / (1 + |u|) - (1 + decay) u`.
    SaturatingDecay {
        #[serde(default = "half")]
        decay: f64,
        #[serde(default = "one_usize")]
        dim: usize,
    },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}
fn one_u32() -> u32 {
    1
}
fn unit_vec() -> Vec<f64> {
    vec![1.0]
}
fn feedback_alpha() -> Vec<f64> {
    vec![0.5, 1.0, 1.0]
}
fn pair_one() -> [f64; 2] {
    [1.0, 1.0]
}
fn pair_half() -> [f64; 2] {
    [0.5, 0.5]
}
fn rabies_beta() -> [[f64; 2]; 2] {
    [[1.0, 0.5], [0.5, 1.0]]
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

fn diag_diffusion(dim: usize, components: usize, diag: Vec<f64>) -> Vec<Vec<f64>> {
    vec![diag; components]
        .into_iter()
        .map(|d| if d.len() == 1 { vec![d[0]; dim] } else { d })
        .collect()
}

impl Builtin {
    pub fn name(&self) -> &'static str {
        match self {
            Builtin::ScalarKpp { .. } => "scalar_kpp",
            Builtin::ConstantCoop2 { .. } => "constant_coop2",
            Builtin::FeedbackLoop { .. } => "feedback_loop",
            Builtin::RabiesSir { .. } => "rabies_sir",
            Builtin::PatchLogistic { .. } => "patch_logistic",
            Builtin::PeriodicScalar { .. } => "periodic_scalar",
            Builtin::SaturatingDecay { .. } => "saturating_decay",
        }
    }

    /// Default parameters for a builtin referenced by name.
    pub fn by_name(name: &str, dim: usize) -> Result<Builtin> {
        Ok(match name {
            "scalar_kpp" => Builtin::ScalarKpp {
                r: 1.0,
                diffusion: vec![1.0],
                dim,
            },
            "constant_coop2" => Builtin::ConstantCoop2 { dim },
            "feedback_loop" => Builtin::FeedbackLoop {
                p: 1,
                alpha: feedback_alpha(),
                dim,
            },
            "rabies_sir" => Builtin::RabiesSir {
                s0: pair_one(),
                beta: rabies_beta(),
                delta: pair_half(),
                modulation: 0.0,
                diffusion: pair_one(),
                dim,
            },
            "patch_logistic" => Builtin::PatchLogistic {
                eps: 1.0,
                r: vec![1.0, 1.0],
                k: vec![1.0, 1.0],
                dim,
            },
            "periodic_scalar" => Builtin::PeriodicScalar {
                amplitude: 0.5,
                diffusion_amplitude: 0.0,
                drift: 0.0,
                dim,
            },
            "saturating_decay" => Builtin::SaturatingDecay { decay: 0.5, dim },
            other => return Err(Error::param("builtin", format!("unknown model `{other}`"))),
        })
    }

    pub fn build(&self) -> Result<ModelSpec> {
        match self {
            Builtin::ScalarKpp { r, diffusion, dim } => scalar_kpp(*r, diffusion, *dim),
            Builtin::ConstantCoop2 { dim } => constant_coop2(*dim),
            Builtin::FeedbackLoop { p, alpha, dim } => feedback_loop(*p, alpha, *dim),
            Builtin::RabiesSir {
                s0,
                beta,
                delta,
                modulation,
                diffusion,
                dim,
            } => rabies_sir(*s0, *beta, *delta, *modulation, *diffusion, *dim),
            Builtin::PatchLogistic { eps, r, k, dim } => patch_logistic(*eps, r, k, *dim),
            Builtin::PeriodicScalar {
                amplitude,
                diffusion_amplitude,
                drift,
                dim,
            } => periodic_scalar(*amplitude, *diffusion_amplitude, *drift, *dim),
            Builtin::SaturatingDecay { decay, dim } => saturating_decay(*decay, *dim),
        }
    }
}

pub fn scalar_kpp(r: f64, diffusion: &[f64], dim: usize) -> Result<ModelSpec> {
    positive("r", r)?;
    if diffusion.len() != 1 && diffusion.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: diffusion.len(),
        });
    }
    for &d in diffusion {
        positive("diffusion", d)?;
    }
    ModelSpec::builder("scalar_kpp", dim, 1)
        .constant_diagonal_diffusion(diag_diffusion(dim, 1, diffusion.to_vec()))
        .reaction(Arc::new(move |_x, u, out| out[0] = r * u[0] * (1.0 - u[0])))
        .jacobian(Arc::new(move |_x, u, out| out[0] = r * (1.0 - 2.0 * u[0])))
        .homogeneous(true)
        .eta_hat(1.0)
        .build()
}

const COOP_H: [[f64; 2]; 2] = [[-1.0, 2.0], [2.0, -1.0]];

pub fn constant_coop2(dim: usize) -> Result<ModelSpec> {
    ModelSpec::builder("constant_coop2", dim, 2)
        .reaction(Arc::new(|_x, u, out| {
            let m = u[0].abs().max(u[1].abs());
            for i in 0..2 {
                out[i] = COOP_H[i][0] * u[0] + COOP_H[i][1] * u[1] - u[i] * m;
            }
        }))
        .jacobian(Arc::new(|_x, u, out| {
            let (m, arg) = if u[0].abs() >= u[1].abs() {
                (u[0].abs(), 0)
            } else {
                (u[1].abs(), 1)
            };
            let sign = if u[arg] >= 0.0 { 1.0 } else { -1.0 };
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = COOP_H[i][j];
                    if i == j {
                        v -= m;
                    }
                    if j == arg {
                        v -= u[i] * sign;
                    }
                    out[i * 2 + j] = v;
                }
            }
        }))
        .homogeneous(true)
        .eta_hat(1.0)
        .build()
}

fn hill(p: u32, s: f64) -> f64 {
    let a = s.abs().powi(p as i32);
    (a / (1.0 + a)).copysign(s)
}

fn hill_prime(p: u32, s: f64) -> f64 {
    let a = s.abs();
    if p == 1 {
        return 1.0 / ((1.0 + a) * (1.0 + a));
    }
    let ap = a.powi(p as i32);
    p as f64 * a.powi(p as i32 - 1) / ((1.0 + ap) * (1.0 + ap))
}

pub fn feedback_loop(p: u32, alpha: &[f64], dim: usize) -> Result<ModelSpec> {
    if p == 0 {
        return Err(Error::param("p", "must be a positive integer"));
    }
    let d = alpha.len();
    if d < 2 {
        return Err(Error::param("alpha", "needs at least two components"));
    }
    for &a in alpha {
        positive("alpha", a)?;
    }
    let al = alpha.to_vec();
    let aj = alpha.to_vec();
    ModelSpec::builder(format!("feedback_loop_p{p}"), dim, d)
        .reaction(Arc::new(move |_x, u, out| {
            out[0] = hill(p, u[d - 1]) - al[0] * u[0];
            for i in 1..d {
                out[i] = u[i - 1] - al[i] * u[i];
            }
        }))
        .jacobian(Arc::new(move |_x, u, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[d - 1] = hill_prime(p, u[d - 1]);
            for i in 0..d {
                out[i * d + i] = -aj[i];
                if i > 0 {
                    out[i * d + i - 1] = 1.0;
                }
            }
        }))
        .homogeneous(true)
        .build()
}

pub fn rabies_sir(
    s0: [f64; 2],
    beta: [[f64; 2]; 2],
    delta: [f64; 2],
    modulation: f64,
    diffusion: [f64; 2],
    dim: usize,
) -> Result<ModelSpec> {
    for i in 0..2 {
        positive("s0", s0[i])?;
        positive("delta", delta[i])?;
        positive("diffusion", diffusion[i])?;
        for j in 0..2 {
            positive("beta", beta[i][j])?;
        }
    }
    if modulation.abs() >= 1.0 {
        return Err(Error::param("modulation", "|m| < 1 keeps S^0 positive"));
    }
    let susceptible = move |x: &[f64], i: usize| s0[i] * (1.0 + modulation * (TAU * x[0]).sin());
    let eta = (s0[0] * (1.0 + modulation.abs()) / delta[0]).max(s0[1] * (1.0 + modulation.abs()) / delta[1]);
    ModelSpec::builder("rabies_sir", dim, 2)
        .constant_diagonal_diffusion(vec![vec![diffusion[0]; dim], vec![diffusion[1]; dim]])
        .reaction(Arc::new(move |x, u, out| {
            for i in 0..2 {
                let force = beta[i][0] * u[0] + beta[i][1] * u[1];
                out[i] = -susceptible(x, i) * (-force).exp_m1() - delta[i] * u[i];
            }
        }))
        .jacobian(Arc::new(move |x, u, out| {
            for i in 0..2 {
                let force = beta[i][0] * u[0] + beta[i][1] * u[1];
                let w = susceptible(x, i) * (-force).exp();
                for j in 0..2 {
                    out[i * 2 + j] = w * beta[i][j] - if i == j { delta[i] } else { 0.0 };
                }
            }
        }))
        .homogeneous(modulation == 0.0)
        .eta_hat(eta)
        .build()
}

pub fn patch_logistic(eps: f64, r: &[f64], k: &[f64], dim: usize) -> Result<ModelSpec> {
    positive("eps", eps)?;
    let d = r.len();
    if d < 2 {
        return Err(Error::param("r", "needs at least two patches"));
    }
    if k.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: k.len(),
        });
    }
    for i in 0..d {
        positive("r", r[i])?;
        positive("k", k[i])?;
    }
    let neighbours = move |i: usize| -> Vec<usize> {
        if d == 2 {
            vec![1 - i]
        } else {
            vec![(i + d - 1) % d, (i + 1) % d]
        }
    };
    let (rr, kk) = (r.to_vec(), k.to_vec());
    let (rj, kj) = (r.to_vec(), k.to_vec());
    let kmax = k.iter().cloned().fold(0.0, f64::max);
    ModelSpec::builder("patch_logistic", dim, d)
        .reaction(Arc::new(move |_x, u, out| {
            for i in 0..d {
                let nb = neighbours(i);
                let mig: f64 = nb.iter().map(|&j| u[j] - u[i]).sum();
                out[i] = rr[i] * u[i] * (1.0 - u[i] / kk[i]) + eps * mig;
            }
        }))
        .jacobian(Arc::new(move |_x, u, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                let nb = neighbours(i);
                out[i * d + i] = rj[i] * (1.0 - 2.0 * u[i] / kj[i]) - eps * nb.len() as f64;
                for j in nb {
                    out[i * d + j] += eps;
                }
            }
        }))
        .homogeneous(true)
        .eta_hat(kmax)
        .build()
}

pub fn periodic_scalar(amplitude: f64, diffusion_amplitude: f64, drift: f64, dim: usize) -> Result<ModelSpec> {
    if amplitude.abs() >= 1.0 {
        return Err(Error::param("amplitude", "|m| < 1 keeps r(x) positive"));
    }
    if diffusion_amplitude.abs() >= 1.0 {
        return Err(Error::param("diffusion_amplitude", "|m_A| < 1 keeps A(x) elliptic"));
    }
    if !drift.is_finite() {
        return Err(Error::param("drift", "must be finite"));
    }
    let rate = move |x: &[f64]| 1.0 + amplitude * x.iter().map(|&xi| (TAU * xi).sin()).sum::<f64>() / x.len() as f64;
    let mut b = ModelSpec::builder("periodic_scalar", dim, 1)
        .diffusion(Arc::new(move |_c, x, out| {
            let n = x.len();
            let a = 1.0 + diffusion_amplitude * (TAU * x[0]).sin();
            out.iter_mut().for_each(|v| *v = 0.0);
            for l in 0..n {
                out[l * n + l] = a;
            }
        }))
        .reaction(Arc::new(move |x, u, out| out[0] = rate(x) * u[0] * (1.0 - u[0])))
        .jacobian(Arc::new(move |x, u, out| out[0] = rate(x) * (1.0 - 2.0 * u[0])))
        .homogeneous(amplitude == 0.0 && diffusion_amplitude == 0.0)
        .eta_hat(1.0);
    if drift != 0.0 {
        b = b.advection(Arc::new(move |_c, _x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[0] = drift;
        }));
    }
    b.build()
}

pub fn saturating_decay(decay: f64, dim: usize) -> Result<ModelSpec> {
    positive("decay", decay)?;
    ModelSpec::builder("saturating_decay", dim, 1)
        .reaction(Arc::new(move |_x, u, out| out[0] = u[0] / (1.0 + u[0].abs()) - (1.0 + decay) * u[0]))
        .jacobian(Arc::new(move |_x, u, out| {
            let a = 1.0 + u[0].abs();
            out[0] = 1.0 / (a * a) - (1.0 + decay);
        }))
        .homogeneous(true)
        .eta_hat(1.0)
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kpp_basics() {
        let m = scalar_kpp(1.0, &[1.0], 1).unwrap();
        assert_eq!(m.eta_hat(), 1.0);
        assert_eq!(m.reaction(&[0.0], &[1.0]), vec![0.0]);
        assert_eq!(m.linearization(&[0.3]), vec![1.0]);
        // |f - u| = u^2, fitted M doubles the sampled ratio 1.
        assert!((m.regularity().m - 2.0).abs() < 1e-12);
    }

    #[test]
    fn coop2_linearization_is_h() {
        let m = constant_coop2(1).unwrap();
        assert_eq!(m.linearization(&[0.1]), vec![-1.0, 2.0, 2.0, -1.0]);
        let f = m.reaction(&[0.0], &[1.0, 1.0]);
        assert_eq!(f, vec![0.0, 0.0]);
    }

    #[test]
    fn coop2_jacobian_matches_finite_difference() {
        let m = constant_coop2(1).unwrap();
        let u = [0.3, 0.7];
        let j = m.jacobian(&[0.0], &u);
        for c in 0..2 {
            let h = 1e-7;
            let mut up = u;
            let mut um = u;
            up[c] += h;
            um[c] -= h;
            let fp = m.reaction(&[0.0], &up);
            let fm = m.reaction(&[0.0], &um);
            for i in 0..2 {
                assert!((j[i * 2 + c] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn feedback_eta_hat_found_by_bisection() {
        let m = feedback_loop(1, &[0.5, 1.0, 1.0], 1).unwrap();
        // f_1(s 1) = s/(1+s) - s/2 <= 0 iff s >= 1; other rows vanish on the diagonal.
        assert!((m.eta_hat() - 1.0).abs() < 1e-9);
        assert!(m.has_analytic_jacobian());
    }

    #[test]
    fn patch_logistic_eta_hat() {
        let m = patch_logistic(1.0, &[1.0, 1.0], &[1.0, 1.0], 1).unwrap();
        assert_eq!(m.eta_hat(), 1.0);
        assert_eq!(m.reaction(&[0.0], &[1.0, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn rabies_eta_hat_bounds_s_over_delta() {
        let m = rabies_sir([1.0, 1.0], rabies_beta(), [0.5, 0.5], 0.0, [1.0, 1.0], 1).unwrap();
        assert_eq!(m.eta_hat(), 2.0);
        let f = m.reaction(&[0.2], &[2.0, 2.0]);
        assert!(f.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(matches!(scalar_kpp(0.0, &[1.0], 1), Err(Error::InvalidParameter { .. })));
        assert!(matches!(feedback_loop(1, &[0.5, -1.0], 1), Err(Error::InvalidParameter { .. })));
        assert!(matches!(
            patch_logistic(1.0, &[1.0, 1.0], &[1.0, 0.0], 1),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(Builtin::by_name("nope", 1).is_err());
    }

    #[test]
    fn saturating_decay_is_stable() {
        let m = saturating_decay(0.5, 1).unwrap();
        assert_eq!(m.linearization(&[0.0]), vec![-0.5]);
    }
}
