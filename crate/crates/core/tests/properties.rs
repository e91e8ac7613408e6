use std::f64::consts::TAU;
use std::sync::OnceLock;

use proptest::prelude::*;

use pulsefront_core::barriers::{build_critical_pair, build_sub_omega, build_super_h};
use pulsefront_core::cauchy::{SimGrid, SimulationState};
use pulsefront_core::disc::assemble_plain;
use pulsefront_core::eigen::{k_of, EigenOptions};
use pulsefront_core::model::{check_structure, Builtin, SamplePlan};
use pulsefront_core::speed::{characteristic_roots, minimal_speed, CharacteristicRoots};
use pulsefront_core::wave::{construct_pulsating_wave, rational_frame, WaveOptions, WaveProblem, WaveProfile};
use pulsefront_core::{ModelSpec, PeriodicGrid};

fn builtin(name: &str, dim: usize) -> ModelSpec {
    Builtin::by_name(name, dim).unwrap().build().unwrap()
}

fn periodic(dim: usize) -> ModelSpec {
    Builtin::PeriodicScalar {
        amplitude: 0.5,
        diffusion_amplitude: 0.3,
        drift: 0.7,
        dim,
    }
    .build()
    .unwrap()
}

fn modulated_rabies() -> ModelSpec {
    Builtin::RabiesSir {
        s0: [1.0, 1.0],
        beta: [[1.0, 0.5], [0.5, 1.0]],
        delta: [0.5, 0.5],
        modulation: 0.4,
        diffusion: [1.0, 1.0],
        dim: 2,
    }
    .build()
    .unwrap()
}

const NAMES: [&str; 7] = [
    "scalar_kpp",
    "constant_coop2",
    "feedback_loop",
    "rabies_sir",
    "patch_logistic",
    "periodic_scalar",
    "saturating_decay",
];

fn opts() -> EigenOptions {
    EigenOptions::default()
}

fn k(m: &ModelSpec, e: &[f64], l: f64, n: usize) -> f64 {
    let g = PeriodicGrid::uniform(m.dim(), n).unwrap();
    k_of(m, e, l, &g, &opts()).unwrap().value
}

#[test]
fn builtins_are_cooperative_and_fully_coupled() {
    for name in NAMES {
        for dim in [1, 2] {
            let m = builtin(name, dim);
            let r = check_structure(&m, &SamplePlan::dense(dim)).unwrap();
            assert!(r.cooperative && r.fully_coupled, "{name} dim {dim}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn coefficients_are_periodic(xi in prop::array::uniform2(-3i64 << 20..3i64 << 20), u in prop::array::uniform2(0.0f64..1.0),
                                 k in prop::array::uniform2(-1i32..=1)) {
        // Dyadic points keep x + k exact.
        let x = [xi[0] as f64 / (1u64 << 20) as f64, xi[1] as f64 / (1u64 << 20) as f64];
        for m in [periodic(2), modulated_rabies()] {
            let xs = [x[0] + k[0] as f64, x[1] + k[1] as f64];
            let uu = &u[..m.components()];
            prop_assert_eq!(m.reaction(&x, uu), m.reaction(&xs, uu));
            prop_assert_eq!(m.diffusion(0, &x), m.diffusion(0, &xs));
            prop_assert_eq!(m.advection(0, &x), m.advection(0, &xs));
        }
    }

    #[test]
    fn regularity_bound_holds(x in 0.0f64..1.0, scale in 0.0f64..1.0, dir in prop::array::uniform3(0.0f64..1.0)) {
        for name in NAMES {
            let m = builtin(name, 1);
            let reg = m.regularity();
            let d = m.components();
            let top = dir[..d].iter().cloned().fold(0.0, f64::max).max(1e-12);
            let u: Vec<f64> = dir[..d].iter().map(|v| v / top * scale * reg.sigma).collect();
            let f = m.reaction(&[x], &u);
            let h = m.linearization(&[x]);
            let norm = u.iter().cloned().fold(0.0, f64::max);
            for i in 0..d {
                let lin: f64 = (0..d).map(|j| h[i * d + j] * u[j]).sum();
                prop_assert!((f[i] - lin).abs() <= reg.m * norm.powf(1.0 + reg.beta) + 1e-12, "{}", name);
            }
        }
    }
}

fn stencil_error(n: usize) -> f64 {
    let m = periodic(1);
    let g = PeriodicGrid::uniform(1, n).unwrap();
    let op = assemble_plain(&m, &g).unwrap();
    let u: Vec<f64> = (0..n).map(|p| (TAU * g.point(p)[0]).sin()).collect();
    let lu = op.apply(&u);
    (0..n)
        .map(|p| {
            let x = g.point(p)[0];
            let exact = (1.0 + 0.3 * (TAU * x).sin()) * TAU * TAU * (TAU * x).sin() + 0.7 * TAU * (TAU * x).cos();
            (lu[p] - exact).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn stencil_is_second_order() {
    let e: Vec<f64> = [16, 32, 64].iter().map(|&n| stencil_error(n)).collect();
    for w in e.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.9, "{e:?}");
    }
}

#[test]
fn eigenvalue_converges_at_second_order() {
    let m = periodic(1);
    let ks: Vec<f64> = [32, 64, 128].iter().map(|&n| k(&m, &[1.0], 0.5, n)).collect();
    let ratio = (ks[0] - ks[1]).abs() / (ks[1] - ks[2]).abs();
    assert!(ratio >= 3.5, "{ks:?} ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn perron_pair_is_positive_and_certified(l in -3.0f64..3.0, which in 0usize..3) {
        let m = [periodic(1), builtin("feedback_loop", 1), builtin("constant_coop2", 1)][which].clone();
        let g = PeriodicGrid::uniform(1, 16).unwrap();
        let o = opts();
        let p = k_of(&m, &[1.0], l, &g, &o).unwrap();
        prop_assert!(p.min_value > 0.0);
        prop_assert!(p.eigenfunction.iter().all(|&v| v > 0.0));
        prop_assert!(p.bracket.0 <= p.value + 1e-12 && p.value <= p.bracket.1 + 1e-12);
        prop_assert!(p.bracket.1 - p.bracket.0 <= 10.0 * o.tol * (1.0 + p.value.abs()));
    }

    #[test]
    fn dispersion_is_concave_under_parabola(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let m = periodic(1);
        let (ka, kb, kmid) = (k(&m, &[1.0], a, 16), k(&m, &[1.0], b, 16), k(&m, &[1.0], 0.5 * (a + b), 16));
        prop_assert!(kmid >= 0.5 * (ka + kb) - 1e-7);
        // Constant test vector in the min-max characterization.
        let gamma = m.ellipticity().0;
        let beta = 0.7;
        let hmax = 1.5;
        for (l, kl) in [(a, ka), (b, kb)] {
            prop_assert!(kl <= -gamma * l * l + beta * l.abs() + hmax + 1e-9);
        }
    }
}

#[test]
fn threshold_does_not_depend_on_direction() {
    let m = periodic(2);
    let vals: Vec<f64> = (0..8)
        .map(|j| {
            let t = TAU * j as f64 / 8.0;
            k(&m, &[t.cos(), t.sin()], 0.0, 12)
        })
        .collect();
    let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 1e-8, "{vals:?}");
}

#[test]
fn minimal_speed_matches_a_dense_scan() {
    let m = periodic(1);
    let g = PeriodicGrid::uniform(1, 16).unwrap();
    let s = minimal_speed(&m, &[1.0], &g, &opts()).unwrap();
    let mut best = (f64::INFINITY, 0.0);
    for j in 1..=400 {
        let l = 4.0 * j as f64 / 400.0;
        let v = -k_of(&m, &[1.0], l, &g, &opts()).unwrap().value / l;
        if v < best.0 {
            best = (v, l);
        }
    }
    // Refine around the best scan point.
    let (lo, hi) = (best.1 - 0.01, best.1 + 0.01);
    for j in 0..=200 {
        let l = lo + (hi - lo) * j as f64 / 200.0;
        let v = -k_of(&m, &[1.0], l, &g, &opts()).unwrap().value / l;
        best.0 = best.0.min(v);
    }
    assert!((s.c_star - best.0).abs() < 1e-6, "{} vs {}", s.c_star, best.0);
}

#[test]
fn roots_solve_the_characteristic_equation() {
    let m = periodic(1);
    let g = PeriodicGrid::uniform(1, 16).unwrap();
    let s = minimal_speed(&m, &[1.0], &g, &opts()).unwrap();
    for f in [1.1, 1.5, 3.0] {
        let c = f * s.c_star;
        match characteristic_roots(&m, &[1.0], c, &g, &opts()).unwrap() {
            CharacteristicRoots::Two {
                lambda_minus,
                lambda_plus,
            } => {
                assert!(lambda_minus <= s.lambda_star && s.lambda_star <= lambda_plus);
                for l in [lambda_minus, lambda_plus] {
                    let kv = k_of(&m, &[1.0], l, &g, &opts()).unwrap().value;
                    assert!((kv + c * l).abs() < 1e-8);
                }
            }
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn minimal_speed_grows_with_the_rate() {
    let g = PeriodicGrid::uniform(1, 16).unwrap();
    let speeds: Vec<f64> = [1.0, 2.0, 4.0]
        .iter()
        .map(|&r| {
            let m = Builtin::ScalarKpp {
                r,
                diffusion: vec![1.0],
                dim: 1,
            }
            .build()
            .unwrap();
            minimal_speed(&m, &[1.0], &g, &opts()).unwrap().c_star
        })
        .collect();
    assert!(speeds[0] < speeds[1] && speeds[1] < speeds[2]);
}

struct Barriers {
    h: pulsefront_core::barriers::BarrierFunction,
    omega: pulsefront_core::barriers::BarrierFunction,
    omega_star: pulsefront_core::barriers::BarrierFunction,
    h_star: pulsefront_core::barriers::BarrierFunction,
}

fn feedback_barriers() -> &'static Barriers {
    static B: OnceLock<Barriers> = OnceLock::new();
    B.get_or_init(|| {
        let m = builtin("feedback_loop", 1);
        let g = PeriodicGrid::uniform(1, 16).unwrap();
        let c = 1.2 * minimal_speed(&m, &[1.0], &g, &opts()).unwrap().c_star;
        let (omega_star, h_star) = build_critical_pair(&m, &[1.0], &g).unwrap();
        Barriers {
            h: build_super_h(&m, &[1.0], c, &g).unwrap(),
            omega: build_sub_omega(&m, &[1.0], c, &g).unwrap(),
            omega_star,
            h_star,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn barrier_shape_properties(x in -30.0f64..120.0, t in 0.0f64..2.0) {
        let b = feedback_barriers();
        let eta = b.h.eta_hat;
        let h = b.h.eval(t, &[x]);
        let w = b.omega.eval(t, &[x]);
        let ws = b.omega_star.eval(t, &[x]);
        let hs = b.h_star.eval(t, &[x]);
        let (s, s_star) = (b.h.s(t, &[x]), b.h_star.s(t, &[x]));
        for i in 0..h.len() {
            prop_assert!(h[i] > 0.0);
            prop_assert!(w[i] <= h[i] + 1e-12);
            prop_assert!(w[i] < eta);
            if s <= 0.0 {
                prop_assert!(w[i] < 0.0);
            }
            prop_assert!(hs[i] > 0.0);
            prop_assert!(ws[i] <= hs[i] + 1e-12);
            if s_star < 0.0 {
                prop_assert_eq!(ws[i], 0.0);
                prop_assert_eq!(hs[i], eta);
            }
        }
    }
}

#[test]
fn barriers_decay_ahead_of_the_front() {
    let b = feedback_barriers();
    for f in [&b.h, &b.omega, &b.omega_star, &b.h_star] {
        let far = 60.0 / f.constants.lambda + 200.0;
        assert!(f.eval(0.0, &[far]).iter().all(|v| v.abs() < 1e-10), "{:?}", f.kind);
    }
}

#[test]
fn super_h_is_pulsating() {
    let m = builtin("constant_coop2", 2);
    let g = PeriodicGrid::uniform(2, 12).unwrap();
    let e = [0.6, 0.8];
    let c = 2.4;
    let h = build_super_h(&m, &e, c, &g).unwrap();
    let ks = [[1, 0], [0, 1], [-2, 3], [4, -1], [3, 3]];
    for (j, k) in ks.iter().enumerate() {
        let t = 0.1 * j as f64;
        let x = [0.37 + j as f64, -0.81 + 0.5 * j as f64];
        let ke = k[0] as f64 * e[0] + k[1] as f64 * e[1];
        let a = h.eval(t + ke / c, &x);
        let b = h.eval(t, &[x[0] - k[0] as f64, x[1] - k[1] as f64]);
        for i in 0..2 {
            assert!((a[i] - b[i]).abs() <= 1e-10 * (1.0 + b[i].abs()), "{k:?}");
        }
    }
}

fn kpp_wave() -> &'static (ModelSpec, WaveProfile) {
    static W: OnceLock<(ModelSpec, WaveProfile)> = OnceLock::new();
    W.get_or_init(|| {
        let m = builtin("scalar_kpp", 1);
        let f = rational_frame(&[1]).unwrap();
        let o = WaveOptions {
            a: Some(-30.0),
            ..WaveOptions::default()
        };
        let w = construct_pulsating_wave(&m, &f, 2.5, &o).unwrap();
        (m, w)
    })
}

fn kpp_problem() -> WaveProblem {
    let (m, w) = kpp_wave();
    w.problem(m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn period_map_is_monotone(seed_a in prop::collection::vec(0.0f64..1.0, 16), seed_b in prop::collection::vec(0.0f64..1.0, 16)) {
        let pb = kpp_problem();
        let up = pb.upper_slice();
        let n = up.len();
        let a: Vec<f64> = (0..n).map(|p| up[p] * seed_a[p % 16]).collect();
        let b: Vec<f64> = (0..n).map(|p| a[p].max(up[p] * seed_b[(p / 7) % 16])).collect();
        let qa = pb.map(&a, true).unwrap();
        let qb = pb.map(&b, true).unwrap();
        prop_assert!(qa.iter().zip(&qb).all(|(x, y)| *x <= y + 1e-14));
    }
}

#[test]
fn unclamped_iterates_stay_in_the_envelope() {
    let pb = kpp_problem();
    let (lo, up) = (pb.lower_slice().to_vec(), pb.upper_slice().to_vec());
    for start in [up.clone(), lo.clone()] {
        let mut v = start;
        for _ in 0..15 {
            v = pb.map(&v, false).unwrap();
            for p in 0..v.len() {
                assert!(lo[p] - 1e-12 <= v[p] && v[p] <= up[p] + 1e-12);
            }
        }
    }
}

#[test]
fn fixed_point_is_reproduced_by_the_map() {
    let (m, w) = kpp_wave();
    let q = w.problem(m).unwrap().map(&w.u, true).unwrap();
    let d = q.iter().zip(&w.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d < w.tol, "{d}");
    assert!(w.u[..w.grid.nr - w.band].iter().all(|&v| v > 0.0));
}

fn comparison_trial(m: &ModelSpec, seed: &[f64]) {
    let g = SimGrid::boxed(&[-4.0], &[4.0], 0.25).unwrap();
    let d = m.components();
    let n = g.len() * d;
    let eta = m.eta_hat();
    let a: Vec<f64> = (0..n).map(|p| eta * seed[p % seed.len()]).collect();
    let b: Vec<f64> = (0..n).map(|p| (a[p] + 0.3 * eta * seed[(3 * p + 1) % seed.len()]).min(eta)).collect();
    let mut sa = SimulationState::new(m, g.clone(), a, 0.01).unwrap();
    let mut sb = SimulationState::new(m, g, b, 0.01).unwrap();
    for _ in 0..100 {
        sa.step().unwrap();
        sb.step().unwrap();
    }
    assert!(sa.u.iter().zip(&sb.u).all(|(x, y)| *x <= y + 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn cauchy_comparison_principle(seed in prop::collection::vec(0.0f64..1.0, 11)) {
        for name in ["scalar_kpp", "constant_coop2", "rabies_sir"] {
            comparison_trial(&builtin(name, 1), &seed);
        }
    }
}

#[test]
fn cauchy_translation_equivariance() {
    let m = periodic(1);
    let per = 8;
    let g = SimGrid::torus(&[4], per).unwrap();
    let n = g.len();
    let u0: Vec<f64> = (0..n).map(|p| 0.5 * (1.0 + (TAU * p as f64 / n as f64).sin()).powi(3) / 8.0).collect();
    let shifted: Vec<f64> = (0..n).map(|p| u0[(p + n - per) % n]).collect();
    let mut a = SimulationState::new(&m, g.clone(), u0, 0.01).unwrap();
    let mut b = SimulationState::new(&m, g, shifted, 0.01).unwrap();
    a.run_until(1.0).unwrap();
    b.run_until(1.0).unwrap();
    for p in 0..n {
        assert!((b.u[p] - a.u[(p + n - per) % n]).abs() < 1e-13);
    }
}
