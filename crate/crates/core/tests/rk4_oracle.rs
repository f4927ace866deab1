//! Fixed-step RK4 with Richardson extrapolation, written from the equations
//! of motion alone (no Bessel functions, no library integrator), as an
//! independent reference for the nonrecoil two-level solver.

use std::f64::consts::PI;

use ekick::coupling::TransitionSymmetry;
use ekick::nonrecoil::{two_level_probability, IntegrateOptions};
use num_complex::Complex64;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// p_x shape `π R / (z² + R²)^{3/2}` with unit amplitude.
fn shape(z: f64, r: f64) -> f64 {
    PI * r / (z * z + r * r).powf(1.5)
}

/// `∫ shape(z) e^{iz} dz` by composite Simpson over `[−Z, Z]`.
fn first_order_integral(r: f64, z_max: f64, n: usize) -> Complex64 {
    let h = 2.0 * z_max / n as f64;
    let f = |k: usize| {
        let z = -z_max + k as f64 * h;
        shape(z, r) * Complex64::from_polar(1.0, z)
    };
    let mut s = f(0) + f(n);
    for k in 1..n {
        s += f(k) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `P_1(∞)` with `v = ω = 1`: `i f0' = g e^{−iz} f1`, `i f1' = g e^{iz} f0`.
fn rk4_p1(a: f64, r: f64, z_max: f64, h: f64) -> f64 {
    rk4_trajectory(a, r, z_max, h, usize::MAX).0
}

/// Final `P_1` and `|f_1|²` recorded every `every` steps.
fn rk4_trajectory(a: f64, r: f64, z_max: f64, h: f64, every: usize) -> (f64, Vec<(f64, f64)>) {
    let rhs = |z: f64, f: [Complex64; 2]| {
        let g = a * shape(z, r);
        let e = Complex64::from_polar(1.0, z);
        [-I * g * e.conj() * f[1], -I * g * e * f[0]]
    };
    let steps = (2.0 * z_max / h).round() as usize;
    let mut f = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    let mut samples = Vec::new();
    for k in 0..steps {
        if k % every == 0 {
            samples.push((-z_max + k as f64 * h, f[1].norm_sqr()));
        }
        let z = -z_max + k as f64 * h;
        let k1 = rhs(z, f);
        let k2 = rhs(z + h / 2.0, [f[0] + k1[0] * (h / 2.0), f[1] + k1[1] * (h / 2.0)]);
        let k3 = rhs(z + h / 2.0, [f[0] + k2[0] * (h / 2.0), f[1] + k2[1] * (h / 2.0)]);
        let k4 = rhs(z + h, [f[0] + k3[0] * h, f[1] + k3[1] * h]);
        for j in 0..2 {
            f[j] += (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (h / 6.0);
        }
    }
    (f[1].norm_sqr(), samples)
}

#[test]
fn px_two_level_matches_rk4_richardson() {
    let (rho, p1lin): (f64, f64) = (0.2, 1.0);
    let z_max = 400.0 * rho.max(1.0);
    let h = 1.0 / 2000.0;
    let integral = first_order_integral(rho, z_max, 1_600_000);
    let a = p1lin.sqrt() / integral.norm();
    let coarse = rk4_p1(a, rho, z_max, h);
    let fine = rk4_p1(a, rho, z_max, h / 2.0);
    let oracle = (16.0 * fine - coarse) / 15.0;
    assert!((fine - coarse).abs() < 1e-8, "step refinement changed P1 by {}", (fine - coarse).abs());

    let solver = two_level_probability(TransitionSymmetry::Px, rho, p1lin, &IntegrateOptions::default()).unwrap();
    let p1 = solver.probabilities[1];
    assert!((p1 - oracle).abs() < 1e-6, "solver {p1} vs oracle {oracle}");
}

#[test]
fn px_trajectory_matches_rk4() {
    let (rho, p1lin): (f64, f64) = (0.2, 1.0);
    let z_max = 400.0;
    let h = 1.0 / 2000.0;
    let a = p1lin.sqrt() / first_order_integral(rho, z_max, 1_600_000).norm();
    // one oracle sample per unit of z
    let (_, oracle) = rk4_trajectory(a, rho, z_max, h, 2000);

    let opts = IntegrateOptions {
        half_range: Some(100.0),
        samples: 201,
        check_tail: false,
        ..Default::default()
    };
    let r = two_level_probability(TransitionSymmetry::Px, rho, p1lin, &opts).unwrap();
    let mut worst: f64 = 0.0;
    for (z, f) in r.z.iter().zip(&r.amplitudes) {
        let &(zo, po) = oracle.iter().find(|(zo, _)| (zo - z).abs() < 1e-9).expect("oracle sample");
        assert!((zo - z).abs() < 1e-9);
        worst = worst.max((f[1].norm_sqr() - po).abs());
    }
    assert!(worst < 1e-6, "largest trajectory difference {worst}");
}
