//! Modified Bessel functions of the second kind.
//!
//! Power series below `x = 2`, Steed's continued fraction (Temme's CF2)
//! above. Orders past 1 come from the upward recurrence, which is stable
//! for K.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_LIMIT: f64 = 2.0;
const EPS: f64 = 1e-17;
const MAX_TERMS: usize = 10_000;

/// K_0(x) and K_1(x) for x > 0, as `(k0, k1)`.
pub fn bessel_k01(x: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || x.is_nan() {
        return Err(Error::invalid("x", format!("Bessel K requires x > 0, got {x}")));
    }
    if x.is_infinite() {
        return Ok((0.0, 0.0));
    }
    if x < SERIES_LIMIT {
        Ok(series_k01(x))
    } else {
        let (k0s, k1s) = scaled_cf_k01(x);
        let e = (-x).exp();
        Ok((k0s * e, k1s * e))
    }
}

/// e^x K_0(x) and e^x K_1(x); never underflows.
pub fn bessel_k01_scaled(x: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || x.is_nan() {
        return Err(Error::invalid("x", format!("Bessel K requires x > 0, got {x}")));
    }
    if x < SERIES_LIMIT {
        let (k0, k1) = series_k01(x);
        let e = x.exp();
        Ok((k0 * e, k1 * e))
    } else {
        Ok(scaled_cf_k01(x))
    }
}

/// K_m(x) for integer order m.
pub fn bessel_k(order: u32, x: f64) -> Result<f64> {
    let (k0, k1) = bessel_k01(x)?;
    Ok(upward(order, x, k0, k1))
}

/// e^x K_m(x).
pub fn bessel_k_scaled(order: u32, x: f64) -> Result<f64> {
    let (k0, k1) = bessel_k01_scaled(x)?;
    Ok(upward(order, x, k0, k1))
}

fn upward(order: u32, x: f64, k0: f64, k1: f64) -> f64 {
    match order {
        0 => k0,
        1 => k1,
        _ => {
            let (mut prev, mut cur) = (k0, k1);
            for m in 1..order {
                let next = prev + 2.0 * m as f64 / x * cur;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

fn series_k01(x: f64) -> (f64, f64) {
    let y = 0.25 * x * x;
    let log_term = (0.5 * x).ln() + EULER_GAMMA;

    // K0 = −(ln(x/2)+γ) I0 + Σ H_k y^k/(k!)²
    // K1 = 1/x + ln(x/2) I1 − (x/4) Σ (ψ(k+1)+ψ(k+2)) y^k/(k!(k+1)!)
    let mut term = 1.0; // y^k/(k!)²
    let mut i0 = 0.0;
    let mut sum0 = 0.0;
    let mut harmonic = 0.0;
    let mut term1 = 1.0; // y^k/(k!(k+1)!)
    let mut i1_sum = 0.0;
    let mut sum1 = 0.0;
    for k in 0..MAX_TERMS {
        let kf = k as f64;
        if k > 0 {
            harmonic += 1.0 / kf;
            term *= y / (kf * kf);
            term1 *= y / (kf * (kf + 1.0));
        }
        i0 += term;
        sum0 += harmonic * term;
        i1_sum += term1;
        // ψ(k+1) + ψ(k+2) = −2γ + 2H_k + 1/(k+1)
        let psi_sum = -2.0 * EULER_GAMMA + 2.0 * harmonic + 1.0 / (kf + 1.0);
        let inc1 = psi_sum * term1;
        sum1 += inc1;
        if term < EPS * i0 && term1 < EPS * i1_sum && inc1.abs() < EPS * sum1.abs().max(1e-300) {
            break;
        }
    }
    let k0 = -log_term * i0 + sum0;
    let i1 = 0.5 * x * i1_sum;
    let k1 = 1.0 / x + (0.5 * x).ln() * i1 - 0.25 * x * sum1;
    (k0, k1)
}

fn scaled_cf_k01(x: f64) -> (f64, f64) {
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..MAX_TERMS {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (PI / (2.0 * x)).sqrt() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// K_ν(x) = ∫₀^∞ e^{−x cosh t} cosh(νt) dt by the trapezoidal rule, which
    /// converges geometrically for this integrand.
    fn integral_oracle(nu: f64, x: f64) -> f64 {
        let step: f64 = 0.005;
        let mut sum = 0.5 * (-x).exp();
        let mut t = step;
        loop {
            let v = (-x * t.cosh()).exp() * (nu * t).cosh();
            sum += v;
            if x * t.cosh() > x + 60.0 && v < 1e-300 + 1e-30 * sum {
                break;
            }
            t += step;
        }
        sum * step
    }

    fn scaled_oracle(nu: f64, x: f64) -> f64 {
        // e^x K_ν(x) = ∫ e^{−x(cosh t − 1)} cosh(νt) dt
        let step: f64 = 0.005;
        let mut sum = 0.5;
        let mut t = step;
        loop {
            let v = (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
            sum += v;
            if v < 1e-30 * sum {
                break;
            }
            t += step;
        }
        sum * step
    }

    #[test]
    fn reference_values_at_one() {
        let k0 = bessel_k(0, 1.0).unwrap();
        let k1 = bessel_k(1, 1.0).unwrap();
        let k2 = bessel_k(2, 1.0).unwrap();
        assert!((k0 - 0.421_024_438_240_708_3).abs() < 1e-14);
        assert!((k1 - 0.601_907_230_197_234_6).abs() < 1e-14);
        assert!((k2 - 1.624_838_898_635_177_5).abs() < 1e-13);
        assert!((k0 - integral_oracle(0.0, 1.0)).abs() < 1e-14);
        assert!((k1 - integral_oracle(1.0, 1.0)).abs() < 1e-14);
        assert!((k2 - integral_oracle(2.0, 1.0)).abs() < 1e-13);
    }

    #[test]
    fn matches_integral_oracle_over_range() {
        let mut x = 1e-3;
        while x < 700.0 {
            for nu in [0u32, 1, 2] {
                let got = bessel_k01_scaled(x).map(|(a, b)| match nu {
                    0 => a,
                    1 => b,
                    _ => a + 2.0 / x * b,
                });
                let want = scaled_oracle(nu as f64, x);
                let got = got.unwrap();
                assert!(
                    ((got - want) / want).abs() < 1e-10,
                    "nu={nu} x={x} got={got} want={want}"
                );
            }
            x *= 1.37;
        }
    }

    #[test]
    fn tiny_arguments() {
        for x in [1e-8, 1e-6, 1e-5] {
            let (k0, k1) = bessel_k01(x).unwrap();
            assert!(((x * k1) - 1.0).abs() < 1e-4);
            assert!((k0 / (-(x / 2.0).ln() - EULER_GAMMA) - 1.0).abs() < 1e-4);
            // next-order corrections are known in closed form
            let k1_asym = 1.0 / x + 0.5 * x * (0.5 * x).ln() + 0.25 * x * (2.0 * EULER_GAMMA - 1.0);
            assert!(((k1 - k1_asym) / k1).abs() < 1e-12);
        }
    }

    #[test]
    fn series_and_fraction_agree_at_switch() {
        for x in [1.5, 1.9, 2.0, 2.1, 2.5, 3.0] {
            let s = series_k01(x);
            let c = scaled_cf_k01(x);
            let e = (-x).exp();
            assert!(((s.0 - c.0 * e) / s.0).abs() < 1e-13, "{x}");
            assert!(((s.1 - c.1 * e) / s.1).abs() < 1e-13, "{x}");
        }
    }

    #[test]
    fn recurrence_identity() {
        let mut x = 0.01;
        while x <= 100.0 {
            let k0 = bessel_k(0, x).unwrap();
            let k1 = bessel_k(1, x).unwrap();
            // K2 from the integral representation, not from the recurrence
            let k2 = integral_oracle(2.0, x);
            assert!(((k2 - k0 - 2.0 / x * k1) / k2).abs() < 1e-9, "x={x}");
            x *= 1.5;
        }
    }

    #[test]
    fn rejects_nonpositive_and_underflows() {
        assert!(bessel_k(0, 0.0).is_err());
        assert!(bessel_k(1, -1.0).is_err());
        assert!(bessel_k(0, f64::NAN).is_err());
        assert!((bessel_k(3, 1.0).unwrap() - integral_oracle(3.0, 1.0)).abs() < 1e-12);
        assert_eq!(bessel_k(0, 800.0).unwrap(), 0.0);
        assert!(bessel_k(0, 700.0).unwrap() > 0.0);
    }
}
