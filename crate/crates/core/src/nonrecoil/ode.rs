//! Dormand–Prince 5(4) with step-size control and continuous output, for
//! complex state vectors.

use num_complex::Complex64;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

/// One accepted step with its continuous extension.
pub struct DenseStep<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y1: &'a [Complex64],
    coeffs: &'a [[Complex64; 5]],
}

impl DenseStep<'_> {
    /// Fourth-order interpolant at `t ∈ [t0, t1]`.
    pub fn interpolate(&self, t: f64, out: &mut [Complex64]) {
        let theta = (t - self.t0) / (self.t1 - self.t0);
        let theta1 = 1.0 - theta;
        for (o, r) in out.iter_mut().zip(self.coeffs) {
            *o = r[0] + theta * (r[1] + theta1 * (r[2] + theta * (r[3] + theta1 * r[4])));
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

fn axpy(out: &mut [Complex64], y: &[Complex64], h: f64, terms: &[(f64, &[Complex64])]) {
    for i in 0..out.len() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, k) in terms {
            acc += *c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` (`t1 > t0`), calling
/// `on_step` after every accepted step.
pub fn dopri5<F, S>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[Complex64],
    control: StepControl,
    mut on_step: S,
) -> Result<(Vec<Complex64>, Stats)>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
    S: FnMut(&DenseStep<'_>),
{
    if !(t1 > t0) {
        return Err(Error::Integration(format!("empty interval [{t0}, {t1}]")));
    }
    let n = y0.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut y = y0.to_vec();
    let mut y_new = vec![zero; n];
    let mut tmp = vec![zero; n];
    let mut k: Vec<Vec<Complex64>> = vec![vec![zero; n]; 7];
    let mut coeffs = vec![[zero; 5]; n];
    let mut stats = Stats::default();

    let mut t = t0;
    let mut h = control.initial_step.min(t1 - t0);
    f(t, &y, &mut k[0]);
    stats.evaluations += 1;
    let mut last_rejected = false;

    while t < t1 {
        if stats.accepted + stats.rejected >= control.max_steps {
            return Err(Error::Integration(format!(
                "step budget of {} exhausted at t = {t}",
                control.max_steps
            )));
        }
        let mut last = false;
        if t + h >= t1 || t + 1.01 * h >= t1 {
            h = t1 - t;
            last = true;
        }

        let (k1, rest) = k.split_first_mut().unwrap();
        let (k2, rest) = rest.split_first_mut().unwrap();
        let (k3, rest) = rest.split_first_mut().unwrap();
        let (k4, rest) = rest.split_first_mut().unwrap();
        let (k5, rest) = rest.split_first_mut().unwrap();
        let (k6, rest) = rest.split_first_mut().unwrap();
        let k7 = &mut rest[0];

        axpy(&mut tmp, &y, h, &[(A21, k1)]);
        f(t + C2 * h, &tmp, k2);
        axpy(&mut tmp, &y, h, &[(A31, k1), (A32, k2)]);
        f(t + C3 * h, &tmp, k3);
        axpy(&mut tmp, &y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
        f(t + C4 * h, &tmp, k4);
        axpy(&mut tmp, &y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
        f(t + C5 * h, &tmp, k5);
        axpy(&mut tmp, &y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
        f(t + h, &tmp, k6);
        axpy(&mut y_new, &y, h, &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)]);
        f(t + h, &y_new, k7);
        stats.evaluations += 6;

        // error norm on moduli, so a constant phase on any component leaves it unchanged
        let mut err2 = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = control.atol + control.rtol * y[i].norm().max(y_new[i].norm());
            err2 += (e.norm() / sc).powi(2);
        }
        let err = (err2 / n as f64).sqrt();

        if err <= 1.0 || h <= control.min_step {
            if err > 1.0 {
                return Err(Error::Integration(format!(
                    "step size fell below the floor {} at t = {t}",
                    control.min_step
                )));
            }
            for i in 0..n {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                coeffs[i] = [
                    y[i],
                    ydiff,
                    bspl,
                    ydiff - h * k7[i] - bspl,
                    h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]),
                ];
            }
            let t_new = if last { t1 } else { t + h };
            on_step(&DenseStep {
                t0: t,
                t1: t_new,
                y1: &y_new,
                coeffs: &coeffs,
            });
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            k1.copy_from_slice(k7);
            stats.accepted += 1;
            let mut fac = if err == 0.0 { 10.0 } else { 0.9 * err.powf(-0.2) };
            fac = fac.clamp(0.2, 10.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(control.max_step).max(control.min_step);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h = (h * fac).max(control.min_step);
            last_rejected = true;
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn control(tol: f64) -> StepControl {
        StepControl {
            rtol: tol,
            atol: tol,
            initial_step: 1e-2,
            min_step: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }

    #[test]
    fn rotating_phase() {
        // y' = i ω(t) y with ω = 1 + t: y(t) = exp(i(t + t²/2))
        let y0 = [Complex64::new(1.0, 0.0)];
        let mut worst_dense: f64 = 0.0;
        let (y, stats) = dopri5(
            |t, y, dy| dy[0] = Complex64::new(0.0, 1.0 + t) * y[0],
            0.0,
            5.0,
            &y0,
            control(1e-11),
            |step| {
                let mut out = [Complex64::new(0.0, 0.0)];
                for i in 0..=4 {
                    let t = step.t0 + (step.t1 - step.t0) * i as f64 / 4.0;
                    step.interpolate(t, &mut out);
                    let exact = Complex64::from_polar(1.0, t + 0.5 * t * t);
                    worst_dense = worst_dense.max((out[0] - exact).norm());
                }
            },
        )
        .unwrap();
        let exact = Complex64::from_polar(1.0, 5.0 + 12.5);
        assert!((y[0] - exact).norm() < 1e-8, "{}", (y[0] - exact).norm());
        assert!(worst_dense < 1e-8, "{worst_dense}");
        assert!(stats.accepted > 10);
    }

    #[test]
    fn coupled_rabi() {
        // resonant two-level: f0 = cos(Ωt), f1 = −i sin(Ωt)
        let omega = 0.7;
        let y0 = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let mi = Complex64::new(0.0, -omega);
        let (y, _) = dopri5(
            |_, y, dy| {
                dy[0] = mi * y[1];
                dy[1] = mi * y[0];
            },
            0.0,
            10.0,
            &y0,
            control(1e-12),
            |_| {},
        )
        .unwrap();
        assert!((y[0].re - (omega * 10.0).cos()).abs() < 1e-9);
        assert!((y[1].im + (omega * 10.0).sin()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_interval_and_budget() {
        let y0 = [Complex64::new(1.0, 0.0)];
        assert!(dopri5(|_, _, _| {}, 1.0, 1.0, &y0, control(1e-8), |_| {}).is_err());
        let mut c = control(1e-14);
        c.max_steps = 3;
        assert!(dopri5(
            |t, y, dy| dy[0] = Complex64::new(0.0, 50.0 * t) * y[0],
            0.0,
            10.0,
            &y0,
            c,
            |_| {}
        )
        .is_err());
    }
}
