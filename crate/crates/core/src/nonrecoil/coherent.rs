//! Closed-form solution for a harmonic mode driven by a constant-velocity
//! electron: the mode ends in a coherent state,
//! `f_j(z) = e^{iχ} e^{−|β₀|²/2} (β₀*)^j / √j!` with `β₀' = u`,
//! `u(z) = (i/v) G_10*(z) e^{−iω_b z/v}` and `χ' = Im(u* β₀)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ode::{dopri5, StepControl};
use super::tail_integral;
use crate::closed_forms::{poisson_cutoff, poisson_occupations};
use crate::coupling::RealSpaceCoupling;
use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherentTrajectory {
    pub z: Vec<f64>,
    pub beta: Vec<Complex64>,
    pub chi: Vec<f64>,
    /// `β₀(∞)`.
    pub final_beta: Complex64,
    /// `|β₀(∞)|²`, the mean number of quanta.
    pub mean: f64,
    /// Poisson occupations with that mean, cut where the tail drops below 1e-15.
    pub occupations: Vec<f64>,
}

impl CoherentTrajectory {
    /// Occupations `P_j(z)` at sample `k`.
    pub fn occupations_at(&self, k: usize, n_max: usize) -> Vec<f64> {
        poisson_occupations(self.beta[k].norm_sqr(), n_max)
    }
}

/// Evaluates the coherent-state trajectory at the given `z` samples
/// (sorted ascending; may be empty).
pub fn boson_coherent<C: RealSpaceCoupling + ?Sized>(
    coupling: &C,
    frequency: f64,
    velocity: f64,
    z_samples: &[f64],
) -> Result<CoherentTrajectory> {
    if !(velocity.is_finite() && velocity > 0.0) {
        return Err(Error::invalid("velocity", format!("must be finite and positive, got {velocity}")));
    }
    if !(frequency.is_finite() && frequency > 0.0) {
        return Err(Error::invalid("frequency", format!("must be finite and positive, got {frequency}")));
    }
    if z_samples.windows(2).any(|w| !(w[0] <= w[1])) || z_samples.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("z_samples", "must be finite and sorted ascending"));
    }
    let k = frequency / velocity;
    // u(z) without the exponential, continued off the real axis
    let g = |z: Complex64| I / velocity * coupling.at(z.conj()).conj();
    let u = |z: f64| g(Complex64::new(z, 0.0)) * Complex64::from_polar(1.0, -k * z);

    let z0 = coupling.length_scale().max(1.0 / k);
    let tol = Tolerance {
        absolute: 1e-16,
        relative: 1e-13,
        max_intervals: 4000,
    };
    let left = tail_integral(g, -k, z0, false)?;
    let middle = integrate(u, -z0, z0, tol)?.value;
    let right = tail_integral(g, -k, z0, true)?;
    let final_beta = left + middle + right;
    let mean = final_beta.norm_sqr();

    let mut beta = Vec::with_capacity(z_samples.len());
    let mut chi = Vec::with_capacity(z_samples.len());
    if let (Some(&first), Some(&last)) = (z_samples.first(), z_samples.last()) {
        // β₀ at the first sample by quadrature, then (β₀, χ) by ODE
        let start = if first <= -z0 {
            tail_integral(g, -k, -first, false)?
        } else if first <= z0 {
            left + integrate(u, -z0, first, tol)?.value
        } else {
            final_beta - tail_integral(g, -k, first, true)?
        };
        if last > first {
            let scale = 1.0 / k;
            let control = StepControl {
                rtol: 1e-11,
                atol: 1e-13,
                initial_step: 1e-3 * coupling.length_scale().min(scale),
                min_step: 1e-9 * coupling.length_scale().min(scale),
                max_step: 0.25 * scale.max(coupling.length_scale()),
                max_steps: 2_000_000,
            };
            let mut next = 0;
            let y0 = [start, Complex64::new(0.0, 0.0)];
            let push = |y: &[Complex64], beta: &mut Vec<Complex64>, chi: &mut Vec<f64>| {
                beta.push(y[0]);
                chi.push(y[1].re);
            };
            while next < z_samples.len() && z_samples[next] <= first {
                push(&y0, &mut beta, &mut chi);
                next += 1;
            }
            dopri5(
                |z, y, dy| {
                    let uz = u(z);
                    dy[0] = uz;
                    dy[1] = Complex64::new((uz.conj() * y[0]).im, 0.0);
                },
                first,
                last,
                &y0,
                control,
                |step| {
                    let mut out = [Complex64::new(0.0, 0.0); 2];
                    while next < z_samples.len() && z_samples[next] <= step.t1 {
                        step.interpolate(z_samples[next], &mut out);
                        push(&out, &mut beta, &mut chi);
                        next += 1;
                    }
                },
            )?;
        } else {
            beta.resize(z_samples.len(), start);
            chi.resize(z_samples.len(), 0.0);
        }
    }

    let n_max = poisson_cutoff(mean, 1e-15);
    Ok(CoherentTrajectory {
        z: z_samples.to_vec(),
        beta,
        chi,
        final_beta,
        mean,
        occupations: poisson_occupations(mean, n_max),
    })
}
