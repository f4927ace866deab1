//! Momentum grids and the bin-integrated propagators on them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kinematics::{Channel, KinematicsModel};

/// Largest number of `N → N + 1` adjustments tried to move poles off bin edges.
pub const MAX_POLE_ADJUSTMENTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// `p_l = q0 + l h`, all points positive; backscattering is not represented.
    CenteredForward,
    /// `p_l = l h` covering both signs of the wave vector.
    SymmetricFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumGrid {
    pub q0: f64,
    pub center: f64,
    pub half_count: usize,
    pub spacing: f64,
    /// Total covered range, `(2N+1) h`.
    pub range: f64,
    pub mode: GridMode,
    /// How many times `N` was bumped to clear the poles from the bin edges.
    pub adjustments: usize,
}

impl MomentumGrid {
    pub fn len(&self) -> usize {
        2 * self.half_count + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        self.center + (i as f64 - self.half_count as f64) * self.spacing
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn lower(&self) -> f64 {
        self.center - 0.5 * self.range
    }

    pub fn upper(&self) -> f64 {
        self.center + 0.5 * self.range
    }

    /// True when `q` lies strictly inside the covered interval.
    pub fn covers(&self, q: f64) -> bool {
        q > self.lower() && q < self.upper()
    }

    /// Distance from `q` to the nearest bin edge, in units of `h`.
    fn edge_clearance(&self, q: f64) -> f64 {
        let x = (q - self.lower()) / self.spacing;
        (x - x.round()).abs()
    }
}

/// `q0 (1 − √(1 − ω/ε0))`, the forward transfer to a level at `ω`.
pub fn forward_transfer(q0: f64, frequency: f64) -> f64 {
    let e0 = 0.5 * q0 * q0;
    let r = (frequency / e0).min(1.0);
    // 1 − √(1 − r) without cancellation
    q0 * r / (1.0 + (1.0 - r).sqrt())
}

/// Grid for a two-level system at `q0` with level at `frequency`.
pub fn build_grid(q0: f64, frequency: f64, range_multiplier: f64, half_count: usize, mode: GridMode) -> Result<MomentumGrid> {
    let kin = KinematicsModel::Nonrelativistic;
    if !(q0.is_finite() && q0 > 0.0) {
        return Err(Error::invalid("q0", format!("must be finite and positive, got {q0}")));
    }
    if !(frequency.is_finite() && frequency > 0.0) {
        return Err(Error::invalid("frequency", format!("must be finite and positive, got {frequency}")));
    }
    if mode == GridMode::CenteredForward && kin.energy(q0) <= frequency {
        return Err(Error::BelowThreshold {
            energy: kin.energy(q0),
            threshold: frequency,
        });
    }
    let poles = open_poles(q0, &[0.0, frequency]);
    let range = range_multiplier * forward_transfer(q0, frequency);
    build_grid_with_range(q0, range, half_count, mode, &poles)
}

/// Magnitudes `|q_j|` of the open channels among `frequencies`.
pub fn open_poles(q0: f64, frequencies: &[f64]) -> Vec<f64> {
    let kin = KinematicsModel::Nonrelativistic;
    frequencies
        .iter()
        .filter_map(|&w| match kin.scattered_wavevector(q0, w) {
            Ok(Channel::Open(q)) => Some(q),
            _ => None,
        })
        .collect()
}

/// Grid of the requested nominal `range`, widened by one point at a time
/// until no pole `±q` sits on a bin edge.
pub fn build_grid_with_range(q0: f64, range: f64, half_count: usize, mode: GridMode, poles: &[f64]) -> Result<MomentumGrid> {
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::invalid("range_multiplier", format!("grid range must be positive, got {range}")));
    }
    if half_count < 1 {
        return Err(Error::invalid("points", "need at least 3 grid points"));
    }
    let (center, total) = match mode {
        // keep every bin at positive wave vector
        GridMode::CenteredForward => (q0, range.min(2.0 * q0)),
        GridMode::SymmetricFull => (0.0, 2.0 * q0 + range),
    };
    for adjustments in 0..=MAX_POLE_ADJUSTMENTS {
        let n = half_count + adjustments;
        let grid = MomentumGrid {
            q0,
            center,
            half_count: n,
            spacing: total / (2 * n + 1) as f64,
            range: total,
            mode,
            adjustments,
        };
        let clear = poles
            .iter()
            .flat_map(|&q| [q, -q])
            .all(|q| !grid.covers(q) || grid.edge_clearance(q) > 1e-9);
        if clear {
            return Ok(grid);
        }
    }
    Err(Error::PoleOnEdge {
        attempts: MAX_POLE_ADJUSTMENTS,
    })
}

/// Diagonal of `Δ_j`: `∫_bin dq / (ε_q − ε_{q0} + ω_j0 − i0⁺)` on every bin.
pub fn delta_diagonal(grid: &MomentumGrid, channel: Channel) -> Result<Vec<Complex64>> {
    let h = grid.spacing;
    let half = 0.5 * h;
    match channel {
        Channel::Open(k) => grid
            .points()
            .into_iter()
            .map(|p| {
                let denom = p * p - (k + half) * (k + half);
                let num = p * p - (k - half) * (k - half);
                if denom == 0.0 || num == 0.0 {
                    return Err(Error::PoleOnEdge { attempts: 0 });
                }
                // ln|num/denom| with num/denom = 1 + 2kh/denom
                let x = 2.0 * k * h / denom;
                let log = if 1.0 + x > 0.0 { x.ln_1p() } else { (-(num / denom)).ln() };
                let hits = [k, -k].iter().filter(|&&q| q > p - half && q < p + half).count();
                Ok(Complex64::new(log, PI * hits as f64) / k)
            })
            .collect(),
        Channel::Closed(kappa) => Ok(grid
            .points()
            .into_iter()
            .map(|p| {
                // atan((p+h/2)/κ) − atan((p−h/2)/κ) through a single atan2
                let d = (h * kappa).atan2(kappa * kappa + p * p - half * half);
                Complex64::new(2.0 * d / kappa, 0.0)
            })
            .collect()),
        Channel::Threshold => Err(Error::invalid("channel", "Δ is undefined exactly at threshold")),
    }
}

/// `ln|(p + h/2 − a)/(p − h/2 − a)|`, accurate far from `a`.
fn log_ratio(p: f64, half: f64, a: f64) -> f64 {
    let below = p - half - a;
    let x = 2.0 * half / below;
    if 1.0 + x > 0.0 {
        x.ln_1p()
    } else {
        ((p + half - a) / below).abs().ln()
    }
}

/// First moments `∫_bin (q − p_l) dq / (ε_q − ε_{q0} + ω_j0 − i0⁺)`.
pub fn first_moments(grid: &MomentumGrid, channel: Channel) -> Vec<Complex64> {
    let half = 0.5 * grid.spacing;
    match channel {
        Channel::Open(k) => grid
            .points()
            .into_iter()
            .map(|p| {
                // ∫ (q − p) (1/k)[1/(q − k − i0) − 1/(q + k + i0)] dq over the bin
                let hit = |q: f64| if q > p - half && q < p + half { PI } else { 0.0 };
                let plus = Complex64::new(log_ratio(p, half, k), hit(k)) * (k - p);
                let minus = Complex64::new(log_ratio(p, half, -k), -hit(-k)) * (k + p);
                (plus + minus) / k
            })
            .collect(),
        // smooth integrand: the midpoint value is already second order
        _ => vec![Complex64::new(0.0, 0.0); grid.len()],
    }
}

/// Quadrature weights for `∫ dq f(q) / (ε_q − ε_{q0} + ω_j0 − i0⁺)` with `f`
/// linear inside each bin, its slope taken by differences of neighboring
/// nodes. Differencing the whole integrand keeps the weights diagonal.
pub fn bin_weights(grid: &MomentumGrid, channel: Channel) -> Result<Vec<Complex64>> {
    let mut w = delta_diagonal(grid, channel)?;
    let first = first_moments(grid, channel);
    let n = w.len();
    let h = grid.spacing;
    if n < 3 {
        return Ok(w);
    }
    for (l, m1) in first.iter().enumerate() {
        let (lo, hi, span) = match l {
            0 => (0, 1, h),
            _ if l == n - 1 => (n - 2, n - 1, h),
            _ => (l - 1, l + 1, 2.0 * h),
        };
        w[hi] += m1 / span;
        w[lo] -= m1 / span;
    }
    Ok(w)
}
