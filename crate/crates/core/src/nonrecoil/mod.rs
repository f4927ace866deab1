//! Nonrecoil regime: the electron moves at constant velocity `v` and the
//! sample amplitudes obey
//!
//! ```text
//! df_j/dz = −(i/v) Σ_j' G_jj'(z) e^{iω_jj' z/v} f_j'(z)
//! ```
//!
//! with `P_j = |f_j(∞)|²`. Integration runs over `[−Z, Z]`; the coupling
//! outside that window is folded in through a first-order Magnus factor
//! whose tail integrals are evaluated along rays into the complex plane.

mod coherent;
mod eels;
pub mod ode;

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coupling::{CouplingModel, RealSpaceCoupling, TransitionSymmetry};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_half_line, Tolerance};

pub use coherent::{boson_coherent, CoherentTrajectory};
pub use eels::{eels_spectrum, EelsLine};
use ode::{dopri5, StepControl};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    TwoLevel,
    BosonLadder(usize),
    GeneralMultilevel,
}

/// One coupled pair: `G_{upper,lower}(z) = scale · base(z)`, with the
/// reverse element fixed by hermiticity.
#[derive(Clone)]
struct Link {
    upper: usize,
    lower: usize,
    scale: Complex64,
    /// Global phase kept apart from `scale` so that it never perturbs the
    /// magnitudes seen by the integrator.
    angle: f64,
    base: usize,
}

impl Link {
    fn factor(&self) -> Complex64 {
        if self.angle == 0.0 {
            self.scale
        } else {
            self.scale * Complex64::from_polar(1.0, self.angle)
        }
    }
}

/// Sample levels, couplings between them, and the electron velocity.
#[derive(Clone)]
pub struct LevelSystem {
    frequencies: Vec<f64>,
    velocity: f64,
    bases: Vec<Arc<dyn RealSpaceCoupling>>,
    links: Vec<Link>,
    kind: SystemKind,
}

impl std::fmt::Debug for LevelSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LevelSystem")
            .field("frequencies", &self.frequencies)
            .field("velocity", &self.velocity)
            .field("links", &self.links.len())
            .field("kind", &self.kind)
            .finish()
    }
}

fn check_velocity(v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid("velocity", format!("must be finite and positive, got {v}")));
    }
    Ok(())
}

fn check_frequency(w: f64) -> Result<()> {
    if !(w.is_finite() && w > 0.0) {
        return Err(Error::invalid("frequency", format!("must be finite and positive, got {w}")));
    }
    Ok(())
}

impl LevelSystem {
    /// Ground state at 0 and one excited level at `frequency`.
    pub fn two_level<C: RealSpaceCoupling + 'static>(coupling: C, frequency: f64, velocity: f64) -> Result<Self> {
        check_velocity(velocity)?;
        check_frequency(frequency)?;
        Ok(LevelSystem {
            frequencies: vec![0.0, frequency],
            velocity,
            bases: vec![Arc::new(coupling)],
            links: vec![Link {
                upper: 1,
                lower: 0,
                scale: Complex64::new(1.0, 0.0),
                angle: 0.0,
                base: 0,
            }],
            kind: SystemKind::TwoLevel,
        })
    }

    /// Two-level system in units `v = ω₁₀ = 1`, with `R_e = rho` and the
    /// amplitude fixed by `p1lin`.
    pub fn two_level_normalized(symmetry: TransitionSymmetry, rho: f64, p1lin: f64) -> Result<Self> {
        let model = CouplingModel::normalized_nonrecoil(symmetry, rho, 1.0, 1.0, p1lin)?;
        LevelSystem::two_level(model, 1.0, 1.0)
    }

    /// Harmonic mode truncated at `truncation` quanta, `G_{j,j−1} = √j G_10`.
    pub fn boson_ladder<C: RealSpaceCoupling + 'static>(
        coupling: C,
        frequency: f64,
        velocity: f64,
        truncation: usize,
    ) -> Result<Self> {
        check_velocity(velocity)?;
        check_frequency(frequency)?;
        if truncation < 1 {
            return Err(Error::invalid("truncation", "must be at least 1"));
        }
        let links = (1..=truncation)
            .map(|j| Link {
                upper: j,
                lower: j - 1,
                scale: Complex64::new((j as f64).sqrt(), 0.0),
                angle: 0.0,
                base: 0,
            })
            .collect();
        Ok(LevelSystem {
            frequencies: (0..=truncation).map(|j| j as f64 * frequency).collect(),
            velocity,
            bases: vec![Arc::new(coupling)],
            links,
            kind: SystemKind::BosonLadder(truncation),
        })
    }

    /// Arbitrary levels; each entry `(j, j', scale, coupling)` sets
    /// `G_jj'(z) = scale · coupling(z)` for `j ≠ j'` and implies
    /// `G_j'j(z) = conj(G_jj'(z))`.
    pub fn general(
        frequencies: Vec<f64>,
        velocity: f64,
        couplings: Vec<(usize, usize, Complex64, Arc<dyn RealSpaceCoupling>)>,
    ) -> Result<Self> {
        check_velocity(velocity)?;
        if frequencies.is_empty() || frequencies.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("frequencies", "need at least one finite level frequency"));
        }
        let mut bases: Vec<Arc<dyn RealSpaceCoupling>> = Vec::new();
        let mut links = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (j, jp, scale, c) in couplings {
            if j == jp || j >= frequencies.len() || jp >= frequencies.len() {
                return Err(Error::invalid(
                    "couplings",
                    format!("pair ({j}, {jp}) must join two distinct existing levels"),
                ));
            }
            if !seen.insert((j.min(jp), j.max(jp))) {
                return Err(Error::invalid("couplings", format!("pair ({j}, {jp}) given twice")));
            }
            let base = match bases.iter().position(|b| Arc::ptr_eq(b, &c)) {
                Some(i) => i,
                None => {
                    bases.push(c);
                    bases.len() - 1
                }
            };
            links.push(Link {
                upper: j,
                lower: jp,
                scale,
                angle: 0.0,
                base,
            });
        }
        Ok(LevelSystem {
            frequencies,
            velocity,
            bases,
            links,
            kind: SystemKind::GeneralMultilevel,
        })
    }

    pub fn levels(&self) -> usize {
        self.frequencies.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    /// Same system with every coupling multiplied by `e^{iφ}`.
    pub fn with_phase(&self, angle: f64) -> Self {
        let mut out = self.clone();
        for link in &mut out.links {
            link.angle += angle;
        }
        out
    }

    /// `G_jj'(z)` for real or complex `z`.
    pub fn coupling(&self, j: usize, jp: usize, z: Complex64) -> Complex64 {
        for link in &self.links {
            if link.upper == j && link.lower == jp {
                return link.factor() * self.bases[link.base].at(z);
            }
            if link.upper == jp && link.lower == j {
                return (link.factor() * self.bases[link.base].at(z.conj())).conj();
            }
        }
        ZERO
    }

    /// Frequency used to make `z` dimensionless: the largest coupled spacing,
    /// or `v / ℓ` when all coupled levels are degenerate.
    fn reference_frequency(&self) -> f64 {
        let w = self
            .links
            .iter()
            .map(|l| (self.frequencies[l.upper] - self.frequencies[l.lower]).abs())
            .fold(0.0, f64::max);
        if w > 0.0 {
            w
        } else {
            self.velocity / self.coupling_length()
        }
    }

    fn coupling_length(&self) -> f64 {
        self.bases.iter().map(|b| b.length_scale()).fold(0.0, f64::max).max(f64::MIN_POSITIVE)
    }

    fn min_coupling_length(&self) -> f64 {
        self.bases
            .iter()
            .map(|b| b.length_scale())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Normalized amplitudes `a_j` at `z → −∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    amplitudes: Vec<Complex64>,
}

impl InitialState {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !((norm - 1.0).abs() <= 1e-12) {
            return Err(Error::invalid(
                "initial_state",
                format!("amplitudes must be normalized, Σ|a|² = {norm}"),
            ));
        }
        Ok(InitialState { amplitudes })
    }

    /// All weight in level `j` of an `levels`-level system.
    pub fn basis(levels: usize, j: usize) -> Result<Self> {
        if j >= levels {
            return Err(Error::invalid("initial_state", format!("level {j} outside 0..{levels}")));
        }
        let mut a = vec![ZERO; levels];
        a[j] = Complex64::new(1.0, 0.0);
        Ok(InitialState { amplitudes: a })
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    /// Half-range `Z`; `None` picks `100 · max(R_e, v/ω)`.
    pub half_range: Option<f64>,
    /// Per-step error tolerance.
    pub tolerance: f64,
    /// Uniform trajectory samples over `[−Z, Z]` (0 for none).
    pub samples: usize,
    /// Check the result against a run with `2Z`.
    pub check_tail: bool,
    /// Largest accepted `max_j |P_j(Z) − P_j(2Z)|`.
    pub tail_tolerance: f64,
    /// Doublings of `Z` allowed before giving up.
    pub max_doublings: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            half_range: None,
            tolerance: 1e-10,
            samples: 0,
            check_tail: true,
            tail_tolerance: 1e-5,
            max_doublings: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub z: Vec<f64>,
    /// `amplitudes[k][j] = f_j(z[k])`.
    pub amplitudes: Vec<Vec<Complex64>>,
    /// `f_j(∞)`.
    pub final_amplitudes: Vec<Complex64>,
    pub probabilities: Vec<f64>,
    pub half_range: f64,
    /// Largest deviation of `Σ|f_j|²` from its initial value.
    pub norm_drift: f64,
    /// `max_j |P_j(Z) − P_j(2Z)|`, when checked.
    pub tail_estimate: Option<f64>,
    pub steps: usize,
}

/// Right-hand side in the dimensionless coordinate `x = z ω_ref / v`.
struct Rhs<'a> {
    system: &'a LevelSystem,
    length: f64,
    base_values: Vec<Complex64>,
}

impl<'a> Rhs<'a> {
    fn new(system: &'a LevelSystem, length: f64) -> Self {
        Rhs {
            system,
            length,
            base_values: vec![ZERO; system.bases.len()],
        }
    }

    fn eval(&mut self, x: f64, f: &[Complex64], df: &mut [Complex64]) {
        let sys = self.system;
        let z = x * self.length;
        for (value, base) in self.base_values.iter_mut().zip(&sys.bases) {
            *value = base.at(Complex64::new(z, 0.0));
        }
        df.fill(ZERO);
        // −(i/v) dz/dx
        let pref = -I * (self.length / sys.velocity);
        for link in &sys.links {
            let g = link.factor() * self.base_values[link.base];
            let w = sys.frequencies[link.upper] - sys.frequencies[link.lower];
            let phase = Complex64::from_polar(1.0, w * z / sys.velocity);
            let up = pref * g * phase;
            df[link.upper] += up * f[link.lower];
            df[link.lower] += pref * (g * phase).conj() * f[link.upper];
        }
    }
}

/// `∫ F(z) dz` over `z > a` (`right`) or `z < −a` for `F = g(z) e^{ikz}`
/// with `g` analytic off the imaginary axis and decaying at infinity.
pub(crate) fn tail_integral<G: Fn(Complex64) -> Complex64>(g: G, k: f64, a: f64, right: bool) -> Result<Complex64> {
    let tol = Tolerance {
        absolute: 1e-15,
        relative: 1e-11,
        max_intervals: 2000,
    };
    if k == 0.0 {
        let sign = if right { 1.0 } else { -1.0 };
        let est = integrate_half_line(|t| g(Complex64::new(sign * (a + t), 0.0)), tol)?;
        return Ok(est.value);
    }
    let s = k.signum();
    let start = if right { a } else { -a };
    // scale the ray parameter by the decay length 1/|k|
    let scale = 1.0 / k.abs();
    let est = integrate_half_line(
        |t| {
            let z = Complex64::new(start, s * t * scale);
            g(z) * (I * k * z).exp()
        },
        tol,
    )?;
    let ray = I * s * scale * est.value;
    Ok(if right { ray } else { -ray })
}

/// `exp(−i T)` with `T_jj' = (1/v) ∫_tail G_jj'(z) e^{iω_jj' z/v} dz`.
fn tail_propagator(system: &LevelSystem, z_edge: f64, right: bool) -> Result<DMatrix<Complex64>> {
    let n = system.levels();
    let mut t = DMatrix::<Complex64>::zeros(n, n);
    let v = system.velocity;
    for link in &system.links {
        let base = &system.bases[link.base];
        let k = (system.frequencies[link.upper] - system.frequencies[link.lower]) / v;
        let value = link.factor() * tail_integral(|z| base.at(z), k, z_edge, right)? / v;
        t[(link.upper, link.lower)] += value;
        t[(link.lower, link.upper)] += value.conj();
    }
    Ok((t * (-I)).exp())
}

fn apply(m: &DMatrix<Complex64>, f: &[Complex64]) -> Vec<Complex64> {
    (0..f.len())
        .map(|i| (0..f.len()).map(|j| m[(i, j)] * f[j]).sum())
        .collect()
}

fn single_run(system: &LevelSystem, initial: &InitialState, z_half: f64, opts: &IntegrateOptions, samples: usize) -> Result<TrajectoryResult> {
    let n = system.levels();
    let length = system.velocity / system.reference_frequency();
    let x_half = z_half / length;

    let left = tail_propagator(system, z_half, false)?;
    let right = tail_propagator(system, z_half, true)?;
    let f_start = apply(&left, initial.amplitudes());
    let norm0: f64 = initial.amplitudes().iter().map(|a| a.norm_sqr()).sum();

    // breakpoints ±s·2^k keep the stepper from striding over the near field
    let s = (0.5 * system.min_coupling_length() / length).min(0.5).min(x_half);
    let mut nodes = vec![0.0];
    let mut b = s;
    while b < x_half {
        nodes.push(b);
        b *= 2.0;
    }
    nodes.push(x_half);
    let mut edges: Vec<f64> = nodes.iter().skip(1).rev().map(|x| -x).collect();
    edges.extend(nodes.iter().copied());

    let xs: Vec<f64> = if samples >= 2 {
        (0..samples)
            .map(|i| -x_half + 2.0 * x_half * i as f64 / (samples - 1) as f64)
            .collect()
    } else {
        Vec::new()
    };
    let mut sample_values: Vec<Vec<Complex64>> = Vec::with_capacity(xs.len());
    let mut next_sample = 0;
    let mut drift: f64 = 0.0;
    let mut steps = 0;
    let mut rhs = Rhs::new(system, length);
    let mut f = f_start;
    let mut h_guess = (s * 0.1).min(0.01);
    let min_step = 1e-6_f64.min(s * 1e-6);

    while next_sample < xs.len() && xs[next_sample] <= edges[0] {
        sample_values.push(f.clone());
        next_sample += 1;
    }
    for seg in edges.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let control = StepControl {
            rtol: opts.tolerance,
            atol: opts.tolerance,
            initial_step: h_guess.min(b - a),
            min_step,
            max_step: b - a,
            max_steps: 2_000_000,
        };
        let mut last_h = h_guess;
        let (y, stats) = dopri5(
            |x, y, dy| rhs.eval(x, y, dy),
            a,
            b,
            &f,
            control,
            |step| {
                let norm: f64 = step.y1.iter().map(|c| c.norm_sqr()).sum();
                drift = drift.max((norm - norm0).abs());
                last_h = step.t1 - step.t0;
                while next_sample < xs.len() && xs[next_sample] <= step.t1 {
                    let mut out = vec![ZERO; n];
                    step.interpolate(xs[next_sample], &mut out);
                    sample_values.push(out);
                    next_sample += 1;
                }
            },
        )?;
        steps += stats.accepted;
        h_guess = last_h;
        f = y;
    }
    while sample_values.len() < xs.len() {
        sample_values.push(f.clone());
    }

    let f_end = apply(&right, &f);
    let norm_end: f64 = f_end.iter().map(|c| c.norm_sqr()).sum();
    drift = drift.max((norm_end - norm0).abs());
    Ok(TrajectoryResult {
        z: xs.iter().map(|x| x * length).collect(),
        amplitudes: sample_values,
        probabilities: f_end.iter().map(|c| c.norm_sqr()).collect(),
        final_amplitudes: f_end,
        half_range: z_half,
        norm_drift: drift,
        tail_estimate: None,
        steps,
    })
}

/// Default half-range `100 · max(R_e, v/ω)`.
pub fn default_half_range(system: &LevelSystem) -> f64 {
    100.0 * system.coupling_length().max(system.velocity / system.reference_frequency())
}

/// Rewrites the system in level phases `θ_j` that make the constant scale of
/// every spanning-tree link real and positive; returns it with `e^{iθ_j}`.
/// Amplitudes of the original system are `e^{iθ_j}` times the gauged ones,
/// so a global coupling phase cannot reach the step-size control.
fn gauge_fixed(system: &LevelSystem) -> (LevelSystem, Vec<Complex64>) {
    let n = system.levels();
    let mut theta: Vec<Option<f64>> = vec![None; n];
    let mut tree = vec![false; system.links.len()];
    loop {
        let mut changed = false;
        for (k, link) in system.links.iter().enumerate() {
            let arg = link.scale.arg() + link.angle;
            match (theta[link.lower], theta[link.upper]) {
                (Some(l), None) => theta[link.upper] = Some(l + arg),
                (None, Some(u)) => theta[link.lower] = Some(u - arg),
                _ => continue,
            }
            tree[k] = true;
            changed = true;
        }
        if !changed {
            match theta.iter().position(Option::is_none) {
                Some(j) => theta[j] = Some(0.0),
                None => break,
            }
        }
    }
    let theta: Vec<f64> = theta.into_iter().map(|t| t.unwrap_or(0.0)).collect();
    let mut out = system.clone();
    for (link, on_tree) in out.links.iter_mut().zip(tree) {
        link.scale = if on_tree {
            Complex64::new(link.scale.norm(), 0.0)
        } else {
            link.factor() * Complex64::from_polar(1.0, theta[link.lower] - theta[link.upper])
        };
        link.angle = 0.0;
    }
    (out, theta.iter().map(|&t| Complex64::from_polar(1.0, t)).collect())
}

/// Propagates `initial` through the full trajectory.
pub fn integrate(system: &LevelSystem, initial: &InitialState, opts: &IntegrateOptions) -> Result<TrajectoryResult> {
    if initial.amplitudes().len() != system.levels() {
        return Err(Error::invalid(
            "initial_state",
            format!("{} amplitudes for {} levels", initial.amplitudes().len(), system.levels()),
        ));
    }
    let (gauged, phases) = gauge_fixed(system);
    let rotated = InitialState {
        amplitudes: initial.amplitudes().iter().zip(&phases).map(|(a, u)| a * u.conj()).collect(),
    };
    let mut result = integrate_gauged(&gauged, &rotated, opts)?;
    for f in result.amplitudes.iter_mut().chain(std::iter::once(&mut result.final_amplitudes)) {
        for (a, u) in f.iter_mut().zip(&phases) {
            *a *= u;
        }
    }
    Ok(result)
}

fn integrate_gauged(system: &LevelSystem, initial: &InitialState, opts: &IntegrateOptions) -> Result<TrajectoryResult> {
    if !(opts.tolerance > 0.0 && opts.tolerance < 1e-2) {
        return Err(Error::invalid("tolerance", format!("must lie in (0, 1e-2), got {}", opts.tolerance)));
    }
    let mut z_half = opts.half_range.unwrap_or_else(|| default_half_range(system));
    if !(z_half.is_finite() && z_half > 0.0) {
        return Err(Error::invalid("half_range", format!("must be finite and positive, got {z_half}")));
    }
    let mut result = single_run(system, initial, z_half, opts, opts.samples)?;
    if !opts.check_tail {
        return Ok(result);
    }
    let mut last_diff = f64::INFINITY;
    for _ in 0..=opts.max_doublings {
        let wide = single_run(system, initial, 2.0 * z_half, opts, 0)?;
        let diff = result
            .probabilities
            .iter()
            .zip(&wide.probabilities)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if diff <= opts.tail_tolerance {
            result.tail_estimate = Some(diff);
            return Ok(result);
        }
        last_diff = diff;
        z_half *= 2.0;
        result = if opts.samples >= 2 {
            single_run(system, initial, z_half, opts, opts.samples)?
        } else {
            wide
        };
    }
    Err(Error::NotConverged {
        what: "domain truncation (Z vs 2Z)",
        achieved: last_diff,
        required: opts.tail_tolerance,
    })
}

/// `P_1` of a normalized two-level system in units `v = ω₁₀ = 1`.
pub fn two_level_probability(symmetry: TransitionSymmetry, rho: f64, p1lin: f64, opts: &IntegrateOptions) -> Result<TrajectoryResult> {
    let system = LevelSystem::two_level_normalized(symmetry, rho, p1lin)?;
    integrate(&system, &InitialState::basis(2, 0)?, opts)
}

/// First-order probability `(4π²/v²)|G(ω₁₀/v)|²`.
pub fn linear_probability(model: &CouplingModel, velocity: f64, frequency: f64) -> f64 {
    crate::coupling::linear_probability_nonrecoil(model, velocity, frequency)
}
