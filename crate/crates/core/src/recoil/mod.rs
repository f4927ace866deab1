//! Full recoil: the self-consistent scattering equation
//!
//! ```text
//! M_qj = G_{qj,q0 0} − ∫dq' Σ_j' G_{qj,q'j'} M_q'j' / (ε_q' − ε_q0 + ω_j'0 − i0⁺)
//! ```
//!
//! discretized on a momentum grid into `M_j = g_j − Σ_j' S_jj' M_j'` with
//! `S_jj' = G_jj' Δ_j'`, and
//!
//! ```text
//! P_j = [ |δ_j0 v_0 − 2πi M_j(q_j)|² + 4π² |M_j(−q_j)|² ] / (v_j v_0).
//! ```
//!
//! Two-level samples and truncated boson ladders share one block-tridiagonal
//! solver (a two-level system is a ladder cut at `n = 1` with unit scales).
//! `M_j(q)` off the grid is evaluated through the discretized equation
//! itself, which is exact on the nodes and smooth in between.

pub mod grid;
pub mod linalg;
mod profile;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coupling::{normalize_amplitude, CouplingModel, PointLikeCoupling, TransferKernel, TransitionSymmetry};
use crate::error::{Error, Result};
use crate::kinematics::{Channel, KinematicsModel};

pub use grid::{bin_weights, build_grid, delta_diagonal, forward_transfer, GridMode, MomentumGrid};
use linalg::{sub_matmul, CMatrix, CVector, Lu};
pub use profile::{weighted_probability, SpectralProfile};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// `c_Δ` in `Δ = c_Δ q0 (1 − √(1 − ω/ε0))`.
    pub range_multiplier: f64,
    /// The range is at least this many kernel widths (`1/R_e`).
    pub width_multiplier: f64,
    /// `2N + 1`, before any pole-edge adjustment.
    pub points: usize,
    pub mode: GridMode,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            range_multiplier: 6.0,
            width_multiplier: 20.0,
            points: 501,
            mode: GridMode::CenteredForward,
        }
    }
}

impl GridOptions {
    fn half_count(&self) -> Result<usize> {
        if self.points < 3 || self.points.is_multiple_of(2) {
            return Err(Error::invalid("points", format!("must be odd and at least 3, got {}", self.points)));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier >= 0.0) {
            return Err(Error::invalid(
                "width_multiplier",
                format!("must be finite and nonnegative, got {}", self.width_multiplier),
            ));
        }
        if !(self.range_multiplier.is_finite() && self.range_multiplier > 0.0) {
            return Err(Error::invalid(
                "range_multiplier",
                format!("must be finite and positive, got {}", self.range_multiplier),
            ));
        }
        Ok(self.points / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoilOptions {
    pub grid: GridOptions,
    /// Repeat the solve on a 1.5× wider grid and report the change.
    pub refine: bool,
    /// Closest relative approach `|ε0 − ω_j0| / ω` to a threshold that is solved.
    pub threshold_tolerance: f64,
    /// Ladder truncation grows until `P_n` falls below this.
    pub tail_tolerance: f64,
    pub max_truncation: usize,
}

impl Default for RecoilOptions {
    fn default() -> Self {
        RecoilOptions {
            grid: GridOptions::default(),
            refine: true,
            threshold_tolerance: 1e-4,
            tail_tolerance: 1e-8,
            max_truncation: 80,
        }
    }
}

impl RecoilOptions {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.points < 3 || g.points.is_multiple_of(2) {
            return Err(Error::invalid("grid.points", format!("must be odd and at least 3, got {}", g.points)));
        }
        if !(g.range_multiplier.is_finite() && g.range_multiplier > 0.0) {
            return Err(Error::invalid("grid.range_multiplier", format!("must be positive, got {}", g.range_multiplier)));
        }
        if !(g.width_multiplier.is_finite() && g.width_multiplier >= 0.0) {
            return Err(Error::invalid("grid.width_multiplier", format!("must be nonnegative, got {}", g.width_multiplier)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelProbability {
    pub level: usize,
    pub frequency: f64,
    pub probability: f64,
    pub forward: f64,
    pub backward: f64,
    /// `|q_j|` of the open channel, `None` when closed.
    pub wavevector: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `|Σ_j P_j − 1|`.
    pub sum_deviation: f64,
    /// `max_j |P_j − P_j'|` against the 1.5× range solve, when requested.
    pub refinement_delta: Option<f64>,
    /// Larger of the two above; the reported convergence uncertainty.
    pub eps_conv: f64,
    pub grid: MomentumGrid,
    pub pivot_ratio: f64,
    /// Truncations tried for ladders, ending with the accepted one.
    pub truncation_history: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoilSolution {
    pub levels: Vec<LevelProbability>,
    /// `M_j` on the grid nodes (empty below threshold).
    pub coefficients: Vec<Vec<Complex64>>,
    pub diagnostics: Diagnostics,
    /// True when the incident electron cannot excite level 1.
    pub below_threshold: bool,
}

impl RecoilSolution {
    pub fn probability(&self, j: usize) -> f64 {
        self.levels.get(j).map_or(0.0, |l| l.probability)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.probability).collect()
    }

    /// `Σ_j j P_j`.
    pub fn mean_occupation(&self) -> f64 {
        self.levels.iter().map(|l| l.level as f64 * l.probability).sum()
    }
}

/// A ladder `0 ↔ 1 ↔ … ↔ n` with `G_{j,j−1} = s_j G_10`.
struct Ladder<'a> {
    kernel: &'a dyn TransferKernel,
    frequencies: Vec<f64>,
    scales: Vec<f64>,
}

struct Solved {
    grid: MomentumGrid,
    coefficients: Vec<CVector>,
    weights: Vec<Vec<Complex64>>,
    pivot_ratio: f64,
}

fn scale_rows(x: &CMatrix, d: &[Complex64]) -> CMatrix {
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

fn scale_cols(x: &CMatrix, s: f64, d: &[Complex64]) -> CMatrix {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s * d[j];
    }
    out
}

fn scale_vector(x: &CVector, d: &[Complex64]) -> CVector {
    CVector::from_iterator(x.len(), x.iter().zip(d).map(|(a, b)| a * b))
}

fn channels(q0: f64, frequencies: &[f64]) -> Result<Vec<Channel>> {
    let kin = KinematicsModel::Nonrelativistic;
    frequencies.iter().map(|&w| kin.scattered_wavevector(q0, w)).collect()
}

impl Ladder<'_> {
    fn n(&self) -> usize {
        self.frequencies.len() - 1
    }

    fn solve(&self, grid: &MomentumGrid) -> Result<Solved> {
        let q0 = grid.q0;
        let chans = channels(q0, &self.frequencies)?;
        let weights: Vec<Vec<Complex64>> = chans.iter().map(|&c| bin_weights(grid, c)).collect::<Result<_>>()?;
        let size = grid.len();
        let n = self.n();

        // Toeplitz coupling G10[l, l'] = K((l − l') h)
        let offsets: Vec<Complex64> = (0..2 * size - 1)
            .map(|d| self.kernel.at_transfer((d as f64 - (size - 1) as f64) * grid.spacing))
            .collect();
        let g10 = CMatrix::from_fn(size, size, |l, lp| offsets[l + size - 1 - lp]);
        let g01 = g10.adjoint();
        let points = grid.points();
        let g1 = CVector::from_iterator(size, points.iter().map(|&p| self.scales[1] * self.kernel.at_transfer(p - q0)));

        // forward sweep: C_j = W_j⁻¹ U_j, d_j = W_j⁻¹ (g_j − L_j d_{j−1})
        // with L_j = s_j G10 Δ_{j−1}, U_j = s_{j+1} G01 Δ_{j+1}
        let mut c_blocks: Vec<CMatrix> = Vec::with_capacity(n);
        let mut d_blocks: Vec<CVector> = Vec::with_capacity(n + 1);
        c_blocks.push(scale_cols(&g01, self.scales[1], &weights[1]));
        d_blocks.push(CVector::zeros(size));
        let mut worst_ratio: f64 = 1.0;
        for j in 1..=n {
            let g10s = &g10 * Complex64::new(self.scales[j], 0.0);
            let mut w = CMatrix::identity(size, size);
            sub_matmul(&mut w, &g10s, &scale_rows(&c_blocks[j - 1], &weights[j - 1]));
            let lu = Lu::new(w)?;
            worst_ratio = worst_ratio.max(lu.pivot_ratio());
            let mut rhs = -(&g10s * scale_vector(&d_blocks[j - 1], &weights[j - 1]));
            if j == 1 {
                rhs += &g1;
            }
            d_blocks.push(lu.solve_vector(&rhs));
            if j < n {
                c_blocks.push(lu.solve_matrix(&scale_cols(&g01, self.scales[j + 1], &weights[j + 1])));
            }
        }
        let mut coefficients = vec![CVector::zeros(size); n + 1];
        coefficients[n] = d_blocks[n].clone();
        for j in (0..n).rev() {
            coefficients[j] = &d_blocks[j] - &c_blocks[j] * &coefficients[j + 1];
        }
        Ok(Solved {
            grid: *grid,
            coefficients,
            weights,
            pivot_ratio: worst_ratio,
        })
    }

    /// `M_j(q)` from the discretized equation.
    fn evaluate(&self, s: &Solved, j: usize, q: f64) -> Complex64 {
        let points = s.grid.points();
        let mut value = if j == 1 {
            self.scales[1] * self.kernel.at_transfer(q - s.grid.q0)
        } else {
            ZERO
        };
        if j >= 1 {
            let acc: Complex64 = points
                .iter()
                .zip(&s.weights[j - 1])
                .zip(s.coefficients[j - 1].iter())
                .map(|((&p, w), m)| self.kernel.at_transfer(q - p) * w * m)
                .sum();
            value -= self.scales[j] * acc;
        }
        if j < self.n() {
            let acc: Complex64 = points
                .iter()
                .zip(&s.weights[j + 1])
                .zip(s.coefficients[j + 1].iter())
                .map(|((&p, w), m)| self.kernel.at_transfer(p - q).conj() * w * m)
                .sum();
            value -= self.scales[j + 1] * acc;
        }
        value
    }

    fn probabilities(&self, s: &Solved) -> Result<Vec<LevelProbability>> {
        let q0 = s.grid.q0;
        let v0 = q0;
        let chans = channels(q0, &self.frequencies)?;
        let mut out = Vec::with_capacity(chans.len());
        for (j, &chan) in chans.iter().enumerate() {
            let (forward, backward, wavevector) = match chan {
                Channel::Open(qj) => {
                    let direct = if j == 0 { Complex64::new(v0, 0.0) } else { ZERO };
                    let f = (direct - 2.0 * PI * I * self.evaluate(s, j, qj)).norm_sqr() / (qj * v0);
                    let b = if s.grid.covers(-qj) {
                        4.0 * PI * PI * self.evaluate(s, j, -qj).norm_sqr() / (qj * v0)
                    } else {
                        0.0
                    };
                    (f, b, Some(qj))
                }
                _ => (0.0, 0.0, None),
            };
            out.push(LevelProbability {
                level: j,
                frequency: self.frequencies[j],
                probability: forward + backward,
                forward,
                backward,
                wavevector,
            });
        }
        Ok(out)
    }
}

fn check_threshold(q0: f64, frequencies: &[f64], unit: f64, tol: f64) -> Result<()> {
    let e0 = KinematicsModel::Nonrelativistic.energy(q0);
    for (j, &w) in frequencies.iter().enumerate().skip(1) {
        if (e0 - w).abs() < tol * unit {
            return Err(Error::AtThreshold {
                level: j,
                energy: e0,
                threshold: w,
                tolerance: tol,
            });
        }
    }
    Ok(())
}

fn ladder_grid(
    kernel: &dyn TransferKernel,
    q0: f64,
    frequencies: &[f64],
    reference: f64,
    grid: &GridOptions,
    widen: f64,
) -> Result<MomentumGrid> {
    let half = grid.half_count()?;
    let poles = grid::open_poles(q0, frequencies);
    // cover the deepest open channel with the same margin the first one gets
    let deepest = poles.iter().copied().fold(q0, f64::min);
    let nominal = grid.range_multiplier * forward_transfer(q0, reference);
    let width = kernel.transfer_width().map_or(0.0, |w| grid.width_multiplier * w);
    let base = widen * nominal.max(width);
    let range = base + 2.0 * (q0 - deepest - forward_transfer(q0, reference)).max(0.0);
    grid::build_grid_with_range(q0, range, half, grid.mode, &poles)
}

fn below_threshold_solution(frequencies: &[f64], q0: f64, opts: &RecoilOptions) -> Result<RecoilSolution> {
    let levels = frequencies
        .iter()
        .enumerate()
        .map(|(j, &w)| LevelProbability {
            level: j,
            frequency: w,
            probability: if j == 0 { 1.0 } else { 0.0 },
            forward: if j == 0 { 1.0 } else { 0.0 },
            backward: 0.0,
            wavevector: if j == 0 { Some(q0) } else { None },
        })
        .collect();
    let grid = MomentumGrid {
        q0,
        center: q0,
        half_count: opts.grid.half_count()?,
        spacing: 0.0,
        range: 0.0,
        mode: opts.grid.mode,
        adjustments: 0,
    };
    Ok(RecoilSolution {
        levels,
        coefficients: Vec::new(),
        diagnostics: Diagnostics {
            sum_deviation: 0.0,
            refinement_delta: None,
            eps_conv: 0.0,
            grid,
            pivot_ratio: 1.0,
            truncation_history: Vec::new(),
        },
        below_threshold: true,
    })
}

fn solve_ladder(ladder: &Ladder<'_>, q0: f64, reference: f64, opts: &RecoilOptions) -> Result<(RecoilSolution, f64)> {
    let grid = ladder_grid(ladder.kernel, q0, &ladder.frequencies, reference, &opts.grid, 1.0)?;
    let solved = ladder.solve(&grid)?;
    let levels = ladder.probabilities(&solved)?;
    let total: f64 = levels.iter().map(|l| l.probability).sum();
    let sum_deviation = (total - 1.0).abs();
    let refinement_delta = if opts.refine {
        let wide = ladder_grid(ladder.kernel, q0, &ladder.frequencies, reference, &opts.grid, 1.5)?;
        let other = ladder.probabilities(&ladder.solve(&wide)?)?;
        Some(
            levels
                .iter()
                .zip(&other)
                .map(|(a, b)| (a.probability - b.probability).abs())
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    let tail = levels.last().map_or(0.0, |l| l.probability);
    Ok((
        RecoilSolution {
            levels,
            coefficients: solved
                .coefficients
                .iter()
                .map(|m| m.iter().copied().collect())
                .collect(),
            diagnostics: Diagnostics {
                sum_deviation,
                refinement_delta,
                eps_conv: sum_deviation.max(refinement_delta.unwrap_or(0.0)),
                grid: solved.grid,
                pivot_ratio: solved.pivot_ratio,
                truncation_history: vec![ladder.n()],
            },
            below_threshold: false,
        },
        tail,
    ))
}

fn check_q0(q0: f64) -> Result<()> {
    if !(q0.is_finite() && q0 > 0.0) {
        return Err(Error::invalid("q0", format!("must be finite and positive, got {q0}")));
    }
    Ok(())
}

/// Two-level sample with level at `frequency`, electron incident at `q0`.
pub fn solve_two_level(kernel: &dyn TransferKernel, q0: f64, frequency: f64, opts: &RecoilOptions) -> Result<RecoilSolution> {
    check_q0(q0)?;
    if !(frequency.is_finite() && frequency > 0.0) {
        return Err(Error::invalid("frequency", format!("must be finite and positive, got {frequency}")));
    }
    let freqs = vec![0.0, frequency];
    let e0 = KinematicsModel::Nonrelativistic.energy(q0);
    check_threshold(q0, &freqs, frequency, opts.threshold_tolerance)?;
    if e0 < frequency {
        return below_threshold_solution(&freqs, q0, opts);
    }
    let ladder = Ladder {
        kernel,
        frequencies: freqs,
        scales: vec![0.0, 1.0],
    };
    Ok(solve_ladder(&ladder, q0, frequency, opts)?.0)
}

/// Boson mode of frequency `frequency`; the ladder is cut at `truncation`
/// if given, otherwise grown from `max(8, ⌈4 p1lin_hint + 10⌉)` until the
/// top level holds less than the tail tolerance.
pub fn solve_boson_ladder(
    kernel: &dyn TransferKernel,
    q0: f64,
    frequency: f64,
    truncation: Option<usize>,
    p1lin_hint: f64,
    opts: &RecoilOptions,
) -> Result<RecoilSolution> {
    check_q0(q0)?;
    if !(frequency.is_finite() && frequency > 0.0) {
        return Err(Error::invalid("frequency", format!("must be finite and positive, got {frequency}")));
    }
    let e0 = KinematicsModel::Nonrelativistic.energy(q0);
    let mut n = match truncation {
        Some(0) => return Err(Error::invalid("truncation", "must be at least 1")),
        Some(n) => n,
        None => 8usize.max((4.0 * p1lin_hint.max(0.0) + 10.0).ceil() as usize),
    };
    let mut history = Vec::new();
    loop {
        let freqs: Vec<f64> = (0..=n).map(|j| j as f64 * frequency).collect();
        check_threshold(q0, &freqs, frequency, opts.threshold_tolerance)?;
        if e0 < frequency {
            return below_threshold_solution(&freqs, q0, opts);
        }
        let ladder = Ladder {
            kernel,
            frequencies: freqs,
            scales: (0..=n).map(|j| (j as f64).sqrt()).collect(),
        };
        let (mut sol, tail) = solve_ladder(&ladder, q0, frequency, opts)?;
        history.push(n);
        sol.diagnostics.truncation_history = history.clone();
        if truncation.is_some() || tail < opts.tail_tolerance {
            return Ok(sol);
        }
        if n >= opts.max_truncation {
            return Err(Error::NotConverged {
                what: "boson ladder truncation",
                achieved: tail,
                required: opts.tail_tolerance,
            });
        }
        n = (n + 4 + n / 4).min(opts.max_truncation);
    }
}

/// Physical parameters of a recoil run in units `ω = 1`, `ħ = mₑ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoilPoint {
    pub symmetry: TransitionSymmetry,
    /// `ω R_e / v` at the incident velocity.
    pub rho: f64,
    pub p1lin: f64,
    /// `ε0 / ω`.
    pub energy_ratio: f64,
}

impl RecoilPoint {
    pub fn q0(&self) -> f64 {
        (2.0 * self.energy_ratio).sqrt()
    }

    /// Coupling normalized to `p1lin` at this energy, with the backward
    /// term counted only when the grid represents it.
    pub fn coupling(&self, mode: GridMode) -> Result<CouplingModel> {
        let q0 = self.q0();
        let impact = self.rho * q0;
        let backscatter = mode == GridMode::SymmetricFull;
        let amplitude = normalize_amplitude(self.symmetry, impact, q0, 1.0, self.p1lin, backscatter)?;
        let mut model = CouplingModel::new(self.symmetry, impact, amplitude)?;
        model.backscatter_in_normalization = backscatter;
        Ok(model)
    }
}

/// Two-level recoil solve at a dimensionless parameter point. Below
/// threshold the coupling is left unnormalized and `P_1 = 0`.
pub fn solve_point(point: &RecoilPoint, opts: &RecoilOptions) -> Result<RecoilSolution> {
    if !(point.energy_ratio.is_finite() && point.energy_ratio > 0.0) {
        return Err(Error::invalid("energy_ratio", format!("must be positive, got {}", point.energy_ratio)));
    }
    if !(point.p1lin.is_finite() && point.p1lin > 0.0) {
        return Err(Error::invalid("p1lin", format!("must be positive, got {}", point.p1lin)));
    }
    if !(point.rho.is_finite() && point.rho > 0.0) {
        return Err(Error::invalid("rho", format!("must be positive, got {}", point.rho)));
    }
    let q0 = point.q0();
    check_threshold(q0, &[0.0, 1.0], 1.0, opts.threshold_tolerance)?;
    if point.energy_ratio < 1.0 {
        return below_threshold_solution(&[0.0, 1.0], q0, opts);
    }
    solve_two_level(&point.coupling(opts.grid.mode)?, q0, 1.0, opts)
}

/// Boson recoil solve at `ε0/ω_b = energy_ratio`, adaptive truncation.
pub fn solve_boson_point(point: &RecoilPoint, opts: &RecoilOptions) -> Result<RecoilSolution> {
    let q0 = point.q0();
    if point.energy_ratio < 1.0 {
        let n = 8usize.max((4.0 * point.p1lin + 10.0).ceil() as usize);
        let freqs: Vec<f64> = (0..=n).map(|j| j as f64).collect();
        return below_threshold_solution(&freqs, q0, opts);
    }
    let model = point.coupling(opts.grid.mode)?;
    solve_boson_ladder(&model, q0, 1.0, None, point.p1lin, opts)
}

/// Point-like coupling normalized to `p1lin` at `q0`; the backward term is
/// included in the normalization iff the grid covers it.
pub fn pointlike_kernel(q0: f64, frequency: f64, p1lin: f64, mode: GridMode) -> Result<PointLikeCoupling> {
    PointLikeCoupling::normalized(q0, frequency, p1lin, mode == GridMode::SymmetricFull)
}
