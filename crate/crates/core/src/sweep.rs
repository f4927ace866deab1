//! Parameter sweeps over the solvers, maximum search over `(ρ, P1lin)`,
//! and the Fock-state decomposition of recoil boson excitation.
//!
//! Points are evaluated in parallel on a bounded pool (`EKICK_WORKERS`) and
//! collected by index, so output order never depends on scheduling.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::closed_forms::{pointlike_no_backscatter, pointlike_with_backscatter, poisson_occupations};
use crate::coupling::{CouplingModel, TransitionSymmetry};
use crate::error::{Error, Result};
use crate::nonrecoil::{boson_coherent, two_level_probability, IntegrateOptions};
use crate::recoil::{solve_boson_point, solve_point, GridOptions, RecoilOptions, RecoilPoint};

pub const WORKERS_ENV: &str = "EKICK_WORKERS";

/// Recoil points whose `ε_conv` exceeds this are flagged unconverged.
pub const EPS_CONV_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Pointlike,
    Nonrecoil,
    Recoil,
    BosonNonrecoil,
    BosonRecoil,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Pointlike => "pointlike",
            SolverKind::Nonrecoil => "nonrecoil",
            SolverKind::Recoil => "recoil",
            SolverKind::BosonNonrecoil => "boson-nonrecoil",
            SolverKind::BosonRecoil => "boson-recoil",
        }
    }

    fn uses_energy(self) -> bool {
        matches!(self, SolverKind::Recoil | SolverKind::BosonRecoil)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Rho,
    P1lin,
    EnergyRatio,
}

impl Parameter {
    pub fn name(self) -> &'static str {
        match self {
            Parameter::Rho => "rho",
            Parameter::P1lin => "p1lin",
            Parameter::EnergyRatio => "energy_ratio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub parameter: Parameter,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub scale: AxisScale,
}

impl Axis {
    pub fn linear(parameter: Parameter, min: f64, max: f64, count: usize) -> Self {
        Axis {
            parameter,
            min,
            max,
            count,
            scale: AxisScale::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::invalid("axes.count", format!("{} axis needs at least 2 points", self.parameter.name())));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::invalid(
                "axes.min",
                format!("{} axis needs finite min < max, got [{}, {}]", self.parameter.name(), self.min, self.max),
            ));
        }
        if self.scale == AxisScale::Log && !(self.min > 0.0) {
            return Err(Error::invalid("axes.scale", format!("log {} axis needs min > 0", self.parameter.name())));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                let t = i as f64 / last;
                let v = match self.scale {
                    AxisScale::Linear => self.min + t * (self.max - self.min),
                    AxisScale::Log => (self.min.ln() + t * (self.max.ln() - self.min.ln())).exp(),
                };
                // land exactly on the declared end points
                if i == self.count - 1 {
                    self.max
                } else if i == 0 {
                    self.min
                } else {
                    v
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub solver: SolverKind,
    #[serde(default)]
    pub axes: Vec<Axis>,
    pub symmetry: TransitionSymmetry,
    /// `ω10 R_e / v`, unless swept.
    pub rho: f64,
    pub p1lin: f64,
    /// `ε0 / ω10`, recoil solvers only, unless swept.
    pub energy_ratio: f64,
    #[serde(default)]
    pub grid: GridOptions,
    /// Repeat recoil solves on a wider grid to estimate `ε_conv`.
    #[serde(default = "default_true")]
    pub refine: bool,
    /// Trajectory samples per nonrecoil point (0 disables export).
    #[serde(default)]
    pub trajectory_samples: usize,
}

fn default_true() -> bool {
    true
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            solver: SolverKind::Nonrecoil,
            axes: Vec::new(),
            symmetry: TransitionSymmetry::Px,
            rho: 0.2,
            p1lin: 1.0,
            energy_ratio: 2.0,
            grid: GridOptions::default(),
            refine: true,
            trajectory_samples: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.axes.iter().enumerate() {
            a.validate()?;
            if self.axes[..i].iter().any(|b| b.parameter == a.parameter) {
                return Err(Error::invalid("axes", format!("{} swept twice", a.parameter.name())));
            }
            if a.parameter == Parameter::EnergyRatio && !self.solver.uses_energy() {
                return Err(Error::invalid("axes", format!("{} does not take an energy ratio", self.solver.name())));
            }
        }
        let swept = |p| self.axes.iter().any(|a| a.parameter == p);
        if !swept(Parameter::Rho) && !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::invalid("rho", format!("must be finite and positive, got {}", self.rho)));
        }
        if !swept(Parameter::P1lin) && !(self.p1lin.is_finite() && self.p1lin >= 0.0) {
            return Err(Error::invalid("p1lin", format!("must be finite and nonnegative, got {}", self.p1lin)));
        }
        if self.solver.uses_energy() && !swept(Parameter::EnergyRatio) && !(self.energy_ratio.is_finite() && self.energy_ratio > 0.0) {
            return Err(Error::invalid(
                "energy_ratio",
                format!("must be finite and positive, got {}", self.energy_ratio),
            ));
        }
        if self.solver.uses_energy() {
            RecoilOptions {
                grid: self.grid,
                ..Default::default()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Number of points in the row-major grid.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameters of point `index`, last axis fastest.
    pub fn point(&self, index: usize) -> PointInputs {
        let mut inputs = PointInputs {
            symmetry: self.symmetry,
            rho: self.rho,
            p1lin: self.p1lin,
            energy_ratio: self.solver.uses_energy().then_some(self.energy_ratio),
        };
        let mut rest = index;
        for axis in self.axes.iter().rev() {
            let v = axis.values()[rest % axis.count];
            rest /= axis.count;
            match axis.parameter {
                Parameter::Rho => inputs.rho = v,
                Parameter::P1lin => inputs.p1lin = v,
                Parameter::EnergyRatio => inputs.energy_ratio = Some(v),
            }
        }
        inputs
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn recoil_options(&self) -> RecoilOptions {
        RecoilOptions {
            grid: self.grid,
            refine: self.refine,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointInputs {
    pub symmetry: TransitionSymmetry,
    pub rho: f64,
    pub p1lin: f64,
    pub energy_ratio: Option<f64>,
}

/// Outputs of one sweep point; which fields are set depends on the solver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointOutputs {
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub p1_forward: Option<f64>,
    pub p1_backward: Option<f64>,
    pub p1_with_backscatter: Option<f64>,
    pub p1_no_backscatter: Option<f64>,
    pub p1_boson_reference: Option<f64>,
    pub mean: Option<f64>,
    pub eps_conv: Option<f64>,
    pub sum_deviation: Option<f64>,
    pub norm_drift: Option<f64>,
    pub tail_estimate: Option<f64>,
    /// `P_n` for every level of a boson ladder.
    pub occupations: Vec<f64>,
    /// `(z ω10/v, P_1(z))` when trajectory export is on.
    pub trajectory: Vec<(f64, f64)>,
}

impl PointOutputs {
    /// Named scalar columns, in a fixed order, for the given solver.
    pub fn columns(solver: SolverKind) -> &'static [&'static str] {
        match solver {
            SolverKind::Pointlike => &["p1_with_backscatter", "p1_no_backscatter", "p1_boson_reference"],
            SolverKind::Nonrecoil => &["p0", "p1", "norm_drift", "tail_estimate"],
            SolverKind::Recoil => &["p0", "p1", "p1_forward", "p1_backward", "eps_conv", "sum_deviation"],
            SolverKind::BosonNonrecoil => &["mean"],
            SolverKind::BosonRecoil => &["mean", "eps_conv", "sum_deviation"],
        }
    }

    pub fn get(&self, column: &str) -> Option<f64> {
        match column {
            "p0" => self.p0,
            "p1" => self.p1,
            "p1_forward" => self.p1_forward,
            "p1_backward" => self.p1_backward,
            "p1_with_backscatter" => self.p1_with_backscatter,
            "p1_no_backscatter" => self.p1_no_backscatter,
            "p1_boson_reference" => self.p1_boson_reference,
            "mean" => self.mean,
            "eps_conv" => self.eps_conv,
            "sum_deviation" => self.sum_deviation,
            "norm_drift" => self.norm_drift,
            "tail_estimate" => self.tail_estimate,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub index: usize,
    pub inputs: PointInputs,
    pub outputs: PointOutputs,
    /// False on failure or when a diagnostic exceeds its limit.
    pub converged: bool,
    pub error: Option<String>,
    /// The failure is a threshold exclusion rather than a solver problem.
    pub excluded: bool,
}

impl SweepRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub spec_hash: String,
    pub version: String,
    pub points: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub records: Vec<SweepRecord>,
    pub metadata: SweepMetadata,
    /// Wall time; kept out of written files so reruns are byte-identical.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

/// Worker count from `EKICK_WORKERS`, else the machine parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::invalid("EKICK_WORKERS", format!("must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Ordered parallel map on a pool of `workers` threads.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

fn evaluate(spec: &SweepSpec, inputs: &PointInputs) -> Result<PointOutputs> {
    let mut out = PointOutputs::default();
    match spec.solver {
        SolverKind::Pointlike => {
            out.p1_with_backscatter = Some(pointlike_with_backscatter(inputs.p1lin).p1);
            out.p1_no_backscatter = Some(pointlike_no_backscatter(inputs.p1lin).p1);
            out.p1_boson_reference = Some(inputs.p1lin);
        }
        SolverKind::Nonrecoil => {
            let opts = IntegrateOptions {
                samples: spec.trajectory_samples,
                ..Default::default()
            };
            let r = two_level_probability(inputs.symmetry, inputs.rho, inputs.p1lin, &opts)?;
            out.p0 = Some(r.probabilities[0]);
            out.p1 = Some(r.probabilities[1]);
            out.norm_drift = Some(r.norm_drift);
            out.tail_estimate = r.tail_estimate;
            out.trajectory = r.z.iter().zip(&r.amplitudes).map(|(z, f)| (*z, f[1].norm_sqr())).collect();
        }
        SolverKind::BosonNonrecoil => {
            let model = CouplingModel::normalized_nonrecoil(inputs.symmetry, inputs.rho, 1.0, 1.0, inputs.p1lin)?;
            let c = boson_coherent(&model, 1.0, 1.0, &[])?;
            out.mean = Some(c.mean);
            out.occupations = c.occupations;
        }
        SolverKind::Recoil | SolverKind::BosonRecoil => {
            let point = RecoilPoint {
                symmetry: inputs.symmetry,
                rho: inputs.rho,
                p1lin: inputs.p1lin,
                energy_ratio: inputs.energy_ratio.unwrap_or(spec.energy_ratio),
            };
            let opts = spec.recoil_options();
            let s = if spec.solver == SolverKind::Recoil {
                solve_point(&point, &opts)?
            } else {
                solve_boson_point(&point, &opts)?
            };
            out.eps_conv = Some(s.diagnostics.eps_conv);
            out.sum_deviation = Some(s.diagnostics.sum_deviation);
            if spec.solver == SolverKind::Recoil {
                out.p0 = Some(s.probability(0));
                out.p1 = Some(s.probability(1));
                out.p1_forward = Some(s.levels[1].forward);
                out.p1_backward = Some(s.levels[1].backward);
            } else {
                out.mean = Some(s.mean_occupation());
                out.occupations = s.probabilities();
            }
        }
    }
    Ok(out)
}

/// Evaluates the solver at every grid point. Failures are recorded per
/// point; the sweep itself only fails on an invalid spec.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    run_sweep_with_workers(spec, worker_count()?)
}

pub fn run_sweep_with_workers(spec: &SweepSpec, workers: usize) -> Result<SweepResult> {
    spec.validate()?;
    let start = Instant::now();
    let indices: Vec<usize> = (0..spec.len()).collect();
    let records = parallel_map(&indices, workers, |&index| {
        let inputs = spec.point(index);
        match evaluate(spec, &inputs) {
            Ok(outputs) => SweepRecord {
                index,
                inputs,
                converged: outputs.eps_conv.is_none_or(|e| e <= EPS_CONV_LIMIT),
                outputs,
                error: None,
                excluded: false,
            },
            Err(e) => SweepRecord {
                index,
                inputs,
                outputs: PointOutputs::default(),
                converged: false,
                error: Some(e.to_string()),
                excluded: e.is_threshold_exclusion(),
            },
        }
    });
    let failures = records.iter().filter(|r| r.failed()).count();
    Ok(SweepResult {
        spec: spec.clone(),
        metadata: SweepMetadata {
            spec_hash: spec.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            points: records.len(),
            failures,
        },
        records,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Box and resolution for the `(ρ, P1lin)` maximum search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub rho_min: f64,
    pub rho_max: f64,
    pub p1lin_min: f64,
    pub p1lin_max: f64,
    /// Coarse scan points per axis.
    pub grid: usize,
    /// Pattern search stops once both steps are below this.
    pub tolerance: f64,
    /// Shift of the coarse grid in units of a cell (0 or ½ in practice).
    pub offset: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        SearchBox {
            rho_min: 0.02,
            rho_max: 3.0,
            p1lin_min: 0.2,
            p1lin_max: 8.0,
            grid: 40,
            tolerance: 1e-4,
            offset: 0.0,
        }
    }
}

impl SearchBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_min > 0.0 && self.rho_min < self.rho_max && self.rho_max.is_finite()) {
            return Err(Error::invalid("rho_min", "search box needs 0 < rho_min < rho_max"));
        }
        if !(self.p1lin_min > 0.0 && self.p1lin_min < self.p1lin_max && self.p1lin_max.is_finite()) {
            return Err(Error::invalid("p1lin_min", "search box needs 0 < p1lin_min < p1lin_max"));
        }
        if self.grid < 2 {
            return Err(Error::invalid("grid", "coarse scan needs at least 2 points per axis"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.offset) {
            return Err(Error::invalid("offset", "must lie in [0, 1)"));
        }
        Ok(())
    }

    fn axis(&self, lo: f64, hi: f64) -> Vec<f64> {
        let cell = (hi - lo) / (self.grid - 1) as f64;
        (0..self.grid)
            .map(|i| (lo + (i as f64 + self.offset) * cell).min(hi))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rho: f64,
    pub p1lin: f64,
    pub p1: f64,
    pub step_rho: f64,
    pub step_p1lin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximumSearchResult {
    pub symmetry: TransitionSymmetry,
    pub rho: f64,
    pub p1lin: f64,
    pub p1: f64,
    /// Best point of the coarse scan.
    pub scan_best: (f64, f64, f64),
    pub trace: Vec<TraceStep>,
    pub evaluations: usize,
    /// False when the refined maximum stays below 0.99.
    pub attained: bool,
}

/// Threshold below which a refined maximum is reported as not attained.
pub const ATTAINMENT_LEVEL: f64 = 0.99;

/// Coarse scan of the nonrecoil `P_1(ρ, P1lin)` followed by a compass
/// search from the best scan point.
pub fn find_maximum(symmetry: TransitionSymmetry, search: &SearchBox) -> Result<MaximumSearchResult> {
    find_maximum_with_workers(symmetry, search, worker_count()?)
}

pub fn find_maximum_with_workers(symmetry: TransitionSymmetry, search: &SearchBox, workers: usize) -> Result<MaximumSearchResult> {
    search.validate()?;
    // the tail check doubles the cost and is far below the scan resolution
    let opts = IntegrateOptions {
        check_tail: false,
        ..Default::default()
    };
    let objective = |rho: f64, p1lin: f64| -> Result<f64> {
        Ok(two_level_probability(symmetry, rho, p1lin, &opts)?.probabilities[1])
    };
    let rhos = search.axis(search.rho_min, search.rho_max);
    let p1lins = search.axis(search.p1lin_min, search.p1lin_max);
    let cells: Vec<(f64, f64)> = rhos.iter().flat_map(|&r| p1lins.iter().map(move |&p| (r, p))).collect();
    let values = parallel_map(&cells, workers, |&(r, p)| objective(r, p));
    let mut best = (f64::NAN, f64::NAN, f64::NEG_INFINITY);
    for (&(r, p), v) in cells.iter().zip(values) {
        let v = v?;
        if v > best.2 {
            best = (r, p, v);
        }
    }
    let scan_best = best;
    let mut evaluations = cells.len();
    let mut step = (
        (search.rho_max - search.rho_min) / (search.grid - 1) as f64,
        (search.p1lin_max - search.p1lin_min) / (search.grid - 1) as f64,
    );
    let mut trace = vec![TraceStep {
        rho: best.0,
        p1lin: best.1,
        p1: best.2,
        step_rho: step.0,
        step_p1lin: step.1,
    }];
    while step.0 >= search.tolerance || step.1 >= search.tolerance {
        let candidates = [
            (best.0 + step.0, best.1),
            (best.0 - step.0, best.1),
            (best.0, best.1 + step.1),
            (best.0, best.1 - step.1),
        ];
        let mut moved = false;
        for (r, p) in candidates {
            let r = r.clamp(search.rho_min, search.rho_max);
            let p = p.clamp(search.p1lin_min, search.p1lin_max);
            if (r, p) == (best.0, best.1) {
                continue;
            }
            let v = objective(r, p)?;
            evaluations += 1;
            if v > best.2 {
                best = (r, p, v);
                moved = true;
                break;
            }
        }
        if !moved {
            step = (0.5 * step.0, 0.5 * step.1);
        }
        trace.push(TraceStep {
            rho: best.0,
            p1lin: best.1,
            p1: best.2,
            step_rho: step.0,
            step_p1lin: step.1,
        });
    }
    Ok(MaximumSearchResult {
        symmetry,
        rho: best.0,
        p1lin: best.1,
        p1: best.2,
        scan_best,
        trace,
        evaluations,
        attained: best.2 >= ATTAINMENT_LEVEL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FockRecord {
    pub energy_ratio: f64,
    pub occupations: Vec<f64>,
    pub mean: Option<f64>,
    pub eps_conv: Option<f64>,
    /// Poisson(P1lin), the nonrecoil limit.
    pub nonrecoil_occupations: Vec<f64>,
    pub nonrecoil_mean: f64,
    pub converged: bool,
    pub error: Option<String>,
}

/// Recoil boson ladder across incident energies at fixed `P1lin` and `ρ`.
pub fn fock_decomposition_sweep(
    energies: &Axis,
    symmetry: TransitionSymmetry,
    rho: f64,
    p1lin: f64,
    opts: &RecoilOptions,
) -> Result<Vec<FockRecord>> {
    energies.validate()?;
    if energies.parameter != Parameter::EnergyRatio {
        return Err(Error::invalid("axes", "Fock decomposition sweeps the energy ratio"));
    }
    opts.validate()?;
    let values = energies.values();
    let workers = worker_count()?;
    Ok(parallel_map(&values, workers, |&energy_ratio| {
        let point = RecoilPoint {
            symmetry,
            rho,
            p1lin,
            energy_ratio,
        };
        let solved = solve_boson_point(&point, opts);
        let (occupations, mean, eps, error) = match solved {
            Ok(s) => (s.probabilities(), Some(s.mean_occupation()), Some(s.diagnostics.eps_conv), None),
            Err(e) => (Vec::new(), None, None, Some(e.to_string())),
        };
        let n = occupations.len().max(1) - 1;
        FockRecord {
            energy_ratio,
            nonrecoil_occupations: poisson_occupations(p1lin, n),
            nonrecoil_mean: p1lin,
            converged: error.is_none(),
            occupations,
            mean,
            eps_conv: eps,
            error,
        }
    }))
}
