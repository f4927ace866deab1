//! Command-line front end: JSON config files merged with flags, dispatch to
//! the solvers, and table output.
//!
//! Exit codes: 0 success, 2 invalid configuration or unwritable output,
//! 3 solver non-convergence (partial results are still written).

mod output;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::closed_forms::{pointlike_no_backscatter, pointlike_with_backscatter, poisson_cutoff};
use crate::coupling::{CouplingModel, TransitionSymmetry};
use crate::error::Error;
use crate::nonrecoil::{boson_coherent, eels_spectrum, integrate, InitialState, IntegrateOptions, LevelSystem};
use crate::recoil::{solve_boson_ladder, solve_boson_point, solve_point, GridMode, GridOptions, RecoilOptions, RecoilPoint};
use crate::sweep::{
    find_maximum, run_sweep, Axis, AxisScale, Parameter, PointOutputs, SearchBox, SolverKind, SweepResult, SweepSpec,
    EPS_CONV_LIMIT,
};

pub use output::{emit, format_float, sidecar_path, write_output, Cell, Format, OutputError, Table};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Output(OutputError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Solver(m) => write!(f, "solver failed: {m}"),
            CliError::Output(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_convergence_failure() {
            CliError::Solver(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<OutputError> for CliError {
    fn from(e: OutputError) -> Self {
        CliError::Output(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_error(field: &str, reason: impl fmt::Display) -> CliError {
    CliError::Config(format!("`{field}`: {reason}"))
}

#[derive(Debug, Parser)]
#[command(name = "ekick", version, about = "Free-electron excitation of discrete-level samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Point-like closed forms over a range of linear probabilities
    Pointlike(PointlikeArgs),
    /// Nonrecoil two-level solve, optionally exporting the trajectory
    Nonrecoil(NonrecoilArgs),
    /// Recoil two-level solve with convergence diagnostics
    Recoil(RecoilArgs),
    /// Boson mode occupations (analytic, ODE ladder or recoil ladder)
    Boson(BosonArgs),
    /// Parameter sweep described by a config file
    Sweep(SweepArgs),
    /// Search the (rho, p1lin) plane for the largest excitation probability
    FindMax(FindMaxArgs),
    /// Energy-loss line spectrum for a sample prepared in a given state
    Eels(EelsArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file; flags take precedence over its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (stdout if omitted; a directory for per-symmetry sweeps)
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Print the merged configuration as JSON and exit
    #[arg(long)]
    pub dump_config: bool,
    /// Accepted for compatibility; runs are always deterministic
    #[arg(long)]
    pub seedless: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PhysicsArgs {
    #[arg(long)]
    pub symmetry: Option<TransitionSymmetry>,
    /// Normalized impact parameter omega10 R_e / v
    #[arg(long)]
    pub rho: Option<f64>,
    /// First-order excitation probability
    #[arg(long)]
    pub p1lin: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    /// Incident energy over the excitation energy
    #[arg(long)]
    pub energy_ratio: Option<f64>,
    /// Momentum grid points (odd)
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub range_multiplier: Option<f64>,
    #[arg(long)]
    pub width_multiplier: Option<f64>,
    #[arg(long, value_enum)]
    pub grid_mode: Option<ModeArg>,
    /// Skip the wider-grid refinement solve
    #[arg(long)]
    pub no_refine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    CenteredForward,
    SymmetricFull,
}

impl From<ModeArg> for GridMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::CenteredForward => GridMode::CenteredForward,
            ModeArg::SymmetricFull => GridMode::SymmetricFull,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PointlikeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub p1lin_min: Option<f64>,
    #[arg(long)]
    pub p1lin_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct NonrecoilArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub physics: PhysicsArgs,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Half-range of the trajectory in units of v/omega10
    #[arg(long)]
    pub half_range: Option<f64>,
    /// Trajectory CSV destination
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RecoilArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub physics: PhysicsArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BosonArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub physics: PhysicsArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum)]
    pub method: Option<BosonMethod>,
    /// Highest Fock state kept (adaptive if omitted)
    #[arg(long)]
    pub truncation: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub physics: PhysicsArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    /// Axis as name:min:max:count[:log], repeatable; replaces the config axes
    #[arg(long = "axis")]
    pub axes: Vec<String>,
    /// Run once per listed symmetry, writing <prefix>_<symmetry> files
    #[arg(long = "each-symmetry")]
    pub symmetries: Vec<TransitionSymmetry>,
    #[arg(long)]
    pub file_prefix: Option<String>,
    #[arg(long)]
    pub trajectory_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Pointlike,
    Nonrecoil,
    Recoil,
    BosonNonrecoil,
    BosonRecoil,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Pointlike => SolverKind::Pointlike,
            SolverArg::Nonrecoil => SolverKind::Nonrecoil,
            SolverArg::Recoil => SolverKind::Recoil,
            SolverArg::BosonNonrecoil => SolverKind::BosonNonrecoil,
            SolverArg::BosonRecoil => SolverKind::BosonRecoil,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FindMaxArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Symmetry to search, repeatable (all five if omitted)
    #[arg(long = "symmetry")]
    pub symmetries: Vec<TransitionSymmetry>,
    #[arg(long)]
    pub rho_min: Option<f64>,
    #[arg(long)]
    pub rho_max: Option<f64>,
    #[arg(long)]
    pub p1lin_min: Option<f64>,
    #[arg(long)]
    pub p1lin_max: Option<f64>,
    /// Coarse scan points per axis
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Coarse grid shift in cells
    #[arg(long)]
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EelsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub physics: PhysicsArgs,
    #[arg(long, value_enum)]
    pub system: Option<EelsSystem>,
    /// Highest Fock state of a boson sample
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Initial amplitude RE,IM per level, repeatable
    #[arg(long = "amplitude", allow_hyphen_values = true)]
    pub amplitudes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BosonMethod {
    #[default]
    Analytic,
    Ode,
    Recoil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EelsSystem {
    #[default]
    TwoLevel,
    Boson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointlikeConfig {
    pub p1lin_min: f64,
    pub p1lin_max: f64,
    pub points: usize,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl Default for PointlikeConfig {
    fn default() -> Self {
        PointlikeConfig {
            p1lin_min: 0.0,
            p1lin_max: 10.0,
            points: 500,
            format: Format::Csv,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonrecoilConfig {
    pub symmetry: TransitionSymmetry,
    pub rho: f64,
    pub p1lin: f64,
    pub tolerance: f64,
    pub half_range: Option<f64>,
    pub trajectory: Option<PathBuf>,
    pub samples: usize,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl Default for NonrecoilConfig {
    fn default() -> Self {
        NonrecoilConfig {
            symmetry: TransitionSymmetry::Px,
            rho: 0.2,
            p1lin: 1.0,
            tolerance: 1e-10,
            half_range: None,
            trajectory: None,
            samples: 2001,
            format: Format::Csv,
            output: None,
        }
    }
}

/// Flat recoil grid keys shared by several configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridKeys {
    pub energy_ratio: f64,
    pub points: usize,
    pub range_multiplier: f64,
    pub width_multiplier: f64,
    pub grid_mode: GridMode,
    pub refine: bool,
}

impl Default for GridKeys {
    fn default() -> Self {
        let g = GridOptions::default();
        GridKeys {
            energy_ratio: 2.0,
            points: g.points,
            range_multiplier: g.range_multiplier,
            width_multiplier: g.width_multiplier,
            grid_mode: g.mode,
            refine: true,
        }
    }
}

impl GridKeys {
    fn apply(&mut self, a: &GridArgs) {
        if let Some(v) = a.energy_ratio {
            self.energy_ratio = v;
        }
        if let Some(v) = a.points {
            self.points = v;
        }
        if let Some(v) = a.range_multiplier {
            self.range_multiplier = v;
        }
        if let Some(v) = a.width_multiplier {
            self.width_multiplier = v;
        }
        if let Some(v) = a.grid_mode {
            self.grid_mode = v.into();
        }
        if a.no_refine {
            self.refine = false;
        }
    }

    fn grid(&self) -> GridOptions {
        GridOptions {
            range_multiplier: self.range_multiplier,
            width_multiplier: self.width_multiplier,
            points: self.points,
            mode: self.grid_mode,
        }
    }

    fn options(&self) -> CliResult<RecoilOptions> {
        let opts = RecoilOptions {
            grid: self.grid(),
            refine: self.refine,
            ..Default::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoilConfig {
    pub symmetry: TransitionSymmetry,
    pub rho: f64,
    pub p1lin: f64,
    pub energy_ratio: f64,
    pub points: usize,
    pub range_multiplier: f64,
    pub width_multiplier: f64,
    pub grid_mode: GridMode,
    pub refine: bool,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl Default for RecoilConfig {
    fn default() -> Self {
        let g = GridKeys::default();
        RecoilConfig {
            symmetry: TransitionSymmetry::Px,
            rho: 0.2,
            p1lin: 1.0,
            energy_ratio: g.energy_ratio,
            points: g.points,
            range_multiplier: g.range_multiplier,
            width_multiplier: g.width_multiplier,
            grid_mode: g.grid_mode,
            refine: g.refine,
            format: Format::Json,
            output: None,
        }
    }
}

impl RecoilConfig {
    fn keys(&self) -> GridKeys {
        GridKeys {
            energy_ratio: self.energy_ratio,
            points: self.points,
            range_multiplier: self.range_multiplier,
            width_multiplier: self.width_multiplier,
            grid_mode: self.grid_mode,
            refine: self.refine,
        }
    }

    fn set_keys(&mut self, k: GridKeys) {
        self.energy_ratio = k.energy_ratio;
        self.points = k.points;
        self.range_multiplier = k.range_multiplier;
        self.width_multiplier = k.width_multiplier;
        self.grid_mode = k.grid_mode;
        self.refine = k.refine;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BosonConfig {
    pub method: BosonMethod,
    pub symmetry: TransitionSymmetry,
    pub rho: f64,
    pub p1lin: f64,
    pub truncation: Option<usize>,
    pub energy_ratio: f64,
    pub points: usize,
    pub range_multiplier: f64,
    pub width_multiplier: f64,
    pub grid_mode: GridMode,
    pub refine: bool,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl Default for BosonConfig {
    fn default() -> Self {
        let g = GridKeys::default();
        BosonConfig {
            method: BosonMethod::Analytic,
            symmetry: TransitionSymmetry::Px,
            rho: 0.2,
            p1lin: 1.0,
            truncation: None,
            energy_ratio: 50.0,
            points: g.points,
            range_multiplier: g.range_multiplier,
            width_multiplier: g.width_multiplier,
            grid_mode: g.grid_mode,
            refine: g.refine,
            format: Format::Csv,
            output: None,
        }
    }
}

impl BosonConfig {
    fn keys(&self) -> GridKeys {
        GridKeys {
            energy_ratio: self.energy_ratio,
            points: self.points,
            range_multiplier: self.range_multiplier,
            width_multiplier: self.width_multiplier,
            grid_mode: self.grid_mode,
            refine: self.refine,
        }
    }

    fn set_keys(&mut self, k: GridKeys) {
        self.energy_ratio = k.energy_ratio;
        self.points = k.points;
        self.range_multiplier = k.range_multiplier;
        self.width_multiplier = k.width_multiplier;
        self.grid_mode = k.grid_mode;
        self.refine = k.refine;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub solver: SolverKind,
    pub axes: Vec<Axis>,
    pub symmetry: TransitionSymmetry,
    /// When nonempty, one output file per symmetry in the `output` directory.
    pub symmetries: Vec<TransitionSymmetry>,
    pub file_prefix: String,
    pub rho: f64,
    pub p1lin: f64,
    pub energy_ratio: f64,
    pub points: usize,
    pub range_multiplier: f64,
    pub width_multiplier: f64,
    pub grid_mode: GridMode,
    pub refine: bool,
    pub trajectory_samples: usize,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let s = SweepSpec::default();
        let g = GridKeys::default();
        SweepConfig {
            solver: s.solver,
            axes: s.axes,
            symmetry: s.symmetry,
            symmetries: Vec::new(),
            file_prefix: "fig2".to_string(),
            rho: s.rho,
            p1lin: s.p1lin,
            energy_ratio: s.energy_ratio,
            points: g.points,
            range_multiplier: g.range_multiplier,
            width_multiplier: g.width_multiplier,
            grid_mode: g.grid_mode,
            refine: s.refine,
            trajectory_samples: s.trajectory_samples,
            format: Format::Csv,
            output: None,
        }
    }
}

impl SweepConfig {
    fn keys(&self) -> GridKeys {
        GridKeys {
            energy_ratio: self.energy_ratio,
            points: self.points,
            range_multiplier: self.range_multiplier,
            width_multiplier: self.width_multiplier,
            grid_mode: self.grid_mode,
            refine: self.refine,
        }
    }

    fn set_keys(&mut self, k: GridKeys) {
        self.energy_ratio = k.energy_ratio;
        self.points = k.points;
        self.range_multiplier = k.range_multiplier;
        self.width_multiplier = k.width_multiplier;
        self.grid_mode = k.grid_mode;
        self.refine = k.refine;
    }

    pub fn spec(&self, symmetry: TransitionSymmetry) -> SweepSpec {
        SweepSpec {
            solver: self.solver,
            axes: self.axes.clone(),
            symmetry,
            rho: self.rho,
            p1lin: self.p1lin,
            energy_ratio: self.energy_ratio,
            grid: self.keys().grid(),
            refine: self.refine,
            trajectory_samples: self.trajectory_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FindMaxConfig {
    pub symmetries: Vec<TransitionSymmetry>,
    pub rho_min: f64,
    pub rho_max: f64,
    pub p1lin_min: f64,
    pub p1lin_max: f64,
    pub grid: usize,
    pub tolerance: f64,
    pub offset: f64,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl Default for FindMaxConfig {
    fn default() -> Self {
        let b = SearchBox::default();
        FindMaxConfig {
            symmetries: TransitionSymmetry::ALL.to_vec(),
            rho_min: b.rho_min,
            rho_max: b.rho_max,
            p1lin_min: b.p1lin_min,
            p1lin_max: b.p1lin_max,
            grid: b.grid,
            tolerance: b.tolerance,
            offset: b.offset,
            format: Format::Csv,
            output: None,
        }
    }
}

impl FindMaxConfig {
    pub fn search_box(&self) -> SearchBox {
        SearchBox {
            rho_min: self.rho_min,
            rho_max: self.rho_max,
            p1lin_min: self.p1lin_min,
            p1lin_max: self.p1lin_max,
            grid: self.grid,
            tolerance: self.tolerance,
            offset: self.offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EelsConfig {
    pub system: EelsSystem,
    pub truncation: usize,
    pub symmetry: TransitionSymmetry,
    pub rho: f64,
    pub p1lin: f64,
    /// `[re, im]` per level; empty means the ground state.
    pub initial_state: Vec<[f64; 2]>,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl Default for EelsConfig {
    fn default() -> Self {
        EelsConfig {
            system: EelsSystem::TwoLevel,
            truncation: 12,
            symmetry: TransitionSymmetry::Px,
            rho: 0.2,
            p1lin: 1.0,
            initial_state: Vec::new(),
            format: Format::Csv,
            output: None,
        }
    }
}

/// Any subcommand's fully merged configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Pointlike(PointlikeConfig),
    Nonrecoil(NonrecoilConfig),
    Recoil(RecoilConfig),
    Boson(BosonConfig),
    Sweep(SweepConfig),
    FindMax(FindMaxConfig),
    Eels(EelsConfig),
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Pointlike(_) => "pointlike",
            RunConfig::Nonrecoil(_) => "nonrecoil",
            RunConfig::Recoil(_) => "recoil",
            RunConfig::Boson(_) => "boson",
            RunConfig::Sweep(_) => "sweep",
            RunConfig::FindMax(_) => "find-max",
            RunConfig::Eels(_) => "eels",
        }
    }

    /// The flat config-file form of this command's settings.
    pub fn to_file_json(&self) -> String {
        let v = match self {
            RunConfig::Pointlike(c) => serde_json::to_value(c),
            RunConfig::Nonrecoil(c) => serde_json::to_value(c),
            RunConfig::Recoil(c) => serde_json::to_value(c),
            RunConfig::Boson(c) => serde_json::to_value(c),
            RunConfig::Sweep(c) => serde_json::to_value(c),
            RunConfig::FindMax(c) => serde_json::to_value(c),
            RunConfig::Eels(c) => serde_json::to_value(c),
        }
        .expect("config serializes");
        let mut s = serde_json::to_string_pretty(&v).expect("json");
        s.push('\n');
        s
    }

    /// Parses a config file written for the same command as `self`.
    pub fn parse_like(&self, text: &str) -> CliResult<RunConfig> {
        Ok(match self {
            RunConfig::Pointlike(_) => RunConfig::Pointlike(parse_config(text)?),
            RunConfig::Nonrecoil(_) => RunConfig::Nonrecoil(parse_config(text)?),
            RunConfig::Recoil(_) => RunConfig::Recoil(parse_config(text)?),
            RunConfig::Boson(_) => RunConfig::Boson(parse_config(text)?),
            RunConfig::Sweep(_) => RunConfig::Sweep(parse_config(text)?),
            RunConfig::FindMax(_) => RunConfig::FindMax(parse_config(text)?),
            RunConfig::Eels(_) => RunConfig::Eels(parse_config(text)?),
        })
    }
}

fn parse_config<T: DeserializeOwned>(text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_error("config", format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)
        }
    }
}

macro_rules! override_fields {
    ($cfg:expr, $args:expr; $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

fn apply_common<F: FnOnce(Format, Option<PathBuf>)>(c: &CommonArgs, set: F, format: Format, output: Option<PathBuf>) {
    set(c.format.unwrap_or(format), c.output.clone().or(output));
}

fn apply_physics(a: &PhysicsArgs, symmetry: &mut TransitionSymmetry, rho: &mut f64, p1lin: &mut f64) {
    if let Some(s) = a.symmetry {
        *symmetry = s;
    }
    if let Some(v) = a.rho {
        *rho = v;
    }
    if let Some(v) = a.p1lin {
        *p1lin = v;
    }
}

fn parse_axis(text: &str) -> CliResult<Axis> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || config_error("axis", format!("expected name:min:max:count[:log], got {text:?}"));
    if !(4..=5).contains(&parts.len()) {
        return Err(bad());
    }
    let parameter = match parts[0] {
        "rho" => Parameter::Rho,
        "p1lin" => Parameter::P1lin,
        "energy_ratio" | "energy-ratio" => Parameter::EnergyRatio,
        other => return Err(config_error("axis", format!("unknown parameter {other:?}"))),
    };
    let scale = match parts.get(4) {
        None | Some(&"linear") => AxisScale::Linear,
        Some(&"log") => AxisScale::Log,
        Some(_) => return Err(bad()),
    };
    Ok(Axis {
        parameter,
        min: parts[1].parse().map_err(|_| bad())?,
        max: parts[2].parse().map_err(|_| bad())?,
        count: parts[3].parse().map_err(|_| bad())?,
        scale,
    })
}

fn parse_amplitude(text: &str) -> CliResult<[f64; 2]> {
    let bad = || config_error("amplitude", format!("expected RE,IM, got {text:?}"));
    let (re, im) = text.split_once(',').ok_or_else(bad)?;
    Ok([re.trim().parse().map_err(|_| bad())?, im.trim().parse().map_err(|_| bad())?])
}

/// Merges the config file named by `--config` with the flags.
pub fn resolve(command: &Command) -> CliResult<RunConfig> {
    Ok(match command {
        Command::Pointlike(a) => {
            let mut c: PointlikeConfig = load(a.common.config.as_deref())?;
            override_fields!(c, a; p1lin_min, p1lin_max, points);
            let (f, o) = (c.format, c.output.clone());
            apply_common(&a.common, |f, o| (c.format, c.output) = (f, o), f, o);
            RunConfig::Pointlike(c)
        }
        Command::Nonrecoil(a) => {
            let mut c: NonrecoilConfig = load(a.common.config.as_deref())?;
            apply_physics(&a.physics, &mut c.symmetry, &mut c.rho, &mut c.p1lin);
            override_fields!(c, a; tolerance, samples);
            if a.half_range.is_some() {
                c.half_range = a.half_range;
            }
            if a.trajectory.is_some() {
                c.trajectory = a.trajectory.clone();
            }
            let (f, o) = (c.format, c.output.clone());
            apply_common(&a.common, |f, o| (c.format, c.output) = (f, o), f, o);
            RunConfig::Nonrecoil(c)
        }
        Command::Recoil(a) => {
            let mut c: RecoilConfig = load(a.common.config.as_deref())?;
            apply_physics(&a.physics, &mut c.symmetry, &mut c.rho, &mut c.p1lin);
            let mut k = c.keys();
            k.apply(&a.grid);
            c.set_keys(k);
            let (f, o) = (c.format, c.output.clone());
            apply_common(&a.common, |f, o| (c.format, c.output) = (f, o), f, o);
            RunConfig::Recoil(c)
        }
        Command::Boson(a) => {
            let mut c: BosonConfig = load(a.common.config.as_deref())?;
            apply_physics(&a.physics, &mut c.symmetry, &mut c.rho, &mut c.p1lin);
            let mut k = c.keys();
            k.apply(&a.grid);
            c.set_keys(k);
            override_fields!(c, a; method);
            if a.truncation.is_some() {
                c.truncation = a.truncation;
            }
            let (f, o) = (c.format, c.output.clone());
            apply_common(&a.common, |f, o| (c.format, c.output) = (f, o), f, o);
            RunConfig::Boson(c)
        }
        Command::Sweep(a) => {
            let mut c: SweepConfig = load(a.common.config.as_deref())?;
            apply_physics(&a.physics, &mut c.symmetry, &mut c.rho, &mut c.p1lin);
            let mut k = c.keys();
            k.apply(&a.grid);
            c.set_keys(k);
            if let Some(s) = a.solver {
                c.solver = s.into();
            }
            if !a.axes.is_empty() {
                c.axes = a.axes.iter().map(|t| parse_axis(t)).collect::<CliResult<_>>()?;
            }
            if !a.symmetries.is_empty() {
                c.symmetries = a.symmetries.clone();
            }
            override_fields!(c, a; file_prefix, trajectory_samples);
            let (f, o) = (c.format, c.output.clone());
            apply_common(&a.common, |f, o| (c.format, c.output) = (f, o), f, o);
            RunConfig::Sweep(c)
        }
        Command::FindMax(a) => {
            let mut c: FindMaxConfig = load(a.common.config.as_deref())?;
            if !a.symmetries.is_empty() {
                c.symmetries = a.symmetries.clone();
            }
            override_fields!(c, a; rho_min, rho_max, p1lin_min, p1lin_max, grid, tolerance, offset);
            let (f, o) = (c.format, c.output.clone());
            apply_common(&a.common, |f, o| (c.format, c.output) = (f, o), f, o);
            RunConfig::FindMax(c)
        }
        Command::Eels(a) => {
            let mut c: EelsConfig = load(a.common.config.as_deref())?;
            apply_physics(&a.physics, &mut c.symmetry, &mut c.rho, &mut c.p1lin);
            override_fields!(c, a; system, truncation);
            if !a.amplitudes.is_empty() {
                c.initial_state = a.amplitudes.iter().map(|t| parse_amplitude(t)).collect::<CliResult<_>>()?;
            }
            let (f, o) = (c.format, c.output.clone());
            apply_common(&a.common, |f, o| (c.format, c.output) = (f, o), f, o);
            RunConfig::Eels(c)
        }
    })
}

fn common(command: &Command) -> &CommonArgs {
    match command {
        Command::Pointlike(a) => &a.common,
        Command::Nonrecoil(a) => &a.common,
        Command::Recoil(a) => &a.common,
        Command::Boson(a) => &a.common,
        Command::Sweep(a) => &a.common,
        Command::FindMax(a) => &a.common,
        Command::Eels(a) => &a.common,
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: &Command) -> CliResult<i32> {
    let config = resolve(command)?;
    if common(command).dump_config {
        emit(None, config.to_file_json().as_bytes())?;
        return Ok(0);
    }
    execute(&config)
}

/// Runs a merged configuration; returns the exit code on success.
pub fn execute(config: &RunConfig) -> CliResult<i32> {
    match config {
        RunConfig::Pointlike(c) => run_pointlike(c, config),
        RunConfig::Nonrecoil(c) => run_nonrecoil(c, config),
        RunConfig::Recoil(c) => run_recoil(c, config),
        RunConfig::Boson(c) => run_boson(c, config),
        RunConfig::Sweep(c) => run_sweep_command(c, config),
        RunConfig::FindMax(c) => run_find_max(c, config),
        RunConfig::Eels(c) => run_eels(c, config),
    }
}

fn metadata(config: &RunConfig, diagnostics: Value) -> Value {
    json!({
        "tool": "ekick",
        "version": VERSION,
        "command": config.name(),
        "config": config,
        "diagnostics": diagnostics,
    })
}

fn check_physics(rho: f64, p1lin: f64) -> CliResult<()> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(config_error("rho", format!("must be finite and positive, got {rho}")));
    }
    if !(p1lin.is_finite() && p1lin > 0.0) {
        return Err(config_error("p1lin", format!("must be finite and positive, got {p1lin}")));
    }
    Ok(())
}

fn check_energy(energy_ratio: f64) -> CliResult<()> {
    if !(energy_ratio.is_finite() && energy_ratio > 0.0) {
        return Err(config_error("energy_ratio", format!("must be finite and positive, got {energy_ratio}")));
    }
    Ok(())
}

/// Energy errors name the offending key rather than the solver's internals.
fn energy_error(e: Error) -> CliError {
    match e {
        Error::AtThreshold { .. } | Error::BelowThreshold { .. } => config_error("energy_ratio", e),
        other => other.into(),
    }
}

fn run_pointlike(c: &PointlikeConfig, config: &RunConfig) -> CliResult<i32> {
    if c.points < 2 {
        return Err(config_error("points", "need at least 2"));
    }
    if !(c.p1lin_min >= 0.0 && c.p1lin_min < c.p1lin_max && c.p1lin_max.is_finite()) {
        return Err(config_error("p1lin_min", "need 0 <= p1lin_min < p1lin_max"));
    }
    let axis = Axis::linear(Parameter::P1lin, c.p1lin_min, c.p1lin_max, c.points);
    let mut table = Table::new(["p1lin", "p1_with_backscatter", "p1_no_backscatter", "p1_boson_reference"]);
    for x in axis.values() {
        table.push(vec![
            x.into(),
            pointlike_with_backscatter(x).p1.into(),
            pointlike_no_backscatter(x).p1.into(),
            x.into(),
        ]);
    }
    write_output(&table, &metadata(config, json!({})), c.format, c.output.as_deref(), false)?;
    Ok(0)
}

fn run_nonrecoil(c: &NonrecoilConfig, config: &RunConfig) -> CliResult<i32> {
    check_physics(c.rho, c.p1lin)?;
    if !(c.tolerance > 0.0 && c.tolerance < 1.0) {
        return Err(config_error("tolerance", format!("must lie in (0, 1), got {}", c.tolerance)));
    }
    if c.trajectory.is_some() && c.samples < 2 {
        return Err(config_error("samples", "trajectory export needs at least 2 samples"));
    }
    let system = LevelSystem::two_level_normalized(c.symmetry, c.rho, c.p1lin)?;
    let opts = IntegrateOptions {
        half_range: c.half_range,
        tolerance: c.tolerance,
        samples: if c.trajectory.is_some() { c.samples } else { 0 },
        ..Default::default()
    };
    let r = integrate(&system, &InitialState::basis(2, 0)?, &opts)?;
    let mut table = Table::new([
        "symmetry",
        "rho",
        "p1lin",
        "p0",
        "p1",
        "norm_drift",
        "tail_estimate",
        "half_range",
        "steps",
    ]);
    table.push(vec![
        c.symmetry.name().into(),
        c.rho.into(),
        c.p1lin.into(),
        r.probabilities[0].into(),
        r.probabilities[1].into(),
        r.norm_drift.into(),
        r.tail_estimate.into(),
        r.half_range.into(),
        r.steps.into(),
    ]);
    if let Some(path) = &c.trajectory {
        let mut t = Table::new(["z_over_v_omega", "re_f0", "im_f0", "re_f1", "im_f1", "p1_of_z", "symmetry", "rho", "p1lin"]);
        for (z, f) in r.z.iter().zip(&r.amplitudes) {
            t.push(vec![
                (*z).into(),
                f[0].re.into(),
                f[0].im.into(),
                f[1].re.into(),
                f[1].im.into(),
                f[1].norm_sqr().into(),
                c.symmetry.name().into(),
                c.rho.into(),
                c.p1lin.into(),
            ]);
        }
        emit(Some(path), &t.to_csv())?;
    }
    let diag = json!({ "norm_drift": r.norm_drift, "tail_estimate": r.tail_estimate, "steps": r.steps });
    write_output(&table, &metadata(config, diag), c.format, c.output.as_deref(), false)?;
    Ok(0)
}

fn run_recoil(c: &RecoilConfig, config: &RunConfig) -> CliResult<i32> {
    check_physics(c.rho, c.p1lin)?;
    check_energy(c.energy_ratio)?;
    let opts = c.keys().options()?;
    let point = RecoilPoint {
        symmetry: c.symmetry,
        rho: c.rho,
        p1lin: c.p1lin,
        energy_ratio: c.energy_ratio,
    };
    let s = solve_point(&point, &opts).map_err(energy_error)?;
    let d = &s.diagnostics;
    let converged = d.eps_conv <= EPS_CONV_LIMIT;
    let mut table = Table::new([
        "symmetry",
        "rho",
        "p1lin",
        "energy_ratio",
        "grid_mode",
        "p0",
        "p1",
        "p1_forward",
        "p1_backward",
        "eps_conv",
        "sum_deviation",
        "refinement_delta",
        "grid_points",
        "grid_spacing",
        "grid_range",
        "grid_adjustments",
        "pivot_ratio",
        "below_threshold",
        "converged",
    ]);
    table.push(vec![
        c.symmetry.name().into(),
        c.rho.into(),
        c.p1lin.into(),
        c.energy_ratio.into(),
        mode_name(c.grid_mode).into(),
        s.probability(0).into(),
        s.probability(1).into(),
        s.levels[1].forward.into(),
        s.levels[1].backward.into(),
        d.eps_conv.into(),
        d.sum_deviation.into(),
        d.refinement_delta.into(),
        d.grid.len().into(),
        d.grid.spacing.into(),
        d.grid.range.into(),
        d.grid.adjustments.into(),
        d.pivot_ratio.into(),
        s.below_threshold.into(),
        converged.into(),
    ]);
    write_output(&table, &metadata(config, serde_json::to_value(d).expect("json")), c.format, c.output.as_deref(), false)?;
    Ok(report_convergence(converged, d.eps_conv))
}

fn report_convergence(converged: bool, eps: f64) -> i32 {
    if converged {
        0
    } else {
        eprintln!("warning: eps_conv = {eps:.3e} exceeds {EPS_CONV_LIMIT:e}; results written with converged=false");
        3
    }
}

fn mode_name(m: GridMode) -> &'static str {
    match m {
        GridMode::CenteredForward => "centered_forward",
        GridMode::SymmetricFull => "symmetric_full",
    }
}

fn run_boson(c: &BosonConfig, config: &RunConfig) -> CliResult<i32> {
    check_physics(c.rho, c.p1lin)?;
    let (occupations, eps, diag) = match c.method {
        BosonMethod::Analytic => {
            let model = CouplingModel::normalized_nonrecoil(c.symmetry, c.rho, 1.0, 1.0, c.p1lin)?;
            let t = boson_coherent(&model, 1.0, 1.0, &[])?;
            let mut occ = t.occupations;
            if let Some(n) = c.truncation {
                occ.resize(n + 1, 0.0);
            }
            (occ, None, json!({ "mean": t.mean }))
        }
        BosonMethod::Ode => {
            let model = CouplingModel::normalized_nonrecoil(c.symmetry, c.rho, 1.0, 1.0, c.p1lin)?;
            let n = c.truncation.unwrap_or_else(|| poisson_cutoff(c.p1lin, 1e-12) + 2);
            let system = LevelSystem::boson_ladder(model, 1.0, 1.0, n)?;
            let r = integrate(&system, &InitialState::basis(n + 1, 0)?, &IntegrateOptions::default())?;
            (r.probabilities, None, json!({ "norm_drift": r.norm_drift, "tail_estimate": r.tail_estimate }))
        }
        BosonMethod::Recoil => {
            check_energy(c.energy_ratio)?;
            let opts = c.keys().options()?;
            let point = RecoilPoint {
                symmetry: c.symmetry,
                rho: c.rho,
                p1lin: c.p1lin,
                energy_ratio: c.energy_ratio,
            };
            let s = match c.truncation {
                None => solve_boson_point(&point, &opts),
                Some(n) => point
                    .coupling(opts.grid.mode)
                    .and_then(|m| solve_boson_ladder(&m, point.q0(), 1.0, Some(n), c.p1lin, &opts)),
            }
            .map_err(energy_error)?;
            let d = serde_json::to_value(&s.diagnostics).expect("json");
            (s.probabilities(), Some(s.diagnostics.eps_conv), d)
        }
    };
    let mean: f64 = occupations.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
    let method = match c.method {
        BosonMethod::Analytic => "analytic",
        BosonMethod::Ode => "ode",
        BosonMethod::Recoil => "recoil",
    };
    let converged = eps.is_none_or(|e| e <= EPS_CONV_LIMIT);
    let mut table = Table::new(["n", "p_n", "mean", "method", "symmetry", "rho", "p1lin", "energy_ratio", "converged"]);
    for (n, p) in occupations.iter().enumerate() {
        table.push(vec![
            n.into(),
            (*p).into(),
            mean.into(),
            method.into(),
            c.symmetry.name().into(),
            c.rho.into(),
            c.p1lin.into(),
            if c.method == BosonMethod::Recoil { Cell::Float(c.energy_ratio) } else { Cell::Empty },
            converged.into(),
        ]);
    }
    write_output(&table, &metadata(config, diag), c.format, c.output.as_deref(), false)?;
    Ok(report_convergence(converged, eps.unwrap_or(0.0)))
}

/// CSV/JSON table of a sweep: converged or not, every evaluated point gets
/// a row; failed points are listed in the metadata instead.
pub fn sweep_table(result: &SweepResult) -> Table {
    let solver = result.spec.solver;
    let energy = matches!(solver, SolverKind::Recoil | SolverKind::BosonRecoil);
    let levels = result.records.iter().map(|r| r.outputs.occupations.len()).max().unwrap_or(0);
    let mut columns: Vec<String> = ["index", "symmetry", "rho", "p1lin"].iter().map(|s| s.to_string()).collect();
    if energy {
        columns.push("energy_ratio".into());
    }
    columns.extend(PointOutputs::columns(solver).iter().map(|s| s.to_string()));
    columns.extend((0..levels).map(|n| format!("p{n}")));
    columns.push("converged".into());
    let mut table = Table::new(columns);
    for r in result.records.iter().filter(|r| !r.failed()) {
        let mut row: Vec<Cell> = vec![
            r.index.into(),
            r.inputs.symmetry.name().into(),
            r.inputs.rho.into(),
            r.inputs.p1lin.into(),
        ];
        if energy {
            row.push(r.inputs.energy_ratio.into());
        }
        row.extend(PointOutputs::columns(solver).iter().map(|c| Cell::from(r.outputs.get(c))));
        row.extend((0..levels).map(|n| Cell::from(r.outputs.occupations.get(n).copied())));
        row.push(r.converged.into());
        table.push(row);
    }
    table
}

fn sweep_metadata(config: &RunConfig, result: &SweepResult) -> Value {
    let failures: Vec<Value> = result
        .records
        .iter()
        .filter(|r| r.failed())
        .map(|r| json!({ "index": r.index, "inputs": r.inputs, "error": r.error, "threshold_exclusion": r.excluded }))
        .collect();
    metadata(
        config,
        json!({
            "spec": result.spec,
            "spec_hash": result.metadata.spec_hash,
            "points": result.metadata.points,
            "failures": failures,
        }),
    )
}

fn run_sweep_command(c: &SweepConfig, config: &RunConfig) -> CliResult<i32> {
    let per_symmetry = !c.symmetries.is_empty();
    let symmetries = if per_symmetry { c.symmetries.clone() } else { vec![c.symmetry] };
    for &s in &symmetries {
        c.spec(s).validate()?;
    }
    if per_symmetry {
        let dir = c
            .output
            .as_ref()
            .ok_or_else(|| config_error("output", "per-symmetry sweeps need an output directory"))?;
        fs::create_dir_all(dir).map_err(|source| OutputError {
            path: dir.clone(),
            source,
        })?;
    }
    if c.trajectory_samples > 0 && c.output.is_none() {
        return Err(config_error("output", "trajectory export needs an output path"));
    }
    let mut code = 0;
    for &symmetry in &symmetries {
        let result = run_sweep(&c.spec(symmetry))?;
        eprintln!(
            "{} {}: {} points, {} failed, {:.2} s",
            c.solver.name(),
            symmetry,
            result.metadata.points,
            result.metadata.failures,
            result.runtime_seconds
        );
        let path = if per_symmetry {
            let dir = c.output.as_ref().expect("checked above");
            Some(dir.join(format!("{}_{}.{}", c.file_prefix, symmetry.name(), c.format.extension())))
        } else {
            c.output.clone()
        };
        write_output(&sweep_table(&result), &sweep_metadata(config, &result), c.format, path.as_deref(), true)?;
        if c.trajectory_samples > 0 {
            let mut t = Table::new(["index", "z_over_v_omega", "p1_of_z", "symmetry", "rho", "p1lin"]);
            for r in &result.records {
                for &(z, p) in &r.outputs.trajectory {
                    t.push(vec![
                        r.index.into(),
                        z.into(),
                        p.into(),
                        r.inputs.symmetry.name().into(),
                        r.inputs.rho.into(),
                        r.inputs.p1lin.into(),
                    ]);
                }
            }
            let base = path.expect("checked above");
            let mut name = base.into_os_string();
            name.push(".trajectories.csv");
            emit(Some(Path::new(&name)), &t.to_csv())?;
        }
        for r in result.records.iter().filter(|r| (r.failed() && !r.excluded) || (!r.failed() && !r.converged)) {
            eprintln!(
                "point {}: {}",
                r.index,
                r.error.clone().unwrap_or_else(|| format!("eps_conv {:?} above {EPS_CONV_LIMIT:e}", r.outputs.eps_conv))
            );
            code = 3;
        }
    }
    Ok(code)
}

fn run_find_max(c: &FindMaxConfig, config: &RunConfig) -> CliResult<i32> {
    let search = c.search_box();
    search.validate()?;
    if c.symmetries.is_empty() {
        return Err(config_error("symmetries", "need at least one symmetry"));
    }
    let mut table = Table::new([
        "symmetry",
        "rho_star",
        "p1lin_star",
        "p1",
        "scan_rho",
        "scan_p1lin",
        "scan_p1",
        "evaluations",
        "attained",
        "rho_min",
        "rho_max",
        "p1lin_min",
        "p1lin_max",
        "grid",
        "tolerance",
        "offset",
    ]);
    let mut traces = Vec::new();
    let mut code = 0;
    for &s in &c.symmetries {
        let r = find_maximum(s, &search)?;
        if !r.attained {
            eprintln!("{s}: refined maximum P1 = {:.6} below the attainment level", r.p1);
            code = 3;
        }
        table.push(vec![
            s.name().into(),
            r.rho.into(),
            r.p1lin.into(),
            r.p1.into(),
            r.scan_best.0.into(),
            r.scan_best.1.into(),
            r.scan_best.2.into(),
            r.evaluations.into(),
            r.attained.into(),
            c.rho_min.into(),
            c.rho_max.into(),
            c.p1lin_min.into(),
            c.p1lin_max.into(),
            c.grid.into(),
            c.tolerance.into(),
            c.offset.into(),
        ]);
        traces.push(json!({ "symmetry": s, "trace": r.trace }));
    }
    write_output(&table, &metadata(config, json!({ "traces": traces })), c.format, c.output.as_deref(), true)?;
    Ok(code)
}

fn run_eels(c: &EelsConfig, config: &RunConfig) -> CliResult<i32> {
    check_physics(c.rho, c.p1lin)?;
    let model = CouplingModel::normalized_nonrecoil(c.symmetry, c.rho, 1.0, 1.0, c.p1lin)?;
    let system = match c.system {
        EelsSystem::TwoLevel => LevelSystem::two_level(model, 1.0, 1.0)?,
        EelsSystem::Boson => LevelSystem::boson_ladder(model, 1.0, 1.0, c.truncation)?,
    };
    let levels = system.levels();
    let initial = if c.initial_state.is_empty() {
        InitialState::basis(levels, 0)?
    } else {
        if c.initial_state.len() > levels {
            return Err(config_error(
                "initial_state",
                format!("{} amplitudes for {levels} levels", c.initial_state.len()),
            ));
        }
        let mut amps: Vec<Complex64> = c.initial_state.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
        amps.resize(levels, Complex64::new(0.0, 0.0));
        InitialState::new(amps).map_err(|e| config_error("initial_state", e))?
    };
    let lines = eels_spectrum(&system, &initial, &IntegrateOptions::default())?;
    let system_name = match c.system {
        EelsSystem::TwoLevel => "two-level",
        EelsSystem::Boson => "boson",
    };
    let mut table = Table::new(["frequency", "weight", "system", "symmetry", "rho", "p1lin"]);
    for l in &lines {
        table.push(vec![
            l.frequency.into(),
            l.weight.into(),
            system_name.into(),
            c.symmetry.name().into(),
            c.rho.into(),
            c.p1lin.into(),
        ]);
    }
    let total: f64 = lines.iter().map(|l| l.weight).sum();
    write_output(&table, &metadata(config, json!({ "total_weight": total })), c.format, c.output.as_deref(), false)?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve_args(args: &[&str]) -> RunConfig {
        let cli = Cli::try_parse_from(std::iter::once("ekick").chain(args.iter().copied())).unwrap();
        resolve(&cli.command).unwrap()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"rho": 0.7, "p1lin": 2.0, "symmetry": "d_xz"}"#).unwrap();
        let c = resolve_args(&["recoil", "--config", path.to_str().unwrap(), "--p1lin", "3"]);
        match c {
            RunConfig::Recoil(r) => {
                assert_eq!((r.rho, r.p1lin, r.symmetry), (0.7, 3.0, TransitionSymmetry::Dxz));
                assert_eq!(r.format, Format::Json);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dump_config_round_trips() {
        let configs = [
            resolve_args(&["pointlike", "--p1lin-max", "7"]),
            resolve_args(&["nonrecoil", "--rho", "0.30000000000000004", "--half-range", "55"]),
            resolve_args(&["recoil", "--energy-ratio", "1.7", "--grid-mode", "symmetric-full", "--no-refine"]),
            resolve_args(&["boson", "--method", "recoil", "--truncation", "9"]),
            resolve_args(&["sweep", "--solver", "recoil", "--axis", "energy_ratio:1.1:10:5", "--axis", "p1lin:0.05:8:4:log"]),
            resolve_args(&["find-max", "--symmetry", "p_x", "--offset", "0.5"]),
            resolve_args(&["eels", "--amplitude", "0.6,0", "--amplitude", "0,-0.8"]),
        ];
        for c in configs {
            let back = c.parse_like(&c.to_file_json()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"rhoo": 0.7}"#).unwrap();
        assert_eq!(run(["ekick", "recoil", "--config", path.to_str().unwrap()]), 2);
        assert_eq!(run(["ekick", "recoil", "--rho", "-1"]), 2);
        assert_eq!(run(["ekick", "recoil", "--energy-ratio", "1.00001"]), 2);
        assert_eq!(run(["ekick", "pointlike", "--points", "1"]), 2);
        assert_eq!(run(["ekick", "sweep", "--axis", "rho:1:0:3"]), 2);
        assert_eq!(run(["ekick", "nosuch"]), 2);
    }

    #[test]
    fn pointlike_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let p = path.to_str().unwrap();
        assert_eq!(run(["ekick", "pointlike", "--p1lin-max", "10", "--points", "500", "--format", "csv", "--output", p]), 0);
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "p1lin,p1_with_backscatter,p1_no_backscatter,p1_boson_reference");
        assert_eq!(lines.len(), 501);
        let first = fs::read(&path).unwrap();
        assert_eq!(run(["ekick", "pointlike", "--p1lin-max", "10", "--points", "500", "--output", p]), 0);
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn axis_flag_parsing() {
        let a = parse_axis("p1lin:0.05:8:4:log").unwrap();
        assert_eq!((a.parameter, a.count, a.scale), (Parameter::P1lin, 4, AxisScale::Log));
        assert!(parse_axis("q:0:1:2").is_err());
        assert!(parse_axis("rho:0:1").is_err());
    }
}
