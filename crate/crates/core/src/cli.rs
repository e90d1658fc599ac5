//! Command-line front end: argument and config-file handling plus one runner
//! per subcommand. Runners return a [`Dataset`] and an exit status; only
//! [`main`](crate::cli::main) touches stdout, stderr and the filesystem.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, FRAC_PI_6, PI, SQRT_2};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{Cell, Dataset, Format};
use crate::error::Error;
use crate::moments::{jz_moments, MomentSet, SlopeMode, TransverseStats};
use crate::optimizer::{
    find_optimum, fringe_width, predicted_exponent, predicted_exponent_coherent, predicted_exponent_dephased,
    stationarity_roots, sweep, Branch, OptimizerOptions, SearchWindow, SweepGrid, SweepRow,
};
use crate::oracle::{Operator, Oracle};
use crate::params::{Axis, ProtocolParams, SpinEnsemble};
use crate::sensitivity::{self, Eq9Mode, Estimate, SensitivityOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "spinmetro",
    version,
    about = "Phase sensitivity of dephased one-axis-twisted spin states"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sensitivities over a phase window.
    Scan,
    /// Best-sensitivity phase for one configuration.
    Optimum,
    /// Measured and predicted scaling exponents.
    Exponent,
    /// Exact, short-time and envelope curves for the four standard panels.
    Fig1,
    /// Best-sensitivity phase versus J and versus theta.
    Fig2,
    /// Scaling exponents versus theta.
    Fig3,
    /// Closed forms against the dense Dicke-basis reference.
    OracleCheck,
    /// Raw reference expectation values at one point.
    #[command(hide = true)]
    OracleDump,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Scan => "scan",
            Command::Optimum => "optimum",
            Command::Exponent => "exponent",
            Command::Fig1 => "fig1",
            Command::Fig2 => "fig2",
            Command::Fig3 => "fig3",
            Command::OracleCheck => "oracle-check",
            Command::OracleDump => "oracle-dump",
        }
    }
}

/// Raw flag values; parsed together with the config file in
/// [`RunConfig::resolve`].
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Particle number N (total spin J = N/2).
    #[arg(long = "N", global = true)]
    pub particles: Option<String>,
    /// Preparation angle; accepts forms like `0.7`, `pi/4`, `3pi/4`.
    #[arg(long, global = true)]
    pub theta: Option<String>,
    /// Dephasing rate gamma >= 0.
    #[arg(long, global = true)]
    pub gamma: Option<String>,
    /// Lower end of the phase window.
    #[arg(long = "phi-min", global = true)]
    pub phi_min: Option<String>,
    /// Upper end of the phase window.
    #[arg(long = "phi-max", global = true)]
    pub phi_max: Option<String>,
    /// Samples in the phase window (at least 2).
    #[arg(long, global = true)]
    pub points: Option<String>,
    /// x, y or both.
    #[arg(long, global = true)]
    pub axis: Option<String>,
    /// csv or json.
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Output file, replaced atomically; stdout if absent.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// exact, short-time or envelope.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// exact or eq4.
    #[arg(long, global = true)]
    pub slope: Option<String>,
    /// corrected or verbatim.
    #[arg(long, global = true)]
    pub eq9: Option<String>,
    /// Comma-separated total spins J.
    #[arg(long, global = true)]
    pub js: Option<String>,
    /// Comma-separated angles.
    #[arg(long, global = true)]
    pub thetas: Option<String>,
    /// Comma-separated dephasing rates.
    #[arg(long, global = true)]
    pub gammas: Option<String>,
    /// Flat `key = value` file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long = "inject-fault", global = true, hide = true)]
    pub inject_fault: bool,
}

const KEYS: [&str; 15] = [
    "N", "theta", "gamma", "phi-min", "phi-max", "points", "axis", "format", "out", "mode", "slope", "eq9", "js",
    "thetas", "gammas",
];

impl Flags {
    fn entries(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("N", &self.particles),
            ("theta", &self.theta),
            ("gamma", &self.gamma),
            ("phi-min", &self.phi_min),
            ("phi-max", &self.phi_max),
            ("points", &self.points),
            ("axis", &self.axis),
            ("format", &self.format),
            ("out", &self.out),
            ("mode", &self.mode),
            ("slope", &self.slope),
            ("eq9", &self.eq9),
            ("js", &self.js),
            ("thetas", &self.thetas),
            ("gammas", &self.gammas),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn config_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Parses a flat `key = value` (or `key: value`) file; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| config_err(format!("config line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim().trim_start_matches("--");
        if !KEYS.contains(&key) {
            return Err(config_err(format!("config line {}: unknown key `{key}`", lineno + 1)));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Angle in radians from `0.7`, `pi`, `pi/4`, `3pi/4`, `3*pi/4` or `π/6`.
pub fn parse_angle(s: &str) -> Result<f64, ConfigError> {
    let t: String = s.trim().to_ascii_lowercase().replace('π', "pi").replace(' ', "");
    let bad = || config_err(format!("cannot parse angle `{s}`"));
    if let Some(idx) = t.find("pi") {
        let coeff = t[..idx].trim_end_matches('*');
        let coeff = if coeff.is_empty() {
            1.0
        } else if coeff == "-" {
            -1.0
        } else {
            coeff.parse::<f64>().map_err(|_| bad())?
        };
        let rest = &t[idx + 2..];
        let div = if rest.is_empty() {
            1.0
        } else {
            rest.strip_prefix('/')
                .ok_or_else(bad)?
                .parse::<f64>()
                .map_err(|_| bad())?
        };
        Ok(coeff * PI / div)
    } else {
        t.parse::<f64>().map_err(|_| bad())
    }
}

fn parse_f64(key: &str, s: &str) -> Result<f64, ConfigError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| config_err(format!("`{key}`: cannot parse number `{s}`")))
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| f(t.trim()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisChoice {
    X,
    Y,
    Both,
}

impl AxisChoice {
    pub fn axes(self) -> Vec<Axis> {
        match self {
            AxisChoice::X => vec![Axis::X],
            AxisChoice::Y => vec![Axis::Y],
            AxisChoice::Both => vec![Axis::X, Axis::Y],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Exact,
    ShortTime,
    Envelope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub particles: u64,
    pub theta: f64,
    pub gamma: f64,
    pub phi_window: Option<(f64, f64)>,
    pub points: usize,
    pub axis: AxisChoice,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub mode: Mode,
    pub slope: SlopeMode,
    pub eq9: Eq9Mode,
    pub js: Option<Vec<f64>>,
    pub thetas: Option<Vec<f64>>,
    pub gammas: Option<Vec<f64>>,
    pub inject_fault: bool,
    /// Whether `N` was given explicitly rather than defaulted.
    pub particles_set: bool,
    pub gamma_set: bool,
}

impl RunConfig {
    /// Merges flags over config-file values over per-command defaults.
    pub fn resolve(command: Command, flags: &Flags, file: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut raw = file.clone();
        for (key, value) in flags.entries() {
            if let Some(v) = value {
                raw.insert(key.to_string(), v.clone());
            }
        }
        let get = |k: &str| raw.get(k).map(String::as_str);

        let default_particles = match command {
            Command::Exponent => 20_000,
            Command::Fig3 => 200_000,
            Command::OracleCheck | Command::OracleDump => 4,
            _ => 2000,
        };
        let particles = match get("N") {
            Some(s) => s
                .trim()
                .parse::<u64>()
                .map_err(|_| config_err(format!("`N`: cannot parse particle number `{s}`")))?,
            None => default_particles,
        };
        if particles == 0 {
            return Err(config_err("`N` must be at least 1"));
        }
        let theta = get("theta").map(parse_angle).transpose()?.unwrap_or(FRAC_PI_4);
        if !(theta > 0.0 && theta < PI) {
            return Err(config_err(format!("`theta` = {theta} must lie in (0, pi)")));
        }
        let default_gamma = if command == Command::Fig1 { 100.0 } else { 0.0 };
        let gamma = get("gamma")
            .map(|s| parse_f64("gamma", s))
            .transpose()?
            .unwrap_or(default_gamma);
        if gamma < 0.0 {
            return Err(config_err("`gamma` must be non-negative"));
        }
        let phi_lo = get("phi-min").map(|s| parse_f64("phi-min", s)).transpose()?;
        let phi_hi = get("phi-max").map(|s| parse_f64("phi-max", s)).transpose()?;
        let phi_window = match (phi_lo, phi_hi) {
            (None, None) => None,
            (lo, hi) => {
                let j = particles as f64 / 2.0;
                let lo = lo.unwrap_or(0.0);
                let hi = hi.unwrap_or(3.0 * PI / (SQRT_2 * j));
                if lo >= hi {
                    return Err(config_err(format!("empty phase window [{lo}, {hi}]")));
                }
                Some((lo, hi))
            }
        };
        let points = match get("points") {
            Some(s) => s
                .trim()
                .parse::<usize>()
                .map_err(|_| config_err(format!("`points`: cannot parse `{s}`")))?,
            None => 601,
        };
        if points < 2 {
            return Err(config_err("`points` must be at least 2"));
        }
        let axis = match get("axis").map(|s| s.trim().to_ascii_lowercase()) {
            None => AxisChoice::Both,
            Some(s) if s == "x" => AxisChoice::X,
            Some(s) if s == "y" => AxisChoice::Y,
            Some(s) if s == "both" => AxisChoice::Both,
            Some(s) => return Err(config_err(format!("unknown axis `{s}`"))),
        };
        let format = get("format")
            .map(|s| s.parse::<Format>().map_err(config_err))
            .transpose()?
            .unwrap_or(Format::Csv);
        let mode = match get("mode").map(|s| s.trim().to_ascii_lowercase()) {
            None => Mode::Exact,
            Some(s) if s == "exact" => Mode::Exact,
            Some(s) if s == "short-time" => Mode::ShortTime,
            Some(s) if s == "envelope" => Mode::Envelope,
            Some(s) => return Err(config_err(format!("unknown mode `{s}`"))),
        };
        let slope = match get("slope").map(|s| s.trim().to_ascii_lowercase()) {
            None => SlopeMode::Exact,
            Some(s) if s == "exact" || s == "slope-exact" => SlopeMode::Exact,
            Some(s) if s == "eq4" || s == "slope-eq4" => SlopeMode::Eq4,
            Some(s) => return Err(config_err(format!("unknown slope mode `{s}`"))),
        };
        let eq9 = match get("eq9").map(|s| s.trim().to_ascii_lowercase()) {
            None => Eq9Mode::Corrected,
            Some(s) if s == "corrected" || s == "eq9-corrected" => Eq9Mode::Corrected,
            Some(s) if s == "verbatim" || s == "eq9-verbatim" => Eq9Mode::Verbatim,
            Some(s) => return Err(config_err(format!("unknown eq9 mode `{s}`"))),
        };
        let js = get("js").map(|s| parse_list(s, |t| parse_f64("js", t))).transpose()?;
        if let Some(js) = &js {
            if js.iter().any(|&j| SpinEnsemble::from_total_spin(j).is_err()) {
                return Err(config_err("`js` entries must be positive multiples of 1/2"));
            }
        }
        let thetas = get("thetas").map(|s| parse_list(s, parse_angle)).transpose()?;
        if let Some(ts) = &thetas {
            if ts.iter().any(|&t| !(t > 0.0 && t < PI)) {
                return Err(config_err("`thetas` entries must lie in (0, pi)"));
            }
        }
        let gammas = get("gammas")
            .map(|s| parse_list(s, |t| parse_f64("gammas", t)))
            .transpose()?;
        if gammas.as_ref().is_some_and(|g| g.iter().any(|&v| v < 0.0)) {
            return Err(config_err("`gammas` entries must be non-negative"));
        }
        Ok(Self {
            command,
            particles,
            theta,
            gamma,
            phi_window,
            points,
            axis,
            format,
            out: get("out").map(PathBuf::from),
            mode,
            slope,
            eq9,
            js,
            thetas,
            gammas,
            inject_fault: flags.inject_fault,
            particles_set: get("N").is_some(),
            gamma_set: get("gamma").is_some(),
        })
    }

    fn ensemble(&self) -> SpinEnsemble {
        SpinEnsemble::new(self.particles).expect("validated in resolve")
    }

    fn sensitivity_options(&self) -> SensitivityOptions {
        SensitivityOptions {
            slope: self.slope,
            eq9: self.eq9,
        }
    }

    fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions {
            sensitivity: self.sensitivity_options(),
            ..OptimizerOptions::default()
        }
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    ConfigError = 2,
    NumericalFailure = 3,
    OracleFailure = 4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub dataset: Dataset,
    /// Human-readable summary printed to stderr (stdout for oracle-check).
    pub summary: Option<String>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    Config(ConfigError),
    Numerical(Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "configuration error: {e}"),
            RunError::Numerical(e) => write!(f, "numerical failure: {e}"),
        }
    }
}

/// Errors that stem from the requested parameters rather than numerics.
fn classify_error(e: Error) -> RunError {
    match e {
        Error::DegenerateVariance { .. } | Error::Unresolved | Error::DegenerateExponent(_) => RunError::Numerical(e),
        other => RunError::Config(ConfigError(other.to_string())),
    }
}

fn base_dataset<S: Into<String>>(cfg: &RunConfig, columns: impl IntoIterator<Item = S>) -> Dataset {
    Dataset::new(columns)
        .with_meta("generator", format!("spinmetro {VERSION}"))
        .with_meta("command", cfg.command.name())
}

fn fig_units(ens: &SpinEnsemble) -> f64 {
    PI / (SQRT_2 * ens.j())
}

fn estimate_cells(e: Estimate) -> (Cell, Cell) {
    (Cell::opt_float(e.value()), Cell::Bool(e.is_divergent()))
}

pub fn execute(cfg: &RunConfig) -> Result<Report, RunError> {
    match cfg.command {
        Command::Scan => run_scan(cfg),
        Command::Optimum => run_optimum(cfg),
        Command::Exponent => run_exponent(cfg),
        Command::Fig1 => run_fig1(cfg),
        Command::Fig2 => run_fig2(cfg),
        Command::Fig3 => run_fig3(cfg),
        Command::OracleCheck => run_oracle_check(cfg),
        Command::OracleDump => run_oracle_dump(cfg),
    }
}

fn phase_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
        .collect()
}

fn sensitivity_at(
    ens: &SpinEnsemble,
    p: &ProtocolParams,
    mode: Mode,
    opts: &SensitivityOptions,
) -> Result<sensitivity::SensitivityPoint, Error> {
    match mode {
        Mode::Exact => sensitivity::exact(ens, p, opts),
        Mode::ShortTime => sensitivity::short_time(ens, p),
        Mode::Envelope => sensitivity::envelope(ens, p, opts.eq9),
    }
}

/// Rows `(phi, phi_fig_units, dpx, dpy, divergent_x, divergent_y)`.
pub fn run_scan(cfg: &RunConfig) -> Result<Report, RunError> {
    let ens = cfg.ensemble();
    let unit = fig_units(&ens);
    let (lo, hi) = cfg.phi_window.unwrap_or((0.0, 3.0 * unit));
    let opts = cfg.sensitivity_options();
    let mut ds = base_dataset(
        cfg,
        ["phi", "phi_fig_units", "dpx", "dpy", "divergent_x", "divergent_y"],
    )
    .with_meta("N", ens.particles())
    .with_meta("theta", crate::dataset::format_float(cfg.theta))
    .with_meta("gamma", crate::dataset::format_float(cfg.gamma))
    .with_meta("mode", format!("{:?}", cfg.mode));
    let mut clamped = 0u64;
    for phi in phase_grid(lo, hi, cfg.points) {
        let p = ProtocolParams::new(cfg.theta, phi, cfg.gamma).map_err(classify_error)?;
        let pt = sensitivity_at(&ens, &p, cfg.mode, &opts).map_err(classify_error)?;
        clamped += pt.clamped_variances as u64;
        let (dpx, div_x) = estimate_cells(pt.dpx);
        let (dpy, div_y) = estimate_cells(pt.dpy);
        ds.push(vec![phi.into(), (phi / unit).into(), dpx, dpy, div_x, div_y]);
    }
    Ok(Report {
        dataset: ds,
        summary: (clamped > 0).then(|| format!("{clamped} variance(s) clamped to zero")),
        status: Status::Success,
    })
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "N",
    "theta",
    "gamma",
    "axis",
    "phi_min",
    "delta_phi_min",
    "branch",
    "xi",
    "fringe_index",
];

fn sweep_row_cells(row: &SweepRow) -> Vec<Cell> {
    let head = vec![
        Cell::Int(row.particles as i64),
        row.theta.into(),
        row.gamma.into(),
        row.axis.label().into(),
    ];
    let tail = match &row.outcome {
        Ok(r) => vec![
            r.phi_min.into(),
            r.delta_phi_min.into(),
            r.branch.label().into(),
            Cell::opt_float(r.xi),
            Cell::Int(r.fringe_index as i64),
        ],
        Err(_) => vec![
            Cell::Empty,
            Cell::Empty,
            Branch::Unresolved.label().into(),
            Cell::Empty,
            Cell::Empty,
        ],
    };
    head.into_iter().chain(tail).collect()
}

/// Sweep rows as a table with the standard optimum schema.
pub fn sweep_table(cfg: &RunConfig, rows: &[SweepRow]) -> Dataset {
    let mut ds = base_dataset(cfg, SWEEP_COLUMNS);
    for row in rows {
        ds.push(sweep_row_cells(row));
    }
    ds
}

pub fn run_optimum(cfg: &RunConfig) -> Result<Report, RunError> {
    let opts = cfg.optimizer_options();
    let rows: Vec<SweepRow> = match cfg.phi_window {
        None => sweep(
            &SweepGrid {
                particles: vec![cfg.particles],
                thetas: vec![cfg.theta],
                gammas: vec![cfg.gamma],
                axes: cfg.axis.axes(),
            },
            &opts,
        ),
        Some((lo, hi)) => {
            let window = SearchWindow::new(lo, hi).map_err(classify_error)?;
            let ens = cfg.ensemble();
            cfg.axis
                .axes()
                .into_iter()
                .map(|axis| SweepRow {
                    particles: cfg.particles,
                    theta: cfg.theta,
                    gamma: cfg.gamma,
                    axis,
                    outcome: find_optimum(&ens, cfg.theta, cfg.gamma, axis, Some(window), &opts),
                })
                .collect()
        }
    };
    let unresolved = rows.iter().filter(|r| r.outcome.is_err()).count();
    Ok(Report {
        dataset: sweep_table(cfg, &rows),
        summary: (unresolved > 0).then(|| format!("{unresolved} unresolved optimum row(s)")),
        status: if unresolved > 0 {
            Status::NumericalFailure
        } else {
            Status::Success
        },
    })
}

pub fn run_exponent(cfg: &RunConfig) -> Result<Report, RunError> {
    let opts = cfg.optimizer_options();
    let thetas = cfg.thetas.clone().unwrap_or_else(|| vec![cfg.theta]);
    let rows = sweep(
        &SweepGrid {
            particles: vec![cfg.particles],
            thetas,
            gammas: vec![cfg.gamma],
            axes: cfg.axis.axes(),
        },
        &opts,
    );
    let ens = cfg.ensemble();
    let mut ds = base_dataset(
        cfg,
        [
            "N",
            "J",
            "theta",
            "gamma",
            "axis",
            "delta_phi_min",
            "xi_measured",
            "xi_predicted",
            "xi_predicted_eq8",
            "xi_predicted_eq11",
        ],
    );
    let mut unresolved = 0;
    for row in &rows {
        let (delta, xi) = match &row.outcome {
            Ok(r) => (Cell::Float(r.delta_phi_min), Cell::opt_float(r.xi)),
            Err(_) => {
                unresolved += 1;
                (Cell::Empty, Cell::Empty)
            }
        };
        ds.push(vec![
            Cell::Int(row.particles as i64),
            ens.j().into(),
            row.theta.into(),
            row.gamma.into(),
            row.axis.label().into(),
            delta,
            xi,
            Cell::opt_float(predicted_exponent(&ens, row.theta, row.gamma, opts.regime_threshold)),
            Cell::opt_float(predicted_exponent_coherent(&ens, row.theta)),
            Cell::opt_float(
                (row.gamma > 0.0)
                    .then(|| predicted_exponent_dephased(&ens, row.theta, row.gamma))
                    .flatten(),
            ),
        ]);
    }
    Ok(Report {
        dataset: ds,
        summary: None,
        status: if unresolved > 0 {
            Status::NumericalFailure
        } else {
            Status::Success
        },
    })
}

/// Panel label, readout axis, angle and whether the panel is dephased.
const FIG1_PANELS: [(&str, Axis, f64, bool); 5] = [
    ("a", Axis::X, FRAC_PI_4, false),
    ("a", Axis::X, std::f64::consts::FRAC_PI_2, false),
    ("b", Axis::Y, FRAC_PI_4, false),
    ("c", Axis::X, FRAC_PI_6, true),
    ("d", Axis::Y, FRAC_PI_4, true),
];

/// Curves for every panel: exact, short-time and envelope values of the
/// panel's readout axis. `--gamma` sets the dephased panels' rate.
pub fn run_fig1(cfg: &RunConfig) -> Result<Report, RunError> {
    let ens = cfg.ensemble();
    let j = ens.j();
    let unit = fig_units(&ens);
    let (lo, hi) = cfg.phi_window.unwrap_or((0.0, 3.0 * unit));
    let opts = cfg.sensitivity_options();
    let mut ds = base_dataset(
        cfg,
        [
            "panel",
            "axis",
            "theta",
            "gamma",
            "phi",
            "phi_fig_units",
            "exact",
            "short_time",
            "envelope",
            "divergent_exact",
            "divergent_short_time",
            "divergent_envelope",
        ],
    )
    .with_meta("N", ens.particles())
    .with_meta("heisenberg_limit", crate::dataset::format_float(1.0 / (SQRT_2 * j)))
    .with_meta(
        "super_heisenberg_limit",
        crate::dataset::format_float(1.0 / (SQRT_2 * j.powf(1.5))),
    );
    let approx_cells = |r: Result<Estimate, Error>| match r {
        Ok(e) => estimate_cells(e),
        Err(_) => (Cell::Empty, Cell::Bool(false)),
    };
    for (panel, axis, theta, dephased) in FIG1_PANELS {
        let gamma = if dephased { cfg.gamma } else { 0.0 };
        for phi in phase_grid(lo, hi, cfg.points) {
            let p = ProtocolParams::new(theta, phi, gamma).map_err(classify_error)?;
            let exact = sensitivity::exact_axis(&ens, &p, axis, &opts).map_err(classify_error)?;
            let short = match axis {
                Axis::X => sensitivity::short_time_x(&ens, &p),
                Axis::Y => sensitivity::short_time_y(&ens, &p),
            };
            let env = sensitivity::envelope_axis(&ens, &p, axis, cfg.eq9);
            let (ex, dex) = estimate_cells(exact);
            let (st, dst) = approx_cells(short);
            let (en, den) = approx_cells(env);
            ds.push(vec![
                panel.into(),
                axis.label().into(),
                theta.into(),
                gamma.into(),
                phi.into(),
                (phi / unit).into(),
                ex,
                st,
                en,
                dex,
                dst,
                den,
            ]);
        }
    }
    Ok(Report {
        dataset: ds,
        summary: None,
        status: Status::Success,
    })
}

pub const FIG2_DEFAULT_JS: [f64; 7] = [100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0, 10000.0];

/// Panel a: `phi_min` versus J for theta = pi/4 and pi/3 with the two
/// reference curves. Panel b: `phi_min` and branch versus theta at fixed J.
pub fn run_fig2(cfg: &RunConfig) -> Result<Report, RunError> {
    let opts = cfg.optimizer_options();
    let js = cfg.js.clone().unwrap_or_else(|| FIG2_DEFAULT_JS.to_vec());
    let panel_a = sweep(
        &SweepGrid {
            particles: js.iter().map(|&j| (2.0 * j) as u64).collect(),
            thetas: vec![FRAC_PI_4, FRAC_PI_3],
            gammas: vec![0.0],
            axes: vec![Axis::X],
        },
        &opts,
    );
    let thetas_b = cfg
        .thetas
        .clone()
        .unwrap_or_else(|| (1..60).map(|k| k as f64 * PI / 60.0).collect());
    let panel_b = sweep(
        &SweepGrid {
            particles: vec![cfg.particles],
            thetas: thetas_b,
            gammas: vec![0.0],
            axes: vec![Axis::X],
        },
        &opts,
    );
    let mut ds = base_dataset(
        cfg,
        [
            "panel",
            "J",
            "theta",
            "phi_min",
            "delta_phi_min",
            "branch",
            "fringe_boundary",
            "ref_0.89pi_over_sqrt2J",
            "ref_0.2pi_over_J",
            "root_transcendental",
            "root_sine",
        ],
    );
    for (panel, rows) in [("a", &panel_a), ("b", &panel_b)] {
        for row in rows.iter() {
            let ens = SpinEnsemble::new(row.particles).map_err(classify_error)?;
            let j = ens.j();
            let (phi, delta, branch) = match &row.outcome {
                Ok(r) => (Cell::Float(r.phi_min), Cell::Float(r.delta_phi_min), r.branch),
                Err(_) => (Cell::Empty, Cell::Empty, Branch::Unresolved),
            };
            let roots = stationarity_roots(&ens, row.theta).unwrap_or_default();
            let first = |b: Branch| Cell::opt_float(roots.iter().find(|r| r.branch == b).map(|r| r.phi));
            ds.push(vec![
                panel.into(),
                j.into(),
                row.theta.into(),
                phi,
                delta,
                branch.label().into(),
                Cell::opt_float(fringe_width(&ens, row.theta)),
                (0.89 * PI / (SQRT_2 * j)).into(),
                (0.2 * PI / j).into(),
                first(Branch::Transcendental),
                first(Branch::SineBranch),
            ]);
        }
    }
    Ok(Report {
        dataset: ds,
        summary: None,
        status: Status::Success,
    })
}

pub fn fig3_default_thetas() -> Vec<f64> {
    (1..36).map(|k| k as f64 * PI / 36.0).collect()
}

/// Rows `(gamma, theta, xi_x, xi_y, predictions)` over the theta grid.
pub fn run_fig3(cfg: &RunConfig) -> Result<Report, RunError> {
    let opts = cfg.optimizer_options();
    let ens = cfg.ensemble();
    let gammas = cfg.gammas.clone().unwrap_or_else(|| {
        if cfg.gamma_set {
            vec![cfg.gamma]
        } else {
            vec![0.0, 1000.0]
        }
    });
    let thetas = cfg.thetas.clone().unwrap_or_else(fig3_default_thetas);
    let rows = sweep(
        &SweepGrid {
            particles: vec![cfg.particles],
            thetas: thetas.clone(),
            gammas: gammas.clone(),
            axes: vec![Axis::X, Axis::Y],
        },
        &opts,
    );
    let mut ds = base_dataset(
        cfg,
        [
            "gamma",
            "theta",
            "xi_x_measured",
            "xi_y_measured",
            "xi_predicted_eq8",
            "xi_predicted_eq11",
            "phi_min_x",
            "phi_min_y",
        ],
    )
    .with_meta("N", ens.particles());
    // grid order is theta-major, then gamma, then axis (x, y)
    let mut by_key = std::collections::HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        by_key.insert((i / (2 * gammas.len()), (i / 2) % gammas.len(), row.axis), row);
    }
    let xi = |r: &SweepRow| r.outcome.as_ref().ok().and_then(|o| o.xi);
    let phi = |r: &SweepRow| r.outcome.as_ref().ok().map(|o| o.phi_min);
    for (gi, &gamma) in gammas.iter().enumerate() {
        for (ti, &theta) in thetas.iter().enumerate() {
            let rx = by_key[&(ti, gi, Axis::X)];
            let ry = by_key[&(ti, gi, Axis::Y)];
            ds.push(vec![
                gamma.into(),
                theta.into(),
                Cell::opt_float(xi(rx)),
                Cell::opt_float(xi(ry)),
                Cell::opt_float(predicted_exponent_coherent(&ens, theta)),
                Cell::opt_float(
                    (gamma > 0.0)
                        .then(|| predicted_exponent_dephased(&ens, theta, gamma))
                        .flatten(),
                ),
                Cell::opt_float(phi(rx)),
                Cell::opt_float(phi(ry)),
            ]);
        }
    }
    Ok(Report {
        dataset: ds,
        summary: None,
        status: Status::Success,
    })
}

/// Largest deviation seen for one quantity and where it occurred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Worst {
    pub error: f64,
    pub particles: u64,
    pub theta: f64,
    pub phi: f64,
    pub gamma: f64,
}

pub const ORACLE_QUANTITIES: [&str; 6] = ["J+", "J+^2", "Jz", "Jz^2", "var_x", "var_y"];
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Closed forms vs. dense reference over a grid. Errors are relative to
/// `max(|reference|, J^k)` with `k` the operator degree.
pub fn oracle_equivalence(
    particles: &[u64],
    thetas: &[f64],
    phis: &[f64],
    gammas: &[f64],
    inject_fault: bool,
) -> Result<Vec<(&'static str, Worst)>, Error> {
    let mut worst = [Worst {
        error: 0.0,
        particles: 0,
        theta: 0.0,
        phi: 0.0,
        gamma: 0.0,
    }; 6];
    for &n in particles {
        let ens = SpinEnsemble::new(n)?;
        let j = ens.j();
        for &theta in thetas {
            let oracle = Oracle::new(&ens, theta)?;
            for &phi in phis {
                for &gamma in gammas {
                    let p = ProtocolParams::new(theta, phi, gamma)?;
                    let m = MomentSet::evaluate(&ens, &p, SlopeMode::Exact);
                    let (jz, jz2) = jz_moments(&ens, &p);
                    let (var_x, var_y) = TransverseStats::raw_variances(&m, &ens);
                    let oracle_gamma = if inject_fault { -gamma } else { gamma };
                    let rho = oracle.state(phi, oracle_gamma);
                    let e = |op: Operator| oracle.expect(&rho, op);
                    let ox = e(Operator::Jx).re;
                    let oy = e(Operator::Jy).re;
                    let pairs: [(num_complex::Complex64, num_complex::Complex64, i32); 6] = [
                        (m.jp, e(Operator::JPlus), 1),
                        (m.jp2, e(Operator::JPlusSquared), 2),
                        (jz.into(), e(Operator::Jz), 1),
                        (jz2.into(), e(Operator::JzSquared), 2),
                        (var_x.into(), (e(Operator::JxSquared).re - ox * ox).into(), 2),
                        (var_y.into(), (e(Operator::JySquared).re - oy * oy).into(), 2),
                    ];
                    for (slot, (closed, reference, degree)) in worst.iter_mut().zip(pairs) {
                        let scale = reference.norm().max(j.powi(degree));
                        let err = (closed - reference).norm() / scale;
                        if err.is_nan() || err > slot.error {
                            *slot = Worst {
                                error: err,
                                particles: n,
                                theta,
                                phi,
                                gamma,
                            };
                        }
                    }
                }
            }
        }
    }
    Ok(ORACLE_QUANTITIES.into_iter().zip(worst).collect())
}

pub fn oracle_default_particles() -> Vec<u64> {
    (1..=12).chain([20]).collect()
}

pub const ORACLE_THETAS: [f64; 4] = [0.3, FRAC_PI_4, std::f64::consts::FRAC_PI_2, 2.5];
pub const ORACLE_PHIS: [f64; 5] = [0.0, 0.05, -0.05, 0.3, -0.3];
pub const ORACLE_GAMMAS: [f64; 3] = [0.0, 0.5, 5.0];

pub fn run_oracle_check(cfg: &RunConfig) -> Result<Report, RunError> {
    let particles = if cfg.particles_set {
        vec![cfg.particles]
    } else {
        oracle_default_particles()
    };
    if particles.iter().any(|&n| n > 20) {
        return Err(config_err("oracle-check runs at N <= 20").into());
    }
    let thetas = cfg.thetas.clone().unwrap_or_else(|| ORACLE_THETAS.to_vec());
    let gammas = cfg.gammas.clone().unwrap_or_else(|| ORACLE_GAMMAS.to_vec());
    let results =
        oracle_equivalence(&particles, &thetas, &ORACLE_PHIS, &gammas, cfg.inject_fault).map_err(classify_error)?;
    let mut ds = base_dataset(
        cfg,
        [
            "quantity",
            "max_rel_error",
            "worst_N",
            "worst_theta",
            "worst_phi",
            "worst_gamma",
            "pass",
        ],
    )
    .with_meta("tolerance", crate::dataset::format_float(ORACLE_TOLERANCE));
    let mut text = String::new();
    let mut all_pass = true;
    for (name, w) in &results {
        let pass = w.error <= ORACLE_TOLERANCE;
        all_pass &= pass;
        let _ = writeln!(
            text,
            "{:<6} max rel err {:>10.3e}  {}",
            name,
            w.error,
            if pass { "ok" } else { "FAIL" }
        );
        ds.push(vec![
            (*name).into(),
            w.error.into(),
            Cell::Int(w.particles as i64),
            w.theta.into(),
            w.phi.into(),
            w.gamma.into(),
            pass.into(),
        ]);
    }
    let _ = writeln!(text, "oracle-check: {}", if all_pass { "pass" } else { "FAIL" });
    Ok(Report {
        dataset: ds,
        summary: Some(text),
        status: if all_pass {
            Status::Success
        } else {
            Status::OracleFailure
        },
    })
}

fn run_oracle_dump(cfg: &RunConfig) -> Result<Report, RunError> {
    let ens = cfg.ensemble();
    let oracle = Oracle::new(&ens, cfg.theta).map_err(classify_error)?;
    let phi = cfg.phi_window.map_or(0.0, |w| w.0);
    let rho = oracle.state(phi, cfg.gamma);
    let mut ds = base_dataset(cfg, ["operator", "re", "im"]);
    for op in Operator::ALL {
        let v = oracle.expect(&rho, op);
        ds.push(vec![op.name().into(), v.re.into(), v.im.into()]);
    }
    Ok(Report {
        dataset: ds,
        summary: None,
        status: Status::Success,
    })
}

fn emit(report: &Report, cfg: &RunConfig) -> std::io::Result<()> {
    let to_stdout_summary = cfg.command == Command::OracleCheck;
    if let Some(summary) = &report.summary {
        if to_stdout_summary {
            print!("{summary}");
        } else {
            eprint!("{summary}");
            if !summary.ends_with('\n') {
                eprintln!();
            }
        }
    }
    match &cfg.out {
        Some(path) => report.dataset.write_atomic(Path::new(path), cfg.format),
        None if to_stdout_summary => Ok(()),
        None => {
            print!("{}", report.dataset.render(cfg.format));
            Ok(())
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let file = match &cli.flags.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match parse_config_file(&text) {
                Ok(map) => map,
                Err(e) => {
                    eprintln!("configuration error: {e}");
                    return Status::ConfigError as i32;
                }
            },
            Err(e) => {
                eprintln!("configuration error: cannot read {}: {e}", path.display());
                return Status::ConfigError as i32;
            }
        },
        None => BTreeMap::new(),
    };
    let cfg = match RunConfig::resolve(cli.command, &cli.flags, &file) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return Status::ConfigError as i32;
        }
    };
    match execute(&cfg) {
        Ok(report) => match emit(&report, &cfg) {
            Ok(()) => report.status as i32,
            Err(e) => {
                eprintln!("cannot write output: {e}");
                Status::ConfigError as i32
            }
        },
        Err(e) => {
            eprintln!("{e}");
            match e {
                RunError::Config(_) => Status::ConfigError as i32,
                RunError::Numerical(_) => Status::NumericalFailure as i32,
            }
        }
    }
}
