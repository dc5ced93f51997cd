//! Scenario orchestration: configuration, single runs, parameter sweeps,
//! convergence reports, figure presets and CSV/JSON output.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::{
    observables_series, two_photon_matrix_from, DiagnosticSeries, RegressionMode, RegressionOptions, TwoPhotonMatrix,
    BASIS_LABELS,
};
use crate::entanglement::{concurrence, stark_shift_series, ConcurrenceResult, StarkShiftSeries};
use crate::error::{Error, Result};
use crate::hilbert::build_space;
use crate::model::{pulse_envelope, InitialState, Model, PhysicalParams, PulsePolarization, HBAR};
use crate::propagator::{compute_pinched_trajectory, compute_trajectory, IntegratorOptions, StepStats, TimeGrid, Trajectory};

/// Relative change of the photon-pair count between the full and the half
/// horizon below which the horizon counts as converged.
pub const HORIZON_TOL: f64 = 1e-3;
/// Concurrence change above which a convergence probe is flagged.
pub const CONVERGENCE_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    GCoupling,
    Delta,
    RabiPeak,
    TauFwhm,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] = [SweepAxis::GCoupling, SweepAxis::Delta, SweepAxis::RabiPeak, SweepAxis::TauFwhm];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::GCoupling => "g_coupling",
            SweepAxis::Delta => "delta",
            SweepAxis::RabiPeak => "rabi_peak",
            SweepAxis::TauFwhm => "tau_fwhm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "g" | "g_coupling" => Ok(SweepAxis::GCoupling),
            "delta" => Ok(SweepAxis::Delta),
            "rabi" | "rabi_peak" => Ok(SweepAxis::RabiPeak),
            "tau" | "tau_fwhm" => Ok(SweepAxis::TauFwhm),
            _ => Err(Error::Config(format!(
                "unknown sweep axis '{s}' (expected g_coupling, delta, rabi_peak or tau_fwhm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Everything needed to run one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(flatten)]
    pub params: PhysicalParams,
    pub n_max_h: i64,
    pub n_max_v: i64,
    pub t_max: f64,
    pub n_points: usize,
    /// Double `t_max` (fixed dt) until the horizon converges.
    pub auto_extend: bool,
    /// Upper bound for auto-extension.
    pub max_t_max: f64,
    pub tolerance: f64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub sweep: Option<SweepSpec>,
    pub output_dir: PathBuf,
    #[serde(skip)]
    t0_explicit: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            params: PhysicalParams::default(),
            n_max_h: 3,
            n_max_v: 3,
            t_max: 500.0,
            n_points: 2001,
            auto_extend: true,
            max_t_max: 8000.0,
            tolerance: 1e-9,
            workers: 0,
            sweep: None,
            output_dir: PathBuf::from("out"),
            t0_explicit: false,
        }
    }
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("{key}: expected a number, got {v}"))),
    }
}

fn as_int(key: &str, v: &toml::Value) -> Result<i64> {
    match v {
        toml::Value::Integer(i) => Ok(*i),
        toml::Value::Float(x) if x.fract() == 0.0 && x.is_finite() => Ok(*x as i64),
        _ => Err(Error::Config(format!("{key}: expected an integer, got {v}"))),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    let i = as_int(key, v)?;
    usize::try_from(i).map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {i}")))
}

fn as_str<'v>(key: &str, v: &'v toml::Value) -> Result<&'v str> {
    v.as_str().ok_or_else(|| Error::Config(format!("{key}: expected a string, got {v}")))
}

/// Parse the right-hand side of `key=value` as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.trim().into()),
    }
}

impl ScenarioConfig {
    pub fn with_params(name: impl Into<String>, params: PhysicalParams) -> Self {
        let t0_explicit = params.t0 != 4.0 * params.tau_fwhm;
        Self { name: name.into(), params, t0_explicit, ..Self::default() }
    }

    /// Set one configuration key. `t0` follows `4 · tau_fwhm` until set explicitly.
    pub fn set(&mut self, key: &str, value: &toml::Value) -> Result<()> {
        let p = &mut self.params;
        match key {
            "gamma_e_rr" => p.gamma_e_rr = as_f64(key, value)?,
            "gamma_b_rr" => p.gamma_b_rr = as_f64(key, value)?,
            "gamma_e_d" => p.gamma_e_d = as_f64(key, value)?,
            "gamma_b_d" => p.gamma_b_d = as_f64(key, value)?,
            "e_binding" => p.e_binding = as_f64(key, value)?,
            "delta" => p.delta = as_f64(key, value)?,
            "g_coupling" => p.g_coupling = as_f64(key, value)?,
            "kappa" => p.kappa = as_f64(key, value)?,
            "rabi_peak" => p.rabi_peak = as_f64(key, value)?,
            "tau_fwhm" => {
                p.tau_fwhm = as_f64(key, value)?;
                if !self.t0_explicit {
                    p.t0 = 4.0 * p.tau_fwhm;
                }
            }
            "t0" => {
                p.t0 = as_f64(key, value)?;
                self.t0_explicit = true;
            }
            "pulse_polarization" => {
                p.pulse_polarization = match as_str(key, value)?.to_ascii_lowercase().as_str() {
                    "horizontal" | "h" => PulsePolarization::Horizontal,
                    "diagonal" | "d" => PulsePolarization::Diagonal,
                    "none" | "off" => PulsePolarization::None,
                    other => {
                        return Err(Error::Config(format!(
                            "pulse_polarization: expected horizontal, diagonal or none, got '{other}'"
                        )))
                    }
                }
            }
            "initial_state" => {
                p.initial_state = match as_str(key, value)?.to_ascii_lowercase().as_str() {
                    "ground" | "g" => InitialState::Ground,
                    "biexciton" | "b" => InitialState::Biexciton,
                    other => {
                        return Err(Error::Config(format!(
                            "initial_state: expected ground or biexciton, got '{other}'"
                        )))
                    }
                }
            }
            "n_max_h" => self.n_max_h = as_int(key, value)?,
            "n_max_v" => self.n_max_v = as_int(key, value)?,
            "t_max" => self.t_max = as_f64(key, value)?,
            "n_points" => self.n_points = as_usize(key, value)?,
            "auto_extend" => {
                self.auto_extend = value
                    .as_bool()
                    .ok_or_else(|| Error::Config(format!("auto_extend: expected true or false, got {value}")))?
            }
            "max_t_max" => self.max_t_max = as_f64(key, value)?,
            "tolerance" => self.tolerance = as_f64(key, value)?,
            "workers" => self.workers = as_usize(key, value)?,
            "name" => self.name = as_str(key, value)?.to_string(),
            "output_dir" => self.output_dir = PathBuf::from(as_str(key, value)?),
            "sweep_axis" => {
                let axis = SweepAxis::parse(as_str(key, value)?)?;
                match &mut self.sweep {
                    Some(s) => s.axis = axis,
                    None => self.sweep = Some(SweepSpec { axis, values: Vec::new() }),
                }
            }
            "sweep_values" => {
                let arr = value
                    .as_array()
                    .ok_or_else(|| Error::Config(format!("sweep_values: expected an array, got {value}")))?;
                let values = arr.iter().map(|v| as_f64(key, v)).collect::<Result<Vec<_>>>()?;
                match &mut self.sweep {
                    Some(s) => s.values = values,
                    None => self.sweep = Some(SweepSpec { axis: SweepAxis::GCoupling, values }),
                }
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{spec}'")))?;
        self.set(key.trim(), &parse_value(raw.trim()))
    }

    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // t0 is applied last so an explicit value wins regardless of key order
        let mut t0 = None;
        for (key, value) in &table {
            if key == "t0" {
                t0 = Some(value);
            } else {
                self.set(key, value)?;
            }
        }
        if let Some(v) = t0 {
            self.set("t0", v)?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_toml(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut c = Self::from_toml_str(&fs::read_to_string(path)?)?;
        if c.name == "scenario" {
            if let Some(stem) = path.file_stem() {
                c.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        build_space(self.n_max_h, self.n_max_v)?;
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::Config(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.n_points < 3 {
            return Err(Error::Config(format!("n_points must be at least 3, got {}", self.n_points)));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-3) {
            return Err(Error::Config(format!("tolerance must lie in (0, 1e-3], got {}", self.tolerance)));
        }
        if self.auto_extend && (self.max_t_max.is_nan() || self.max_t_max < self.t_max) {
            return Err(Error::Config(format!(
                "max_t_max = {} is below t_max = {}",
                self.max_t_max, self.t_max
            )));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            if let Some(v) = s.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Config(format!("sweep value {v} is not finite")));
            }
        }
        Ok(())
    }

    /// The same scenario with one swept parameter replaced.
    pub fn with_axis_value(&self, axis: SweepAxis, value: f64) -> Self {
        let mut c = self.clone();
        let v = toml::Value::Float(value);
        c.set(axis.name(), &v).expect("sweep axes are valid keys");
        c.sweep = None;
        c
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.params.clone(), build_space(self.n_max_h, self.n_max_v)?)
    }

    pub fn regression_options(&self) -> RegressionOptions {
        RegressionOptions { integrator: IntegratorOptions::with_tol(self.tolerance), mode: RegressionMode::Split }
    }

    fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::span(self.t_max, self.n_points)
    }
}

/// Run `f` on a pool of `workers` threads (0: all cores).
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Horizon used at each auto-extension step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HorizonStep {
    pub t_max: f64,
    pub n_points: usize,
    pub horizon_change: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    /// Horizon actually used after auto-extension.
    pub t_max: f64,
    pub n_points: usize,
    pub horizon_steps: Vec<HorizonStep>,
    pub horizon_converged: bool,
    pub two_photon: TwoPhotonMatrix,
    pub concurrence: ConcurrenceResult,
    pub diagnostics: DiagnosticSeries,
    pub stark: StarkShiftSeries,
    pub min_eigenvalue: f64,
    pub max_trace_drift: f64,
    pub max_hermiticity_drift: f64,
    #[serde(skip)]
    pub stats: StepStats,
    pub convergence: Option<ConvergenceReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicsResult {
    pub config: ScenarioConfig,
    pub diagnostics: DiagnosticSeries,
    pub stark: StarkShiftSeries,
    /// Drive envelope ħΩ(t) in μeV on the grid.
    pub pulse: Vec<f64>,
    pub min_eigenvalue: f64,
    pub max_trace_drift: f64,
    pub max_hermiticity_drift: f64,
    pub corrections: usize,
}

fn dynamics_inner(config: &ScenarioConfig) -> Result<(Trajectory, DynamicsResult)> {
    config.validate()?;
    let model = config.model()?;
    let traj = compute_trajectory(&model, &config.grid()?, IntegratorOptions::with_tol(config.tolerance))?;
    let diagnostics = observables_series(&traj, &model.space)?;
    let stark = stark_shift_series(&diagnostics, &config.params);
    let pulse = diagnostics.times.iter().map(|&t| HBAR * pulse_envelope(t, &config.params)).collect();
    let result = DynamicsResult {
        config: config.clone(),
        stark,
        pulse,
        min_eigenvalue: traj.min_eigenvalue(),
        max_trace_drift: traj.max_trace_drift,
        max_hermiticity_drift: traj.max_hermiticity_drift,
        corrections: traj.corrections.len(),
        diagnostics,
    };
    Ok((traj, result))
}

/// Trajectory and single-time diagnostics only.
pub fn run_dynamics(config: &ScenarioConfig) -> Result<DynamicsResult> {
    with_pool(config.workers, || dynamics_inner(config).map(|r| r.1))?.map_err(|e| e.in_scenario(&config.name))
}

fn scenario_inner(config: &ScenarioConfig) -> Result<ScenarioResult> {
    config.validate()?;
    let model = config.model()?;
    let opts = config.regression_options();
    let mut current = config.clone();
    let mut steps = Vec::new();
    let (traj, tp) = loop {
        let traj = compute_pinched_trajectory(&model, &current.grid()?, opts.integrator)?;
        let tp = two_photon_matrix_from(&traj, &model, opts)?;
        let change = tp.horizon_change();
        steps.push(HorizonStep { t_max: current.t_max, n_points: current.n_points, horizon_change: change });
        let next = 2.0 * current.t_max;
        if !config.auto_extend || change < HORIZON_TOL || next > config.max_t_max {
            break (traj, tp);
        }
        info!("{}: horizon change {change:.2e} at t_max = {} ps, extending", config.name, current.t_max);
        current.t_max = next;
        current.n_points = 2 * (current.n_points - 1) + 1;
    };
    let last = *steps.last().expect("at least one horizon");
    let horizon_converged = last.horizon_change < HORIZON_TOL;
    if !horizon_converged {
        warn!(
            "{}: photon-pair count still changes by {:.2e} between t_max/2 and t_max = {} ps",
            config.name, last.horizon_change, last.t_max
        );
    }
    let diagnostics = observables_series(&traj, &model.space)?;
    let stark = stark_shift_series(&diagnostics, &config.params);
    let conc = concurrence(&tp)?;
    Ok(ScenarioResult {
        config: config.clone(),
        t_max: last.t_max,
        n_points: last.n_points,
        horizon_steps: steps,
        horizon_converged,
        two_photon: tp,
        concurrence: conc,
        diagnostics,
        stark,
        min_eigenvalue: traj.min_eigenvalue(),
        max_trace_drift: traj.max_trace_drift,
        max_hermiticity_drift: traj.max_hermiticity_drift,
        stats: traj.stats,
        convergence: None,
    })
}

/// Trajectory, diagnostics, tomography, concurrence and Stark shifts.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    with_pool(config.workers, || scenario_inner(config))?.map_err(|e| e.in_scenario(&config.name))
}

/// Per-value summary of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub concurrence: f64,
    pub coherence_bound: f64,
    pub alpha_hh: f64,
    pub beta_hv: f64,
    pub beta_vh: f64,
    pub alpha_vv: f64,
    pub gamma_re: f64,
    pub gamma_im: f64,
    pub stark_peak_hh: f64,
    pub stark_peak_vv: f64,
    pub stark_avg_hh: f64,
    pub stark_avg_vv: f64,
    pub ettocf_max: f64,
    pub t_max: f64,
    pub horizon_change: f64,
}

impl SweepSummary {
    pub fn of(r: &ScenarioResult) -> Self {
        let tp = &r.two_photon;
        Self {
            concurrence: r.concurrence.concurrence,
            coherence_bound: r.concurrence.coherence_bound,
            alpha_hh: tp.alpha_hh(),
            beta_hv: tp.beta_hv(),
            beta_vh: tp.beta_vh(),
            alpha_vv: tp.alpha_vv(),
            gamma_re: tp.gamma().re,
            gamma_im: tp.gamma().im,
            stark_peak_hh: r.stark.peak_hh,
            stark_peak_vv: r.stark.peak_vv,
            stark_avg_hh: r.stark.window_avg_hh,
            stark_avg_vv: r.stark.window_avg_vv,
            ettocf_max: r.diagnostics.ettocf.iter().copied().fold(0.0, f64::max),
            t_max: r.t_max,
            horizon_change: tp.horizon_change(),
        }
    }

    const HEADER: [&'static str; 15] = [
        "concurrence",
        "coherence_bound",
        "alpha_hh",
        "beta_hv",
        "beta_vh",
        "alpha_vv",
        "gamma_re",
        "gamma_im",
        "stark_peak_hh",
        "stark_peak_vv",
        "stark_avg_hh",
        "stark_avg_vv",
        "ettocf_max",
        "t_max",
        "horizon_change",
    ];

    fn fields(&self) -> [f64; 15] {
        [
            self.concurrence,
            self.coherence_bound,
            self.alpha_hh,
            self.beta_hv,
            self.beta_vh,
            self.alpha_vv,
            self.gamma_re,
            self.gamma_im,
            self.stark_peak_hh,
            self.stark_peak_vv,
            self.stark_avg_hh,
            self.stark_avg_vv,
            self.ettocf_max,
            self.t_max,
            self.horizon_change,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub value: f64,
    pub summary: Option<SweepSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub name: String,
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Run one scenario per value of `axis`, concurrently on the configured
/// worker pool. Failures are recorded per row; rows are ordered by index.
pub fn sweep(config: &ScenarioConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepTable> {
    let base = ScenarioConfig { sweep: Some(SweepSpec { axis, values: values.to_vec() }), ..config.clone() };
    base.validate()?;
    let rows = with_pool(config.workers, || {
        values
            .par_iter()
            .enumerate()
            .map(|(index, &value)| {
                let cfg = base.with_axis_value(axis, value);
                match scenario_inner(&cfg) {
                    Ok(r) => SweepRow { index, value, summary: Some(SweepSummary::of(&r)), error: None },
                    Err(e) => {
                        warn!("{} {} = {value}: {e}", config.name, axis.name());
                        SweepRow { index, value, summary: None, error: Some(e.to_string()) }
                    }
                }
            })
            .collect::<Vec<_>>()
    })?;
    Ok(SweepTable { name: config.name.clone(), axis, rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceProbe {
    pub label: &'static str,
    pub t_max: f64,
    pub n_points: usize,
    pub n_max: i64,
    pub concurrence: Option<f64>,
    pub delta: Option<f64>,
    pub error: Option<String>,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub name: String,
    pub base_t_max: f64,
    pub base_n_points: usize,
    pub base_concurrence: Option<f64>,
    pub base_error: Option<String>,
    pub horizon_steps: Vec<HorizonStep>,
    pub probes: Vec<ConvergenceProbe>,
    pub threshold: f64,
}

impl ConvergenceReport {
    pub fn flagged(&self) -> bool {
        self.base_error.is_some() || self.probes.iter().any(|p| p.flagged)
    }
}

/// Rerun the scenario with the horizon doubled, the grid refined and one
/// more photon per mode, and compare concurrences. Auto-extension applies to
/// the base run only; the probes use its final horizon.
pub fn convergence_report(config: &ScenarioConfig) -> ConvergenceReport {
    let inner = || {
        let mut report = ConvergenceReport {
            name: config.name.clone(),
            base_t_max: config.t_max,
            base_n_points: config.n_points,
            base_concurrence: None,
            base_error: None,
            horizon_steps: Vec::new(),
            probes: Vec::new(),
            threshold: CONVERGENCE_TOL,
        };
        let base = match scenario_inner(config) {
            Ok(r) => r,
            Err(e) => {
                report.base_error = Some(e.to_string());
                return report;
            }
        };
        let c0 = base.concurrence.concurrence;
        report.base_t_max = base.t_max;
        report.base_n_points = base.n_points;
        report.base_concurrence = Some(c0);
        report.horizon_steps = base.horizon_steps.clone();

        let fixed = ScenarioConfig { t_max: base.t_max, n_points: base.n_points, auto_extend: false, ..config.clone() };
        let probes: [(&'static str, ScenarioConfig); 3] = [
            ("t_max_doubled", ScenarioConfig { t_max: 2.0 * fixed.t_max, n_points: 2 * (fixed.n_points - 1) + 1, ..fixed.clone() }),
            ("grid_doubled", ScenarioConfig { n_points: 2 * (fixed.n_points - 1) + 1, ..fixed.clone() }),
            ("n_max_plus_one", ScenarioConfig { n_max_h: fixed.n_max_h + 1, n_max_v: fixed.n_max_v + 1, ..fixed.clone() }),
        ];
        report.probes = probes
            .par_iter()
            .map(|(label, cfg)| {
                let (concurrence, error) = match scenario_inner(cfg) {
                    Ok(r) => (Some(r.concurrence.concurrence), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                let delta = concurrence.map(|c| (c - c0).abs());
                ConvergenceProbe {
                    label,
                    t_max: cfg.t_max,
                    n_points: cfg.n_points,
                    n_max: cfg.n_max_h.max(cfg.n_max_v),
                    concurrence,
                    delta,
                    flagged: delta.is_none_or(|d| d > CONVERGENCE_TOL),
                    error,
                }
            })
            .collect();
        report
    };
    match with_pool(config.workers, inner) {
        Ok(r) => r,
        Err(e) => ConvergenceReport {
            name: config.name.clone(),
            base_t_max: config.t_max,
            base_n_points: config.n_points,
            base_concurrence: None,
            base_error: Some(e.to_string()),
            horizon_steps: Vec::new(),
            probes: Vec::new(),
            threshold: CONVERGENCE_TOL,
        },
    }
}

/// What a preset entry computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetKind {
    Sweep,
    Tomography,
    Dynamics,
}

#[derive(Debug, Clone)]
pub struct PresetEntry {
    pub kind: PresetKind,
    pub config: ScenarioConfig,
}

pub const PRESET_NAMES: [&str; 20] = [
    "fig2a", "fig2b", "fig3a", "fig3b", "fig3c", "fig3d", "fig4", "fig5a", "fig5b", "fig6a", "fig6b", "fig7a", "fig7b",
    "fig8", "fig9a", "fig9b", "fig9c", "fig9d", "fig2", "fig3",
];

/// Coupling strengths of the g sweeps, 10–150 μeV.
pub fn preset_g_values() -> Vec<f64> {
    (1..=15).map(|k| 10.0 * k as f64).collect()
}

fn preset_params(initial: InitialState, pulse: PulsePolarization, delta: f64, g: f64) -> PhysicalParams {
    PhysicalParams { initial_state: initial, pulse_polarization: pulse, delta, g_coupling: g, ..PhysicalParams::default() }
}

/// Scenarios behind a figure. `fig2` and `fig3` expand to all panels.
pub fn preset(name: &str, base: &ScenarioConfig) -> Result<Vec<PresetEntry>> {
    use InitialState::{Biexciton, Ground};
    use PulsePolarization::{Diagonal, Horizontal, None as NoPulse};
    let entry = |kind, label: String, params: PhysicalParams| {
        let mut config = ScenarioConfig { name: label, params, t0_explicit: false, ..base.clone() };
        let tau = config.params.tau_fwhm;
        config.params.t0 = 4.0 * tau;
        if kind == PresetKind::Sweep {
            config.sweep = Some(SweepSpec { axis: SweepAxis::GCoupling, values: preset_g_values() });
        }
        PresetEntry { kind, config }
    };
    let sweep_deltas = |fig: &str, initial, pulse, deltas: &[f64]| -> Vec<PresetEntry> {
        deltas
            .iter()
            .map(|&d| entry(PresetKind::Sweep, format!("{fig}_delta{d}"), preset_params(initial, pulse, d, 0.0)))
            .collect()
    };
    let pair = |fig: &str, kind, initial, pulse, delta, gs: &[f64]| -> Vec<PresetEntry> {
        gs.iter()
            .map(|&g| entry(kind, format!("{fig}_g{g}"), preset_params(initial, pulse, delta, g)))
            .collect()
    };
    let out = match name {
        "fig2a" => sweep_deltas("fig2a", Biexciton, NoPulse, &[0.0, 20.0, 40.0]),
        "fig2b" => sweep_deltas("fig2b", Ground, Horizontal, &[0.0, 20.0, 40.0]),
        "fig2" => [preset("fig2a", base)?, preset("fig2b", base)?].concat(),
        "fig3a" => sweep_deltas("fig3a", Biexciton, NoPulse, &[0.0]),
        "fig3b" => sweep_deltas("fig3b", Ground, Horizontal, &[0.0]),
        "fig3c" => sweep_deltas("fig3c", Biexciton, NoPulse, &[40.0]),
        "fig3d" => sweep_deltas("fig3d", Ground, Horizontal, &[40.0]),
        "fig3" => ["fig3a", "fig3b", "fig3c", "fig3d"]
            .iter()
            .map(|n| preset(n, base))
            .collect::<Result<Vec<_>>>()?
            .concat(),
        "fig4" => sweep_deltas("fig4", Ground, Diagonal, &[0.0, 40.0]),
        "fig5a" => pair("fig5a", PresetKind::Tomography, Ground, Horizontal, 0.0, &[45.0]),
        "fig5b" => pair("fig5b", PresetKind::Tomography, Ground, Horizontal, 0.0, &[130.0]),
        "fig6a" => pair("fig6a", PresetKind::Dynamics, Ground, Horizontal, 0.0, &[45.0]),
        "fig6b" => pair("fig6b", PresetKind::Dynamics, Ground, Horizontal, 0.0, &[130.0]),
        "fig7a" => pair("fig7a", PresetKind::Tomography, Ground, Diagonal, 0.0, &[45.0]),
        "fig7b" => pair("fig7b", PresetKind::Tomography, Ground, Diagonal, 0.0, &[130.0]),
        "fig8" => pair("fig8", PresetKind::Dynamics, Ground, Diagonal, 0.0, &[45.0, 130.0]),
        "fig9a" => pair("fig9a", PresetKind::Dynamics, Biexciton, NoPulse, 0.0, &[20.0, 130.0]),
        "fig9b" => pair("fig9b", PresetKind::Dynamics, Ground, Horizontal, 0.0, &[20.0, 130.0]),
        "fig9c" => pair("fig9c", PresetKind::Dynamics, Ground, Horizontal, 40.0, &[20.0, 130.0]),
        "fig9d" => pair("fig9d", PresetKind::Dynamics, Ground, Diagonal, 0.0, &[20.0, 130.0]),
        _ => {
            return Err(Error::Config(format!(
                "unknown preset '{name}' (available: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(out)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Per-time diagnostics, one row per grid point.
pub fn write_dynamics_csv(path: &Path, diag: &DiagnosticSeries, stark: &StarkShiftSeries, pulse: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t", "pulse", "rho_gg", "rho_hh", "rho_vv", "rho_bb", "rho_hv_re", "rho_hv_im", "n_h", "n_v", "ettocf",
        "stark_hh", "stark_vv",
    ])?;
    for i in 0..diag.len() {
        w.write_record([
            fmt(diag.times[i]),
            fmt(pulse[i]),
            fmt(diag.rho_gg[i]),
            fmt(diag.rho_hh[i]),
            fmt(diag.rho_vv[i]),
            fmt(diag.rho_bb[i]),
            fmt(diag.rho_hv[i].re),
            fmt(diag.rho_hv[i].im),
            fmt(diag.n_h[i]),
            fmt(diag.n_v[i]),
            fmt(diag.ettocf[i]),
            fmt(stark.delta_hh[i]),
            fmt(stark.delta_vv[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-photon matrix in long format: one row per element.
pub fn write_tomography_csv(path: &Path, tp: &TwoPhotonMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "re", "im"])?;
    for r in 0..4 {
        for c in 0..4 {
            let z = tp.matrix[(r, c)];
            w.write_record([BASIS_LABELS[r], BASIS_LABELS[c], &fmt(z.re), &fmt(z.im)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, table: &SweepTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index", table.axis.name(), "status"];
    header.extend(SweepSummary::HEADER);
    header.push("error");
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![row.index.to_string(), fmt(row.value)];
        match &row.summary {
            Some(s) => {
                rec.push("ok".into());
                rec.extend(s.fields().iter().map(|&x| fmt(x)));
            }
            None => {
                rec.push("failed".into());
                rec.extend(std::iter::repeat_n(String::new(), SweepSummary::HEADER.len()));
            }
        }
        rec.push(row.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Files written for one scenario.
pub fn write_scenario(dir: &Path, r: &ScenarioResult) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let name = &r.config.name;
    let tomo = dir.join(format!("{name}_tomography.csv"));
    let dynamics = dir.join(format!("{name}_dynamics.csv"));
    let summary = dir.join(format!("{name}_summary.json"));
    write_tomography_csv(&tomo, &r.two_photon)?;
    let pulse: Vec<f64> = r.diagnostics.times.iter().map(|&t| HBAR * pulse_envelope(t, &r.config.params)).collect();
    write_dynamics_csv(&dynamics, &r.diagnostics, &r.stark, &pulse)?;
    write_json(&summary, r)?;
    Ok(vec![tomo, dynamics, summary])
}

pub fn write_dynamics(dir: &Path, r: &DynamicsResult) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let path = dir.join(format!("{}_dynamics.csv", r.config.name));
    write_dynamics_csv(&path, &r.diagnostics, &r.stark, &r.pulse)?;
    Ok(vec![path])
}

pub fn write_sweep(dir: &Path, t: &SweepTable) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let path = dir.join(format!("{}_sweep.csv", t.name));
    write_sweep_csv(&path, t)?;
    Ok(vec![path])
}
