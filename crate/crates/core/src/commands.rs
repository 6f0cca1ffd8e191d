//! The five front-end commands. Each returns a [`RunReport`] and writes its
//! CSV series into the output directory.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::observer::{
    build_general_estimator, build_identity_estimator, check_stability, closed_loop_rate, design_gain, simulate,
    verify_estimator_conditions, EstimatorOperators, GainDesign, GainSpec, ModalSystem, Residuals, StabilityCheck,
    TrajectoryRecord, RESIDUAL_TOL,
};
use crate::regional::{
    decay_verdict, error_floor, error_norm_series, fit_decay, DecayFit, DecayVerdict, ErrorTarget, NormKind,
    RegionNorm, FLOOR_FACTOR,
};
use crate::report::{fmt_f64, ser_f64};
use crate::scenario::{EstimatorKind, InitialSpec, Scenario};
use crate::sensing::{build_output_matrix, SensorSpec};
use crate::spectral::{build_mode_set, Mode, ModeSet, Rectangle, SlowSpec, SlowSplit};
use crate::strategic::{
    basis_mode_set, check_strategic, placement_predicate_point, placement_scan, predicate_center, sensor_margin,
    AnalysisBasis, PlacementVerdict, ScanSetup, StrategicReport, DEFAULT_RANK_TOL,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_RESOLUTION: usize = 41;

/// Fractions along a bad lattice line tried when placing the counterexample sensor.
const CANDIDATE_FRACTIONS: [f64; 9] = [0.3, 0.7, 0.5, 0.2, 0.8, 0.37, 0.63, 0.13, 0.87];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Simulate,
    Counterexample,
    Scan,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Simulate => "simulate",
            Command::Counterexample => "counterexample",
            Command::Scan => "scan",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub resolution: usize,
    /// Scan worker threads; 0 uses the available parallelism.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub tool_version: &'static str,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    /// Files written into the output directory, by name.
    pub files: Vec<String>,
    /// Canonical scenario text; parses back to the scenario that was run.
    pub config: String,
}

impl RunReport {
    fn new(command: Command, scenario: &Scenario) -> Self {
        Self {
            command: command.name(),
            tool_version: TOOL_VERSION,
            seed: scenario.seed,
            check: None,
            simulation: None,
            counterexample: None,
            scan: None,
            verify: None,
            files: vec![],
            config: scenario.to_text(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SensorPredicate {
    pub index: usize,
    pub kind: &'static str,
    /// Location the closed-form predicate is evaluated at; absent for
    /// sensors without one.
    pub center: Option<[f64; 2]>,
    pub global: Option<PlacementVerdict>,
    pub regional: Option<PlacementVerdict>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSection {
    pub global: StrategicReport,
    pub regional: StrategicReport,
    #[serde(serialize_with = "ser_f64")]
    pub margin_global: f64,
    #[serde(serialize_with = "ser_f64")]
    pub margin_regional: f64,
    pub horizon: f64,
    pub sensors: Vec<SensorPredicate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainSection {
    pub kind: &'static str,
    pub design: Option<GainDesign>,
    /// Why the requested design was refused, verbatim.
    pub error: Option<String>,
    /// Slow modes the gain was redesigned on after a refusal.
    pub fallback_slow_modes: Option<Vec<Mode>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSection {
    pub kind: &'static str,
    pub k: usize,
    pub residuals: Residuals,
    pub residuals_pass: bool,
    /// `−max Re eig(L)`, the reference rate of the decay verdicts.
    #[serde(serialize_with = "ser_f64")]
    pub designed_rate: f64,
    pub stability: StabilityCheck,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormSummary {
    /// `omega` for the region, `Omega` for the whole domain.
    pub region: &'static str,
    pub norm: &'static str,
    pub initial: f64,
    pub floor: f64,
    pub fit: Option<DecayFit>,
    /// Why no fit is reported (e.g. the error fell below the positivity floor).
    pub fit_note: Option<String>,
    pub verdict: DecayVerdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSection {
    pub basis_domain: Rectangle,
    pub modes: usize,
    pub slow_modes: Vec<Mode>,
    pub sensors: usize,
    pub gain: GainSection,
    pub estimator: EstimatorSection,
    pub samples: usize,
    pub dt: f64,
    pub halving_change: f64,
    pub norms: Vec<NormSummary>,
    /// Verdict of the `H1(omega)` series.
    pub verdict: DecayVerdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictPair {
    pub global: bool,
    pub regional: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleSection {
    pub sensors: Vec<SensorSpec>,
    pub auto_placed: bool,
    pub verdicts: VerdictPair,
    pub global: StrategicReport,
    pub regional: StrategicReport,
    /// Tail floor of the `H1(Omega)` error under the global estimator.
    pub omega_floor: f64,
    pub omega_initial: f64,
    pub omega_floor_positive: bool,
    /// Tail floor of the `H1(omega)` error of the estimator built on the region's basis.
    pub regional_floor: f64,
    pub regional_initial: f64,
    pub regional_ratio: f64,
    pub regional_decayed: bool,
    pub global_simulation: SimulationSection,
    pub regional_simulation: SimulationSection,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanSection {
    pub template: &'static str,
    pub resolution: usize,
    pub rows: usize,
    pub flagged: usize,
    /// Largest global margin among predicate-flagged cells (0 when none).
    pub max_flagged_margin_global: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifySection {
    pub estimator: &'static str,
    pub k: usize,
    pub residuals: Residuals,
    pub tolerance: f64,
    pub reconstruction_pass: bool,
    pub sylvester_pass: bool,
    pub input_pass: bool,
    pub pass: bool,
}

pub fn run(command: Command, scenario: &Scenario, out: &Path, opts: &RunOptions) -> Result<RunReport> {
    match command {
        Command::Check => cmd_check(scenario),
        Command::Simulate => cmd_simulate(scenario, out),
        Command::Counterexample => cmd_counterexample(scenario, out),
        Command::Scan => cmd_scan(scenario, out, opts),
        Command::Verify => cmd_verify(scenario),
    }
}

fn require_sensors(scenario: &Scenario) -> Result<()> {
    if scenario.sensors.is_empty() {
        return Err(Error::config("sensors", "at least one sensor is required (sensors.0.kind = ...)"));
    }
    Ok(())
}

fn global_modes(scenario: &Scenario) -> ModeSet {
    build_mode_set(scenario.domain, scenario.orders.0, scenario.orders.1, scenario.shift)
}

fn slow_members(ms: &ModeSet, slow: SlowSpec) -> Result<Vec<Mode>> {
    Ok(SlowSplit::new(ms, slow)?.slow_indices().iter().map(|&k| ms.modes()[k]).collect())
}

pub fn cmd_check(scenario: &Scenario) -> Result<RunReport> {
    require_sensors(scenario)?;
    let sc = scenario;
    let ms_g = basis_mode_set(AnalysisBasis::Global, &sc.domain, &sc.region, sc.orders, sc.shift)?;
    let ms_r = basis_mode_set(AnalysisBasis::Regional, &sc.domain, &sc.region, sc.orders, sc.shift)?;
    let global = check_strategic(&sc.sensors, &ms_g, sc.slow, AnalysisBasis::Global, DEFAULT_RANK_TOL)?;
    let regional = check_strategic(&sc.sensors, &ms_r, sc.slow, AnalysisBasis::Regional, DEFAULT_RANK_TOL)?;
    let slow_g = slow_members(&ms_g, sc.slow)?;
    let slow_r = slow_members(&ms_r, sc.slow)?;
    let sensors = sc
        .sensors
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let center = predicate_center(s);
            SensorPredicate {
                index,
                kind: s.kind(),
                center,
                global: center.map(|c| placement_predicate_point(&sc.domain, c, &slow_g)),
                regional: center.map(|c| placement_predicate_point(&sc.region, c, &slow_r)),
            }
        })
        .collect();
    let mut report = RunReport::new(Command::Check, scenario);
    report.check = Some(CheckSection {
        margin_global: sensor_margin(&sc.sensors, &ms_g, sc.slow, sc.horizon)?,
        margin_regional: sensor_margin(&sc.sensors, &ms_r, sc.slow, sc.horizon)?,
        horizon: sc.horizon,
        global,
        regional,
        sensors,
    });
    Ok(report)
}

/// Designs the gain; a refused design on an undetectable or infeasible slow
/// block is recorded and redone on the largest designable prefix-greedy
/// subset of slow modes (possibly empty, giving `H = 0` on the slow rows).
fn design_with_fallback(system: &ModalSystem, spec: &GainSpec) -> Result<(DMatrix<f64>, GainSection)> {
    let kind = spec.kind();
    match design_gain(system, spec) {
        Ok(design) => Ok((
            design.h.clone(),
            GainSection {
                kind,
                design: Some(design),
                error: None,
                fallback_slow_modes: None,
            },
        )),
        Err(err @ (Error::UndetectableSlowMode { .. } | Error::GainDesignInfeasible(_))) => {
            let mut keep: Vec<usize> = Vec::new();
            for &idx in &system.slow {
                let mut trial = keep.clone();
                trial.push(idx);
                let sub = ModalSystem {
                    slow: trial.clone(),
                    ..system.clone()
                };
                match design_gain(&sub, spec) {
                    Ok(_) => keep = trial,
                    Err(Error::UndetectableSlowMode { .. } | Error::GainDesignInfeasible(_)) => {}
                    Err(other) => return Err(other),
                }
            }
            let sub = ModalSystem {
                slow: keep.clone(),
                ..system.clone()
            };
            let design = design_gain(&sub, spec)?;
            Ok((
                design.h.clone(),
                GainSection {
                    kind,
                    design: Some(design),
                    error: Some(err.to_string()),
                    fallback_slow_modes: Some(keep.iter().map(|&k| system.modes[k]).collect()),
                },
            ))
        }
        Err(other) => Err(other),
    }
}

/// Gain and estimator operators for the scenario's estimator kind.
fn build_estimator(scenario: &Scenario, system: &ModalSystem) -> Result<(EstimatorOperators, GainSection)> {
    match &scenario.estimator {
        EstimatorKind::Identity => {
            let (h, gain) = design_with_fallback(system, &scenario.gain)?;
            Ok((build_identity_estimator(system, &h)?, gain))
        }
        EstimatorKind::General { rates } => {
            let k = rates.len();
            if let GainSpec::Explicit { h } = &scenario.gain {
                if h.shape() == (k, system.q()) {
                    let gain = GainSection {
                        kind: "explicit",
                        design: None,
                        error: None,
                        fallback_slow_modes: None,
                    };
                    return Ok((build_general_estimator(system, rates, h)?, gain));
                }
            }
            if k != system.slow.len() {
                return Err(Error::config(
                    "estimator.rates",
                    format!(
                        "a general estimator with {k} rates needs either an explicit {k}x{} gain or \
                         exactly one rate per slow mode ({})",
                        system.q(),
                        system.slow.len()
                    ),
                ));
            }
            let design = design_gain(system, &scenario.gain)?;
            let h = design.h.select_rows(&system.slow);
            let gain = GainSection {
                kind: scenario.gain.kind(),
                design: Some(design),
                error: None,
                fallback_slow_modes: None,
            };
            Ok((build_general_estimator(system, rates, &h)?, gain))
        }
    }
}

fn estimator_kind(scenario: &Scenario) -> &'static str {
    match scenario.estimator {
        EstimatorKind::Identity => "identity",
        EstimatorKind::General { .. } => "general",
    }
}

struct SimulationRun {
    section: SimulationSection,
    traj: TrajectoryRecord,
    system: ModalSystem,
    /// Norm series in the order of `section.norms`.
    series: Vec<Vec<f64>>,
}

/// Builds the system on `ms`, simulates and measures the error over each of `regions`.
fn run_simulation(
    scenario: &Scenario,
    ms: &ModeSet,
    z0: &DVector<f64>,
    regions: &[(&'static str, Rectangle)],
) -> Result<SimulationRun> {
    let output = build_output_matrix(&scenario.sensors, ms)?;
    let (b, input) = scenario.input_for(ms.len())?;
    let system = ModalSystem::new(ms, &output, b, scenario.slow)?;
    let (ops, gain) = build_estimator(scenario, &system)?;
    let residuals = verify_estimator_conditions(&ops, &system)?;
    let designed_rate = closed_loop_rate(&ops.l);
    let stability = check_stability(&ops.l, designed_rate);
    let w0 = scenario.observer_state(ops.k())?;
    let traj = simulate(&system, &ops, z0, &w0, &input, scenario.t_final, scenario.dt)?;

    let mut norms = Vec::new();
    let mut series = Vec::new();
    for &(label, rect) in regions {
        let rn = RegionNorm::new(ms.domain(), ms.modes(), &rect)?;
        for kind in [NormKind::L2, NormKind::H1] {
            let values = error_norm_series(&traj.state, &traj.estimate, &rn, kind, &ErrorTarget::FullState)?;
            let (fit, fit_note) = match fit_decay(&traj.times, &values, scenario.tail) {
                Ok(f) => (Some(f), None),
                Err(e @ (Error::NonPositiveSamples(_) | Error::InsufficientSamples(_))) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            let floor = error_floor(&values, scenario.tail)?;
            let initial = values[0];
            norms.push(NormSummary {
                region: label,
                norm: kind.label(),
                initial,
                floor,
                verdict: decay_verdict(fit.as_ref().map(|f| f.sigma), floor, initial, designed_rate),
                fit,
                fit_note,
            });
            series.push(values);
        }
    }
    let verdict = norms
        .iter()
        .find(|n| n.region == "omega" && n.norm == "H1")
        .or(norms.iter().find(|n| n.norm == "H1"))
        .map(|n| n.verdict)
        .unwrap_or(DecayVerdict::ZeroInitialError);
    let section = SimulationSection {
        basis_domain: *ms.domain(),
        modes: ms.len(),
        slow_modes: system.slow.iter().map(|&k| system.modes[k]).collect(),
        sensors: system.q(),
        gain,
        estimator: EstimatorSection {
            kind: estimator_kind(scenario),
            k: ops.k(),
            residuals_pass: residuals.passes(RESIDUAL_TOL),
            residuals,
            designed_rate,
            stability,
        },
        samples: traj.len(),
        dt: traj.dt,
        halving_change: traj.halving_change,
        norms,
        verdict,
    };
    Ok(SimulationRun {
        section,
        traj,
        system,
        series,
    })
}

fn write_csv(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let io = |e: csv::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn write_trajectory(path: &Path, run: &SimulationRun) -> Result<()> {
    let modes = &run.system.modes;
    let mut header = vec!["t".to_string()];
    header.extend(modes.iter().map(|m| format!("a_{}_{}", m.i, m.j)));
    header.extend(modes.iter().map(|m| format!("zhat_{}_{}", m.i, m.j)));
    header.extend((0..run.system.q()).map(|k| format!("y_{k}")));
    let t = &run.traj;
    let rows = (0..t.len()).map(|s| {
        std::iter::once(t.times[s])
            .chain(t.state[s].iter().copied())
            .chain(t.estimate[s].iter().copied())
            .chain(t.outputs[s].iter().copied())
            .map(fmt_f64)
            .collect()
    });
    write_csv(path, header, rows)
}

/// `t` followed by one column per entry of `run.section.norms`.
fn write_norms(path: &Path, run: &SimulationRun) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(run.section.norms.iter().map(|n| format!("err_{}_{}", n.norm, n.region)));
    let rows = (0..run.traj.len()).map(|s| {
        std::iter::once(run.traj.times[s])
            .chain(run.series.iter().map(|v| v[s]))
            .map(fmt_f64)
            .collect()
    });
    write_csv(path, header, rows)
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))
}

pub fn cmd_simulate(scenario: &Scenario, out: &Path) -> Result<RunReport> {
    require_sensors(scenario)?;
    let ms = global_modes(scenario);
    let z0 = scenario.initial_state(ms.modes())?;
    let run = run_simulation(scenario, &ms, &z0, &[("omega", scenario.region), ("Omega", scenario.domain)])?;
    ensure_dir(out)?;
    write_trajectory(&out.join("trajectory.csv"), &run)?;
    write_norms(&out.join("norms.csv"), &run)?;
    let mut report = RunReport::new(Command::Simulate, scenario);
    report.files = vec!["trajectory.csv".into(), "norms.csv".into()];
    report.simulation = Some(run.section);
    Ok(report)
}

/// Scenario used by `counterexample` when no configuration is given: a
/// `1 × 4` strip whose two slowest modes are made marginally unstable and
/// neutral by the shift, observed on its upper three quarters.
pub fn default_counterexample() -> Scenario {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    Scenario {
        domain: Rectangle {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 4.0,
        },
        region: Rectangle {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 1.0,
            y_max: 4.0,
        },
        shift: pi2 / 16.0,
        orders: (4, 4),
        slow: SlowSpec::Threshold(0.7),
        gain: GainSpec::Riccati { rho: 1.0 },
        initial: InitialSpec::Random { scale: 1.0 },
        t_final: 20.0,
        dt: 0.005,
        ..Scenario::default()
    }
}

/// Candidate positions on the zero lines of the global slow modes, each
/// strictly inside the domain.
fn candidate_points(scenario: &Scenario, slow: &[Mode]) -> Vec<[f64; 2]> {
    let d = &scenario.domain;
    let mut out = Vec::new();
    for mode in slow {
        for (k, axis) in [(mode.i, 0), (mode.j, 1)] {
            for m in 0..k {
                let s = (m as f64 + 0.5) / k as f64;
                for &f in &CANDIDATE_FRACTIONS {
                    let p = if axis == 0 {
                        [d.x_min + s * d.width(), d.y_min + f * d.height()]
                    } else {
                        [d.x_min + f * d.width(), d.y_min + s * d.height()]
                    };
                    if d.contains_strictly(p) && !out.contains(&p) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

pub fn cmd_counterexample(scenario: &Scenario, out: &Path) -> Result<RunReport> {
    let sc = scenario;
    if sc.region == sc.domain {
        return Err(Error::ScenarioInfeasible(
            "the region equals the domain, so the global and regional tests coincide".into(),
        ));
    }
    let ms_g = basis_mode_set(AnalysisBasis::Global, &sc.domain, &sc.region, sc.orders, sc.shift)?;
    let ms_r = basis_mode_set(AnalysisBasis::Regional, &sc.domain, &sc.region, sc.orders, sc.shift)?;
    let pair = |sensors: &[SensorSpec]| -> Result<(StrategicReport, StrategicReport)> {
        Ok((
            check_strategic(sensors, &ms_g, sc.slow, AnalysisBasis::Global, DEFAULT_RANK_TOL)?,
            check_strategic(sensors, &ms_r, sc.slow, AnalysisBasis::Regional, DEFAULT_RANK_TOL)?,
        ))
    };

    let auto_placed = sc.sensors.is_empty();
    let (sensors, (global, regional)) = if auto_placed {
        let slow_g = slow_members(&ms_g, sc.slow)?;
        let mut found = None;
        for p in candidate_points(sc, &slow_g) {
            let sensors = vec![SensorSpec::InteriorPoint { at: p }];
            let (g, r) = pair(&sensors)?;
            if !g.verdict && r.verdict {
                found = Some((sensors, (g, r)));
                break;
            }
        }
        found.ok_or_else(|| {
            Error::ScenarioInfeasible(format!(
                "no point on a bad line of the domain's slow modes is strategic for the region {}",
                sc.region
            ))
        })?
    } else {
        let p = pair(&sc.sensors)?;
        (sc.sensors.clone(), p)
    };

    let run_sc = Scenario {
        sensors: sensors.clone(),
        ..sc.clone()
    };
    let z0 = run_sc.initial_state(ms_g.modes())?;
    let global_run = run_simulation(&run_sc, &ms_g, &z0, &[("omega", sc.region), ("Omega", sc.domain)])?;
    let z0_r = run_sc.initial_state(ms_r.modes())?;
    let regional_sc = Scenario {
        estimator: EstimatorKind::Identity,
        ..run_sc.clone()
    };
    let regional_run = run_simulation(&regional_sc, &ms_r, &z0_r, &[("omega", sc.region)])?;

    let pick = |run: &SimulationRun, region: &str| {
        run.section
            .norms
            .iter()
            .find(|n| n.region == region && n.norm == "H1")
            .map(|n| (n.floor, n.initial))
            .expect("H1 series present")
    };
    let (omega_floor, omega_initial) = pick(&global_run, "Omega");
    let (regional_floor, regional_initial) = pick(&regional_run, "omega");
    let regional_ratio = if regional_initial > 0.0 { regional_floor / regional_initial } else { 0.0 };

    ensure_dir(out)?;
    write_norms(&out.join("norms.csv"), &global_run)?;
    write_norms(&out.join("regional_norms.csv"), &regional_run)?;
    let mut report = RunReport::new(Command::Counterexample, &run_sc);
    report.files = vec!["norms.csv".into(), "regional_norms.csv".into()];
    report.counterexample = Some(CounterexampleSection {
        sensors,
        auto_placed,
        verdicts: VerdictPair {
            global: global.verdict,
            regional: regional.verdict,
        },
        global,
        regional,
        omega_floor,
        omega_initial,
        omega_floor_positive: omega_floor > 0.0,
        regional_floor,
        regional_initial,
        regional_ratio,
        regional_decayed: regional_ratio <= FLOOR_FACTOR,
        global_simulation: global_run.section,
        regional_simulation: regional_run.section,
    });
    Ok(report)
}

pub fn cmd_scan(scenario: &Scenario, out: &Path, opts: &RunOptions) -> Result<RunReport> {
    require_sensors(scenario)?;
    let template = &scenario.sensors[0];
    let setup = ScanSetup {
        domain: scenario.domain,
        region: scenario.region,
        orders: scenario.orders,
        shift: scenario.shift,
        slow: scenario.slow,
        horizon: scenario.horizon,
        resolution: opts.resolution,
        workers: opts.workers,
    };
    let cells = placement_scan(template, &setup)?;
    ensure_dir(out)?;
    let header = ["x", "y", "margin_global", "margin_regional", "predicate_flag"].map(String::from).to_vec();
    let rows = cells.iter().map(|c| {
        vec![
            fmt_f64(c.x),
            fmt_f64(c.y),
            fmt_f64(c.margin_global),
            fmt_f64(c.margin_regional),
            u8::from(c.predicate_flag).to_string(),
        ]
    });
    write_csv(&out.join("scan.csv"), header, rows)?;
    let flagged: Vec<_> = cells.iter().filter(|c| c.predicate_flag).collect();
    let mut report = RunReport::new(Command::Scan, scenario);
    report.files = vec!["scan.csv".into()];
    report.scan = Some(ScanSection {
        template: template.kind(),
        resolution: opts.resolution,
        rows: cells.len(),
        flagged: flagged.len(),
        max_flagged_margin_global: flagged.iter().map(|c| c.margin_global).fold(0.0, f64::max),
    });
    Ok(report)
}

pub fn cmd_verify(scenario: &Scenario) -> Result<RunReport> {
    require_sensors(scenario)?;
    let ms = global_modes(scenario);
    let output = build_output_matrix(&scenario.sensors, &ms)?;
    let (b, _) = scenario.input_for(ms.len())?;
    let system = ModalSystem::new(&ms, &output, b, scenario.slow)?;
    let (ops, _) = build_estimator(scenario, &system)?;
    let r = verify_estimator_conditions(&ops, &system)?;
    let mut report = RunReport::new(Command::Verify, scenario);
    report.verify = Some(VerifySection {
        estimator: estimator_kind(scenario),
        k: ops.k(),
        tolerance: RESIDUAL_TOL,
        reconstruction_pass: r.reconstruction <= RESIDUAL_TOL,
        sylvester_pass: r.sylvester <= RESIDUAL_TOL,
        input_pass: r.input <= RESIDUAL_TOL,
        pass: r.passes(RESIDUAL_TOL),
        residuals: r,
    });
    Ok(report)
}
