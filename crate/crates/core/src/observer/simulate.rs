use nalgebra::{DMatrix, DVector};

use super::{EstimatorOperators, ModalSystem};
use crate::error::{Error, Result};

/// Largest accepted relative change of the final observer state when the
/// step is halved.
pub const HALVING_TOL: f64 = 1e-6;

/// Actuator signal `u(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    Zero,
    /// `u(t) = values[i]` for `starts[i] ≤ t < starts[i + 1]`, zero before `starts[0]`.
    PiecewiseConstant {
        starts: Vec<f64>,
        values: Vec<DVector<f64>>,
    },
}

impl InputSpec {
    fn validate(&self, p: usize) -> Result<()> {
        if let InputSpec::PiecewiseConstant { starts, values } = self {
            if starts.len() != values.len() || starts.is_empty() {
                return Err(Error::InvalidArgument(
                    "piecewise-constant input needs one value per start time".into(),
                ));
            }
            if starts.windows(2).any(|w| !(w[0] < w[1])) || starts.iter().any(|s| !s.is_finite()) {
                return Err(Error::InvalidArgument("input start times must be finite and increasing".into()));
            }
            if let Some(v) = values.iter().find(|v| v.len() != p) {
                return Err(Error::DimensionMismatch {
                    context: "input value",
                    expected: p.to_string(),
                    found: v.len().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Value on the open piece containing `t`.
    fn value_at(&self, t: f64, p: usize) -> DVector<f64> {
        match self {
            InputSpec::Zero => DVector::zeros(p),
            InputSpec::PiecewiseConstant { starts, values } => match starts.iter().rposition(|&s| s <= t) {
                Some(i) => values[i].clone(),
                None => DVector::zeros(p),
            },
        }
    }

    fn breaks_in(&self, a: f64, b: f64) -> Vec<f64> {
        match self {
            InputSpec::Zero => vec![],
            InputSpec::PiecewiseConstant { starts, .. } => {
                starts.iter().copied().filter(|&s| s > a && s < b).collect()
            }
        }
    }
}

/// Sampled plant, observer, estimate and output series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub state: Vec<DVector<f64>>,
    pub observer: Vec<DVector<f64>>,
    pub estimate: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    /// Step actually used (`t_final` divided into equal steps).
    pub dt: f64,
    /// Relative change of the final observer state under step halving.
    pub halving_change: f64,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `T z − w` at every sample.
    pub fn observer_error(&self, t: &DMatrix<f64>) -> Vec<DVector<f64>> {
        self.state.iter().zip(&self.observer).map(|(z, w)| t * z - w).collect()
    }

    /// `z − ẑ` at every sample.
    pub fn reconstruction_error(&self) -> Vec<DVector<f64>> {
        self.state.iter().zip(&self.estimate).map(|(z, e)| z - e).collect()
    }
}

/// `∫₀^τ e^{a s} ds`.
fn exp_integral(a: f64, tau: f64) -> f64 {
    if a == 0.0 {
        tau
    } else {
        (a * tau).exp_m1() / a
    }
}

struct Stepper<'a> {
    system: &'a ModalSystem,
    ops: &'a EstimatorOperators,
    input: &'a InputSpec,
    hc: DMatrix<f64>,
}

impl Stepper<'_> {
    /// Exact modal state at `t + s` from `z` at `t`.
    fn propagate(&self, z: &DVector<f64>, t: f64, s: f64) -> DVector<f64> {
        let rates = &self.system.rates;
        let mut out = DVector::from_fn(z.len(), |m, _| (rates[m] * s).exp() * z[m]);
        if let InputSpec::PiecewiseConstant { .. } = self.input {
            let end = t + s;
            let mut cuts = vec![t];
            cuts.extend(self.input.breaks_in(t, end));
            cuts.push(end);
            for piece in cuts.windows(2) {
                let u = self.input.value_at(0.5 * (piece[0] + piece[1]), self.system.p());
                let bu = &self.system.b_in * u;
                for m in 0..out.len() {
                    out[m] += (rates[m] * (end - piece[1])).exp() * exp_integral(rates[m], piece[1] - piece[0]) * bu[m];
                }
            }
        }
        out
    }

    fn rhs(&self, w: &DVector<f64>, z: &DVector<f64>, gu: &DVector<f64>) -> DVector<f64> {
        &self.ops.l * w + gu + &self.hc * z
    }

    /// One classical four-stage step of length `h` on a piece with constant input.
    fn rk4(&self, t: f64, h: f64, w: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let gu = &self.ops.g * self.input.value_at(t + 0.5 * h, self.system.p());
        let z_mid = self.propagate(z, t, 0.5 * h);
        let z_end = self.propagate(z, t, h);
        let k1 = self.rhs(w, z, &gu);
        let k2 = self.rhs(&(w + &k1 * (0.5 * h)), &z_mid, &gu);
        let k3 = self.rhs(&(w + &k2 * (0.5 * h)), &z_mid, &gu);
        let k4 = self.rhs(&(w + &k3 * h), &z_end, &gu);
        w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// Advances `(z, w)` by `h`, splitting the observer step at input breakpoints.
    fn step(&self, t: f64, h: f64, z: &DVector<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut cuts = vec![t];
        cuts.extend(self.input.breaks_in(t, t + h));
        cuts.push(t + h);
        let (mut zc, mut wc) = (z.clone(), w.clone());
        for piece in cuts.windows(2) {
            let len = piece[1] - piece[0];
            wc = self.rk4(piece[0], len, &wc, &zc);
            zc = self.propagate(&zc, piece[0], len);
        }
        (zc, wc)
    }
}

struct Run {
    times: Vec<f64>,
    state: Vec<DVector<f64>>,
    observer: Vec<DVector<f64>>,
    peak_observer: f64,
}

fn run(stepper: &Stepper, z0: &DVector<f64>, w0: &DVector<f64>, steps: usize, h: f64, record: bool) -> Run {
    let mut out = Run {
        times: vec![0.0],
        state: vec![z0.clone()],
        observer: vec![w0.clone()],
        peak_observer: w0.norm(),
    };
    let (mut z, mut w) = (z0.clone(), w0.clone());
    for s in 0..steps {
        let t = s as f64 * h;
        (z, w) = stepper.step(t, h, &z, &w);
        out.peak_observer = out.peak_observer.max(w.norm());
        if record {
            out.times.push((s + 1) as f64 * h);
            out.state.push(z.clone());
            out.observer.push(w.clone());
        }
    }
    if !record {
        out.times = vec![steps as f64 * h];
        out.state = vec![z];
        out.observer = vec![w];
    }
    out
}

/// Couples the exactly propagated plant with the observer and samples every step.
///
/// The run is repeated with half the step; if the final observer state moves
/// by more than [`HALVING_TOL`] (relative to the largest observer norm seen)
/// the step is rejected.
pub fn simulate(
    system: &ModalSystem,
    ops: &EstimatorOperators,
    z0: &DVector<f64>,
    w0: &DVector<f64>,
    input: &InputSpec,
    t_final: f64,
    dt: f64,
) -> Result<TrajectoryRecord> {
    let (n, k) = (system.n(), ops.k());
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if !(t_final >= dt && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "final time {t_final} must be finite and at least one step {dt}"
        )));
    }
    for (context, v, len) in [("initial state z0", z0, n), ("initial observer state w0", w0, k)] {
        if v.len() != len {
            return Err(Error::DimensionMismatch {
                context,
                expected: len.to_string(),
                found: v.len().to_string(),
            });
        }
    }
    super::verify_estimator_conditions(ops, system)?;
    input.validate(system.p())?;

    let steps = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
    let h = t_final / steps as f64;
    let stepper = Stepper {
        system,
        ops,
        input,
        hc: &ops.h * &system.c,
    };
    let coarse = run(&stepper, z0, w0, steps, h, true);
    let fine = run(&stepper, z0, w0, 2 * steps, 0.5 * h, false);
    let diff = (coarse.observer.last().unwrap() - &fine.observer[0]).norm();
    let scale = coarse.peak_observer.max(fine.peak_observer);
    let halving_change = if diff == 0.0 { 0.0 } else { diff / scale.max(f64::MIN_POSITIVE) };
    if !(halving_change <= HALVING_TOL) {
        return Err(Error::StepTooCoarse {
            dt: h,
            relative_change: halving_change,
        });
    }

    let outputs: Vec<DVector<f64>> = coarse.state.iter().map(|z| &system.c * z).collect();
    let estimate = outputs
        .iter()
        .zip(&coarse.observer)
        .map(|(y, w)| &ops.m * y + &ops.n * w)
        .collect();
    Ok(TrajectoryRecord {
        times: coarse.times,
        state: coarse.state,
        observer: coarse.observer,
        estimate,
        outputs,
        dt: h,
        halving_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::{build_identity_estimator, design_gain, GainSpec};
    use crate::spectral::{Mode, Rectangle};
    use approx::assert_relative_eq;

    fn system(rates: &[f64], c: DMatrix<f64>, b: Option<DMatrix<f64>>) -> ModalSystem {
        let modes = (0..rates.len()).map(|i| Mode::new(i, 0)).collect();
        ModalSystem::from_parts(DVector::from_row_slice(rates), c, b, modes, Rectangle::unit(), vec![0]).unwrap()
    }

    #[test]
    fn scalar_closed_loop_error_decays_like_exp() {
        let sys = system(&[0.0], DMatrix::from_element(1, 1, 1.0), None);
        let h = design_gain(&sys, &GainSpec::Riccati { rho: 1.0 }).unwrap().h;
        let ops = build_identity_estimator(&sys, &h).unwrap();
        let z0 = DVector::from_element(1, 1.0);
        let w0 = DVector::zeros(1);
        let tr = simulate(&sys, &ops, &z0, &w0, &InputSpec::Zero, 4.0, 0.01).unwrap();
        for t in [1.0, 2.0, 4.0] {
            let s = (t / tr.dt).round() as usize;
            let e = tr.state[s][0] - tr.observer[s][0];
            assert!((e.abs() - (-t).exp()).abs() <= 1e-5);
        }
    }

    #[test]
    fn autonomous_plant_is_exact() {
        let rates = [0.3, -1.0, -7.5];
        let sys = system(&rates, DMatrix::from_row_slice(1, 3, &[1.0, 0.5, 0.2]), None);
        let ops = build_identity_estimator(&sys, &DMatrix::zeros(3, 1)).unwrap();
        let z0 = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let tr = simulate(&sys, &ops, &z0, &DVector::zeros(3), &InputSpec::Zero, 2.0, 0.05).unwrap();
        for (t, z) in tr.times.iter().zip(&tr.state) {
            for m in 0..3 {
                assert_relative_eq!(z[m], z0[m] * (rates[m] * t).exp(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn matched_initial_observer_stays_exact() {
        let sys = system(&[0.0, -2.0], DMatrix::from_row_slice(1, 2, &[1.0, 0.4]), None);
        let h = design_gain(&sys, &GainSpec::Riccati { rho: 1.0 }).unwrap().h;
        let ops = build_identity_estimator(&sys, &h).unwrap();
        let z0 = DVector::from_row_slice(&[0.7, -0.3]);
        let tr = simulate(&sys, &ops, &z0, &z0, &InputSpec::Zero, 3.0, 0.01).unwrap();
        for e in tr.observer_error(&ops.t) {
            assert!(e.norm() <= 1e-9);
        }
    }

    #[test]
    fn piecewise_input_matches_closed_form() {
        let b = DMatrix::from_column_slice(1, 1, &[2.0]);
        let sys = system(&[-1.0], DMatrix::from_element(1, 1, 1.0), Some(b));
        let ops = build_identity_estimator(&sys, &DMatrix::zeros(1, 1)).unwrap();
        let input = InputSpec::PiecewiseConstant {
            starts: vec![0.0, 0.5],
            values: vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.0)],
        };
        let tr = simulate(&sys, &ops, &DVector::zeros(1), &DVector::zeros(1), &input, 1.0, 0.01).unwrap();
        // z(0.5) = 2(1 − e^{−0.5}), then free decay
        let expect = 2.0 * (1.0 - (-0.5f64).exp()) * (-0.5f64).exp();
        assert_relative_eq!(tr.state.last().unwrap()[0], expect, max_relative = 1e-12);
        assert_relative_eq!(tr.observer.last().unwrap()[0], expect, max_relative = 1e-7);
    }

    #[test]
    fn coarse_step_on_stiff_observer_is_refused() {
        let sys = system(&[0.0, -400.0], DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), None);
        let ops = build_identity_estimator(&sys, &DMatrix::zeros(2, 1)).unwrap();
        let z0 = DVector::from_row_slice(&[1.0, 1.0]);
        let res = simulate(&sys, &ops, &z0, &z0, &InputSpec::Zero, 1.0, 0.01);
        assert!(matches!(res, Err(Error::StepTooCoarse { .. })));
    }

    #[test]
    fn rejects_bad_time_grid() {
        let sys = system(&[0.0], DMatrix::from_element(1, 1, 1.0), None);
        let ops = build_identity_estimator(&sys, &DMatrix::zeros(1, 1)).unwrap();
        let z = DVector::zeros(1);
        assert!(simulate(&sys, &ops, &z, &z, &InputSpec::Zero, 1.0, 0.0).is_err());
        assert!(simulate(&sys, &ops, &z, &z, &InputSpec::Zero, 0.01, 0.1).is_err());
    }
}
