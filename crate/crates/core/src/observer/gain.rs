use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{check_shape, closed_loop_rate, ModalSystem};
use crate::error::{Error, Result};
use crate::strategic::{numerical_rank, observability_margin, singular_values, smallest_eigen, DEFAULT_RANK_TOL};

/// Horizon of the detectability pre-check on the slow block.
pub const MARGIN_HORIZON: f64 = 1.0;
/// Steady state is declared once `‖Ṗ‖_F` drops to this level.
pub const RICCATI_TOL: f64 = 1e-10;
pub const RICCATI_MAX_STEPS: usize = 1_000_000;

/// How the output-injection gain `H` is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSpec {
    /// Steady state of `Ṗ = A_s P + P A_sᵀ − P C_sᵀ C_s P + ρ I`, `H_s = P C_sᵀ`.
    Riccati { rho: f64 },
    /// Places every slow closed-loop rate at `−σ★`.
    PerModeShift { sigma_star: f64 },
    /// Taken as given (`n × q`).
    Explicit { h: DMatrix<f64> },
}

impl GainSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            GainSpec::Riccati { .. } => "riccati",
            GainSpec::PerModeShift { .. } => "per_mode_shift",
            GainSpec::Explicit { .. } => "explicit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainDesign {
    /// `n × q`, nonzero only on slow rows for the designed variants.
    #[serde(skip)]
    pub h: DMatrix<f64>,
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub slow_margin: f64,
    pub riccati_steps: Option<usize>,
    /// Decay rate of `A_s − H_s C_s`, i.e. minus its largest real eigenvalue part.
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub slow_rate: f64,
}

pub fn design_gain(system: &ModalSystem, spec: &GainSpec) -> Result<GainDesign> {
    let (n, q, k) = (system.n(), system.q(), system.slow.len());
    let a_s = system.slow_rates();
    let c_s = system.c_slow();

    if let GainSpec::Explicit { h } = spec {
        check_shape("explicit gain H", h, n, q)?;
        let h_s = h.select_rows(&system.slow);
        return Ok(GainDesign {
            h: h.clone(),
            slow_margin: slow_margin(system)?,
            riccati_steps: None,
            slow_rate: closed_loop_rate(&(DMatrix::from_diagonal(&a_s) - &h_s * &c_s)),
        });
    }
    match *spec {
        GainSpec::Riccati { rho } if !(rho > 0.0 && rho.is_finite()) => {
            return Err(Error::InvalidArgument(format!("Riccati weight must be positive, got {rho}")))
        }
        GainSpec::PerModeShift { sigma_star } if !(sigma_star > 0.0 && sigma_star.is_finite()) => {
            return Err(Error::InvalidArgument(format!("target rate must be positive, got {sigma_star}")))
        }
        _ => {}
    }

    let margin = slow_margin(system)?;
    if k > 0 && !(margin > DEFAULT_RANK_TOL) {
        let local: Vec<usize> = (0..k).collect();
        let w = crate::strategic::observability_gramian(&c_s, a_s.as_slice(), &local, MARGIN_HORIZON)?;
        let (_, v) = smallest_eigen(&w);
        let worst = (0..k).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
        let mode_index = system.slow[worst];
        return Err(Error::UndetectableSlowMode {
            mode: system.modes[mode_index],
            eigenvalue: system.rates[mode_index],
            margin,
            tolerance: DEFAULT_RANK_TOL,
        });
    }

    let (h_s, steps) = match *spec {
        GainSpec::Riccati { rho } => {
            let (p, steps) = riccati_steady_state(&a_s, &c_s, rho)?;
            (p * c_s.transpose(), Some(steps))
        }
        GainSpec::PerModeShift { sigma_star } => (per_mode_shift(&a_s, &c_s, sigma_star)?, None),
        GainSpec::Explicit { .. } => unreachable!(),
    };
    let mut h = DMatrix::zeros(n, q);
    for (r, &row) in system.slow.iter().enumerate() {
        h.row_mut(row).copy_from(&h_s.row(r));
    }
    Ok(GainDesign {
        h,
        slow_margin: margin,
        riccati_steps: steps,
        slow_rate: closed_loop_rate(&(DMatrix::from_diagonal(&a_s) - &h_s * &c_s)),
    })
}

fn slow_margin(system: &ModalSystem) -> Result<f64> {
    let k = system.slow.len();
    let local: Vec<usize> = (0..k).collect();
    observability_margin(&system.c_slow(), system.slow_rates().as_slice(), &local, MARGIN_HORIZON)
}

/// `diag(a_s + σ★) · C_s⁺`, so that `A_s − H_s C_s = −σ★ I` whenever `C_s`
/// has full column rank.
fn per_mode_shift(a_s: &DVector<f64>, c_s: &DMatrix<f64>, sigma_star: f64) -> Result<DMatrix<f64>> {
    let k = a_s.len();
    if k == 0 {
        return Ok(DMatrix::zeros(0, c_s.nrows()));
    }
    let rank = numerical_rank(&singular_values(c_s), DEFAULT_RANK_TOL);
    if rank < k {
        return Err(Error::GainDesignInfeasible(format!(
            "per-mode shift needs the slow output block to have full column rank {k}, found rank {rank}; \
             use the Riccati design for this sensor set"
        )));
    }
    let pinv = pseudo_inverse(c_s)?;
    let shift = DMatrix::from_diagonal(&a_s.map(|a| a + sigma_star));
    Ok(shift * pinv)
}

/// Moore–Penrose inverse with singular values below `DEFAULT_RANK_TOL · σ_max` dropped.
pub(crate) fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let top = singular_values(m).first().copied().unwrap_or(0.0);
    m.clone()
        .svd(true, true)
        .pseudo_inverse(DEFAULT_RANK_TOL * top.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(format!("pseudo-inverse: {e}")))
}

fn riccati_rhs(a: &DVector<f64>, ctc: &DMatrix<f64>, rho: f64, p: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.len();
    let mut ap = p.clone();
    for r in 0..k {
        for c in 0..k {
            ap[(r, c)] *= a[r] + a[c];
        }
    }
    ap - p * ctc * p + DMatrix::identity(k, k) * rho
}

/// Integrates the slow-block Riccati flow from `P(0) = I` to steady state with
/// the classical four-stage scheme.
fn riccati_steady_state(a: &DVector<f64>, c: &DMatrix<f64>, rho: f64) -> Result<(DMatrix<f64>, usize)> {
    let k = a.len();
    let ctc = c.transpose() * c;
    let a_norm = a.amax();
    let ctc_norm = ctc.norm();
    let mut p = DMatrix::identity(k, k);
    for step in 0..RICCATI_MAX_STEPS {
        let k1 = riccati_rhs(a, &ctc, rho, &p);
        if k1.norm() <= RICCATI_TOL {
            return Ok((p, step));
        }
        let h = (0.5 / (a_norm + p.norm() * ctc_norm + rho.sqrt())).min(0.1);
        let k2 = riccati_rhs(a, &ctc, rho, &(&p + &k1 * (0.5 * h)));
        let k3 = riccati_rhs(a, &ctc, rho, &(&p + &k2 * (0.5 * h)));
        let k4 = riccati_rhs(a, &ctc, rho, &(&p + &k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        p = (&p + p.transpose()) * 0.5;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::RiccatiNonConvergence {
                steps: step + 1,
                residual: f64::INFINITY,
            });
        }
    }
    Err(Error::RiccatiNonConvergence {
        steps: RICCATI_MAX_STEPS,
        residual: riccati_rhs(a, &ctc, rho, &p).norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Mode, Rectangle};
    use approx::assert_relative_eq;

    fn system(rates: &[f64], c: DMatrix<f64>, slow: Vec<usize>) -> ModalSystem {
        let modes = (0..rates.len()).map(|i| Mode::new(i, 0)).collect();
        ModalSystem::from_parts(DVector::from_row_slice(rates), c, None, modes, Rectangle::unit(), slow).unwrap()
    }

    #[test]
    fn scalar_riccati_gain() {
        let sys = system(&[0.0], DMatrix::from_element(1, 1, 1.0), vec![0]);
        let g = design_gain(&sys, &GainSpec::Riccati { rho: 1.0 }).unwrap();
        assert_relative_eq!(g.h[(0, 0)], 1.0, epsilon = 1e-9);
        assert_relative_eq!(g.slow_rate, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn riccati_matches_scalar_are_with_unstable_mode() {
        // 2aP − c²P² + ρ = 0 ⇒ P = (a + √(a² + c²ρ))/c²
        let (a, c, rho) = (0.7, 0.5, 2.0);
        let sys = system(&[a], DMatrix::from_element(1, 1, c), vec![0]);
        let g = design_gain(&sys, &GainSpec::Riccati { rho }).unwrap();
        let p = (a + (a * a + c * c * rho).sqrt()) / (c * c);
        assert_relative_eq!(g.h[(0, 0)], p * c, epsilon = 1e-8);
    }

    #[test]
    fn zero_coefficient_on_slow_mode_is_undetectable() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let sys = system(&[0.0, -0.001], c, vec![0, 1]);
        let err = design_gain(&sys, &GainSpec::Riccati { rho: 1.0 }).unwrap_err();
        match err {
            Error::UndetectableSlowMode { mode, .. } => assert_eq!(mode, Mode::new(1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn explicit_gain_shape_is_checked() {
        let sys = system(&[0.0, -1.0], DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), vec![0]);
        let bad = GainSpec::Explicit { h: DMatrix::zeros(1, 1) };
        assert!(matches!(design_gain(&sys, &bad), Err(Error::DimensionMismatch { .. })));
        let ok = GainSpec::Explicit { h: DMatrix::zeros(2, 1) };
        assert!(design_gain(&sys, &ok).is_ok());
    }

    #[test]
    fn per_mode_shift_places_slow_rates() {
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.4, 0.1, 0.3, -0.8, 0.2]);
        let sys = system(&[0.2, 0.0, -5.0], c, vec![0, 1]);
        let g = design_gain(&sys, &GainSpec::PerModeShift { sigma_star: 1.5 }).unwrap();
        assert_relative_eq!(g.slow_rate, 1.5, epsilon = 1e-9);
        assert!(g.h.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_mode_shift_needs_full_column_rank() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let sys = system(&[0.0, -0.001], c, vec![0, 1]);
        assert!(matches!(
            design_gain(&sys, &GainSpec::PerModeShift { sigma_star: 1.0 }),
            Err(Error::GainDesignInfeasible(_))
        ));
    }
}
