//! Truncated modal system, observer gain design, estimator construction and
//! coupled plant/observer simulation.

mod estimator;
mod gain;
mod simulate;

pub use estimator::{
    build_general_estimator, build_identity_estimator, check_stability, closed_loop_rate,
    verify_estimator_conditions, EstimatorOperators, Residuals, StabilityCheck, RESIDUAL_TOL,
    SYLVESTER_GAP,
};
pub use gain::{design_gain, GainDesign, GainSpec, MARGIN_HORIZON, RICCATI_MAX_STEPS, RICCATI_TOL};
pub use simulate::{simulate, InputSpec, TrajectoryRecord, HALVING_TOL};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sensing::OutputOperator;
use crate::spectral::{Mode, ModeSet, Rectangle, SlowSpec, SlowSplit};

/// `ż = A z + B u`, `y = C z` on modal coordinates with `A` diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalSystem {
    /// Diagonal of `A`: `λ_m + c`.
    pub rates: DVector<f64>,
    pub b_in: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub modes: Vec<Mode>,
    pub basis_domain: Rectangle,
    /// Mode-set indices of the slow coordinates.
    pub slow: Vec<usize>,
}

impl ModalSystem {
    /// System on `mode_set` observed through `output`; `b_in` defaults to a
    /// zero-column actuator matrix.
    pub fn new(
        mode_set: &ModeSet,
        output: &OutputOperator,
        b_in: Option<DMatrix<f64>>,
        slow: SlowSpec,
    ) -> Result<Self> {
        let slow = SlowSplit::new(mode_set, slow)?.slow_indices();
        Self::from_parts(
            DVector::from_vec(mode_set.rates()),
            output.matrix.clone(),
            b_in,
            mode_set.modes().to_vec(),
            *mode_set.domain(),
            slow,
        )
    }

    pub fn from_parts(
        rates: DVector<f64>,
        c: DMatrix<f64>,
        b_in: Option<DMatrix<f64>>,
        modes: Vec<Mode>,
        basis_domain: Rectangle,
        slow: Vec<usize>,
    ) -> Result<Self> {
        let n = rates.len();
        let b_in = b_in.unwrap_or_else(|| DMatrix::zeros(n, 0));
        check_shape("output matrix C", &c, c.nrows(), n)?;
        check_shape("actuator matrix B", &b_in, n, b_in.ncols())?;
        if modes.len() != n {
            return Err(Error::DimensionMismatch {
                context: "mode list",
                expected: n.to_string(),
                found: modes.len().to_string(),
            });
        }
        if let Some(&bad) = slow.iter().find(|&&k| k >= n) {
            return Err(Error::InvalidArgument(format!("slow index {bad} out of range for {n} modes")));
        }
        if rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument("modal rates must be finite".into()));
        }
        Ok(Self {
            rates,
            b_in,
            c,
            modes,
            basis_domain,
            slow,
        })
    }

    pub fn n(&self) -> usize {
        self.rates.len()
    }

    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    pub fn p(&self) -> usize {
        self.b_in.ncols()
    }

    pub fn a(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.rates)
    }

    /// Columns of `C` on the slow coordinates.
    pub fn c_slow(&self) -> DMatrix<f64> {
        self.c.select_columns(&self.slow)
    }

    pub fn slow_rates(&self) -> DVector<f64> {
        DVector::from_iterator(self.slow.len(), self.slow.iter().map(|&k| self.rates[k]))
    }
}

pub(crate) fn check_shape(context: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch {
            context,
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}
