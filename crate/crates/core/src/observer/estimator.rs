use nalgebra::DMatrix;
use serde::Serialize;

use super::gain::pseudo_inverse;
use super::{check_shape, ModalSystem};
use crate::error::{Error, Result};
use crate::strategic::{numerical_rank, singular_values, DEFAULT_RANK_TOL};

/// Smallest admissible gap `|l_k − a_m|` in the diagonal Sylvester solve.
pub const SYLVESTER_GAP: f64 = 1e-9;
/// Pass threshold for each intertwining residual.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// `ẇ = L w + G u + H y`, `ẑ = M y + N w`, with `w ≈ T z`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOperators {
    pub t: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

impl EstimatorOperators {
    /// Observer dimension `k`.
    pub fn k(&self) -> usize {
        self.l.nrows()
    }
}

/// `T = I`, `L = A − H C`, `M = 0`, `N = I`, `G = B`.
pub fn build_identity_estimator(system: &ModalSystem, h: &DMatrix<f64>) -> Result<EstimatorOperators> {
    let (n, q) = (system.n(), system.q());
    check_shape("observer gain H", h, n, q)?;
    Ok(EstimatorOperators {
        t: DMatrix::identity(n, n),
        l: system.a() - h * &system.c,
        h: h.clone(),
        g: system.b_in.clone(),
        m: DMatrix::zeros(n, q),
        n: DMatrix::identity(n, n),
    })
}

/// Reduced estimator with `L = diag(rates)` and `k × q` gain `h`.
///
/// `T` solves `T A − L T = H C` entrywise and `[M N]` is the minimum-norm
/// left inverse of the stack `[C; T]`.
pub fn build_general_estimator(system: &ModalSystem, rates: &[f64], h: &DMatrix<f64>) -> Result<EstimatorOperators> {
    let (n, q, k) = (system.n(), system.q(), rates.len());
    check_shape("observer gain H", h, k, q)?;
    if let Some(r) = rates.iter().find(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument(format!("observer rate must be finite, got {r}")));
    }
    for (row, &l_k) in rates.iter().enumerate() {
        for (m, &a_m) in system.rates.iter().enumerate() {
            if (l_k - a_m).abs() <= SYLVESTER_GAP {
                return Err(Error::SylvesterResonance {
                    row,
                    observer_rate: l_k,
                    mode: system.modes[m],
                    eigenvalue: a_m,
                });
            }
        }
    }
    let hc = h * &system.c;
    let t = DMatrix::from_fn(k, n, |r, m| hc[(r, m)] / (system.rates[m] - rates[r]));

    let mut stack = DMatrix::zeros(q + k, n);
    stack.rows_mut(0, q).copy_from(&system.c);
    stack.rows_mut(q, k).copy_from(&t);
    let rank = numerical_rank(&singular_values(&stack), DEFAULT_RANK_TOL);
    if rank < n {
        return Err(Error::ReconstructionRankDeficient { rank, required: n });
    }
    let mn = pseudo_inverse(&stack)?;
    Ok(EstimatorOperators {
        g: &t * &system.b_in,
        m: mn.columns(0, q).into_owned(),
        n: mn.columns(q, k).into_owned(),
        l: DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(rates)),
        h: h.clone(),
        t,
    })
}

/// Frobenius norms of `MC + NT − I`, `TA − LT − HC` and `G − TB`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    pub reconstruction: f64,
    pub sylvester: f64,
    pub input: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.reconstruction.max(self.sylvester).max(self.input)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub fn verify_estimator_conditions(ops: &EstimatorOperators, system: &ModalSystem) -> Result<Residuals> {
    let (n, q, p, k) = (system.n(), system.q(), system.p(), ops.k());
    check_shape("T", &ops.t, k, n)?;
    check_shape("L", &ops.l, k, k)?;
    check_shape("H", &ops.h, k, q)?;
    check_shape("G", &ops.g, k, p)?;
    check_shape("M", &ops.m, n, q)?;
    check_shape("N", &ops.n, n, k)?;
    let a = system.a();
    Ok(Residuals {
        reconstruction: (&ops.m * &system.c + &ops.n * &ops.t - DMatrix::identity(n, n)).norm(),
        sylvester: (&ops.t * a - &ops.l * &ops.t - &ops.h * &system.c).norm(),
        input: (&ops.g - &ops.t * &system.b_in).norm(),
    })
}

/// `−max Re(eig(M))`; infinite for an empty matrix.
pub fn closed_loop_rate(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    -m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Decay of `‖e^{Lt}‖_F` sampled on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCheck {
    pub stable: bool,
    pub horizon: f64,
    pub peak_norm: f64,
    pub final_norm: f64,
}

const STABILITY_SAMPLES: usize = 64;

/// Propagates `e^{Lt}` up to `50/σ` and requires the norm to decay
/// monotonically over the second half and end well below its start.
pub fn check_stability(l: &DMatrix<f64>, sigma: f64) -> StabilityCheck {
    let horizon = if sigma.is_finite() && sigma > 0.0 { 50.0 / sigma } else { 50.0 };
    if l.is_empty() {
        return StabilityCheck {
            stable: true,
            horizon,
            peak_norm: 0.0,
            final_norm: 0.0,
        };
    }
    let norms: Vec<f64> = (0..=STABILITY_SAMPLES)
        .map(|s| (l * (horizon * s as f64 / STABILITY_SAMPLES as f64)).exp().norm())
        .collect();
    let start = norms[0];
    let peak_norm = norms.iter().copied().fold(0.0, f64::max);
    let final_norm = *norms.last().unwrap();
    let tail_monotone = norms[STABILITY_SAMPLES / 2..]
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12) || w[1] <= 1e-12 * start);
    StabilityCheck {
        stable: final_norm.is_finite() && tail_monotone && final_norm < 1e-3 * start,
        horizon,
        peak_norm,
        final_norm,
    }
}
