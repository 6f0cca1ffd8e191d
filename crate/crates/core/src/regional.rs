//! Norms of modal fields restricted to a sub-region, decay fitting and error floors.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{integrate_interval, integrate_rect, Refinement};
use crate::spectral::{axis_derivative, axis_value, eigenfunction_gradient, eigenfunction_value, Mode, Rectangle};

/// Samples at or below this level are excluded from log-linear fits.
pub const POSITIVITY_FLOOR: f64 = 1e-14;
/// Default tail fraction for decay fits and error floors.
pub const DEFAULT_TAIL: f64 = 0.2;
/// Fitted rate must reach this fraction of the reference rate.
pub const SIGMA_FACTOR: f64 = 0.9;
/// Tail floor must stay below this fraction of the initial error.
pub const FLOOR_FACTOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NormKind {
    L2,
    H1,
}

impl NormKind {
    pub fn label(&self) -> &'static str {
        match self {
            NormKind::L2 => "L2",
            NormKind::H1 => "H1",
        }
    }
}

/// Sub-rectangle `ω ⊆ Ω` on which errors are measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Region {
    pub rect: Rectangle,
}

impl Region {
    pub fn new(rect: Rectangle, domain: &Rectangle) -> Result<Self> {
        if !domain.contains_rect(&rect) {
            return Err(Error::InvalidGeometry(format!(
                "region {rect} is not contained in the domain {domain}"
            )));
        }
        Ok(Self { rect })
    }
}

/// Gram matrices of a modal basis over a rectangle: `‖z‖² = dᵀ G d`.
///
/// Entries factor into one-dimensional integrals, each computed by adaptive
/// Gauss–Legendre quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionNorm {
    pub rect: Rectangle,
    pub modes: Vec<Mode>,
    pub l2: DMatrix<f64>,
    pub h1: DMatrix<f64>,
}

struct AxisTables {
    value: DMatrix<f64>,
    slope: DMatrix<f64>,
}

fn axis_tables(order: usize, s0: f64, length: f64, a: f64, b: f64, rule: Refinement) -> Result<AxisTables> {
    let mut value = DMatrix::zeros(order + 1, order + 1);
    let mut slope = DMatrix::zeros(order + 1, order + 1);
    for k in 0..=order {
        for l in k..=order {
            let v = integrate_interval(a, b, &[], rule, |s| axis_value(k, s, s0, length) * axis_value(l, s, s0, length))?;
            let d = integrate_interval(a, b, &[], rule, |s| {
                axis_derivative(k, s, s0, length) * axis_derivative(l, s, s0, length)
            })?;
            value[(k, l)] = v;
            value[(l, k)] = v;
            slope[(k, l)] = d;
            slope[(l, k)] = d;
        }
    }
    Ok(AxisTables { value, slope })
}

impl RegionNorm {
    pub fn new(basis_domain: &Rectangle, modes: &[Mode], rect: &Rectangle) -> Result<Self> {
        Self::with_rule(basis_domain, modes, rect, Refinement::default())
    }

    pub fn with_rule(basis_domain: &Rectangle, modes: &[Mode], rect: &Rectangle, rule: Refinement) -> Result<Self> {
        let ni = modes.iter().map(|m| m.i).max().unwrap_or(0);
        let nj = modes.iter().map(|m| m.j).max().unwrap_or(0);
        let x = axis_tables(ni, basis_domain.x_min, basis_domain.width(), rect.x_min, rect.x_max, rule)?;
        let y = axis_tables(nj, basis_domain.y_min, basis_domain.height(), rect.y_min, rect.y_max, rule)?;
        let n = modes.len();
        let l2 = DMatrix::from_fn(n, n, |a, b| {
            let (ma, mb) = (modes[a], modes[b]);
            x.value[(ma.i, mb.i)] * y.value[(ma.j, mb.j)]
        });
        let h1 = DMatrix::from_fn(n, n, |a, b| {
            let (ma, mb) = (modes[a], modes[b]);
            l2[(a, b)] + x.slope[(ma.i, mb.i)] * y.value[(ma.j, mb.j)] + x.value[(ma.i, mb.i)] * y.slope[(ma.j, mb.j)]
        });
        Ok(Self {
            rect: *rect,
            modes: modes.to_vec(),
            l2,
            h1,
        })
    }

    pub fn norm(&self, coeffs: &DVector<f64>, kind: NormKind) -> Result<f64> {
        if coeffs.len() != self.modes.len() {
            return Err(Error::DimensionMismatch {
                context: "region norm coefficients",
                expected: self.modes.len().to_string(),
                found: coeffs.len().to_string(),
            });
        }
        let g = match kind {
            NormKind::L2 => &self.l2,
            NormKind::H1 => &self.h1,
        };
        Ok(coeffs.dot(&(g * coeffs)).max(0.0).sqrt())
    }

    pub fn series(&self, fields: &[DVector<f64>], kind: NormKind) -> Result<Vec<f64>> {
        fields.iter().map(|d| self.norm(d, kind)).collect()
    }
}

/// `‖z‖` over `rect` by direct two-dimensional quadrature of the expanded field.
pub fn field_norm(
    coeffs: &DVector<f64>,
    basis_domain: &Rectangle,
    modes: &[Mode],
    rect: &Rectangle,
    kind: NormKind,
) -> Result<f64> {
    if coeffs.len() != modes.len() {
        return Err(Error::DimensionMismatch {
            context: "field coefficients",
            expected: modes.len().to_string(),
            found: coeffs.len().to_string(),
        });
    }
    let sq = integrate_rect(rect, &[], &[], Refinement::default(), |p| {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for (c, &m) in coeffs.iter().zip(modes) {
            if *c == 0.0 {
                continue;
            }
            v += c * eigenfunction_value(basis_domain, m, p);
            if kind == NormKind::H1 {
                let gm = eigenfunction_gradient(basis_domain, m, p);
                g[0] += c * gm[0];
                g[1] += c * gm[1];
            }
        }
        v * v + g[0] * g[0] + g[1] * g[1]
    })?;
    Ok(sq.max(0.0).sqrt())
}

/// Which error field a norm series measures.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorTarget {
    /// `z − ẑ` on all modes.
    FullState,
    /// `z − ẑ` keeping only the listed coordinates.
    Coordinates(Vec<usize>),
}

/// Per-sample norm of the reconstruction error `z − ẑ` over the region.
pub fn error_norm_series(
    state: &[DVector<f64>],
    estimate: &[DVector<f64>],
    norm: &RegionNorm,
    kind: NormKind,
    target: &ErrorTarget,
) -> Result<Vec<f64>> {
    if state.is_empty() || state.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            context: "trajectory series",
            expected: format!("{} nonempty", state.len()),
            found: estimate.len().to_string(),
        });
    }
    state
        .iter()
        .zip(estimate)
        .map(|(z, e)| {
            let mut d = z - e;
            if let ErrorTarget::Coordinates(keep) = target {
                let mut masked = DVector::zeros(d.len());
                for &k in keep {
                    masked[k] = d[k];
                }
                d = masked;
            }
            norm.norm(&d, kind)
        })
        .collect()
}

/// `‖e(t)‖ ≈ F e^{−σ t}` fitted on the tail window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub sigma: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub rms_residual: f64,
    pub window_start: f64,
    pub samples: usize,
}

fn tail_start(len: usize, window: f64) -> usize {
    let count = ((window * len as f64).ceil() as usize).clamp(1, len);
    len - count
}

pub fn fit_decay(times: &[f64], values: &[f64], window: f64) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            context: "decay fit series",
            expected: times.len().to_string(),
            found: values.len().to_string(),
        });
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidArgument(format!("fit window must lie in (0, 1], got {window}")));
    }
    if times.len() < 3 {
        return Err(Error::InsufficientSamples(times.len()));
    }
    let start = tail_start(times.len(), window);
    if times.len() - start < 3 {
        return Err(Error::InsufficientSamples(times.len() - start));
    }
    let pts: Vec<(f64, f64)> = times[start..]
        .iter()
        .zip(&values[start..])
        .filter(|(_, &v)| v > POSITIVITY_FLOOR)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::NonPositiveSamples(pts.len()));
    }
    let m = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.1 - y_mean)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientSamples(1));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let rms = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / m).sqrt();
    Ok(DecayFit {
        sigma: -slope,
        f: intercept.exp(),
        rms_residual: rms,
        window_start: times[start],
        samples: pts.len(),
    })
}

/// Largest value over the last `tail` fraction of the series.
pub fn error_floor(values: &[f64], tail: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientSamples(0));
    }
    if !(tail > 0.0 && tail <= 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction must lie in (0, 1], got {tail}")));
    }
    Ok(values[tail_start(values.len(), tail)..].iter().copied().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayVerdict {
    Observable,
    NotObservable,
    ZeroInitialError,
}

/// Observable iff the fitted rate reaches `0.9 σ_ref` and the tail floor is
/// at most `1e−3` of the initial error. A series that drops below the
/// positivity floor before the fit window (`sigma = None`) only has to meet
/// the floor condition.
pub fn decay_verdict(sigma: Option<f64>, floor: f64, initial: f64, sigma_ref: f64) -> DecayVerdict {
    if initial == 0.0 {
        return DecayVerdict::ZeroInitialError;
    }
    let rate_ok = sigma.is_none_or(|s| s >= SIGMA_FACTOR * sigma_ref);
    if rate_ok && floor <= FLOOR_FACTOR * initial {
        DecayVerdict::Observable
    } else {
        DecayVerdict::NotObservable
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_mode_set;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn quarter() -> Rectangle {
        Rectangle::new(0.25, 0.75, 0.25, 0.75).unwrap()
    }

    #[test]
    fn constant_field_on_subregion() {
        let sq = Rectangle::unit();
        let modes = [Mode::new(0, 0)];
        let d = DVector::from_element(1, 1.0);
        let g = RegionNorm::new(&sq, &modes, &quarter()).unwrap();
        assert_relative_eq!(g.norm(&d, NormKind::H1).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(field_norm(&d, &sq, &modes, &quarter(), NormKind::H1).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn first_mode_h1_norm_on_full_square() {
        let sq = Rectangle::unit();
        let modes = [Mode::new(1, 0)];
        let d = DVector::from_element(1, 1.0);
        let g = RegionNorm::new(&sq, &modes, &sq).unwrap();
        assert_relative_eq!(g.norm(&d, NormKind::H1).unwrap(), (1.0 + PI * PI).sqrt(), epsilon = 1e-10);
        assert_relative_eq!(field_norm(&d, &sq, &modes, &sq, NormKind::H1).unwrap(), (1.0 + PI * PI).sqrt(), epsilon = 1e-10);
        assert_eq!(g.norm(&DVector::zeros(1), NormKind::L2).unwrap(), 0.0);
    }

    #[test]
    fn gram_and_direct_quadrature_agree() {
        let r = Rectangle::new(0.0, 1.5, 0.0, 1.0).unwrap();
        let ms = build_mode_set(r, 3, 3, 0.0);
        let w = Rectangle::new(0.2, 1.1, 0.35, 0.9).unwrap();
        let d = DVector::from_fn(ms.len(), |k, _| ((k * 7 + 3) % 11) as f64 / 11.0 - 0.4);
        let g = RegionNorm::new(&r, ms.modes(), &w).unwrap();
        for kind in [NormKind::L2, NormKind::H1] {
            assert_relative_eq!(
                g.norm(&d, kind).unwrap(),
                field_norm(&d, &r, ms.modes(), &w, kind).unwrap(),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn exact_exponential_fits() {
        let t: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let fit = fit_decay(&t, &v, 1.0).unwrap();
        assert_relative_eq!(fit.sigma, 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.f, 1.0, epsilon = 1e-10);
        assert!(fit.rms_residual <= 1e-10);
        let v: Vec<f64> = t.iter().map(|t| 5.0 * (-0.3 * t).exp()).collect();
        let fit = fit_decay(&t, &v, DEFAULT_TAIL).unwrap();
        assert_relative_eq!(fit.sigma, 0.3, epsilon = 1e-10);
        assert_relative_eq!(fit.f, 5.0, epsilon = 1e-9);
        let fit = fit_decay(&t, &vec![0.7; t.len()], DEFAULT_TAIL).unwrap();
        assert!(fit.sigma.abs() <= 1e-12);
    }

    #[test]
    fn fit_errors() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(fit_decay(&t, &[1.0; 4], 0.2).unwrap_err(), Error::InsufficientSamples(1));
        assert_eq!(fit_decay(&t, &[1.0, 1.0, 0.0, 0.0], 1.0).unwrap_err(), Error::NonPositiveSamples(2));
    }

    #[test]
    fn floors() {
        assert_eq!(error_floor(&[0.7; 10], DEFAULT_TAIL).unwrap(), 0.7);
        let v: Vec<f64> = (0..100).map(|k| (-0.1 * k as f64).exp()).collect();
        assert_eq!(error_floor(&v, DEFAULT_TAIL).unwrap(), v[80]);
        assert!(error_floor(&[], 0.2).is_err());
    }

    #[test]
    fn verdict_rule() {
        assert_eq!(decay_verdict(Some(0.95), 1e-4, 1.0, 1.0), DecayVerdict::Observable);
        assert_eq!(decay_verdict(Some(0.85), 1e-4, 1.0, 1.0), DecayVerdict::NotObservable);
        assert_eq!(decay_verdict(Some(0.0), 0.7, 1.0, 1.0), DecayVerdict::NotObservable);
        assert_eq!(decay_verdict(None, 0.0, 0.0, 1.0), DecayVerdict::ZeroInitialError);
    }

    #[test]
    fn region_must_be_inside_domain() {
        assert!(Region::new(quarter(), &Rectangle::unit()).is_ok());
        assert!(Region::new(Rectangle::new(0.5, 1.5, 0.0, 1.0).unwrap(), &Rectangle::unit()).is_err());
    }
}
