//! Strategic-sensor tests: eigenspace rank conditions, observability margins,
//! closed-form placement predicates and placement scans.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sensing::{build_output_matrix_on, sensor_coefficients, Profile, SensorSpec};
use crate::spectral::{
    build_mode_set, EigenspaceGroup, Mode, ModeSet, Rectangle, SlowSpec, SlowSplit,
};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Which eigenbasis a test is carried out in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisBasis {
    /// Neumann eigenbasis of the system domain `Ω`.
    Global,
    /// Neumann eigenbasis of the region `ω`, evaluated at sensor geometry in `Ω`.
    Regional,
}

/// Mode set for `basis`: built on `domain` (global) or on `region` (regional).
pub fn basis_mode_set(
    basis: AnalysisBasis,
    domain: &Rectangle,
    region: &Rectangle,
    orders: (usize, usize),
    shift: f64,
) -> Result<ModeSet> {
    match basis {
        AnalysisBasis::Global => Ok(build_mode_set(*domain, orders.0, orders.1, shift)),
        AnalysisBasis::Regional => {
            if !domain.contains_rect(region) {
                return Err(Error::InvalidGeometry(format!(
                    "region {region} is not contained in the domain {domain}"
                )));
            }
            Ok(build_mode_set(*region, orders.0, orders.1, shift))
        }
    }
}

/// `G_n`: sensor coefficients (rows) against the members of one eigenspace (columns).
pub fn build_gn(
    group: &EigenspaceGroup,
    sensors: &[SensorSpec],
    basis_domain: &Rectangle,
) -> Result<DMatrix<f64>> {
    if group.members.is_empty() {
        return Err(Error::InvalidArgument("eigenspace group is empty".into()));
    }
    Ok(build_output_matrix_on(sensors, &group.members, basis_domain)?.matrix)
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank: singular values above `rank_tol · σ_max`.
pub fn numerical_rank(sv: &[f64], rank_tol: f64) -> usize {
    let top = sv.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rank_tol * top).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRank {
    pub lambda: f64,
    pub members: Vec<Mode>,
    pub multiplicity: usize,
    pub rank: usize,
    pub smallest_singular: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategicReport {
    pub basis: AnalysisBasis,
    pub domain: Rectangle,
    pub q: usize,
    /// Largest multiplicity among the slow eigenspaces.
    pub r: usize,
    pub slow_groups: usize,
    pub per_group: Vec<GroupRank>,
    pub verdict: bool,
    /// Smallest `r_n`-th singular value of the slow `G_n` (zero when `q < r_n`,
    /// infinite when there is nothing to observe).
    #[serde(serialize_with = "crate::report::ser_f64")]
    pub margin: f64,
    /// Members of rank-deficient eigenspaces.
    pub deficient_modes: Vec<Mode>,
}

pub fn check_strategic(
    sensors: &[SensorSpec],
    mode_set: &ModeSet,
    slow: SlowSpec,
    basis: AnalysisBasis,
    rank_tol: f64,
) -> Result<StrategicReport> {
    if sensors.is_empty() {
        return Err(Error::EmptySensorSet);
    }
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rank tolerance must lie in (0, 1), got {rank_tol}"
        )));
    }
    let split = SlowSplit::new(mode_set, slow)?;
    let q = sensors.len();
    let blocks = split
        .slow()
        .iter()
        .map(|g| build_gn(g, sensors, mode_set.domain()))
        .collect::<Result<Vec<_>>>()?;
    // Rank is judged against the largest singular value of the whole slow
    // output block, so a group whose coefficients are pure rounding noise
    // does not count as full rank.
    let scale = blocks.iter().filter_map(|g| singular_values(g).first().copied()).fold(0.0, f64::max);
    let mut per_group = Vec::with_capacity(split.slow_groups);
    let mut deficient_modes = Vec::new();
    let mut margin = f64::INFINITY;
    let mut ranks_ok = true;
    for (group, g) in split.slow().iter().zip(&blocks) {
        let sv = singular_values(g);
        let rank = if scale > 0.0 { sv.iter().filter(|&&s| s > rank_tol * scale).count() } else { 0 };
        let r_n = group.multiplicity();
        let rn_th = if sv.len() >= r_n { sv[r_n - 1] } else { 0.0 };
        margin = margin.min(rn_th);
        if rank < r_n {
            ranks_ok = false;
            deficient_modes.extend(group.members.iter().copied());
        }
        per_group.push(GroupRank {
            lambda: group.lambda,
            members: group.members.clone(),
            multiplicity: r_n,
            rank,
            smallest_singular: sv.last().copied().unwrap_or(0.0),
        });
    }
    let r = split.slow().iter().map(|g| g.multiplicity()).max().unwrap_or(0);
    let verdict = q >= r && ranks_ok && margin > rank_tol;
    Ok(StrategicReport {
        basis,
        domain: *mode_set.domain(),
        q,
        r,
        slow_groups: split.slow_groups,
        per_group,
        verdict,
        margin,
        deficient_modes,
    })
}

/// `∫₀ᵀ e^{sτ} dτ`, with the limit `T` at `s = 0`.
fn exp_integral(s: f64, horizon: f64) -> f64 {
    if s == 0.0 {
        horizon
    } else {
        (s * horizon).exp_m1() / s
    }
}

/// Finite-horizon observability Gramian of a diagonal modal system restricted
/// to the coordinates `slow` (columns of `c`).
pub fn observability_gramian(
    c: &DMatrix<f64>,
    rates: &[f64],
    slow: &[usize],
    horizon: f64,
) -> Result<DMatrix<f64>> {
    if !(horizon > 0.0) {
        return Err(Error::NonPositiveHorizon(horizon));
    }
    let k = slow.len();
    let cs = DMatrix::from_fn(c.nrows(), k, |r, j| c[(r, slow[j])]);
    let ctc = cs.transpose() * &cs;
    Ok(DMatrix::from_fn(k, k, |m, n| {
        ctc[(m, n)] * exp_integral(rates[slow[m]] + rates[slow[n]], horizon)
    }))
}

/// Smallest eigenvalue of the slow-subspace observability Gramian; `+∞` when
/// the slow subspace is empty.
pub fn observability_margin(
    c: &DMatrix<f64>,
    rates: &[f64],
    slow: &[usize],
    horizon: f64,
) -> Result<f64> {
    let w = observability_gramian(c, rates, slow, horizon)?;
    if slow.is_empty() {
        return Ok(f64::INFINITY);
    }
    Ok(smallest_eigen(&w).0.max(0.0))
}

/// Smallest eigenvalue of a symmetric matrix and its eigenvector.
pub(crate) fn smallest_eigen(w: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let eig = SymmetricEigen::new(w.clone());
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .unwrap();
    (val, eig.eigenvectors.column(idx).iter().copied().collect())
}

/// Convenience: margin of `sensors` on the slow part of `mode_set`.
pub fn sensor_margin(
    sensors: &[SensorSpec],
    mode_set: &ModeSet,
    slow: SlowSpec,
    horizon: f64,
) -> Result<f64> {
    let split = SlowSplit::new(mode_set, slow)?;
    let idx = split.slow_indices();
    if idx.is_empty() {
        if !(horizon > 0.0) {
            return Err(Error::NonPositiveHorizon(horizon));
        }
        return Ok(f64::INFINITY);
    }
    let modes: Vec<Mode> = idx.iter().map(|&k| mode_set.modes()[k]).collect();
    let c = build_output_matrix_on(sensors, &modes, mode_set.domain())?.matrix;
    let rates_all = mode_set.rates();
    let rates: Vec<f64> = idx.iter().map(|&k| rates_all[k]).collect();
    let local: Vec<usize> = (0..idx.len()).collect();
    observability_margin(&c, &rates, &local, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VanishingMode {
    pub mode: Mode,
    pub axis: Axis,
    /// `k · (b − a)/(β − a)`, which sits on a half-odd integer.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementVerdict {
    pub vanishing_modes: Vec<VanishingMode>,
    pub is_bad: bool,
}

const PREDICATE_TOL: f64 = 1e-12;

fn half_odd(phase: f64) -> bool {
    let t = phase - 0.5;
    (t - t.round()).abs() <= PREDICATE_TOL
}

/// All modes `(i, j)` with `i ≤ n1`, `j ≤ n2`.
pub fn modes_up_to(n1: usize, n2: usize) -> Vec<Mode> {
    (0..=n1).flat_map(|i| (0..=n2).map(move |j| Mode::new(i, j))).collect()
}

fn predicate_at(basis_domain: &Rectangle, p: [f64; 2], modes: &[Mode]) -> PlacementVerdict {
    let sx = (p[0] - basis_domain.x_min) / basis_domain.width();
    let sy = (p[1] - basis_domain.y_min) / basis_domain.height();
    let mut vanishing_modes = Vec::new();
    for &mode in modes {
        let px = mode.i as f64 * sx;
        let py = mode.j as f64 * sy;
        if half_odd(px) {
            vanishing_modes.push(VanishingMode {
                mode,
                axis: Axis::X,
                phase: px,
            });
        } else if half_odd(py) {
            vanishing_modes.push(VanishingMode {
                mode,
                axis: Axis::Y,
                phase: py,
            });
        }
    }
    PlacementVerdict {
        is_bad: !vanishing_modes.is_empty(),
        vanishing_modes,
    }
}

/// Modes whose cosine factor vanishes at the pointwise sensor location `b`.
pub fn placement_predicate_point(basis_domain: &Rectangle, b: [f64; 2], modes: &[Mode]) -> PlacementVerdict {
    predicate_at(basis_domain, b, modes)
}

/// Modes annihilated by a zone sensor whose profile is symmetric about `center`
/// in both axes.
pub fn placement_predicate_zone(
    basis_domain: &Rectangle,
    center: [f64; 2],
    modes: &[Mode],
) -> PlacementVerdict {
    predicate_at(basis_domain, center, modes)
}

/// Symmetry center of a sensor whose closed-form predicate is known.
pub fn predicate_center(sensor: &SensorSpec) -> Option<[f64; 2]> {
    match sensor {
        SensorSpec::InteriorPoint { at } | SensorSpec::BoundaryPoint { at } => Some(*at),
        SensorSpec::InteriorZone { support, profile } => match profile {
            Profile::Uniform => Some(support.center()),
            Profile::SymmetricTriangle { center } => Some(*center),
            Profile::Tabulated { .. } => None,
        },
        _ => None,
    }
}

/// Inputs of a placement scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSetup {
    pub domain: Rectangle,
    pub region: Rectangle,
    pub orders: (usize, usize),
    pub shift: f64,
    pub slow: SlowSpec,
    pub horizon: f64,
    pub resolution: usize,
    /// Worker threads; `0` means available parallelism.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanCell {
    pub x: f64,
    pub y: f64,
    pub margin_global: f64,
    pub margin_regional: f64,
    pub predicate_flag: bool,
}

struct BasisScan {
    domain: Rectangle,
    modes: Vec<Mode>,
    rates: Vec<f64>,
}

impl BasisScan {
    fn new(mode_set: &ModeSet, slow: SlowSpec) -> Result<Self> {
        let split = SlowSplit::new(mode_set, slow)?;
        let idx = split.slow_indices();
        let rates_all = mode_set.rates();
        Ok(Self {
            domain: *mode_set.domain(),
            modes: idx.iter().map(|&k| mode_set.modes()[k]).collect(),
            rates: idx.iter().map(|&k| rates_all[k]).collect(),
        })
    }

    fn margin(&self, sensor: &SensorSpec, horizon: f64) -> Result<f64> {
        if self.modes.is_empty() {
            return Ok(f64::INFINITY);
        }
        let row = sensor_coefficients(sensor, &self.modes, &self.domain)?;
        let c = DMatrix::from_row_slice(1, row.len(), &row);
        let local: Vec<usize> = (0..self.modes.len()).collect();
        observability_margin(&c, &self.rates, &local, horizon)
    }
}

/// Moves `template` over a `resolution × resolution` grid spanning `Ω`
/// (boundary included, `y` outer, `x` inner) and records global and regional
/// margins at each node.
pub fn placement_scan(template: &SensorSpec, setup: &ScanSetup) -> Result<Vec<ScanCell>> {
    if setup.resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "scan resolution must be at least 2, got {}",
            setup.resolution
        )));
    }
    if !(setup.horizon > 0.0) {
        return Err(Error::NonPositiveHorizon(setup.horizon));
    }
    let global = BasisScan::new(
        &basis_mode_set(AnalysisBasis::Global, &setup.domain, &setup.region, setup.orders, setup.shift)?,
        setup.slow,
    )?;
    let regional = BasisScan::new(
        &basis_mode_set(AnalysisBasis::Regional, &setup.domain, &setup.region, setup.orders, setup.shift)?,
        setup.slow,
    )?;
    let n = setup.resolution;
    let d = &setup.domain;
    let nodes: Vec<[f64; 2]> = (0..n)
        .flat_map(|iy| {
            (0..n).map(move |ix| {
                [
                    d.x_min + d.width() * ix as f64 / (n - 1) as f64,
                    d.y_min + d.height() * iy as f64 / (n - 1) as f64,
                ]
            })
        })
        .collect();

    let eval = |p: &[f64; 2]| -> Result<ScanCell> {
        let sensor = template.relocated(*p);
        let predicate_flag = predicate_center(&sensor)
            .map(|c| predicate_at(&global.domain, c, &global.modes).is_bad)
            .unwrap_or(false);
        Ok(ScanCell {
            x: p[0],
            y: p[1],
            margin_global: global.margin(&sensor, setup.horizon)?,
            margin_regional: regional.margin(&sensor, setup.horizon)?,
            predicate_flag,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(setup.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| nodes.par_iter().map(eval).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    use crate::spectral::group_by_eigenvalue;
    use crate::spectral::DEFAULT_GROUP_TOL;

    fn point(x: f64, y: f64) -> SensorSpec {
        SensorSpec::InteriorPoint { at: [x, y] }
    }

    fn degenerate_group() -> (ModeSet, EigenspaceGroup) {
        let ms = build_mode_set(Rectangle::unit(), 2, 2, 0.0);
        let g = group_by_eigenvalue(&ms, DEFAULT_GROUP_TOL).unwrap()[1].clone();
        (ms, g)
    }

    #[test]
    fn gn_shapes_and_values() {
        let (ms, g) = degenerate_group();
        let one = build_gn(&g, &[point(0.3, 0.7)], ms.domain()).unwrap();
        assert_eq!(one.shape(), (1, 2));
        assert!(numerical_rank(&singular_values(&one), DEFAULT_RANK_TOL) <= 1);

        let mid = build_gn(&g, &[point(0.5, 0.5)], ms.domain()).unwrap();
        assert!(mid.iter().all(|v| v.abs() < 1e-15));

        let gen = build_gn(&g, &[point(0.2, 0.3)], ms.domain()).unwrap();
        assert_relative_eq!(gen[(0, 0)], 2f64.sqrt() * (0.3 * PI).cos(), epsilon = 1e-14);
        assert_relative_eq!(gen[(0, 1)], 2f64.sqrt() * (0.2 * PI).cos(), epsilon = 1e-14);
        assert!((gen[(0, 0)] - 0.8313).abs() < 1e-4);
        assert!((gen[(0, 1)] - 1.1441).abs() < 1e-4);
    }

    #[test]
    fn single_sensor_cannot_observe_a_double_eigenspace() {
        let ms = build_mode_set(Rectangle::unit(), 2, 2, 0.0);
        let rep = check_strategic(&[point(0.21, 0.37)], &ms, SlowSpec::Groups(2), AnalysisBasis::Global, DEFAULT_RANK_TOL)
            .unwrap();
        assert!(!rep.verdict);
        assert_eq!(rep.r, 2);
        assert_eq!(rep.margin, 0.0);
    }

    #[test]
    fn two_generic_sensors_are_strategic() {
        let ms = build_mode_set(Rectangle::unit(), 2, 2, 0.0);
        let rep = check_strategic(
            &[point(0.2, 0.3), point(0.7, 0.6)],
            &ms,
            SlowSpec::Groups(2),
            AnalysisBasis::Global,
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert!(rep.verdict);
        assert!(rep.margin > 1e-3);
    }

    #[test]
    fn midpoint_sensor_on_incommensurate_rectangle() {
        let r = Rectangle::new(0.0, 1.0, 0.0, 2f64.sqrt()).unwrap();
        let ms = build_mode_set(r, 3, 3, 0.0);
        let rep = check_strategic(&[point(0.5, 0.5)], &ms, SlowSpec::Groups(3), AnalysisBasis::Global, DEFAULT_RANK_TOL)
            .unwrap();
        assert!(!rep.verdict);
        assert!(rep.deficient_modes.contains(&Mode::new(1, 0)));
    }

    #[test]
    fn empty_sensor_set_is_an_error() {
        let ms = build_mode_set(Rectangle::unit(), 1, 1, 0.0);
        assert_eq!(
            check_strategic(&[], &ms, SlowSpec::Groups(1), AnalysisBasis::Global, DEFAULT_RANK_TOL).unwrap_err(),
            Error::EmptySensorSet
        );
    }

    #[test]
    fn gramian_margin_examples() {
        let c = DMatrix::from_element(1, 1, 1.0);
        assert_relative_eq!(observability_margin(&c, &[0.0], &[0], 2.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(observability_margin(&c, &[-1.0], &[0], 60.0).unwrap(), 0.5, epsilon = 1e-12);
        let z = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(observability_margin(&z, &[0.0, -1.0], &[0, 1], 1.0).unwrap() < 1e-15);
        assert!(matches!(
            observability_margin(&c, &[0.0], &[0], 0.0),
            Err(Error::NonPositiveHorizon(_))
        ));
        assert_eq!(observability_margin(&c, &[0.0], &[], 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn point_predicate_examples() {
        let sq = Rectangle::unit();
        let v = placement_predicate_point(&sq, [0.5, 0.3], &[Mode::new(1, 0)]);
        assert!(v.is_bad);
        assert_eq!(v.vanishing_modes[0].axis, Axis::X);
        assert!(placement_predicate_point(&sq, [0.25, 0.3], &[Mode::new(2, 0)]).is_bad);
        assert!(!placement_predicate_point(&sq, [0.25, 0.3], &[Mode::new(1, 0)]).is_bad);
        let c = crate::sensing::sensor_coefficient(&point(0.25, 0.3), Mode::new(1, 0), &sq).unwrap();
        assert!(c.abs() > 1e-3);
    }

    #[test]
    fn zone_predicate_examples() {
        let sq = Rectangle::unit();
        assert!(placement_predicate_zone(&sq, [0.5, 0.3], &[Mode::new(1, 0)]).is_bad);
        let all = modes_up_to(6, 0);
        assert!(!placement_predicate_zone(&sq, [0.0, 0.3], &all).is_bad);
    }
}
