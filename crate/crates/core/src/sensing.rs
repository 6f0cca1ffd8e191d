//! Sensor models and the modal output operator `C`.
//!
//! Every sensor is a linear functional on the state. Its coefficient against a
//! basis mode is the functional applied to the eigenfunction: a point value for
//! Dirac sensors, an area integral for zones, and a line integral for boundary
//! zones and filaments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{composite_rule_with_breaks, refine, Refinement};
use crate::spectral::{axis_value, eigenfunction_value, Mode, ModeSet, Rectangle};

/// Spatial weight of a zone, boundary zone or filament sensor.
///
/// On line supports (boundary zones, filaments) the profile is a function of
/// arc length; a triangle's `center` is then projected onto the curve and a
/// tabulated profile must have `shape = [n, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    Uniform,
    /// Tent peaking at `center` and vanishing at the nearer support edge,
    /// separable in `x` and `y` on zones.
    SymmetricTriangle { center: [f64; 2] },
    /// Samples on a regular `shape[0] × shape[1]` grid spanning the support,
    /// `x` index fastest; interpolated (bi)linearly.
    Tabulated { shape: [usize; 2], values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edge {
    Bottom,
    Top,
    Left,
    Right,
}

impl Edge {
    pub fn name(&self) -> &'static str {
        match self {
            Edge::Bottom => "bottom",
            Edge::Top => "top",
            Edge::Left => "left",
            Edge::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Edge> {
        match s {
            "bottom" => Some(Edge::Bottom),
            "top" => Some(Edge::Top),
            "left" => Some(Edge::Left),
            "right" => Some(Edge::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SensorSpec {
    InteriorPoint {
        at: [f64; 2],
    },
    InteriorZone {
        support: Rectangle,
        profile: Profile,
    },
    /// Zone on one edge of the domain; `from..to` runs along the edge
    /// (`x` for bottom/top, `y` for left/right) and `level` is the fixed
    /// coordinate of that edge.
    BoundaryZone {
        edge: Edge,
        level: f64,
        from: f64,
        to: f64,
        profile: Profile,
    },
    BoundaryPoint {
        at: [f64; 2],
    },
    Filament {
        polyline: Vec<[f64; 2]>,
        weight: Profile,
    },
}

const BOUNDARY_TOL: f64 = 1e-12;

impl SensorSpec {
    /// Boundary zone on `edge` of `domain`, spanning `from..to` along the edge.
    pub fn boundary_zone(domain: &Rectangle, edge: Edge, from: f64, to: f64, profile: Profile) -> Self {
        SensorSpec::BoundaryZone {
            edge,
            level: edge_level(domain, edge),
            from,
            to,
            profile,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SensorSpec::InteriorPoint { .. } => "point",
            SensorSpec::InteriorZone { .. } => "zone",
            SensorSpec::BoundaryZone { .. } => "boundary_zone",
            SensorSpec::BoundaryPoint { .. } => "boundary_point",
            SensorSpec::Filament { .. } => "filament",
        }
    }

    /// Checks the geometry against the system domain `Ω`.
    pub fn validate(&self, domain: &Rectangle) -> Result<()> {
        match self {
            SensorSpec::InteriorPoint { at } => {
                if !domain.contains_strictly(*at) {
                    return Err(Error::InvalidGeometry(format!(
                        "interior point {at:?} is not strictly inside {domain}"
                    )));
                }
            }
            SensorSpec::InteriorZone { support, profile } => {
                if !domain.contains_rect(support) {
                    return Err(Error::InvalidGeometry(format!(
                        "zone support {support} is not contained in {domain}"
                    )));
                }
                validate_zone_profile(support, profile)?;
            }
            SensorSpec::BoundaryZone {
                edge,
                level,
                from,
                to,
                profile,
            } => {
                let (lo, hi) = edge_extent(domain, *edge);
                if !(from < to) || *from < lo || *to > hi {
                    return Err(Error::InvalidGeometry(format!(
                        "boundary interval [{from}, {to}] must be increasing and within [{lo}, {hi}] on the {} edge",
                        edge.name()
                    )));
                }
                let expected = edge_level(domain, *edge);
                if (level - expected).abs() > BOUNDARY_TOL * domain.width().max(domain.height()) {
                    return Err(Error::InvalidGeometry(format!(
                        "boundary zone level {level} is not on the {} edge ({expected})",
                        edge.name()
                    )));
                }
                validate_line_profile(&boundary_segment(*edge, *level, *from, *to)?, profile)?;
            }
            SensorSpec::BoundaryPoint { at } => {
                if !domain.on_boundary(*at, BOUNDARY_TOL) {
                    return Err(Error::InvalidGeometry(format!(
                        "boundary point {at:?} does not lie on the boundary of {domain}"
                    )));
                }
            }
            SensorSpec::Filament { polyline, weight } => {
                if polyline.len() < 2 {
                    return Err(Error::InvalidGeometry(
                        "filament polyline needs at least 2 points".into(),
                    ));
                }
                if let Some(p) = polyline.iter().find(|p| !domain.contains(**p)) {
                    return Err(Error::InvalidGeometry(format!(
                        "filament vertex {p:?} lies outside {domain}"
                    )));
                }
                let line = Polyline::new(polyline.clone())?;
                validate_line_profile(&line, weight)?;
            }
        }
        Ok(())
    }

    /// Moves the sensor so that its reference point sits at `to`.
    ///
    /// The reference point is the location for point sensors, the support
    /// center for zones and the first vertex for filaments. Boundary zones are
    /// shifted along their edge.
    pub fn relocated(&self, to: [f64; 2]) -> SensorSpec {
        match self {
            SensorSpec::InteriorPoint { .. } => SensorSpec::InteriorPoint { at: to },
            SensorSpec::BoundaryPoint { .. } => SensorSpec::BoundaryPoint { at: to },
            SensorSpec::InteriorZone { support, profile } => {
                let c = support.center();
                let (dx, dy) = (to[0] - c[0], to[1] - c[1]);
                SensorSpec::InteriorZone {
                    support: Rectangle {
                        x_min: support.x_min + dx,
                        x_max: support.x_max + dx,
                        y_min: support.y_min + dy,
                        y_max: support.y_max + dy,
                    },
                    profile: shift_profile(profile, dx, dy),
                }
            }
            SensorSpec::BoundaryZone {
                edge,
                level,
                from,
                to: end,
                profile,
            } => {
                let along = match edge {
                    Edge::Bottom | Edge::Top => to[0],
                    Edge::Left | Edge::Right => to[1],
                };
                let d = along - 0.5 * (from + end);
                let (dx, dy) = match edge {
                    Edge::Bottom | Edge::Top => (d, 0.0),
                    Edge::Left | Edge::Right => (0.0, d),
                };
                SensorSpec::BoundaryZone {
                    edge: *edge,
                    level: *level,
                    from: from + d,
                    to: end + d,
                    profile: shift_profile(profile, dx, dy),
                }
            }
            SensorSpec::Filament { polyline, weight } => {
                let (dx, dy) = (to[0] - polyline[0][0], to[1] - polyline[0][1]);
                SensorSpec::Filament {
                    polyline: polyline.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
                    weight: shift_profile(weight, dx, dy),
                }
            }
        }
    }
}

fn shift_profile(profile: &Profile, dx: f64, dy: f64) -> Profile {
    match profile {
        Profile::SymmetricTriangle { center } => Profile::SymmetricTriangle {
            center: [center[0] + dx, center[1] + dy],
        },
        other => other.clone(),
    }
}

fn edge_extent(domain: &Rectangle, edge: Edge) -> (f64, f64) {
    match edge {
        Edge::Bottom | Edge::Top => (domain.x_min, domain.x_max),
        Edge::Left | Edge::Right => (domain.y_min, domain.y_max),
    }
}

fn edge_level(domain: &Rectangle, edge: Edge) -> f64 {
    match edge {
        Edge::Bottom => domain.y_min,
        Edge::Top => domain.y_max,
        Edge::Left => domain.x_min,
        Edge::Right => domain.x_max,
    }
}

fn boundary_segment(edge: Edge, level: f64, from: f64, to: f64) -> Result<Polyline> {
    let point = |s: f64| match edge {
        Edge::Bottom | Edge::Top => [s, level],
        Edge::Left | Edge::Right => [level, s],
    };
    Polyline::new(vec![point(from), point(to)])
}

fn validate_tabulated(shape: [usize; 2], values: &[f64], line: bool) -> Result<()> {
    let ok_shape = if line {
        shape[0] >= 2 && shape[1] == 1
    } else {
        shape[0] >= 2 && shape[1] >= 2
    };
    if !ok_shape || values.len() != shape[0] * shape[1] {
        return Err(Error::InvalidGeometry(format!(
            "tabulated profile shape {shape:?} does not match {} samples",
            values.len()
        )));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidGeometry(
            "tabulated profile values must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

fn validate_zone_profile(support: &Rectangle, profile: &Profile) -> Result<()> {
    match profile {
        Profile::Uniform => Ok(()),
        Profile::SymmetricTriangle { center } => {
            if support.contains_strictly(*center) {
                Ok(())
            } else {
                Err(Error::InvalidGeometry(format!(
                    "triangle center {center:?} must lie inside the support {support}"
                )))
            }
        }
        Profile::Tabulated { shape, values } => validate_tabulated(*shape, values, false),
    }
}

fn validate_line_profile(line: &Polyline, profile: &Profile) -> Result<()> {
    match profile {
        Profile::Uniform => Ok(()),
        Profile::SymmetricTriangle { center } => {
            let (s0, dist) = line.project(*center);
            let scale = line.length();
            if dist > 1e-9 * scale.max(1.0) {
                return Err(Error::InvalidGeometry(format!(
                    "triangle center {center:?} does not lie on the sensor curve"
                )));
            }
            if s0.min(scale - s0) <= 0.0 {
                return Err(Error::InvalidGeometry(format!(
                    "triangle center {center:?} must not coincide with a curve end"
                )));
            }
            Ok(())
        }
        Profile::Tabulated { shape, values } => validate_tabulated(*shape, values, true),
    }
}

/// Axis tent `max(0, 1 − |s − c|/h)` with `h` the distance to the nearer edge.
#[derive(Debug, Clone, Copy)]
struct Tent {
    center: f64,
    half_width: f64,
}

impl Tent {
    fn new(center: f64, lo: f64, hi: f64) -> Self {
        Self {
            center,
            half_width: (center - lo).min(hi - center),
        }
    }

    fn eval(&self, s: f64) -> f64 {
        if self.half_width <= 0.0 {
            return 0.0;
        }
        (1.0 - (s - self.center).abs() / self.half_width).max(0.0)
    }

    fn breaks(&self) -> [f64; 3] {
        [
            self.center - self.half_width,
            self.center,
            self.center + self.half_width,
        ]
    }
}

fn linear_interp(samples: &[f64], t: f64) -> f64 {
    let n = samples.len();
    let pos = (t.clamp(0.0, 1.0)) * (n - 1) as f64;
    let k = (pos.floor() as usize).min(n - 2);
    let frac = pos - k as f64;
    samples[k] * (1.0 - frac) + samples[k + 1] * frac
}

/// Evaluable form of a zone profile on its support.
enum ZoneWeight<'a> {
    Uniform,
    Tent(Tent, Tent),
    Bilinear {
        support: Rectangle,
        nx: usize,
        ny: usize,
        values: &'a [f64],
    },
}

impl<'a> ZoneWeight<'a> {
    fn new(support: &Rectangle, profile: &'a Profile) -> Self {
        match profile {
            Profile::Uniform => ZoneWeight::Uniform,
            Profile::SymmetricTriangle { center } => ZoneWeight::Tent(
                Tent::new(center[0], support.x_min, support.x_max),
                Tent::new(center[1], support.y_min, support.y_max),
            ),
            Profile::Tabulated { shape, values } => ZoneWeight::Bilinear {
                support: *support,
                nx: shape[0],
                ny: shape[1],
                values,
            },
        }
    }

    fn eval(&self, p: [f64; 2]) -> f64 {
        match self {
            ZoneWeight::Uniform => 1.0,
            ZoneWeight::Tent(tx, ty) => tx.eval(p[0]) * ty.eval(p[1]),
            ZoneWeight::Bilinear {
                support,
                nx,
                ny,
                values,
            } => {
                let tx = ((p[0] - support.x_min) / support.width()).clamp(0.0, 1.0);
                let ty = ((p[1] - support.y_min) / support.height()).clamp(0.0, 1.0);
                let px = tx * (*nx - 1) as f64;
                let py = ty * (*ny - 1) as f64;
                let ix = (px.floor() as usize).min(nx - 2);
                let iy = (py.floor() as usize).min(ny - 2);
                let (fx, fy) = (px - ix as f64, py - iy as f64);
                let v = |i: usize, j: usize| values[j * nx + i];
                (1.0 - fy) * ((1.0 - fx) * v(ix, iy) + fx * v(ix + 1, iy))
                    + fy * ((1.0 - fx) * v(ix, iy + 1) + fx * v(ix + 1, iy + 1))
            }
        }
    }

    fn breaks(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ZoneWeight::Uniform => (vec![], vec![]),
            ZoneWeight::Tent(tx, ty) => (tx.breaks().to_vec(), ty.breaks().to_vec()),
            ZoneWeight::Bilinear {
                support, nx, ny, ..
            } => (
                (1..nx - 1)
                    .map(|k| support.x_min + support.width() * k as f64 / (*nx - 1) as f64)
                    .collect(),
                (1..ny - 1)
                    .map(|k| support.y_min + support.height() * k as f64 / (*ny - 1) as f64)
                    .collect(),
            ),
        }
    }
}

/// Arc-length parametrized polyline.
#[derive(Debug, Clone)]
struct Polyline {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

impl Polyline {
    fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if !(len > 0.0) {
                return Err(Error::InvalidGeometry(
                    "sensor curve has a zero-length segment".into(),
                ));
            }
            cumulative.push(cumulative.last().unwrap() + len);
        }
        Ok(Self { points, cumulative })
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Arc position of the closest point to `p`, and the distance to it.
    fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for (k, w) in self.points.windows(2).enumerate() {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = (((p[0] - w[0][0]) * d[0] + (p[1] - w[0][1]) * d[1]) / len2).clamp(0.0, 1.0);
            let q = [w[0][0] + t * d[0], w[0][1] + t * d[1]];
            let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if dist < best.1 {
                let seg = self.cumulative[k + 1] - self.cumulative[k];
                best = (self.cumulative[k] + t * seg, dist);
            }
        }
        best
    }
}

enum LineWeight<'a> {
    Uniform,
    Tent(Tent),
    Linear { length: f64, values: &'a [f64] },
}

impl<'a> LineWeight<'a> {
    fn new(line: &Polyline, profile: &'a Profile) -> Self {
        match profile {
            Profile::Uniform => LineWeight::Uniform,
            Profile::SymmetricTriangle { center } => {
                let (s0, _) = line.project(*center);
                LineWeight::Tent(Tent::new(s0, 0.0, line.length()))
            }
            Profile::Tabulated { values, .. } => LineWeight::Linear {
                length: line.length(),
                values,
            },
        }
    }

    fn eval(&self, s: f64) -> f64 {
        match self {
            LineWeight::Uniform => 1.0,
            LineWeight::Tent(t) => t.eval(s),
            LineWeight::Linear { length, values } => linear_interp(values, s / length),
        }
    }

    fn breaks(&self) -> Vec<f64> {
        match self {
            LineWeight::Uniform => vec![],
            LineWeight::Tent(t) => t.breaks().to_vec(),
            LineWeight::Linear { length, values } => (1..values.len() - 1)
                .map(|k| length * k as f64 / (values.len() - 1) as f64)
                .collect(),
        }
    }
}

/// Coefficient of one sensor against one basis mode.
pub fn sensor_coefficient(sensor: &SensorSpec, mode: Mode, basis_domain: &Rectangle) -> Result<f64> {
    Ok(sensor_coefficients(sensor, &[mode], basis_domain)?[0])
}

/// Coefficients of one sensor against several basis modes, sharing one
/// quadrature refinement.
pub fn sensor_coefficients(
    sensor: &SensorSpec,
    modes: &[Mode],
    basis_domain: &Rectangle,
) -> Result<Vec<f64>> {
    sensor_coefficients_with(sensor, modes, basis_domain, Refinement::default())
}

pub fn sensor_coefficients_with(
    sensor: &SensorSpec,
    modes: &[Mode],
    basis: &Rectangle,
    rule: Refinement,
) -> Result<Vec<f64>> {
    match sensor {
        SensorSpec::InteriorPoint { at } | SensorSpec::BoundaryPoint { at } => {
            Ok(modes.iter().map(|&m| eigenfunction_value(basis, m, *at)).collect())
        }
        SensorSpec::InteriorZone { support, profile } => {
            zone_coefficients(support, &ZoneWeight::new(support, profile), modes, basis, rule)
        }
        SensorSpec::BoundaryZone {
            edge,
            level,
            from,
            to,
            profile,
        } => {
            let line = boundary_segment(*edge, *level, *from, *to)?;
            line_coefficients(&line, &LineWeight::new(&line, profile), modes, basis, rule)
        }
        SensorSpec::Filament { polyline, weight } => {
            let line = Polyline::new(polyline.clone())?;
            line_coefficients(&line, &LineWeight::new(&line, weight), modes, basis, rule)
        }
    }
}

fn zone_coefficients(
    support: &Rectangle,
    weight: &ZoneWeight<'_>,
    modes: &[Mode],
    basis: &Rectangle,
    rule: Refinement,
) -> Result<Vec<f64>> {
    let (bx, by) = weight.breaks();
    let max_i = modes.iter().map(|m| m.i).max().unwrap_or(0);
    let max_j = modes.iter().map(|m| m.j).max().unwrap_or(0);
    let (lx, ly) = (basis.width(), basis.height());
    refine(rule, |panels| {
        let (xs, wxs) = composite_rule_with_breaks(support.x_min, support.x_max, &bx, panels);
        let (ys, wys) = composite_rule_with_breaks(support.y_min, support.y_max, &by, panels);
        // inner[x][j] = Σ_y w_y Y_j(y) f(x, y), and the same with |Y_j|
        let mut inner = vec![vec![0.0; max_j + 1]; xs.len()];
        let mut inner_abs = vec![vec![0.0; max_j + 1]; xs.len()];
        let ytab: Vec<Vec<f64>> = ys
            .iter()
            .map(|&y| (0..=max_j).map(|j| axis_value(j, y, basis.y_min, ly)).collect())
            .collect();
        for (ix, &x) in xs.iter().enumerate() {
            for (iy, (&y, &wy)) in ys.iter().zip(&wys).enumerate() {
                let f = weight.eval([x, y]);
                if f == 0.0 {
                    continue;
                }
                for j in 0..=max_j {
                    let v = wy * f * ytab[iy][j];
                    inner[ix][j] += v;
                    inner_abs[ix][j] += v.abs();
                }
            }
        }
        let mut vals = vec![0.0; modes.len()];
        let mut scale = vec![0.0; modes.len()];
        for (ix, (&x, &wx)) in xs.iter().zip(&wxs).enumerate() {
            let xtab: Vec<f64> = (0..=max_i).map(|i| axis_value(i, x, basis.x_min, lx)).collect();
            for (k, m) in modes.iter().enumerate() {
                vals[k] += wx * xtab[m.i] * inner[ix][m.j];
                scale[k] += wx * xtab[m.i].abs() * inner_abs[ix][m.j];
            }
        }
        (vals, scale)
    })
}

fn line_coefficients(
    line: &Polyline,
    weight: &LineWeight<'_>,
    modes: &[Mode],
    basis: &Rectangle,
    rule: Refinement,
) -> Result<Vec<f64>> {
    let total = line.length();
    let breaks = weight.breaks();
    let vertices: Vec<f64> = line.cumulative[1..line.cumulative.len() - 1].to_vec();
    let all_breaks: Vec<f64> = breaks.into_iter().chain(vertices).collect();
    refine(rule, |panels| {
        let (ss, ws) = composite_rule_with_breaks(0.0, total, &all_breaks, panels);
        let mut vals = vec![0.0; modes.len()];
        let mut scale = vec![0.0; modes.len()];
        for (&s, &w) in ss.iter().zip(&ws) {
            let f = weight.eval(s);
            if f == 0.0 {
                continue;
            }
            let p = point_at(line, s);
            for (k, &m) in modes.iter().enumerate() {
                let v = w * f * eigenfunction_value(basis, m, p);
                vals[k] += v;
                scale[k] += v.abs();
            }
        }
        (vals, scale)
    })
}

fn point_at(line: &Polyline, s: f64) -> [f64; 2] {
    let k = match line
        .cumulative
        .binary_search_by(|c| c.total_cmp(&s))
    {
        Ok(k) => k.min(line.points.len() - 2),
        Err(k) => k.saturating_sub(1).min(line.points.len() - 2),
    };
    let (a, b) = (line.points[k], line.points[k + 1]);
    let seg = line.cumulative[k + 1] - line.cumulative[k];
    let t = (s - line.cumulative[k]) / seg;
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// The `q × n` matrix `C` of sensor coefficients against a mode set.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputOperator {
    pub matrix: DMatrix<f64>,
    pub sensors: Vec<SensorSpec>,
    pub basis_domain: Rectangle,
}

impl OutputOperator {
    pub fn outputs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn modes(&self) -> usize {
        self.matrix.ncols()
    }
}

pub fn build_output_matrix(sensors: &[SensorSpec], mode_set: &ModeSet) -> Result<OutputOperator> {
    build_output_matrix_on(sensors, mode_set.modes(), mode_set.domain())
}

/// Output matrix of `sensors` against an explicit mode list on `basis_domain`.
pub fn build_output_matrix_on(
    sensors: &[SensorSpec],
    modes: &[Mode],
    basis_domain: &Rectangle,
) -> Result<OutputOperator> {
    if sensors.is_empty() {
        return Err(Error::EmptySensorSet);
    }
    let mut matrix = DMatrix::zeros(sensors.len(), modes.len());
    for (s, sensor) in sensors.iter().enumerate() {
        let row = sensor_coefficients(sensor, modes, basis_domain).map_err(|e| Error::Sensor {
            index: s,
            source: Box::new(e),
        })?;
        for (m, v) in row.into_iter().enumerate() {
            matrix[(s, m)] = v;
        }
    }
    Ok(OutputOperator {
        matrix,
        sensors: sensors.to_vec(),
        basis_domain: *basis_domain,
    })
}

pub fn evaluate_output(op: &OutputOperator, modal_coeffs: &DVector<f64>) -> Result<DVector<f64>> {
    if modal_coeffs.len() != op.modes() {
        return Err(Error::DimensionMismatch {
            context: "evaluate_output",
            expected: op.modes().to_string(),
            found: modal_coeffs.len().to_string(),
        });
    }
    Ok(&op.matrix * modal_coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    use crate::spectral::build_mode_set;

    fn sq() -> Rectangle {
        Rectangle::unit()
    }

    #[test]
    fn point_sensor_at_midpoint_misses_first_cosine() {
        let s = SensorSpec::InteriorPoint { at: [0.5, 0.5] };
        assert!(sensor_coefficient(&s, Mode::new(1, 0), &sq()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn uniform_zone_constant_mode_is_area() {
        let s = SensorSpec::InteriorZone {
            support: Rectangle::new(0.25, 0.75, 0.25, 0.75).unwrap(),
            profile: Profile::Uniform,
        };
        assert_relative_eq!(
            sensor_coefficient(&s, Mode::new(0, 0), &sq()).unwrap(),
            0.25,
            epsilon = 1e-13
        );
    }

    #[test]
    fn full_period_zone_integral_vanishes() {
        let s = SensorSpec::InteriorZone {
            support: Rectangle::new(0.0, 1.0, 0.4, 0.6).unwrap(),
            profile: Profile::Uniform,
        };
        assert!(sensor_coefficient(&s, Mode::new(2, 0), &sq()).unwrap().abs() < 1e-13);
    }

    #[test]
    fn corner_point_row() {
        let ms = build_mode_set(sq(), 1, 0, 0.0);
        let op = build_output_matrix(&[SensorSpec::InteriorPoint { at: [0.0, 0.0] }], &ms).unwrap();
        assert_eq!(op.matrix.shape(), (1, 2));
        assert_relative_eq!(op.matrix[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(op.matrix[(0, 1)], 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn identical_sensors_identical_rows_and_shape() {
        let ms = build_mode_set(sq(), 2, 3, 0.0);
        let s = SensorSpec::InteriorPoint { at: [0.3, 0.8] };
        let op = build_output_matrix(&[s.clone(), s.clone(), s], &ms).unwrap();
        assert_eq!(op.matrix.shape(), (3, 12));
        assert_eq!(op.matrix.row(0), op.matrix.row(1));
    }

    #[test]
    fn empty_sensor_set_rejected() {
        let ms = build_mode_set(sq(), 1, 1, 0.0);
        assert_eq!(build_output_matrix(&[], &ms).unwrap_err(), Error::EmptySensorSet);
    }

    #[test]
    fn evaluate_output_checks_dimensions() {
        let ms = build_mode_set(sq(), 1, 1, 0.0);
        let op = build_output_matrix(&[SensorSpec::InteriorPoint { at: [0.2, 0.2] }], &ms).unwrap();
        assert!(evaluate_output(&op, &DVector::zeros(3)).is_err());
        let y = evaluate_output(&op, &DVector::zeros(4)).unwrap();
        assert_eq!(y[0], 0.0);
        let mut e = DVector::zeros(4);
        e[2] = 1.0;
        assert_eq!(evaluate_output(&op, &e).unwrap()[0], op.matrix[(0, 2)]);
    }

    #[test]
    fn boundary_zone_matches_analytic_trace_integral() {
        // bottom edge trace of mode (1, 0): √2 cos(πx), integrated on [0.1, 0.4]
        let s = SensorSpec::boundary_zone(&sq(), Edge::Bottom, 0.1, 0.4, Profile::Uniform);
        s.validate(&sq()).unwrap();
        let exact = 2f64.sqrt() * ((0.4 * PI).sin() - (0.1 * PI).sin()) / PI;
        assert_relative_eq!(
            sensor_coefficient(&s, Mode::new(1, 0), &sq()).unwrap(),
            exact,
            epsilon = 1e-12
        );
    }

    #[test]
    fn filament_uniform_weight_line_integral() {
        // vertical segment x = 0.3, y in [0.2, 0.9]; mode (1,1)
        let s = SensorSpec::Filament {
            polyline: vec![[0.3, 0.2], [0.3, 0.5], [0.3, 0.9]],
            weight: Profile::Uniform,
        };
        s.validate(&sq()).unwrap();
        let exact = 2.0 * (0.3 * PI).cos() * ((0.9 * PI).sin() - (0.2 * PI).sin()) / PI;
        assert_relative_eq!(
            sensor_coefficient(&s, Mode::new(1, 1), &sq()).unwrap(),
            exact,
            epsilon = 1e-12
        );
    }

    #[test]
    fn geometry_validation() {
        let d = sq();
        assert!(SensorSpec::InteriorPoint { at: [0.0, 0.5] }.validate(&d).is_err());
        assert!(SensorSpec::BoundaryPoint { at: [0.0, 0.5] }.validate(&d).is_ok());
        assert!(SensorSpec::BoundaryPoint { at: [0.1, 0.5] }.validate(&d).is_err());
        assert!(SensorSpec::Filament {
            polyline: vec![[0.1, 0.1]],
            weight: Profile::Uniform
        }
        .validate(&d)
        .is_err());
        assert!(SensorSpec::InteriorZone {
            support: Rectangle::new(0.5, 1.2, 0.1, 0.2).unwrap(),
            profile: Profile::Uniform
        }
        .validate(&d)
        .is_err());
        assert!(SensorSpec::InteriorZone {
            support: Rectangle::new(0.2, 0.4, 0.1, 0.2).unwrap(),
            profile: Profile::Tabulated {
                shape: [2, 2],
                values: vec![1.0, -1.0, 0.0, 0.0]
            }
        }
        .validate(&d)
        .is_err());
    }

    #[test]
    fn relocation_moves_reference_point() {
        let z = SensorSpec::InteriorZone {
            support: Rectangle::new(0.1, 0.3, 0.1, 0.3).unwrap(),
            profile: Profile::SymmetricTriangle { center: [0.2, 0.2] },
        };
        match z.relocated([0.5, 0.6]) {
            SensorSpec::InteriorZone { support, profile } => {
                assert_relative_eq!(support.center()[0], 0.5, epsilon = 1e-15);
                assert_relative_eq!(support.center()[1], 0.6, epsilon = 1e-15);
                assert_eq!(profile, Profile::SymmetricTriangle { center: [0.5, 0.6] });
            }
            _ => unreachable!(),
        }
    }
}
