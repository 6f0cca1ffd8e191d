//! Neumann Laplacian eigenbasis on axis-aligned rectangles.
//!
//! The basis is the L²-orthonormal cosine family
//!
//! ```text
//! φ_ij(x, y) = n_i(Lx) n_j(Ly) cos(iπ(x − x_min)/Lx) cos(jπ(y − y_min)/Ly),
//! λ_ij       = −(i²/Lx² + j²/Ly²) π²,
//! ```
//!
//! with `n_0(L) = 1/√L` and `n_k(L) = √(2/L)` for `k ≥ 1`. The cosine formula is
//! total on the plane, which is what lets a basis built on a sub-region be
//! evaluated at sensor locations outside of it.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance used to decide that two eigenvalues coincide.
pub const DEFAULT_GROUP_TOL: f64 = 1e-9;

/// Default slow-mode threshold σ_min (1/time).
pub const DEFAULT_SLOW_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rectangle {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let all_finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidGeometry(format!(
                "rectangle bounds must be finite, got [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidGeometry(format!(
                "rectangle must have x_min < x_max and y_min < y_max, got [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    /// The unit square `]0,1[²`.
    pub fn unit() -> Self {
        Self {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        ]
    }

    /// Closed containment.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    /// Open containment.
    pub fn contains_strictly(&self, p: [f64; 2]) -> bool {
        p[0] > self.x_min && p[0] < self.x_max && p[1] > self.y_min && p[1] < self.y_max
    }

    pub fn contains_rect(&self, other: &Rectangle) -> bool {
        other.x_min >= self.x_min
            && other.x_max <= self.x_max
            && other.y_min >= self.y_min
            && other.y_max <= self.y_max
    }

    /// Whether `p` lies on the boundary, within `tol` (scaled by the domain size).
    pub fn on_boundary(&self, p: [f64; 2], tol: f64) -> bool {
        let scale = self.width().max(self.height());
        let t = tol * scale;
        let in_x = p[0] >= self.x_min - t && p[0] <= self.x_max + t;
        let in_y = p[1] >= self.y_min - t && p[1] <= self.y_max + t;
        let on_vertical = (p[0] - self.x_min).abs() <= t || (p[0] - self.x_max).abs() <= t;
        let on_horizontal = (p[1] - self.y_min).abs() <= t || (p[1] - self.y_max).abs() <= t;
        in_x && in_y && (on_vertical || on_horizontal)
    }
}

impl fmt::Display for Rectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "]{}, {}[ x ]{}, {}[",
            self.x_min, self.x_max, self.y_min, self.y_max
        )
    }
}

/// Index pair `(i, j)` of a cosine eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mode {
    pub i: usize,
    pub j: usize,
}

impl Mode {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.i, self.j)
    }
}

#[inline]
fn axis_norm(k: usize, length: f64) -> f64 {
    if k == 0 {
        1.0 / length.sqrt()
    } else {
        (2.0 / length).sqrt()
    }
}

/// One-dimensional Neumann eigenfunction `n_k(L) cos(kπ(s − s0)/L)`.
#[inline]
pub fn axis_value(k: usize, s: f64, s0: f64, length: f64) -> f64 {
    if k == 0 {
        return axis_norm(0, length);
    }
    let w = k as f64 * PI / length;
    axis_norm(k, length) * (w * (s - s0)).cos()
}

#[inline]
pub fn axis_derivative(k: usize, s: f64, s0: f64, length: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let w = k as f64 * PI / length;
    -axis_norm(k, length) * w * (w * (s - s0)).sin()
}

#[inline]
pub fn axis_second_derivative(k: usize, s: f64, s0: f64, length: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let w = k as f64 * PI / length;
    -axis_norm(k, length) * w * w * (w * (s - s0)).cos()
}

pub fn eigenvalue(domain: &Rectangle, mode: Mode) -> f64 {
    let (i, j) = (mode.i as f64, mode.j as f64);
    let (lx, ly) = (domain.width(), domain.height());
    -(i * i / (lx * lx) + j * j / (ly * ly)) * PI * PI
}

pub fn eigenfunction_value(domain: &Rectangle, mode: Mode, p: [f64; 2]) -> f64 {
    axis_value(mode.i, p[0], domain.x_min, domain.width())
        * axis_value(mode.j, p[1], domain.y_min, domain.height())
}

pub fn eigenfunction_gradient(domain: &Rectangle, mode: Mode, p: [f64; 2]) -> [f64; 2] {
    let (lx, ly) = (domain.width(), domain.height());
    let fx = axis_value(mode.i, p[0], domain.x_min, lx);
    let fy = axis_value(mode.j, p[1], domain.y_min, ly);
    [
        axis_derivative(mode.i, p[0], domain.x_min, lx) * fy,
        fx * axis_derivative(mode.j, p[1], domain.y_min, ly),
    ]
}

/// Pure second partials `(∂²φ/∂x², ∂²φ/∂y²)`.
pub fn eigenfunction_second_derivatives(domain: &Rectangle, mode: Mode, p: [f64; 2]) -> [f64; 2] {
    let (lx, ly) = (domain.width(), domain.height());
    let fx = axis_value(mode.i, p[0], domain.x_min, lx);
    let fy = axis_value(mode.j, p[1], domain.y_min, ly);
    [
        axis_second_derivative(mode.i, p[0], domain.x_min, lx) * fy,
        fx * axis_second_derivative(mode.j, p[1], domain.y_min, ly),
    ]
}

/// A set of eigenspace-grouped modes sharing (up to tolerance) one eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenspaceGroup {
    pub lambda: f64,
    pub members: Vec<Mode>,
    /// Positions of `members` inside the owning [`ModeSet`].
    pub indices: Vec<usize>,
}

impl EigenspaceGroup {
    pub fn multiplicity(&self) -> usize {
        self.members.len()
    }
}

/// Truncated Neumann basis: all `(i, j)` with `i ≤ N₁`, `j ≤ N₂`, sorted by
/// descending growth rate `λ + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    domain: Rectangle,
    shift: f64,
    orders: (usize, usize),
    modes: Vec<Mode>,
    eigenvalues: Vec<f64>,
}

impl ModeSet {
    pub fn domain(&self) -> &Rectangle {
        &self.domain
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn orders(&self) -> (usize, usize) {
        self.orders
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Modal growth rates `λ_m + shift`, i.e. the diagonal of the modal generator.
    pub fn rates(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l + self.shift).collect()
    }

    pub fn index_of(&self, mode: Mode) -> Option<usize> {
        self.modes.iter().position(|&m| m == mode)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Mode, f64)> + '_ {
        self.modes.iter().copied().zip(self.eigenvalues.iter().copied())
    }

    /// Same truncation orders and shift, on a different rectangle.
    pub fn on_domain(&self, domain: Rectangle) -> ModeSet {
        build_mode_set(domain, self.orders.0, self.orders.1, self.shift)
    }
}

pub fn build_mode_set(domain: Rectangle, n1: usize, n2: usize, shift: f64) -> ModeSet {
    let mut pairs: Vec<(Mode, f64)> = (0..=n1)
        .flat_map(|i| (0..=n2).map(move |j| Mode::new(i, j)))
        .map(|m| (m, eigenvalue(&domain, m)))
        .collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    // Modes whose eigenvalues agree up to rounding are reordered
    // lexicographically so that every eigenspace is a contiguous block.
    let mut ordered = Vec::with_capacity(pairs.len());
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && close(pairs[end - 1].1, pairs[end].1, DEFAULT_GROUP_TOL) {
            end += 1;
        }
        let mut block = pairs[start..end].to_vec();
        block.sort_by_key(|a| a.0);
        ordered.extend(block);
        start = end;
    }

    let (modes, eigenvalues) = ordered.into_iter().unzip();
    ModeSet {
        domain,
        shift,
        orders: (n1, n2),
        modes,
        eigenvalues,
    }
}

#[inline]
fn close(a: f64, b: f64, rel_tol: f64) -> bool {
    (a - b).abs() <= rel_tol * a.abs().max(1.0)
}

pub fn group_by_eigenvalue(mode_set: &ModeSet, rel_tol: f64) -> Result<Vec<EigenspaceGroup>> {
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "grouping tolerance must be positive, got {rel_tol}"
        )));
    }
    let lambdas = mode_set.eigenvalues();
    let mut order: Vec<usize> = (0..mode_set.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]).then(a.cmp(&b)));

    let mut groups: Vec<EigenspaceGroup> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for &idx in &order {
        if let Some(&last) = current.last() {
            if !close(lambdas[last], lambdas[idx], rel_tol) {
                groups.push(make_group(mode_set, std::mem::take(&mut current)));
            }
        }
        current.push(idx);
    }
    if !current.is_empty() {
        groups.push(make_group(mode_set, current));
    }
    Ok(groups)
}

fn make_group(mode_set: &ModeSet, mut indices: Vec<usize>) -> EigenspaceGroup {
    indices.sort_unstable();
    EigenspaceGroup {
        lambda: mode_set.eigenvalues()[indices[0]],
        members: indices.iter().map(|&k| mode_set.modes()[k]).collect(),
        indices,
    }
}

/// How many leading eigenspaces count as "slow" (must be observed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SlowSpec {
    /// An explicit number `J` of leading eigenspaces.
    Groups(usize),
    /// `J = #{groups : λ + shift > −σ_min}`.
    Threshold(f64),
}

impl Default for SlowSpec {
    fn default() -> Self {
        SlowSpec::Threshold(DEFAULT_SLOW_THRESHOLD)
    }
}

impl SlowSpec {
    pub fn group_count(&self, groups: &[EigenspaceGroup], shift: f64) -> Result<usize> {
        match *self {
            SlowSpec::Groups(j) if j <= groups.len() => Ok(j),
            SlowSpec::Groups(j) => Err(Error::InvalidArgument(format!(
                "slow group count {j} exceeds the {} available eigenspaces",
                groups.len()
            ))),
            SlowSpec::Threshold(sigma_min) => {
                Ok(groups.iter().filter(|g| g.lambda + shift > -sigma_min).count())
            }
        }
    }
}

/// Slow eigenspaces plus the leading-coordinate count they occupy in the [`ModeSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct SlowSplit {
    pub groups: Vec<EigenspaceGroup>,
    pub slow_groups: usize,
}

impl SlowSplit {
    pub fn new(mode_set: &ModeSet, spec: SlowSpec) -> Result<Self> {
        let groups = group_by_eigenvalue(mode_set, DEFAULT_GROUP_TOL)?;
        let slow_groups = spec.group_count(&groups, mode_set.shift())?;
        Ok(Self {
            groups,
            slow_groups,
        })
    }

    pub fn slow(&self) -> &[EigenspaceGroup] {
        &self.groups[..self.slow_groups]
    }

    /// Mode-set indices of all slow coordinates, in mode-set order.
    pub fn slow_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.slow().iter().flat_map(|g| g.indices.clone()).collect();
        idx.sort_unstable();
        idx
    }

    pub fn slow_dim(&self) -> usize {
        self.slow().iter().map(|g| g.multiplicity()).sum()
    }
}
