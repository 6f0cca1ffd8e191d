//! Composite Gauss–Legendre quadrature with panel doubling.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::Rectangle;

/// Gauss nodes per panel.
pub const NODES_PER_PANEL: usize = 8;

/// Refinement policy: panels are doubled until successive results agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    /// Allowed change between successive refinements, relative to `∫|f|`.
    pub rel_tol: f64,
    /// Largest panel count per axis (per sub-interval between breakpoints).
    pub max_panels: usize,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_panels: 1 << 10,
        }
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn reference_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(NODES_PER_PANEL))
}

/// Composite rule on `[a, b]` with `panels` equal panels.
pub fn composite_rule(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    composite_rule_with_breaks(a, b, &[], panels)
}

/// Composite rule on `[a, b]`, first split at the interior `breaks`, then
/// `panels` equal panels on every piece.
pub fn composite_rule_with_breaks(
    a: f64,
    b: f64,
    breaks: &[f64],
    panels: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (rn, rw) = reference_rule();
    let mut cuts: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&c| c > a && c < b))
        .chain(std::iter::once(b))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut nodes = Vec::with_capacity((cuts.len() - 1) * panels * rn.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for piece in cuts.windows(2) {
        let h = (piece[1] - piece[0]) / panels as f64;
        for p in 0..panels {
            let lo = piece[0] + p as f64 * h;
            let mid = lo + 0.5 * h;
            for (x, w) in rn.iter().zip(rw) {
                nodes.push(mid + 0.5 * h * x);
                weights.push(0.5 * h * w);
            }
        }
    }
    (nodes, weights)
}

/// Drives panel doubling. `eval(panels)` returns the integral estimates and a
/// magnitude scale for each (typically `∫|f|`); refinement stops when every
/// estimate changed by at most `rel_tol · scale`.
pub fn refine<F>(rule: Refinement, mut eval: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> (Vec<f64>, Vec<f64>),
{
    let mut panels = 1;
    let (mut prev, _) = eval(panels);
    loop {
        let next_panels = panels * 2;
        if next_panels > rule.max_panels {
            return Err(Error::QuadratureNonConvergence {
                panels,
                last_change: f64::NAN,
                tolerance: rule.rel_tol,
            });
        }
        let (cur, scale) = eval(next_panels);
        let mut worst = 0.0f64;
        let mut converged = true;
        for ((c, p), s) in cur.iter().zip(&prev).zip(&scale) {
            let change = (c - p).abs();
            worst = worst.max(change);
            if !(change <= rule.rel_tol * s) {
                converged = false;
            }
        }
        if converged {
            return Ok(cur);
        }
        if next_panels == rule.max_panels {
            return Err(Error::QuadratureNonConvergence {
                panels: next_panels,
                last_change: worst,
                tolerance: rule.rel_tol,
            });
        }
        prev = cur;
        panels = next_panels;
    }
}

/// ∫_a^b f(s) ds.
pub fn integrate_interval<F>(a: f64, b: f64, breaks: &[f64], rule: Refinement, f: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let out = refine(rule, |panels| {
        let (nodes, weights) = composite_rule_with_breaks(a, b, breaks, panels);
        let (mut sum, mut abs) = (0.0, 0.0);
        for (x, w) in nodes.iter().zip(&weights) {
            let v = f(*x);
            sum += w * v;
            abs += w * v.abs();
        }
        (vec![sum], vec![abs])
    })?;
    Ok(out[0])
}

/// ∫∫_rect f(x, y) dx dy on a tensor grid, with optional breakpoints per axis.
pub fn integrate_rect<F>(
    rect: &Rectangle,
    breaks_x: &[f64],
    breaks_y: &[f64],
    rule: Refinement,
    f: F,
) -> Result<f64>
where
    F: Fn([f64; 2]) -> f64,
{
    let out = refine(rule, |panels| {
        let grid = QuadratureGrid::with_breaks(rect, breaks_x, breaks_y, panels);
        let (mut sum, mut abs) = (0.0, 0.0);
        for (x, wx) in grid.x_nodes.iter().zip(&grid.x_weights) {
            for (y, wy) in grid.y_nodes.iter().zip(&grid.y_weights) {
                let v = f([*x, *y]);
                sum += wx * wy * v;
                abs += wx * wy * v.abs();
            }
        }
        (vec![sum], vec![abs])
    })?;
    Ok(out[0])
}

/// Tensor-product composite Gauss grid over a rectangle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureGrid {
    pub panels: usize,
    pub x_nodes: Vec<f64>,
    pub x_weights: Vec<f64>,
    pub y_nodes: Vec<f64>,
    pub y_weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(rect: &Rectangle, panels: usize) -> Self {
        Self::with_breaks(rect, &[], &[], panels)
    }

    pub fn with_breaks(rect: &Rectangle, breaks_x: &[f64], breaks_y: &[f64], panels: usize) -> Self {
        let (x_nodes, x_weights) = composite_rule_with_breaks(rect.x_min, rect.x_max, breaks_x, panels);
        let (y_nodes, y_weights) = composite_rule_with_breaks(rect.y_min, rect.y_max, breaks_y, panels);
        Self {
            panels,
            x_nodes,
            x_weights,
            y_nodes,
            y_weights,
        }
    }

    pub fn len(&self) -> usize {
        self.x_nodes.len() * self.y_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of all tensor weights; equals the rectangle area.
    pub fn total_weight(&self) -> f64 {
        self.x_weights.iter().sum::<f64>() * self.y_weights.iter().sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eight_point_rule_is_exact_to_degree_fifteen() {
        let (x, w) = gauss_legendre(8);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        for deg in 0..16 {
            let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert_relative_eq!(approx, exact, epsilon = 1e-14);
        }
        assert!(w.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn grid_weights_sum_to_area() {
        let r = Rectangle::new(0.1, 0.7, -1.0, 2.5).unwrap();
        let g = QuadratureGrid::with_breaks(&r, &[0.3], &[0.0, 1.0], 4);
        assert_relative_eq!(g.total_weight(), r.area(), epsilon = 1e-13);
        assert!(g.x_weights.iter().chain(&g.y_weights).all(|&w| w > 0.0));
    }

    #[test]
    fn adaptive_interval_integral() {
        let v = integrate_interval(0.0, 1.0, &[], Refinement::default(), |x| (7.0 * x).sin()).unwrap();
        assert_relative_eq!(v, (1.0 - 7f64.cos()) / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn kinked_integrand_with_breakpoint() {
        let v = integrate_interval(0.0, 1.0, &[0.3], Refinement::default(), |x| (x - 0.3).abs())
            .unwrap();
        assert_relative_eq!(v, 0.5 * (0.09 + 0.49), epsilon = 1e-14);
    }

    #[test]
    fn reports_non_convergence() {
        let rule = Refinement {
            rel_tol: 1e-14,
            max_panels: 4,
        };
        let err = integrate_interval(0.0, 1.0, &[], rule, |x| (200.0 * x).cos()).unwrap_err();
        assert!(matches!(err, Error::QuadratureNonConvergence { .. }));
    }
}
