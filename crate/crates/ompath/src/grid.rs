//! Uniform time grids on [0,1], grid functions, quadrature, differentiation
//! and discrete Hölder seminorms. Everything downstream is built on these.

use std::io::Write;
use std::sync::Arc;

use crate::error::{OmError, Result};

/// Node count above which `holder_seminorm` switches from the exact O(n^2)
/// pair scan to the dyadic-pair approximation.
pub const HOLDER_EXACT_LIMIT: usize = 8192;

/// Uniform grid t_i = i/(n-1) on [0,1].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeGrid {
    n: usize,
}

impl TimeGrid {
    /// Build a uniform grid with `n >= 2` nodes.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(OmError::invalid(format!("grid needs n >= 2 nodes, got {n}")));
        }
        Ok(TimeGrid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Node spacing 1/(n-1).
    pub fn dt(&self) -> f64 {
        1.0 / (self.n as f64 - 1.0)
    }

    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i < self.n);
        i as f64 / (self.n as f64 - 1.0)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }
}

/// Real-valued function sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
}

impl GridFn {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(OmError::invalid(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.n()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(OmError::numerical("non-finite grid value", Some(i)));
        }
        Ok(GridFn { grid, values })
    }

    /// Sample a closure at the grid nodes.
    pub fn sample(grid: &Arc<TimeGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().map(&f).collect();
        GridFn::new(Arc::clone(grid), values)
    }

    pub fn zeros(grid: &Arc<TimeGrid>) -> Self {
        GridFn {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.n()],
        }
    }

    pub fn constant(grid: &Arc<TimeGrid>, c: f64) -> Result<Self> {
        GridFn::new(Arc::clone(grid), vec![c; grid.n()])
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rebuild with new values on the same grid, re-checking finiteness.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        GridFn::new(Arc::clone(&self.grid), values)
    }

    pub fn map2(&self, other: &GridFn, f: impl Fn(f64, f64) -> f64) -> Result<GridFn> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        self.with_values(values)
    }

    pub fn sub(&self, other: &GridFn) -> Result<GridFn> {
        self.map2(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Result<GridFn> {
        self.with_values(self.values.iter().map(|v| c * v).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L2 norm (trapezoid weights).
    pub fn l2_norm(&self) -> f64 {
        let dt = self.grid.dt();
        let n = self.len();
        let mut s = 0.5 * (self.values[0].powi(2) + self.values[n - 1].powi(2));
        for v in &self.values[1..n - 1] {
            s += v * v;
        }
        (s * dt).sqrt()
    }

    fn check_same_grid(&self, other: &GridFn) -> Result<()> {
        if self.grid.n() != other.grid.n() {
            return Err(OmError::invalid("grid size mismatch"));
        }
        Ok(())
    }

    /// Two-column CSV `t,value` with a header row, 17 significant digits.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in self.grid.nodes().zip(&self.values) {
            writeln!(w, "{:.16e},{:.16e}", t, v)?;
        }
        Ok(())
    }
}

pub fn make_grid(n: usize) -> Result<Arc<TimeGrid>> {
    Ok(Arc::new(TimeGrid::new(n)?))
}

/// Trapezoid rule over the whole interval.
pub fn trapezoid(f: &GridFn) -> f64 {
    let v = f.values();
    let n = v.len();
    let dt = f.grid().dt();
    let mut acc = 0.5 * (v[0] + v[n - 1]);
    for x in &v[1..n - 1] {
        acc += x;
    }
    acc * dt
}

/// Trapezoid cumulative integral; result(0) = 0, exact for affine integrands.
pub fn cumulative_integral(f: &GridFn) -> GridFn {
    let dt = f.grid().dt();
    let v = f.values();
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..v.len() {
        acc += 0.5 * dt * (v[i - 1] + v[i]);
        out.push(acc);
    }
    GridFn {
        grid: Arc::clone(f.grid()),
        values: out,
    }
}

/// Second-order finite differences: central at interior nodes, one-sided
/// three-point stencils at the endpoints. Exact on quadratics.
pub fn derivative(f: &GridFn) -> Result<GridFn> {
    let n = f.len();
    if n < 3 {
        return Err(OmError::invalid("derivative needs n >= 3 nodes"));
    }
    let dt = f.grid().dt();
    let v = f.values();
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt);
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
    }
    out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dt);
    f.with_values(out)
}

/// Result of a discrete Hölder seminorm evaluation. `exact` is false when
/// the dyadic-pair approximation was used (large grids).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderEstimate {
    pub value: f64,
    pub exact: bool,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(OmError::invalid(format!("beta must lie in (0,1], got {beta}")));
    }
    Ok(())
}

/// Discrete Hölder seminorm max_{i<j} |f(t_j)-f(t_i)| / (t_j-t_i)^beta.
///
/// Exact O(n^2) scan up to [`HOLDER_EXACT_LIMIT`] nodes; beyond that only
/// dyadic-separated pairs are scanned and the result is flagged inexact.
pub fn holder_seminorm(f: &GridFn, beta: f64) -> Result<HolderEstimate> {
    check_beta(beta)?;
    let n = f.len();
    if n <= HOLDER_EXACT_LIMIT {
        Ok(HolderEstimate {
            value: holder_scan_exact(f.values(), f.grid().dt(), beta),
            exact: true,
        })
    } else {
        Ok(HolderEstimate {
            value: holder_scan_dyadic(f.values(), f.grid().dt(), beta),
            exact: false,
        })
    }
}

fn holder_scan_exact(v: &[f64], dt: f64, beta: f64) -> f64 {
    let n = v.len();
    // Precompute gap^{-beta} once per separation; the inner loop is then a
    // pure max over |f_j - f_i|.
    let mut best = 0.0f64;
    for gap in 1..n {
        let w = ((gap as f64) * dt).powf(-beta);
        let mut m = 0.0f64;
        for i in 0..n - gap {
            m = m.max((v[i + gap] - v[i]).abs());
        }
        best = best.max(m * w);
    }
    best
}

fn holder_scan_dyadic(v: &[f64], dt: f64, beta: f64) -> f64 {
    let n = v.len();
    let mut best = 0.0f64;
    let mut gap = 1;
    while gap < n {
        let w = ((gap as f64) * dt).powf(-beta);
        let mut m = 0.0f64;
        for i in 0..n - gap {
            m = m.max((v[i + gap] - v[i]).abs());
        }
        best = best.max(m * w);
        gap *= 2;
    }
    best
}

/// Early-exit check `[f]_beta > eps`, used by tube counting where only the
/// comparison matters. Agrees with the exact scan for any grid size.
pub fn holder_seminorm_exceeds(f: &GridFn, beta: f64, eps: f64) -> Result<bool> {
    check_beta(beta)?;
    let v = f.values();
    let dt = f.grid().dt();
    let n = v.len();
    for gap in 1..n {
        let thresh = eps * ((gap as f64) * dt).powf(beta);
        for i in 0..n - gap {
            if (v[i + gap] - v[i]).abs() > thresh {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Shifted norm ||f||_beta = [f']_{beta-1} for beta in (1,2).
pub fn holder_norm_shifted(f: &GridFn, beta: f64) -> Result<HolderEstimate> {
    if !(beta > 1.0 && beta < 2.0) {
        return Err(OmError::invalid(format!(
            "shifted norm needs beta in (1,2), got {beta}"
        )));
    }
    holder_seminorm(&derivative(f)?, beta - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Arc<TimeGrid> {
        make_grid(n).unwrap()
    }

    #[test]
    fn make_grid_endpoints() {
        let g = grid(2);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(1), 1.0);
    }

    #[test]
    fn make_grid_uniform() {
        let g = grid(5);
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn make_grid_rejects_small() {
        assert!(make_grid(1).is_err());
    }

    #[test]
    fn cumulative_integral_of_one_is_t() {
        let g = grid(17);
        let f = GridFn::constant(&g, 1.0).unwrap();
        let ci = cumulative_integral(&f);
        for (i, t) in g.nodes().enumerate() {
            assert!((ci.values()[i] - t).abs() < 1e-15);
        }
    }

    #[test]
    fn cumulative_integral_of_zero() {
        let g = grid(9);
        let ci = cumulative_integral(&GridFn::zeros(&g));
        assert!(ci.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cumulative_integral_exact_on_affine() {
        let g = grid(1001);
        let f = GridFn::sample(&g, |t| t).unwrap();
        let ci = cumulative_integral(&f);
        assert!((ci.values()[1000] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn derivative_exact_on_quadratic() {
        let g = grid(33);
        let f = GridFn::sample(&g, |t| t * t).unwrap();
        let d = derivative(&f).unwrap();
        for (i, t) in g.nodes().enumerate() {
            assert!((d.values()[i] - 2.0 * t).abs() < 1e-12, "node {i}");
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let g = grid(9);
        let d = derivative(&GridFn::constant(&g, 3.5).unwrap()).unwrap();
        assert!(d.max_abs() < 1e-12);
    }

    #[test]
    fn derivative_of_sine_second_order() {
        let g = grid(2048);
        let f = GridFn::sample(&g, |t| (2.0 * std::f64::consts::PI * t).sin()).unwrap();
        let d = derivative(&f).unwrap();
        let mut err = 0.0f64;
        for (i, t) in g.nodes().enumerate() {
            let exact = 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * t).cos();
            err = err.max((d.values()[i] - exact).abs());
        }
        assert!(err <= 1e-4, "max error {err}");
    }

    #[test]
    fn derivative_rejects_small() {
        let g = grid(2);
        assert!(derivative(&GridFn::zeros(&g)).is_err());
    }

    #[test]
    fn holder_of_identity_is_one() {
        let g = grid(101);
        let f = GridFn::sample(&g, |t| t).unwrap();
        let h = holder_seminorm(&f, 1.0).unwrap();
        assert!(h.exact);
        assert!((h.value - 1.0).abs() < 1e-13);
    }

    #[test]
    fn holder_of_constant_is_zero() {
        let g = grid(101);
        let f = GridFn::constant(&g, 2.0).unwrap();
        assert_eq!(holder_seminorm(&f, 0.4).unwrap().value, 0.0);
    }

    #[test]
    fn holder_of_sqrt_attained_at_origin() {
        let g = grid(257);
        let f = GridFn::sample(&g, |t| t.sqrt()).unwrap();
        let h = holder_seminorm(&f, 0.5).unwrap();
        assert!((h.value - 1.0).abs() < 1e-12, "got {}", h.value);
    }

    #[test]
    fn holder_rejects_bad_beta() {
        let g = grid(8);
        let f = GridFn::zeros(&g);
        assert!(holder_seminorm(&f, 0.0).is_err());
        assert!(holder_seminorm(&f, 1.5).is_err());
    }

    #[test]
    fn holder_dyadic_mode_flagged() {
        let g = grid(HOLDER_EXACT_LIMIT + 2);
        let f = GridFn::sample(&g, |t| t).unwrap();
        let h = holder_seminorm(&f, 0.7).unwrap();
        assert!(!h.exact);
        assert!(h.value > 0.0);
    }

    #[test]
    fn holder_exceeds_matches_scan() {
        let g = grid(200);
        let f = GridFn::sample(&g, |t| (7.0 * t).sin()).unwrap();
        let v = holder_seminorm(&f, 0.3).unwrap().value;
        assert!(holder_seminorm_exceeds(&f, 0.3, v * 0.99).unwrap());
        assert!(!holder_seminorm_exceeds(&f, 0.3, v * 1.01).unwrap());
    }

    #[test]
    fn shifted_norm_of_half_t_squared() {
        let g = grid(513);
        let f = GridFn::sample(&g, |t| 0.5 * t * t).unwrap();
        let h = holder_norm_shifted(&f, 1.5).unwrap();
        assert!((h.value - 1.0).abs() < 1e-10, "got {}", h.value);
    }

    #[test]
    fn shifted_norm_of_affine_is_zero() {
        let g = grid(65);
        let f = GridFn::sample(&g, |t| t).unwrap();
        assert!(holder_norm_shifted(&f, 1.3).unwrap().value < 1e-10);
        assert_eq!(holder_norm_shifted(&GridFn::zeros(&g), 1.3).unwrap().value, 0.0);
    }

    #[test]
    fn integral_then_derivative_recovers_smooth_f() {
        let g = grid(2048);
        let f = GridFn::sample(&g, |t| (2.0 * std::f64::consts::PI * t).sin()).unwrap();
        let d = derivative(&cumulative_integral(&f)).unwrap();
        let mut err = 0.0f64;
        for i in 1..g.n() - 1 {
            err = err.max((d.values()[i] - f.values()[i]).abs());
        }
        assert!(err <= 1e-4, "max interior error {err}");
    }

    #[test]
    fn csv_round_shape() {
        let g = grid(3);
        let f = GridFn::sample(&g, |t| t + 1.0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,value\n"));
        assert_eq!(s.lines().count(), 4);
    }

    proptest! {
        // absolute homogeneity of the seminorm
        #[test]
        fn holder_homogeneous(c in -50.0f64..50.0, beta in 0.05f64..1.0) {
            let g = grid(64);
            let f = GridFn::sample(&g, |t| (5.0 * t).sin() + t * t).unwrap();
            let base = holder_seminorm(&f, beta).unwrap().value;
            let scaled = holder_seminorm(&f.scale(c).unwrap(), beta).unwrap().value;
            prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * (1.0 + c.abs() * base));
        }

        // gaps are <= 1 so the seminorm is nondecreasing in beta
        #[test]
        fn holder_monotone_in_beta(b1 in 0.1f64..0.9, db in 0.01f64..0.1) {
            let g = grid(64);
            let f = GridFn::sample(&g, |t| (3.0 * t).sin()).unwrap();
            let lo = holder_seminorm(&f, b1).unwrap().value;
            let hi = holder_seminorm(&f, b1 + db).unwrap().value;
            prop_assert!(lo <= hi * (1.0 + 1e-12));
        }
    }
}
