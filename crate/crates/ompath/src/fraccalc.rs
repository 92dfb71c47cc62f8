//! Discretized Riemann-Liouville fractional integrals and derivatives on
//! uniform grids, plus the power-weighted compositions s^a Op s^b that the
//! OM formulas are built from.
//!
//! Quadrature: the regular factor is approximated per cell (piecewise
//! constant cell averages for integrals, piecewise linear for derivatives)
//! while the singular kernel (t-y)^(alpha-1) or (t-y)^(-alpha-1) is
//! integrated with exact analytic moments. This keeps the endpoint
//! singularity under control without grading the grid.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use statrs::function::gamma::gamma;

use crate::error::{OmError, Result};
use crate::grid::{GridFn, TimeGrid};

/// Fractional order, validated against the operator kind on use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracOrder(pub f64);

impl FracOrder {
    pub fn check_integral(self) -> Result<f64> {
        if self.0 > 0.0 && self.0 <= 1.0 {
            Ok(self.0)
        } else {
            Err(OmError::invalid(format!(
                "integral order must lie in (0,1], got {}",
                self.0
            )))
        }
    }

    pub fn check_derivative(self) -> Result<f64> {
        if self.0 > 0.0 && self.0 < 1.0 {
            Ok(self.0)
        } else {
            Err(OmError::invalid(format!(
                "derivative order must lie in (0,1), got {}",
                self.0
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Anchored at 0 (operators written 0+ in the formulas).
    Left,
    /// Anchored at 1 (operators written 1-).
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FracKind {
    Integral,
    Derivative,
}

/// Precomputed dense quadrature weights for one (grid, order, orientation,
/// kind) combination. Lower triangular for left operators, upper for right.
#[derive(Debug)]
pub struct FracOperatorPlan {
    n: usize,
    alpha: f64,
    orientation: Orientation,
    kind: FracKind,
    /// Row-major n x n weight matrix.
    weights: Vec<f64>,
}

impl FracOperatorPlan {
    pub fn build(
        grid: &TimeGrid,
        alpha: FracOrder,
        orientation: Orientation,
        kind: FracKind,
    ) -> Result<Self> {
        let a = match kind {
            FracKind::Integral => alpha.check_integral()?,
            FracKind::Derivative => alpha.check_derivative()?,
        };
        let n = grid.n();
        let dt = grid.dt();
        let mut weights = vec![0.0; n * n];
        match (kind, orientation) {
            (FracKind::Integral, Orientation::Left) => {
                fill_integral_left(&mut weights, n, dt, a)
            }
            (FracKind::Integral, Orientation::Right) => {
                fill_integral_right(&mut weights, n, dt, a)
            }
            (FracKind::Derivative, Orientation::Left) => {
                fill_derivative_left(&mut weights, n, dt, a)
            }
            (FracKind::Derivative, Orientation::Right) => {
                fill_derivative_right(&mut weights, n, dt, a)
            }
        }
        Ok(FracOperatorPlan {
            n,
            alpha: a,
            orientation,
            kind,
            weights,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn kind(&self) -> FracKind {
        self.kind
    }

    /// Apply the weight matrix to a grid function.
    pub fn apply(&self, f: &GridFn) -> Result<GridFn> {
        if f.len() != self.n {
            return Err(OmError::invalid("grid size does not match plan"));
        }
        let v = f.values();
        let mut out = vec![0.0; self.n];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weights[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(v) {
                acc += w * x;
            }
            *o = acc;
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(OmError::numerical(
                "fractional operator produced a non-finite value (input too rough for this order?)",
                Some(i),
            ));
        }
        f.with_values(out)
    }
}

// I^a_{0+} f(t_i) = 1/G(a) sum over cells [t_j, t_{j+1}], j < i, of the cell
// average (f_j + f_{j+1})/2 times the exact moment of (t_i - y)^(a-1).
fn fill_integral_left(w: &mut [f64], n: usize, dt: f64, a: f64) {
    let c = 1.0 / gamma(a);
    for i in 1..n {
        let ti = i as f64 * dt;
        let row = &mut w[i * n..(i + 1) * n];
        for j in 0..i {
            let lo = ti - (j + 1) as f64 * dt; // t_i - t_{j+1}
            let hi = ti - j as f64 * dt; // t_i - t_j
            let moment = (hi.powf(a) - lo.powf(a)) / a;
            let half = 0.5 * c * moment;
            row[j] += half;
            row[j + 1] += half;
        }
    }
}

fn fill_integral_right(w: &mut [f64], n: usize, dt: f64, a: f64) {
    let c = 1.0 / gamma(a);
    for i in 0..n - 1 {
        let ti = i as f64 * dt;
        let row = &mut w[i * n..(i + 1) * n];
        for j in i..n - 1 {
            let lo = j as f64 * dt - ti; // t_j - t_i
            let hi = (j + 1) as f64 * dt - ti; // t_{j+1} - t_i
            let moment = (hi.powf(a) - lo.powf(a)) / a;
            let half = 0.5 * c * moment;
            row[j] += half;
            row[j + 1] += half;
        }
    }
}

// Weyl form D^a_{0+} f(x) = 1/G(1-a) [ f(x)/x^a
//   + a int_0^x (f(x)-f(y)) (x-y)^(-a-1) dy ].
// f is taken piecewise linear on each cell; the moments of (x-y)^(-a-1) and
// y (x-y)^(-a-1) are exact. On the cell adjacent to x the combination
// f(x) - f(y) cancels the singularity exactly for linear f.
fn fill_derivative_left(w: &mut [f64], n: usize, dt: f64, a: f64) {
    let c = 1.0 / gamma(1.0 - a);
    for i in 1..n {
        let x = i as f64 * dt;
        let row = &mut w[i * n..(i + 1) * n];
        row[i] += c / x.powf(a);
        for j in 0..i {
            let b_gap = x - j as f64 * dt; // x - t_j > 0
            let a_gap = x - (j + 1) as f64 * dt; // x - t_{j+1} >= 0
            if j + 1 == i {
                // adjacent cell: a int (x-y)^(-a) slope dy, slope = (f_i - f_j)/dt
                let coef = c * a * dt.powf(-a) / (1.0 - a);
                row[i] += coef;
                row[j] -= coef;
            } else {
                // a * [ (A - B b)(a_gap^-a - b_gap^-a) + a B (b_gap^(1-a) - a_gap^(1-a))/(1-a) ]
                // with A = f_i - f_j and B = (f_{j+1} - f_j)/dt.
                let p0 = a_gap.powf(-a) - b_gap.powf(-a);
                let p1 = a * (b_gap.powf(1.0 - a) - a_gap.powf(1.0 - a)) / (1.0 - a);
                // A-coefficient: applies to (f_i - f_j)
                row[i] += c * p0;
                row[j] -= c * p0;
                // B-coefficient: applies to (f_{j+1} - f_j)/dt
                let cb = c * (-b_gap * p0 + p1) / dt;
                row[j + 1] += cb;
                row[j] -= cb;
            }
        }
    }
    // x = 0 is defined by constant extrapolation from the first interior node
    let (row0, row1) = w.split_at_mut(n);
    row0.copy_from_slice(&row1[..n]);
}

// Mirrored Weyl form D^a_{1-} f(s) = 1/G(1-a) [ f(s)/(1-s)^a
//   - a int_s^1 (f(u)-f(s)) (u-s)^(-a-1) du ].
fn fill_derivative_right(w: &mut [f64], n: usize, dt: f64, a: f64) {
    let c = 1.0 / gamma(1.0 - a);
    for i in 0..n - 1 {
        let s = i as f64 * dt;
        let row = &mut w[i * n..(i + 1) * n];
        row[i] += c / (1.0 - s).powf(a);
        for j in i..n - 1 {
            // cell [t_j, t_{j+1}] to the right of s
            let a_gap = j as f64 * dt - s; // t_j - s >= 0
            let b_gap = (j + 1) as f64 * dt - s; // t_{j+1} - s > 0
            if j == i {
                // adjacent cell: -a int (u-s)^(-a) slope du
                let coef = c * a * dt.powf(-a) / (1.0 - a);
                row[i + 1] -= coef;
                row[i] += coef;
            } else {
                // -(a) * int (A + B(u - t_j)) (u-s)^(-a-1) du with
                // A = f_j - f_i, B = (f_{j+1} - f_j)/dt; u - t_j = (u-s) - a_gap.
                let p0 = a_gap.powf(-a) - b_gap.powf(-a);
                let p1 = a * (b_gap.powf(1.0 - a) - a_gap.powf(1.0 - a)) / (1.0 - a);
                // A-coefficient applies to (f_j - f_i)
                row[j] -= c * p0;
                row[i] += c * p0;
                // B-coefficient applies to (f_{j+1} - f_j)/dt
                let cb = c * (-a_gap * p0 + p1) / dt;
                row[j + 1] -= cb;
                row[j] += cb;
            }
        }
    }
    let last = (n - 1) * n;
    let prev: Vec<f64> = w[(n - 2) * n..(n - 1) * n].to_vec();
    w[last..last + n].copy_from_slice(&prev);
}

type PlanKey = (usize, u64, Orientation, FracKind);

fn plan_cache() -> &'static Mutex<HashMap<PlanKey, Arc<FracOperatorPlan>>> {
    static CACHE: OnceLock<Mutex<HashMap<PlanKey, Arc<FracOperatorPlan>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

const PLAN_CACHE_CAP: usize = 12;

/// Fetch (or build and memoize) the plan for the given operator.
pub fn plan_for(
    grid: &TimeGrid,
    alpha: FracOrder,
    orientation: Orientation,
    kind: FracKind,
) -> Result<Arc<FracOperatorPlan>> {
    let key = (grid.n(), alpha.0.to_bits(), orientation, kind);
    {
        let cache = plan_cache().lock().unwrap();
        if let Some(p) = cache.get(&key) {
            return Ok(Arc::clone(p));
        }
    }
    let plan = Arc::new(FracOperatorPlan::build(grid, alpha, orientation, kind)?);
    let mut cache = plan_cache().lock().unwrap();
    if cache.len() >= PLAN_CACHE_CAP {
        // evict an arbitrary entry; plans are cheap to rebuild
        if let Some(k) = cache.keys().next().cloned() {
            cache.remove(&k);
        }
    }
    cache.insert(key, Arc::clone(&plan));
    Ok(plan)
}

/// Riemann-Liouville fractional integral; alpha = 1 reduces exactly to the
/// trapezoid cumulative integral.
pub fn frac_integral(f: &GridFn, alpha: FracOrder, orientation: Orientation) -> Result<GridFn> {
    alpha.check_integral()?;
    plan_for(f.grid(), alpha, orientation, FracKind::Integral)?.apply(f)
}

/// Riemann-Liouville fractional derivative via the Weyl representation.
pub fn frac_derivative(f: &GridFn, alpha: FracOrder, orientation: Orientation) -> Result<GridFn> {
    alpha.check_derivative()?;
    plan_for(f.grid(), alpha, orientation, FracKind::Derivative)?.apply(f)
}

/// Power weight t^p evaluated at node i; node 0 is shifted to the first cell
/// midpoint dt/2 so negative powers stay finite.
pub fn power_at_node(grid: &TimeGrid, i: usize, p: f64) -> f64 {
    if p == 0.0 {
        return 1.0;
    }
    let t = if i == 0 { 0.5 * grid.dt() } else { grid.node(i) };
    t.powf(p)
}

/// Weighted composition t^a Op(t^b f) with the midpoint-shift rule at t = 0.
pub fn weighted_frac_op(
    f: &GridFn,
    alpha: FracOrder,
    orientation: Orientation,
    kind: FracKind,
    pre_power: f64,
    post_power: f64,
) -> Result<GridFn> {
    if !pre_power.is_finite() || !post_power.is_finite() {
        return Err(OmError::invalid("power weights must be finite"));
    }
    let grid = f.grid();
    let pre: Vec<f64> = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| power_at_node(grid, i, pre_power) * v)
        .collect();
    let mid = f.with_values(pre)?;
    let op = match kind {
        FracKind::Integral => frac_integral(&mid, alpha, orientation)?,
        FracKind::Derivative => frac_derivative(&mid, alpha, orientation)?,
    };
    let out: Vec<f64> = op
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| power_at_node(grid, i, post_power) * v)
        .collect();
    f.with_values(out)
}

fn trapz(f: &GridFn) -> f64 {
    let v = f.values();
    let n = v.len();
    let dt = f.grid().dt();
    let mut s = 0.5 * (v[0] + v[n - 1]);
    for x in &v[1..n - 1] {
        s += x;
    }
    s * dt
}

/// Self-test scalar |int f I^a_{0+} g - int I^a_{1-} f g| for the duality
/// identity; O(dt) small on smooth pairs.
pub fn frac_integration_by_parts_residual(
    f: &GridFn,
    g: &GridFn,
    alpha: FracOrder,
) -> Result<f64> {
    alpha.check_integral()?;
    let lhs = trapz(&f.map2(&frac_integral(g, alpha, Orientation::Left)?, |a, b| a * b)?);
    let rhs = trapz(&g.map2(&frac_integral(f, alpha, Orientation::Right)?, |a, b| a * b)?);
    Ok((lhs - rhs).abs())
}
