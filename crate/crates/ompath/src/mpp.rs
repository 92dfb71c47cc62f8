//! Most-probable-path computation: direct maximization of the discretized
//! OM functional over velocity profiles with pinned boundary data, the
//! Euler-Lagrange residual in all regimes, and a collocation solver for the
//! autonomous standard-case fourth-order EL boundary value problem.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{OmError, Result};
use crate::fbm::{kh_inverse_of_derivative, HurstSpec, Regime};
use crate::fraccalc::{weighted_frac_op, FracKind, FracOrder, Orientation};
use crate::grid::{cumulative_integral, derivative, GridFn, TimeGrid};
use crate::omfunctional::{
    d_h, mismatch_field, om_functional, BoundaryData, ModelSpec, OMValue, OmForm, PathPair,
    Potential, PotentialForce,
};

/// Initialization strategy for the direct minimizer.
#[derive(Clone)]
pub enum MppInit {
    Path(PathPair),
    Linear,
    NoiselessShoot,
    /// Noiseless shoot + interpolation + (k-2) seeded perturbations.
    Multistart(usize),
}

/// A complete problem statement for `minimize_om`.
#[derive(Clone)]
pub struct MppProblem {
    pub model: ModelSpec,
    pub hurst: HurstSpec,
    pub boundary: BoundaryData,
    pub grid: Arc<TimeGrid>,
    pub init: MppInit,
    pub seed: u64,
}

/// Solver output with convergence bookkeeping.
#[derive(Clone)]
pub struct MppSolution {
    pub path: PathPair,
    pub j: OMValue,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub starts_tried: usize,
    /// |psi(1) - x1| before the exact boundary correction was applied.
    pub penalty_residual: f64,
}

/// RK4 integration of the noiseless system X'' = f_t(X, X') from (x0, y0),
/// one step per grid cell.
pub fn noiseless_shoot(
    model: &ModelSpec,
    x0: f64,
    y0: f64,
    grid: &Arc<TimeGrid>,
) -> Result<PathPair> {
    let n = grid.n();
    let dt = grid.dt();
    let force = &model.force;
    let mut x = x0;
    let mut y = y0;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    xs.push(x);
    ys.push(y);
    for i in 0..n - 1 {
        let t = grid.node(i);
        let (k1x, k1y) = (y, force.f(t, x, y));
        let (k2x, k2y) = (
            y + 0.5 * dt * k1y,
            force.f(t + 0.5 * dt, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y),
        );
        let (k3x, k3y) = (
            y + 0.5 * dt * k2y,
            force.f(t + 0.5 * dt, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y),
        );
        let (k4x, k4y) = (
            y + dt * k3y,
            force.f(t + dt, x + dt * k3x, y + dt * k3y),
        );
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        y += dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        if !x.is_finite() || !y.is_finite() {
            return Err(OmError::numerical("noiseless trajectory diverged", Some(i + 1)));
        }
        xs.push(x);
        ys.push(y);
    }
    let psi = GridFn::new(Arc::clone(grid), xs)?;
    let phi = GridFn::new(Arc::clone(grid), ys)?;
    let boundary = BoundaryData::new(x0, y0, x, y)?;
    PathPair::from_parts(psi, phi, boundary)
}

// Velocity profile of the cubic Hermite interpolant matching all four
// boundary values: psi' where psi(0)=x0, psi'(0)=y0, psi(1)=x1, psi'(1)=y1.
fn hermite_velocity(grid: &Arc<TimeGrid>, b: BoundaryData) -> Result<GridFn> {
    GridFn::sample(grid, |t| {
        let h00d = 6.0 * t * t - 6.0 * t;
        let h10d = 3.0 * t * t - 4.0 * t + 1.0;
        let h01d = -6.0 * t * t + 6.0 * t;
        let h11d = 3.0 * t * t - 2.0 * t;
        b.x0 * h00d + b.y0 * h10d + b.x1 * h01d + b.y1 * h11d
    })
}

struct Objective<'a> {
    model: &'a ModelSpec,
    hurst: HurstSpec,
    boundary: BoundaryData,
    grid: Arc<TimeGrid>,
    weight: f64,
}

impl Objective<'_> {
    // vars are the interior velocity nodes phi(t_1..t_{n-2}); returns the
    // penalized negative OM value (to be minimized). Infinite on failure.
    fn eval(&self, vars: &[f64]) -> f64 {
        match self.path_of(vars).and_then(|p| {
            let om = om_functional(&p, self.model, self.hurst, OmForm::Unified)?;
            let u = mismatch_field(&p, self.model, self.hurst, OmForm::Unified)?;
            let gap = p.psi().values()[p.psi().len() - 1] - self.boundary.x1;
            Ok(-om.j
                + self.endpoint_energy(&p, u.values())
                + self.weight * gap * gap
                + self.roughness(p.phi().values()))
        }) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }

    // The reported functional integrates over interior-extended nodes, which
    // drops the endpoint mismatch values entirely; the first and last
    // interior velocity nodes then only lower the discrete energy and the
    // maximizer grows an O(dt) boundary layer that never vanishes under
    // refinement. This correction swaps the interior extension for a
    // summation-by-parts closure: trapezoid half-weights at the two
    // endpoints with first-order one-sided differences there. With that
    // pairing (and only that one) smooth stationary points of the continuum
    // functional are stationary for the discrete objective as well, so the
    // maximizer carries no boundary layer. Standard regime only: the
    // fractional mismatch is nonlocal and its endpoint rows are
    // extrapolated, so no consistent closure is available there. The
    // reported OM value is always the uncorrected functional.
    fn endpoint_energy(&self, p: &PathPair, u: &[f64]) -> f64 {
        if self.hurst.regime() != Regime::Standard {
            return 0.0;
        }
        let n = u.len();
        let dt = self.grid.dt();
        let phi = p.phi().values();
        let psi = p.psi().values();
        let s0 = self.model.sigma.values()[0];
        let s1 = self.model.sigma.values()[n - 1];
        let t1 = self.grid.node(n - 1);
        let u_left = ((phi[1] - phi[0]) / dt - self.model.force.f(0.0, psi[0], phi[0])) / s0;
        let u_right =
            ((phi[n - 1] - phi[n - 2]) / dt - self.model.force.f(t1, psi[n - 1], phi[n - 1])) / s1;
        0.25 * dt * (u_left * u_left + u_right * u_right - u[1] * u[1] - u[n - 2] * u[n - 2])
    }

    // Central differences decouple the odd/even node sublattices, so the raw
    // discrete functional admits grid-scale interleaved minimizers that do
    // not converge to the continuum path. A second-difference smoothing term
    // restores coercivity against that mode: interleaved profiles cost
    // O(1/dt) here while smooth paths contribute only O(dt^3). The reported
    // OM value is always the unsmoothed functional.
    fn roughness(&self, phi: &[f64]) -> f64 {
        phi.windows(3)
            .map(|w| {
                let d = w[2] - 2.0 * w[1] + w[0];
                d * d
            })
            .sum()
    }

    fn path_of(&self, vars: &[f64]) -> Result<PathPair> {
        let n = self.grid.n();
        let mut phi = Vec::with_capacity(n);
        phi.push(self.boundary.y0);
        phi.extend_from_slice(vars);
        phi.push(self.boundary.y1);
        PathPair::from_velocity(GridFn::new(Arc::clone(&self.grid), phi)?, self.boundary)
    }

    fn gradient(&self, vars: &[f64]) -> Vec<f64> {
        (0..vars.len())
            .into_par_iter()
            .map(|i| {
                let h = 1e-6 * (1.0 + vars[i].abs());
                let mut plus = vars.to_vec();
                plus[i] += h;
                let mut minus = vars.to_vec();
                minus[i] -= h;
                (self.eval(&plus) - self.eval(&minus)) / (2.0 * h)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// L-BFGS (memory 10) with Armijo backtracking. Returns (vars, value,
/// grad_norm, iterations, converged).
fn lbfgs(
    obj: &Objective<'_>,
    mut x: Vec<f64>,
    max_iter: usize,
) -> (Vec<f64>, f64, f64, usize, bool) {
    const MEM: usize = 10;
    let mut fx = obj.eval(&x);
    let mut g = obj.gradient(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iters = 0;
    let mut converged = false;
    for _ in 0..max_iter {
        let gnorm = norm(&g);
        if gnorm <= 1e-8 * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let a = rho * dot(&s_hist[i], &q);
            alphas[i] = a;
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= a * yj;
            }
        }
        if k > 0 {
            // clamped: near-flat directions (central differences are blind
            // to node-alternating modes) would otherwise blow the scaling up
            let gamma = (dot(&s_hist[k - 1], &y_hist[k - 1])
                / dot(&y_hist[k - 1], &y_hist[k - 1]))
            .clamp(1e-8, 1e2);
            for qj in q.iter_mut() {
                *qj *= gamma;
            }
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let b = rho * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += (alphas[i] - b) * sj;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let ft = obj.eval(&trial);
            // strict decrease required: on flat directions the Armijo bound
            // rounds to fx and a plain <= would accept pure drift
            if ft < fx && ft <= fx + 1e-4 * step * slope {
                let gt = obj.gradient(&trial);
                let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let yv: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
                if dot(&s, &yv) > 1e-12 * norm(&s) * norm(&yv) {
                    s_hist.push(s);
                    y_hist.push(yv);
                    if s_hist.len() > MEM {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                x = trial;
                fx = ft;
                g = gt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iters += 1;
        if !accepted {
            break; // line search stagnated
        }
    }
    let gnorm = norm(&g);
    // the finite-difference gradient carries ~1e-7 noise per component, so a
    // line search stagnating below this looser threshold is still converged
    if gnorm <= 1e-6 * (1.0 + fx.abs()) {
        converged = true;
    }
    (x, fx, gnorm, iters, converged)
}

fn run_one_start(
    problem: &MppProblem,
    start: &GridFn,
) -> Result<(PathPair, OMValue, usize, f64, bool, f64)> {
    let n = problem.grid.n();
    let mut vars: Vec<f64> = start.values()[1..n - 1].to_vec();
    let mut total_iters = 0;
    let mut gnorm = f64::INFINITY;
    let mut converged = false;
    // quadratic penalty on psi(1) = x1, escalating x10, warm-started
    let mut weight = 1e2;
    while weight <= 1e8 + 1.0 {
        let obj = Objective {
            model: &problem.model,
            hurst: problem.hurst,
            boundary: problem.boundary,
            grid: Arc::clone(&problem.grid),
            weight,
        };
        if total_iters == 0 && !obj.eval(&vars).is_finite() {
            return Err(OmError::invalid("objective non-finite at initialization"));
        }
        let budget = 150.min(500usize.saturating_sub(total_iters));
        let (xv, _fv, gn, it, conv) = lbfgs(&obj, vars, budget);
        vars = xv;
        total_iters += it;
        gnorm = gn;
        converged = conv;
        weight *= 10.0;
    }
    let obj = Objective {
        model: &problem.model,
        hurst: problem.hurst,
        boundary: problem.boundary,
        grid: Arc::clone(&problem.grid),
        weight: 0.0,
    };
    // Convergence is judged on the unpenalized objective with the boundary
    // direction projected out: the escalating penalty keeps its own gradient
    // at O(weight * gap) forever, and the residual gap is repaired exactly
    // below. Moving every interior velocity node by the same amount changes
    // psi(1) at the uniform trapezoid rate, so that direction is the
    // all-ones vector.
    let g = obj.gradient(&vars);
    let m = g.len() as f64;
    let mean = g.iter().sum::<f64>() / m;
    let gproj = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
    let fv = obj.eval(&vars);
    // FD-noise floor: ~1e-5 per component at unit scale
    if gproj <= 1e-4 * m.sqrt() * (1.0 + fv.abs()) {
        converged = true;
    }
    gnorm = gnorm.min(gproj);
    let rough = obj.path_of(&vars)?;
    let gap = problem.boundary.x1 - rough.psi().values()[n - 1];
    // exact boundary repair: add c t(1-t) to phi, with c set from the
    // discrete quadrature of the bump so psi(1) lands on x1 exactly
    let bump = GridFn::sample(&problem.grid, |t| t * (1.0 - t))?;
    let bump_mass = cumulative_integral(&bump).values()[n - 1];
    let c = gap / bump_mass;
    let phi = rough.phi().map2(&bump, |p, b| p + c * b)?;
    let path = PathPair::from_velocity(phi, problem.boundary)?;
    let om = om_functional(&path, &problem.model, problem.hurst, OmForm::Unified)?;
    Ok((path, om, total_iters, gnorm, converged, gap.abs()))
}

fn build_starts(problem: &MppProblem) -> Result<Vec<GridFn>> {
    let b = problem.boundary;
    let shoot_phi = noiseless_shoot(&problem.model, b.x0, b.y0, &problem.grid)
        .map(|p| p.phi().clone())
        .ok();
    let hermite = hermite_velocity(&problem.grid, b)?;
    let mut starts = Vec::new();
    match &problem.init {
        MppInit::Path(p) => starts.push(p.phi().clone()),
        MppInit::Linear => starts.push(hermite.clone()),
        MppInit::NoiselessShoot => {
            starts.push(shoot_phi.clone().unwrap_or_else(|| hermite.clone()))
        }
        MppInit::Multistart(k) => {
            if let Some(s) = &shoot_phi {
                starts.push(s.clone());
            }
            starts.push(hermite.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
            while starts.len() < (*k).max(1) {
                let (a1, a2, ph): (f64, f64, f64) = (
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                );
                let pert = hermite.with_values(
                    hermite
                        .values()
                        .iter()
                        .zip(problem.grid.nodes())
                        .map(|(v, t)| {
                            v + a1 * (std::f64::consts::PI * t).sin()
                                + a2 * (2.0 * std::f64::consts::PI * t + ph).sin()
                                    * (std::f64::consts::PI * t).sin()
                        })
                        .collect(),
                )?;
                starts.push(pert);
            }
        }
    }
    // pin the endpoints of every start
    starts
        .into_iter()
        .map(|s| {
            let mut v = s.values().to_vec();
            v[0] = b.y0;
            let n = v.len();
            v[n - 1] = b.y1;
            s.with_values(v)
        })
        .collect()
}

/// Maximize the OM functional over paths with pinned boundary data.
pub fn minimize_om(problem: &MppProblem) -> Result<MppSolution> {
    if problem.grid.n() < 33 {
        return Err(OmError::invalid("mpp grid needs at least 33 nodes"));
    }
    let starts = build_starts(problem)?;
    let results: Vec<_> = starts
        .iter()
        .map(|s| run_one_start(problem, s))
        .collect::<Result<Vec<_>>>()?;
    let starts_tried = results.len();
    // best J wins; ties (within 1e-10) go to the lowest start index
    let mut best = 0usize;
    for i in 1..results.len() {
        if results[i].1.j > results[best].1.j + 1e-10 {
            best = i;
        }
    }
    let (path, j, iterations, grad_norm, converged, penalty_residual) =
        results.into_iter().nth(best).unwrap();
    Ok(MppSolution {
        path,
        j,
        iterations,
        grad_norm,
        converged,
        starts_tried,
        penalty_residual,
    })
}

/// Which reading of the published Euler-Lagrange displays to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElVariant {
    /// The displays exactly as published, including the apparent
    /// s^alpha / s^-alpha placement slips in the fractional cases.
    AsPrinted,
    /// The variant obtained by taking the formal adjoint of the forward
    /// operator consistently.
    AdjointConsistent,
}

/// Pointwise Euler-Lagrange residual of the matching regime. Zero (to
/// discretization) at stationary paths of the OM functional.
pub fn el_residual(
    path: &PathPair,
    model: &ModelSpec,
    hurst: HurstSpec,
    variant: ElVariant,
) -> Result<GridFn> {
    let phi = path.phi();
    let psi = path.psi();
    let grid = phi.grid();
    let n = phi.len();
    let a = hurst.alpha();
    // partials along the path
    let mut fv = Vec::with_capacity(n);
    let mut fx = Vec::with_capacity(n);
    let mut fy = Vec::with_capacity(n);
    let mut fxy = Vec::with_capacity(n);
    let mut fyy = Vec::with_capacity(n);
    for (i, t) in grid.nodes().enumerate() {
        let (x, y) = (psi.values()[i], phi.values()[i]);
        fv.push(model.force.f(t, x, y));
        fx.push(model.force.df_dx(t, x, y));
        fy.push(model.force.df_dy(t, x, y));
        fxy.push(model.force.df_dxy(t, x, y));
        fyy.push(model.force.df_dyy(t, x, y));
    }
    let f = phi.with_values(fv)?;
    let d = f.map2(&model.sigma, |v, s| v / s)?;
    // the mismatch u of the matching regime
    let u = match hurst.regime() {
        Regime::Standard => derivative(phi)?.map2(&model.sigma, |p, s| p / s)?.sub(&d)?,
        _ => path
            .phi_dot(model, hurst)?
            .sub(&kh_inverse_of_derivative(&d, hurst)?)?,
    };
    // w = (right-sided adjoint image of u), then sigma^-1 w
    let w = match (hurst.regime(), variant) {
        (Regime::Standard, _) => u.clone(),
        (Regime::Singular, _) => weighted_frac_op(
            &u,
            FracOrder(a),
            Orientation::Right,
            FracKind::Integral,
            -a,
            a,
        )?,
        (Regime::Regular, _) => weighted_frac_op(
            &u,
            FracOrder(a),
            Orientation::Right,
            FracKind::Derivative,
            a,
            -a,
        )?,
    };
    let sw = w.map2(&model.sigma, |v, s| v / s)?;
    // third-term operator image: as printed the regular case uses
    // s^a D^a_{1-} s^a inside the d/ds term instead of the adjoint one
    let sw3 = match (hurst.regime(), variant) {
        (Regime::Regular, ElVariant::AsPrinted) => weighted_frac_op(
            &u,
            FracOrder(a),
            Orientation::Right,
            FracKind::Derivative,
            a,
            a,
        )?
        .map2(&model.sigma, |v, s| v / s)?,
        _ => sw.clone(),
    };
    let sw_dd = derivative(&derivative(&sw)?)?;
    let fy_sw3 = sw3.with_values(
        sw3.values()
            .iter()
            .zip(&fy)
            .map(|(v, p)| v * p)
            .collect(),
    )?;
    let fy_sw3_d = derivative(&fy_sw3)?;
    let fyy_fn = phi.with_values(fyy)?;
    let fyy_d = derivative(&fyy_fn)?;
    let dh = d_h(hurst);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mismatch_part = match variant {
            ElVariant::AdjointConsistent => {
                2.0 * (sw_dd.values()[i] - fx[i] * sw.values()[i] + fy_sw3_d.values()[i])
            }
            // as printed, the factor 2 sits only on the second-derivative term
            ElVariant::AsPrinted => {
                2.0 * sw_dd.values()[i] - fx[i] * sw.values()[i] + fy_sw3_d.values()[i]
            }
        };
        out.push(mismatch_part + dh * (fxy[i] - fyy_d.values()[i]));
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(OmError::numerical("EL residual non-finite", Some(i)));
    }
    phi.with_values(out)
}

/// Solve the standard-case autonomous Duffing Euler-Lagrange BVP
/// psi'''' + (2V'' - gamma^2) psi'' + V''' psi'^2 + V'' V' = 0 with all four
/// boundary values pinned, by ghost-point collocation and damped Newton.
/// sigma is the (constant) noise level used to report J on the original
/// scale.
pub fn solve_el_bvp<P: Potential + Clone + 'static>(
    potential: P,
    gamma_coef: f64,
    sigma: f64,
    boundary: BoundaryData,
    grid: &Arc<TimeGrid>,
    init: &PathPair,
) -> Result<MppSolution> {
    let n = grid.n();
    if n < 33 {
        return Err(OmError::invalid("bvp grid needs at least 33 nodes"));
    }
    if !(sigma > 0.0) {
        return Err(OmError::invalid("sigma must be positive"));
    }
    let dt = grid.dt();
    // unknowns: ghost, psi_0..psi_{n-1}, ghost => n + 2
    let m = n + 2;
    let mut u = DVector::zeros(m);
    for i in 0..n {
        u[i + 1] = init.psi().values()[i];
    }
    // ghosts from the velocity boundary conditions
    u[0] = u[2] - 2.0 * dt * boundary.y0;
    u[m - 1] = u[m - 3] + 2.0 * dt * boundary.y1;

    let residual = |u: &DVector<f64>| -> DVector<f64> {
        let mut r = DVector::zeros(m);
        // interior collocation at nodes 1..n-2 (offset +1 into u)
        for i in 1..n - 1 {
            let j = i + 1;
            let p = u[j];
            let d1 = (u[j + 1] - u[j - 1]) / (2.0 * dt);
            let d2 = (u[j + 1] - 2.0 * p + u[j - 1]) / (dt * dt);
            let d4 = (u[j - 2] - 4.0 * u[j - 1] + 6.0 * p - 4.0 * u[j + 1] + u[j + 2])
                / (dt * dt * dt * dt);
            r[i] = d4
                + (2.0 * potential.d2v(p) - gamma_coef * gamma_coef) * d2
                + potential.d3v(p) * d1 * d1
                + potential.d2v(p) * potential.dv(p);
        }
        // boundary conditions
        r[0] = u[1] - boundary.x0;
        r[n - 1] = u[n] - boundary.x1;
        r[n] = (u[2] - u[0]) / (2.0 * dt) - boundary.y0;
        r[n + 1] = (u[m - 1] - u[m - 3]) / (2.0 * dt) - boundary.y1;
        r
    };

    let mut r = residual(&u);
    let mut converged = false;
    let mut iterations = 0;
    let tol = 1e-9 * (1.0 / (dt * dt)).max(1.0);
    for _ in 0..60 {
        if r.norm() <= tol {
            converged = true;
            break;
        }
        // finite-difference Jacobian (dense; the system is small)
        let mut jac = DMatrix::zeros(m, m);
        for col in 0..m {
            let h = 1e-7 * (1.0 + u[col].abs());
            let mut up = u.clone();
            up[col] += h;
            let rp = residual(&up);
            for row in 0..m {
                jac[(row, col)] = (rp[row] - r[row]) / h;
            }
        }
        let lu = jac.lu();
        let delta = lu
            .solve(&(-&r))
            .ok_or_else(|| OmError::numerical("singular Jacobian in EL Newton", None))?;
        // damped step
        let base_norm = r.norm();
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let trial = &u + step * &delta;
            let rt = residual(&trial);
            if rt.norm() < base_norm {
                u = trial;
                r = rt;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !moved || step * delta.norm() < 1e-14 {
            break;
        }
    }
    let psi_vals: Vec<f64> = (0..n).map(|i| u[i + 1]).collect();
    let psi = GridFn::new(Arc::clone(grid), psi_vals)?;
    let phi = derivative(&psi)?;
    let mut phi_vals = phi.values().to_vec();
    // the boundary velocities are exact constraints of the collocation
    phi_vals[0] = boundary.y0;
    phi_vals[n - 1] = boundary.y1;
    let path = PathPair::from_parts(psi, phi.with_values(phi_vals)?, boundary)?;
    let sigma_fn = GridFn::constant(grid, sigma)?;
    let model = ModelSpec::new(
        sigma_fn,
        sigma,
        sigma,
        1.0,
        Arc::new(PotentialForce {
            gamma: gamma_coef,
            potential: potential.clone(),
        }),
        0.0,
        0.0,
    )?;
    let j = om_functional(
        &path,
        &model,
        HurstSpec::new(0.5)?,
        OmForm::RegimeSpecific,
    )?;
    Ok(MppSolution {
        path,
        j,
        iterations,
        grad_norm: r.norm(),
        converged,
        starts_tried: 1,
        penalty_residual: 0.0,
    })
}
