//! Fractional Brownian motion machinery: covariance, the Volterra kernel
//! K_H and its operator forms, the inverse operators, exact Gaussian path
//! sampling, Young integration against B^H, and the isometry diagnostic.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::gamma;

use crate::error::{OmError, Result};
use crate::fraccalc::{frac_integral, weighted_frac_op, FracKind, FracOrder, Orientation};
use crate::grid::{cumulative_integral, derivative, GridFn, TimeGrid};

/// Hurst regime tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Regime {
    /// H < 1/2
    Singular,
    /// H = 1/2
    Standard,
    /// H > 1/2
    Regular,
}

/// Validated Hurst index with the derived order alpha = |H - 1/2|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstSpec {
    h: f64,
    alpha: f64,
    regime: Regime,
}

impl HurstSpec {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.25 && h < 1.0) {
            return Err(OmError::invalid(format!(
                "Hurst index must lie in (1/4,1), got {h}"
            )));
        }
        let regime = if h < 0.5 {
            Regime::Singular
        } else if h > 0.5 {
            Regime::Regular
        } else {
            Regime::Standard
        };
        Ok(HurstSpec {
            h,
            alpha: (h - 0.5).abs(),
            regime,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }
}

/// fBm covariance R_H(t,s) = (|t|^2H + |s|^2H - |t-s|^2H) / 2.
pub fn covariance(t: f64, s: f64, hurst: HurstSpec) -> f64 {
    let two_h = 2.0 * hurst.h;
    0.5 * (t.abs().powf(two_h) + s.abs().powf(two_h) - (t - s).abs().powf(two_h))
}

fn beta_fn(a: f64, b: f64) -> f64 {
    gamma(a) * gamma(b) / gamma(a + b)
}

/// Kernel constant for H > 1/2.
pub fn kernel_c(hurst: HurstSpec) -> f64 {
    let h = hurst.h;
    (h * (2.0 * h - 1.0) / beta_fn(2.0 - 2.0 * h, h - 0.5)).sqrt()
}

/// Kernel constant for H < 1/2.
pub fn kernel_b(hurst: HurstSpec) -> f64 {
    let h = hurst.h;
    (2.0 * h / ((1.0 - 2.0 * h) * beta_fn(1.0 - 2.0 * h, h + 0.5))).sqrt()
}

/// Gauss-Legendre nodes and weights on [-1,1] (Newton on the Legendre
/// recurrence), memoized per order.
fn gauss_legendre(n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    if let Some(v) = guard.get(&n) {
        return Arc::clone(v);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                weights[i] = 2.0 / ((1.0 - x * x) * d * d);
                break;
            }
        }
        nodes[i] = x;
    }
    let arc = Arc::new((nodes, weights));
    guard.insert(n, Arc::clone(&arc));
    arc
}

fn gl_integrate(lo: f64, hi: f64, order: usize, f: impl Fn(f64) -> f64) -> f64 {
    let gl = gauss_legendre(order);
    let (c, half) = (0.5 * (hi + lo), 0.5 * (hi - lo));
    gl.0.iter()
        .zip(&gl.1)
        .map(|(&x, &w)| w * f(c + half * x))
        .sum::<f64>()
        * half
}

/// Volterra kernel K_H(t,s) for 0 < s < t <= 1.
///
/// The inner integrals are desingularized by the substitutions
/// w = (u-s)^alpha (H > 1/2) and w = (u-s)^(1-alpha) (H < 1/2) and then
/// integrated with Gauss-Legendre.
pub fn kernel_kh(t: f64, s: f64, hurst: HurstSpec) -> Result<f64> {
    if !(s > 0.0 && s < t && t <= 1.0) {
        return Err(OmError::invalid(format!(
            "kernel requires 0 < s < t <= 1, got (t,s)=({t},{s})"
        )));
    }
    let a = hurst.alpha;
    match hurst.regime {
        Regime::Standard => Ok(1.0),
        Regime::Regular => {
            // c_H s^-a int_s^t (u-s)^(a-1) u^a du
            let wmax = (t - s).powf(a);
            let inner =
                gl_integrate(0.0, wmax, 48, |w| (s + w.powf(1.0 / a)).powf(a)) / a;
            Ok(kernel_c(hurst) * s.powf(-a) * inner)
        }
        Regime::Singular => {
            // b_H [ (t/s)^-a (t-s)^-a + a s^a int_s^t (u-s)^-a u^-(a+1) du ]
            let first = (t / s).powf(-a) * (t - s).powf(-a);
            let wmax = (t - s).powf(1.0 - a);
            // graded composite GL toward w = 0 (u -> s)
            let mut inner = 0.0;
            let mut hi = wmax;
            for _ in 0..24 {
                let lo = hi * 0.5;
                inner += gl_integrate(lo, hi, 24, |w| {
                    (s + w.powf(1.0 / (1.0 - a))).powf(-(a + 1.0))
                });
                hi = lo;
            }
            inner += gl_integrate(0.0, hi, 24, |w| {
                (s + w.powf(1.0 / (1.0 - a))).powf(-(a + 1.0))
            });
            inner /= 1.0 - a;
            Ok(kernel_b(hurst) * (first + a * s.powf(a) * inner))
        }
    }
}

/// Direct midpoint quadrature of (K_H h)(t_i) = int_0^{t_i} K_H(t_i,s) h(s) ds.
/// Used to calibrate the fractional-composition form and as an independent
/// discretization in tests.
pub fn apply_kh_kernel_quadrature(h: &GridFn, hurst: HurstSpec) -> Result<GridFn> {
    let grid = h.grid();
    let dt = grid.dt();
    let v = h.values();
    let n = h.len();
    let mut out = vec![0.0; n];
    for i in 1..n {
        let ti = grid.node(i);
        let mut acc = 0.0;
        for j in 0..i {
            let mid = (j as f64 + 0.5) * dt;
            let hm = 0.5 * (v[j] + v[j + 1]);
            acc += kernel_kh(ti, mid, hurst)? * hm * dt;
        }
        out[i] = acc;
    }
    h.with_values(out)
}

/// Subset of nodes used to calibrate the composition scalar against the
/// kernel quadrature on h = 1.
fn calibration_scalar(grid: &Arc<TimeGrid>, hurst: HurstSpec) -> Result<f64> {
    let n = grid.n();
    let ones = GridFn::constant(grid, 1.0)?;
    let raw = apply_kh_composition_raw(&ones, hurst)?;
    // least-squares ratio over a spread of nodes
    let picks: Vec<usize> = (1..=8).map(|k| (k * (n - 1)) / 8).collect();
    let dt = grid.dt();
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in &picks {
        let ti = grid.node(i);
        let m = 64.min(i.max(8));
        let cell = ti / m as f64;
        let mut quad = 0.0;
        for j in 0..m {
            let mid = (j as f64 + 0.5) * cell;
            quad += kernel_kh(ti, mid, hurst)? * cell;
        }
        let _ = dt;
        num += quad * raw.values()[i];
        den += raw.values()[i] * raw.values()[i];
    }
    if den == 0.0 {
        return Err(OmError::numerical("calibration degenerate", None));
    }
    Ok(num / den)
}

fn scalar_cache() -> &'static Mutex<HashMap<(u64, usize), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Calibrated constant folding apply_kh = scalar * raw composition; memoized
/// per (H, n). Equals c_H Gamma(alpha) analytically for H > 1/2.
pub fn kh_scalar(grid: &Arc<TimeGrid>, hurst: HurstSpec) -> Result<f64> {
    if hurst.regime == Regime::Standard {
        return Ok(1.0);
    }
    let key = (hurst.h.to_bits(), grid.n());
    if let Some(&s) = scalar_cache().lock().unwrap().get(&key) {
        return Ok(s);
    }
    let s = calibration_scalar(grid, hurst)?;
    scalar_cache().lock().unwrap().insert(key, s);
    Ok(s)
}

// Composition form without the folded constant:
//   H < 1/2: I^{1-2a}_{0+} s^a I^a_{0+} s^-a h
//   H > 1/2: I^1_{0+} s^a I^a_{0+} s^-a h
fn apply_kh_composition_raw(h: &GridFn, hurst: HurstSpec) -> Result<GridFn> {
    let a = hurst.alpha;
    let inner = weighted_frac_op(h, FracOrder(a), Orientation::Left, FracKind::Integral, -a, a)?;
    match hurst.regime {
        Regime::Singular => frac_integral(&inner, FracOrder(1.0 - 2.0 * a), Orientation::Left),
        Regime::Regular => Ok(cumulative_integral(&inner)),
        Regime::Standard => unreachable!(),
    }
}

/// Operator K_H in its fractional-composition form, with the multiplicative
/// constant calibrated against the kernel quadrature.
pub fn apply_kh(h: &GridFn, hurst: HurstSpec) -> Result<GridFn> {
    if hurst.regime == Regime::Standard {
        return Ok(cumulative_integral(h));
    }
    let scalar = kh_scalar(h.grid(), hurst)?;
    apply_kh_composition_raw(h, hurst)?.scale(scalar)
}

/// Inverse of K_H applied through a known classical derivative g = h'.
/// This is the differentiable-input form shared by `velocity_dot` and the
/// OM evaluation, where exact linearity between routes matters.
pub fn kh_inverse_of_derivative(g: &GridFn, hurst: HurstSpec) -> Result<GridFn> {
    let a = hurst.alpha;
    match hurst.regime {
        Regime::Standard => Ok(g.clone()),
        Regime::Regular => {
            let w =
                weighted_frac_op(g, FracOrder(a), Orientation::Left, FracKind::Derivative, -a, a)?;
            w.scale(1.0 / kh_scalar(g.grid(), hurst)?)
        }
        Regime::Singular => {
            let w =
                weighted_frac_op(g, FracOrder(a), Orientation::Left, FracKind::Integral, a, -a)?;
            w.scale(1.0 / kh_scalar(g.grid(), hurst)?)
        }
    }
}

/// Inverse operator K_H^{-1} for differentiable inputs with h(0) = 0.
pub fn apply_kh_inverse(h: &GridFn, hurst: HurstSpec) -> Result<GridFn> {
    if h.values()[0].abs() > 1e-10 {
        return Err(OmError::invalid("K_H inverse requires h(0) = 0"));
    }
    kh_inverse_of_derivative(&derivative(h)?, hurst)
}

/// Left-endpoint Riemann-Stieltjes sum of sigma against increments of g.
pub fn stieltjes_left(sigma: &GridFn, g: &GridFn) -> Result<GridFn> {
    let s = sigma.values();
    let v = g.values();
    if s.len() != v.len() {
        return Err(OmError::invalid("grid size mismatch"));
    }
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    out.push(0.0);
    for j in 0..v.len() - 1 {
        acc += s[j] * (v[j + 1] - v[j]);
        out.push(acc);
    }
    g.with_values(out)
}

/// (K_H^sigma f)(t) = int_0^t sigma_s d(K_H f)(s).
pub fn apply_kh_sigma(f: &GridFn, sigma: &GridFn, hurst: HurstSpec) -> Result<GridFn> {
    stieltjes_left(sigma, &apply_kh(f, hurst)?)
}

/// The fractional velocity: the preimage of phi - y0 under K_H^sigma.
/// Candidate paths are C^1, so the differentiable-input inverse applies:
/// d(int sigma^-1 dphi)/ds = sigma^-1 phi'.
pub fn velocity_dot(phi: &GridFn, y0: f64, sigma: &GridFn, hurst: HurstSpec) -> Result<GridFn> {
    if (phi.values()[0] - y0).abs() > 1e-10 {
        return Err(OmError::invalid(format!(
            "phi(0) = {} does not match y0 = {y0}",
            phi.values()[0]
        )));
    }
    let dphi = derivative(phi)?;
    let g = dphi.map2(sigma, |d, s| d / s)?;
    kh_inverse_of_derivative(&g, hurst)
}

/// fBm sampling method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum FbmMethod {
    /// Exact Gaussian vector via Cholesky factorization of the covariance.
    Cholesky,
    /// Biased synthesis B^H(t_i) = sum_j K_H(t_i, mid_j) dW_j.
    KernelSynthesis,
}

/// A sampled fBm path with its driving Wiener path and RNG provenance.
#[derive(Debug, Clone)]
pub struct FbmPath {
    pub wiener: GridFn,
    pub fbm: GridFn,
    pub hurst: HurstSpec,
    pub seed: u64,
    pub stream: u64,
    pub method: FbmMethod,
}

/// Cost guard for the Cholesky sampler.
pub const CHOLESKY_MAX_NODES: usize = 4097;

fn cholesky_cache() -> &'static Mutex<HashMap<(u64, usize), Arc<DMatrix<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), Arc<DMatrix<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Lower Cholesky factor of the covariance Gram matrix on the interior +
/// terminal nodes, with escalating jitter for near-singular cases.
pub fn cholesky_factor(grid: &Arc<TimeGrid>, hurst: HurstSpec) -> Result<Arc<DMatrix<f64>>> {
    let n = grid.n();
    if n > CHOLESKY_MAX_NODES {
        return Err(OmError::invalid(format!(
            "cholesky sampling capped at {CHOLESKY_MAX_NODES} nodes, got {n}"
        )));
    }
    let key = (hurst.h.to_bits(), n);
    {
        let cache = cholesky_cache().lock().unwrap();
        if let Some(f) = cache.get(&key) {
            return Ok(Arc::clone(f));
        }
    }
    let m = n - 1; // node 0 is pinned at B(0) = 0
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            cov[(i, j)] = covariance(grid.node(i + 1), grid.node(j + 1), hurst);
        }
    }
    let mut jitter = 0.0;
    let factor = loop {
        let mut trial = cov.clone();
        if jitter > 0.0 {
            for i in 0..m {
                trial[(i, i)] += jitter;
            }
        }
        if let Some(chol) = trial.cholesky() {
            break chol.l();
        }
        jitter = if jitter == 0.0 { 1e-14 } else { jitter * 10.0 };
        if jitter > 1e-10 {
            return Err(OmError::numerical(
                "covariance not positive-definite after jitter",
                None,
            ));
        }
    };
    let arc = Arc::new(factor);
    let mut cache = cholesky_cache().lock().unwrap();
    if cache.len() >= 4 {
        if let Some(k) = cache.keys().next().cloned() {
            cache.remove(&k);
        }
    }
    cache.insert(key, Arc::clone(&arc));
    Ok(arc)
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sample one fBm path. Bit-identical for fixed (seed, stream) regardless of
/// scheduling; different streams decorrelate.
pub fn sample_fbm(
    hurst: HurstSpec,
    grid: &Arc<TimeGrid>,
    seed: u64,
    stream: u64,
    method: FbmMethod,
) -> Result<FbmPath> {
    let n = grid.n();
    let dt = grid.dt();
    let mut rng = path_rng(seed, stream);
    let z: Vec<f64> = (0..n - 1)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let sqrt_dt = dt.sqrt();
    let mut w = Vec::with_capacity(n);
    w.push(0.0);
    for i in 0..n - 1 {
        w.push(w[i] + z[i] * sqrt_dt);
    }
    let wiener = GridFn::new(Arc::clone(grid), w)?;
    let fbm = match method {
        FbmMethod::Cholesky => {
            let l = cholesky_factor(grid, hurst)?;
            let m = n - 1;
            let mut b = vec![0.0; n];
            for i in 0..m {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += l[(i, j)] * z[j];
                }
                b[i + 1] = acc;
            }
            GridFn::new(Arc::clone(grid), b)?
        }
        FbmMethod::KernelSynthesis => {
            let mut b = vec![0.0; n];
            for i in 1..n {
                let ti = grid.node(i);
                let mut acc = 0.0;
                for (j, &zj) in z.iter().enumerate().take(i) {
                    let mid = (j as f64 + 0.5) * dt;
                    acc += kernel_kh(ti, mid, hurst)? * zj * sqrt_dt;
                }
                b[i] = acc;
            }
            GridFn::new(Arc::clone(grid), b)?
        }
    };
    Ok(FbmPath {
        wiener,
        fbm,
        hurst,
        seed,
        stream,
        method,
    })
}

/// Young integral int_0^t sigma dB^H by left-endpoint sums; result(0) = 0.
pub fn young_integral(sigma: &GridFn, path: &FbmPath) -> Result<GridFn> {
    stieltjes_left(sigma, &path.fbm)
}

/// Monte Carlo vs analytic check of the fBm Wiener-integral isometry.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct IsometryResidual {
    pub mc_estimate: f64,
    pub analytic: f64,
    pub std_error: f64,
}

/// E[ int f dB^H int g dB^H ] for H > 1/2: Monte Carlo over sampled paths
/// against H(2H-1) intint f_t g_s |t-s|^(2H-2) ds dt by singular quadrature
/// with exact kernel moments per cell.
pub fn isometry_residual(
    f: &GridFn,
    g: &GridFn,
    hurst: HurstSpec,
    n_mc: usize,
    seed: u64,
) -> Result<IsometryResidual> {
    if hurst.regime != Regime::Regular {
        return Err(OmError::invalid(
            "isometry double-integral oracle requires H > 1/2",
        ));
    }
    let analytic = isometry_double_integral(f, g, hurst)?;
    let grid = f.grid();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for k in 0..n_mc {
        let path = sample_fbm(hurst, grid, seed, k as u64, FbmMethod::Cholesky)?;
        let ifb = *young_integral(f, &path)?.values().last().unwrap();
        let igb = *young_integral(g, &path)?.values().last().unwrap();
        let prod = ifb * igb;
        sum += prod;
        sumsq += prod * prod;
    }
    let mean = sum / n_mc as f64;
    let var = (sumsq / n_mc as f64 - mean * mean).max(0.0);
    Ok(IsometryResidual {
        mc_estimate: mean,
        analytic,
        std_error: (var / n_mc as f64).sqrt(),
    })
}

/// H(2H-1) intint f_t g_s |t-s|^(2H-2) ds dt with f,g piecewise linear and
/// exact moments of the singular kernel on every cell pair (outer integral
/// by per-cell Gauss-Legendre, inner exact).
pub fn isometry_double_integral(f: &GridFn, g: &GridFn, hurst: HurstSpec) -> Result<f64> {
    if f.len() != g.len() {
        return Err(OmError::invalid("grid size mismatch"));
    }
    let h = hurst.h;
    let mu = 2.0 * h - 2.0; // in (-1, 0)
    let grid = f.grid();
    let dt = grid.dt();
    let n = f.len();
    let gv = g.values();
    // inner integral at fixed t: int_0^1 g(s) |t-s|^mu ds, exact per cell for
    // piecewise-linear g
    let inner = |t: f64| -> f64 {
        let mut acc = 0.0;
        for j in 0..n - 1 {
            let s0 = j as f64 * dt;
            let s1 = s0 + dt;
            let a = gv[j];
            let b = (gv[j + 1] - gv[j]) / dt;
            // int_{s0}^{s1} (a + b (s - s0)) |t - s|^mu ds, split at s = t
            let piece = |lo: f64, hi: f64| -> f64 {
                if hi <= lo {
                    return 0.0;
                }
                // over [lo,hi] entirely on one side of t
                let sgn_left = hi <= t;
                // moments m0 = int |t-s|^mu ds, m1 = int s |t-s|^mu ds
                let (m0, m1) = if sgn_left {
                    let u_lo = t - hi;
                    let u_hi = t - lo;
                    let p1 = (u_hi.powf(mu + 1.0) - u_lo.powf(mu + 1.0)) / (mu + 1.0);
                    let p2 = (u_hi.powf(mu + 2.0) - u_lo.powf(mu + 2.0)) / (mu + 2.0);
                    (p1, t * p1 - p2)
                } else {
                    let u_lo = lo - t;
                    let u_hi = hi - t;
                    let p1 = (u_hi.powf(mu + 1.0) - u_lo.powf(mu + 1.0)) / (mu + 1.0);
                    let p2 = (u_hi.powf(mu + 2.0) - u_lo.powf(mu + 2.0)) / (mu + 2.0);
                    (p1, t * p1 + p2)
                };
                (a - b * s0) * m0 + b * m1
            };
            if t <= s0 {
                acc += piece(s0, s1);
            } else if t >= s1 {
                acc += piece(s0, s1);
            } else {
                acc += piece(s0, t) + piece(t, s1);
            }
        }
        acc
    };
    let fv = f.values();
    let mut total = 0.0;
    for i in 0..n - 1 {
        let t0 = i as f64 * dt;
        let a = fv[i];
        let b = (fv[i + 1] - fv[i]) / dt;
        total += gl_integrate(t0, t0 + dt, 8, |t| (a + b * (t - t0)) * inner(t));
    }
    Ok(h * (2.0 * h - 1.0) * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{holder_seminorm, make_grid};

    fn hs(h: f64) -> HurstSpec {
        HurstSpec::new(h).unwrap()
    }

    // Beta-function oracle independent of statrs: B(a,b) by Gauss-Legendre
    // on a desingularized split integral.
    fn beta_oracle(a: f64, b: f64) -> f64 {
        // B(a,b) = int_0^1 x^(a-1)(1-x)^(b-1) dx; substitute x = u^(1/a) on
        // [0,1/2] and symmetrically for the right half.
        let left = gl_integrate(0.0, 0.5f64.powf(a), 64, |u| {
            (1.0 - u.powf(1.0 / a)).powf(b - 1.0)
        }) / a;
        let right = gl_integrate(0.0, 0.5f64.powf(b), 64, |u| {
            (1.0 - u.powf(1.0 / b)).powf(a - 1.0)
        }) / b;
        left + right
    }

    #[test]
    fn hurst_validation() {
        assert!(HurstSpec::new(0.2).is_err());
        assert!(HurstSpec::new(1.0).is_err());
        assert_eq!(hs(0.3).regime(), Regime::Singular);
        assert_eq!(hs(0.5).regime(), Regime::Standard);
        assert_eq!(hs(0.7).regime(), Regime::Regular);
        assert!((hs(0.3).alpha() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn covariance_values() {
        assert!((covariance(1.0, 1.0, hs(0.3)) - 1.0).abs() < 1e-15);
        assert!((covariance(0.5, 0.5, hs(0.3)) - 0.5f64.powf(0.6)).abs() < 1e-12);
        assert!((covariance(1.0, 0.5, hs(0.5)) - 0.5).abs() < 1e-15);
        // symmetry
        assert_eq!(covariance(0.3, 0.8, hs(0.7)), covariance(0.8, 0.3, hs(0.7)));
    }

    #[test]
    fn kernel_constants_match_beta_oracle() {
        for &h in &[0.3, 0.7] {
            let spec = hs(h);
            if h > 0.5 {
                let expect = (h * (2.0 * h - 1.0) / beta_oracle(2.0 - 2.0 * h, h - 0.5)).sqrt();
                assert!(
                    (kernel_c(spec) - expect).abs() < 1e-8 * expect,
                    "c_H mismatch at H={h}"
                );
            } else {
                let expect =
                    (2.0 * h / ((1.0 - 2.0 * h) * beta_oracle(1.0 - 2.0 * h, h + 0.5))).sqrt();
                assert!(
                    (kernel_b(spec) - expect).abs() < 1e-8 * expect,
                    "b_H mismatch at H={h}"
                );
            }
        }
    }

    #[test]
    fn kernel_standard_case_is_one() {
        assert_eq!(kernel_kh(0.8, 0.3, hs(0.5)).unwrap(), 1.0);
        assert!(kernel_kh(0.3, 0.3, hs(0.5)).is_err());
        assert!(kernel_kh(0.3, 0.0, hs(0.5)).is_err());
    }

    /// Fine-quadrature oracle for int_0^{min(t,s)} K(t,u) K(s,u) du with
    /// geometric grading toward both endpoints.
    fn factorization_quadrature(t: f64, s: f64, spec: HurstSpec) -> f64 {
        let upper = t.min(s);
        let mut total = 0.0;
        // panels graded geometrically toward both endpoints (kernel is
        // singular at u -> upper for H < 1/2 and vanishes slowly at u -> 0)
        let mut edges = vec![0.0];
        let k = 14;
        for i in 1..=k {
            edges.push(upper * 0.5 * 0.5f64.powi(k - i));
        }
        for i in 1..=k {
            edges.push(upper - upper * 0.5 * 0.5f64.powi(i));
        }
        edges.push(upper);
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in edges.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            total += gl_integrate(w[0], w[1], 24, |u| {
                kernel_kh(t, u, spec).unwrap() * kernel_kh(s, u, spec).unwrap()
            });
        }
        total
    }

    #[test]
    fn kernel_factorization_reproduces_covariance() {
        for &h in &[0.3, 0.7] {
            let spec = hs(h);
            let (t, s) = (1.0, 0.5);
            let got = factorization_quadrature(t, s, spec);
            let expect = covariance(t, s, spec);
            assert!(
                (got - expect).abs() <= 1e-3,
                "H={h}: factorization {got} vs covariance {expect}"
            );
        }
    }

    #[test]
    fn apply_kh_standard_is_cumulative() {
        let g = make_grid(128).unwrap();
        let f = GridFn::sample(&g, |t| (3.0 * t).sin()).unwrap();
        let lhs = apply_kh(&f, hs(0.5)).unwrap();
        let rhs = cumulative_integral(&f);
        for i in 0..f.len() {
            assert_eq!(lhs.values()[i], rhs.values()[i]);
        }
    }

    #[test]
    fn apply_kh_zero() {
        let g = make_grid(64).unwrap();
        let z = GridFn::zeros(&g);
        assert_eq!(apply_kh(&z, hs(0.7)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn kh_scalar_matches_closed_form_regular() {
        // for H > 1/2 the folded constant is c_H Gamma(alpha)
        let g = make_grid(512).unwrap();
        let spec = hs(0.7);
        let s = kh_scalar(&g, spec).unwrap();
        let expect = kernel_c(spec) * gamma(spec.alpha());
        assert!(
            (s - expect).abs() < 2e-2 * expect,
            "calibrated {s} vs closed form {expect}"
        );
    }

    #[test]
    fn apply_kh_matches_kernel_quadrature() {
        let g = make_grid(2048).unwrap();
        let f = GridFn::sample(&g, |t| (2.0 * std::f64::consts::PI * t).sin()).unwrap();
        let spec = hs(0.7);
        let comp = apply_kh(&f, spec).unwrap();
        let quad = apply_kh_kernel_quadrature(&f, spec).unwrap();
        let err = comp.sub(&quad).unwrap().l2_norm() / quad.l2_norm();
        assert!(err <= 2e-2, "rel L2 {err}");
    }

    #[test]
    fn kh_inverse_round_trip() {
        let gr = make_grid(2048).unwrap();
        let g = GridFn::sample(&gr, |t| (2.0 * std::f64::consts::PI * t).cos()).unwrap();
        for &h in &[0.3, 0.5, 0.7] {
            let spec = hs(h);
            let fwd = apply_kh(&g, spec).unwrap();
            let back = apply_kh_inverse(&fwd, spec).unwrap();
            let err = back.sub(&g).unwrap().l2_norm() / g.l2_norm();
            // a non-vanishing integrand at t = 0 costs an endpoint layer
            assert!(err <= 3e-2, "H={h}: rel L2 {err}");
        }
    }

    #[test]
    fn kh_inverse_standard_is_derivative() {
        let g = make_grid(256).unwrap();
        let f = GridFn::sample(&g, |t| t * t).unwrap();
        let inv = apply_kh_inverse(&f, hs(0.5)).unwrap();
        for (i, t) in g.nodes().enumerate() {
            assert!((inv.values()[i] - 2.0 * t).abs() < 1e-10);
        }
    }

    #[test]
    fn kh_inverse_requires_zero_start() {
        let g = make_grid(64).unwrap();
        let f = GridFn::constant(&g, 1.0).unwrap();
        assert!(apply_kh_inverse(&f, hs(0.7)).is_err());
    }

    #[test]
    fn kh_sigma_constant_sigma_is_kh() {
        let g = make_grid(256).unwrap();
        let f = GridFn::sample(&g, |t| (5.0 * t).sin()).unwrap();
        let ones = GridFn::constant(&g, 1.0).unwrap();
        let lhs = apply_kh_sigma(&f, &ones, hs(0.7)).unwrap();
        let rhs = apply_kh(&f, hs(0.7)).unwrap();
        let err = lhs.sub(&rhs).unwrap().max_abs();
        assert!(err < 1e-12 * (1.0 + rhs.max_abs()), "err {err}");
    }

    #[test]
    fn kh_sigma_standard_reduction() {
        // sigma(t) = 2 + sin(8 pi t), f = 1, H = 1/2: K f = t so the
        // Stieltjes sum is the left-rule integral of sigma.
        let g = make_grid(1024).unwrap();
        let sigma = GridFn::sample(&g, |t| 2.0 + (8.0 * std::f64::consts::PI * t).sin()).unwrap();
        let ones = GridFn::constant(&g, 1.0).unwrap();
        let got = apply_kh_sigma(&ones, &sigma, hs(0.5)).unwrap();
        let expect = cumulative_integral(&sigma);
        let err = got.sub(&expect).unwrap().max_abs();
        assert!(err < 5e-3, "err {err}");
    }

    #[test]
    fn velocity_dot_standard_constant_sigma() {
        let g = make_grid(128).unwrap();
        let y0 = 3.0;
        let phi = GridFn::sample(&g, |t| y0 + 2.0 * t).unwrap();
        let sigma = GridFn::constant(&g, 2.0).unwrap();
        let vd = velocity_dot(&phi, y0, &sigma, hs(0.5)).unwrap();
        for v in vd.values() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn velocity_dot_constant_phi_is_zero() {
        let g = make_grid(128).unwrap();
        let phi = GridFn::constant(&g, 1.5).unwrap();
        let sigma = GridFn::constant(&g, 2.0).unwrap();
        for &h in &[0.3, 0.5, 0.7] {
            let vd = velocity_dot(&phi, 1.5, &sigma, hs(h)).unwrap();
            assert!(vd.max_abs() < 1e-10, "H={h}");
        }
    }

    #[test]
    fn velocity_dot_rejects_bad_start() {
        let g = make_grid(64).unwrap();
        let phi = GridFn::constant(&g, 1.0).unwrap();
        let sigma = GridFn::constant(&g, 1.0).unwrap();
        assert!(velocity_dot(&phi, 0.0, &sigma, hs(0.5)).is_err());
    }

    #[test]
    fn velocity_dot_round_trip() {
        let gr = make_grid(2048).unwrap();
        let y0 = 0.7;
        let phi = GridFn::sample(&gr, |t| y0 + t * t).unwrap();
        let sigma =
            GridFn::sample(&gr, |t| 2.0 + (8.0 * std::f64::consts::PI * t).sin()).unwrap();
        for &h in &[0.3, 0.5, 0.7] {
            let spec = hs(h);
            let vd = velocity_dot(&phi, y0, &sigma, spec).unwrap();
            let rebuilt = apply_kh_sigma(&vd, &sigma, spec).unwrap();
            let shifted = rebuilt.with_values(
                rebuilt.values().iter().map(|v| v + y0).collect(),
            ).unwrap();
            let diff = shifted.sub(&phi).unwrap().l2_norm() / phi.l2_norm();
            assert!(diff <= 2e-2, "H={h}: rel L2 {diff}");
        }
    }

    #[test]
    fn sample_fbm_deterministic() {
        let g = make_grid(65).unwrap();
        let a = sample_fbm(hs(0.3), &g, 42, 7, FbmMethod::Cholesky).unwrap();
        let b = sample_fbm(hs(0.3), &g, 42, 7, FbmMethod::Cholesky).unwrap();
        let c = sample_fbm(hs(0.3), &g, 42, 8, FbmMethod::Cholesky).unwrap();
        assert_eq!(a.fbm.values(), b.fbm.values());
        assert_ne!(a.fbm.values(), c.fbm.values());
        assert_eq!(a.fbm.values()[0], 0.0);
        assert_eq!(a.wiener.values()[0], 0.0);
    }

    #[test]
    fn sample_fbm_cost_guard() {
        let g = make_grid(CHOLESKY_MAX_NODES + 1).unwrap();
        assert!(sample_fbm(hs(0.3), &g, 1, 0, FbmMethod::Cholesky).is_err());
    }

    #[test]
    fn brownian_increment_variance() {
        let g = make_grid(17).unwrap();
        let dt = g.dt();
        let n_paths = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0usize;
        for k in 0..n_paths {
            let p = sample_fbm(hs(0.5), &g, 11, k, FbmMethod::Cholesky).unwrap();
            let v = p.fbm.values();
            for i in 0..v.len() - 1 {
                let d = v[i + 1] - v[i];
                sum += d;
                sumsq += d * d;
                count += 1;
            }
        }
        let var = sumsq / count as f64 - (sum / count as f64).powi(2);
        // SE of a variance estimate: var * sqrt(2/(count-1))
        let se = var * (2.0 / (count as f64 - 1.0)).sqrt();
        assert!(
            (var - dt).abs() <= 3.0 * se,
            "var {var} vs dt {dt}, se {se}"
        );
    }

    #[test]
    fn empirical_covariance_h03() {
        let g = make_grid(9).unwrap(); // nodes include 0.5 and 1.0
        let spec = hs(0.3);
        let (i_half, i_one) = (4, 8);
        let n_paths = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for k in 0..n_paths {
            let p = sample_fbm(spec, &g, 5, k, FbmMethod::Cholesky).unwrap();
            let prod = p.fbm.values()[i_half] * p.fbm.values()[i_one];
            sum += prod;
            sumsq += prod * prod;
        }
        let mean = sum / n_paths as f64;
        let se = ((sumsq / n_paths as f64 - mean * mean) / n_paths as f64).sqrt();
        let expect = covariance(0.5, 1.0, spec);
        assert!(
            (mean - expect).abs() <= 3.0 * se,
            "cov {mean} vs {expect}, se {se}"
        );
    }

    #[test]
    fn kernel_synthesis_standard_matches_wiener() {
        let g = make_grid(65).unwrap();
        let p = sample_fbm(hs(0.5), &g, 3, 0, FbmMethod::KernelSynthesis).unwrap();
        let err = p.fbm.sub(&p.wiener).unwrap().max_abs();
        assert!(err < 1e-12, "err {err}");
    }

    #[test]
    fn young_integral_constant_integrand() {
        let g = make_grid(129).unwrap();
        let p = sample_fbm(hs(0.7), &g, 9, 0, FbmMethod::Cholesky).unwrap();
        let ones = GridFn::constant(&g, 1.0).unwrap();
        let yi = young_integral(&ones, &p).unwrap();
        for i in 0..g.n() {
            assert!((yi.values()[i] - p.fbm.values()[i]).abs() < 1e-14);
        }
        let threes = GridFn::constant(&g, 3.0).unwrap();
        let yi3 = young_integral(&threes, &p).unwrap();
        assert!((yi3.values()[100] - 3.0 * p.fbm.values()[100]).abs() < 1e-13);
    }

    #[test]
    fn young_integration_by_parts() {
        let g = make_grid(4096).unwrap();
        let sigma = GridFn::sample(&g, |t| 2.0 + (8.0 * std::f64::consts::PI * t).sin()).unwrap();
        let p = sample_fbm(hs(0.7), &g, 21, 0, FbmMethod::Cholesky).unwrap();
        let lhs = *young_integral(&sigma, &p).unwrap().values().last().unwrap();
        // int B dsigma by left sums
        let rhs_int = *stieltjes_left(&p.fbm, &sigma).unwrap().values().last().unwrap();
        let bh1 = *p.fbm.values().last().unwrap();
        let boundary = sigma.values().last().unwrap() * bh1 - sigma.values()[0] * 0.0;
        // the exact discrete residual is the cross-variation sum, O(dt^H)
        let resid = (lhs + rhs_int - boundary).abs();
        assert!(
            resid <= 5e-3 * p.fbm.max_abs(),
            "residual {resid} vs scale {}",
            p.fbm.max_abs()
        );
    }

    #[test]
    fn isometry_variance_of_bh1() {
        let g = make_grid(257).unwrap();
        let ones = GridFn::constant(&g, 1.0).unwrap();
        let r = isometry_residual(&ones, &ones, hs(0.7), 10_000, 31).unwrap();
        assert!((r.analytic - 1.0).abs() < 1e-6, "analytic {}", r.analytic);
        assert!(
            (r.mc_estimate - r.analytic).abs() <= 3.0 * r.std_error,
            "mc {} vs {} (se {})",
            r.mc_estimate,
            r.analytic,
            r.std_error
        );
    }

    #[test]
    fn isometry_zero_integrand() {
        let g = make_grid(65).unwrap();
        let ones = GridFn::constant(&g, 1.0).unwrap();
        let zero = GridFn::zeros(&g);
        let r = isometry_residual(&ones, &zero, hs(0.7), 100, 1).unwrap();
        assert_eq!(r.analytic, 0.0);
        assert_eq!(r.mc_estimate, 0.0);
    }

    #[test]
    fn path_regularity_growth() {
        // [B^H]_{H-0.05} should stay finite and grow no faster than
        // n^{0.075} over the tested sizes
        let spec = hs(0.5);
        let beta = spec.h() - 0.05;
        let mut prev = 0.0;
        for (k, &n) in [512usize, 1024, 2048].iter().enumerate() {
            let g = make_grid(n).unwrap();
            // average over a few paths to tame noise
            let mut avg = 0.0;
            for s in 0..4u64 {
                let p = sample_fbm(spec, &g, 77, s, FbmMethod::Cholesky).unwrap();
                avg += holder_seminorm(&p.fbm, beta).unwrap().value;
            }
            avg /= 4.0;
            assert!(avg.is_finite() && avg > 0.0);
            if k > 0 {
                let growth = avg / prev;
                assert!(
                    growth <= 2.0f64.powf(0.05 * 1.5) * 1.25,
                    "growth {growth} too fast at n={n}"
                );
            }
            prev = avg;
        }
    }
}
