//! Run configuration: a flat key-value TOML file, overridden by flags.
//! The manifest written next to every run's outputs is itself a valid
//! config file, so re-running a manifest reproduces the run.

use std::sync::Arc;

use ompath::fbm::HurstSpec;
use ompath::grid::{make_grid, GridFn, TimeGrid};
use ompath::mpp::noiseless_shoot;
use ompath::omfunctional::{
    pendulum_reference_k, BoundaryData, Force, ModelSpec, PathPair, PendulumForce, Potential,
    PotentialForce, QuarticDoubleWell, ZeroForce,
};
use ompath::{OmError, Result};
use serde::{Deserialize, Serialize};

fn default_force() -> String {
    "zero".into()
}
fn default_sigma() -> String {
    "constant".into()
}
fn default_sigma0() -> f64 {
    1.0
}
fn default_h() -> f64 {
    0.5
}
fn default_n() -> usize {
    257
}
fn default_n_paths() -> usize {
    10_000
}
fn default_gamma() -> f64 {
    0.1
}
fn default_center() -> String {
    "noiseless".into()
}
fn default_path1() -> String {
    "hermite".into()
}
fn default_path2() -> String {
    "flat".into()
}
fn default_tube_mode() -> String {
    "path".into()
}

/// Every experiment key in one flat record. Unknown keys are rejected so a
/// typo cannot silently fall back to a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // -- model -------------------------------------------------------------
    /// Force preset: zero | pendulum | duffing | poly.
    #[serde(default = "default_force")]
    pub force: String,
    /// Pendulum stiffness; omitted = the reference value
    /// (1/2)(sqrt(pi) G(1/4)/G(3/4))^2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// Damping coefficient for the potential systems (duffing, poly).
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Polynomial potential coefficients c_i of V(x) = sum c_i x^i (poly).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coeffs: Vec<f64>,
    /// Lipschitz constant of f; omitted = preset-specific default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_l: Option<f64>,
    /// Bound on |f|; omitted = preset-specific default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_f: Option<f64>,
    // -- noise -------------------------------------------------------------
    /// Noise preset: constant | cos | sin, giving sigma0 (+ amp cos/sin(omega t)).
    #[serde(default = "default_sigma")]
    pub sigma: String,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    #[serde(default)]
    pub amp: f64,
    #[serde(default)]
    pub omega: f64,
    // -- problem -----------------------------------------------------------
    #[serde(default = "default_h")]
    pub h: f64,
    /// Holder exponent of the tube norm; omitted = midpoint of the window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Number of grid nodes on [0, 1].
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y1: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Strictly decreasing radii for the small-ball regression.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub radii: Vec<f64>,
    /// Tube norm: position (velocity-shifted 1+beta norm) | path
    /// (beta-seminorm of the position deviation) | noise.
    #[serde(default = "default_tube_mode")]
    pub tube_mode: String,
    /// Tube center path: noiseless | flat | hermite | mpp.
    #[serde(default = "default_center")]
    pub center: String,
    /// Ratio-experiment paths (same kinds as `center`).
    #[serde(default = "default_path1")]
    pub path1: String,
    #[serde(default = "default_path2")]
    pub path2: String,
    // -- bookkeeping (echoed into the manifest) -----------------------------
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config must deserialize")
    }
}

impl RunConfig {
    pub fn from_file(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OmError::invalid(format!("cannot read config {path}: {e}")))?;
        toml::from_str(&text).map_err(|e| OmError::invalid(format!("config parse error: {e}")))
    }

    pub fn hurst(&self) -> Result<HurstSpec> {
        HurstSpec::new(self.h)
    }

    pub fn grid(&self) -> Result<Arc<TimeGrid>> {
        make_grid(self.n)
    }

    pub fn beta_or_default(&self) -> Result<f64> {
        Ok(match self.beta {
            Some(b) => b,
            None => ompath::montecarlo::default_beta(self.hurst()?),
        })
    }

    pub fn boundary(&self) -> Result<BoundaryData> {
        let x1 = self
            .x1
            .ok_or_else(|| OmError::invalid("missing boundary key x1"))?;
        let y1 = self
            .y1
            .ok_or_else(|| OmError::invalid("missing boundary key y1"))?;
        BoundaryData::new(self.x0, self.y0, x1, y1)
    }

    fn sigma_fn(&self) -> Result<(Box<dyn Fn(f64) -> f64>, f64, f64)> {
        let (s0, a, w) = (self.sigma0, self.amp, self.omega);
        match self.sigma.as_str() {
            "constant" => Ok((Box::new(move |_| s0), s0, s0)),
            "cos" => Ok((
                Box::new(move |t| s0 + a * (w * t).cos()),
                s0 - a.abs(),
                s0 + a.abs(),
            )),
            "sin" => Ok((
                Box::new(move |t| s0 + a * (w * t).sin()),
                s0 - a.abs(),
                s0 + a.abs(),
            )),
            other => Err(OmError::invalid(format!(
                "unknown sigma preset '{other}' (constant | cos | sin)"
            ))),
        }
    }

    fn force_parts(&self) -> Result<(Arc<dyn Force>, f64, f64)> {
        match self.force.as_str() {
            "zero" => Ok((Arc::new(ZeroForce), 0.0, 0.0)),
            "pendulum" => {
                let k = self.k.unwrap_or_else(pendulum_reference_k);
                Ok((Arc::new(PendulumForce { k }), k, k))
            }
            "duffing" => Ok((
                Arc::new(PotentialForce {
                    gamma: self.gamma,
                    potential: QuarticDoubleWell,
                }),
                1.0,
                1.0,
            )),
            "poly" => {
                if self.coeffs.is_empty() {
                    return Err(OmError::invalid("poly force needs potential coeffs"));
                }
                Ok((
                    Arc::new(PotentialForce {
                        gamma: self.gamma,
                        potential: PolyPotential {
                            c: self.coeffs.clone(),
                        },
                    }),
                    1.0,
                    1.0,
                ))
            }
            other => Err(OmError::invalid(format!(
                "unknown force preset '{other}' (zero | pendulum | duffing | poly)"
            ))),
        }
    }

    /// Fully validated model (positive noise floor enforced).
    pub fn model(&self) -> Result<ModelSpec> {
        let grid = self.grid()?;
        let (sf, lo, hi) = self.sigma_fn()?;
        let sigma = GridFn::sample(&grid, sf)?;
        let (force, l_def, b_def) = self.force_parts()?;
        ModelSpec::new(
            sigma,
            lo,
            hi,
            1.0,
            force,
            self.lipschitz_l.unwrap_or(l_def),
            self.bound_f.unwrap_or(b_def),
        )
    }

    /// Model without the positivity validation, for the assumption checker:
    /// a degenerate noise floor must reach the checker and fail there, not
    /// die as a usage error.
    pub fn model_unchecked(&self) -> Result<ModelSpec> {
        let grid = self.grid()?;
        let (sf, lo, hi) = self.sigma_fn()?;
        let sigma = GridFn::sample(&grid, sf)?;
        let (force, l_def, b_def) = self.force_parts()?;
        Ok(ModelSpec {
            sigma,
            sigma_min: lo,
            sigma_max: hi,
            sigma_holder_gamma: 1.0,
            force,
            lipschitz_l: self.lipschitz_l.unwrap_or(l_def),
            bound_f: self.bound_f.unwrap_or(b_def),
        })
    }

    /// A reference path of the requested kind on the run grid.
    pub fn reference_path(&self, kind: &str, model: &ModelSpec) -> Result<PathPair> {
        let grid = self.grid()?;
        match kind {
            "noiseless" => noiseless_shoot(model, self.x0, self.y0, &grid),
            "flat" => {
                let y0 = self.y0;
                let phi = GridFn::constant(&grid, y0)?;
                let b = BoundaryData::new(self.x0, y0, self.x0 + y0, y0)?;
                PathPair::from_velocity(phi, b)
            }
            "hermite" => {
                let b = self.boundary()?;
                let phi = GridFn::sample(&grid, |t| {
                    let h00d = 6.0 * t * t - 6.0 * t;
                    let h10d = 3.0 * t * t - 4.0 * t + 1.0;
                    let h01d = -6.0 * t * t + 6.0 * t;
                    let h11d = 3.0 * t * t - 2.0 * t;
                    b.x0 * h00d + b.y0 * h10d + b.x1 * h01d + b.y1 * h11d
                })?;
                PathPair::from_velocity(phi, b)
            }
            "mpp" => {
                let problem = ompath::mpp::MppProblem {
                    model: model.clone(),
                    hurst: self.hurst()?,
                    boundary: self.boundary()?,
                    grid,
                    init: ompath::mpp::MppInit::Multistart(3),
                    seed: self.seed,
                };
                Ok(ompath::mpp::minimize_om(&problem)?.path)
            }
            other => Err(OmError::invalid(format!(
                "unknown path kind '{other}' (noiseless | flat | hermite | mpp)"
            ))),
        }
    }
}

/// V(x) = sum_i c_i x^i with analytic derivatives up to third order.
#[derive(Debug, Clone)]
pub struct PolyPotential {
    pub c: Vec<f64>,
}

impl PolyPotential {
    fn derivative_sum(&self, x: f64, order: usize) -> f64 {
        let mut val = 0.0;
        for (i, &c) in self.c.iter().enumerate() {
            if i < order {
                continue;
            }
            let mut fac = 1.0;
            for j in 0..order {
                fac *= (i - j) as f64;
            }
            val += c * fac * x.powi((i - order) as i32);
        }
        val
    }
}

impl Potential for PolyPotential {
    fn v(&self, x: f64) -> f64 {
        self.derivative_sum(x, 0)
    }
    fn dv(&self, x: f64) -> f64 {
        self.derivative_sum(x, 1)
    }
    fn d2v(&self, x: f64) -> f64 {
        self.derivative_sum(x, 2)
    }
    fn d3v(&self, x: f64) -> f64 {
        self.derivative_sum(x, 3)
    }
}
