//! Noise-strength estimation.
//!
//! Two estimators of the fidelity parameter `sigma` are provided:
//!
//! * a closed-form multi-resolution estimator built from squared-difference sums
//!   of the series at resolutions `N`, `N/2` and `N/4`. Under independent
//!   zero-mean noise with `E xi^2 = 2 sigma^2 / (N h)` the three sums are, in
//!   expectation, linear in the known abscissae `4 - 4/N`, `1/2 - 1/N` and
//!   `1/16 - 1/(4N)` with slope `sigma^2 / h^2`; the estimator is the
//!   least-squares slope of that line;
//! * a balance heuristic that sweeps `sigma` over a grid, runs the denoiser at
//!   every point and picks the first local minimum of the increments of
//!   `TV(sigma) * sigma^2`.
//!
//! [`combine_estimates`] reconciles the two with the lower bound
//! `TV_l = 5/2 (v_max - v_min)` on the denoised total variation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgdbv::{denoise_values, SolverConfig};
use crate::series::{coarsen_values, VelocitySeries};

/// Squared-difference sums at resolutions `N`, `N/2`, `N/4`, each normalised by `2^j h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiresVariations {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

impl MultiresVariations {
    pub fn as_array(&self) -> [f64; 3] {
        [self.v1, self.v2, self.v3]
    }
}

fn check_multires_len(n: usize) -> Result<()> {
    if n < 8 {
        return Err(Error::TooShort { len: n, min: 8 });
    }
    if n % 4 != 0 {
        return Err(Error::Indivisible { len: n, divisor: 4 });
    }
    Ok(())
}

/// Multi-resolution variations of raw samples with slice duration `h`.
pub fn multires_variations_values(values: &[f64], h: f64) -> Result<MultiresVariations> {
    check_multires_len(values.len())?;
    let mut out = [0.0; 3];
    for (j, slot) in out.iter_mut().enumerate() {
        let v = coarsen_values(values, j as u32)?;
        let ss: f64 = v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        *slot = ss / (f64::from(1u32 << j) * h);
    }
    Ok(MultiresVariations {
        v1: out[0],
        v2: out[1],
        v3: out[2],
    })
}

pub fn multires_variations(series: &VelocitySeries) -> Result<MultiresVariations> {
    multires_variations_values(series.values(), series.h())
}

fn denominator(n: f64) -> f64 {
    3577.0 / 128.0 + 189.0 / (8.0 * n * n) - 819.0 / (16.0 * n)
}

/// Unclamped `sigma_hat^2`; may be negative on nearly clean input.
pub fn sigma_sq_from_variations(vars: &MultiresVariations, n: usize, h: f64) -> f64 {
    let n = n as f64;
    let num = (119.0 / 16.0 - 27.0 / (4.0 * n)) * vars.v1
        + (9.0 / (4.0 * n) - 49.0 / 16.0) * vars.v2
        + (9.0 / (2.0 * n) - 35.0 / 8.0) * vars.v3;
    h * h * num / denominator(n)
}

/// Unclamped multi-resolution estimate of `sigma^2`.
pub fn estimate_sigma_sq_multires(series: &VelocitySeries) -> Result<f64> {
    let vars = multires_variations(series)?;
    Ok(sigma_sq_from_variations(&vars, series.len(), series.h()))
}

/// Multi-resolution estimate of `sigma`, with negative `sigma^2` clamped to zero.
pub fn estimate_sigma_multires(series: &VelocitySeries) -> Result<f64> {
    Ok(estimate_sigma_sq_multires(series)?.max(0.0).sqrt())
}

/// Deterministic bias `E[sigma_hat^2] - sigma^2` contributed by a clean signal.
pub fn multires_bias(clean: &VelocitySeries) -> Result<f64> {
    multires_bias_values(clean.values(), clean.h())
}

pub fn multires_bias_values(clean: &[f64], h: f64) -> Result<f64> {
    let c = multires_variations_values(clean, h)?;
    let n = clean.len() as f64;
    let num = (49.0 / 16.0 - 9.0 / (4.0 * n)) * (c.v1 - c.v2)
        + (35.0 / 8.0 - 9.0 / (2.0 * n)) * (c.v1 - c.v3);
    Ok(h * h * num / denominator(n))
}

/// Expected multi-resolution variations of `clean + noise` for noise of strength `sigma`.
pub fn expected_variations(clean: &[f64], h: f64, sigma: f64) -> Result<MultiresVariations> {
    let c = multires_variations_values(clean, h)?;
    let n = clean.len() as f64;
    let a = sigma * sigma / (h * h);
    Ok(MultiresVariations {
        v1: (4.0 - 4.0 / n) * a + c.v1,
        v2: (0.5 - 1.0 / n) * a + c.v2,
        v3: (1.0 / 16.0 - 1.0 / (4.0 * n)) * a + c.v3,
    })
}

/// `{0, 1, 5, 10, ..., 50}`.
pub fn default_sigma_grid() -> Vec<f64> {
    let mut grid = vec![0.0, 1.0];
    grid.extend((1..=10).map(|k| 5.0 * f64::from(k)));
    grid
}

/// Conditions worth surfacing alongside an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFlag {
    /// The series is constant; no noise to remove.
    NoNoise,
    /// No local minimum in the raw increments; picked from increments per unit `sigma^2`.
    BalanceFallback,
    /// `TV(0)` is already below `TV_l`.
    BelowTvLower,
    /// The smaller estimate over-smoothed and was lowered to meet `TV_l`.
    RaisedToTvLower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceEstimate {
    pub sigma: f64,
    /// `(sigma, TV(sigma))` at every grid point.
    pub tv_curve: Vec<(f64, f64)>,
    /// `(sigma^2, increment of TV * sigma^2)` for grid points after the first.
    pub delta_curve: Vec<(f64, f64)>,
    pub flags: Vec<EstimateFlag>,
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "sigma_grid",
            reason: format!("need at least 3 values, got {}", grid.len()),
        });
    }
    if grid[0] != 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma_grid",
            reason: "must start at 0".into(),
        });
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "sigma_grid",
            reason: "must be finite and strictly increasing".into(),
        });
    }
    Ok(())
}

/// Total variation of the denoised series at one noise strength.
pub fn tv_at(series: &VelocitySeries, sigma: f64, solver: &SolverConfig) -> Result<f64> {
    Ok(denoise_values(series.values(), series.h(), &solver.at_sigma(sigma))?.final_tv)
}

/// First index `k >= 2` (in grid positions) at which the increments reach a local minimum.
fn first_local_minimum(delta: &[f64]) -> Option<usize> {
    // delta[k] belongs to grid position k; delta[0] is unused.
    let last = delta.len() - 1;
    (2..last)
        .find(|&k| delta[k] <= delta[k - 1] && delta[k] <= delta[k + 1])
        .or_else(|| (last >= 2 && delta[last] < delta[last - 1]).then_some(last))
}

/// Balance estimate: sweep `grid`, denoise at every point, and return the first
/// local minimum of `TV(s_k) s_k^2 - TV(s_{k-1}) s_{k-1}^2`.
pub fn estimate_sigma_balance(
    series: &VelocitySeries,
    grid: &[f64],
    solver: &SolverConfig,
) -> Result<BalanceEstimate> {
    validate_grid(grid)?;
    let tv_curve = grid
        .iter()
        .map(|&s| Ok((s, tv_at(series, s, solver)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut delta = vec![0.0; grid.len()];
    for k in 1..grid.len() {
        let (s1, t1) = tv_curve[k];
        let (s0, t0) = tv_curve[k - 1];
        delta[k] = t1 * s1 * s1 - t0 * s0 * s0;
    }
    let delta_curve = (1..grid.len())
        .map(|k| (grid[k] * grid[k], delta[k]))
        .collect();

    if tv_curve.iter().all(|(_, t)| *t == 0.0) {
        return Ok(BalanceEstimate {
            sigma: 0.0,
            tv_curve,
            delta_curve,
            flags: vec![EstimateFlag::NoNoise],
        });
    }

    let mut flags = Vec::new();
    let k = match first_local_minimum(&delta) {
        Some(k) => k,
        None => {
            // Monotone increments: retry on the increments per unit sigma^2,
            // which removes the uneven grid spacing.
            flags.push(EstimateFlag::BalanceFallback);
            let per_unit: Vec<f64> = (0..grid.len())
                .map(|k| {
                    if k == 0 {
                        0.0
                    } else {
                        delta[k] / (grid[k] * grid[k] - grid[k - 1] * grid[k - 1])
                    }
                })
                .collect();
            first_local_minimum(&per_unit).unwrap_or(1)
        }
    };
    Ok(BalanceEstimate {
        sigma: grid[k],
        tv_curve,
        delta_curve,
        flags,
    })
}

/// `5/2 (v_max - v_min)`.
pub fn tv_lower_bound(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    2.5 * (hi - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub sigma: f64,
    pub tv_lower: f64,
    /// Extra solver runs made off the grid, as `(sigma, TV)`.
    pub probes: Vec<(f64, f64)>,
    pub flags: Vec<EstimateFlag>,
}

/// Bisection tolerance in `sigma` when searching for the strength matching `TV_l`.
pub const TV_LOWER_TOLERANCE: f64 = 0.1;

/// Combines the two estimates: the smaller one unless its denoised TV drops
/// below `TV_l`, in which case the largest `sigma` keeping `TV >= TV_l`
/// (to within [`TV_LOWER_TOLERANCE`]).
pub fn combine_estimates(
    sigma1: f64,
    sigma2: f64,
    series: &VelocitySeries,
    tv_curve: &[(f64, f64)],
    solver: &SolverConfig,
) -> Result<Combined> {
    let tv_lower = tv_lower_bound(series.values());
    let mut probes = Vec::new();
    let tv_of = |s: f64, probes: &mut Vec<(f64, f64)>| -> Result<f64> {
        if let Some((_, t)) = tv_curve.iter().find(|(g, _)| *g == s) {
            return Ok(*t);
        }
        let t = tv_at(series, s, solver)?;
        probes.push((s, t));
        Ok(t)
    };

    let tv0 = series.total_variation();
    if tv0 == 0.0 {
        return Ok(Combined {
            sigma: 0.0,
            tv_lower,
            probes,
            flags: vec![EstimateFlag::NoNoise],
        });
    }
    if tv0 < tv_lower {
        return Ok(Combined {
            sigma: 0.0,
            tv_lower,
            probes,
            flags: vec![EstimateFlag::BelowTvLower],
        });
    }

    let s = sigma1.min(sigma2).max(0.0);
    if tv_of(s, &mut probes)? >= tv_lower {
        return Ok(Combined {
            sigma: s,
            tv_lower,
            probes,
            flags: Vec::new(),
        });
    }

    // Bracket with grid points below s, then bisect.
    let below = || tv_curve.iter().filter(|(g, _)| *g < s);
    let lo = below()
        .filter(|(_, t)| *t >= tv_lower)
        .map(|(g, _)| *g)
        .fold(0.0_f64, f64::max);
    let hi = below()
        .filter(|(g, t)| *g > lo && *t < tv_lower)
        .map(|(g, _)| *g)
        .fold(s, f64::min);
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > TV_LOWER_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if tv_of(mid, &mut probes)? >= tv_lower {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Combined {
        sigma: lo,
        tv_lower,
        probes,
        flags: vec![EstimateFlag::RaisedToTvLower],
    })
}

/// Full estimate for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_best: f64,
    pub tv_curve: Vec<(f64, f64)>,
    pub delta_curve: Vec<(f64, f64)>,
    pub tv_lower: f64,
    pub flags: Vec<EstimateFlag>,
}

/// Runs both estimators and combines them.
pub fn estimate_sigma(
    series: &VelocitySeries,
    grid: &[f64],
    solver: &SolverConfig,
) -> Result<SigmaEstimate> {
    let sigma1 = estimate_sigma_multires(series)?;
    let balance = estimate_sigma_balance(series, grid, solver)?;
    let combined = combine_estimates(sigma1, balance.sigma, series, &balance.tv_curve, solver)?;
    let mut flags = balance.flags;
    for f in combined.flags {
        if !flags.contains(&f) {
            flags.push(f);
        }
    }
    Ok(SigmaEstimate {
        sigma1,
        sigma2: balance.sigma,
        sigma_best: combined.sigma,
        tv_curve: balance.tv_curve,
        delta_curve: balance.delta_curve,
        tv_lower: combined.tv_lower,
        flags,
    })
}
