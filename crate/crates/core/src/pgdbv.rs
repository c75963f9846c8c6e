//! Projected-gradient-descent bounded-variation denoiser.
//!
//! Minimises the discrete total variation `sum |u[i+1] - u[i]|` subject to the
//! fidelity constraint `h/2 * sum (u[i] - u0[i])^2 = sigma^2`, starting from the
//! observation itself.
//!
//! The iteration runs in two phases. Starting at `u0` the constraint is slack, so
//! the multiplier is zero and plain TV descent steps are projected onto the
//! ball `h/2 * sum (u - u0)^2 <= sigma^2`. Once an iterate reaches the surface,
//! each iteration refreshes the Lagrange multiplier so the gradient flow is
//! tangent to the constraint, and trial points are scaled radially back onto
//! it. Steps come from backtracking on the Lagrangian with the multiplier
//! frozen; the loop stops once `max|g| / TV(u0)` drops below `rel_tol`.
//!
//! The absolute value in the TV term is regularised as `|x|_eps = |x| + eps`
//! inside the sign ratio `x / |x|_eps`; the matching smooth penalty is
//! `|x| - eps * ln(1 + |x| / eps)`, which is what the line search evaluates.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::series::{tv, VelocitySeries};

/// Backtracking (Armijo) line-search parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    pub initial_step: f64,
    pub shrink: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Noise strength, in velocity * sqrt(time) units.
    pub sigma: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Relative gradient tolerance.
    pub rel_tol: f64,
    pub line_search: LineSearch,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            epsilon: 1e-3,
            max_iters: 5000,
            rel_tol: 1e-4,
            line_search: LineSearch::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    /// The same settings with a different `sigma`.
    pub fn at_sigma(&self, sigma: f64) -> Self {
        Self { sigma, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", "must be finite and >= 0");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be > 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be >= 1");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol", "must be > 0");
        }
        let ls = &self.line_search;
        if !(ls.initial_step > 0.0) {
            return bad("line_search.initial_step", "must be > 0");
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return bad("line_search.shrink", "must lie in (0, 1)");
        }
        if !(ls.armijo > 0.0 && ls.armijo < 1.0) {
            return bad("line_search.armijo", "must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Why the solver returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Constant input or zero noise strength: the input is returned as is.
    Trivial,
    /// Relative gradient tolerance reached.
    Gradient,
    /// Line search found no decrease; the last iterate is returned.
    Stalled,
    /// Iteration budget exhausted.
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResult {
    pub denoised: Vec<f64>,
    pub final_tv: f64,
    pub iterations: usize,
    pub lambda_trace: Vec<f64>,
    /// `| h/2 * sum (u - u0)^2 - sigma^2 |`.
    pub constraint_residual: f64,
    pub termination: Termination,
}

impl DenoiseResult {
    /// True unless the iteration budget ran out.
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIters
    }

    pub fn stalled(&self) -> bool {
        self.termination == Termination::Stalled
    }
}

#[inline]
fn sign_ratio(d: f64, eps: f64) -> f64 {
    d / (d.abs() + eps)
}

/// Smooth penalty whose derivative is `x / (|x| + eps)`.
#[inline]
fn smooth_abs(x: f64, eps: f64) -> f64 {
    let a = x.abs();
    a - eps * (a / eps).ln_1p()
}

fn check_pair(u: &[f64], u0: &[f64]) -> Result<()> {
    if u.len() != u0.len() {
        return Err(Error::LengthMismatch {
            expected: u0.len(),
            got: u.len(),
        });
    }
    if u.len() < 2 {
        return Err(Error::TooShort {
            len: u.len(),
            min: 2,
        });
    }
    Ok(())
}

/// Lagrange multiplier that keeps the fidelity term stationary along the flow:
/// `1/(2 sigma^2) * sum_i s_i * (du0_i - du_i)` with `s_i = du_i / (|du_i| + eps)`.
pub fn compute_lambda(u: &[f64], u0: &[f64], sigma: f64, epsilon: f64) -> Result<f64> {
    check_pair(u, u0)?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: "multiplier needs sigma > 0".into(),
        });
    }
    Ok(lambda_raw(u, u0, sigma, epsilon))
}

fn lambda_raw(u: &[f64], u0: &[f64], sigma: f64, eps: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..u.len() - 1 {
        let du = u[i + 1] - u[i];
        let du0 = u0[i + 1] - u0[i];
        acc += sign_ratio(du, eps) * (du0 - du);
    }
    acc / (2.0 * sigma * sigma)
}

/// Descent direction `g_i = (s_{i-1} - s_i) / h + lambda (u_i - u0_i)` with
/// zero-flux ends `s_0 = s_N = 0`.
pub fn compute_gradient(
    u: &[f64],
    u0: &[f64],
    lambda: f64,
    h: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    check_pair(u, u0)?;
    let mut g = vec![0.0; u.len()];
    gradient_into(u, u0, lambda, h, epsilon, &mut g);
    Ok(g)
}

fn gradient_into(u: &[f64], u0: &[f64], lambda: f64, h: f64, eps: f64, g: &mut [f64]) {
    let n = u.len();
    let mut prev = 0.0;
    for i in 0..n {
        let cur = if i + 1 < n {
            sign_ratio(u[i + 1] - u[i], eps)
        } else {
            0.0
        };
        g[i] = (prev - cur) / h + lambda * (u[i] - u0[i]);
        prev = cur;
    }
}

/// Smoothed total variation `sum phi_eps(u[i+1] - u[i])`.
pub fn smoothed_tv(u: &[f64], epsilon: f64) -> f64 {
    u.windows(2)
        .map(|w| smooth_abs(w[1] - w[0], epsilon))
        .sum()
}

/// Lagrangian with the multiplier frozen: `TV_eps(u) + lambda h / 2 * sum (u - u0)^2`.
///
/// Its gradient is `h` times [`compute_gradient`].
pub fn merit(u: &[f64], u0: &[f64], lambda: f64, h: f64, epsilon: f64) -> f64 {
    let fid: f64 = u.iter().zip(u0).map(|(a, b)| (a - b) * (a - b)).sum();
    smoothed_tv(u, epsilon) + 0.5 * lambda * h * fid
}

/// `h/2 * sum (u - u0)^2`.
pub fn fidelity(u: &[f64], u0: &[f64], h: f64) -> f64 {
    0.5 * h * u.iter().zip(u0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Maps `u` back onto the fidelity constraint by scaling `u - u0` about `u0`:
/// onto the surface when `onto_surface`, otherwise only when outside the ball.
fn project(u: &mut [f64], u0: &[f64], h: f64, target: f64, onto_surface: bool) {
    let f = fidelity(u, u0, h);
    if f > 0.0 && (onto_surface || f > target) {
        let scale = (target / f).sqrt();
        for (ui, oi) in u.iter_mut().zip(u0) {
            *ui = oi + (*ui - oi) * scale;
        }
    }
}

/// Denoises a velocity series.
pub fn denoise(series: &VelocitySeries, config: &SolverConfig) -> Result<DenoiseResult> {
    denoise_values(series.values(), series.h(), config)
}

/// Denoises raw samples on a grid of spacing `h`.
pub fn denoise_values(u0: &[f64], h: f64, config: &SolverConfig) -> Result<DenoiseResult> {
    config.validate()?;
    if u0.len() < 2 {
        return Err(Error::TooShort {
            len: u0.len(),
            min: 2,
        });
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("slice duration must be positive, got {h}"),
        });
    }
    check_finite(u0)?;

    let tv0 = tv(u0);
    let sigma = config.sigma;
    if tv0 == 0.0 || sigma == 0.0 {
        return Ok(DenoiseResult {
            denoised: u0.to_vec(),
            final_tv: tv0,
            iterations: 0,
            lambda_trace: Vec::new(),
            constraint_residual: sigma * sigma,
            termination: Termination::Trivial,
        });
    }

    let eps = config.epsilon;
    let ls = config.line_search;
    let n = u0.len();
    let target = sigma * sigma;
    let mut u = u0.to_vec();
    let mut g = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut lambda_trace = Vec::new();
    let mut termination = Termination::MaxIters;
    // Until the iterate first reaches the constraint surface the multiplier is
    // inactive and steps are projected onto the ball; afterwards the flow keeps
    // the fidelity term on the surface.
    let mut on_surface = false;
    let mut last_step = ls.initial_step;

    for iteration in 0..config.max_iters {
        let lambda = if on_surface {
            lambda_raw(&u, u0, sigma, eps)
        } else {
            0.0
        };
        gradient_into(&u, u0, lambda, h, eps, &mut g);
        let g_inf = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !(lambda.is_finite() && g_inf.is_finite()) {
            return Err(Error::Diverged { iteration });
        }

        let m0 = merit(&u, u0, lambda, h, eps);
        let mut step = (last_step / ls.shrink).min(ls.initial_step);
        let mut accepted = None;
        for _ in 0..=ls.max_halvings {
            for ((t, ui), gi) in trial.iter_mut().zip(&u).zip(&g) {
                *t = ui - step * gi;
            }
            project(&mut trial, u0, h, target, on_surface);
            // grad M = h * g; sufficient decrease measured along the projected step.
            let descent: f64 = h * g
                .iter()
                .zip(&u)
                .zip(&trial)
                .map(|((gi, ui), ti)| gi * (ui - ti))
                .sum::<f64>();
            let m1 = merit(&trial, u0, lambda, h, eps);
            if m1.is_finite() && descent > 0.0 && m1 <= m0 - ls.armijo * descent {
                accepted = Some(m1);
                break;
            }
            step *= ls.shrink;
        }
        let Some(m1) = accepted else {
            termination = Termination::Stalled;
            break;
        };
        debug_assert!(m1 <= m0);

        std::mem::swap(&mut u, &mut trial);
        last_step = step;
        lambda_trace.push(lambda);
        if !on_surface && fidelity(&u, u0, h) >= target * (1.0 - 1e-9) {
            on_surface = true;
        }
        if g_inf / tv0 <= config.rel_tol {
            termination = Termination::Gradient;
            break;
        }
    }

    let final_tv = tv(&u);
    if !final_tv.is_finite() {
        return Err(Error::Diverged {
            iteration: lambda_trace.len(),
        });
    }
    Ok(DenoiseResult {
        constraint_residual: (fidelity(&u, u0, h) - sigma * sigma).abs(),
        iterations: lambda_trace.len(),
        denoised: u,
        final_tv,
        lambda_trace,
        termination,
    })
}
