//! History-matching prediction of the velocity 15 minutes ahead.
//!
//! Every history day is cut into overlapping windows of four slices, each
//! labelled with the velocity three slices after its end. To predict for the
//! target day at slice `K`, the window `K-3..K` is clustered together with the
//! history windows and the prediction is the Gaussian-weighted average of the
//! labels in its cluster. With denoising enabled the target window is first
//! denoised causally: slices `1..K` plus a forecast boundary value at `K+1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cluster::{
    assign, l2, local_density, pairwise_distances, percentile_cutoff, select_centers, separation,
    Augmented, Cutoff, DistanceMatrix,
};
use crate::error::{check_finite, Error, Result};
use crate::noise::{default_sigma_grid, estimate_sigma};
use crate::pgdbv::{denoise_values, SolverConfig};
use crate::series::{VelocitySeries, SLICES_PER_DAY};

pub const WINDOW: usize = 4;
/// Slices between a window's first slice and its label.
pub const LABEL_OFFSET: usize = 6;
/// Slices between a window's first slice and the boundary label, one slice past the window.
pub const BOUNDARY_OFFSET: usize = 4;
/// Windows per day.
pub const WINDOWS_PER_DAY: usize = SLICES_PER_DAY - LABEL_OFFSET;

/// Labelled windows cut from history days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySet {
    pub windows: Vec<[f64; WINDOW]>,
    /// Velocity at window start + 6.
    pub labels: Vec<f64>,
    /// Velocity at window start + 4.
    pub boundary_labels: Vec<f64>,
    /// `(day, first slice)` with 1-based slices.
    pub provenance: Vec<(String, usize)>,
}

impl HistorySet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

pub fn build_history(days: &[VelocitySeries]) -> Result<HistorySet> {
    if days.is_empty() {
        return Err(Error::Empty("no history days"));
    }
    let cap = days.len() * WINDOWS_PER_DAY;
    let mut set = HistorySet {
        windows: Vec::with_capacity(cap),
        labels: Vec::with_capacity(cap),
        boundary_labels: Vec::with_capacity(cap),
        provenance: Vec::with_capacity(cap),
    };
    for day in days {
        if day.len() != SLICES_PER_DAY {
            return Err(Error::LengthMismatch {
                expected: SLICES_PER_DAY,
                got: day.len(),
            });
        }
        let v = day.values();
        for s in 0..WINDOWS_PER_DAY {
            set.windows.push([v[s], v[s + 1], v[s + 2], v[s + 3]]);
            set.labels.push(v[s + LABEL_OFFSET]);
            set.boundary_labels.push(v[s + BOUNDARY_OFFSET]);
            set.provenance.push((day.day().to_string(), s + 1));
        }
    }
    Ok(set)
}

/// Conditions raised while forecasting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastFlag {
    /// The least-squares design was rank-deficient; the boundary repeats the last value.
    PersistenceBoundary,
    /// The goal formed a cluster of its own; all history windows were averaged.
    SingletonCluster,
    /// Every Gaussian weight underflowed; the nearest window's label was used.
    NearestLabel,
}

/// Linear one-step-ahead predictor on `[1, w1, w2, w3, w4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryModel {
    /// `None` means persistence.
    pub coef: Option<[f64; WINDOW + 1]>,
}

/// Minimum number of training pairs for the boundary predictor.
pub const MIN_BOUNDARY_PAIRS: usize = 8;

impl BoundaryModel {
    pub fn fit(windows: &[[f64; WINDOW]], targets: &[f64]) -> Result<Self> {
        if windows.len() != targets.len() {
            return Err(Error::LengthMismatch {
                expected: windows.len(),
                got: targets.len(),
            });
        }
        if windows.len() < MIN_BOUNDARY_PAIRS {
            return Err(Error::TooShort {
                len: windows.len(),
                min: MIN_BOUNDARY_PAIRS,
            });
        }
        let m = windows.len();
        let x = DMatrix::from_fn(m, WINDOW + 1, |i, j| if j == 0 { 1.0 } else { windows[i][j - 1] });
        let y = DVector::from_column_slice(targets);
        let svd = x.svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * (m.max(WINDOW + 1) as f64) * f64::EPSILON * 1e3;
        if smax == 0.0 || svd.rank(tol) < WINDOW + 1 {
            return Ok(Self { coef: None });
        }
        let beta = svd
            .solve(&y, tol)
            .map_err(|e| Error::Degenerate(format!("least squares failed: {e}")))?;
        let mut coef = [0.0; WINDOW + 1];
        coef.copy_from_slice(beta.as_slice());
        if coef.iter().any(|c| !c.is_finite()) {
            return Ok(Self { coef: None });
        }
        Ok(Self { coef: Some(coef) })
    }

    pub fn from_history(history: &HistorySet) -> Result<Self> {
        Self::fit(&history.windows, &history.boundary_labels)
    }

    pub fn is_persistence(&self) -> bool {
        self.coef.is_none()
    }

    pub fn predict(&self, w: &[f64; WINDOW]) -> f64 {
        match &self.coef {
            Some(c) => c[0] + c[1] * w[0] + c[2] * w[1] + c[3] * w[2] + c[4] * w[3],
            None => w[WINDOW - 1],
        }
    }
}

/// Fits the boundary predictor on `history` and applies it to `goal`.
pub fn boundary_forecast(history: &HistorySet, goal: &[f64; WINDOW]) -> Result<(f64, Vec<ForecastFlag>)> {
    let model = BoundaryModel::from_history(history)?;
    let flags = if model.is_persistence() {
        vec![ForecastFlag::PersistenceBoundary]
    } else {
        Vec::new()
    };
    Ok((model.predict(goal), flags))
}

/// Denoises slices `1..K` with `boundary` appended as slice `K+1` and returns
/// the denoised slices `K-3..K`.
pub fn causal_denoise_window(
    day_so_far: &[f64],
    boundary: f64,
    h: f64,
    solver: &SolverConfig,
) -> Result<[f64; WINDOW]> {
    let k = day_so_far.len();
    if k < WINDOW {
        return Err(Error::TooShort { len: k, min: WINDOW });
    }
    let mut u0 = Vec::with_capacity(k + 1);
    u0.extend_from_slice(day_so_far);
    u0.push(boundary);
    let u = denoise_values(&u0, h, solver)?.denoised;
    let mut w = [0.0; WINDOW];
    w.copy_from_slice(&u[k - WINDOW..k]);
    Ok(w)
}

/// A single prediction with the size of the cluster it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: f64,
    /// History windows that shared the goal's cluster.
    pub cluster_size: usize,
    pub flags: Vec<ForecastFlag>,
}

/// A history set with its distance matrix and base densities for a fixed `d_c`.
#[derive(Debug, Clone)]
pub struct HistoryIndex<'a> {
    history: &'a HistorySet,
    dist: DistanceMatrix,
    dc: f64,
    rho: Vec<f64>,
}

impl<'a> HistoryIndex<'a> {
    pub fn new(history: &'a HistorySet, cutoff: Cutoff) -> Result<Self> {
        let dist = match history.len() {
            0 => return Err(Error::Empty("history set")),
            1 => DistanceMatrix::from_row_major(1, vec![0.0])?,
            _ => pairwise_distances(&history.windows)?,
        };
        let dc = match cutoff {
            Cutoff::Percentile(p) => percentile_cutoff(&dist, p)?,
            Cutoff::Fixed(x) => x,
        };
        let rho = local_density(&dist, dc)?;
        Ok(Self {
            history,
            dist,
            dc,
            rho,
        })
    }

    pub fn dc(&self) -> f64 {
        self.dc
    }

    /// Clusters the history windows together with `goal` and averages the labels
    /// of the windows in the goal's cluster.
    pub fn predict(&self, goal: &[f64; WINDOW], k: Option<usize>) -> Result<Prediction> {
        check_finite(goal)?;
        let n = self.history.len();
        let extra: Vec<f64> = self.history.windows.iter().map(|w| l2(w, goal)).collect();
        let weight = |d: f64| {
            let r = d / self.dc;
            (-r * r).exp()
        };
        // Densities of the augmented set, summed in the same order as a full recount.
        let mut rho = self.rho.clone();
        let mut rho_goal = 0.0;
        for (r, &d) in rho.iter_mut().zip(&extra) {
            let w = weight(d);
            *r += w;
            rho_goal += w;
        }
        rho.push(rho_goal);

        let aug = Augmented {
            base: &self.dist,
            extra: &extra,
        };
        let sep = separation(&aug, &rho)?;
        let sel = select_centers(&rho, &sep.delta, k.map(|k| k.min(n + 1)))?;
        let label = assign(&rho, &sep, &sel.centers)?;
        let mine = label[n];

        let mut flags = Vec::new();
        let members: Vec<usize> = (0..n).filter(|&i| label[i] == mine).collect();
        let pool: Vec<usize> = if members.is_empty() {
            flags.push(ForecastFlag::SingletonCluster);
            (0..n).collect()
        } else {
            members.clone()
        };
        let (mut num, mut den) = (0.0, 0.0);
        for &i in &pool {
            let w = weight(extra[i]);
            num += w * self.history.labels[i];
            den += w;
        }
        let value = if den > 0.0 {
            num / den
        } else {
            flags.push(ForecastFlag::NearestLabel);
            let nearest = pool
                .iter()
                .copied()
                .min_by(|&a, &b| extra[a].total_cmp(&extra[b]).then(a.cmp(&b)))
                .expect("pool is non-empty");
            self.history.labels[nearest]
        };
        Ok(Prediction {
            value,
            cluster_size: members.len(),
            flags,
        })
    }
}

/// One-shot prediction with a given cutoff.
pub fn predict(history: &HistorySet, goal: &[f64; WINDOW], dc: f64, k: Option<usize>) -> Result<Prediction> {
    if history.is_empty() {
        return Err(Error::Empty("history set"));
    }
    HistoryIndex::new(history, Cutoff::Fixed(dc))?.predict(goal, k)
}

fn check_pair(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("error metric input"));
    }
    check_finite(truth)?;
    check_finite(pred)
}

/// `sum |u - u_hat| / sum |u|`.
pub fn rmae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred)?;
    let den: f64 = truth.iter().map(|u| u.abs()).sum();
    if den == 0.0 {
        return Err(Error::Degenerate("RMAE undefined for all-zero truth".into()));
    }
    let num: f64 = truth.iter().zip(pred).map(|(u, p)| (u - p).abs()).sum();
    Ok(num / den)
}

/// Components with true velocity at or below this value are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub value: f64,
    pub retained: usize,
}

/// Mean of `|u - u_hat| / |u|` over components with `u > 1`.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<Mape> {
    check_pair(truth, pred)?;
    let (mut sum, mut retained) = (0.0, 0usize);
    for (u, p) in truth.iter().zip(pred) {
        if *u > MAPE_FLOOR {
            sum += (u - p).abs() / u.abs();
            retained += 1;
        }
    }
    if retained == 0 {
        return Err(Error::Degenerate(format!(
            "MAPE undefined: no true velocity above {MAPE_FLOOR} among {} components",
            truth.len()
        )));
    }
    Ok(Mape {
        value: sum / retained as f64,
        retained,
    })
}

/// Noise strength used when denoising.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaChoice {
    /// The same `sigma` for every full day.
    Fixed(f64),
    /// Per-day combined estimate over the grid.
    Estimated(Vec<f64>),
}

impl Default for SigmaChoice {
    fn default() -> Self {
        SigmaChoice::Estimated(default_sigma_grid())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub denoise: bool,
    pub sigma: SigmaChoice,
    pub solver: SolverConfig,
    pub cutoff: Cutoff,
    pub k: Option<usize>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            denoise: true,
            sigma: SigmaChoice::default(),
            solver: SolverConfig::default(),
            cutoff: Cutoff::default(),
            k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub road_id: String,
    pub day: String,
    pub denoised: bool,
    /// Kernel bandwidth, taken from the raw history windows.
    pub dc: f64,
    /// Full-day `sigma` of each history day; empty without denoising.
    pub history_sigma: Vec<f64>,
    /// 1-based slice each prediction is for.
    pub slices: Vec<usize>,
    pub predictions: Vec<f64>,
    pub truth: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
    pub rmae: f64,
    pub mape: f64,
    pub mape_retained_count: usize,
    pub persistence_boundary: bool,
    pub singleton_count: usize,
}

fn day_sigma(day: &VelocitySeries, cfg: &ForecastConfig) -> Result<f64> {
    match &cfg.sigma {
        SigmaChoice::Fixed(s) => Ok(*s),
        SigmaChoice::Estimated(grid) => Ok(estimate_sigma(day, grid, &cfg.solver)?.sigma_best),
    }
}

/// Predicts every evaluable slice of `target` from `history` days.
///
/// With denoising, each history day is denoised with its own `sigma`, and the
/// target window at `K` is denoised causally with
/// `sigma_K^2 = mean(sigma_day^2) (K + 1) / 288`, the share of a day's noise
/// energy carried by `K + 1` slices.
pub fn forecast_day(
    history_days: &[VelocitySeries],
    target: &VelocitySeries,
    cfg: &ForecastConfig,
) -> Result<PredictionReport> {
    if target.len() != SLICES_PER_DAY {
        return Err(Error::LengthMismatch {
            expected: SLICES_PER_DAY,
            got: target.len(),
        });
    }
    let raw_history = build_history(history_days)?;
    let mut history_sigma = Vec::new();
    let history = if cfg.denoise {
        let mut days = Vec::with_capacity(history_days.len());
        for day in history_days {
            let sigma = day_sigma(day, cfg)?;
            history_sigma.push(sigma);
            let cleaned = denoise_values(day.values(), day.h(), &cfg.solver.at_sigma(sigma))?;
            days.push(day.with_values(cleaned.denoised)?);
        }
        build_history(&days)?
    } else {
        raw_history.clone()
    };
    let boundary = BoundaryModel::from_history(&raw_history)?;
    // The bandwidth comes from the observed windows in both variants, so the two
    // are compared under one kernel; denoised windows bunch up and would
    // otherwise shrink a percentile cutoff several-fold.
    let dc = match cfg.cutoff {
        Cutoff::Percentile(p) => percentile_cutoff(&pairwise_distances(&raw_history.windows)?, p)?,
        Cutoff::Fixed(x) => x,
    };
    let index = HistoryIndex::new(&history, Cutoff::Fixed(dc))?;
    let mean_sq =
        history_sigma.iter().map(|s| s * s).sum::<f64>() / history_sigma.len().max(1) as f64;

    let v = target.values();
    let h = target.h();
    let mut report = PredictionReport {
        road_id: target.road_id().to_string(),
        day: target.day().to_string(),
        denoised: cfg.denoise,
        dc,
        history_sigma,
        slices: Vec::with_capacity(WINDOWS_PER_DAY),
        predictions: Vec::with_capacity(WINDOWS_PER_DAY),
        truth: Vec::with_capacity(WINDOWS_PER_DAY),
        cluster_sizes: Vec::with_capacity(WINDOWS_PER_DAY),
        rmae: 0.0,
        mape: 0.0,
        mape_retained_count: 0,
        persistence_boundary: boundary.is_persistence(),
        singleton_count: 0,
    };
    // K is the number of slices known; the window is K-3..K and the label K+3.
    for k in WINDOW..=(SLICES_PER_DAY - (LABEL_OFFSET - WINDOW + 1)) {
        let raw = [v[k - 4], v[k - 3], v[k - 2], v[k - 1]];
        let goal = if cfg.denoise {
            let sigma_k = (mean_sq * (k + 1) as f64 / SLICES_PER_DAY as f64).sqrt();
            causal_denoise_window(&v[..k], boundary.predict(&raw), h, &cfg.solver.at_sigma(sigma_k))?
        } else {
            raw
        };
        let p = index.predict(&goal, cfg.k)?;
        if p.flags.contains(&ForecastFlag::SingletonCluster) {
            report.singleton_count += 1;
        }
        let target_slice = k + LABEL_OFFSET - WINDOW + 1;
        report.slices.push(target_slice);
        report.predictions.push(p.value);
        report.truth.push(v[target_slice - 1]);
        report.cluster_sizes.push(p.cluster_size);
    }
    report.rmae = rmae(&report.truth, &report.predictions)?;
    let m = mape(&report.truth, &report.predictions)?;
    report.mape = m.value;
    report.mape_retained_count = m.retained;
    Ok(report)
}
