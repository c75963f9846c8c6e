//! Synthetic signals, seeded noise and the noise-estimator benchmark.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{estimate_sigma_sq_multires, multires_bias_values};
use crate::pgdbv::fidelity;
use crate::series::{VelocitySeries, DEFAULT_SLICE_MINUTES, SLICES_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// `sin(pi x)` on `[-1, 1]`, `h = 2 / N`.
    Sine,
    /// `max(1 - |x|, 0)` on `[-1, 1]`, `h = 2 / N`.
    Hat,
    /// 10 km/h for the first half, 40 km/h for the second, `h = 5`.
    Step,
    /// A weekday velocity profile with morning and evening congestion, `h = 5`.
    TwoRegimeDay,
}

impl SignalKind {
    pub fn name(&self) -> &'static str {
        match self {
            SignalKind::Sine => "sine",
            SignalKind::Hat => "hat",
            SignalKind::Step => "step",
            SignalKind::TwoRegimeDay => "two_regime_day",
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" | "sin" => Ok(SignalKind::Sine),
            "hat" => Ok(SignalKind::Hat),
            "step" => Ok(SignalKind::Step),
            "two_regime_day" => Ok(SignalKind::TwoRegimeDay),
            other => Err(Error::InvalidParameter {
                name: "kind",
                reason: format!("unknown signal kind `{other}`"),
            }),
        }
    }
}

/// Where each interval of `[-1, 1]` is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `x_i = -1 + (i - 1) h`, the left end of interval `i`.
    #[default]
    LeftEndpoint,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SignalKind,
    pub n: usize,
    /// Per-sample standard deviation of the additive Gaussian noise.
    pub noise_sd: f64,
    pub seed: u64,
    pub sampling: Sampling,
}

impl SyntheticSpec {
    pub fn new(kind: SignalKind, n: usize, noise_sd: f64, seed: u64) -> Self {
        Self {
            kind,
            n,
            noise_sd,
            seed,
            sampling: Sampling::default(),
        }
    }

    /// Slice duration implied by the kind.
    pub fn h(&self) -> f64 {
        match self.kind {
            SignalKind::Sine | SignalKind::Hat => 2.0 / self.n as f64,
            SignalKind::Step | SignalKind::TwoRegimeDay => DEFAULT_SLICE_MINUTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub clean: VelocitySeries,
    pub noisy: VelocitySeries,
    /// `sqrt(h/2 * sum (noisy - clean)^2)`.
    pub realized_sigma: f64,
}

/// Mixes a base seed with stream coordinates into an independent seed.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    // splitmix64 finaliser over the running state
    let mut z = base;
    for &c in coords {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(c);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Clean samples of a kind on `n` slices.
pub fn clean_signal(kind: SignalKind, n: usize, sampling: Sampling) -> Vec<f64> {
    let h = 2.0 / n as f64;
    let x = |i: usize| match sampling {
        Sampling::LeftEndpoint => -1.0 + i as f64 * h,
        Sampling::Midpoint => -1.0 + (i as f64 + 0.5) * h,
    };
    match kind {
        SignalKind::Sine => (0..n).map(|i| (std::f64::consts::PI * x(i)).sin()).collect(),
        SignalKind::Hat => (0..n).map(|i| (1.0 - x(i).abs()).max(0.0)).collect(),
        SignalKind::Step => (0..n).map(|i| if i < n / 2 { 10.0 } else { 40.0 }).collect(),
        SignalKind::TwoRegimeDay => DayProfile::default().render(n),
    }
}

/// Parameters of a weekday profile: free-flow level with a diurnal swell and two
/// congestion plateaus entered and left by sharp jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    pub free_flow: f64,
    /// Amplitude of the slow daily swell.
    pub swell: f64,
    pub morning: (usize, usize, f64),
    pub evening: (usize, usize, f64),
}

impl Default for DayProfile {
    fn default() -> Self {
        Self {
            free_flow: 55.0,
            swell: 4.0,
            morning: (84, 114, 22.0),
            evening: (204, 234, 26.0),
        }
    }
}

impl DayProfile {
    /// Samples the profile on `n` slices spanning one day.
    pub fn render(&self, n: usize) -> Vec<f64> {
        let scale = n as f64 / SLICES_PER_DAY as f64;
        let in_span = |i: f64, (a, b, _): (usize, usize, f64)| {
            i >= a as f64 * scale && i < b as f64 * scale
        };
        (0..n)
            .map(|i| {
                let fi = i as f64;
                let phase = 2.0 * std::f64::consts::PI * fi / n as f64;
                let base = self.free_flow - self.swell * phase.cos();
                if in_span(fi, self.morning) {
                    self.morning.2
                } else if in_span(fi, self.evening) {
                    self.evening.2
                } else {
                    base
                }
            })
            .collect()
    }

    /// Day-to-day perturbation of onsets, durations and depths.
    pub fn perturbed(&self, rng: &mut ChaCha8Rng) -> Self {
        let shift = Uniform::new_inclusive(-4i64, 4).expect("valid range");
        let depth = Uniform::new(-3.0, 3.0).expect("valid range");
        let jitter = |(a, b, v): (usize, usize, f64), rng: &mut ChaCha8Rng| {
            let a = (a as i64 + shift.sample(rng)).max(1) as usize;
            let b = (b as i64 + shift.sample(rng)).max(a as i64 + 4) as usize;
            (a, b, (v + depth.sample(rng)).max(1.0))
        };
        let morning = jitter(self.morning, rng);
        let evening = jitter(self.evening, rng);
        Self {
            free_flow: self.free_flow + depth.sample(rng),
            swell: self.swell,
            morning,
            evening,
        }
    }
}

fn add_noise(clean: &[f64], sd: f64, rng: &mut ChaCha8Rng, non_negative: bool) -> Vec<f64> {
    if sd == 0.0 {
        return clean.to_vec();
    }
    let normal = Normal::new(0.0, sd).expect("sd is finite and positive");
    clean
        .iter()
        .map(|c| {
            let v = c + normal.sample(rng);
            if non_negative {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect()
}

/// Draws a clean/noisy pair.
pub fn generate(spec: &SyntheticSpec) -> Result<Synthetic> {
    if spec.n % 4 != 0 || spec.n < 8 {
        return Err(Error::Indivisible {
            len: spec.n,
            divisor: 4,
        });
    }
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "noise_sd",
            reason: format!("must be finite and >= 0, got {}", spec.noise_sd),
        });
    }
    let h = spec.h();
    let clean = clean_signal(spec.kind, spec.n, spec.sampling);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let velocity = matches!(spec.kind, SignalKind::Step | SignalKind::TwoRegimeDay);
    let noisy = add_noise(&clean, spec.noise_sd, &mut rng, velocity);
    let realized_sigma = fidelity(&noisy, &clean, h).sqrt();
    let (clean, noisy) = if velocity {
        (
            VelocitySeries::new("synthetic", "clean", h, clean)?,
            VelocitySeries::new("synthetic", "noisy", h, noisy)?,
        )
    } else {
        (
            VelocitySeries::signed("synthetic", "clean", h, clean)?,
            VelocitySeries::signed("synthetic", "noisy", h, noisy)?,
        )
    };
    Ok(Synthetic {
        clean,
        noisy,
        realized_sigma,
    })
}

/// One road-day of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusDay {
    pub clean: VelocitySeries,
    pub noisy: VelocitySeries,
}

/// `roads x days` noisy weekday profiles. Each road has its own free-flow level
/// and congestion depths; each day perturbs them.
pub fn two_regime_corpus(roads: usize, days: usize, noise_sd: f64, seed: u64) -> Result<Vec<Vec<CorpusDay>>> {
    let mut out = Vec::with_capacity(roads);
    for r in 0..roads {
        let mut road_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
        let level = Uniform::new(-12.0, 12.0).expect("valid range").sample(&mut road_rng);
        let base = DayProfile {
            free_flow: 55.0 + level,
            morning: (84, 114, 22.0 + 0.5 * level),
            evening: (204, 234, 26.0 + 0.5 * level),
            ..DayProfile::default()
        };
        let road_id = format!("road{:02}", r + 1);
        let mut road = Vec::with_capacity(days);
        for d in 0..days {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64, d as u64 + 1]));
            let profile = base.perturbed(&mut rng);
            let clean = profile.render(SLICES_PER_DAY);
            let noisy = add_noise(&clean, noise_sd, &mut rng, true);
            let day = format!("day{}", d + 1);
            road.push(CorpusDay {
                clean: VelocitySeries::new(road_id.clone(), day.clone(), DEFAULT_SLICE_MINUTES, clean)?,
                noisy: VelocitySeries::new(road_id.clone(), day, DEFAULT_SLICE_MINUTES, noisy)?,
            });
        }
        out.push(road);
    }
    Ok(out)
}

/// Per-sample noise level used for a kind in the estimator benchmark; the
/// realised strengths then fall in the 0.40-0.49 range of the reference runs.
pub fn benchmark_noise_sd(kind: SignalKind) -> f64 {
    match kind {
        SignalKind::Hat => 0.41,
        _ => 0.46,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub kind: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub bias: f64,
    /// Mean of `sigma_hat^2 / sigma^2 - 1` over trials.
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub trials: usize,
}

/// Noise-estimator benchmark: deterministic bias and the spread of
/// `sigma_hat^2 / sigma^2 - 1` over seeded trials, for every kind and length.
pub fn run_table1(
    trials: usize,
    kinds: &[SignalKind],
    n_list: &[usize],
    seed: u64,
) -> Result<Vec<Table1Row>> {
    if trials == 0 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: "need at least one trial".into(),
        });
    }
    let mut rows = Vec::new();
    for (ki, &kind) in kinds.iter().enumerate() {
        for &n in n_list {
            let h = 2.0 / n as f64;
            let clean = clean_signal(kind, n, Sampling::LeftEndpoint);
            let bias = multires_bias_values(&clean, h)?;
            let mut ratios = Vec::with_capacity(trials);
            for t in 0..trials {
                let spec = SyntheticSpec::new(
                    kind,
                    n,
                    benchmark_noise_sd(kind),
                    derive_seed(seed, &[ki as u64, n as u64, t as u64]),
                );
                let s = generate(&spec)?;
                let est = estimate_sigma_sq_multires(&s.noisy)?;
                ratios.push(est / (s.realized_sigma * s.realized_sigma) - 1.0);
            }
            let mean = ratios.iter().sum::<f64>() / trials as f64;
            let std = if trials > 1 {
                (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
            } else {
                0.0
            };
            rows.push(Table1Row {
                kind: kind.name().to_string(),
                n,
                bias,
                mean_ratio: mean,
                std_ratio: std,
                trials,
            });
        }
    }
    Ok(rows)
}
