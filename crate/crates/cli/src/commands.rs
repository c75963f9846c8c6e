//! Subcommand pipelines. Each reads the configured input, processes road-days
//! in sorted order and writes its artifacts under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bvtraffic::cluster::{cluster, pairwise_distances, ClusterConfig, ClusterFlag};
use bvtraffic::forecast::{forecast_day, ForecastConfig, PredictionReport, SigmaChoice};
use bvtraffic::noise::{estimate_sigma, EstimateFlag};
use bvtraffic::pgdbv::{denoise, Termination};
use bvtraffic::series::VelocitySeries;
use bvtraffic::synth::{run_table1, SignalKind};
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::ingest::{ingest, Corpus};

/// Outcome counts of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Summary {
    pub processed: usize,
    pub failed: usize,
}

impl Summary {
    fn check(self, what: &str) -> Result<Self> {
        if self.processed == 0 {
            bail!("{what}: nothing processed ({} failures)", self.failed);
        }
        Ok(self)
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(cfg.out_dir.join(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

/// Fixed `sigma` from the config, or the combined estimate.
fn sigma_for(series: &VelocitySeries, cfg: &RunConfig) -> Result<(f64, &'static str)> {
    match cfg.sigma {
        Some(s) => Ok((s, "fixed")),
        None => Ok((
            estimate_sigma(series, &cfg.sigma_grid, &cfg.solver())?.sigma_best,
            "estimated",
        )),
    }
}

fn load(input: &Path, cfg: &RunConfig, min_records: usize) -> Result<Corpus> {
    let corpus = ingest(input, min_records, cfg.min_road_length)?;
    info!(
        "ingested {} road-days, skipped {}",
        corpus.series.len(),
        corpus.skipped.len()
    );
    if corpus.series.is_empty() {
        bail!("no road-day passed the input filters");
    }
    Ok(corpus)
}

#[derive(Serialize)]
struct DenoiseDiagnostics<'a> {
    road_id: &'a str,
    day: &'a str,
    sigma: f64,
    sigma_source: &'static str,
    observed: usize,
    initial_tv: f64,
    final_tv: f64,
    iterations: usize,
    termination: Termination,
    constraint_residual: f64,
}

#[derive(Serialize)]
struct DenoisedRow<'a> {
    road_id: &'a str,
    day: &'a str,
    slice: usize,
    velocity: f64,
    denoised_velocity: f64,
}

pub fn cmd_denoise(input: &Path, cfg: &RunConfig) -> Result<Summary> {
    let corpus = load(input, cfg, cfg.min_records)?;
    let mut rows = csv_writer(&out_path(cfg, "denoised.csv")?)?;
    let mut diags = Vec::new();
    let mut summary = Summary::default();
    for ((road, day), s) in &corpus.series {
        let run = sigma_for(s, cfg).and_then(|(sigma, src)| {
            Ok((sigma, src, denoise(s, &cfg.solver().at_sigma(sigma))?))
        });
        let (sigma, sigma_source, r) = match run {
            Ok(x) => x,
            Err(e) => {
                warn!("{road}/{day}: {e:#}");
                summary.failed += 1;
                continue;
            }
        };
        for (i, (&v, &u)) in s.values().iter().zip(&r.denoised).enumerate() {
            rows.serialize(DenoisedRow {
                road_id: road,
                day,
                slice: i + 1,
                velocity: v,
                denoised_velocity: u,
            })?;
        }
        diags.push(DenoiseDiagnostics {
            road_id: road,
            day,
            sigma,
            sigma_source,
            observed: s.observed_count(),
            initial_tv: s.total_variation(),
            final_tv: r.final_tv,
            iterations: r.iterations,
            termination: r.termination,
            constraint_residual: r.constraint_residual,
        });
        summary.processed += 1;
    }
    rows.flush()?;
    write_json(&out_path(cfg, "denoise_diagnostics.json")?, &diags)?;
    summary.check("denoise")
}

#[derive(Serialize)]
struct EstimateRecord<'a> {
    road_id: &'a str,
    day: &'a str,
    sigma1: f64,
    sigma2: f64,
    sigma_best: f64,
    tv_lower: f64,
    tv_curve: Vec<(f64, f64)>,
    delta_curve: Vec<(f64, f64)>,
    flags: Vec<EstimateFlag>,
}

pub fn cmd_estimate(input: &Path, cfg: &RunConfig) -> Result<Summary> {
    let corpus = load(input, cfg, cfg.min_records)?;
    let mut out = Vec::new();
    let mut summary = Summary::default();
    for ((road, day), s) in &corpus.series {
        match estimate_sigma(s, &cfg.sigma_grid, &cfg.solver()) {
            Ok(e) => {
                out.push(EstimateRecord {
                    road_id: road,
                    day,
                    sigma1: e.sigma1,
                    sigma2: e.sigma2,
                    sigma_best: e.sigma_best,
                    tv_lower: e.tv_lower,
                    tv_curve: e.tv_curve,
                    delta_curve: e.delta_curve,
                    flags: e.flags,
                });
                summary.processed += 1;
            }
            Err(e) => {
                warn!("{road}/{day}: {e:#}");
                summary.failed += 1;
            }
        }
    }
    write_json(&out_path(cfg, "sigma_estimates.json")?, &out)?;
    summary.check("estimate-sigma")
}

#[derive(Serialize)]
struct ClusterSummary {
    day: String,
    denoised: bool,
    roads: usize,
    dc: f64,
    k: usize,
    centers: Vec<String>,
    border_density: Vec<f64>,
    flags: Vec<ClusterFlag>,
}

pub fn cmd_cluster(input: &Path, cfg: &RunConfig) -> Result<Summary> {
    let corpus = load(input, cfg, cfg.min_records_cluster)?;
    let day = match &cfg.cluster_day {
        Some(d) => d.clone(),
        None => corpus
            .series
            .keys()
            .map(|(_, d)| d.clone())
            .min()
            .expect("corpus is non-empty"),
    };
    let mut roads = Vec::new();
    let mut profiles = Vec::new();
    let mut summary = Summary::default();
    for ((road, d), s) in &corpus.series {
        if *d != day {
            continue;
        }
        let profile = if cfg.denoise {
            match sigma_for(s, cfg).and_then(|(sigma, _)| Ok(denoise(s, &cfg.solver().at_sigma(sigma))?)) {
                Ok(r) => r.denoised,
                Err(e) => {
                    warn!("{road}/{day}: {e:#}");
                    summary.failed += 1;
                    continue;
                }
            }
        } else {
            s.values().to_vec()
        };
        roads.push(road.clone());
        profiles.push(profile);
        summary.processed += 1;
    }
    if roads.len() < 3 {
        bail!("cluster: day {day} has {} usable roads, need at least 3", roads.len());
    }
    let d = pairwise_distances(&profiles)?;
    let r = cluster(
        &d,
        &ClusterConfig {
            cutoff: cfg.cutoff(),
            k: cfg.k,
            embed: true,
        },
    )?;

    let mut graph = csv_writer(&out_path(cfg, "decision_graph.csv")?)?;
    graph.write_record(["road_id", "rho", "delta", "gamma"])?;
    let mut assign = csv_writer(&out_path(cfg, "assignments.csv")?)?;
    assign.write_record(["road_id", "cluster", "is_core"])?;
    let mut embed = csv_writer(&out_path(cfg, "embedding.csv")?)?;
    embed.write_record(["road_id", "x", "y"])?;
    let coords = r.embedding.as_deref().unwrap_or_default();
    for (i, road) in roads.iter().enumerate() {
        graph.serialize((road, r.rho[i], r.delta[i], r.gamma[i]))?;
        assign.serialize((road, r.assignment[i], r.is_core[i]))?;
        embed.serialize((road, coords[i][0], coords[i][1]))?;
    }
    graph.flush()?;
    assign.flush()?;
    embed.flush()?;
    write_json(
        &out_path(cfg, "cluster_summary.json")?,
        &ClusterSummary {
            day,
            denoised: cfg.denoise,
            roads: roads.len(),
            dc: r.dc,
            k: r.k(),
            centers: r.centers.iter().map(|&c| roads[c].clone()).collect(),
            border_density: r.border_density.clone(),
            flags: r.flags.clone(),
        },
    )?;
    summary.check("cluster")
}

#[derive(Serialize)]
struct Scores {
    rmae: f64,
    mape: f64,
    mape_retained_count: usize,
    singleton_count: usize,
}

impl From<&PredictionReport> for Scores {
    fn from(r: &PredictionReport) -> Self {
        Self {
            rmae: r.rmae,
            mape: r.mape,
            mape_retained_count: r.mape_retained_count,
            singleton_count: r.singleton_count,
        }
    }
}

#[derive(Serialize)]
struct RoadPrediction {
    road_id: String,
    day: String,
    history_days: Vec<String>,
    history_sigma: Vec<f64>,
    raw: Scores,
    denoised: Option<Scores>,
}

#[derive(Serialize)]
struct PredictionSummary {
    roads: Vec<RoadPrediction>,
    mean_rmae_raw: f64,
    mean_rmae_denoised: Option<f64>,
}

/// Predicts each road's last day from the days before it, with and without denoising.
pub fn predict_corpus(corpus: &Corpus, cfg: &RunConfig) -> Result<(Vec<(PredictionReport, Option<PredictionReport>)>, Summary)> {
    let mut out = Vec::new();
    let mut summary = Summary::default();
    for (road, days) in corpus.by_road() {
        if days.len() < 2 {
            warn!("{road}: needs at least two days to predict, has {}", days.len());
            summary.failed += 1;
            continue;
        }
        let target = days[days.len() - 1];
        let start = (days.len() - 1).saturating_sub(cfg.history_days);
        let history: Vec<VelocitySeries> = days[start..days.len() - 1].iter().map(|s| (*s).clone()).collect();
        let base = ForecastConfig {
            denoise: false,
            sigma: match cfg.sigma {
                Some(s) => SigmaChoice::Fixed(s),
                None => SigmaChoice::Estimated(cfg.sigma_grid.clone()),
            },
            solver: cfg.solver(),
            cutoff: cfg.cutoff(),
            k: cfg.k,
        };
        let run = || -> Result<_> {
            let raw = forecast_day(&history, target, &base)?;
            let den = if cfg.denoise {
                Some(forecast_day(&history, target, &ForecastConfig { denoise: true, ..base.clone() })?)
            } else {
                None
            };
            Ok((raw, den))
        };
        match run() {
            Ok(pair) => {
                out.push(pair);
                summary.processed += 1;
            }
            Err(e) => {
                warn!("{road}: {e:#}");
                summary.failed += 1;
            }
        }
    }
    Ok((out, summary))
}

pub fn cmd_predict(input: &Path, cfg: &RunConfig) -> Result<Summary> {
    let corpus = load(input, cfg, cfg.min_records)?;
    let (reports, summary) = predict_corpus(&corpus, cfg)?;
    let mut rows = csv_writer(&out_path(cfg, "predictions.csv")?)?;
    rows.write_record(["road_id", "day", "slice", "truth", "raw_prediction", "denoised_prediction"])?;
    let mut roads = Vec::new();
    for (raw, den) in &reports {
        for i in 0..raw.slices.len() {
            let d = den.as_ref().map(|d| d.predictions[i].to_string()).unwrap_or_default();
            rows.write_record([
                raw.road_id.clone(),
                raw.day.clone(),
                raw.slices[i].to_string(),
                raw.truth[i].to_string(),
                raw.predictions[i].to_string(),
                d,
            ])?;
        }
        let history_days = corpus
            .by_road()
            .get(raw.road_id.as_str())
            .map(|days| {
                let n = days.len() - 1;
                days[n.saturating_sub(cfg.history_days)..n].iter().map(|s| s.day().to_string()).collect()
            })
            .unwrap_or_default();
        roads.push(RoadPrediction {
            road_id: raw.road_id.clone(),
            day: raw.day.clone(),
            history_days,
            history_sigma: den.as_ref().map(|d| d.history_sigma.clone()).unwrap_or_default(),
            raw: raw.into(),
            denoised: den.as_ref().map(Scores::from),
        });
    }
    rows.flush()?;
    let n = reports.len().max(1) as f64;
    let mean_rmae_raw = reports.iter().map(|(r, _)| r.rmae).sum::<f64>() / n;
    let mean_rmae_denoised = cfg
        .denoise
        .then(|| reports.iter().filter_map(|(_, d)| d.as_ref().map(|d| d.rmae)).sum::<f64>() / n);
    write_json(
        &out_path(cfg, "prediction_summary.json")?,
        &PredictionSummary {
            roads,
            mean_rmae_raw,
            mean_rmae_denoised,
        },
    )?;
    summary.check("predict")
}

pub fn cmd_table1(cfg: &RunConfig) -> Result<Summary> {
    let rows = run_table1(
        cfg.table1_trials,
        &[SignalKind::Sine, SignalKind::Hat],
        &[288, 144, 72],
        cfg.seed,
    )?;
    let mut w = csv_writer(&out_path(cfg, "table1.csv")?)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(Summary {
        processed: rows.len(),
        failed: 0,
    })
}
