//! Run configuration and its flat `key = value` file form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bvtraffic::cluster::Cutoff;
use bvtraffic::noise::default_sigma_grid;
use bvtraffic::pgdbv::SolverConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Fixed noise strength; estimated per road-day when absent.
    pub sigma: Option<f64>,
    pub sigma_grid: Vec<f64>,
    pub dc_percentile: f64,
    pub k: Option<usize>,
    /// Minimum observed records per road-day for denoising and prediction.
    pub min_records: usize,
    /// Minimum observed records per road-day for clustering.
    pub min_records_cluster: usize,
    /// Minimum road length in metres, applied when the input carries a `road_length` column.
    pub min_road_length: f64,
    /// History days used ahead of each road's last day when predicting.
    pub history_days: usize,
    /// Day whose profiles are clustered; the earliest day by default.
    pub cluster_day: Option<String>,
    pub denoise: bool,
    pub table1_trials: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            epsilon: solver.epsilon,
            max_iters: solver.max_iters,
            rel_tol: solver.rel_tol,
            sigma: None,
            sigma_grid: default_sigma_grid(),
            dc_percentile: 2.0,
            k: None,
            min_records: 150,
            min_records_cluster: 120,
            min_road_length: 100.0,
            history_days: 7,
            cluster_day: None,
            denoise: true,
            table1_trials: 100,
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(v: &str) -> std::result::Result<Option<T>, T::Err> {
    if v.is_empty() {
        Ok(None)
    } else {
        v.parse().map(Some)
    }
}

/// Parses `0,1,5,10` into a list.
pub fn parse_grid(v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad grid value `{s}`"))
        })
        .collect()
}

impl RunConfig {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            sigma: 0.0,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            ..SolverConfig::default()
        }
    }

    pub fn cutoff(&self) -> Cutoff {
        Cutoff::Percentile(self.dc_percentile)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver().validate()?;
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                bail!("sigma must be finite and >= 0, got {s}");
            }
        }
        if !(self.dc_percentile > 0.0 && self.dc_percentile <= 100.0) {
            bail!("dc_percentile must lie in (0, 100], got {}", self.dc_percentile);
        }
        if self.k == Some(0) {
            bail!("k must be positive");
        }
        if self.min_records == 0 || self.min_records_cluster == 0 {
            bail!("record thresholds must be positive");
        }
        if !(self.min_road_length > 0.0) {
            bail!("min_road_length must be positive");
        }
        if self.history_days == 0 || self.table1_trials == 0 {
            bail!("history_days and table1_trials must be positive");
        }
        Ok(())
    }

    /// Flat `key = value` form; `parse` reads it back unchanged.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("epsilon", self.epsilon.to_string());
        put("max_iters", self.max_iters.to_string());
        put("rel_tol", self.rel_tol.to_string());
        put("sigma", opt(&self.sigma));
        put("sigma_grid", join(&self.sigma_grid));
        put("dc_percentile", self.dc_percentile.to_string());
        put("k", opt(&self.k));
        put("min_records", self.min_records.to_string());
        put("min_records_cluster", self.min_records_cluster.to_string());
        put("min_road_length", self.min_road_length.to_string());
        put("history_days", self.history_days.to_string());
        put("cluster_day", opt(&self.cluster_day));
        put("denoise", self.denoise.to_string());
        put("table1_trials", self.table1_trials.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("seed", self.seed.to_string());
        s
    }

    /// Reads `key = value` lines over the defaults. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            let (k, v) = (k.trim(), v.trim());
            c.set(k, v).with_context(|| format!("line {}: key `{k}`", n + 1))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "epsilon" => self.epsilon = v.parse()?,
            "max_iters" => self.max_iters = v.parse()?,
            "rel_tol" => self.rel_tol = v.parse()?,
            "sigma" => self.sigma = parse_opt(v)?,
            "sigma_grid" => self.sigma_grid = parse_grid(v)?,
            "dc_percentile" => self.dc_percentile = v.parse()?,
            "k" => self.k = parse_opt(v)?,
            "min_records" => self.min_records = v.parse()?,
            "min_records_cluster" => self.min_records_cluster = v.parse()?,
            "min_road_length" => self.min_road_length = v.parse()?,
            "history_days" => self.history_days = v.parse()?,
            "cluster_day" => self.cluster_day = parse_opt(v)?,
            "denoise" => self.denoise = v.parse()?,
            "table1_trials" => self.table1_trials = v.parse()?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = v.parse()?,
            other => bail!("unknown key `{other}`"),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }
}
