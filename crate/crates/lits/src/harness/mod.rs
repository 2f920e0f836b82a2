//! Run configuration, parameter sweeps and CSV emission.

pub mod cli;
pub mod verify;

use crate::channel::RadioParams;
use crate::error::{Error, Result};
use crate::orchestrator::{run_scheme, Instance, LitsParams, Metrics, Scheme};
use crate::scenario::{generate_scenario, ScenarioConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

/// Environment variable with the worker count for sweeps.
pub const WORKERS_ENV: &str = "LITS_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 5 + 5 small cells, 4 satellites, 40 users.
    #[default]
    Desk,
    /// 25 + 25 small cells, 8 satellites, 200 users.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Axis {
    /// Users per km² of the macro disc.
    UserDensity,
    NSatellites,
    ProjectedArea,
    /// Data generated per user, bytes/s.
    TrafficLoad,
    NR,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::UserDensity => "user_density",
            Axis::NSatellites => "n_satellites",
            Axis::ProjectedArea => "projected_area",
            Axis::TrafficLoad => "traffic_load",
            Axis::NR => "n_r",
        }
    }

    /// Applies `value` to a copy of `base`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} needs a non-negative integer, got {v}", self.name())))
            }
        };
        let mut c = base.clone();
        match self {
            Axis::UserDensity => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::Config(format!("user density {value} must be >= 0")));
                }
                let area_km2 = std::f64::consts::PI * (c.macro_radius_m / 1e3).powi(2);
                c.n_users = (value * area_km2).round() as usize;
            }
            Axis::NSatellites => c.n_satellites = count(value)?,
            Axis::ProjectedArea => c.projected_area_km2 = value,
            Axis::TrafficLoad => c.data_generation_bytes_per_s = value,
            Axis::NR => c.n_r = count(value)?,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub radio: RadioParams,
    pub lits: LitsParams,
    pub seeds: Vec<u64>,
    /// Schemes evaluated by `baseline` (and by `sweep` when several are
    /// listed).
    pub schemes: Vec<Scheme>,
    pub sweep: Option<SweepSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        let scenario = match p {
            Profile::Full => ScenarioConfig::default(),
            Profile::Desk => ScenarioConfig { n_tsc: 5, n_lsc: 5, n_users: 40, n_satellites: 4, ..Default::default() },
        };
        Self {
            scenario,
            radio: RadioParams::default(),
            lits: LitsParams::default(),
            seeds: (0..20).collect(),
            schemes: vec![Scheme::Lits],
            sweep: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.radio.validate()?;
        self.lits.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if let Some(s) = &self.sweep {
            for &v in &s.values {
                s.axis.apply(&self.scenario, v)?;
            }
        }
        Ok(())
    }

    /// Parses `text` over the given profile: keys present in `text`
    /// override the profile, unknown keys are rejected with their position.
    pub fn from_json(text: &str, base: Profile) -> Result<Self> {
        let diag = |e: serde_json::Error| Error::Config(format!("line {} column {}: {e}", e.line(), e.column()));
        // Schema check against the file itself, for positions.
        serde_json::from_str::<RunConfig>(text).map_err(diag)?;
        let overlay: Value = serde_json::from_str(text).map_err(diag)?;
        let mut merged = serde_json::to_value(Self::profile(base)).expect("config serializes");
        merge(&mut merged, overlay);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// One CSV row: a scheme at one axis point and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub axis_value: String,
    pub seed: u64,
    pub metrics: Metrics,
}

pub const ROW_HEADER: [&str; 9] = [
    "axis_value",
    "seed",
    "sum_rate_mbps",
    "accessed_users",
    "total_backhaul_mbps",
    "lsc_user_fraction",
    "mean_tsc_delay_ms",
    "mean_lsc_delay_ms",
    "iterations",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    fn record(&self) -> [String; 9] {
        let m = &self.metrics;
        [
            self.axis_value.clone(),
            self.seed.to_string(),
            m.sum_rate_mbps.to_string(),
            m.accessed_users.to_string(),
            m.total_backhaul_mbps.to_string(),
            m.lsc_user_fraction().to_string(),
            opt(m.mean_tsc_delay_ms),
            opt(m.mean_lsc_delay_ms),
            m.iterations.to_string(),
        ]
    }
}

/// Mean and sample standard deviation of one metric at one axis point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Rows that contributed (delays may be missing).
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

pub const METRIC_NAMES: [&str; 7] = [
    "sum_rate_mbps",
    "accessed_users",
    "total_backhaul_mbps",
    "lsc_user_fraction",
    "mean_tsc_delay_ms",
    "mean_lsc_delay_ms",
    "iterations",
];

fn metric_values(m: &Metrics) -> [Option<f64>; 7] {
    [
        Some(m.sum_rate_mbps),
        Some(m.accessed_users as f64),
        Some(m.total_backhaul_mbps),
        Some(m.lsc_user_fraction()),
        m.mean_tsc_delay_ms,
        m.mean_lsc_delay_ms,
        Some(m.iterations as f64),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub axis_value: String,
    pub seeds: usize,
    pub stats: [Stat; 7],
}

impl AggregateRow {
    pub fn stat(&self, metric: &str) -> Option<Stat> {
        METRIC_NAMES.iter().position(|m| *m == metric).map(|i| self.stats[i])
    }
}

/// Groups rows by axis value in order of first appearance.
pub fn aggregate(rows: &[Row]) -> Vec<AggregateRow> {
    let mut keys: Vec<&str> = Vec::new();
    for r in rows {
        if !keys.contains(&r.axis_value.as_str()) {
            keys.push(&r.axis_value);
        }
    }
    keys.into_iter()
        .map(|k| {
            let group: Vec<&Row> = rows.iter().filter(|r| r.axis_value == k).collect();
            let stats = std::array::from_fn(|i| {
                let xs: Vec<f64> = group.iter().filter_map(|r| metric_values(&r.metrics)[i]).collect();
                Stat::of(&xs)
            });
            AggregateRow { axis_value: k.to_string(), seeds: group.len(), stats }
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_rows<W: std::io::Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(ROW_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.record()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn aggregate_header() -> Vec<String> {
    let mut h = vec!["axis_value".to_string(), "seeds".to_string()];
    for m in METRIC_NAMES {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h
}

pub fn write_aggregate<W: std::io::Write>(agg: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(aggregate_header()).map_err(csv_err)?;
    for a in agg {
        let mut rec = vec![a.axis_value.clone(), a.seeds.to_string()];
        for s in &a.stats {
            let cell = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
            rec.push(cell(s.mean));
            rec.push(cell(s.std));
        }
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>_aggregate.csv` under `dir`.
pub fn emit_results(rows: &[Row], dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(rows, std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
    write_aggregate(&aggregate(rows), std::fs::File::create(dir.join(format!("{stem}_aggregate.csv")))?)
}

/// Replay record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub config: RunConfig,
}

pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let m = Manifest { command: command.into(), config_sha256: cfg.hash(), seeds: cfg.seeds.clone(), config: cfg.clone() };
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

/// Builds the instance of one seed.
pub fn instance(scenario: &ScenarioConfig, cfg: &RunConfig, seed: u64) -> Result<Instance> {
    let s = generate_scenario(scenario, seed)?;
    Instance::new(s, cfg.radio.clone(), &cfg.lits.backhaul, seed)
}

pub fn run_point(scenario: &ScenarioConfig, cfg: &RunConfig, scheme: Scheme, seed: u64) -> Result<Metrics> {
    let inst = instance(scenario, cfg, seed)?;
    Ok(run_scheme(&inst, scheme, &cfg.lits)?.metrics)
}

fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("{WORKERS_ENV}={v} is not a count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// Runs `jobs` in the worker pool; results keep the job order.
fn run_jobs<T: Send, J: Sync, F: Fn(&J) -> Result<T> + Sync>(jobs: &[J], f: F) -> Result<Vec<T>> {
    pool()?.install(|| jobs.par_iter().map(&f).collect())
}

fn format_value(v: f64) -> String {
    v.to_string()
}

/// One row per (axis value, seed) for `scheme`.
pub fn sweep(cfg: &RunConfig, axis: Axis, values: &[f64], scheme: Scheme) -> Result<Vec<Row>> {
    let points: Vec<(f64, ScenarioConfig)> =
        values.iter().map(|&v| axis.apply(&cfg.scenario, v).map(|c| (v, c))).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> =
        (0..points.len()).flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s))).collect();
    run_jobs(&jobs, |&(i, seed)| {
        let (v, ref sc) = points[i];
        Ok(Row { axis_value: format_value(v), seed, metrics: run_point(sc, cfg, scheme, seed)? })
    })
}

/// One row per (scheme, seed) on shared instances; `axis_value` holds the
/// scheme name.
pub fn baseline(cfg: &RunConfig, schemes: &[Scheme]) -> Result<Vec<Row>> {
    let jobs: Vec<(Scheme, u64)> =
        schemes.iter().flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s))).collect();
    run_jobs(&jobs, |&(k, seed)| {
        Ok(Row { axis_value: k.name().to_string(), seed, metrics: run_point(&cfg.scenario, cfg, k, seed)? })
    })
}
