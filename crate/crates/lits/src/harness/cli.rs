//! Command-line front end.

use super::verify::{run_all, VerifyCounts};
use super::{baseline, emit_results, instance, sweep, write_manifest, Axis, Profile, RunConfig, Row};
use crate::error::{Error, Result};
use crate::orchestrator::{run_scheme, write_history_csv, Scheme};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "lits", version, about = "Joint terrestrial access and LEO backhaul allocation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run configuration, merged over the profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Replaces the configured seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One allocation run per seed.
    Run(Common),
    /// Axis sweep averaged over seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Scheme to sweep (default: the full allocation).
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Comparison schemes on shared realizations.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Comma-separated scheme names (default: all).
        #[arg(long, value_delimiter = ',')]
        baseline: Option<Vec<String>>,
    },
    /// Randomized oracle suites.
    Verify {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Scenario and channel dump.
    Generate(Common),
}

fn load(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text, c.profile).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::profile(c.profile),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    s.trim().parse()
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))? + "\n";
    std::fs::write(path, text)?;
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = load(&c)?;
            std::fs::create_dir_all(&c.out)?;
            let mut rows = Vec::new();
            for &seed in &cfg.seeds {
                let inst = instance(&cfg.scenario, &cfg, seed)?;
                let res = run_scheme(&inst, Scheme::Lits, &cfg.lits)?;
                let f = std::fs::File::create(c.out.join(format!("history_seed{seed}.csv")))?;
                write_history_csv(&res.networks[0].history, f)?;
                rows.push(Row { axis_value: Scheme::Lits.name().into(), seed, metrics: res.metrics });
            }
            emit_results(&rows, &c.out, "run")?;
            write_manifest(&c.out, "run", &cfg)
        }
        Command::Sweep { common, axis, values, baseline: scheme } => {
            let mut cfg = load(&common)?;
            if let Some(a) = axis {
                let values = values.or_else(|| cfg.sweep.as_ref().map(|s| s.values.clone()));
                let values = values.ok_or_else(|| Error::Config("--axis needs --values".into()))?;
                cfg.sweep = Some(super::SweepSpec { axis: a, values });
            } else if let Some(v) = values {
                let s = cfg.sweep.as_mut().ok_or_else(|| Error::Config("--values needs --axis".into()))?;
                s.values = v;
            }
            let spec = cfg.sweep.clone().ok_or_else(|| Error::Config("sweep needs an axis".into()))?;
            let scheme = match scheme {
                Some(s) => parse_scheme(&s)?,
                None => cfg.schemes[0],
            };
            cfg.schemes = vec![scheme];
            cfg.validate()?;
            let rows = sweep(&cfg, spec.axis, &spec.values, scheme)?;
            emit_results(&rows, &common.out, &format!("sweep_{}", spec.axis.name()))?;
            write_manifest(&common.out, "sweep", &cfg)
        }
        Command::Baseline { common, baseline: names } => {
            let mut cfg = load(&common)?;
            cfg.schemes = match names {
                Some(v) => v.iter().map(|s| parse_scheme(s)).collect::<Result<_>>()?,
                None => Scheme::ALL.to_vec(),
            };
            cfg.validate()?;
            let rows = baseline(&cfg, &cfg.schemes)?;
            emit_results(&rows, &common.out, "baseline")?;
            write_manifest(&common.out, "baseline", &cfg)
        }
        Command::Verify { out, seed } => {
            let reports = run_all(VerifyCounts::default(), seed)?;
            std::fs::create_dir_all(&out)?;
            let mut w = csv::Writer::from_writer(std::fs::File::create(out.join("verify.csv"))?);
            w.write_record(["suite", "cases", "violations", "seconds"]).map_err(|e| Error::Io(e.to_string()))?;
            let mut failed = Vec::new();
            for r in &reports {
                println!("{:<16} {:>6} cases {:>5} violations {:>8.2} s", r.name, r.cases, r.violations, r.elapsed.as_secs_f64());
                for e in &r.examples {
                    println!("    {e}");
                }
                if !r.passed() {
                    failed.push(r.name);
                }
                w.write_record([
                    r.name.to_string(),
                    r.cases.to_string(),
                    r.violations.to_string(),
                    format!("{:.3}", r.elapsed.as_secs_f64()),
                ])
                .map_err(|e| Error::Io(e.to_string()))?;
            }
            w.flush()?;
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Contract(format!("suites with violations: {}", failed.join(", "))))
            }
        }
        Command::Generate(c) => {
            let cfg = load(&c)?;
            std::fs::create_dir_all(&c.out)?;
            for &seed in &cfg.seeds {
                let inst = instance(&cfg.scenario, &cfg, seed)?;
                write_json(&c.out.join(format!("scenario_seed{seed}.json")), &inst.scenario)?;
                write_json(&c.out.join(format!("channel_seed{seed}.json")), &inst.real)?;
            }
            write_manifest(&c.out, "generate", &cfg)
        }
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code:
/// 0 on success, 1 on a run error, 2 on a usage error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
