//! Batch commands behind the `reflectsim` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::allocator::{optimize, AllocError, ResourcePlan};
use crate::channel::{assemble_channel, dbm_to_watts, received_power_w, watts_to_dbm, ChannelError};
use crate::config::{ConfigError, ScenarioConfig};
use crate::geometry::Vec3;
use crate::scene::{trace_paths, Scene, TraceError};

/// Power written for grid cells that no path reaches.
pub const NO_PATH_FLOOR_DBM: f64 = -200.0;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Missing(&'static str),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Alloc(AllocError::Infeasible { .. }) => EXIT_INFEASIBLE,
            _ => EXIT_INPUT,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "reflectsim", version, about = "Indoor THz propagation with reflectarray panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Received-power map over the sweep grid.
    Map {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Remove every panel (baseline map).
        #[arg(long)]
        no_panels: bool,
    },
    /// Optimized sum rate for each panel size in the sweep block.
    RateSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the allocation block and write the plan.
    Allocate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file and list every problem.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Channel taps from the transmitter to each `scene.rx` point.
    Taps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesized phase profile of one panel.
    Phases {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        panel: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRow {
    pub x: f64,
    pub y: f64,
    pub received_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "received_power_dbm"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:.4}", r.x),
                format!("{:.4}", r.y),
                format!("{:.6}", r.received_power_dbm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub m_s: u64,
    /// `None` when the thresholds cannot be met.
    pub sum_rate_bits_per_s: Option<f64>,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m_s", "sum_rate_bits_per_s", "status"])?;
    for r in rows {
        match r.sum_rate_bits_per_s {
            Some(rate) => w.write_record([r.m_s.to_string(), format!("{rate:.6e}"), "ok".into()])?,
            None => w.write_record([r.m_s.to_string(), String::new(), "infeasible".into()])?,
        }
    }
    w.flush()?;
    Ok(())
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
    Ok(pool.install(f))
}

/// Received power at `point` in dBm, or the floor if no path arrives.
pub fn received_power_dbm(scene: &Scene, point: Vec3, tx_power_dbm: f64) -> Result<f64, CliError> {
    let paths = trace_paths(scene, point, scene.max_bounces)?;
    let one = num_complex::Complex64::new(1.0, 0.0);
    let response = assemble_channel(&paths, scene, one, one)?;
    let p = received_power_w(&response, dbm_to_watts(tx_power_dbm));
    Ok(if p > 0.0 {
        watts_to_dbm(p).max(NO_PATH_FLOOR_DBM)
    } else {
        NO_PATH_FLOOR_DBM
    })
}

/// Trace every grid cell; rows come out row-major (y outer) whatever the
/// worker count.
pub fn cmd_map(cfg: &ScenarioConfig, with_panels: bool, jobs: Option<usize>) -> Result<GridResult, CliError> {
    let scene = cfg.build_scene()?;
    let scene = if with_panels { scene } else { scene.without_panels() };
    let sweep = cfg.sweep.as_ref().ok_or(CliError::Missing("sweep block is required for map"))?;
    let grid = sweep.grid.as_ref().ok_or(CliError::Missing("sweep.grid is required for map"))?;
    let points = grid.points();
    let tx_power = sweep.tx_power_dbm;
    let rows = with_pool(jobs, || {
        points
            .par_iter()
            .map(|p| {
                Ok(GridRow {
                    x: p.x,
                    y: p.y,
                    received_power_dbm: received_power_dbm(&scene, *p, tx_power)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })??;
    Ok(GridResult { rows })
}

/// Optimized sum rate for each listed element total, sorted by `m_s`.
pub fn cmd_rate_sweep(cfg: &ScenarioConfig, jobs: Option<usize>) -> Result<Vec<SweepRow>, CliError> {
    let base = cfg.resource_problem()?;
    let mut values = cfg.sweep.as_ref().map(|s| s.panel_elements.clone()).unwrap_or_default();
    values.sort_unstable();
    values.dedup();
    with_pool(jobs, || {
        let mut rows = Vec::with_capacity(values.len());
        for m_s in values {
            let mut problem = base.clone();
            problem.totals.m_s_tot = m_s;
            let sum_rate_bits_per_s = match optimize(&problem) {
                Ok(plan) => Some(plan.objective.sum_rate_bps),
                Err(AllocError::Infeasible { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            rows.push(SweepRow { m_s, sum_rate_bits_per_s });
        }
        Ok(rows)
    })?
}

pub fn cmd_allocate(cfg: &ScenarioConfig, jobs: Option<usize>) -> Result<ResourcePlan, CliError> {
    let problem = cfg.resource_problem()?;
    Ok(with_pool(jobs, || optimize(&problem))??)
}

/// `Ok(())` or one line per problem.
pub fn cmd_validate(path: &Path) -> Result<(), String> {
    let cfg = ScenarioConfig::load(path).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Output {
        path: path.display().to_string(),
        source,
    })
}

/// `<out>.objective.csv` next to the plan file.
pub fn objective_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".objective.csv");
    PathBuf::from(s)
}

fn load(common: &Common) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::load(&common.scenario)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Map { common, out, no_panels } => {
            let cfg = load(&common)?;
            let grid = cmd_map(&cfg, !no_panels, common.jobs)?;
            grid.write_csv(create(&out)?)?;
        }
        Command::RateSweep { common, out } => {
            let cfg = load(&common)?;
            let rows = cmd_rate_sweep(&cfg, common.jobs)?;
            write_sweep_csv(&rows, create(&out)?)?;
        }
        Command::Allocate { common, out } => {
            let cfg = load(&common)?;
            let plan = cmd_allocate(&cfg, common.jobs)?;
            plan.write_csv(create(&out)?)?;
            let mut w = csv::Writer::from_writer(create(&objective_path(&out))?);
            w.write_record(["sum_distance_m", "sum_rate_bps", "scalarized"])?;
            w.write_record([
                format!("{:.2}", plan.objective.sum_distance_m),
                format!("{:.6e}", plan.objective.sum_rate_bps),
                format!("{:.12e}", plan.objective.scalarized),
            ])?;
            w.flush().map_err(csv::Error::from)?;
        }
        Command::Validate { .. } => unreachable!("handled by run"),
        Command::Taps { common, out } => {
            let cfg = load(&common)?;
            let scene = cfg.build_scene()?;
            if scene.rx_positions.is_empty() {
                return Err(CliError::Missing("scene.rx must list at least one point"));
            }
            let one = num_complex::Complex64::new(1.0, 0.0);
            let mut w = csv::Writer::from_writer(create(&out)?);
            w.write_record(["rx", "kind", "delay_s", "re_alpha", "im_alpha", "power_db"])?;
            for (i, rx) in scene.rx_positions.iter().enumerate() {
                let paths = trace_paths(&scene, *rx, scene.max_bounces)?;
                let response = assemble_channel(&paths, &scene, one, one)?;
                for t in &response.taps {
                    let p = t.amplitude.norm_sqr();
                    w.write_record([
                        i.to_string(),
                        t.kind.name().to_string(),
                        format!("{:e}", t.delay),
                        format!("{:e}", t.amplitude.re),
                        format!("{:e}", t.amplitude.im),
                        format!("{:.6}", 10.0 * p.log10()),
                    ])?;
                }
            }
            w.flush().map_err(csv::Error::from)?;
        }
        Command::Phases { common, panel, out } => {
            let cfg = load(&common)?;
            let scene = cfg.build_scene()?;
            let p = scene.panel(&panel).ok_or(CliError::Missing("no panel with that id"))?;
            let mut w = csv::Writer::from_writer(create(&out)?);
            w.write_record(["m", "n", "psi_radians"])?;
            for m in 0..p.m_cells {
                for n in 0..p.n_cells {
                    w.write_record([m.to_string(), n.to_string(), format!("{:.12}", p.psi_mn[p.index(m, n)])])?;
                }
            }
            w.flush().map_err(csv::Error::from)?;
        }
    }
    Ok(())
}

/// Run one command, printing diagnostics to stderr. Returns the exit code.
pub fn run(cli: Cli) -> i32 {
    if let Command::Validate { common } = &cli.command {
        return match cmd_validate(&common.scenario) {
            Ok(()) => {
                println!("OK");
                EXIT_OK
            }
            Err(msg) => {
                println!("{msg}");
                EXIT_INPUT
            }
        };
    }
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
