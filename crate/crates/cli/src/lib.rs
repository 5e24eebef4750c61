//! Command-line driver: scenario loading, runs and output files.

pub mod report;
pub mod scenario;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mergeflow_core::{
    compare_to_riemann, convergence_study, is_invariant, region_table, solve, MergeModel, StudyMode,
};
use serde::Serialize;

use report::{SolutionReport, StateReport};
use scenario::{ModelSpec, Scenario, ScenarioError};

/// Environment variable naming the output root when `--out` is absent.
pub const OUT_ENV: &str = "MERGEFLOW_OUT";
pub const DEFAULT_OUT: &str = "mergeflow-out";

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_REJECTED: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

/// Samples drawn by the invariance check of `regions`.
const INVARIANCE_SAMPLES: usize = 10_000;

#[derive(Debug, Parser)]
#[command(
    name = "mergeflow",
    version,
    about = "Riemann solutions and simulations of a traffic merge"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Seed for sampled checks.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cells per link. `sweep` takes an ascending list, e.g. `40,80,160`.
    #[arg(long, value_delimiter = ',')]
    pub cells: Vec<usize>,
    /// Merge model as `name` or `name:p`, where `p` is a1 or gamma.
    #[arg(long)]
    pub model: Option<String>,
    /// End time of the simulation.
    #[arg(long)]
    pub tend: Option<f64>,
    /// Output root; runs write to `<out>/<scenario>/<command>/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact Riemann solution of the scenario's initial data.
    Riemann {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Cell-transmission run writing density and junction CSVs.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Simulation checked against the exact Riemann solution.
    Compare {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Grid refinement study.
    Sweep {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Global fluxes over a (D1, D2) demand grid at fixed downstream supply.
    Regions {
        /// Scenario providing capacities and model.
        scenario: Option<PathBuf>,
        /// Intervals per demand axis.
        #[arg(long, default_value_t = 50)]
        grid: usize,
        /// Link capacities `C1,C2,C3`; defaults to the scenario's, else `1,1,1`.
        #[arg(long, value_delimiter = ',')]
        capacities: Option<Vec<f64>>,
        /// Downstream supply S3; defaults to C3.
        #[arg(long)]
        supply: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] mergeflow_core::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Passed,
    /// `compare` or `sweep` ran but missed its acceptance test.
    Rejected,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Passed => EXIT_OK,
            Status::Rejected => EXIT_REJECTED,
        }
    }
}

/// Where files go and which name runs are filed under.
struct Sink {
    dir: PathBuf,
}

impl Sink {
    fn new(root: PathBuf, name: &str, command: &str) -> Result<Self, CliError> {
        let dir = root.join(name).join(command);
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Sink { dir })
    }

    fn write(
        &self,
        out: &mut impl Write,
        file: &str,
        f: impl FnOnce(&Path) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(file);
        f(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        writeln!(out, "wrote {}", path.display()).map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        })
    }
}

fn output_root(flag: Option<&PathBuf>, scenario: Option<&Scenario>) -> PathBuf {
    flag.cloned()
        .or_else(|| {
            std::env::var_os(OUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .or_else(|| scenario.and_then(|s| s.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn scenario_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

fn stdout_err(source: std::io::Error) -> CliError {
    CliError::Io {
        path: "<stdout>".into(),
        source,
    }
}

/// Loads `path` and applies the single-run overrides.
fn load(path: &Path, o: &Overrides, multi_cells: bool) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    if let Some(t) = o.tend {
        s.t_end = t;
        if s.sweep.t_probe > t {
            s.sweep.t_probe = t;
        }
    }
    if let Some(text) = &o.model {
        let current = ModelSpec::of(&s.model);
        let spec = ModelSpec::parse_override(text, Some(&current)).map_err(CliError::Invalid)?;
        s.model = spec.build().map_err(CliError::Invalid)?;
    }
    if multi_cells {
        if !o.cells.is_empty() {
            if o.cells[0] == 0 || o.cells.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CliError::Invalid(
                    "--cells must be positive and strictly ascending".into(),
                ));
            }
            s.sweep.cells = o.cells.clone();
        }
    } else {
        match o.cells[..] {
            [] => {}
            [0] => return Err(CliError::Invalid("--cells must be at least 1".into())),
            [m] => s.links.iter_mut().for_each(|l| l.cells = m),
            _ => return Err(CliError::Invalid("--cells takes a single count here".into())),
        }
    }
    s.validate()?;
    Ok(s)
}

#[derive(Serialize)]
struct CompareOutput<'a> {
    solution: &'a SolutionReport,
    comparison: &'a mergeflow_core::ComparisonReport,
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    mode: String,
    t_probe: f64,
    table: &'a mergeflow_core::StudyTable,
}

#[derive(Serialize)]
struct RegionsOutput {
    model: &'static str,
    capacities: [f64; 3],
    supply: f64,
    grid: usize,
    points: usize,
    suboptimal_points: usize,
    /// Points per solution case.
    regions: std::collections::BTreeMap<String, usize>,
    seed: u64,
    invariance: mergeflow_core::InvarianceReport,
}

/// Runs one command, writing summaries to `out`.
pub fn run(cli: Cli, out: &mut impl Write) -> Result<Status, CliError> {
    match cli.command {
        Command::Riemann { scenario, overrides } => {
            let s = load(&scenario, &overrides, false)?;
            let problem = s.riemann_problem()?;
            let report = SolutionReport::new(&problem, &solve(&problem)?);
            report::print_solution(out, &report).map_err(stdout_err)?;
            let sink = Sink::new(
                output_root(overrides.out.as_ref(), Some(&s)),
                &scenario_name(&scenario),
                "riemann",
            )?;
            sink.write(out, "solution.json", |p| report::write_json(p, &report))?;
            Ok(Status::Passed)
        }
        Command::Simulate { scenario, overrides } => {
            let s = load(&scenario, &overrides, false)?;
            let mut net = s.network()?;
            let every = s.record_every(&net, s.t_end);
            let traj = net.run(s.t_end, s.cfl_factor, Some(every))?;
            let last = traj.junction.last().expect("at least one step");
            let q = last.record.fluxes;
            writeln!(
                out,
                "model {}: {} steps of dt={}, {} snapshots, final q=({}, {}, {})",
                s.model.name(),
                traj.steps(),
                report::fmt4(traj.dt),
                traj.snapshots.len(),
                report::fmt4(q.q1),
                report::fmt4(q.q2),
                report::fmt4(q.q3)
            )
            .map_err(stdout_err)?;
            let sink = Sink::new(
                output_root(overrides.out.as_ref(), Some(&s)),
                &scenario_name(&scenario),
                "simulate",
            )?;
            sink.write(out, "scenario.toml", |p| std::fs::write(p, s.to_toml()))?;
            sink.write(out, "trajectory.csv", |p| report::write_trajectory_csv(p, &traj))?;
            sink.write(out, "junction.csv", |p| report::write_junction_csv(p, &traj))?;
            Ok(Status::Passed)
        }
        Command::Compare { scenario, overrides } => {
            let s = load(&scenario, &overrides, false)?;
            let problem = s.riemann_problem()?;
            let exact = solve(&problem)?;
            let mut net = s.network()?;
            let every = s.record_every(&net, s.t_end);
            let traj = net.run(s.t_end, s.cfl_factor, Some(every))?;
            let cmp = compare_to_riemann(&traj, &exact, s.lengths(), s.tolerances)?;
            let solution = SolutionReport::new(&problem, &exact);
            report::print_solution(out, &solution).map_err(stdout_err)?;
            for a in 0..3 {
                let fd = &problem.diagrams[a];
                let measured = StateReport::new(&cmp.measured.stationary[a], fd);
                writeln!(
                    out,
                    "link {}: measured stationary ({}, {}), error {}, interior error {}",
                    a + 1,
                    report::fmt4(measured.demand),
                    report::fmt4(measured.supply),
                    report::fmt4(cmp.stationary_error[a]),
                    report::fmt4(cmp.interior_error[a])
                )
                .map_err(stdout_err)?;
            }
            writeln!(
                out,
                "flux error {}; {}",
                report::fmt4(cmp.flux_error),
                if cmp.pass { "PASS" } else { "FAIL" }
            )
            .map_err(stdout_err)?;
            let sink = Sink::new(
                output_root(overrides.out.as_ref(), Some(&s)),
                &scenario_name(&scenario),
                "compare",
            )?;
            sink.write(out, "scenario.toml", |p| std::fs::write(p, s.to_toml()))?;
            sink.write(out, "trajectory.csv", |p| report::write_trajectory_csv(p, &traj))?;
            sink.write(out, "junction.csv", |p| report::write_junction_csv(p, &traj))?;
            let both = CompareOutput {
                solution: &solution,
                comparison: &cmp,
            };
            sink.write(out, "report.json", |p| report::write_json(p, &both))?;
            Ok(if cmp.pass {
                Status::Passed
            } else {
                Status::Rejected
            })
        }
        Command::Sweep { scenario, overrides } => {
            let s = load(&scenario, &overrides, true)?;
            let (mode, label) = match s.sweep.reference {
                Some(reference) => (
                    StudyMode::ModelDifference(reference),
                    format!("l1 difference to {}", reference.name()),
                ),
                None => (StudyMode::Exact, "stationary-state error".to_string()),
            };
            let table = convergence_study(
                |m| s.build_network(s.model, Some(m)),
                &s.sweep.cells,
                s.sweep.t_probe,
                s.cfl_factor,
                mode,
            )?;
            writeln!(out, "{label} at t={}", report::fmt4(s.sweep.t_probe)).map_err(stdout_err)?;
            for row in &table.rows {
                writeln!(out, "  M={:<6} {}", row.cells, report::fmt4(row.value)).map_err(stdout_err)?;
            }
            writeln!(
                out,
                "{}",
                if table.monotone {
                    "decreasing: PASS"
                } else {
                    "decreasing: FAIL"
                }
            )
            .map_err(stdout_err)?;
            let sink = Sink::new(
                output_root(overrides.out.as_ref(), Some(&s)),
                &scenario_name(&scenario),
                "sweep",
            )?;
            sink.write(out, "study.csv", |p| report::write_study_csv(p, &table))?;
            let json = SweepOutput {
                mode: label,
                t_probe: s.sweep.t_probe,
                table: &table,
            };
            sink.write(out, "study.json", |p| report::write_json(p, &json))?;
            Ok(if table.monotone {
                Status::Passed
            } else {
                Status::Rejected
            })
        }
        Command::Regions {
            scenario,
            grid,
            capacities,
            supply,
            overrides,
        } => {
            let loaded = match &scenario {
                Some(path) => Some(load(path, &overrides, false)?),
                None => None,
            };
            let base = loaded.as_ref().map(|s| ModelSpec::of(&s.model));
            let model = match (&overrides.model, &loaded) {
                (Some(text), _) => ModelSpec::parse_override(text, base.as_ref())
                    .and_then(|m| m.build())
                    .map_err(CliError::Invalid)?,
                (None, Some(s)) => s.model,
                (None, None) => MergeModel::Fair,
            };
            let caps: [f64; 3] = match (capacities, &loaded) {
                (Some(c), _) => c
                    .try_into()
                    .map_err(|_| CliError::Invalid("--capacities takes three values".into()))?,
                (None, Some(s)) => s.capacities(),
                (None, None) => [1.0; 3],
            };
            if caps.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                return Err(CliError::Invalid("capacities must be positive".into()));
            }
            let s3 = supply.unwrap_or(caps[2]);
            if !(0.0..=caps[2]).contains(&s3) {
                return Err(CliError::Invalid(format!(
                    "supply {s3} outside [0, C3 = {}]",
                    caps[2]
                )));
            }
            let seed = overrides.seed.or(loaded.as_ref().map(|s| s.seed)).unwrap_or(0);
            let rows = region_table(&model, caps, s3, grid)?;
            let invariance = is_invariant(&model, caps, INVARIANCE_SAMPLES, seed)?;
            let mut regions = std::collections::BTreeMap::new();
            for r in &rows {
                let key = r.region.map(|g| g.to_string()).unwrap_or_else(|| "-".into());
                *regions.entry(key).or_insert(0) += 1;
            }
            let summary = RegionsOutput {
                model: model.name(),
                capacities: caps,
                supply: s3,
                grid,
                points: rows.len(),
                suboptimal_points: rows.iter().filter(|r| r.suboptimal).count(),
                regions,
                seed,
                invariance,
            };
            writeln!(
                out,
                "model {} on C=({}, {}, {}), S3={}: {} points, {} suboptimal, invariant={}",
                summary.model,
                report::fmt4(caps[0]),
                report::fmt4(caps[1]),
                report::fmt4(caps[2]),
                report::fmt4(s3),
                summary.points,
                summary.suboptimal_points,
                summary.invariance.invariant
            )
            .map_err(stdout_err)?;
            for (region, count) in &summary.regions {
                writeln!(out, "  {region}: {count}").map_err(stdout_err)?;
            }
            let name = scenario
                .as_deref()
                .map(scenario_name)
                .unwrap_or_else(|| model.name().to_string());
            let sink = Sink::new(
                output_root(overrides.out.as_ref(), loaded.as_ref()),
                &name,
                "regions",
            )?;
            sink.write(out, "regions.csv", |p| report::write_regions_csv(p, &rows))?;
            sink.write(out, "regions.json", |p| report::write_json(p, &summary))?;
            Ok(Status::Passed)
        }
    }
}
