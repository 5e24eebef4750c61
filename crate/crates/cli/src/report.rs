//! Machine-readable output files and human summaries.
//!
//! CSV floats are written with 17 significant digits. JSON floats use the
//! shortest representation that parses back to the same value.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use mergeflow_core::{
    FluxTriple, FundamentalDiagram, RegionRow, RiemannProblem, RiemannSolution, SdState, Side, StudyTable,
    Trajectory, WaveFan,
};
use serde::Serialize;

/// `x` with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// `x` with 4 decimals and trailing zeros removed; magnitudes below 1e-3
/// get 4 significant digits in scientific notation.
pub fn fmt4(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-3 {
        return format!("{x:.3e}");
    }
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn csv_writer(path: &Path) -> io::Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Columns `time, link_id, cell_index, density`; links and cells count from 1.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["time", "link_id", "cell_index", "density"])
        .map_err(csv_io)?;
    for snap in &traj.snapshots {
        let time = fmt17(snap.time);
        for (a, cells) in snap.densities.iter().enumerate() {
            for (m, rho) in cells.iter().enumerate() {
                w.write_record([
                    time.as_str(),
                    &(a + 1).to_string(),
                    &(m + 1).to_string(),
                    &fmt17(*rho),
                ])
                .map_err(csv_io)?;
            }
        }
    }
    w.flush()
}

/// Columns `step, time, q1, q2, q3, D1_boundary, D2_boundary, S3_boundary`.
pub fn write_junction_csv(path: &Path, traj: &Trajectory) -> io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "step",
        "time",
        "q1",
        "q2",
        "q3",
        "D1_boundary",
        "D2_boundary",
        "S3_boundary",
    ])
    .map_err(csv_io)?;
    for j in &traj.junction {
        let r = &j.record;
        let mut row = vec![j.step.to_string(), fmt17(j.time)];
        row.extend(
            [
                r.fluxes.q1,
                r.fluxes.q2,
                r.fluxes.q3,
                r.boundary_demands[0],
                r.boundary_demands[1],
                r.boundary_supply,
            ]
            .map(fmt17),
        );
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()
}

pub fn write_study_csv(path: &Path, table: &StudyTable) -> io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cells", "value"]).map_err(csv_io)?;
    for row in &table.rows {
        w.write_record([row.cells.to_string(), fmt17(row.value)])
            .map_err(csv_io)?;
    }
    w.flush()
}

pub fn write_regions_csv(path: &Path, rows: &[RegionRow]) -> io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["D1", "D2", "q1", "q2", "q3", "optimal", "suboptimal", "region"])
        .map_err(csv_io)?;
    for r in rows {
        let mut row: Vec<String> = [r.d1, r.d2, r.fluxes.q1, r.fluxes.q2, r.fluxes.q3, r.optimal]
            .map(fmt17)
            .into();
        row.push(r.suboptimal.to_string());
        row.push(r.region.map(|g| g.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

/// A supply-demand state as `{"D", "S", "regime", "density"}`.
#[derive(Debug, Clone, Serialize)]
pub struct StateReport {
    #[serde(rename = "D")]
    pub demand: f64,
    #[serde(rename = "S")]
    pub supply: f64,
    pub regime: Option<&'static str>,
    pub density: Option<f64>,
}

impl StateReport {
    pub fn new(u: &SdState, fd: &FundamentalDiagram) -> Self {
        StateReport {
            demand: u.demand,
            supply: u.supply,
            regime: u.classify(fd.capacity()).ok().map(|r| r.label()),
            density: u.density(fd).ok(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkSolution {
    pub link: usize,
    pub side: Side,
    pub initial: StateReport,
    pub stationary: StateReport,
    pub interior: StateReport,
    pub interior_unique: bool,
    pub wave: WaveFan,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    pub model: &'static str,
    pub region: Option<String>,
    pub fluxes: FluxTriple,
    pub links: Vec<LinkSolution>,
}

impl SolutionReport {
    pub fn new(problem: &RiemannProblem, sol: &RiemannSolution) -> Self {
        let links = (0..3)
            .map(|a| {
                let fd = &problem.diagrams[a];
                LinkSolution {
                    link: a + 1,
                    side: Side::of_link(a),
                    initial: StateReport::new(&problem.initial[a], fd),
                    stationary: StateReport::new(&sol.stationary[a], fd),
                    interior: StateReport::new(&sol.interior[a], fd),
                    interior_unique: sol.interior_unique[a],
                    wave: sol.waves[a],
                }
            })
            .collect();
        SolutionReport {
            model: problem.model.name(),
            region: sol.region.map(|r| r.to_string()),
            fluxes: sol.fluxes,
            links,
        }
    }
}

fn state4(u: &StateReport) -> String {
    let rho = u.density.map(fmt4).unwrap_or_else(|| "-".into());
    format!("({}, {}) rho={rho}", fmt4(u.demand), fmt4(u.supply))
}

fn wave4(w: &WaveFan) -> String {
    match w.speed_range() {
        None => w.label().to_string(),
        Some((lo, hi)) if lo == hi => format!("{} speed={}", w.label(), fmt4(lo)),
        Some((lo, hi)) => format!("{} speeds=[{}, {}]", w.label(), fmt4(lo), fmt4(hi)),
    }
}

pub fn print_solution(out: &mut impl Write, report: &SolutionReport) -> io::Result<()> {
    let q = &report.fluxes;
    writeln!(out, "model: {}", report.model)?;
    writeln!(out, "region: {}", report.region.as_deref().unwrap_or("-"))?;
    writeln!(out, "q=({}, {}, {})", fmt4(q.q1), fmt4(q.q2), fmt4(q.q3))?;
    for l in &report.links {
        let note = if l.interior_unique { "" } else { " (not unique)" };
        writeln!(
            out,
            "link {}: initial {}; stationary {}; interior {}{note}; wave {}",
            l.link,
            state4(&l.initial),
            state4(&l.stationary),
            state4(&l.interior),
            wave4(&l.wave)
        )?;
    }
    writeln!(
        out,
        "waves: {}",
        report
            .links
            .iter()
            .map(|l| l.wave.label())
            .collect::<Vec<_>>()
            .join("/")
    )
}
