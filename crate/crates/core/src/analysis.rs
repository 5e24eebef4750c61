//! Post-processing of trajectories: model differences, measured asymptotic
//! states, comparison with exact Riemann solutions, and convergence studies.

use serde::Serialize;

use crate::ctm::{MergeNetwork, Trajectory};
use crate::diagram::FundamentalDiagram;
use crate::error::{Error, Result};
use crate::merge::{optimal_total_flux, FluxTriple, MergeModel, Region};
use crate::riemann::{solve, RiemannProblem, RiemannSolution, Side, WaveKind};
use crate::state::{Regime, SdState};

/// Relative junction-flux change below which a run counts as settled.
pub const SETTLED_REL_CHANGE: f64 = 1e-6;
/// Trailing fraction of the steps checked for settledness.
pub const SETTLED_WINDOW: f64 = 0.05;
/// Cells (1-based, counted from the junction end) whose median gives the
/// measured stationary density.
pub const PLATEAU_BAND: (usize, usize) = (2, 10);

/// `sum_links sum_cells |rho_a - rho_b| dx` at the snapshot closest to `time`.
pub fn l1_difference(a: &Trajectory, b: &Trajectory, time: f64) -> Result<f64> {
    if a.cells() != b.cells() || a.dx != b.dx {
        return Err(Error::IncompatibleTrajectories(format!(
            "grids differ: cells {:?} vs {:?}",
            a.cells(),
            b.cells()
        )));
    }
    let sa = a.nearest(time);
    let sb = b.nearest(time);
    if sa.step != sb.step {
        return Err(Error::IncompatibleTrajectories(format!(
            "nearest snapshots to t={time} are steps {} and {}",
            sa.step, sb.step
        )));
    }
    let mut total = 0.0;
    for link in 0..3 {
        let diff: f64 = sa.densities[link]
            .iter()
            .zip(&sb.densities[link])
            .map(|(x, y)| (x - y).abs())
            .sum();
        total += diff * a.dx[link];
    }
    Ok(total)
}

/// States read off the final snapshot of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticStates {
    pub stationary: [SdState; 3],
    pub interior: [SdState; 3],
    pub stationary_density: [f64; 3],
    pub interior_density: [f64; 3],
    /// Junction fluxes of the last step.
    pub fluxes: FluxTriple,
    /// Junction fluxes changed by less than [`SETTLED_REL_CHANGE`] of the
    /// largest capacity over the trailing [`SETTLED_WINDOW`] of the steps.
    pub settled: bool,
}

/// Interior states from the junction-adjacent cells, stationary states from
/// the median of the plateau band behind them.
pub fn asymptotic_states(traj: &Trajectory) -> Result<AsymptoticStates> {
    let last = traj.last();
    let mut stationary_density = [0.0; 3];
    let mut interior_density = [0.0; 3];
    for a in 0..3 {
        let rho = &last.densities[a];
        let m = rho.len();
        // Distance k from the junction (k = 1 is the boundary cell) to index.
        let index = |k: usize| if a < 2 { m - k } else { k - 1 };
        interior_density[a] = rho[index(1)];
        let (lo, hi) = PLATEAU_BAND;
        let mut band: Vec<f64> = (lo..=hi.min(m)).map(|k| rho[index(k)]).collect();
        if band.is_empty() {
            band.push(rho[index(1)]);
        }
        stationary_density[a] = median(&mut band);
    }
    let state = |a: usize, rho: f64| {
        SdState::of_density(&traj.diagrams[a], rho.clamp(0.0, traj.diagrams[a].jam_density()))
    };
    let stationary = [
        state(0, stationary_density[0])?,
        state(1, stationary_density[1])?,
        state(2, stationary_density[2])?,
    ];
    let interior = [
        state(0, interior_density[0])?,
        state(1, interior_density[1])?,
        state(2, interior_density[2])?,
    ];

    let fluxes = traj
        .junction
        .last()
        .map(|j| j.record.fluxes)
        .unwrap_or(FluxTriple::new(0.0, 0.0));
    let scale = traj
        .diagrams
        .iter()
        .map(FundamentalDiagram::capacity)
        .fold(0.0, f64::max);
    let window = ((traj.steps() as f64 * SETTLED_WINDOW).ceil() as usize)
        .max(1)
        .min(traj.steps());
    let settled = traj.junction[traj.steps() - window..]
        .iter()
        .all(|j| j.record.fluxes.max_abs_diff(&fluxes) <= SETTLED_REL_CHANGE * scale);

    Ok(AsymptoticStates {
        stationary,
        interior,
        stationary_density,
        interior_density,
        fluxes,
        settled,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Componentwise supply-demand state error.
    pub state: f64,
    pub flux: f64,
    /// Shock position error, in length units.
    pub wave_position: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            state: 1e-2,
            flux: 1e-2,
            wave_position: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub measured: AsymptoticStates,
    pub stationary_error: [f64; 3],
    /// Distance to the exact interior state, or to the admissible set where
    /// the exact interior state is not unique.
    pub interior_error: [f64; 3],
    pub flux_error: f64,
    /// Shock position error per link, where a shock is still on the link.
    pub wave_position_error: [Option<f64>; 3],
    pub tolerances: Tolerances,
    pub pass: bool,
}

/// Compares the final state of `traj`, started from the Riemann data of
/// `exact`, with the exact solution. `lengths` are the link lengths.
pub fn compare_to_riemann(
    traj: &Trajectory,
    exact: &RiemannSolution,
    lengths: [f64; 3],
    tolerances: Tolerances,
) -> Result<ComparisonReport> {
    let measured = asymptotic_states(traj)?;
    let caps: [f64; 3] = std::array::from_fn(|a| traj.diagrams[a].capacity());
    let mut stationary_error = [0.0; 3];
    let mut interior_error = [0.0; 3];
    for a in 0..3 {
        stationary_error[a] = measured.stationary[a].distance(&exact.stationary[a]);
        interior_error[a] = if exact.interior_unique[a] {
            measured.interior[a].distance(&exact.interior[a])
        } else {
            distance_to_admissible(
                &measured.interior[a],
                &exact.stationary[a],
                caps[a],
                Side::of_link(a),
            )?
        };
    }
    let flux_error = measured.fluxes.max_abs_diff(&exact.fluxes);

    let t_end = traj.last().time;
    let mut wave_position_error = [None; 3];
    for a in 0..3 {
        let wave = &exact.waves[a];
        let WaveKind::Shock { speed } = wave.kind else {
            continue;
        };
        let predicted = speed * t_end;
        if predicted.abs() >= lengths[a] {
            continue;
        }
        let found = shock_position(
            &traj.last().densities[a],
            traj.dx[a],
            Side::of_link(a),
            wave.rho_left,
            wave.rho_right,
        );
        wave_position_error[a] = found.map(|x| (x - predicted).abs());
    }

    let pass = stationary_error
        .iter()
        .chain(&interior_error)
        .all(|&e| e <= tolerances.state)
        && flux_error <= tolerances.flux
        && wave_position_error
            .iter()
            .flatten()
            .all(|&e| e <= tolerances.wave_position);
    Ok(ComparisonReport {
        measured,
        stationary_error,
        interior_error,
        flux_error,
        wave_position_error,
        tolerances,
        pass,
    })
}

/// Distance from `interior` to the set of interior states admissible next
/// to `stationary`.
fn distance_to_admissible(
    interior: &SdState,
    stationary: &SdState,
    capacity: f64,
    side: Side,
) -> Result<f64> {
    let regime = stationary.classify(capacity)?;
    Ok(match side {
        Side::Upstream if regime == Regime::StrictlyOver => interior.distance(stationary),
        Side::Upstream => (stationary.demand - interior.supply).max(0.0),
        Side::Downstream if regime == Regime::StrictlyUnder => interior.distance(stationary),
        Side::Downstream => (stationary.supply - interior.demand).max(0.0),
    })
}

/// Position (junction at `x = 0`) where the density crosses the mean of the
/// two shock states, searched from the far end of the link.
fn shock_position(rho: &[f64], dx: f64, side: Side, left: f64, right: f64) -> Option<f64> {
    let mid = 0.5 * (left + right);
    let m = rho.len();
    let center = |k: usize| match side {
        Side::Upstream => -(m as f64 - k as f64 - 0.5) * dx,
        Side::Downstream => (k as f64 + 0.5) * dx,
    };
    let order: Vec<usize> = match side {
        Side::Upstream => (0..m).collect(),
        Side::Downstream => (0..m).rev().collect(),
    };
    for w in order.windows(2) {
        let (p, q) = (w[0], w[1]);
        if (rho[p] - mid) * (rho[q] - mid) <= 0.0 && rho[p] != rho[q] {
            let f = (mid - rho[p]) / (rho[q] - rho[p]);
            return Some(center(p) + f * (center(q) - center(p)));
        }
    }
    None
}

/// What a convergence study measures at the probe time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudyMode {
    /// L1 difference between the scenario's model and a reference model.
    ModelDifference(MergeModel),
    /// Largest stationary-state error against the exact Riemann solution of
    /// the initial data.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudyRow {
    pub cells: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    /// Values strictly decrease with the cell count (or all vanish).
    pub monotone: bool,
}

/// Runs `build(M)` up to `t_probe` for every `M` in `cells` (one thread per
/// resolution) and tabulates the measured quantity.
pub fn convergence_study<F>(
    build: F,
    cells: &[usize],
    t_probe: f64,
    cfl_factor: f64,
    mode: StudyMode,
) -> Result<StudyTable>
where
    F: Fn(usize) -> Result<MergeNetwork> + Sync,
{
    if cells.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidNetwork(
            "cell counts must be strictly ascending".into(),
        ));
    }
    let measure = |m: usize| -> Result<f64> {
        let network = build(m)?;
        match mode {
            StudyMode::ModelDifference(reference) => {
                let mut a = network.clone();
                let mut b = MergeNetwork {
                    model: reference,
                    ..network
                };
                let ta = a.run(t_probe, cfl_factor, None)?;
                let tb = b.run(t_probe, cfl_factor, None)?;
                l1_difference(&ta, &tb, t_probe)
            }
            StudyMode::Exact => {
                let initial = [
                    network.links[0].state(0),
                    network.links[1].state(0),
                    network.links[2].state(0),
                ];
                let problem = RiemannProblem::new(network.model, network.diagrams(), initial)?;
                let exact = solve(&problem)?;
                let lengths = [
                    network.links[0].length(),
                    network.links[1].length(),
                    network.links[2].length(),
                ];
                let mut net = network;
                let traj = net.run(t_probe, cfl_factor, None)?;
                let report = compare_to_riemann(&traj, &exact, lengths, Tolerances::default())?;
                Ok(report.stationary_error.iter().cloned().fold(0.0, f64::max))
            }
        }
    };
    let values: Vec<Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells.iter().map(|&m| scope.spawn(move || measure(m))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("convergence run panicked"))
            .collect()
    });
    let rows = cells
        .iter()
        .zip(values)
        .map(|(&cells, v)| v.map(|value| StudyRow { cells, value }))
        .collect::<Result<Vec<_>>>()?;
    let all_zero = rows.iter().all(|r| r.value == 0.0);
    let monotone = all_zero || rows.windows(2).all(|w| w[1].value < w[0].value);
    Ok(StudyTable { rows, monotone })
}

/// One grid point of a flux region diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionRow {
    pub d1: f64,
    pub d2: f64,
    pub fluxes: FluxTriple,
    pub region: Option<Region>,
    /// `min(D1 + D2, S3)`.
    pub optimal: f64,
    pub suboptimal: bool,
}

/// Global fluxes over a `(grid + 1) x (grid + 1)` lattice of demands
/// `[0, C1] x [0, C2]` at fixed supply.
pub fn region_table(
    model: &MergeModel,
    capacities: [f64; 3],
    supply: f64,
    grid: usize,
) -> Result<Vec<RegionRow>> {
    if grid == 0 {
        return Err(Error::InvalidNetwork(
            "region grid needs at least one interval".into(),
        ));
    }
    let tol = 1e-12 * capacities.iter().cloned().fold(0.0, f64::max);
    let mut rows = Vec::with_capacity((grid + 1) * (grid + 1));
    for i in 0..=grid {
        for j in 0..=grid {
            let d1 = capacities[0] * i as f64 / grid as f64;
            let d2 = capacities[1] * j as f64 / grid as f64;
            let fluxes = model.global_flux([d1, d2], supply, capacities)?;
            let optimal = optimal_total_flux(d1, d2, supply);
            rows.push(RegionRow {
                d1,
                d2,
                fluxes,
                region: model.region([d1, d2], supply, capacities),
                optimal,
                suboptimal: fluxes.q3 < optimal - tol,
            });
        }
    }
    Ok(rows)
}
