//! Godunov (cell transmission) discretization of the merge network.
//!
//! Each link is split into cells of equal length. Fluxes between cells are
//! `min(D_upstream, S_downstream)`; at the junction the merge model's local
//! flux is applied to the last cells of the upstream links and the first
//! cell of the downstream link.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diagram::{FundamentalDiagram, DOMAIN_SLACK};
use crate::error::{Error, Result};
use crate::merge::{FluxTriple, MergeModel};
use crate::state::SdState;

/// Number of snapshots recorded by default over a run.
pub const DEFAULT_SNAPSHOTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    fd: FundamentalDiagram,
    length: f64,
    densities: Vec<f64>,
}

impl Link {
    pub fn uniform(fd: FundamentalDiagram, length: f64, cells: usize, density: f64) -> Result<Self> {
        Link::from_densities(fd, length, vec![density; cells])
    }

    pub fn from_densities(fd: FundamentalDiagram, length: f64, densities: Vec<f64>) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) || densities.is_empty() {
            return Err(Error::InvalidNetwork(format!(
                "a link needs a positive length and at least one cell (length {length}, {} cells)",
                densities.len()
            )));
        }
        for &rho in &densities {
            fd.flow(rho)?;
        }
        Ok(Link {
            fd,
            length,
            densities,
        })
    }

    /// Link whose cells all hold the density realizing `state`.
    pub fn from_state(fd: FundamentalDiagram, length: f64, cells: usize, state: &SdState) -> Result<Self> {
        let rho = state.density(&fd)?;
        Link::uniform(fd, length, cells, rho)
    }

    pub fn fd(&self) -> &FundamentalDiagram {
        &self.fd
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cells(&self) -> usize {
        self.densities.len()
    }

    pub fn dx(&self) -> f64 {
        self.length / self.densities.len() as f64
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    /// Vehicles on the link, `sum rho dx`.
    pub fn mass(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.dx()
    }

    pub fn state(&self, cell: usize) -> SdState {
        let rho = self.densities[cell].clamp(0.0, self.fd.jam_density());
        SdState::of_density(&self.fd, rho).expect("clamped density is in range")
    }
}

/// Demand entering an upstream link from outside the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandBoundary {
    /// Ghost cell copies the first cell: `D_0 = D_1`.
    Neumann,
    Constant {
        demand: f64,
    },
    /// `base + amplitude sin(2 pi t / period)`.
    Periodic {
        base: f64,
        amplitude: f64,
        period: f64,
    },
}

impl DemandBoundary {
    fn demand(&self, first_cell: &SdState, time: f64) -> f64 {
        match *self {
            DemandBoundary::Neumann => first_cell.demand,
            DemandBoundary::Constant { demand } => demand,
            DemandBoundary::Periodic {
                base,
                amplitude,
                period,
            } => base + amplitude * (2.0 * PI * time / period).sin(),
        }
    }

    fn validate(&self, link: usize, capacity: f64) -> Result<()> {
        let (lo, hi) = match *self {
            DemandBoundary::Neumann => return Ok(()),
            DemandBoundary::Constant { demand } => (demand, demand),
            DemandBoundary::Periodic {
                base,
                amplitude,
                period,
            } => {
                if !(period.is_finite() && period > 0.0) {
                    return Err(Error::InvalidNetwork(format!(
                        "link {link}: period must be positive"
                    )));
                }
                (base - amplitude.abs(), base + amplitude.abs())
            }
        };
        if !(lo >= 0.0 && hi <= capacity * (1.0 + DOMAIN_SLACK)) {
            return Err(Error::InvalidNetwork(format!(
                "link {link}: boundary demand range [{lo}, {hi}] leaves [0, {capacity}]"
            )));
        }
        Ok(())
    }
}

/// Supply at the exit of the downstream link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SupplyBoundary {
    /// Ghost cell copies the last cell: `S_{M+1} = S_M`.
    Neumann,
    Constant {
        supply: f64,
    },
}

impl SupplyBoundary {
    fn supply(&self, last_cell: &SdState) -> f64 {
        match *self {
            SupplyBoundary::Neumann => last_cell.supply,
            SupplyBoundary::Constant { supply } => supply,
        }
    }

    fn validate(&self, capacity: f64) -> Result<()> {
        match *self {
            SupplyBoundary::Constant { supply }
                if !(supply >= 0.0 && supply <= capacity * (1.0 + DOMAIN_SLACK)) =>
            {
                Err(Error::InvalidNetwork(format!(
                    "boundary supply {supply} leaves [0, {capacity}]"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Fluxes of one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub fluxes: FluxTriple,
    /// `D_{1,M}`, `D_{2,M}`, `S_{3,1}` seen by the junction.
    pub boundary_demands: [f64; 2],
    pub boundary_supply: f64,
    /// Flow entering and leaving each link.
    pub inflow: [f64; 3],
    pub outflow: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeNetwork {
    /// Upstream links 1 and 2, then downstream link 3.
    pub links: [Link; 3],
    pub model: MergeModel,
    pub upstream_bc: [DemandBoundary; 2],
    pub downstream_bc: SupplyBoundary,
}

impl MergeNetwork {
    pub fn new(
        links: [Link; 3],
        model: MergeModel,
        upstream_bc: [DemandBoundary; 2],
        downstream_bc: SupplyBoundary,
    ) -> Result<Self> {
        for i in 0..2 {
            upstream_bc[i].validate(i + 1, links[i].fd.capacity())?;
        }
        downstream_bc.validate(links[2].fd.capacity())?;
        Ok(MergeNetwork {
            links,
            model,
            upstream_bc,
            downstream_bc,
        })
    }

    pub fn diagrams(&self) -> [FundamentalDiagram; 3] {
        [self.links[0].fd, self.links[1].fd, self.links[2].fd]
    }

    /// `factor * min dx / max wave speed` over all links.
    pub fn cfl_dt(&self, factor: f64) -> f64 {
        let dx = self.links.iter().map(Link::dx).fold(f64::INFINITY, f64::min);
        let v = self
            .links
            .iter()
            .map(|l| l.fd.max_wave_speed())
            .fold(0.0, f64::max);
        factor * dx / v
    }

    fn check_cfl(&self, dt: f64) -> Result<()> {
        for (a, link) in self.links.iter().enumerate() {
            let limit = link.dx() / link.fd.max_wave_speed();
            if !(dt > 0.0 && dt <= limit * (1.0 + 1e-12)) {
                return Err(Error::CflViolation {
                    link: a + 1,
                    dt,
                    limit,
                });
            }
        }
        Ok(())
    }

    /// Advances all cells by `dt`. `time` is the start of the step and
    /// drives time-dependent boundary demands.
    pub fn step(&mut self, dt: f64, time: f64) -> Result<StepRecord> {
        self.check_cfl(dt)?;
        let states: [Vec<SdState>; 3] = std::array::from_fn(|a| {
            (0..self.links[a].cells())
                .map(|m| self.links[a].state(m))
                .collect()
        });

        let up_last = [*states[0].last().unwrap(), *states[1].last().unwrap()];
        let down_first = states[2][0];
        let c3 = self.links[2].fd.capacity();
        let fluxes = self.model.local_flux(&up_last[0], &up_last[1], &down_first, c3);

        let mut inflow = [0.0; 3];
        let mut outflow = [0.0; 3];
        for i in 0..2 {
            let entry = self.upstream_bc[i].demand(&states[i][0], time);
            inflow[i] = entry.min(states[i][0].supply);
            outflow[i] = fluxes.upstream(i);
        }
        inflow[2] = fluxes.q3;
        let exit = self.downstream_bc.supply(states[2].last().unwrap());
        outflow[2] = states[2].last().unwrap().demand.min(exit);

        for a in 0..3 {
            let link = &mut self.links[a];
            let ratio = dt / link.dx();
            let s = &states[a];
            let mut upstream_flux = inflow[a];
            for m in 0..s.len() {
                let downstream_flux = if m + 1 < s.len() {
                    s[m].demand.min(s[m + 1].supply)
                } else {
                    outflow[a]
                };
                link.densities[m] += ratio * (upstream_flux - downstream_flux);
                upstream_flux = downstream_flux;
            }
            let jam = link.fd.jam_density();
            let slack = DOMAIN_SLACK * jam;
            if let Some(&rho) = link
                .densities
                .iter()
                .find(|&&r| !(r >= -slack && r <= jam + slack))
            {
                return Err(Error::DensityOutOfRange {
                    density: rho,
                    jam_density: jam,
                });
            }
        }

        Ok(StepRecord {
            fluxes,
            boundary_demands: [up_last[0].demand, up_last[1].demand],
            boundary_supply: down_first.supply,
            inflow,
            outflow,
        })
    }

    /// Number of steps [`run`](Self::run) takes to reach `t_end`.
    pub fn step_count(&self, t_end: f64, cfl_factor: f64) -> usize {
        ((t_end / self.cfl_dt(cfl_factor)) - 1e-9).ceil().max(1.0) as usize
    }

    /// Runs until `t_end` with `dt = cfl_dt(cfl_factor)`, the last step
    /// shortened to land on `t_end`. Densities are recorded every
    /// `record_every` steps (default: about [`DEFAULT_SNAPSHOTS`] snapshots)
    /// and at the end; junction quantities every step.
    pub fn run(&mut self, t_end: f64, cfl_factor: f64, record_every: Option<usize>) -> Result<Trajectory> {
        if !(cfl_factor > 0.0 && cfl_factor <= 1.0) {
            return Err(Error::InvalidNetwork(format!(
                "cfl factor {cfl_factor} outside (0, 1]"
            )));
        }
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::InvalidNetwork(format!(
                "end time {t_end} must be positive"
            )));
        }
        let dt = self.cfl_dt(cfl_factor);
        let steps = self.step_count(t_end, cfl_factor);
        let every = record_every.unwrap_or(steps / DEFAULT_SNAPSHOTS).max(1);

        let mut traj = Trajectory {
            model: self.model,
            diagrams: self.diagrams(),
            dx: std::array::from_fn(|a| self.links[a].dx()),
            dt,
            record_every: every,
            times: Vec::with_capacity(steps + 1),
            snapshots: Vec::new(),
            junction: Vec::with_capacity(steps),
        };
        traj.times.push(0.0);
        traj.snapshots.push(self.snapshot(0, 0.0));
        for n in 0..steps {
            let time = n as f64 * dt;
            let h = if n + 1 == steps { t_end - time } else { dt };
            let record = self.step(h, time)?;
            traj.junction.push(JunctionRecord {
                step: n,
                time,
                record,
            });
            let next = if n + 1 == steps {
                t_end
            } else {
                (n + 1) as f64 * dt
            };
            traj.times.push(next);
            if (n + 1) % every == 0 || n + 1 == steps {
                traj.snapshots.push(self.snapshot(n + 1, next));
            }
        }
        Ok(traj)
    }

    fn snapshot(&self, step: usize, time: f64) -> Snapshot {
        Snapshot {
            step,
            time,
            densities: std::array::from_fn(|a| self.links[a].densities.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub densities: [Vec<f64>; 3],
}

/// Junction fluxes of step `step`, evaluated from the states at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JunctionRecord {
    pub step: usize,
    pub time: f64,
    #[serde(flatten)]
    pub record: StepRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: MergeModel,
    pub diagrams: [FundamentalDiagram; 3],
    pub dx: [f64; 3],
    /// Nominal step; the final step may be shorter.
    pub dt: f64,
    pub record_every: usize,
    /// `t_0 .. t_N`.
    pub times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub junction: Vec<JunctionRecord>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.junction.len()
    }

    pub fn cells(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.snapshots[0].densities[a].len())
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("a trajectory holds its initial snapshot")
    }

    /// Snapshot recorded closest to `time`.
    pub fn nearest(&self, time: f64) -> &Snapshot {
        self.snapshots
            .iter()
            .min_by(|a, b| (a.time - time).abs().total_cmp(&(b.time - time).abs()))
            .expect("a trajectory holds its initial snapshot")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_merge_network(model: MergeModel, cells: usize) -> MergeNetwork {
        let main = FundamentalDiagram::del_castillo_mainline();
        let ramp = FundamentalDiagram::del_castillo_ramp();
        let links = [
            Link::uniform(main, 10.0, cells, 0.35).unwrap(),
            Link::uniform(ramp, 10.0, cells, 0.1).unwrap(),
            Link::uniform(main, 10.0, cells, 0.35).unwrap(),
        ];
        MergeNetwork::new(
            links,
            model,
            [DemandBoundary::Neumann; 2],
            SupplyBoundary::Neumann,
        )
        .unwrap()
    }

    #[test]
    fn cfl_examples() {
        assert!((ramp_merge_network(MergeModel::Fair, 160).cfl_dt(0.9) - 0.05625).abs() < 1e-15);

        let tri = FundamentalDiagram::triangular(1.0, 0.5, 1.0).unwrap();
        let unit = |_| Link::uniform(tri, 1.0, 1, 0.1).unwrap();
        let net = MergeNetwork::new(
            std::array::from_fn(unit),
            MergeModel::Fair,
            [DemandBoundary::Neumann; 2],
            SupplyBoundary::Neumann,
        )
        .unwrap();
        assert_eq!(net.cfl_dt(1.0), 1.0);

        let ramp = FundamentalDiagram::del_castillo_ramp();
        let short = |_| Link::uniform(ramp, 1.0, 10, 0.3).unwrap();
        let mut net = MergeNetwork::new(
            std::array::from_fn(short),
            MergeModel::Fair,
            [DemandBoundary::Neumann; 2],
            SupplyBoundary::Neumann,
        )
        .unwrap();
        let dt = net.cfl_dt(0.9);
        assert!((dt - 0.18).abs() < 1e-15);
        let before = net.links.clone();
        net.step(dt, 0.0).unwrap();
        for (old, new) in before.iter().zip(&net.links) {
            for (a, b) in old.densities().iter().zip(new.densities()) {
                // Each cell exchanges at most C dt / dx with each neighbour.
                assert!((a - b).abs() <= 2.0 * ramp.capacity() * dt / 0.1 + 1e-15);
            }
        }
        assert!(matches!(net.step(0.25, 0.0), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn uniform_free_flow_is_steady() {
        let fd = FundamentalDiagram::greenshields(1.0, 1.0).unwrap();
        let links = [
            Link::uniform(fd, 5.0, 20, 0.1).unwrap(),
            Link::uniform(fd, 5.0, 20, 0.1).unwrap(),
            Link::uniform(
                fd,
                5.0,
                20,
                fd.density_from_demand(2.0 * fd.flow(0.1).unwrap()).unwrap(),
            )
            .unwrap(),
        ];
        let mut net = MergeNetwork::new(
            links,
            MergeModel::Fair,
            [DemandBoundary::Neumann; 2],
            SupplyBoundary::Neumann,
        )
        .unwrap();
        let before = net.links.clone();
        let dt = net.cfl_dt(0.9);
        for n in 0..10 {
            net.step(dt, n as f64 * dt).unwrap();
        }
        for (old, new) in before.iter().zip(&net.links) {
            for (a, b) in old.densities().iter().zip(new.densities()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn first_step_junction_flux() {
        let mut net = ramp_merge_network(MergeModel::Fair, 160);
        let dt = net.cfl_dt(0.9);
        let rec = net.step(dt, 0.0).unwrap();
        assert!((rec.fluxes.q2 - 0.0463).abs() < 1e-4);
        assert!((rec.fluxes.q3 - net.links[2].fd().capacity()).abs() < 1e-12);
    }

    #[test]
    fn single_cell_links_reach_the_riemann_fluxes() {
        let mut net = ramp_merge_network(MergeModel::Fair, 1);
        for link in &mut net.links {
            link.length = 1.0;
        }
        // Feed the initial demands so the single cells can hold the interior states.
        for i in 0..2 {
            let demand = net.links[i].state(0).demand;
            net.upstream_bc[i] = DemandBoundary::Constant { demand };
        }
        let traj = net.run(100.0, 0.9, None).unwrap();
        let q = traj.junction.last().unwrap().record.fluxes;
        let c1 = FundamentalDiagram::del_castillo_mainline().capacity();
        let d2 = FundamentalDiagram::del_castillo_ramp().demand(0.1).unwrap();
        assert!(
            (q.q1 - (c1 - d2)).abs() < 1e-6 && (q.q2 - d2).abs() < 1e-6 && (q.q3 - c1).abs() < 1e-6,
            "{q:?}"
        );
    }

    #[test]
    fn zero_demand_network_stays_empty() {
        let mut net = ramp_merge_network(MergeModel::constant(0.5, 0.5).unwrap(), 20);
        for link in &mut net.links {
            link.densities.fill(0.0);
        }
        let traj = net.run(50.0, 0.9, Some(7)).unwrap();
        assert!(traj
            .snapshots
            .iter()
            .all(|s| s.densities.iter().flatten().all(|&r| r == 0.0)));
        assert_eq!(traj.times.len(), traj.steps() + 1);
        assert_eq!(*traj.times.last().unwrap(), 50.0);
        assert_eq!(traj.last().step, traj.steps());
    }

    #[test]
    fn periodic_boundary_demand() {
        let bc = DemandBoundary::Periodic {
            base: 0.05,
            amplitude: 0.03,
            period: 120.0,
        };
        let u = SdState::new(0.0, 0.0841);
        assert!((bc.demand(&u, 30.0) - 0.08).abs() < 1e-15);
        assert!(bc.validate(2, 0.0841).is_ok());
        assert!(DemandBoundary::Periodic {
            base: 0.07,
            amplitude: 0.03,
            period: 120.0
        }
        .validate(2, 0.0841)
        .is_err());
    }
}
