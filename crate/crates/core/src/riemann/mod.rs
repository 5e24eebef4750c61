//! Riemann problem at a merge: two upstream links meet one downstream link,
//! each carrying a constant initial state.
//!
//! A solution consists of the boundary fluxes, a stationary state on every
//! link, an interior state at the junction end of every link, and the wave
//! that connects each initial state to its stationary state.

mod oracle;
mod wave;

pub use oracle::{fixed_point_oracle, oracle_fluxes, ORACLE_GRID};
pub use wave::{classify_wave, WaveFan, WaveKind, WAVE_DENSITY_TOL};

use serde::Serialize;

use crate::diagram::FundamentalDiagram;
use crate::error::{Error, Result};
use crate::merge::{FluxTriple, MergeModel, Region};
use crate::state::{Regime, SdState, FLOW_REL_TOL};

/// Position of a link relative to the junction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upstream,
    Downstream,
}

impl Side {
    /// Side of link `a` (0-based: links 0 and 1 are upstream, 2 downstream).
    pub fn of_link(a: usize) -> Side {
        if a < 2 {
            Side::Upstream
        } else {
            Side::Downstream
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannProblem {
    pub model: MergeModel,
    pub diagrams: [FundamentalDiagram; 3],
    pub initial: [SdState; 3],
}

impl RiemannProblem {
    pub fn new(model: MergeModel, diagrams: [FundamentalDiagram; 3], initial: [SdState; 3]) -> Result<Self> {
        for (u, fd) in initial.iter().zip(&diagrams) {
            u.validate(fd.capacity())?;
        }
        Ok(RiemannProblem {
            model,
            diagrams,
            initial,
        })
    }

    /// Problem with uniform initial densities on the three links.
    pub fn from_densities(
        model: MergeModel,
        diagrams: [FundamentalDiagram; 3],
        densities: [f64; 3],
    ) -> Result<Self> {
        let initial = [
            SdState::of_density(&diagrams[0], densities[0])?,
            SdState::of_density(&diagrams[1], densities[1])?,
            SdState::of_density(&diagrams[2], densities[2])?,
        ];
        Ok(RiemannProblem {
            model,
            diagrams,
            initial,
        })
    }

    pub fn capacities(&self) -> [f64; 3] {
        [
            self.diagrams[0].capacity(),
            self.diagrams[1].capacity(),
            self.diagrams[2].capacity(),
        ]
    }

    pub fn demands(&self) -> [f64; 2] {
        [self.initial[0].demand, self.initial[1].demand]
    }

    pub fn supply(&self) -> f64 {
        self.initial[2].supply
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiemannSolution {
    pub fluxes: FluxTriple,
    /// `U1-, U2-, U3+`.
    pub stationary: [SdState; 3],
    /// `U1(0-), U2(0-), U3(0+)`.
    pub interior: [SdState; 3],
    /// False where other admissible interior states reproduce the same fluxes.
    pub interior_unique: [bool; 3],
    pub waves: [WaveFan; 3],
    pub region: Option<Region>,
}

/// A consequence of the admissibility conditions: a flux determines the
/// stationary state. Upstream `(D, C)` when the whole demand passes, else
/// `(C, q)`; downstream `(C, S)` when the whole supply is used, else `(q, C)`.
pub fn stationary_from_flux(flux: f64, initial: &SdState, capacity: f64, side: Side) -> Result<SdState> {
    let tol = FLOW_REL_TOL * capacity;
    let bound = match side {
        Side::Upstream => initial.demand,
        Side::Downstream => initial.supply,
    };
    if flux > bound + tol || flux < -tol {
        return Err(Error::InadmissibleFlux { flux, bound });
    }
    let saturated = flux >= bound - tol;
    Ok(match (side, saturated) {
        (Side::Upstream, true) => SdState::under_critical(initial.demand, capacity),
        (Side::Upstream, false) => SdState::over_critical(capacity, flux),
        (Side::Downstream, true) => SdState::over_critical(capacity, initial.supply),
        (Side::Downstream, false) => SdState::under_critical(flux, capacity),
    })
}

/// Admissible stationary states: upstream `(D_i, C_i)` or `(C_i, S)` with
/// `S < D_i`; downstream `(C, S_3)` or `(D, C)` with `D < S_3`.
pub fn check_admissible_stationary(
    stationary: &SdState,
    initial: &SdState,
    capacity: f64,
    side: Side,
) -> bool {
    let tol = FLOW_REL_TOL * capacity;
    if stationary.validate(capacity).is_err() {
        return false;
    }
    match side {
        Side::Upstream => {
            stationary.approx_eq(&SdState::under_critical(initial.demand, capacity), tol)
                || ((stationary.demand - capacity).abs() <= tol && stationary.supply < initial.demand - tol)
        }
        Side::Downstream => {
            stationary.approx_eq(&SdState::over_critical(capacity, initial.supply), tol)
                || ((stationary.supply - capacity).abs() <= tol && stationary.demand < initial.supply - tol)
        }
    }
}

/// Admissible interior states: a strictly over-critical upstream (strictly
/// under-critical downstream) stationary state admits no other interior
/// state; otherwise any state with `S >= D-` upstream or `D >= S+`
/// downstream.
pub fn check_admissible_interior(
    interior: &SdState,
    stationary: &SdState,
    capacity: f64,
    side: Side,
) -> bool {
    let tol = FLOW_REL_TOL * capacity;
    if interior.validate(capacity).is_err() {
        return false;
    }
    let Ok(regime) = stationary.classify(capacity) else {
        return false;
    };
    match side {
        Side::Upstream if regime == Regime::StrictlyOver => interior.approx_eq(stationary, tol),
        Side::Upstream => interior.supply >= stationary.demand - tol,
        Side::Downstream if regime == Regime::StrictlyUnder => interior.approx_eq(stationary, tol),
        Side::Downstream => interior.demand >= stationary.supply - tol,
    }
}

/// Exact solution of a Riemann problem with a closed-form merge model.
pub fn solve(problem: &RiemannProblem) -> Result<RiemannSolution> {
    let model = problem.model;
    let caps = problem.capacities();
    let demands = problem.demands();
    let supply = problem.supply();
    let fluxes = model.global_flux(demands, supply, caps)?;

    let q = fluxes.as_array();
    let mut stationary = [SdState::new(0.0, 0.0); 3];
    for a in 0..3 {
        stationary[a] = stationary_from_flux(q[a], &problem.initial[a], caps[a], Side::of_link(a))?;
    }

    let (interior, interior_unique) = match model {
        MergeModel::Fair => fair_interior(demands, supply, caps, &fluxes, &stationary),
        MergeModel::Constant(a) => {
            constant_interior(a.as_array(), demands, supply, caps, &fluxes, &stationary)
        }
        MergeModel::PriorityInvariant(_) | MergeModel::ConstantInvariant(_) => (stationary, [true; 3]),
        MergeModel::ScaledFair { .. } => return Err(Error::NoClosedForm(model.name())),
    };

    let tol = FLOW_REL_TOL * caps.iter().cloned().fold(0.0, f64::max);
    let local = model.local_flux(&interior[0], &interior[1], &interior[2], caps[2]);
    if local.max_abs_diff(&fluxes) > 1e3 * tol {
        return Err(Error::Inconsistent(format!(
            "local flux {local:?} at the interior states differs from the boundary fluxes {fluxes:?}"
        )));
    }

    let mut waves = [WaveFan {
        kind: WaveKind::None,
        rho_left: 0.0,
        rho_right: 0.0,
    }; 3];
    for a in 0..3 {
        let fd = &problem.diagrams[a];
        let rho_init = problem.initial[a].density(fd)?;
        let rho_stat = stationary[a].density(fd)?;
        waves[a] = match Side::of_link(a) {
            Side::Upstream => classify_wave(fd, rho_init, rho_stat)?,
            Side::Downstream => classify_wave(fd, rho_stat, rho_init)?,
        };
    }

    Ok(RiemannSolution {
        fluxes,
        stationary,
        interior,
        interior_unique,
        waves,
        region: model.region(demands, supply, caps),
    })
}

type Interior = ([SdState; 3], [bool; 3]);

fn fair_interior(
    demands: [f64; 2],
    s3: f64,
    caps: [f64; 3],
    fluxes: &FluxTriple,
    stationary: &[SdState; 3],
) -> Interior {
    let tol = FLOW_REL_TOL * caps.iter().cloned().fold(0.0, f64::max);
    let total = demands[0] + demands[1];
    let mut interior = *stationary;
    let mut unique = [true; 3];
    if total <= s3 + tol {
        if total >= s3 - tol {
            // Any supply in [S3, C3] passes all demands. With S3(0+) = S3 the
            // upstream demands may also be scaled up together.
            unique[2] = s3 >= caps[2] - tol;
            let scalable = total > tol && (0..2).all(|i| demands[i] <= tol || demands[i] < caps[i] - tol);
            unique[0] = !scalable;
            unique[1] = !scalable;
        }
        return (interior, unique);
    }
    for i in 0..2 {
        let j = 1 - i;
        let free = fluxes.upstream(i) >= demands[i] - tol;
        if free {
            // Link j is queued with D_j(0-) = C_j; the fair split of S3 gives
            // q_i = D_i for this interior demand.
            let d = (caps[j] * demands[i] / (s3 - demands[i])).min(caps[i]);
            interior[i] = SdState::under_critical(d, caps[i]);
        }
    }
    (interior, unique)
}

fn constant_interior(
    alpha: [f64; 2],
    demands: [f64; 2],
    s3: f64,
    caps: [f64; 3],
    fluxes: &FluxTriple,
    stationary: &[SdState; 3],
) -> Interior {
    let tol = FLOW_REL_TOL * caps.iter().cloned().fold(0.0, f64::max);
    let q = fluxes.as_array();
    let queued = [q[0] < demands[0] - tol, q[1] < demands[1] - tol];
    let mut interior = *stationary;
    let mut unique = [true; 3];

    // Downstream supply seen by the junction.
    let supply = if q[2] < s3 - tol {
        caps[2]
    } else {
        // A queued link k with a_k > 0 receives exactly a_k S3(0+).
        let pinned = (0..2)
            .find(|&k| queued[k] && alpha[k] > 0.0)
            .map(|k| q[k] / alpha[k]);
        match pinned {
            Some(s) => s.min(caps[2]),
            None => {
                let lower = (0..2)
                    .filter(|&i| !queued[i] && alpha[i] > 0.0)
                    .map(|i| demands[i] / alpha[i])
                    .fold(s3, f64::max)
                    .min(caps[2]);
                unique[2] = lower >= caps[2] - tol;
                lower
            }
        }
    };
    if q[2] >= s3 - tol {
        interior[2] = SdState::over_critical(caps[2], supply);
    }

    for i in 0..2 {
        if !queued[i] && alpha[i] * supply <= demands[i] + tol {
            // min(D_i(0-), a_i S3(0+)) = D_i holds for every D_i(0-) >= D_i.
            unique[i] = demands[i] >= caps[i] - tol;
        }
    }
    (interior, unique)
}
