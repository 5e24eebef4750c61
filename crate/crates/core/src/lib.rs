//! Kinematic-wave merge junctions in supply-demand space.
//!
//! The crate solves the Riemann problem at a junction where two upstream
//! links merge into one downstream link, for several distribution schemes,
//! and simulates the same junction with a Godunov (cell transmission)
//! discretization so the two can be compared.

pub mod analysis;
pub mod ctm;
pub mod diagram;
pub mod error;
pub mod merge;
pub mod riemann;
pub mod state;

pub use analysis::{
    asymptotic_states, compare_to_riemann, convergence_study, l1_difference, region_table, AsymptoticStates,
    ComparisonReport, RegionRow, StudyMode, StudyRow, StudyTable, Tolerances,
};
pub use ctm::{
    DemandBoundary, JunctionRecord, Link, MergeNetwork, Snapshot, StepRecord, SupplyBoundary, Trajectory,
    DEFAULT_SNAPSHOTS,
};
pub use diagram::{Family, FundamentalDiagram};
pub use error::{Error, Result};
pub use merge::{
    fair_distribution, is_invariant, optimal_total_flux, FluxTriple, InvarianceReport, InvarianceWitness,
    MergeModel, Proportions, Region,
};
pub use riemann::{
    check_admissible_interior, check_admissible_stationary, classify_wave, fixed_point_oracle, oracle_fluxes,
    solve, stationary_from_flux, RiemannProblem, RiemannSolution, Side, WaveFan, WaveKind,
};
pub use state::{Regime, SdState};
