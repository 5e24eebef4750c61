//! Traffic states in supply-demand space.

use std::fmt;

use serde::Serialize;

use crate::diagram::FundamentalDiagram;
use crate::error::{Error, Result};

/// Relative tolerance used whenever a flow is compared with a capacity.
pub const FLOW_REL_TOL: f64 = 1e-12;

/// `U = (D, S)`: maximum sending and receiving flow of a road section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdState {
    #[serde(rename = "D")]
    pub demand: f64,
    #[serde(rename = "S")]
    pub supply: f64,
}

/// Criticality of a state. Under-critical (UC) is `Critical | StrictlyUnder`,
/// over-critical (OC) is `Critical | StrictlyOver`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Regime {
    #[serde(rename = "critical")]
    Critical,
    /// SUC: `D < S = C`.
    #[serde(rename = "SUC")]
    StrictlyUnder,
    /// SOC: `S < D = C`.
    #[serde(rename = "SOC")]
    StrictlyOver,
}

impl Regime {
    pub fn is_under_critical(self) -> bool {
        matches!(self, Regime::Critical | Regime::StrictlyUnder)
    }

    pub fn is_over_critical(self) -> bool {
        matches!(self, Regime::Critical | Regime::StrictlyOver)
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::Critical => "critical",
            Regime::StrictlyUnder => "SUC",
            Regime::StrictlyOver => "SOC",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl SdState {
    pub const fn new(demand: f64, supply: f64) -> Self {
        SdState { demand, supply }
    }

    /// `(D, C)`, a state on the under-critical branch.
    pub const fn under_critical(demand: f64, capacity: f64) -> Self {
        SdState {
            demand,
            supply: capacity,
        }
    }

    /// `(C, S)`, a state on the over-critical branch.
    pub const fn over_critical(capacity: f64, supply: f64) -> Self {
        SdState {
            demand: capacity,
            supply,
        }
    }

    /// `(D(rho), S(rho))`.
    pub fn of_density(fd: &FundamentalDiagram, density: f64) -> Result<Self> {
        Ok(SdState {
            demand: fd.demand(density)?,
            supply: fd.supply(density)?,
        })
    }

    /// `q(U) = min(D, S)`.
    pub fn flux(&self) -> f64 {
        self.demand.min(self.supply)
    }

    /// Checks that the state lies on the supply-demand diagram of capacity `c`.
    pub fn validate(&self, capacity: f64) -> Result<()> {
        let tol = FLOW_REL_TOL * capacity;
        let on_diagram = self.demand >= -tol
            && self.supply >= -tol
            && self.demand <= capacity + tol
            && self.supply <= capacity + tol
            && (self.demand.max(self.supply) - capacity).abs() <= tol;
        if on_diagram {
            Ok(())
        } else {
            Err(Error::MalformedState {
                demand: self.demand,
                supply: self.supply,
                capacity,
            })
        }
    }

    pub fn classify(&self, capacity: f64) -> Result<Regime> {
        self.validate(capacity)?;
        let tol = FLOW_REL_TOL * capacity;
        let d_full = (self.demand - capacity).abs() <= tol;
        let s_full = (self.supply - capacity).abs() <= tol;
        Ok(match (d_full, s_full) {
            (true, true) => Regime::Critical,
            (false, _) => Regime::StrictlyUnder,
            (true, false) => Regime::StrictlyOver,
        })
    }

    /// The unique density realizing this state on `fd`.
    pub fn density(&self, fd: &FundamentalDiagram) -> Result<f64> {
        match self.classify(fd.capacity())? {
            Regime::Critical => Ok(fd.critical_density()),
            Regime::StrictlyUnder => fd.density_from_demand(self.demand),
            Regime::StrictlyOver => fd.density_from_supply(self.supply),
        }
    }

    /// Componentwise distance `max(|dD|, |dS|)`.
    pub fn distance(&self, other: &SdState) -> f64 {
        (self.demand - other.demand)
            .abs()
            .max((self.supply - other.supply).abs())
    }

    pub fn approx_eq(&self, other: &SdState, tol: f64) -> bool {
        self.distance(other) <= tol
    }
}

impl fmt::Display for SdState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4})", self.demand, self.supply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const C: f64 = 0.3365;

    #[test]
    fn state_of_density_values() {
        let main = FundamentalDiagram::del_castillo_mainline();
        let ramp = FundamentalDiagram::del_castillo_ramp();
        let u1 = SdState::of_density(&main, 0.35).unwrap();
        assert!(u1.approx_eq(&SdState::new(0.3131, 0.3365), 1e-4));
        let u2 = SdState::of_density(&ramp, 0.1).unwrap();
        assert!(u2.approx_eq(&SdState::new(0.0500, 0.0841), 1e-4));
        let uc = SdState::of_density(&main, main.critical_density()).unwrap();
        assert_eq!(uc, SdState::new(main.capacity(), main.capacity()));
        assert!(SdState::of_density(&ramp, 1.5).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(
            SdState::new(0.3131, C).classify(C).unwrap(),
            Regime::StrictlyUnder
        );
        assert_eq!(SdState::new(C, 0.2865).classify(C).unwrap(), Regime::StrictlyOver);
        assert_eq!(SdState::new(C, C).classify(C).unwrap(), Regime::Critical);
        assert!(Regime::Critical.is_under_critical() && Regime::Critical.is_over_critical());
        assert!(!Regime::StrictlyOver.is_under_critical());
    }

    #[test]
    fn off_diagram_states_are_malformed() {
        assert!(matches!(
            SdState::new(0.2, 0.3).classify(C),
            Err(Error::MalformedState { .. })
        ));
        assert!(SdState::new(0.4, C).classify(C).is_err());
        assert!(SdState::new(-0.1, C).classify(C).is_err());
    }

    #[test]
    fn flux_examples() {
        assert_eq!(SdState::new(0.3365, 0.2865).flux(), 0.2865);
        assert_eq!(SdState::new(0.0500, 0.0841).flux(), 0.0500);
        assert_eq!(SdState::new(C, C).flux(), C);
    }

    proptest! {
        #[test]
        fn flux_is_flow_and_regime_matches_branch(a in 0.0f64..1.0, ramp in any::<bool>()) {
            let fd = if ramp {
                FundamentalDiagram::del_castillo_ramp()
            } else {
                FundamentalDiagram::del_castillo_mainline()
            };
            let rho = a * fd.jam_density();
            let u = SdState::of_density(&fd, rho).unwrap();
            prop_assert_eq!(u.flux(), fd.flow(rho).unwrap());
            match u.classify(fd.capacity()).unwrap() {
                Regime::StrictlyUnder => prop_assert!(rho < fd.critical_density()),
                Regime::StrictlyOver => prop_assert!(rho > fd.critical_density()),
                Regime::Critical => {}
            }
        }
    }
}
