//! Merge flux models for a junction with two upstream links and one
//! downstream link.
//!
//! Every model has a *local* flux, evaluated on the states of the cells (or
//! interior states) touching the junction, and all but [`MergeModel::ScaledFair`]
//! have a closed-form *global* flux expressed in the initial upstream demands
//! and downstream supply of a Riemann problem. A model is invariant when the
//! two coincide.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::state::{SdState, FLOW_REL_TOL};

/// Distribution proportions `(a1, a2)` with `a1 + a2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportions([f64; 2]);

impl Proportions {
    pub fn new(a1: f64, a2: f64) -> Result<Self> {
        if !(a1.is_finite() && a2.is_finite()) {
            return Err(Error::InvalidModel("alpha must be finite".into()));
        }
        if (a1 + a2 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!(
                "alpha must sum to 1, got [{a1}, {a2}]"
            )));
        }
        Self::from_first(a1)
    }

    pub fn from_first(a1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a1) {
            return Err(Error::InvalidModel(format!(
                "alpha entries must lie in [0, 1], got {a1}"
            )));
        }
        Ok(Proportions([a1, 1.0 - a1]))
    }

    /// Capacity-proportional split `C_i / (C1 + C2)`.
    pub fn capacity_weighted(c1: f64, c2: f64) -> Result<Self> {
        Self::from_first(c1 / (c1 + c2))
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn as_array(&self) -> [f64; 2] {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MergeModel {
    /// Demand-proportional distribution of the downstream supply.
    Fair,
    /// `q_i = min(D_i, a_i S3)`.
    Constant(Proportions),
    /// `q_i = min(D_i, max(S3 - D_j, a_i S3))`.
    PriorityInvariant(Proportions),
    /// `q_i = min(D_i, a_i C3, max(S3 - D_j, a_i S3))`.
    ConstantInvariant(Proportions),
    /// Fair distribution of only `gamma * S3`. Simulation only.
    ScaledFair { gamma: f64 },
}

/// Junction fluxes: out-fluxes of the two upstream links and in-flux of the
/// downstream link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxTriple {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl FluxTriple {
    /// Builds a conserving triple, `q3 = q1 + q2`.
    pub fn new(q1: f64, q2: f64) -> Self {
        FluxTriple { q1, q2, q3: q1 + q2 }
    }

    pub fn upstream(&self, i: usize) -> f64 {
        [self.q1, self.q2][i]
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.q1, self.q2, self.q3]
    }

    pub fn max_abs_diff(&self, other: &FluxTriple) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for FluxTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.q1, self.q2, self.q3)
    }
}

/// Applies `rule(D_i, D_j, a_i)` to both upstream links.
fn pairwise(demands: [f64; 2], alpha: [f64; 2], rule: impl Fn(f64, f64, f64) -> f64) -> FluxTriple {
    FluxTriple::new(
        rule(demands[0], demands[1], alpha[0]),
        rule(demands[1], demands[0], alpha[1]),
    )
}

/// Fair distribution of `supply` over any number of upstream demands:
/// `q_i = min(1, S / sum D) D_i`, zero when every demand is zero.
pub fn fair_distribution(demands: &[f64], supply: f64) -> Vec<f64> {
    let total: f64 = demands.iter().sum();
    if total <= 0.0 {
        return vec![0.0; demands.len()];
    }
    let ratio = (supply / total).min(1.0);
    demands.iter().map(|d| ratio * d).collect()
}

/// `F = min(D1 + D2, S3)`, the largest junction throughput the upstream
/// demands and downstream supply allow.
pub fn optimal_total_flux(d1: f64, d2: f64, s3: f64) -> f64 {
    (d1 + d2).min(s3)
}

impl MergeModel {
    pub fn constant(a1: f64, a2: f64) -> Result<Self> {
        Ok(MergeModel::Constant(Proportions::new(a1, a2)?))
    }

    pub fn priority_invariant(a1: f64, a2: f64) -> Result<Self> {
        Ok(MergeModel::PriorityInvariant(Proportions::new(a1, a2)?))
    }

    pub fn constant_invariant(a1: f64, a2: f64) -> Result<Self> {
        Ok(MergeModel::ConstantInvariant(Proportions::new(a1, a2)?))
    }

    pub fn scaled_fair(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidModel(format!(
                "gamma must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(MergeModel::ScaledFair { gamma })
    }

    pub fn name(&self) -> &'static str {
        match self {
            MergeModel::Fair => "fair",
            MergeModel::Constant(_) => "constant",
            MergeModel::PriorityInvariant(_) => "priority_invariant",
            MergeModel::ConstantInvariant(_) => "constant_invariant",
            MergeModel::ScaledFair { .. } => "scaled_fair",
        }
    }

    pub fn alpha(&self) -> Option<Proportions> {
        match self {
            MergeModel::Constant(a) | MergeModel::PriorityInvariant(a) | MergeModel::ConstantInvariant(a) => {
                Some(*a)
            }
            _ => None,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self, MergeModel::ScaledFair { .. })
    }

    /// Local flux from the demands of the two upstream boundary states and
    /// the supply of the downstream one. `c3` is the downstream capacity.
    pub fn local(&self, demands: [f64; 2], supply: f64, c3: f64) -> FluxTriple {
        match *self {
            MergeModel::Fair => {
                let q = fair_distribution(&demands, supply);
                FluxTriple::new(q[0], q[1])
            }
            MergeModel::ScaledFair { gamma } => {
                let q = fair_distribution(&demands, gamma * supply);
                FluxTriple::new(q[0], q[1])
            }
            MergeModel::Constant(a) => pairwise(demands, a.0, |di, _, ai| di.min(ai * supply)),
            MergeModel::PriorityInvariant(a) => {
                pairwise(demands, a.0, |di, dj, ai| di.min((supply - dj).max(ai * supply)))
            }
            MergeModel::ConstantInvariant(a) => pairwise(demands, a.0, |di, dj, ai| {
                di.min(ai * c3).min((supply - dj).max(ai * supply))
            }),
        }
    }

    /// [`MergeModel::local`] on supply-demand states.
    pub fn local_flux(&self, up1: &SdState, up2: &SdState, down: &SdState, c3: f64) -> FluxTriple {
        self.local([up1.demand, up2.demand], down.supply, c3)
    }

    /// Closed-form Riemann fluxes in terms of initial demands `D1, D2`, the
    /// initial downstream supply `S3` and the three capacities.
    pub fn global_flux(&self, demands: [f64; 2], supply: f64, capacities: [f64; 3]) -> Result<FluxTriple> {
        check_riemann_inputs(demands, supply, capacities)?;
        let [c1, c2, c3] = capacities;
        let s3 = supply;
        Ok(match *self {
            MergeModel::Fair => {
                let share = [c1 / (c1 + c2), c2 / (c1 + c2)];
                pairwise(demands, share, |di, dj, wi| di.min((s3 - dj).max(wi * s3)))
            }
            MergeModel::Constant(a) | MergeModel::ConstantInvariant(a) => {
                pairwise(demands, a.0, |di, dj, ai| {
                    di.min(ai * c3).min((s3 - dj).max(ai * s3))
                })
            }
            MergeModel::PriorityInvariant(a) => {
                pairwise(demands, a.0, |di, dj, ai| di.min((s3 - dj).max(ai * s3)))
            }
            MergeModel::ScaledFair { .. } => return Err(Error::NoClosedForm(self.name())),
        })
    }

    /// Case of the closed-form solution that `(D1, D2, S3)` falls in. Points on
    /// a boundary between cases get the lower case number.
    pub fn region(&self, demands: [f64; 2], supply: f64, capacities: [f64; 3]) -> Option<Region> {
        let tol = FLOW_REL_TOL * capacities.iter().cloned().fold(0.0, f64::max);
        let [d1, d2] = demands;
        let s3 = supply;
        let total = d1 + d2;
        let [c1, c2, c3] = capacities;
        let name = self.name();
        let region = |case, link| {
            Some(Region {
                model: name,
                case,
                link,
            })
        };
        match *self {
            MergeModel::Fair => {
                let share = [c1 / (c1 + c2) * s3, c2 / (c1 + c2) * s3];
                if total < s3 - tol {
                    region(1, None)
                } else if (total - s3).abs() <= tol {
                    region(2, None)
                } else if demands[0] >= share[0] - tol && demands[1] >= share[1] - tol {
                    region(3, None)
                } else {
                    let free = if demands[0] < share[0] - tol { 1 } else { 2 };
                    region(4, Some(free))
                }
            }
            MergeModel::Constant(a) | MergeModel::ConstantInvariant(a) => {
                let a = a.0;
                if total < s3 - tol && d1 <= a[0] * c3 + tol && d2 <= a[1] * c3 + tol {
                    return region(1, None);
                }
                for i in 0..2 {
                    let j = 1 - i;
                    if demands[i] > a[i] * c3 + tol && demands[j] <= s3 - a[i] * c3 + tol {
                        return region(2, Some(i + 1));
                    }
                }
                if total >= s3 - tol {
                    for i in 0..2 {
                        let j = 1 - i;
                        if demands[i] >= s3 - a[j] * c3 - tol && demands[i] <= a[i] * s3 + tol {
                            return region(3, Some(i + 1));
                        }
                    }
                }
                if d1 >= a[0] * s3 - tol && d2 >= a[1] * s3 - tol {
                    return region(4, None);
                }
                region(0, None)
            }
            MergeModel::PriorityInvariant(a) => {
                let a = a.0;
                if total <= s3 + tol {
                    region(1, None)
                } else if d1 >= a[0] * s3 - tol && d2 >= a[1] * s3 - tol {
                    region(2, None)
                } else {
                    let free = if d1 < a[0] * s3 - tol { 1 } else { 2 };
                    region(3, Some(free))
                }
            }
            MergeModel::ScaledFair { .. } => None,
        }
    }
}

impl fmt::Display for MergeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MergeModel::ScaledFair { gamma } => write!(f, "scaled_fair(gamma={gamma})"),
            m => match m.alpha() {
                Some(a) => write!(f, "{}(alpha=[{}, {}])", m.name(), a.get(0), a.get(1)),
                None => f.write_str(m.name()),
            },
        }
    }
}

fn check_riemann_inputs(demands: [f64; 2], supply: f64, capacities: [f64; 3]) -> Result<()> {
    for (i, c) in capacities.iter().enumerate() {
        if !(c.is_finite() && *c > 0.0) {
            return Err(Error::InvalidNetwork(format!(
                "capacity of link {} must be positive",
                i + 1
            )));
        }
    }
    let tol = FLOW_REL_TOL;
    for i in 0..2 {
        let (d, c) = (demands[i], capacities[i]);
        if !(d >= -tol * c && d <= c * (1.0 + tol)) {
            return Err(Error::InfeasibleDemand {
                demand: d,
                capacity: c,
            });
        }
    }
    let c3 = capacities[2];
    if !(supply >= -tol * c3 && supply <= c3 * (1.0 + tol)) {
        return Err(Error::InfeasibleSupply { supply, capacity: c3 });
    }
    Ok(())
}

/// A case of a model's closed-form flux solution. `link` names the distinguished
/// upstream link `i` (1-based) in cases stated for "i, j = 1 or 2".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Region {
    pub model: &'static str,
    pub case: u8,
    pub link: Option<usize>,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.model, self.case)?;
        if let Some(i) = self.link {
            write!(f, "[i={i}]")?;
        }
        Ok(())
    }
}

/// A sampled input on which local and global fluxes differ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceWitness {
    pub demands: [f64; 2],
    pub supply: f64,
    pub local: FluxTriple,
    pub global: FluxTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub invariant: bool,
    pub samples: usize,
    pub mismatches: usize,
    /// First sampled mismatch.
    pub witness: Option<InvarianceWitness>,
    /// Solution cases in which mismatches were seen, sorted.
    pub mismatch_regions: Vec<String>,
}

/// Samples `(D1, D2, S3)` uniformly from `[0, C1] x [0, C2] x [0, C3]` and
/// compares local with global fluxes to 1e-12. Reproducible for a given seed.
pub fn is_invariant(
    model: &MergeModel,
    capacities: [f64; 3],
    samples: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    if !model.has_closed_form() {
        return Err(Error::NoClosedForm(model.name()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut witness = None;
    let mut mismatches = 0;
    let mut regions = std::collections::BTreeSet::new();
    for _ in 0..samples {
        let demands = [
            rng.gen_range(0.0..=capacities[0]),
            rng.gen_range(0.0..=capacities[1]),
        ];
        let supply = rng.gen_range(0.0..=capacities[2]);
        let local = model.local(demands, supply, capacities[2]);
        let global = model.global_flux(demands, supply, capacities)?;
        if local.max_abs_diff(&global) > 1e-12 {
            mismatches += 1;
            witness.get_or_insert(InvarianceWitness {
                demands,
                supply,
                local,
                global,
            });
            if let Some(r) = model.region(demands, supply, capacities) {
                regions.insert(r.to_string());
            }
        }
    }
    Ok(InvarianceReport {
        invariant: mismatches == 0,
        samples,
        mismatches,
        witness,
        mismatch_regions: regions.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const C1: f64 = 0.3365;
    const C2: f64 = 0.0841;
    const C3: f64 = 0.3365;
    const CAPS: [f64; 3] = [C1, C2, C3];

    #[test]
    fn proportions_validation() {
        assert!(Proportions::new(0.7, 0.7)
            .unwrap_err()
            .to_string()
            .contains("alpha must sum to 1"));
        assert!(Proportions::new(1.2, -0.2).is_err());
        let a = Proportions::new(0.8, 0.2).unwrap();
        assert_eq!(a.get(0) + a.get(1), 1.0);
        assert!(MergeModel::scaled_fair(0.0).is_err());
        assert!(MergeModel::scaled_fair(1.1).is_err());
    }

    #[test]
    fn fair_local_first_step_value() {
        let q = MergeModel::Fair.local([0.3131, 0.0500], 0.3365, C3);
        assert!((q.q2 - 0.0463).abs() < 1e-4);
        assert_eq!(q.q3, q.q1 + q.q2);
    }

    #[test]
    fn zero_demand_gives_zero_flux() {
        let models = [
            MergeModel::Fair,
            MergeModel::constant(0.5, 0.5).unwrap(),
            MergeModel::priority_invariant(0.8, 0.2).unwrap(),
            MergeModel::constant_invariant(0.5, 0.5).unwrap(),
            MergeModel::scaled_fair(0.9).unwrap(),
        ];
        for m in models {
            assert_eq!(
                m.local([0.0, 0.0], 0.2, C3),
                FluxTriple {
                    q1: 0.0,
                    q2: 0.0,
                    q3: 0.0
                },
                "{m}"
            );
        }
    }

    #[test]
    fn constant_local_value() {
        let q = MergeModel::constant(0.5, 0.5)
            .unwrap()
            .local([0.3, 0.05], 0.3365, C3);
        assert!((q.q1 - 0.16825).abs() < 1e-15);
        assert_eq!(q.q2, 0.05);
        assert!((q.q3 - 0.21825).abs() < 1e-15);
    }

    #[test]
    fn scaled_fair_uses_fraction_of_supply() {
        let q = MergeModel::scaled_fair(0.9).unwrap().local([0.3, 0.1], 0.3, C3);
        assert!((q.q3 - 0.27).abs() < 1e-15);
        assert!((q.q1 - 0.2025).abs() < 1e-15);
        assert!(matches!(
            MergeModel::scaled_fair(0.9)
                .unwrap()
                .global_flux([0.1, 0.01], 0.2, CAPS),
            Err(Error::NoClosedForm("scaled_fair"))
        ));
    }

    #[test]
    fn fair_global_values() {
        let q = MergeModel::Fair
            .global_flux([0.3131, 0.05], 0.3365, CAPS)
            .unwrap();
        assert!((q.q1 - 0.2865).abs() < 1e-12 && q.q2 == 0.05 && (q.q3 - 0.3365).abs() < 1e-15);

        let q = MergeModel::Fair.global_flux([0.1, 0.02], 0.3365, CAPS).unwrap();
        assert_eq!((q.q1, q.q2), (0.1, 0.02));
        assert!((q.q3 - 0.12).abs() < 1e-15);

        let q = MergeModel::Fair
            .global_flux([0.3365, 0.0841], 0.3365, CAPS)
            .unwrap();
        assert!((q.q1 - 0.2692).abs() < 1e-4 && (q.q2 - 0.0673).abs() < 1e-4);
        assert!((q.q3 - 0.3365).abs() < 1e-15);
    }

    #[test]
    fn global_flux_rejects_out_of_range_inputs() {
        assert!(matches!(
            MergeModel::Fair.global_flux([0.4, 0.0], 0.2, CAPS),
            Err(Error::InfeasibleDemand { .. })
        ));
        assert!(matches!(
            MergeModel::Fair.global_flux([0.1, 0.0], 0.4, CAPS),
            Err(Error::InfeasibleSupply { .. })
        ));
    }

    #[test]
    fn optimal_total_flux_values() {
        assert_eq!(optimal_total_flux(0.3131, 0.05, 0.3365), 0.3365);
        assert_eq!(optimal_total_flux(0.0, 0.0, 0.2), 0.0);
        assert!((optimal_total_flux(0.1, 0.02, 0.3365) - 0.12).abs() < 1e-15);
    }

    #[test]
    fn fair_distribution_many_links() {
        let q = fair_distribution(&[0.1, 0.2, 0.3], 0.3);
        assert!((q[0] - 0.05).abs() < 1e-15 && (q[2] - 0.15).abs() < 1e-15);
        assert_eq!(fair_distribution(&[0.1, 0.1], 1.0), vec![0.1, 0.1]);
        assert_eq!(fair_distribution(&[0.0, 0.0, 0.0], 1.0), vec![0.0; 3]);
    }

    #[test]
    fn invariance_classification() {
        let pi = MergeModel::priority_invariant(0.8, 0.2).unwrap();
        assert!(is_invariant(&pi, CAPS, 10_000, 7).unwrap().invariant);
        let ci = MergeModel::constant_invariant(0.5, 0.5).unwrap();
        assert!(is_invariant(&ci, CAPS, 10_000, 7).unwrap().invariant);

        let report = is_invariant(&MergeModel::Fair, CAPS, 10_000, 7).unwrap();
        assert!(!report.invariant);
        let w = report.witness.unwrap();
        assert!(w.demands[0] + w.demands[1] > w.supply);
        // Only one upstream link congested: D1 + D2 > S3 and D_i <= C_i S3 / (C1 + C2).
        assert!(report.mismatch_regions.iter().any(|r| r.starts_with("fair-4")));
        assert!(report
            .mismatch_regions
            .iter()
            .all(|r| r.starts_with("fair-3") || r.starts_with("fair-4")));

        let constant = MergeModel::constant(0.5, 0.5).unwrap();
        assert!(!is_invariant(&constant, CAPS, 10_000, 7).unwrap().invariant);
        assert!(is_invariant(&MergeModel::scaled_fair(0.9).unwrap(), CAPS, 10, 7).is_err());
    }

    #[test]
    fn absolute_priority() {
        let m = MergeModel::priority_invariant(1.0, 0.0).unwrap();
        for &(d1, d2, s3) in &[(0.3, 0.05, 0.2), (0.1, 0.08, 0.3), (0.25, 0.08, 0.3)] {
            let q = m.global_flux([d1, d2], s3, CAPS).unwrap();
            assert_eq!(q.q1, d1.min(s3));
            assert_eq!(q.q2, d2.min((s3 - d1).max(0.0)));
        }
    }

    #[test]
    fn ramp_metering_capacity_waste() {
        let m = MergeModel::constant_invariant(0.5, 0.5).unwrap();
        // The ramp must be able to carry a2 C3 for the metering rate to reach it.
        let caps = [C1, 0.2, C1];
        let d2 = 0.3 * 0.5 * C1;
        let low = m.global_flux([C1, d2], C1, caps).unwrap();
        assert!((low.q3 - (0.5 * C1 + d2)).abs() < 1e-15);
        assert!(low.q3 < C1);
        let high = m.global_flux([C1, 0.5 * C1], C1, caps).unwrap();
        assert!((high.q3 - C1).abs() < 1e-15);
    }

    #[test]
    fn constant_suboptimal_witness() {
        let m = MergeModel::constant(0.5, 0.5).unwrap();
        // D1 > a1 C3 and D2 < S3 - a1 C3.
        let (d1, d2, s3) = (0.3, 0.05, 0.3365);
        let q = m.global_flux([d1, d2], s3, CAPS).unwrap();
        assert!((q.q3 - (0.5 * C3 + d2)).abs() < 1e-15);
        assert!(q.q3 < optimal_total_flux(d1, d2, s3));
        assert_eq!(
            m.region([d1, d2], s3, CAPS).unwrap().to_string(),
            "constant-2[i=1]"
        );
    }

    #[test]
    fn region_labels() {
        let r = MergeModel::Fair.region([0.3131, 0.05], 0.3365, CAPS).unwrap();
        assert_eq!((r.case, r.link), (4, Some(2)));
        assert_eq!(
            MergeModel::Fair.region([0.1, 0.02], 0.3365, CAPS).unwrap().case,
            1
        );
        assert_eq!(
            MergeModel::Fair.region([0.3, 0.0365], 0.3365, CAPS).unwrap().case,
            2
        );
        assert_eq!(
            MergeModel::Fair
                .region([0.3365, 0.0841], 0.3365, CAPS)
                .unwrap()
                .case,
            3
        );
        assert!(MergeModel::scaled_fair(0.5)
            .unwrap()
            .region([0.1, 0.0], 0.1, CAPS)
            .is_none());
    }

    fn closed_form_model() -> impl Strategy<Value = MergeModel> {
        prop_oneof![
            Just(MergeModel::Fair),
            (0.0f64..=1.0).prop_map(|a| MergeModel::Constant(Proportions::from_first(a).unwrap())),
            (0.0f64..=1.0).prop_map(|a| MergeModel::PriorityInvariant(Proportions::from_first(a).unwrap())),
            (0.0f64..=1.0).prop_map(|a| MergeModel::ConstantInvariant(Proportions::from_first(a).unwrap())),
        ]
    }

    fn inputs() -> impl Strategy<Value = ([f64; 3], [f64; 2], f64)> {
        (
            0.05f64..1.0,
            0.05f64..1.0,
            0.05f64..1.0,
            0.0f64..=1.0,
            0.0f64..=1.0,
            0.0f64..=1.0,
        )
            .prop_map(|(c1, c2, c3, a, b, s)| ([c1, c2, c3], [a * c1, b * c2], s * c3))
    }

    /// Fluxes written case by case as derived.
    fn piecewise(model: &MergeModel, d: [f64; 2], s3: f64, caps: [f64; 3]) -> FluxTriple {
        let [c1, c2, c3] = caps;
        let region = model.region(d, s3, caps).unwrap();
        let by_link = |i: usize, qi: f64, qj: f64| {
            if i == 1 {
                FluxTriple::new(qi, qj)
            } else {
                FluxTriple::new(qj, qi)
            }
        };
        match model {
            MergeModel::Fair => {
                let w = [c1 / (c1 + c2), c2 / (c1 + c2)];
                match region.case {
                    1 | 2 => FluxTriple::new(d[0], d[1]),
                    3 => FluxTriple::new(w[0] * s3, w[1] * s3),
                    4 => {
                        let i = region.link.unwrap();
                        by_link(i, d[i - 1], s3 - d[i - 1])
                    }
                    _ => unreachable!(),
                }
            }
            MergeModel::Constant(a) | MergeModel::ConstantInvariant(a) => match region.case {
                1 => FluxTriple::new(d[0], d[1]),
                2 => {
                    let i = region.link.unwrap();
                    by_link(i, a.get(i - 1) * c3, d[2 - i])
                }
                3 => {
                    let i = region.link.unwrap();
                    by_link(i, d[i - 1], s3 - d[i - 1])
                }
                4 => FluxTriple::new(a.get(0) * s3, a.get(1) * s3),
                c => panic!("unclassified case {c} for {d:?} {s3}"),
            },
            MergeModel::PriorityInvariant(a) => match region.case {
                1 => FluxTriple::new(d[0], d[1]),
                2 => FluxTriple::new(a.get(0) * s3, a.get(1) * s3),
                3 => {
                    let i = region.link.unwrap();
                    by_link(i, d[i - 1], s3 - d[i - 1])
                }
                _ => unreachable!(),
            },
            MergeModel::ScaledFair { .. } => unreachable!(),
        }
    }

    #[test]
    fn closed_forms_match_case_definitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let models = [
            MergeModel::Fair,
            MergeModel::constant(0.5, 0.5).unwrap(),
            MergeModel::constant(0.9, 0.1).unwrap(),
            MergeModel::priority_invariant(0.8, 0.2).unwrap(),
            MergeModel::constant_invariant(0.5, 0.5).unwrap(),
            MergeModel::constant_invariant(0.2, 0.8).unwrap(),
        ];
        for model in models {
            for _ in 0..10_000 {
                let d = [rng.gen_range(0.0..=C1), rng.gen_range(0.0..=C2)];
                let s3 = rng.gen_range(0.0..=C3);
                let closed = model.global_flux(d, s3, CAPS).unwrap();
                let cases = piecewise(&model, d, s3, CAPS);
                assert!(
                    closed.max_abs_diff(&cases) < 1e-12,
                    "{model} {d:?} {s3}: {closed} vs {cases}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn conservation_and_bounds((caps, d, s3) in inputs(), model in closed_form_model()) {
            let tol = 1e-12;
            for q in [model.global_flux(d, s3, caps).unwrap(), model.local(d, s3, caps[2])] {
                prop_assert_eq!(q.q3, q.q1 + q.q2);
                prop_assert!(q.q1 >= 0.0 && q.q2 >= 0.0);
                prop_assert!(q.q1 <= d[0] + tol && q.q2 <= d[1] + tol);
                prop_assert!(q.q3 <= s3 + tol);
            }
        }

        #[test]
        fn fair_is_optimal_and_matches_capacity_priority((caps, d, s3) in inputs()) {
            let fair = MergeModel::Fair.global_flux(d, s3, caps).unwrap();
            prop_assert!((fair.q3 - optimal_total_flux(d[0], d[1], s3)).abs() <= 1e-12);
            let pi = MergeModel::PriorityInvariant(Proportions::capacity_weighted(caps[0], caps[1]).unwrap());
            let pi = pi.global_flux(d, s3, caps).unwrap();
            prop_assert!(pi.max_abs_diff(&fair) <= 1e-12);
        }

        #[test]
        fn priority_invariant_is_optimal((caps, d, s3) in inputs(), a in 0.0f64..=1.0) {
            let m = MergeModel::PriorityInvariant(Proportions::from_first(a).unwrap());
            let q = m.global_flux(d, s3, caps).unwrap();
            prop_assert!((q.q3 - optimal_total_flux(d[0], d[1], s3)).abs() <= 1e-12);
        }
    }
}
