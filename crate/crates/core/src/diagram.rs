//! Unimodal flow-density relations and the demand/supply functions derived
//! from them.
//!
//! A [`FundamentalDiagram`] caches its critical density and capacity at
//! construction. Every regime test elsewhere in the crate compares against
//! that cached capacity, so the maximization runs exactly once per diagram.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack accepted on the density domain before a value is rejected.
/// Explicit schemes land a few ulps outside `[0, rho_j]` without being wrong.
pub(crate) const DOMAIN_SLACK: f64 = 1e-12;

/// Densities below this are evaluated by the small-density limit `Q = v_f rho`
/// instead of the del Castillo closed form, which divides by `rho`.
const DEL_CASTILLO_FLOOR: f64 = 1e-12;

const GOLDEN_TOL: f64 = 1e-10;

/// Shape of a flow-density relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// Two-lane normalized maximum-sensitivity diagram, `rho` in `[0, 2]`,
    /// free-flow speed 1.
    DelCastilloMainline,
    /// One-lane on-ramp version with half the free-flow speed, `rho` in `[0, 1]`.
    DelCastilloRamp,
    /// `Q = min(v_f rho, w (rho_j - rho))`.
    Triangular {
        free_flow_speed: f64,
        wave_speed: f64,
        jam_density: f64,
    },
    /// `Q = v_f rho (1 - rho / rho_j)`.
    Greenshields { free_flow_speed: f64, jam_density: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::DelCastilloMainline => "del_castillo_mainline",
            Family::DelCastilloRamp => "del_castillo_ramp",
            Family::Triangular { .. } => "triangular",
            Family::Greenshields { .. } => "greenshields",
        }
    }
}

/// A validated fundamental diagram with cached capacity point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalDiagram {
    family: Family,
    capacity: f64,
    critical_density: f64,
    jam_density: f64,
    free_flow_speed: f64,
}

fn positive_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidDiagram(format!(
            "{name} must be finite and positive, got {value}"
        )))
    }
}

impl FundamentalDiagram {
    pub fn new(family: Family) -> Result<Self> {
        let (jam_density, free_flow_speed) = match family {
            Family::DelCastilloMainline => (2.0, 1.0),
            Family::DelCastilloRamp => (1.0, 0.5),
            Family::Triangular {
                free_flow_speed,
                wave_speed,
                jam_density,
            } => {
                positive_finite("free_flow_speed", free_flow_speed)?;
                positive_finite("wave_speed", wave_speed)?;
                positive_finite("jam_density", jam_density)?;
                (jam_density, free_flow_speed)
            }
            Family::Greenshields {
                free_flow_speed,
                jam_density,
            } => {
                positive_finite("free_flow_speed", free_flow_speed)?;
                positive_finite("jam_density", jam_density)?;
                (jam_density, free_flow_speed)
            }
        };
        let mut fd = FundamentalDiagram {
            family,
            capacity: 0.0,
            critical_density: 0.0,
            jam_density,
            free_flow_speed,
        };
        let (critical_density, capacity) = fd.maximize();
        fd.critical_density = critical_density;
        fd.capacity = capacity;
        if !(critical_density > 0.0 && critical_density < jam_density && capacity > 0.0) {
            return Err(Error::InvalidDiagram(format!(
                "capacity point ({critical_density}, {capacity}) is degenerate"
            )));
        }
        Ok(fd)
    }

    pub fn del_castillo_mainline() -> Self {
        Self::new(Family::DelCastilloMainline).expect("built-in diagram is valid")
    }

    pub fn del_castillo_ramp() -> Self {
        Self::new(Family::DelCastilloRamp).expect("built-in diagram is valid")
    }

    pub fn triangular(free_flow_speed: f64, wave_speed: f64, jam_density: f64) -> Result<Self> {
        Self::new(Family::Triangular {
            free_flow_speed,
            wave_speed,
            jam_density,
        })
    }

    pub fn greenshields(free_flow_speed: f64, jam_density: f64) -> Result<Self> {
        Self::new(Family::Greenshields {
            free_flow_speed,
            jam_density,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn critical_density(&self) -> f64 {
        self.critical_density
    }

    pub fn jam_density(&self) -> f64 {
        self.jam_density
    }

    pub fn free_flow_speed(&self) -> f64 {
        self.free_flow_speed
    }

    /// Largest characteristic speed magnitude on `[0, rho_j]`. Equals the
    /// free-flow speed except for triangular diagrams with `w > v_f`.
    pub fn max_wave_speed(&self) -> f64 {
        match self.family {
            Family::Triangular {
                free_flow_speed,
                wave_speed,
                ..
            } => free_flow_speed.max(wave_speed),
            _ => self.free_flow_speed,
        }
    }

    /// `(rho_c, C)`, the argmax and max of `Q` on `[0, rho_j]`.
    pub fn locate_capacity(&self) -> (f64, f64) {
        (self.critical_density, self.capacity)
    }

    /// Every built-in family is concave on its whole domain.
    pub fn is_concave(&self) -> bool {
        true
    }

    fn check_density(&self, density: f64) -> Result<f64> {
        let slack = DOMAIN_SLACK * self.jam_density;
        if density.is_nan() || density < -slack || density > self.jam_density + slack {
            return Err(Error::DensityOutOfRange {
                density,
                jam_density: self.jam_density,
            });
        }
        Ok(density.clamp(0.0, self.jam_density))
    }

    /// `Q(rho)`.
    pub fn flow(&self, density: f64) -> Result<f64> {
        let rho = self.check_density(density)?;
        Ok(self.eval(rho))
    }

    /// `D(rho) = Q(min(rho, rho_c))`.
    pub fn demand(&self, density: f64) -> Result<f64> {
        let rho = self.check_density(density)?;
        Ok(if rho < self.critical_density {
            self.eval(rho)
        } else {
            self.capacity
        })
    }

    /// `S(rho) = Q(max(rho, rho_c))`.
    pub fn supply(&self, density: f64) -> Result<f64> {
        let rho = self.check_density(density)?;
        Ok(if rho > self.critical_density {
            self.eval(rho)
        } else {
            self.capacity
        })
    }

    /// Inverse of the demand function on the under-critical branch `[0, rho_c]`.
    pub fn density_from_demand(&self, demand: f64) -> Result<f64> {
        let c = self.capacity;
        if demand.is_nan() || demand > c * (1.0 + DOMAIN_SLACK) || demand < -DOMAIN_SLACK * c {
            return Err(Error::InfeasibleDemand { demand, capacity: c });
        }
        if demand <= 0.0 {
            return Ok(0.0);
        }
        if demand >= c * (1.0 - DOMAIN_SLACK) {
            return Ok(self.critical_density);
        }
        // Q increases on [0, rho_c].
        Ok(self.bisect(0.0, self.critical_density, |q| q < demand))
    }

    /// Inverse of the supply function on the over-critical branch `[rho_c, rho_j]`.
    pub fn density_from_supply(&self, supply: f64) -> Result<f64> {
        let c = self.capacity;
        if supply.is_nan() || supply > c * (1.0 + DOMAIN_SLACK) || supply < -DOMAIN_SLACK * c {
            return Err(Error::InfeasibleSupply { supply, capacity: c });
        }
        if supply <= 0.0 {
            return Ok(self.jam_density);
        }
        if supply >= c * (1.0 - DOMAIN_SLACK) {
            return Ok(self.critical_density);
        }
        // Q decreases on [rho_c, rho_j].
        Ok(self.bisect(self.critical_density, self.jam_density, |q| q > supply))
    }

    /// Bisection on `[lo, hi]`, moving `lo` up while `go_right(Q(mid))` holds.
    fn bisect(&self, mut lo: f64, mut hi: f64, go_right: impl Fn(f64) -> bool) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if go_right(self.eval(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Characteristic speed `Q'(rho)`; one-sided limits at the domain ends.
    pub fn char_speed(&self, density: f64) -> Result<f64> {
        let rho = self.check_density(density)?;
        if rho == self.critical_density {
            // The cached argmax of Q.
            return Ok(0.0);
        }
        Ok(match self.family {
            Family::DelCastilloMainline => del_castillo_slope(rho, 2.0, 1.0),
            Family::DelCastilloRamp => del_castillo_slope(rho, 1.0, 0.5),
            Family::Triangular {
                free_flow_speed,
                wave_speed,
                ..
            } => {
                if rho < self.critical_density {
                    free_flow_speed
                } else if rho > self.critical_density {
                    -wave_speed
                } else {
                    0.0
                }
            }
            Family::Greenshields {
                free_flow_speed,
                jam_density,
            } => free_flow_speed * (1.0 - 2.0 * rho / jam_density),
        })
    }

    /// Unchecked `Q` on an already clamped density.
    fn eval(&self, rho: f64) -> f64 {
        match self.family {
            Family::DelCastilloMainline => del_castillo(rho, 2.0, 1.0),
            Family::DelCastilloRamp => del_castillo(rho, 1.0, 0.5),
            Family::Triangular {
                free_flow_speed,
                wave_speed,
                jam_density,
            } => (free_flow_speed * rho).min(wave_speed * (jam_density - rho)),
            Family::Greenshields {
                free_flow_speed,
                jam_density,
            } => free_flow_speed * rho * (1.0 - rho / jam_density),
        }
    }

    fn maximize(&self) -> (f64, f64) {
        match self.family {
            Family::Triangular {
                free_flow_speed,
                wave_speed,
                jam_density,
            } => {
                let rho_c = wave_speed * jam_density / (free_flow_speed + wave_speed);
                (rho_c, free_flow_speed * rho_c)
            }
            Family::Greenshields {
                free_flow_speed,
                jam_density,
            } => (0.5 * jam_density, 0.25 * free_flow_speed * jam_density),
            Family::DelCastilloMainline | Family::DelCastilloRamp => {
                let rho_c = golden_section_max(|r| self.eval(r), 0.0, self.jam_density, GOLDEN_TOL);
                (rho_c, self.eval(rho_c))
            }
        }
    }
}

/// `Q(rho) = v rho {1 - exp[1 - exp((a / rho - 1) / 4)]}`; `a` is the jam
/// density and `v` the free-flow speed.
fn del_castillo(rho: f64, a: f64, v: f64) -> f64 {
    if rho < DEL_CASTILLO_FLOOR {
        return v * rho;
    }
    let g = 0.25 * (a / rho - 1.0);
    v * rho * (1.0 - (1.0 - g.exp()).exp())
}

fn del_castillo_slope(rho: f64, a: f64, v: f64) -> f64 {
    if rho < DEL_CASTILLO_FLOOR {
        return v;
    }
    let g = 0.25 * (a / rho - 1.0);
    let eg = g.exp();
    let e = (1.0 - eg).exp();
    // exp(1 - e^g + g) stays finite where e * e^g would be 0 * inf.
    let e_eg = (1.0 - eg + g).exp();
    v * (1.0 - e - e_eg * a / (4.0 * rho))
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_families() -> Vec<FundamentalDiagram> {
        vec![
            FundamentalDiagram::del_castillo_mainline(),
            FundamentalDiagram::del_castillo_ramp(),
            FundamentalDiagram::triangular(1.0, 0.2, 1.2).unwrap(),
            FundamentalDiagram::greenshields(1.5, 0.8).unwrap(),
        ]
    }

    #[test]
    fn mainline_flow_values() {
        let fd = FundamentalDiagram::del_castillo_mainline();
        assert!((fd.flow(0.35).unwrap() - 0.3131).abs() < 1e-4);
        assert_eq!(fd.flow(0.0).unwrap(), 0.0);
        assert!(fd.flow(2.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn ramp_flow_value() {
        let fd = FundamentalDiagram::del_castillo_ramp();
        assert!((fd.flow(0.1).unwrap() - 0.0500).abs() < 1e-4);
    }

    #[test]
    fn out_of_range_density_is_rejected() {
        let fd = FundamentalDiagram::del_castillo_mainline();
        assert!(matches!(fd.flow(2.1), Err(Error::DensityOutOfRange { .. })));
        assert!(matches!(fd.demand(-0.01), Err(Error::DensityOutOfRange { .. })));
        assert!(fd.supply(f64::NAN).is_err());
    }

    #[test]
    fn capacity_points() {
        let (rc, c) = FundamentalDiagram::del_castillo_mainline().locate_capacity();
        assert!((rc - 0.4876).abs() < 2e-4);
        assert!((c - 0.3365).abs() < 1e-4);

        let (rc2, c2) = FundamentalDiagram::del_castillo_ramp().locate_capacity();
        assert!((rc2 - 0.2438).abs() < 1e-4);
        assert!((c2 - 0.0841).abs() < 1e-4);
        // The ramp diagram is the mainline one scaled by (1/2, 1/4).
        assert!((rc2 - rc / 2.0).abs() < 1e-9);
        assert!((c2 - c / 4.0).abs() < 1e-12);

        let tri = FundamentalDiagram::triangular(1.0, 0.2, 1.2).unwrap();
        let (rc, c) = tri.locate_capacity();
        assert!((rc - 0.2).abs() < 1e-15);
        assert!((c - 0.2).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters() {
        assert!(FundamentalDiagram::triangular(0.0, 0.2, 1.2).is_err());
        assert!(FundamentalDiagram::greenshields(1.0, f64::INFINITY).is_err());
        assert!(FundamentalDiagram::triangular(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn demand_and_supply_values() {
        let fd = FundamentalDiagram::del_castillo_mainline();
        assert!((fd.demand(0.35).unwrap() - 0.3131).abs() < 1e-4);
        assert_eq!(fd.demand(0.8277).unwrap(), fd.capacity());
        assert_eq!(fd.demand(0.0).unwrap(), 0.0);
        assert_eq!(fd.supply(0.35).unwrap(), fd.capacity());
        assert!((fd.supply(0.8277).unwrap() - 0.2865).abs() < 1e-3);
        assert!(fd.supply(2.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn inversions_reproduce_reported_densities() {
        let main = FundamentalDiagram::del_castillo_mainline();
        let ramp = FundamentalDiagram::del_castillo_ramp();
        assert!((ramp.density_from_demand(0.0587).unwrap() - 0.1179).abs() < 1e-3);
        assert!((main.density_from_demand(0.3131).unwrap() - 0.35).abs() < 1e-3);
        assert_eq!(main.density_from_demand(0.0).unwrap(), 0.0);
        assert!((main.density_from_supply(0.2865).unwrap() - 0.8277).abs() < 1e-3);
        assert_eq!(
            main.density_from_supply(main.capacity()).unwrap(),
            main.critical_density()
        );
        assert_eq!(
            main.density_from_demand(main.capacity()).unwrap(),
            main.critical_density()
        );
        assert_eq!(main.density_from_supply(0.0).unwrap(), 2.0);
    }

    #[test]
    fn infeasible_inversions() {
        let fd = FundamentalDiagram::del_castillo_ramp();
        assert!(matches!(
            fd.density_from_demand(0.2),
            Err(Error::InfeasibleDemand { .. })
        ));
        assert!(matches!(
            fd.density_from_supply(0.2),
            Err(Error::InfeasibleSupply { .. })
        ));
    }

    #[test]
    fn inversions_match_closed_forms() {
        // Triangular: rho = D / v_f on the free branch, rho_j - S / w on the congested one.
        let tri = FundamentalDiagram::triangular(1.0, 0.2, 1.2).unwrap();
        // Greenshields: rho = rho_j (1 -/+ sqrt(1 - 4 q / (v_f rho_j))) / 2.
        let gs = FundamentalDiagram::greenshields(1.5, 0.8).unwrap();
        for k in 0..=20 {
            let frac = k as f64 / 20.0;
            let q = frac * tri.capacity();
            assert!((tri.density_from_demand(q).unwrap() - q).abs() < 1e-12);
            assert!((tri.density_from_supply(q).unwrap() - (1.2 - q / 0.2)).abs() < 1e-12);

            let q = frac * gs.capacity();
            let root = (1.0 - 4.0 * q / (1.5 * 0.8)).max(0.0).sqrt();
            let lo = 0.4 * (1.0 - root);
            let hi = 0.4 * (1.0 + root);
            // The closed form itself loses digits near the capacity point.
            let tol = if k == 20 { 1e-12 } else { 1e-7 };
            assert!((gs.density_from_demand(q).unwrap() - lo).abs() < tol, "k={k}");
            assert!((gs.density_from_supply(q).unwrap() - hi).abs() < tol, "k={k}");
        }
    }

    #[test]
    fn char_speed_values() {
        let main = FundamentalDiagram::del_castillo_mainline();
        let ramp = FundamentalDiagram::del_castillo_ramp();
        for fd in all_families() {
            assert!(
                fd.char_speed(fd.critical_density()).unwrap().abs() < 1e-6,
                "{:?}",
                fd.family()
            );
        }
        assert!((main.char_speed(1e-9).unwrap() - 1.0).abs() < 1e-3);
        assert!((ramp.char_speed(1e-9).unwrap() - 0.5).abs() < 1e-3);
        assert_eq!(main.char_speed(0.0).unwrap(), 1.0);
        assert!(main.char_speed(0.3).unwrap() > 0.0);
        assert!(main.char_speed(1.3).unwrap() < 0.0);
    }

    #[test]
    fn built_in_families_are_concave() {
        for fd in all_families() {
            let n = 4000;
            let h = fd.jam_density() / n as f64;
            for k in 1..n {
                let r = k as f64 * h;
                let second = fd.eval(r + h) - 2.0 * fd.eval(r) + fd.eval(r - h);
                assert!(second <= 1e-14, "{:?} at {r}: {second}", fd.family());
            }
        }
    }

    fn family_strategy() -> impl Strategy<Value = FundamentalDiagram> {
        prop_oneof![
            Just(FundamentalDiagram::del_castillo_mainline()),
            Just(FundamentalDiagram::del_castillo_ramp()),
            (0.5f64..2.0, 0.1f64..1.0, 0.5f64..3.0)
                .prop_map(|(v, w, j)| FundamentalDiagram::triangular(v, w, j).unwrap()),
            (0.5f64..2.0, 0.5f64..3.0).prop_map(|(v, j)| FundamentalDiagram::greenshields(v, j).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn demand_supply_envelope(fd in family_strategy(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (r1, r2) = if a < b { (a, b) } else { (b, a) };
            let (r1, r2) = (r1 * fd.jam_density(), r2 * fd.jam_density());
            prop_assert!(fd.demand(r1).unwrap() <= fd.demand(r2).unwrap());
            prop_assert!(fd.supply(r1).unwrap() >= fd.supply(r2).unwrap());
            let (d, s, q) = (fd.demand(r1).unwrap(), fd.supply(r1).unwrap(), fd.flow(r1).unwrap());
            prop_assert_eq!(d.max(s), fd.capacity());
            prop_assert_eq!(d.min(s), q);
        }

        #[test]
        fn inversion_round_trip(fd in family_strategy(), a in 0.0f64..1.0) {
            let rc = fd.critical_density();
            let rj = fd.jam_density();
            // Q' vanishes at rho_c, so the inverse is ill-conditioned right there.
            let margin = 1e-3 * rj;
            let below = a * (rc - margin);
            let above = rc + margin + a * (rj - rc - margin);
            let back = fd.density_from_demand(fd.demand(below).unwrap()).unwrap();
            prop_assert!((back - below).abs() < 1e-8, "{} vs {}", back, below);
            let back = fd.density_from_supply(fd.supply(above).unwrap()).unwrap();
            prop_assert!((back - above).abs() < 1e-8, "{} vs {}", back, above);
        }

        #[test]
        fn char_speed_matches_central_difference(fd in family_strategy(), a in 0.01f64..0.99) {
            let rj = fd.jam_density();
            let rho = a * rj;
            let h = 1e-7 * rj;
            // Skip the kink of the triangular diagram.
            prop_assume!((rho - fd.critical_density()).abs() > 10.0 * h);
            let fdiff = (fd.flow(rho + h).unwrap() - fd.flow(rho - h).unwrap()) / (2.0 * h);
            prop_assert!((fd.char_speed(rho).unwrap() - fdiff).abs() < 1e-5);
        }
    }
}
