//! Brute-force fixed point of the junction, independent of the closed forms.
//!
//! Every upstream link either passes its whole demand (stationary state
//! `(D_i, C_i)`, interior demand free in `[0, C_i]`) or queues (stationary
//! state `(C_i, q_i)` with `q_i < D_i`, interior forced to it). The downstream
//! link either passes less than its supply (interior forced to `(q_3, C_3)`)
//! or fills it (`q_3 = S_3`, interior supply free in `[S_3, C_3]`). For each
//! of the eight patterns the free interior variables are searched on a grid,
//! refined by bisection, and the local flux at the interior states must
//! reproduce the pattern. The consistent flux triple must be unique.

use crate::error::{Error, Result};
use crate::merge::{FluxTriple, MergeModel};

use super::RiemannProblem;

/// Grid points per link for the interior-state search.
pub const ORACLE_GRID: usize = 2000;

const MATCH_TOL: f64 = 1e-10;
const DISTINCT_TOL: f64 = 1e-8;
const BISECTIONS: usize = 64;
/// Supply levels scanned when all three links are free at once.
const SUPPLY_LEVELS: usize = 200;

/// Oracle fluxes for a Riemann problem.
pub fn fixed_point_oracle(problem: &RiemannProblem) -> Result<FluxTriple> {
    oracle_fluxes(
        &problem.model,
        problem.demands(),
        problem.supply(),
        problem.capacities(),
    )
}

/// Oracle fluxes from initial demands `D1, D2`, initial supply `S3` and the
/// link capacities. Works for every model with a local flux.
pub fn oracle_fluxes(
    model: &MergeModel,
    demands: [f64; 2],
    supply: f64,
    capacities: [f64; 3],
) -> Result<FluxTriple> {
    let search = Search::new(model, demands, supply, capacities);
    let mut found: Vec<FluxTriple> = Vec::new();
    for pattern in 0..8u8 {
        let free = [pattern & 1 != 0, pattern & 2 != 0];
        let down_full = pattern & 4 != 0;
        search.pattern(free, down_full, &mut |q| {
            if found
                .iter()
                .all(|f| f.max_abs_diff(&q) > DISTINCT_TOL * search.scale)
            {
                found.push(q);
            }
        });
    }
    match found.len() {
        1 => Ok(found[0]),
        0 => Err(Error::OracleFailure(format!(
            "no consistent configuration for D=({}, {}), S3={supply}",
            demands[0], demands[1]
        ))),
        _ => Err(Error::OracleFailure(format!(
            "{} distinct consistent flux triples for D=({}, {}), S3={supply}: {found:?}",
            found.len(),
            demands[0],
            demands[1]
        ))),
    }
}

#[derive(Clone, Copy)]
enum Var {
    D1,
    D2,
    S,
}

impl Var {
    fn upstream(i: usize) -> Var {
        if i == 0 {
            Var::D1
        } else {
            Var::D2
        }
    }
}

/// Interior demands and supply.
type Point = [f64; 3];

struct Search<'a> {
    model: &'a MergeModel,
    demands: [f64; 2],
    supply: f64,
    caps: [f64; 3],
    scale: f64,
    tol: f64,
}

enum Probe {
    Hit,
    Below,
    Above,
    Missing,
}

impl<'a> Search<'a> {
    fn new(model: &'a MergeModel, demands: [f64; 2], supply: f64, caps: [f64; 3]) -> Self {
        let scale = caps.iter().cloned().fold(0.0, f64::max);
        Search {
            model,
            demands,
            supply,
            caps,
            scale,
            tol: MATCH_TOL * scale,
        }
    }

    fn flux(&self, p: &Point) -> [f64; 3] {
        self.model.local([p[0], p[1]], p[2], self.caps[2]).as_array()
    }

    fn range(&self, v: Var) -> (f64, f64) {
        match v {
            Var::D1 => (0.0, self.caps[0]),
            Var::D2 => (0.0, self.caps[1]),
            Var::S => (self.supply.min(self.caps[2]), self.caps[2]),
        }
    }

    fn set(p: &mut Point, v: Var, x: f64) {
        p[v as usize] = x;
    }

    /// Pattern conditions on a flux triple.
    fn consistent(&self, q: &[f64; 3], free: [bool; 2], down_full: bool) -> bool {
        let tol = self.tol;
        for i in 0..2 {
            let ok = if free[i] {
                (q[i] - self.demands[i]).abs() <= tol
            } else {
                q[i] <= self.demands[i] + tol
            };
            if !ok || q[i] < -tol {
                return false;
            }
        }
        if down_full {
            (q[2] - self.supply).abs() <= tol
        } else {
            q[2] <= self.supply + tol
        }
    }

    fn pattern(&self, free: [bool; 2], down_full: bool, emit: &mut dyn FnMut(FluxTriple)) {
        let mut base: Point = [self.caps[0], self.caps[1], self.caps[2]];
        let mut vars = Vec::new();
        let mut targets = Vec::new();
        for i in 0..2 {
            if free[i] {
                vars.push(Var::upstream(i));
                targets.push((i, self.demands[i]));
            }
        }
        if down_full {
            vars.push(Var::S);
            targets.push((2, self.supply));
            base[2] = self.supply;
        }
        let accept = |p: &Point, emit: &mut dyn FnMut(FluxTriple)| {
            let q = self.flux(p);
            if self.consistent(&q, free, down_full) {
                emit(FluxTriple::new(q[0], q[1]));
            }
        };
        match vars.len() {
            0 => accept(&base, emit),
            1 => {
                let (c, t) = targets[0];
                self.roots_1d(&base, vars[0], c, t, &mut |p| accept(&p, emit));
            }
            _ => {
                // Two or more free variables pin every flux.
                let mut q = [0.0; 3];
                let mut pinned = [false; 3];
                for &(c, t) in &targets {
                    q[c] = t;
                    pinned[c] = true;
                }
                match pinned {
                    [true, true, false] => q[2] = q[0] + q[1],
                    [true, false, true] => q[1] = q[2] - q[0],
                    [false, true, true] => q[0] = q[2] - q[1],
                    _ => {}
                }
                if (q[0] + q[1] - q[2]).abs() > self.tol || !self.consistent(&q, free, down_full) {
                    return;
                }
                if self.interior_exists(&base, &vars, q) {
                    emit(FluxTriple::new(q[0], q[1]));
                }
            }
        }
    }

    /// Roots of `flux(p)[c] = t` along variable `v`.
    fn roots_1d(&self, base: &Point, v: Var, c: usize, t: f64, found: &mut dyn FnMut(Point)) {
        let (lo, hi) = self.range(v);
        let at = |x: f64| {
            let mut p = *base;
            Self::set(&mut p, v, x);
            p
        };
        let residual = |x: f64| self.flux(&at(x))[c] - t;
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=ORACLE_GRID {
            let x = lo + (hi - lo) * k as f64 / ORACLE_GRID as f64;
            let r = residual(x);
            if r.abs() <= self.tol {
                found(at(x));
            } else if let Some((xp, rp)) = prev {
                if rp.abs() > self.tol && (rp < 0.0) != (r < 0.0) {
                    let (mut a, mut b) = (xp, x);
                    for _ in 0..BISECTIONS {
                        let m = 0.5 * (a + b);
                        if (residual(m) < 0.0) == (rp < 0.0) {
                            a = m;
                        } else {
                            b = m;
                        }
                    }
                    let x_root = 0.5 * (a + b);
                    if residual(x_root).abs() <= self.tol {
                        found(at(x_root));
                    }
                }
            }
            prev = Some((x, r));
        }
    }

    /// Whether interior values of `vars` exist with local flux `q`.
    fn interior_exists(&self, base: &Point, vars: &[Var], q: [f64; 3]) -> bool {
        // Remark: interior states equal to the stationary ones are always
        // admissible, so try them first.
        let mut guess = *base;
        for &v in vars {
            let x = match v {
                Var::D1 => self.demands[0],
                Var::D2 => self.demands[1],
                Var::S => self.supply,
            };
            Self::set(&mut guess, v, x);
        }
        if self.matches(&guess, &q) {
            return true;
        }
        if !self.within_bounds(base, vars, &q) {
            return false;
        }
        match vars {
            [outer, inner] => {
                let (ci, co) = match inner {
                    Var::S => (2, *outer as usize),
                    _ => (1, 0),
                };
                self.exists_2d(base, *outer, *inner, (ci, q[ci]), (co, q[co]))
            }
            [Var::D1, Var::D2, Var::S] => {
                let (lo, hi) = self.range(Var::S);
                (0..=SUPPLY_LEVELS).any(|k| {
                    let mut p = *base;
                    p[2] = lo + (hi - lo) * k as f64 / SUPPLY_LEVELS as f64;
                    self.exists_2d(&p, Var::D1, Var::D2, (1, q[1]), (0, q[0]))
                })
            }
            _ => false,
        }
    }

    fn matches(&self, p: &Point, q: &[f64; 3]) -> bool {
        let f = self.flux(p);
        (0..3).all(|c| (f[c] - q[c]).abs() <= self.tol)
    }

    /// Upstream fluxes grow with their own demand and the supply and shrink
    /// with the other demand, so the box corners bound them.
    fn within_bounds(&self, base: &Point, vars: &[Var], q: &[f64; 3]) -> bool {
        for i in 0..2 {
            let mut high = *base;
            let mut low = *base;
            for &v in vars {
                let (lo, hi) = self.range(v);
                let raise = match v {
                    Var::S => true,
                    _ => v as usize == i,
                };
                Self::set(&mut high, v, if raise { hi } else { lo });
                Self::set(&mut low, v, if raise { lo } else { hi });
            }
            if q[i] > self.flux(&high)[i] + self.tol || q[i] < self.flux(&low)[i] - self.tol {
                return false;
            }
        }
        true
    }

    /// Searches `outer` on the grid. For each value, the set of `inner`
    /// values meeting target `ti` on component `ci` is an interval (the
    /// component is nondecreasing in `inner`); the other component `co` is
    /// monotone in `inner` so its range over that interval comes from the
    /// endpoints.
    fn exists_2d(
        &self,
        base: &Point,
        outer: Var,
        inner: Var,
        (ci, ti): (usize, f64),
        (co, to): (usize, f64),
    ) -> bool {
        let probe = |x: f64| -> Probe {
            let mut p = *base;
            Self::set(&mut p, outer, x);
            let (ylo, yhi) = self.range(inner);
            let g = |y: f64| {
                let mut p = p;
                Self::set(&mut p, inner, y);
                self.flux(&p)[ci] - ti
            };
            if g(ylo) > self.tol || g(yhi) < -self.tol {
                return Probe::Missing;
            }
            let ya = if g(ylo) >= -self.tol {
                ylo
            } else {
                self.bisect(ylo, yhi, |y| g(y) >= -self.tol)
            };
            let yb = if g(yhi) <= self.tol {
                yhi
            } else {
                self.bisect(ylo, yhi, |y| g(y) > self.tol)
            };
            let h = |y: f64| {
                let mut p = p;
                Self::set(&mut p, inner, y);
                self.flux(&p)[co] - to
            };
            let (ha, hb) = (h(ya), h(yb.max(ya)));
            if ha.min(hb) <= self.tol && ha.max(hb) >= -self.tol {
                Probe::Hit
            } else if ha.max(hb) < 0.0 {
                Probe::Below
            } else {
                Probe::Above
            }
        };
        let (lo, hi) = self.range(outer);
        let mut prev: Option<(f64, bool)> = None;
        for k in 0..=ORACLE_GRID {
            let x = lo + (hi - lo) * k as f64 / ORACLE_GRID as f64;
            let below = match probe(x) {
                Probe::Hit => return true,
                Probe::Missing => {
                    prev = None;
                    continue;
                }
                Probe::Below => true,
                Probe::Above => false,
            };
            if let Some((xp, below_p)) = prev {
                if below_p != below {
                    let (mut a, mut b) = (xp, x);
                    for _ in 0..BISECTIONS {
                        let m = 0.5 * (a + b);
                        match probe(m) {
                            Probe::Hit => return true,
                            Probe::Missing => break,
                            Probe::Below if below_p => a = m,
                            Probe::Above if !below_p => a = m,
                            _ => b = m,
                        }
                    }
                }
            }
            prev = Some((x, below));
        }
        false
    }

    /// First point of `[lo, hi]` where the monotone predicate `past` holds.
    fn bisect(&self, mut lo: f64, mut hi: f64, past: impl Fn(f64) -> bool) -> f64 {
        for _ in 0..BISECTIONS {
            let m = 0.5 * (lo + hi);
            if past(m) {
                hi = m;
            } else {
                lo = m;
            }
        }
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const C1: f64 = 0.336496;
    const C2: f64 = 0.084124;
    const CAPS: [f64; 3] = [C1, C2, C1];

    #[test]
    fn fair_congested_merge() {
        let q = oracle_fluxes(&MergeModel::Fair, [0.3131003, 0.0499897], C1, CAPS).unwrap();
        assert!((q.q1 - 0.2865).abs() < 1e-4 && (q.q2 - 0.05).abs() < 1e-4 && (q.q3 - C1).abs() < 1e-9);
    }

    #[test]
    fn priority_matches_fair_on_congested_merge() {
        let model = MergeModel::priority_invariant(0.8, 0.2).unwrap();
        let q = oracle_fluxes(&model, [0.3131003, 0.0499897], C1, CAPS).unwrap();
        assert!((q.q1 - (C1 - 0.0499897)).abs() < 1e-9 && (q.q2 - 0.0499897).abs() < 1e-9);
    }

    #[test]
    fn constant_case_two() {
        let model = MergeModel::constant(0.5, 0.5).unwrap();
        let caps = [0.3365, 0.0841, 0.3365];
        let q = oracle_fluxes(&model, [0.3, 0.05], 0.3365, caps).unwrap();
        assert!(q.max_abs_diff(&FluxTriple::new(0.16825, 0.05)) < 1e-9, "{q:?}");
    }

    #[test]
    fn scaled_fair_has_a_fixed_point() {
        let model = MergeModel::scaled_fair(0.9).unwrap();
        let q = oracle_fluxes(&model, [C1, C2], C1, CAPS).unwrap();
        assert!(q.q3 <= 0.9 * C1 + 1e-9);
    }

    #[test]
    fn demand_equal_to_supply() {
        let q = oracle_fluxes(&MergeModel::Fair, [0.2, 0.05], 0.25, CAPS).unwrap();
        assert!(q.max_abs_diff(&FluxTriple::new(0.2, 0.05)) < 1e-12);
    }
}
