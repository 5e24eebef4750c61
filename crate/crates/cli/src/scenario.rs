//! Scenario files.
//!
//! A scenario is a TOML document with a `[merge]` table, one table per link
//! (`[links.up1]`, `[links.up2]`, `[links.down]`), a `[run]` table and the
//! optional `[compare]` and `[sweep]` tables. Every field is validated at
//! load and [`Scenario::to_toml`] echoes the scenario with all defaults
//! filled in.

use std::fmt;
use std::path::{Path, PathBuf};

use mergeflow_core::{
    DemandBoundary, Family, FundamentalDiagram, Link, MergeModel, MergeNetwork, RiemannProblem, SdState,
    SupplyBoundary, Tolerances, DEFAULT_SNAPSHOTS,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_CFL_FACTOR: f64 = 0.9;
pub const DEFAULT_STUDY_CELLS: [usize; 3] = [40, 80, 160];

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(field: &str, err: impl fmt::Display) -> ScenarioError {
    ScenarioError::Invalid(format!("{field}: {err}"))
}

/// `{ model = "...", alpha = [a1, a2], gamma = g }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<MergeModel, String> {
        let alpha = || {
            self.alpha
                .ok_or_else(|| format!("model `{}` needs alpha", self.model))
        };
        let no_alpha = || match self.alpha {
            Some(_) => Err(format!("model `{}` takes no alpha", self.model)),
            None => Ok(()),
        };
        if self.gamma.is_some() && self.model != "scaled_fair" {
            return Err(format!("model `{}` takes no gamma", self.model));
        }
        let built = match self.model.as_str() {
            "fair" => no_alpha().map(|_| Ok(MergeModel::Fair))?,
            "constant" => alpha().map(|a| MergeModel::constant(a[0], a[1]))?,
            "priority_invariant" => alpha().map(|a| MergeModel::priority_invariant(a[0], a[1]))?,
            "constant_invariant" => alpha().map(|a| MergeModel::constant_invariant(a[0], a[1]))?,
            "scaled_fair" => {
                no_alpha()?;
                let gamma = self.gamma.ok_or("model `scaled_fair` needs gamma")?;
                MergeModel::scaled_fair(gamma)
            }
            other => {
                return Err(format!(
                    "unknown model `{other}` (expected fair, constant, priority_invariant, \
                     constant_invariant or scaled_fair)"
                ))
            }
        };
        built.map_err(|e| e.to_string())
    }

    pub fn of(model: &MergeModel) -> Self {
        let (alpha, gamma) = match model {
            MergeModel::ScaledFair { gamma } => (None, Some(*gamma)),
            m => (m.alpha().map(|a| a.as_array()), None),
        };
        ModelSpec {
            model: model.name().to_string(),
            alpha,
            gamma,
        }
    }

    /// Parses `name` or `name:p`, where `p` is `a1` (with `a2 = 1 - a1`) or
    /// `gamma`. Without `p`, the proportions of `fallback` are kept.
    pub fn parse_override(text: &str, fallback: Option<&ModelSpec>) -> Result<Self, String> {
        let (name, param) = match text.split_once(':') {
            Some((n, p)) => {
                let p: f64 = p
                    .parse()
                    .map_err(|_| format!("bad model parameter in `{text}`"))?;
                (n, Some(p))
            }
            None => (text, None),
        };
        let mut spec = ModelSpec {
            model: name.to_string(),
            alpha: None,
            gamma: None,
        };
        match (name, param) {
            ("fair", None) => {}
            ("scaled_fair", p) => spec.gamma = p.or(fallback.and_then(|f| f.gamma)),
            (_, Some(a1)) => spec.alpha = Some([a1, 1.0 - a1]),
            (_, None) => spec.alpha = fallback.and_then(|f| f.alpha),
        }
        spec.build()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink<B> {
    length: f64,
    cells: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<[f64; 2]>,
    diagram: Family,
    boundary: Option<B>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinks {
    up1: RawLink<DemandBoundary>,
    up2: RawLink<DemandBoundary>,
    down: RawLink<SupplyBoundary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    t_end: f64,
    #[serde(default)]
    cfl_factor: Option<f64>,
    #[serde(default)]
    snapshots: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompare {
    #[serde(default)]
    state: Option<f64>,
    #[serde(default)]
    flux: Option<f64>,
    #[serde(default)]
    wave_position: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(default)]
    cells: Option<Vec<usize>>,
    #[serde(default)]
    t_probe: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<ModelSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    merge: ModelSpec,
    run: RawRun,
    #[serde(default)]
    compare: Option<RawCompare>,
    #[serde(default)]
    sweep: Option<RawSweep>,
    links: RawLinks,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initial {
    Density(f64),
    State(SdState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub diagram: FundamentalDiagram,
    /// Length units; the del Castillo diagrams are normalized so that the
    /// mainline free-flow speed is one length unit per time unit.
    pub length: f64,
    pub cells: usize,
    pub initial: Initial,
}

impl LinkSpec {
    pub fn initial_state(&self) -> SdState {
        match self.initial {
            Initial::Density(rho) => SdState::of_density(&self.diagram, rho).expect("validated at load"),
            Initial::State(u) => u,
        }
    }

    fn build(&self, cells: usize) -> mergeflow_core::Result<Link> {
        match self.initial {
            Initial::Density(rho) => Link::uniform(self.diagram, self.length, cells, rho),
            Initial::State(u) => Link::from_state(self.diagram, self.length, cells, &u),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub cells: Vec<usize>,
    pub t_probe: f64,
    /// Reference model for L1 differences; `None` measures the error
    /// against the exact Riemann solution.
    pub reference: Option<MergeModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: MergeModel,
    /// Upstream links 1 and 2, then the downstream link.
    pub links: [LinkSpec; 3],
    pub upstream_bc: [DemandBoundary; 2],
    pub downstream_bc: SupplyBoundary,
    pub t_end: f64,
    pub cfl_factor: f64,
    /// Approximate number of density snapshots per run.
    pub snapshots: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub tolerances: Tolerances,
    pub sweep: Sweep,
}

const LINK_NAMES: [&str; 3] = ["up1", "up2", "down"];

fn link_spec<B>(name: &str, raw: &RawLink<B>) -> Result<LinkSpec, ScenarioError> {
    let field = |f: &str| format!("links.{name}.{f}");
    let diagram = FundamentalDiagram::new(raw.diagram).map_err(|e| invalid(&field("diagram"), e))?;
    if !(raw.length.is_finite() && raw.length > 0.0) {
        return Err(invalid(&field("length"), "must be positive"));
    }
    if raw.cells == 0 {
        return Err(invalid(&field("cells"), "must be at least 1"));
    }
    let initial = match (raw.density, raw.state) {
        (Some(rho), None) => {
            SdState::of_density(&diagram, rho).map_err(|e| invalid(&field("density"), e))?;
            Initial::Density(rho)
        }
        (None, Some([d, s])) => {
            let u = SdState::new(d, s);
            u.validate(diagram.capacity())
                .map_err(|e| invalid(&field("state"), e))?;
            Initial::State(u)
        }
        _ => {
            return Err(invalid(
                &format!("links.{name}"),
                "give exactly one of `density` or `state`",
            ))
        }
    };
    Ok(LinkSpec {
        diagram,
        length: raw.length,
        cells: raw.cells,
        initial,
    })
}

fn raw_link<B>(spec: &LinkSpec, boundary: B) -> RawLink<B> {
    let (density, state) = match spec.initial {
        Initial::Density(rho) => (Some(rho), None),
        Initial::State(u) => (None, Some([u.demand, u.supply])),
    };
    RawLink {
        length: spec.length,
        cells: spec.cells,
        density,
        state,
        diagram: spec.diagram.family(),
        boundary: Some(boundary),
    }
}

fn positive(field: &str, value: f64) -> Result<f64, ScenarioError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(invalid(field, format!("must be positive, got {value}")))
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Parses a scenario document. `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            origin: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawScenario) -> Result<Self, ScenarioError> {
        let model = raw.merge.build().map_err(|e| invalid("merge", e))?;
        let links = [
            link_spec(LINK_NAMES[0], &raw.links.up1)?,
            link_spec(LINK_NAMES[1], &raw.links.up2)?,
            link_spec(LINK_NAMES[2], &raw.links.down)?,
        ];
        let run = raw.run;
        let t_end = positive("run.t_end", run.t_end)?;
        let cfl_factor = run.cfl_factor.unwrap_or(DEFAULT_CFL_FACTOR);
        if !(cfl_factor > 0.0 && cfl_factor <= 1.0) {
            return Err(invalid(
                "run.cfl_factor",
                format!("must lie in (0, 1], got {cfl_factor}"),
            ));
        }
        let snapshots = run.snapshots.unwrap_or(DEFAULT_SNAPSHOTS);
        if snapshots == 0 {
            return Err(invalid("run.snapshots", "must be at least 1"));
        }

        let compare = raw.compare.unwrap_or_default();
        let defaults = Tolerances::default();
        let tolerances = Tolerances {
            state: positive("compare.state", compare.state.unwrap_or(defaults.state))?,
            flux: positive("compare.flux", compare.flux.unwrap_or(defaults.flux))?,
            wave_position: positive(
                "compare.wave_position",
                compare.wave_position.unwrap_or(defaults.wave_position),
            )?,
        };

        let sweep = raw.sweep.unwrap_or_default();
        let cells = sweep.cells.unwrap_or_else(|| DEFAULT_STUDY_CELLS.to_vec());
        if cells.is_empty() || cells[0] == 0 || cells.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sweep.cells", "must be positive and strictly ascending"));
        }
        let t_probe = sweep.t_probe.unwrap_or(t_end);
        positive("sweep.t_probe", t_probe)?;
        let reference = match &sweep.reference {
            Some(spec) => Some(spec.build().map_err(|e| invalid("sweep.reference", e))?),
            None => None,
        };

        let scenario = Scenario {
            model,
            links,
            upstream_bc: [
                raw.links.up1.boundary.unwrap_or(DemandBoundary::Neumann),
                raw.links.up2.boundary.unwrap_or(DemandBoundary::Neumann),
            ],
            downstream_bc: raw.links.down.boundary.unwrap_or(SupplyBoundary::Neumann),
            t_end,
            cfl_factor,
            snapshots,
            seed: run.seed.unwrap_or(0),
            output_dir: run.output_dir,
            tolerances,
            sweep: Sweep {
                cells,
                t_probe,
                reference,
            },
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Cross-field checks, repeated after command-line overrides.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.network().map_err(|e| invalid("links", e))?;
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(invalid(
                "run.t_end",
                format!("must be positive, got {}", self.t_end),
            ));
        }
        if self.model.has_closed_form() {
            RiemannProblem::new(self.model, self.diagrams(), self.initial_states())
                .map_err(|e| invalid("links", e))?;
        }
        Ok(())
    }

    /// Normalized TOML with every default written out.
    pub fn to_toml(&self) -> String {
        let raw = RawScenario {
            merge: ModelSpec::of(&self.model),
            run: RawRun {
                t_end: self.t_end,
                cfl_factor: Some(self.cfl_factor),
                snapshots: Some(self.snapshots),
                seed: Some(self.seed),
                output_dir: self.output_dir.clone(),
            },
            compare: Some(RawCompare {
                state: Some(self.tolerances.state),
                flux: Some(self.tolerances.flux),
                wave_position: Some(self.tolerances.wave_position),
            }),
            sweep: Some(RawSweep {
                cells: Some(self.sweep.cells.clone()),
                t_probe: Some(self.sweep.t_probe),
                reference: self.sweep.reference.as_ref().map(ModelSpec::of),
            }),
            links: RawLinks {
                up1: raw_link(&self.links[0], self.upstream_bc[0]),
                up2: raw_link(&self.links[1], self.upstream_bc[1]),
                down: raw_link(&self.links[2], self.downstream_bc),
            },
        };
        toml::to_string(&raw).expect("scenario fields are representable in TOML")
    }

    pub fn diagrams(&self) -> [FundamentalDiagram; 3] {
        std::array::from_fn(|a| self.links[a].diagram)
    }

    pub fn capacities(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.links[a].diagram.capacity())
    }

    pub fn lengths(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.links[a].length)
    }

    pub fn initial_states(&self) -> [SdState; 3] {
        std::array::from_fn(|a| self.links[a].initial_state())
    }

    pub fn riemann_problem(&self) -> mergeflow_core::Result<RiemannProblem> {
        RiemannProblem::new(self.model, self.diagrams(), self.initial_states())
    }

    pub fn network(&self) -> mergeflow_core::Result<MergeNetwork> {
        self.build_network(self.model, None)
    }

    /// The network with `model` and, if given, `cells` cells on every link.
    pub fn build_network(
        &self,
        model: MergeModel,
        cells: Option<usize>,
    ) -> mergeflow_core::Result<MergeNetwork> {
        let mut links = Vec::with_capacity(3);
        for spec in &self.links {
            links.push(spec.build(cells.unwrap_or(spec.cells))?);
        }
        let links: [Link; 3] = links.try_into().expect("three links");
        MergeNetwork::new(links, model, self.upstream_bc, self.downstream_bc)
    }

    /// Snapshot cadence in steps for a run of `net` to `t_end`.
    pub fn record_every(&self, net: &MergeNetwork, t_end: f64) -> usize {
        (net.step_count(t_end, self.cfl_factor) / self.snapshots).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S51: &str = include_str!("../../../scenarios/s51_fair.cfg");

    #[test]
    fn bundled_merge_scenario() {
        let s = Scenario::from_toml(S51, "s51").unwrap();
        assert_eq!(s.model, MergeModel::Fair);
        assert_eq!(s.links.each_ref().map(|l| l.cells), [160; 3]);
        assert_eq!(s.t_end, 360.0);
        assert_eq!(s.links[0].diagram, FundamentalDiagram::del_castillo_mainline());
        assert_eq!(s.links[1].diagram, FundamentalDiagram::del_castillo_ramp());
        assert_eq!(s.links[0].initial, Initial::Density(0.35));
    }

    #[test]
    fn echo_round_trips() {
        let s = Scenario::from_toml(S51, "s51").unwrap();
        let echo = s.to_toml();
        let again = Scenario::from_toml(&echo, "echo").unwrap();
        assert_eq!(again, s);
        assert_eq!(again.to_toml(), echo);
    }

    #[test]
    fn empty_document_is_a_parse_error() {
        let err = Scenario::from_toml("", "empty").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }), "{err}");
    }

    #[test]
    fn alpha_must_sum_to_one() {
        let text = S51.replace("model = \"fair\"", "model = \"constant\"\nalpha = [0.7, 0.7]");
        let err = Scenario::from_toml(&text, "bad").unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid(_)));
        assert!(err.to_string().contains("alpha must sum to 1"), "{err}");
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = S51.replace("t_end = 360.0", "t_end = \"long\"");
        let err = Scenario::from_toml(&text, "bad").unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        assert!(err.contains("t_end"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = S51.replace("t_end = 360.0", "t_end = 360.0\nduration = 3");
        assert!(Scenario::from_toml(&text, "bad").is_err());
    }

    #[test]
    fn density_and_state_are_exclusive() {
        let text = S51.replacen("density = 0.35", "density = 0.35\nstate = [0.3, 0.3365]", 1);
        let err = Scenario::from_toml(&text, "bad").unwrap_err();
        assert!(err.to_string().contains("exactly one"), "{err}");
    }

    #[test]
    fn model_overrides() {
        let base = ModelSpec {
            model: "constant".into(),
            alpha: Some([0.3, 0.7]),
            gamma: None,
        };
        let m = ModelSpec::parse_override("priority_invariant:0.8", None).unwrap();
        assert_eq!(
            m.build().unwrap(),
            MergeModel::priority_invariant(0.8, 0.2).unwrap()
        );
        let m = ModelSpec::parse_override("constant_invariant", Some(&base)).unwrap();
        assert_eq!(m.alpha, Some([0.3, 0.7]));
        assert!(ModelSpec::parse_override("constant", None).is_err());
        assert!(ModelSpec::parse_override("zipper", None).is_err());
        assert!(ModelSpec::parse_override("scaled_fair:0.9", None).is_ok());
    }
}
