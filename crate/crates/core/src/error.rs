use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("density {density} outside [0, {jam_density}]")]
    DensityOutOfRange { density: f64, jam_density: f64 },

    #[error("demand {demand} exceeds capacity {capacity}")]
    InfeasibleDemand { demand: f64, capacity: f64 },

    #[error("supply {supply} exceeds capacity {capacity}")]
    InfeasibleSupply { supply: f64, capacity: f64 },

    #[error("invalid fundamental diagram: {0}")]
    InvalidDiagram(String),

    #[error("state (D={demand}, S={supply}) is not on the supply-demand diagram of capacity {capacity}")]
    MalformedState { demand: f64, supply: f64, capacity: f64 },

    #[error("invalid merge model: {0}")]
    InvalidModel(String),

    #[error("merge model `{0}` has no closed-form global flux")]
    NoClosedForm(&'static str),

    #[error("flux {flux} exceeds its bound {bound}")]
    InadmissibleFlux { flux: f64, bound: f64 },

    #[error("wave classification requires a concave fundamental diagram")]
    UnsupportedDiagram,

    #[error("riemann solution is inconsistent: {0}")]
    Inconsistent(String),

    #[error("fixed-point oracle failed: {0}")]
    OracleFailure(String),

    #[error("time step {dt} violates the CFL condition on link {link} (limit {limit})")]
    CflViolation { link: usize, dt: f64, limit: f64 },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("incompatible trajectories: {0}")]
    IncompatibleTrajectories(String),
}
