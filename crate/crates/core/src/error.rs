use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis is singular (|det| = {det:e})")]
    SingularBasis { det: f64 },

    #[error("edge ({i}, {j}, {offset:?}) has no reverse ({j}, {i}, -offset)")]
    AsymmetricEdges { i: usize, j: usize, offset: Vec<i64> },

    #[error("fractional coordinate {value} of cell vertex {vertex} is outside [0, 1)")]
    BadFraction { vertex: usize, value: f64 },

    #[error("duplicate edge ({i}, {j}, {offset:?})")]
    DuplicateEdge { i: usize, j: usize, offset: Vec<i64> },

    #[error("self-loop with zero offset at cell vertex {0}")]
    SelfLoop(usize),

    #[error("edge weight {0} is not supported (only unit weights)")]
    WeightedEdge(f64),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("eigensolver failed: {0}")]
    EigSolverFailure(String),

    #[error("state support spans {extent} cells along axis {axis}, grid resolution is {resolution}")]
    SupportExceedsGrid { axis: usize, extent: i64, resolution: usize },

    #[error("state is empty or has zero norm")]
    EmptyState,

    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("truncated box would hold {vertices} vertices (cap {cap})")]
    BoxTooLarge { vertices: usize, cap: usize },

    #[error("state has support outside the truncated box")]
    NotInBox,

    #[error("time must be positive")]
    ZeroTime,

    #[error("spectral mass {mass:e} near the frequency cutoff exceeds {limit:e}")]
    AliasRisk { mass: f64, limit: f64 },

    #[error("mass {mass:e} near the spatial box edge exceeds {limit:e}")]
    BoundaryContact { mass: f64, limit: f64 },

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("denominator {0:e} too close to zero")]
    DegenerateDenominator(f64),

    #[error("tail bound {tail:e} not met at depth cap {depth}")]
    DepthInsufficient { depth: usize, tail: f64 },

    #[error("invalid tree model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{context}")]
    Parse {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Failure of a numerical method rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigSolverFailure(_)
                | Error::BoxTooLarge { .. }
                | Error::AliasRisk { .. }
                | Error::BoundaryContact { .. }
                | Error::NoConvergence { .. }
                | Error::DegenerateDenominator(_)
                | Error::DepthInsufficient { .. }
        )
    }
}
