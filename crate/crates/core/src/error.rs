use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("template subdivision must be even and at least 2, got {0}")]
    InvalidSubdivision(usize),

    #[error("inverted element: triangle {triangle} has signed area {area:e}")]
    InvertedElement { triangle: usize, area: f64 },

    #[error("invalid interface: {0}")]
    InvalidInterface(String),

    #[error("point ({x}, {y}) lies outside the mesh")]
    PointNotFound { x: f64, y: f64 },

    #[error("interface edge {edge} has zero length")]
    DegenerateEdge { edge: usize },

    #[error("degenerate triangle {0}")]
    DegenerateTriangle(usize),

    #[error("field has length {found}, mesh has {expected} vertices")]
    FieldLength { expected: usize, found: usize },

    #[error("field belongs to mesh {field_mesh}, not mesh {mesh}")]
    MeshMismatch { mesh: u64, field_mesh: u64 },

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("negative curvature {curvature:e} in conjugate gradients; the assembled matrix is not positive definite")]
    Indefinite { curvature: f64 },

    #[error("singular system: pivot {pivot:e} at row {row}")]
    Singular { row: usize, pivot: f64 },

    #[error("no constrained nodes; the Dirichlet problem is singular")]
    NoConstraints,

    #[error("retraction still invalid after {halvings} step halvings: {last}")]
    RetractionFailed { halvings: usize, last: String },

    #[error("interface is not a graph over y: {0}")]
    NotAGraph(String),

    #[error("interface needs at least 3 nodes, got {0}")]
    TooFewInterfaceNodes(usize),

    #[error("mesh inversion persisted after {halvings} step halvings at iteration {iteration}")]
    StepFailure { iteration: usize, halvings: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
