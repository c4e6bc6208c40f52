use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// Variants map one-to-one onto the failure names surfaced in JSON reports
/// and CLI diagnostics (see [`Error::name`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive permittivity {value} in {context}")]
    NonPositiveEpsilon { value: f64, context: String },

    #[error("perturbed permittivity below background at row {row}, cell ({ix}, {iy}): {perturbed} < {background}")]
    DefectSignViolation {
        row: i32,
        ix: usize,
        iy: usize,
        background: f64,
        perturbed: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grid resolution {resolution} cannot represent half order {half_order} (need at least {required})")]
    ResolutionMismatch {
        resolution: usize,
        half_order: usize,
        required: usize,
    },

    #[error("quasimomentum ({kx}, {ky}) outside [-pi, pi]^2")]
    QuasimomentumOutOfRange { kx: f64, ky: f64 },

    #[error("eigensolver failed to converge at k = ({kx}, {ky})")]
    EigensolverFailure { kx: f64, ky: f64 },

    #[error("band edge at k_x = {kx0} is attained at more than one k_y (minima at {first} and {second})")]
    DegenerateEdge { kx0: f64, first: f64, second: f64 },

    #[error("no gap with upper band {0} on this fiber")]
    NoSuchGap(usize),

    #[error("supercell of {n_cells} cells too narrow for defect half-width {rows} (need odd count >= {required})")]
    TooNarrowSupercell {
        n_cells: usize,
        rows: usize,
        required: usize,
    },

    #[error("form matrix {0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("mu = {mu} lies on the background spectrum (distance {distance})")]
    MuOnSpectrum { mu: f64, distance: f64 },

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("defect subspace is empty (perturbation numerically zero)")]
    EmptySubspace,

    #[error("bound ({which}) violated: measured {measured} > bound {bound}")]
    BoundViolation {
        which: &'static str,
        measured: f64,
        bound: f64,
        witness: Vec<f64>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

impl Error {
    /// Stable identifier used in reports and exit diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonPositiveEpsilon { .. } => "NonPositiveEpsilon",
            Error::DefectSignViolation { .. } => "DefectSignViolation",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ResolutionMismatch { .. } => "ResolutionMismatch",
            Error::QuasimomentumOutOfRange { .. } => "QuasimomentumOutOfRange",
            Error::EigensolverFailure { .. } => "EigensolverFailure",
            Error::DegenerateEdge { .. } => "DegenerateEdge",
            Error::NoSuchGap(_) => "NoSuchGap",
            Error::TooNarrowSupercell { .. } => "TooNarrowSupercell",
            Error::NotPositiveDefinite(_) => "NotPositiveDefinite",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::MuOnSpectrum { .. } => "MuOnSpectrum",
            Error::SolveFailure(_) => "SolveFailure",
            Error::EmptySubspace => "EmptySubspace",
            Error::BoundViolation { .. } => "BoundViolation",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
        }
    }

    /// Errors caused by the input description rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::NonPositiveEpsilon { .. }
                | Error::DefectSignViolation { .. }
                | Error::InvalidConfig(_)
                | Error::ResolutionMismatch { .. }
                | Error::QuasimomentumOutOfRange { .. }
                | Error::TooNarrowSupercell { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
