use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("invalid problem: {0}")]
    Invalid(String),

    #[error("density is negative ({value}) at {point:?}")]
    NegativeDensity { value: f64, point: Vec<f64> },

    #[error("D\u{3c6} D\u{3c6}^T is singular (det = {det:e}) at {point:?}")]
    Singular { det: f64, point: Vec<f64> },

    #[error("smallest singular value {observed:e} fell below the supplied bound {bound:e} at {point:?}")]
    BoundViolated {
        observed: f64,
        bound: f64,
        point: Vec<f64>,
    },

    #[error("projection did not converge within {steps} steps (residual {residual:e})")]
    NonConvergence { steps: usize, residual: f64 },

    #[error("degenerate chart at {point:?}: surface Gram determinant {det:e}")]
    DegenerateChart { det: f64, point: Vec<f64> },

    #[error("chart leaves the level set at u = {point:?}: |phi(g(u)) - s| = {residual:e}")]
    ChartOffLevelSet { residual: f64, point: Vec<f64> },

    #[error("supplied inverse does not invert the map at {point:?} (error {residual:e})")]
    RoundTrip { residual: f64, point: Vec<f64> },

    #[error("implicit solution misses the level set at u = {point:?} (residual {residual:e})")]
    ImplicitResidual { residual: f64, point: Vec<f64> },

    #[error("partial derivative of the constraint vanishes at {point:?}")]
    VanishingDerivative { point: Vec<f64> },

    #[error("conditioning on a null region: marginal density {value:e} at the level")]
    NullConditioning { value: f64 },

    #[error("total mass {0:e} is zero")]
    ZeroMass(f64),

    #[error("too many points outside the expression domain: {skipped} of {total}")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("table I/O: {0}")]
    Table(String),
}

impl Error {
    /// Evaluation failures that integrators and samplers skip and count.
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Expr(e) if e.is_domain())
    }
}

/// Fail when more than 1% of `total` points (and more than one point) were
/// outside the expression domain.
pub fn check_skips(skipped: usize, total: usize) -> Result<()> {
    if skipped > 1 && skipped * 100 > total {
        return Err(Error::TooManySkipped { skipped, total });
    }
    Ok(())
}
