use thiserror::Error;

/// Errors surfaced by fallible library operations.
///
/// Programmer errors (shape mismatches, invalid op arguments) panic instead;
/// these variants cover data-dependent conditions a caller can react to.
#[derive(Debug, Error)]
pub enum AugError {
    /// Training produced a non-finite loss or gradient.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// The invariance baseline collapsed: the model maps every input to
    /// (nearly) the same output, so the score is undefined.
    #[error("model outputs collapsed (baseline distance {baseline:.3e} < 1e-9)")]
    CollapsedOutput { baseline: f64 },

    /// A set of transformations failed the group closure/inverse check.
    #[error("transformation set is not a group: {reason}")]
    NotAGroup { reason: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
