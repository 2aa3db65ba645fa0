//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Model description did not match the schema. Carries the offending
    /// node id (empty for document-level problems) and the field name.
    #[error("parse error at node `{node}`, field `{field}`: {message}")]
    Parse {
        node: String,
        field: String,
        message: String,
    },

    /// Structural graph problem: dangling edge, cycle, disconnected parts.
    #[error("graph error: {0}")]
    Graph(String),

    /// Shape arithmetic produced an invalid result.
    #[error("shape error: {0}")]
    Shape(String),

    /// A parallelism configuration violates a divisibility constraint.
    #[error("config error: parameter `{parameter}` = {value}: {message}")]
    Config {
        parameter: String,
        value: u64,
        message: String,
    },

    /// Partition or SDF graph structure violates a precondition.
    #[error("structure error: {0}")]
    Structure(String),

    /// The analytic matrices are mutually inconsistent.
    #[error("model inconsistency: {0}")]
    Inconsistent(String),

    /// No feasible design point exists under the device constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Exhaustive enumeration refused because the space is too large.
    #[error("design space too large: {count} feasible configurations exceed cap {cap}")]
    SpaceTooLarge { count: u128, cap: u128 },

    /// Invalid argument to a numeric operation.
    #[error("argument error: {0}")]
    Argument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
