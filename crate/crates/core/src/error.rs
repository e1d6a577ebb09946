use thiserror::Error;

use crate::spec_model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tree too large: {nodes} nodes exceeds the cap of {cap}")]
    NodeCap { nodes: u128, cap: u128 },

    #[error("{what}: {count} exceeds the enumeration cap of {cap}")]
    EnumerationCap {
        what: &'static str,
        count: u128,
        cap: u128,
    },

    #[error(
        "implicit step is not a contraction: dt*L = {product:.6} >= 1 (dt = {dt}, L = {lipschitz}); {advice}"
    )]
    Contraction {
        dt: f64,
        lipschitz: f64,
        product: f64,
        advice: String,
    },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("terminal value outside the constraint domain at leaf {leaf}, mode pair ({i}, {j}): violation {excess:e}")]
    TerminalOutsideDomain {
        leaf: usize,
        i: usize,
        j: usize,
        excess: f64,
    },

    #[error("oblique projection stalled after {sweeps} sweeps; loop {loop_desc} has alternating cost {cost:e}")]
    ProjectionStalled {
        sweeps: usize,
        loop_desc: String,
        cost: f64,
    },

    #[error("payoff is indeterminate at node {node}: children mix +inf and -inf values")]
    Indeterminate { node: usize },

    #[error("invalid game specification:\n{0}")]
    InvalidSpec(ValidationReport),

    #[error("usage error: {0}")]
    Usage(String),
}
