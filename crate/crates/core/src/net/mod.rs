//! Graph convolution over stock relationships feeding a GRU that
//! runs across the lag window, followed by a sigmoid predictor.
//!
//! Per day `t` of a window the two-layer graph network produces cross-effect
//! features `G_t = relu(P₂ · relu(P₁ · X_t · W₁) · W₂)`. The GRU consumes the
//! concatenation `[H_{t−1}, X_t, G_t]`; after the last day the hidden state is
//! mapped through `σ(H · W_g)` and `σ(· w)` to one probability per stock.

mod backward;
mod forward;
mod params;
mod propagator;

use std::fmt;
use std::str::FromStr;

pub use backward::backward_window;
pub use forward::{
    forward_window, gcn_layer, gru_output, gru_step, multi_gcn_forward, predict, Activation, ForwardTrace, GateTrace,
    GcnTrace, StepTrace,
};
pub use params::{Dims, ModelParams, TensorMut, TensorRef};
pub use propagator::{assemble_propagator, propagator_basis, GraphOperators};

use crate::error::Error;
use crate::graphs::GraphKind;

/// Which mixing matrix feeds the graph convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Polynomial filter on one pre-defined graph.
    Single(GraphKind),
    /// Trainable combination of all three pre-defined graphs.
    Multi,
    /// Fully trainable N×N matrix.
    Dynamic,
    /// No graph path; the GRU sees only the raw features.
    None,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Single(GraphKind::Shareholding),
        Mode::Single(GraphKind::Industry),
        Mode::Single(GraphKind::Topicality),
        Mode::Multi,
        Mode::Dynamic,
        Mode::None,
    ];

    pub fn has_gcn(self) -> bool {
        self != Mode::None
    }

    pub fn uses_polynomial(self) -> bool {
        matches!(self, Mode::Single(_) | Mode::Multi)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Single(kind) => write!(f, "single-{}", kind.letter()),
            Mode::Multi => f.write_str("multi"),
            Mode::Dynamic => f.write_str("dynamic"),
            Mode::None => f.write_str("none"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "multi" => Ok(Mode::Multi),
            "dynamic" => Ok(Mode::Dynamic),
            "none" => Ok(Mode::None),
            _ => lower
                .strip_prefix("single-")
                .ok_or_else(|| Error::Invalid(format!("unknown mode `{s}`")))?
                .parse()
                .map(Mode::Single),
        }
    }
}
