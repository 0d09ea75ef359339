//! Relationship-aware stock movement prediction.
//!
//! Price panels are loaded and windowed by [`data`]; shareholding, industry and
//! topicality relations become normalized Laplacians in [`graphs`]; [`net`]
//! holds the graph-convolutional GRU with its hand-written backward pass;
//! [`optim`] trains it with Adam; [`metrics`] scores predictions; [`synth`]
//! generates markets with planted lead-lag structure.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graphs;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod synth;

pub use data::{PanelDataset, Prepared, StockUniverse, WindowSample};
pub use error::{Error, Result};
pub use graphs::{AdjacencyMatrix, GraphKind, GraphSet, Laplacian};
pub use metrics::{ConfusionCounts, MetricsReport};
pub use net::{Dims, GraphOperators, Mode, ModelParams};
pub use optim::{TrainConfig, TrainHistory, TrainOutcome};
pub use synth::SynthConfig;
