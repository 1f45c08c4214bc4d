//! Minimal neural-network toolkit: a reverse-mode tape, parameter storage,
//! recurrent layers, optimizers and a checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use checkpoint::{config_block, parse_config_block, Checkpoint};
pub use graph::{Graph, Var};
pub use layers::{GruRecurrence, Linear, Lstm};
pub use optim::{Adam, Sgd};
pub use params::{Grads, Mat, ParamId, ParamStore};
