//! Search-trace learning for grid planning tasks: A* trace generation,
//! tokenization, an encoder-decoder Transformer with a hand-written backward
//! pass, training, evaluation and search-dynamics bootstrapping.

mod error;

pub mod astar;
pub mod bootstrap;
pub mod dataset;
pub mod eval;
pub mod grid;
pub mod model;
pub mod tokens;
pub mod train;

pub use error::{Error, Result};
