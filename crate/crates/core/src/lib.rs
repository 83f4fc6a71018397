pub mod corpus;
pub mod dpl;
pub mod error;
pub mod evidence;
pub mod factor_graph;
pub mod metrics;
pub mod predictor;
pub mod s4;

pub use error::{Error, Result};
