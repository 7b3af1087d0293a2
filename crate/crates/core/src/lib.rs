pub mod adaptor;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod layers;
pub mod model;
pub mod numeric;
pub mod params;

pub use error::{Error, Result};
