pub mod aggregation;
pub mod analysis;
pub mod copollutants;
pub mod apportion;
pub mod disaggregation;
pub mod equations;
pub mod error;
pub mod gas;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod quality;
pub mod temporal;

pub use error::{Error, Result};
