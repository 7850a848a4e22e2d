pub mod alloop;
pub mod crf;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod pool;
pub mod raster;
pub mod segmenter;
pub mod selection;
pub mod synthetic;
pub mod weaklabeler;

pub use error::{Error, Result};
