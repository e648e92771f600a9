pub mod analysis;
pub mod cli;
pub mod crossval;
pub mod design;
pub mod dtw;
pub mod error;
pub mod features;
pub mod io;
pub mod pipeline;
pub mod preprocess;
pub mod solver;
pub mod stats;
pub mod synthdata;
pub mod varpart;

pub use error::{Error, Result};
pub use preprocess::MultiChannelSeries;
