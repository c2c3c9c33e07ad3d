//! Multiple time series alignment with a convolutional piecewise-linear
//! warper, together with DTW and DBA baselines and the nearest-neighbour
//! classification harness used to compare them.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod net;
pub mod objective;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod warp;

pub use error::{Error, Result};
pub use losses::LossConfig;
