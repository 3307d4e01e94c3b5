//! End-to-end experiment orchestration: config parsing, the path-continuation
//! comparison, the robustness sweep and CSV/manifest outputs.

pub mod config;
pub mod metrics;
pub mod path_continuation;
pub mod report;
pub mod robustness;


pub use metrics::evaluate_mse;
