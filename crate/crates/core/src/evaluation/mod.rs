//! Error metrics, artificial-prevalence sampling and the stress-test protocol.

pub mod app;
pub mod metrics;
pub mod protocol;

pub use app::{draw_at_prevalence, kraemer_sample, largest_remainder, ClassIndex};
pub use metrics::{match_distance, nmd, rie};
pub use protocol::{run_protocol, EvalResult, ProtocolConfig, SampleScore};
