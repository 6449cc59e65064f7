//! Admissible time windows from worst-case searches over scenario sets.

pub mod bo;
pub mod gp;
pub mod window;

pub use bo::{bo_maximize, random_search, BoConfig, BoOutcome, Evaluation, TraceEntry};
pub use gp::{GpHyper, GpSurrogate};
pub use window::{
    grasp_window_search, placement_window_search, violation_search, window_search, EvaluationRecord, ViolationResult,
    WindowSearchConfig, WindowSearchResult,
};
