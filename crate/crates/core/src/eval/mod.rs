//! Scenario files, end-to-end runs, metrics and report output.

pub mod metrics;
pub mod ply;
pub mod runner;
pub mod scenario;

pub use metrics::{compute_metrics, Metrics};
pub use ply::write_ply;
pub use runner::{generate, run_scenario, Generated, ObjectRow, RunOptions, RunOutput, RunReport, VerdictRecord};
pub use scenario::{resolve_seed, Scenario};

/// Scenario files shipped with the crate, by name.
pub const BUNDLED_SCENARIOS: &[(&str, &str)] = &[
    ("paper_table1", include_str!("../../scenarios/paper_table1.json")),
    ("low_overlap", include_str!("../../scenarios/low_overlap.json")),
];

pub fn bundled_scenario(name: &str) -> Option<&'static str> {
    BUNDLED_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}
