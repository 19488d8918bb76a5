//! Reading study data and writing results.

pub mod dataset;
pub mod forest;
pub mod report;

pub use dataset::{parse_csv, read_csv_file, write_csv, ParsedCsv};
pub use forest::{forest_payload, ForestPayload, ForestRow, ForestSummary, Interval};
pub use report::{
    results_csv, sha256_hex, simulation_csv, simulation_json, AnalysisReport, DiagnosticsReport,
    InputSummary, Provenance, SCHEMA_VERSION,
};
