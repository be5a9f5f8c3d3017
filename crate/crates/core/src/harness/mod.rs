//! Data generation, end-to-end runs, and reporting.

pub mod metrics;
pub mod pipeline;
pub mod synthetic;

pub use metrics::{clustering_metrics, read_partition, ClusteringScores};
pub use pipeline::{execute_method, run_pipeline, Method, MetricsReport, RunConfig};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec, Variant};
