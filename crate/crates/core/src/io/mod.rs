//! On-disk formats: feature files, dataset manifests, results and reports.

pub mod features;
pub mod manifest;
pub mod results;

pub use manifest::{load_dataset, write_dataset, DatasetPaths, GridOptions};
pub use results::{read_results, write_results};
