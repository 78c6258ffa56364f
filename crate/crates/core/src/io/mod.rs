//! File formats: datasets, model files and results CSV.

pub mod dataset;
pub mod model;
pub mod results;

pub use dataset::{load_dataset, CameraIntrinsics, Dataset, DatasetError, DatasetHeader, Source};
pub use model::{load_models, save_models, ModelFileError, SavedModel};
pub use results::{export_results_csv, write_results_csv, ResultsError};
