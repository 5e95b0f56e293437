//! Record schema, preprocessing, splitting, synthetic data and file formats.

pub mod checkpoint;
pub mod json;
pub mod preprocess;
pub mod record;
pub mod split;
pub mod synthetic;

pub use preprocess::{apply_preprocessor, fit_preprocessor, interpolate_missing, PreprocessStats, Prepared};
pub use record::{load_dataset, save_dataset, EnterpriseRecord, LoadReport, QuarterlySeries, Reject};
pub use split::{split_dataset, DatasetSplit, SplitManifest, DEFAULT_RATIOS};
pub use synthetic::{generate_synthetic, SyntheticConfig};
