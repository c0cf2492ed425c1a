//! Dataset ingestion, fold plans and the on-disk feature cache.

mod folds;
mod manifest;
mod store;
pub mod synthetic;

pub use folds::{split_folds, FoldPlan, FoldSelector, Split};
pub use manifest::{build_manifest, ClipEntry, DatasetKind, DatasetManifest};
pub use store::{
    cache_features, load_examples, AudioSource, CacheReport, ExampleSet, FeatureStore, FileSource,
    StoreIndex, StoreRecord, STORE_FORMAT_VERSION,
};
