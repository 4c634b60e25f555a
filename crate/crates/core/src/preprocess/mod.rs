//! From raw observation events to model-ready feature groups.
//!
//! The pipeline is: [`window_events`] → [`standardize`] →
//! [`compute_time_deltas`] → a fill ([`interpolate_missing`] or
//! [`median_fill`]) → [`assemble_feature_groups`]. Percentile bucketing is the
//! alternative encoding used by the embedding baselines.

mod buckets;
mod dataset;
mod events;
mod sequence;
mod split;
mod window;

pub use buckets::BucketBoundaries;
pub use dataset::{BuildOptions, Dataset, DatasetRecord, TaskKind, DATASET_FORMAT};
pub use events::{read_labels_csv, write_labels_csv, Event, EventStream, FeatureDictionary, LabelRecord};
pub(crate) use events::{csv_err, format_float};
pub use sequence::{
    assemble, assemble_feature_groups, compute_time_deltas, fill, interpolate_missing, median_fill, standardize,
    FillStrategy, GroupLayout, GroupedSequence, StandardizationStats, DEFAULT_CLIP_LIMIT,
};
pub use split::{assign_split, split_by_entity, SplitFractions, SplitPart};
pub use window::{
    window_entity, window_events, WindowConfig, WindowedSequence, DEFAULT_HORIZON_SECONDS, DEFAULT_WINDOW_SECONDS,
};
