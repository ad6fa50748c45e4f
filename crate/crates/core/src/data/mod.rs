//! Dataset types, the UDS file format, synthetic blob generation and
//! forgetting-set selection.

mod split;
mod synth;
mod types;
mod uds;

pub use split::{split_forget, ForgetMode, ForgettingSpec};
pub use synth::{blob_templates, synth_blobs, synth_blobs_split, BlobParams, DEFAULT_SPREAD};
pub use types::{
    validate_distribution, Dataset, ImageSample, Label, LabeledInstance, Shape, Split,
    TrainingTrace, DISTRIBUTION_TOLERANCE,
};
pub use uds::{decode_dataset, encode_dataset, load_raw, save_raw, DATASET_MAGIC};
