//! Machine unlearning by fine-tuning on hybrid instances: forgetting samples
//! blended with remaining samples under weighting masks and labeled with a
//! mix of the remaining sample's class and the original model's runner-up
//! classes.

pub mod builder;
pub mod checks;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
mod io;
pub mod mask;
pub mod methods;
pub mod nn;
pub mod seed;

pub use builder::{build_unlearning_set, BuildOptions, BuilderVariant, Provenance, UnlearningInstance};
pub use data::{Dataset, ForgettingSpec, ImageSample, Label, LabeledInstance, Shape, Split, TrainingTrace};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalSplits, Metric, MetricsReport};
pub use mask::{MaskConfig, MaskFamily, MaskSet, WeightingMask};
pub use methods::{unlearn, Method, MethodParams, UnlearnOutcome, UnlearnRequest};
pub use nn::{Architecture, Model, TrainConfig};
