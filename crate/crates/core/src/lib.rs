//! Ordinal quantification toolkit: prevalence estimators over a hand-written
//! multinomial logistic regression, the artificial-prevalence stress test
//! scored by normalized match distance, greedy feature-block selection, and
//! the comment-based labelling pipeline that produces ordinal targets.

pub mod classifier;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod labelling;
pub mod quantify;
pub mod rng;
pub mod selection;
pub mod synth;

pub use classifier::{ClassWeighting, Hyper, HyperGrid, ModelSelection, ProbClassifier};
pub use data::{
    empirical_prevalence, Block, BlockSelection, Dataset, FeatureSchema, OrdinalLabel, PrevalenceVector,
    CLASS_NAMES, DEFAULT_CLASSES,
};
pub use error::{Error, Result};
pub use evaluation::{nmd, run_protocol, EvalResult, ProtocolConfig};
pub use labelling::{CommentRecord, LabelOptions, Task, Thresholds, Window};
pub use quantify::{QuantifierKind, QuantifierModel, QuantifierOptions};
pub use selection::{greedy_select, importance_report, GreedyConfig, ImportanceReport, SelectionTrace, StartPolicy};
pub use synth::{BlockSpec, SynthSpec};
