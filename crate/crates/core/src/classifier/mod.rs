//! Probabilistic classification: multinomial logistic regression, out-of-fold
//! posteriors and quantification-aware model selection.

pub mod cv;
pub mod grid;
pub mod logreg;

pub use cv::{cv_posteriors, cv_posteriors_with_folds, effective_folds, stratified_folds, CvPosteriors};
pub use grid::{grid_search, GridOutcome, HyperGrid, ModelSelection};
pub use logreg::{argmax_rows, ClassWeighting, FitOptions, Hyper, ProbClassifier, Standardizer, POSTERIOR_FLOOR};
