//! Stratified k-fold estimation of out-of-fold posteriors.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::logreg::{Hyper, ProbClassifier};
use crate::data::{Dataset, OrdinalLabel};
use crate::error::{Error, Result};
use crate::rng;

/// Output of [`cv_posteriors`].
#[derive(Clone, Debug)]
pub struct CvPosteriors {
    /// Row `i` comes from a model that did not see instance `i`.
    pub posteriors: Array2<f64>,
    /// Classifier refit on the whole training set.
    pub model: ProbClassifier,
    /// Number of folds actually used.
    pub folds: usize,
    /// Training-set size of each fold model.
    pub fold_train_sizes: Vec<usize>,
}

/// Fold count after shrinking `k` to the smallest present class (never below 2).
pub fn effective_folds(labels: &[OrdinalLabel], n_classes: usize, k: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for l in labels {
        counts[l.index()] += 1;
    }
    let min_present = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    k.min(min_present).max(2)
}

/// Assigns each instance to one of `k` folds so that every class is spread
/// round-robin over the folds after a seeded shuffle.
pub fn stratified_folds(labels: &[OrdinalLabel], n_classes: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng::stream(seed, &[rng::tag::FOLDS, c as u64]));
        for &i in members.iter() {
            assignment[i] = next % k;
            next += 1;
        }
    }
    assignment
}

/// Out-of-fold posteriors with stratified folds; `k` is lowered to the
/// smallest class count when some class is too small.
pub fn cv_posteriors(train: &Dataset, k: usize, hyper: Hyper, seed: u64) -> Result<CvPosteriors> {
    if k < 2 {
        return Err(Error::Parameter(format!("fold count must be at least 2, got {k}")));
    }
    let k = effective_folds(train.labels(), train.n_classes(), k);
    let folds = stratified_folds(train.labels(), train.n_classes(), k, seed);
    cv_posteriors_with_folds(train, &folds, hyper)
}

/// Out-of-fold posteriors for an explicit fold assignment (fold ids `0..k`).
pub fn cv_posteriors_with_folds(train: &Dataset, folds: &[usize], hyper: Hyper) -> Result<CvPosteriors> {
    if folds.len() != train.len() {
        return Err(Error::Shape("fold assignment length differs from dataset".into()));
    }
    let k = folds.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Parameter("need at least 2 folds".into()));
    }
    // (held-out rows, their posteriors, training size) per fold.
    type FoldOutput = (Vec<usize>, Array2<f64>, usize);
    let per_fold: Vec<Result<FoldOutput>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&i| folds[i] == f);
            let model = ProbClassifier::fit(&train.select_rows(&kept), hyper)?;
            let held_x = train.features().select(ndarray::Axis(0), &held);
            Ok((held, model.predict_proba(held_x.view())?, kept.len()))
        })
        .collect();
    let mut posteriors = Array2::zeros((train.len(), train.n_classes()));
    let mut fold_train_sizes = Vec::with_capacity(k);
    for r in per_fold {
        let (held, p, size) = r?;
        for (row, &i) in held.iter().enumerate() {
            posteriors.row_mut(i).assign(&p.row(row));
        }
        fold_train_sizes.push(size);
    }
    let model = ProbClassifier::fit(train, hyper)?;
    Ok(CvPosteriors {
        posteriors,
        model,
        folds: k,
        fold_train_sizes,
    })
}
