//! Prevalence estimators: classify-and-count (CC), probabilistic adjusted
//! classify-and-count (PACC), EM-based prior adaptation (EMQ) and the
//! maximum-likelihood prevalence baseline (MLPE).
//!
//! Every estimator that uses a classifier works from the test posteriors, so
//! callers evaluating many samples drawn from one pool can compute the
//! posteriors once and call [`QuantifierModel::estimate_from_posteriors`] on
//! row subsets.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};

use crate::classifier::cv::cv_posteriors;
use crate::classifier::logreg::{argmax_rows, Hyper, ProbClassifier};
use crate::data::{empirical_prevalence, Dataset, OrdinalLabel, PrevalenceVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuantifierKind {
    Cc,
    Pacc,
    Emq,
    Mlpe,
}

impl QuantifierKind {
    pub const ALL: [QuantifierKind; 4] = [
        QuantifierKind::Cc,
        QuantifierKind::Pacc,
        QuantifierKind::Emq,
        QuantifierKind::Mlpe,
    ];

    /// Whether the estimator trains a classifier (and so benefits from tuning).
    pub fn uses_classifier(self) -> bool {
        self != QuantifierKind::Mlpe
    }
}

impl FromStr for QuantifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cc" => Ok(QuantifierKind::Cc),
            "pacc" => Ok(QuantifierKind::Pacc),
            "emq" => Ok(QuantifierKind::Emq),
            "mlpe" => Ok(QuantifierKind::Mlpe),
            other => Err(Error::Parameter(format!("unknown quantifier `{other}`"))),
        }
    }
}

impl fmt::Display for QuantifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantifierKind::Cc => "CC",
            QuantifierKind::Pacc => "PACC",
            QuantifierKind::Emq => "EMQ",
            QuantifierKind::Mlpe => "MLPE",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantifierOptions {
    /// Folds used by PACC to estimate the correction matrix.
    pub cv_folds: usize,
    pub emq_max_iter: usize,
    pub emq_eps: f64,
    /// Seed for the PACC fold assignment.
    pub seed: u64,
}

impl Default for QuantifierOptions {
    fn default() -> Self {
        QuantifierOptions {
            cv_folds: 10,
            emq_max_iter: 1000,
            emq_eps: 1e-6,
            seed: 0,
        }
    }
}

/// Result of an EM run.
#[derive(Clone, Debug, PartialEq)]
pub struct EmqOutcome {
    pub prevalence: PrevalenceVector,
    /// L1 distance between consecutive estimates, one entry per iteration.
    pub steps: Vec<f64>,
    pub converged: bool,
}

/// A fitted prevalence estimator.
#[derive(Clone, Debug)]
pub struct QuantifierModel {
    kind: QuantifierKind,
    classifier: Option<ProbClassifier>,
    train_prior: PrevalenceVector,
    /// PACC only: column `c` is the mean out-of-fold posterior of class `c`.
    correction: Option<Array2<f64>>,
    options: QuantifierOptions,
}

impl QuantifierModel {
    pub fn fit(kind: QuantifierKind, train: &Dataset, hyper: Hyper, options: QuantifierOptions) -> Result<Self> {
        match kind {
            QuantifierKind::Cc => Self::fit_cc(train, hyper),
            QuantifierKind::Pacc => Self::fit_pacc(train, hyper, options),
            QuantifierKind::Emq => Self::fit_emq(train, hyper, options),
            QuantifierKind::Mlpe => Self::fit_mlpe(train),
        }
    }

    pub fn fit_cc(train: &Dataset, hyper: Hyper) -> Result<Self> {
        Ok(QuantifierModel {
            kind: QuantifierKind::Cc,
            classifier: Some(ProbClassifier::fit(train, hyper)?),
            train_prior: empirical_prevalence(train.labels(), train.n_classes())?,
            correction: None,
            options: QuantifierOptions::default(),
        })
    }

    pub fn fit_pacc(train: &Dataset, hyper: Hyper, options: QuantifierOptions) -> Result<Self> {
        let cv = cv_posteriors(train, options.cv_folds, hyper, options.seed)?;
        let correction = correction_matrix(cv.posteriors.view(), train.labels(), train.n_classes());
        Ok(QuantifierModel {
            kind: QuantifierKind::Pacc,
            classifier: Some(cv.model),
            train_prior: empirical_prevalence(train.labels(), train.n_classes())?,
            correction: Some(correction),
            options,
        })
    }

    pub fn fit_emq(train: &Dataset, hyper: Hyper, options: QuantifierOptions) -> Result<Self> {
        let prior = empirical_prevalence(train.labels(), train.n_classes())?;
        Ok(QuantifierModel {
            kind: QuantifierKind::Emq,
            classifier: Some(ProbClassifier::fit(train, hyper)?),
            train_prior: floor_prior(&prior),
            correction: None,
            options,
        })
    }

    pub fn fit_mlpe(train: &Dataset) -> Result<Self> {
        Ok(QuantifierModel {
            kind: QuantifierKind::Mlpe,
            classifier: None,
            train_prior: empirical_prevalence(train.labels(), train.n_classes())?,
            correction: None,
            options: QuantifierOptions::default(),
        })
    }

    /// Builds an EMQ/CC/PACC model around an existing classifier.
    pub fn from_parts(
        kind: QuantifierKind,
        classifier: Option<ProbClassifier>,
        train_prior: PrevalenceVector,
        correction: Option<Array2<f64>>,
        options: QuantifierOptions,
    ) -> Result<Self> {
        if kind.uses_classifier() && classifier.is_none() {
            return Err(Error::Parameter(format!("{kind} requires a classifier")));
        }
        if kind == QuantifierKind::Pacc && correction.is_none() {
            return Err(Error::Parameter("PACC requires a correction matrix".into()));
        }
        let train_prior = if kind == QuantifierKind::Emq {
            floor_prior(&train_prior)
        } else {
            train_prior
        };
        Ok(QuantifierModel {
            kind,
            classifier,
            train_prior,
            correction,
            options,
        })
    }

    pub fn kind(&self) -> QuantifierKind {
        self.kind
    }

    pub fn train_prior(&self) -> &PrevalenceVector {
        &self.train_prior
    }

    pub fn classifier(&self) -> Option<&ProbClassifier> {
        self.classifier.as_ref()
    }

    pub fn correction(&self) -> Option<&Array2<f64>> {
        self.correction.as_ref()
    }

    /// Test posteriors, or `None` for MLPE.
    pub fn posteriors(&self, features: ArrayView2<'_, f64>) -> Result<Option<Array2<f64>>> {
        self.classifier
            .as_ref()
            .map(|c| c.predict_proba(features))
            .transpose()
    }

    pub fn estimate(&self, features: ArrayView2<'_, f64>) -> Result<PrevalenceVector> {
        if features.nrows() == 0 {
            return Err(Error::EmptyInput("empty test sample".into()));
        }
        match self.posteriors(features)? {
            Some(p) => self.estimate_from_posteriors(p.view()),
            None => Ok(self.train_prior.clone()),
        }
    }

    /// Estimate from precomputed posteriors of the sample's items.
    pub fn estimate_from_posteriors(&self, posteriors: ArrayView2<'_, f64>) -> Result<PrevalenceVector> {
        if posteriors.nrows() == 0 {
            return Err(Error::EmptyInput("empty test sample".into()));
        }
        match self.kind {
            QuantifierKind::Mlpe => Ok(self.train_prior.clone()),
            QuantifierKind::Cc => classify_and_count(posteriors),
            QuantifierKind::Pacc => {
                let q = mean_posterior(posteriors)?;
                let corr = self.correction.as_ref().expect("PACC model carries a correction");
                pacc_correct(corr.view(), q.as_slice())
            }
            QuantifierKind::Emq => Ok(emq(
                posteriors,
                &self.train_prior,
                self.options.emq_max_iter,
                self.options.emq_eps,
            )?
            .prevalence),
        }
    }

    /// EM estimate with explicit stopping parameters.
    pub fn estimate_emq(&self, features: ArrayView2<'_, f64>, max_iter: usize, eps: f64) -> Result<EmqOutcome> {
        let post = self
            .posteriors(features)?
            .ok_or_else(|| Error::Parameter("EM requires a classifier".into()))?;
        emq(post.view(), &self.train_prior, max_iter, eps)
    }
}

fn floor_prior(p: &PrevalenceVector) -> PrevalenceVector {
    let floored: Vec<f64> = p.as_slice().iter().map(|&v| v.max(1e-9)).collect();
    PrevalenceVector::normalized(floored).expect("floored prior is positive")
}

/// Fraction of items whose argmax posterior is each class.
pub fn classify_and_count(posteriors: ArrayView2<'_, f64>) -> Result<PrevalenceVector> {
    let predicted: Vec<OrdinalLabel> = argmax_rows(posteriors);
    empirical_prevalence(&predicted, posteriors.ncols())
}

pub fn mean_posterior(posteriors: ArrayView2<'_, f64>) -> Result<PrevalenceVector> {
    let mean = posteriors
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::EmptyInput("no posteriors".into()))?;
    PrevalenceVector::normalized(mean.to_vec())
}

/// Column `c` is the mean posterior over instances of true class `c`; a class
/// without instances gets the identity column.
pub fn correction_matrix(posteriors: ArrayView2<'_, f64>, labels: &[OrdinalLabel], n_classes: usize) -> Array2<f64> {
    let mut m = Array2::zeros((n_classes, n_classes));
    let mut counts = vec![0usize; n_classes];
    for (row, l) in posteriors.rows().into_iter().zip(labels) {
        let c = l.index();
        counts[c] += 1;
        for (r, &v) in row.iter().enumerate() {
            m[[r, c]] += v;
        }
    }
    for c in 0..n_classes {
        if counts[c] == 0 {
            m[[c, c]] = 1.0;
        } else {
            for r in 0..n_classes {
                m[[r, c]] /= counts[c] as f64;
            }
        }
    }
    m
}

/// Solves `min ‖corr·p − q‖₂` over the simplex.
pub fn pacc_correct(corr: ArrayView2<'_, f64>, q: &[f64]) -> Result<PrevalenceVector> {
    let n = q.len();
    if corr.dim() != (n, n) {
        return Err(Error::Shape(format!("correction is {:?}, expected {n}x{n}", corr.dim())));
    }
    let p = simplex_least_squares(corr, q, 10_000, 1e-10);
    PrevalenceVector::normalized(p)
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projected gradient descent for `min ‖A·p − b‖²` with `p` on the simplex,
/// using the fixed step `1 / (2·λmax(AᵀA))`. Stops when no component moves
/// more than `tol` or after `max_iter` steps.
pub fn simplex_least_squares(a: ArrayView2<'_, f64>, b: &[f64], max_iter: usize, tol: f64) -> Vec<f64> {
    let n = a.ncols();
    let ata = a.t().dot(&a);
    let atb = a.t().dot(&ndarray::ArrayView1::from(b));
    let lipschitz = 2.0 * largest_eigenvalue(&ata);
    let mut p = vec![1.0 / n as f64; n];
    if lipschitz <= 0.0 {
        return p;
    }
    let step = 1.0 / lipschitz;
    for _ in 0..max_iter {
        let ap = ata.dot(&ndarray::ArrayView1::from(&p[..]));
        let moved: Vec<f64> = (0..n).map(|i| p[i] - step * 2.0 * (ap[i] - atb[i])).collect();
        let next = project_to_simplex(&moved);
        let delta = next.iter().zip(&p).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        p = next;
        if delta < tol {
            break;
        }
    }
    p
}

/// Power iteration on a symmetric positive semi-definite matrix.
fn largest_eigenvalue(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut v = ndarray::Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-14 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // A small margin keeps the step inside the convergence region.
    lambda * (1.0 + 1e-9)
}

/// Saerens-style EM prior adaptation.
///
/// Starting from the training prior, each iteration reweights every item's
/// original posterior by `p̂_c / prior_c`, renormalizes, and takes the mean as
/// the new estimate. Stops when the L1 change drops below `eps` or after
/// `max_iter` iterations (then `converged` is false).
pub fn emq(
    posteriors: ArrayView2<'_, f64>,
    train_prior: &PrevalenceVector,
    max_iter: usize,
    eps: f64,
) -> Result<EmqOutcome> {
    let n = train_prior.len();
    if posteriors.ncols() != n {
        return Err(Error::Shape(format!(
            "posteriors have {} columns, prior has {n}",
            posteriors.ncols()
        )));
    }
    if posteriors.nrows() == 0 {
        return Err(Error::EmptyInput("empty test sample".into()));
    }
    let prior = train_prior.as_slice();
    if prior.iter().any(|&v| v <= 0.0) {
        return Err(Error::Parameter("EM requires a strictly positive training prior".into()));
    }
    let rows = posteriors.nrows() as f64;
    let mut current = prior.to_vec();
    let mut steps = Vec::new();
    let mut converged = false;
    let mut ratio = vec![0.0; n];
    let mut row_buf = vec![0.0; n];
    for _ in 0..max_iter.max(1) {
        for c in 0..n {
            ratio[c] = current[c] / prior[c];
        }
        let mut next = vec![0.0; n];
        for row in posteriors.rows() {
            let mut s = 0.0;
            for c in 0..n {
                row_buf[c] = row[c] * ratio[c];
                s += row_buf[c];
            }
            for c in 0..n {
                next[c] += row_buf[c] / s;
            }
        }
        next.iter_mut().for_each(|v| *v /= rows);
        let step: f64 = next.iter().zip(&current).map(|(a, b)| (a - b).abs()).sum();
        steps.push(step);
        current = next;
        if step < eps {
            converged = true;
            break;
        }
    }
    Ok(EmqOutcome {
        prevalence: PrevalenceVector::normalized(current)?,
        steps,
        converged,
    })
}
