//! Quantification-oriented hyperparameter selection: each grid point is
//! scored by the mean NMD of its quantifier over artificial-prevalence samples
//! drawn from a held-out part of the training set.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::logreg::{ClassWeighting, Hyper};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::protocol::{app_samples, score_samples};
use crate::quantify::{QuantifierKind, QuantifierModel, QuantifierOptions};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct HyperGrid {
    /// Inverse regularization strengths C.
    pub regs: Vec<f64>,
    pub weightings: Vec<ClassWeighting>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            regs: vec![0.001, 0.01, 0.1, 1.0, 10.0, 100.0],
            weightings: vec![ClassWeighting::Uniform, ClassWeighting::Balanced],
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.regs.is_empty() || self.weightings.is_empty() {
            return Err(Error::Parameter("hyperparameter grid is empty".into()));
        }
        if let Some(r) = self.regs.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Parameter(format!("grid regularization {r} is not positive")));
        }
        Ok(())
    }

    /// Grid points ordered from strongest to weakest regularization.
    pub fn points(&self) -> Vec<Hyper> {
        let mut regs = self.regs.clone();
        regs.sort_by(f64::total_cmp);
        regs.dedup();
        regs.iter()
            .flat_map(|&reg| self.weightings.iter().map(move |&weighting| Hyper { reg, weighting }))
            .collect()
    }
}

/// Inner split used to score grid points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSelection {
    pub train_fraction: f64,
    pub samples: usize,
    pub sample_size: usize,
}

impl Default for ModelSelection {
    fn default() -> Self {
        ModelSelection {
            train_fraction: 0.6,
            samples: 100,
            sample_size: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub best: Hyper,
    /// Mean validation NMD per grid point; `None` when the point failed.
    pub scores: Vec<(Hyper, Option<f64>)>,
}

/// Stratified split of `0..labels.len()` into (fit, validation) positions.
fn stratified_split(data: &Dataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class = vec![Vec::new(); data.n_classes()];
    for (i, l) in data.labels().iter().enumerate() {
        by_class[l.index()].push(i);
    }
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng::stream(seed, &[rng::tag::SPLIT, c as u64]));
        let k = ((members.len() as f64 * fraction).round() as usize).clamp(members.len().min(1), members.len());
        fit.extend_from_slice(&members[..k]);
        val.extend_from_slice(&members[k..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

/// Returns the grid point with the lowest mean validation NMD; ties go to the
/// more strongly regularized point. Failing points are skipped.
pub fn grid_search(
    train: &Dataset,
    grid: &HyperGrid,
    kind: QuantifierKind,
    options: QuantifierOptions,
    selection: &ModelSelection,
    seed: u64,
) -> Result<GridOutcome> {
    grid.validate()?;
    let points = grid.points();
    if points.len() == 1 {
        return Ok(GridOutcome {
            best: points[0],
            scores: vec![(points[0], None)],
        });
    }
    let (fit_rows, val_rows) = stratified_split(train, selection.train_fraction, seed);
    if val_rows.is_empty() {
        return Err(Error::Parameter("training set too small for a validation split".into()));
    }
    let fit = train.select_rows(&fit_rows);
    let val = train.select_rows(&val_rows);
    let (samples, _) = app_samples(&val, selection.samples, selection.sample_size, seed, &[rng::tag::APP])?;
    if samples.is_empty() {
        return Err(Error::Evaluation("no feasible validation samples".into()));
    }

    let scores: Vec<(Hyper, Option<f64>)> = points
        .par_iter()
        .map(|&h| {
            let scored = QuantifierModel::fit(kind, &fit, h, options)
                .and_then(|m| score_samples(&m, val.features(), &samples));
            match scored {
                Ok(s) => (h, Some(s.iter().map(|(_, e)| e).sum::<f64>() / s.len() as f64)),
                Err(e) => {
                    log::warn!("grid point C={} {} failed: {e}", h.reg, h.weighting);
                    (h, None)
                }
            }
        })
        .collect();

    let mut best: Option<(Hyper, f64)> = None;
    for &(h, s) in &scores {
        if let Some(s) = s {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((h, s));
            }
        }
    }
    match best {
        Some((best, _)) => Ok(GridOutcome { best, scores }),
        None => Err(Error::Evaluation("every grid point failed".into())),
    }
}
