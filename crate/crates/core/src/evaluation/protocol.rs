//! The incremental-training-size stress test.
//!
//! For each repetition the data is split into a labelled pool `L` and an
//! unlabelled pool `U`. Test samples are materialized from `U` at uniformly
//! drawn prevalence vectors, and a quantifier trained on each growing prefix
//! `T_t` of `L` is scored by NMD on every sample. The mean over training sizes
//! of the per-size mean NMD is the MNMD.

use std::io::{BufRead, Write};

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::app::{kraemer_sample, ClassIndex};
use super::metrics::nmd;
use crate::classifier::grid::{grid_search, HyperGrid, ModelSelection};
use crate::classifier::logreg::Hyper;
use crate::data::{empirical_prevalence, BlockSelection, Dataset, PrevalenceVector};
use crate::error::{Error, Result};
use crate::quantify::{QuantifierKind, QuantifierModel, QuantifierOptions};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub repetitions: usize,
    pub train_pool_size: usize,
    pub batch_size: usize,
    pub batch_count: usize,
    pub app_samples: usize,
    pub app_sample_size: usize,
    pub seed: u64,
    /// Hyperparameter grid searched at every training size; `None` uses `hyper`.
    pub grid: Option<HyperGrid>,
    pub hyper: Hyper,
    pub model_selection: ModelSelection,
    pub quantifier: QuantifierOptions,
    /// Runs with a larger fraction of infeasible test samples fail.
    pub max_skip_fraction: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            repetitions: 5,
            train_pool_size: 8000,
            batch_size: 500,
            batch_count: 16,
            app_samples: 1000,
            app_sample_size: 500,
            seed: 0,
            grid: Some(HyperGrid::default()),
            hyper: Hyper::default(),
            model_selection: ModelSelection::default(),
            quantifier: QuantifierOptions::default(),
            max_skip_fraction: 0.1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("repetitions", self.repetitions),
            ("train_pool_size", self.train_pool_size),
            ("batch_size", self.batch_size),
            ("batch_count", self.batch_count),
            ("app_samples", self.app_samples),
            ("app_sample_size", self.app_sample_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be positive")));
        }
        if self.batch_size * self.batch_count != self.train_pool_size {
            return Err(Error::Parameter(format!(
                "batch_size × batch_count = {} but train_pool_size = {}",
                self.batch_size * self.batch_count,
                self.train_pool_size
            )));
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }

    pub fn train_sizes(&self) -> Vec<usize> {
        (1..=self.batch_count).map(|t| t * self.batch_size).collect()
    }
}

/// Score of one test sample at one training size.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub repetition: usize,
    pub train_size: usize,
    pub sample_idx: usize,
    pub true_prev: Vec<f64>,
    pub est_prev: Vec<f64>,
    pub nmd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub n_classes: usize,
    pub train_sizes: Vec<usize>,
    pub scores: Vec<SampleScore>,
    /// Test samples skipped as infeasible, over all repetitions.
    pub skipped: usize,
}

impl EvalResult {
    /// Mean NMD per training size, over repetitions and samples.
    pub fn mean_nmd_by_size(&self) -> Vec<(usize, f64)> {
        self.train_sizes
            .iter()
            .map(|&size| {
                let (sum, n) = self
                    .scores
                    .iter()
                    .filter(|s| s.train_size == size)
                    .fold((0.0, 0usize), |(s, n), x| (s + x.nmd, n + 1));
                (size, if n == 0 { f64::NAN } else { sum / n as f64 })
            })
            .collect()
    }

    /// Arithmetic mean of the per-size mean NMDs.
    pub fn mnmd(&self) -> f64 {
        let by_size = self.mean_nmd_by_size();
        by_size.iter().map(|(_, m)| m).sum::<f64>() / by_size.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n_classes;
        let mut header = String::from("repetition,train_size,sample_idx");
        for c in 1..=n {
            header += &format!(",true_prev_{c}");
        }
        for c in 1..=n {
            header += &format!(",est_prev_{c}");
        }
        writeln!(w, "{header},nmd")?;
        for s in &self.scores {
            write!(w, "{},{},{}", s.repetition, s.train_size, s.sample_idx)?;
            for v in s.true_prev.iter().chain(&s.est_prev) {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", s.nmd)?;
        }
        Ok(())
    }

    /// Parses the CSV written by [`EvalResult::write_csv`]. The skip count is
    /// not part of the file and reads back as zero.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::ingest("<eval csv>", line, m);
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file"))??;
        let cols = header.split(',').count();
        if cols < 6 || (cols - 4) % 2 != 0 {
            return Err(bad(1, "unexpected header"));
        }
        let n = (cols - 4) / 2;
        let mut scores = Vec::new();
        let mut train_sizes: Vec<usize> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols {
                return Err(bad(i + 2, "wrong field count"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(i + 2, "invalid integer"));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "invalid number"));
            let train_size = int(f[1])?;
            if !train_sizes.contains(&train_size) {
                train_sizes.push(train_size);
            }
            scores.push(SampleScore {
                repetition: int(f[0])?,
                train_size,
                sample_idx: int(f[2])?,
                true_prev: f[3..3 + n].iter().map(|s| num(s)).collect::<Result<_>>()?,
                est_prev: f[3 + n..3 + 2 * n].iter().map(|s| num(s)).collect::<Result<_>>()?,
                nmd: num(f[cols - 1])?,
            });
        }
        train_sizes.sort_unstable();
        Ok(EvalResult {
            n_classes: n,
            train_sizes,
            scores,
            skipped: 0,
        })
    }
}

/// A materialized test sample: its realized prevalence and row positions
/// into the evaluation pool.
#[derive(Clone, Debug)]
pub(crate) struct TestSample {
    pub idx: usize,
    pub truth: PrevalenceVector,
    pub rows: Vec<usize>,
}

/// Draws `count` APP samples from `pool`; infeasible draws are skipped.
pub(crate) fn app_samples(
    pool: &Dataset,
    count: usize,
    size: usize,
    seed: u64,
    path: &[u64],
) -> Result<(Vec<TestSample>, usize)> {
    let index = ClassIndex::of_dataset(pool);
    let drawn: Vec<Result<Option<TestSample>>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut full_path = path.to_vec();
            full_path.push(i as u64);
            let mut r = rng::stream(seed, &full_path);
            let target = kraemer_sample(pool.n_classes(), &mut r);
            match index.sample(&target, size, &mut r) {
                Ok(rows) => {
                    let labels: Vec<_> = rows.iter().map(|&p| pool.labels()[p]).collect();
                    let truth = empirical_prevalence(&labels, pool.n_classes())?;
                    Ok(Some(TestSample { idx: i, truth, rows }))
                }
                Err(Error::InfeasibleSample(msg)) => {
                    log::warn!("skipping test sample {i}: {msg}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(count);
    let mut skipped = 0;
    for d in drawn {
        match d? {
            Some(s) => samples.push(s),
            None => skipped += 1,
        }
    }
    Ok((samples, skipped))
}

/// Estimates and NMD of `model` on every sample, using posteriors of the pool.
pub(crate) fn score_samples(
    model: &QuantifierModel,
    pool: ArrayView2<'_, f64>,
    samples: &[TestSample],
) -> Result<Vec<(Vec<f64>, f64)>> {
    let posteriors = model.posteriors(pool)?;
    samples
        .par_iter()
        .map(|s| {
            let est = match &posteriors {
                Some(p) => model.estimate_from_posteriors(p.select(Axis(0), &s.rows).view())?,
                None => model.train_prior().clone(),
            };
            let err = nmd(s.truth.as_slice(), est.as_slice())?;
            Ok((est.into_vec(), err))
        })
        .collect()
}

/// Runs the stress test for `kind` on the columns of `selection`.
pub fn run_protocol(
    data: &Dataset,
    selection: &BlockSelection,
    kind: QuantifierKind,
    cfg: &ProtocolConfig,
) -> Result<EvalResult> {
    cfg.validate()?;
    let data = data.project(selection)?;
    if data.len() <= cfg.train_pool_size {
        return Err(Error::Parameter(format!(
            "dataset has {} instances, need more than the training pool of {}",
            data.len(),
            cfg.train_pool_size
        )));
    }

    struct Split {
        train: Vec<usize>,
        pool: Dataset,
        samples: Vec<TestSample>,
    }
    let mut splits = Vec::with_capacity(cfg.repetitions);
    let mut skipped = 0;
    for r in 0..cfg.repetitions {
        let mut perm: Vec<usize> = (0..data.len()).collect();
        perm.shuffle(&mut rng::stream(cfg.seed, &[rng::tag::SPLIT, r as u64]));
        let (train, test) = perm.split_at(cfg.train_pool_size);
        let pool = data.select_rows(test);
        let (samples, skip) = app_samples(
            &pool,
            cfg.app_samples,
            cfg.app_sample_size,
            cfg.seed,
            &[rng::tag::APP, r as u64],
        )?;
        if skip as f64 > cfg.max_skip_fraction * cfg.app_samples as f64 {
            return Err(Error::Evaluation(format!(
                "repetition {r}: {skip} of {} test samples infeasible",
                cfg.app_samples
            )));
        }
        skipped += skip;
        splits.push(Split {
            train: train.to_vec(),
            pool,
            samples,
        });
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.repetitions)
        .flat_map(|r| (1..=cfg.batch_count).map(move |t| (r, t)))
        .collect();
    let results: Vec<Result<Vec<SampleScore>>> = jobs
        .par_iter()
        .map(|&(r, t)| {
            let split = &splits[r];
            let size = t * cfg.batch_size;
            let train = data.select_rows(&split.train[..size]);
            let mut qopts = cfg.quantifier;
            qopts.seed = rng::derive(cfg.seed, &[rng::tag::FOLDS, r as u64, t as u64]);
            let hyper = match (&cfg.grid, kind.uses_classifier()) {
                (Some(grid), true) => {
                    let seed = rng::derive(cfg.seed, &[rng::tag::GRID, r as u64, t as u64]);
                    grid_search(&train, grid, kind, qopts, &cfg.model_selection, seed)?.best
                }
                _ => cfg.hyper,
            };
            log::debug!("repetition {r}, size {size}: C={} {}", hyper.reg, hyper.weighting);
            let model = QuantifierModel::fit(kind, &train, hyper, qopts)?;
            let scored = score_samples(&model, split.pool.features(), &split.samples)?;
            Ok(split
                .samples
                .iter()
                .zip(scored)
                .map(|(s, (est, err))| SampleScore {
                    repetition: r,
                    train_size: size,
                    sample_idx: s.idx,
                    true_prev: s.truth.as_slice().to_vec(),
                    est_prev: est,
                    nmd: err,
                })
                .collect())
        })
        .collect();

    let mut scores = Vec::new();
    for r in results {
        scores.extend(r?);
    }
    Ok(EvalResult {
        n_classes: data.n_classes(),
        train_sizes: cfg.train_sizes(),
        scores,
        skipped,
    })
}
