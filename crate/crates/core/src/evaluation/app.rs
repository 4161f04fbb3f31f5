//! Artificial-prevalence sampling: uniform simplex draws and test samples
//! materialized at a target class distribution.

use rand::seq::index;
use rand::Rng;

use crate::data::{Dataset, OrdinalLabel, PrevalenceVector};
use crate::error::{Error, Result};

/// Uniform draw from the `(n−1)`-simplex via sorted uniforms (Kraemer).
pub fn kraemer_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> PrevalenceVector {
    assert!(n >= 2, "simplex sampling needs at least 2 classes");
    let mut cuts: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut p = Vec::with_capacity(n);
    let mut prev = 0.0;
    for &c in &cuts {
        p.push(c - prev);
        prev = c;
    }
    p.push(1.0 - prev);
    PrevalenceVector::normalized(p).expect("differences of sorted uniforms are a distribution")
}

/// Integer counts summing to `size` by largest-remainder rounding of
/// `target · size`; ties in the remainders go to the lower class index.
pub fn largest_remainder(target: &[f64], size: usize) -> Vec<usize> {
    let scaled: Vec<f64> = target.iter().map(|&p| p * size as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|&s| s.floor().max(0.0) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = size.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[i] += 1;
        missing -= 1;
    }
    counts
}

/// Row indices of a pool grouped by class.
#[derive(Clone, Debug)]
pub struct ClassIndex {
    members: Vec<Vec<usize>>,
}

impl ClassIndex {
    /// `rows[i]` is the pool row id of the item labelled `labels[i]`.
    pub fn new(labels: &[OrdinalLabel], rows: &[usize], n_classes: usize) -> Self {
        let mut members = vec![Vec::new(); n_classes];
        for (&r, l) in rows.iter().zip(labels) {
            members[l.index()].push(r);
        }
        ClassIndex { members }
    }

    pub fn of_dataset(data: &Dataset) -> Self {
        let rows: Vec<usize> = (0..data.len()).collect();
        Self::new(data.labels(), &rows, data.n_classes())
    }

    pub fn class_size(&self, c: usize) -> usize {
        self.members[c].len()
    }

    /// Draws row ids realizing `target` at `size` items: without replacement
    /// inside a class unless the class pool is too small.
    pub fn sample<R: Rng + ?Sized>(&self, target: &PrevalenceVector, size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if target.len() != self.members.len() {
            return Err(Error::Shape(format!(
                "target has {} classes, pool has {}",
                target.len(),
                self.members.len()
            )));
        }
        let counts = largest_remainder(target.as_slice(), size);
        let mut rows = Vec::with_capacity(size);
        for (c, &want) in counts.iter().enumerate() {
            let pool = &self.members[c];
            if want == 0 {
                continue;
            }
            if pool.is_empty() {
                return Err(Error::InfeasibleSample(format!(
                    "class {} requested {want} items but the pool has none",
                    c + 1
                )));
            }
            if want <= pool.len() {
                rows.extend(index::sample(rng, pool.len(), want).into_iter().map(|i| pool[i]));
            } else {
                rows.extend((0..want).map(|_| pool[rng.random_range(0..pool.len())]));
            }
        }
        Ok(rows)
    }
}

/// A sample of `size` items from `pool` with class counts realizing `target`.
pub fn draw_at_prevalence<R: Rng + ?Sized>(
    pool: &Dataset,
    target: &PrevalenceVector,
    size: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if pool.is_empty() {
        return Err(Error::EmptyInput("empty sampling pool".into()));
    }
    let rows = ClassIndex::of_dataset(pool).sample(target, size, rng)?;
    Ok(pool.select_rows(&rows))
}
