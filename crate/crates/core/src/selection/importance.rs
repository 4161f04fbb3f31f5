//! Block importance by ablation, concentration and cross-task overlap.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;
use std::io::Write;

use super::greedy::SelectionLoss;
use crate::data::{BlockSelection, FeatureSchema};
use crate::error::{Error, Result};
use crate::evaluation::metrics::rie;

pub const RBO_PERSISTENCE: f64 = 0.9;

/// Relative increase in error from ablating one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rie {
    Value(f64),
    /// The block is the whole selection; removing it leaves nothing to train on.
    UndefinedDominant,
}

impl Rie {
    pub fn value(self) -> Option<f64> {
        match self {
            Rie::Value(v) => Some(v),
            Rie::UndefinedDominant => None,
        }
    }

    /// Sort key where the undefined case outranks every value.
    fn key(self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockImportance {
    pub block: usize,
    pub name: String,
    pub rie: Rie,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceReport {
    pub selection: BlockSelection,
    pub loss: f64,
    /// Selected blocks in index order.
    pub blocks: Vec<BlockImportance>,
    /// Gini coefficient of the non-negative-clamped RIE values.
    pub gini: f64,
}

impl ImportanceReport {
    pub fn entries(&self) -> Vec<(String, Rie)> {
        self.blocks.iter().map(|b| (b.name.clone(), b.rie)).collect()
    }

    /// Block names by descending RIE; ties keep index order.
    pub fn ranking(&self) -> Vec<String> {
        rank_by_rie(&self.entries())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "block,rie")?;
        for b in &self.blocks {
            match b.rie {
                Rie::Value(v) => writeln!(w, "{},{v}", b.name)?,
                Rie::UndefinedDominant => writeln!(w, "{},undefined", b.name)?,
            }
        }
        Ok(())
    }
}

pub fn importance_report(
    schema: &FeatureSchema,
    selection: &BlockSelection,
    loss: &dyn SelectionLoss,
) -> Result<ImportanceReport> {
    if selection.is_empty() {
        return Err(Error::InvalidSelection("importance of an empty selection".into()));
    }
    let with = loss.loss(selection)?;
    let mut blocks = Vec::with_capacity(selection.len());
    for &b in selection.indices() {
        let ablated = selection.without(b);
        let value = if ablated.is_empty() {
            Rie::UndefinedDominant
        } else {
            Rie::Value(rie(loss.loss(&ablated)?, with)?)
        };
        blocks.push(BlockImportance {
            block: b,
            name: schema.block(b).name.clone(),
            rie: value,
        });
    }
    let values: Vec<f64> = blocks.iter().filter_map(|b| b.rie.value()).collect();
    Ok(ImportanceReport {
        selection: selection.clone(),
        loss: with,
        blocks,
        gini: gini(&values),
    })
}

/// Mean absolute difference over twice the mean, with negatives clamped to 0.
/// Zero for an empty or all-zero vector.
pub fn gini(values: &[f64]) -> f64 {
    let x: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = x.iter().sum();
    if x.is_empty() || total == 0.0 {
        return 0.0;
    }
    let diff: f64 = x.iter().flat_map(|a| x.iter().map(move |b| (a - b).abs())).sum();
    diff / (2.0 * x.len() as f64 * total)
}

/// |a∩b| / |a∪b|, and 1 when both sets are empty.
pub fn jaccard<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Extrapolated rank-biased overlap of two duplicate-free rankings, which may
/// differ in length.
pub fn rbo<T: Eq + Hash>(a: &[T], b: &[T], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Parameter(format!("persistence must lie in (0,1), got {p}")));
    }
    for r in [a, b] {
        if r.iter().collect::<HashSet<_>>().len() != r.len() {
            return Err(Error::Parameter("ranking contains duplicates".into()));
        }
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let (s, l) = (short.len(), long.len());
    if s == 0 {
        return Ok(if l == 0 { 1.0 } else { 0.0 });
    }

    // overlap[d-1] = |short[:d] ∩ long[:d]|, with short frozen past depth s
    let mut seen_short = HashSet::new();
    let mut seen_long = HashSet::new();
    let mut x = 0usize;
    let mut overlap = Vec::with_capacity(l);
    for d in 0..l {
        let new_long = &long[d];
        if d < s {
            let new_short = &short[d];
            if new_short == new_long {
                x += 1;
            } else {
                x += seen_long.contains(new_short) as usize + seen_short.contains(new_long) as usize;
            }
            seen_short.insert(new_short);
        } else {
            x += seen_short.contains(new_long) as usize;
        }
        seen_long.insert(new_long);
        overlap.push(x);
    }

    let x_s = overlap[s - 1] as f64;
    let x_l = overlap[l - 1] as f64;
    let mut sum = 0.0;
    let mut pd = 1.0;
    for d in 1..=l {
        pd *= p;
        sum += overlap[d - 1] as f64 / d as f64 * pd;
        if d > s {
            sum += x_s * (d - s) as f64 / (s * d) as f64 * pd;
        }
    }
    Ok((1.0 - p) / p * sum + ((x_l - x_s) / l as f64 + x_s / s as f64) * pd)
}

/// A named task's final selection and importance ranking.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSelection {
    pub task: String,
    pub selected: BTreeSet<String>,
    pub ranking: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverlapRow {
    pub task_a: String,
    pub task_b: String,
    pub jaccard: f64,
    pub rbo: f64,
}

/// Jaccard and RBO for every unordered pair of tasks, in input order.
pub fn overlap_table(tasks: &[TaskSelection], p: f64) -> Result<Vec<OverlapRow>> {
    let mut rows = Vec::new();
    for (i, a) in tasks.iter().enumerate() {
        for b in &tasks[i + 1..] {
            let sa: HashSet<&String> = a.selected.iter().collect();
            let sb: HashSet<&String> = b.selected.iter().collect();
            rows.push(OverlapRow {
                task_a: a.task.clone(),
                task_b: b.task.clone(),
                jaccard: jaccard(&sa, &sb),
                rbo: rbo(&a.ranking, &b.ranking, p)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_overlap_csv<W: Write>(rows: &[OverlapRow], mut w: W) -> Result<()> {
    writeln!(w, "task_a,task_b,jaccard,rbo")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.task_a, r.task_b, r.jaccard, r.rbo)?;
    }
    Ok(())
}

/// Block × task matrix of RIE in percent; blank where a block was not selected
/// for a task, `undefined` for a sole selected block. Rows follow first
/// appearance across tasks.
pub fn write_heatmap_csv<W: Write>(tasks: &[(String, Vec<(String, Rie)>)], mut w: W) -> Result<()> {
    let mut blocks: Vec<&str> = Vec::new();
    for (_, entries) in tasks {
        for (name, _) in entries {
            if !blocks.contains(&name.as_str()) {
                blocks.push(name);
            }
        }
    }
    write!(w, "block")?;
    for (task, _) in tasks {
        write!(w, ",{task}")?;
    }
    writeln!(w)?;
    for block in blocks {
        write!(w, "{block}")?;
        for (_, entries) in tasks {
            match entries.iter().find(|(n, _)| n == block).map(|(_, r)| *r) {
                Some(Rie::Value(v)) => write!(w, ",{}", v * 100.0)?,
                Some(Rie::UndefinedDominant) => write!(w, ",undefined")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses the `block,rie` CSV written by [`ImportanceReport::write_csv`].
pub fn parse_importance_csv(text: &str) -> Result<Vec<(String, Rie)>> {
    let bad = |line: usize, m: &str| Error::ingest("<importance csv>", line, m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("block,rie") {
        return Err(bad(1, "expected header `block,rie`"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (name, v) = l.split_once(',').ok_or_else(|| bad(i + 2, "expected two fields"))?;
            let rie = match v.trim() {
                "undefined" => Rie::UndefinedDominant,
                x => Rie::Value(x.parse().map_err(|_| bad(i + 2, "invalid number"))?),
            };
            Ok((name.to_string(), rie))
        })
        .collect()
}

/// Names by descending RIE, the undefined case first; ties keep input order.
pub fn rank_by_rie(entries: &[(String, Rie)]) -> Vec<String> {
    let mut e: Vec<&(String, Rie)> = entries.iter().collect();
    e.sort_by(|x, y| y.1.key().total_cmp(&x.1.key()));
    e.into_iter().map(|(n, _)| n.clone()).collect()
}

/// One row of the selection summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionSummary {
    pub task: String,
    pub selected: usize,
    pub total: usize,
    pub mnmd_all: f64,
    pub mnmd_selected: f64,
}

impl SelectionSummary {
    /// Relative error reduction of the selection over all features, in percent.
    pub fn reduction(&self) -> f64 {
        (self.mnmd_all - self.mnmd_selected) / self.mnmd_all * 100.0
    }
}

/// Plain-text table of selected-count, MNMD with all and selected features
/// (×10⁻³) and the relative error reduction.
pub fn render_summary(rows: &[SelectionSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>10} {:>12} {:>14} {:>10}",
        "task", "selected", "MNMD all", "MNMD selected", "RER %"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>12.1} {:>14.1} {:>10.2}",
            r.task,
            format!("{}/{}", r.selected, r.total),
            r.mnmd_all * 1e3,
            r.mnmd_selected * 1e3,
            r.reduction()
        );
    }
    out
}
