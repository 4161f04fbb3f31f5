//! Ground-truth labels from per-user comment histories around an intervention.
//!
//! Each user gets a pre and a post value per behavioural measure (activity,
//! toxicity, diversity). The relative change between them is discretized into
//! five ordinal classes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Months, NaiveDate, TimeDelta, Utc};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureSchema, OrdinalLabel, DEFAULT_CLASSES};
use crate::error::{Error, Result};

/// Hill-number order used for participation diversity.
pub const DIVERSITY_ORDER: f64 = 1.5;

/// Post-period comment count required for toxicity and diversity labels.
pub const MIN_POST_COMMENTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub community_id: String,
    pub toxicity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Period {
    Pre,
    Post,
}

/// Observation windows around an intervention day. Comments posted on the
/// intervention day itself belong to neither period.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub intervention: NaiveDate,
    /// First day of the pre period.
    pub start: NaiveDate,
    /// Last day of the post period.
    pub end: NaiveDate,
}

impl Window {
    pub fn new(intervention: NaiveDate, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if !(start < intervention && intervention < end) {
            return Err(Error::Parameter(format!(
                "window {start}..{end} must strictly contain intervention day {intervention}"
            )));
        }
        Ok(Window { intervention, start, end })
    }

    /// `months` calendar months either side of the intervention day.
    pub fn around(intervention: NaiveDate, months: u32) -> Result<Self> {
        let m = Months::new(months);
        let start = intervention
            .checked_sub_months(m)
            .ok_or_else(|| Error::Parameter("window start out of range".into()))?;
        let end = intervention
            .checked_add_months(m)
            .ok_or_else(|| Error::Parameter("window end out of range".into()))?;
        Window::new(intervention, start, end)
    }

    pub fn period(&self, ts: &DateTime<Utc>) -> Option<Period> {
        let day = ts.date_naive();
        if day < self.start || day > self.end || day == self.intervention {
            None
        } else if day < self.intervention {
            Some(Period::Pre)
        } else {
            Some(Period::Post)
        }
    }

    /// Length of the pre and post periods, excluding the intervention day.
    pub fn spans(&self) -> (TimeDelta, TimeDelta) {
        (self.intervention - self.start, self.end - self.intervention)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Activity,
    Toxicity,
    Diversity,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Activity, Task::Toxicity, Task::Diversity];

    /// Whether labels require the post-period comment minimum.
    pub fn needs_min_post(self) -> bool {
        !matches!(self, Task::Activity)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Activity => "activity",
            Task::Toxicity => "toxicity",
            Task::Diversity => "diversity",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "activity" => Ok(Task::Activity),
            "toxicity" => Ok(Task::Toxicity),
            "diversity" => Ok(Task::Diversity),
            other => Err(Error::Parameter(format!("unknown task {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub moderate: f64,
    pub high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { moderate: 0.2, high: 0.55 }
    }
}

impl Thresholds {
    pub fn new(moderate: f64, high: f64) -> Result<Self> {
        if !(moderate > 0.0 && moderate < high && high.is_finite()) {
            return Err(Error::Parameter(format!(
                "thresholds need 0 < moderate < high, got ({moderate}, {high})"
            )));
        }
        Ok(Thresholds { moderate, high })
    }
}

/// 75th percentile with linear interpolation between order statistics.
/// `None` for an empty slice.
pub fn toxicity_percentile(scores: &[f64]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = 0.75 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    let frac = pos - lo as f64;
    Some(s[lo] + (s[hi] - s[lo]) * frac)
}

/// Hill number of order `q` over per-category counts. `None` when all counts
/// are zero.
pub fn hill_number(counts: &[usize], q: f64) -> Result<Option<f64>> {
    if q == 1.0 || !q.is_finite() || q < 0.0 {
        return Err(Error::Parameter(format!("Hill order must be finite, non-negative and != 1, got {q}")));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Ok(None);
    }
    let s: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| (c as f64 / total as f64).powf(q))
        .sum();
    Ok(Some(s.powf(1.0 / (1.0 - q))))
}

/// Relative change; `None` when `pre` is zero.
pub fn effect(pre: f64, post: f64) -> Option<f64> {
    (pre != 0.0).then(|| (post - pre) / pre)
}

/// Five-level label of a relative change. Values on a threshold fall into the
/// milder class.
pub fn label(effect: f64, t: Thresholds) -> OrdinalLabel {
    if effect > t.high {
        OrdinalLabel::HIGHLY_INCREASED
    } else if effect > t.moderate {
        OrdinalLabel::MODERATELY_INCREASED
    } else if effect >= -t.moderate {
        OrdinalLabel::NO_VARIATION
    } else if effect >= -t.high {
        OrdinalLabel::MODERATELY_DECREASED
    } else {
        OrdinalLabel::HIGHLY_DECREASED
    }
}

/// Aggregated comments of one user in one period.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PeriodStats {
    pub count: usize,
    pub toxicity: Vec<f64>,
    pub communities: BTreeMap<String, usize>,
}

impl PeriodStats {
    fn push(&mut self, c: &CommentRecord) {
        self.count += 1;
        self.toxicity.push(c.toxicity);
        *self.communities.entry(c.community_id.clone()).or_default() += 1;
    }

    fn merge(&mut self, other: PeriodStats) {
        self.count += other.count;
        self.toxicity.extend(other.toxicity);
        for (k, v) in other.communities {
            *self.communities.entry(k).or_default() += v;
        }
    }

    pub fn measure(&self, task: Task, q: f64) -> Result<Option<f64>> {
        Ok(match task {
            Task::Activity => Some(self.count as f64),
            Task::Toxicity => toxicity_percentile(&self.toxicity),
            Task::Diversity => {
                let counts: Vec<usize> = self.communities.values().copied().collect();
                hill_number(&counts, q)?
            }
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserHistory {
    pub pre: PeriodStats,
    pub post: PeriodStats,
}

/// Per-user pre/post aggregates; comments outside both periods are ignored.
/// The result does not depend on input order.
pub fn aggregate(comments: &[CommentRecord], window: &Window) -> BTreeMap<String, UserHistory> {
    comments
        .par_iter()
        .fold(HashMap::<String, UserHistory>::new, |mut acc, c| {
            if let Some(p) = window.period(&c.timestamp) {
                let h = acc.entry(c.user_id.clone()).or_default();
                match p {
                    Period::Pre => h.pre.push(c),
                    Period::Post => h.post.push(c),
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (user, h) in b {
                let e = a.entry(user).or_default();
                e.pre.merge(h.pre);
                e.post.merge(h.post);
            }
            a
        })
        .into_iter()
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskEffect {
    pub pre: Option<f64>,
    pub post: Option<f64>,
    pub effect: Option<f64>,
    pub label: Option<OrdinalLabel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelOptions {
    pub thresholds: Thresholds,
    pub min_post_comments: usize,
    pub diversity_order: f64,
}

impl Default for LabelOptions {
    fn default() -> Self {
        LabelOptions {
            thresholds: Thresholds::default(),
            min_post_comments: MIN_POST_COMMENTS,
            diversity_order: DIVERSITY_ORDER,
        }
    }
}

/// Measures, effect and label of one task for one user. The label is `None`
/// when the effect is undefined or the user is ineligible.
pub fn task_effect(h: &UserHistory, task: Task, opts: &LabelOptions) -> Result<TaskEffect> {
    let pre = h.pre.measure(task, opts.diversity_order)?;
    let post = h.post.measure(task, opts.diversity_order)?;
    let eff = match (pre, post) {
        (Some(a), Some(b)) => effect(a, b),
        _ => None,
    };
    let eligible = !task.needs_min_post() || h.post.count >= opts.min_post_comments;
    Ok(TaskEffect {
        pre,
        post,
        effect: eff,
        label: eff.filter(|_| eligible).map(|e| label(e, opts.thresholds)),
    })
}

/// Why users were left out of a labelled set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelStats {
    pub labelled: usize,
    pub ineligible: usize,
    pub undefined: usize,
    /// Feature rows whose id has no comments in either period.
    pub without_comments: usize,
}

/// Labels for every user with a defined, eligible effect on `task`, sorted by id.
pub fn label_users(
    comments: &[CommentRecord],
    window: &Window,
    task: Task,
    opts: &LabelOptions,
) -> Result<(Vec<(String, OrdinalLabel)>, LabelStats)> {
    Thresholds::new(opts.thresholds.moderate, opts.thresholds.high)?;
    let mut stats = LabelStats::default();
    let mut out = Vec::new();
    for (user, h) in aggregate(comments, window) {
        let e = task_effect(&h, task, opts)?;
        match e.label {
            Some(l) => {
                out.push((user, l));
                stats.labelled += 1;
            }
            None if e.effect.is_none() => stats.undefined += 1,
            None => stats.ineligible += 1,
        }
    }
    Ok((out, stats))
}

/// Joins labels derived from `comments` with a feature matrix keyed by user id.
/// Rows without a label are dropped; row order follows `ids`.
pub fn build_labelled_dataset(
    comments: &[CommentRecord],
    features: Array2<f64>,
    ids: Vec<String>,
    schema: Arc<FeatureSchema>,
    window: &Window,
    task: Task,
    opts: &LabelOptions,
) -> Result<(Dataset, LabelStats)> {
    let mut seen = HashSet::new();
    for (i, id) in ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::ingest("<features>", i + 2, format!("duplicate id {id}")));
        }
    }
    let (labels, mut stats) = label_users(comments, window, task, opts)?;
    let commenters: HashSet<&str> = comments
        .iter()
        .filter(|c| window.period(&c.timestamp).is_some())
        .map(|c| c.user_id.as_str())
        .collect();
    stats.without_comments = ids.iter().filter(|id| !commenters.contains(id.as_str())).count();
    if stats.without_comments > 0 {
        log::info!("{} users with features have no comments", stats.without_comments);
    }
    let by_id: HashMap<&str, OrdinalLabel> = labels.iter().map(|(u, l)| (u.as_str(), *l)).collect();
    let (rows, kept): (Vec<usize>, Vec<OrdinalLabel>) = ids
        .iter()
        .enumerate()
        .filter_map(|(i, id)| by_id.get(id.as_str()).map(|&l| (i, l)))
        .unzip();
    let kept_ids = rows.iter().map(|&r| ids[r].clone()).collect();
    let matrix = features.select(Axis(0), &rows);
    let data = Dataset::new(matrix, kept, kept_ids, schema, DEFAULT_CLASSES)?;
    Ok((data, stats))
}
