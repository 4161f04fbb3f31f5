//! Seeded synthetic data with known structure: Gaussian feature blocks that
//! are either informative about the ordinal class or pure noise, and comment
//! streams whose pre/post behaviour realizes chosen label targets.

use std::sync::Arc;

use chrono::{DateTime, NaiveTime, TimeDelta, Utc};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{Dataset, FeatureSchema, OrdinalLabel};
use crate::error::{Error, Result};
use crate::evaluation::app::largest_remainder;
use crate::labelling::{CommentRecord, Window};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Informativeness {
    /// Class `c` has mean `(c − (n−1)/2)·separation` on every dimension.
    Signal { separation: f64 },
    Noise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub group: String,
    pub name: String,
    pub dims: usize,
    pub kind: Informativeness,
}

impl BlockSpec {
    pub fn signal(name: &str, dims: usize, separation: f64) -> Self {
        BlockSpec {
            group: name.to_string(),
            name: name.to_string(),
            dims,
            kind: Informativeness::Signal { separation },
        }
    }

    pub fn noise(name: &str, dims: usize) -> Self {
        BlockSpec {
            group: name.to_string(),
            name: name.to_string(),
            dims,
            kind: Informativeness::Noise,
        }
    }

    pub fn in_group(mut self, group: &str) -> Self {
        self.group = group.to_string();
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub blocks: Vec<BlockSpec>,
    pub instances_per_class: Vec<usize>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Parameter("need at least 2 classes".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Parameter("need at least one block".into()));
        }
        if self.instances_per_class.len() != self.n_classes {
            return Err(Error::Parameter(format!(
                "{} class sizes given for {} classes",
                self.instances_per_class.len(),
                self.n_classes
            )));
        }
        if self.instances_per_class.iter().sum::<usize>() == 0 {
            return Err(Error::Parameter("no instances requested".into()));
        }
        for b in &self.blocks {
            if let Informativeness::Signal { separation } = b.kind {
                if !(separation > 0.0 && separation.is_finite()) {
                    return Err(Error::Parameter(format!("block {} needs a positive separation", b.name)));
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        let mut groups: Vec<(String, Vec<(String, usize)>)> = Vec::new();
        for b in &self.blocks {
            let entry = (b.name.clone(), b.dims);
            match groups.iter_mut().find(|(g, _)| *g == b.group) {
                Some((_, v)) => v.push(entry),
                None => groups.push((b.group.clone(), vec![entry])),
            }
        }
        FeatureSchema::new(groups)
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let schema = self.schema()?;
        let mut labels: Vec<usize> = self
            .instances_per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        labels.shuffle(&mut rng::stream(self.seed, &[rng::tag::SYNTH, 0]));

        let n = labels.len();
        let center = (self.n_classes as f64 - 1.0) / 2.0;
        let mut x = Array2::zeros((n, schema.width()));
        let mut r = rng::stream(self.seed, &[rng::tag::SYNTH, 1]);
        for (i, &c) in labels.iter().enumerate() {
            let mut col = 0;
            for b in &self.blocks {
                let mean = match b.kind {
                    Informativeness::Signal { separation } => (c as f64 - center) * separation,
                    Informativeness::Noise => 0.0,
                };
                for _ in 0..b.dims {
                    let z: f64 = r.sample(StandardNormal);
                    x[[i, col]] = mean + z;
                    col += 1;
                }
            }
        }
        Dataset::new(
            x,
            labels.into_iter().map(OrdinalLabel::from_index).collect(),
            (0..n).map(|i| format!("s{i:06}")).collect(),
            Arc::new(schema),
            self.n_classes,
        )
    }
}

/// Behaviour of one cohort of identical synthetic users.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortProfile {
    pub name: String,
    pub users: usize,
    /// Comment counts in the pre and post periods.
    pub activity: (usize, usize),
    /// Target 75th-percentile toxicity in the pre and post periods.
    pub toxicity: (f64, f64),
    /// Number of equally used communities in the pre and post periods.
    pub communities: (usize, usize),
    /// Extra comments on the intervention day, which labelling must ignore.
    pub intervention_day: usize,
    /// Label the cohort is built to receive on every task.
    pub expected: OrdinalLabel,
}

impl CohortProfile {
    fn validate(&self) -> Result<()> {
        let (tp, tq) = self.toxicity;
        if !(0.0..=1.0).contains(&tp) || !(0.0..=1.0).contains(&tq) {
            return Err(Error::Parameter(format!("cohort {}: toxicity outside [0,1]", self.name)));
        }
        for (n, k) in [
            (self.activity.0, self.communities.0),
            (self.activity.1, self.communities.1),
        ] {
            if n > 0 && k == 0 {
                return Err(Error::Parameter(format!("cohort {}: comments need a community", self.name)));
            }
        }
        Ok(())
    }
}

/// One cohort per label with every task moving the same way. Pre period:
/// 100 comments, toxicity 0.4, 4 communities.
pub fn standard_cohorts(users_per_cohort: usize) -> Vec<CohortProfile> {
    let rows = [
        ("highly-decreased", 30, 0.10, 1, OrdinalLabel::HIGHLY_DECREASED),
        ("moderately-decreased", 65, 0.26, 2, OrdinalLabel::MODERATELY_DECREASED),
        ("no-variation", 100, 0.40, 4, OrdinalLabel::NO_VARIATION),
        ("moderately-increased", 135, 0.54, 5, OrdinalLabel::MODERATELY_INCREASED),
        ("highly-increased", 180, 0.72, 8, OrdinalLabel::HIGHLY_INCREASED),
    ];
    rows.iter()
        .map(|&(name, post, tox, comm, expected)| CohortProfile {
            name: name.to_string(),
            users: users_per_cohort,
            activity: (100, post),
            toxicity: (0.4, tox),
            communities: (4, comm),
            intervention_day: 3,
            expected,
        })
        .collect()
}

/// Scores whose linearly interpolated 75th percentile equals `target`: the
/// lowest `floor(0.75(n−1))` are uniform below it, the rest equal it.
fn toxicity_scores<R: Rng + ?Sized>(n: usize, target: f64, rng: &mut R) -> Vec<f64> {
    let below = if n == 0 { 0 } else { (0.75 * (n - 1) as f64).floor() as usize };
    (0..n)
        .map(|i| if i < below { rng.random::<f64>() * target } else { target })
        .collect()
}

/// Community ids for `n` comments spread as evenly as possible over `k` communities.
fn community_sequence(n: usize, k: usize) -> Vec<String> {
    if n == 0 {
        return Vec::new();
    }
    let counts = largest_remainder(&vec![1.0 / k as f64; k], n);
    counts
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| std::iter::repeat_n(format!("c{c}"), m))
        .collect()
}

fn random_time<R: Rng + ?Sized>(from: DateTime<Utc>, span: TimeDelta, rng: &mut R) -> DateTime<Utc> {
    let secs = rng.random_range(0..span.num_seconds().max(1));
    from + TimeDelta::seconds(secs)
}

/// Comment stream realizing each cohort's profile. Users are named
/// `<cohort>-<index>`; output order is cohort, user, then pre, post, and
/// intervention-day comments.
pub fn generate_comments(cohorts: &[CohortProfile], window: &Window, seed: u64) -> Result<Vec<CommentRecord>> {
    for c in cohorts {
        c.validate()?;
    }
    let midnight = NaiveTime::MIN;
    let pre_start = window.start.and_time(midnight).and_utc();
    let post_start = (window.intervention + TimeDelta::days(1)).and_time(midnight).and_utc();
    let day_start = window.intervention.and_time(midnight).and_utc();
    let (pre_span, post_span) = window.spans();

    let users: Vec<(usize, usize)> = cohorts
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.users).map(move |u| (ci, u)))
        .collect();
    let per_user: Vec<Vec<CommentRecord>> = users
        .par_iter()
        .map(|&(ci, u)| {
            let c = &cohorts[ci];
            let mut r = rng::stream(seed, &[rng::tag::COMMENTS, ci as u64, u as u64]);
            let user = format!("{}-{u}", c.name);
            let mut out = Vec::with_capacity(c.activity.0 + c.activity.1 + c.intervention_day);
            let periods = [
                (c.activity.0, c.toxicity.0, c.communities.0, pre_start, pre_span),
                (c.activity.1, c.toxicity.1, c.communities.1, post_start, post_span),
            ];
            for (n, tox, k, start, span) in periods {
                let scores = toxicity_scores(n, tox, &mut r);
                let mut places = community_sequence(n, k);
                places.shuffle(&mut r);
                for (score, community) in scores.into_iter().zip(places) {
                    out.push(CommentRecord {
                        user_id: user.clone(),
                        timestamp: random_time(start, span, &mut r),
                        community_id: community,
                        toxicity: score,
                    });
                }
            }
            for _ in 0..c.intervention_day {
                out.push(CommentRecord {
                    user_id: user.clone(),
                    timestamp: random_time(day_start, TimeDelta::days(1), &mut r),
                    community_id: "intervention".into(),
                    toxicity: 1.0,
                });
            }
            out
        })
        .collect();
    Ok(per_user.into_iter().flatten().collect())
}
