//! Shared data model: ordinal labels, feature schemas, datasets, prevalence
//! vectors and block selections.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Number of ordinal classes used by the behavioural-change tasks.
pub const DEFAULT_CLASSES: usize = 5;

/// Display names of the five behavioural-change levels, lowest first.
pub const CLASS_NAMES: [&str; DEFAULT_CLASSES] = [
    "HighlyDecreased",
    "ModeratelyDecreased",
    "NoVariation",
    "ModeratelyIncreased",
    "HighlyIncreased",
];

/// Tolerance on the sum of a prevalence vector.
pub const SIMPLEX_TOL: f64 = 1e-8;

/// A level on a totally ordered scale `1..=n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrdinalLabel(u8);

impl OrdinalLabel {
    pub const HIGHLY_DECREASED: OrdinalLabel = OrdinalLabel(1);
    pub const MODERATELY_DECREASED: OrdinalLabel = OrdinalLabel(2);
    pub const NO_VARIATION: OrdinalLabel = OrdinalLabel(3);
    pub const MODERATELY_INCREASED: OrdinalLabel = OrdinalLabel(4);
    pub const HIGHLY_INCREASED: OrdinalLabel = OrdinalLabel(5);

    pub fn new(level: u8, n_classes: usize) -> Result<Self> {
        if level == 0 || level as usize > n_classes {
            return Err(Error::Parameter(format!(
                "label level {level} outside [1, {n_classes}]"
            )));
        }
        Ok(OrdinalLabel(level))
    }

    /// Label for the zero-based class index `idx`.
    pub fn from_index(idx: usize) -> Self {
        OrdinalLabel(idx as u8 + 1)
    }

    pub fn level(self) -> u8 {
        self.0
    }

    /// Zero-based class index.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for OrdinalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A contiguous run of feature columns: the unit of selection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub group: String,
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn columns(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Registry of feature groups, their subgroups (blocks) and column ranges.
///
/// Blocks are laid out contiguously in declaration order and cover
/// `[0, width)`. Block names are unique across the schema; a group may be
/// declared more than once, in which case the declarations are merged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    blocks: Vec<Block>,
    groups: Vec<String>,
}

impl FeatureSchema {
    pub fn new<G, B>(groups: G) -> Result<Self>
    where
        G: IntoIterator<Item = (String, B)>,
        B: IntoIterator<Item = (String, usize)>,
    {
        let mut blocks = Vec::new();
        let mut group_names: Vec<String> = Vec::new();
        let mut seen = HashMap::new();
        let mut start = 0;
        for (group, subgroups) in groups {
            if !group_names.contains(&group) {
                group_names.push(group.clone());
            }
            for (name, len) in subgroups {
                if len == 0 {
                    return Err(Error::SchemaMismatch(format!("block {name} has no columns")));
                }
                if seen.insert(name.clone(), blocks.len()).is_some() {
                    return Err(Error::SchemaMismatch(format!("duplicate block name {name}")));
                }
                blocks.push(Block {
                    group: group.clone(),
                    name,
                    start,
                    len,
                });
                start += len;
            }
        }
        if blocks.is_empty() {
            return Err(Error::SchemaMismatch("schema declares no blocks".into()));
        }
        Ok(FeatureSchema {
            blocks,
            groups: group_names,
        })
    }

    /// The 9-group feature layout used for the content-moderation study.
    pub fn paper() -> Self {
        crate::io::parse_schema(PAPER_SCHEMA).expect("bundled schema is valid")
    }

    /// A schema with one single-block group per `(name, len)` pair.
    pub fn flat<'a>(blocks: impl IntoIterator<Item = (&'a str, usize)>) -> Result<Self> {
        Self::new(
            blocks
                .into_iter()
                .map(|(n, d)| (n.to_string(), vec![(n.to_string(), d)])),
        )
    }

    /// Total column count.
    pub fn width(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start + b.len)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, idx: usize) -> &Block {
        &self.blocks[idx]
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn group_names(&self) -> &[String] {
        &self.groups
    }

    /// Groups in declaration order, each with the indices of its blocks.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        self.groups
            .iter()
            .map(|g| {
                let members = self
                    .blocks
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| &b.group == g)
                    .map(|(i, _)| i)
                    .collect();
                (g.clone(), members)
            })
            .collect()
    }

    /// Schema restricted to the blocks of `selection`, re-laid out contiguously.
    fn restrict(&self, selection: &BlockSelection) -> FeatureSchema {
        let mut blocks = Vec::with_capacity(selection.len());
        let mut start = 0;
        for &i in selection.indices() {
            let b = &self.blocks[i];
            blocks.push(Block {
                group: b.group.clone(),
                name: b.name.clone(),
                start,
                len: b.len,
            });
            start += b.len;
        }
        let groups = self
            .groups
            .iter()
            .filter(|g| blocks.iter().any(|b| &b.group == *g))
            .cloned()
            .collect();
        FeatureSchema { blocks, groups }
    }
}

const PAPER_SCHEMA: &str = include_str!("../schemas/paper.schema");

/// A set of blocks, by index into a [`FeatureSchema`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BlockSelection(BTreeSet<usize>);

impl BlockSelection {
    pub fn new(schema: &FeatureSchema, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&i| i >= schema.n_blocks()) {
            return Err(Error::SchemaMismatch(format!(
                "block index {bad} out of range for schema with {} blocks",
                schema.n_blocks()
            )));
        }
        Ok(BlockSelection(set))
    }

    pub fn from_names<S: AsRef<str>>(
        schema: &FeatureSchema,
        names: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for name in names {
            let name = name.as_ref();
            let idx = schema
                .block_index(name)
                .ok_or_else(|| Error::SchemaMismatch(format!("unknown block {name}")))?;
            set.insert(idx);
        }
        Ok(BlockSelection(set))
    }

    pub fn all(schema: &FeatureSchema) -> Self {
        BlockSelection((0..schema.n_blocks()).collect())
    }

    pub fn empty() -> Self {
        BlockSelection(BTreeSet::new())
    }

    pub fn indices(&self) -> impl Iterator<Item = &usize> {
        self.0.iter()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.0.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.0.contains(&idx)
    }

    pub fn with(&self, idx: usize) -> Self {
        let mut s = self.0.clone();
        s.insert(idx);
        BlockSelection(s)
    }

    pub fn without(&self, idx: usize) -> Self {
        let mut s = self.0.clone();
        s.remove(&idx);
        BlockSelection(s)
    }

    pub fn names<'a>(&self, schema: &'a FeatureSchema) -> Vec<&'a str> {
        self.0.iter().map(|&i| schema.block(i).name.as_str()).collect()
    }
}

/// A labelled feature matrix bound to a schema.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<OrdinalLabel>,
    ids: Vec<String>,
    schema: Arc<FeatureSchema>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<OrdinalLabel>,
        ids: Vec<String>,
        schema: Arc<FeatureSchema>,
        n_classes: usize,
    ) -> Result<Self> {
        let rows = features.nrows();
        if labels.len() != rows || ids.len() != rows {
            return Err(Error::Shape(format!(
                "{rows} feature rows but {} labels and {} ids",
                labels.len(),
                ids.len()
            )));
        }
        if features.ncols() != schema.width() {
            return Err(Error::SchemaMismatch(format!(
                "schema declares {} columns but matrix has {}",
                schema.width(),
                features.ncols()
            )));
        }
        if let Some((pos, _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite feature value at row {}, column {}",
                pos.0, pos.1
            )));
        }
        if let Some(l) = labels.iter().find(|l| l.level() as usize > n_classes) {
            return Err(Error::Parameter(format!(
                "label {l} exceeds class count {n_classes}"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            ids,
            schema,
            n_classes,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[OrdinalLabel] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class instance counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    /// Rows `rows` in the given order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            schema: Arc::clone(&self.schema),
            n_classes: self.n_classes,
        }
    }

    /// Keep only the columns of the selected blocks, in schema order.
    pub fn project(&self, selection: &BlockSelection) -> Result<Dataset> {
        if selection.is_empty() {
            return Err(Error::InvalidSelection("empty block selection".into()));
        }
        if let Some(&bad) = selection.indices().find(|&&i| i >= self.schema.n_blocks()) {
            return Err(Error::SchemaMismatch(format!("block index {bad} not in schema")));
        }
        let columns: Vec<usize> = selection
            .indices()
            .flat_map(|&i| self.schema.block(i).columns())
            .collect();
        Ok(Dataset {
            features: self.features.select(Axis(1), &columns),
            labels: self.labels.clone(),
            ids: self.ids.clone(),
            schema: Arc::new(self.schema.restrict(selection)),
            n_classes: self.n_classes,
        })
    }
}

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct PrevalenceVector(Vec<f64>);

impl PrevalenceVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::EmptyInput("prevalence vector has no components".into()));
        }
        if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Parameter(format!("prevalence component outside [0,1]: {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Parameter(format!("prevalence sums to {sum}, not 1")));
        }
        Ok(PrevalenceVector(p))
    }

    /// Clamps negatives to zero and rescales to unit sum.
    pub fn normalized(mut p: Vec<f64>) -> Result<Self> {
        for v in p.iter_mut() {
            if !v.is_finite() || *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = p.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Undefined("cannot normalize an all-zero vector".into()));
        }
        p.iter_mut().for_each(|v| *v = (*v / sum).min(1.0));
        Ok(PrevalenceVector(p))
    }

    pub fn uniform(n: usize) -> Self {
        PrevalenceVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for PrevalenceVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Relative class frequencies of `labels` over `n_classes` classes.
pub fn empirical_prevalence(labels: &[OrdinalLabel], n_classes: usize) -> Result<PrevalenceVector> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labels".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for l in labels {
        if l.index() >= n_classes {
            return Err(Error::Parameter(format!("label {l} exceeds class count {n_classes}")));
        }
        counts[l.index()] += 1;
    }
    let n = labels.len() as f64;
    Ok(PrevalenceVector(counts.into_iter().map(|c| c as f64 / n).collect()))
}
