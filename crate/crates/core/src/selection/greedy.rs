//! Greedy add/remove search over feature blocks.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::data::{BlockSelection, Dataset, FeatureSchema};
use crate::error::{Error, Result};
use crate::evaluation::protocol::{run_protocol, ProtocolConfig};
use crate::quantify::QuantifierKind;

/// Loss of a block configuration; lower is better.
pub trait SelectionLoss: Sync {
    fn loss(&self, selection: &BlockSelection) -> Result<f64>;
}

impl<F> SelectionLoss for F
where
    F: Fn(&BlockSelection) -> Result<f64> + Sync,
{
    fn loss(&self, selection: &BlockSelection) -> Result<f64> {
        self(selection)
    }
}

/// MNMD of the stress-test protocol, memoized per selection. The protocol is
/// deterministic under a fixed seed, so revisited configurations are free.
pub struct ProtocolLoss<'a> {
    data: &'a Dataset,
    kind: QuantifierKind,
    config: ProtocolConfig,
    cache: Mutex<HashMap<BlockSelection, f64>>,
    evaluations: AtomicUsize,
}

impl<'a> ProtocolLoss<'a> {
    pub fn new(data: &'a Dataset, kind: QuantifierKind, config: ProtocolConfig) -> Self {
        ProtocolLoss {
            data,
            kind,
            config,
            cache: Mutex::new(HashMap::new()),
            evaluations: AtomicUsize::new(0),
        }
    }

    /// Protocol runs actually performed (cache misses).
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

impl SelectionLoss for ProtocolLoss<'_> {
    fn loss(&self, selection: &BlockSelection) -> Result<f64> {
        if let Some(&v) = self.cache.lock().unwrap().get(selection) {
            return Ok(v);
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let v = run_protocol(self.data, selection, self.kind, &self.config)?.mnmd();
        self.cache.lock().unwrap().insert(selection.clone(), v);
        Ok(v)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum StartPolicy {
    /// Best of ALL and each schema group.
    #[default]
    BestGroup,
    All,
    Given(BlockSelection),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyConfig {
    pub start: StartPolicy,
    /// A toggle is kept only if it lowers the best loss by more than this.
    pub margin: f64,
    /// Additions are tried only in rounds `0..add_rounds`.
    pub add_rounds: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig {
            start: StartPolicy::BestGroup,
            margin: 0.0,
            add_rounds: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Toggle {
    Add,
    Remove,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Add,
    Remove,
    Reject,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Add => "add",
            Action::Remove => "remove",
            Action::Reject => "reject",
        })
    }
}

impl fmt::Display for Toggle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Toggle::Add => "add",
            Toggle::Remove => "remove",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub round: usize,
    pub block: usize,
    pub action: Action,
    pub attempted: Toggle,
    pub loss_before: f64,
    /// Loss of the toggled configuration; infinite when it could not be evaluated.
    pub loss_after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionTrace {
    pub initial: BlockSelection,
    pub initial_loss: f64,
    /// Candidate losses considered by the start policy, in evaluation order.
    pub start_candidates: Vec<(String, f64)>,
    /// Block visiting order with each block's isolated loss.
    pub order: Vec<(usize, f64)>,
    pub entries: Vec<TraceEntry>,
    pub selection: BlockSelection,
    pub loss: f64,
    pub rounds: usize,
}

impl SelectionTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(|e| e.action != Action::Reject)
    }

    /// Checks the strict-decrease and add-round invariants.
    pub fn check_invariants(&self, add_rounds: usize) -> std::result::Result<(), String> {
        let mut best = self.initial_loss;
        for e in &self.entries {
            if e.attempted == Toggle::Add && e.round >= add_rounds {
                return Err(format!("addition attempted in round {}", e.round));
            }
            if e.loss_before != best {
                return Err(format!("entry for block {} starts from {} not {best}", e.block, e.loss_before));
            }
            if e.action != Action::Reject {
                if e.loss_after.partial_cmp(&best) != Some(std::cmp::Ordering::Less) {
                    return Err(format!("accepted toggle of block {} did not decrease loss", e.block));
                }
                best = e.loss_after;
            }
        }
        if best != self.loss {
            return Err("final loss differs from last accepted loss".into());
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, schema: &FeatureSchema, mut w: W) -> Result<()> {
        writeln!(w, "round,block,action,attempted,loss_before,loss_after")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.round,
                schema.block(e.block).name,
                e.action,
                e.attempted,
                e.loss_before,
                e.loss_after
            )?;
        }
        Ok(())
    }
}

/// Chosen start selection, its loss, and every candidate's loss.
pub type StartChoice = (BlockSelection, f64, Vec<(String, f64)>);

/// Evaluates ALL and then every schema group, returning the argmin (earliest
/// candidate on ties) with its loss and all candidate losses.
pub fn initial_configuration(
    schema: &FeatureSchema,
    loss: &dyn SelectionLoss,
) -> Result<StartChoice> {
    let mut candidates = vec![("ALL".to_string(), BlockSelection::all(schema))];
    for (name, blocks) in schema.groups() {
        candidates.push((name, BlockSelection::new(schema, blocks)?));
    }
    let mut best: Option<(BlockSelection, f64)> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    for (name, sel) in candidates {
        let l = loss.loss(&sel)?;
        log::info!("start candidate {name}: {l:.6}");
        scores.push((name, l));
        if best.as_ref().is_none_or(|(_, b)| l < *b) {
            best = Some((sel, l));
        }
    }
    let (sel, l) = best.expect("schema has at least one block");
    Ok((sel, l, scores))
}

/// Blocks sorted by descending isolated loss, ties in index order. A block
/// whose isolated evaluation fails gets an infinite loss.
pub fn order_blocks(schema: &FeatureSchema, loss: &dyn SelectionLoss) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = (0..schema.n_blocks())
        .into_par_iter()
        .map(|b| {
            let sel = BlockSelection::new(schema, [b]).expect("block index in range");
            match loss.loss(&sel) {
                Ok(l) => (b, l),
                Err(e) => {
                    log::warn!("block {} failed in isolation: {e}", schema.block(b).name);
                    (b, f64::INFINITY)
                }
            }
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored
}

pub fn greedy_select(
    schema: &FeatureSchema,
    loss: &dyn SelectionLoss,
    cfg: &GreedyConfig,
) -> Result<SelectionTrace> {
    if cfg.margin.is_nan() || cfg.margin < 0.0 {
        return Err(Error::Parameter(format!("margin must be non-negative, got {}", cfg.margin)));
    }
    let (initial, initial_loss, start_candidates) = match &cfg.start {
        StartPolicy::BestGroup => initial_configuration(schema, loss)?,
        StartPolicy::All => {
            let all = BlockSelection::all(schema);
            let l = loss.loss(&all)?;
            (all, l, vec![("ALL".into(), l)])
        }
        StartPolicy::Given(sel) => {
            if sel.is_empty() {
                return Err(Error::InvalidSelection("start selection is empty".into()));
            }
            BlockSelection::new(schema, sel.to_vec())?;
            let l = loss.loss(sel)?;
            (sel.clone(), l, vec![("GIVEN".into(), l)])
        }
    };
    let order = order_blocks(schema, loss);

    let mut current = initial.clone();
    let mut best = initial_loss;
    let mut entries = Vec::new();
    let mut round = 0;
    loop {
        let mut improved = false;
        for &(b, _) in &order {
            let (candidate, attempted) = if current.contains(b) {
                (current.without(b), Toggle::Remove)
            } else if round < cfg.add_rounds {
                (current.with(b), Toggle::Add)
            } else {
                continue;
            };
            let after = if candidate.is_empty() {
                f64::INFINITY
            } else {
                match loss.loss(&candidate) {
                    Ok(l) => l,
                    Err(e) => {
                        log::warn!("toggle of block {} failed: {e}", schema.block(b).name);
                        f64::INFINITY
                    }
                }
            };
            let accept = after < best - cfg.margin;
            entries.push(TraceEntry {
                round,
                block: b,
                action: match (accept, attempted) {
                    (false, _) => Action::Reject,
                    (true, Toggle::Add) => Action::Add,
                    (true, Toggle::Remove) => Action::Remove,
                },
                attempted,
                loss_before: best,
                loss_after: after,
            });
            if accept {
                log::info!("round {round}: {attempted} {} -> {after:.6}", schema.block(b).name);
                current = candidate;
                best = after;
                improved = true;
            }
        }
        round += 1;
        if !improved {
            break;
        }
    }

    Ok(SelectionTrace {
        initial,
        initial_loss,
        start_candidates,
        order,
        entries,
        selection: current,
        loss: best,
        rounds: round,
    })
}
