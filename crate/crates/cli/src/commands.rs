use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use featquant::classifier::grid_search;
use featquant::io;
use featquant::labelling::{build_labelled_dataset, label_users, Task};
use featquant::selection::{
    greedy_select, importance_report, overlap_table, parse_importance_csv, rank_by_rie, render_summary,
    write_heatmap_csv, write_overlap_csv, ProtocolLoss, SelectionLoss, SelectionSummary, TaskSelection,
    RBO_PERSISTENCE,
};
use featquant::synth::{generate_comments, standard_cohorts};
use featquant::{rng, BlockSelection, Dataset, QuantifierModel, DEFAULT_CLASSES};

use crate::config::RunConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("missing `data.{key}` (set it in the config or pass --data)")))
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(&cfg.out)?;
    Ok(BufWriter::new(File::create(cfg.out.join(name))?))
}

/// Training data for the configured task. A label file wins; without one the
/// behavioural tasks derive labels from the comment stream.
fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.data;
    let n = d.n_classes.unwrap_or(DEFAULT_CLASSES);
    let schema = io::load_schema(required(&d.schema, "schema")?)?;
    let (x, ids) = io::load_feature_matrix(required(&d.features, "features")?)?;
    if cfg.task != "custom" && d.labels.is_none() {
        if let Some(comments) = &d.comments {
            let task: Task = cfg.task.parse()?;
            let comments = io::read_comments(comments)?;
            let (data, stats) = build_labelled_dataset(
                &comments,
                x,
                ids,
                Arc::new(schema),
                &cfg.labelling.window()?,
                task,
                &cfg.labelling.options()?,
            )?;
            log::info!("labelled {} users ({stats:?})", data.len());
            return Ok(data);
        }
    }
    let labels = io::load_labels(required(&d.labels, "labels")?, n)?;
    Ok(io::assemble_dataset(x, ids, &labels, schema, n)?)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let data = cfg.synth.to_spec(cfg.seed).generate()?;
    io::write_dataset(&cfg.out, &data)?;
    let mut users = 0;
    if cfg.synth.users_per_cohort > 0 {
        let cohorts = standard_cohorts(cfg.synth.users_per_cohort);
        let comments = generate_comments(&cohorts, &cfg.labelling.window()?, cfg.seed)?;
        io::write_comments(&cfg.out.join("comments.jsonl"), &comments)?;
        users = cohorts.iter().map(|c| c.users).sum();
    }
    println!(
        "wrote {} instances × {} columns and {users} comment users to {}",
        data.len(),
        data.schema().width(),
        cfg.out.display()
    );
    Ok(())
}

pub fn label(cfg: &RunConfig) -> Result<()> {
    let task: Task = cfg.task.parse()?;
    let comments = io::read_comments(required(&cfg.data.comments, "comments")?)?;
    let (labels, stats) = label_users(&comments, &cfg.labelling.window()?, task, &cfg.labelling.options()?)?;
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(format!("labels_{task}.csv"));
    io::write_labels(&path, labels.iter().map(|(u, l)| (u.as_str(), *l)))?;
    println!(
        "{task}: labelled {}, ineligible {}, undefined {} -> {}",
        stats.labelled,
        stats.ineligible,
        stats.undefined,
        path.display()
    );
    Ok(())
}

pub fn quantify(cfg: &RunConfig, unlabelled: Option<PathBuf>) -> Result<()> {
    let kind = cfg.quantifier_kind()?;
    let train = load_dataset(cfg)?;
    let protocol = cfg.protocol.to_config(cfg.seed)?;
    let target = unlabelled.or_else(|| cfg.data.unlabelled.clone());
    let (x, _) = io::load_feature_matrix(required(&target, "unlabelled")?)?;
    if x.ncols() != train.schema().width() {
        return Err(featquant::Error::SchemaMismatch(format!(
            "unlabelled matrix has {} columns, schema declares {}",
            x.ncols(),
            train.schema().width()
        ))
        .into());
    }
    let hyper = match &protocol.grid {
        Some(grid) if kind.uses_classifier() => {
            let seed = rng::derive(cfg.seed, &[rng::tag::GRID]);
            grid_search(&train, grid, kind, protocol.quantifier, &protocol.model_selection, seed)?.best
        }
        _ => protocol.hyper,
    };
    let model = QuantifierModel::fit(kind, &train, hyper, protocol.quantifier)?;
    let prevalence = model.estimate(x.view())?;

    let mut w = out_file(cfg, "prevalence.csv")?;
    writeln!(w, "class,prevalence")?;
    for (c, p) in prevalence.as_slice().iter().enumerate() {
        writeln!(w, "{},{p}", c + 1)?;
    }
    w.flush()?;
    if let Some(clf) = model.classifier() {
        fs::write(cfg.out.join("model.txt"), clf.to_text())?;
    }
    let shown: Vec<String> = prevalence.as_slice().iter().map(|p| format!("{p:.4}")).collect();
    println!("{kind} (C={}, {}): [{}]", hyper.reg, hyper.weighting, shown.join(", "));
    Ok(())
}

pub fn stress(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.quantifier_kind()?;
    let data = load_dataset(cfg)?;
    let protocol = cfg.protocol.to_config(cfg.seed)?;
    let result = featquant::run_protocol(&data, &BlockSelection::all(data.schema()), kind, &protocol)?;

    let mut w = out_file(cfg, "stress.csv")?;
    result.write_csv(&mut w)?;
    w.flush()?;
    let mut w = out_file(cfg, "stress_summary.csv")?;
    writeln!(w, "train_size,mean_nmd")?;
    for (size, m) in result.mean_nmd_by_size() {
        writeln!(w, "{size},{m}")?;
    }
    w.flush()?;
    println!(
        "{kind}: MNMD {:.6} over {} samples ({} skipped)",
        result.mnmd(),
        result.scores.len(),
        result.skipped
    );
    Ok(())
}

pub fn select(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.quantifier_kind()?;
    let data = load_dataset(cfg)?;
    let schema = data.schema();
    let protocol = cfg.protocol.to_config(cfg.seed)?;
    let greedy = cfg.selection.to_config()?;
    let loss = ProtocolLoss::new(&data, kind, protocol);

    let trace = greedy_select(schema, &loss, &greedy)?;
    let importance = importance_report(schema, &trace.selection, &loss)?;
    let mnmd_all = loss.loss(&BlockSelection::all(schema))?;

    let mut w = out_file(cfg, "trace.csv")?;
    trace.write_csv(schema, &mut w)?;
    w.flush()?;
    let mut w = out_file(cfg, "selection.txt")?;
    for name in trace.selection.names(schema) {
        writeln!(w, "{name}")?;
    }
    w.flush()?;
    let mut w = out_file(cfg, "importance.csv")?;
    importance.write_csv(&mut w)?;
    w.flush()?;
    let summary = SelectionSummary {
        task: cfg.task.clone(),
        selected: trace.selection.len(),
        total: schema.n_blocks(),
        mnmd_all,
        mnmd_selected: trace.loss,
    };
    let mut w = out_file(cfg, "summary.csv")?;
    writeln!(w, "task,selected,total,mnmd_all,mnmd_selected")?;
    writeln!(
        w,
        "{},{},{},{},{}",
        summary.task, summary.selected, summary.total, summary.mnmd_all, summary.mnmd_selected
    )?;
    w.flush()?;

    println!(
        "{}: selected {}/{} blocks, MNMD {:.6} -> {:.6} ({} protocol runs, Gini {:.3})",
        summary.task,
        summary.selected,
        summary.total,
        trace.initial_loss,
        trace.loss,
        loss.evaluations(),
        importance.gini
    );
    Ok(())
}

fn read_summary(dir: &Path) -> Result<SelectionSummary> {
    let path = dir.join("summary.csv");
    let text = fs::read_to_string(&path)?;
    let bad = || CliError::Config(format!("{}: malformed summary", path.display()));
    let row = text.lines().nth(1).ok_or_else(bad)?;
    let f: Vec<&str> = row.split(',').collect();
    if f.len() != 5 {
        return Err(bad());
    }
    Ok(SelectionSummary {
        task: f[0].to_string(),
        selected: f[1].parse().map_err(|_| bad())?,
        total: f[2].parse().map_err(|_| bad())?,
        mnmd_all: f[3].parse().map_err(|_| bad())?,
        mnmd_selected: f[4].parse().map_err(|_| bad())?,
    })
}

pub fn report(cfg: &RunConfig, runs: Vec<PathBuf>) -> Result<()> {
    let runs = if runs.is_empty() { cfg.report.runs.clone() } else { runs };
    if runs.is_empty() {
        return Err(CliError::Config("no select runs given".into()));
    }
    let mut summaries = Vec::new();
    let mut importance = Vec::new();
    let mut selections = Vec::new();
    for dir in &runs {
        let summary = read_summary(dir)?;
        let entries = parse_importance_csv(&fs::read_to_string(dir.join("importance.csv"))?)?;
        let selected: BTreeSet<String> = fs::read_to_string(dir.join("selection.txt"))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect();
        selections.push(TaskSelection {
            task: summary.task.clone(),
            selected,
            ranking: rank_by_rie(&entries),
        });
        importance.push((summary.task.clone(), entries));
        summaries.push(summary);
    }
    let overlap = overlap_table(&selections, RBO_PERSISTENCE)?;

    let mut w = out_file(cfg, "heatmap.csv")?;
    write_heatmap_csv(&importance, &mut w)?;
    w.flush()?;
    let mut w = out_file(cfg, "overlap.csv")?;
    write_overlap_csv(&overlap, &mut w)?;
    w.flush()?;
    let mut w = out_file(cfg, "importance.csv")?;
    writeln!(w, "task,block,rie")?;
    for (task, entries) in &importance {
        for (block, rie) in entries {
            match rie.value() {
                Some(v) => writeln!(w, "{task},{block},{v}")?,
                None => writeln!(w, "{task},{block},undefined")?,
            }
        }
    }
    w.flush()?;

    let mut text = render_summary(&summaries);
    if !overlap.is_empty() {
        text.push('\n');
        text.push_str(&format!("{:<12} {:<12} {:>8} {:>8}\n", "task", "task", "J", "RBO"));
        for r in &overlap {
            text.push_str(&format!("{:<12} {:<12} {:>8.3} {:>8.3}\n", r.task_a, r.task_b, r.jaccard, r.rbo));
        }
    }
    fs::write(cfg.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
