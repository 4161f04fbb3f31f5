//! TOML run configuration with command-line overrides.
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use featquant::classifier::{ClassWeighting, Hyper, HyperGrid, ModelSelection};
use featquant::labelling::{LabelOptions, Thresholds, Window};
use featquant::selection::{GreedyConfig, StartPolicy};
use featquant::synth::BlockSpec;
use featquant::{ProtocolConfig, QuantifierKind, QuantifierOptions, SynthSpec};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// `activity`, `toxicity`, `diversity` or `custom` (labels file given).
    pub task: String,
    pub quantifier: String,
    pub out: PathBuf,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,
    pub data: DataSection,
    pub labelling: LabellingSection,
    pub protocol: ProtocolSection,
    pub selection: SelectionSection,
    pub synth: SynthSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            task: "custom".into(),
            quantifier: "EMQ".into(),
            out: PathBuf::from("out"),
            threads: 0,
            data: DataSection::default(),
            labelling: LabellingSection::default(),
            protocol: ProtocolSection::default(),
            selection: SelectionSection::default(),
            synth: SynthSection::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub comments: Option<PathBuf>,
    /// Feature matrix whose prevalence `quantify` estimates.
    pub unlabelled: Option<PathBuf>,
    pub n_classes: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabellingSection {
    pub intervention: NaiveDate,
    pub months: u32,
    pub moderate: f64,
    pub high: f64,
    pub min_post_comments: usize,
    pub diversity_order: f64,
}

impl Default for LabellingSection {
    fn default() -> Self {
        let t = Thresholds::default();
        let o = LabelOptions::default();
        LabellingSection {
            intervention: NaiveDate::from_ymd_opt(2020, 6, 29).expect("valid date"),
            months: 7,
            moderate: t.moderate,
            high: t.high,
            min_post_comments: o.min_post_comments,
            diversity_order: o.diversity_order,
        }
    }
}

impl LabellingSection {
    pub fn window(&self) -> featquant::Result<Window> {
        Window::around(self.intervention, self.months)
    }

    pub fn options(&self) -> featquant::Result<LabelOptions> {
        Ok(LabelOptions {
            thresholds: Thresholds::new(self.moderate, self.high)?,
            min_post_comments: self.min_post_comments,
            diversity_order: self.diversity_order,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub repetitions: usize,
    pub train_pool_size: usize,
    pub batch_size: usize,
    pub batch_count: usize,
    pub app_samples: usize,
    pub app_sample_size: usize,
    /// Tune C and class weighting at every training size.
    pub grid: bool,
    pub regs: Vec<f64>,
    pub weightings: Vec<String>,
    /// Fixed hyperparameters when `grid` is off.
    pub reg: f64,
    pub weighting: String,
    pub selection_train_fraction: f64,
    pub selection_samples: usize,
    pub selection_sample_size: usize,
    pub cv_folds: usize,
    pub emq_max_iter: usize,
    pub emq_eps: f64,
    pub max_skip_fraction: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        let g = HyperGrid::default();
        let q = QuantifierOptions::default();
        ProtocolSection {
            repetitions: p.repetitions,
            train_pool_size: p.train_pool_size,
            batch_size: p.batch_size,
            batch_count: p.batch_count,
            app_samples: p.app_samples,
            app_sample_size: p.app_sample_size,
            grid: true,
            regs: g.regs,
            weightings: g.weightings.iter().map(|w| w.to_string()).collect(),
            reg: p.hyper.reg,
            weighting: p.hyper.weighting.to_string(),
            selection_train_fraction: p.model_selection.train_fraction,
            selection_samples: p.model_selection.samples,
            selection_sample_size: p.model_selection.sample_size,
            cv_folds: q.cv_folds,
            emq_max_iter: q.emq_max_iter,
            emq_eps: q.emq_eps,
            max_skip_fraction: p.max_skip_fraction,
        }
    }
}

impl ProtocolSection {
    pub fn to_config(&self, seed: u64) -> featquant::Result<ProtocolConfig> {
        let grid = if self.grid {
            Some(HyperGrid {
                regs: self.regs.clone(),
                weightings: self
                    .weightings
                    .iter()
                    .map(|w| w.parse())
                    .collect::<featquant::Result<Vec<ClassWeighting>>>()?,
            })
        } else {
            None
        };
        let cfg = ProtocolConfig {
            repetitions: self.repetitions,
            train_pool_size: self.train_pool_size,
            batch_size: self.batch_size,
            batch_count: self.batch_count,
            app_samples: self.app_samples,
            app_sample_size: self.app_sample_size,
            seed,
            grid,
            hyper: Hyper {
                reg: self.reg,
                weighting: self.weighting.parse()?,
            },
            model_selection: ModelSelection {
                train_fraction: self.selection_train_fraction,
                samples: self.selection_samples,
                sample_size: self.selection_sample_size,
            },
            quantifier: QuantifierOptions {
                cv_folds: self.cv_folds,
                emq_max_iter: self.emq_max_iter,
                emq_eps: self.emq_eps,
                seed,
            },
            max_skip_fraction: self.max_skip_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    /// `best-group` or `all`.
    pub start: String,
    pub margin: f64,
    pub add_rounds: usize,
}

impl Default for SelectionSection {
    fn default() -> Self {
        let g = GreedyConfig::default();
        SelectionSection {
            start: "best-group".into(),
            margin: g.margin,
            add_rounds: g.add_rounds,
        }
    }
}

impl SelectionSection {
    pub fn to_config(&self) -> Result<GreedyConfig, CliError> {
        let start = match self.start.as_str() {
            "best-group" => StartPolicy::BestGroup,
            "all" => StartPolicy::All,
            other => return Err(CliError::Config(format!("unknown start policy `{other}`"))),
        };
        Ok(GreedyConfig {
            start,
            margin: self.margin,
            add_rounds: self.add_rounds,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBlock {
    pub name: String,
    pub dims: usize,
    /// Signal separation; absent or 0 makes the block noise.
    #[serde(default)]
    pub separation: f64,
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_classes: usize,
    pub instances_per_class: Vec<usize>,
    pub blocks: Vec<SynthBlock>,
    /// Users per label cohort in the synthetic comment stream; 0 disables it.
    pub users_per_cohort: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let mut blocks = vec![SynthBlock {
            name: "signal".into(),
            dims: 5,
            separation: 0.5,
            group: None,
        }];
        blocks.extend((1..=3).map(|i| SynthBlock {
            name: format!("noise{i}"),
            dims: 5,
            separation: 0.0,
            group: None,
        }));
        SynthSection {
            n_classes: 5,
            instances_per_class: vec![1000; 5],
            blocks,
            users_per_cohort: 20,
        }
    }
}

impl SynthSection {
    pub fn to_spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n_classes: self.n_classes,
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    let spec = if b.separation > 0.0 {
                        BlockSpec::signal(&b.name, b.dims, b.separation)
                    } else {
                        BlockSpec::noise(&b.name, b.dims)
                    };
                    match &b.group {
                        Some(g) => spec.in_group(g),
                        None => spec,
                    }
                })
                .collect(),
            instances_per_class: self.instances_per_class.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Output directories of earlier `select` runs.
    pub runs: Vec<PathBuf>,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub task: Option<String>,
    pub quantifier: Option<String>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub data: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|_| CliError::ConfigNotFound(p.display().to_string()))?;
                let mut cfg: RunConfig =
                    toml::from_str(&text).map_err(|e| CliError::Config(e.message().to_string()))?;
                let base = p.parent().unwrap_or(Path::new("."));
                cfg.resolve_paths(base);
                cfg
            }
            None => RunConfig::default(),
        };
        cfg.apply(overrides);
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [&mut d.features, &mut d.labels, &mut d.schema, &mut d.comments, &mut d.unlabelled]
            .into_iter()
            .flatten()
        {
            join(p);
        }
        self.report.runs.iter_mut().for_each(join);
        join(&mut self.out);
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = &o.task {
            self.task = t.clone();
        }
        if let Some(q) = &o.quantifier {
            self.quantifier = q.clone();
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
        if let Some(dir) = &o.data {
            self.data.features = Some(dir.join("features.csv"));
            self.data.schema = Some(dir.join("schema.txt"));
            let labels = dir.join("labels.csv");
            if labels.exists() {
                self.data.labels = Some(labels);
            }
            let comments = dir.join("comments.jsonl");
            if comments.exists() {
                self.data.comments = Some(comments);
            }
        }
    }

    fn check_paths(&self) -> Result<(), CliError> {
        let d = &self.data;
        for p in [&d.features, &d.labels, &d.schema, &d.comments, &d.unlabelled]
            .into_iter()
            .flatten()
            .chain(&self.report.runs)
        {
            if !p.exists() {
                return Err(CliError::Config(format!("path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn quantifier_kind(&self) -> featquant::Result<QuantifierKind> {
        self.quantifier.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library_defaults() {
        let cfg = RunConfig::default();
        let p = cfg.protocol.to_config(3).unwrap();
        let lib = ProtocolConfig::default();
        assert_eq!(p.train_sizes(), lib.train_sizes());
        assert_eq!(p.grid, lib.grid);
        assert_eq!(p.seed, 3);
    }

    #[test]
    fn parses_sections_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f.csv"), "id,a\n").unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 9\ntask = \"toxicity\"\n[data]\nfeatures = \"f.csv\"\n[protocol]\nrepetitions = 1\ngrid = false\n[labelling]\nintervention = \"2021-01-10\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(Some(&path), &Overrides { seed: Some(4), ..Default::default() }).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.task, "toxicity");
        assert_eq!(cfg.data.features.unwrap(), dir.path().join("f.csv"));
        assert_eq!(cfg.protocol.repetitions, 1);
        assert!(!cfg.protocol.grid);
        assert_eq!(cfg.labelling.intervention, NaiveDate::from_ymd_opt(2021, 1, 10).unwrap());
    }

    #[test]
    fn unknown_keys_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "sed = 1\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&path), &Overrides::default()), Err(CliError::Config(_))));
        let missing = dir.path().join("nope.toml");
        assert!(matches!(
            RunConfig::load(Some(&missing), &Overrides::default()),
            Err(CliError::ConfigNotFound(_))
        ));
    }

    #[test]
    fn data_dir_picks_up_optional_files() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["features.csv", "schema.txt", "comments.jsonl"] {
            std::fs::write(dir.path().join(f), "").unwrap();
        }
        let o = Overrides {
            data: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let cfg = RunConfig::load(None, &o).unwrap();
        assert!(cfg.data.labels.is_none());
        assert_eq!(cfg.data.comments.unwrap(), dir.path().join("comments.jsonl"));
        std::fs::remove_file(dir.path().join("schema.txt")).unwrap();
        assert!(matches!(RunConfig::load(None, &o), Err(CliError::Config(_))));
    }
}
