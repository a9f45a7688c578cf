//! The pipeline stages. Each stage records a cache key derived from its
//! configuration and inputs; a rerun with an unchanged key is skipped.
//! Inputs are always checked against the hashes their producer recorded.

use std::fmt;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use quanv::ansatz::{build_pool, TemplateId, CATALOGUE_VERSION};
use quanv::classifier::{evaluate, one_hot, train, EpochMetrics, MlpModel, Normalizer};
use quanv::cluster::{select_filters, FilterBank, BANK_MANIFEST};
use quanv::data::{generate_dataset, Dataset, Split};
use quanv::qsim::circuit_evaluations;
use quanv::quanvolution::{max_pool, quanvolve, AngleScale, QuanvLayerConfig, Signal};
use quanv::textfmt::{fmt17, read_to_string, write_file, Num17};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{hash_json, ExperimentConfig};
use crate::error::{PipelineError, Result};
use crate::workspace::{learn_stage, Artifact, StageRecord, Workspace, EXTRACT, GENERATE, TRAIN};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc";

fn learn_key(level: usize) -> String {
    format!("learn_level_{level}")
}

/// A configured pipeline bound to one workspace.
#[derive(Clone, Debug)]
pub struct Pipeline {
    config: ExperimentConfig,
    ws: Workspace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOutcome {
    pub cached: bool,
    pub class_counts: [usize; 2],
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnOutcome {
    pub level: usize,
    pub cached: bool,
    pub objective: f64,
    pub templates: Vec<TemplateId>,
    pub selection_indices: Vec<usize>,
    pub pca_dims: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractOutcome {
    pub cached: bool,
    pub train_shape: (usize, usize),
    pub test_shape: (usize, usize),
    pub circuit_evaluations: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub cached: bool,
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub stage_seconds: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub stage: String,
    pub cache_key: String,
    pub outputs: Vec<Artifact>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub feature_len: usize,
    pub epochs: usize,
    pub train_accuracy: Num17,
    pub test_loss: Num17,
    pub test_accuracy: Num17,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub stage_seconds: Vec<(String, f64)>,
}

/// Everything a run produced. `timing` is the only part that varies between
/// identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config_sha256: String,
    pub catalogue_version: u32,
    pub stages: Vec<StageEntry>,
    pub summary: RunSummary,
    pub timing: Timing,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            quanv::Error::Parse {
                path: path.to_path_buf(),
                msg: e.to_string(),
            }
            .into()
        })
    }

    /// Checks every listed artifact against its hash.
    pub fn verify(&self, ws: &Workspace) -> Result<()> {
        for s in &self.stages {
            let record = StageRecord {
                cache_key: s.cache_key.clone(),
                outputs: s.outputs.clone(),
            };
            ws.verify_outputs(&record, &s.stage)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleRecord {
    lo: Num17,
    hi: Num17,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Self {
        let ws = Workspace::new(config.workspace.clone());
        Self { config, ws }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn generate(&self) -> Result<GenerateOutcome> {
        self.config.validate()?;
        let _lock = self.ws.lock()?;
        self.generate_unlocked()
    }

    pub fn learn_filters(&self, level: usize) -> Result<LearnOutcome> {
        self.config.validate()?;
        let _lock = self.ws.lock()?;
        self.learn_unlocked(level)
    }

    pub fn extract(&self) -> Result<ExtractOutcome> {
        self.config.validate()?;
        let _lock = self.ws.lock()?;
        self.extract_unlocked()
    }

    pub fn train(&self) -> Result<TrainOutcome> {
        self.config.validate()?;
        let _lock = self.ws.lock()?;
        self.train_unlocked()
    }

    /// All stages in order. Stages that already ran with the same inputs are
    /// reused; the first failure aborts.
    pub fn run_all(&self) -> Result<RunOutcome> {
        self.config.validate()?;
        let _lock = self.ws.lock()?;
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let mut stage_seconds = Vec::new();
        let mut timed = |name: String, f: &mut dyn FnMut() -> Result<()>| -> Result<()> {
            let t = Instant::now();
            f()?;
            stage_seconds.push((name, t.elapsed().as_secs_f64()));
            Ok(())
        };

        timed(GENERATE.into(), &mut || self.generate_unlocked().map(drop))?;
        for level in 1..=self.config.levels.len() {
            timed(learn_stage(level), &mut || self.learn_unlocked(level).map(drop))?;
        }
        timed(EXTRACT.into(), &mut || self.extract_unlocked().map(drop))?;
        let mut trained = None;
        timed(TRAIN.into(), &mut || {
            trained = Some(self.train_unlocked()?);
            Ok(())
        })?;
        let trained = trained.expect("train stage ran");

        let mut stages = Vec::new();
        let mut keys = vec![(GENERATE.to_string(), GENERATE.to_string())];
        keys.extend((1..=self.config.levels.len()).map(|l| (learn_key(l), learn_stage(l))));
        keys.push((EXTRACT.into(), EXTRACT.into()));
        keys.push((TRAIN.into(), TRAIN.into()));
        for (key, stage) in keys {
            let r = self.ws.require_record(&key, &stage)?;
            stages.push(StageEntry {
                stage,
                cache_key: r.cache_key,
                outputs: r.outputs,
            });
        }
        let manifest = RunManifest {
            config_sha256: self.config.hash(),
            catalogue_version: CATALOGUE_VERSION,
            stages,
            summary: RunSummary {
                feature_len: self.config.feature_len()?,
                epochs: trained.epochs,
                train_accuracy: Num17(trained.train_accuracy),
                test_loss: Num17(trained.test_loss),
                test_accuracy: Num17(trained.test_accuracy),
            },
            timing: Timing {
                started_unix_ms,
                stage_seconds: stage_seconds.clone(),
            },
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_file(&self.ws.run_manifest(), text)?;
        Ok(RunOutcome {
            manifest,
            stage_seconds,
        })
    }

    /// Loads a learned bank after checking its files.
    pub fn inspect_bank(&self, level: usize) -> Result<FilterBank> {
        self.check_level(level)?;
        let record = self.ws.require_record(&learn_key(level), &learn_stage(level))?;
        self.ws.verify_outputs(&record, &learn_stage(level))?;
        Ok(FilterBank::load(&self.ws.bank_dir(level))?)
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.config.levels.len() {
            return Err(PipelineError::config(format!(
                "level {level} outside 1..={}",
                self.config.levels.len()
            )));
        }
        Ok(())
    }

    /// Record for `key` if its cache key matches and all outputs still exist.
    fn cache_hit(&self, key: &str, cache_key: &str) -> Result<Option<StageRecord>> {
        Ok(self.ws.read_record(key)?.filter(|r| {
            r.cache_key == cache_key && r.outputs.iter().all(|a| self.ws.root().join(&a.path).exists())
        }))
    }

    fn generate_unlocked(&self) -> Result<GenerateOutcome> {
        let d = &self.config.data;
        let cache_key = hash_json(&("generate", d));
        if self.cache_hit(GENERATE, &cache_key)?.is_some() {
            let (ds, split) = self.load_dataset()?;
            return Ok(GenerateOutcome {
                cached: true,
                class_counts: ds.class_counts(),
                n_train: split.train.len(),
                n_test: split.test.len(),
            });
        }
        let ds = generate_dataset(&d.healthy, &d.faulty, d.m, d.seed)?.split(d.n_train, d.split_seed)?;
        let split = ds.split.clone().expect("split was just set");
        ds.save(&self.ws.dataset())?;
        write_file(&self.ws.split(), split.to_text())?;
        self.ws
            .write_record(GENERATE, &cache_key, &[self.ws.dataset(), self.ws.split()])?;
        Ok(GenerateOutcome {
            cached: false,
            class_counts: ds.class_counts(),
            n_train: split.train.len(),
            n_test: split.test.len(),
        })
    }

    fn load_dataset(&self) -> Result<(Dataset, Split)> {
        let record = self.ws.require_record(GENERATE, GENERATE)?;
        self.ws.verify_outputs(&record, GENERATE)?;
        let ds = Dataset::load(&self.ws.dataset())?;
        let path = self.ws.split();
        let split = Split::from_text(&path, &read_to_string(&path)?, ds.len())?;
        Ok((ds, split))
    }

    fn learn_unlocked(&self, level: usize) -> Result<LearnOutcome> {
        self.check_level(level)?;
        let cfg = &self.config.levels[level - 1];
        let pca_dims = cfg.effective_pca_dims();
        let cache_key = hash_json(&("learn", level, CATALOGUE_VERSION, cfg, pca_dims));
        let dir = self.ws.bank_dir(level);
        if self.cache_hit(&learn_key(level), &cache_key)?.is_some() {
            let bank = FilterBank::load(&dir)?;
            return Ok(LearnOutcome {
                level,
                cached: true,
                objective: bank.objective,
                templates: bank.filters.iter().map(|f| f.template.id).collect(),
                selection_indices: bank.selection_indices,
                pca_dims,
            });
        }
        let pool = build_pool::<f64>(cfg.n_qubits(), cfg.pool_size, cfg.layers[0]..=cfg.layers[1], cfg.pool_seed)?;
        let bank = select_filters(&pool, cfg.k, pca_dims, cfg.cluster_seed)?
            .at_level(level)
            .with_pool_seed(cfg.pool_seed);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| quanv::Error::Io {
                path: dir.clone(),
                source: e,
            })?;
        }
        bank.save(&dir)?;
        let mut outputs = vec![dir.join(BANK_MANIFEST)];
        outputs.extend((0..bank.k()).map(|i| dir.join(format!("filter_{i:02}.json"))));
        self.ws.write_record(&learn_key(level), &cache_key, &outputs)?;
        Ok(LearnOutcome {
            level,
            cached: false,
            objective: bank.objective,
            templates: bank.filters.iter().map(|f| f.template.id).collect(),
            selection_indices: bank.selection_indices,
            pca_dims,
        })
    }

    fn extract_unlocked(&self) -> Result<ExtractOutcome> {
        let before = circuit_evaluations();
        let generate = self.ws.require_record(GENERATE, GENERATE)?;
        let mut banks = Vec::with_capacity(self.config.levels.len());
        let mut bank_records = Vec::new();
        for level in 1..=self.config.levels.len() {
            let record = self.ws.require_record(&learn_key(level), &learn_stage(level))?;
            self.ws.verify_outputs(&record, &learn_stage(level))?;
            banks.push(FilterBank::load(&self.ws.bank_dir(level))?);
            bank_records.push(record.outputs);
        }
        let (ds, split) = self.load_dataset()?;
        let geometry: Vec<_> = self.config.levels.iter().map(|l| l.geometry()).collect();
        let cache_key = hash_json(&("extract", &geometry, &generate.outputs, &bank_records));
        if let Some(record) = self.cache_hit(EXTRACT, &cache_key)? {
            self.ws.verify_outputs(&record, EXTRACT)?;
            let (train_x, _) = self.load_features("train")?;
            let (test_x, _) = self.load_features("test")?;
            return Ok(ExtractOutcome {
                cached: true,
                train_shape: train_x.dim(),
                test_shape: test_x.dim(),
                circuit_evaluations: circuit_evaluations() - before,
            });
        }

        let mut signals: Vec<Signal<f64>> = ds
            .samples
            .rows()
            .into_iter()
            .map(|r| Signal::single_channel(&r.to_vec()))
            .collect::<quanv::Result<_>>()?;
        let mut scales = Vec::with_capacity(banks.len());
        for (cfg, bank) in self.config.levels.iter().zip(&banks) {
            if bank.n_qubits() != cfg.window || bank.k() != cfg.k {
                return Err(PipelineError::config(format!(
                    "bank for level {} has {} filters on {} qubits; config wants {} on {}; rerun learn-filters",
                    bank.level,
                    bank.k(),
                    bank.n_qubits(),
                    cfg.k,
                    cfg.window
                )));
            }
            let scale = AngleScale::fit(split.train.iter().flat_map(|&i| signals[i].values().iter().copied()));
            let layer = QuanvLayerConfig::from_bank(bank, cfg.stride, scale)?;
            signals = signals
                .par_iter()
                .map(|s| max_pool(&quanvolve(s, &layer)?, cfg.pool_window, cfg.pool_stride))
                .collect::<quanv::Result<_>>()?;
            scales.push(ScaleRecord {
                lo: Num17(scale.lo),
                hi: Num17(scale.hi),
            });
        }
        let features: Vec<Vec<f64>> = signals.iter().map(Signal::flatten).collect();
        let rows = |idx: &[usize]| -> Array2<f64> {
            let d = features[0].len();
            Array2::from_shape_fn((idx.len(), d), |(r, c)| features[idx[r]][c])
        };
        let train_x = rows(&split.train);
        let test_x = rows(&split.test);
        // A single training row has no spread to standardize by; it only centres.
        let normalizer = if train_x.nrows() >= 2 {
            Normalizer::fit(train_x.view())?
        } else {
            Normalizer {
                mean: train_x.row(0).to_owned(),
                std: ndarray::Array1::ones(train_x.ncols()),
            }
        };

        write_labeled(&self.ws.features("train"), &train_x, &split.train, &ds.labels)?;
        write_labeled(&self.ws.features("test"), &test_x, &split.test, &ds.labels)?;
        normalizer.save(&self.ws.normalizer())?;
        let mut text = serde_json::to_string_pretty(&scales).expect("scales serialize");
        text.push('\n');
        write_file(&self.ws.scales(), text)?;
        self.ws.write_record(
            EXTRACT,
            &cache_key,
            &[
                self.ws.features("train"),
                self.ws.features("test"),
                self.ws.normalizer(),
                self.ws.scales(),
            ],
        )?;
        Ok(ExtractOutcome {
            cached: false,
            train_shape: train_x.dim(),
            test_shape: test_x.dim(),
            circuit_evaluations: circuit_evaluations() - before,
        })
    }

    fn load_features(&self, part: &str) -> Result<(Array2<f64>, Vec<usize>)> {
        let path = self.ws.features(part);
        let text = read_to_string(&path)?;
        let mut labels = Vec::new();
        let mut values = Vec::new();
        let mut width = None;
        for (n, line) in text.lines().enumerate() {
            let bad = |msg: String| quanv::Error::Parse {
                path: path.clone(),
                msg: format!("line {}: {msg}", n + 1),
            };
            let mut tokens = line.split_whitespace();
            let label: usize = tokens
                .next()
                .ok_or_else(|| bad("empty line".into()))?
                .parse()
                .map_err(|e| bad(format!("label: {e}")))?;
            let row = tokens
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(e.to_string()))?;
            if *width.get_or_insert(row.len()) != row.len() {
                return Err(bad(format!("{} values, expected {}", row.len(), width.unwrap_or(0))).into());
            }
            labels.push(label);
            values.extend(row);
        }
        let d = width.unwrap_or(0);
        let x = Array2::from_shape_vec((labels.len(), d), values).expect("rows have equal width");
        Ok((x, labels))
    }

    fn train_unlocked(&self) -> Result<TrainOutcome> {
        let before = circuit_evaluations();
        let extract = self.ws.require_record(EXTRACT, EXTRACT)?;
        self.ws.verify_outputs(&extract, EXTRACT)?;
        let cfg = &self.config.classifier;
        let cache_key = hash_json(&("train", cfg, &extract.outputs));
        if self.cache_hit(TRAIN, &cache_key)?.is_some() {
            let model = MlpModel::load(&self.ws.checkpoint())?;
            let (test_x, test_y) = self.normalized("test")?;
            let (train_x, train_y) = self.normalized("train")?;
            let (test_loss, test_accuracy) = evaluate(&model, test_x.view(), test_y.view())?;
            let (_, train_accuracy) = evaluate(&model, train_x.view(), train_y.view())?;
            return Ok(TrainOutcome {
                cached: true,
                epochs: cfg.epochs,
                train_accuracy,
                test_loss,
                test_accuracy,
            });
        }
        let (train_x, train_y) = self.normalized("train")?;
        let (test_x, test_y) = self.normalized("test")?;
        let (model, mut metrics) = train(
            train_x.view(),
            train_y.view(),
            cfg,
            Some((test_x.view(), test_y.view())),
        )?;
        if metrics.is_empty() {
            let (train_loss, train_acc) = evaluate(&model, train_x.view(), train_y.view())?;
            let (test_loss, test_acc) = evaluate(&model, test_x.view(), test_y.view())?;
            metrics.push(EpochMetrics {
                epoch: 0,
                train_loss,
                train_acc,
                test_loss: Some(test_loss),
                test_acc: Some(test_acc),
            });
        }
        model.save(&self.ws.checkpoint())?;
        write_file(&self.ws.metrics(), metrics_csv(&metrics))?;
        self.ws
            .write_record(TRAIN, &cache_key, &[self.ws.checkpoint(), self.ws.metrics()])?;
        debug_assert_eq!(circuit_evaluations(), before, "training must not run circuits");
        let last = metrics.last().expect("at least one row");
        Ok(TrainOutcome {
            cached: false,
            epochs: cfg.epochs,
            train_accuracy: last.train_acc,
            test_loss: last.test_loss.expect("validation was supplied"),
            test_accuracy: last.test_acc.expect("validation was supplied"),
        })
    }

    fn normalized(&self, part: &str) -> Result<(Array2<f64>, Array2<f64>)> {
        let (x, labels) = self.load_features(part)?;
        let normalizer = Normalizer::load(&self.ws.normalizer())?;
        Ok((normalizer.transform(x.view())?, one_hot(&labels)))
    }
}

fn write_labeled(path: &Path, x: &Array2<f64>, idx: &[usize], labels: &[usize]) -> Result<()> {
    let mut out = String::new();
    for (row, &i) in x.rows().into_iter().zip(idx) {
        out.push_str(&labels[i].to_string());
        for &v in row {
            out.push(' ');
            out.push_str(&fmt17(v));
        }
        out.push('\n');
    }
    Ok(write_file(path, out)?)
}

/// Header row, then one comma-separated row per epoch.
pub fn metrics_csv(metrics: &[EpochMetrics<f64>]) -> String {
    let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
    let mut out = format!("{METRICS_HEADER}\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch,
            fmt17(m.train_loss),
            fmt17(m.train_acc),
            opt(m.test_loss),
            opt(m.test_acc)
        ));
    }
    out
}

impl fmt::Display for GenerateOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "generate{}: healthy {}, faulty {}; split {} train / {} test",
            if self.cached { " (cached)" } else { "" },
            self.class_counts[0],
            self.class_counts[1],
            self.n_train,
            self.n_test
        )
    }
}

impl fmt::Display for LearnOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.templates.iter().map(|t| t.as_str()).collect();
        write!(
            f,
            "learn-filters level {}{}: K-means objective {:.6}, PCA {}, selected pool rows {:?} -> [{}] (learned from circuit distributions only; no data used)",
            self.level,
            if self.cached { " (cached)" } else { "" },
            self.objective,
            self.pca_dims.map_or("off".to_string(), |r| format!("{r} dims")),
            self.selection_indices,
            names.join(", ")
        )
    }
}

impl fmt::Display for ExtractOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "extract{}: train {}x{}, test {}x{}, {} circuit evaluations",
            if self.cached { " (cached)" } else { "" },
            self.train_shape.0,
            self.train_shape.1,
            self.test_shape.0,
            self.test_shape.1,
            self.circuit_evaluations
        )
    }
}

impl fmt::Display for TrainOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "train{}: {} epochs, train accuracy {:.4}, test loss {:.4}, test accuracy {:.4}",
            if self.cached { " (cached)" } else { "" },
            self.epochs,
            self.train_accuracy,
            self.test_loss,
            self.test_accuracy
        )
    }
}

impl fmt::Display for RunOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let times: Vec<String> = self
            .stage_seconds
            .iter()
            .map(|(s, t)| format!("{s} {t:.2}s"))
            .collect();
        write!(
            f,
            "test accuracy {:.4} | {}",
            self.manifest.summary.test_accuracy.0,
            times.join(", ")
        )
    }
}

/// Default config file contents, for `quanv` users starting from scratch.
pub fn default_config_toml() -> String {
    ExperimentConfig::default().to_toml()
}
