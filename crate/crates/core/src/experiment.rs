//! Reproducible experiments: one config file drives corpus generation,
//! training, evaluation and the objective ladder.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! data/            corpus bundle, manifest.json, config.toml
//! train/           metrics.jsonl, checkpoints/step-NNNNNN.ckpt, final.ckpt, config.toml
//! eval/<task>.json
//! ablate/<rung>/   one train/ and eval summary per rung
//! ablate/table.tsv, ablate/deltas.tsv, ablate/summary.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::dataset::Dataset;
use crate::corpus::{derive_rng, CorpusConfig};
use crate::encoder::{Encoder, ModelConfig};
use crate::error::{Error, Result};
use crate::eval::{
    alignment_report, evaluate_all, format_deltas, metric_deltas, retrieval_accuracy, zero_shot_tag_transfer,
    AlignmentReport, DeltaRow, EvalSummary, ProbeConfig, RetrievalReport, TransferReport,
};
use crate::objectives::Objectives;
use crate::tensor::{Precision, Scalar};
use crate::trainer::{
    checkpoint_precision, load_checkpoint, save_checkpoint, MetricsLog, MetricsRecord, TrainConfig, TrainState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out_dir: PathBuf::from("runs/desk"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            corpus: CorpusConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document. Missing fields take their defaults; unknown or
    /// ill-typed fields are reported with their dotted path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<file>", e.message().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.inner().message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Fills the vocabulary size from the corpus and checks every section.
    pub fn resolve(&mut self) -> Result<()> {
        self.corpus.validate()?;
        let vocab = self.corpus.vocab_size();
        match self.model.vocab_size {
            0 => self.model.vocab_size = vocab,
            v if v != vocab => {
                return Err(Error::config(
                    "model.vocab_size",
                    format!("{v} does not match the corpus vocabulary of {vocab}; leave it at 0 to derive it"),
                ))
            }
            _ => {}
        }
        let longest = 2 * self.corpus.max_len + 3;
        if self.model.max_positions < longest {
            return Err(Error::config(
                "model.max_positions",
                format!("{} is shorter than the longest concatenated pair ({longest})", self.model.max_positions),
            ));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.probe.epochs == 0 || !(self.probe.lr > 0.0) {
            return Err(Error::config("probe", "epochs and lr must be positive"));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.out_dir.join("train")
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialises");
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub lines: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// Digest over every file's path and digest, in manifest order.
    pub corpus_sha256: String,
    pub files: Vec<ManifestEntry>,
}

/// Sentence counts for one language, as printed by `gen`.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageCounts {
    pub tag: String,
    pub mono: usize,
    pub parallel: usize,
    pub held_out: usize,
}

pub fn corpus_digest(files: &[(String, String)]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (path, digest) in files {
        h.update(path.as_bytes());
        h.update(b"\0");
        h.update(digest.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Generates the corpus bundle into `dir` with a manifest and the resolved config.
pub fn generate(cfg: &ExperimentConfig, dir: &Path) -> Result<(Dataset, Manifest)> {
    let data = Dataset::generate(&cfg.corpus, cfg.seed)?;
    let line_counts: Vec<usize> = data.files().iter().map(|(_, t)| t.lines().count()).collect();
    let hashes = data.write(dir)?;
    let manifest = Manifest {
        seed: cfg.seed,
        corpus_sha256: corpus_digest(&hashes),
        files: hashes
            .into_iter()
            .zip(line_counts)
            .map(|((path, sha256), lines)| ManifestEntry { path, lines, sha256 })
            .collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok((data, manifest))
}

pub fn language_counts(data: &Dataset) -> Vec<LanguageCounts> {
    data.specs
        .iter()
        .map(|s| LanguageCounts {
            tag: s.tag.clone(),
            mono: data.mono[s.index].sentences.len(),
            parallel: data.parallel.iter().filter(|p| p.tgt == s.index).map(|p| p.pairs.len()).sum(),
            held_out: data.held_out.iter().filter(|p| p.tgt == s.index).map(|p| p.pairs.len()).sum(),
        })
        .collect()
}

/// Reads a bundle written by [`generate`] and returns it with its corpus digest.
pub fn load_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<(Dataset, String)> {
    let data = Dataset::read(dir, &cfg.corpus, cfg.seed)?;
    let digest = corpus_digest(&data.file_digests());
    Ok((data, digest))
}

/// How a training run starts.
#[derive(Clone, Debug, Default)]
pub enum Start {
    /// Fresh initialisation from the experiment seed.
    #[default]
    Fresh,
    /// Continue a saved run: parameters, optimiser state and step.
    Resume(PathBuf),
    /// Second phase: parameters from a checkpoint, fresh optimiser and schedule.
    Phase2(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub steps: u64,
    pub last: Option<MetricsRecord>,
    pub final_checkpoint: PathBuf,
}

pub fn init_encoder<T: Scalar>(cfg: &ExperimentConfig) -> Result<Encoder<T>> {
    Encoder::new(cfg.model.clone(), &mut derive_rng(cfg.seed, &["init"]))
}

fn start_state<T: Scalar>(cfg: &ExperimentConfig, start: &Start) -> Result<TrainState<T>> {
    match start {
        Start::Fresh => TrainState::new(init_encoder(cfg)?, cfg.train.clone(), cfg.seed),
        Start::Resume(path) => {
            let mut state: TrainState<T> = load_checkpoint(path)?;
            if state.encoder.config() != &cfg.model {
                return Err(Error::config("model", format!("{} was trained with a different model", path.display())));
            }
            state.config = cfg.train.clone();
            Ok(state)
        }
        Start::Phase2(path) => {
            let prior: TrainState<T> = load_checkpoint(path)?;
            if prior.encoder.config() != &cfg.model {
                return Err(Error::config("model", format!("{} was trained with a different model", path.display())));
            }
            TrainState::new(prior.encoder, cfg.train.clone(), cfg.seed)
        }
    }
}

/// Trains into `out`, writing the metrics log, periodic checkpoints and
/// `final.ckpt`. `progress` is called after every step.
pub fn train_into<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset,
    out: &Path,
    start: &Start,
    mut progress: impl FnMut(&MetricsRecord),
) -> Result<(TrainState<T>, TrainOutcome)> {
    let mut state = start_state::<T>(cfg, start)?;
    write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut log = MetricsLog::create(&out.join("metrics.jsonl"))?;
    let training = data.training_data();
    let every = cfg.train.checkpoint_every;
    let mut last = None;
    state.run(&training, |s, r| {
        log.write(r)?;
        progress(r);
        last = Some(*r);
        if every > 0 && s.step % every == 0 && s.step < s.config.steps {
            save_checkpoint(s, &out.join(format!("checkpoints/step-{:06}.ckpt", s.step)))?;
        }
        Ok(())
    })?;
    log.flush()?;
    let final_checkpoint = out.join("final.ckpt");
    save_checkpoint(&state, &final_checkpoint)?;
    let outcome = TrainOutcome {
        steps: state.step,
        last,
        final_checkpoint,
    };
    Ok((state, outcome))
}

/// [`train_into`] at the precision named by the model config.
pub fn train(
    cfg: &ExperimentConfig,
    data: &Dataset,
    out: &Path,
    start: &Start,
    progress: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    match cfg.model.precision {
        Precision::Train32 => train_into::<f32>(cfg, data, out, start, progress).map(|r| r.1),
        Precision::Test64 => train_into::<f64>(cfg, data, out, start, progress).map(|r| r.1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Retrieve,
    Align,
    Transfer,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrieve" => Ok(Task::Retrieve),
            "align" => Ok(Task::Align),
            "transfer" => Ok(Task::Transfer),
            other => Err(Error::config("--task", format!("unknown task `{other}` (retrieve, align, transfer)"))),
        }
    }
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Retrieve => "retrieve",
            Task::Align => "align",
            Task::Transfer => "transfer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskReport {
    Retrieve(RetrievalReport),
    Align(AlignmentReport),
    Transfer(TransferReport),
}

impl TaskReport {
    pub fn summary_line(&self) -> String {
        match self {
            TaskReport::Retrieve(r) => {
                let per: Vec<String> = r.pairs.iter().map(|p| format!("{} {:.3}", p.source, p.score.accuracy)).collect();
                format!("retrieve: mean accuracy@1 {:.4} ({})", r.mean_accuracy, per.join(", "))
            }
            TaskReport::Align(r) => {
                let per: Vec<String> = r.languages.iter().map(|l| format!("{} {:.3}", l.target, l.score.aer)).collect();
                format!("align: AER {}", per.join(", "))
            }
            TaskReport::Transfer(r) => format!(
                "transfer: held-in {:.4}, source {:.4}, mean target {:.4}, gap {:.4}",
                r.held_in_accuracy, r.source_accuracy, r.mean_target_accuracy, r.transfer_gap
            ),
        }
    }
}

pub fn evaluate_task<T: Scalar>(encoder: &Encoder<T>, data: &Dataset, probe: &ProbeConfig, task: Task) -> Result<TaskReport> {
    Ok(match task {
        Task::Retrieve => TaskReport::Retrieve(retrieval_accuracy(encoder, &data.held_out, &data.vocab)?),
        Task::Align => TaskReport::Align(alignment_report(encoder, &data.held_out, &data.specs, &data.vocab)?),
        Task::Transfer => TaskReport::Transfer(zero_shot_tag_transfer(encoder, data, probe)?),
    })
}

/// Loads a checkpoint at whatever precision it was saved in and evaluates one task.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, data: &Dataset, checkpoint: &Path, task: Task) -> Result<TaskReport> {
    fn run<T: Scalar>(cfg: &ExperimentConfig, data: &Dataset, checkpoint: &Path, task: Task) -> Result<TaskReport> {
        let state: TrainState<T> = load_checkpoint(checkpoint)?;
        if state.encoder.config().vocab_size != data.vocab.size() {
            return Err(Error::Data(format!(
                "{} has vocabulary {}, corpus has {}",
                checkpoint.display(),
                state.encoder.config().vocab_size,
                data.vocab.size()
            )));
        }
        evaluate_task(&state.encoder, data, &cfg.probe, task)
    }
    match checkpoint_precision(checkpoint)? {
        Precision::Train32 => run::<f32>(cfg, data, checkpoint, task),
        Precision::Test64 => run::<f64>(cfg, data, checkpoint, task),
    }
}

pub fn write_report(path: &Path, report: &TaskReport) -> Result<()> {
    write_json(path, report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RungResult {
    pub label: String,
    pub objectives: Objectives,
    pub corpus_sha256: String,
    pub summary: EvalSummary,
}

impl RungResult {
    pub fn retrieval(&self) -> f64 {
        self.summary.retrieval.mean_accuracy
    }

    pub fn mean_aer(&self) -> f64 {
        let l = &self.summary.alignment.languages;
        l.iter().map(|e| e.score.aer).sum::<f64>() / l.len().max(1) as f64
    }

    pub fn tagging(&self) -> f64 {
        self.summary.transfer.mean_target_accuracy
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub seed: u64,
    pub rungs: Vec<RungResult>,
    /// Per-language retrieval change from the first rung to the last.
    pub deltas: Vec<DeltaRow>,
}

pub fn format_ablation(result: &AblationResult) -> String {
    let rows: Vec<Vec<String>> = result
        .rungs
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.objectives.to_string(),
                format!("{:.4}", r.retrieval()),
                format!("{:.4}", r.mean_aer()),
                format!("{:.4}", r.tagging()),
                r.corpus_sha256.clone(),
            ]
        })
        .collect();
    crate::corpus::text::format_table(
        &["rung", "objectives", "retrieval_acc", "mean_aer", "tagging_acc", "corpus_sha256"],
        &rows,
    )
}

/// Trains and evaluates `rungs` from one shared initialisation and corpus.
/// Reuses the corpus in `out/../data` when present, otherwise generates it.
pub fn run_ladder<T: Scalar>(
    cfg: &ExperimentConfig,
    rungs: &[Objectives],
    out: &Path,
    mut progress: impl FnMut(&str, &MetricsRecord),
) -> Result<AblationResult> {
    let data_dir = cfg.data_dir();
    let data = if data_dir.join("manifest.json").exists() {
        load_dataset(cfg, &data_dir)?.0
    } else {
        generate(cfg, &data_dir)?.0
    };
    let digest = corpus_digest(&data.file_digests());
    let mut results = Vec::new();
    for &objectives in rungs {
        let label = objectives.label().replace('+', "_").to_ascii_lowercase();
        let mut rung_cfg = cfg.clone();
        rung_cfg.train.objectives = objectives;
        rung_cfg.resolve()?;
        let dir = out.join(&label);
        let (state, _) = train_into::<T>(&rung_cfg, &data, &dir.join("train"), &Start::Fresh, |r| progress(&label, r))?;
        let summary = evaluate_all(&state.encoder, &data, &cfg.probe)?;
        write_json(&dir.join("eval.json"), &summary)?;
        results.push(RungResult {
            label: objectives.label(),
            objectives,
            corpus_sha256: digest.clone(),
            summary,
        });
    }
    let deltas = match (results.first(), results.last()) {
        (Some(a), Some(b)) if results.len() > 1 => metric_deltas(&data.specs, &a.summary.retrieval, &b.summary.retrieval),
        _ => Vec::new(),
    };
    let result = AblationResult {
        seed: cfg.seed,
        rungs: results,
        deltas,
    };
    write_file(&out.join("table.tsv"), format_ablation(&result).as_bytes())?;
    write_file(&out.join("deltas.tsv"), format_deltas(&result.deltas).as_bytes())?;
    write_json(&out.join("summary.json"), &result)?;
    Ok(result)
}

/// The four-rung objective ladder at the configured precision.
pub fn ablate(cfg: &ExperimentConfig, out: &Path, progress: impl FnMut(&str, &MetricsRecord)) -> Result<AblationResult> {
    let rungs = Objectives::ladder();
    match cfg.model.precision {
        Precision::Train32 => run_ladder::<f32>(cfg, &rungs, out, progress),
        Precision::Test64 => run_ladder::<f64>(cfg, &rungs, out, progress),
    }
}
