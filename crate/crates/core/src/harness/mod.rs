//! Data assembly, training, evaluation and ablation runs.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Toggles;
use crate::corpus::{build_vocabulary, load_dataset, synth_corpus, Sample, Split, Vocabulary};
use crate::ds_graph::{build_adjacency, load_ds_graph, DsGraph};
use crate::error::{OridError, Result};
use crate::metrics::{score_reports, MetricTable};
use crate::model::OridModel;
use crate::organ::OrganId;

pub use config::{deterministic_mode, RunConfig, DETERMINISTIC_ENV};
pub use train::{train_model, TrainLog, TrainOptions};

/// Samples, knowledge graph and vocabulary for one run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub samples: Vec<Sample>,
    pub graph: DsGraph,
    pub vocab: Vocabulary,
}

impl RunData {
    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.samples.iter().filter(|s| s.split == split).cloned().collect()
    }
}

pub fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    match &cfg.data.manifest {
        Some(path) => load_dataset(path),
        None => {
            let s = &cfg.data.synthetic;
            Ok(synth_corpus(s.seed, s.samples, &s.grammar)?.0)
        }
    }
}

/// Vocabulary over training reports and all organ descriptions of the training split.
pub fn build_run_vocab(samples: &[Sample], min_count: usize) -> Result<Vocabulary> {
    let mut texts: Vec<&str> = Vec::new();
    for s in samples.iter().filter(|s| s.split == Split::Train) {
        texts.push(&s.report);
        texts.extend(s.descriptions.values().map(String::as_str));
    }
    if texts.is_empty() {
        return Err(OridError::EmptyCorpus);
    }
    build_vocabulary(&texts, min_count.max(1))
}

pub fn load_run_data(cfg: &RunConfig) -> Result<RunData> {
    let samples = load_samples(cfg)?;
    let graph = match &cfg.data.ds_graph {
        Some(p) => load_ds_graph(p)?,
        None => DsGraph::default(),
    };
    let vocab = build_run_vocab(&samples, cfg.data.vocab_min_count)?;
    Ok(RunData { samples, graph, vocab })
}

pub fn new_model(cfg: &RunConfig, data: &RunData) -> Result<OridModel> {
    OridModel::new(cfg.model.clone(), data.vocab.clone(), build_adjacency(&data.graph), cfg.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub id: String,
    pub generated: String,
    pub target: String,
    pub alpha: Option<[f64; OrganId::COUNT]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTranscript {
    pub split: String,
    pub beam_width: usize,
    pub rows: Vec<TranscriptRow>,
    pub metrics: MetricTable,
}

/// Decodes every sample and scores against the model-side target text.
pub fn evaluate(model: &OridModel, samples: &[Sample], beam_width: usize, split: &str) -> Result<EvalTranscript> {
    if samples.is_empty() {
        return Err(OridError::InvalidArgument(format!("split '{split}' has no samples")));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let input = model.prepare(s)?;
        let gen = model.generate(&input, beam_width)?;
        rows.push(TranscriptRow {
            id: s.id.clone(),
            generated: model.detokenize(&gen.hypothesis.tokens),
            target: model.detokenize(&input.target),
            alpha: gen.alpha,
        });
    }
    let gen: Vec<&str> = rows.iter().map(|r| r.generated.as_str()).collect();
    let tgt: Vec<&str> = rows.iter().map(|r| r.target.as_str()).collect();
    let metrics = score_reports(&gen, &tgt)?;
    Ok(EvalTranscript { split: split.to_string(), beam_width, rows, metrics })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn train_options(cfg: &RunConfig) -> TrainOptions {
    TrainOptions { seed: cfg.seed, augment: cfg.augmentation_active(), beam_width: cfg.eval.beam_width }
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Trains from config, writing the checkpoint, log and resolved config into `output_dir`.
pub fn run_train(cfg: &RunConfig) -> Result<(OridModel, TrainLog, PathBuf)> {
    cfg.validate()?;
    let data = load_run_data(cfg)?;
    let mut model = new_model(cfg, &data)?;
    let log = train_model(&mut model, &data.split(Split::Train), &data.split(Split::Val), &cfg.train, &train_options(cfg))?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&model, &ckpt)?;
    write_json(&cfg.output_dir.join("train_log.json"), &log)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml()?)?;
    Ok((model, log, ckpt))
}

/// Evaluates a checkpoint on the configured split of the configured dataset.
pub fn run_eval(cfg: &RunConfig, checkpoint_path: &Path) -> Result<EvalTranscript> {
    let model = checkpoint::load(checkpoint_path)?;
    let data = load_run_data(cfg)?;
    if data.vocab != model.vocab {
        return Err(OridError::VocabularyMismatch(format!(
            "checkpoint has {} tokens, dataset yields {}",
            model.vocab.len(),
            data.vocab.len()
        )));
    }
    let split: Split = cfg.eval.split.parse()?;
    let t = evaluate(&model, &data.split(split), cfg.eval.beam_width, &cfg.eval.split)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(format!("transcript_{}.json", cfg.eval.split)), &t)?;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: usize,
    pub toggles: Toggles,
    pub log: TrainLog,
    pub transcript: EvalTranscript,
}

/// Trains and evaluates the five module combinations from the same seed and data.
pub fn ablate(cfg: &RunConfig, data: &RunData, split: Split) -> Result<Vec<AblationRow>> {
    let train = data.split(Split::Train);
    let val = data.split(Split::Val);
    let eval_set = data.split(split);
    (1..=5)
        .map(|row| {
            let mut c = cfg.clone();
            c.model.toggles = Toggles::row(row)?;
            c.validate()?;
            let mut model = new_model(&c, data)?;
            let log = train_model(&mut model, &train, &val, &c.train, &train_options(&c))?;
            let transcript = evaluate(&model, &eval_set, c.eval.beam_width, &format!("{split:?}").to_lowercase())?;
            log::info!("row {row}: BLEU@4 {:.4}", transcript.metrics.bleu4);
            Ok(AblationRow { row, toggles: c.model.toggles, log, transcript })
        })
        .collect()
}

pub fn run_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let data = load_run_data(cfg)?;
    let split: Split = cfg.eval.split.parse()?;
    let rows = ablate(cfg, &data, split)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("ablation.json"), &rows)?;
    Ok(rows)
}
