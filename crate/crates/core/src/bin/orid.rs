use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use orid_core::corpus::{synth_corpus, write_dataset, DatasetManifest};
use orid_core::ds_graph::{load_ds_graph, DsGraph};
use orid_core::harness::{self, deterministic_mode, EvalTranscript, RunConfig, DETERMINISTIC_ENV};
use orid_core::instruct::{build_qa_pairs, write_jsonl, ReportEntry};
use orid_core::metrics::score_reports;

#[derive(Parser)]
#[command(name = "orid", version, about = "Organ-regional radiology report generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each named flag is shorthand for a `--set` override.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Model preset: toy, desk or full.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Dataset manifest (JSONL); synthetic data is generated when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    ds_graph: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    split: Option<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let quote = |s: &str| format!("{s:?}");
        let path = |p: &Path| quote(&p.display().to_string());
        let mut sets = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                sets.push(format!("{k}={v}"));
            }
        };
        push("preset", self.preset.as_deref().map(quote));
        push("seed", self.seed.map(|v| v.to_string()));
        push("output_dir", self.output_dir.as_deref().map(path));
        push("data.manifest", self.manifest.as_deref().map(path));
        push("data.ds_graph", self.ds_graph.as_deref().map(path));
        push("train.epochs", self.epochs.map(|v| v.to_string()));
        push("train.batch_size", self.batch_size.map(|v| v.to_string()));
        push("eval.beam_width", self.beam_width.map(|v| v.to_string()));
        push("eval.split", self.split.as_deref().map(quote));
        // Explicit --set entries win over the named shorthands.
        sets.extend(self.set.iter().cloned());
        Ok(RunConfig::load(self.config.as_deref(), &sets)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, log and resolved config.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Decode a split with a checkpoint and score it.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate the five module combinations.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Build the organ-level instruction QA dataset from reports.
    BuildInstruct {
        #[command(flatten)]
        common: Common,
        /// Output JSONL; defaults to `<output_dir>/instruct.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against references.
    Score {
        /// An eval transcript (JSON).
        #[arg(long, conflicts_with_all = ["predictions", "references"])]
        transcript: Option<PathBuf>,
        /// One generated report per line.
        #[arg(long, requires = "references")]
        predictions: Option<PathBuf>,
        /// One reference report per line.
        #[arg(long, requires = "predictions")]
        references: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic dataset (manifest, images, masks).
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if deterministic_mode() {
        log::info!("{DETERMINISTIC_ENV} set: augmentation disabled");
    }
    match cli.command {
        Command::Train { common } => {
            let cfg = common.load()?;
            let (_, log, ckpt) = harness::run_train(&cfg)?;
            if let Some(last) = log.epochs.last() {
                println!("epochs {} train loss {:.6} (ce {:.6})", log.epochs.len(), last.train.total, last.train.ce);
            }
            if let Some(best) = log.best_epoch {
                println!("best validation epoch {best}");
            }
            println!("checkpoint {}", ckpt.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            let t = harness::run_eval(&cfg, &checkpoint)?;
            println!("{} samples ({} split, beam {})", t.rows.len(), t.split, t.beam_width);
            println!("{}", t.metrics);
        }
        Command::Ablate { common } => {
            let cfg = common.load()?;
            let rows = harness::run_ablate(&cfg)?;
            println!("row  mask  fine  coarse  oica   BLEU@4  METEOR  ROUGE-L");
            for r in rows {
                let t = r.toggles;
                let m = r.transcript.metrics;
                let mark = |b: bool| if b { "x" } else { "-" };
                println!(
                    "{:>3}  {:>4}  {:>4}  {:>6}  {:>4}  {:>7.4}  {:>6.4}  {:>7.4}",
                    r.row,
                    mark(t.use_mask),
                    mark(t.use_ocf_fine),
                    mark(t.use_ocf_coarse),
                    mark(t.use_oica),
                    m.bleu4,
                    m.meteor,
                    m.rouge_l
                );
            }
        }
        Command::BuildInstruct { common, out } => {
            let cfg = common.load()?;
            let entries: Vec<ReportEntry> = match &cfg.data.manifest {
                Some(p) => DatasetManifest::read(p)?
                    .records
                    .into_iter()
                    .map(|r| ReportEntry { id: r.id, report: r.report })
                    .collect(),
                None => {
                    let s = &cfg.data.synthetic;
                    synth_corpus(s.seed, s.samples, &s.grammar)?.0.iter().map(ReportEntry::from).collect()
                }
            };
            let graph = match &cfg.data.ds_graph {
                Some(p) => load_ds_graph(p)?,
                None => DsGraph::default(),
            };
            let (pairs, stats) = build_qa_pairs(&entries, &graph, &cfg.instruct, cfg.seed)?;
            if pairs.is_empty() {
                bail!("no QA pairs produced");
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.join("instruct.jsonl"));
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_jsonl(&out, &pairs)?;
            let stats_path = out.with_extension("stats.json");
            std::fs::write(&stats_path, serde_json::to_string_pretty(&stats)?)?;
            for w in &stats.warnings {
                log::warn!("{w}");
            }
            let counts: Vec<String> = stats.per_organ.iter().map(|(o, c)| format!("{o} {c}")).collect();
            println!("{} pairs ({}); positive ratio {:.3}", stats.total, counts.join(", "), stats.positive_ratio);
            println!("wrote {} and {}", out.display(), stats_path.display());
        }
        Command::Score { transcript, predictions, references, json } => {
            let (pred, refs) = match (transcript, predictions, references) {
                (Some(t), _, _) => {
                    let text = std::fs::read_to_string(&t).with_context(|| t.display().to_string())?;
                    let t: EvalTranscript = serde_json::from_str(&text)?;
                    t.rows.into_iter().map(|r| (r.generated, r.target)).unzip()
                }
                (None, Some(p), Some(r)) => (read_lines(&p)?, read_lines(&r)?),
                _ => bail!("pass --transcript or both --predictions and --references"),
            };
            let table = score_reports(&pred, &refs)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&table)?);
            } else {
                println!("{table}");
            }
        }
        Command::SynthData { mut common, out, samples } => {
            if let Some(n) = samples {
                common.set.insert(0, format!("data.synthetic.samples={n}"));
            }
            let cfg = common.load()?;
            let s = &cfg.data.synthetic;
            let (data, _) = synth_corpus(s.seed, s.samples, &s.grammar)?;
            let manifest = write_dataset(&out, &data)?;
            println!("{} samples, manifest {}", data.len(), manifest.display());
        }
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(text.lines().map(str::to_string).collect())
}
