//! The `har` command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::info;

use crate::bilm::{save_with_sidecar, train_bilm, BiLmModel};
use crate::classifier::{EncoderKind, FrozenEncoders};
use crate::config::{RunConfig, RunManifest};
use crate::dataset::{Dataset, PipelineReport, DEFAULT_MAX_LEN};
use crate::error::{HarError, Result};
use crate::eval::{run_experiment, transfer_experiment, ExperimentConfig, ExperimentResult};
use crate::event_log::{annotate, clean, parse_log, relabel_events, render_log, segment, stats};
use crate::nn::Checkpoint;
use crate::synthgen::{generate, scenario, HomeSpec};
use crate::tokenizer::{tokenize_event, RelabelMap};
use crate::word2vec::{export_embeddings, train_skipgram, EmbeddingMatrix};

#[derive(Debug, Parser)]
#[command(name = "har", version = crate::config::VERSION, about = "Activity recognition from smart-home sensor logs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a log, drop duplicates and replayed days, restore order, write it back.
    Clean { input: PathBuf, output: PathBuf },
    /// Print dataset statistics as JSON.
    Stats {
        input: PathBuf,
        /// Built-in relabel map name or map file.
        #[arg(long)]
        relabel: Option<String>,
    },
    /// Write one JSON line per activity sequence.
    Segment {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        relabel: Option<String>,
    },
    /// Train the bidirectional language model on every configured dataset.
    TrainBilm { config: PathBuf },
    /// Train skip-gram embeddings on every configured dataset.
    TrainW2v { config: PathBuf },
    /// K-fold classification for the configured encoder or grid.
    Experiment { config: PathBuf },
    /// Classify the configured datasets through a frozen bi-LM checkpoint.
    Transfer { source: PathBuf, config: PathBuf },
    /// Generate a synthetic home log and its ground truth.
    Synth {
        /// Built-in scenario name or a JSON home description.
        scenario: String,
        output: PathBuf,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export token embeddings of a word2vec or bi-LM checkpoint as CSV.
    ExportEmb { checkpoint: PathBuf, output: PathBuf },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Clean { input, output } => cmd_clean(&input, &output),
        Command::Stats { input, relabel } => cmd_stats(&input, relabel.as_deref()),
        Command::Segment { input, output, relabel } => cmd_segment(&input, &output, relabel.as_deref()),
        Command::TrainBilm { config } => cmd_train_bilm(&RunConfig::load(&config)?),
        Command::TrainW2v { config } => cmd_train_w2v(&RunConfig::load(&config)?),
        Command::Experiment { config } => cmd_experiment(&RunConfig::load(&config)?),
        Command::Transfer { source, config } => cmd_transfer(&source, &RunConfig::load(&config)?),
        Command::Synth { scenario, output, days, seed } => cmd_synth(&scenario, &output, days, seed),
        Command::ExportEmb { checkpoint, output } => cmd_export(&checkpoint, &output),
    }
}

fn relabel_arg(name: Option<&str>) -> Result<Option<RelabelMap>> {
    let mut c = RunConfig::with_seed(0);
    c.relabel = name.map(String::from);
    c.relabel_map()
}

pub fn cmd_clean(input: &Path, output: &Path) -> Result<()> {
    let events = parse_log(&std::fs::read_to_string(input)?)?;
    let (cleaned, report) = clean(&events);
    std::fs::write(output, render_log(&cleaned))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn cmd_stats(input: &Path, relabel: Option<&str>) -> Result<()> {
    let (_, report) = Dataset::from_log_file(input, relabel_arg(relabel)?.as_ref(), DEFAULT_MAX_LEN)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn cmd_segment(input: &Path, output: &Path, relabel: Option<&str>) -> Result<()> {
    let map = relabel_arg(relabel)?;
    let (cleaned, _) = clean(&parse_log(&std::fs::read_to_string(input)?)?);
    let (mut labeled, _) = annotate(&cleaned);
    if let Some(m) = &map {
        relabel_events(&mut labeled, |raw| m.relabel(raw));
    }
    let sequences = segment(&labeled);
    let mut out = String::new();
    for s in &sequences {
        let tokens: Vec<String> = s
            .events
            .iter()
            .map(|e| tokenize_event(&e.event.sensor_id, &e.event.value).map(|t| t.as_str().to_string()))
            .collect::<Result<_>>()?;
        let line = serde_json::json!({ "label": s.label, "start": s.start, "end": s.end, "tokens": tokens });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    std::fs::write(output, out)?;
    println!("{}", serde_json::to_string_pretty(&stats(&sequences, &cleaned))?);
    Ok(())
}

fn load_datasets(cfg: &RunConfig) -> Result<Vec<(Dataset, PipelineReport)>> {
    let map = cfg.relabel_map()?;
    cfg.require_datasets()?
        .iter()
        .map(|p| Dataset::from_log_file(p, map.as_ref(), cfg.max_len))
        .collect()
}

pub fn cmd_train_bilm(cfg: &RunConfig) -> Result<()> {
    let datasets = load_datasets(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut manifest = RunManifest::for_run("train-bilm", cfg)?;
    let mut metrics = serde_json::Map::new();
    for (d, _) in &datasets {
        info!("training bi-LM on {} ({} sequences)", d.name, d.len());
        let (model, log) = train_bilm(&d.corpus(), &d.vocab, &cfg.bilm)?;
        let path = cfg.output_dir.join(format!("{}.bilm.ckpt", d.name));
        save_with_sidecar(&model, &log, &path)?;
        for p in [path.clone(), sidecar(&path, "json"), sidecar(&path, "curve.csv")] {
            manifest.record(&p)?;
        }
        metrics.insert(
            d.name.clone(),
            serde_json::json!({ "best_epoch": log.best_epoch, "best_validation_perplexity": log.best_validation_perplexity() }),
        );
    }
    manifest.metrics = metrics.into();
    manifest.write(&cfg.output_dir.join("train-bilm.manifest.json"))
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn cmd_train_w2v(cfg: &RunConfig) -> Result<()> {
    let datasets = load_datasets(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut manifest = RunManifest::for_run("train-w2v", cfg)?;
    for (d, _) in &datasets {
        info!("training skip-gram on {} ({} sequences)", d.name, d.len());
        let emb = train_skipgram(&d.corpus(), &d.vocab, &cfg.word2vec)?;
        let path = cfg.output_dir.join(format!("{}.w2v.ckpt", d.name));
        emb.to_checkpoint()?.save(&path)?;
        let csv = cfg.output_dir.join(format!("{}.w2v.csv", d.name));
        export_embeddings(&emb, &csv)?;
        manifest.record(&path)?;
        manifest.record(&csv)?;
    }
    manifest.write(&cfg.output_dir.join("train-w2v.manifest.json"))
}

/// Trains each pretrained encoder the grid needs once, then runs every grid point.
pub fn experiment_grid(dataset: &Dataset, cfg: &RunConfig) -> Result<Vec<ExperimentResult>> {
    let points = match &cfg.grid {
        Some(g) => g.points(),
        None => vec![(cfg.classifier.encoder, cfg.classifier.directionality, cfg.classifier.layers)],
    };
    let base = cfg.experiment();
    let mut frozen = FrozenEncoders::default();
    if points.iter().any(|p| p.0 == EncoderKind::Word2VecFrozen) {
        info!("{}: training skip-gram", dataset.name);
        frozen.word2vec = Some(Arc::new(train_skipgram(&dataset.corpus(), &dataset.vocab, &base.word2vec)?));
    }
    if points.iter().any(|p| matches!(p.0, EncoderKind::ElmoFrozen(_))) {
        info!("{}: training bi-LM", dataset.name);
        frozen.bilm = Some(Arc::new(train_bilm(&dataset.corpus(), &dataset.vocab, &base.bilm)?.0));
    }
    points
        .into_iter()
        .map(|(encoder, directionality, layers)| {
            let mut c: ExperimentConfig = base.clone();
            c.classifier.encoder = encoder;
            c.classifier.directionality = directionality;
            c.classifier.layers = layers;
            info!("{}: {encoder} {directionality} x{layers}", dataset.name);
            run_experiment(dataset, &c, Some(&frozen))
        })
        .collect()
}

fn write_results(results: &[ExperimentResult], cfg: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    let mut metrics = serde_json::Map::new();
    for r in results {
        let stem = format!("{}_{}", r.dataset, r.label());
        r.write(&cfg.output_dir, &stem)?;
        for ext in ["json", "csv", "confusion.csv"] {
            manifest.record(&cfg.output_dir.join(format!("{stem}.{ext}")))?;
        }
        for f in &r.folds {
            manifest.record(&cfg.output_dir.join(format!("{stem}.fold{}.confusion.csv", f.fold)))?;
        }
        metrics.insert(stem, serde_json::to_value(&r.average)?);
    }
    manifest.metrics = metrics.into();
    Ok(())
}

pub fn cmd_experiment(cfg: &RunConfig) -> Result<()> {
    let datasets = load_datasets(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut manifest = RunManifest::for_run("experiment", cfg)?;
    let mut results = Vec::new();
    for (d, _) in &datasets {
        results.extend(experiment_grid(d, cfg)?);
    }
    for r in &results {
        println!("{} {}: accuracy {:.4}, balanced accuracy {:.4}", r.dataset, r.label(), r.average.accuracy, r.average.balanced_accuracy);
    }
    write_results(&results, cfg, &mut manifest)?;
    manifest.write(&cfg.output_dir.join("experiment.manifest.json"))
}

pub fn cmd_transfer(source: &Path, cfg: &RunConfig) -> Result<()> {
    let model = Arc::new(BiLmModel::load(source)?);
    if !model.is_frozen() {
        return Err(HarError::Config(format!("{} is not a frozen bi-LM", source.display())));
    }
    let datasets = load_datasets(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut ecfg = cfg.experiment();
    if !matches!(ecfg.classifier.encoder, EncoderKind::ElmoFrozen(_)) {
        ecfg.classifier.encoder = EncoderKind::ElmoFrozen(Default::default());
    }
    let mut manifest = RunManifest::for_run("transfer", cfg)?;
    manifest.record(source)?;
    let mut results = Vec::new();
    for (d, _) in &datasets {
        let mut r = transfer_experiment(Arc::clone(&model), d, &ecfg)?;
        r.dataset = format!("{}_transfer", d.name);
        println!("{} {}: accuracy {:.4}", r.dataset, r.label(), r.average.accuracy);
        results.push(r);
    }
    write_results(&results, cfg, &mut manifest)?;
    manifest.write(&cfg.output_dir.join("transfer.manifest.json"))
}

pub fn cmd_synth(name: &str, output: &Path, days: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut spec = match scenario(name) {
        Some(s) => s,
        None if Path::new(name).is_file() => serde_json::from_str::<HomeSpec>(&std::fs::read_to_string(name)?)?,
        None => return Err(HarError::invalid(format!("unknown scenario {name:?}"))),
    };
    if let Some(d) = days {
        spec.days = d;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let g = generate(&spec)?;
    g.write(output)?;
    println!("{}: {} events, {} sequences", g.name, g.events.len(), g.truth.len());
    Ok(())
}

pub fn cmd_export(checkpoint: &Path, output: &Path) -> Result<()> {
    let c = Checkpoint::load(checkpoint)?;
    let emb = match c.manifest.kind.as_str() {
        "word2vec" => EmbeddingMatrix::from_checkpoint(&c)?,
        "bilm" => {
            let m = BiLmModel::from_checkpoint(&c)?;
            EmbeddingMatrix::new(m.vocab.clone(), m.embedding.table.value.clone())?
        }
        other => return Err(HarError::Checkpoint(format!("no token embeddings in a {other} checkpoint"))),
    };
    export_embeddings(&emb, output)?;
    println!("{} rows of width {}", emb.vocab.token_count(), emb.dim());
    Ok(())
}
