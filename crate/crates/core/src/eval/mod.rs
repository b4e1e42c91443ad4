//! K-fold evaluation, metrics and the transfer experiment.

pub mod folds;
pub mod metrics;

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bilm::{train_bilm, BiLmConfig, BiLmModel, BiLmTrainingLog};
use crate::classifier::{
    fit, ClassifierConfig, ClassifierModel, ClassifierTrainingLog, Directionality, EncoderKind, FrozenEncoders,
    PreparedSequence,
};
use crate::dataset::Dataset;
use crate::error::{HarError, Result};
use crate::tokenizer::{EncodedSequence, Vocabulary};
use crate::word2vec::{train_skipgram, SkipGramConfig};

pub use folds::{stratified_holdout, stratified_kfold, stratified_kfold_pairs, FoldSplit};
pub use metrics::{compute_metrics, confusion_csv, ClassScores, EvalReport, MetricSummary};

/// Environment variable capping the number of folds trained at once.
pub const WORKERS_ENV: &str = "HAR_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub classifier: ClassifierConfig,
    pub bilm: BiLmConfig,
    pub word2vec: SkipGramConfig,
    pub folds: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Concurrent folds; falls back to `HAR_WORKERS`, then to the number of CPUs.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            classifier: ClassifierConfig::default(),
            bilm: BiLmConfig::default(),
            word2vec: SkipGramConfig::default(),
            folds: 3,
            validation_fraction: 0.2,
            seed: 0,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn worker_count(&self) -> usize {
        self.workers
            .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub report: EvalReport,
    pub log: ClassifierTrainingLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset: String,
    pub encoder: EncoderKind,
    pub directionality: Directionality,
    pub layers: usize,
    pub classes: Vec<String>,
    pub folds: Vec<FoldResult>,
    /// Fold mean of every metric.
    pub average: MetricSummary,
    /// Sum of the fold confusion matrices.
    pub confusion: Vec<Vec<usize>>,
}

impl ExperimentResult {
    /// Short identifier such as `elmo_frozen-concat_bi_1`.
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.encoder.to_string().replace(':', "-"), self.directionality, self.layers)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        v["paper_view"] = serde_json::to_value(self.average.paper_view())?;
        Ok(serde_json::to_string_pretty(&v)?)
    }

    /// One row per fold plus a `mean` row.
    pub fn metrics_csv(&self) -> String {
        let mut s = format!("fold,{}\n", MetricSummary::FIELDS.join(","));
        let row = |name: String, m: &MetricSummary| {
            let vals: Vec<String> = m.values().iter().map(|v| v.to_string()).collect();
            format!("{name},{}\n", vals.join(","))
        };
        for f in &self.folds {
            s.push_str(&row(f.fold.to_string(), &f.report.metrics));
        }
        s.push_str(&row("mean".into(), &self.average));
        s
    }

    /// Writes `<stem>.json`, `<stem>.csv`, `<stem>.confusion.csv` and one confusion CSV per fold.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.metrics_csv())?;
        std::fs::write(dir.join(format!("{stem}.confusion.csv")), confusion_csv(&self.confusion, &self.classes))?;
        for f in &self.folds {
            std::fs::write(
                dir.join(format!("{stem}.fold{}.confusion.csv", f.fold)),
                confusion_csv(&f.report.confusion, &self.classes),
            )?;
        }
        Ok(())
    }
}

/// Trained unsupervised encoders plus the bi-LM learning curve, when one was trained.
#[derive(Debug, Clone, Default)]
pub struct TrainedEncoders {
    pub frozen: FrozenEncoders,
    pub bilm_log: Option<BiLmTrainingLog>,
}

/// Trains whatever pretrained encoder `cfg.classifier.encoder` needs on the whole corpus.
pub fn train_encoders(corpus: &[Vec<u32>], vocab: &Vocabulary, cfg: &ExperimentConfig) -> Result<TrainedEncoders> {
    let mut out = TrainedEncoders::default();
    match cfg.classifier.encoder {
        EncoderKind::Word2VecFrozen => {
            out.frozen.word2vec = Some(Arc::new(train_skipgram(corpus, vocab, &cfg.word2vec)?));
        }
        EncoderKind::ElmoFrozen(_) => {
            let (model, log) = train_bilm(corpus, vocab, &cfg.bilm)?;
            out.frozen.bilm = Some(Arc::new(model));
            out.bilm_log = Some(log);
        }
        _ => {}
    }
    Ok(out)
}

/// Stratified K-fold run on a dataset. Pretrained encoders are taken from `frozen` when
/// given, otherwise trained on the dataset first.
pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig, frozen: Option<&FrozenEncoders>) -> Result<ExperimentResult> {
    let trained;
    let frozen = match frozen {
        Some(f) => f,
        None => {
            trained = train_encoders(&dataset.corpus(), &dataset.vocab, cfg)?;
            &trained.frozen
        }
    };
    run_folds(&dataset.name, &dataset.sequences, &dataset.classes, dataset.vocab.size(), cfg, frozen)
}

/// Classifies `target` through a frozen bi-LM trained elsewhere. The target keeps its own
/// frequency-ranked vocabulary; indexes are read in the source's index space.
pub fn transfer_experiment(source: Arc<BiLmModel>, target: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if !source.is_frozen() {
        return Err(HarError::invalid("transfer needs a frozen source bi-LM"));
    }
    if !matches!(cfg.classifier.encoder, EncoderKind::ElmoFrozen(_)) {
        return Err(HarError::invalid("transfer runs the ELMo encoder"));
    }
    let sequences = target.remap_to_source(source.vocab_size())?;
    let frozen = FrozenEncoders { word2vec: None, bilm: Some(source.clone()) };
    run_folds(&target.name, &sequences, &target.classes, source.vocab_size(), cfg, &frozen)
}

fn run_folds(
    name: &str,
    sequences: &[EncodedSequence],
    classes: &[String],
    vocab_size: usize,
    cfg: &ExperimentConfig,
    frozen: &FrozenEncoders,
) -> Result<ExperimentResult> {
    let mut ccfg = cfg.classifier.clone();
    ccfg.classes = classes.len();
    let labels: Vec<usize> = sequences.iter().map(|s| s.label_id).collect();
    let split = stratified_kfold(&labels, cfg.folds, cfg.seed)?;
    // Frozen features are computed once for the whole dataset.
    let prepared = ClassifierModel::new(&ccfg, vocab_size, frozen)?.prepare(sequences)?;

    let run = |fold: usize| -> Result<FoldResult> {
        let train_pool = split.train_ids(fold);
        let (train_ids, val_ids) =
            stratified_holdout(&train_pool, &labels, cfg.validation_fraction, cfg.seed.wrapping_add(1 + fold as u64))?;
        let pick = |ids: &[usize]| -> Vec<PreparedSequence> { ids.iter().map(|&i| prepared[i].clone()).collect() };
        let (train, val, test) = (pick(&train_ids), pick(&val_ids), pick(&split.folds[fold]));
        let mut fcfg = ccfg.clone();
        fcfg.seed = ccfg.seed.wrapping_add(fold as u64);
        let mut model = ClassifierModel::new(&fcfg, vocab_size, frozen)?;
        let log = fit(&mut model, &train, &val)?;
        let predictions = model.predict(&test)?;
        let truths: Vec<usize> = test.iter().map(|s| s.label).collect();
        log::info!("{name} fold {fold}: best epoch {} of {}", log.best_epoch, log.epochs.len());
        Ok(FoldResult {
            fold,
            train_size: train.len(),
            validation_size: val.len(),
            test_size: test.len(),
            report: compute_metrics(&predictions, &truths, classes.len())?,
            log,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| HarError::invalid(e.to_string()))?;
    let folds: Vec<FoldResult> = pool.install(|| (0..split.k()).into_par_iter().map(run).collect::<Result<_>>())?;

    let average = MetricSummary::mean(&folds.iter().map(|f| f.report.metrics).collect::<Vec<_>>());
    let mut confusion = vec![vec![0; classes.len()]; classes.len()];
    for f in &folds {
        for (acc, row) in confusion.iter_mut().zip(&f.report.confusion) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
    }
    Ok(ExperimentResult {
        dataset: name.to_string(),
        encoder: ccfg.encoder,
        directionality: ccfg.directionality,
        layers: ccfg.layers,
        classes: classes.to_vec(),
        folds,
        average,
        confusion,
    })
}
