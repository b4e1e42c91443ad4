//! ELMo-style bidirectional language model over sensor tokens.
//!
//! Each direction stacks two LSTM layers on a shared token embedding; the layer-2
//! representation adds the layer-1 output back in (residual). The forward track at
//! position `t` predicts token `t+1`, the backward track predicts token `t-1`.
//!
//! Contextual representations per position:
//!
//! * `R0` token embedding, duplicated to `2H` wide
//! * `R1` `[fwd layer 1 ; bwd layer 1]`
//! * `R2` `[fwd layer 2 + fwd layer 1 ; bwd layer 2 + bwd layer 1]`

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{chunk, TokenBatch};
use crate::error::{HarError, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::dense::{Dense, Embedding};
use crate::nn::gradcheck::Module;
use crate::nn::loss::softmax;
use crate::nn::lstm::{LstmCache, LstmLayer};
use crate::nn::param::{Adam, AdamConfig, Parameter};
use crate::nn::tensor::Tensor;
use crate::nn::EarlyStopping;
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiLmConfig {
    pub embedding_size: usize,
    pub hidden_size: usize,
    /// Truncated-BPTT chunk length.
    pub window: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for BiLmConfig {
    fn default() -> Self {
        BiLmConfig {
            embedding_size: 64,
            hidden_size: 64,
            window: 60,
            max_epochs: 400,
            batch_size: 512,
            patience: 20,
            learning_rate: 1e-3,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl BiLmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(HarError::invalid("bi-LM window must be at least 2"));
        }
        if self.embedding_size == 0 || self.hidden_size == 0 || self.batch_size == 0 {
            return Err(HarError::invalid("bi-LM sizes must be positive"));
        }
        if self.embedding_size != self.hidden_size {
            return Err(HarError::invalid(
                "embedding size must equal hidden size so the token layer can be stacked with the recurrent layers",
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(HarError::invalid("validation fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElmoOutputMode {
    WeightedSum,
    Sum,
    Last,
    Concat,
}

impl Default for ElmoOutputMode {
    fn default() -> Self {
        ElmoOutputMode::Concat
    }
}

impl ElmoOutputMode {
    pub const ALL: [ElmoOutputMode; 4] =
        [ElmoOutputMode::WeightedSum, ElmoOutputMode::Sum, ElmoOutputMode::Last, ElmoOutputMode::Concat];

    /// Output width for a model with per-direction hidden size `hidden`.
    pub fn width(&self, hidden: usize) -> usize {
        match self {
            ElmoOutputMode::Concat => 6 * hidden,
            _ => 2 * hidden,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ElmoOutputMode::WeightedSum => "weighted_sum",
            ElmoOutputMode::Sum => "sum",
            ElmoOutputMode::Last => "last",
            ElmoOutputMode::Concat => "concat",
        }
    }
}

impl FromStr for ElmoOutputMode {
    type Err = HarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted_sum" => Ok(ElmoOutputMode::WeightedSum),
            "sum" => Ok(ElmoOutputMode::Sum),
            "last" => Ok(ElmoOutputMode::Last),
            "concat" => Ok(ElmoOutputMode::Concat),
            other => Err(HarError::invalid(format!("unknown ELMo output mode {other:?}"))),
        }
    }
}

impl fmt::Display for ElmoOutputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Softmax-normalised layer weights and a global scale for [`ElmoOutputMode::WeightedSum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMix {
    pub weights: [f64; 3],
    pub gamma: f64,
}

impl Default for ScalarMix {
    fn default() -> Self {
        ScalarMix { weights: [0.0; 3], gamma: 1.0 }
    }
}

impl ScalarMix {
    pub fn normalized(&self) -> [f64; 3] {
        let s = softmax(&self.weights);
        [s[0], s[1], s[2]]
    }
}

#[derive(Debug, Clone)]
pub struct BiLmModel {
    pub vocab: Vocabulary,
    pub config: BiLmConfig,
    pub embedding: Embedding,
    pub fwd1: LstmLayer,
    pub fwd2: LstmLayer,
    pub bwd1: LstmLayer,
    pub bwd2: LstmLayer,
    pub proj_fwd: Dense,
    pub proj_bwd: Dense,
    pub scalar_mix: ScalarMix,
    frozen: bool,
}

/// Per-position layer activations of one sequence, each `T × width`, zero where masked.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRepresentations {
    pub steps: usize,
    pub hidden: usize,
    /// `T × H` token embeddings (not yet duplicated).
    pub r0: Vec<f64>,
    /// `T × 2H`
    pub r1: Vec<f64>,
    /// `T × 2H`
    pub r2: Vec<f64>,
    pub mask: Vec<bool>,
}

impl LayerRepresentations {
    /// `(R0 duplicated, R1, R2)` rows at step `t`, each `2H` wide.
    pub fn layers_at(&self, t: usize) -> [Vec<f64>; 3] {
        let h = self.hidden;
        let e = &self.r0[t * h..(t + 1) * h];
        let mut r0 = Vec::with_capacity(2 * h);
        r0.extend_from_slice(e);
        r0.extend_from_slice(e);
        [r0, self.r1[t * 2 * h..(t + 1) * 2 * h].to_vec(), self.r2[t * 2 * h..(t + 1) * 2 * h].to_vec()]
    }

    /// Combines the three layers at every position according to `mode`.
    pub fn combine(&self, mode: ElmoOutputMode, mix: &ScalarMix) -> Tensor {
        let h = self.hidden;
        let width = mode.width(h);
        let mut out = vec![0.0; self.steps * width];
        let s = mix.normalized();
        for t in 0..self.steps {
            if !self.mask[t] {
                continue;
            }
            let layers = self.layers_at(t);
            let row = &mut out[t * width..(t + 1) * width];
            match mode {
                ElmoOutputMode::Concat => {
                    for (k, l) in layers.iter().enumerate() {
                        row[k * 2 * h..(k + 1) * 2 * h].copy_from_slice(l);
                    }
                }
                ElmoOutputMode::Sum => {
                    for l in &layers {
                        row.iter_mut().zip(l).for_each(|(o, v)| *o += v);
                    }
                }
                ElmoOutputMode::Last => row.copy_from_slice(&layers[2]),
                ElmoOutputMode::WeightedSum => {
                    for (l, w) in layers.iter().zip(s) {
                        row.iter_mut().zip(l).for_each(|(o, v)| *o += mix.gamma * w * v);
                    }
                }
            }
        }
        Tensor::from_vec(&[self.steps, width], out).expect("combine shape")
    }
}

/// Summed negative log-likelihoods and prediction counts per direction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LmStats {
    pub nll_forward: f64,
    pub count_forward: usize,
    pub nll_backward: f64,
    pub count_backward: usize,
}

impl LmStats {
    pub fn count(&self) -> usize {
        self.count_forward + self.count_backward
    }

    /// Mean cross-entropy over all predicted tokens of both directions.
    pub fn loss(&self) -> f64 {
        if self.count() == 0 {
            0.0
        } else {
            (self.nll_forward + self.nll_backward) / self.count() as f64
        }
    }

    pub fn perplexity(&self) -> f64 {
        self.loss().exp()
    }

    fn add(&mut self, o: &LmStats) {
        self.nll_forward += o.nll_forward;
        self.count_forward += o.count_forward;
        self.nll_backward += o.nll_backward;
        self.count_backward += o.count_backward;
    }
}

struct BatchCache {
    x: Vec<f64>,
    f1: LstmCache,
    f2: LstmCache,
    b1: LstmCache,
    b2: LstmCache,
}

/// Rows of the batch that have a prediction target, with their targets.
fn prediction_rows(batch: &TokenBatch, forward: bool) -> (Vec<usize>, Vec<usize>) {
    let (t_max, b_max) = (batch.steps, batch.batch);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for t in 0..t_max {
        let next = if forward { t + 1 } else { t.wrapping_sub(1) };
        if next >= t_max {
            continue;
        }
        for b in 0..b_max {
            let (_, m) = batch.at(t, b);
            let (ix, mn) = batch.at(next, b);
            if m && mn {
                rows.push(t * b_max + b);
                targets.push(ix as usize);
            }
        }
    }
    (rows, targets)
}

impl BiLmModel {
    pub fn new(vocab: &Vocabulary, config: &BiLmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, e, h) = (vocab.size(), config.embedding_size, config.hidden_size);
        Ok(BiLmModel {
            vocab: vocab.clone(),
            config: config.clone(),
            embedding: Embedding::new("bilm.embedding", v, e, &mut rng),
            fwd1: LstmLayer::new("bilm.fwd1", e, h, &mut rng),
            fwd2: LstmLayer::new("bilm.fwd2", h, h, &mut rng),
            bwd1: LstmLayer::new("bilm.bwd1", e, h, &mut rng),
            bwd2: LstmLayer::new("bilm.bwd2", h, h, &mut rng),
            proj_fwd: Dense::new("bilm.proj_fwd", h, v, &mut rng),
            proj_bwd: Dense::new("bilm.proj_bwd", h, v, &mut rng),
            scalar_mix: ScalarMix::default(),
            frozen: false,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Mutable access for training. Fails once the model is frozen.
    pub fn trainable(&mut self) -> Result<TrainableBiLm<'_>> {
        if self.frozen {
            return Err(HarError::Frozen);
        }
        Ok(TrainableBiLm { model: self })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut p = vec![&self.embedding.table];
        for l in [&self.fwd1, &self.fwd2, &self.bwd1, &self.bwd2] {
            p.extend(l.parameters());
        }
        p.extend(self.proj_fwd.parameters());
        p.extend(self.proj_bwd.parameters());
        p
    }

    fn parameters_mut_unchecked(&mut self) -> Vec<&mut Parameter> {
        let mut p = vec![&mut self.embedding.table];
        for l in [&mut self.fwd1, &mut self.fwd2, &mut self.bwd1, &mut self.bwd2] {
            p.extend(l.parameters_mut());
        }
        p.extend(self.proj_fwd.parameters_mut());
        p.extend(self.proj_bwd.parameters_mut());
        p
    }

    fn check_indexes(&self, batch: &TokenBatch) -> Result<()> {
        let v = self.vocab_size() as u32;
        match batch.indexes.iter().zip(&batch.mask).find(|(i, m)| **m && **i >= v) {
            Some((i, _)) => Err(HarError::Vocabulary(format!(
                "index {i} outside the model vocabulary of {v}"
            ))),
            None => Ok(()),
        }
    }

    fn forward_batch(&self, batch: &TokenBatch) -> Result<BatchCache> {
        self.check_indexes(batch)?;
        let (t, b) = (batch.steps, batch.batch);
        let x = self.embedding.forward(&batch.indexes, &batch.mask)?;
        let f1 = self.fwd1.forward(&x, &batch.mask, t, b, false)?;
        let f2 = self.fwd2.forward(&f1.outputs, &batch.mask, t, b, false)?;
        let b1 = self.bwd1.forward(&x, &batch.mask, t, b, true)?;
        let b2 = self.bwd2.forward(&b1.outputs, &batch.mask, t, b, true)?;
        Ok(BatchCache { x, f1, f2, b1, b2 })
    }

    fn top(l1: &LstmCache, l2: &LstmCache) -> Vec<f64> {
        l1.outputs.iter().zip(&l2.outputs).map(|(a, b)| a + b).collect()
    }

    /// Per-direction NLL and, when `grads` is set, the gradient w.r.t. the top representation.
    fn direction_loss(
        proj: &Dense,
        top: &[f64],
        hidden: usize,
        rows: &[usize],
        targets: &[usize],
        scale: f64,
        want_grad: bool,
    ) -> Result<(f64, Option<(Vec<f64>, Vec<f64>)>)> {
        let n = rows.len();
        if n == 0 {
            return Ok((0.0, None));
        }
        let mut feats = Vec::with_capacity(n * hidden);
        for &r in rows {
            feats.extend_from_slice(&top[r * hidden..(r + 1) * hidden]);
        }
        let mut logits = proj.forward(&feats, n)?;
        let v = proj.output_size();
        let mut nll = 0.0;
        for (k, &target) in targets.iter().enumerate() {
            let row = &mut logits[k * v..(k + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|l| (l - max).exp()).sum();
            let log_z = max + sum.ln();
            nll += log_z - row[target];
            if want_grad {
                for l in row.iter_mut() {
                    *l = (*l - log_z).exp() * scale;
                }
                row[target] -= scale;
            }
        }
        Ok((nll, want_grad.then_some((feats, logits))))
    }

    fn batch_stats(&self, batch: &TokenBatch) -> Result<LmStats> {
        let cache = self.forward_batch(batch)?;
        let h = self.hidden_size();
        let (rf, tf) = prediction_rows(batch, true);
        let (rb, tb) = prediction_rows(batch, false);
        let (nf, _) = Self::direction_loss(&self.proj_fwd, &Self::top(&cache.f1, &cache.f2), h, &rf, &tf, 0.0, false)?;
        let (nb, _) = Self::direction_loss(&self.proj_bwd, &Self::top(&cache.b1, &cache.b2), h, &rb, &tb, 0.0, false)?;
        Ok(LmStats { nll_forward: nf, count_forward: rf.len(), nll_backward: nb, count_backward: rb.len() })
    }

    /// Loss statistics over a set of sequences, evaluated in mini-batches.
    pub fn corpus_stats(&self, corpus: &[Vec<u32>], batch_size: usize) -> Result<LmStats> {
        let mut total = LmStats::default();
        let seqs: Vec<&[u32]> = corpus.iter().map(|s| s.as_slice()).filter(|s| s.len() >= 2).collect();
        for group in seqs.chunks(batch_size.max(1)) {
            total.add(&self.batch_stats(&TokenBatch::from_sequences(group))?);
        }
        Ok(total)
    }

    /// Layer representations of one padded sequence.
    pub fn forward(&self, indexes: &[u32], mask: &[bool]) -> Result<LayerRepresentations> {
        if indexes.len() != mask.len() {
            return Err(HarError::shape("indexes and mask differ in length"));
        }
        Ok(self.forward_many(&[indexes], Some(mask))?.remove(0))
    }

    /// Layer representations for several unpadded sequences, batched internally.
    pub fn forward_sequences(&self, seqs: &[&[u32]]) -> Result<Vec<LayerRepresentations>> {
        let mut out = Vec::with_capacity(seqs.len());
        for group in seqs.chunks(64) {
            out.extend(self.forward_many(group, None)?);
        }
        Ok(out)
    }

    fn forward_many(&self, seqs: &[&[u32]], mask: Option<&[bool]>) -> Result<Vec<LayerRepresentations>> {
        let batch = match mask {
            Some(m) => TokenBatch::single(seqs[0], m),
            None => TokenBatch::from_sequences(seqs),
        };
        let cache = self.forward_batch(&batch)?;
        let h = self.hidden_size();
        let (steps, nb) = (batch.steps, batch.batch);
        let mut reps = Vec::with_capacity(nb);
        for (b, seq) in seqs.iter().enumerate() {
            // Unpadded sequences drop their left padding again.
            let start = if mask.is_some() { 0 } else { steps - seq.len() };
            let len = steps - start;
            let mut r = LayerRepresentations {
                steps: len,
                hidden: h,
                r0: vec![0.0; len * h],
                r1: vec![0.0; len * 2 * h],
                r2: vec![0.0; len * 2 * h],
                mask: vec![false; len],
            };
            for k in 0..len {
                let row = (start + k) * nb + b;
                r.mask[k] = batch.mask[row];
                r.r0[k * h..(k + 1) * h].copy_from_slice(&cache.x[row * h..(row + 1) * h]);
                let (f1, f2) = (&cache.f1.outputs[row * h..(row + 1) * h], &cache.f2.outputs[row * h..(row + 1) * h]);
                let (b1, b2) = (&cache.b1.outputs[row * h..(row + 1) * h], &cache.b2.outputs[row * h..(row + 1) * h]);
                let r1 = &mut r.r1[k * 2 * h..(k + 1) * 2 * h];
                r1[..h].copy_from_slice(f1);
                r1[h..].copy_from_slice(b1);
                let r2 = &mut r.r2[k * 2 * h..(k + 1) * 2 * h];
                for j in 0..h {
                    r2[j] = f1[j] + f2[j];
                    r2[h + j] = b1[j] + b2[j];
                }
            }
            reps.push(r);
        }
        Ok(reps)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "config": self.config,
            "frozen": self.frozen,
            "scalar_mix": self.scalar_mix,
            "vocabulary_hash": self.vocab.fingerprint(),
            "vocabulary": serde_json::from_str::<serde_json::Value>(&self.vocab.to_json()?)?,
        });
        let mut c = Checkpoint::new("bilm", meta);
        c.push_params(self.parameters());
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.manifest.kind != "bilm" {
            return Err(HarError::Checkpoint(format!("expected bilm, found {}", c.manifest.kind)));
        }
        let meta = &c.manifest.meta;
        let config: BiLmConfig = serde_json::from_value(meta["config"].clone())?;
        let vocab = Vocabulary::from_json(&meta["vocabulary"].to_string())?;
        let mut model = BiLmModel::new(&vocab, &config)?;
        c.restore_params(model.parameters_mut_unchecked())?;
        model.scalar_mix = serde_json::from_value(meta["scalar_mix"].clone())?;
        model.frozen = meta["frozen"].as_bool().unwrap_or(true);
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// A [`BiLmModel`] borrowed for training; only obtainable while the model is not frozen.
pub struct TrainableBiLm<'a> {
    model: &'a mut BiLmModel,
}

impl TrainableBiLm<'_> {
    /// Forward and backward over one batch; gradients accumulate into the parameters.
    pub fn loss_and_grad(&mut self, batch: &TokenBatch) -> Result<LmStats> {
        let m = &mut *self.model;
        let cache = m.forward_batch(batch)?;
        let h = m.hidden_size();
        let (t, b) = (batch.steps, batch.batch);
        let (rf, tf) = prediction_rows(batch, true);
        let (rb, tb) = prediction_rows(batch, false);
        let total = (rf.len() + rb.len()) as f64;
        if total == 0.0 {
            return Ok(LmStats::default());
        }
        let scale = 1.0 / total;

        let top_f = BiLmModel::top(&cache.f1, &cache.f2);
        let top_b = BiLmModel::top(&cache.b1, &cache.b2);
        let (nf, gf) = BiLmModel::direction_loss(&m.proj_fwd, &top_f, h, &rf, &tf, scale, true)?;
        let (nb, gb) = BiLmModel::direction_loss(&m.proj_bwd, &top_b, h, &rb, &tb, scale, true)?;

        let mut d_x = vec![0.0; t * b * m.config.embedding_size];
        for (rows, grad, proj, l1, l2, c1, c2) in [
            (&rf, gf, &mut m.proj_fwd, &mut m.fwd1, &mut m.fwd2, &cache.f1, &cache.f2),
            (&rb, gb, &mut m.proj_bwd, &mut m.bwd1, &mut m.bwd2, &cache.b1, &cache.b2),
        ] {
            let Some((feats, d_logits)) = grad else { continue };
            let d_feats = proj.backward(&feats, &d_logits, rows.len());
            let mut d_top = vec![0.0; t * b * h];
            for (k, &r) in rows.iter().enumerate() {
                d_top[r * h..(r + 1) * h].copy_from_slice(&d_feats[k * h..(k + 1) * h]);
            }
            let d_h1_from2 = l2.backward(&c1.outputs, c2, Some(&d_top), None);
            let d_h1: Vec<f64> = d_top.iter().zip(&d_h1_from2).map(|(a, b)| a + b).collect();
            let dx = l1.backward(&cache.x, c1, Some(&d_h1), None);
            d_x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
        m.embedding.backward(&batch.indexes, &batch.mask, &d_x);
        Ok(LmStats { nll_forward: nf, count_forward: rf.len(), nll_backward: nb, count_backward: rb.len() })
    }

    /// Loss statistics of one batch without touching the gradients.
    pub fn stats(&self, batch: &TokenBatch) -> Result<LmStats> {
        self.model.batch_stats(batch)
    }

    pub fn step(&mut self, adam: &mut Adam) {
        adam.step(&mut self.model.parameters_mut_unchecked());
    }
}

impl Module for TrainableBiLm<'_> {
    fn parameters(&self) -> Vec<&Parameter> {
        self.model.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.model.parameters_mut_unchecked()
    }
}

/// Representations `{R0, R1, R2}` of one padded sequence.
pub fn bilm_forward(indexes: &[u32], mask: &[bool], model: &BiLmModel) -> Result<LayerRepresentations> {
    model.forward(indexes, mask)
}

/// Mean next/previous-token cross-entropy of one padded sequence. Sequences with fewer
/// than two real tokens contribute nothing.
pub fn bilm_loss(indexes: &[u32], mask: &[bool], model: &BiLmModel) -> Result<LmStats> {
    if indexes.len() != mask.len() {
        return Err(HarError::shape("indexes and mask differ in length"));
    }
    if mask.iter().filter(|m| **m).count() < 2 {
        return Ok(LmStats::default());
    }
    model.batch_stats(&TokenBatch::single(indexes, mask))
}

/// `exp(total NLL / predicted tokens)`, pooling both directions.
pub fn perplexity(corpus: &[Vec<u32>], model: &BiLmModel) -> Result<f64> {
    let stats = model.corpus_stats(corpus, 64)?;
    if stats.count() == 0 {
        return Err(HarError::invalid("corpus has no predictable positions"));
    }
    Ok(stats.perplexity())
}

pub fn elmo_embed(indexes: &[u32], mask: &[bool], model: &BiLmModel, mode: ElmoOutputMode) -> Result<Tensor> {
    Ok(model.forward(indexes, mask)?.combine(mode, &model.scalar_mix))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_perplexity: f64,
    pub validation_perplexity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiLmTrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl BiLmTrainingLog {
    pub fn best_validation_perplexity(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(f64::NAN, |e| e.validation_perplexity)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_perplexity,validation_perplexity\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_perplexity, e.validation_perplexity));
        }
        s
    }
}

/// Splits sequence ids into `(train, validation)` with a seeded shuffle.
pub(crate) fn holdout_split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut n_val = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    }
    let val = ids[..n_val].to_vec();
    let train = ids[n_val..].to_vec();
    (train, val)
}

fn chunked(corpus: &[Vec<u32>], ids: &[usize], window: usize) -> Vec<Vec<u32>> {
    ids.iter()
        .flat_map(|&i| chunk(&corpus[i], window))
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

/// Unsupervised training with early stopping on validation perplexity. The returned
/// model carries the best-validation weights and is frozen.
pub fn train_bilm(corpus: &[Vec<u32>], vocab: &Vocabulary, cfg: &BiLmConfig) -> Result<(BiLmModel, BiLmTrainingLog)> {
    cfg.validate()?;
    if corpus.iter().all(|s| s.len() < 2) {
        return Err(HarError::invalid("bi-LM corpus has no sequence with two or more tokens"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_b11a);
    let (train_ids, val_ids) = holdout_split(corpus.len(), cfg.validation_fraction, &mut rng);
    let mut train = chunked(corpus, &train_ids, cfg.window);
    let mut val = chunked(corpus, &val_ids, cfg.window);
    if val.is_empty() {
        val = train.clone();
    }
    if train.is_empty() {
        train = val.clone();
    }

    let mut model = BiLmModel::new(vocab, cfg)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.learning_rate, ..Default::default() });
    let mut log = BiLmTrainingLog::default();
    let mut stopper = EarlyStopping::new(cfg.patience);

    let eval_batch = 256;
    let initial = EpochRecord {
        epoch: 0,
        train_perplexity: model.corpus_stats(&train, eval_batch)?.perplexity(),
        validation_perplexity: model.corpus_stats(&val, eval_batch)?.perplexity(),
    };
    stopper.observe(0, initial.validation_perplexity);
    log.epochs.push(initial);
    let mut best: Vec<Tensor> = model.parameters().iter().map(|p| p.value.clone()).collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut stats = LmStats::default();
        for group in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[u32]> = group.iter().map(|&i| train[i].as_slice()).collect();
            let batch = TokenBatch::from_sequences(&seqs);
            let mut t = model.trainable()?;
            stats.add(&t.loss_and_grad(&batch)?);
            t.step(&mut adam);
        }
        let val_ppl = model.corpus_stats(&val, eval_batch)?.perplexity();
        log::debug!("bi-LM epoch {epoch}: train ppl {:.4}, val ppl {val_ppl:.4}", stats.perplexity());
        log.epochs.push(EpochRecord {
            epoch,
            train_perplexity: stats.perplexity(),
            validation_perplexity: val_ppl,
        });
        if stopper.observe(epoch, val_ppl) {
            best = model.parameters().iter().map(|p| p.value.clone()).collect();
        }
        if stopper.should_stop() {
            log.stopped_early = true;
            break;
        }
    }
    for (p, v) in model.parameters_mut_unchecked().into_iter().zip(best) {
        p.value = v;
    }
    log.best_epoch = stopper.best_epoch();
    model.freeze();
    Ok((model, log))
}

/// Writes `<path>` (checkpoint), `<path>.json` (sidecar) and `<path>.curve.csv`.
pub fn save_with_sidecar(model: &BiLmModel, log: &BiLmTrainingLog, path: &Path) -> Result<()> {
    model.save(path)?;
    let sidecar = serde_json::json!({
        "vocabulary_hash": model.vocab.fingerprint(),
        "config": model.config,
        "best_epoch": log.best_epoch,
        "best_validation_perplexity": log.best_validation_perplexity(),
        "stopped_early": log.stopped_early,
        "curve": log.epochs,
    });
    std::fs::write(sidecar_path(path, "json"), serde_json::to_string_pretty(&sidecar)?)?;
    std::fs::write(sidecar_path(path, "curve.csv"), log.to_csv())?;
    Ok(())
}

pub(crate) fn sidecar_path(path: &Path, ext: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Token;

    fn vocab(n: usize) -> Vocabulary {
        let toks: Vec<Token> = (0..n).map(|i| Token::from(format!("S{i}ON").as_str())).collect();
        Vocabulary::build(&[toks]).unwrap()
    }

    fn tiny(v: &Vocabulary, h: usize) -> BiLmModel {
        BiLmModel::new(v, &BiLmConfig { embedding_size: h, hidden_size: h, seed: 3, ..Default::default() }).unwrap()
    }

    fn zero_lstms(m: &mut BiLmModel) {
        for l in [&mut m.fwd1, &mut m.fwd2, &mut m.bwd1, &mut m.bwd2] {
            for p in l.parameters_mut() {
                p.value.fill(0.0);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_recurrent_layers() {
        let v = vocab(5);
        let mut m = tiny(&v, 3);
        zero_lstms(&mut m);
        let r = m.forward(&[1, 2, 3], &[true; 3]).unwrap();
        assert!(r.r1.iter().chain(&r.r2).all(|x| *x == 0.0));
        assert_eq!(&r.r0[3..6], m.embedding.table.value.row(2));
    }

    #[test]
    fn zeroed_layer_two_makes_r2_equal_r1() {
        let v = vocab(5);
        let mut m = tiny(&v, 3);
        for l in [&mut m.fwd2, &mut m.bwd2] {
            for p in l.parameters_mut() {
                p.value.fill(0.0);
            }
        }
        let r = m.forward(&[1, 4, 2, 3], &[true; 4]).unwrap();
        assert_eq!(r.r1, r.r2);
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let v = vocab(6);
        let mut m = tiny(&v, 4);
        for p in m.proj_fwd.parameters_mut().into_iter().chain(m.proj_bwd.parameters_mut()) {
            p.value.fill(0.0);
        }
        let s = bilm_loss(&[1, 2, 3, 4], &[true; 4], &m).unwrap();
        assert_eq!(s.count(), 6);
        assert!((s.loss() - (v.size() as f64).ln()).abs() < 1e-12);
        let corpus = vec![vec![1, 2, 3], vec![5, 4, 3, 2, 1]];
        let ppl = perplexity(&corpus, &m).unwrap();
        assert!((ppl - v.size() as f64).abs() / (v.size() as f64) < 0.01);
    }

    #[test]
    fn single_token_contributes_nothing() {
        let v = vocab(4);
        let m = tiny(&v, 2);
        assert_eq!(bilm_loss(&[0, 0, 3], &[false, false, true], &m).unwrap().count(), 0);
        assert!(perplexity(&[vec![1]], &m).is_err());
    }

    #[test]
    fn output_mode_widths_and_masking() {
        let v = vocab(4);
        let m = tiny(&v, 3);
        for mode in ElmoOutputMode::ALL {
            let out = elmo_embed(&[0, 1, 2], &[false, true, true], &m, mode).unwrap();
            assert_eq!(out.shape(), &[3, mode.width(3)]);
            assert!(out.row(0).iter().all(|x| *x == 0.0));
        }
        assert!("bogus".parse::<ElmoOutputMode>().is_err());
        assert_eq!(ElmoOutputMode::Concat.width(64), 384);
        assert_eq!(ElmoOutputMode::WeightedSum.width(64), 128);
    }

    #[test]
    fn equal_mix_weights_scale_sum() {
        let v = vocab(4);
        let mut m = tiny(&v, 3);
        m.scalar_mix = ScalarMix { weights: [0.4; 3], gamma: 2.5 };
        let sum = elmo_embed(&[1, 2, 3], &[true; 3], &m, ElmoOutputMode::Sum).unwrap();
        let ws = elmo_embed(&[1, 2, 3], &[true; 3], &m, ElmoOutputMode::WeightedSum).unwrap();
        for (a, b) in ws.data().iter().zip(sum.data()) {
            assert!((a - 2.5 / 3.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn reversal_swaps_tracks_with_shared_weights() {
        let v = vocab(5);
        let mut m = tiny(&v, 3);
        m.bwd1 = m.fwd1.clone();
        m.bwd2 = m.fwd2.clone();
        let a = m.forward(&[1, 2, 3, 4], &[true; 4]).unwrap();
        let b = m.forward(&[4, 3, 2, 1], &[true; 4]).unwrap();
        for t in 0..4 {
            let (fa, ba) = a.r2[t * 6..(t + 1) * 6].split_at(3);
            let (fb, bb) = b.r2[(3 - t) * 6..(4 - t) * 6].split_at(3);
            for (x, y) in fa.iter().zip(bb).chain(ba.iter().zip(fb)) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn frozen_model_refuses_training() {
        let v = vocab(3);
        let mut m = tiny(&v, 2);
        m.freeze();
        assert!(matches!(m.trainable(), Err(HarError::Frozen)));
    }

    #[test]
    fn vocabulary_mismatch_is_an_error() {
        let v = vocab(3);
        let m = tiny(&v, 2);
        assert!(matches!(m.forward(&[1, 99], &[true, true]), Err(HarError::Vocabulary(_))));
    }

    #[test]
    fn batched_forward_matches_single() {
        let v = vocab(6);
        let m = tiny(&v, 3);
        let seqs: Vec<&[u32]> = vec![&[1, 2, 3, 4], &[5, 2], &[3]];
        let many = m.forward_sequences(&seqs).unwrap();
        for (s, r) in seqs.iter().zip(&many) {
            let one = m.forward(s, &vec![true; s.len()]).unwrap();
            assert_eq!(r.steps, s.len());
            for (a, b) in one.r2.iter().zip(&r.r2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_keeps_frozen_flag() {
        let v = vocab(4);
        let mut m = tiny(&v, 2);
        m.freeze();
        let back = BiLmModel::from_checkpoint(&Checkpoint::read_from(&m.to_checkpoint().unwrap().to_bytes().unwrap()[..]).unwrap()).unwrap();
        assert!(back.is_frozen());
        assert_eq!(back.parameters(), m.parameters());
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::nn::grad_check;
        let v = vocab(5);
        let mut m = tiny(&v, 3);
        let batch = TokenBatch::from_sequences(&[&[1, 2, 3, 4], &[5, 1, 6]]);
        let mut t = m.trainable().unwrap();
        let report = grad_check(
            &mut t,
            |t, grad| {
                if grad {
                    t.loss_and_grad(&batch).unwrap().loss()
                } else {
                    t.model.batch_stats(&batch).unwrap().loss()
                }
            },
            1e-5,
            Some(12),
        );
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
