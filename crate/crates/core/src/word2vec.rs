//! Skip-gram with negative sampling over activity-sequence corpora.
//!
//! Context pairs never cross a sequence boundary and the window is not randomly shrunk,
//! so a fixed seed gives bit-identical embeddings.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::dense::EMBEDDING_INIT_STD;
use crate::nn::tensor::{sigmoid, Tensor};
use crate::tokenizer::{Token, Vocabulary, VocabEntry, PAD_INDEX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub embedding_size: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub noise_exponent: f64,
    pub learning_rate: f64,
    /// When set, the learning rate decays linearly to this value over training.
    pub min_learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            embedding_size: 64,
            window: 20,
            epochs: 100,
            negatives: 5,
            noise_exponent: 0.75,
            learning_rate: 0.025,
            min_learning_rate: None,
            seed: 0,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_size == 0 || self.window == 0 || self.negatives == 0 {
            return Err(HarError::invalid("embedding size, window and negatives must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.noise_exponent.is_finite() {
            return Err(HarError::invalid("learning rate must be positive and exponent finite"));
        }
        Ok(())
    }
}

/// Input-side embedding table over a vocabulary. Row 0 (padding) is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub vocab: Vocabulary,
    pub table: Tensor,
}

impl EmbeddingMatrix {
    pub fn new(vocab: Vocabulary, table: Tensor) -> Result<Self> {
        if table.shape().len() != 2 || table.shape()[0] != vocab.size() {
            return Err(HarError::shape(format!(
                "embedding table {:?} does not match vocabulary of {} rows",
                table.shape(),
                vocab.size()
            )));
        }
        if table.row(PAD_INDEX as usize).iter().any(|v| *v != 0.0) {
            return Err(HarError::invalid("padding row must be zero"));
        }
        Ok(EmbeddingMatrix { vocab, table })
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row(&self, index: u32) -> &[f64] {
        self.table.row(index as usize)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "vocabulary": serde_json::from_str::<serde_json::Value>(&self.vocab.to_json()?)?,
            "vocabulary_hash": self.vocab.fingerprint(),
        });
        let mut c = Checkpoint::new("word2vec", meta);
        c.push("embedding", &self.table);
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.manifest.kind != "word2vec" {
            return Err(HarError::Checkpoint(format!("expected word2vec, found {}", c.manifest.kind)));
        }
        let vocab = Vocabulary::from_json(&c.manifest.meta["vocabulary"].to_string())?;
        Self::new(vocab, c.get("embedding")?.clone())
    }
}

/// All `(center, context)` position pairs of a sequence of length `len` with `|i - j| <= window`.
pub fn context_pairs(len: usize, window: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len).flat_map(move |i| {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(len.saturating_sub(1));
        (lo..=hi).filter(move |&j| j != i).map(move |j| (i, j))
    })
}

/// Negative-sampling loss of one `(center, context, negatives)` tuple:
/// `-ln σ(u_o·v) - Σ ln σ(-u_n·v)`, with gradients w.r.t. `v`, `u_o` and each `u_n`.
pub fn tuple_loss_and_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> (f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let e = center.len();
    let mut d_center = vec![0.0; e];

    let s = dot(center, context);
    let sig = sigmoid(s);
    let mut loss = -log_sigmoid(s);
    let coef = sig - 1.0;
    let d_context: Vec<f64> = center.iter().map(|v| coef * v).collect();
    for (dc, u) in d_center.iter_mut().zip(context) {
        *dc += coef * u;
    }

    let mut d_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = dot(center, neg);
        loss -= log_sigmoid(-s);
        let coef = sigmoid(s);
        d_negs.push(center.iter().map(|v| coef * v).collect());
        for (dc, u) in d_center.iter_mut().zip(neg.iter()) {
            *dc += coef * u;
        }
    }
    (loss, d_center, d_context, d_negs)
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Incremental trainer; [`train_skipgram`] drives it for `cfg.epochs` epochs.
pub struct SkipGramTrainer<'a> {
    cfg: SkipGramConfig,
    corpus: &'a [Vec<u32>],
    vocab: Vocabulary,
    input: Vec<f64>,
    output: Vec<f64>,
    noise: WeightedIndex<f64>,
    noise_tokens: Vec<u32>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> SkipGramTrainer<'a> {
    pub fn new(corpus: &'a [Vec<u32>], vocab: &Vocabulary, cfg: &SkipGramConfig) -> Result<Self> {
        cfg.validate()?;
        let rows = vocab.size();
        let mut counts = vec![0u64; rows];
        for seq in corpus {
            for &ix in seq {
                if ix as usize >= rows {
                    return Err(HarError::Vocabulary(format!("index {ix} outside vocabulary of {rows}")));
                }
                counts[ix as usize] += 1;
            }
        }
        counts[PAD_INDEX as usize] = 0;
        let noise_tokens: Vec<u32> = (0..rows as u32).filter(|&i| counts[i as usize] > 0).collect();
        if noise_tokens.is_empty() {
            return Err(HarError::invalid("corpus holds no tokens"));
        }
        let weights: Vec<f64> = noise_tokens
            .iter()
            .map(|&i| (counts[i as usize] as f64).powf(cfg.noise_exponent))
            .collect();
        let noise = WeightedIndex::new(&weights).map_err(|e| HarError::invalid(e.to_string()))?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let e = cfg.embedding_size;
        let normal = Normal::new(0.0, EMBEDDING_INIT_STD).expect("positive std");
        let mut input: Vec<f64> = (0..rows * e).map(|_| normal.sample(&mut rng)).collect();
        input[..e].fill(0.0);
        Ok(SkipGramTrainer {
            cfg: cfg.clone(),
            corpus,
            vocab: vocab.clone(),
            input,
            output: vec![0.0; rows * e],
            noise,
            noise_tokens,
            rng,
            epoch: 0,
        })
    }

    fn learning_rate(&self) -> f64 {
        match self.cfg.min_learning_rate {
            Some(min) if self.cfg.epochs > 1 => {
                let frac = self.epoch as f64 / (self.cfg.epochs - 1) as f64;
                self.cfg.learning_rate + (min - self.cfg.learning_rate) * frac
            }
            _ => self.cfg.learning_rate,
        }
    }

    /// One pass over the corpus; returns the mean tuple loss.
    pub fn epoch(&mut self) -> f64 {
        let e = self.cfg.embedding_size;
        let lr = self.learning_rate();
        let mut total = 0.0;
        let mut tuples = 0usize;
        let mut grad_center = vec![0.0; e];
        for seq in self.corpus {
            for (i, j) in context_pairs(seq.len(), self.cfg.window) {
                let (center, context) = (seq[i] as usize, seq[j] as usize);
                if center == PAD_INDEX as usize || context == PAD_INDEX as usize {
                    continue;
                }
                grad_center.fill(0.0);
                let mut loss = 0.0;
                for k in 0..=self.cfg.negatives {
                    let (target, label) = if k == 0 {
                        (context, 1.0)
                    } else {
                        let t = self.noise_tokens[self.noise.sample(&mut self.rng)] as usize;
                        if t == context {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let v = &self.input[center * e..(center + 1) * e];
                    let u = &mut self.output[target * e..(target + 1) * e];
                    let s: f64 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                    loss -= if label > 0.5 { log_sigmoid(s) } else { log_sigmoid(-s) };
                    let g = (label - sigmoid(s)) * lr;
                    for ((gc, uu), vv) in grad_center.iter_mut().zip(u.iter_mut()).zip(v) {
                        *gc += g * *uu;
                        *uu += g * vv;
                    }
                }
                for (w, g) in self.input[center * e..(center + 1) * e].iter_mut().zip(&grad_center) {
                    *w += g;
                }
                total += loss;
                tuples += 1;
            }
        }
        self.epoch += 1;
        if tuples == 0 {
            0.0
        } else {
            total / tuples as f64
        }
    }

    pub fn into_embedding(self) -> Result<EmbeddingMatrix> {
        let rows = self.vocab.size();
        EmbeddingMatrix::new(self.vocab, Tensor::from_vec(&[rows, self.cfg.embedding_size], self.input)?)
    }
}

/// Trains for exactly `cfg.epochs` epochs (no early stopping).
pub fn train_skipgram(corpus: &[Vec<u32>], vocab: &Vocabulary, cfg: &SkipGramConfig) -> Result<EmbeddingMatrix> {
    if corpus.is_empty() {
        return Err(HarError::invalid("empty corpus"));
    }
    let mut trainer = SkipGramTrainer::new(corpus, vocab, cfg)?;
    for epoch in 0..cfg.epochs {
        let loss = trainer.epoch();
        log::debug!("skip-gram epoch {epoch}: loss {loss:.5}");
    }
    trainer.into_embedding()
}

pub fn cosine(a: &Token, b: &Token, emb: &EmbeddingMatrix) -> Result<f64> {
    let ia = emb
        .vocab
        .index_of(a)
        .ok_or_else(|| HarError::Vocabulary(format!("{a} not in vocabulary")))?;
    let ib = emb
        .vocab
        .index_of(b)
        .ok_or_else(|| HarError::Vocabulary(format!("{b} not in vocabulary")))?;
    cosine_rows(emb.row(ia), emb.row(ib))
}

pub fn cosine_rows(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(HarError::invalid("cosine of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Global average pooling of the embedding rows at real positions.
pub fn sequence_embedding_gap(indexes: &[u32], mask: &[bool], emb: &EmbeddingMatrix) -> Result<Tensor> {
    let e = emb.dim();
    let mut acc = vec![0.0; e];
    let mut n = 0usize;
    for (&ix, &m) in indexes.iter().zip(mask) {
        if !m {
            continue;
        }
        if ix as usize >= emb.vocab.size() {
            return Err(HarError::Vocabulary(format!("index {ix} out of range")));
        }
        for (a, v) in acc.iter_mut().zip(emb.row(ix)) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(HarError::invalid("sequence has no real positions"));
    }
    acc.iter_mut().for_each(|v| *v /= n as f64);
    Tensor::from_vec(&[e], acc)
}

/// CSV with header `token,frequency,dim_0,...`, one row per real token in index order.
pub fn export_embeddings(emb: &EmbeddingMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, embeddings_csv(emb))?;
    Ok(())
}

pub fn embeddings_csv(emb: &EmbeddingMatrix) -> String {
    let e = emb.dim();
    let mut out = String::from("token,frequency");
    for k in 0..e {
        out.push_str(&format!(",dim_{k}"));
    }
    out.push('\n');
    for entry in emb.vocab.entries() {
        out.push_str(&format!("{},{}", entry.token, entry.frequency));
        for v in emb.row(entry.index) {
            out.push_str(&format!(",{v:e}"));
        }
        out.push('\n');
    }
    out
}

/// Reads an export back. Rows absent from the CSV (padding, unknown) come back as zeros.
pub fn read_embeddings_csv(path: &Path) -> Result<EmbeddingMatrix> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| HarError::invalid("empty embedding file"))?;
    let dim = header.split(',').count().saturating_sub(2);
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let err = |m: &str| HarError::Parse { line: n + 2, message: m.to_string() };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(err("wrong number of columns"));
        }
        let frequency = fields[1].parse().map_err(|_| err("bad frequency"))?;
        entries.push(VocabEntry { token: Token::from(fields[0]), index: n as u32 + 1, frequency });
        let row: Vec<f64> = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| err("bad coordinate")))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    let unk = entries.len() as u32 + 1;
    let vocab = Vocabulary::from_json(&serde_json::to_string(&serde_json::json!({
        "pad_index": PAD_INDEX,
        "unk_index": unk,
        "entries": entries,
    }))?)?;
    let mut table = vec![0.0; vocab.size() * dim];
    for (i, row) in rows.iter().enumerate() {
        table[(i + 1) * dim..(i + 2) * dim].copy_from_slice(row);
    }
    EmbeddingMatrix::new(vocab, Tensor::from_vec(&[unk as usize + 1, dim], table)?)
}
