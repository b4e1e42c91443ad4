//! Recurrent activity-sequence classifiers over four input encodings.
//!
//! The network is one or two (bi)directional LSTM layers followed by a softmax head on
//! the final recurrent state: the forward state after the last real token, joined with
//! the backward state after the first real token when bidirectional.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::TokenBatch;
use crate::bilm::{BiLmModel, ElmoOutputMode};
use crate::error::{HarError, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::dense::{Dense, Embedding};
use crate::nn::gradcheck::Module;
use crate::nn::loss::softmax;
use crate::nn::lstm::{LstmCache, LstmLayer};
use crate::nn::param::{Adam, AdamConfig, Parameter};
use crate::nn::tensor::Tensor;
use crate::nn::EarlyStopping;
use crate::tokenizer::EncodedSequence;
use crate::word2vec::EmbeddingMatrix;

/// Serialized as its display string, e.g. `"elmo_frozen:concat"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum EncoderKind {
    None,
    TrainableEmbedding,
    Word2VecFrozen,
    ElmoFrozen(ElmoOutputMode),
}

impl Default for EncoderKind {
    fn default() -> Self {
        EncoderKind::ElmoFrozen(ElmoOutputMode::Concat)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderKind::None => f.write_str("none"),
            EncoderKind::TrainableEmbedding => f.write_str("trainable_embedding"),
            EncoderKind::Word2VecFrozen => f.write_str("word2vec_frozen"),
            EncoderKind::ElmoFrozen(mode) => write!(f, "elmo_frozen:{mode}"),
        }
    }
}

impl From<EncoderKind> for String {
    fn from(e: EncoderKind) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for EncoderKind {
    type Error = HarError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for EncoderKind {
    type Err = HarError;

    /// Accepts `none`, `trainable_embedding`, `word2vec_frozen`, `elmo_frozen` and
    /// `elmo_frozen:<mode>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, mode) = match s.split_once(':') {
            Some((n, m)) => (n, Some(m)),
            None => (s, None),
        };
        let kind = match name {
            "none" => EncoderKind::None,
            "trainable_embedding" | "trainable" => EncoderKind::TrainableEmbedding,
            "word2vec_frozen" | "word2vec" => EncoderKind::Word2VecFrozen,
            "elmo_frozen" | "elmo" => {
                return Ok(EncoderKind::ElmoFrozen(mode.map(str::parse).transpose()?.unwrap_or_default()))
            }
            other => return Err(HarError::invalid(format!("unknown encoder {other:?}"))),
        };
        if mode.is_some() {
            return Err(HarError::invalid(format!("encoder {name} takes no output mode")));
        }
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Directionality {
    Uni,
    #[default]
    Bi,
}

impl FromStr for Directionality {
    type Err = HarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uni" => Ok(Directionality::Uni),
            "bi" => Ok(Directionality::Bi),
            other => Err(HarError::invalid(format!("unknown directionality {other:?}"))),
        }
    }
}

impl fmt::Display for Directionality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Directionality::Uni => "uni",
            Directionality::Bi => "bi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub encoder: EncoderKind,
    pub directionality: Directionality,
    pub layers: usize,
    pub units: usize,
    /// Width of the trainable embedding.
    pub embedding_size: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            encoder: EncoderKind::default(),
            directionality: Directionality::Bi,
            layers: 1,
            units: 64,
            embedding_size: 64,
            batch_size: 64,
            max_epochs: 400,
            patience: 20,
            learning_rate: 1e-3,
            seed: 0,
            classes: 2,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.embedding_size == 0 || self.batch_size == 0 {
            return Err(HarError::invalid("units, embedding size and batch size must be at least 1"));
        }
        if self.classes < 2 {
            return Err(HarError::invalid("a classifier needs at least 2 classes"));
        }
        if !(1..=2).contains(&self.layers) {
            return Err(HarError::invalid("recurrent layers must be 1 or 2"));
        }
        Ok(())
    }

    fn bidirectional(&self) -> bool {
        self.directionality == Directionality::Bi
    }
}

/// Pretrained, frozen encoders shared read-only between classifiers.
#[derive(Debug, Clone, Default)]
pub struct FrozenEncoders {
    pub word2vec: Option<Arc<EmbeddingMatrix>>,
    pub bilm: Option<Arc<BiLmModel>>,
}

#[derive(Debug, Clone)]
enum InputEncoder {
    OneHot { width: usize },
    Trainable(Embedding),
    Word2Vec(Arc<EmbeddingMatrix>),
    /// `mix` holds the three layer logits and the scale for weighted-sum mode.
    Elmo { bilm: Arc<BiLmModel>, mode: ElmoOutputMode, mix: Option<Parameter> },
}

/// Classifier input of one sequence with padding stripped.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceInput {
    Indexes(Vec<u32>),
    /// `steps × width` precomputed features.
    Features { steps: usize, width: usize, data: Vec<f64> },
}

impl SequenceInput {
    pub fn steps(&self) -> usize {
        match self {
            SequenceInput::Indexes(ix) => ix.len(),
            SequenceInput::Features { steps, .. } => *steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSequence {
    pub input: SequenceInput,
    pub label: usize,
}

#[derive(Debug, Clone)]
struct RecurrentLayer {
    fwd: LstmLayer,
    bwd: Option<LstmLayer>,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    vocab_size: usize,
    encoder: InputEncoder,
    layers: Vec<RecurrentLayer>,
    head: Dense,
}

struct LayerCache {
    fwd: LstmCache,
    bwd: Option<LstmCache>,
    /// Per-step output fed to the next layer.
    output: Vec<f64>,
}

struct ForwardPass {
    batch: usize,
    indexes: Vec<u32>,
    mask: Vec<bool>,
    /// Raw ELMo layers for weighted-sum mode (`T × B × 6H`).
    raw: Vec<f64>,
    /// Input to the first recurrent layer; empty for one-hot inputs.
    x: Vec<f64>,
    layers: Vec<LayerCache>,
    features: Vec<f64>,
    logits: Vec<f64>,
}

fn check_index(ix: u32, size: usize) -> Result<()> {
    if ix as usize >= size {
        return Err(HarError::Vocabulary(format!("index {ix} outside vocabulary of {size}")));
    }
    Ok(())
}

impl ClassifierModel {
    pub fn new(cfg: &ClassifierConfig, vocab_size: usize, frozen: &FrozenEncoders) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < 2 {
            return Err(HarError::invalid("vocabulary must hold at least one token"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = match cfg.encoder {
            EncoderKind::None => InputEncoder::OneHot { width: vocab_size },
            EncoderKind::TrainableEmbedding => {
                InputEncoder::Trainable(Embedding::new("classifier.embedding", vocab_size, cfg.embedding_size, &mut rng))
            }
            EncoderKind::Word2VecFrozen => {
                let w2v = frozen
                    .word2vec
                    .clone()
                    .ok_or_else(|| HarError::invalid("word2vec encoder needs a trained embedding"))?;
                if w2v.vocab.size() != vocab_size {
                    return Err(HarError::Vocabulary(format!(
                        "embedding covers {} indexes, dataset uses {vocab_size}",
                        w2v.vocab.size()
                    )));
                }
                InputEncoder::Word2Vec(w2v)
            }
            EncoderKind::ElmoFrozen(mode) => {
                let bilm = frozen.bilm.clone().ok_or_else(|| HarError::invalid("ELMo encoder needs a trained bi-LM"))?;
                if !bilm.is_frozen() {
                    return Err(HarError::invalid("the bi-LM must be frozen before use as an encoder"));
                }
                if bilm.vocab_size() != vocab_size {
                    return Err(HarError::Vocabulary(format!(
                        "bi-LM covers {} indexes, dataset uses {vocab_size}",
                        bilm.vocab_size()
                    )));
                }
                let mix = (mode == ElmoOutputMode::WeightedSum).then(|| {
                    let m = bilm.scalar_mix;
                    let v = vec![m.weights[0], m.weights[1], m.weights[2], m.gamma];
                    Parameter::new("classifier.scalar_mix", Tensor::from_vec(&[4], v).expect("mix shape"))
                });
                InputEncoder::Elmo { bilm, mode, mix }
            }
        };
        let input_width = match &encoder {
            InputEncoder::OneHot { width } => *width,
            InputEncoder::Trainable(e) => e.dim(),
            InputEncoder::Word2Vec(w) => w.dim(),
            InputEncoder::Elmo { bilm, mode, .. } => mode.width(bilm.hidden_size()),
        };
        let h = cfg.units;
        let dirs = if cfg.bidirectional() { 2 } else { 1 };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d = if l == 0 { input_width } else { dirs * h };
            layers.push(RecurrentLayer {
                fwd: LstmLayer::new(&format!("classifier.l{l}.fwd"), d, h, &mut rng),
                bwd: cfg.bidirectional().then(|| LstmLayer::new(&format!("classifier.l{l}.bwd"), d, h, &mut rng)),
            });
        }
        let head = Dense::new("classifier.head", dirs * h, cfg.classes, &mut rng);
        Ok(ClassifierModel { config: cfg.clone(), vocab_size, encoder, layers, head })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fwd.input_size()
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// Width of the representation the softmax head consumes.
    pub fn representation_width(&self) -> usize {
        self.head.input_size()
    }

    pub fn head_mut(&mut self) -> &mut Dense {
        &mut self.head
    }

    /// Strips padding and precomputes frozen features for a set of sequences.
    pub fn prepare(&self, seqs: &[EncodedSequence]) -> Result<Vec<PreparedSequence>> {
        let reals: Vec<Vec<u32>> = seqs.iter().map(|s| s.real_indexes()).collect();
        if let Some(i) = reals.iter().position(|r| r.is_empty()) {
            return Err(HarError::invalid(format!("sequence {i} has no real tokens")));
        }
        for ix in reals.iter().flatten() {
            check_index(*ix, self.vocab_size)?;
        }
        let inputs: Vec<SequenceInput> = match &self.encoder {
            InputEncoder::OneHot { .. } | InputEncoder::Trainable(_) => {
                reals.into_iter().map(SequenceInput::Indexes).collect()
            }
            InputEncoder::Word2Vec(w) => reals
                .iter()
                .map(|r| SequenceInput::Features {
                    steps: r.len(),
                    width: w.dim(),
                    data: r.iter().flat_map(|&ix| w.row(ix).iter().copied()).collect(),
                })
                .collect(),
            InputEncoder::Elmo { bilm, mode, .. } => {
                // Weighted-sum mixes in the classifier, so it keeps all three layers.
                let feature_mode = if *mode == ElmoOutputMode::WeightedSum { ElmoOutputMode::Concat } else { *mode };
                let slices: Vec<&[u32]> = reals.iter().map(|r| r.as_slice()).collect();
                bilm.forward_sequences(&slices)?
                    .iter()
                    .map(|rep| {
                        let t = rep.combine(feature_mode, &bilm.scalar_mix);
                        SequenceInput::Features { steps: rep.steps, width: t.shape()[1], data: t.into_data() }
                    })
                    .collect()
            }
        };
        Ok(inputs
            .into_iter()
            .zip(seqs)
            .map(|(input, s)| PreparedSequence { input, label: s.label_id })
            .collect())
    }

    /// Per-position input vectors and mask of one padded sequence.
    pub fn encode_input(&self, seq: &EncodedSequence) -> Result<(Tensor, Vec<bool>)> {
        let t_max = seq.indexes.len();
        let width = self.input_width();
        let mut out = vec![0.0; t_max * width];
        let real: Vec<usize> = (0..t_max).filter(|&t| seq.mask[t]).collect();
        if real.is_empty() {
            return Ok((Tensor::from_vec(&[t_max, width], out)?, seq.mask.clone()));
        }
        let prepared = self.prepare(std::slice::from_ref(seq))?.remove(0);
        let rows = match (&self.encoder, &prepared.input) {
            (InputEncoder::OneHot { width }, SequenceInput::Indexes(ix)) => ix
                .iter()
                .map(|&i| {
                    let mut v = vec![0.0; *width];
                    v[i as usize] = 1.0;
                    v
                })
                .collect::<Vec<_>>(),
            (InputEncoder::Trainable(e), SequenceInput::Indexes(ix)) => {
                ix.iter().map(|&i| e.table.value.row(i as usize).to_vec()).collect()
            }
            (_, SequenceInput::Features { steps, width: w, data }) => {
                let mixed = self.mix_features(data, *steps);
                let w = if mixed.is_empty() { *w } else { width };
                let d = if mixed.is_empty() { data } else { &mixed };
                d.chunks(w).map(|c| c.to_vec()).collect()
            }
            _ => unreachable!("encoder and prepared input disagree"),
        };
        for (t, row) in real.iter().zip(rows) {
            out[t * width..(t + 1) * width].copy_from_slice(&row);
        }
        Ok((Tensor::from_vec(&[t_max, width], out)?, seq.mask.clone()))
    }

    /// Applies the trainable scalar mix to `rows × 6H` features; empty unless weighted-sum.
    fn mix_features(&self, raw: &[f64], rows: usize) -> Vec<f64> {
        let InputEncoder::Elmo { mix: Some(mix), bilm, .. } = &self.encoder else {
            return Vec::new();
        };
        let w2 = 2 * bilm.hidden_size();
        let p = mix.value.data();
        let s = softmax(&p[..3]);
        let gamma = p[3];
        let mut out = vec![0.0; rows * w2];
        for r in 0..rows {
            let src = &raw[r * 3 * w2..(r + 1) * 3 * w2];
            let dst = &mut out[r * w2..(r + 1) * w2];
            for (k, sk) in s.iter().enumerate() {
                for (o, v) in dst.iter_mut().zip(&src[k * w2..(k + 1) * w2]) {
                    *o += gamma * sk * v;
                }
            }
        }
        out
    }

    fn forward(&self, batch: &[&PreparedSequence]) -> Result<ForwardPass> {
        let nb = batch.len();
        let steps = batch.iter().map(|s| s.input.steps()).max().unwrap_or(0);
        if steps == 0 {
            return Err(HarError::invalid("cannot classify an all-padding sequence"));
        }
        let mut pass = ForwardPass {
            batch: nb,
            indexes: Vec::new(),
            mask: vec![false; steps * nb],
            raw: Vec::new(),
            x: Vec::new(),
            layers: Vec::new(),
            features: Vec::new(),
            logits: Vec::new(),
        };
        let width = self.input_width();
        match &self.encoder {
            InputEncoder::OneHot { .. } | InputEncoder::Trainable(_) => {
                let seqs: Vec<&[u32]> = batch
                    .iter()
                    .map(|s| match &s.input {
                        SequenceInput::Indexes(ix) => Ok(ix.as_slice()),
                        _ => Err(HarError::invalid("index encoder received feature input")),
                    })
                    .collect::<Result<_>>()?;
                let tb = TokenBatch::from_sequences(&seqs);
                pass.indexes = tb.indexes;
                pass.mask = tb.mask;
                if let InputEncoder::Trainable(e) = &self.encoder {
                    pass.x = e.forward(&pass.indexes, &pass.mask)?;
                }
            }
            _ => {
                let feat_width = match &self.encoder {
                    InputEncoder::Elmo { mix: Some(_), bilm, .. } => 6 * bilm.hidden_size(),
                    _ => width,
                };
                let mut feats = vec![0.0; steps * nb * feat_width];
                for (b, s) in batch.iter().enumerate() {
                    let SequenceInput::Features { steps: len, width: w, data } = &s.input else {
                        return Err(HarError::invalid("feature encoder received index input"));
                    };
                    if *w != feat_width {
                        return Err(HarError::shape(format!("feature width {w}, expected {feat_width}")));
                    }
                    let pad = steps - len;
                    for k in 0..*len {
                        let row = (pad + k) * nb + b;
                        pass.mask[row] = true;
                        feats[row * w..(row + 1) * w].copy_from_slice(&data[k * w..(k + 1) * w]);
                    }
                }
                let mixed = self.mix_features(&feats, steps * nb);
                if mixed.is_empty() {
                    pass.x = feats;
                } else {
                    pass.raw = feats;
                    pass.x = mixed;
                }
            }
        }

        for (l, layer) in self.layers.iter().enumerate() {
            let (fwd, bwd) = if l == 0 && matches!(self.encoder, InputEncoder::OneHot { .. }) {
                (
                    layer.fwd.forward_one_hot(&pass.indexes, &pass.mask, steps, nb, false)?,
                    layer
                        .bwd
                        .as_ref()
                        .map(|b| b.forward_one_hot(&pass.indexes, &pass.mask, steps, nb, true))
                        .transpose()?,
                )
            } else {
                let input = if l == 0 { &pass.x } else { &pass.layers[l - 1].output };
                (
                    layer.fwd.forward(input, &pass.mask, steps, nb, false)?,
                    layer.bwd.as_ref().map(|b| b.forward(input, &pass.mask, steps, nb, true)).transpose()?,
                )
            };
            let output = match &bwd {
                None => fwd.outputs.clone(),
                Some(bc) => interleave(&fwd.outputs, &bc.outputs, self.config.units),
            };
            pass.layers.push(LayerCache { fwd, bwd, output });
        }

        let top = pass.layers.last().expect("at least one layer");
        pass.features = match &top.bwd {
            None => top.fwd.final_hidden().to_vec(),
            Some(bc) => interleave(top.fwd.final_hidden(), bc.final_hidden(), self.config.units),
        };
        pass.logits = self.head.forward(&pass.features, nb)?;
        Ok(pass)
    }

    /// Class probabilities for each prepared sequence.
    pub fn predict_proba(&self, seqs: &[PreparedSequence]) -> Result<Vec<Vec<f64>>> {
        let c = self.classes();
        let mut out = Vec::with_capacity(seqs.len());
        for group in sorted_groups(seqs, 128) {
            let refs: Vec<&PreparedSequence> = group.iter().map(|&i| &seqs[i]).collect();
            let pass = self.forward(&refs)?;
            for (k, &i) in group.iter().enumerate() {
                out.push((i, softmax(&pass.logits[k * c..(k + 1) * c])));
            }
        }
        out.sort_by_key(|(i, _)| *i);
        Ok(out.into_iter().map(|(_, p)| p).collect())
    }

    pub fn predict(&self, seqs: &[PreparedSequence]) -> Result<Vec<usize>> {
        Ok(self.predict_proba(seqs)?.iter().map(|p| argmax(p)).collect())
    }

    /// Summed cross-entropy and correct-prediction count.
    pub fn evaluate(&self, seqs: &[PreparedSequence]) -> Result<(f64, usize)> {
        let probs = self.predict_proba(seqs)?;
        let mut nll = 0.0;
        let mut correct = 0;
        for (p, s) in probs.iter().zip(seqs) {
            nll -= p[s.label].max(f64::MIN_POSITIVE).ln();
            correct += usize::from(argmax(p) == s.label);
        }
        Ok((nll, correct))
    }

    /// Mean cross-entropy of a batch; gradients accumulate into the trainable parameters.
    pub fn loss_and_grad(&mut self, batch: &[&PreparedSequence]) -> Result<f64> {
        let pass = self.forward(batch)?;
        let (c, nb, h) = (self.classes(), pass.batch, self.config.units);
        let mut d_logits = pass.logits.clone();
        let mut loss = 0.0;
        for (k, s) in batch.iter().enumerate() {
            if s.label >= c {
                return Err(HarError::invalid(format!("label {} outside {c} classes", s.label)));
            }
            let row = &mut d_logits[k * c..(k + 1) * c];
            let p = softmax(row);
            loss -= p[s.label].max(f64::MIN_POSITIVE).ln();
            for (d, pj) in row.iter_mut().zip(&p) {
                *d = pj / nb as f64;
            }
            row[s.label] -= 1.0 / nb as f64;
        }
        let d_feat = self.head.backward(&pass.features, &d_logits, nb);

        let n_layers = self.layers.len();
        let one_hot = matches!(self.encoder, InputEncoder::OneHot { .. });
        let needs_dx = matches!(self.encoder, InputEncoder::Trainable(_) | InputEncoder::Elmo { mix: Some(_), .. });
        let mut d_out: Option<Vec<f64>> = None;
        let mut d_x: Option<Vec<f64>> = None;
        for l in (0..n_layers).rev() {
            let (d_final_f, d_final_b) = if l == n_layers - 1 {
                match self.layers[l].bwd {
                    None => (Some(d_feat.clone()), None),
                    Some(_) => {
                        let (f, b) = split(&d_feat, h);
                        (Some(f), Some(b))
                    }
                }
            } else {
                (None, None)
            };
            let (d_out_f, d_out_b) = match (&d_out, self.layers[l].bwd.is_some()) {
                (None, _) => (None, None),
                (Some(d), false) => (Some(d.clone()), None),
                (Some(d), true) => {
                    let (f, b) = split(d, h);
                    (Some(f), Some(b))
                }
            };
            let cache = &pass.layers[l];
            let layer = &mut self.layers[l];
            if l == 0 && one_hot {
                layer.fwd.backward_one_hot(&pass.indexes, &cache.fwd, d_out_f.as_deref(), d_final_f.as_deref());
                if let (Some(b), Some(bc)) = (&mut layer.bwd, &cache.bwd) {
                    b.backward_one_hot(&pass.indexes, bc, d_out_b.as_deref(), d_final_b.as_deref());
                }
            } else if l == 0 && !needs_dx {
                layer.fwd.backward_params(&pass.x, &cache.fwd, d_out_f.as_deref(), d_final_f.as_deref());
                if let (Some(b), Some(bc)) = (&mut layer.bwd, &cache.bwd) {
                    b.backward_params(&pass.x, bc, d_out_b.as_deref(), d_final_b.as_deref());
                }
            } else {
                let input = if l == 0 { &pass.x } else { &pass.layers[l - 1].output };
                let mut dx = layer.fwd.backward(input, &cache.fwd, d_out_f.as_deref(), d_final_f.as_deref());
                if let (Some(b), Some(bc)) = (&mut layer.bwd, &cache.bwd) {
                    let dxb = b.backward(input, bc, d_out_b.as_deref(), d_final_b.as_deref());
                    dx.iter_mut().zip(&dxb).for_each(|(a, v)| *a += v);
                }
                if l == 0 {
                    d_x = Some(dx);
                } else {
                    d_out = Some(dx);
                }
            }
        }

        if let Some(dx) = d_x {
            match &mut self.encoder {
                InputEncoder::Trainable(e) => e.backward(&pass.indexes, &pass.mask, &dx),
                InputEncoder::Elmo { mix: Some(mix), bilm, .. } => {
                    mix_backward(mix, &pass.raw, &dx, 2 * bilm.hidden_size());
                }
                _ => {}
            }
        }
        Ok(loss / nb as f64)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let frozen_hash = match &self.encoder {
            InputEncoder::Word2Vec(w) => Some(w.vocab.fingerprint()),
            InputEncoder::Elmo { bilm, .. } => Some(bilm.vocab.fingerprint()),
            _ => None,
        };
        let meta = serde_json::json!({
            "config": self.config,
            "vocab_size": self.vocab_size,
            "frozen_vocabulary_hash": frozen_hash,
        });
        let mut c = Checkpoint::new("classifier", meta);
        c.push_params(self.parameters());
        Ok(c)
    }

    /// Rebuilds a classifier; frozen encoders must be the ones it was trained with.
    pub fn from_checkpoint(c: &Checkpoint, frozen: &FrozenEncoders) -> Result<Self> {
        if c.manifest.kind != "classifier" {
            return Err(HarError::Checkpoint(format!("expected classifier, found {}", c.manifest.kind)));
        }
        let meta = &c.manifest.meta;
        let config: ClassifierConfig = serde_json::from_value(meta["config"].clone())?;
        let vocab_size = meta["vocab_size"]
            .as_u64()
            .ok_or_else(|| HarError::Checkpoint("missing vocab_size".into()))? as usize;
        let mut model = ClassifierModel::new(&config, vocab_size, frozen)?;
        let expected = meta["frozen_vocabulary_hash"].as_str();
        let actual = match &model.encoder {
            InputEncoder::Word2Vec(w) => Some(w.vocab.fingerprint()),
            InputEncoder::Elmo { bilm, .. } => Some(bilm.vocab.fingerprint()),
            _ => None,
        };
        if expected != actual.as_deref() {
            return Err(HarError::Vocabulary("frozen encoder differs from the one used in training".into()));
        }
        c.restore_params(model.parameters_mut())?;
        Ok(model)
    }
}

impl Module for ClassifierModel {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = Vec::new();
        match &self.encoder {
            InputEncoder::Trainable(e) => p.push(&e.table),
            InputEncoder::Elmo { mix: Some(m), .. } => p.push(m),
            _ => {}
        }
        for l in &self.layers {
            p.extend(l.fwd.parameters());
            if let Some(b) = &l.bwd {
                p.extend(b.parameters());
            }
        }
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = Vec::new();
        match &mut self.encoder {
            InputEncoder::Trainable(e) => p.push(&mut e.table),
            InputEncoder::Elmo { mix: Some(m), .. } => p.push(m),
            _ => {}
        }
        for l in &mut self.layers {
            p.extend(l.fwd.parameters_mut());
            if let Some(b) = &mut l.bwd {
                p.extend(b.parameters_mut());
            }
        }
        p.extend(self.head.parameters_mut());
        p
    }
}

fn mix_backward(mix: &mut Parameter, raw: &[f64], dx: &[f64], w2: usize) {
    let p = mix.value.data().to_vec();
    let s = softmax(&p[..3]);
    let gamma = p[3];
    // d/ds_k and d/dgamma from sum over rows of dx · layer_k.
    let mut dots = [0.0; 3];
    for (r, d) in dx.chunks(w2).enumerate() {
        let src = &raw[r * 3 * w2..(r + 1) * 3 * w2];
        for (k, dot) in dots.iter_mut().enumerate() {
            *dot += d.iter().zip(&src[k * w2..(k + 1) * w2]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let g = mix.grad.data_mut();
    let weighted: f64 = (0..3).map(|k| s[k] * dots[k]).sum();
    for k in 0..3 {
        g[k] += gamma * s[k] * (dots[k] - weighted);
    }
    g[3] += weighted;
}

/// `[a_row ; b_row]` per row, each `h` wide.
fn interleave(a: &[f64], b: &[f64], h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * 2);
    for (ra, rb) in a.chunks(h).zip(b.chunks(h)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

fn split(v: &[f64], h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(v.len() / 2);
    let mut b = Vec::with_capacity(v.len() / 2);
    for row in v.chunks(2 * h) {
        a.extend_from_slice(&row[..h]);
        b.extend_from_slice(&row[h..]);
    }
    (a, b)
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Groups ids of similar length together so padding stays small.
fn sorted_groups(seqs: &[PreparedSequence], size: usize) -> Vec<Vec<usize>> {
    let mut ids: Vec<usize> = (0..seqs.len()).collect();
    ids.sort_by_key(|&i| seqs[i].input.steps());
    ids.chunks(size.max(1)).map(|c| c.to_vec()).collect()
}

/// Prepares sequences for a classifier built from `cfg` without building it twice.
pub fn prepare_inputs(
    seqs: &[EncodedSequence],
    cfg: &ClassifierConfig,
    vocab_size: usize,
    frozen: &FrozenEncoders,
) -> Result<Vec<PreparedSequence>> {
    ClassifierModel::new(cfg, vocab_size, frozen)?.prepare(seqs)
}

/// Per-position vectors and mask of one sequence under the model's encoder.
pub fn encode_input(seq: &EncodedSequence, model: &ClassifierModel) -> Result<(Tensor, Vec<bool>)> {
    model.encode_input(seq)
}

/// Probability vector over the model's classes.
pub fn classify(seq: &EncodedSequence, model: &ClassifierModel) -> Result<Vec<f64>> {
    let prepared = model.prepare(std::slice::from_ref(seq))?;
    Ok(model.predict_proba(&prepared)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainingLog {
    pub epochs: Vec<ClassifierEpoch>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl ClassifierTrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_accuracy));
        }
        s
    }

    pub fn min_val_loss(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min)
    }
}

/// Trains with Adam on shuffled mini-batches, early-stopping on validation loss and
/// restoring the best-validation weights.
pub fn train_classifier(
    train: &[PreparedSequence],
    val: &[PreparedSequence],
    cfg: &ClassifierConfig,
    vocab_size: usize,
    frozen: &FrozenEncoders,
) -> Result<(ClassifierModel, ClassifierTrainingLog)> {
    let mut model = ClassifierModel::new(cfg, vocab_size, frozen)?;
    let log = fit(&mut model, train, val)?;
    Ok((model, log))
}

/// Runs the training loop on an existing model.
pub fn fit(
    model: &mut ClassifierModel,
    train: &[PreparedSequence],
    val: &[PreparedSequence],
) -> Result<ClassifierTrainingLog> {
    let cfg = model.config.clone();
    if train.is_empty() || val.is_empty() {
        return Err(HarError::invalid("training and validation sets must be non-empty"));
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.label >= cfg.classes) {
        return Err(HarError::invalid(format!("label {} outside {} classes", s.label, cfg.classes)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x00c1_a551));
    let mut adam = Adam::new(AdamConfig { lr: cfg.learning_rate, ..Default::default() });
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut log = ClassifierTrainingLog::default();
    let mut best: Vec<Tensor> = model.parameters().iter().map(|p| p.value.clone()).collect();

    // Batches hold sequences of similar length; batch order is shuffled every epoch.
    let mut by_len: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        by_len.shuffle(&mut rng);
        by_len.sort_by_key(|&i| train[i].input.steps());
        let mut batches: Vec<&[usize]> = by_len.chunks(cfg.batch_size).collect();
        batches.shuffle(&mut rng);
        let mut total = 0.0;
        for ids in batches {
            let refs: Vec<&PreparedSequence> = ids.iter().map(|&i| &train[i]).collect();
            total += model.loss_and_grad(&refs)? * refs.len() as f64;
            adam.step(&mut model.parameters_mut());
        }
        let (val_nll, correct) = model.evaluate(val)?;
        let rec = ClassifierEpoch {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: val_nll / val.len() as f64,
            val_accuracy: correct as f64 / val.len() as f64,
        };
        log::debug!(
            "classifier epoch {epoch}: train {:.4}, val {:.4}, val acc {:.3}",
            rec.train_loss,
            rec.val_loss,
            rec.val_accuracy
        );
        let improved = stopper.observe(epoch, rec.val_loss);
        log.epochs.push(rec);
        if improved {
            best = model.parameters().iter().map(|p| p.value.clone()).collect();
        }
        if stopper.should_stop() {
            log.stopped_early = true;
            break;
        }
    }
    for (p, v) in model.parameters_mut().into_iter().zip(best) {
        p.value = v;
    }
    log.best_epoch = stopper.best_epoch();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilm::BiLmConfig;
    use crate::nn::grad_check;
    use crate::tokenizer::{Token, Vocabulary};

    fn vocab(n: usize) -> Vocabulary {
        let toks: Vec<Token> = (0..n).map(|i| Token::from(format!("M{i:03}ON").as_str())).collect();
        Vocabulary::build(&[toks]).unwrap()
    }

    fn seq(ix: &[u32], label: usize, max_len: usize) -> EncodedSequence {
        let pad = max_len - ix.len();
        let mut indexes = vec![0; pad];
        indexes.extend_from_slice(ix);
        let mut mask = vec![false; pad];
        mask.extend(std::iter::repeat_n(true, ix.len()));
        EncodedSequence { indexes, mask, label_id: label, original_length: ix.len() }
    }

    fn small_cfg(encoder: EncoderKind, dir: Directionality, layers: usize) -> ClassifierConfig {
        ClassifierConfig {
            encoder,
            directionality: dir,
            layers,
            units: 3,
            embedding_size: 4,
            classes: 3,
            seed: 7,
            ..Default::default()
        }
    }

    fn frozen(v: &Vocabulary, h: usize) -> FrozenEncoders {
        let mut bilm = BiLmModel::new(v, &BiLmConfig { embedding_size: h, hidden_size: h, ..Default::default() }).unwrap();
        bilm.freeze();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut table = Parameter::normal("t", &[v.size(), 5], 0.3, &mut rng).value;
        table.row_mut(0).fill(0.0);
        FrozenEncoders {
            word2vec: Some(Arc::new(EmbeddingMatrix::new(v.clone(), table).unwrap())),
            bilm: Some(Arc::new(bilm)),
        }
    }

    fn all_encoders() -> Vec<EncoderKind> {
        let mut e = vec![EncoderKind::None, EncoderKind::TrainableEmbedding, EncoderKind::Word2VecFrozen];
        e.extend(ElmoOutputMode::ALL.map(EncoderKind::ElmoFrozen));
        e
    }

    #[test]
    fn encoder_names_round_trip() {
        for e in all_encoders() {
            assert_eq!(e.to_string().parse::<EncoderKind>().unwrap(), e);
        }
        assert_eq!("elmo_frozen".parse::<EncoderKind>().unwrap(), EncoderKind::ElmoFrozen(ElmoOutputMode::Concat));
        assert!("none:sum".parse::<EncoderKind>().is_err());
        assert!("elmo_frozen:max".parse::<EncoderKind>().is_err());
    }

    #[test]
    fn one_hot_encoding_and_padding() {
        let v = vocab(8);
        let m = ClassifierModel::new(&small_cfg(EncoderKind::None, Directionality::Bi, 1), v.size(), &FrozenEncoders::default()).unwrap();
        assert_eq!(m.input_width(), 10);
        let (x, mask) = m.encode_input(&seq(&[3, 5], 0, 4)).unwrap();
        assert_eq!(mask, vec![false, false, true, true]);
        assert_eq!(x.row(2)[3], 1.0);
        assert_eq!(x.row(2).iter().sum::<f64>(), 1.0);
        for t in 0..2 {
            assert!(x.row(t).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn elmo_concat_width() {
        let v = vocab(6);
        let fr = frozen(&v, 64);
        let m = ClassifierModel::new(&small_cfg(EncoderKind::ElmoFrozen(ElmoOutputMode::Concat), Directionality::Bi, 1), v.size(), &fr).unwrap();
        assert_eq!(m.input_width(), 384);
        let (x, _) = m.encode_input(&seq(&[1, 2], 0, 3)).unwrap();
        assert_eq!(x.shape(), &[3, 384]);
        assert!(x.row(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_head_gives_uniform() {
        let v = vocab(5);
        let mut m = ClassifierModel::new(&small_cfg(EncoderKind::TrainableEmbedding, Directionality::Bi, 1), v.size(), &FrozenEncoders::default()).unwrap();
        for p in m.head_mut().parameters_mut() {
            p.value.fill(0.0);
        }
        let p = classify(&seq(&[1, 2, 3], 0, 5), &m).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn left_padding_does_not_change_prediction() {
        let v = vocab(6);
        let fr = frozen(&v, 3);
        for e in all_encoders() {
            let m = ClassifierModel::new(&small_cfg(e, Directionality::Bi, 2), v.size(), &fr).unwrap();
            let a = classify(&seq(&[1, 4, 2, 6], 0, 4), &m).unwrap();
            let b = classify(&seq(&[1, 4, 2, 6], 0, 54), &m).unwrap();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "{e}");
            }
        }
    }

    #[test]
    fn batching_matches_single_prediction() {
        let v = vocab(6);
        let m = ClassifierModel::new(&small_cfg(EncoderKind::TrainableEmbedding, Directionality::Bi, 2), v.size(), &FrozenEncoders::default()).unwrap();
        let seqs = vec![seq(&[1, 2, 3], 0, 6), seq(&[4], 1, 6), seq(&[5, 6, 1, 2, 3, 4], 2, 6)];
        let prepared = m.prepare(&seqs).unwrap();
        let all = m.predict_proba(&prepared).unwrap();
        for (s, p) in seqs.iter().zip(&all) {
            for (x, y) in classify(s, &m).unwrap().iter().zip(p) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_padding_is_an_error() {
        let v = vocab(4);
        let m = ClassifierModel::new(&small_cfg(EncoderKind::None, Directionality::Uni, 1), v.size(), &FrozenEncoders::default()).unwrap();
        let empty = EncodedSequence { indexes: vec![0; 3], mask: vec![false; 3], label_id: 0, original_length: 0 };
        assert!(classify(&empty, &m).is_err());
    }

    #[test]
    fn backward_state_sees_first_token() {
        let v = vocab(6);
        let fr = FrozenEncoders::default();
        let bi = ClassifierModel::new(&small_cfg(EncoderKind::TrainableEmbedding, Directionality::Bi, 1), v.size(), &fr).unwrap();
        let a = classify(&seq(&[1, 2, 3], 0, 3), &bi).unwrap();
        let b = classify(&seq(&[5, 2, 3], 0, 3), &bi).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let v = vocab(5);
        let fr = frozen(&v, 3);
        let seqs = vec![seq(&[1, 2, 3], 0, 4), seq(&[4, 5], 2, 4), seq(&[6, 1, 2, 3], 1, 4)];
        for e in all_encoders() {
            for (dir, layers) in [(Directionality::Uni, 1), (Directionality::Bi, 2)] {
                let mut m = ClassifierModel::new(&small_cfg(e, dir, layers), v.size(), &fr).unwrap();
                let prepared = m.prepare(&seqs).unwrap();
                let refs: Vec<&PreparedSequence> = prepared.iter().collect();
                let report = grad_check(
                    &mut m,
                    |m, grad| {
                        if grad {
                            m.loss_and_grad(&refs).unwrap()
                        } else {
                            let (nll, _) = m.evaluate(&prepared).unwrap();
                            nll / prepared.len() as f64
                        }
                    },
                    1e-5,
                    Some(10),
                );
                assert!(report.max_relative_error < 1e-4, "{e} {dir} {layers}: {report:?}");
            }
        }
    }

    #[test]
    fn overfits_toy_set_and_restores_best() {
        let v = vocab(8);
        let fr = FrozenEncoders::default();
        let mut train = Vec::new();
        for i in 0..20u32 {
            let label = (i % 2) as usize;
            let ix: Vec<u32> = if label == 0 { vec![1 + i % 3, 2, 3] } else { vec![5, 6 + i % 3, 7] };
            train.push(seq(&ix, label, 4));
        }
        let mut cfg = small_cfg(EncoderKind::TrainableEmbedding, Directionality::Bi, 1);
        cfg.classes = 2;
        cfg.units = 8;
        cfg.learning_rate = 0.02;
        cfg.max_epochs = 200;
        cfg.patience = 200;
        let prepared = prepare_inputs(&train, &cfg, v.size(), &fr).unwrap();
        let (m, log) = train_classifier(&prepared, &prepared, &cfg, v.size(), &fr).unwrap();
        let preds = m.predict(&prepared).unwrap();
        assert!(preds.iter().zip(&prepared).all(|(p, s)| *p == s.label));
        let (nll, _) = m.evaluate(&prepared).unwrap();
        assert!((nll / prepared.len() as f64 - log.min_val_loss()).abs() < 1e-12);
    }

    #[test]
    fn fixed_seed_gives_identical_logs() {
        let v = vocab(6);
        let fr = FrozenEncoders::default();
        let data: Vec<EncodedSequence> = (0..12u32).map(|i| seq(&[1 + i % 5, 2, 3 + i % 2], (i % 3) as usize, 5)).collect();
        let mut cfg = small_cfg(EncoderKind::None, Directionality::Bi, 1);
        cfg.max_epochs = 5;
        let p = prepare_inputs(&data, &cfg, v.size(), &fr).unwrap();
        let (_, a) = train_classifier(&p, &p, &cfg, v.size(), &fr).unwrap();
        let (_, b) = train_classifier(&p, &p, &cfg, v.size(), &fr).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_encoders_stay_untouched() {
        let v = vocab(6);
        let fr = frozen(&v, 3);
        let before_w2v = fr.word2vec.as_ref().unwrap().table.clone();
        let before_bilm: Vec<Tensor> = fr.bilm.as_ref().unwrap().parameters().iter().map(|p| p.value.clone()).collect();
        let data: Vec<EncodedSequence> = (0..6u32).map(|i| seq(&[1 + i % 5, 2], (i % 3) as usize, 3)).collect();
        for e in [EncoderKind::Word2VecFrozen, EncoderKind::ElmoFrozen(ElmoOutputMode::WeightedSum)] {
            let mut cfg = small_cfg(e, Directionality::Bi, 1);
            cfg.max_epochs = 3;
            let p = prepare_inputs(&data, &cfg, v.size(), &fr).unwrap();
            train_classifier(&p, &p, &cfg, v.size(), &fr).unwrap();
        }
        assert_eq!(fr.word2vec.as_ref().unwrap().table, before_w2v);
        let after: Vec<Tensor> = fr.bilm.as_ref().unwrap().parameters().iter().map(|p| p.value.clone()).collect();
        assert_eq!(after, before_bilm);
    }

    #[test]
    fn label_out_of_range_errors() {
        let v = vocab(4);
        let fr = FrozenEncoders::default();
        let cfg = small_cfg(EncoderKind::None, Directionality::Uni, 1);
        let p = prepare_inputs(&[seq(&[1], 5, 2)], &cfg, v.size(), &fr).unwrap();
        assert!(train_classifier(&p, &p, &cfg, v.size(), &fr).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let v = vocab(5);
        let fr = frozen(&v, 3);
        let m = ClassifierModel::new(&small_cfg(EncoderKind::ElmoFrozen(ElmoOutputMode::WeightedSum), Directionality::Bi, 2), v.size(), &fr).unwrap();
        let bytes = m.to_checkpoint().unwrap().to_bytes().unwrap();
        let back = ClassifierModel::from_checkpoint(&Checkpoint::read_from(&bytes[..]).unwrap(), &fr).unwrap();
        let s = seq(&[1, 2, 3], 0, 3);
        assert_eq!(classify(&s, &m).unwrap(), classify(&s, &back).unwrap());
        let other = frozen(&vocab(5), 4);
        assert!(ClassifierModel::from_checkpoint(&Checkpoint::read_from(&bytes[..]).unwrap(), &other).is_err());
    }
}
