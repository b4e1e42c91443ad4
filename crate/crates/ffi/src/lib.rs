//! C ABI over `har-core`.
//!
//! Every fallible function returns a [`HarStatus`]; on failure the message is available
//! from [`har_last_error_message`] on the same thread. Objects are opaque handles created
//! by `*_new`/`*_load`/`*_train` functions and released with the matching `*_free`.
//! Strings returned to the caller are released with [`har_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use har_core::bilm::{perplexity, train_bilm, BiLmConfig, BiLmModel, ElmoOutputMode};
use har_core::dataset::Dataset;
use har_core::eval::{run_experiment, ExperimentConfig};
use har_core::event_log::parse_log;
use har_core::synthgen::{generate, scenario};
use har_core::tokenizer::{RelabelMap, Token, Vocabulary};
use har_core::word2vec::{cosine_rows, export_embeddings, train_skipgram, EmbeddingMatrix, SkipGramConfig};
use har_core::HarError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Model = 5,
    Frozen = 6,
    Config = 7,
    Internal = 8,
}

/// How per-position bi-LM layers are combined by [`har_bilm_embed`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarElmoMode {
    Concat = 0,
    WeightedSum = 1,
    Sum = 2,
    Last = 3,
}

impl From<HarElmoMode> for ElmoOutputMode {
    fn from(m: HarElmoMode) -> Self {
        match m {
            HarElmoMode::Concat => ElmoOutputMode::Concat,
            HarElmoMode::WeightedSum => ElmoOutputMode::WeightedSum,
            HarElmoMode::Sum => ElmoOutputMode::Sum,
            HarElmoMode::Last => ElmoOutputMode::Last,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HarBiLmOptions {
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub window: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl From<&HarBiLmOptions> for BiLmConfig {
    fn from(o: &HarBiLmOptions) -> Self {
        BiLmConfig {
            embedding_size: o.embedding_size,
            hidden_size: o.hidden_size,
            window: o.window,
            max_epochs: o.max_epochs,
            batch_size: o.batch_size,
            patience: o.patience,
            learning_rate: o.learning_rate,
            validation_fraction: o.validation_fraction,
            seed: o.seed,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HarWord2VecOptions {
    pub embedding_size: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Labeled, encoded activity sequences with their vocabulary.
pub struct HarDataset(Dataset);
pub struct HarVocabulary(Vocabulary);
/// A trained, frozen bidirectional language model.
pub struct HarBiLm(Arc<BiLmModel>);
pub struct HarWord2Vec(EmbeddingMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &HarError) -> HarStatus {
    match e {
        HarError::Parse { .. } => HarStatus::Parse,
        HarError::InvalidArgument(_) => HarStatus::InvalidArgument,
        HarError::Io(_) => HarStatus::Io,
        HarError::Frozen => HarStatus::Frozen,
        HarError::Config(_) => HarStatus::Config,
        HarError::Shape(_) | HarError::Vocabulary(_) | HarError::Checkpoint(_) | HarError::Json(_) => HarStatus::Model,
    }
}

enum Failure {
    Null(&'static str),
    Har(HarError),
}

impl From<HarError> for Failure {
    fn from(e: HarError) -> Self {
        Failure::Har(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `f`, translating errors and panics into a status plus a thread-local message.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> HarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HarStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            HarStatus::NullPointer
        }
        Ok(Err(Failure::Har(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            HarStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Har(HarError::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &'static str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn c_string(s: &str) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Har(HarError::InvalidArgument("string contains a NUL byte".into())))
}

fn relabel_map(name: Option<&str>) -> FfiResult<Option<RelabelMap>> {
    Ok(match name {
        None => None,
        Some(n) => match RelabelMap::builtin(n) {
            Some(m) => Some(m),
            None => Some(RelabelMap::load(Path::new(n))?),
        },
    })
}

/// Library version; static storage, do not free.
#[no_mangle]
pub extern "C" fn har_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Free with [`har_string_free`].
#[no_mangle]
pub extern "C" fn har_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_deref() {
        Some(m) => CString::new(m.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn har_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a dataset from a CASAS-format log file. `relabel` is null, a built-in map
/// name ("milan", "cairo") or a map file path.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn har_dataset_from_log(
    path: *const c_char,
    relabel: *const c_char,
    max_len: usize,
    out_dataset: *mut *mut HarDataset,
) -> HarStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let map = relabel_map(opt_str_arg(relabel, "relabel")?)?;
        let slot = out(out_dataset, "out_dataset")?;
        let (d, _) = Dataset::from_log_file(Path::new(path), map.as_ref(), max_len)?;
        *slot = Box::into_raw(Box::new(HarDataset(d)));
        Ok(())
    })
}

/// Like [`har_dataset_from_log`] with the log given as text.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn har_dataset_from_log_text(
    name: *const c_char,
    text: *const c_char,
    relabel: *const c_char,
    max_len: usize,
    out_dataset: *mut *mut HarDataset,
) -> HarStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let text = str_arg(text, "text")?;
        let map = relabel_map(opt_str_arg(relabel, "relabel")?)?;
        let slot = out(out_dataset, "out_dataset")?;
        let events = parse_log(text)?;
        let (d, _) = Dataset::from_events(name, &events, map.as_ref(), max_len)?;
        *slot = Box::into_raw(Box::new(HarDataset(d)));
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn har_dataset_free(d: *mut HarDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// # Safety
/// `d` must be a live dataset handle and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn har_dataset_len(d: *const HarDataset, out_len: *mut usize) -> HarStatus {
    guard(|| {
        *out(out_len, "out_len")? = handle(d, "dataset")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `d` must be a live dataset handle and `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn har_dataset_class_count(d: *const HarDataset, out_count: *mut usize) -> HarStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(d, "dataset")?.0.classes.len();
        Ok(())
    })
}

/// Class name `class_id`; free the result with [`har_string_free`].
///
/// # Safety
/// `d` must be a live dataset handle and `out_name` writable.
#[no_mangle]
pub unsafe extern "C" fn har_dataset_class_name(d: *const HarDataset, class_id: usize, out_name: *mut *mut c_char) -> HarStatus {
    guard(|| {
        let d = handle(d, "dataset")?;
        let slot = out(out_name, "out_name")?;
        let name = d.0.classes.get(class_id).ok_or_else(|| HarError::InvalidArgument(format!("no class {class_id}")))?;
        *slot = c_string(name)?;
        Ok(())
    })
}

/// Class id of sequence `index`.
///
/// # Safety
/// `d` must be a live dataset handle and `out_label` writable.
#[no_mangle]
pub unsafe extern "C" fn har_dataset_label(d: *const HarDataset, index: usize, out_label: *mut usize) -> HarStatus {
    guard(|| {
        let d = handle(d, "dataset")?;
        let slot = out(out_label, "out_label")?;
        let s = d.0.sequences.get(index).ok_or_else(|| HarError::InvalidArgument(format!("no sequence {index}")))?;
        *slot = s.label_id;
        Ok(())
    })
}

/// Copy of the dataset's vocabulary.
///
/// # Safety
/// `d` must be a live dataset handle and `out_vocab` writable.
#[no_mangle]
pub unsafe extern "C" fn har_dataset_vocabulary(d: *const HarDataset, out_vocab: *mut *mut HarVocabulary) -> HarStatus {
    guard(|| {
        let d = handle(d, "dataset")?;
        *out(out_vocab, "out_vocab")? = Box::into_raw(Box::new(HarVocabulary(d.0.vocab.clone())));
        Ok(())
    })
}

/// # Safety
/// `v` must be null or a live vocabulary handle.
#[no_mangle]
pub unsafe extern "C" fn har_vocabulary_free(v: *mut HarVocabulary) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Number of rows, padding and unknown included.
///
/// # Safety
/// `v` must be a live vocabulary handle and `out_size` writable.
#[no_mangle]
pub unsafe extern "C" fn har_vocabulary_size(v: *const HarVocabulary, out_size: *mut usize) -> HarStatus {
    guard(|| {
        *out(out_size, "out_size")? = handle(v, "vocabulary")?.0.size();
        Ok(())
    })
}

/// Index of `token`, or the unknown index when absent.
///
/// # Safety
/// `v` must be a live vocabulary handle, `token` NUL-terminated, `out_index` writable.
#[no_mangle]
pub unsafe extern "C" fn har_vocabulary_index(v: *const HarVocabulary, token: *const c_char, out_index: *mut u32) -> HarStatus {
    guard(|| {
        let v = handle(v, "vocabulary")?;
        let t = Token::from(str_arg(token, "token")?);
        *out(out_index, "out_index")? = v.0.index_or_unk(&t);
        Ok(())
    })
}

/// Token text of a real index; free the result with [`har_string_free`].
///
/// # Safety
/// `v` must be a live vocabulary handle and `out_token` writable.
#[no_mangle]
pub unsafe extern "C" fn har_vocabulary_token(v: *const HarVocabulary, index: u32, out_token: *mut *mut c_char) -> HarStatus {
    guard(|| {
        let v = handle(v, "vocabulary")?;
        let slot = out(out_token, "out_token")?;
        let t = v.0.token(index).ok_or_else(|| HarError::InvalidArgument(format!("index {index} is not a real token")))?;
        *slot = c_string(t.as_str())?;
        Ok(())
    })
}

/// Encodes `n_tokens` tokens into `max_len` left-padded indexes and a 0/1 mask.
///
/// # Safety
/// `tokens` must hold `n_tokens` NUL-terminated strings; `out_indexes` and `out_mask`
/// must each have room for `max_len` elements.
#[no_mangle]
pub unsafe extern "C" fn har_vocabulary_encode(
    v: *const HarVocabulary,
    tokens: *const *const c_char,
    n_tokens: usize,
    max_len: usize,
    out_indexes: *mut u32,
    out_mask: *mut u8,
) -> HarStatus {
    guard(|| {
        let v = handle(v, "vocabulary")?;
        if tokens.is_null() && n_tokens > 0 {
            return Err(Failure::Null("tokens"));
        }
        if out_indexes.is_null() {
            return Err(Failure::Null("out_indexes"));
        }
        if out_mask.is_null() {
            return Err(Failure::Null("out_mask"));
        }
        let toks: Vec<Token> = (0..n_tokens)
            .map(|i| str_arg(*tokens.add(i), "token").map(Token::from))
            .collect::<FfiResult<_>>()?;
        let e = v.0.encode(&toks, max_len)?;
        let idx = std::slice::from_raw_parts_mut(out_indexes, max_len);
        let mask = std::slice::from_raw_parts_mut(out_mask, max_len);
        idx.copy_from_slice(&e.indexes);
        for (m, &b) in mask.iter_mut().zip(&e.mask) {
            *m = b as u8;
        }
        Ok(())
    })
}

/// Default bi-LM options.
///
/// # Safety
/// `out_options` must be writable.
#[no_mangle]
pub unsafe extern "C" fn har_bilm_default_options(out_options: *mut HarBiLmOptions) -> HarStatus {
    guard(|| {
        let c = BiLmConfig::default();
        *out(out_options, "out_options")? = HarBiLmOptions {
            embedding_size: c.embedding_size,
            hidden_size: c.hidden_size,
            window: c.window,
            max_epochs: c.max_epochs,
            batch_size: c.batch_size,
            patience: c.patience,
            learning_rate: c.learning_rate,
            validation_fraction: c.validation_fraction,
            seed: c.seed,
        };
        Ok(())
    })
}

/// Trains a bi-LM on the dataset's sequences; the result is frozen. `options` may be null
/// for the defaults.
///
/// # Safety
/// `d` must be a live dataset handle, `options` null or valid, `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn har_bilm_train(
    d: *const HarDataset,
    options: *const HarBiLmOptions,
    out_model: *mut *mut HarBiLm,
) -> HarStatus {
    guard(|| {
        let d = handle(d, "dataset")?;
        let cfg = options.as_ref().map(BiLmConfig::from).unwrap_or_default();
        let slot = out(out_model, "out_model")?;
        let (m, _) = train_bilm(&d.0.corpus(), &d.0.vocab, &cfg)?;
        *slot = Box::into_raw(Box::new(HarBiLm(Arc::new(m))));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn har_bilm_load(path: *const c_char, out_model: *mut *mut HarBiLm) -> HarStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_model, "out_model")?;
        let mut m = BiLmModel::load(Path::new(path))?;
        m.freeze();
        *slot = Box::into_raw(Box::new(HarBiLm(Arc::new(m))));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live model handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn har_bilm_save(m: *const HarBiLm, path: *const c_char) -> HarStatus {
    guard(|| {
        let m = handle(m, "model")?;
        m.0.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn har_bilm_free(m: *mut HarBiLm) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Per-direction hidden width `H`.
///
/// # Safety
/// `m` must be a live model handle and `out_hidden` writable.
#[no_mangle]
pub unsafe extern "C" fn har_bilm_hidden_size(m: *const HarBiLm, out_hidden: *mut usize) -> HarStatus {
    guard(|| {
        *out(out_hidden, "out_hidden")? = handle(m, "model")?.0.hidden_size();
        Ok(())
    })
}

/// Perplexity of the model over the dataset's sequences, averaged over both directions.
///
/// # Safety
/// Handles must be live and `out_perplexity` writable.
#[no_mangle]
pub unsafe extern "C" fn har_bilm_perplexity(m: *const HarBiLm, d: *const HarDataset, out_perplexity: *mut f64) -> HarStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let d = handle(d, "dataset")?;
        *out(out_perplexity, "out_perplexity")? = perplexity(&d.0.corpus(), &m.0)?;
        Ok(())
    })
}

/// Contextual representations of an unpadded index sequence, row-major `len × width`
/// where width is `6H` for concat and `2H` otherwise. Writes the width to `out_width`;
/// `out` must have room for `len * width` values.
///
/// # Safety
/// `m` must be a live model handle; `indexes` holds `len` values; `out` has `capacity` slots.
#[no_mangle]
pub unsafe extern "C" fn har_bilm_embed(
    m: *const HarBiLm,
    indexes: *const u32,
    len: usize,
    mode: HarElmoMode,
    out_values: *mut f64,
    capacity: usize,
    out_width: *mut usize,
) -> HarStatus {
    guard(|| {
        let m = handle(m, "model")?;
        if indexes.is_null() && len > 0 {
            return Err(Failure::Null("indexes"));
        }
        if out_values.is_null() {
            return Err(Failure::Null("out_values"));
        }
        let width_slot = out(out_width, "out_width")?;
        let mode = ElmoOutputMode::from(mode);
        let width = mode.width(m.0.hidden_size());
        if capacity < len * width {
            return Err(Failure::Har(HarError::InvalidArgument(format!("need {} slots, got {capacity}", len * width))));
        }
        let seq = if len == 0 { &[][..] } else { std::slice::from_raw_parts(indexes, len) };
        if let Some(&bad) = seq.iter().find(|&&ix| ix as usize >= m.0.vocab_size()) {
            return Err(Failure::Har(HarError::InvalidArgument(format!("index {bad} outside the vocabulary"))));
        }
        let reps = m.0.forward_sequences(&[seq])?;
        let t = reps[0].combine(mode, &m.0.scalar_mix);
        std::slice::from_raw_parts_mut(out_values, len * width).copy_from_slice(t.data());
        *width_slot = width;
        Ok(())
    })
}

/// Trains skip-gram embeddings; `options` may be null for the defaults.
///
/// # Safety
/// `d` must be a live dataset handle, `options` null or valid, `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn har_word2vec_train(
    d: *const HarDataset,
    options: *const HarWord2VecOptions,
    out_model: *mut *mut HarWord2Vec,
) -> HarStatus {
    guard(|| {
        let d = handle(d, "dataset")?;
        let mut cfg = SkipGramConfig::default();
        if let Some(o) = options.as_ref() {
            cfg.embedding_size = o.embedding_size;
            cfg.window = o.window;
            cfg.epochs = o.epochs;
            cfg.negatives = o.negatives;
            cfg.learning_rate = o.learning_rate;
            cfg.seed = o.seed;
        }
        let slot = out(out_model, "out_model")?;
        *slot = Box::into_raw(Box::new(HarWord2Vec(train_skipgram(&d.0.corpus(), &d.0.vocab, &cfg)?)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn har_word2vec_load(path: *const c_char, out_model: *mut *mut HarWord2Vec) -> HarStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_model, "out_model")?;
        let c = har_core::nn::Checkpoint::load(Path::new(path))?;
        *slot = Box::into_raw(Box::new(HarWord2Vec(EmbeddingMatrix::from_checkpoint(&c)?)));
        Ok(())
    })
}

/// # Safety
/// `w` must be a live model handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn har_word2vec_save(w: *const HarWord2Vec, path: *const c_char) -> HarStatus {
    guard(|| {
        let w = handle(w, "model")?;
        w.0.to_checkpoint()?.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Writes `token,frequency,dim_0,...` rows for every real token.
///
/// # Safety
/// `w` must be a live model handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn har_word2vec_export_csv(w: *const HarWord2Vec, path: *const c_char) -> HarStatus {
    guard(|| {
        let w = handle(w, "model")?;
        export_embeddings(&w.0, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `w` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn har_word2vec_free(w: *mut HarWord2Vec) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// # Safety
/// `w` must be a live model handle and `out_dim` writable.
#[no_mangle]
pub unsafe extern "C" fn har_word2vec_dim(w: *const HarWord2Vec, out_dim: *mut usize) -> HarStatus {
    guard(|| {
        *out(out_dim, "out_dim")? = handle(w, "model")?.0.dim();
        Ok(())
    })
}

/// Copies embedding row `index` into `out_values`, which must hold the model's dimension.
///
/// # Safety
/// `w` must be a live model handle; `out_values` has `capacity` slots.
#[no_mangle]
pub unsafe extern "C" fn har_word2vec_row(w: *const HarWord2Vec, index: u32, out_values: *mut f64, capacity: usize) -> HarStatus {
    guard(|| {
        let w = handle(w, "model")?;
        if out_values.is_null() {
            return Err(Failure::Null("out_values"));
        }
        if index as usize >= w.0.vocab.size() {
            return Err(Failure::Har(HarError::InvalidArgument(format!("index {index} outside the vocabulary"))));
        }
        let row = w.0.row(index);
        if capacity < row.len() {
            return Err(Failure::Har(HarError::InvalidArgument(format!("need {} slots, got {capacity}", row.len()))));
        }
        std::slice::from_raw_parts_mut(out_values, row.len()).copy_from_slice(row);
        Ok(())
    })
}

/// Cosine similarity of two token embeddings.
///
/// # Safety
/// `w` must be a live model handle; tokens NUL-terminated; `out_similarity` writable.
#[no_mangle]
pub unsafe extern "C" fn har_word2vec_cosine(
    w: *const HarWord2Vec,
    a: *const c_char,
    b: *const c_char,
    out_similarity: *mut f64,
) -> HarStatus {
    guard(|| {
        let w = handle(w, "model")?;
        let row = |t: &str| -> FfiResult<&[f64]> {
            let ix = w.0.vocab.index_of(&Token::from(t)).ok_or_else(|| HarError::Vocabulary(format!("unknown token {t}")))?;
            Ok(w.0.row(ix))
        };
        let (ra, rb) = (row(str_arg(a, "a")?)?, row(str_arg(b, "b")?)?);
        *out(out_similarity, "out_similarity")? = cosine_rows(ra, rb)?;
        Ok(())
    })
}

/// Runs the K-fold experiment described by `config_json` (an experiment configuration as
/// JSON; null or `{}` for defaults) and returns the report as JSON. Free the report with
/// [`har_string_free`].
///
/// # Safety
/// `d` must be a live dataset handle, `config_json` null or NUL-terminated, `out_report`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn har_experiment_run(
    d: *const HarDataset,
    config_json: *const c_char,
    out_report: *mut *mut c_char,
) -> HarStatus {
    guard(|| {
        let d = handle(d, "dataset")?;
        let cfg: ExperimentConfig = match opt_str_arg(config_json, "config_json")? {
            Some(s) => serde_json::from_str(s).map_err(|e| HarError::Config(e.to_string()))?,
            None => ExperimentConfig::default(),
        };
        let slot = out(out_report, "out_report")?;
        let r = run_experiment(&d.0, &cfg, None)?;
        *slot = c_string(&r.to_json()?)?;
        Ok(())
    })
}

/// Writes a synthetic home log to `path` and its ground truth to `<path>.truth.json`.
/// `days` of 0 keeps the scenario's default; `seed` may be null.
///
/// # Safety
/// Strings must be NUL-terminated; `seed` null or readable.
#[no_mangle]
pub unsafe extern "C" fn har_synth_generate(
    scenario_name: *const c_char,
    days: usize,
    seed: *const u64,
    path: *const c_char,
) -> HarStatus {
    guard(|| {
        let name = str_arg(scenario_name, "scenario")?;
        let path = str_arg(path, "path")?;
        let mut spec = scenario(name).ok_or_else(|| HarError::InvalidArgument(format!("unknown scenario {name:?}")))?;
        if days > 0 {
            spec.days = days;
        }
        if let Some(s) = seed.as_ref() {
            spec.seed = *s;
        }
        generate(&spec)?.write(Path::new(path))?;
        Ok(())
    })
}
