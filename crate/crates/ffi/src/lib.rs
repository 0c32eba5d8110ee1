//! C ABI over the evire library.
//!
//! Objects cross the boundary as opaque handles created by `*_load` or
//! `evire_predict` and released by the matching `*_free`. Every fallible call
//! returns an [`EvireStatus`]; on failure the message is available from
//! [`evire_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use evire::corpus::{parse_docred, Corpus};
use evire::metrics::evaluate;
use evire::pipeline::{predict, predictions_to_json, Model, Prediction};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvireStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Consistency = 5,
    Config = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Trained encoder and classifier with their vocabulary and schema.
pub struct EvireModel(Model);

/// Parsed documents.
pub struct EvireCorpus(Corpus);

/// Output of [`evire_predict`].
pub struct EvirePredictions(Vec<Prediction>);

/// One extracted triple. Entity indices refer to the document's entity list;
/// `relation` is the schema id (1-based, 0 is the threshold class).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EvireTriple {
    pub doc_index: usize,
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
    pub score: f64,
    pub evidence_len: usize,
}

/// Micro precision, recall and F1 for relations and evidence.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EvireScores {
    pub re_precision: f64,
    pub re_recall: f64,
    pub re_f1: f64,
    pub evi_precision: f64,
    pub evi_recall: f64,
    pub evi_f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(EvireStatus, String);

impl From<evire::Error> for Failure {
    fn from(e: evire::Error) -> Self {
        use evire::Error as E;
        let status = match &e {
            E::Io { .. } => EvireStatus::Io,
            E::Corpus(_) | E::Json(_) | E::Store(_) => EvireStatus::Parse,
            E::Config(_) | E::SequenceTooLong { .. } => EvireStatus::Config,
            _ => EvireStatus::Consistency,
        };
        Failure(status, e.to_string())
    }
}

impl From<evire::corpus::CorpusError> for Failure {
    fn from(e: evire::corpus::CorpusError) -> Self {
        Failure(EvireStatus::Parse, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EvireStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvireStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EvireStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(EvireStatus::NullArgument, format!("`{what}` is NULL"))
}

/// # Safety
/// `p` is NULL or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(EvireStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

/// # Safety
/// `p` is NULL or points to a live handle of type `T`.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn read_text(path: &PathBuf) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure(EvireStatus::Io, format!("{}: {e}", path.display())))
}

/// Message of the last failed call on this thread, or NULL. Owned by the
/// library; valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn evire_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn evire_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by the `evire` tool.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evire_model_load(path: *const c_char, out: *mut *mut EvireModel) -> EvireStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let model = Model::from_json(&read_text(&path)?)?;
        *out = Box::into_raw(Box::new(EvireModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` is NULL or a handle from [`evire_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evire_model_free(model: *mut EvireModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable scalars.
///
/// # Safety
/// `model` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evire_model_parameter_count(model: *const EvireModel, out: *mut usize) -> EvireStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.0.parameter_count();
        Ok(())
    })
}

/// Number of relations in the model schema, excluding the threshold class.
///
/// # Safety
/// `model` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evire_model_num_relations(model: *const EvireModel, out: *mut usize) -> EvireStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.0.schema.num_relations();
        Ok(())
    })
}

/// Loads a DocRED-style JSON corpus using the relation schema of `model`.
///
/// # Safety
/// `path` is a NUL-terminated string; `model` is a live handle; `out` is a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evire_corpus_load(path: *const c_char, model: *const EvireModel, out: *mut *mut EvireCorpus) -> EvireStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = handle(model, "model")?;
        let path = path_arg(path, "path")?;
        let corpus = parse_docred(&read_text(&path)?, &m.0.schema)?;
        *out = Box::into_raw(Box::new(EvireCorpus(corpus)));
        Ok(())
    })
}

/// # Safety
/// `corpus` is NULL or a handle from [`evire_corpus_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evire_corpus_free(corpus: *mut EvireCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of documents, or 0 for NULL.
///
/// # Safety
/// `corpus` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evire_corpus_len(corpus: *const EvireCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Extracts relations and evidence for every document of `corpus`.
///
/// # Safety
/// `model` and `corpus` are live handles; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evire_predict(
    model: *const EvireModel,
    corpus: *const EvireCorpus,
    evi_threshold: f64,
    out: *mut *mut EvirePredictions,
) -> EvireStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = handle(model, "model")?;
        let c = handle(corpus, "corpus")?;
        let preds = predict(&m.0, &c.0, evi_threshold)?;
        *out = Box::into_raw(Box::new(EvirePredictions(preds)));
        Ok(())
    })
}

/// # Safety
/// `preds` is NULL or a handle from [`evire_predict`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evire_predictions_free(preds: *mut EvirePredictions) {
    if !preds.is_null() {
        drop(Box::from_raw(preds));
    }
}

/// Number of triples, or 0 for NULL.
///
/// # Safety
/// `preds` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evire_predictions_len(preds: *const EvirePredictions) -> usize {
    preds.as_ref().map_or(0, |p| p.0.len())
}

/// Copies triple `i`. `doc_index` is the position of its document in
/// `corpus`.
///
/// # Safety
/// `preds` and `corpus` are live handles; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evire_predictions_get(
    preds: *const EvirePredictions,
    corpus: *const EvireCorpus,
    i: usize,
    out: *mut EvireTriple,
) -> EvireStatus {
    guard(|| {
        let p = handle(preds, "preds")?;
        let c = handle(corpus, "corpus")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = p.0.get(i).ok_or_else(|| Failure(EvireStatus::OutOfRange, format!("triple {i} of {}", p.0.len())))?;
        let doc_index = c
            .0
            .documents
            .iter()
            .position(|d| d.doc_id == t.doc_id)
            .ok_or_else(|| Failure(EvireStatus::Consistency, format!("document `{}` not in corpus", t.doc_id)))?;
        *out = EvireTriple {
            doc_index,
            head: t.head,
            tail: t.tail,
            relation: t.relation.0,
            score: t.score,
            evidence_len: t.evidence.len(),
        };
        Ok(())
    })
}

/// Copies up to `cap` evidence sentence indices of triple `i` into `buf` and
/// stores the full count in `len`.
///
/// # Safety
/// `preds` is a live handle; `buf` points to `cap` writable elements (may be
/// NULL when `cap` is 0); `len` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evire_predictions_evidence(
    preds: *const EvirePredictions,
    i: usize,
    buf: *mut usize,
    cap: usize,
    len: *mut usize,
) -> EvireStatus {
    guard(|| {
        let p = handle(preds, "preds")?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let t = p.0.get(i).ok_or_else(|| Failure(EvireStatus::OutOfRange, format!("triple {i} of {}", p.0.len())))?;
        *len = t.evidence.len();
        if cap > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            for (k, &s) in t.evidence.iter().take(cap).enumerate() {
                *buf.add(k) = s;
            }
        }
        Ok(())
    })
}

/// Serializes predictions as a JSON array; free the string with
/// [`evire_string_free`].
///
/// # Safety
/// `preds` and `model` are live handles; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evire_predictions_to_json(
    preds: *const EvirePredictions,
    model: *const EvireModel,
    out: *mut *mut c_char,
) -> EvireStatus {
    guard(|| {
        let p = handle(preds, "preds")?;
        let m = handle(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = predictions_to_json(&p.0, &m.0.schema);
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` is NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evire_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Scores `preds` against the gold annotations of `gold`.
///
/// # Safety
/// `preds` and `gold` are live handles; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evire_evaluate(preds: *const EvirePredictions, gold: *const EvireCorpus, out: *mut EvireScores) -> EvireStatus {
    guard(|| {
        let p = handle(preds, "preds")?;
        let g = handle(gold, "gold")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = evaluate(&p.0, &g.0, None);
        *out = EvireScores {
            re_precision: r.re.precision,
            re_recall: r.re.recall,
            re_f1: r.re.f1,
            evi_precision: r.evi.precision,
            evi_recall: r.evi.recall,
            evi_f1: r.evi.f1,
        };
        Ok(())
    })
}
