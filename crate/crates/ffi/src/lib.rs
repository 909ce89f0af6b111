//! C ABI over `captionrl`: caption metrics, entailment-corrected rewards and
//! beam decoding from checkpoints.
//!
//! Every fallible function returns a [`CrlStatus`]; on failure the message is
//! available from [`crl_last_error`] on the same thread. Objects are opaque
//! handles created by `*_load`/`*_new` functions and released by the matching
//! `*_free`. Strings returned to the caller must be released with
//! [`crl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_double, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Duration;

use captionrl::corpus::{Corpus, FeatureSequence};
use captionrl::entailment::{ContradictionLexicon, EntailmentScorer, LexicalScorer, RemoteScorer};
use captionrl::metrics::{bleu4, cider_d, rouge_l, MetricConfig};
use captionrl::model::{beam_search, ensemble_decode, Checkpoint, DEFAULT_MAX_DECODE};
use captionrl::reward::{reward_for_sample, BaseMetric, RewardConfig};
use captionrl::text::{build_doc_freq, tokenize, DocFreqTable, Sentence};
use captionrl::{Error, ErrorCategory};

/// Result codes. Values 2 to 5 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrlStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    ScorerUnavailable = 4,
    Numeric = 5,
    /// A panic was caught at the boundary.
    Internal = 6,
}

impl From<ErrorCategory> for CrlStatus {
    fn from(c: ErrorCategory) -> Self {
        match c {
            ErrorCategory::Config => CrlStatus::Config,
            ErrorCategory::Data => CrlStatus::Data,
            ErrorCategory::ScorerUnavailable => CrlStatus::ScorerUnavailable,
            ErrorCategory::Numeric => CrlStatus::Numeric,
        }
    }
}

/// A loaded caption corpus; also supplies document frequencies for CIDEr-D.
pub struct CrlCorpus {
    corpus: Corpus,
    df: DocFreqTable,
}

/// An entailment scorer, lexical or remote.
pub struct CrlScorer {
    inner: Box<dyn EntailmentScorer>,
}

/// A checkpoint: parameters plus vocabulary.
pub struct CrlModel {
    ck: Checkpoint,
}

/// Reward for one candidate caption.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlReward {
    pub value: c_double,
    pub base_value: c_double,
    pub entailment: c_double,
    /// 1 when the penalty was applied, else 0.
    pub penalized: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(CrlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.category().into(), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CrlStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CrlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CrlStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn sentences(refs: *const *const c_char, n: usize) -> Result<Vec<Sentence>, Failure> {
    if refs.is_null() || n == 0 {
        return Err(invalid("references are missing"));
    }
    (0..n).map(|i| text(*refs.add(i), "reference").map(tokenize)).collect()
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is null")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn crl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn crl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn crl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a JSONL corpus.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crl_corpus_load(path: *const c_char, out: *mut *mut CrlCorpus) -> CrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let corpus = Corpus::load(Path::new(text(path, "path")?))?;
        let df = build_doc_freq(&corpus)?;
        *out = Box::into_raw(Box::new(CrlCorpus { corpus, df }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be null or a handle from [`crl_corpus_load`].
#[no_mangle]
pub unsafe extern "C" fn crl_corpus_free(corpus: *mut CrlCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crl_corpus_len(corpus: *const CrlCorpus, out: *mut usize) -> CrlStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or_else(|| invalid("corpus is null"))?;
        *out_ref(out, "out")? = c.corpus.len();
        Ok(())
    })
}

/// Lexical scorer over a lexicon JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crl_scorer_lexical(lexicon_path: *const c_char, out: *mut *mut CrlScorer) -> CrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let lex = ContradictionLexicon::load(Path::new(text(lexicon_path, "lexicon_path")?))?;
        *out = Box::into_raw(Box::new(CrlScorer {
            inner: Box::new(LexicalScorer::new(lex)),
        }));
        Ok(())
    })
}

/// Remote scorer at `url`. No request is made until the first score.
///
/// # Safety
/// `url` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crl_scorer_remote(url: *const c_char, timeout_secs: c_double, out: *mut *mut CrlScorer) -> CrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if !(timeout_secs > 0.0) || !timeout_secs.is_finite() {
            return Err(invalid("timeout must be positive"));
        }
        let s = RemoteScorer::new(text(url, "url")?, Duration::from_secs_f64(timeout_secs));
        *out = Box::into_raw(Box::new(CrlScorer { inner: Box::new(s) }));
        Ok(())
    })
}

/// # Safety
/// `scorer` must be null or a handle from a `crl_scorer_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn crl_scorer_free(scorer: *mut CrlScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}

/// Probability that `hypothesis` follows from `premise`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crl_entailment(
    scorer: *const CrlScorer,
    premise: *const c_char,
    hypothesis: *const c_char,
    out: *mut c_double,
) -> CrlStatus {
    guard(|| {
        let s = scorer.as_ref().ok_or_else(|| invalid("scorer is null"))?;
        let p = tokenize(text(premise, "premise")?);
        let h = tokenize(text(hypothesis, "hypothesis")?);
        *out_ref(out, "out")? = s.inner.score(&p, &h)?.value();
        Ok(())
    })
}

/// BLEU-4 of `candidate` against `n_refs` references (raw scale).
///
/// # Safety
/// `refs` must point to `n_refs` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn crl_bleu4(candidate: *const c_char, refs: *const *const c_char, n_refs: usize, out: *mut c_double) -> CrlStatus {
    guard(|| {
        let cand = tokenize(text(candidate, "candidate")?);
        let refs = sentences(refs, n_refs)?;
        *out_ref(out, "out")? = bleu4(&cand, &refs, &MetricConfig::default())?;
        Ok(())
    })
}

/// ROUGE-L F-measure (raw scale).
///
/// # Safety
/// `refs` must point to `n_refs` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn crl_rouge_l(candidate: *const c_char, refs: *const *const c_char, n_refs: usize, out: *mut c_double) -> CrlStatus {
    guard(|| {
        let cand = tokenize(text(candidate, "candidate")?);
        let refs = sentences(refs, n_refs)?;
        *out_ref(out, "out")? = rouge_l(&cand, &refs)?;
        Ok(())
    })
}

/// CIDEr-D (raw scale) with document frequencies from `corpus`.
///
/// # Safety
/// `corpus` must be a live handle; `refs` must point to `n_refs` strings.
#[no_mangle]
pub unsafe extern "C" fn crl_cider_d(
    corpus: *const CrlCorpus,
    candidate: *const c_char,
    refs: *const *const c_char,
    n_refs: usize,
    out: *mut c_double,
) -> CrlStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or_else(|| invalid("corpus is null"))?;
        let cand = tokenize(text(candidate, "candidate")?);
        let refs = sentences(refs, n_refs)?;
        *out_ref(out, "out")? = cider_d(&cand, &refs, &c.df, &MetricConfig::default())?;
        Ok(())
    })
}

/// CIDEr-D reward with the entailment penalty: `base - lambda` when the
/// best entailment over references is below `beta`, otherwise `base`.
///
/// # Safety
/// Handles must be live; `refs` must point to `n_refs` strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crl_cident(
    corpus: *const CrlCorpus,
    scorer: *const CrlScorer,
    candidate: *const c_char,
    refs: *const *const c_char,
    n_refs: usize,
    lambda: c_double,
    beta: c_double,
    out: *mut CrlReward,
) -> CrlStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or_else(|| invalid("corpus is null"))?;
        let s = scorer.as_ref().ok_or_else(|| invalid("scorer is null"))?;
        let cand = tokenize(text(candidate, "candidate")?);
        let refs = sentences(refs, n_refs)?;
        let cfg = RewardConfig {
            base_metric: BaseMetric::CiderD,
            lambda,
            beta,
        };
        cfg.validate()?;
        let r = reward_for_sample(&cand, &refs, &c.df, &MetricConfig::default(), &cfg, s.inner.as_ref())?;
        *out_ref(out, "out")? = CrlReward {
            value: r.value,
            base_value: r.base_value,
            entailment: r.ent.value(),
            penalized: r.penalized as i32,
        };
        Ok(())
    })
}

/// Loads a checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crl_model_load(path: *const c_char, out: *mut *mut CrlModel) -> CrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let ck = Checkpoint::load(Path::new(text(path, "path")?))?;
        *out = Box::into_raw(Box::new(CrlModel { ck }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`crl_model_load`].
#[no_mangle]
pub unsafe extern "C" fn crl_model_free(model: *mut CrlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Beam-decodes one clip. `features` holds `frames * dim` values, row-major.
/// With more than one model the per-step distributions are averaged. The
/// caption is written to `*out` and must be freed with [`crl_string_free`].
///
/// # Safety
/// `models` must point to `n_models` live handles; `features` to
/// `frames * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crl_decode(
    models: *const *const CrlModel,
    n_models: usize,
    features: *const c_double,
    frames: usize,
    dim: usize,
    beam: usize,
    out: *mut *mut c_char,
) -> CrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if models.is_null() || n_models == 0 {
            return Err(invalid("no models given"));
        }
        if features.is_null() || frames == 0 || dim == 0 || beam == 0 {
            return Err(invalid("features, frames, dim and beam must be non-empty"));
        }
        let handles = (0..n_models)
            .map(|i| (*models.add(i)).as_ref().ok_or_else(|| invalid(format!("model {i} is null"))))
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = &handles[0].ck.vocab;
        if handles.iter().any(|m| &m.ck.vocab != vocab) {
            return Err(Failure::from(Error::Ensemble("models use different vocabularies".into())));
        }
        let flat = std::slice::from_raw_parts(features, frames * dim);
        let seq = FeatureSequence::new(flat.chunks(dim).map(<[f64]>::to_vec).collect())?;
        let words = if handles.len() == 1 {
            beam_search(&seq, &handles[0].ck.params, beam, DEFAULT_MAX_DECODE)?
        } else {
            let members: Vec<_> = handles.iter().map(|m| m.ck.params.clone()).collect();
            ensemble_decode(&seq, &members, beam, DEFAULT_MAX_DECODE)?
        };
        let caption = vocab.decode(&words).to_string();
        *out = CString::new(caption).map_err(|_| invalid("caption contains NUL"))?.into_raw();
        Ok(())
    })
}
