use std::ffi::{c_char, CStr, CString};
use std::ptr;

use captionrl::model::{beam_search, Checkpoint, ModelDims, ModelParams, Vocab, DEFAULT_MAX_DECODE};
use captionrl::synth::{generate_synthetic, SyntheticSpec};
use captionrl_ffi::*;
use tempfile::TempDir;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(crl_last_error()) }.to_string_lossy().into_owned()
}

struct Refs {
    _owned: Vec<CString>,
    ptrs: Vec<*const c_char>,
}

fn refs(list: &[&str]) -> Refs {
    let owned: Vec<CString> = list.iter().map(|s| c(s)).collect();
    let ptrs = owned.iter().map(|s| s.as_ptr()).collect();
    Refs { _owned: owned, ptrs }
}

struct Fixture {
    dir: TempDir,
    spec: SyntheticSpec,
}

fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let spec = SyntheticSpec {
        items: 12,
        ..SyntheticSpec::default()
    };
    let (corpus, lex) = generate_synthetic(&spec, 3).unwrap();
    corpus.save(&dir.path().join("corpus.jsonl")).unwrap();
    lex.save(&dir.path().join("lexicon.json")).unwrap();
    let vocab = Vocab::build(corpus.items().iter().flat_map(|it| &it.references), 40).unwrap();
    for seed in [1, 2] {
        let dims = ModelDims {
            feat_dim: spec.feat_dim,
            proj_dim: 6,
            enc_hidden: 8,
            dec_hidden: 8,
            embed_dim: 6,
            attn_dim: 6,
            vocab_size: vocab.len(),
        };
        let ck = Checkpoint::new(ModelParams::init_uniform(dims, 0.5, seed).unwrap(), vocab.clone()).unwrap();
        ck.save(&dir.path().join(format!("m{seed}.ckpt"))).unwrap();
    }
    Fixture { dir, spec }
}

impl Fixture {
    fn path(&self, name: &str) -> CString {
        c(self.dir.path().join(name).to_str().unwrap())
    }

    fn corpus(&self) -> *mut CrlCorpus {
        let mut h = ptr::null_mut();
        assert_eq!(
            unsafe { crl_corpus_load(self.path("corpus.jsonl").as_ptr(), &mut h) },
            CrlStatus::Ok
        );
        h
    }

    fn scorer(&self) -> *mut CrlScorer {
        let mut h = ptr::null_mut();
        assert_eq!(
            unsafe { crl_scorer_lexical(self.path("lexicon.json").as_ptr(), &mut h) },
            CrlStatus::Ok
        );
        h
    }

    fn model(&self, name: &str) -> *mut CrlModel {
        let mut h = ptr::null_mut();
        assert_eq!(
            unsafe { crl_model_load(self.path(name).as_ptr(), &mut h) },
            CrlStatus::Ok,
            "{}",
            last_error()
        );
        h
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(crl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn metrics_match_library() {
    let f = fixture();
    let corpus = f.corpus();
    let r = refs(&["a man is cutting meat", "a man slices meat"]);
    let cand = c("a man is cutting meat");
    let (mut b, mut rl, mut cd) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(crl_bleu4(cand.as_ptr(), r.ptrs.as_ptr(), 2, &mut b), CrlStatus::Ok);
        assert_eq!(crl_rouge_l(cand.as_ptr(), r.ptrs.as_ptr(), 2, &mut rl), CrlStatus::Ok);
        assert_eq!(crl_cider_d(corpus, cand.as_ptr(), r.ptrs.as_ptr(), 2, &mut cd), CrlStatus::Ok);
    }
    assert_eq!(b, 1.0);
    assert_eq!(rl, 1.0);
    assert!(cd > 0.0);
    let mut n = 0;
    assert_eq!(unsafe { crl_corpus_len(corpus, &mut n) }, CrlStatus::Ok);
    assert_eq!(n, 12);
    unsafe { crl_corpus_free(corpus) };
}

#[test]
fn contradiction_is_penalized() {
    let f = fixture();
    let (corpus, scorer) = (f.corpus(), f.scorer());
    let r = refs(&["a man is playing football", "the man is playing the football"]);
    let mut out = CrlReward {
        value: 0.0,
        base_value: 0.0,
        entailment: 0.0,
        penalized: 0,
    };
    let cand = c("a woman is playing football");
    assert_eq!(
        unsafe { crl_cident(corpus, scorer, cand.as_ptr(), r.ptrs.as_ptr(), 2, 0.45, 0.33, &mut out) },
        CrlStatus::Ok
    );
    assert_eq!(out.penalized, 1);
    assert!(out.entailment < 0.33);
    assert_eq!(out.value, out.base_value - 0.45);

    let mut e = 0.0;
    let (p, h) = (c("a man is playing football"), c("a man is playing"));
    assert_eq!(unsafe { crl_entailment(scorer, p.as_ptr(), h.as_ptr(), &mut e) }, CrlStatus::Ok);
    assert!(e >= 0.33);
    unsafe {
        crl_scorer_free(scorer);
        crl_corpus_free(corpus);
    }
}

#[test]
fn decode_matches_library_and_ensembles() {
    let f = fixture();
    let (m1, m2) = (f.model("m1.ckpt"), f.model("m2.ckpt"));
    let ck = Checkpoint::load(&f.dir.path().join("m1.ckpt")).unwrap();
    let (corpus, _) = generate_synthetic(&f.spec, 3).unwrap();
    let item = &corpus.items()[0];
    let flat: Vec<f64> = item.features.frames().concat();
    let frames = item.features.len();
    let dim = item.features.dim();
    let decode = |models: &[*const CrlModel]| {
        let mut out = ptr::null_mut();
        let st = unsafe { crl_decode(models.as_ptr(), models.len(), flat.as_ptr(), frames, dim, 3, &mut out) };
        assert_eq!(st, CrlStatus::Ok, "{}", last_error());
        let s = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
        unsafe { crl_string_free(out) };
        s
    };
    let want = ck
        .vocab
        .decode(&beam_search(&item.features, &ck.params, 3, DEFAULT_MAX_DECODE).unwrap())
        .to_string();
    assert_eq!(decode(&[m1]), want);
    assert_eq!(decode(&[m1, m1, m1]), want);
    decode(&[m1, m2]);
    unsafe {
        crl_model_free(m1);
        crl_model_free(m2);
    }
}

#[test]
fn errors_set_status_and_message() {
    let f = fixture();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { crl_corpus_load(ptr::null(), &mut h) }, CrlStatus::InvalidArgument);
    assert!(last_error().contains("null"));
    assert_eq!(
        unsafe { crl_corpus_load(f.path("missing.jsonl").as_ptr(), &mut h) },
        CrlStatus::Data
    );
    assert!(!last_error().is_empty());
    assert!(h.is_null());

    let mut b = 0.0;
    let cand = c("a dog");
    assert_eq!(
        unsafe { crl_bleu4(cand.as_ptr(), ptr::null(), 0, &mut b) },
        CrlStatus::InvalidArgument
    );

    // unreachable endpoint
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { crl_scorer_remote(c("http://127.0.0.1:9/x").as_ptr(), 1.0, &mut s) },
        CrlStatus::Ok
    );
    let mut e = 0.0;
    assert_eq!(
        unsafe { crl_entailment(s, cand.as_ptr(), cand.as_ptr(), &mut e) },
        CrlStatus::ScorerUnavailable
    );
    unsafe { crl_scorer_free(s) };

    let m = f.model("m1.ckpt");
    let mut out = ptr::null_mut();
    let feats = [0.0; 5];
    let models = [m as *const CrlModel];
    assert_eq!(
        unsafe { crl_decode(models.as_ptr(), 1, feats.as_ptr(), 1, 5, 2, &mut out) },
        CrlStatus::Data
    );
    unsafe { crl_model_free(m) };

    let ok = c("a");
    assert_eq!(
        unsafe { crl_bleu4(ok.as_ptr(), refs(&["a"]).ptrs.as_ptr(), 1, &mut b) },
        CrlStatus::Ok
    );
    assert_eq!(last_error(), "");
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/captionrl.h")).unwrap();
    for name in [
        "crl_last_error",
        "crl_version",
        "crl_string_free",
        "crl_corpus_load",
        "crl_corpus_len",
        "crl_scorer_lexical",
        "crl_scorer_remote",
        "crl_entailment",
        "crl_bleu4",
        "crl_rouge_l",
        "crl_cider_d",
        "crl_cident",
        "crl_model_load",
        "crl_decode",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
