use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn captionrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_captionrl"))
        .current_dir(dir)
        .env_remove("ENT_SCORER_URL")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &str = "\
synth.items = 30
synth.frames = 3
synth.feat_dim = 6
model.proj_dim = 6
model.enc_hidden = 8
model.dec_hidden = 8
model.embed_dim = 6
model.attn_dim = 6
train.xe_max_epochs = 2
train.rl_epochs = 2
train.eval_beam = 2
train.max_decode = 8
";

fn small_workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.cfg"), SMALL).unwrap();
    stdout(&captionrl(dir.path(), &["--config", "run.cfg", "generate", "--out", "data"]));
    dir
}

#[test]
fn score_identical_candidate_is_100() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("c.jsonl"),
        "{\"id\":\"a\",\"candidate\":\"a man is cutting meat\",\"references\":[\"a man is cutting meat\"]}\n\
         {\"id\":\"b\",\"candidate\":\"a dog runs\",\"references\":[\"a dog runs in the park\"]}\n",
    )
    .unwrap();
    let out = stdout(&captionrl(dir.path(), &["score", "--candidates", "c.jsonl"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("id,bleu4,rouge_l,cider_d,cident,ent,penalized"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "a");
    assert_eq!(row[1], "100.000000");
    assert_eq!(row[2], "100.000000");
    assert_eq!(row[6], "false");
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = TempDir::new().unwrap();
    let code = |args: &[&str]| captionrl(dir.path(), args).status.code();

    assert_eq!(code(&["train-xe", "--bogus"]), Some(2));
    assert_eq!(code(&["train-xe"]), Some(2), "missing corpus is a config error");

    fs::write(dir.path().join("bad.cfg"), "train.lr_xe = -1\n").unwrap();
    assert_eq!(code(&["--config", "bad.cfg", "config"]), Some(2));
    fs::write(dir.path().join("typo.cfg"), "train.lr = 1\n").unwrap();
    assert_eq!(code(&["--config", "typo.cfg", "config"]), Some(2));

    fs::write(dir.path().join("broken.jsonl"), "{not json\n").unwrap();
    assert_eq!(code(&["ingest", "--corpus", "broken.jsonl"]), Some(3));
    assert_eq!(code(&["score", "--candidates", "broken.jsonl"]), Some(3));

    // nothing listens on port 9 of the loopback
    fs::write(
        dir.path().join("c.jsonl"),
        "{\"id\":\"a\",\"candidate\":\"x\",\"references\":[\"y\"]}\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("remote.cfg"),
        "scorer.url = http://127.0.0.1:9/score\nscorer.timeout_secs = 1\n",
    )
    .unwrap();
    assert_eq!(code(&["--config", "remote.cfg", "score", "--candidates", "c.jsonl"]), Some(4));
}

#[test]
fn config_output_round_trips() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("a.cfg"), "train.seed = 9\nreward.lambda = 0.2\n").unwrap();
    let printed = stdout(&captionrl(dir.path(), &["--config", "a.cfg", "config"]));
    assert!(printed.contains("train.seed = 9\n"));
    assert!(printed.contains("reward.lambda = 0.2\n"));
    fs::write(dir.path().join("b.cfg"), &printed).unwrap();
    assert_eq!(stdout(&captionrl(dir.path(), &["--config", "b.cfg", "config"])), printed);
}

#[test]
fn ingest_reports_split_sizes() {
    let dir = small_workspace();
    let out = stdout(&captionrl(
        dir.path(),
        &["ingest", "--corpus", "data/corpus.jsonl", "--out", "index.csv"],
    ));
    assert!(out.starts_with("items 30 feat_dim 6"), "{out}");
    let index = fs::read_to_string(dir.path().join("index.csv")).unwrap();
    assert_eq!(index.lines().count(), 31);
}

#[test]
fn end_to_end_pipeline() {
    let dir = small_workspace();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "run.cfg"];
        full.extend_from_slice(args);
        stdout(&captionrl(dir.path(), &full))
    };
    let data = ["--corpus", "data/corpus.jsonl", "--lexicon", "data/lexicon.json"];

    run(&[&["train-xe"][..], &data, &["--out", "ck"]].concat());
    assert!(dir.path().join("ck/xe_seed1.ckpt").exists());
    let log = fs::read_to_string(dir.path().join("ck/xe_seed1_log.csv")).unwrap();
    assert!(log.starts_with("phase,epoch,train_xe_loss,dev_xe_loss"));

    run(&[
        &["train-rl"][..],
        &data,
        &["--checkpoint", "ck/xe_seed1.ckpt", "--reward", "cident", "--out", "ck"],
    ]
    .concat());
    assert!(dir.path().join("ck/cident_seed1.ckpt").exists());

    let single = run(&[&["evaluate"][..], &data, &["--checkpoint", "ck/cident_seed1.ckpt"]].concat());
    assert!(single.lines().count() > 1);
    let ensemble = run(&[
        &["evaluate"][..],
        &data,
        &["--ensemble", "ck/cident_seed1.ckpt", "ck/cident_seed1.ckpt", "ck/cident_seed1.ckpt"],
    ]
    .concat());
    assert_eq!(single, ensemble, "an ensemble of one model repeated must decode like the model");

    let report = run(&["report", "--log", "ck/xe_seed1_log.csv", "--log", "ck/cident_seed1_log.csv"]);
    assert_eq!(report.lines().count(), 3, "{report}");
}

#[test]
fn entailment_reward_needs_a_scorer() {
    let dir = small_workspace();
    run_xe(&dir);
    let o = captionrl(
        dir.path(),
        &[
            "--config",
            "run.cfg",
            "train-rl",
            "--corpus",
            "data/corpus.jsonl",
            "--checkpoint",
            "ck/xe_seed1.ckpt",
            "--reward",
            "cident",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]"));
}

fn run_xe(dir: &TempDir) {
    stdout(&captionrl(
        dir.path(),
        &["--config", "run.cfg", "train-xe", "--corpus", "data/corpus.jsonl", "--out", "ck"],
    ));
}
