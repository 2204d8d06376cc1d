//! End-to-end tests of the `glyce` binary: every subcommand through a
//! real process, checking outputs, determinism, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn glyce() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glyce"));
    // Tests control seeds explicitly; a stray environment seed would
    // change outputs under it.
    cmd.env_remove("GLYCE_SEED");
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = glyce().args(args).output().expect("spawn glyce");
    assert!(
        out.status.success(),
        "glyce {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str], want_code: i32) -> String {
    let out = glyce().args(args).output().expect("spawn glyce");
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(
        out.status.code(),
        Some(want_code),
        "glyce {args:?} exit code\nstderr: {stderr}"
    );
    assert_eq!(stderr.trim().lines().count(), 1, "one-line diagnostic, got: {stderr}");
    stderr
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// A small atlas + tagging corpus fixture shared by the heavier tests.
struct Fixture {
    #[allow(dead_code)]
    dir: TempDir,
    atlas: PathBuf,
    corpus: PathBuf,
    root: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let atlas = root.join("a.gatl");
    let corpus = root.join("t.corpus");
    run_ok(&["gen-atlas", "--chars", "48", "--seed", "3", "--out", &s(&atlas)]);
    run_ok(&[
        "gen-corpus", "--task", "tagging", "--atlas", &s(&atlas),
        "--set", "sentences=60", "--seed", "3", "--out", &s(&corpus),
    ]);
    Fixture { dir, atlas, corpus, root }
}

/// Fast train flags: one epoch per stage, a small model.
fn tiny_train(fx: &Fixture, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = [
        "train", "--atlas", &s(&fx.atlas), "--corpus", &s(&fx.corpus),
        "--out", &s(out), "--seed", "3",
        "--set", "stage_a=1", "--set", "stage_b=1", "--set", "stage_c=1",
        "--set", "d_ctx=16", "--set", "layers=1", "--set", "heads=2",
        "--set", "d_ff=32", "--set", "c_conv=8", "--set", "c_mid=8",
        "--set", "d_glyph=16", "--set", "groups2=8",
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    args.extend(extra.iter().map(|x| x.to_string()));
    let refs: Vec<&str> = args.iter().map(|x| x.as_str()).collect();
    run_ok(&refs)
}

#[test]
fn gen_atlas_is_deterministic_and_wellformed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.gatl");
    let b = dir.path().join("b.gatl");
    run_ok(&["gen-atlas", "--chars", "30", "--scripts", "2", "--dfont", "12", "--seed", "5", "--out", &s(&a)]);
    run_ok(&["gen-atlas", "--chars", "30", "--scripts", "2", "--dfont", "12", "--seed", "5", "--out", &s(&b)]);
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b, "same flags, same file");
    assert_eq!(&bytes_a[0..4], b"GATL");
    assert_eq!(bytes_a.len(), 17 + 30 * 2 * 144);

    let c = dir.path().join("c.gatl");
    run_ok(&["gen-atlas", "--chars", "30", "--scripts", "2", "--dfont", "12", "--seed", "6", "--out", &s(&c)]);
    assert_ne!(bytes_a, std::fs::read(&c).unwrap(), "different seed, different atlas");
}

#[test]
fn glyce_seed_env_is_a_fallback_for_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let by_flag = dir.path().join("flag.gatl");
    let by_env = dir.path().join("env.gatl");
    let env_loses = dir.path().join("env2.gatl");
    run_ok(&["gen-atlas", "--chars", "20", "--seed", "9", "--out", &s(&by_flag)]);

    let out = glyce()
        .env("GLYCE_SEED", "9")
        .args(["gen-atlas", "--chars", "20", "--out", &s(&by_env)])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&by_flag).unwrap(), std::fs::read(&by_env).unwrap());

    let out = glyce()
        .env("GLYCE_SEED", "1")
        .args(["gen-atlas", "--chars", "20", "--seed", "9", "--out", &s(&env_loses)])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&by_flag).unwrap(),
        std::fs::read(&env_loses).unwrap(),
        "explicit --seed beats GLYCE_SEED"
    );

    let out = glyce()
        .env("GLYCE_SEED", "not-a-number")
        .args(["gen-atlas", "--chars", "20", "--out", &s(&by_env)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_corpus_is_deterministic_per_seed() {
    let fx = fixture();
    let again = fx.root.join("again.corpus");
    run_ok(&[
        "gen-corpus", "--task", "tagging", "--atlas", &s(&fx.atlas),
        "--set", "sentences=60", "--seed", "3", "--out", &s(&again),
    ]);
    assert_eq!(std::fs::read(&fx.corpus).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn train_writes_a_reproducible_run_dir_and_eval_agrees() {
    let fx = fixture();
    let run_a = fx.root.join("runa");
    let run_b = fx.root.join("runb");
    tiny_train(&fx, &run_a, &[]);
    tiny_train(&fx, &run_b, &[]);

    for name in ["config.txt", "history.jsonl", "checkpoint.gckp", "metrics.json"] {
        let a = std::fs::read(run_a.join(name)).unwrap();
        let b = std::fs::read(run_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // The echoed config names the inputs and the seed.
    let config = std::fs::read_to_string(run_a.join("config.txt")).unwrap();
    assert!(config.contains("seed=3"), "{config}");
    assert!(config.contains("stage_a=1"), "{config}");
    assert!(config.contains(&format!("atlas={}", s(&fx.atlas))), "{config}");

    // Evaluating the checkpoint on dev reproduces metrics.json.
    let eval = run_ok(&[
        "eval", "--checkpoint", &s(&run_a.join("checkpoint.gckp")),
        "--atlas", &s(&fx.atlas), "--corpus", &s(&fx.corpus),
        "--split", "dev",
        "--set", "d_ctx=16", "--set", "layers=1", "--set", "heads=2",
        "--set", "d_ff=32", "--set", "c_conv=8", "--set", "c_mid=8",
        "--set", "d_glyph=16", "--set", "groups2=8",
    ]);
    let eval_line = String::from_utf8(eval.stdout).unwrap();
    let metrics = std::fs::read_to_string(run_a.join("metrics.json")).unwrap();
    assert_eq!(eval_line.trim(), metrics.trim());

    // History carries one record per epoch with the decayed lambda.
    let history = std::fs::read_to_string(run_a.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.lines().next().unwrap().contains("\"epoch\":0"));
}

#[test]
fn resume_matches_uninterrupted_training() {
    let fx = fixture();
    let straight = fx.root.join("straight");
    let paused = fx.root.join("paused");
    let resumed = fx.root.join("resumed");
    tiny_train(&fx, &straight, &[]);
    tiny_train(&fx, &paused, &["--max-epochs", "2"]);
    let ckpt = s(&paused.join("checkpoint.gckp"));
    tiny_train(&fx, &resumed, &["--resume", &ckpt]);

    assert_eq!(
        std::fs::read(straight.join("checkpoint.gckp")).unwrap(),
        std::fs::read(resumed.join("checkpoint.gckp")).unwrap(),
        "resumed checkpoint differs from uninterrupted training"
    );
    assert_eq!(
        std::fs::read(straight.join("history.jsonl")).unwrap(),
        std::fs::read(resumed.join("history.jsonl")).unwrap()
    );
}

#[test]
fn lambda_zero_runs_the_task_only_objective() {
    let fx = fixture();
    let run = fx.root.join("lam0");
    tiny_train(&fx, &run, &["--strategy", "joint", "--lambda0", "0"]);
    let history = std::fs::read_to_string(run.join("history.jsonl")).unwrap();
    for line in history.lines() {
        assert!(line.contains("\"lambda\":0.0"), "{line}");
        assert!(line.contains("\"cls_loss\":0.0"), "{line}");
    }
}

#[test]
fn embed_exports_one_row_per_character() {
    let fx = fixture();
    let run = fx.root.join("run");
    tiny_train(&fx, &run, &[]);
    let table = fx.root.join("emb.txt");
    run_ok(&[
        "embed", "--checkpoint", &s(&run.join("checkpoint.gckp")),
        "--atlas", &s(&fx.atlas), "--out", &s(&table),
        "--set", "d_ctx=16", "--set", "layers=1", "--set", "heads=2",
        "--set", "d_ff=32", "--set", "c_conv=8", "--set", "c_mid=8",
        "--set", "d_glyph=16", "--set", "groups2=8",
    ]);
    let text = std::fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("char_id 16"));
    assert_eq!(lines.count(), 48);
}

#[test]
fn ablate_image_cls_grid_has_the_two_rows() {
    let fx = fixture();
    let out = fx.root.join("ablate");
    run_ok(&[
        "ablate", "--grid", "image-cls",
        "--atlas", &s(&fx.atlas), "--corpus", &s(&fx.corpus),
        "--out", &s(&out), "--seed", "3",
        "--set", "stage_a=1", "--set", "stage_b=0", "--set", "stage_c=1",
        "--set", "strategy=joint",
        "--set", "d_ctx=16", "--set", "layers=1", "--set", "heads=2",
        "--set", "d_ff=32", "--set", "c_conv=8", "--set", "c_mid=8",
        "--set", "d_glyph=16", "--set", "groups2=8",
    ]);
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("W image-cls")), "{report}");
    let base_row = report.lines().find(|l| l.starts_with("WO image-cls")).unwrap();
    assert!(base_row.trim_end().ends_with("(baseline)"), "{report}");
    let runs = std::fs::read_to_string(out.join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 2);
    assert!(runs.lines().all(|l| l.contains("\"dataset\":")));
}

#[test]
fn error_categories_have_distinct_exit_codes() {
    let fx = fixture();
    let run = fx.root.join("run");
    tiny_train(&fx, &run, &[]);
    let ckpt = s(&run.join("checkpoint.gckp"));

    // 2: bad config key.
    let msg = run_err(
        &["train", "--atlas", &s(&fx.atlas), "--corpus", &s(&fx.corpus),
          "--out", &s(&fx.root.join("x")), "--set", "momentum=0.9"],
        2,
    );
    assert!(msg.contains("unknown config key"), "{msg}");

    // 3: missing file.
    let msg = run_err(
        &["train", "--atlas", &s(&fx.root.join("nope.gatl")),
          "--corpus", &s(&fx.corpus), "--out", &s(&fx.root.join("x"))],
        3,
    );
    assert!(msg.contains("io error"), "{msg}");

    // 4: corrupt file.
    let bad = fx.root.join("bad.gatl");
    let mut bytes = std::fs::read(&fx.atlas).unwrap();
    bytes.truncate(bytes.len() - 5);
    std::fs::write(&bad, &bytes).unwrap();
    let msg = run_err(
        &["train", "--atlas", &s(&bad), "--corpus", &s(&fx.corpus),
          "--out", &s(&fx.root.join("x"))],
        4,
    );
    assert!(msg.contains("pixel block"), "{msg}");

    // 5: valid inputs that disagree (corpus task vs config task).
    let msg = run_err(
        &["train", "--atlas", &s(&fx.atlas), "--corpus", &s(&fx.corpus),
          "--out", &s(&fx.root.join("x")), "--set", "task=classification"],
        5,
    );
    assert!(msg.contains("mismatch"), "{msg}");

    // 5: checkpoint against a differently shaped model.
    let msg = run_err(
        &["eval", "--checkpoint", &ckpt, "--atlas", &s(&fx.atlas),
          "--corpus", &s(&fx.corpus), "--split", "dev"],
        5,
    );
    assert!(msg.contains("checkpoint does not fit"), "{msg}");
}

#[test]
fn corrupt_checkpoint_and_corpus_are_format_errors() {
    let fx = fixture();
    let run = fx.root.join("run");
    tiny_train(&fx, &run, &[]);

    let bad_ckpt = fx.root.join("bad.gckp");
    let mut bytes = std::fs::read(run.join("checkpoint.gckp")).unwrap();
    bytes.truncate(bytes.len() / 3);
    std::fs::write(&bad_ckpt, &bytes).unwrap();
    let msg = run_err(
        &["eval", "--checkpoint", &s(&bad_ckpt), "--atlas", &s(&fx.atlas),
          "--corpus", &s(&fx.corpus), "--split", "dev"],
        4,
    );
    assert!(msg.contains("format error"), "{msg}");

    let bad_corpus = fx.root.join("bad.corpus");
    let text = std::fs::read_to_string(&fx.corpus).unwrap();
    std::fs::write(&bad_corpus, text.replace("# scheme=bmes\n", "")).unwrap();
    let msg = run_err(
        &["train", "--atlas", &s(&fx.atlas), "--corpus", &s(&bad_corpus),
          "--out", &s(&fx.root.join("x"))],
        4,
    );
    assert!(msg.contains("scheme"), "{msg}");
}

#[test]
fn classification_and_pair_tasks_train_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let atlas = root.join("a.gatl");
    run_ok(&["gen-atlas", "--chars", "48", "--seed", "4", "--out", &s(&atlas)]);

    for (task, size_key, n) in [
        ("classification", "docs", "40"),
        ("pair", "pairs", "40"),
    ] {
        let corpus = root.join(format!("{task}.corpus"));
        run_ok(&[
            "gen-corpus", "--task", task, "--atlas", &s(&atlas),
            "--set", &format!("{size_key}={n}"), "--seed", "4", "--out", &s(&corpus),
        ]);
        let run = root.join(format!("{task}-run"));
        run_ok(&[
            "train", "--atlas", &s(&atlas), "--corpus", &s(&corpus),
            "--out", &s(&run), "--seed", "4",
            "--set", &format!("task={task}"),
            "--set", "stage_a=1", "--set", "stage_b=1", "--set", "stage_c=1",
            "--set", "d_ctx=16", "--set", "layers=1", "--set", "heads=2",
            "--set", "d_ff=32", "--set", "c_conv=8", "--set", "c_mid=8",
            "--set", "d_glyph=16", "--set", "groups2=8",
        ]);
        let metrics = std::fs::read_to_string(run.join("metrics.json")).unwrap();
        assert!(metrics.contains("\"accuracy\":"), "{task}: {metrics}");
        assert!(metrics.contains("\"f1\":null"), "{task}: {metrics}");
    }
}
