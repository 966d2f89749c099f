//! End-to-end checks of the command-line interface: determinism of generated
//! artifacts, the documented exit-code contract, manifest emission, and
//! equivalence of flag spellings.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sedr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sedr"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = sedr().args(args).output().expect("spawn sedr");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Generate a small corpus compatible with the `tiny` profile (vocab ≤ 256).
fn gen_corpus(dir: &Path, seed: u64) {
    run_ok(&[
        "gen-corpus",
        "--out-dir",
        dir.to_str().unwrap(),
        "--num-docs",
        "40",
        "--vocab-size",
        "256",
        "--train-queries",
        "24",
        "--test-queries",
        "8",
        "--seed",
        &seed.to_string(),
    ]);
}

const CORPUS_FILES: [&str; 7] = [
    "corpus.tsv",
    "queries.train.tsv",
    "queries.test.tsv",
    "qrels.train.txt",
    "qrels.test.txt",
    "metadata.tsv",
    "triples.train.tsv",
];

/// Train a quick tiny-profile checkpoint on the corpus in `dir`.
fn train_tiny(dir: &Path, out: &Path, extra: &[&str]) {
    let corpus = dir.join("corpus.tsv");
    let queries = dir.join("queries.train.tsv");
    let triples = dir.join("triples.train.tsv");
    let mut args = vec![
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--queries",
        queries.to_str().unwrap(),
        "--triples",
        triples.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--profile",
        "tiny",
        "--tied",
        "--batch-size",
        "4",
        "--epochs",
        "1",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
}

#[test]
fn gen_corpus_is_byte_deterministic_under_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen_corpus(&a, 11);
    gen_corpus(&b, 11);
    for name in CORPUS_FILES {
        assert_eq!(
            read(&a.join(name)),
            read(&b.join(name)),
            "{name} differs between identical seeds"
        );
    }
    let c = tmp.path().join("c");
    gen_corpus(&c, 12);
    assert_ne!(
        read(&a.join("corpus.tsv")),
        read(&c.join("corpus.tsv")),
        "different seeds must produce different corpora"
    );
}

#[test]
fn seed_env_variable_matches_explicit_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let flagged = tmp.path().join("flagged");
    gen_corpus(&flagged, 7);
    let env_dir = tmp.path().join("env");
    let out = sedr()
        .env("SEDR_SEED", "7")
        .args([
            "gen-corpus",
            "--out-dir",
            env_dir.to_str().unwrap(),
            "--num-docs",
            "40",
            "--vocab-size",
            "256",
            "--train-queries",
            "24",
            "--test-queries",
            "8",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(&flagged.join("corpus.tsv")), read(&env_dir.join("corpus.tsv")));
}

#[test]
fn cache_size_zero_and_no_cache_flag_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    gen_corpus(&dir, 3);
    let a = tmp.path().join("zero.ckpt");
    let b = tmp.path().join("flag.ckpt");
    train_tiny(&dir, &a, &["--cache-size", "0"]);
    train_tiny(&dir, &b, &["--no-cache-negative"]);
    assert_eq!(read(&a), read(&b), "checkpoints differ");
    let log = |p: &Path| {
        let mut name = p.file_name().unwrap().to_os_string();
        name.push(".log.tsv");
        p.with_file_name(name)
    };
    assert_eq!(read(&log(&a)), read(&log(&b)), "loss trajectories differ");
}

#[test]
fn pipeline_produces_manifests_and_identical_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    gen_corpus(&dir, 9);
    assert!(dir.join("corpus.tsv.manifest.json").is_file());

    let ckpt = tmp.path().join("model.ckpt");
    train_tiny(&dir, &ckpt, &[]);
    assert!(tmp.path().join("model.ckpt.manifest.json").is_file());

    let index = |out: &Path| {
        run_ok(&[
            "index",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--corpus",
            dir.join("corpus.tsv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    };
    let idx_a = tmp.path().join("a.idx");
    let idx_b = tmp.path().join("b.idx");
    index(&idx_a);
    index(&idx_b);
    assert!(tmp.path().join("a.idx.manifest.json").is_file());
    assert_eq!(read(&idx_a), read(&idx_b), "index rerun is not byte-identical");

    let search = |out: &Path| {
        run_ok(&[
            "search",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--index",
            idx_a.to_str().unwrap(),
            "--queries",
            dir.join("queries.test.tsv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--top-n",
            "20",
        ]);
    };
    let run_a = tmp.path().join("a.trec");
    let run_b = tmp.path().join("b.trec");
    search(&run_a);
    search(&run_b);
    assert!(tmp.path().join("a.trec.manifest.json").is_file());
    assert_eq!(read(&run_a), read(&run_b), "search rerun is not byte-identical");

    let eval = run_ok(&[
        "eval",
        "--run",
        run_a.to_str().unwrap(),
        "--qrels",
        dir.join("qrels.test.txt").to_str().unwrap(),
    ]);
    let stdout = String::from_utf8(eval.stdout).unwrap();
    let machine = stdout.lines().last().unwrap_or_default();
    assert!(
        machine.starts_with("mrr_at_100=") && machine.contains("num_queries=8"),
        "unexpected machine-readable line: {machine}"
    );
}

#[test]
fn eval_reports_perfect_metrics_for_a_perfect_run() {
    let tmp = tempfile::tempdir().unwrap();
    let qrels = tmp.path().join("q.txt");
    let run = tmp.path().join("r.trec");
    std::fs::write(&qrels, "1 0 10 1\n2 0 20 1\n3 0 30 1\n").unwrap();
    std::fs::write(
        &run,
        "1 Q0 10 1 9.0 t\n1 Q0 11 2 8.0 t\n2 Q0 20 1 9.0 t\n3 Q0 30 1 9.0 t\n",
    )
    .unwrap();
    let out = run_ok(&["eval", "--run", run.to_str().unwrap(), "--qrels", qrels.to_str().unwrap()]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let machine = stdout.lines().last().unwrap();
    assert_eq!(
        machine,
        "mrr_at_100=1 ndcg_at_10=1 recall_at_100=1 num_queries=3"
    );
}

#[test]
fn gradcheck_command_passes_on_the_tiny_profile() {
    let out = run_ok(&["gradcheck", "--samples", "40", "--seed", "2"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("PASS"), "expected PASS in: {stdout}");
}

#[test]
fn exit_codes_follow_the_documented_contract() {
    // unknown flag → usage error 2 (clap)
    let out = sedr().arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // missing input file → 2, message names the path
    let out = sedr()
        .args(["index", "--checkpoint", "missing.ckpt", "--corpus", "missing.tsv", "--out", "x.idx"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.ckpt"), "stderr must name the file: {stderr}");

    // corrupt checkpoint → numerical/format contract failure 3
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let dir = tmp.path().join("data");
    gen_corpus(&dir, 4);
    let out = sedr()
        .args([
            "index",
            "--checkpoint",
            bad.to_str().unwrap(),
            "--corpus",
            dir.join("corpus.tsv").to_str().unwrap(),
            "--out",
            tmp.path().join("x.idx").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
