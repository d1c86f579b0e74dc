use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn enbedkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enbedkit"))
        .args(args)
        .env("ENBEDKIT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = enbedkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn random_dna(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| b"ACGT"[rng.random_range(0..4)] as char).collect()
}

fn write_corpus(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut text = String::new();
    for i in 0..4 {
        text.push_str(&format!(">r{i}\n{}\n", random_dna(&mut rng, 300)));
    }
    let p = dir.join("corpus.fa");
    fs::write(&p, text).unwrap();
    p
}

const FAST: [&str; 10] = [
    "--set",
    "pretrain.crop_len=48",
    "--set",
    "pretrain.batch_size=2",
    "--set",
    "pretrain.eval_crops=4",
    "--set",
    "pretrain.peak_lr=0.001",
    "--set",
    "pretrain.eval_interval=5",
];

fn pretrain(dir: &Path, corpus: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(out);
    let mut args = vec!["pretrain", s(corpus), "--out", s(&out), "--seed", "3", "--steps", "10"];
    args.extend(FAST);
    args.extend(extra);
    ok(&args);
    out
}

#[test]
fn corpus_stats_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fa");
    fs::write(&a, ">x\nACNNGT\n").unwrap();
    let out = dir.path().join("out");
    ok(&["corpus", s(&a), "--out", s(&out)]);
    let stats = json(out.join("stats.json"));
    assert_eq!(stats["total_bases"], 4);
    assert_eq!(stats["removed_bases"], 2);
    assert_eq!(fs::read_to_string(out.join("corpus.fa")).unwrap(), ">x\nACGT\n");
    assert!(out.join("run.json").exists());

    let b = dir.path().join("b.fa");
    fs::write(&b, ">y\nAAAA\n>z\nCCCC\n").unwrap();
    ok(&["corpus", s(&a), s(&b), "--out", s(&out)]);
    assert_eq!(json(out.join("stats.json"))["segments"], 3);

    let missing = dir.path().join("nope.fa");
    let bad = enbedkit(&["corpus", s(&missing), "--out", s(&out)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nope.fa"));
    assert!(out.join("FAILED").exists());
    assert!(!out.join("run.json").exists());
}

#[test]
fn rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"pretrain": {"stepz": 3}}"#).unwrap();
    let corpus = write_corpus(dir.path());
    let out = dir.path().join("o");
    let r = enbedkit(&["pretrain", s(&corpus), "--out", s(&out), "--config", s(&cfg)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("stepz"));
}

#[test]
fn pretrain_writes_checkpoint_metrics_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let a = pretrain(dir.path(), &corpus, "a", &[]);
    let b = pretrain(dir.path(), &corpus, "b", &[]);
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11, "{csv}");
    assert!(csv.starts_with("step,loss,lr,mlm_accuracy"));
    for f in [
        "metrics.csv",
        "config.json",
        "run.json",
        "report.json",
        "checkpoint/params.bin",
        "checkpoint/manifest.json",
        "checkpoint/optimizer.bin",
        "checkpoints/step-000005/params.bin",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = json(a.join("run.json"));
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["checkpoints"][2], "checkpoint");

    let c = dir.path().join("c");
    let mut args = vec!["pretrain", s(&corpus), "--out", s(&c), "--seed", "3", "--steps", "14"];
    let resume = a.join("checkpoint");
    args.extend(["--resume", s(&resume)]);
    args.extend(FAST);
    ok(&args);
    let resumed = fs::read_to_string(c.join("metrics.csv")).unwrap();
    let steps: Vec<&str> = resumed.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["11", "12", "13", "14"]);
}

fn write_tsv(path: &Path, rows: &[(String, String)]) {
    let text: String = rows.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect();
    fs::write(path, text).unwrap();
}

#[test]
fn noise_finetune_detect_mutate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let noise = d.join("noise");
    ok(&[
        "noise",
        "make",
        "--out",
        s(&noise),
        "--set",
        "noise.n_examples=100",
        "--set",
        "noise.dataset.read_len=32",
        "--set",
        "noise.reference.length=4096",
        "--set",
        "noise.reference.motif_fraction=0.2",
        "--set",
        "noise.reference.region_len=64",
    ]);
    let tsv = fs::read_to_string(noise.join("noise.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 100);
    let ones = tsv.lines().filter(|l| l.ends_with("\t1")).count();
    assert_eq!(ones, 50);
    let lines: Vec<&str> = tsv.lines().collect();
    let (train, held) = lines.split_at(80);

    let train_path = d.join("train.tsv");
    let held_path = d.join("held.tsv");
    fs::write(&train_path, train.join("\n") + "\n").unwrap();
    fs::write(&held_path, held.join("\n") + "\n").unwrap();
    let cls = d.join("cls");
    let fine = ["--steps", "4", "--set", "finetune.batch_size=2"];
    let mut args = vec!["finetune-classify", "--train", s(&train_path), "--heldout", s(&held_path), "--out", s(&cls)];
    args.extend(fine);
    ok(&args);
    assert!(json(cls.join("report.json"))["heldout"]["n"] == 20);

    let det = d.join("det");
    let ckpt = cls.join("checkpoint");
    ok(&["noise", "detect", "--checkpoint", s(&ckpt), "--input", s(&held_path), "--out", s(&det)]);
    assert_eq!(fs::read_to_string(det.join("detections.tsv")).unwrap().lines().count(), 21);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pairs: Vec<(String, String)> = (0..6)
        .map(|_| {
            let x = random_dna(&mut rng, 12);
            (x.clone(), x)
        })
        .collect();
    let pairs_path = d.join("pairs.tsv");
    write_tsv(&pairs_path, &pairs);
    let s2s = d.join("s2s");
    let mut args = vec!["finetune-seq2seq", "--train", s(&pairs_path), "--heldout", s(&pairs_path), "--out", s(&s2s)];
    args.extend(fine);
    ok(&args);

    let mutated = d.join("mut");
    let s2s_ckpt = s2s.join("checkpoint");
    ok(&[
        "mutate",
        "--checkpoint",
        s(&s2s_ckpt),
        "--noise-checkpoint",
        s(&ckpt),
        "--input",
        s(&pairs_path),
        "--out",
        s(&mutated),
    ]);
    let rows = fs::read_to_string(mutated.join("mutations.tsv")).unwrap();
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines.len(), 7);
    for l in &lines {
        assert_eq!(l.split('\t').count(), 1 + 5 * 3 + 2, "{l}");
    }
    assert!(mutated.join("report.json").exists());
}

#[test]
fn eval_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.txt");
    fs::write(&p, "ACGT\nTTAG\nGGGC\n").unwrap();
    let out = dir.path().join("e");
    ok(&["eval", "--predictions", s(&p), "--truths", s(&p), "--out", s(&out)]);
    let r = json(out.join("eval.json"));
    assert_eq!(r["top1"], 1.0);
    assert_eq!(r["mean_ld"], 0.0);
}

#[test]
fn attention_export_files_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let run = pretrain(dir.path(), &corpus, "p", &["--set", "pretrain.eval_interval=0"]);
    let ckpt = run.join("checkpoint");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seq = random_dna(&mut rng, 64);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["attn-export", "--checkpoint", s(&ckpt), "--sequence", &seq, "--out", s(&a)]);
    ok(&["attn-export", "--checkpoint", s(&ckpt), "--sequence", &seq, "--out", s(&b)]);
    let pgms: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    assert_eq!(pgms.len(), 4 * 4);
    for p in &pgms {
        let name = p.file_name().unwrap();
        let bytes = fs::read(p).unwrap();
        assert_eq!(bytes, fs::read(b.join(name)).unwrap());
        let header = String::from_utf8_lossy(&bytes[..16]).to_string();
        let dims: Vec<usize> = header.lines().nth(1).unwrap().split(' ').map(|x| x.parse().unwrap()).collect();
        let csv = fs::read_to_string(p.with_extension("csv")).unwrap();
        assert_eq!(dims[1], csv.lines().count());
        assert_eq!(dims[0], csv.lines().next().unwrap().split(',').count());
        assert_eq!(bytes.len() - header.find("255\n").unwrap() - 4, dims[0] * dims[1]);
    }
}
