use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{DerivedSeeds, RunConfig, StepsTarget};
use super::{Command, Common, NoiseAction};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::genomics_io::{clean_sequence, load_labeled_tsv, load_pairs_tsv, read_fasta_file, write_fasta, write_labeled_tsv, FastaRecord};
use crate::model::{load_checkpoint, save_checkpoint, Model};
use crate::tasks::{
    build_noise_dataset, classification_metrics, detect_noise, generate_mutation, generation_metrics, simulate_reference_with,
    write_mutation_tsv, ReferenceSim,
};
use crate::tokenizer::encode;
use crate::training::{
    finetune_classifier, finetune_seq2seq, pretrain, split_heldout, write_metrics_csv, ResumeState, StepLog,
};

pub const MANIFEST_NAME: &str = "run.json";
const CONFIG_NAME: &str = "config.json";
const FAILED_NAME: &str = "FAILED";

/// Written last; lists every artifact relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub seeds: DerivedSeeds,
    pub config: String,
    pub config_sha256: String,
    pub metrics: Vec<String>,
    pub checkpoints: Vec<String>,
    pub outputs: Vec<String>,
}

struct Run {
    out: PathBuf,
    cfg: RunConfig,
    seeds: DerivedSeeds,
    manifest: RunManifest,
}

impl Run {
    fn start(common: &Common, command: &str, target: StepsTarget, paths: Vec<(&str, Value)>) -> Result<Self> {
        let (cfg, seeds) = RunConfig::resolve(&common.sources(target, paths))?;
        let out = common.out.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        for stale in [MANIFEST_NAME, FAILED_NAME] {
            let p = out.join(stale);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        write_atomic(&out.join(CONFIG_NAME), cfg.to_pretty_json()?.as_bytes())?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: cfg.seed,
            seeds,
            config: CONFIG_NAME.into(),
            config_sha256: cfg.digest()?,
            metrics: Vec::new(),
            checkpoints: Vec::new(),
            outputs: Vec::new(),
        };
        Ok(Self { out, cfg, seeds, manifest })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.out.join(rel), bytes)?;
        self.manifest.outputs.push(rel.into());
        Ok(())
    }

    fn write_json(&mut self, rel: &str, value: &Value) -> Result<()> {
        self.write(rel, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
    }

    fn write_metrics(&mut self, log: &[StepLog]) -> Result<()> {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, log).map_err(|e| Error::io(self.out.join("metrics.csv"), e))?;
        write_atomic(&self.out.join("metrics.csv"), &buf)?;
        self.manifest.metrics.push("metrics.csv".into());
        Ok(())
    }

    fn save(&mut self, rel: &str, model: &Model, step: u64, optimizer: Option<&crate::numerics::AdamWState>) -> Result<()> {
        save_checkpoint(&self.out.join(rel), model, step, optimizer)?;
        self.manifest.checkpoints.push(rel.into());
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        write_atomic(&self.out.join(MANIFEST_NAME), text.as_bytes())
    }

    fn fresh_or_loaded(&self, checkpoint: Option<&Path>) -> Result<Model> {
        match checkpoint {
            Some(p) => Ok(load_checkpoint(p)?.model),
            None => Model::build(self.cfg.model.resolve()?, self.seeds.model),
        }
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::config(format!("missing input: pass the flag or set paths.{key}")))
}

fn path_value(p: &Option<PathBuf>) -> Option<Value> {
    p.as_ref().map(|p| Value::String(p.to_string_lossy().into_owned()))
}

fn flag_paths<'a>(pairs: &[(&'a str, &Option<PathBuf>)]) -> Vec<(&'a str, Value)> {
    pairs.iter().filter_map(|(k, p)| path_value(p).map(|v| (*k, v))).collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

/// `first[<TAB>second]` rows.
fn read_optional_pairs(path: &Path) -> Result<Vec<(String, Option<String>)>> {
    read_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let mut cols = l.split('\t');
            let first = cols.next().unwrap_or_default().to_string();
            let second = cols.next().map(str::to_string);
            if cols.next().is_some() || first.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected one or two tab-separated columns".into(),
                });
            }
            Ok((first, second))
        })
        .collect()
}

/// Dispatches one parsed command. On failure a `FAILED` file describing the
/// error is left in the output directory.
pub fn run(command: Command) -> Result<()> {
    let out = match &command {
        Command::Corpus { common, .. }
        | Command::Pretrain { common, .. }
        | Command::FinetuneClassify { common, .. }
        | Command::FinetuneSeq2seq { common, .. }
        | Command::Mutate { common, .. }
        | Command::Eval { common, .. }
        | Command::AttnExport { common, .. }
        | Command::Noise {
            action: NoiseAction::Make { common } | NoiseAction::Detect { common, .. },
        } => common.out.clone(),
    };
    let result = dispatch(command);
    if let Err(e) = &result {
        if fs::create_dir_all(&out).is_ok() {
            let _ = fs::write(out.join(FAILED_NAME), format!("{e}\n"));
            let _ = fs::remove_file(out.join(MANIFEST_NAME));
        }
    }
    result
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Corpus { common, fasta } => cmd_corpus(&common, &fasta),
        Command::Pretrain { common, fasta, resume } => cmd_pretrain(&common, &fasta, resume.as_deref()),
        Command::FinetuneClassify { common, io } => {
            let paths = flag_paths(&[("train", &io.train), ("heldout", &io.heldout), ("checkpoint", &io.checkpoint)]);
            cmd_finetune_classify(Run::start(&common, "finetune-classify", StepsTarget::Finetune, paths)?)
        }
        Command::FinetuneSeq2seq { common, io } => {
            let paths = flag_paths(&[("train", &io.train), ("heldout", &io.heldout), ("checkpoint", &io.checkpoint)]);
            cmd_finetune_seq2seq(Run::start(&common, "finetune-seq2seq", StepsTarget::Finetune, paths)?)
        }
        Command::Noise {
            action: NoiseAction::Make { common },
        } => cmd_noise_make(Run::start(&common, "noise-make", StepsTarget::Finetune, Vec::new())?),
        Command::Noise {
            action: NoiseAction::Detect { common, checkpoint, input },
        } => {
            let paths = flag_paths(&[("checkpoint", &checkpoint), ("input", &input)]);
            cmd_noise_detect(Run::start(&common, "noise-detect", StepsTarget::Finetune, paths)?)
        }
        Command::Mutate {
            common,
            checkpoint,
            noise_checkpoint,
            input,
        } => {
            let paths = flag_paths(&[("checkpoint", &checkpoint), ("noise_checkpoint", &noise_checkpoint), ("input", &input)]);
            cmd_mutate(Run::start(&common, "mutate", StepsTarget::Finetune, paths)?)
        }
        Command::Eval {
            common,
            predictions,
            truths,
        } => {
            let paths = flag_paths(&[("predictions", &predictions), ("truths", &truths)]);
            cmd_eval(Run::start(&common, "eval", StepsTarget::Finetune, paths)?)
        }
        Command::AttnExport {
            common,
            checkpoint,
            sequence,
            input,
        } => {
            let paths = flag_paths(&[("checkpoint", &checkpoint), ("input", &input)]);
            cmd_attn_export(Run::start(&common, "attn-export", StepsTarget::Finetune, paths)?, sequence)
        }
    }
}

fn cmd_corpus(common: &Common, fasta: &[PathBuf]) -> Result<()> {
    let corpus: Vec<Value> = fasta.iter().map(|p| Value::String(p.to_string_lossy().into_owned())).collect();
    let mut run = Run::start(common, "corpus", StepsTarget::Pretrain, vec![("corpus", Value::Array(corpus))])?;
    let mut kept = Vec::new();
    let (mut records, mut raw_bases) = (0usize, 0usize);
    for path in &run.cfg.paths.corpus {
        for rec in read_fasta_file(path)? {
            records += 1;
            raw_bases += rec.sequence.len();
            let cleaned = clean_sequence(&rec.sequence).map_err(|e| Error::config(format!("{}: record {}: {e}", path.display(), rec.id)))?;
            if !cleaned.is_empty() {
                kept.push(FastaRecord {
                    sequence: cleaned,
                    ..rec
                });
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let total: usize = kept.iter().map(|r| r.sequence.len()).sum();
    let mut buf = Vec::new();
    write_fasta(&mut buf, &kept, 60).map_err(|e| Error::io(run.out.join("corpus.fa"), e))?;
    run.write("corpus.fa", &buf)?;
    run.write_json(
        "stats.json",
        &json!({
            "files": run.cfg.paths.corpus.len(),
            "records": records,
            "segments": kept.len(),
            "total_bases": total,
            "removed_bases": raw_bases - total,
        }),
    )?;
    eprintln!("corpus: {} segments, {total} bases kept, {} removed", kept.len(), raw_bases - total);
    run.finish()
}

fn load_corpus(paths: &[PathBuf]) -> Result<crate::genomics_io::CleanCorpus> {
    if paths.is_empty() {
        return Err(Error::config("no corpus: pass FASTA files or set paths.corpus"));
    }
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_fasta_file(p)?);
    }
    crate::genomics_io::build_corpus(&records)
}

fn cmd_pretrain(common: &Common, fasta: &[PathBuf], resume: Option<&Path>) -> Result<()> {
    let mut paths = Vec::new();
    if !fasta.is_empty() {
        let list = fasta.iter().map(|p| Value::String(p.to_string_lossy().into_owned())).collect();
        paths.push(("corpus", Value::Array(list)));
    }
    let mut run = Run::start(common, "pretrain", StepsTarget::Pretrain, paths)?;
    let corpus = load_corpus(&run.cfg.paths.corpus)?;
    let (train, heldout) = split_heldout(&corpus, run.seeds.pretrain);
    if heldout.is_empty() {
        eprintln!("warning: single-segment corpus, no heldout evaluation");
    }
    let (mut model, state) = match resume {
        Some(dir) => {
            let loaded = load_checkpoint(dir)?;
            let optimizer = loaded
                .optimizer
                .ok_or_else(|| Error::config(format!("{}: checkpoint has no optimizer state to resume", dir.display())))?;
            let step = loaded.step as usize;
            (loaded.model, Some(ResumeState { optimizer, step }))
        }
        None => (run.fresh_or_loaded(run.cfg.paths.checkpoint.clone().as_deref())?, None),
    };
    let ckpt_dir = run.out.join("checkpoints");
    let outcome = pretrain(&mut model, &train, &heldout, &run.cfg.pretrain, state, Some(&ckpt_dir))?;
    for p in &outcome.checkpoints {
        let rel = p.strip_prefix(&run.out).unwrap_or(p).to_string_lossy().into_owned();
        run.manifest.checkpoints.push(rel);
    }
    run.write_metrics(&outcome.log)?;
    run.save("checkpoint", &model, outcome.final_step as u64, Some(&outcome.optimizer))?;
    let acc = outcome.final_accuracy.map(|e| json!({"accuracy": e.accuracy, "masked": e.masked, "correct": e.correct}));
    run.write_json(
        "report.json",
        &json!({
            "final_step": outcome.final_step,
            "train_segments": train.len(),
            "heldout_segments": heldout.len(),
            "heldout_mlm": acc,
        }),
    )?;
    run.finish()
}

fn n_classes_of(labels: impl Iterator<Item = usize>) -> usize {
    labels.max().map_or(2, |m| (m + 1).max(2))
}

fn cmd_finetune_classify(mut run: Run) -> Result<()> {
    let train = load_labeled_tsv(required(&run.cfg.paths.train, "train")?)?;
    let heldout = load_labeled_tsv(required(&run.cfg.paths.heldout, "heldout")?)?;
    let n_classes = n_classes_of(train.iter().chain(&heldout).map(|e| e.label));
    let mut model = run.fresh_or_loaded(run.cfg.paths.checkpoint.clone().as_deref())?;
    let outcome = finetune_classifier(&mut model, &train, &heldout, n_classes, &run.cfg.finetune)?;
    run.write_metrics(&outcome.log)?;
    run.save("checkpoint", &model, run.cfg.finetune.steps as u64, None)?;
    run.write_json(
        "report.json",
        &json!({
            "heldout": outcome.report,
            "head_only_steps": outcome.head_only_steps,
            "frozen_violations": outcome.frozen_violations,
        }),
    )?;
    eprintln!("classify: heldout accuracy {:.4}", outcome.report.accuracy);
    if !outcome.frozen_violations.is_empty() {
        return Err(Error::config(format!("{} frozen parameters changed during training", outcome.frozen_violations.len())));
    }
    run.finish()
}

fn cmd_finetune_seq2seq(mut run: Run) -> Result<()> {
    let train = load_pairs_tsv(required(&run.cfg.paths.train, "train")?)?;
    let heldout = load_pairs_tsv(required(&run.cfg.paths.heldout, "heldout")?)?;
    let mut model = run.fresh_or_loaded(run.cfg.paths.checkpoint.clone().as_deref())?;
    let outcome = finetune_seq2seq(&mut model, &train, &heldout, &run.cfg.finetune)?;
    run.write_metrics(&outcome.log)?;
    run.save("checkpoint", &model, run.cfg.finetune.steps as u64, None)?;
    run.write_json(
        "report.json",
        &json!({
            "exact_match": outcome.exact_match,
            "token_accuracy": outcome.token_accuracy,
            "eval_beams": run.cfg.finetune.eval_beams.max(1),
            "truncated_pairs": outcome.truncated,
            "frozen_violations": outcome.frozen_violations,
        }),
    )?;
    eprintln!("seq2seq: heldout exact match {:.4}", outcome.exact_match);
    if !outcome.frozen_violations.is_empty() {
        return Err(Error::config(format!("{} frozen parameters changed during training", outcome.frozen_violations.len())));
    }
    run.finish()
}

fn reference_for(run: &Run) -> Result<ReferenceSim> {
    let r = &run.cfg.noise.reference;
    match &r.fasta {
        Some(path) => {
            let corpus = crate::genomics_io::build_corpus(&read_fasta_file(path)?)?;
            Ok(ReferenceSim::from_sequence(corpus.segments.concat()))
        }
        None => simulate_reference_with(r.length, r.motif_fraction, r.region_len, run.seeds.reference),
    }
}

fn cmd_noise_make(mut run: Run) -> Result<()> {
    let reference = reference_for(&run)?;
    let n = &run.cfg.noise;
    let records = build_noise_dataset(&reference, n.n_examples, &n.spec, &n.dataset, n.seed)?;
    let labeled: Vec<_> = records.iter().map(|r| r.to_labeled()).collect();
    let mut buf = Vec::new();
    write_labeled_tsv(&mut buf, &labeled).map_err(|e| Error::io(run.out.join("noise.tsv"), e))?;
    run.write("noise.tsv", &buf)?;
    let noisy = records.iter().filter(|r| r.label == 1).count();
    let motif_starts = records.iter().filter(|r| reference.in_motif(r.origin)).count();
    run.write_json(
        "stats.json",
        &json!({
            "examples": records.len(),
            "clean": records.len() - noisy,
            "noisy": noisy,
            "motif_start_fraction": motif_starts as f64 / records.len().max(1) as f64,
            "reference_length": reference.len(),
            "reference_motif_bases": reference.motif_bases(),
        }),
    )?;
    run.finish()
}

fn cmd_noise_detect(mut run: Run) -> Result<()> {
    let model = load_checkpoint(required(&run.cfg.paths.checkpoint, "checkpoint")?)?.model;
    let rows = read_optional_pairs(required(&run.cfg.paths.input, "input")?)?;
    let labels: Option<Vec<usize>> = rows
        .iter()
        .map(|(_, l)| l.as_ref().and_then(|l| l.trim().parse().ok()))
        .collect();
    let probs: Vec<f64> = rows
        .par_iter()
        .map(|(s, _)| detect_noise(&model, s.as_bytes()))
        .collect::<Result<_>>()?;
    let preds: Vec<usize> = probs.iter().map(|&p| usize::from(p > 0.5)).collect();
    let mut text = String::from("index\tp_noisy\tpredicted\n");
    for (i, (p, y)) in probs.iter().zip(&preds).enumerate() {
        text.push_str(&format!("{i}\t{p:.6}\t{y}\n"));
    }
    run.write("detections.tsv", text.as_bytes())?;
    if let Some(truths) = labels {
        let report = classification_metrics(&preds, &truths, 2)?;
        run.write_json("report.json", &json!({ "heldout": report }))?;
    }
    run.finish()
}

fn cmd_mutate(mut run: Run) -> Result<()> {
    let seq2seq = load_checkpoint(required(&run.cfg.paths.checkpoint, "checkpoint")?)?.model;
    let noise = load_checkpoint(required(&run.cfg.paths.noise_checkpoint, "noise_checkpoint")?)?.model;
    let mut rows = read_optional_pairs(required(&run.cfg.paths.input, "input")?)?;
    if run.cfg.mutation.limit > 0 {
        rows.truncate(run.cfg.mutation.limit);
    }
    let mut results = Vec::with_capacity(rows.len());
    for (parent, truth) in &rows {
        let mut r = generate_mutation(&seq2seq, &noise, parent.as_bytes())?;
        if let Some(t) = truth {
            r = r.with_truth(t.as_bytes());
        }
        results.push((parent.as_bytes().to_vec(), r));
    }
    let mut buf = Vec::new();
    write_mutation_tsv(&mut buf, &results).map_err(|e| Error::io(run.out.join("mutations.tsv"), e))?;
    run.write("mutations.tsv", &buf)?;
    if rows.iter().all(|(_, t)| t.is_some()) && !rows.is_empty() {
        let ranked: Vec<Vec<Vec<u8>>> = results
            .iter()
            .map(|(_, r)| {
                let mut c = vec![r.chosen_sequence().to_vec()];
                c.extend(r.candidates.iter().enumerate().filter(|(i, _)| *i != r.chosen).map(|(_, c)| c.sequence.clone()));
                c
            })
            .collect();
        let truths: Vec<Vec<u8>> = rows.iter().map(|(_, t)| t.clone().unwrap_or_default().into_bytes()).collect();
        run.write_json("report.json", &serde_json::to_value(generation_metrics(&ranked, &truths)?)?)?;
    }
    run.finish()
}

fn cmd_eval(mut run: Run) -> Result<()> {
    let preds = read_lines(required(&run.cfg.paths.predictions, "predictions")?)?;
    let truths = read_lines(required(&run.cfg.paths.truths, "truths")?)?;
    if preds.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prediction lines but {} truth lines",
            preds.len(),
            truths.len()
        )));
    }
    let candidates: Vec<Vec<Vec<u8>>> = preds
        .iter()
        .map(|l| l.split('\t').map(|c| c.as_bytes().to_vec()).collect())
        .collect();
    let truths: Vec<Vec<u8>> = truths.into_iter().map(String::into_bytes).collect();
    let report = generation_metrics(&candidates, &truths)?;
    eprintln!("eval: top1 {:.4} top5 {:.4} mean LD {:.3}", report.top1, report.top5, report.mean_ld);
    run.write_json("eval.json", &serde_json::to_value(report)?)?;
    run.finish()
}

fn cmd_attn_export(mut run: Run, sequence: Option<String>) -> Result<()> {
    let model = load_checkpoint(required(&run.cfg.paths.checkpoint, "checkpoint")?)?.model;
    let seq = match sequence {
        Some(s) => s.into_bytes(),
        None => {
            let path = required(&run.cfg.paths.input, "input")?;
            read_fasta_file(path)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::config(format!("{}: no FASTA records", path.display())))?
                .sequence
        }
    };
    let maps = model.export_attention_maps(&encode(&seq))?;
    for m in &maps {
        let stem = format!("layer{:02}_head{:02}", m.layer, m.head);
        let mut csv = Vec::new();
        m.write_csv(&mut csv).map_err(|e| Error::io(run.out.join(&stem), e))?;
        run.write(&format!("{stem}.csv"), &csv)?;
        let mut pgm = Vec::new();
        m.write_pgm(&mut pgm).map_err(|e| Error::io(run.out.join(&stem), e))?;
        run.write(&format!("{stem}.pgm"), &pgm)?;
        if m.legend.is_some() {
            let mut legend = Vec::new();
            m.write_legend_csv(&mut legend).map_err(|e| Error::io(run.out.join(&stem), e))?;
            run.write(&format!("{stem}_keys.csv"), &legend)?;
        }
    }
    eprintln!("attn-export: {} maps", maps.len());
    run.finish()
}
