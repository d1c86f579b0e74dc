//! Beam-search mutation generation ranked by the noise detector.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::levenshtein::levenshtein;
use super::noise::detect_noise;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tokenizer::{decode, encode};

pub const MUTATION_BEAMS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationCandidate {
    pub sequence: Vec<u8>,
    pub beam_score: f64,
    pub noise_probability: f64,
    /// Generated to the parent's full length (no early EOS).
    pub full_length: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationResult {
    pub candidates: Vec<MutationCandidate>,
    pub chosen: usize,
    pub levenshtein_to_truth: Option<usize>,
}

impl MutationResult {
    pub fn chosen_sequence(&self) -> &[u8] {
        &self.candidates[self.chosen].sequence
    }

    pub fn with_truth(mut self, truth: &[u8]) -> Self {
        self.levenshtein_to_truth = Some(levenshtein(self.chosen_sequence(), truth));
        self
    }
}

/// Generates [`MUTATION_BEAMS`] children of `parent` up to the parent's
/// length and chooses the full-length candidate the noise model finds least
/// noisy (ties go to the better beam score). If no candidate reaches full
/// length, the longest one is chosen.
pub fn generate_mutation(seq2seq: &Model, noise_model: &Model, parent: &[u8]) -> Result<MutationResult> {
    if parent.is_empty() {
        return Err(Error::InvalidArgument("parent sequence is empty".into()));
    }
    let beams = seq2seq.generate_beam(&encode(parent), MUTATION_BEAMS, parent.len())?;
    let candidates = beams
        .into_iter()
        .map(|b| {
            let sequence = decode(&b.tokens);
            Ok(MutationCandidate {
                noise_probability: detect_noise(noise_model, &sequence)?,
                full_length: b.tokens.len() == parent.len(),
                beam_score: b.score,
                sequence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen = if candidates.iter().any(|c| c.full_length) {
        let mut best: Option<usize> = None;
        for (i, c) in candidates.iter().enumerate().filter(|(_, c)| c.full_length) {
            best = match best {
                Some(b) if candidates[b].noise_probability <= c.noise_probability => Some(b),
                _ => Some(i),
            };
        }
        best.expect("a full-length candidate exists")
    } else {
        (0..candidates.len())
            .rev()
            .max_by_key(|&i| candidates[i].sequence.len())
            .expect("beam search returns candidates")
    };
    Ok(MutationResult {
        candidates,
        chosen,
        levenshtein_to_truth: None,
    })
}

/// TSV: parent, five candidates, five beam scores, five noise probabilities,
/// chosen index, Levenshtein distance to truth (empty when unknown).
pub fn write_mutation_tsv<W: Write>(out: &mut W, rows: &[(Vec<u8>, MutationResult)]) -> io::Result<()> {
    let mut header = vec!["parent".to_string()];
    for kind in ["candidate", "score", "noise_prob"] {
        header.extend((1..=MUTATION_BEAMS).map(|i| format!("{kind}_{i}")));
    }
    header.extend(["chosen".into(), "levenshtein".into()]);
    writeln!(out, "{}", header.join("\t"))?;
    for (parent, r) in rows {
        let mut cols = vec![String::from_utf8_lossy(parent).into_owned()];
        cols.extend(r.candidates.iter().map(|c| String::from_utf8_lossy(&c.sequence).into_owned()));
        cols.extend(r.candidates.iter().map(|c| format!("{:.6}", c.beam_score)));
        cols.extend(r.candidates.iter().map(|c| format!("{:.6}", c.noise_probability)));
        cols.push(r.chosen.to_string());
        cols.push(r.levenshtein_to_truth.map(|d| d.to_string()).unwrap_or_default());
        writeln!(out, "{}", cols.join("\t"))?;
    }
    Ok(())
}
