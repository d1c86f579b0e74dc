//! Classification and generation metrics.

use serde::{Deserialize, Serialize};

use super::levenshtein::levenshtein;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub accuracy: f64,
    /// One-vs-rest F1 per class.
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    /// F1 of class 1 when there are exactly two classes.
    pub binary_f1: Option<f64>,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

impl ClassificationReport {
    /// The F1 used for headline reporting: binary for two classes, macro otherwise.
    pub fn f1(&self) -> f64 {
        self.binary_f1.unwrap_or(self.macro_f1)
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn classification_metrics(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<ClassificationReport> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty prediction/truth lists, got {} and {}",
            preds.len(),
            truths.len()
        )));
    }
    if let Some(&bad) = preds.iter().chain(truths).find(|&&c| c >= n_classes) {
        return Err(Error::InvalidArgument(format!("class {bad} outside 0..{n_classes}")));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let per_class_f1: Vec<f64> = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let fp: usize = (0..n_classes).filter(|&t| t != c).map(|t| confusion[t][c]).sum();
            let fn_: usize = (0..n_classes).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
            f1(tp, fp, fn_)
        })
        .collect();
    Ok(ClassificationReport {
        n: preds.len(),
        accuracy: correct as f64 / preds.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / n_classes as f64,
        binary_f1: (n_classes == 2).then(|| per_class_f1[1]),
        per_class_f1,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub n: usize,
    pub top1: f64,
    pub top5: f64,
    /// Levenshtein statistics of the top-ranked candidate.
    pub mean_ld: f64,
    pub median_ld: f64,
    /// Mean of `1 - LD / len(truth)`.
    pub mean_similarity: f64,
}

/// `candidates[i]` is the ranked candidate list for `truths[i]`.
pub fn generation_metrics(candidates: &[Vec<Vec<u8>>], truths: &[Vec<u8>]) -> Result<GenerationReport> {
    if truths.is_empty() || candidates.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty candidate/truth lists, got {} and {}",
            candidates.len(),
            truths.len()
        )));
    }
    let n = truths.len();
    let (mut top1, mut top5) = (0usize, 0usize);
    let mut lds = Vec::with_capacity(n);
    let mut sim = 0.0;
    for (cands, truth) in candidates.iter().zip(truths) {
        let first = cands
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty candidate list".into()))?;
        top1 += usize::from(first == truth);
        top5 += usize::from(cands.iter().take(5).any(|c| c == truth));
        let ld = levenshtein(first, truth);
        lds.push(ld);
        sim += similarity(ld, truth.len());
    }
    Ok(GenerationReport {
        n,
        top1: top1 as f64 / n as f64,
        top5: top5 as f64 / n as f64,
        mean_ld: lds.iter().sum::<usize>() as f64 / n as f64,
        median_ld: median(&mut lds),
        mean_similarity: sim / n as f64,
    })
}

pub fn similarity(ld: usize, truth_len: usize) -> f64 {
    if truth_len == 0 {
        return if ld == 0 { 1.0 } else { 0.0 };
    }
    1.0 - ld as f64 / truth_len as f64
}

fn median(values: &mut [usize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_predictions() {
        let truths = vec![b"ACGT".to_vec(), b"GGA".to_vec()];
        let cands: Vec<Vec<Vec<u8>>> = truths.iter().map(|t| vec![t.clone(); 5]).collect();
        let r = generation_metrics(&cands, &truths).unwrap();
        assert_eq!((r.top1, r.top5, r.mean_ld, r.median_ld), (1.0, 1.0, 0.0, 0.0));
        assert_eq!(r.mean_similarity, 1.0);
    }

    #[test]
    fn similarity_for_mean_distance() {
        assert!((similarity(0, 500) - 1.0).abs() < 1e-15);
        assert!((similarity(5, 500) - 0.99).abs() < 1e-12);
    }

    #[test]
    fn top1_never_exceeds_top5() {
        let truths = vec![b"AAAA".to_vec(), b"CCCC".to_vec(), b"GGGG".to_vec()];
        let cands = vec![
            vec![b"AAAT".to_vec(), b"AAAA".to_vec()],
            vec![b"CCCC".to_vec()],
            vec![b"TTTT".to_vec(), b"GGGA".to_vec()],
        ];
        let r = generation_metrics(&cands, &truths).unwrap();
        assert!((r.top1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.top5 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.median_ld, 1.0);
    }

    #[test]
    fn binary_f1_perfect() {
        let r = classification_metrics(&[1], &[1], 2).unwrap();
        assert_eq!(r.binary_f1, Some(1.0));
        let r = classification_metrics(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.per_class_f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class_f1[0] - 0.8).abs() < 1e-12);
        assert!(classification_metrics(&[], &[], 2).is_err());
        assert!(classification_metrics(&[3], &[0], 2).is_err());
    }
}
