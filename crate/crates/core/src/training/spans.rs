//! Span corruption: contiguous spans are replaced by indexed sentinels and
//! the target lists each sentinel followed by the tokens it hid.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{is_special, sentinel, sentinel_index, TokenId, EOS, NUM_SENTINELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanCorruptionSpec {
    pub mask_rate: f64,
    pub mean_span: f64,
}

impl Default for SpanCorruptionSpec {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            mean_span: 20.0,
        }
    }
}

impl SpanCorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(Error::config(format!("mask_rate {} outside [0, 1)", self.mask_rate)));
        }
        if !(self.mean_span >= 1.0) {
            return Err(Error::config(format!("mean_span {} below 1", self.mean_span)));
        }
        Ok(())
    }

    /// Masked-token and span counts for a sequence of `len` tokens.
    pub fn plan(&self, len: usize) -> (usize, usize) {
        let mut masked = (self.mask_rate * len as f64).round() as usize;
        if masked == 0 {
            return (0, 0);
        }
        let mut spans = ((masked as f64 / self.mean_span).round() as usize).max(1);
        while masked + spans > len + 1 && masked > 0 {
            masked -= 1;
            spans = ((masked as f64 / self.mean_span).round() as usize).max(1);
        }
        if masked == 0 {
            return (0, 0);
        }
        (masked, spans)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corrupted {
    pub input: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// Splits `total` into `parts` positive lengths, each at most `cap`: every
/// part starts at 1 and the remaining units are dealt to uniformly chosen
/// parts that still have room.
fn span_lengths<R: Rng + ?Sized>(total: usize, parts: usize, cap: usize, rng: &mut R) -> Vec<usize> {
    let mut lengths = vec![1usize; parts];
    let mut open: Vec<usize> = (0..parts).filter(|_| cap > 1).collect();
    for _ in parts..total {
        if open.is_empty() {
            let i = rng.random_range(0..parts);
            lengths[i] += 1;
            continue;
        }
        let k = rng.random_range(0..open.len());
        let i = open[k];
        lengths[i] += 1;
        if lengths[i] >= cap {
            open.swap_remove(k);
        }
    }
    lengths
}

/// Splits `free` unmasked tokens into `spans + 1` gaps, uniformly over all
/// compositions, then adds the mandatory one-token separator to inner gaps.
fn gap_lengths<R: Rng + ?Sized>(free: usize, spans: usize, rng: &mut R) -> Vec<usize> {
    let slots = free + spans;
    let mut bars = sample(rng, slots, spans).into_vec();
    bars.sort_unstable();
    let mut gaps = Vec::with_capacity(spans + 1);
    let mut prev = 0;
    for &b in &bars {
        gaps.push(b - prev);
        prev = b + 1;
    }
    gaps.push(slots - prev);
    for g in gaps.iter_mut().take(spans).skip(1) {
        *g += 1;
    }
    gaps
}

pub fn corrupt_spans<R: Rng + ?Sized>(tokens: &[TokenId], spec: &SpanCorruptionSpec, rng: &mut R) -> Result<Corrupted> {
    spec.validate()?;
    if let Some(&t) = tokens.iter().find(|&&t| is_special(t)) {
        return Err(Error::InvalidArgument(format!("special token {t} in corruption input")));
    }
    let (masked, spans) = spec.plan(tokens.len());
    if spans > NUM_SENTINELS {
        return Err(Error::SentinelExhausted(spans - 1));
    }
    if spans == 0 {
        return Ok(Corrupted {
            input: tokens.to_vec(),
            target: vec![EOS],
        });
    }
    let cap = (2.0 * spec.mean_span).floor().max(1.0) as usize;
    let lengths = span_lengths(masked, spans, cap, rng);
    let gaps = gap_lengths(tokens.len() - masked - (spans - 1), spans, rng);
    let mut input = Vec::with_capacity(tokens.len() - masked + spans);
    let mut target = Vec::with_capacity(masked + spans + 1);
    let mut pos = 0;
    for (i, &len) in lengths.iter().enumerate() {
        input.extend_from_slice(&tokens[pos..pos + gaps[i]]);
        pos += gaps[i];
        let s = sentinel(i)?;
        input.push(s);
        target.push(s);
        target.extend_from_slice(&tokens[pos..pos + len]);
        pos += len;
    }
    input.extend_from_slice(&tokens[pos..]);
    target.push(EOS);
    Ok(Corrupted { input, target })
}

/// Inverse of [`corrupt_spans`]: re-inserts each target span at its sentinel.
pub fn splice_back(input: &[TokenId], target: &[TokenId]) -> Result<Vec<TokenId>> {
    let mut spans: Vec<&[TokenId]> = Vec::new();
    let mut i = 0;
    while i < target.len() && target[i] != EOS {
        let idx = sentinel_index(target[i])
            .ok_or_else(|| Error::InvalidArgument(format!("target position {i} is not a sentinel")))?;
        if idx != spans.len() {
            return Err(Error::InvalidArgument(format!("sentinel {idx} out of order")));
        }
        let start = i + 1;
        let mut end = start;
        while end < target.len() && target[end] != EOS && sentinel_index(target[end]).is_none() {
            end += 1;
        }
        spans.push(&target[start..end]);
        i = end;
    }
    let mut out = Vec::with_capacity(input.len() + target.len());
    for &t in input {
        match sentinel_index(t) {
            Some(idx) => out.extend_from_slice(
                spans
                    .get(idx)
                    .ok_or_else(|| Error::InvalidArgument(format!("no target span for sentinel {idx}")))?,
            ),
            None => out.push(t),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{encode, FIRST_SENTINEL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = SpanCorruptionSpec {
            mask_rate: 0.0,
            mean_span: 20.0,
        };
        let toks = encode(b"ACGTACGTACGTACGTACGTACGT");
        let c = corrupt_spans(&toks, &spec, &mut rng).unwrap();
        assert_eq!(c.input, toks);
        assert_eq!(c.target, vec![EOS]);
    }

    #[test]
    fn thousand_tokens_default_spec() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let toks = vec![b'A' as TokenId; 1000];
        let c = corrupt_spans(&toks, &SpanCorruptionSpec::default(), &mut rng).unwrap();
        let sentinels = c.target.iter().filter(|&&t| sentinel_index(t).is_some()).count();
        assert_eq!(sentinels, 8);
        assert_eq!(c.target.len() - sentinels - 1, 150);
    }

    #[test]
    fn small_example_counts_and_splice() {
        let spec = SpanCorruptionSpec {
            mask_rate: 0.2,
            mean_span: 5.0,
        };
        let toks = vec![b'A' as TokenId; 50];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = corrupt_spans(&toks, &spec, &mut rng).unwrap();
        let n_spans = c.input.iter().filter(|&&t| t >= FIRST_SENTINEL).count();
        let masked = toks.len() - (c.input.len() - n_spans);
        assert_eq!(masked, c.target.len() - (n_spans + 1));
        assert_eq!(splice_back(&c.input, &c.target).unwrap(), toks);
    }

    #[test]
    fn spans_never_touch_and_sentinels_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = SpanCorruptionSpec {
            mask_rate: 0.45,
            mean_span: 3.0,
        };
        for len in [10usize, 37, 200] {
            let toks: Vec<TokenId> = (0..len).map(|i| b"ACGT"[i % 4] as TokenId).collect();
            for _ in 0..50 {
                let c = corrupt_spans(&toks, &spec, &mut rng).unwrap();
                let mut last = None;
                for w in c.input.windows(2) {
                    assert!(!(sentinel_index(w[0]).is_some() && sentinel_index(w[1]).is_some()));
                }
                for &t in &c.input {
                    if let Some(i) = sentinel_index(t) {
                        assert!(last.map_or(i == 0, |l| i == l + 1));
                        last = Some(i);
                    }
                }
                assert_eq!(splice_back(&c.input, &c.target).unwrap(), toks);
            }
        }
    }

    #[test]
    fn too_many_spans_is_an_error() {
        let spec = SpanCorruptionSpec {
            mask_rate: 0.5,
            mean_span: 1.0,
        };
        let toks = vec![b'C' as TokenId; 400];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(corrupt_spans(&toks, &spec, &mut rng), Err(Error::SentinelExhausted(_))));
    }
}
