//! Synthetic reference genome with telomere-like `TTAGGG` repeat regions.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::rng_from;

pub const MOTIF: &[u8; 6] = b"TTAGGG";
pub const DEFAULT_REGION_LEN: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSim {
    pub sequence: Vec<u8>,
    /// Motif regions, sorted and disjoint.
    pub regions: Vec<Range<usize>>,
}

/// Random composition of `total` into `parts` non-negative integers.
fn composition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    let mut bars = rand::seq::index::sample(rng, total + parts - 1, parts - 1).into_vec();
    bars.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for b in bars {
        out.push(b - prev);
        prev = b + 1;
    }
    out.push(total + parts - 1 - prev);
    out
}

impl ReferenceSim {
    /// Wraps a real sequence. Motif regions are maximal runs of two or more
    /// tandem `TTAGGG` (or reverse-complement `CCCTAA`) copies.
    pub fn from_sequence(sequence: Vec<u8>) -> Self {
        let mut regions: Vec<Range<usize>> = Vec::new();
        for unit in [MOTIF, b"CCCTAA"] {
            let mut i = 0;
            while i + 6 <= sequence.len() {
                if &sequence[i..i + 6] != unit {
                    i += 1;
                    continue;
                }
                let mut end = i + 6;
                while end + 6 <= sequence.len() && &sequence[end..end + 6] == unit {
                    end += 6;
                }
                if end - i >= 12 {
                    regions.push(i..end);
                }
                i = end;
            }
        }
        regions.sort_by_key(|r| r.start);
        Self { sequence, regions }
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn motif_bases(&self) -> usize {
        self.regions.iter().map(|r| r.len()).sum()
    }

    pub fn in_motif(&self, pos: usize) -> bool {
        let i = self.regions.partition_point(|r| r.end <= pos);
        self.regions.get(i).is_some_and(|r| r.contains(&pos))
    }
}

/// `length` bases of which a `telomere_fraction` share lies in motif regions
/// of about `region_len` bases; the rest is i.i.d. uniform ACGT. Motif bases
/// follow the global phase `TTAGGG[pos % 6]`.
pub fn simulate_reference_with(length: usize, telomere_fraction: f64, region_len: usize, seed: u64) -> Result<ReferenceSim> {
    if !(0.0..=1.0).contains(&telomere_fraction) {
        return Err(Error::config(format!("telomere_fraction {telomere_fraction} outside [0, 1]")));
    }
    if length < 1024 {
        return Err(Error::config("reference length must be at least 1024"));
    }
    if region_len == 0 {
        return Err(Error::config("region_len must be positive"));
    }
    let mut rng = rng_from(seed, &[0x7e10]);
    let motif_total = (telomere_fraction * length as f64).round() as usize;
    let n_regions = if motif_total == 0 {
        0
    } else {
        ((motif_total as f64 / region_len as f64).round() as usize).max(1)
    };
    let mut regions: Vec<Range<usize>> = Vec::with_capacity(n_regions);
    if n_regions > 0 {
        let sizes: Vec<usize> = {
            let base = motif_total / n_regions;
            let extra = motif_total % n_regions;
            (0..n_regions).map(|i| base + usize::from(i < extra)).collect()
        };
        let free = length - motif_total;
        let inner = n_regions - 1;
        let gaps = if free >= inner {
            let mut g = composition(free - inner, n_regions + 1, &mut rng);
            for x in g.iter_mut().take(n_regions).skip(1) {
                *x += 1;
            }
            g
        } else {
            let mut g = vec![0; n_regions + 1];
            g[n_regions] = free;
            g
        };
        let mut pos = 0;
        for (i, size) in sizes.into_iter().enumerate() {
            pos += gaps[i];
            if size > 0 {
                match regions.last_mut() {
                    Some(r) if r.end == pos => r.end += size,
                    _ => regions.push(pos..pos + size),
                }
            }
            pos += size;
        }
    }
    let mut sequence: Vec<u8> = (0..length).map(|_| b"ACGT"[rng.random_range(0..4)]).collect();
    for r in &regions {
        for p in r.clone() {
            sequence[p] = MOTIF[p % 6];
        }
    }
    Ok(ReferenceSim { sequence, regions })
}

pub fn simulate_reference(length: usize, telomere_fraction: f64, seed: u64) -> Result<ReferenceSim> {
    simulate_reference_with(length, telomere_fraction, DEFAULT_REGION_LEN, seed)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Read {
    pub start: usize,
    pub bases: Vec<u8>,
}

/// Valid read starts inside motif regions, for weighted sampling.
#[derive(Debug, Clone)]
pub struct ReadSampler {
    read_len: usize,
    motif_starts: Vec<Range<usize>>,
    motif_total: usize,
    last: usize,
}

impl ReadSampler {
    /// `room` extra bases beyond `read_len` are kept available after each start.
    pub fn new(reference: &ReferenceSim, read_len: usize, room: usize) -> Result<Self> {
        let span = read_len + room;
        if span > reference.len() || read_len == 0 {
            return Err(Error::config(format!(
                "read length {read_len} (+{room}) does not fit a {}-base reference",
                reference.len()
            )));
        }
        let last = reference.len() - span;
        let motif_starts: Vec<Range<usize>> = reference
            .regions
            .iter()
            .filter(|r| r.start <= last)
            .map(|r| r.start..r.end.min(last + 1))
            .collect();
        let motif_total = motif_starts.iter().map(|r| r.len()).sum();
        Ok(Self {
            read_len,
            motif_starts,
            motif_total,
            last,
        })
    }

    /// With probability `telomere_bias` the start is uniform over motif
    /// positions, otherwise uniform over the whole reference.
    pub fn start<R: Rng + ?Sized>(&self, telomere_bias: f64, rng: &mut R) -> Result<usize> {
        if !(0.0..=1.0).contains(&telomere_bias) {
            return Err(Error::config(format!("telomere_bias {telomere_bias} outside [0, 1]")));
        }
        if telomere_bias > 0.0 && self.motif_total == 0 {
            return Err(Error::config("telomere bias requested but the reference has no motif region"));
        }
        if rng.random::<f64>() < telomere_bias {
            let mut k = rng.random_range(0..self.motif_total);
            for r in &self.motif_starts {
                if k < r.len() {
                    return Ok(r.start + k);
                }
                k -= r.len();
            }
            unreachable!("index within motif total");
        }
        Ok(rng.random_range(0..=self.last))
    }

    pub fn read_len(&self) -> usize {
        self.read_len
    }
}

pub fn sample_read<R: Rng + ?Sized>(reference: &ReferenceSim, read_len: usize, telomere_bias: f64, rng: &mut R) -> Result<Read> {
    let sampler = ReadSampler::new(reference, read_len, 0)?;
    let start = sampler.start(telomere_bias, rng)?;
    Ok(Read {
        start,
        bases: reference.sequence[start..start + read_len].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_extremes() {
        let r = simulate_reference(4096, 0.0, 1).unwrap();
        assert!(r.regions.is_empty());
        let r = simulate_reference(4096, 1.0, 1).unwrap();
        assert!(r.sequence.iter().enumerate().all(|(i, &b)| b == MOTIF[i % 6]));
        assert!(simulate_reference(4096, 1.5, 1).is_err());
    }

    #[test]
    fn coverage_matches_fraction() {
        let r = simulate_reference(1_000_000, 0.5, 2).unwrap();
        let cov = r.motif_bases() as f64 / r.len() as f64;
        assert!((cov - 0.5).abs() < 0.02, "{cov}");
        for w in r.regions.windows(2) {
            assert!(w[0].end < w[1].start);
        }
    }

    #[test]
    fn read_start_bias() {
        let r = simulate_reference(100_000, 0.05, 3).unwrap();
        let mut rng = rng_from(4, &[]);
        for _ in 0..500 {
            let read = sample_read(&r, 512, 1.0, &mut rng).unwrap();
            assert!(r.in_motif(read.start));
            assert_eq!(read.bases, &r.sequence[read.start..read.start + 512]);
        }
        let none = simulate_reference(4096, 0.0, 3).unwrap();
        assert!(sample_read(&none, 512, 0.6, &mut rng).is_err());
        assert!(sample_read(&none, 512, 0.0, &mut rng).is_ok());
    }

    #[test]
    fn motif_runs_in_real_sequence() {
        let mut seq = b"ACGTACGT".to_vec();
        seq.extend(MOTIF.repeat(3));
        seq.extend(b"AAAATTAGGGA");
        seq.extend(b"CCCTAACCCTAA");
        let r = ReferenceSim::from_sequence(seq);
        assert_eq!(r.regions, vec![8..26, 37..49]);
    }
}
