//! Key-set planning: which keys each query scores.
//!
//! A plan is a CSR-style list of key rows per query. All heads share the same
//! plan, so one plan of `n` slots costs `n` score evaluations per head.

use std::ops::Range;

use super::relpos::RelativePosition;

/// Bucket marker for slots that take no relative-position bias (global keys).
pub const NO_BUCKET: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPlan {
    offsets: Vec<usize>,
    keys: Vec<u32>,
    buckets: Vec<u16>,
    num_keys: usize,
}

impl AttentionPlan {
    fn with_capacity(queries: usize, slots: usize, num_keys: usize) -> Self {
        let mut offsets = Vec::with_capacity(queries + 1);
        offsets.push(0);
        Self {
            offsets,
            keys: Vec::with_capacity(slots),
            buckets: Vec::with_capacity(slots),
            num_keys,
        }
    }

    fn push_key(&mut self, key: usize) {
        self.keys.push(key as u32);
        self.buckets.push(NO_BUCKET);
    }

    fn finish_query(&mut self) {
        self.offsets.push(self.keys.len());
    }

    pub fn num_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total key rows (tokens plus any global rows) addressed by the plan.
    pub fn num_keys(&self) -> usize {
        self.num_keys
    }

    /// Number of query-key scores computed per head.
    pub fn score_count(&self) -> usize {
        self.keys.len()
    }

    pub fn slots(&self, query: usize) -> Range<usize> {
        self.offsets[query]..self.offsets[query + 1]
    }

    pub fn keys(&self) -> &[u32] {
        &self.keys
    }

    pub fn buckets(&self) -> &[u16] {
        &self.buckets
    }

    pub fn max_slots(&self) -> usize {
        (0..self.num_queries())
            .map(|q| self.slots(q).len())
            .max()
            .unwrap_or(0)
    }

    /// Every query sees every key allowed by `key_mask`; with `causal`, only
    /// keys at positions `<= query_offset + i`.
    pub fn dense(queries: usize, keys: usize, causal: bool, query_offset: usize, key_mask: Option<&[bool]>) -> Self {
        let mut plan = Self::with_capacity(queries, queries * keys, keys);
        for i in 0..queries {
            let end = if causal {
                (query_offset + i + 1).min(keys)
            } else {
                keys
            };
            for j in 0..end {
                if key_mask.map_or(true, |m| m[j]) {
                    plan.push_key(j);
                }
            }
            plan.finish_query();
        }
        plan
    }

    /// Plan from an explicit `queries × keys` allow-matrix.
    pub fn from_mask(mask: &[Vec<bool>]) -> Self {
        let keys = mask.first().map_or(0, Vec::len);
        let mut plan = Self::with_capacity(mask.len(), 0, keys);
        for row in mask {
            for (j, &allowed) in row.iter().enumerate() {
                if allowed {
                    plan.push_key(j);
                }
            }
            plan.finish_query();
        }
        plan
    }

    /// Query `i` attends to `[i-r, i+r]` clipped to the sequence.
    pub fn sliding(len: usize, radius: usize, key_mask: Option<&[bool]>) -> Self {
        Self::sliding_global(len, radius, 0, key_mask)
    }

    /// Sliding window plus `globals` extra key rows stored after the `len`
    /// token rows. Global rows are visible from every query.
    pub fn sliding_global(len: usize, radius: usize, globals: usize, key_mask: Option<&[bool]>) -> Self {
        let width = 2 * radius + 1 + globals;
        let mut plan = Self::with_capacity(len, len * width, len + globals);
        for i in 0..len {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(len.saturating_sub(1));
            for j in lo..=hi {
                if key_mask.map_or(true, |m| m[j]) {
                    plan.push_key(j);
                }
            }
            for g in 0..globals {
                plan.push_key(len + g);
            }
            plan.finish_query();
        }
        plan
    }

    /// Assigns relative-position buckets to token keys. Keys at rows
    /// `>= token_keys` (global rows) keep [`NO_BUCKET`].
    pub fn with_relative_buckets(mut self, rel: &RelativePosition, query_offset: usize, token_keys: usize) -> Self {
        for q in 0..self.num_queries() {
            let qpos = (query_offset + q) as i64;
            for s in self.slots(q) {
                let key = self.keys[s] as usize;
                if key < token_keys {
                    self.buckets[s] = rel.bucket(key as i64 - qpos) as u16;
                }
            }
        }
        self
    }
}

/// Contiguous near-equal partition of `0..len` into `blocks` ranges; the
/// remainder goes to the leading blocks.
pub fn block_ranges(len: usize, blocks: usize) -> Vec<Range<usize>> {
    assert!(blocks >= 1 && blocks <= len, "need 1 <= blocks <= len");
    let base = len / blocks;
    let extra = len % blocks;
    let mut start = 0;
    (0..blocks)
        .map(|b| {
            let size = base + usize::from(b < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sliding_band() {
        let p = AttentionPlan::sliding(5, 1, None);
        assert_eq!(p.keys()[p.slots(0)].to_vec(), vec![0, 1]);
        assert_eq!(p.keys()[p.slots(2)].to_vec(), vec![1, 2, 3]);
        assert_eq!(p.keys()[p.slots(4)].to_vec(), vec![3, 4]);
        assert!(p.score_count() <= 5 * 3);
    }

    #[test]
    fn global_slots_follow_window() {
        let p = AttentionPlan::sliding_global(4, 1, 2, None);
        assert_eq!(p.keys()[p.slots(0)].to_vec(), vec![0, 1, 4, 5]);
        assert_eq!(p.num_keys(), 6);
    }

    #[test]
    fn causal_dense_with_offset() {
        let p = AttentionPlan::dense(1, 4, true, 2, None);
        assert_eq!(p.keys()[p.slots(0)].to_vec(), vec![0, 1, 2]);
        let m = [true, false, true, true];
        let p = AttentionPlan::dense(2, 4, false, 0, Some(&m));
        assert_eq!(p.keys()[p.slots(1)].to_vec(), vec![0, 2, 3]);
    }

    #[test]
    fn blocks_are_near_equal() {
        let r = block_ranges(10, 3);
        assert_eq!(r, vec![0..4, 4..7, 7..10]);
        assert_eq!(block_ranges(4, 4).len(), 4);
    }
}
