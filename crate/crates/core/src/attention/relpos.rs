/// Log-bucketed relative-position scheme. Distances below half the per-direction
/// bucket count get their own bucket; larger ones share logarithmic buckets up
/// to `max_distance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RelativePosition {
    pub buckets: usize,
    pub max_distance: usize,
    pub bidirectional: bool,
}

impl RelativePosition {
    pub const fn new(buckets: usize, max_distance: usize, bidirectional: bool) -> Self {
        Self {
            buckets,
            max_distance,
            bidirectional,
        }
    }

    /// Bucket for a key at `relative = key_pos - query_pos`.
    pub fn bucket(&self, relative: i64) -> usize {
        let mut n = -relative;
        let mut base = 0usize;
        let mut per_dir = self.buckets;
        if self.bidirectional {
            per_dir /= 2;
            if n < 0 {
                base += per_dir;
                n = -n;
            }
        } else {
            n = n.max(0);
        }
        let n = n as usize;
        let max_exact = (per_dir / 2).max(1);
        if n < max_exact {
            return base + n;
        }
        let span = (self.max_distance as f64 / max_exact as f64).ln();
        let scaled = ((n as f64 / max_exact as f64).ln() / span * (per_dir - max_exact) as f64) as usize;
        base + (max_exact + scaled).min(per_dir - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_distances_are_exact() {
        let r = RelativePosition::new(32, 128, true);
        for d in 0..8 {
            assert_eq!(r.bucket(-d), d as usize);
            if d > 0 {
                assert_eq!(r.bucket(d), 16 + d as usize);
            }
        }
        assert_eq!(r.bucket(-10_000), 15);
        assert_eq!(r.bucket(10_000), 31);
    }

    #[test]
    fn causal_ignores_future() {
        let r = RelativePosition::new(32, 128, false);
        assert_eq!(r.bucket(3), 0);
        assert_eq!(r.bucket(-5), 5);
        assert_eq!(r.bucket(-200), 31);
    }

    #[test]
    fn monotone_in_distance() {
        let r = RelativePosition::new(32, 128, false);
        let mut prev = 0;
        for d in 0..300 {
            let b = r.bucket(-d);
            assert!(b >= prev);
            prev = b;
        }
    }
}
