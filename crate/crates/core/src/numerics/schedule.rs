use serde::{Deserialize, Serialize};

/// Linear warmup from 0 to `peak_lr` over the first 5% of steps (rounded up),
/// then linear decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupLinearSchedule {
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

pub const WARMUP_FRACTION: f64 = 0.05;
pub const DEFAULT_PEAK_LR: f64 = 1e-5;

impl WarmupLinearSchedule {
    pub fn new(peak_lr: f64, total_steps: usize) -> Self {
        Self {
            peak_lr,
            total_steps,
            warmup_steps: (WARMUP_FRACTION * total_steps as f64).ceil() as usize,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        if step == self.warmup_steps {
            return self.peak_lr;
        }
        let decay = (self.total_steps - self.warmup_steps) as f64;
        self.peak_lr * (self.total_steps - step) as f64 / decay
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let s = WarmupLinearSchedule::new(1e-5, 1000);
        assert_eq!(s.warmup_steps, 50);
        assert!((s.lr_at(25) - 0.5e-5).abs() < 1e-20);
        assert_eq!(s.lr_at(50), 1e-5);
        assert_eq!(s.lr_at(1000), 0.0);
        assert_eq!(s.lr_at(5000), 0.0);
        assert_eq!(s.lr_at(0), 0.0);
    }

    #[test]
    fn continuous_and_piecewise_linear() {
        let s = WarmupLinearSchedule::new(3e-4, 777);
        let mut max = 0.0f64;
        for t in 0..=777 {
            let lr = s.lr_at(t);
            max = max.max(lr);
            if t > 0 {
                let jump = (lr - s.lr_at(t - 1)).abs();
                assert!(jump <= 3e-4 / s.warmup_steps.min(777 - s.warmup_steps) as f64 + 1e-18);
            }
            if t > 1 && t != s.warmup_steps && t - 1 != s.warmup_steps {
                let second = s.lr_at(t) - 2.0 * s.lr_at(t - 1) + s.lr_at(t - 2);
                if t - 2 != s.warmup_steps {
                    assert!(second.abs() < 1e-15, "kink at {t}");
                }
            }
        }
        assert_eq!(max, 3e-4);
    }
}
