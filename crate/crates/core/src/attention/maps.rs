//! Attention-map extraction and CSV / PGM rendering.

use std::io::{self, Write};

use super::plan::AttentionPlan;
use super::AttnMode;
use crate::numerics::NdArray;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    /// Dense maps are `[L, Lk]`. Sparse maps are `[L, 2r+1+k]`: column `c < 2r+1`
    /// holds the key at relative offset `c - r`, later columns the global tokens.
    pub weights: NdArray,
    /// Key row index behind each sparse-map cell, `-1` where the window runs
    /// off the sequence. Global token `b` is reported as `L + b`.
    pub legend: Option<Vec<Vec<i64>>>,
}

impl AttentionMap {
    pub fn from_plan(layer: usize, head: usize, mode: AttnMode, plan: &AttentionPlan, probs: &[f64], heads: usize) -> Self {
        let slots_total = plan.score_count();
        debug_assert_eq!(probs.len(), heads * slots_total);
        let head_probs = &probs[head * slots_total..(head + 1) * slots_total];
        let queries = plan.num_queries();
        let (radius, globals) = match mode {
            AttnMode::Dense => {
                let mut w = NdArray::zeros(&[queries, plan.num_keys()]);
                for i in 0..queries {
                    for s in plan.slots(i) {
                        let j = plan.keys()[s] as usize;
                        w.row_mut(i)[j] += head_probs[s];
                    }
                }
                return Self {
                    layer,
                    head,
                    weights: w,
                    legend: None,
                };
            }
            AttnMode::Sliding { radius } => (radius, 0),
            AttnMode::SlidingGlobal { radius, blocks } => (radius, plan.num_keys().saturating_sub(queries).min(blocks)),
        };
        let width = 2 * radius + 1 + globals;
        let mut w = NdArray::zeros(&[queries, width]);
        let mut legend = vec![vec![-1i64; width]; queries];
        for (i, row) in legend.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate().take(2 * radius + 1) {
                let j = i as i64 + c as i64 - radius as i64;
                if j >= 0 && (j as usize) < queries {
                    *cell = j;
                }
            }
            for b in 0..globals {
                row[2 * radius + 1 + b] = (queries + b) as i64;
            }
        }
        for i in 0..queries {
            for s in plan.slots(i) {
                let j = plan.keys()[s] as usize;
                let c = if j < queries {
                    j + radius - i
                } else {
                    2 * radius + 1 + (j - queries)
                };
                w.row_mut(i)[c] += head_probs[s];
            }
        }
        Self {
            layer,
            head,
            weights: w,
            legend: Some(legend),
        }
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for i in 0..self.weights.rows() {
            let line: Vec<String> = self.weights.row(i).iter().map(|v| format!("{v:.9e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn write_legend_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        if let Some(legend) = &self.legend {
            for row in legend {
                let line: Vec<String> = row.iter().map(i64::to_string).collect();
                writeln!(out, "{}", line.join(","))?;
            }
        }
        Ok(())
    }

    /// Binary 8-bit PGM (P5); each row is scaled so its maximum maps to 255.
    pub fn write_pgm<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let (h, w) = (self.weights.rows(), self.weights.cols());
        write!(out, "P5\n{w} {h}\n255\n")?;
        let mut buf = Vec::with_capacity(w * h);
        for i in 0..h {
            let row = self.weights.row(i);
            let max = row.iter().copied().fold(0.0f64, f64::max);
            for &v in row {
                let px = if max > 0.0 { (v / max * 255.0).round() } else { 0.0 };
                buf.push(px.clamp(0.0, 255.0) as u8);
            }
        }
        out.write_all(&buf)
    }
}
