//! Forward kernels shared by the autodiff graph and the inference paths.

use rand::Rng;

use super::array::NdArray;
use crate::error::{Error, Result};

pub const RMS_EPS: f64 = 1e-6;

/// `c (+)= op(a) * op(b)` where `a` is `m×k`, `b` is `k×n`, each given with
/// explicit row/column strides so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe views that lie inside `a`, `b` and `c`,
    // which the callers size as m×k, k×n and m×n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn require_2d(op: &'static str, a: &NdArray, b: &NdArray) -> Result<()> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn matmul(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    require_2d("matmul", a, b)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = NdArray::zeros(&[m, n]);
    gemm(
        m,
        k,
        n,
        a.data(),
        (k as isize, 1),
        b.data(),
        (n as isize, 1),
        out.data_mut(),
        false,
    );
    Ok(out)
}

fn same_shape(op: &'static str, a: &NdArray, b: &NdArray) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    same_shape("add", a, b)?;
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

pub fn mul(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    NdArray::new(a.shape().to_vec(), data)
}

/// Adds a length-`cols` vector to every row.
pub fn add_row(a: &NdArray, row: &NdArray) -> Result<NdArray> {
    if row.len() != a.cols() {
        return Err(Error::Shape {
            op: "add_row",
            left: a.shape().to_vec(),
            right: row.shape().to_vec(),
        });
    }
    let mut out = a.clone();
    for i in 0..out.rows() {
        for (x, b) in out.row_mut(i).iter_mut().zip(row.data()) {
            *x += b;
        }
    }
    Ok(out)
}

pub fn concat_rows(parts: &[&NdArray]) -> Result<NdArray> {
    let cols = parts.first().map_or(0, |p| p.cols());
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.shape().len() != 2 || p.cols() != cols {
            return Err(Error::Shape {
                op: "concat_rows",
                left: parts[0].shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    NdArray::new(vec![rows, cols], data)
}

pub fn concat_cols(parts: &[&NdArray]) -> Result<NdArray> {
    let rows = parts.first().map_or(0, |p| p.rows());
    for p in parts {
        if p.shape().len() != 2 || p.rows() != rows {
            return Err(Error::Shape {
                op: "concat_cols",
                left: parts[0].shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    NdArray::new(vec![rows, cols], data)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// Max-subtracted softmax along `axis` of a 1-D or 2-D array.
pub fn softmax(x: &NdArray, axis: usize) -> Result<NdArray> {
    let ndim = x.shape().len().max(1);
    if axis >= ndim {
        return Err(Error::InvalidArgument(format!(
            "softmax axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    if axis + 1 == ndim {
        let mut out = x.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        Ok(out)
    } else if ndim == 2 {
        let t = softmax(&x.transpose(), 1)?;
        Ok(t.transpose())
    } else {
        Err(Error::InvalidArgument(
            "softmax supports 1-D or 2-D arrays".into(),
        ))
    }
}

pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - lse;
    }
}

pub fn log_softmax(x: &NdArray) -> NdArray {
    let mut out = x.clone();
    for i in 0..x.rows() {
        log_softmax_row(x.row(i), out.row_mut(i));
    }
    out
}

/// Returns the normalized output and the per-row inverse RMS.
pub(crate) fn rms_norm_with_stats(x: &NdArray, gain: &NdArray) -> Result<(NdArray, Vec<f64>)> {
    if gain.len() != x.cols() || x.cols() == 0 {
        return Err(Error::Shape {
            op: "rms_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    let mut inv = Vec::with_capacity(x.rows());
    let d = x.cols() as f64;
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (ms + RMS_EPS).sqrt();
        for (v, g) in row.iter_mut().zip(gain.data()) {
            *v *= r * g;
        }
        inv.push(r);
    }
    Ok((out, inv))
}

pub fn rms_norm(x: &NdArray, gain: &NdArray) -> Result<NdArray> {
    rms_norm_with_stats(x, gain).map(|(y, _)| y)
}

/// Mean negative log-likelihood over targets that are not `ignore_id`.
pub fn cross_entropy_with_logits(logits: &NdArray, targets: &[usize], ignore_id: usize) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut buf = vec![0.0; logits.cols()];
    for (i, &t) in targets.iter().enumerate() {
        if t == ignore_id {
            continue;
        }
        if t >= logits.cols() {
            return Err(Error::InvalidArgument(format!(
                "target {t} outside vocabulary of {}",
                logits.cols()
            )));
        }
        log_softmax_row(logits.row(i), &mut buf);
        total -= buf[t];
        count += 1;
    }
    if count == 0 {
        return Err(Error::UndefinedLoss);
    }
    Ok(total / count as f64)
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn dropout<R: Rng + ?Sized>(x: &NdArray, rate: f64, rng: &mut R, training: bool) -> NdArray {
    if !training || rate <= 0.0 {
        return x.clone();
    }
    let mask = dropout_mask(x.len(), rate, rng);
    let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
    NdArray::new(x.shape().to_vec(), data).expect("shape preserved")
}

pub fn relu(x: &NdArray) -> NdArray {
    x.map(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_examples() {
        let id = NdArray::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = NdArray::from_rows(&[vec![5.0], vec![7.0]]);
        assert_eq!(matmul(&id, &b).unwrap(), b);
        let a = NdArray::from_rows(&[vec![1.0, 2.0]]);
        let b = NdArray::from_rows(&[vec![3.0], vec![4.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
        let bad = matmul(&NdArray::zeros(&[2, 3]), &NdArray::zeros(&[4, 2]));
        match bad {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![4, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&NdArray::from_rows(&[vec![0.0, 0.0]]), 1).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&NdArray::from_rows(&[vec![1000.0, 1000.0]]), 1).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&NdArray::from_rows(&[vec![4.0, -4.0]]), 1).unwrap();
        let hi = 1.0 / (1.0 + (-8.0f64).exp());
        assert!((s.data()[0] - 0.999665).abs() < 1e-6);
        assert!((s.data()[0] - hi).abs() < 1e-15);
        assert!((s.data()[1] - 0.000335).abs() < 1e-6);
    }

    #[test]
    fn softmax_axis_zero() {
        let x = NdArray::from_rows(&[vec![0.0, 1.0], vec![0.0, 3.0]]);
        let s = softmax(&x, 0).unwrap();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get(0, 1) + s.get(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rms_norm_examples() {
        let ones = NdArray::full(&[2], 1.0);
        let y = rms_norm(&NdArray::from_rows(&[vec![3.0, -3.0]]), &ones).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-5 && (y.data()[1] + 1.0).abs() < 1e-5);
        let y = rms_norm(&NdArray::from_rows(&[vec![0.0, 0.0]]), &ones).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = NdArray::from_fn(5, 32, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y = rms_norm(&x, &NdArray::full(&[32], 1.0)).unwrap();
        for i in 0..5 {
            let rms = (y.row(i).iter().map(|v| v * v).sum::<f64>() / 32.0).sqrt();
            assert!((rms - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let z = NdArray::zeros(&[3, 4]);
        let l = cross_entropy_with_logits(&z, &[0, 3, 2], 999).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let mut sharp = NdArray::zeros(&[1, 4]);
        sharp.data_mut()[2] = 1e6;
        assert!(cross_entropy_with_logits(&sharp, &[2], 999).unwrap().abs() < 1e-9);
        assert!(matches!(
            cross_entropy_with_logits(&z, &[9, 9, 9], 9),
            Err(Error::UndefinedLoss)
        ));
    }

    #[test]
    fn cross_entropy_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = NdArray::from_fn(6, 7, |_, _| rng.random::<f64>() * 6.0 - 3.0);
        let targets = [1usize, 0, 6, 99, 3, 2];
        // independent: log of explicit normalized exponentials
        let mut oracle = 0.0;
        let mut n = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t == 99 {
                continue;
            }
            let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
            oracle -= (logits.get(i, t).exp() / z).ln();
            n += 1.0;
        }
        oracle /= n;
        let got = cross_entropy_with_logits(&logits, &targets, 99).unwrap();
        assert!((got - oracle).abs() < 1e-10);
    }

    #[test]
    fn dropout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = NdArray::full(&[1000], 2.0);
        assert_eq!(dropout(&x, 0.0, &mut rng, true), x);
        assert_eq!(dropout(&x, 0.1, &mut rng, false), x);
        let big = NdArray::full(&[1_000_000], 1.0);
        let y = dropout(&big, 0.1, &mut rng, true);
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((zeros - 0.1).abs() < 0.003, "zero fraction {zeros}");
        let survivor = y.data().iter().find(|&&v| v != 0.0).unwrap();
        assert!((survivor - 1.0 / 0.9).abs() < 1e-12);
    }
}
