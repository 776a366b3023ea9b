use super::Matrix2D;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &Matrix2D) -> Matrix2D {
    x.map(|v| v.max(0.0))
}

/// Passes gradient where the pre-activation was positive.
pub fn relu_backward(pre: &Matrix2D, grad_out: &Matrix2D) -> Matrix2D {
    let mut g = grad_out.clone();
    for (gv, &p) in g.values_mut().iter_mut().zip(pre.values()) {
        if p <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Correctly rounded sum of a sequence of finite reals.
///
/// The result does not depend on the order of the terms.
pub fn exact_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in terms {
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    let Some(&top) = partials.last() else {
        return 0.0;
    };
    let mut hi = top;
    let mut lo = 0.0;
    let mut n = partials.len() - 1;
    while n > 0 {
        n -= 1;
        let x = hi;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // round-half-even across the remaining partials
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Stable softmax of one row, written into `out`. The normaliser is an
/// [`exact_sum`], so reordering the logits only reorders the output.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
    }
    let denom = exact_sum(out.iter().copied());
    for o in out.iter_mut() {
        *o /= denom;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix2D) -> Result<Matrix2D> {
    if !logits.is_finite() {
        return Err(Error::numeric("softmax_rows: non-finite logit"));
    }
    let mut out = Matrix2D::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        softmax_into(logits.row(r), out.row_mut(r));
    }
    Ok(out)
}

/// Backward of [`softmax_rows`] given its output `probs`.
pub fn softmax_rows_backward(probs: &Matrix2D, grad_out: &Matrix2D) -> Matrix2D {
    let mut g = Matrix2D::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dy = grad_out.row(r);
        let dot: f64 = p.iter().zip(dy).map(|(a, b)| a * b).sum();
        for (o, (&pv, &dv)) in g.row_mut(r).iter_mut().zip(p.iter().zip(dy)) {
            *o = pv * (dv - dot);
        }
    }
    g
}

/// One output sample of a linear resize: `lo + frac · (hi − lo)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizeTap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Sample positions `t · (l − 1) / (target − 1)`; a single output takes the midpoint.
pub fn resize_taps(len: usize, target_len: usize) -> Vec<ResizeTap> {
    (0..target_len)
        .map(|t| {
            let pos = if target_len == 1 {
                (len - 1) as f64 / 2.0
            } else {
                (t * (len - 1)) as f64 / (target_len - 1) as f64
            };
            let lo = (pos.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            ResizeTap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

pub fn linear_resize(seq: &Matrix2D, target_len: usize) -> Result<Matrix2D> {
    if seq.rows() == 0 {
        return Err(Error::input("linear_resize: empty sequence"));
    }
    if target_len == 0 {
        return Err(Error::input("linear_resize: target length must be at least 1"));
    }
    let mut out = Matrix2D::zeros(target_len, seq.cols());
    for (t, tap) in resize_taps(seq.rows(), target_len).into_iter().enumerate() {
        for c in 0..seq.cols() {
            let a = seq.get(tap.lo, c);
            let v = if tap.frac == 0.0 {
                a
            } else {
                a + tap.frac * (seq.get(tap.hi, c) - a)
            };
            out.set(t, c, v);
        }
    }
    Ok(out)
}

/// Adjoint of [`linear_resize`]: maps a gradient on the resized sequence back
/// to a gradient on the `source_len` input.
pub fn linear_resize_backward(grad_out: &Matrix2D, source_len: usize) -> Matrix2D {
    let mut g = Matrix2D::zeros(source_len, grad_out.cols());
    for (t, tap) in resize_taps(source_len, grad_out.rows()).into_iter().enumerate() {
        for c in 0..grad_out.cols() {
            let v = grad_out.get(t, c);
            g.add_at(tap.lo, c, (1.0 - tap.frac) * v);
            g.add_at(tap.hi, c, tap.frac * v);
        }
    }
    g
}

/// Width-2 max pooling; an odd trailing row passes through.
/// Also returns, per output value, the source row it came from.
pub fn downsample_half_indexed(seq: &Matrix2D) -> Result<(Matrix2D, Vec<usize>)> {
    if seq.rows() < 2 {
        return Err(Error::input(format!(
            "downsample_half needs at least 2 rows, got {}",
            seq.rows()
        )));
    }
    let out_len = seq.rows().div_ceil(2);
    let mut out = Matrix2D::zeros(out_len, seq.cols());
    let mut argmax = Vec::with_capacity(out_len * seq.cols());
    for k in 0..out_len {
        for c in 0..seq.cols() {
            let a = 2 * k;
            let b = a + 1;
            let src = if b < seq.rows() && seq.get(b, c) > seq.get(a, c) {
                b
            } else {
                a
            };
            out.set(k, c, seq.get(src, c));
            argmax.push(src);
        }
    }
    Ok((out, argmax))
}

pub fn downsample_half(seq: &Matrix2D) -> Result<Matrix2D> {
    downsample_half_indexed(seq).map(|(m, _)| m)
}

pub fn downsample_half_backward(
    argmax: &[usize],
    grad_out: &Matrix2D,
    source_len: usize,
) -> Matrix2D {
    let mut g = Matrix2D::zeros(source_len, grad_out.cols());
    for k in 0..grad_out.rows() {
        for c in 0..grad_out.cols() {
            g.add_at(argmax[k * grad_out.cols() + c], c, grad_out.get(k, c));
        }
    }
    g
}

pub fn upsample_double(seq: &Matrix2D) -> Result<Matrix2D> {
    linear_resize(seq, 2 * seq.rows())
}
