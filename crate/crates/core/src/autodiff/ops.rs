//! Forward and backward kernels shared by the graph and the free functions.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Log-clamp floor used by [`cross_entropy`].
pub const LOG_FLOOR: f64 = 1e-12;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

fn check_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

fn check_matrix(op: &str, t: &Tensor) -> Result<()> {
    if t.rank() <= 2 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{op}: expected rank 1 or 2, got {:?}",
            t.shape()
        )))
    }
}

/// Row-wise `softmax(logits / tau)`, computed with max subtraction.
pub fn softmax_with_temperature(logits: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    check_matrix("softmax", logits)?;
    Ok(softmax_forward(logits, tau))
}

pub(crate) fn softmax_forward(logits: &Tensor, tau: f64) -> Tensor {
    let (rows, cols) = logits.rows_cols();
    let mut out = vec![0.0; logits.len()];
    for r in 0..rows {
        let row = logits.row(r);
        let dst = &mut out[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &z) in dst.iter_mut().zip(row) {
            *d = ((z - max) / tau).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Tensor::from_parts(logits.shape().to_vec(), out)
}

/// `dx = (y * (dy - <dy, y>)) / tau`, row-wise.
pub(crate) fn softmax_backward(y: &Tensor, dy: &[f64], tau: f64, dx: &mut [f64]) {
    let (rows, cols) = y.rows_cols();
    for r in 0..rows {
        let yr = y.row(r);
        let dyr = &dy[r * cols..(r + 1) * cols];
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for c in 0..cols {
            dx[r * cols + c] += yr[c] * (dyr[c] - dot) / tau;
        }
    }
}

/// Mean over rows of `-Σ target · ln(max(pred, 1e-12))`.
pub fn cross_entropy(pred_probs: &Tensor, target_probs: &Tensor) -> Result<f64> {
    check_same_shape("cross_entropy", pred_probs, target_probs)?;
    check_matrix("cross_entropy", pred_probs)?;
    Ok(cross_entropy_forward(pred_probs, target_probs))
}

pub(crate) fn cross_entropy_forward(pred: &Tensor, target: &Tensor) -> f64 {
    let (rows, _) = pred.rows_cols();
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| -t * p.max(LOG_FLOOR).ln())
        .sum();
    total / rows as f64
}

pub(crate) fn cross_entropy_backward(
    pred: &Tensor,
    target: &Tensor,
    dl: f64,
    dpred: Option<&mut [f64]>,
    dtarget: Option<&mut [f64]>,
) {
    let (rows, _) = pred.rows_cols();
    let scale = dl / rows as f64;
    if let Some(dp) = dpred {
        for ((d, &p), &t) in dp.iter_mut().zip(pred.data()).zip(target.data()) {
            // Clamped region is flat.
            if p >= LOG_FLOOR {
                *d -= scale * t / p;
            }
        }
    }
    if let Some(dt) = dtarget {
        for (d, &p) in dt.iter_mut().zip(pred.data()) {
            *d -= scale * p.max(LOG_FLOOR).ln();
        }
    }
}

/// `Σ (a - b)²` over the class axis, averaged over rows.
pub fn squared_l2(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape("squared_l2", a, b)?;
    Ok(squared_l2_forward(a, b))
}

pub(crate) fn squared_l2_forward(a: &Tensor, b: &Tensor) -> f64 {
    let (rows, _) = a.rows_cols();
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    total / rows as f64
}

/// `x [n, in] · wᵀ [in, out] + b`.
pub(crate) fn dense_forward(x: &[f64], n: usize, w: &Tensor, b: &Tensor) -> Tensor {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    let mut out = vec![0.0; n * out_dim];
    for r in 0..n {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let orow = &mut out[r * out_dim..(r + 1) * out_dim];
        for (o, dst) in orow.iter_mut().enumerate() {
            let wr = &wd[o * in_dim..(o + 1) * in_dim];
            *dst = b.data()[o] + dot(xr, wr);
        }
    }
    Tensor::from_parts(vec![n, out_dim], out)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) struct DenseGrads<'a> {
    pub dx: Option<&'a mut [f64]>,
    pub dw: Option<&'a mut [f64]>,
    pub db: Option<&'a mut [f64]>,
}

pub(crate) fn dense_backward(x: &[f64], n: usize, w: &Tensor, dout: &[f64], grads: DenseGrads<'_>) {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    if let Some(dx) = grads.dx {
        for r in 0..n {
            let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                let g = dout[r * out_dim + o];
                if g == 0.0 {
                    continue;
                }
                let wr = &wd[o * in_dim..(o + 1) * in_dim];
                for (d, &wv) in dxr.iter_mut().zip(wr) {
                    *d += g * wv;
                }
            }
        }
    }
    if let Some(dw) = grads.dw {
        for r in 0..n {
            let xr = &x[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                let g = dout[r * out_dim + o];
                if g == 0.0 {
                    continue;
                }
                let dwr = &mut dw[o * in_dim..(o + 1) * in_dim];
                for (d, &xv) in dwr.iter_mut().zip(xr) {
                    *d += g * xv;
                }
            }
        }
    }
    if let Some(db) = grads.db {
        for r in 0..n {
            for o in 0..out_dim {
                db[o] += dout[r * out_dim + o];
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oc: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.kh
    }
    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.kw
    }
    /// Valid output range along one axis for kernel offset `k`.
    fn range(out: usize, input: usize, k: usize, pad: usize) -> (usize, usize) {
        // Need 0 <= o + k - pad < input.
        let lo = pad.saturating_sub(k);
        let hi = (input + pad).saturating_sub(k).min(out);
        (lo, hi.max(lo))
    }
}

/// Stride-1 zero-padded 2-D cross-correlation.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], d: ConvDims) -> Tensor {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut out = vec![0.0; d.n * d.oc * oh * ow];
    for ni in 0..d.n {
        for o in 0..d.oc {
            let obase = (ni * d.oc + o) * oh * ow;
            out[obase..obase + oh * ow].fill(b[o]);
            for ci in 0..d.c {
                let xbase = (ni * d.c + ci) * d.h * d.w;
                for ky in 0..d.kh {
                    let (ylo, yhi) = ConvDims::range(oh, d.h, ky, d.pad);
                    for kx in 0..d.kw {
                        let wv = w[((o * d.c + ci) * d.kh + ky) * d.kw + kx];
                        let (xlo, xhi) = ConvDims::range(ow, d.w, kx, d.pad);
                        for oy in ylo..yhi {
                            let iy = oy + ky - d.pad;
                            let orow = &mut out[obase + oy * ow..obase + oy * ow + ow];
                            let xrow = &x[xbase + iy * d.w..xbase + iy * d.w + d.w];
                            for ox in xlo..xhi {
                                orow[ox] += wv * xrow[ox + kx - d.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![d.n, d.oc, oh, ow], out)
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    d: ConvDims,
    grads: DenseGrads<'_>,
) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let DenseGrads { mut dx, mut dw, db } = grads;
    for ni in 0..d.n {
        for o in 0..d.oc {
            let obase = (ni * d.oc + o) * oh * ow;
            let go = &dout[obase..obase + oh * ow];
            for ci in 0..d.c {
                let xbase = (ni * d.c + ci) * d.h * d.w;
                for ky in 0..d.kh {
                    let (ylo, yhi) = ConvDims::range(oh, d.h, ky, d.pad);
                    for kx in 0..d.kw {
                        let widx = ((o * d.c + ci) * d.kh + ky) * d.kw + kx;
                        let wv = w[widx];
                        let (xlo, xhi) = ConvDims::range(ow, d.w, kx, d.pad);
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = oy + ky - d.pad;
                            let grow = &go[oy * ow..oy * ow + ow];
                            let xoff = xbase + iy * d.w;
                            if let Some(dx) = dx.as_deref_mut() {
                                for ox in xlo..xhi {
                                    dx[xoff + ox + kx - d.pad] += wv * grow[ox];
                                }
                            }
                            for ox in xlo..xhi {
                                acc += grow[ox] * x[xoff + ox + kx - d.pad];
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    if let Some(db) = db {
        for ni in 0..d.n {
            for o in 0..d.oc {
                let obase = (ni * d.oc + o) * oh * ow;
                db[o] += dout[obase..obase + oh * ow].iter().sum::<f64>();
            }
        }
    }
}

/// Non-overlapping average pooling with window `k` (trailing rows/cols dropped).
pub(crate) fn avg_pool_forward(x: &Tensor, k: usize) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f64;
    let xd = x.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        acc += xd[plane * h * w + (oy * k + dy) * w + ox * k + dx];
                    }
                }
                out[plane * oh * ow + oy * ow + ox] = acc * scale;
            }
        }
    }
    Tensor::from_parts(vec![n, c, oh, ow], out)
}

pub(crate) fn avg_pool_backward(in_shape: &[usize], k: usize, dout: &[f64], dx: &mut [f64]) {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f64;
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout[plane * oh * ow + oy * ow + ox] * scale;
                for dy in 0..k {
                    for ddx in 0..k {
                        dx[plane * h * w + (oy * k + dy) * w + ox * k + ddx] += g;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_symmetric_logits_are_uniform() {
        let p = softmax_with_temperature(&t(&[0.0, 0.0]), 20.0).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_closed_form() {
        let e = std::f64::consts::E;
        let expect = [e / (e + 1.0), 1.0 / (e + 1.0)];
        let p = softmax_with_temperature(&t(&[2.0, 0.0]), 2.0).unwrap();
        let q = softmax_with_temperature(&t(&[20.0, 0.0]), 20.0).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(p.data()[i], expect[i], epsilon = 1e-5);
            assert_abs_diff_eq!(q.data()[i], expect[i], epsilon = 1e-5);
        }
        assert_abs_diff_eq!(expect[0], 0.731059, epsilon = 1e-6);
    }

    #[test]
    fn softmax_rejects_bad_tau() {
        assert!(matches!(
            softmax_with_temperature(&t(&[1.0]), 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(softmax_with_temperature(&t(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn softmax_stable_for_large_magnitudes() {
        let p = softmax_with_temperature(&t(&[1e4, -1e4, 9999.0]), 1.0).unwrap();
        assert!(p.is_finite());
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(
            cross_entropy(&t(&[1.0, 0.0]), &t(&[1.0, 0.0])).unwrap(),
            0.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            cross_entropy(&t(&[0.5, 0.5]), &t(&[1.0, 0.0])).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-6
        );
        let expect = -0.5 * (0.8f64.ln() + 0.2f64.ln());
        assert_abs_diff_eq!(expect, 0.916291, epsilon = 1e-6);
        assert_abs_diff_eq!(
            cross_entropy(&t(&[0.8, 0.2]), &t(&[0.5, 0.5])).unwrap(),
            expect,
            epsilon = 1e-5
        );
    }

    #[test]
    fn cross_entropy_averages_rows_and_checks_shape() {
        let p = Tensor::new(vec![2, 2], vec![0.5, 0.5, 1.0, 0.0]).unwrap();
        let y = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            cross_entropy(&p, &y).unwrap(),
            std::f64::consts::LN_2 / 2.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            cross_entropy(&p, &t(&[1.0, 0.0])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn squared_l2_examples() {
        let a = t(&[0.3, -1.7]);
        assert_eq!(squared_l2(&a, &a).unwrap(), 0.0);
        assert_eq!(squared_l2(&t(&[1.0, 2.0]), &t(&[0.0, 0.0])).unwrap(), 5.0);
        assert_eq!(squared_l2(&t(&[3.0, 4.0]), &t(&[0.0, 0.0])).unwrap(), 25.0);
        assert!(squared_l2(&t(&[1.0]), &t(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let d = ConvDims {
            n: 1,
            c: 1,
            h: 3,
            w: 3,
            oc: 1,
            kh: 3,
            kw: 3,
            pad: 1,
        };
        let y = conv2d_forward(&x, &w, &[0.0], d);
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data(), &x[..]);
    }

    #[test]
    fn conv_matches_naive_loop() {
        let d = ConvDims {
            n: 2,
            c: 2,
            h: 4,
            w: 5,
            oc: 3,
            kh: 3,
            kw: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..d.n * d.c * d.h * d.w)
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let w: Vec<f64> = (0..d.oc * d.c * d.kh * d.kw)
            .map(|i| ((i * 13) % 7) as f64 - 3.0)
            .collect();
        let b = [0.5, -1.0, 2.0];
        let y = conv2d_forward(&x, &w, &b, d);
        let (oh, ow) = (d.out_h(), d.out_w());
        for ni in 0..d.n {
            for o in 0..d.oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for ci in 0..d.c {
                            for ky in 0..d.kh {
                                for kx in 0..d.kw {
                                    let iy = oy as isize + ky as isize - d.pad as isize;
                                    let ix = ox as isize + kx as isize - d.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize
                                    {
                                        continue;
                                    }
                                    acc += w[((o * d.c + ci) * d.kh + ky) * d.kw + kx]
                                        * x[((ni * d.c + ci) * d.h + iy as usize) * d.w
                                            + ix as usize];
                                }
                            }
                        }
                        assert_eq!(y.data()[((ni * d.oc + o) * oh + oy) * ow + ox], acc);
                    }
                }
            }
        }
    }
}
