//! Raw numeric kernels behind the tape ops. Convolution goes through
//! im2col + GEMM; backward passes recompute the column matrix instead of
//! caching it, trading a little compute for activation-sized memory.

use crate::tensor::Scalar;

/// Output spatial size for one axis: floor((n + 2*pad - k)/stride) + 1.
pub fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Unrolls one image (cin x h x w) into a (cin*k*k) x (oh*ow) column matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<F: Scalar>(
    input: &[F],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    col: &mut [F],
) {
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(w, k, stride, pad);
    debug_assert_eq!(input.len(), cin * h * w);
    debug_assert_eq!(col.len(), cin * k * k * oh * ow);

    for c in 0..cin {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *out = if ix < 0 || ix >= w as isize {
                            F::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto the image grid (adjoint of im2col).
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<F: Scalar>(
    col: &[F],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut [F],
) {
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(w, k, stride, pad);
    debug_assert_eq!(out.len(), cin * h * w);

    for c in 0..cin {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        plane[iy as usize * w + ix as usize] =
                            plane[iy as usize * w + ix as usize] + src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation of a batch against a kernel bank, plus bias.
/// input: b x cin x h x w, kernel: cout x cin x k x k, output: b x cout x oh x ow.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<F: Scalar>(
    input: &[F],
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    kernel: &[F],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: &[F],
    output: &mut [F],
) {
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(w, k, stride, pad);
    let ck = cin * k * k;
    let ohw = oh * ow;
    let mut col = vec![F::zero(); ck * ohw];

    for b in 0..batch {
        let inp = &input[b * cin * h * w..(b + 1) * cin * h * w];
        im2col(inp, cin, h, w, k, stride, pad, &mut col);
        let out = &mut output[b * cout * ohw..(b + 1) * cout * ohw];
        F::gemm(
            cout,
            ck,
            ohw,
            F::one(),
            kernel,
            ck as isize,
            1,
            &col,
            ohw as isize,
            1,
            F::zero(),
            out,
            ohw as isize,
            1,
        );
        for co in 0..cout {
            let bv = bias[co];
            for v in &mut out[co * ohw..(co + 1) * ohw] {
                *v = *v + bv;
            }
        }
    }
}

/// Backward pass of `conv2d_forward`. Accumulates (+=) into the grad buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<F: Scalar>(
    input: &[F],
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    kernel: &[F],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    grad_out: &[F],
    grad_input: &mut [F],
    grad_kernel: &mut [F],
    grad_bias: &mut [F],
) {
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(w, k, stride, pad);
    let ck = cin * k * k;
    let ohw = oh * ow;
    let mut col = vec![F::zero(); ck * ohw];
    let mut dcol = vec![F::zero(); ck * ohw];

    for b in 0..batch {
        let inp = &input[b * cin * h * w..(b + 1) * cin * h * w];
        let gout = &grad_out[b * cout * ohw..(b + 1) * cout * ohw];

        im2col(inp, cin, h, w, k, stride, pad, &mut col);

        // d_kernel += gout (cout x ohw) . col^T (ohw x ck)
        F::gemm(
            cout,
            ohw,
            ck,
            F::one(),
            gout,
            ohw as isize,
            1,
            &col,
            1,
            ohw as isize,
            F::one(),
            grad_kernel,
            ck as isize,
            1,
        );

        for co in 0..cout {
            let mut s = 0.0f64;
            for v in &gout[co * ohw..(co + 1) * ohw] {
                s += v.as_f64();
            }
            grad_bias[co] = grad_bias[co] + F::from_f64(s);
        }

        // dcol = kernel^T (ck x cout) . gout (cout x ohw)
        F::gemm(
            ck,
            cout,
            ohw,
            F::one(),
            kernel,
            1,
            ck as isize,
            gout,
            ohw as isize,
            1,
            F::zero(),
            &mut dcol,
            ohw as isize,
            1,
        );
        let gin = &mut grad_input[b * cin * h * w..(b + 1) * cin * h * w];
        col2im_add(&dcol, cin, h, w, k, stride, pad, gin);
    }
}

/// out (b x dout) = x (b x d) . w^T (d x dout) + bias.
pub fn affine_forward<F: Scalar>(
    x: &[F],
    batch: usize,
    d: usize,
    weight: &[F],
    dout: usize,
    bias: Option<&[F]>,
    out: &mut [F],
) {
    F::gemm(
        batch,
        d,
        dout,
        F::one(),
        x,
        d as isize,
        1,
        weight,
        1,
        d as isize,
        F::zero(),
        out,
        dout as isize,
        1,
    );
    if let Some(bias) = bias {
        for b in 0..batch {
            let row = &mut out[b * dout..(b + 1) * dout];
            for (v, bv) in row.iter_mut().zip(bias) {
                *v = *v + *bv;
            }
        }
    }
}

/// Backward pass of `affine_forward`. Accumulates into the grad buffers.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward<F: Scalar>(
    x: &[F],
    batch: usize,
    d: usize,
    weight: &[F],
    dout: usize,
    grad_out: &[F],
    grad_x: &mut [F],
    grad_weight: &mut [F],
    grad_bias: Option<&mut [F]>,
) {
    // dx += gout (b x dout) . w (dout x d)
    F::gemm(
        batch,
        dout,
        d,
        F::one(),
        grad_out,
        dout as isize,
        1,
        weight,
        d as isize,
        1,
        F::one(),
        grad_x,
        d as isize,
        1,
    );
    // dw += gout^T (dout x b) . x (b x d)
    F::gemm(
        dout,
        batch,
        d,
        F::one(),
        grad_out,
        1,
        dout as isize,
        x,
        d as isize,
        1,
        F::one(),
        grad_weight,
        d as isize,
        1,
    );
    if let Some(grad_bias) = grad_bias {
        for b in 0..batch {
            let row = &grad_out[b * dout..(b + 1) * dout];
            for (g, r) in grad_bias.iter_mut().zip(row) {
                *g = *g + *r;
            }
        }
    }
}

/// Nearest-neighbor 2x upsampling: each pixel fills a 2x2 block.
pub fn upsample2x_forward<F: Scalar>(input: &[F], planes: usize, h: usize, w: usize, out: &mut [F]) {
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
}

/// Sums each 2x2 block of grad_out back onto its source pixel.
pub fn upsample2x_backward<F: Scalar>(
    grad_out: &[F],
    planes: usize,
    h: usize,
    w: usize,
    grad_in: &mut [F],
) {
    let ow = 2 * w;
    for p in 0..planes {
        let gsrc = &grad_out[p * 4 * h * w..(p + 1) * 4 * h * w];
        let gdst = &mut grad_in[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            for x in 0..ow {
                gdst[(y / 2) * w + x / 2] = gdst[(y / 2) * w + x / 2] + gsrc[y * ow + x];
            }
        }
    }
}

/// Sum of squared differences, accumulated in f64 for headroom.
pub fn sq_diff_sum<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = x.as_f64() - y.as_f64();
        acc += d * d;
    }
    F::from_f64(acc)
}

/// Row-wise softmax of logits (b x k), written into `probs`.
pub fn softmax<F: Scalar>(logits: &[F], batch: usize, k: usize, probs: &mut [F]) {
    for b in 0..batch {
        let row = &logits[b * k..(b + 1) * k];
        let out = &mut probs[b * k..(b + 1) * k];
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut denom = 0.0f64;
        for (o, &v) in out.iter_mut().zip(row) {
            let e = (v - max).as_f64().exp();
            *o = F::from_f64(e);
            denom += e;
        }
        for o in out.iter_mut() {
            *o = F::from_f64(o.as_f64() / denom);
        }
    }
}

/// Mean cross-entropy of logits (b x k) against integer labels.
pub fn softmax_cross_entropy<F: Scalar>(logits: &[F], batch: usize, k: usize, labels: &[usize]) -> F {
    let mut loss = 0.0f64;
    for b in 0..batch {
        let row = &logits[b * k..(b + 1) * k];
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut denom = 0.0f64;
        for &v in row {
            denom += (v - max).as_f64().exp();
        }
        loss += denom.ln() - (row[labels[b]] - max).as_f64();
    }
    F::from_f64(loss / batch as f64)
}

/// d(mean CE)/d(logits) = (softmax - one_hot) / batch, accumulated.
pub fn softmax_cross_entropy_backward<F: Scalar>(
    logits: &[F],
    batch: usize,
    k: usize,
    labels: &[usize],
    upstream: F,
    grad_logits: &mut [F],
) {
    let mut probs = vec![F::zero(); batch * k];
    softmax(logits, batch, k, &mut probs);
    let scale = upstream.as_f64() / batch as f64;
    for b in 0..batch {
        for j in 0..k {
            let indicator = if j == labels[b] { 1.0 } else { 0.0 };
            let g = (probs[b * k + j].as_f64() - indicator) * scale;
            grad_logits[b * k + j] = grad_logits[b * k + j] + F::from_f64(g);
        }
    }
}
