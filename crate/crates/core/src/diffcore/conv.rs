//! im2col convolution kernels.

use super::ops::gemm;

fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad).saturating_sub(k) / stride + 1
}

/// Columns `[c*kh*kw, oh*ow]` for a single image `[c, h, w]`.
#[allow(clippy::too_many_arguments)]
fn im2col(img: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize, cols: &mut [f64]) {
    let (oh, ow) = (out_extent(h, kh, stride, pad), out_extent(w, kw, stride, pad));
    let npos = oh * ow;
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        dst[oy * ow + ox] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            img[(ch * h + iy as usize) * w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize, img: &mut [f64]) {
    let (oh, ow) = (out_extent(h, kh, stride, pad), out_extent(w, kw, stride, pad));
    let npos = oh * ow;
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            img[(ch * h + iy as usize) * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    input: &[f64],
    ishape: &[usize],
    weight: &[f64],
    wshape: &[usize],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (o, kh, kw) = (wshape[0], wshape[2], wshape[3]);
    let (oh, ow) = (out_extent(h, kh, stride, pad), out_extent(w, kw, stride, pad));
    let (krows, npos) = (c * kh * kw, oh * ow);
    let mut cols = vec![0.0; krows * npos];
    let mut out = vec![0.0; n * o * npos];
    for b in 0..n {
        im2col(&input[b * c * h * w..(b + 1) * c * h * w], c, h, w, kh, kw, stride, pad, &mut cols);
        let dst = &mut out[b * o * npos..(b + 1) * o * npos];
        gemm(o, krows, npos, weight, (krows as isize, 1), &cols, (npos as isize, 1), dst);
        for (oc, bv) in bias.iter().enumerate() {
            dst[oc * npos..(oc + 1) * npos].iter_mut().for_each(|v| *v += bv);
        }
    }
    (out, vec![n, o, oh, ow])
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    input: &[f64],
    ishape: &[usize],
    weight: &[f64],
    wshape: &[usize],
    g: &[f64],
    stride: usize,
    pad: usize,
    need_input: bool,
) -> ConvGrads {
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (o, kh, kw) = (wshape[0], wshape[2], wshape[3]);
    let (oh, ow) = (out_extent(h, kh, stride, pad), out_extent(w, kw, stride, pad));
    let (krows, npos) = (c * kh * kw, oh * ow);
    let mut cols = vec![0.0; krows * npos];
    let mut dcols = vec![0.0; krows * npos];
    let mut gw = vec![0.0; o * krows];
    let mut gw_b = vec![0.0; o * krows];
    let mut gb = vec![0.0; o];
    let mut gi = need_input.then(|| vec![0.0; input.len()]);
    for b in 0..n {
        let gout = &g[b * o * npos..(b + 1) * o * npos];
        for oc in 0..o {
            gb[oc] += gout[oc * npos..(oc + 1) * npos].iter().sum::<f64>();
        }
        im2col(&input[b * c * h * w..(b + 1) * c * h * w], c, h, w, kh, kw, stride, pad, &mut cols);
        // dW += G · colsᵀ
        gemm(o, npos, krows, gout, (npos as isize, 1), &cols, (1, npos as isize), &mut gw_b);
        gw.iter_mut().zip(&gw_b).for_each(|(a, v)| *a += v);
        if let Some(gi) = gi.as_mut() {
            // dcols = Wᵀ · G
            gemm(krows, o, npos, weight, (1, krows as isize), gout, (npos as isize, 1), &mut dcols);
            col2im(&dcols, c, h, w, kh, kw, stride, pad, &mut gi[b * c * h * w..(b + 1) * c * h * w]);
        }
    }
    ConvGrads { input: gi, weight: gw, bias: gb }
}
