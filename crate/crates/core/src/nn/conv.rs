//! im2col-based 2-D convolution kernels (NCHW layout, OIHW weights).

use super::linalg::{gemm, Mat};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }
}

fn geometry(x: &Tensor, w: &Tensor, stride: (usize, usize), pad: (usize, usize)) -> Result<Geometry> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("input {:?} and kernel {:?} must both be rank 4", x.shape(), w.shape()),
        ));
    }
    let (n, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (o, kc, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    if c != kc {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels but kernel expects {kc}"),
        ));
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::shape("conv2d", "stride must be >= 1"));
    }
    if h + 2 * pad.0 < kh || wd + 2 * pad.1 < kw {
        return Err(Error::shape(
            "conv2d",
            format!(
                "padded input {}x{} smaller than kernel {kh}x{kw}",
                h + 2 * pad.0,
                wd + 2 * pad.1
            ),
        ));
    }
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    Ok(Geometry {
        n,
        c,
        h,
        w: wd,
        o,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: pad.0,
        pw: pad.1,
        oh,
        ow,
    })
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad).saturating_sub(kernel) / stride + 1
}

fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    let out_row = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    if ii < 0 || ii as usize >= g.h {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &x[(ci * g.h + ii as usize) * g.w..(ci * g.h + ii as usize + 1) * g.w];
                    for (oj, v) in out_row.iter_mut().enumerate() {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        *v = if jj < 0 || jj as usize >= g.w {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, dx: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    if ii < 0 || ii as usize >= g.h {
                        continue;
                    }
                    let base = (ci * g.h + ii as usize) * g.w;
                    for oj in 0..g.ow {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        if jj >= 0 && (jj as usize) < g.w {
                            dx[base + jj as usize] += src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor> {
    let g = geometry(x, w, stride, pad)?;
    let (patch, p) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * p;
    let mut out = vec![0.0; g.n * out_len];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; patch * p]
    };
    for b in 0..g.n {
        let xs = &x.data()[b * in_len..(b + 1) * in_len];
        let colm = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        gemm(
            Mat::new(w.data(), g.o, patch),
            Mat::new(colm, patch, p),
            &mut out[b * out_len..(b + 1) * out_len],
            0.0,
        );
    }
    Tensor::new(vec![g.n, g.o, g.oh, g.ow], out)
}

#[allow(clippy::type_complexity)]
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: (usize, usize),
    pad: (usize, usize),
    want_dx: bool,
    want_dw: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let g = geometry(x, w, stride, pad)?;
    let (patch, p) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * p;
    let mut dw = if want_dw {
        vec![0.0; g.o * patch]
    } else {
        Vec::new()
    };
    let mut dx = if want_dx {
        vec![0.0; x.numel()]
    } else {
        Vec::new()
    };
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; patch * p] };
    let mut dcols = if want_dx && !pointwise {
        vec![0.0; patch * p]
    } else {
        Vec::new()
    };
    for b in 0..g.n {
        let xs = &x.data()[b * in_len..(b + 1) * in_len];
        let go = Mat::new(&gout.data()[b * out_len..(b + 1) * out_len], g.o, p);
        if want_dw {
            let colm = if pointwise {
                xs
            } else {
                im2col(xs, &g, &mut cols);
                &cols
            };
            gemm(go, Mat::new(colm, patch, p).t(), &mut dw, 1.0);
        }
        if want_dx {
            let wt = Mat::new(w.data(), g.o, patch).t();
            if pointwise {
                gemm(wt, go, &mut dx[b * in_len..(b + 1) * in_len], 0.0);
            } else {
                gemm(wt, go, &mut dcols, 0.0);
                col2im(&dcols, &g, &mut dx[b * in_len..(b + 1) * in_len]);
            }
        }
    }
    let dx = if want_dx {
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    let dw = if want_dw {
        Some(Tensor::new(w.shape().to_vec(), dw)?)
    } else {
        None
    };
    Ok((dx, dw))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation.
    fn naive(x: &Tensor, w: &Tensor, stride: (usize, usize), pad: (usize, usize)) -> Vec<f64> {
        let (n, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (o, _, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
        let oh = conv_out_len(h, kh, stride.0, pad.0);
        let ow = conv_out_len(wd, kw, stride.1, pad.1);
        let mut out = vec![0.0; n * o * oh * ow];
        for b in 0..n {
            for oc in 0..o {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for a in 0..kh {
                                for bb in 0..kw {
                                    let ii = (i * stride.0 + a) as isize - pad.0 as isize;
                                    let jj = (j * stride.1 + bb) as isize - pad.1 as isize;
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                        s += x.data()[((b * c + ci) * h + ii as usize) * wd + jj as usize]
                                            * w.data()[((oc * c + ci) * kh + a) * kw + bb];
                                    }
                                }
                            }
                        }
                        out[((b * o + oc) * oh + i) * ow + j] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_with_stride_and_padding() {
        let x = Tensor::new(
            vec![2, 3, 7, 6],
            (0..2 * 3 * 7 * 6).map(|i| ((i * 7919) % 23) as f64 - 11.0).collect(),
        )
        .unwrap();
        let w = Tensor::new(
            vec![4, 3, 3, 2],
            (0..4 * 3 * 3 * 2).map(|i| ((i * 31) % 7) as f64 * 0.25 - 0.7).collect(),
        )
        .unwrap();
        for (stride, pad) in [((1, 1), (0, 0)), ((2, 1), (1, 1)), ((2, 3), (1, 0))] {
            let got = conv2d_forward(&x, &w, stride, pad).unwrap();
            let want = naive(&x, &w, stride, pad);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn out_len_formula() {
        assert_eq!(conv_out_len(150, 3, 2, 1), 75);
        assert_eq!(conv_out_len(5, 3, 2, 1), 3);
        assert_eq!(conv_out_len(1, 3, 2, 1), 1);
    }
}
