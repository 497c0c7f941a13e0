//! 2D cross-correlation forward and backward kernels.
//!
//! Each output (or input-gradient) row is built in a local accumulator and
//! stored once, so the innermost loops stream contiguous rows while the
//! destination stays in L1. For each output element the accumulation order
//! is (ci, kh, kw) — the same order as the obvious quadruple-nested-loop
//! reference, so results are bit-identical to it.

use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn resolve(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom, TensorError> {
        if input_shape.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                detail: format!("input must be [B,Cin,H,W], got {input_shape:?}"),
            });
        }
        if kernel_shape.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                detail: format!("kernel must be [Cout,Cin,kh,kw], got {kernel_shape:?}"),
            });
        }
        let (batch, cin, h, w) = (
            input_shape[0],
            input_shape[1],
            input_shape[2],
            input_shape[3],
        );
        let (cout, kcin, kh, kw) = (
            kernel_shape[0],
            kernel_shape[1],
            kernel_shape[2],
            kernel_shape[3],
        );
        if kcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input_shape.to_vec(),
                rhs: kernel_shape.to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::ConvGeometry {
                detail: "stride must be >= 1".to_string(),
            });
        }
        if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(TensorError::ConvGeometry {
                detail: format!(
                    "kernel {kh}x{kw} does not fit padded input {}x{}",
                    h + 2 * pad,
                    w + 2 * pad
                ),
            });
        }
        if (h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0 {
            return Err(TensorError::ConvGeometry {
                detail: format!(
                    "non-integral output size for input {h}x{w}, kernel {kh}x{kw}, \
                     stride {stride}, padding {pad}"
                ),
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.oh, self.ow]
    }

    /// Valid output-column range [lo, hi) for a given kernel column, i.e. the
    /// ows for which iw = ow*stride + kw - pad lands inside [0, w).
    fn ow_range(&self, kw: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > kw {
            (self.pad - kw).div_ceil(s)
        } else {
            0
        };
        let hi = if self.w + self.pad > kw {
            ((self.w + self.pad - kw - 1) / s + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Input row for output row `oh` and kernel row `kh`, or None if padded.
    fn ih_for(&self, oh: usize, kh: usize) -> Option<usize> {
        let ih = (oh * self.stride + kh) as isize - self.pad as isize;
        if ih >= 0 && (ih as usize) < self.h {
            Some(ih as usize)
        } else {
            None
        }
    }
}

/// out[b,co,oh,ow] = sum_{ci,kh,kw} input[b,ci,oh*s+kh-p,ow*s+kw-p] * kernel[co,ci,kh,kw]
pub(crate) fn forward(g: &ConvGeom, input: &[f64], kernel: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), g.batch * g.cout * g.oh * g.ow);
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    let mut acc = vec![0.0f64; ow];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let out_plane = &mut out[(b * g.cout + co) * oh * ow..][..oh * ow];
            for orow in 0..oh {
                acc.fill(0.0);
                for ci in 0..g.cin {
                    let in_plane = &input[(b * g.cin + ci) * h * w..][..h * w];
                    for kh in 0..g.kh {
                        let Some(ih) = g.ih_for(orow, kh) else {
                            continue;
                        };
                        let irow = &in_plane[ih * w..][..w];
                        for kw in 0..g.kw {
                            let wgt = kernel[((co * g.cin + ci) * g.kh + kh) * g.kw + kw];
                            let (lo, hi) = g.ow_range(kw);
                            if g.stride == 1 {
                                let off = kw as isize - g.pad as isize;
                                let src = &irow[(lo as isize + off) as usize..];
                                for (d, s) in acc[lo..hi].iter_mut().zip(&src[..hi - lo]) {
                                    *d += wgt * s;
                                }
                            } else {
                                for o in lo..hi {
                                    let iw = o * g.stride + kw - g.pad;
                                    acc[o] += wgt * irow[iw];
                                }
                            }
                        }
                    }
                }
                out_plane[orow * ow..][..ow].copy_from_slice(&acc);
            }
        }
    }
}

/// d_input[b,ci,ih,iw] += sum_{co,kh,kw} d_out[b,co,oh,ow] * kernel[co,ci,kh,kw]
///
/// For stride 1 each input row is assembled in a local accumulator: row ih
/// receives from output rows oh = ih + p - kh. General strides fall back to
/// row-wise scatter.
pub(crate) fn backward_input(g: &ConvGeom, kernel: &[f64], d_out: &[f64], d_input: &mut [f64]) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    if g.stride == 1 {
        let mut acc = vec![0.0f64; w];
        for b in 0..g.batch {
            for ci in 0..g.cin {
                let din_plane = &mut d_input[(b * g.cin + ci) * h * w..][..h * w];
                for ih in 0..h {
                    acc.fill(0.0);
                    for co in 0..g.cout {
                        let g_plane = &d_out[(b * g.cout + co) * oh * ow..][..oh * ow];
                        for kh in 0..g.kh {
                            let orow = ih as isize + g.pad as isize - kh as isize;
                            if orow < 0 || orow as usize >= oh {
                                continue;
                            }
                            let grow = &g_plane[orow as usize * ow..][..ow];
                            for kw in 0..g.kw {
                                let wgt = kernel[((co * g.cin + ci) * g.kh + kh) * g.kw + kw];
                                let (lo, hi) = g.ow_range(kw);
                                // iw = o + kw - pad for o in [lo, hi)
                                let off = kw as isize - g.pad as isize;
                                let dst = &mut acc[(lo as isize + off) as usize..];
                                for (d, gv) in dst[..hi - lo].iter_mut().zip(&grow[lo..hi]) {
                                    *d += wgt * gv;
                                }
                            }
                        }
                    }
                    let dst = &mut din_plane[ih * w..][..w];
                    for (d, a) in dst.iter_mut().zip(&acc) {
                        *d += a;
                    }
                }
            }
        }
        return;
    }
    for b in 0..g.batch {
        for co in 0..g.cout {
            let g_plane = &d_out[(b * g.cout + co) * oh * ow..][..oh * ow];
            for ci in 0..g.cin {
                let din_plane = &mut d_input[(b * g.cin + ci) * h * w..][..h * w];
                for kh in 0..g.kh {
                    for kw in 0..g.kw {
                        let wgt = kernel[((co * g.cin + ci) * g.kh + kh) * g.kw + kw];
                        let (lo, hi) = g.ow_range(kw);
                        for orow in 0..oh {
                            let Some(ih) = g.ih_for(orow, kh) else {
                                continue;
                            };
                            let grow = &g_plane[orow * ow..][..ow];
                            let drow = &mut din_plane[ih * w..][..w];
                            for o in lo..hi {
                                let iw = o * g.stride + kw - g.pad;
                                drow[iw] += wgt * grow[o];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// d_kernel[co,ci,kh,kw] += sum_{b,oh,ow} d_out[b,co,oh,ow] * input[b,ci,ih,iw]
///
/// The whole kernel gradient stays resident while gradient and input rows
/// stream once per (kh, co, ci) combination.
pub(crate) fn backward_kernel(g: &ConvGeom, input: &[f64], d_out: &[f64], d_kernel: &mut [f64]) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    for b in 0..g.batch {
        for co in 0..g.cout {
            let g_plane = &d_out[(b * g.cout + co) * oh * ow..][..oh * ow];
            for ci in 0..g.cin {
                let in_plane = &input[(b * g.cin + ci) * h * w..][..h * w];
                for kh in 0..g.kh {
                    for kw in 0..g.kw {
                        let (lo, hi) = g.ow_range(kw);
                        let mut acc = 0.0;
                        for orow in 0..oh {
                            let Some(ih) = g.ih_for(orow, kh) else {
                                continue;
                            };
                            let grow = &g_plane[orow * ow..][..ow];
                            let irow = &in_plane[ih * w..][..w];
                            if g.stride == 1 {
                                let off = kw as isize - g.pad as isize;
                                let src = &irow[(lo as isize + off) as usize..];
                                let mut s = 0.0;
                                for (gval, ival) in grow[lo..hi].iter().zip(&src[..hi - lo]) {
                                    s += gval * ival;
                                }
                                acc += s;
                            } else {
                                for o in lo..hi {
                                    let iw = o * g.stride + kw - g.pad;
                                    acc += grow[o] * irow[iw];
                                }
                            }
                        }
                        d_kernel[((co * g.cin + ci) * g.kh + kh) * g.kw + kw] += acc;
                    }
                }
            }
        }
    }
}
