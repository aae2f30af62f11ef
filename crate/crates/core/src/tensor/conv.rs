//! Direct 2-D cross-correlation kernels over `[C, H, W]` planes.

use super::{Result, TensorError};

/// Output extent of a convolution along one axis.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(TensorError::invalid("conv2d", "stride must be positive"));
    }
    if kernel % 2 == 0 {
        return Err(TensorError::invalid("conv2d", format!("kernel size {kernel} is not odd")));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(TensorError::invalid(
            "conv2d",
            format!("padded extent {padded} smaller than kernel {kernel}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    /// Range of output indices whose tap `offset` lands inside `[0, extent)`.
    #[inline]
    fn valid_range(&self, offset: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        // input index = o * stride + offset - padding
        let s = self.stride as isize;
        let shift = offset as isize - self.padding as isize;
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        let hi = (extent as isize - 1 - shift).div_euclid(s) + 1;
        let lo = lo.clamp(0, out_extent as isize) as usize;
        let hi = hi.clamp(0, out_extent as isize) as usize;
        (lo, hi.max(lo))
    }
}

pub(crate) fn forward(g: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane_out = g.h_out * g.w_out;
    let plane_in = g.h * g.w;
    let kk = g.k * g.k;
    let mut out = vec![0.0; g.c_out * plane_out];
    for co in 0..g.c_out {
        let dst = &mut out[co * plane_out..(co + 1) * plane_out];
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..g.c_in {
            let src = &input[ci * plane_in..(ci + 1) * plane_in];
            let taps = &kernel[(co * g.c_in + ci) * kk..(co * g.c_in + ci + 1) * kk];
            for ky in 0..g.k {
                let (oy0, oy1) = g.valid_range(ky, g.h, g.h_out);
                for kx in 0..g.k {
                    let wv = taps[ky * g.k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = g.valid_range(kx, g.w, g.w_out);
                    if ox0 == ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let row_out = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                        let row_in = &src[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let base = kx as isize - g.padding as isize;
                            let start = (ox0 as isize + base) as usize;
                            let end = (ox1 as isize + base) as usize;
                            for (o, &x) in row_out[ox0..ox1].iter_mut().zip(&row_in[start..end]) {
                                *o += wv * x;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.padding;
                                row_out[ox] += wv * row_in[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates gradients w.r.t. input, kernel and bias given the output gradient.
pub(crate) fn backward(
    g: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let plane_out = g.h_out * g.w_out;
    let plane_in = g.h * g.w;
    let kk = g.k * g.k;
    if let Some(gb) = grad_bias {
        for co in 0..g.c_out {
            gb[co] += grad_out[co * plane_out..(co + 1) * plane_out].iter().sum::<f64>();
        }
    }
    let mut grad_input = grad_input;
    let mut grad_kernel = grad_kernel;
    for co in 0..g.c_out {
        let gout = &grad_out[co * plane_out..(co + 1) * plane_out];
        for ci in 0..g.c_in {
            let src = &input[ci * plane_in..(ci + 1) * plane_in];
            let tap_base = (co * g.c_in + ci) * kk;
            for ky in 0..g.k {
                let (oy0, oy1) = g.valid_range(ky, g.h, g.h_out);
                for kx in 0..g.k {
                    let (ox0, ox1) = g.valid_range(kx, g.w, g.w_out);
                    let tap = tap_base + ky * g.k + kx;
                    let wv = kernel[tap];
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let grow = &gout[oy * g.w_out..(oy + 1) * g.w_out];
                        let in_off = ci * plane_in + iy * g.w;
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kx - g.padding;
                            let go = grow[ox];
                            acc += go * src[iy * g.w + ix];
                            if let Some(gi) = grad_input.as_deref_mut() {
                                gi[in_off + ix] += wv * go;
                            }
                        }
                    }
                    if let Some(gk) = grad_kernel.as_deref_mut() {
                        gk[tap] += acc;
                    }
                }
            }
        }
    }
}
