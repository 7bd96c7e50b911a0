//! 2-D cross-correlation via im2col + GEMM.

use super::gemm::gemm;
use super::graph::{GradSink, Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1x1 kernels with unit stride and no padding read the input directly.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

fn out_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Unfolds one `[C, H, W]` sample into `[C*k*k, out_h*out_w]` columns.
fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let plane = g.out_plane();
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    for c in 0..g.channels {
        let xc = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if s == 1 {
                        let (lo, hi) = unit_stride_span(kx, g.padding, g.width, g.out_w);
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        if lo < hi {
                            let off = lo + kx - g.padding;
                            line[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *d = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
fn col2im(cols: &[f64], g: &Geometry, dx: &mut [f64]) {
    let plane = g.out_plane();
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    for c in 0..g.channels {
        let dxc = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    if s == 1 {
                        let (lo, hi) = unit_stride_span(kx, g.padding, g.width, g.out_w);
                        if lo < hi {
                            let off = lo + kx - g.padding;
                            for (d, v) in dst[off..off + hi - lo].iter_mut().zip(&line[lo..hi]) {
                                *d += v;
                            }
                        }
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose unit-stride tap `ox + kx - padding` lands inside the row.
fn unit_stride_span(kx: usize, padding: usize, width: usize, out_w: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kx).min(out_w);
    let hi = (width + padding).saturating_sub(kx).min(out_w).max(lo);
    (lo, hi)
}

fn geometry(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, Geometry)> {
    let [n, c, h, w] = input.dims4("conv2d")?;
    let [o, wc, kh, kw] = weight.dims4("conv2d")?;
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, weight expects {wc}"),
        ));
    }
    if kh != kw {
        return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    let (Some(out_h), Some(out_w)) = (
        out_extent(h, kh, stride, padding),
        out_extent(w, kw, stride, padding),
    ) else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh} with padding {padding} does not fit {h}x{w}"),
        ));
    };
    Ok((
        n,
        o,
        Geometry {
            channels: c,
            height: h,
            width: w,
            kernel: kh,
            stride,
            padding,
            out_h,
            out_w,
        },
    ))
}

impl Graph {
    /// Cross-correlation of an NCHW input with `[C_out, C_in, k, k]` weights.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (n, o, g) = geometry(x, w, stride, padding)?;
        let b = match bias {
            Some(b) => {
                let bt = self.value(b);
                if bt.numel() != o {
                    return Err(Error::shape(
                        "conv2d",
                        format!("bias has {} values for {o} output channels", bt.numel()),
                    ));
                }
                Some(bt.data())
            }
            None => None,
        };
        let plane = g.out_plane();
        let in_len = g.channels * g.height * g.width;
        let mut out = vec![0.0; n * o * plane];
        let (xd, wd) = (x.data(), w.data());
        par::for_each_chunk_mut(&mut out, o * plane, |s, out_s| {
            let xs = &xd[s * in_len..(s + 1) * in_len];
            if g.is_pointwise() {
                gemm(o, g.patch(), plane, wd, false, xs, false, out_s, 0.0);
            } else {
                let mut cols = vec![0.0; g.patch() * plane];
                im2col(xs, &g, &mut cols);
                gemm(o, g.patch(), plane, wd, false, &cols, false, out_s, 0.0);
            }
            if let Some(b) = b {
                for (oc, row) in out_s.chunks_mut(plane).enumerate() {
                    row.iter_mut().for_each(|v| *v += b[oc]);
                }
            }
        });
        let value = Tensor::new(vec![n, o, g.out_h, g.out_w], out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    input: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    out: &Tensor,
    grad: &[f64],
    sink: &mut GradSink<'_>,
) {
    let x = sink.value(input);
    let w = sink.value(weight);
    let (n, o, g) = geometry(x, w, stride, padding).expect("geometry validated in forward");
    let plane = g.out_plane();
    let patch = g.patch();
    let in_len = g.channels * g.height * g.width;
    let (want_x, want_w) = (sink.wants(input), sink.wants(weight));
    debug_assert_eq!(out.numel(), n * o * plane);

    if want_x || want_w {
        let (xd, wd) = (x.data(), w.data());
        // Per-sample (dx, dW) partials; dW partials are summed below in
        // sample order so the reduction is identical with or without rayon.
        let partials = par::map_indexed(n, |s| {
            let gs = &grad[s * o * plane..(s + 1) * o * plane];
            let xs = &xd[s * in_len..(s + 1) * in_len];
            let dx = want_x.then(|| {
                if g.is_pointwise() {
                    let mut dx = vec![0.0; in_len];
                    gemm(patch, o, plane, wd, true, gs, false, &mut dx, 0.0);
                    dx
                } else {
                    let mut dcols = vec![0.0; patch * plane];
                    gemm(patch, o, plane, wd, true, gs, false, &mut dcols, 0.0);
                    let mut dx = vec![0.0; in_len];
                    col2im(&dcols, &g, &mut dx);
                    dx
                }
            });
            let dw = want_w.then(|| {
                let mut dw = vec![0.0; o * patch];
                if g.is_pointwise() {
                    gemm(o, plane, patch, gs, false, xs, true, &mut dw, 0.0);
                } else {
                    let mut cols = vec![0.0; patch * plane];
                    im2col(xs, &g, &mut cols);
                    gemm(o, plane, patch, gs, false, &cols, true, &mut dw, 0.0);
                }
                dw
            });
            (dx, dw)
        });
        if want_x {
            sink.with(input, |gx| {
                for (s, (dx, _)) in partials.iter().enumerate() {
                    let dst = &mut gx[s * in_len..(s + 1) * in_len];
                    for (d, v) in dst.iter_mut().zip(dx.as_ref().unwrap()) {
                        *d += v;
                    }
                }
            });
        }
        if want_w {
            sink.with(weight, |gw| {
                for (_, dw) in &partials {
                    for (d, v) in gw.iter_mut().zip(dw.as_ref().unwrap()) {
                        *d += v;
                    }
                }
            });
        }
    }
    if let Some(b) = bias {
        sink.with(b, |gb| {
            for s in 0..n {
                for (oc, gbo) in gb.iter_mut().enumerate() {
                    let row = &grad[(s * o + oc) * plane..(s * o + oc + 1) * plane];
                    *gbo += row.iter().sum::<f64>();
                }
            }
        });
    }
}
