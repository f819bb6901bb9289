//! Forward kernels shared by the autodiff graph and by plain tensor code.
//!
//! Convolutions lower to im2col + GEMM. The three convolution kernels
//! (`conv2d`, `conv2d_transpose`, `conv2d_weight_grad`) are mutually adjoint,
//! which is what lets the graph differentiate them any number of times.

use super::{shape_err, Element, Tensor, TensorError};

/// Output extent of a strided window, rejecting non-integral results.
pub fn conv_out_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(TensorError::Invalid("stride must be >= 1".into()));
    }
    let padded = extent + 2 * pad;
    if padded < kernel {
        return shape_err(format!(
            "kernel {kernel} larger than padded extent {padded}"
        ));
    }
    if (padded - kernel) % stride != 0 {
        return Err(TensorError::NonIntegralExtent {
            extent: padded,
            kernel,
            stride,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    /// 1x1, stride 1, no padding: the column matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn check_rank4<T: Element>(t: &Tensor<T>, what: &str) -> Result<(), TensorError> {
    if t.rank() != 4 {
        return shape_err(format!("{what} must be rank 4, got {:?}", t.dims()));
    }
    Ok(())
}

fn im2col<T: Element>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let plane = g.out_plane();
    let s = g.stride as isize;
    let p = g.pad as isize;
    for c in 0..g.c {
        let xc = &x[c * g.in_plane()..(c + 1) * g.in_plane()];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize * s + ki as isize - p;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Element>(g: &ConvGeom, col: &[T], x: &mut [T]) {
    let plane = g.out_plane();
    let s = g.stride as isize;
    let p = g.pad as isize;
    for c in 0..g.c {
        let xc = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation. `input` is NCHW, `kernel` is OIKK.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    check_rank4(input, "conv2d input")?;
    check_rank4(kernel, "conv2d kernel")?;
    let (xd, kd) = (input.dims(), kernel.dims());
    if xd[1] != kd[1] {
        return shape_err(format!(
            "conv2d input channels {} != kernel input channels {}",
            xd[1], kd[1]
        ));
    }
    let g = ConvGeom {
        n: xd[0],
        c: xd[1],
        h: xd[2],
        w: xd[3],
        o: kd[0],
        kh: kd[2],
        kw: kd[3],
        stride,
        pad,
        ho: conv_out_extent(xd[2], kd[2], stride, pad)?,
        wo: conv_out_extent(xd[3], kd[3], stride, pad)?,
    };
    let plane = g.out_plane();
    let ckk = g.ckk();
    let mut out = vec![T::zero(); g.n * g.o * plane];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ckk * plane]
    };
    let per_in = g.c * g.in_plane();
    for n in 0..g.n {
        let x = &input.data()[n * per_in..(n + 1) * per_in];
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(&g, x, &mut col);
            &col
        };
        let y = &mut out[n * g.o * plane..(n + 1) * g.o * plane];
        T::gemm(
            g.o,
            ckk,
            plane,
            T::one(),
            kernel.data(),
            ckk as isize,
            1,
            cols,
            plane as isize,
            1,
            T::zero(),
            y,
            plane as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![g.n, g.o, g.ho, g.wo], out))
}

/// Linear adjoint of [`conv2d`] with respect to its input.
///
/// `input` has the conv output layout `[N, O, Ho, Wo]`; the result has
/// `[N, C, (Ho-1)*stride + K - 2*pad, ...]`.
pub fn conv2d_transpose<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    check_rank4(input, "conv2d_transpose input")?;
    check_rank4(kernel, "conv2d_transpose kernel")?;
    let (yd, kd) = (input.dims(), kernel.dims());
    if yd[1] != kd[0] {
        return shape_err(format!(
            "conv2d_transpose input channels {} != kernel output channels {}",
            yd[1], kd[0]
        ));
    }
    if stride == 0 {
        return Err(TensorError::Invalid("stride must be >= 1".into()));
    }
    let full_h = (yd[2] - 1) * stride + kd[2];
    let full_w = (yd[3] - 1) * stride + kd[3];
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return shape_err("conv2d_transpose padding consumes the whole output");
    }
    let g = ConvGeom {
        n: yd[0],
        c: kd[1],
        h: full_h - 2 * pad,
        w: full_w - 2 * pad,
        o: kd[0],
        kh: kd[2],
        kw: kd[3],
        stride,
        pad,
        ho: yd[2],
        wo: yd[3],
    };
    let plane = g.out_plane();
    let ckk = g.ckk();
    let per_out = g.c * g.in_plane();
    let mut out = vec![T::zero(); g.n * per_out];
    let mut col = vec![T::zero(); ckk * plane];
    for n in 0..g.n {
        let y = &input.data()[n * g.o * plane..(n + 1) * g.o * plane];
        let x = &mut out[n * per_out..(n + 1) * per_out];
        if g.is_pointwise() {
            T::gemm(
                ckk,
                g.o,
                plane,
                T::one(),
                kernel.data(),
                1,
                ckk as isize,
                y,
                plane as isize,
                1,
                T::zero(),
                x,
                plane as isize,
                1,
            );
            continue;
        }
        T::gemm(
            ckk,
            g.o,
            plane,
            T::one(),
            kernel.data(),
            1,
            ckk as isize,
            y,
            plane as isize,
            1,
            T::zero(),
            &mut col,
            plane as isize,
            1,
        );
        col2im_add(&g, &col, x);
    }
    Ok(Tensor::from_parts(vec![g.n, g.c, g.h, g.w], out))
}

/// Gradient of `<conv2d(input, W), grad_out>` with respect to `W`.
pub fn conv2d_weight_grad<T: Element>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    check_rank4(input, "weight-grad input")?;
    check_rank4(grad_out, "weight-grad output gradient")?;
    let (xd, yd) = (input.dims(), grad_out.dims());
    let g = ConvGeom {
        n: xd[0],
        c: xd[1],
        h: xd[2],
        w: xd[3],
        o: yd[1],
        kh,
        kw,
        stride,
        pad,
        ho: conv_out_extent(xd[2], kh, stride, pad)?,
        wo: conv_out_extent(xd[3], kw, stride, pad)?,
    };
    if yd[0] != g.n || yd[2] != g.ho || yd[3] != g.wo {
        return shape_err(format!(
            "weight-grad output gradient {:?} does not match input {:?}",
            yd, xd
        ));
    }
    let plane = g.out_plane();
    let ckk = g.ckk();
    let mut gw = vec![T::zero(); g.o * ckk];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ckk * plane]
    };
    let per_in = g.c * g.in_plane();
    for n in 0..g.n {
        let x = &input.data()[n * per_in..(n + 1) * per_in];
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(&g, x, &mut col);
            &col
        };
        let gy = &grad_out.data()[n * g.o * plane..(n + 1) * g.o * plane];
        T::gemm(
            g.o,
            plane,
            ckk,
            T::one(),
            gy,
            plane as isize,
            1,
            cols,
            1,
            plane as isize,
            T::one(),
            &mut gw,
            ckk as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![g.o, g.c, kh, kw], gw))
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0] {
        return shape_err(format!("matmul {:?} x {:?}", a.dims(), b.dims()));
    }
    let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        k as isize,
        1,
        b.data(),
        n as isize,
        1,
        T::zero(),
        &mut out,
        n as isize,
        1,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn transpose<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.rank() != 2 {
        return shape_err(format!("transpose of rank-{} tensor", a.rank()));
    }
    let (r, c) = (a.dims()[0], a.dims()[1]);
    let src = a.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

fn split_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

/// Sum over every axis except `axis`; result has shape `[dims[axis]]`.
pub fn sum_to_axis<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>, TensorError> {
    if axis >= x.rank() {
        return shape_err(format!("axis {axis} out of range for {:?}", x.dims()));
    }
    let (outer, size, inner) = split_axis(x.dims(), axis);
    let mut out = vec![T::zero(); size];
    let data = x.data();
    for o in 0..outer {
        for (s, acc) in out.iter_mut().enumerate() {
            let base = (o * size + s) * inner;
            *acc = *acc + data[base..base + inner].iter().copied().sum::<T>();
        }
    }
    Ok(Tensor::from_parts(vec![size], out))
}

/// Broadcast a `[dims[axis]]` vector along `axis` into a tensor of `dims`.
pub fn expand_axis<T: Element>(
    v: &Tensor<T>,
    axis: usize,
    dims: &[usize],
) -> Result<Tensor<T>, TensorError> {
    if axis >= dims.len() || v.numel() != dims[axis] {
        return shape_err(format!(
            "cannot expand {:?} along axis {axis} into {:?}",
            v.dims(),
            dims
        ));
    }
    let (outer, size, inner) = split_axis(dims, axis);
    let mut out = Vec::with_capacity(outer * size * inner);
    for _ in 0..outer {
        for &val in v.data() {
            out.extend(std::iter::repeat(val).take(inner));
        }
    }
    Ok(Tensor::from_parts(dims.to_vec(), out))
}

pub fn concat<T: Element>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::Shape("concat of nothing".into()))?;
    if axis >= first.rank() {
        return shape_err(format!("concat axis {axis} for {:?}", first.dims()));
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = 0;
    for p in parts {
        let pd = p.dims();
        if pd.len() != first.rank()
            || pd
                .iter()
                .zip(first.dims())
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return shape_err(format!("concat {:?} with {:?}", first.dims(), pd));
        }
        dims[axis] += pd[axis];
    }
    let (outer, _, inner) = split_axis(&dims, axis);
    let mut out = Vec::with_capacity(dims.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.dims()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(dims, out))
}

pub fn slice_axis<T: Element>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>, TensorError> {
    if axis >= x.rank() || len == 0 || start + len > x.dims()[axis] {
        return shape_err(format!(
            "slice {start}..{} on axis {axis} of {:?}",
            start + len,
            x.dims()
        ));
    }
    let (outer, size, inner) = split_axis(x.dims(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * size + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = len;
    Ok(Tensor::from_parts(dims, out))
}

/// Embed `x` at `start` along `axis` inside zeros of extent `total`.
pub fn pad_axis<T: Element>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    total: usize,
) -> Result<Tensor<T>, TensorError> {
    if axis >= x.rank() || start + x.dims()[axis] > total {
        return shape_err(format!(
            "pad {:?} at {start} on axis {axis} to {total}",
            x.dims()
        ));
    }
    let (outer, size, inner) = split_axis(x.dims(), axis);
    let mut dims = x.dims().to_vec();
    dims[axis] = total;
    let mut out = vec![T::zero(); outer * total * inner];
    for o in 0..outer {
        let dst = (o * total + start) * inner;
        out[dst..dst + size * inner]
            .copy_from_slice(&x.data()[o * size * inner..(o + 1) * size * inner]);
    }
    Ok(Tensor::from_parts(dims, out))
}

/// Nearest-neighbour x2 upscale of an NCHW tensor.
pub fn upsample2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    check_rank4(x, "upsample input")?;
    let d = x.dims();
    let (h, w) = (d[2], d[3]);
    let planes = d[0] * d[1];
    let mut out = vec![T::zero(); planes * 4 * h * w];
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Ok(Tensor::from_parts(vec![d[0], d[1], 2 * h, 2 * w], out))
}

/// Sum over non-overlapping 2x2 blocks (adjoint of [`upsample2`]).
pub fn sumpool2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    check_rank4(x, "pool input")?;
    let d = x.dims();
    if d[2] % 2 != 0 || d[3] % 2 != 0 {
        return shape_err(format!("2x2 pooling needs even extents, got {:?}", d));
    }
    let (h, w) = (d[2] / 2, d[3] / 2);
    let planes = d[0] * d[1];
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &x.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let r0 = 2 * y * 2 * w + 2 * xx;
                let r1 = r0 + 2 * w;
                dst[y * w + xx] = src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1];
            }
        }
    }
    Ok(Tensor::from_parts(vec![d[0], d[1], h, w], out))
}

/// Normalized 1-D Gaussian truncated at 3 sigma. `sigma == 0` is a delta.
pub fn gaussian_kernel1d(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// One separable pass with edge replication. `vertical` selects the H axis.
fn blur_pass<T: Element>(x: &Tensor<T>, taps: &[T], vertical: bool, adjoint: bool) -> Tensor<T> {
    let d = x.dims();
    let (h, w) = (d[2], d[3]);
    let r = (taps.len() / 2) as isize;
    let planes = d[0] * d[1];
    let mut out = vec![T::zero(); x.numel()];
    let (len, stride, lines, line_step) = if vertical {
        (h, w, w, 1)
    } else {
        (w, 1, h, w)
    };
    for p in 0..planes {
        let base = p * h * w;
        let src = &x.data()[base..base + h * w];
        let dst = &mut out[base..base + h * w];
        for line in 0..lines {
            let off = line * line_step;
            for i in 0..len {
                for (j, &t) in taps.iter().enumerate() {
                    let k = (i as isize + j as isize - r).clamp(0, len as isize - 1) as usize;
                    if adjoint {
                        dst[off + k * stride] = dst[off + k * stride] + t * src[off + i * stride];
                    } else {
                        dst[off + i * stride] = dst[off + i * stride] + t * src[off + k * stride];
                    }
                }
            }
        }
    }
    Tensor::from_parts(d.to_vec(), out)
}

/// Separable Gaussian blur of an NCHW tensor with edge replication.
pub fn gaussian_blur<T: Element>(x: &Tensor<T>, sigma: f64) -> Result<Tensor<T>, TensorError> {
    check_rank4(x, "blur input")?;
    if !(sigma >= 0.0) {
        return Err(TensorError::Invalid(format!("blur sigma {sigma} < 0")));
    }
    let taps: Vec<T> = gaussian_kernel1d(sigma).into_iter().map(T::from_f64).collect();
    if taps.len() == 1 {
        return Ok(x.clone());
    }
    Ok(blur_pass(&blur_pass(x, &taps, true, false), &taps, false, false))
}

/// Adjoint of [`gaussian_blur`]; differs from it at the replicated borders.
pub fn gaussian_blur_adjoint<T: Element>(
    x: &Tensor<T>,
    sigma: f64,
) -> Result<Tensor<T>, TensorError> {
    check_rank4(x, "blur input")?;
    let taps: Vec<T> = gaussian_kernel1d(sigma).into_iter().map(T::from_f64).collect();
    if taps.len() == 1 {
        return Ok(x.clone());
    }
    Ok(blur_pass(&blur_pass(x, &taps, false, true), &taps, true, true))
}

/// Row-wise log-softmax of a `[N, K]` tensor.
pub fn log_softmax_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if x.rank() != 2 {
        return shape_err(format!("log_softmax expects [N, K], got {:?}", x.dims()));
    }
    let k = x.dims()[1];
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Ok(Tensor::from_parts(x.dims().to_vec(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution used as an oracle.
    fn conv_loops(x: &Tensor<f64>, k: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (xd, kd) = (x.dims(), k.dims());
        let ho = (xd[2] + 2 * p - kd[2]) / s + 1;
        let wo = (xd[3] + 2 * p - kd[3]) / s + 1;
        let mut out = Tensor::zeros(&[xd[0], kd[0], ho, wo]);
        for n in 0..xd[0] {
            for o in 0..kd[0] {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..xd[1] {
                            for i in 0..kd[2] {
                                for j in 0..kd[3] {
                                    let iy = (oy * s + i) as isize - p as isize;
                                    let ix = (ox * s + j) as isize - p as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= xd[2] as isize
                                        || ix >= xd[3] as isize
                                    {
                                        continue;
                                    }
                                    let xv = x.data()[((n * xd[1] + c) * xd[2] + iy as usize)
                                        * xd[3]
                                        + ix as usize];
                                    let kv = k.data()[((o * kd[1] + c) * kd[2] + i) * kd[3] + j];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out.data_mut()[((n * kd[0] + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn window_sum() {
        let x = Tensor::<f32>::new(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let k = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 45.0);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[2, 1, 5, 4], &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        assert_eq!(conv2d(&x, &k, 1, 1).unwrap(), x);
    }

    #[test]
    fn strided_conv_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&[1, 1, 4, 4], &mut rng);
        let k = rand_tensor(&[1, 1, 2, 2], &mut rng);
        let fast = conv2d(&x, &k, 2, 0).unwrap();
        let slow = conv_loops(&x, &k, 2, 0);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        // multi-channel, padded
        let x = rand_tensor(&[2, 3, 8, 8], &mut rng);
        let k = rand_tensor(&[5, 3, 4, 4], &mut rng);
        let fast = conv2d(&x, &k, 2, 1).unwrap();
        let slow = conv_loops(&x, &k, 2, 1);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let k = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(TensorError::Shape(_))));
        let k = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        assert!(matches!(
            conv2d(&x, &k, 2, 0),
            Err(TensorError::NonIntegralExtent { .. })
        ));
    }

    #[test]
    fn transpose_conv_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[2, 3, 4, 4], &mut rng);
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv2d_transpose(&x, &k, 1, 0).unwrap(), x);
        let z = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let k = rand_tensor(&[3, 2, 4, 4], &mut rng);
        let y = conv2d_transpose(&z, &k, 2, 1).unwrap();
        assert_eq!(y.dims(), &[1, 2, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_kernels_are_mutually_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(s, p, kk) in &[(1, 0, 3), (2, 1, 4), (1, 1, 3), (2, 0, 2), (1, 0, 1)] {
            let x = rand_tensor(&[2, 3, 8, 8], &mut rng);
            let w = rand_tensor(&[4, 3, kk, kk], &mut rng);
            let y = conv2d(&x, &w, s, p).unwrap();
            let gy = rand_tensor(y.dims(), &mut rng);
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                a.data().iter().zip(b.data()).map(|(u, v)| u * v).sum()
            };
            let gx = conv2d_transpose(&gy, &w, s, p).unwrap();
            assert_eq!(gx.dims(), x.dims());
            assert!((dot(&y, &gy) - dot(&x, &gx)).abs() < 1e-9);
            let gw = conv2d_weight_grad(&x, &gy, kk, kk, s, p).unwrap();
            assert!((dot(&y, &gy) - dot(&w, &gw)).abs() < 1e-9);
        }
    }

    #[test]
    fn axis_helpers() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 2], |i| i as f64);
        let s = sum_to_axis(&x, 1).unwrap();
        assert_eq!(s.data(), &[0.0 + 1.0 + 6.0 + 7.0, 2.0 + 3.0 + 8.0 + 9.0, 4.0 + 5.0 + 10.0 + 11.0]);
        let e = expand_axis(&s, 1, &[2, 3, 2]).unwrap();
        assert_eq!(e.data()[0], s.data()[0]);
        assert_eq!(e.data()[11], s.data()[2]);
        let a = Tensor::<f64>::from_fn(&[2, 1, 2], |i| i as f64);
        let c = concat(&[&x, &a], 1).unwrap();
        assert_eq!(c.dims(), &[2, 4, 2]);
        assert_eq!(slice_axis(&c, 1, 3, 1).unwrap(), a);
        assert_eq!(slice_axis(&c, 1, 0, 3).unwrap(), x);
        let padded = pad_axis(&a, 1, 3, 4).unwrap();
        assert_eq!(slice_axis(&padded, 1, 3, 1).unwrap(), a);
        assert_eq!(padded.sum(), a.sum());
    }

    #[test]
    fn blur_edge_cases() {
        let x = Tensor::<f64>::full(&[1, 2, 6, 6], 0.3);
        let y = gaussian_blur(&x, 1.3).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&[1, 1, 6, 6], &mut rng);
        assert_eq!(gaussian_blur(&x, 0.0).unwrap(), x);
        let g = rand_tensor(&[1, 1, 6, 6], &mut rng);
        let lhs: f64 = gaussian_blur(&x, 1.0)
            .unwrap()
            .data()
            .iter()
            .zip(g.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = gaussian_blur_adjoint(&g, 1.0)
            .unwrap()
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
