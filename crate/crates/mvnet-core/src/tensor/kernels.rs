//! Dense numeric kernels behind the tensor ops.
//!
//! Kernels assume shapes already validated by the op layer; they use
//! debug assertions only. Reductions accumulate in f64, convolutions and
//! matrix products in f32 with the time axis contiguous.

use alloc::{vec, vec::Vec};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0usize; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        s[d] = acc;
        acc *= shape[d];
    }
    s
}

/// Numpy-style broadcast of two shapes (align trailing, 1 stretches).
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        let av = if d < rank - a.len() { 1 } else { a[d - (rank - a.len())] };
        let bv = if d < rank - b.len() { 1 } else { b[d - (rank - b.len())] };
        if av == bv {
            out[d] = av;
        } else if av == 1 {
            out[d] = bv;
        } else if bv == 1 {
            out[d] = av;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Strides of `shape` aligned to `out` rank, zero on broadcast dims.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let own = strides_of(shape);
    let offset = rank - shape.len();
    let mut s = vec![0usize; rank];
    for d in 0..shape.len() {
        s[offset + d] = if shape[d] == 1 { 0 } else { own[d] };
    }
    s
}

/// Elementwise binary op with broadcasting. `out_shape` must be
/// `broadcast_shapes(a_shape, b_shape)`.
pub fn bin_op(
    a: &[f32],
    a_shape: &[usize],
    b: &[f32],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f32, f32) -> f32,
) -> Vec<f32> {
    let total = numel(out_shape);
    // Fast paths only apply when one side already covers the output
    // (out_shape may exceed the joint broadcast when expanding gradients).
    if a_shape == b_shape && a.len() == total {
        return a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect();
    }
    if b.len() == 1 && a.len() == total {
        let bv = b[0];
        return a.iter().map(|x| f(*x, bv)).collect();
    }
    if a.len() == 1 && b.len() == total {
        let av = a[0];
        return b.iter().map(|y| f(av, *y)).collect();
    }
    let rank = out_shape.len();
    let astr = broadcast_strides(a_shape, out_shape);
    let bstr = broadcast_strides(b_shape, out_shape);
    let mut idx = vec![0usize; rank];
    let (mut ao, mut bo) = (0usize, 0usize);
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        out.push(f(a[ao], b[bo]));
        for d in (0..rank).rev() {
            idx[d] += 1;
            ao += astr[d];
            bo += bstr[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            ao -= astr[d] * out_shape[d];
            bo -= bstr[d] * out_shape[d];
        }
    }
    out
}

/// Sums `grad` (of shape `g_shape`) down to `t_shape`, undoing a broadcast.
pub fn reduce_to_shape(grad: &[f32], g_shape: &[usize], t_shape: &[usize]) -> Vec<f32> {
    if g_shape == t_shape {
        return grad.to_vec();
    }
    let t_total = numel(t_shape);
    if t_total == 1 {
        let s: f64 = grad.iter().map(|&v| v as f64).sum();
        return vec![s as f32];
    }
    let rank = g_shape.len();
    let tstr = broadcast_strides(t_shape, g_shape);
    let mut out = vec![0.0f32; t_total];
    let mut idx = vec![0usize; rank];
    let mut to = 0usize;
    for &g in grad {
        out[to] += g;
        for d in (0..rank).rev() {
            idx[d] += 1;
            to += tstr[d];
            if idx[d] < g_shape[d] {
                break;
            }
            idx[d] = 0;
            to -= tstr[d] * g_shape[d];
        }
    }
    out
}

/// Decomposes `shape` around `axis` into (outer, len, inner).
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn reduce_sum_axis(x: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![0.0f32; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0f64;
            for j in 0..n {
                acc += x[(o * n + j) * inner + i] as f64;
            }
            out[o * inner + i] = acc as f32;
        }
    }
    out
}

pub fn reduce_mean_axis(x: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let n = shape[axis] as f64;
    let mut out = reduce_sum_axis(x, shape, axis);
    for v in out.iter_mut() {
        *v = (*v as f64 / n) as f32;
    }
    out
}

/// Population standard deviation along `axis`.
pub fn reduce_std_axis(x: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![0.0f32; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut sum = 0.0f64;
            for j in 0..n {
                sum += x[(o * n + j) * inner + i] as f64;
            }
            let mean = sum / n as f64;
            let mut var = 0.0f64;
            for j in 0..n {
                let d = x[(o * n + j) * inner + i] as f64 - mean;
                var += d * d;
            }
            out[o * inner + i] = libm::sqrt((var / n as f64).max(0.0)) as f32;
        }
    }
    out
}

pub fn sum_all(x: &[f32]) -> f32 {
    let s: f64 = x.iter().map(|&v| v as f64).sum();
    s as f32
}

pub fn softmax_axis(x: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![0.0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mut mx = f32::NEG_INFINITY;
            for j in 0..n {
                mx = mx.max(x[at(j)]);
            }
            let mut den = 0.0f64;
            for j in 0..n {
                let e = libm::expf(x[at(j)] - mx);
                out[at(j)] = e;
                den += e as f64;
            }
            let inv = (1.0 / den) as f32;
            for j in 0..n {
                out[at(j)] *= inv;
            }
        }
    }
    out
}

/// VJP of softmax: dx = y * (g - sum(g * y, axis)).
pub fn softmax_backward(y: &[f32], g: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut dx = vec![0.0f32; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mut dot = 0.0f64;
            for j in 0..n {
                dot += g[at(j)] as f64 * y[at(j)] as f64;
            }
            let dot = dot as f32;
            for j in 0..n {
                dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
            }
        }
    }
    dx
}

/// `[m,k] x [k,n] -> [m,n]`.
pub fn matmul(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (ov, bv) in orow.iter_mut().zip(brow) {
                *ov += av * bv;
            }
        }
    }
    out
}

pub fn transpose2(x: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

pub fn permute_copy(x: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_of(shape);
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = numel(shape);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(x[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= step[d] * out_shape[d];
        }
    }
    (out, out_shape)
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (d, &p) in perm.iter().enumerate() {
        inv[p] = d;
    }
    inv
}

pub fn slice_copy(x: &[f32], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<f32> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&x[base..base + len * inner]);
    }
    out
}

/// Scatters a slice gradient back into a zero tensor of the parent shape.
pub fn slice_scatter(
    g: &[f32],
    parent_shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) -> Vec<f32> {
    let (outer, n, inner) = axis_split(parent_shape, axis);
    let mut out = vec![0.0f32; numel(parent_shape)];
    for o in 0..outer {
        let dst = (o * n + start) * inner;
        let src = o * len * inner;
        out[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
    }
    out
}

pub fn concat_copy(parts: &[(&[f32], &[usize])], axis: usize) -> (Vec<f32>, Vec<usize>) {
    let mut out_shape = parts[0].1.to_vec();
    out_shape[axis] = parts.iter().map(|(_, s)| s[axis]).sum();
    let (outer, _, inner) = axis_split(&out_shape, axis);
    let mut out = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for (data, shape) in parts {
            let n = shape[axis];
            let base = o * n * inner;
            out.extend_from_slice(&data[base..base + n * inner]);
        }
    }
    (out, out_shape)
}

/// Splits a concat gradient back into per-part gradients.
pub fn concat_split(g: &[f32], part_shapes: &[&[usize]], axis: usize) -> Vec<Vec<f32>> {
    let mut out_shape = part_shapes[0].to_vec();
    out_shape[axis] = part_shapes.iter().map(|s| s[axis]).sum();
    let (outer, total_n, inner) = axis_split(&out_shape, axis);
    let mut grads: Vec<Vec<f32>> = part_shapes
        .iter()
        .map(|s| Vec::with_capacity(numel(s)))
        .collect();
    for o in 0..outer {
        let mut off = o * total_n * inner;
        for (p, shape) in part_shapes.iter().enumerate() {
            let n = shape[axis];
            grads[p].extend_from_slice(&g[off..off + n * inner]);
            off += n * inner;
        }
    }
    grads
}

// ---------------------------------------------------------------------------
// 1-d convolution (valid, with dilation) over [C, T] maps.
// ---------------------------------------------------------------------------

pub fn conv1d_out_len(t: usize, k: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    if t < span {
        None
    } else {
        Some((t - span) / stride + 1)
    }
}

pub fn conv1d_fwd(
    x: &[f32],
    ci: usize,
    t: usize,
    w: &[f32],
    co: usize,
    k: usize,
    b: &[f32],
    stride: usize,
    dilation: usize,
) -> Vec<f32> {
    let to = conv1d_out_len(t, k, stride, dilation).expect("validated");
    let mut y = vec![0.0f32; co * to];
    for oc in 0..co {
        let yrow = &mut y[oc * to..(oc + 1) * to];
        yrow.fill(b[oc]);
        for ic in 0..ci {
            let xrow = &x[ic * t..(ic + 1) * t];
            for kk in 0..k {
                let wv = w[(oc * ci + ic) * k + kk];
                let off = kk * dilation;
                if stride == 1 {
                    for (yv, xv) in yrow.iter_mut().zip(&xrow[off..off + to]) {
                        *yv += wv * xv;
                    }
                } else {
                    for (j, yv) in yrow.iter_mut().enumerate() {
                        *yv += wv * xrow[j * stride + off];
                    }
                }
            }
        }
    }
    y
}

pub fn conv1d_bwd(
    x: &[f32],
    ci: usize,
    t: usize,
    w: &[f32],
    co: usize,
    k: usize,
    dy: &[f32],
    stride: usize,
    dilation: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let to = conv1d_out_len(t, k, stride, dilation).expect("validated");
    let mut dx = vec![0.0f32; ci * t];
    let mut dw = vec![0.0f32; co * ci * k];
    let mut db = vec![0.0f32; co];
    for oc in 0..co {
        let dyrow = &dy[oc * to..(oc + 1) * to];
        db[oc] = sum_all(dyrow);
        for ic in 0..ci {
            let xrow = &x[ic * t..(ic + 1) * t];
            let dxrow = &mut dx[ic * t..(ic + 1) * t];
            for kk in 0..k {
                let off = kk * dilation;
                let wv = w[(oc * ci + ic) * k + kk];
                let mut acc = 0.0f32;
                if stride == 1 {
                    for j in 0..to {
                        let g = dyrow[j];
                        dxrow[j + off] += wv * g;
                        acc += g * xrow[j + off];
                    }
                } else {
                    for j in 0..to {
                        let g = dyrow[j];
                        dxrow[j * stride + off] += wv * g;
                        acc += g * xrow[j * stride + off];
                    }
                }
                dw[(oc * ci + ic) * k + kk] += acc;
            }
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// 2-d convolution over [C, F, T] maps, kernel [Co, Ci, Kf, Kt], symmetric
// zero padding (pf both frequency sides, pt both time sides).
// ---------------------------------------------------------------------------

pub fn conv2d_out_dims(
    f: usize,
    t: usize,
    kf: usize,
    kt: usize,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Option<(usize, usize)> {
    let fp = f + 2 * pad.0;
    let tp = t + 2 * pad.1;
    if fp < kf || tp < kt {
        return None;
    }
    Some(((fp - kf) / stride.0 + 1, (tp - kt) / stride.1 + 1))
}

fn pad2d(x: &[f32], c: usize, f: usize, t: usize, pf: usize, pt: usize) -> (Vec<f32>, usize, usize) {
    if pf == 0 && pt == 0 {
        return (x.to_vec(), f, t);
    }
    let (fp, tp) = (f + 2 * pf, t + 2 * pt);
    let mut out = vec![0.0f32; c * fp * tp];
    for ch in 0..c {
        for row in 0..f {
            let src = (ch * f + row) * t;
            let dst = (ch * fp + row + pf) * tp + pt;
            out[dst..dst + t].copy_from_slice(&x[src..src + t]);
        }
    }
    (out, fp, tp)
}

fn unpad2d(xp: &[f32], c: usize, fp: usize, tp: usize, pf: usize, pt: usize) -> Vec<f32> {
    if pf == 0 && pt == 0 {
        return xp.to_vec();
    }
    let (f, t) = (fp - 2 * pf, tp - 2 * pt);
    let mut out = vec![0.0f32; c * f * t];
    for ch in 0..c {
        for row in 0..f {
            let src = (ch * fp + row + pf) * tp + pt;
            let dst = (ch * f + row) * t;
            out[dst..dst + t].copy_from_slice(&xp[src..src + t]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd(
    x: &[f32],
    ci: usize,
    f: usize,
    t: usize,
    w: &[f32],
    co: usize,
    kf: usize,
    kt: usize,
    b: &[f32],
    stride: (usize, usize),
    pad: (usize, usize),
) -> Vec<f32> {
    let (fo, to) = conv2d_out_dims(f, t, kf, kt, stride, pad).expect("validated");
    let (xp, fp, tp) = pad2d(x, ci, f, t, pad.0, pad.1);
    let (sf, st) = stride;
    let mut y = vec![0.0f32; co * fo * to];
    for oc in 0..co {
        let ybase = oc * fo * to;
        y[ybase..ybase + fo * to].fill(b[oc]);
        for ic in 0..ci {
            for dkf in 0..kf {
                for dkt in 0..kt {
                    let wv = w[((oc * ci + ic) * kf + dkf) * kt + dkt];
                    for fr in 0..fo {
                        let xrow = (ic * fp + fr * sf + dkf) * tp + dkt;
                        let yrow = ybase + fr * to;
                        if st == 1 {
                            let xs = &xp[xrow..xrow + to];
                            let ys = &mut y[yrow..yrow + to];
                            for (yv, xv) in ys.iter_mut().zip(xs) {
                                *yv += wv * xv;
                            }
                        } else {
                            for j in 0..to {
                                y[yrow + j] += wv * xp[xrow + j * st];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd(
    x: &[f32],
    ci: usize,
    f: usize,
    t: usize,
    w: &[f32],
    co: usize,
    kf: usize,
    kt: usize,
    dy: &[f32],
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (fo, to) = conv2d_out_dims(f, t, kf, kt, stride, pad).expect("validated");
    let (xp, fp, tp) = pad2d(x, ci, f, t, pad.0, pad.1);
    let (sf, st) = stride;
    let mut dxp = vec![0.0f32; ci * fp * tp];
    let mut dw = vec![0.0f32; co * ci * kf * kt];
    let mut db = vec![0.0f32; co];
    for oc in 0..co {
        let ybase = oc * fo * to;
        db[oc] = sum_all(&dy[ybase..ybase + fo * to]);
        for ic in 0..ci {
            for dkf in 0..kf {
                for dkt in 0..kt {
                    let widx = ((oc * ci + ic) * kf + dkf) * kt + dkt;
                    let wv = w[widx];
                    let mut acc = 0.0f32;
                    for fr in 0..fo {
                        let xrow = (ic * fp + fr * sf + dkf) * tp + dkt;
                        let yrow = ybase + fr * to;
                        if st == 1 {
                            for j in 0..to {
                                let g = dy[yrow + j];
                                dxp[xrow + j] += wv * g;
                                acc += g * xp[xrow + j];
                            }
                        } else {
                            for j in 0..to {
                                let g = dy[yrow + j];
                                dxp[xrow + j * st] += wv * g;
                                acc += g * xp[xrow + j * st];
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (unpad2d(&dxp, ci, fp, tp, pad.0, pad.1), dw, db)
}

// ---------------------------------------------------------------------------
// Transposed 2-d convolution, kernel [Ci, Co, Kf, Kt]. `out_pad` extends the
// output on the high side before the `pad` crop, mirroring the shape rule
//   out = (in - 1) * stride - 2 * pad + kernel + out_pad.
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn convt2d_out_dims(
    f: usize,
    t: usize,
    kf: usize,
    kt: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    out_pad: (usize, usize),
) -> Option<(usize, usize)> {
    let fo = ((f - 1) * stride.0 + kf + out_pad.0).checked_sub(2 * pad.0)?;
    let to = ((t - 1) * stride.1 + kt + out_pad.1).checked_sub(2 * pad.1)?;
    if fo == 0 || to == 0 {
        None
    } else {
        Some((fo, to))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn convt2d_fwd(
    x: &[f32],
    ci: usize,
    f: usize,
    t: usize,
    w: &[f32],
    co: usize,
    kf: usize,
    kt: usize,
    b: &[f32],
    stride: (usize, usize),
    pad: (usize, usize),
    out_pad: (usize, usize),
) -> Vec<f32> {
    let (fo, to) = convt2d_out_dims(f, t, kf, kt, stride, pad, out_pad).expect("validated");
    let (sf, st) = stride;
    // Full (uncropped) scatter extent, including output padding.
    let ff = (f - 1) * sf + kf + out_pad.0;
    let tf = (t - 1) * st + kt + out_pad.1;
    let mut yf = vec![0.0f32; co * ff * tf];
    for ic in 0..ci {
        for oc in 0..co {
            for dkf in 0..kf {
                for dkt in 0..kt {
                    let wv = w[((ic * co + oc) * kf + dkf) * kt + dkt];
                    for fi in 0..f {
                        let xrow = (ic * f + fi) * t;
                        let yrow = (oc * ff + fi * sf + dkf) * tf + dkt;
                        if st == 1 {
                            let ys = &mut yf[yrow..yrow + t];
                            for (yv, xv) in ys.iter_mut().zip(&x[xrow..xrow + t]) {
                                *yv += wv * xv;
                            }
                        } else {
                            for j in 0..t {
                                yf[yrow + j * st] += wv * x[xrow + j];
                            }
                        }
                    }
                }
            }
        }
    }
    let mut y = vec![0.0f32; co * fo * to];
    for oc in 0..co {
        for fr in 0..fo {
            let src = (oc * ff + fr + pad.0) * tf + pad.1;
            let dst = (oc * fo + fr) * to;
            y[dst..dst + to].copy_from_slice(&yf[src..src + to]);
        }
        let base = oc * fo * to;
        for v in y[base..base + fo * to].iter_mut() {
            *v += b[oc];
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn convt2d_bwd(
    x: &[f32],
    ci: usize,
    f: usize,
    t: usize,
    w: &[f32],
    co: usize,
    kf: usize,
    kt: usize,
    dy: &[f32],
    stride: (usize, usize),
    pad: (usize, usize),
    out_pad: (usize, usize),
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (fo, to) = convt2d_out_dims(f, t, kf, kt, stride, pad, out_pad).expect("validated");
    let (sf, st) = stride;
    let ff = (f - 1) * sf + kf + out_pad.0;
    let tf = (t - 1) * st + kt + out_pad.1;
    // Re-embed the output gradient into the uncropped extent.
    let mut dyf = vec![0.0f32; co * ff * tf];
    let mut db = vec![0.0f32; co];
    for oc in 0..co {
        let base = oc * fo * to;
        db[oc] = sum_all(&dy[base..base + fo * to]);
        for fr in 0..fo {
            let dst = (oc * ff + fr + pad.0) * tf + pad.1;
            let src = (oc * fo + fr) * to;
            dyf[dst..dst + to].copy_from_slice(&dy[src..src + to]);
        }
    }
    let mut dx = vec![0.0f32; ci * f * t];
    let mut dw = vec![0.0f32; ci * co * kf * kt];
    for ic in 0..ci {
        for oc in 0..co {
            for dkf in 0..kf {
                for dkt in 0..kt {
                    let widx = ((ic * co + oc) * kf + dkf) * kt + dkt;
                    let wv = w[widx];
                    let mut acc = 0.0f32;
                    for fi in 0..f {
                        let xrow = (ic * f + fi) * t;
                        let yrow = (oc * ff + fi * sf + dkf) * tf + dkt;
                        if st == 1 {
                            for j in 0..t {
                                let g = dyf[yrow + j];
                                dx[xrow + j] += wv * g;
                                acc += g * x[xrow + j];
                            }
                        } else {
                            for j in 0..t {
                                let g = dyf[yrow + j * st];
                                dx[xrow + j] += wv * g;
                                acc += g * x[xrow + j];
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[3, 1], &[1, 4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shapes(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shapes(&[1], &[5, 2]).unwrap(), vec![5, 2]);
        assert!(broadcast_shapes(&[2, 3], &[4, 3]).is_none());
    }

    #[test]
    fn bin_op_broadcasts_rows_and_columns() {
        let a = [1.0, 2.0, 3.0];
        let b = [10.0, 20.0];
        let out = bin_op(&a, &[3, 1], &b, &[1, 2], &[3, 2], |x, y| x + y);
        assert_eq!(out, vec![11.0, 21.0, 12.0, 22.0, 13.0, 23.0]);
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_dims() {
        let g = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(reduce_to_shape(&g, &[3, 2], &[3, 1]), vec![3.0, 7.0, 11.0]);
        assert_eq!(reduce_to_shape(&g, &[3, 2], &[1, 2]), vec![9.0, 12.0]);
        assert_eq!(reduce_to_shape(&g, &[3, 2], &[1]), vec![21.0]);
    }

    #[test]
    fn matmul_small_case() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, 2, 2, &b, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = [0.1, 2.0, -1.0, 3.0, 0.0, 0.5];
        let y = softmax_axis(&x, &[2, 3], 1);
        for r in 0..2 {
            let s: f32 = y[r * 3..r * 3 + 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn conv1d_matches_hand_computation() {
        // x: 1 channel [1 2 3 4], k=2, w=[1 -1], b=0.5
        let y = conv1d_fwd(&[1.0, 2.0, 3.0, 4.0], 1, 4, &[1.0, -1.0], 1, 2, &[0.5], 1, 1);
        assert_eq!(y, vec![-0.5, -0.5, -0.5]);
        // dilation 2: pairs (x0,x2), (x1,x3)
        let y = conv1d_fwd(&[1.0, 2.0, 3.0, 4.0], 1, 4, &[1.0, -1.0], 1, 2, &[0.0], 1, 2);
        assert_eq!(y, vec![-2.0, -2.0]);
    }

    #[test]
    fn conv2d_identity_kernel_with_padding() {
        // 1x1 kernel, stride 1, no padding reproduces the input.
        let x: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let y = conv2d_fwd(&x, 1, 3, 4, &[1.0], 1, 1, 1, &[0.0], (1, 1), (0, 0));
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_shapes_follow_stride_and_pad() {
        assert_eq!(conv2d_out_dims(257, 157, 5, 2, (2, 1), (2, 0)), Some((129, 156)));
        assert_eq!(conv2d_out_dims(129, 156, 5, 2, (2, 1), (2, 0)), Some((65, 155)));
    }

    #[test]
    fn convt2d_inverts_conv2d_shape() {
        // 17 -> 33 under the mirrored geometry.
        assert_eq!(convt2d_out_dims(17, 50, 5, 2, (2, 1), (2, 0), (0, 0)), Some((33, 51)));
        // Even target needs one sample of output padding.
        assert_eq!(convt2d_out_dims(17, 50, 5, 2, (2, 1), (2, 0), (1, 0)), Some((34, 51)));
    }

    #[test]
    fn convt2d_is_adjoint_of_conv2d() {
        // <conv(x), y> == <x, convT(y)> when convT uses the flipped roles
        // of the same kernel and zero bias.
        let ci = 2;
        let co = 3;
        let (f, t) = (9, 7);
        let (kf, kt) = (5, 2);
        let stride = (2, 1);
        let pad = (2, 0);
        let mut st = 0xbeefu64;
        let mut next = || {
            st = st.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((st >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let x: Vec<f32> = (0..ci * f * t).map(|_| next()).collect();
        let w: Vec<f32> = (0..co * ci * kf * kt).map(|_| next()).collect();
        let (fo, to) = conv2d_out_dims(f, t, kf, kt, stride, pad).unwrap();
        let y = conv2d_fwd(&x, ci, f, t, &w, co, kf, kt, &vec![0.0; co], stride, pad);
        let g: Vec<f32> = (0..co * fo * to).map(|_| next()).collect();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| *a as f64 * *b as f64).sum();
        // The conv kernel [Co,Ci,Kf,Kt] reads as [Ci,Co,Kf,Kt] for the
        // transposed direction without any data movement.
        // Output padding chosen so the transposed shape returns to (f, t).
        let opf = f + 2 * pad.0 - ((fo - 1) * stride.0 + kf);
        let opt = t + 2 * pad.1 - ((to - 1) * stride.1 + kt);
        let xt = convt2d_fwd(
            &g, co, fo, to, &w, ci, kf, kt, &vec![0.0; ci], stride, pad, (opf, opt),
        );
        let rhs: f64 = x.iter().zip(&xt).map(|(a, b)| *a as f64 * *b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
