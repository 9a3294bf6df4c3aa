//! Reverse sweep over the recorded graph.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::{vec, vec::Vec};

use super::{kernels, Op, Tensor};
use crate::Result;

enum Visit {
    Enter(Tensor),
    Exit(Tensor),
}

/// Walks the graph from `root` in reverse topological order, accumulating
/// leaf gradients. Iterative throughout: graph depth is unbounded (one
/// chain link per LSTM frame).
pub(super) fn run(root: &Tensor) -> Result<()> {
    let mut topo: Vec<Tensor> = Vec::new();
    let mut seen: BTreeSet<u64> = BTreeSet::new();
    let mut stack = vec![Visit::Enter(root.clone())];
    while let Some(v) = stack.pop() {
        match v {
            Visit::Enter(t) => {
                if !t.requires_grad() || !seen.insert(t.id()) {
                    continue;
                }
                stack.push(Visit::Exit(t.clone()));
                for p in t.parents() {
                    if p.requires_grad() {
                        stack.push(Visit::Enter(p.clone()));
                    }
                }
            }
            Visit::Exit(t) => topo.push(t),
        }
    }

    let mut grads: BTreeMap<u64, Vec<f32>> = BTreeMap::new();
    grads.insert(root.id(), vec![1.0]);

    for t in topo.iter().rev() {
        let Some(g) = grads.remove(&t.id()) else {
            continue;
        };
        if t.is_leaf() {
            t.accumulate_grad(&g);
            continue;
        }
        let parent_grads = vjp(t, &g)?;
        for (p, pg) in t.parents().iter().zip(parent_grads) {
            let Some(pg) = pg else { continue };
            if !p.requires_grad() {
                continue;
            }
            match grads.get_mut(&p.id()) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&pg) {
                        *a += b;
                    }
                }
                None => {
                    grads.insert(p.id(), pg);
                }
            }
        }
    }
    Ok(())
}

/// Broadcasts `g` (shaped `g_shape`, a keepdim reduction of `target`) back
/// up to `target`, scaling each element by `scale`.
fn expand_scaled(g: &[f32], g_shape: &[usize], target: &[usize], scale: f32) -> Vec<f32> {
    kernels::bin_op(g, g_shape, &[0.0], &[1], target, |a, _| a * scale)
}

/// Per-parent gradients for one node. `None` marks a parent that receives
/// no gradient from this op (e.g. both parents checked later for
/// `requires_grad` anyway).
fn vjp(t: &Tensor, g: &[f32]) -> Result<Vec<Option<Vec<f32>>>> {
    let op = t.op().expect("non-leaf has an op");
    let parents = t.parents();
    let out_shape = t.shape();
    Ok(match op {
        Op::Add => {
            let da = kernels::reduce_to_shape(g, out_shape, parents[0].shape());
            let db = kernels::reduce_to_shape(g, out_shape, parents[1].shape());
            vec![Some(da), Some(db)]
        }
        Op::Sub => {
            let da = kernels::reduce_to_shape(g, out_shape, parents[0].shape());
            let neg: Vec<f32> = g.iter().map(|v| -v).collect();
            let db = kernels::reduce_to_shape(&neg, out_shape, parents[1].shape());
            vec![Some(da), Some(db)]
        }
        Op::Mul => {
            let (a, b) = (&parents[0], &parents[1]);
            let da_full = b.with_data(|bd| {
                kernels::bin_op(g, out_shape, bd, b.shape(), out_shape, |g, b| g * b)
            });
            let db_full = a.with_data(|ad| {
                kernels::bin_op(g, out_shape, ad, a.shape(), out_shape, |g, a| g * a)
            });
            vec![
                Some(kernels::reduce_to_shape(&da_full, out_shape, a.shape())),
                Some(kernels::reduce_to_shape(&db_full, out_shape, b.shape())),
            ]
        }
        Op::Div => {
            let (a, b) = (&parents[0], &parents[1]);
            let da_full = b.with_data(|bd| {
                kernels::bin_op(g, out_shape, bd, b.shape(), out_shape, |g, b| g / b)
            });
            // d/db (a/b) = -y/b with y the already-computed quotient.
            let gy: Vec<f32> = t.with_data(|y| g.iter().zip(y).map(|(g, y)| g * y).collect());
            let db_full = b.with_data(|bd| {
                kernels::bin_op(&gy, out_shape, bd, b.shape(), out_shape, |gy, b| -gy / b)
            });
            vec![
                Some(kernels::reduce_to_shape(&da_full, out_shape, a.shape())),
                Some(kernels::reduce_to_shape(&db_full, out_shape, b.shape())),
            ]
        }
        Op::Neg => vec![Some(g.iter().map(|v| -v).collect())],
        Op::Tanh => {
            let dx = t.with_data(|y| {
                g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()
            });
            vec![Some(dx)]
        }
        Op::Sigmoid => {
            let dx = t.with_data(|y| {
                g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()
            });
            vec![Some(dx)]
        }
        Op::Sqrt => {
            let dx = t.with_data(|y| {
                g.iter().zip(y).map(|(g, y)| g / (2.0 * y)).collect()
            });
            vec![Some(dx)]
        }
        Op::Log10 => {
            let ln10 = core::f32::consts::LN_10;
            let dx = parents[0].with_data(|x| {
                g.iter().zip(x).map(|(g, x)| g / (x * ln10)).collect()
            });
            vec![Some(dx)]
        }
        Op::Prelu => {
            let alpha = parents[1].item()?;
            let (dx, da) = parents[0].with_data(|x| {
                let mut da = 0.0f64;
                let dx: Vec<f32> = g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| {
                        if *x > 0.0 {
                            *g
                        } else {
                            da += (*g as f64) * (*x as f64);
                            g * alpha
                        }
                    })
                    .collect();
                (dx, da as f32)
            });
            vec![Some(dx), Some(vec![da])]
        }
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            let dx = parents[0].with_data(|x| {
                g.iter()
                    .zip(x)
                    .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                    .collect()
            });
            vec![Some(dx)]
        }
        Op::Matmul => {
            let (a, b) = (&parents[0], &parents[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let da = b.with_data(|bd| {
                let bt = kernels::transpose2(bd, k, n);
                kernels::matmul(g, m, n, &bt, k)
            });
            let db = a.with_data(|ad| {
                let at = kernels::transpose2(ad, m, k);
                kernels::matmul(&at, k, m, g, n)
            });
            vec![Some(da), Some(db)]
        }
        Op::Softmax { axis } => {
            let dx = t.with_data(|y| kernels::softmax_backward(y, g, out_shape, *axis));
            vec![Some(dx)]
        }
        Op::Sum { axis } => {
            let p = parents[0].shape();
            let dx = match axis {
                None => vec![g[0]; kernels::numel(p)],
                Some(_) => expand_scaled(g, out_shape, p, 1.0),
            };
            vec![Some(dx)]
        }
        Op::Mean { axis } => {
            let p = parents[0].shape();
            let dx = match axis {
                None => {
                    let s = g[0] / kernels::numel(p) as f32;
                    vec![s; kernels::numel(p)]
                }
                Some(ax) => expand_scaled(g, out_shape, p, 1.0 / p[*ax] as f32),
            };
            vec![Some(dx)]
        }
        Op::Std { axis } => {
            let p_shape = parents[0].shape().to_vec();
            let (outer, n, inner) = kernels::axis_split(&p_shape, *axis);
            let dx = parents[0].with_data(|x| {
                let mu = kernels::reduce_mean_axis(x, &p_shape, *axis);
                t.with_data(|y| {
                    let mut dx = vec![0.0f32; x.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let oi = o * inner + i;
                            let denom = n as f32 * y[oi].max(1e-12);
                            let scale = g[oi] / denom;
                            for j in 0..n {
                                let idx = (o * n + j) * inner + i;
                                dx[idx] = scale * (x[idx] - mu[oi]);
                            }
                        }
                    }
                    dx
                })
            });
            vec![Some(dx)]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::Permute { perm } => {
            let inv = kernels::inverse_perm(perm);
            let (dx, _) = kernels::permute_copy(g, out_shape, &inv);
            vec![Some(dx)]
        }
        Op::Slice { axis, start, len } => {
            let dx = kernels::slice_scatter(g, parents[0].shape(), *axis, *start, *len);
            vec![Some(dx)]
        }
        Op::Concat { axis } => {
            let shapes: Vec<&[usize]> = parents.iter().map(|p| p.shape()).collect();
            kernels::concat_split(g, &shapes, *axis)
                .into_iter()
                .map(Some)
                .collect()
        }
        Op::Conv1d { stride, dilation } => {
            let (x, w) = (&parents[0], &parents[1]);
            let (ci, tlen) = (x.shape()[0], x.shape()[1]);
            let (co, k) = (w.shape()[0], w.shape()[2]);
            let (dx, dw, db) = x.with_data(|xd| {
                w.with_data(|wd| kernels::conv1d_bwd(xd, ci, tlen, wd, co, k, g, *stride, *dilation))
            });
            vec![Some(dx), Some(dw), Some(db)]
        }
        Op::Conv2d { stride, pad } => {
            let (x, w) = (&parents[0], &parents[1]);
            let (ci, f, tlen) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (co, kf, kt) = (w.shape()[0], w.shape()[2], w.shape()[3]);
            let (dx, dw, db) = x.with_data(|xd| {
                w.with_data(|wd| {
                    kernels::conv2d_bwd(xd, ci, f, tlen, wd, co, kf, kt, g, *stride, *pad)
                })
            });
            vec![Some(dx), Some(dw), Some(db)]
        }
        Op::ConvT2d { stride, pad, out_pad } => {
            let (x, w) = (&parents[0], &parents[1]);
            let (ci, f, tlen) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (co, kf, kt) = (w.shape()[1], w.shape()[2], w.shape()[3]);
            let (dx, dw, db) = x.with_data(|xd| {
                w.with_data(|wd| {
                    kernels::convt2d_bwd(xd, ci, f, tlen, wd, co, kf, kt, g, *stride, *pad, *out_pad)
                })
            });
            vec![Some(dx), Some(dw), Some(db)]
        }
        Op::Stft { window, hop, fft_len } => {
            let bins = fft_len / 2 + 1;
            let frames = out_shape[2];
            let out_len = parents[0].numel();
            let (g_re, g_im) = g.split_at(bins * frames);
            let dx = crate::fft::stft_adjoint(g_re, g_im, frames, window, *hop, *fft_len, out_len)?;
            vec![Some(dx)]
        }
        Op::Istft { window, hop, fft_len } => {
            let frames = parents[0].shape()[2];
            let (dre, dim) = crate::fft::istft_adjoint(g, frames, window, *hop, *fft_len)?;
            let mut dx = dre;
            dx.extend_from_slice(&dim);
            vec![Some(dx)]
        }
        Op::CosineSim => {
            let (a, b) = (&parents[0], &parents[1]);
            let gs = g[0] as f64;
            let (da, db) = a.with_data(|ad| {
                b.with_data(|bd| {
                    let mut dot = 0.0f64;
                    let mut na2 = 0.0f64;
                    let mut nb2 = 0.0f64;
                    for (x, y) in ad.iter().zip(bd) {
                        dot += *x as f64 * *y as f64;
                        na2 += *x as f64 * *x as f64;
                        nb2 += *y as f64 * *y as f64;
                    }
                    let na = libm::sqrt(na2);
                    let nb = libm::sqrt(nb2);
                    let inv = 1.0 / (na * nb);
                    let cos = dot * inv;
                    let da: Vec<f32> = ad
                        .iter()
                        .zip(bd)
                        .map(|(x, y)| (gs * (*y as f64 * inv - cos * *x as f64 / na2)) as f32)
                        .collect();
                    let db: Vec<f32> = ad
                        .iter()
                        .zip(bd)
                        .map(|(x, y)| (gs * (*x as f64 * inv - cos * *y as f64 / nb2)) as f32)
                        .collect();
                    (da, db)
                })
            });
            vec![Some(da), Some(db)]
        }
    })
}
