//! Reverse-mode automatic differentiation over dense f32 tensors.
//!
//! Tensors are cheap reference-counted handles. Every operation evaluates
//! eagerly and, when any operand requires gradients, records itself on a
//! define-by-run graph. [`Tensor::backward`] walks that graph once in
//! reverse topological order; gradients accumulate additively, so calling
//! it twice doubles every leaf gradient. Only leaves retain a persistent
//! `.grad`; interior results are freed with the graph.

mod backward;
pub(crate) mod kernels;

use alloc::rc::Rc;
use alloc::string::String;
use alloc::{vec, vec::Vec};
use core::cell::RefCell;
use core::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crate::{contract_err, dim_err, domain_err, Result};
use kernels::numel;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);
static NO_GRAD: AtomicBool = AtomicBool::new(false);

/// Suspends graph recording while alive, so evaluation passes free their
/// intermediates immediately. Guards nest; drop restores the prior state.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    #[allow(clippy::new_without_default)]
    pub fn new() -> NoGradGuard {
        NoGradGuard { prev: NO_GRAD.swap(true, Ordering::Relaxed) }
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        NO_GRAD.store(self.prev, Ordering::Relaxed);
    }
}

/// Graph operation attached to a non-leaf tensor.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Sigmoid,
    Sqrt,
    Log10,
    Prelu,
    Clamp { lo: f32, hi: f32 },
    Matmul,
    Softmax { axis: usize },
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Std { axis: usize },
    Reshape,
    Permute { perm: Vec<usize> },
    Slice { axis: usize, start: usize, len: usize },
    Concat { axis: usize },
    Conv1d { stride: usize, dilation: usize },
    Conv2d { stride: (usize, usize), pad: (usize, usize) },
    ConvT2d { stride: (usize, usize), pad: (usize, usize), out_pad: (usize, usize) },
    Stft { window: Vec<f32>, hop: usize, fft_len: usize },
    Istft { window: Vec<f32>, hop: usize, fft_len: usize },
    CosineSim,
}

pub(crate) struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    is_leaf: bool,
    op: Option<Op>,
    parents: Vec<Tensor>,
}

impl Drop for TensorInner {
    // Graphs can be thousands of nodes deep (one LSTM step chain per
    // frame), so the default recursive drop would overflow the stack.
    fn drop(&mut self) {
        let mut stack = core::mem::take(&mut self.parents);
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Rc::try_unwrap(t.inner) {
                stack.append(&mut inner.parents);
            }
        }
    }
}

/// A dense N-d f32 tensor participating in the autodiff graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl core::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
    if numel(shape) != data_len {
        return Err(dim_err!(
            "shape {:?} implies {} elements but data has {}",
            shape,
            numel(shape),
            data_len
        ));
    }
    if shape.is_empty() {
        return Err(dim_err!("rank-0 tensors are not supported, use shape [1]"));
    }
    Ok(())
}

impl Tensor {
    fn new_inner(
        data: Vec<f32>,
        shape: Vec<usize>,
        requires_grad: bool,
        is_leaf: bool,
        op: Option<Op>,
        parents: Vec<Tensor>,
    ) -> Tensor {
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                is_leaf,
                op,
                parents,
            }),
        }
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        Ok(Self::new_inner(data, shape.to_vec(), false, true, None, vec![]))
    }

    /// Trainable leaf: participates in backward and retains `.grad`.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        Ok(Self::new_inner(data, shape.to_vec(), true, true, None, vec![]))
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(vec![0.0; numel(shape)], shape)
    }

    pub fn full(shape: &[usize], v: f32) -> Result<Tensor> {
        Tensor::from_vec(vec![v; numel(shape)], shape)
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::from_vec(vec![v], &[1]).expect("scalar shape is valid")
    }

    fn from_op(data: Vec<f32>, shape: Vec<usize>, parents: Vec<Tensor>, op: Op) -> Tensor {
        if !NO_GRAD.load(Ordering::Relaxed) && parents.iter().any(|p| p.requires_grad()) {
            Self::new_inner(data, shape, true, false, Some(op), parents)
        } else {
            // Dead branch for backward: keep no graph references so eval
            // passes free intermediates as they go.
            Self::new_inner(data, shape, false, true, None, vec![])
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.is_leaf
    }

    /// Runs `f` over the tensor's data without copying it.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f32]) -> R) -> R {
        f(&self.inner.data.borrow())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(contract_err!(
                "item() on tensor of shape {:?}",
                self.shape()
            ));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Leaf gradient accumulated by [`Tensor::backward`], if any.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrites the tensor's values in place (optimizer steps, loading).
    pub fn set_data(&self, new: &[f32]) -> Result<()> {
        if new.len() != self.numel() {
            return Err(dim_err!(
                "set_data with {} values on shape {:?}",
                new.len(),
                self.shape()
            ));
        }
        self.inner.data.borrow_mut().copy_from_slice(new);
        Ok(())
    }

    /// Copy of the values with no graph attached.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(self.to_vec(), self.shape()).expect("shape is valid")
    }

    // -- elementwise ---------------------------------------------------

    fn binary(&self, other: &Tensor, op: Op, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        let out_shape = kernels::broadcast_shapes(self.shape(), other.shape())
            .ok_or_else(|| dim_err!("cannot broadcast {:?} with {:?}", self.shape(), other.shape()))?;
        let data = self.with_data(|a| {
            other.with_data(|b| kernels::bin_op(a, self.shape(), b, other.shape(), &out_shape, &f))
        });
        Ok(Tensor::from_op(data, out_shape, vec![self.clone(), other.clone()], op))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn add_scalar(&self, v: f32) -> Result<Tensor> {
        self.add(&Tensor::scalar(v))
    }

    pub fn mul_scalar(&self, v: f32) -> Result<Tensor> {
        self.mul(&Tensor::scalar(v))
    }

    fn unary(&self, op: Op, f: impl Fn(f32) -> f32) -> Tensor {
        let data = self.with_data(|d| d.iter().map(|&v| f(v)).collect());
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], op)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Op::Neg, |v| -v)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Op::Tanh, libm::tanhf)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid, |v| 1.0 / (1.0 + libm::expf(-v)))
    }

    /// Elementwise square root. Negative inputs are a domain error.
    pub fn sqrt(&self) -> Result<Tensor> {
        if self.with_data(|d| d.iter().any(|&v| v < 0.0)) {
            return Err(domain_err!("sqrt of a negative value"));
        }
        Ok(self.unary(Op::Sqrt, libm::sqrtf))
    }

    /// Elementwise base-10 logarithm. Non-positive inputs are a domain
    /// error rather than silent NaN/inf.
    pub fn log10(&self) -> Result<Tensor> {
        if self.with_data(|d| d.iter().any(|&v| v <= 0.0)) {
            return Err(domain_err!("log10 of a non-positive value"));
        }
        Ok(self.unary(Op::Log10, libm::log10f))
    }

    /// Leaky rectifier with a learned scalar slope for negative inputs.
    pub fn prelu(&self, alpha: &Tensor) -> Result<Tensor> {
        if alpha.numel() != 1 {
            return Err(dim_err!("prelu slope must be a scalar, got {:?}", alpha.shape()));
        }
        let a = alpha.item()?;
        let data = self.with_data(|d| d.iter().map(|&v| if v > 0.0 { v } else { a * v }).collect());
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), alpha.clone()],
            Op::Prelu,
        ))
    }

    /// Clamps values into `[lo, hi]`; gradient passes only inside the range.
    pub fn clamp(&self, lo: f32, hi: f32) -> Result<Tensor> {
        if !(lo <= hi) {
            return Err(domain_err!("clamp range [{lo}, {hi}] is empty"));
        }
        Ok(self.unary(Op::Clamp { lo, hi }, |v| v.max(lo).min(hi)))
    }

    // -- linear algebra --------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(dim_err!("matmul of {:?} with {:?}", a, b));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let data = self.with_data(|x| other.with_data(|y| kernels::matmul(x, m, k, y, n)));
        Ok(Tensor::from_op(data, vec![m, n], vec![self.clone(), other.clone()], Op::Matmul))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let data = self.with_data(|d| kernels::softmax_axis(d, self.shape(), axis));
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Op::Softmax { axis },
        ))
    }

    // -- reductions ------------------------------------------------------

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(dim_err!("axis {} out of range for shape {:?}", axis, self.shape()));
        }
        Ok(())
    }

    /// Sum along `axis` (keeping it as size 1), or over everything into a
    /// `[1]` scalar when `axis` is `None`.
    pub fn sum(&self, axis: Option<usize>) -> Result<Tensor> {
        let (data, shape) = match axis {
            None => (vec![self.with_data(kernels::sum_all)], vec![1]),
            Some(ax) => {
                self.check_axis(ax)?;
                let mut shape = self.shape().to_vec();
                shape[ax] = 1;
                (self.with_data(|d| kernels::reduce_sum_axis(d, self.shape(), ax)), shape)
            }
        };
        Ok(Tensor::from_op(data, shape, vec![self.clone()], Op::Sum { axis }))
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Tensor> {
        let (data, shape) = match axis {
            None => {
                let n = self.numel() as f64;
                let s = self.with_data(kernels::sum_all) as f64;
                (vec![(s / n) as f32], vec![1])
            }
            Some(ax) => {
                self.check_axis(ax)?;
                let mut shape = self.shape().to_vec();
                shape[ax] = 1;
                (self.with_data(|d| kernels::reduce_mean_axis(d, self.shape(), ax)), shape)
            }
        };
        Ok(Tensor::from_op(data, shape, vec![self.clone()], Op::Mean { axis }))
    }

    /// Population standard deviation along `axis`, keeping it as size 1.
    pub fn std(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        let data = self.with_data(|d| kernels::reduce_std_axis(d, self.shape(), axis));
        Ok(Tensor::from_op(data, shape, vec![self.clone()], Op::Std { axis }))
    }

    // -- shape manipulation -----------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(self.numel(), shape)?;
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Op::Reshape,
        ))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || core::mem::replace(&mut seen[p], true)) {
            return Err(dim_err!("invalid permutation {:?} for shape {:?}", perm, self.shape()));
        }
        let (data, shape) = self.with_data(|d| kernels::permute_copy(d, self.shape(), perm));
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone()],
            Op::Permute { perm: perm.to_vec() },
        ))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        if len == 0 || start + len > self.shape()[axis] {
            return Err(dim_err!(
                "slice {}..{} out of range on axis {} of {:?}",
                start,
                start + len,
                axis,
                self.shape()
            ));
        }
        let data = self.with_data(|d| kernels::slice_copy(d, self.shape(), axis, start, len));
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone()],
            Op::Slice { axis, start, len },
        ))
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(dim_err!("concat of zero tensors"));
        }
        let rank = parts[0].rank();
        for p in parts {
            if p.rank() != rank {
                return Err(dim_err!("concat rank mismatch"));
            }
            if axis >= rank {
                return Err(dim_err!("concat axis {} out of range", axis));
            }
            for d in 0..rank {
                if d != axis && p.shape()[d] != parts[0].shape()[d] {
                    return Err(dim_err!(
                        "concat shape mismatch on dim {}: {:?} vs {:?}",
                        d,
                        p.shape(),
                        parts[0].shape()
                    ));
                }
            }
        }
        let datas: Vec<Vec<f32>> = parts.iter().map(|p| p.to_vec()).collect();
        let views: Vec<(&[f32], &[usize])> = datas
            .iter()
            .zip(parts)
            .map(|(d, p)| (d.as_slice(), p.shape()))
            .collect();
        let (data, shape) = kernels::concat_copy(&views, axis);
        Ok(Tensor::from_op(data, shape, parts.to_vec(), Op::Concat { axis }))
    }

    // -- convolutions -----------------------------------------------------

    /// Valid 1-d convolution over `[Ci, T]` with kernel `[Co, Ci, K]`.
    pub fn conv1d(&self, w: &Tensor, b: &Tensor, stride: usize, dilation: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 2 || ws.len() != 3 {
            return Err(dim_err!("conv1d expects x[Ci,T], w[Co,Ci,K]; got {:?}, {:?}", xs, ws));
        }
        if stride == 0 || dilation == 0 {
            return Err(domain_err!("conv1d stride/dilation must be positive"));
        }
        let (ci, t) = (xs[0], xs[1]);
        let (co, k) = (ws[0], ws[2]);
        if ws[1] != ci {
            return Err(dim_err!("conv1d channel mismatch: input {} vs kernel {}", ci, ws[1]));
        }
        if b.shape() != [co] {
            return Err(dim_err!("conv1d bias shape {:?}, expected [{}]", b.shape(), co));
        }
        let to = kernels::conv1d_out_len(t, k, stride, dilation)
            .ok_or_else(|| dim_err!("conv1d input of {} frames too short for kernel span {}", t, dilation * (k - 1) + 1))?;
        let data = self.with_data(|x| {
            w.with_data(|wv| b.with_data(|bv| kernels::conv1d_fwd(x, ci, t, wv, co, k, bv, stride, dilation)))
        });
        Ok(Tensor::from_op(
            data,
            vec![co, to],
            vec![self.clone(), w.clone(), b.clone()],
            Op::Conv1d { stride, dilation },
        ))
    }

    /// 2-d convolution over `[Ci, F, T]` with kernel `[Co, Ci, Kf, Kt]` and
    /// symmetric zero padding.
    pub fn conv2d(
        &self,
        w: &Tensor,
        b: &Tensor,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 3 || ws.len() != 4 {
            return Err(dim_err!("conv2d expects x[Ci,F,T], w[Co,Ci,Kf,Kt]; got {:?}, {:?}", xs, ws));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(domain_err!("conv2d stride must be positive"));
        }
        let (ci, f, t) = (xs[0], xs[1], xs[2]);
        let (co, kf, kt) = (ws[0], ws[2], ws[3]);
        if ws[1] != ci {
            return Err(dim_err!("conv2d channel mismatch: input {} vs kernel {}", ci, ws[1]));
        }
        if b.shape() != [co] {
            return Err(dim_err!("conv2d bias shape {:?}, expected [{}]", b.shape(), co));
        }
        let (fo, to) = kernels::conv2d_out_dims(f, t, kf, kt, stride, pad)
            .ok_or_else(|| dim_err!("conv2d input [{}, {}] too small for kernel [{}, {}]", f, t, kf, kt))?;
        let data = self.with_data(|x| {
            w.with_data(|wv| {
                b.with_data(|bv| kernels::conv2d_fwd(x, ci, f, t, wv, co, kf, kt, bv, stride, pad))
            })
        });
        Ok(Tensor::from_op(
            data,
            vec![co, fo, to],
            vec![self.clone(), w.clone(), b.clone()],
            Op::Conv2d { stride, pad },
        ))
    }

    /// Transposed 2-d convolution over `[Ci, F, T]` with kernel
    /// `[Ci, Co, Kf, Kt]`.
    pub fn conv_transpose2d(
        &self,
        w: &Tensor,
        b: &Tensor,
        stride: (usize, usize),
        pad: (usize, usize),
        out_pad: (usize, usize),
    ) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 3 || ws.len() != 4 {
            return Err(dim_err!(
                "conv_transpose2d expects x[Ci,F,T], w[Ci,Co,Kf,Kt]; got {:?}, {:?}",
                xs,
                ws
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(domain_err!("conv_transpose2d stride must be positive"));
        }
        let (ci, f, t) = (xs[0], xs[1], xs[2]);
        let (co, kf, kt) = (ws[1], ws[2], ws[3]);
        if ws[0] != ci {
            return Err(dim_err!(
                "conv_transpose2d channel mismatch: input {} vs kernel {}",
                ci,
                ws[0]
            ));
        }
        if b.shape() != [co] {
            return Err(dim_err!("conv_transpose2d bias shape {:?}, expected [{}]", b.shape(), co));
        }
        let (fo, to) = kernels::convt2d_out_dims(f, t, kf, kt, stride, pad, out_pad)
            .ok_or_else(|| dim_err!("conv_transpose2d geometry is degenerate"))?;
        let data = self.with_data(|x| {
            w.with_data(|wv| {
                b.with_data(|bv| {
                    kernels::convt2d_fwd(x, ci, f, t, wv, co, kf, kt, bv, stride, pad, out_pad)
                })
            })
        });
        Ok(Tensor::from_op(
            data,
            vec![co, fo, to],
            vec![self.clone(), w.clone(), b.clone()],
            Op::ConvT2d { stride, pad, out_pad },
        ))
    }

    // -- signal transforms --------------------------------------------------

    /// Differentiable one-sided STFT of a `[L]` waveform into a
    /// `[2, bins, frames]` tensor (channel 0 real, channel 1 imaginary).
    pub fn stft(&self, window: &[f32], hop: usize, fft_len: usize) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(dim_err!("stft expects a rank-1 waveform, got {:?}", self.shape()));
        }
        if hop == 0 {
            return Err(domain_err!("stft hop must be positive"));
        }
        let (re, im, frames) =
            self.with_data(|x| crate::fft::stft_analyze(x, window, hop, fft_len))?;
        let bins = fft_len / 2 + 1;
        let mut data = re;
        data.extend_from_slice(&im);
        Ok(Tensor::from_op(
            data,
            vec![2, bins, frames],
            vec![self.clone()],
            Op::Stft { window: window.to_vec(), hop, fft_len },
        ))
    }

    /// Differentiable overlap-add synthesis of a `[2, bins, frames]`
    /// spectrogram back to a `[L]` waveform.
    pub fn istft(&self, window: &[f32], hop: usize, fft_len: usize) -> Result<Tensor> {
        let s = self.shape();
        let bins = fft_len / 2 + 1;
        if s.len() != 3 || s[0] != 2 || s[1] != bins {
            return Err(dim_err!(
                "istft expects [2, {}, frames], got {:?}",
                bins,
                s
            ));
        }
        if hop == 0 {
            return Err(domain_err!("istft hop must be positive"));
        }
        let frames = s[2];
        let out = self.with_data(|d| {
            let (re, im) = d.split_at(bins * frames);
            crate::fft::istft_synthesize(re, im, frames, window, hop, fft_len)
        })?;
        let n = out.len();
        Ok(Tensor::from_op(
            out,
            vec![n],
            vec![self.clone()],
            Op::Istft { window: window.to_vec(), hop, fft_len },
        ))
    }

    /// Cosine similarity between two equally-sized tensors, reduced over
    /// all elements into a `[1]` scalar. The reduction runs in f64 and the
    /// result is clamped to `[-1, 1]`.
    pub fn cosine_similarity(&self, other: &Tensor) -> Result<Tensor> {
        if self.numel() != other.numel() {
            return Err(dim_err!(
                "cosine similarity of {:?} with {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let (dot, na, nb) = self.with_data(|a| {
            other.with_data(|b| {
                let mut dot = 0.0f64;
                let mut na = 0.0f64;
                let mut nb = 0.0f64;
                for (x, y) in a.iter().zip(b) {
                    dot += *x as f64 * *y as f64;
                    na += *x as f64 * *x as f64;
                    nb += *y as f64 * *y as f64;
                }
                (dot, libm::sqrt(na), libm::sqrt(nb))
            })
        });
        if na == 0.0 || nb == 0.0 {
            return Err(domain_err!("cosine similarity of a zero-norm tensor"));
        }
        let cos = (dot / (na * nb)).clamp(-1.0, 1.0) as f32;
        Ok(Tensor::from_op(
            vec![cos],
            vec![1],
            vec![self.clone(), other.clone()],
            Op::CosineSim,
        ))
    }

    // -- autodiff -----------------------------------------------------------

    /// Reverse-mode sweep from a single-element tensor. Leaf gradients
    /// accumulate into `.grad`; running backward again adds again.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(contract_err!(
                "backward() requires a single-element tensor, got shape {:?}",
                self.shape()
            ));
        }
        backward::run(self)
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.inner.op.as_ref()
    }

    pub(crate) fn parents(&self) -> &[Tensor] {
        &self.inner.parents
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }
}

/// Human-readable shape string for error reporting.
pub fn shape_string(shape: &[usize]) -> String {
    alloc::format!("{:?}", shape)
}
