//! Complex-valued layers built from real kernels.
//!
//! A complex map is carried as a pair of real tensors. Linear layers
//! follow the complex multiplication rule
//! `(Wr + i Wi)(xr + i xi) = (Wr xr - Wi xi) + i(Wr xi + Wi xr)`,
//! so every complex conv/linear/LSTM costs four real applications.

use alloc::string::String;
use alloc::{vec, vec::Vec};

use crate::nn::{prefix, Linear, Lstm, NamedParams};
use crate::{dim_err, rng, Result, Tensor};

#[derive(Clone)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<ComplexTensor> {
        if re.shape() != im.shape() {
            return Err(dim_err!(
                "real/imaginary shapes differ: {:?} vs {:?}",
                re.shape(),
                im.shape()
            ));
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn zeros_like(&self) -> Result<ComplexTensor> {
        Ok(ComplexTensor {
            re: Tensor::zeros(self.shape())?,
            im: Tensor::zeros(self.shape())?,
        })
    }

    /// Elementwise complex product.
    pub fn mul(&self, o: &ComplexTensor) -> Result<ComplexTensor> {
        let re = self.re.mul(&o.re)?.sub(&self.im.mul(&o.im)?)?;
        let im = self.re.mul(&o.im)?.add(&self.im.mul(&o.re)?)?;
        ComplexTensor::new(re, im)
    }

    pub fn add(&self, o: &ComplexTensor) -> Result<ComplexTensor> {
        ComplexTensor::new(self.re.add(&o.re)?, self.im.add(&o.im)?)
    }

    /// `sqrt(re^2 + im^2 + 1e-12)`, differentiable everywhere.
    pub fn magnitude(&self) -> Result<Tensor> {
        self.re
            .mul(&self.re)?
            .add(&self.im.mul(&self.im)?)?
            .add_scalar(1e-12)?
            .sqrt()
    }

    /// Concatenates along `axis`.
    pub fn concat(parts: &[ComplexTensor], axis: usize) -> Result<ComplexTensor> {
        let res: Vec<Tensor> = parts.iter().map(|p| p.re.clone()).collect();
        let ims: Vec<Tensor> = parts.iter().map(|p| p.im.clone()).collect();
        ComplexTensor::new(Tensor::concat(&res, axis)?, Tensor::concat(&ims, axis)?)
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<ComplexTensor> {
        ComplexTensor::new(self.re.slice(axis, start, len)?, self.im.slice(axis, start, len)?)
    }
}

fn conv_weight(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor> {
    // Each of the two real kernels carries half the variance so the
    // complex output matches the usual Kaiming scale.
    let std = libm::sqrtf(2.0 / fan_in as f32) / libm::sqrtf(2.0);
    let mut r = rng::stream(seed, &[53]);
    let n: usize = shape.iter().product();
    Tensor::param((0..n).map(|_| rng::normal(&mut r) * std).collect(), shape)
}

/// Complex 2-d convolution over `[C, F, T]` pairs.
pub struct ComplexConv2d {
    pub wr: Tensor,
    pub wi: Tensor,
    pub br: Tensor,
    pub bi: Tensor,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ComplexConv2d {
    pub fn init(
        ci: usize,
        co: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        seed: u64,
    ) -> Result<ComplexConv2d> {
        let (kf, kt) = kernel;
        let fan_in = ci * kf * kt;
        Ok(ComplexConv2d {
            wr: conv_weight(&[co, ci, kf, kt], fan_in, seed)?,
            wi: conv_weight(&[co, ci, kf, kt], fan_in, rng::derive(seed, &[1]))?,
            br: Tensor::param(vec![0.0; co], &[co])?,
            bi: Tensor::param(vec![0.0; co], &[co])?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        let co = self.wr.shape()[0];
        let zero = Tensor::zeros(&[co])?;
        let rr = x.re.conv2d(&self.wr, &self.br, self.stride, self.pad)?;
        let ii = x.im.conv2d(&self.wi, &zero, self.stride, self.pad)?;
        let ri = x.re.conv2d(&self.wi, &self.bi, self.stride, self.pad)?;
        let ir = x.im.conv2d(&self.wr, &zero, self.stride, self.pad)?;
        ComplexTensor::new(rr.sub(&ii)?, ri.add(&ir)?)
    }

    pub fn parameters(&self) -> NamedParams {
        vec![
            (String::from("wr"), self.wr.clone()),
            (String::from("wi"), self.wi.clone()),
            (String::from("br"), self.br.clone()),
            (String::from("bi"), self.bi.clone()),
        ]
    }
}

/// Complex transposed 2-d convolution; the high-side output padding is a
/// forward argument because the decoder derives it from the mirrored
/// encoder shape.
pub struct ComplexConvTranspose2d {
    pub wr: Tensor,
    pub wi: Tensor,
    pub br: Tensor,
    pub bi: Tensor,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ComplexConvTranspose2d {
    pub fn init(
        ci: usize,
        co: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        seed: u64,
    ) -> Result<ComplexConvTranspose2d> {
        let (kf, kt) = kernel;
        let fan_in = ci * kf * kt;
        Ok(ComplexConvTranspose2d {
            wr: conv_weight(&[ci, co, kf, kt], fan_in, seed)?,
            wi: conv_weight(&[ci, co, kf, kt], fan_in, rng::derive(seed, &[1]))?,
            br: Tensor::param(vec![0.0; co], &[co])?,
            bi: Tensor::param(vec![0.0; co], &[co])?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &ComplexTensor, out_pad: (usize, usize)) -> Result<ComplexTensor> {
        let co = self.wr.shape()[1];
        let zero = Tensor::zeros(&[co])?;
        let rr = x.re.conv_transpose2d(&self.wr, &self.br, self.stride, self.pad, out_pad)?;
        let ii = x.im.conv_transpose2d(&self.wi, &zero, self.stride, self.pad, out_pad)?;
        let ri = x.re.conv_transpose2d(&self.wi, &self.bi, self.stride, self.pad, out_pad)?;
        let ir = x.im.conv_transpose2d(&self.wr, &zero, self.stride, self.pad, out_pad)?;
        ComplexTensor::new(rr.sub(&ii)?, ri.add(&ir)?)
    }

    pub fn parameters(&self) -> NamedParams {
        vec![
            (String::from("wr"), self.wr.clone()),
            (String::from("wi"), self.wi.clone()),
            (String::from("br"), self.br.clone()),
            (String::from("bi"), self.bi.clone()),
        ]
    }
}

/// Complex batch normalisation over `[C, F, T]` pairs.
///
/// In joint mode the per-channel 2x2 covariance of (re, im) is whitened
/// with a closed-form inverse square root, then an affine map with
/// parameters `gamma_rr, gamma_ri, gamma_ii` (initialised to `1/sqrt(2) I`)
/// and shift `(beta_r, beta_i)` is applied. In split mode real and
/// imaginary parts are standardised independently and `gamma_ri` is
/// unused, which keeps the parameter set identical across both modes.
pub struct ComplexBatchNorm {
    pub gamma_rr: Tensor,
    pub gamma_ri: Tensor,
    pub gamma_ii: Tensor,
    pub beta_r: Tensor,
    pub beta_i: Tensor,
    pub running_mean_r: Tensor,
    pub running_mean_i: Tensor,
    pub running_vrr: Tensor,
    pub running_vri: Tensor,
    pub running_vii: Tensor,
    pub split: bool,
    pub momentum: f32,
    pub eps: f32,
}

impl ComplexBatchNorm {
    pub fn init(channels: usize, split: bool) -> Result<ComplexBatchNorm> {
        let inv_sqrt2 = 1.0 / libm::sqrtf(2.0);
        Ok(ComplexBatchNorm {
            gamma_rr: Tensor::param(vec![inv_sqrt2; channels], &[channels])?,
            gamma_ri: Tensor::param(vec![0.0; channels], &[channels])?,
            gamma_ii: Tensor::param(vec![inv_sqrt2; channels], &[channels])?,
            beta_r: Tensor::param(vec![0.0; channels], &[channels])?,
            beta_i: Tensor::param(vec![0.0; channels], &[channels])?,
            running_mean_r: Tensor::zeros(&[channels])?,
            running_mean_i: Tensor::zeros(&[channels])?,
            running_vrr: Tensor::full(&[channels], 0.5)?,
            running_vri: Tensor::zeros(&[channels])?,
            running_vii: Tensor::full(&[channels], 0.5)?,
            split,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    fn channel_mean(x: &Tensor) -> Result<Tensor> {
        x.mean(Some(1))?.mean(Some(2))
    }

    fn update_running(buf: &Tensor, batch: &Tensor, momentum: f32) -> Result<()> {
        let old = buf.to_vec();
        let new = batch.to_vec();
        let mixed: Vec<f32> = old
            .iter()
            .zip(&new)
            .map(|(o, n)| (1.0 - momentum) * o + momentum * n)
            .collect();
        buf.set_data(&mixed)
    }

    pub fn forward(&self, x: &ComplexTensor, train: bool) -> Result<ComplexTensor> {
        let c = x.shape()[0];
        let cs = [c, 1, 1];
        let (mr, mi, vrr, vri, vii);
        if train {
            mr = Self::channel_mean(&x.re)?;
            mi = Self::channel_mean(&x.im)?;
            let cr = x.re.sub(&mr)?;
            let ci = x.im.sub(&mi)?;
            vrr = Self::channel_mean(&cr.mul(&cr)?)?;
            vri = Self::channel_mean(&cr.mul(&ci)?)?;
            vii = Self::channel_mean(&ci.mul(&ci)?)?;
            Self::update_running(&self.running_mean_r, &mr, self.momentum)?;
            Self::update_running(&self.running_mean_i, &mi, self.momentum)?;
            Self::update_running(&self.running_vrr, &vrr, self.momentum)?;
            Self::update_running(&self.running_vri, &vri, self.momentum)?;
            Self::update_running(&self.running_vii, &vii, self.momentum)?;
        } else {
            mr = self.running_mean_r.reshape(&cs)?;
            mi = self.running_mean_i.reshape(&cs)?;
            vrr = self.running_vrr.reshape(&cs)?;
            vri = self.running_vri.reshape(&cs)?;
            vii = self.running_vii.reshape(&cs)?;
        }
        let cr = x.re.sub(&mr)?;
        let ci = x.im.sub(&mi)?;
        let vrr = vrr.add_scalar(self.eps)?;
        let vii = vii.add_scalar(self.eps)?;

        let (nr, ni);
        if self.split {
            nr = cr.div(&vrr.sqrt()?)?;
            ni = ci.div(&vii.sqrt()?)?;
        } else {
            // Inverse square root of [[vrr, vri], [vri, vii]] in closed
            // form: with s = sqrt(det), t = sqrt(trace + 2s),
            //   W = [[vii + s, -vri], [-vri, vrr + s]] / (s t).
            let det = vrr.mul(&vii)?.sub(&vri.mul(&vri)?)?.clamp(1e-10, f32::MAX)?;
            let s = det.sqrt()?;
            let t = vrr.add(&vii)?.add(&s.mul_scalar(2.0)?)?.sqrt()?;
            let inv = s.mul(&t)?;
            let w_rr = vii.add(&s)?.div(&inv)?;
            let w_ii = vrr.add(&s)?.div(&inv)?;
            let w_ri = vri.neg().div(&inv)?;
            nr = w_rr.mul(&cr)?.add(&w_ri.mul(&ci)?)?;
            ni = w_ri.mul(&cr)?.add(&w_ii.mul(&ci)?)?;
        }

        let g_rr = self.gamma_rr.reshape(&cs)?;
        let g_ri = self.gamma_ri.reshape(&cs)?;
        let g_ii = self.gamma_ii.reshape(&cs)?;
        let b_r = self.beta_r.reshape(&cs)?;
        let b_i = self.beta_i.reshape(&cs)?;
        let (out_r, out_i);
        if self.split {
            out_r = g_rr.mul(&nr)?.add(&b_r)?;
            out_i = g_ii.mul(&ni)?.add(&b_i)?;
        } else {
            out_r = g_rr.mul(&nr)?.add(&g_ri.mul(&ni)?)?.add(&b_r)?;
            out_i = g_ri.mul(&nr)?.add(&g_ii.mul(&ni)?)?.add(&b_i)?;
        }
        ComplexTensor::new(out_r, out_i)
    }

    pub fn parameters(&self) -> NamedParams {
        vec![
            (String::from("gamma_rr"), self.gamma_rr.clone()),
            (String::from("gamma_ri"), self.gamma_ri.clone()),
            (String::from("gamma_ii"), self.gamma_ii.clone()),
            (String::from("beta_r"), self.beta_r.clone()),
            (String::from("beta_i"), self.beta_i.clone()),
        ]
    }

    /// Non-trainable state that still belongs in checkpoints.
    pub fn buffers(&self) -> NamedParams {
        vec![
            (String::from("running_mean_r"), self.running_mean_r.clone()),
            (String::from("running_mean_i"), self.running_mean_i.clone()),
            (String::from("running_vrr"), self.running_vrr.clone()),
            (String::from("running_vri"), self.running_vri.clone()),
            (String::from("running_vii"), self.running_vii.clone()),
        ]
    }
}

/// Complex PReLU: independent slopes for the real and imaginary parts.
pub struct ComplexPrelu {
    pub ar: Tensor,
    pub ai: Tensor,
}

impl ComplexPrelu {
    pub fn init() -> Result<ComplexPrelu> {
        Ok(ComplexPrelu {
            ar: Tensor::param(vec![0.25], &[1])?,
            ai: Tensor::param(vec![0.25], &[1])?,
        })
    }

    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        ComplexTensor::new(x.re.prelu(&self.ar)?, x.im.prelu(&self.ai)?)
    }

    pub fn parameters(&self) -> NamedParams {
        vec![(String::from("ar"), self.ar.clone()), (String::from("ai"), self.ai.clone())]
    }
}

/// Complex linear layer over `[N, In]` pairs.
pub struct ComplexLinear {
    pub lr: Linear,
    pub li: Linear,
}

impl ComplexLinear {
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Result<ComplexLinear> {
        Ok(ComplexLinear {
            lr: Linear::init(in_dim, out_dim, seed)?,
            li: Linear::init(in_dim, out_dim, rng::derive(seed, &[1]))?,
        })
    }

    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        let re = self.lr.forward(&x.re)?.sub(&self.li.forward(&x.im)?)?;
        let im = self.lr.forward(&x.im)?.add(&self.li.forward(&x.re)?)?;
        ComplexTensor::new(re, im)
    }

    pub fn parameters(&self) -> NamedParams {
        let mut p = prefix(self.lr.parameters(), "re");
        p.extend(prefix(self.li.parameters(), "im"));
        p
    }
}

/// Complex LSTM over `[T, In]` pairs: two real LSTMs combined by the
/// complex multiplication rule (four sequence passes per forward).
pub struct ComplexLstm {
    pub lr: Lstm,
    pub li: Lstm,
}

impl ComplexLstm {
    pub fn init(in_dim: usize, hidden: usize, seed: u64) -> Result<ComplexLstm> {
        Ok(ComplexLstm {
            lr: Lstm::init(in_dim, hidden, seed)?,
            li: Lstm::init(in_dim, hidden, rng::derive(seed, &[1]))?,
        })
    }

    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        let rr = self.lr.forward(&x.re)?;
        let ii = self.li.forward(&x.im)?;
        let ri = self.lr.forward(&x.im)?;
        let ir = self.li.forward(&x.re)?;
        ComplexTensor::new(rr.sub(&ii)?, ri.add(&ir)?)
    }

    pub fn parameters(&self) -> NamedParams {
        let mut p = prefix(self.lr.parameters(), "re");
        p.extend(prefix(self.li.parameters(), "im"));
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ct(re: Vec<f32>, im: Vec<f32>, shape: &[usize]) -> ComplexTensor {
        ComplexTensor::new(
            Tensor::from_vec(re, shape).unwrap(),
            Tensor::from_vec(im, shape).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn complex_product_follows_i_squared_rule() {
        // (1 + 2i)(3 + 4i) = -5 + 10i
        let a = ct(vec![1.0], vec![2.0], &[1]);
        let b = ct(vec![3.0], vec![4.0], &[1]);
        let p = a.mul(&b).unwrap();
        assert_eq!(p.re.item().unwrap(), -5.0);
        assert_eq!(p.im.item().unwrap(), 10.0);
    }

    #[test]
    fn conv_on_purely_real_kernel_acts_per_part() {
        // With wi == 0 the complex conv degenerates to the same real conv
        // applied to each part.
        let mut layer = ComplexConv2d::init(1, 1, (1, 1), (1, 1), (0, 0), 3).unwrap();
        layer.wr.set_data(&[2.0]).unwrap();
        layer.wi.set_data(&[0.0]).unwrap();
        let x = ct(vec![1.0, 2.0], vec![3.0, 4.0], &[1, 1, 2]);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.re.to_vec(), vec![2.0, 4.0]);
        assert_eq!(y.im.to_vec(), vec![6.0, 8.0]);
    }

    #[test]
    fn conv_on_purely_imaginary_kernel_rotates_by_ninety_degrees() {
        // Multiplying by i maps (re, im) to (-im, re).
        let mut layer = ComplexConv2d::init(1, 1, (1, 1), (1, 1), (0, 0), 3).unwrap();
        layer.wr.set_data(&[0.0]).unwrap();
        layer.wi.set_data(&[1.0]).unwrap();
        let x = ct(vec![1.0, 2.0], vec![3.0, 4.0], &[1, 1, 2]);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.re.to_vec(), vec![-3.0, -4.0]);
        assert_eq!(y.im.to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn joint_batchnorm_whitens_the_pair() {
        // A correlated (re, im) cloud must come out with identity
        // covariance before the affine map; with default gamma the output
        // covariance is gamma^2 = 0.5 per part and zero cross-term.
        let n = 400;
        let mut r = crate::rng::stream(9, &[0]);
        let mut re = Vec::with_capacity(n);
        let mut im = Vec::with_capacity(n);
        for _ in 0..n {
            let a = crate::rng::normal(&mut r);
            let b = crate::rng::normal(&mut r);
            re.push(2.0 * a + 1.0);
            im.push(a + 0.5 * b - 2.0);
        }
        let x = ct(re, im, &[1, 4, 100]);
        let bn = ComplexBatchNorm::init(1, false).unwrap();
        let y = bn.forward(&x, true).unwrap();
        let yr = y.re.to_vec();
        let yi = y.im.to_vec();
        let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        let (mr, mi) = (mean(&yr), mean(&yi));
        let mut c_rr = 0.0;
        let mut c_ri = 0.0;
        let mut c_ii = 0.0;
        for i in 0..n {
            c_rr += (yr[i] as f64 - mr) * (yr[i] as f64 - mr);
            c_ri += (yr[i] as f64 - mr) * (yi[i] as f64 - mi);
            c_ii += (yi[i] as f64 - mi) * (yi[i] as f64 - mi);
        }
        c_rr /= n as f64;
        c_ri /= n as f64;
        c_ii /= n as f64;
        assert!(mr.abs() < 1e-5 && mi.abs() < 1e-5, "means {mr} {mi}");
        assert!((c_rr - 0.5).abs() < 1e-3, "c_rr {c_rr}");
        assert!((c_ii - 0.5).abs() < 1e-3, "c_ii {c_ii}");
        assert!(c_ri.abs() < 1e-3, "c_ri {c_ri}");
    }

    #[test]
    fn split_batchnorm_leaves_correlation_in_place() {
        let n = 400;
        let mut r = crate::rng::stream(10, &[0]);
        let mut re = Vec::with_capacity(n);
        let mut im = Vec::with_capacity(n);
        for _ in 0..n {
            let a = crate::rng::normal(&mut r);
            re.push(a);
            im.push(a); // perfectly correlated
        }
        let x = ct(re, im, &[1, 4, 100]);
        let bn = ComplexBatchNorm::init(1, true).unwrap();
        let y = bn.forward(&x, true).unwrap();
        let yr = y.re.to_vec();
        let yi = y.im.to_vec();
        let mut c_ri = 0.0f64;
        for i in 0..n {
            c_ri += yr[i] as f64 * yi[i] as f64;
        }
        c_ri /= n as f64;
        // Still fully correlated after per-part standardisation.
        assert!((c_ri - 0.5).abs() < 1e-3, "c_ri {c_ri}");
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let bn = ComplexBatchNorm::init(1, false).unwrap();
        // Three points keep the covariance full-rank (two are always
        // collinear after centering, which makes the whitening singular).
        let x = ct(vec![5.0, 7.0, 3.0], vec![-3.0, -1.0, 4.0], &[1, 1, 3]);
        for _ in 0..200 {
            bn.forward(&x, true).unwrap();
        }
        let y1 = bn.forward(&x, false).unwrap();
        // Running stats have converged to batch stats, so eval matches train.
        let y2 = bn.forward(&x, true).unwrap();
        let d: f32 = y1
            .re
            .to_vec()
            .iter()
            .zip(y2.re.to_vec())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(d < 1e-3, "eval/train divergence {d}");
    }
}
