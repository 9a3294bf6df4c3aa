//! Real-valued building blocks: linear, 1-d conv, PReLU, LSTM.
//!
//! Modules own their parameters as [`Tensor`] leaves and expose them as
//! `(name, tensor)` pairs; containers prefix the names with a path.

use alloc::format;
use alloc::string::String;
use alloc::{vec, vec::Vec};

use crate::{rng, Result, Tensor};

pub type NamedParams = Vec<(String, Tensor)>;

pub(crate) fn prefix(params: NamedParams, p: &str) -> NamedParams {
    params
        .into_iter()
        .map(|(n, t)| (format!("{p}.{n}"), t))
        .collect()
}

fn xavier_uniform(fan_in: usize, fan_out: usize, n: usize, seed: u64) -> Vec<f32> {
    let limit = libm::sqrtf(6.0 / (fan_in + fan_out) as f32);
    let mut r = rng::stream(seed, &[17]);
    (0..n).map(|_| rng::uniform(&mut r, -limit, limit)).collect()
}

fn kaiming_normal(fan_in: usize, n: usize, seed: u64) -> Vec<f32> {
    let std = libm::sqrtf(2.0 / fan_in as f32);
    let mut r = rng::stream(seed, &[29]);
    (0..n).map(|_| rng::normal(&mut r) * std).collect()
}

/// Fully connected layer, `x [N, In] -> x W + b [N, Out]`.
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Result<Linear> {
        let w = Tensor::param(
            xavier_uniform(in_dim, out_dim, in_dim * out_dim, seed),
            &[in_dim, out_dim],
        )?;
        let b = Tensor::param(vec![0.0; out_dim], &[out_dim])?;
        Ok(Linear { w, b })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add(&self.b)
    }

    pub fn parameters(&self) -> NamedParams {
        vec![(String::from("w"), self.w.clone()), (String::from("b"), self.b.clone())]
    }
}

/// Per-layer PReLU with a single learned slope, initialised to 0.25.
pub struct Prelu {
    pub alpha: Tensor,
}

impl Prelu {
    pub fn init() -> Result<Prelu> {
        Ok(Prelu { alpha: Tensor::param(vec![0.25], &[1])? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.prelu(&self.alpha)
    }

    pub fn parameters(&self) -> NamedParams {
        vec![(String::from("alpha"), self.alpha.clone())]
    }
}

/// Valid (unpadded) 1-d convolution over `[Ci, T]` with dilation.
pub struct Conv1dUnit {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv1dUnit {
    pub fn init(ci: usize, co: usize, k: usize, dilation: usize, seed: u64) -> Result<Conv1dUnit> {
        let w = Tensor::param(kaiming_normal(ci * k, co * ci * k, seed), &[co, ci, k])?;
        let b = Tensor::param(vec![0.0; co], &[co])?;
        Ok(Conv1dUnit { w, b, stride: 1, dilation })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv1d(&self.w, &self.b, self.stride, self.dilation)
    }

    /// Frames consumed by the receptive field beyond the first output.
    pub fn context(&self) -> usize {
        self.dilation * (self.w.shape()[2] - 1)
    }

    pub fn parameters(&self) -> NamedParams {
        vec![(String::from("w"), self.w.clone()), (String::from("b"), self.b.clone())]
    }
}

/// Single-direction LSTM over `[T, In]`, returning all hidden states
/// `[T, H]`. Gate order in the packed weights is input, forget, cell,
/// output; the forget gate bias starts at 1.
pub struct Lstm {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
    pub hidden: usize,
}

impl Lstm {
    pub fn init(in_dim: usize, hidden: usize, seed: u64) -> Result<Lstm> {
        let wx = Tensor::param(
            xavier_uniform(in_dim, 4 * hidden, in_dim * 4 * hidden, seed),
            &[in_dim, 4 * hidden],
        )?;
        let wh = Tensor::param(
            xavier_uniform(hidden, 4 * hidden, hidden * 4 * hidden, rng::derive(seed, &[1])),
            &[hidden, 4 * hidden],
        )?;
        let mut bias = vec![0.0f32; 4 * hidden];
        for v in bias[hidden..2 * hidden].iter_mut() {
            *v = 1.0;
        }
        let b = Tensor::param(bias, &[4 * hidden])?;
        Ok(Lstm { wx, wh, b, hidden })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t_len = x.shape()[0];
        let h_dim = self.hidden;
        // One big input projection for all steps, then the recurrence.
        let xw = x.matmul(&self.wx)?;
        let mut h = Tensor::zeros(&[1, h_dim])?;
        let mut c = Tensor::zeros(&[1, h_dim])?;
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let z = xw
                .slice(0, t, 1)?
                .add(&h.matmul(&self.wh)?)?
                .add(&self.b)?;
            let i = z.slice(1, 0, h_dim)?.sigmoid();
            let f = z.slice(1, h_dim, h_dim)?.sigmoid();
            let g = z.slice(1, 2 * h_dim, h_dim)?.tanh();
            let o = z.slice(1, 3 * h_dim, h_dim)?.sigmoid();
            c = f.mul(&c)?.add(&i.mul(&g)?)?;
            h = o.mul(&c.tanh())?;
            outs.push(h.clone());
        }
        Tensor::concat(&outs, 0)
    }

    pub fn parameters(&self) -> NamedParams {
        vec![
            (String::from("wx"), self.wx.clone()),
            (String::from("wh"), self.wh.clone()),
            (String::from("b"), self.b.clone()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, CheckOptions};

    #[test]
    fn linear_shapes_and_bias() {
        let l = Linear::init(3, 2, 7).unwrap();
        l.b.set_data(&[1.0, -1.0]).unwrap();
        let x = Tensor::zeros(&[4, 3]).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        assert_eq!(y.to_vec()[..2], [1.0, -1.0]);
    }

    #[test]
    fn lstm_output_covers_every_frame() {
        let l = Lstm::init(3, 5, 11).unwrap();
        let x = Tensor::from_vec((0..18).map(|v| v as f32 * 0.1).collect(), &[6, 3]).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[6, 5]);
        // States are bounded by the tanh output squashing.
        assert!(y.to_vec().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let l = Lstm::init(2, 3, 1).unwrap();
        let b = l.b.to_vec();
        assert_eq!(&b[3..6], &[1.0, 1.0, 1.0]);
        assert_eq!(&b[0..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn lstm_grads_match_finite_differences() {
        let l = Lstm::init(2, 3, 5).unwrap();
        let x = Tensor::param(
            (0..8).map(|v| libm::sinf(v as f32)).collect(),
            &[4, 2],
        )
        .unwrap();
        let mut params = vec![x];
        params.extend(l.parameters().into_iter().map(|(_, t)| t));
        let r = finite_diff_check(
            "lstm",
            &params,
            &|p| {
                let y = l.forward(&p[0])?;
                y.mul(&y)?.sum(None)
            },
            CheckOptions::default(),
        )
        .unwrap();
        assert!(r.pass, "max rel err {}", r.max_rel_err);
    }
}
