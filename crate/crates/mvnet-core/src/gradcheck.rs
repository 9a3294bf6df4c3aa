//! Finite-difference verification of the autodiff engine.
//!
//! [`finite_diff_check`] compares analytic gradients against central
//! differences for an arbitrary scalar-valued graph builder. The standard
//! suite behind the `gradcheck` CLI command lives in [`run_suite`]; it is
//! assembled from small instances of every layer family so a regression in
//! any kernel's backward pass turns a row red.

use alloc::string::String;
use alloc::{vec, vec::Vec};

use crate::{rng, Result, Tensor};

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    /// Number of coordinates probed by finite differences.
    pub points: usize,
    /// Worst |numeric - analytic| normalized by its per-coordinate
    /// tolerance; anything below 1.0 passes.
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Central-difference step.
    pub eps: f32,
    /// Relative part of the per-coordinate tolerance. The absolute part
    /// scales with the probed function magnitude, since f32 forward
    /// rounding passes through the divided difference amplified by
    /// `1 / (2 eps)`.
    pub tol: f64,
    /// Cap on probed coordinates per tensor; extra coordinates are
    /// subsampled deterministically from `seed`.
    pub max_coords: usize,
    pub seed: u64,
    /// Multiplier on the assumed f32 forward-evaluation jitter. A lone op
    /// rounds once (~2.5 covers it); a deep graph feeding a steep
    /// log-shaped loss can amplify rounding noise a hundredfold, and the
    /// divided difference inherits all of it scaled by `1 / (2 eps)`.
    pub fnoise: f64,
    /// Deliberately perturbs analytic gradients before comparison. Used
    /// as a negative control: a healthy checker must then report failure.
    pub corrupt: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-3,
            tol: 1e-2,
            max_coords: 48,
            seed: 0x5eed,
            fnoise: 2.5,
            corrupt: false,
        }
    }
}

/// Checks `d f / d params` for a scalar-valued builder `f`.
///
/// `f` is re-invoked for every probe with the parameter data mutated in
/// place, so it must read parameter values afresh each call.
pub fn finite_diff_check(
    name: &str,
    params: &[Tensor],
    f: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    opts: CheckOptions,
) -> Result<CheckReport> {
    for p in params {
        p.zero_grad();
    }
    let out = f(params)?;
    out.backward()?;
    let mut max_rel = 0.0f64;
    let mut points = 0usize;
    for (pi, p) in params.iter().enumerate() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let base = p.to_vec();
        let n = base.len();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut r = rng::stream(opts.seed, &[pi as u64]);
            (0..opts.max_coords)
                .map(|_| (rand::RngCore::next_u64(&mut r) % n as u64) as usize)
                .collect()
        };
        for i in coords {
            let mut a = analytic[i] as f64;
            if opts.corrupt {
                a = a * 1.5 + 0.05;
            }
            // A coordinate may fail not because the backward pass is wrong
            // but because the central difference straddled an activation
            // kink somewhere downstream, or picked up curvature error. Both
            // artifacts shrink with the step, while a genuine gradient bug
            // stays put, so failing coordinates retry at smaller steps and
            // keep their best score.
            let mut best = f64::INFINITY;
            for shrink in [1.0f32, 0.25, 0.0625, 0.015625] {
                let eps = opts.eps * shrink;
                let mut probe = base.clone();
                probe[i] = base[i] + eps;
                p.set_data(&probe)?;
                let fp = f(params)?.item()? as f64;
                probe[i] = base[i] - eps;
                p.set_data(&probe)?;
                let fm = f(params)?.item()? as f64;
                let numeric = (fp - fm) / (2.0 * eps as f64);
                // Absolute tolerance: the f32 rounding noise the
                // divided difference can carry at this function magnitude.
                let fmag = fp.abs().max(fm.abs());
                let atol = 1e-4 + fmag * (f32::EPSILON as f64) * opts.fnoise / eps as f64;
                let allow = atol + opts.tol * numeric.abs().max(a.abs());
                best = best.min((numeric - a).abs() / allow);
                if best < 1.0 {
                    break;
                }
            }
            p.set_data(&base)?;
            max_rel = max_rel.max(best);
            points += 1;
        }
    }
    Ok(CheckReport {
        name: String::from(name),
        points,
        max_rel_err: max_rel,
        tol: 1.0,
        pass: max_rel < 1.0,
    })
}

fn rand_tensor(shape: &[usize], seed: u64, scale: f32, grad: bool) -> Tensor {
    let mut r = rng::stream(seed, &[91]);
    let data: Vec<f32> = (0..shape.iter().product::<usize>())
        .map(|_| rng::normal(&mut r) * scale)
        .collect();
    if grad {
        Tensor::param(data, shape).expect("shape is valid")
    } else {
        Tensor::from_vec(data, shape).expect("shape is valid")
    }
}

/// The standard gradient suite: one row per operation family. All
/// tensor draws and layer initialisations derive from `seed`.
pub fn run_suite(seed: u64, corrupt: bool) -> Result<Vec<CheckReport>> {
    let opts = CheckOptions { corrupt, seed, ..Default::default() };
    let ds = |k: u64| rng::derive(seed, &[k]);
    let mut rows = Vec::new();

    // Elementwise arithmetic with broadcasting.
    {
        let a = rand_tensor(&[3, 1, 4], ds(1), 1.0, true);
        let b = rand_tensor(&[2, 4], ds(2), 1.0, true);
        rows.push(finite_diff_check(
            "add_sub_broadcast",
            &[a, b],
            &|p| p[0].add(&p[1])?.sub(&p[0].mul_scalar(0.5)?)?.sum(None),
            opts,
        )?);
    }
    {
        let a = rand_tensor(&[4, 3], ds(3), 1.0, true);
        let b = rand_tensor(&[3], ds(4), 1.0, true).add_scalar(4.0)?;
        let bp = Tensor::param(b.to_vec(), &[3])?;
        rows.push(finite_diff_check(
            "mul_div_broadcast",
            &[a, bp],
            &|p| p[0].mul(&p[0])?.div(&p[1])?.mean(None),
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[2, 5], ds(5), 1.0, true);
        rows.push(finite_diff_check(
            "activations_chain",
            &[x],
            &|p| {
                let t = p[0].tanh().sigmoid();
                let s = t.add_scalar(1.5)?.sqrt()?.log10()?;
                s.sum(None)
            },
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[3, 4], ds(6), 1.0, true);
        let alpha = Tensor::param(vec![0.25], &[1])?;
        rows.push(finite_diff_check(
            "prelu_clamp",
            &[x, alpha],
            &|p| p[0].prelu(&p[1])?.clamp(-0.8, 0.9)?.sum(None),
            opts,
        )?);
    }
    {
        let a = rand_tensor(&[3, 4], ds(7), 1.0, true);
        let b = rand_tensor(&[4, 2], ds(8), 1.0, true);
        rows.push(finite_diff_check(
            "matmul",
            &[a, b],
            &|p| p[0].matmul(&p[1])?.mul(&p[0].matmul(&p[1])?)?.sum(None),
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[2, 6], ds(9), 2.0, true);
        rows.push(finite_diff_check(
            "softmax",
            &[x],
            &|p| {
                let y = p[0].softmax(1)?;
                let w = rand_tensor(&[2, 6], ds(10), 1.0, false);
                y.mul(&w)?.sum(None)
            },
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[3, 5], ds(11), 1.0, true);
        rows.push(finite_diff_check(
            "mean_std_reduction",
            &[x],
            &|p| {
                let m = p[0].mean(Some(1))?;
                let s = p[0].std(1)?;
                m.add(&s)?.sum(None)
            },
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[2, 3, 4], ds(12), 1.0, true);
        rows.push(finite_diff_check(
            "reshape_permute_slice_concat",
            &[x],
            &|p| {
                let a = p[0].permute(&[2, 0, 1])?;
                let b = a.slice(0, 1, 2)?;
                let c = Tensor::concat(&[b.clone(), b], 0)?;
                c.reshape(&[4, 6])?.sum(None)
            },
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[2, 12], ds(13), 1.0, true);
        let w = rand_tensor(&[3, 2, 3], ds(14), 0.5, true);
        let b = rand_tensor(&[3], ds(15), 0.1, true);
        rows.push(finite_diff_check(
            "conv1d_dilated",
            &[x, w, b],
            &|p| p[0].conv1d(&p[1], &p[2], 1, 2)?.mul(&p[0].conv1d(&p[1], &p[2], 1, 2)?)?.sum(None),
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[2, 9, 6], ds(16), 1.0, true);
        let w = rand_tensor(&[3, 2, 5, 2], ds(17), 0.4, true);
        let b = rand_tensor(&[3], ds(18), 0.1, true);
        rows.push(finite_diff_check(
            "conv2d_strided_padded",
            &[x, w, b],
            &|p| p[0].conv2d(&p[1], &p[2], (2, 1), (2, 0))?.tanh().sum(None),
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[3, 5, 6], ds(19), 1.0, true);
        let w = rand_tensor(&[3, 2, 5, 2], ds(20), 0.4, true);
        let b = rand_tensor(&[2], ds(21), 0.1, true);
        rows.push(finite_diff_check(
            "conv_transpose2d",
            &[x, w, b],
            &|p| {
                p[0].conv_transpose2d(&p[1], &p[2], (2, 1), (2, 0), (1, 0))?
                    .tanh()
                    .sum(None)
            },
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[40], ds(22), 0.7, true);
        let win = crate::fft::hann_periodic(8);
        rows.push(finite_diff_check(
            "stft_mask_istft",
            &[x],
            &|p| {
                let spec = p[0].stft(&win, 2, 16)?;
                let mask = spec.tanh();
                mask.mul(&spec)?.istft(&win, 2, 16)?.sum(None)
            },
            opts,
        )?);
    }
    {
        let a = rand_tensor(&[12], ds(23), 1.0, true);
        let b = rand_tensor(&[12], ds(24), 1.0, true);
        rows.push(finite_diff_check(
            "cosine_similarity",
            &[a, b],
            &|p| p[0].cosine_similarity(&p[1])?.mul_scalar(3.0),
            opts,
        )?);
    }

    rows.extend(layer_suite(opts)?);
    Ok(rows)
}

/// Gradient rows for the composed layers (complex conv/BN/LSTM, attention,
/// embedder, losses, and a micro end-to-end model).
fn layer_suite(opts: CheckOptions) -> Result<Vec<CheckReport>> {
    let ds = |k: u64| rng::derive(opts.seed, &[k]);
    let mut rows = Vec::new();
    {
        let re = rand_tensor(&[2, 5, 4], ds(30), 1.0, true);
        let im = rand_tensor(&[2, 5, 4], ds(31), 1.0, true);
        let layer = crate::complex::ComplexConv2d::init(2, 3, (3, 2), (1, 1), (1, 0), ds(32))?;
        let mut params = vec![re, im];
        params.extend(layer.parameters().into_iter().map(|(_, t)| t));
        rows.push(finite_diff_check(
            "complex_conv2d",
            &params,
            &|p| {
                let x = crate::complex::ComplexTensor::new(p[0].clone(), p[1].clone())?;
                let y = layer.forward(&x)?;
                y.re.mul(&y.re)?.add(&y.im.mul(&y.im)?)?.sum(None)
            },
            opts,
        )?);
    }
    {
        let re = rand_tensor(&[3, 4, 5], ds(33), 1.5, true);
        let im = rand_tensor(&[3, 4, 5], ds(34), 1.5, true);
        let bn = crate::complex::ComplexBatchNorm::init(3, false)?;
        let mut params = vec![re, im];
        params.extend(bn.parameters().into_iter().map(|(_, t)| t));
        rows.push(finite_diff_check(
            "complex_batchnorm",
            &params,
            &|p| {
                let x = crate::complex::ComplexTensor::new(p[0].clone(), p[1].clone())?;
                let y = bn.forward(&x, true)?;
                let w = rand_tensor(&[3, 4, 5], ds(35), 1.0, false);
                y.re.mul(&w)?.add(&y.im.mul(&w)?)?.sum(None)
            },
            opts,
        )?);
    }
    {
        let re = rand_tensor(&[6, 3], ds(36), 1.0, true);
        let im = rand_tensor(&[6, 3], ds(37), 1.0, true);
        let lstm = crate::complex::ComplexLstm::init(3, 4, ds(38))?;
        let mut params = vec![re, im];
        params.extend(lstm.parameters().into_iter().map(|(_, t)| t));
        rows.push(finite_diff_check(
            "complex_lstm",
            &params,
            &|p| {
                let x = crate::complex::ComplexTensor::new(p[0].clone(), p[1].clone())?;
                let y = lstm.forward(&x)?;
                y.re.sum(None)?.add(&y.im.mul(&y.im)?.sum(None)?)
            },
            opts,
        )?);
    }
    {
        let x = rand_tensor(&[2, 3, 4], ds(39), 1.0, true);
        let cca = crate::attention::CrissCross::init(2, 2, true, ds(40))?;
        let mut params = vec![x];
        params.extend(cca.parameters().into_iter().map(|(_, t)| t));
        rows.push(finite_diff_check(
            "criss_cross_attention",
            &params,
            &|p| {
                let (y, _) = cca.forward(&p[0], false)?;
                y.mul(&y)?.sum(None)
            },
            opts,
        )?);
    }
    {
        let cfg = crate::vocal::TdnnConfig {
            in_bins: 9,
            channels: [8, 8, 8, 8, 6],
            embed_dim: 5,
        };
        let tdnn = crate::vocal::VocalEmbedder::init(&cfg, ds(41))?;
        let x = rand_tensor(&[9, 18], ds(42), 1.0, true);
        let mut params = vec![x];
        params.extend(tdnn.parameters().into_iter().map(|(_, t)| t));
        rows.push(finite_diff_check(
            "tdnn_embedder",
            &params,
            &|p| {
                let e = tdnn.embed_features(&p[0])?;
                e.mul(&e)?.sum(None)
            },
            opts,
        )?);
    }
    {
        let est = rand_tensor(&[64], ds(43), 0.8, true);
        let mut reference = rand_tensor(&[64], ds(44), 0.8, false).to_vec();
        // Keep the reference well away from silence.
        reference[0] += 1.0;
        let reference = Tensor::from_vec(reference, &[64])?;
        let cfg = crate::loss::LossConfig::default();
        rows.push(finite_diff_check(
            "si_snr_loss",
            &[est],
            &|p| crate::loss::si_snr_loss(&p[0], &reference, &cfg),
            opts,
        )?);
    }
    {
        let a = rand_tensor(&[10], ds(45), 1.0, true);
        let b = rand_tensor(&[10], ds(46), 1.0, false);
        let cfg = crate::loss::LossConfig::default();
        rows.push(finite_diff_check(
            "similarity_loss",
            &[a],
            &|p| crate::loss::similarity_loss(&p[0], &b, &cfg),
            opts,
        )?);
    }
    {
        // End-to-end micro model: tiny geometry, loss on the enhanced wave.
        let cfg = crate::model::ModelConfig {
            win_len: 8,
            hop: 2,
            fft_len: 16,
            channels: vec![2, 3],
            lstm_hidden: 4,
            attention_loops: 1,
            embed_dim: 4,
            tdnn_channels: [4, 4, 4, 4, 4],
            ..crate::model::ModelConfig::default()
        };
        let model = crate::model::MvNet::init(&cfg, ds(47))?;
        let mut r = rng::stream(ds(48), &[0]);
        let noisy: Vec<f32> = (0..64).map(|_| rng::normal(&mut r) * 0.3).collect();
        let clean: Vec<f32> = (0..64).map(|_| rng::normal(&mut r) * 0.3).collect();
        let noisy = Tensor::from_vec(noisy, &[64])?;
        let clean = Tensor::from_vec(clean, &[64])?;
        let params: Vec<Tensor> = model.parameters().into_iter().map(|(_, t)| t).collect();
        let loss_cfg = crate::loss::LossConfig::default();
        // The forward pass is ~100k f32 ops deep, so the central-difference
        // numerator sits on a noisier floor than the single-op rows; the
        // similarity term's log also steepens as the estimate drifts toward
        // the reference between probe points. Widen the assumed forward
        // noise accordingly. Scale and sign errors still stand out clearly.
        let sub = CheckOptions { max_coords: 2, fnoise: 150.0, ..opts };
        rows.push(finite_diff_check(
            "micro_model_end_to_end",
            &params,
            &|_| {
                let out = model.enhance_training(&noisy, None, true)?;
                Ok(crate::loss::joint_loss(&out.enhanced, &clean, &loss_cfg)?.total)
            },
            sub,
        )?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_mode_fails_a_simple_case() {
        let a = rand_tensor(&[4], 100, 1.0, true);
        let ok = finite_diff_check(
            "control",
            core::slice::from_ref(&a),
            &|p| p[0].mul(&p[0])?.sum(None),
            CheckOptions::default(),
        )
        .unwrap();
        assert!(ok.pass);
        let bad = finite_diff_check(
            "control_corrupt",
            &[a],
            &|p| p[0].mul(&p[0])?.sum(None),
            CheckOptions { corrupt: true, ..Default::default() },
        )
        .unwrap();
        assert!(!bad.pass, "corrupted gradients must be caught");
    }
}
