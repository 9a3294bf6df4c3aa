//! Training objectives: scale-invariant SNR and the log-cosine similarity
//! term, combined into the joint loss. Both terms compare the enhanced
//! waveform against the clean one; the similarity term rewards matching
//! the waveform's direction while SI-SNR penalises residual energy.
//!
//! Numerical pins worth knowing about:
//!
//! * the SNR power ratio is clamped to `+-si_snr_clamp_db` (default
//!   +-50 dB) *before* the logarithm, so a perfect or silent estimate
//!   saturates instead of producing inf/NaN, and the clamp kills the
//!   gradient there;
//! * the similarity term computes `(1 - cos)` first and adds `delta`
//!   after. Folding them the other way rounds `1 + 1e-8` to `1.0` in f32
//!   and the log blows up exactly at the optimum.

use crate::{dim_err, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the similarity term.
    pub alpha: f32,
    /// Floor inside the similarity logarithm.
    pub delta: f32,
    /// Remove per-utterance means before the SNR projection.
    pub zero_mean: bool,
    /// Saturation of the SNR term; the power ratio is clamped to
    /// `+-si_snr_clamp_db` before the logarithm.
    pub si_snr_clamp_db: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 100.0, delta: 1e-8, zero_mean: true, si_snr_clamp_db: 50.0 }
    }
}

/// Differentiable scale-invariant SNR in dB (higher is better).
pub fn si_snr(est: &Tensor, reference: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    if est.shape() != reference.shape() || est.rank() != 1 {
        return Err(dim_err!(
            "si_snr expects matching rank-1 waveforms, got {:?} vs {:?}",
            est.shape(),
            reference.shape()
        ));
    }
    let (e, r) = if cfg.zero_mean {
        (
            est.sub(&est.mean(None)?)?,
            reference.sub(&reference.mean(None)?)?,
        )
    } else {
        (est.clone(), reference.clone())
    };
    let dot = e.mul(&r)?.sum(None)?;
    let energy = r.mul(&r)?.sum(None)?;
    let scale = dot.div(&energy.add_scalar(1e-12)?)?;
    let target = r.mul(&scale)?;
    let noise = e.sub(&target)?;
    let num = target.mul(&target)?.sum(None)?;
    let den = noise.mul(&noise)?.sum(None)?;
    let cap = libm::powf(10.0, cfg.si_snr_clamp_db / 10.0);
    let ratio = num.div(&den.add_scalar(1e-12)?)?.clamp(1.0 / cap, cap)?;
    ratio.log10()?.mul_scalar(10.0)
}

/// Negative SI-SNR, minimised by training.
pub fn si_snr_loss(est: &Tensor, reference: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    Ok(si_snr(est, reference, cfg)?.neg())
}

/// `alpha * log10((1 - cos) + delta)` over two equal-size tensors.
/// Minimised when they point the same way; `-alpha * 8` at exact
/// alignment with the default configuration.
pub fn similarity_loss(est: &Tensor, reference: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let cos = est.cosine_similarity(reference)?;
    let gap = Tensor::scalar(1.0).sub(&cos)?;
    gap.add_scalar(cfg.delta)?.log10()?.mul_scalar(cfg.alpha)
}

/// Joint loss with the component values broken out for logging.
pub struct JointLoss {
    /// `-si_snr + similarity`, differentiable scalar.
    pub total: Tensor,
    pub si_snr_db: f32,
    pub similarity: f32,
}

/// Combines the SNR and similarity objectives, both measured between the
/// enhanced and clean waveforms.
pub fn joint_loss(enhanced: &Tensor, clean: &Tensor, cfg: &LossConfig) -> Result<JointLoss> {
    let snr = si_snr(enhanced, clean, cfg)?;
    let sim = similarity_loss(enhanced, clean, cfg)?;
    let total = snr.neg().add(&sim)?;
    Ok(JointLoss {
        total,
        si_snr_db: snr.item()?,
        similarity: sim.item()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn perfect_estimate_saturates_at_fifty_db() {
        let r = Tensor::from_vec(vec![0.3, -0.2, 0.5, 0.1, -0.4], &[5]).unwrap();
        let v = si_snr(&r, &r, &cfg()).unwrap().item().unwrap();
        assert!((v - 50.0).abs() < 1e-4, "got {v}");
    }

    #[test]
    fn orthogonal_noise_at_ten_times_power_gives_minus_ten_db() {
        // Both vectors are zero-mean; the noise is orthogonal to the
        // reference, so the projection leaves it untouched.
        let r = [1.0f32, -1.0, 1.0, -1.0];
        let s = libm::sqrtf(10.0);
        let e: Vec<f32> = [1.0f32, 1.0, -1.0, -1.0]
            .iter()
            .zip(&r)
            .map(|(n, c)| c + s * n)
            .collect();
        let rt = Tensor::from_vec(r.to_vec(), &[4]).unwrap();
        let et = Tensor::from_vec(e, &[4]).unwrap();
        let v = si_snr(&et, &rt, &cfg()).unwrap().item().unwrap();
        assert!((v + 10.0).abs() < 1e-3, "got {v}");
        let l = si_snr_loss(&et, &rt, &cfg()).unwrap().item().unwrap();
        assert!((l - 10.0).abs() < 1e-3);
    }

    #[test]
    fn snr_loss_gradient_is_finite_and_nonzero() {
        let r = Tensor::from_vec(vec![0.5, -0.3, 0.2, 0.7, -0.6, 0.1], &[6]).unwrap();
        let e = Tensor::param(vec![0.4, -0.1, 0.3, 0.5, -0.2, 0.2], &[6]).unwrap();
        si_snr_loss(&e, &r, &cfg()).unwrap().backward().unwrap();
        let g = e.grad().unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(g.iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn identical_embeddings_hit_minus_eight_hundred() {
        let a = Tensor::from_vec(vec![0.3, -0.7, 0.2, 0.9, -0.1, 0.4], &[1, 6]).unwrap();
        let v = similarity_loss(&a, &a, &cfg()).unwrap().item().unwrap();
        assert!((v + 800.0).abs() < 1e-3, "got {v}");
    }

    #[test]
    fn orthogonal_embeddings_sit_at_zero() {
        let a = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0], &[1, 4]).unwrap();
        let b = Tensor::from_vec(vec![0.0, 1.0, 0.0, 1.0], &[1, 4]).unwrap();
        let v = similarity_loss(&a, &b, &cfg()).unwrap().item().unwrap();
        assert!(v.abs() < 1e-6, "got {v}");
    }

    #[test]
    fn opposite_embeddings_sit_near_thirty() {
        let a = Tensor::from_vec(vec![0.3, -0.7, 0.2, 0.9], &[1, 4]).unwrap();
        let b = a.mul_scalar(-1.0).unwrap().detach();
        let v = similarity_loss(&a, &b, &cfg()).unwrap().item().unwrap();
        assert!((v - 30.103).abs() < 1e-3, "got {v}");
    }

    #[test]
    fn similarity_gradient_survives_alignment() {
        // At the optimum the clamp inside the cosine keeps things finite.
        let a = Tensor::param(vec![0.3, -0.7, 0.2, 0.9], &[1, 4]).unwrap();
        let b = Tensor::from_vec(vec![0.3, -0.7, 0.2, 0.9], &[1, 4]).unwrap();
        similarity_loss(&a, &b, &cfg()).unwrap().backward().unwrap();
        assert!(a.grad().unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn joint_loss_bottoms_out_at_minus_eight_fifty() {
        let wave: Vec<f32> = (0..80).map(|n| libm::sinf(0.21 * n as f32) * 0.5).collect();
        let w = Tensor::from_vec(wave, &[80]).unwrap();
        let j = joint_loss(&w, &w, &cfg()).unwrap();
        assert!((j.total.item().unwrap() + 850.0).abs() < 0.01);
        assert!((j.si_snr_db - 50.0).abs() < 1e-3);
        assert!((j.similarity + 800.0).abs() < 1e-2);
    }

    #[test]
    fn joint_loss_is_differentiable_end_to_end() {
        let reference: Vec<f32> = (0..64).map(|n| libm::sinf(0.3 * n as f32) * 0.4).collect();
        let est: Vec<f32> = reference.iter().map(|v| v * 0.7 + 0.05).collect();
        let r = Tensor::from_vec(reference, &[64]).unwrap();
        let e = Tensor::param(est, &[64]).unwrap();
        let j = joint_loss(&e, &r, &cfg()).unwrap();
        j.total.backward().unwrap();
        let g = e.grad().unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(g.iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let a = Tensor::zeros(&[4]).unwrap();
        let b = Tensor::zeros(&[5]).unwrap();
        assert!(matches!(
            si_snr(&a, &b, &cfg()),
            Err(crate::Error::Dimension(_))
        ));
    }
}
