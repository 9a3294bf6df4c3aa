//! Evaluation metrics, computed in f64 entirely outside the autodiff
//! engine so they double as independent oracles for the training losses.

use alloc::vec::Vec;

/// Caps for the scale-invariant SNR report; a bit-perfect estimate reads
/// as +99 dB rather than infinity.
pub const SI_SNR_CAP_DB: f64 = 99.0;

/// Per-frame segmental SNR clamp range in dB.
pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;

fn zero_mean(x: &[f32]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean: f64 = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    x.iter().map(|&v| v as f64 - mean).collect()
}

/// Scale-invariant SNR in dB. Returns NaN for empty or silent references,
/// and caps at +-[`SI_SNR_CAP_DB`].
pub fn si_snr_db(est: &[f32], reference: &[f32]) -> f64 {
    if est.len() != reference.len() || est.is_empty() {
        return f64::NAN;
    }
    let e = zero_mean(est);
    let r = zero_mean(reference);
    let dot: f64 = e.iter().zip(&r).map(|(a, b)| a * b).sum();
    let energy: f64 = r.iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return f64::NAN;
    }
    let scale = dot / energy;
    let num: f64 = r.iter().map(|v| (scale * v) * (scale * v)).sum();
    let den: f64 = e
        .iter()
        .zip(&r)
        .map(|(a, b)| (a - scale * b) * (a - scale * b))
        .sum();
    if den <= num * 1e-10 {
        return SI_SNR_CAP_DB;
    }
    (10.0 * libm::log10(num / den)).clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB)
}

/// SI-SNR improvement of the estimate over the unprocessed mixture.
pub fn si_snr_improvement_db(est: &[f32], noisy: &[f32], reference: &[f32]) -> f64 {
    si_snr_db(est, reference) - si_snr_db(noisy, reference)
}

/// Segmental SNR: mean of per-frame SNRs, each clamped to
/// `[-10, 35]` dB. Frames where the reference is silent are skipped;
/// returns NaN when every frame is silent.
pub fn seg_snr_db(est: &[f32], reference: &[f32], frame_len: usize) -> f64 {
    if est.len() != reference.len() || frame_len == 0 {
        return f64::NAN;
    }
    let mut total = 0.0f64;
    let mut frames = 0usize;
    let mut i = 0;
    while i + frame_len <= reference.len() {
        let r = &reference[i..i + frame_len];
        let e = &est[i..i + frame_len];
        let sig: f64 = r.iter().map(|&v| (v as f64) * (v as f64)).sum();
        if sig > 1e-10 {
            let err: f64 = r
                .iter()
                .zip(e)
                .map(|(&a, &b)| (a as f64 - b as f64) * (a as f64 - b as f64))
                .sum();
            let snr = if err <= 0.0 {
                SEG_SNR_MAX_DB
            } else {
                (10.0 * libm::log10(sig / err)).clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
            };
            total += snr;
            frames += 1;
        }
        i += frame_len;
    }
    if frames == 0 {
        f64::NAN
    } else {
        total / frames as f64
    }
}

/// Embedding similarity reported as a plain cosine in `[-1, 1]`; higher
/// means the embeddings agree. Returns NaN for mismatched or silent
/// vectors.
pub fn simi(est_emb: &[f32], ref_emb: &[f32]) -> f64 {
    if est_emb.len() != ref_emb.len() || est_emb.is_empty() {
        return f64::NAN;
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&a, &b) in est_emb.iter().zip(ref_emb) {
        dot += a as f64 * b as f64;
        na += a as f64 * a as f64;
        nb += b as f64 * b as f64;
    }
    if na <= 0.0 || nb <= 0.0 {
        return f64::NAN;
    }
    (dot / (libm::sqrt(na) * libm::sqrt(nb))).clamp(-1.0, 1.0)
}

/// The similarity objective evaluated in f64 over raw embedding vectors:
/// `100 * log10((1 - cos) + 1e-8)`. Lower means better aligned; the floor
/// is exactly -800.
pub fn log_similarity(est_emb: &[f32], ref_emb: &[f32]) -> f64 {
    let cos = simi(est_emb, ref_emb);
    if cos.is_nan() {
        return f64::NAN;
    }
    100.0 * libm::log10((1.0 - cos).max(0.0) + 1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize, w: f32) -> Vec<f32> {
        (0..n).map(|i| libm::sinf(w * i as f32) * 0.4).collect()
    }

    #[test]
    fn perfect_estimate_caps_at_ninety_nine() {
        let r = tone(800, 0.3);
        assert_eq!(si_snr_db(&r, &r), SI_SNR_CAP_DB);
    }

    #[test]
    fn known_snr_mixture_reports_that_snr() {
        // Orthogonal zero-mean construction: exact closed form.
        let r = [1.0f32, -1.0, 1.0, -1.0].repeat(100);
        let n = [1.0f32, 1.0, -1.0, -1.0].repeat(100);
        let g = libm::sqrtf(10.0);
        let e: Vec<f32> = r.iter().zip(&n).map(|(c, v)| c + g * v).collect();
        let v = si_snr_db(&e, &r);
        assert!((v + 10.0).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn improvement_is_difference_of_snrs() {
        let r = [1.0f32, -1.0, 1.0, -1.0].repeat(50);
        let n = [1.0f32, 1.0, -1.0, -1.0].repeat(50);
        let noisy: Vec<f32> = r.iter().zip(&n).map(|(c, v)| c + v).collect();
        let est: Vec<f32> = r.iter().zip(&n).map(|(c, v)| c + 0.5 * v).collect();
        let imp = si_snr_improvement_db(&est, &noisy, &r);
        // Noise power drops by a factor of four: 6.02 dB.
        assert!((imp - 20.0 * libm::log10(2.0)).abs() < 1e-6, "got {imp}");
    }

    #[test]
    fn silent_reference_is_nan() {
        let z = vec![0.0f32; 400];
        let e = tone(400, 0.2);
        assert!(si_snr_db(&e, &z).is_nan());
    }

    #[test]
    fn seg_snr_clamps_and_skips_silence() {
        let mut r = tone(1200, 0.25);
        // Middle frame silent: must not count.
        for v in &mut r[400..800] {
            *v = 0.0;
        }
        let e = r.clone();
        let v = seg_snr_db(&e, &r, 400);
        // Perfect frames clamp at the ceiling; the silent frame is skipped.
        assert!((v - SEG_SNR_MAX_DB).abs() < 1e-9, "got {v}");

        let noisy: Vec<f32> = r.iter().map(|&x| x + 10.0).collect();
        let bad = seg_snr_db(&noisy, &r, 400);
        assert!(bad >= SEG_SNR_MIN_DB - 1e-9);
    }

    #[test]
    fn seg_snr_all_silent_is_nan() {
        let z = vec![0.0f32; 800];
        assert!(seg_snr_db(&z, &z, 400).is_nan());
    }

    #[test]
    fn simi_is_a_cosine() {
        let a = [0.3f32, -0.7, 0.2, 0.9];
        let b: Vec<f32> = a.iter().map(|v| -v).collect();
        let c = [0.7f32, 0.3, -0.9, 0.2];
        assert!((simi(&a, &a) - 1.0).abs() < 1e-12);
        assert!((simi(&a, &b) + 1.0).abs() < 1e-12);
        assert!(simi(&a, &c).abs() < 1e-12);
        assert!(simi(&a, &[0.0; 4]).is_nan());
    }

    #[test]
    fn simi_proxy_floor_and_opposite() {
        let a = [0.3f32, -0.7, 0.2, 0.9];
        assert!((log_similarity(&a, &a) + 800.0).abs() < 1e-9);
        let b: Vec<f32> = a.iter().map(|v| -v).collect();
        let v = log_similarity(&a, &b);
        assert!((v - 100.0 * libm::log10(2.0 + 1e-8)).abs() < 1e-9);
    }

    #[test]
    fn simi_proxy_matches_training_similarity_term() {
        let a = [0.31f32, -0.66, 0.21, 0.88, 0.05, -0.4];
        let b = [0.25f32, -0.71, 0.33, 0.79, 0.11, -0.35];
        let proxy = log_similarity(&a, &b);
        let ta = crate::Tensor::from_vec(a.to_vec(), &[1, 6]).unwrap();
        let tb = crate::Tensor::from_vec(b.to_vec(), &[1, 6]).unwrap();
        let loss = crate::loss::similarity_loss(&ta, &tb, &crate::loss::LossConfig::default())
            .unwrap()
            .item()
            .unwrap();
        assert!((proxy - loss as f64).abs() < 1e-3, "{proxy} vs {loss}");
    }
}
