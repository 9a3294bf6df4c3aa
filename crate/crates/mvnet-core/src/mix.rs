//! SNR-controlled mixing of clean speech with noise.
//!
//! Noise shorter than the speech is tiled circularly from a chosen
//! offset, and the gain solves for the requested SNR using f64 powers, so
//! the achieved value lands within about a microdecibel of the request.

use alloc::vec::Vec;

use crate::{input_err, Result};

/// `out[i] = noise[(offset + i) % len]`.
pub fn tile_noise(noise: &[f32], offset: usize, len: usize) -> Result<Vec<f32>> {
    if noise.is_empty() {
        return Err(input_err!("noise source is empty"));
    }
    let n = noise.len();
    Ok((0..len).map(|i| noise[(offset + i) % n]).collect())
}

pub struct Mix {
    pub mixture: Vec<f32>,
    /// The tiled, gain-scaled noise actually added.
    pub scaled_noise: Vec<f32>,
    pub noise_gain: f64,
}

fn power(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

/// Mixes `clean` with circularly tiled `noise` at `snr_db`.
pub fn mix_at_snr(clean: &[f32], noise: &[f32], offset: usize, snr_db: f64) -> Result<Mix> {
    if clean.is_empty() {
        return Err(input_err!("clean source is empty"));
    }
    let seg = tile_noise(noise, offset, clean.len())?;
    let pc = power(clean);
    let pn = power(&seg);
    if pc <= 0.0 {
        return Err(input_err!("clean source is silent"));
    }
    if pn <= 0.0 {
        return Err(input_err!("noise segment is silent"));
    }
    let gain = libm::sqrt(pc / (pn * libm::pow(10.0, snr_db / 10.0)));
    let scaled_noise: Vec<f32> = seg.iter().map(|&v| (gain * v as f64) as f32).collect();
    let mixture = clean
        .iter()
        .zip(&scaled_noise)
        .map(|(&c, &n)| c + n)
        .collect();
    Ok(Mix { mixture, scaled_noise, noise_gain: gain })
}

/// SNR in dB implied by a clean signal and the mixture containing it.
pub fn achieved_snr_db(clean: &[f32], mixture: &[f32]) -> f64 {
    if clean.len() != mixture.len() || clean.is_empty() {
        return f64::NAN;
    }
    let pc = power(clean);
    let pn: f64 = clean
        .iter()
        .zip(mixture)
        .map(|(&c, &m)| {
            let d = m as f64 - c as f64;
            d * d
        })
        .sum::<f64>()
        / clean.len() as f64;
    if pc <= 0.0 || pn <= 0.0 {
        return f64::NAN;
    }
    10.0 * libm::log10(pc / pn)
}

/// Gain that brings the peak under `limit` (1.0 when already under).
/// Apply the same gain to every aligned channel so SNRs are preserved.
pub fn peak_scale(samples: &[f32], limit: f32) -> f64 {
    let peak = samples.iter().fold(0.0f32, |acc, &v| acc.max(v.abs()));
    if peak > limit && peak > 0.0 {
        limit as f64 / peak as f64
    } else {
        1.0
    }
}

pub fn apply_gain(samples: &mut [f32], gain: f64) {
    for v in samples.iter_mut() {
        *v = (*v as f64 * gain) as f32;
    }
}
