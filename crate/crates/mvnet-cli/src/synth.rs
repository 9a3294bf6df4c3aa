//! Deterministic toy corpus: harmonic "speech" and structured noises.
//!
//! Five synthetic speakers (distinct fundamentals) each speak four
//! four-second utterances built from vowel-like harmonic syllables with
//! vibrato, amplitude envelopes, and unvoiced bursts. Six noise files
//! cover white, rumble, babble-like, hiss, pink-ish, and pulsed noise.
//! Everything derives from the seed, so the corpus is reproducible and
//! file names encode speaker ids for the split (`spk3-utt1.wav`).

use std::path::Path;

use mvnet_core::rng;
use rand_chacha::ChaCha8Rng;

use crate::fail::{input, Fail};
use crate::wav;

pub const SPEAKERS: usize = 5;
pub const UTTS_PER_SPEAKER: usize = 4;
pub const NOISES: usize = 6;
const RATE: f32 = wav::SAMPLE_RATE as f32;
const UTT_SAMPLES: usize = 64_000;
const NOISE_SAMPLES: usize = 64_000;

const F0: [f32; SPEAKERS] = [105.0, 135.0, 175.0, 225.0, 290.0];

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng::uniform(rng, -1.0, 1.0)).collect()
}

fn one_pole_lowpass(x: &[f32], alpha: f32) -> Vec<f32> {
    let mut y = Vec::with_capacity(x.len());
    let mut acc = 0.0f32;
    for &v in x {
        acc += alpha * (v - acc);
        y.push(acc);
    }
    y
}

fn fade_edges(x: &mut [f32], fade: usize) {
    let fade = fade.min(x.len() / 2);
    for i in 0..fade {
        let g = 0.5 - 0.5 * libm::cosf(core::f32::consts::PI * i as f32 / fade as f32);
        x[i] *= g;
        let j = x.len() - 1 - i;
        x[j] *= g;
    }
}

fn normalize_peak(x: &mut [f32], peak: f32) {
    let m = x.iter().fold(0.0f32, |a, &v| a.max(v.abs()));
    if m > 0.0 {
        let g = peak / m;
        for v in x.iter_mut() {
            *v *= g;
        }
    }
}

/// A voiced syllable: harmonic stack with vibrato and a formant-ish
/// per-harmonic weighting drawn once per syllable.
fn voiced_segment(rng: &mut ChaCha8Rng, f0: f32, len: usize) -> Vec<f32> {
    let jitter = rng::uniform(rng, 0.97, 1.03);
    let f0 = f0 * jitter;
    let n_harm = (6000.0 / f0) as usize;
    let formant1 = rng::uniform(rng, 300.0, 900.0);
    let formant2 = rng::uniform(rng, 1100.0, 2400.0);
    let bw = 350.0f32;
    let weights: Vec<f32> = (1..=n_harm)
        .map(|h| {
            let f = f0 * h as f32;
            let near = |c: f32| {
                let d = (f - c) / bw;
                libm::expf(-d * d)
            };
            let tilt = 1.0 / (1.0 + f / 1500.0);
            (near(formant1) + 0.7 * near(formant2) + 0.08) * tilt
        })
        .collect();
    let phases: Vec<f32> = (0..n_harm)
        .map(|_| rng::uniform(rng, 0.0, core::f32::consts::TAU))
        .collect();
    let vib_rate = rng::uniform(rng, 4.5, 6.5);
    let vib_depth = rng::uniform(rng, 0.008, 0.02);
    let am_rate = rng::uniform(rng, 1.5, 3.5);

    let mut out = vec![0.0f32; len];
    let mut phase = 0.0f64;
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f32 / RATE;
        let vib = 1.0 + vib_depth * libm::sinf(core::f32::consts::TAU * vib_rate * t);
        phase += (f0 * vib) as f64 / RATE as f64;
        let mut s = 0.0f32;
        for (h, (&w, &p0)) in weights.iter().zip(&phases).enumerate() {
            let hp = (h + 1) as f64 * phase * core::f64::consts::TAU;
            s += w * libm::sinf((hp % core::f64::consts::TAU) as f32 + p0);
        }
        let am = 0.85 + 0.15 * libm::sinf(core::f32::consts::TAU * am_rate * t);
        *o = s * am;
    }
    fade_edges(&mut out, 400);
    normalize_peak(&mut out, 1.0);
    out
}

/// An unvoiced burst: highpassed noise, much quieter than voicing.
fn burst_segment(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    let w = white(rng, len + 1);
    let mut out: Vec<f32> = w.windows(2).map(|p| (p[1] - p[0]) * 0.5).collect();
    fade_edges(&mut out, 160);
    normalize_peak(&mut out, 0.35);
    out
}

fn utterance(rng: &mut ChaCha8Rng, f0: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; UTT_SAMPLES];
    let mut at = (rng::uniform(rng, 0.0, 0.04) * RATE) as usize;
    while at + 800 < UTT_SAMPLES {
        let voiced = rng::uniform(rng, 0.0, 1.0) < 0.78;
        let dur_s = if voiced {
            rng::uniform(rng, 0.12, 0.26)
        } else {
            rng::uniform(rng, 0.05, 0.10)
        };
        let len = ((dur_s * RATE) as usize).min(UTT_SAMPLES - at);
        let seg = if voiced {
            voiced_segment(rng, f0, len)
        } else {
            burst_segment(rng, len)
        };
        for (i, &v) in seg.iter().enumerate() {
            out[at + i] += v;
        }
        at += len + (rng::uniform(rng, 0.02, 0.05) * RATE) as usize;
    }
    fade_edges(&mut out, 400);
    normalize_peak(&mut out, 0.5);
    out
}

fn babble(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n];
    for _ in 0..8 {
        let f0 = rng::uniform(rng, 90.0, 310.0);
        let am_rate = rng::uniform(rng, 0.8, 4.0);
        let am_phase = rng::uniform(rng, 0.0, core::f32::consts::TAU);
        let voice = voiced_segment(rng, f0, n);
        for (i, o) in out.iter_mut().enumerate() {
            let t = i as f32 / RATE;
            let am = 0.5 + 0.5 * libm::sinf(core::f32::consts::TAU * am_rate * t + am_phase);
            *o += voice[i] * am * 0.25;
        }
    }
    out
}

fn noise_signal(kind: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = NOISE_SAMPLES;
    let mut out = match kind {
        0 => white(rng, n),
        1 => one_pole_lowpass(&white(rng, n), 0.04),
        2 => babble(rng, n),
        3 => {
            // Hiss: band around a few kHz as a difference of lowpasses.
            let w = white(rng, n);
            let wide = one_pole_lowpass(&w, 0.75);
            let narrow = one_pole_lowpass(&w, 0.25);
            wide.iter().zip(&narrow).map(|(a, b)| a - b).collect()
        }
        4 => {
            // Pink-ish: stacked lowpass stages at octave-spaced cutoffs.
            let w = white(rng, n);
            let mut acc = vec![0.0f32; n];
            for &alpha in &[0.5f32, 0.12, 0.03, 0.008] {
                for (a, b) in acc.iter_mut().zip(one_pole_lowpass(&w, alpha)) {
                    *a += b * 0.5;
                }
            }
            acc
        }
        _ => {
            // Pulsed: white gated by a soft square LFO.
            let rate = rng::uniform(rng, 2.0, 5.0);
            white(rng, n)
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let t = i as f32 / RATE;
                    let g = libm::tanhf(4.0 * libm::sinf(core::f32::consts::TAU * rate * t));
                    v * (0.55 + 0.45 * g)
                })
                .collect()
        }
    };
    fade_edges(&mut out, 400);
    normalize_peak(&mut out, 0.5);
    out
}

/// Writes the corpus under `out/clean` and `out/noise`; returns counts.
pub fn synth_corpus(out: &Path, seed: u64) -> Result<(usize, usize), Fail> {
    let clean_dir = out.join("clean");
    let noise_dir = out.join("noise");
    std::fs::create_dir_all(&clean_dir)
        .map_err(|e| input(format!("cannot create {}: {e}", clean_dir.display())))?;
    std::fs::create_dir_all(&noise_dir)
        .map_err(|e| input(format!("cannot create {}: {e}", noise_dir.display())))?;
    for spk in 0..SPEAKERS {
        for utt in 0..UTTS_PER_SPEAKER {
            let mut rng = rng::stream(seed, &[40, spk as u64, utt as u64]);
            let w = utterance(&mut rng, F0[spk]);
            wav::write(&clean_dir.join(format!("spk{spk}-utt{utt}.wav")), &w)?;
        }
    }
    for kind in 0..NOISES {
        let mut rng = rng::stream(seed, &[41, kind as u64]);
        let w = noise_signal(kind, &mut rng);
        wav::write(&noise_dir.join(format!("noise-{kind}.wav")), &w)?;
    }
    Ok((SPEAKERS * UTTS_PER_SPEAKER, NOISES))
}
