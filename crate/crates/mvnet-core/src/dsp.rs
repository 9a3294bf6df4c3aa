//! Waveform/spectrogram types and the STFT bridge into tensors.

use alloc::vec::Vec;

use crate::{dim_err, fft, input_err, Result, Tensor};

/// Analysis geometry: 25 ms windows with 6.25 ms hop at 16 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { win_len: 400, hop: 100, fft_len: 512 }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn window(&self) -> Vec<f32> {
        fft::hann_periodic(self.win_len)
    }

    pub fn num_frames(&self, samples: usize) -> Result<usize> {
        fft::num_frames(samples, self.win_len, self.hop)
    }

    /// Samples rendered back by synthesis for a given frame count.
    pub fn coverage(&self, frames: usize) -> usize {
        fft::coverage(frames, self.win_len, self.hop)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Waveform {
        Waveform { samples, sample_rate }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One-sided complex spectrogram, `[bins, frames]` row-major per part.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub re: Vec<f32>,
    pub im: Vec<f32>,
    pub bins: usize,
    pub frames: usize,
}

impl ComplexSpectrogram {
    pub fn magnitude(&self) -> Vec<f32> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| libm::sqrtf(r * r + i * i))
            .collect()
    }

    /// Packs into a `[2, bins, frames]` tensor (constant, no gradients).
    pub fn to_tensor(&self) -> Result<Tensor> {
        let mut data = self.re.clone();
        data.extend_from_slice(&self.im);
        Tensor::from_vec(data, &[2, self.bins, self.frames])
    }

    pub fn from_tensor(t: &Tensor) -> Result<ComplexSpectrogram> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 2 {
            return Err(dim_err!("expected [2, bins, frames], got {:?}", s));
        }
        let (bins, frames) = (s[1], s[2]);
        let data = t.to_vec();
        let (re, im) = data.split_at(bins * frames);
        Ok(ComplexSpectrogram { re: re.to_vec(), im: im.to_vec(), bins, frames })
    }
}

pub fn stft(samples: &[f32], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    if samples.len() < cfg.win_len {
        return Err(input_err!(
            "{} samples is shorter than one {}-sample window",
            samples.len(),
            cfg.win_len
        ));
    }
    let window = cfg.window();
    let (re, im, frames) = fft::stft_analyze(samples, &window, cfg.hop, cfg.fft_len)?;
    Ok(ComplexSpectrogram { re, im, bins: cfg.bins(), frames })
}

pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Result<Vec<f32>> {
    if spec.bins != cfg.bins() {
        return Err(dim_err!(
            "spectrogram has {} bins, config implies {}",
            spec.bins,
            cfg.bins()
        ));
    }
    let window = cfg.window();
    fft::istft_synthesize(&spec.re, &spec.im, spec.frames, &window, cfg.hop, cfg.fft_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chirp(len: usize) -> Vec<f32> {
        (0..len)
            .map(|n| {
                let t = n as f64 / 16000.0;
                (libm::sin(2.0 * core::f64::consts::PI * (200.0 + 800.0 * t) * t) * 0.5) as f32
            })
            .collect()
    }

    #[test]
    fn default_geometry_is_25ms_at_16khz() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.win_len, 400);
        assert_eq!(cfg.hop, 100);
        assert_eq!(cfg.fft_len, 512);
        assert_eq!(cfg.bins(), 257);
        assert_eq!(cfg.num_frames(16000).unwrap(), 157);
    }

    #[test]
    fn too_short_input_is_an_input_error() {
        let cfg = StftConfig::default();
        assert!(matches!(stft(&[0.0; 399], &cfg), Err(crate::Error::Input(_))));
    }

    #[test]
    fn round_trip_through_tensors_is_lossless() {
        let cfg = StftConfig::default();
        let spec = stft(&chirp(8000), &cfg).unwrap();
        let t = spec.to_tensor().unwrap();
        assert_eq!(t.shape(), &[2, 257, spec.frames]);
        let back = ComplexSpectrogram::from_tensor(&t).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn tensor_stft_matches_dsp_stft() {
        let cfg = StftConfig::default();
        let x = chirp(4000);
        let spec = stft(&x, &cfg).unwrap();
        let xt = Tensor::from_vec(x, &[4000]).unwrap();
        let st = xt.stft(&cfg.window(), cfg.hop, cfg.fft_len).unwrap();
        let packed = spec.to_tensor().unwrap();
        let a = st.to_vec();
        let b = packed.to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn interior_round_trip_error_is_below_1e5() {
        let cfg = StftConfig::default();
        let x = chirp(16000);
        let spec = stft(&x, &cfg).unwrap();
        let y = istft(&spec, &cfg).unwrap();
        let guard = cfg.win_len - cfg.hop;
        for i in guard..y.len() - guard {
            assert!((y[i] - x[i]).abs() < 1e-5, "sample {i}");
        }
    }
}
