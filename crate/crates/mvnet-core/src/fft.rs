//! Radix-2 FFT and the STFT analysis/synthesis kernels.
//!
//! All transforms run in `f64` internally and convert to `f32` at the
//! boundary; this keeps round trips through analysis and synthesis well
//! below the 1e-5 error budget of the rest of the pipeline.

use alloc::{vec, vec::Vec};

use crate::{domain_err, input_err, Result};

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place iterative radix-2 FFT (decimation in time).
///
/// `inverse` applies the conjugate transform and the 1/N scale, so
/// `fft(ifft(x)) == x` up to rounding. The length must be a power of two.
pub fn fft_inplace(re: &mut [f64], im: &mut [f64], inverse: bool) -> Result<()> {
    let n = re.len();
    if n != im.len() {
        return Err(domain_err!("fft buffers disagree: {} vs {}", n, im.len()));
    }
    if !is_power_of_two(n) {
        return Err(domain_err!("fft length {} is not a power of two", n));
    }
    if n <= 1 {
        return Ok(());
    }

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * core::f64::consts::PI / len as f64;
        let (wr, wi) = (libm::cos(ang), libm::sin(ang));
        let mut start = 0;
        while start < n {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            start += len;
        }
        len <<= 1;
    }

    if inverse {
        let scale = 1.0 / n as f64;
        for v in re.iter_mut() {
            *v *= scale;
        }
        for v in im.iter_mut() {
            *v *= scale;
        }
    }
    Ok(())
}

/// Periodic Hann window of length `n`: `0.5 - 0.5 cos(2 pi k / n)`.
pub fn hann_periodic(n: usize) -> Vec<f32> {
    (0..n)
        .map(|k| {
            let x = 2.0 * core::f64::consts::PI * k as f64 / n as f64;
            (0.5 - 0.5 * libm::cos(x)) as f32
        })
        .collect()
}

/// Frame count for an input of `len` samples: frames start at sample 0 and
/// advance by `hop`; only full windows are taken, trailing remainder
/// samples are dropped.
pub fn num_frames(len: usize, win_len: usize, hop: usize) -> Result<usize> {
    if len < win_len {
        return Err(input_err!(
            "input of {} samples is shorter than one window ({})",
            len,
            win_len
        ));
    }
    Ok((len - win_len) / hop + 1)
}

/// Sample span covered by `frames` frames.
pub fn coverage(frames: usize, win_len: usize, hop: usize) -> usize {
    if frames == 0 {
        0
    } else {
        (frames - 1) * hop + win_len
    }
}

/// Sum of squared, hop-shifted windows over the span of `frames` frames.
/// This is the weighted overlap-add denominator; for the Hann window with
/// 4x overlap it is constant 1.5 away from the edges.
pub fn wola_denominator(window: &[f32], hop: usize, frames: usize) -> Vec<f32> {
    let mut den = vec![0.0f32; coverage(frames, window.len(), hop)];
    for m in 0..frames {
        let base = m * hop;
        for (k, &w) in window.iter().enumerate() {
            den[base + k] += w * w;
        }
    }
    den
}

/// One-sided STFT. Returns `(re, im)` as `[n_bins, frames]` row-major
/// (frame index contiguous), with `n_bins = fft_len / 2 + 1`.
pub fn stft_analyze(
    x: &[f32],
    window: &[f32],
    hop: usize,
    fft_len: usize,
) -> Result<(Vec<f32>, Vec<f32>, usize)> {
    let win_len = window.len();
    if !is_power_of_two(fft_len) {
        return Err(domain_err!("fft length {} is not a power of two", fft_len));
    }
    if fft_len < win_len {
        return Err(domain_err!(
            "fft length {} shorter than window {}",
            fft_len,
            win_len
        ));
    }
    let frames = num_frames(x.len(), win_len, hop)?;
    let bins = fft_len / 2 + 1;
    let mut out_re = vec![0.0f32; bins * frames];
    let mut out_im = vec![0.0f32; bins * frames];
    let mut buf_re = vec![0.0f64; fft_len];
    let mut buf_im = vec![0.0f64; fft_len];
    for m in 0..frames {
        let base = m * hop;
        for k in 0..win_len {
            buf_re[k] = x[base + k] as f64 * window[k] as f64;
        }
        for k in win_len..fft_len {
            buf_re[k] = 0.0;
        }
        buf_im.fill(0.0);
        fft_inplace(&mut buf_re, &mut buf_im, false)?;
        for f in 0..bins {
            out_re[f * frames + m] = buf_re[f] as f32;
            out_im[f * frames + m] = buf_im[f] as f32;
        }
    }
    Ok((out_re, out_im, frames))
}

/// Weighted overlap-add synthesis, the inverse of [`stft_analyze`].
///
/// The DC and Nyquist bins are treated as purely real; their imaginary
/// parts are ignored. Output positions where the window-square sum falls
/// below 1e-8 are set to zero.
pub fn istft_synthesize(
    re: &[f32],
    im: &[f32],
    frames: usize,
    window: &[f32],
    hop: usize,
    fft_len: usize,
) -> Result<Vec<f32>> {
    let win_len = window.len();
    let bins = fft_len / 2 + 1;
    if re.len() != bins * frames || im.len() != bins * frames {
        return Err(domain_err!(
            "spectrogram of {} values does not match {} bins x {} frames",
            re.len(),
            bins,
            frames
        ));
    }
    let out_len = coverage(frames, win_len, hop);
    let mut acc = vec![0.0f64; out_len];
    let mut buf_re = vec![0.0f64; fft_len];
    let mut buf_im = vec![0.0f64; fft_len];
    for m in 0..frames {
        buf_re[0] = re[m] as f64;
        buf_im[0] = 0.0;
        buf_re[fft_len / 2] = re[(bins - 1) * frames + m] as f64;
        buf_im[fft_len / 2] = 0.0;
        for f in 1..fft_len / 2 {
            let a = re[f * frames + m] as f64;
            let b = im[f * frames + m] as f64;
            buf_re[f] = a;
            buf_im[f] = b;
            buf_re[fft_len - f] = a;
            buf_im[fft_len - f] = -b;
        }
        fft_inplace(&mut buf_re, &mut buf_im, true)?;
        let base = m * hop;
        for k in 0..win_len {
            acc[base + k] += buf_re[k] * window[k] as f64;
        }
    }
    let den = wola_denominator(window, hop, frames);
    let mut out = vec![0.0f32; out_len];
    for (i, v) in out.iter_mut().enumerate() {
        let d = den[i] as f64;
        if d >= 1e-8 {
            *v = (acc[i] / d) as f32;
        }
    }
    Ok(out)
}

/// Adjoint of [`istft_synthesize`] as a linear map from spectrogram to
/// waveform: given the gradient of a scalar with respect to the synthesis
/// output, returns the gradient with respect to `(re, im)`.
pub fn istft_adjoint(
    grad_out: &[f32],
    frames: usize,
    window: &[f32],
    hop: usize,
    fft_len: usize,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let win_len = window.len();
    let bins = fft_len / 2 + 1;
    let out_len = coverage(frames, win_len, hop);
    if grad_out.len() != out_len {
        return Err(domain_err!(
            "gradient of {} samples does not match synthesis span {}",
            grad_out.len(),
            out_len
        ));
    }
    let den = wola_denominator(window, hop, frames);
    let mut g = vec![0.0f64; out_len];
    for i in 0..out_len {
        let d = den[i] as f64;
        if d >= 1e-8 {
            g[i] = grad_out[i] as f64 / d;
        }
    }
    let mut d_re = vec![0.0f32; bins * frames];
    let mut d_im = vec![0.0f32; bins * frames];
    let mut buf_re = vec![0.0f64; fft_len];
    let mut buf_im = vec![0.0f64; fft_len];
    let inv_n = 1.0 / fft_len as f64;
    for m in 0..frames {
        let base = m * hop;
        for k in 0..win_len {
            buf_re[k] = g[base + k] * window[k] as f64;
        }
        for k in win_len..fft_len {
            buf_re[k] = 0.0;
        }
        buf_im.fill(0.0);
        fft_inplace(&mut buf_re, &mut buf_im, false)?;
        d_re[m] = (buf_re[0] * inv_n) as f32;
        d_re[(bins - 1) * frames + m] = (buf_re[fft_len / 2] * inv_n) as f32;
        for f in 1..fft_len / 2 {
            d_re[f * frames + m] = (2.0 * inv_n * buf_re[f]) as f32;
            d_im[f * frames + m] = (2.0 * inv_n * buf_im[f]) as f32;
        }
    }
    Ok((d_re, d_im))
}

/// Adjoint of [`stft_analyze`] as a linear map from waveform to one-sided
/// spectrogram: given gradients with respect to `(re, im)`, returns the
/// gradient with respect to the input waveform (length `out_len`; samples
/// beyond the framed span receive zero).
pub fn stft_adjoint(
    g_re: &[f32],
    g_im: &[f32],
    frames: usize,
    window: &[f32],
    hop: usize,
    fft_len: usize,
    out_len: usize,
) -> Result<Vec<f32>> {
    let win_len = window.len();
    let bins = fft_len / 2 + 1;
    if g_re.len() != bins * frames || g_im.len() != bins * frames {
        return Err(domain_err!(
            "gradient of {} values does not match {} bins x {} frames",
            g_re.len(),
            bins,
            frames
        ));
    }
    if out_len < coverage(frames, win_len, hop) {
        return Err(domain_err!(
            "output length {} shorter than framed span {}",
            out_len,
            coverage(frames, win_len, hop)
        ));
    }
    let mut dx = vec![0.0f64; out_len];
    let mut buf_re = vec![0.0f64; fft_len];
    let mut buf_im = vec![0.0f64; fft_len];
    let n_scale = fft_len as f64;
    for m in 0..frames {
        buf_re.fill(0.0);
        buf_im.fill(0.0);
        for f in 0..bins {
            buf_re[f] = g_re[f * frames + m] as f64;
            buf_im[f] = g_im[f * frames + m] as f64;
        }
        fft_inplace(&mut buf_re, &mut buf_im, true)?;
        let base = m * hop;
        for k in 0..win_len {
            dx[base + k] += window[k] as f64 * n_scale * buf_re[k];
        }
    }
    Ok(dx.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: f64, len: usize) -> Vec<f32> {
        (0..len)
            .map(|n| libm::sin(2.0 * core::f64::consts::PI * freq * n as f64 / rate) as f32)
            .collect()
    }

    #[test]
    fn rejects_non_power_of_two() {
        let mut re = vec![0.0; 300];
        let mut im = vec![0.0; 300];
        assert!(fft_inplace(&mut re, &mut im, false).is_err());
    }

    #[test]
    fn fft_matches_naive_dft() {
        let n = 64;
        let mut re: Vec<f64> = (0..n).map(|i| libm::sin(0.37 * i as f64 + 0.2)).collect();
        let mut im: Vec<f64> = (0..n).map(|i| libm::cos(1.1 * i as f64)).collect();
        let (xr, xi) = (re.clone(), im.clone());
        fft_inplace(&mut re, &mut im, false).unwrap();
        for k in 0..n {
            let mut sr = 0.0;
            let mut si = 0.0;
            for t in 0..n {
                let ang = -2.0 * core::f64::consts::PI * (k * t) as f64 / n as f64;
                let (c, s) = (libm::cos(ang), libm::sin(ang));
                sr += xr[t] * c - xi[t] * s;
                si += xr[t] * s + xi[t] * c;
            }
            assert!((re[k] - sr).abs() < 1e-9, "bin {k} re");
            assert!((im[k] - si).abs() < 1e-9, "bin {k} im");
        }
    }

    #[test]
    fn fft_round_trip() {
        let n = 512;
        let mut re: Vec<f64> = (0..n).map(|i| libm::sin(0.01 * i as f64)).collect();
        let mut im = vec![0.0f64; n];
        let orig = re.clone();
        fft_inplace(&mut re, &mut im, false).unwrap();
        fft_inplace(&mut re, &mut im, true).unwrap();
        for i in 0..n {
            assert!((re[i] - orig[i]).abs() < 1e-12);
            assert!(im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn hann_is_periodic_and_zero_at_origin() {
        let w = hann_periodic(400);
        assert_eq!(w[0], 0.0);
        assert!((w[200] - 1.0).abs() < 1e-7);
        // Periodic form: w[k] == w[n-k] for k >= 1.
        for k in 1..400 {
            assert!((w[k] - w[400 - k]).abs() < 1e-7);
        }
    }

    #[test]
    fn frame_count_drops_trailing_remainder() {
        assert_eq!(num_frames(400, 400, 100).unwrap(), 1);
        assert_eq!(num_frames(499, 400, 100).unwrap(), 1);
        assert_eq!(num_frames(500, 400, 100).unwrap(), 2);
        assert_eq!(num_frames(16000, 400, 100).unwrap(), 157);
        assert!(num_frames(399, 400, 100).is_err());
    }

    #[test]
    fn wola_denominator_is_three_halves_away_from_edges() {
        let w = hann_periodic(400);
        let den = wola_denominator(&w, 100, 20);
        // The first and last (win - hop) samples see fewer than 4 windows.
        for v in &den[300..den.len() - 300] {
            assert!((v - 1.5).abs() < 1e-5, "interior WOLA sum {v}");
        }
        assert!(den[0] < 1e-6);
    }

    #[test]
    fn pure_tone_concentrates_in_expected_bin() {
        // 1000 Hz at 16 kHz with a 512-point FFT lands on bin 32.
        let x = sine(1000.0, 16000.0, 4000);
        let w = hann_periodic(400);
        let (re, im, frames) = stft_analyze(&x, &w, 100, 512).unwrap();
        let mag = |f: usize, m: usize| {
            let a = re[f * frames + m] as f64;
            let b = im[f * frames + m] as f64;
            libm::sqrt(a * a + b * b)
        };
        let m = frames / 2;
        let peak = (0..257).max_by(|&a, &b| mag(a, m).total_cmp(&mag(b, m))).unwrap();
        assert_eq!(peak, 32);
        // Energy away from the main lobe is tiny.
        assert!(mag(100, m) < 1e-3 * mag(32, m));
    }

    #[test]
    fn windowed_frame_satisfies_parseval() {
        let x = sine(433.0, 16000.0, 1200);
        let w = hann_periodic(400);
        let (re, im, frames) = stft_analyze(&x, &w, 100, 512).unwrap();
        let m = 3;
        let mut time_energy = 0.0f64;
        for k in 0..400 {
            let v = x[m * 100 + k] as f64 * w[k] as f64;
            time_energy += v * v;
        }
        let mut spec_energy = 0.0f64;
        for f in 0..257 {
            let a = re[f * frames + m] as f64;
            let b = im[f * frames + m] as f64;
            let scale = if f == 0 || f == 256 { 1.0 } else { 2.0 };
            spec_energy += scale * (a * a + b * b);
        }
        spec_energy /= 512.0;
        assert!(
            (time_energy - spec_energy).abs() < 1e-6 * time_energy.max(1.0),
            "{time_energy} vs {spec_energy}"
        );
    }

    #[test]
    fn analysis_synthesis_round_trip_is_tight_in_the_interior() {
        let x = sine(700.0, 16000.0, 16000);
        let w = hann_periodic(400);
        let (re, im, frames) = stft_analyze(&x, &w, 100, 512).unwrap();
        let y = istft_synthesize(&re, &im, frames, &w, 100, 512).unwrap();
        assert_eq!(y.len(), coverage(frames, 400, 100));
        // Edge samples have partial window coverage; compare the interior.
        for i in 300..y.len() - 300 {
            assert!(
                (y[i] - x[i]).abs() < 1e-5,
                "sample {i}: {} vs {}",
                y[i],
                x[i]
            );
        }
    }

    #[test]
    fn analysis_adjoint_matches_inner_product_identity() {
        // <A x, G> == <x, A* G> for the linear analysis map A.
        let w = hann_periodic(8);
        let (hop, fft_len) = (2, 16);
        let len = 21;
        let bins = fft_len / 2 + 1;
        let mut state = 0x777u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let x: Vec<f32> = (0..len).map(|_| next()).collect();
        let (re, im, frames) = stft_analyze(&x, &w, hop, fft_len).unwrap();
        let gr: Vec<f32> = (0..bins * frames).map(|_| next()).collect();
        let gi: Vec<f32> = (0..bins * frames).map(|_| next()).collect();
        let mut lhs = 0.0f64;
        for i in 0..bins * frames {
            lhs += re[i] as f64 * gr[i] as f64 + im[i] as f64 * gi[i] as f64;
        }
        let dx = stft_adjoint(&gr, &gi, frames, &w, hop, fft_len, len).unwrap();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| *a as f64 * *b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        // Samples past the last full frame never enter analysis.
        let covered = coverage(frames, 8, hop);
        for &v in &dx[covered..] {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn adjoint_matches_inner_product_identity() {
        // <A s, g> == <s, A* g> for the linear synthesis map A.
        let w = hann_periodic(8);
        let hop = 2;
        let fft_len = 16;
        let frames = 5;
        let bins = fft_len / 2 + 1;
        let mut state = 0x12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let re: Vec<f32> = (0..bins * frames).map(|_| next()).collect();
        let im: Vec<f32> = (0..bins * frames).map(|_| next()).collect();
        let y = istft_synthesize(&re, &im, frames, &w, hop, fft_len).unwrap();
        let g: Vec<f32> = (0..y.len()).map(|_| next()).collect();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| *a as f64 * *b as f64).sum();
        let (dr, di) = istft_adjoint(&g, frames, &w, hop, fft_len).unwrap();
        let mut rhs = 0.0f64;
        for i in 0..bins * frames {
            rhs += re[i] as f64 * dr[i] as f64 + im[i] as f64 * di[i] as f64;
        }
        // Imag parts of DC/Nyquist do not influence synthesis, and their
        // adjoint gradient is zero accordingly.
        for m in 0..frames {
            assert_eq!(di[m], 0.0);
            assert_eq!(di[(bins - 1) * frames + m], 0.0);
        }
        assert!((lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
