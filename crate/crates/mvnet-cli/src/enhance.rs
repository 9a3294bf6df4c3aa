//! The enhance command: run WAVs through a checkpointed network, or
//! through a bare analysis/synthesis round trip (`--identity-mask`) to
//! measure the frontend floor without any model in the loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mvnet_core::dsp;
use mvnet_core::model::MvNet;

use crate::checkpoint::{self, Checkpoint};
use crate::fail::{input, Fail};
use crate::manifest;
use crate::wav;

/// Analysis then synthesis with the model's framing and length
/// convention: crop to the input length from sample zero, zero-pad any
/// uncovered tail.
fn identity_pass(samples: &[f32], cfg: &dsp::StftConfig) -> Result<Vec<f32>, Fail> {
    let spec = dsp::stft(samples, cfg).map_err(Fail::from)?;
    let mut wave = dsp::istft(&spec, cfg).map_err(Fail::from)?;
    wave.truncate(samples.len());
    wave.resize(samples.len(), 0.0);
    Ok(wave)
}

fn echo_config(
    dir: &Path,
    ckpt_path: &Path,
    in_path: &Path,
    out: &Path,
    identity: bool,
    ck: &Checkpoint,
) -> Result<(), Fail> {
    std::fs::create_dir_all(dir)
        .map_err(|e| input(format!("cannot create {}: {e}", dir.display())))?;
    let mut s = String::new();
    let _ = writeln!(s, "command=enhance");
    let _ = writeln!(s, "ckpt={}", ckpt_path.display());
    let _ = writeln!(s, "in={}", in_path.display());
    let _ = writeln!(s, "out={}", out.display());
    let _ = writeln!(s, "identity_mask={identity}");
    for (k, v) in &ck.config {
        let _ = writeln!(s, "model.{k}={v}");
    }
    wav::atomic_write(&dir.join("enhance.config"), s.as_bytes())
}

fn process(
    net: &MvNet,
    identity: bool,
    src: &Path,
    dst: &Path,
) -> Result<(), Fail> {
    let samples = wav::read(src)?;
    let out = if identity {
        identity_pass(&samples, &net.cfg.stft())?
    } else {
        net.enhance_waveform(&samples).map_err(Fail::from)?
    };
    debug_assert_eq!(out.len(), samples.len());
    wav::write(dst, &out)
}

pub fn run_enhance(
    ckpt_path: &Path,
    in_path: &Path,
    out: &Path,
    identity: bool,
) -> Result<(), Fail> {
    let ck = Checkpoint::read(ckpt_path)?;
    let net = checkpoint::load_model(&ck)?;

    if in_path.is_dir() {
        echo_config(out, ckpt_path, in_path, out, identity, &ck)?;
        let files = manifest::list_wavs(in_path)?;
        for src in &files {
            let dst = out.join(src.file_name().unwrap_or_default());
            process(&net, identity, src, &dst)?;
        }
        println!("enhanced {} files into {}", files.len(), out.display());
    } else {
        let dst: PathBuf = if out.is_dir() {
            out.join(in_path.file_name().unwrap_or_default())
        } else {
            out.to_path_buf()
        };
        let dir = dst.parent().filter(|p| !p.as_os_str().is_empty());
        if let Some(d) = dir {
            echo_config(d, ckpt_path, in_path, out, identity, &ck)?;
        }
        process(&net, identity, in_path, &dst)?;
        println!("enhanced {} -> {}", in_path.display(), dst.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pass_reconstructs_interior_samples() {
        let cfg = dsp::StftConfig::default();
        let x: Vec<f32> = (0..16000)
            .map(|i| libm::sinf(0.017 * i as f32) * 0.5)
            .collect();
        let y = identity_pass(&x, &cfg).unwrap();
        assert_eq!(y.len(), x.len());
        for i in 400..x.len() - 400 {
            assert!((x[i] - y[i]).abs() < 1e-5, "sample {i}: {} vs {}", x[i], y[i]);
        }
    }

    #[test]
    fn identity_pass_handles_unaligned_lengths() {
        let cfg = dsp::StftConfig::default();
        let x: Vec<f32> = (0..4321).map(|i| libm::cosf(0.03 * i as f32)).collect();
        let y = identity_pass(&x, &cfg).unwrap();
        assert_eq!(y.len(), x.len());
    }
}
