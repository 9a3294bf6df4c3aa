//! Vocal-reinforcement branch: a TDNN speaker embedder over log-magnitude
//! spectrogram features, plus the projection that turns an embedding into
//! an extra input channel for the masking network.
//!
//! The five time-delay layers use contexts (5,1), (3,2), (3,3), (1,1),
//! (1,1) with valid convolution, so at least 15 frames of input are
//! required. Statistics pooling concatenates the per-channel mean and
//! standard deviation over time; two linear layers squeeze that into the
//! embedding.

use alloc::vec::Vec;

use crate::nn::{prefix, Conv1dUnit, Linear, NamedParams, Prelu};
use crate::{input_err, rng, Result, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdnnConfig {
    /// Frequency bins of the input feature map.
    pub in_bins: usize,
    /// Output channels of the five TDNN layers.
    pub channels: [usize; 5],
    pub embed_dim: usize,
}

impl Default for TdnnConfig {
    fn default() -> Self {
        TdnnConfig { in_bins: 257, channels: [128, 128, 128, 128, 64], embed_dim: 32 }
    }
}

impl TdnnConfig {
    /// Full-scale x-vector geometry.
    pub fn full(in_bins: usize) -> TdnnConfig {
        TdnnConfig { in_bins, channels: [1024, 1024, 1024, 1024, 512], embed_dim: 256 }
    }
}

const CONTEXTS: [(usize, usize); 5] = [(5, 1), (3, 2), (3, 3), (1, 1), (1, 1)];

pub struct VocalEmbedder {
    pub cfg: TdnnConfig,
    layers: Vec<(Conv1dUnit, Prelu)>,
    lin1: Linear,
    act1: Prelu,
    lin2: Linear,
}

impl VocalEmbedder {
    pub fn init(cfg: &TdnnConfig, seed: u64) -> Result<VocalEmbedder> {
        let mut layers = Vec::with_capacity(5);
        let mut ci = cfg.in_bins;
        for (i, (&co, &(k, d))) in cfg.channels.iter().zip(CONTEXTS.iter()).enumerate() {
            let conv = Conv1dUnit::init(ci, co, k, d, rng::derive(seed, &[i as u64]))?;
            layers.push((conv, Prelu::init()?));
            ci = co;
        }
        let pooled = 2 * cfg.channels[4];
        Ok(VocalEmbedder {
            cfg: cfg.clone(),
            layers,
            lin1: Linear::init(pooled, cfg.embed_dim, rng::derive(seed, &[10]))?,
            act1: Prelu::init()?,
            lin2: Linear::init(cfg.embed_dim, cfg.embed_dim, rng::derive(seed, &[11]))?,
        })
    }

    /// Frames needed to produce at least one pooled output.
    pub fn min_frames(&self) -> usize {
        1 + CONTEXTS.iter().map(|&(k, d)| (k - 1) * d).sum::<usize>()
    }

    /// Log-compressed magnitude features from a spectrogram pair, each
    /// part `[bins, frames]`.
    pub fn features(re: &Tensor, im: &Tensor) -> Result<Tensor> {
        let mag = re
            .mul(re)?
            .add(&im.mul(im)?)?
            .add_scalar(1e-12)?
            .sqrt()?;
        mag.add_scalar(1e-6)?.log10()
    }

    /// Embeds a `[bins, frames]` feature map into `[1, embed_dim]`.
    pub fn embed_features(&self, feats: &Tensor) -> Result<Tensor> {
        if feats.rank() != 2 || feats.shape()[0] != self.cfg.in_bins {
            return Err(input_err!(
                "embedder expects [{}, frames], got {:?}",
                self.cfg.in_bins,
                feats.shape()
            ));
        }
        if feats.shape()[1] < self.min_frames() {
            return Err(input_err!(
                "embedder needs at least {} frames, got {}",
                self.min_frames(),
                feats.shape()[1]
            ));
        }
        let mut x = feats.clone();
        for (conv, act) in &self.layers {
            x = act.forward(&conv.forward(&x)?)?;
        }
        // Statistics pooling over time: mean and standard deviation per
        // channel, concatenated.
        let mean = x.mean(Some(1))?;
        let std = x.std(1)?;
        let pooled = Tensor::concat(&[mean, std], 0)?.reshape(&[1, 2 * self.cfg.channels[4]])?;
        let h = self.act1.forward(&self.lin1.forward(&pooled)?)?;
        self.lin2.forward(&h)
    }

    pub fn parameters(&self) -> NamedParams {
        let mut out = Vec::new();
        for (i, (conv, act)) in self.layers.iter().enumerate() {
            out.extend(prefix(conv.parameters(), &alloc::format!("tdnn{i}")));
            out.extend(prefix(act.parameters(), &alloc::format!("tdnn{i}.act")));
        }
        out.extend(prefix(self.lin1.parameters(), "lin1"));
        out.extend(prefix(self.act1.parameters(), "lin1.act"));
        out.extend(prefix(self.lin2.parameters(), "lin2"));
        out
    }
}

/// Projects an embedding `[1, D]` onto frequency bins `[1, bins]` to be
/// broadcast over time as an extra (purely real) input channel.
pub struct VocalProjection {
    pub lin: Linear,
}

impl VocalProjection {
    pub fn init(embed_dim: usize, bins: usize, seed: u64) -> Result<VocalProjection> {
        Ok(VocalProjection { lin: Linear::init(embed_dim, bins, seed)? })
    }

    /// `[1, D] -> [1, bins, frames]`, constant along time.
    pub fn forward(&self, embedding: &Tensor, frames: usize) -> Result<Tensor> {
        let bins = self.lin.w.shape()[1];
        let row = self.lin.forward(embedding)?.reshape(&[bins, 1])?;
        let ones = Tensor::full(&[1, frames], 1.0)?;
        row.mul(&ones)?.reshape(&[1, bins, frames])
    }

    pub fn parameters(&self) -> NamedParams {
        prefix(self.lin.parameters(), "lin")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TdnnConfig {
        TdnnConfig { in_bins: 12, channels: [6, 6, 6, 6, 4], embed_dim: 3 }
    }

    #[test]
    fn minimum_context_is_fifteen_frames() {
        let e = VocalEmbedder::init(&small_cfg(), 3).unwrap();
        assert_eq!(e.min_frames(), 15);
        let short = Tensor::zeros(&[12, 14]).unwrap();
        assert!(matches!(
            e.embed_features(&short),
            Err(crate::Error::Input(_))
        ));
        let ok = Tensor::full(&[12, 15], 0.1).unwrap();
        let emb = e.embed_features(&ok).unwrap();
        assert_eq!(emb.shape(), &[1, 3]);
    }

    #[test]
    fn embedding_is_deterministic_in_the_seed() {
        let cfg = small_cfg();
        let a = VocalEmbedder::init(&cfg, 42).unwrap();
        let b = VocalEmbedder::init(&cfg, 42).unwrap();
        let x = Tensor::from_vec(
            (0..12 * 20).map(|v| libm::sinf(v as f32 * 0.05)).collect(),
            &[12, 20],
        )
        .unwrap();
        assert_eq!(
            a.embed_features(&x).unwrap().to_vec(),
            b.embed_features(&x).unwrap().to_vec()
        );
        let c = VocalEmbedder::init(&cfg, 43).unwrap();
        assert_ne!(
            a.embed_features(&x).unwrap().to_vec(),
            c.embed_features(&x).unwrap().to_vec()
        );
    }

    #[test]
    fn duplicating_a_periodic_input_in_time_preserves_the_embedding() {
        // Statistics pooling sees the same distribution of frames whether
        // a periodic input covers 9 or 25 whole periods, so doubling the
        // input length must leave the embedding essentially unchanged.
        // (Period 2 keeps both valid-conv output lengths, 18 and 50, at a
        // whole number of periods.)
        let cfg = small_cfg();
        let e = VocalEmbedder::init(&cfg, 7).unwrap();
        let period = 2;
        let frames = 32;
        let pattern: Vec<f32> = (0..12 * period).map(|v| libm::cosf(v as f32)).collect();
        let mut a = vec![0.0f32; 12 * frames];
        let mut b = vec![0.0f32; 12 * frames * 2];
        for bin in 0..12 {
            for t in 0..frames {
                let v = pattern[bin * period + (t % period)];
                a[bin * frames + t] = v;
                b[bin * frames * 2 + t] = v;
                b[bin * frames * 2 + frames + t] = v;
            }
        }
        let ea = e
            .embed_features(&Tensor::from_vec(a, &[12, frames]).unwrap())
            .unwrap()
            .to_vec();
        let eb = e
            .embed_features(&Tensor::from_vec(b, &[12, frames * 2]).unwrap())
            .unwrap()
            .to_vec();
        for (x, y) in ea.iter().zip(&eb) {
            let denom = x.abs().max(y.abs()).max(1e-3);
            assert!((x - y).abs() / denom < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn projection_is_constant_along_time() {
        let p = VocalProjection::init(3, 5, 9).unwrap();
        let emb = Tensor::from_vec(vec![0.3, -0.7, 1.1], &[1, 3]).unwrap();
        let m = p.forward(&emb, 4).unwrap();
        assert_eq!(m.shape(), &[1, 5, 4]);
        let d = m.to_vec();
        for bin in 0..5 {
            for t in 1..4 {
                assert_eq!(d[bin * 4 + t], d[bin * 4]);
            }
        }
    }
}
