//! Criss-cross memory-assistance attention over `[C, F, T]` maps.
//!
//! Each position attends to its own row (all frames at the same frequency)
//! and its own column (all frequencies at the same frame). Row and column
//! affinities are concatenated and softmaxed jointly; the column's copy of
//! the self position is masked out so the self affinity appears exactly
//! once. The aggregated value map is added back residually, and the whole
//! pass repeats `loops` times so information propagates across the full
//! plane.

use alloc::string::String;
use alloc::{vec, vec::Vec};

use crate::nn::{prefix, NamedParams};
use crate::{dim_err, domain_err, rng, Result, Tensor};

const MASK_VALUE: f32 = -1e9;

/// Per-position attention weights with the masked duplicate removed:
/// `[F, T, F + T - 1]`, laid out as the T row entries followed by the
/// F - 1 column entries (own frequency dropped).
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub freq_bins: usize,
    pub frames: usize,
    pub weights: Vec<f32>,
}

struct Qkv {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    v_bias: Tensor,
}

impl Qkv {
    fn init(channels: usize, qk_channels: usize, seed: u64) -> Result<Qkv> {
        let std = libm::sqrtf(1.0 / channels as f32);
        let mut r = rng::stream(seed, &[71]);
        let mut mk = |co: usize, scale: f32| -> Result<Tensor> {
            Tensor::param(
                (0..co * channels).map(|_| rng::normal(&mut r) * scale).collect(),
                &[co, channels, 1, 1],
            )
        };
        let q = mk(qk_channels, std)?;
        let k = mk(qk_channels, std)?;
        // Zero value projection makes the whole block an identity at init;
        // training opens it up gradually.
        let v = mk(channels, 0.0)?;
        let v_bias = Tensor::param(vec![0.0; channels], &[channels])?;
        Ok(Qkv { q, k, v, v_bias })
    }

    fn parameters(&self) -> NamedParams {
        vec![
            (String::from("q"), self.q.clone()),
            (String::from("k"), self.k.clone()),
            (String::from("v"), self.v.clone()),
            (String::from("v_bias"), self.v_bias.clone()),
        ]
    }
}

pub struct CrissCross {
    pub channels: usize,
    pub qk_channels: usize,
    pub loops: usize,
    pub shared: bool,
    stages: Vec<Qkv>,
}

impl CrissCross {
    /// `shared` reuses one Q/K/V set on every loop; otherwise each loop
    /// owns its own projections.
    pub fn init(channels: usize, loops: usize, shared: bool, seed: u64) -> Result<CrissCross> {
        if channels == 0 {
            return Err(domain_err!("attention over zero channels"));
        }
        let qk_channels = (channels / 8).max(1);
        let stage_count = if shared { 1 } else { loops.max(1) };
        let stages = (0..stage_count)
            .map(|i| Qkv::init(channels, qk_channels, rng::derive(seed, &[i as u64])))
            .collect::<Result<Vec<_>>>()?;
        Ok(CrissCross { channels, qk_channels, loops, shared, stages })
    }

    /// One zero-loop configuration is the identity map.
    pub fn forward(
        &self,
        x: &Tensor,
        collect_maps: bool,
    ) -> Result<(Tensor, Option<Vec<AttentionMap>>)> {
        if x.rank() != 3 || x.shape()[0] != self.channels {
            return Err(dim_err!(
                "attention expects [{}, F, T], got {:?}",
                self.channels,
                x.shape()
            ));
        }
        let mut out = x.clone();
        let mut maps = if collect_maps { Some(Vec::new()) } else { None };
        for l in 0..self.loops {
            let stage = if self.shared { &self.stages[0] } else { &self.stages[l] };
            let (next, map) = self.one_loop(&out, stage, collect_maps)?;
            out = next;
            if let (Some(ms), Some(m)) = (maps.as_mut(), map) {
                ms.push(m);
            }
        }
        Ok((out, maps))
    }

    fn one_loop(
        &self,
        x: &Tensor,
        stage: &Qkv,
        collect: bool,
    ) -> Result<(Tensor, Option<AttentionMap>)> {
        let (c, f_bins, frames) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let zero_qk = Tensor::zeros(&[self.qk_channels])?;
        let q = x.conv2d(&stage.q, &zero_qk, (1, 1), (0, 0))?;
        let k = x.conv2d(&stage.k, &zero_qk, (1, 1), (0, 0))?;
        let v = x.conv2d(&stage.v, &stage.v_bias, (1, 1), (0, 0))?;

        // Row affinities, one [T, T] block per frequency.
        let mut row_blocks = Vec::with_capacity(f_bins);
        for f in 0..f_bins {
            let qf = q.slice(1, f, 1)?.reshape(&[self.qk_channels, frames])?;
            let kf = k.slice(1, f, 1)?.reshape(&[self.qk_channels, frames])?;
            let aff = qf.permute(&[1, 0])?.matmul(&kf)?;
            row_blocks.push(aff.reshape(&[1, frames, frames])?);
        }
        let row = Tensor::concat(&row_blocks, 0)?; // [F, T, T]

        // Column affinities, one [F, F] block per frame.
        let mut col_blocks = Vec::with_capacity(frames);
        for t in 0..frames {
            let qt = q.slice(2, t, 1)?.reshape(&[self.qk_channels, f_bins])?;
            let kt = k.slice(2, t, 1)?.reshape(&[self.qk_channels, f_bins])?;
            let aff = qt.permute(&[1, 0])?.matmul(&kt)?;
            col_blocks.push(aff.reshape(&[1, f_bins, f_bins])?);
        }
        // [T, F, F] -> [F, T, F]
        let col = Tensor::concat(&col_blocks, 0)?.permute(&[1, 0, 2])?;

        // The column at f' == f duplicates the row's self entry; mask it
        // before the joint softmax.
        let mut mask = vec![0.0f32; f_bins * frames * (frames + f_bins)];
        for f in 0..f_bins {
            for t in 0..frames {
                mask[(f * frames + t) * (frames + f_bins) + frames + f] = MASK_VALUE;
            }
        }
        let mask = Tensor::from_vec(mask, &[f_bins, frames, frames + f_bins])?;
        let aff = Tensor::concat(&[row, col], 2)?.add(&mask)?;
        let weights = aff.softmax(2)?; // [F, T, T+F]

        let map = if collect {
            Some(extract_map(&weights, f_bins, frames))
        } else {
            None
        };

        let w_row = weights.slice(2, 0, frames)?; // [F, T, T]
        let w_col = weights.slice(2, frames, f_bins)?; // [F, T, F]

        // Row aggregation: out[c, f, t] += sum_t' w_row[f, t, t'] v[c, f, t'].
        let mut row_out = Vec::with_capacity(f_bins);
        for f in 0..f_bins {
            let wf = w_row.slice(0, f, 1)?.reshape(&[frames, frames])?;
            let vf = v.slice(1, f, 1)?.reshape(&[c, frames])?;
            let agg = wf.matmul(&vf.permute(&[1, 0])?)?; // [T, C]
            row_out.push(agg.permute(&[1, 0])?.reshape(&[c, 1, frames])?);
        }
        let row_out = Tensor::concat(&row_out, 1)?; // [C, F, T]

        // Column aggregation: out[c, f, t] += sum_f' w_col[f, t, f'] v[c, f', t].
        let mut col_out = Vec::with_capacity(frames);
        for t in 0..frames {
            let wt = w_col.slice(1, t, 1)?.reshape(&[f_bins, f_bins])?;
            let vt = v.slice(2, t, 1)?.reshape(&[c, f_bins])?;
            let agg = wt.matmul(&vt.permute(&[1, 0])?)?; // [F, C]
            col_out.push(agg.permute(&[1, 0])?.reshape(&[c, f_bins, 1])?);
        }
        let col_out = Tensor::concat(&col_out, 2)?; // [C, F, T]

        let out = x.add(&row_out)?.add(&col_out)?;
        Ok((out, map))
    }

    pub fn parameters(&self) -> NamedParams {
        if self.shared {
            return prefix(self.stages[0].parameters(), "qkv");
        }
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.extend(prefix(s.parameters(), &alloc::format!("qkv{i}")));
        }
        out
    }
}

/// Drops the masked duplicate column entry, yielding `[F, T, F + T - 1]`.
fn extract_map(weights: &Tensor, f_bins: usize, frames: usize) -> AttentionMap {
    let src = weights.to_vec();
    let width = frames + f_bins;
    let mut out = Vec::with_capacity(f_bins * frames * (width - 1));
    for f in 0..f_bins {
        for t in 0..frames {
            let base = (f * frames + t) * width;
            out.extend_from_slice(&src[base..base + frames + f]);
            out.extend_from_slice(&src[base + frames + f + 1..base + width]);
        }
    }
    AttentionMap { freq_bins: f_bins, frames, weights: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_loops_is_identity() {
        let cca = CrissCross::init(3, 0, true, 5).unwrap();
        let x = Tensor::from_vec((0..36).map(|v| v as f32).collect(), &[3, 4, 3]).unwrap();
        let (y, _) = cca.forward(&x, false).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn zero_value_projection_makes_init_an_identity() {
        let cca = CrissCross::init(4, 2, true, 6).unwrap();
        let x = Tensor::from_vec(
            (0..4 * 5 * 7).map(|v| libm::sinf(v as f32)).collect(),
            &[4, 5, 7],
        )
        .unwrap();
        let (y, _) = cca.forward(&x, false).unwrap();
        let (a, b) = (x.to_vec(), y.to_vec());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn weights_are_a_distribution_over_row_plus_column() {
        let mut cca = CrissCross::init(2, 1, true, 7).unwrap();
        // Open the value path so the map is non-trivial.
        let n = cca.stages[0].v.numel();
        cca.stages[0]
            .v
            .set_data(&(0..n).map(|i| 0.1 * (i as f32 + 1.0)).collect::<Vec<_>>())
            .unwrap();
        let (f_bins, frames) = (4, 6);
        let x = Tensor::from_vec(
            (0..2 * f_bins * frames).map(|v| libm::cosf(v as f32 * 0.3)).collect(),
            &[2, f_bins, frames],
        )
        .unwrap();
        let (_, maps) = cca.forward(&x, true).unwrap();
        let maps = maps.unwrap();
        assert_eq!(maps.len(), 1);
        let m = &maps[0];
        assert_eq!(m.weights.len(), f_bins * frames * (f_bins + frames - 1));
        for ft in 0..f_bins * frames {
            let w = &m.weights[ft * (f_bins + frames - 1)..(ft + 1) * (f_bins + frames - 1)];
            let s: f64 = w.iter().map(|&v| v as f64).sum();
            // The dropped entry is softmaxed at -1e9, i.e. weight 0.
            assert!((s - 1.0).abs() < 1e-5, "position {ft}: mass {s}");
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn unshared_loops_have_their_own_projections() {
        let shared = CrissCross::init(4, 2, true, 8).unwrap();
        let owned = CrissCross::init(4, 2, false, 8).unwrap();
        assert_eq!(shared.parameters().len(), 4);
        assert_eq!(owned.parameters().len(), 8);
    }

    #[test]
    fn information_reaches_diagonal_positions_after_two_loops() {
        // One loop only mixes the own row and column; the corner opposite
        // a lone impulse stays untouched. A second loop closes the square.
        let mut cca = CrissCross::init(1, 1, true, 9).unwrap();
        cca.stages[0].v.set_data(&[1.0]).unwrap();
        cca.stages[0].q.set_data(&[1.0]).unwrap();
        cca.stages[0].k.set_data(&[1.0]).unwrap();
        let (f_bins, frames) = (3, 3);
        let mut data = vec![0.0f32; f_bins * frames];
        data[0] = 5.0; // impulse at (f=0, t=0)
        let x = Tensor::from_vec(data, &[1, f_bins, frames]).unwrap();
        let (y1, _) = cca.forward(&x, false).unwrap();
        // Opposite corner (f=2, t=2) after one loop: only row (f=2) and
        // column (t=2) contribute, both zero-energy, so the value there is
        // unchanged aggregation of zeros.
        let one = y1.to_vec();
        let corner_one = one[2 * frames + 2];
        cca.loops = 2;
        let (y2, _) = cca.forward(&x, false).unwrap();
        let two = y2.to_vec();
        let corner_two = two[2 * frames + 2];
        assert!(
            (corner_two - corner_one).abs() > 1e-4,
            "two loops should move the far corner: {corner_one} vs {corner_two}"
        );
    }
}
