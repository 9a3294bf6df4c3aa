//! The train command: seeded, single-threaded, resumable bit for bit.
//!
//! Every stochastic choice is drawn from a stream keyed by (seed, purpose,
//! epoch[, utterance]), never from mutable RNG state carried across
//! epochs. Combined with exact checkpointing of parameters, batch-norm
//! buffers, Adam moments, and the learning-rate schedule, an interrupted
//! run resumed from `last.ckpt` replays the identical arithmetic.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use mvnet_core::loss::{self, LossConfig};
use mvnet_core::model::MvNet;
use mvnet_core::optim::{Adam, AdamConfig};
use mvnet_core::tensor::NoGradGuard;
use mvnet_core::{metrics, rng, Tensor};
use rand::RngCore;

use crate::checkpoint::{self, Checkpoint, TrainState};
use crate::fail::{input, run, Fail};
use crate::manifest;
use crate::runconfig::{LossMode, RunConfig};
use crate::wav;

struct Utterance {
    id: String,
    noisy: Vec<f32>,
    clean: Vec<f32>,
}

fn load_set(path: &Path) -> Result<Vec<Utterance>, Fail> {
    let rows = manifest::read(path)?;
    rows.into_iter()
        .map(|r| {
            let noisy = wav::read(&r.noisy)?;
            let clean = wav::read(&r.clean)?;
            if noisy.len() != clean.len() {
                return Err(input(format!(
                    "{}: clean and noisy lengths differ ({} vs {})",
                    r.id,
                    clean.len(),
                    noisy.len()
                )));
            }
            Ok(Utterance { id: r.id, noisy, clean })
        })
        .collect()
}

/// Largest window-aligned length not exceeding `seconds`.
fn crop_len(cfg: &RunConfig) -> usize {
    let want = (cfg.crop_seconds * cfg.model.sample_rate as f64) as usize;
    let win = cfg.model.win_len;
    let hop = cfg.model.hop;
    if want <= win {
        return win;
    }
    win + ((want - win) / hop) * hop
}

/// Fixed-length training view: slice at `start`, tiling circularly when
/// the utterance is shorter than the crop.
fn window_pair(u: &Utterance, len: usize, start: usize) -> (Vec<f32>, Vec<f32>) {
    let n = u.noisy.len();
    if n < len {
        let take = |src: &[f32]| (0..len).map(|i| src[i % n]).collect();
        return (take(&u.noisy), take(&u.clean));
    }
    let start = start.min(n - len);
    (
        u.noisy[start..start + len].to_vec(),
        u.clean[start..start + len].to_vec(),
    )
}

/// One epoch visits every crop-sized window of every utterance once:
/// each utterance contributes its non-overlapping windows, shifted as a
/// group by a seeded phase inside the leftover samples, and the whole
/// collection is shuffled so consecutive steps mix utterances.
fn epoch_steps(set: &[Utterance], len: usize, seed: u64, epoch: usize) -> Vec<(usize, usize)> {
    let mut steps = Vec::new();
    for (idx, u) in set.iter().enumerate() {
        let n = u.noisy.len();
        let windows = (n / len).max(1);
        let slack = n.saturating_sub(windows * len);
        let draw = rng::stream(seed, &[11, epoch as u64, idx as u64]).next_u64();
        let phase = (draw % (slack + 1) as u64) as usize;
        for w in 0..windows {
            steps.push((idx, phase + w * len));
        }
    }
    let order = rng::shuffled_indices(steps.len(), &mut rng::stream(seed, &[10, epoch as u64]));
    order.into_iter().map(|i| steps[i]).collect()
}

fn item_loss(
    net: &MvNet,
    noisy: &[f32],
    clean: &[f32],
    mode: LossMode,
    lc: &LossConfig,
) -> Result<(Tensor, f32), Fail> {
    let noisy_t = Tensor::from_vec(noisy.to_vec(), &[noisy.len()]).map_err(Fail::from)?;
    let clean_t = Tensor::from_vec(clean.to_vec(), &[clean.len()]).map_err(Fail::from)?;
    let out = net.enhance_training(&noisy_t, None, true).map_err(Fail::from)?;
    let total = match mode {
        LossMode::Joint => loss::joint_loss(&out.enhanced, &clean_t, lc).map_err(Fail::from)?.total,
        LossMode::SiSnr => loss::si_snr_loss(&out.enhanced, &clean_t, lc).map_err(Fail::from)?,
    };
    let value = total.item().map_err(Fail::from)?;
    Ok((total, value))
}

/// Names the first parameter group carrying a non-finite gradient (or
/// value), which is the diagnostic a NaN abort prints.
fn first_non_finite(net: &MvNet) -> Option<String> {
    for (name, t) in net.parameters() {
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Some(name);
            }
        }
        if t.to_vec().iter().any(|v| !v.is_finite()) {
            return Some(name);
        }
    }
    None
}

fn validate(
    net: &MvNet,
    set: &[Utterance],
    mode: LossMode,
    lc: &LossConfig,
) -> Result<(f64, f64), Fail> {
    let _guard = NoGradGuard::new();
    let mut loss_sum = 0.0f64;
    let mut snri_sum = 0.0f64;
    for u in set {
        let enhanced = net.enhance_waveform(&u.noisy).map_err(Fail::from)?;
        // The loss is a function of the enhanced waveform, so it can be
        // scored from the inference output without a second forward.
        let est = Tensor::from_vec(enhanced.clone(), &[enhanced.len()]).map_err(Fail::from)?;
        let cln = Tensor::from_vec(u.clean.clone(), &[u.clean.len()]).map_err(Fail::from)?;
        let mut v = loss::si_snr_loss(&est, &cln, lc)
            .and_then(|t| t.item())
            .map_err(Fail::from)? as f64;
        if mode == LossMode::Joint {
            v += loss::similarity_loss(&est, &cln, lc)
                .and_then(|t| t.item())
                .map_err(Fail::from)? as f64;
        }
        loss_sum += v;
        snri_sum += metrics::si_snr_improvement_db(&enhanced, &u.noisy, &u.clean);
    }
    let n = set.len() as f64;
    Ok((loss_sum / n, snri_sum / n))
}

pub fn run_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<(), Fail> {
    cfg.echo_into(out)?;
    let train_path = cfg
        .train_manifest
        .as_ref()
        .ok_or_else(|| input("config sets no data.train_manifest"))?;
    let valid_path = cfg
        .valid_manifest
        .as_ref()
        .ok_or_else(|| input("config sets no data.valid_manifest"))?;
    let train_set = load_set(train_path)?;
    let valid_set = load_set(valid_path)?;

    let net = MvNet::init(&cfg.model, cfg.seed).map_err(Fail::from)?;
    let mut opt = Adam::new(
        net.parameters().into_iter().map(|(_, t)| t).collect(),
        AdamConfig { lr: cfg.lr, ..AdamConfig::default() },
    );
    let mut state = TrainState {
        epoch: 0,
        lr: cfg.lr,
        ..TrainState::default()
    };

    if let Some(ckpt_path) = resume {
        let ckpt = Checkpoint::read(ckpt_path)?;
        let saved_cfg = ckpt.model_config()?;
        if saved_cfg != cfg.model {
            return Err(input(format!(
                "checkpoint {} was trained with a different model configuration",
                ckpt_path.display()
            )));
        }
        checkpoint::restore_model(&ckpt, &net)?;
        checkpoint::restore_optimizer(&ckpt, &net, &mut opt)?;
        state = ckpt.train_state()?;
        opt.set_lr(state.lr);
        println!("resumed from {} at epoch {}", ckpt_path.display(), state.epoch);
    }

    if state.epoch as usize >= cfg.epochs {
        println!("nothing to do: checkpoint already at epoch {}", state.epoch);
        return Ok(());
    }

    let clen = crop_len(cfg);
    let mut log = String::new();
    println!(
        "training {} parameters on {} utterances ({} validation), crop {} samples",
        net.parameter_count(),
        train_set.len(),
        valid_set.len(),
        clen
    );

    for epoch in state.epoch as usize..cfg.epochs {
        let order = rng::shuffled_indices(
            train_set.len(),
            &mut rng::stream(cfg.seed, &[10, epoch as u64]),
        );
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            opt.zero_grad();
            for &idx in chunk {
                let u = &train_set[idx];
                let draw = rng::stream(cfg.seed, &[11, epoch as u64, idx as u64]).next_u64();
                let (noisy, clean) = crop_pair(u, clen, draw);
                let (total, value) =
                    item_loss(&net, &noisy, &clean, cfg.loss_mode, &cfg.loss)?;
                let scaled = if chunk.len() > 1 {
                    total.mul_scalar(1.0 / chunk.len() as f32).map_err(Fail::from)?
                } else {
                    total
                };
                scaled.backward().map_err(Fail::from)?;
                if !value.is_finite() {
                    let group = first_non_finite(&net).unwrap_or_else(|| u.id.clone());
                    return Err(run(format!(
                        "loss became non-finite at epoch {} on {} (first affected parameter group: {group})",
                        epoch + 1,
                        u.id
                    )));
                }
                loss_sum += value as f64;
            }
            opt.step().map_err(Fail::from)?;
        }
        if let Some(group) = first_non_finite(&net) {
            return Err(run(format!(
                "parameters became non-finite after epoch {} (first affected parameter group: {group})",
                epoch + 1
            )));
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let (val_loss, val_si_snri) = validate(&net, &valid_set, cfg.loss_mode, &cfg.loss)?;
        let lr_used = opt.lr();
        let line = format!(
            "epoch {:3}  train_loss {:.6}  val_loss {:.6}  val_si_snri {:.6}  lr {:.8}",
            epoch + 1,
            train_loss,
            val_loss,
            val_si_snri,
            lr_used
        );
        println!("{line}");
        let _ = writeln!(log, "{line}");

        // Schedule: halve the rate for the NEXT epoch when validation
        // loss went up; the comparison value is carried as f32 so a
        // resumed run compares exactly what this run compared.
        let val_loss_f32 = val_loss as f32;
        if val_loss_f32 > state.prev_val_loss {
            opt.set_lr(lr_used * 0.5);
        }
        state.prev_val_loss = val_loss_f32;
        state.lr = opt.lr();
        state.epoch = (epoch + 1) as u32;

        let val_si_snri_f32 = val_si_snri as f32;
        if val_si_snri_f32 > state.best_si_snri {
            state.best_si_snri = val_si_snri_f32;
            checkpoint::save(&out.join("best.ckpt"), &net, &opt, state)?;
        }
        checkpoint::save(&out.join("last.ckpt"), &net, &opt, state)?;
        append_log(&out.join("train.log"), &log)?;
        log.clear();
    }

    println!(
        "done: best val si_snri {:.4} dB, checkpoints in {}",
        state.best_si_snri,
        out.display()
    );
    Ok(())
}

fn append_log(path: &Path, text: &str) -> Result<(), Fail> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| input(format!("cannot open {}: {e}", path.display())))?;
    f.write_all(text.as_bytes())
        .map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_lengths_are_window_aligned() {
        let mut cfg = RunConfig::default();
        cfg.crop_seconds = 1.0;
        assert_eq!(crop_len(&cfg), 16000);
        cfg.crop_seconds = 0.9971;
        let l = crop_len(&cfg);
        assert_eq!((l - 400) % 100, 0);
        assert!(l <= 15953);
        cfg.crop_seconds = 0.01;
        assert_eq!(crop_len(&cfg), 400);
    }

    #[test]
    fn short_utterances_tile_instead_of_failing() {
        let u = Utterance {
            id: "x".into(),
            noisy: vec![1.0, 2.0, 3.0],
            clean: vec![4.0, 5.0, 6.0],
        };
        let (n, c) = crop_pair(&u, 7, 9);
        assert_eq!(n, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
        assert_eq!(c, vec![4.0, 5.0, 6.0, 4.0, 5.0, 6.0, 4.0]);
    }

    #[test]
    fn crops_stay_in_bounds_and_depend_on_the_draw() {
        let u = Utterance {
            id: "x".into(),
            noisy: (0..100).map(|i| i as f32).collect(),
            clean: (0..100).map(|i| -(i as f32)).collect(),
        };
        let (a, _) = crop_pair(&u, 40, 0);
        let (b, _) = crop_pair(&u, 40, 17);
        assert_eq!(a.len(), 40);
        assert_eq!(b.len(), 40);
        assert_eq!(a[0], 0.0);
        assert_eq!(b[0], 17.0);
    }
}
