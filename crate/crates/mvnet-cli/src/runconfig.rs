//! Run configuration: a flat UTF-8 key=value file shared by every command.
//!
//! Unknown keys are rejected rather than ignored so a typo cannot silently
//! run with defaults. The fully resolved configuration (defaults included)
//! is echoed into each command's output directory before any work starts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mvnet_core::loss::LossConfig;
use mvnet_core::model::ModelConfig;

use crate::fail::{input, Fail};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// SI-SNR term plus the similarity term.
    Joint,
    /// SI-SNR term alone.
    SiSnr,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Joint => "joint",
            LossMode::SiSnr => "si_snr",
        }
    }

    fn parse(v: &str) -> Result<LossMode, Fail> {
        match v {
            "joint" => Ok(LossMode::Joint),
            "si_snr" => Ok(LossMode::SiSnr),
            other => Err(input(format!("unknown loss.mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub loss_mode: LossMode,
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub crop_seconds: f64,
    pub train_manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub peak_limit: f32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            loss_mode: LossMode::Joint,
            lr: 0.001,
            epochs: 20,
            batch_size: 1,
            crop_seconds: 3.0,
            train_manifest: None,
            valid_manifest: None,
            snr_lo: -15.0,
            snr_hi: 5.0,
            peak_limit: 1.0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, Fail> {
    v.parse().map_err(|_| input(format!("invalid value '{v}' for {key}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, Fail> {
        let text = fs::read_to_string(path)
            .map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(input(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    ln + 1
                )));
            };
            cfg.apply(k.trim(), v.trim()).map_err(|e| {
                input(format!("{}:{}: {}", path.display(), ln + 1, e.msg))
            })?;
        }
        cfg.model.validate().map_err(Fail::from)?;
        if cfg.snr_lo > cfg.snr_hi {
            return Err(input(format!(
                "mix.snr_lo {} exceeds mix.snr_hi {}",
                cfg.snr_lo, cfg.snr_hi
            )));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(input("train.epochs and train.batch_size must be positive"));
        }
        if !(cfg.crop_seconds > 0.0) {
            return Err(input("train.crop_seconds must be positive"));
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), Fail> {
        if let Some(mk) = key.strip_prefix("model.") {
            return self.model.apply(mk, value).map_err(Fail::from);
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "loss.mode" => self.loss_mode = LossMode::parse(value)?,
            "loss.alpha" => self.loss.alpha = num(key, value)?,
            "loss.delta" => self.loss.delta = num(key, value)?,
            "loss.zero_mean" => self.loss.zero_mean = num(key, value)?,
            "loss.si_snr_clamp_db" => self.loss.si_snr_clamp_db = num(key, value)?,
            "train.lr" => self.lr = num(key, value)?,
            "train.epochs" => self.epochs = num(key, value)?,
            "train.batch_size" => self.batch_size = num(key, value)?,
            "train.crop_seconds" => self.crop_seconds = num(key, value)?,
            "data.train_manifest" => self.train_manifest = Some(PathBuf::from(value)),
            "data.valid_manifest" => self.valid_manifest = Some(PathBuf::from(value)),
            "mix.snr_lo" => self.snr_lo = num(key, value)?,
            "mix.snr_hi" => self.snr_hi = num(key, value)?,
            "mix.clip_policy" => {
                if value != "rescale_peak" {
                    return Err(input(format!("unknown mix.clip_policy '{value}'")));
                }
            }
            "mix.peak_limit" => self.peak_limit = num(key, value)?,
            other => return Err(input(format!("unknown option '{other}'"))),
        }
        Ok(())
    }

    /// Full resolved key=value text, stable order, defaults included.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        for (k, v) in self.model.to_pairs() {
            let _ = writeln!(s, "model.{k}={v}");
        }
        let _ = writeln!(s, "loss.mode={}", self.loss_mode.as_str());
        let _ = writeln!(s, "loss.alpha={}", self.loss.alpha);
        let _ = writeln!(s, "loss.delta={}", self.loss.delta);
        let _ = writeln!(s, "loss.zero_mean={}", self.loss.zero_mean);
        let _ = writeln!(s, "loss.si_snr_clamp_db={}", self.loss.si_snr_clamp_db);
        let _ = writeln!(s, "train.lr={}", self.lr);
        let _ = writeln!(s, "train.epochs={}", self.epochs);
        let _ = writeln!(s, "train.batch_size={}", self.batch_size);
        let _ = writeln!(s, "train.crop_seconds={}", self.crop_seconds);
        if let Some(p) = &self.train_manifest {
            let _ = writeln!(s, "data.train_manifest={}", p.display());
        }
        if let Some(p) = &self.valid_manifest {
            let _ = writeln!(s, "data.valid_manifest={}", p.display());
        }
        let _ = writeln!(s, "mix.snr_lo={}", self.snr_lo);
        let _ = writeln!(s, "mix.snr_hi={}", self.snr_hi);
        let _ = writeln!(s, "mix.clip_policy=rescale_peak");
        let _ = writeln!(s, "mix.peak_limit={}", self.peak_limit);
        s
    }

    /// Writes the resolved config into `dir` before a command does work.
    pub fn echo_into(&self, dir: &Path) -> Result<(), Fail> {
        fs::create_dir_all(dir)
            .map_err(|e| input(format!("cannot create {}: {e}", dir.display())))?;
        crate::wav::atomic_write(&dir.join("config.resolved"), self.render().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_render() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, RunConfig::default().render()).unwrap();
        assert_eq!(RunConfig::load(&p).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "learning_rate=0.1\n").unwrap();
        let e = RunConfig::load(&p).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.msg.contains("unknown option"), "{}", e.msg);
    }

    #[test]
    fn unknown_model_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "model.depth=9\n").unwrap();
        assert_eq!(RunConfig::load(&p).unwrap_err().code, 2);
    }

    #[test]
    fn comments_and_overrides_apply() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(
            &p,
            "# toy run\nseed=9\ntrain.epochs=3   # short\nmodel.channels=4,8\nloss.mode=si_snr\n",
        )
        .unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.model.channels, vec![4, 8]);
        assert_eq!(c.loss_mode, LossMode::SiSnr);
    }

    #[test]
    fn inverted_snr_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "mix.snr_lo=6\nmix.snr_hi=-2\n").unwrap();
        assert_eq!(RunConfig::load(&p).unwrap_err().code, 2);
    }
}
