//! Checkpoint files.
//!
//! Layout: magic `MVNT`, format version u32 (little-endian, currently 1),
//! a count-prefixed table of named tensors for the model (parameters then
//! batch-norm buffers), a second table in the same encoding for optimizer
//! and trainer state, then the model configuration as a length-prefixed
//! UTF-8 key=value block. Each tensor entry is name length, name bytes,
//! rank, extents, then raw f32 little-endian data. Floats round-trip via
//! their bit patterns so saving and loading is exact.

use std::path::Path;

use mvnet_core::model::{ModelConfig, MvNet};
use mvnet_core::optim::Adam;

use crate::fail::{input, Fail};

const MAGIC: &[u8; 4] = b"MVNT";
const VERSION: u32 = 1;

/// Trainer bookkeeping carried inside the optimizer table. Scalars are
/// held as f32 so what a resumed run compares is bit-identical to what
/// the interrupted run compared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainState {
    pub epoch: u32,
    pub lr: f32,
    pub best_si_snri: f32,
    pub prev_val_loss: f32,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            epoch: 0,
            lr: 0.0,
            best_si_snri: f32::NEG_INFINITY,
            prev_val_loss: f32::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Vec<Entry>,
    pub opt: Vec<Entry>,
    pub config: Vec<(String, String)>,
}

fn push_table(out: &mut Vec<u8>, table: &[Entry]) {
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for e in table {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Fail> {
        if self.at + n > self.buf.len() {
            return Err(input(format!("{}: truncated checkpoint", self.what)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, Fail> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn table(&mut self) -> Result<Vec<Entry>, Fail> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = self.u32()? as usize;
            let name = String::from_utf8(self.take(name_len)?.to_vec())
                .map_err(|_| input(format!("{}: non-UTF-8 tensor name", self.what)))?;
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = self.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.push(Entry { name, shape, data });
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<(), Fail> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        push_table(&mut out, &self.model);
        push_table(&mut out, &self.opt);
        let mut cfg = String::new();
        for (k, v) in &self.config {
            cfg.push_str(k);
            cfg.push('=');
            cfg.push_str(v);
            cfg.push('\n');
        }
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        crate::wav::atomic_write(path, &out)
    }

    pub fn read(path: &Path) -> Result<Checkpoint, Fail> {
        let buf = std::fs::read(path)
            .map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
        let what = path.display().to_string();
        let mut r = Reader { buf: &buf, at: 0, what: &what };
        if r.take(4)? != MAGIC {
            return Err(input(format!("{what}: not a checkpoint (bad magic)")));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(input(format!(
                "{what}: unsupported checkpoint version {version} (this build reads {VERSION})"
            )));
        }
        let model = r.table()?;
        let opt = r.table()?;
        let cfg_len = r.u32()? as usize;
        let cfg_text = String::from_utf8(r.take(cfg_len)?.to_vec())
            .map_err(|_| input(format!("{what}: non-UTF-8 config block")))?;
        if r.at != buf.len() {
            return Err(input(format!("{what}: trailing bytes after config block")));
        }
        let mut config = Vec::new();
        for line in cfg_text.lines() {
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(input(format!("{what}: malformed config line {line:?}")));
            };
            config.push((k.to_string(), v.to_string()));
        }
        Ok(Checkpoint { model, opt, config })
    }

    pub fn model_config(&self) -> Result<ModelConfig, Fail> {
        ModelConfig::from_pairs(&self.config).map_err(Fail::from)
    }

    fn scalar(&self, name: &str) -> Result<f32, Fail> {
        let e = find(&self.opt, name)
            .ok_or_else(|| input(format!("checkpoint missing {name}")))?;
        if e.data.len() != 1 {
            return Err(input(format!("checkpoint entry {name} is not a scalar")));
        }
        Ok(e.data[0])
    }

    pub fn train_state(&self) -> Result<TrainState, Fail> {
        Ok(TrainState {
            epoch: self.scalar("train.epoch")? as u32,
            lr: self.scalar("train.lr")?,
            best_si_snri: self.scalar("train.best_si_snri")?,
            prev_val_loss: self.scalar("train.prev_val_loss")?,
        })
    }
}

fn find<'a>(table: &'a [Entry], name: &str) -> Option<&'a Entry> {
    table.iter().find(|e| e.name == name)
}

fn scalar_entry(name: &str, v: f32) -> Entry {
    Entry { name: name.into(), shape: vec![1], data: vec![v] }
}

/// Step counts are split into two f32-exact halves (below and above 2^24)
/// so the u64 round-trips exactly through the all-f32 table encoding.
fn encode_steps(t: u64) -> Entry {
    let hi = (t >> 24) as f32;
    let lo = (t & 0xff_ffff) as f32;
    Entry { name: "adam.steps".into(), shape: vec![2], data: vec![hi, lo] }
}

fn decode_steps(e: &Entry) -> Result<u64, Fail> {
    if e.data.len() != 2 {
        return Err(input("checkpoint entry adam.steps malformed"));
    }
    Ok(((e.data[0] as u64) << 24) | (e.data[1] as u64))
}

/// Snapshots model, optimizer, and trainer progress into one file.
pub fn save(
    path: &Path,
    net: &MvNet,
    opt: &Adam,
    state: TrainState,
) -> Result<(), Fail> {
    let mut model = Vec::new();
    let named: Vec<(String, mvnet_core::Tensor)> =
        net.parameters().into_iter().chain(net.buffers()).collect();
    for (name, t) in &named {
        model.push(Entry { name: name.clone(), shape: t.shape().to_vec(), data: t.to_vec() });
    }

    let (steps, moments) = opt.export_state();
    let mut opt_table = Vec::new();
    for ((name, t), (m, v)) in net.parameters().iter().zip(moments) {
        let shape = t.shape().to_vec();
        opt_table.push(Entry { name: format!("adam.m.{name}"), shape: shape.clone(), data: m });
        opt_table.push(Entry { name: format!("adam.v.{name}"), shape, data: v });
    }
    opt_table.push(encode_steps(steps));
    opt_table.push(scalar_entry("train.epoch", state.epoch as f32));
    opt_table.push(scalar_entry("train.lr", state.lr));
    opt_table.push(scalar_entry("train.best_si_snri", state.best_si_snri));
    opt_table.push(scalar_entry("train.prev_val_loss", state.prev_val_loss));

    let ckpt = Checkpoint {
        model,
        opt: opt_table,
        config: net.cfg.to_pairs(),
    };
    ckpt.write(path)
}

/// Builds the network a checkpoint describes and loads its weights.
pub fn load_model(ckpt: &Checkpoint) -> Result<MvNet, Fail> {
    let cfg = ckpt.model_config()?;
    let net = MvNet::init(&cfg, 0).map_err(Fail::from)?;
    restore_model(ckpt, &net)?;
    Ok(net)
}

/// Copies checkpoint tensors into an already-built network. Every named
/// tensor must be present with the stored extents.
pub fn restore_model(ckpt: &Checkpoint, net: &MvNet) -> Result<(), Fail> {
    let named: Vec<(String, mvnet_core::Tensor)> =
        net.parameters().into_iter().chain(net.buffers()).collect();
    if named.len() != ckpt.model.len() {
        return Err(input(format!(
            "checkpoint holds {} tensors, model needs {}",
            ckpt.model.len(),
            named.len()
        )));
    }
    for (name, t) in named {
        let e = find(&ckpt.model, &name)
            .ok_or_else(|| input(format!("checkpoint missing tensor {name}")))?;
        if e.shape != t.shape() {
            return Err(input(format!(
                "checkpoint tensor {name} has extents {:?}, model needs {:?}",
                e.shape,
                t.shape()
            )));
        }
        t.set_data(&e.data).map_err(Fail::from)?;
    }
    Ok(())
}

/// Restores Adam moments and step count saved by [`save`].
pub fn restore_optimizer(ckpt: &Checkpoint, net: &MvNet, opt: &mut Adam) -> Result<(), Fail> {
    let steps_entry = find(&ckpt.opt, "adam.steps")
        .ok_or_else(|| input("checkpoint missing adam.steps"))?;
    let steps = decode_steps(steps_entry)?;
    let mut moments = Vec::new();
    for (name, _) in net.parameters() {
        let m = find(&ckpt.opt, &format!("adam.m.{name}"))
            .ok_or_else(|| input(format!("checkpoint missing adam.m.{name}")))?;
        let v = find(&ckpt.opt, &format!("adam.v.{name}"))
            .ok_or_else(|| input(format!("checkpoint missing adam.v.{name}")))?;
        moments.push((m.data.clone(), v.data.clone()));
    }
    opt.import_state(steps, moments).map_err(Fail::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arbitrary_floats() -> Vec<f32> {
        vec![0.0, -0.0, 1.5, -3.25e-12, 3.4e38, f32::MIN_POSITIVE, 1.0 + f32::EPSILON]
    }

    #[test]
    fn tables_round_trip_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let ck = Checkpoint {
            model: vec![
                Entry { name: "w".into(), shape: vec![7], data: arbitrary_floats() },
                Entry { name: "b".into(), shape: vec![1], data: vec![-2.5] },
            ],
            opt: vec![encode_steps(12345), scalar_entry("train.lr", 1e-3)],
            config: vec![("win_len".into(), "400".into())],
        };
        ck.write(&p).unwrap();
        let back = Checkpoint::read(&p).unwrap();
        assert_eq!(back.model.len(), 2);
        for (a, b) in ck.model.iter().zip(&back.model) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(back.config, ck.config);
        assert_eq!(decode_steps(&back.opt[0]).unwrap(), 12345);
    }

    #[test]
    fn step_split_is_exact_at_large_counts() {
        for t in [0u64, 1, 16_777_215, 16_777_216, 1 << 40, (1 << 48) - 1] {
            assert_eq!(decode_steps(&encode_steps(t)).unwrap(), t);
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v9.ckpt");
        let mut b = Vec::new();
        b.extend_from_slice(b"MVNT");
        b.extend_from_slice(&9u32.to_le_bytes());
        std::fs::write(&p, &b).unwrap();
        let e = Checkpoint::read(&p).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.msg.contains("version 9"), "{}", e.msg);
    }

    #[test]
    fn truncation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        let ck = Checkpoint {
            model: vec![Entry { name: "w".into(), shape: vec![4], data: vec![1.0; 4] }],
            opt: vec![],
            config: vec![],
        };
        ck.write(&p).unwrap();
        let full = std::fs::read(&p).unwrap();
        std::fs::write(&p, &full[..full.len() - 3]).unwrap();
        assert!(Checkpoint::read(&p).unwrap_err().msg.contains("truncated"));
    }

    #[test]
    fn network_save_restore_is_exact() {
        use mvnet_core::model::{ModelConfig, MvNet};
        use mvnet_core::optim::{Adam, AdamConfig};
        let cfg = ModelConfig {
            channels: vec![2, 4],
            fft_len: 64,
            win_len: 48,
            hop: 16,
            lstm_hidden: 8,
            lstm_layers: 1,
            embed_dim: 4,
            tdnn_channels: [6, 6, 6, 6, 6],
            ..ModelConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let net = MvNet::init(&cfg, 11).unwrap();
        let opt = Adam::new(
            net.parameters().into_iter().map(|(_, t)| t).collect(),
            AdamConfig::default(),
        );
        let st = TrainState { epoch: 3, lr: 5e-4, best_si_snri: 2.25, prev_val_loss: -1.5 };
        save(&p, &net, &opt, st).unwrap();

        let ck = Checkpoint::read(&p).unwrap();
        assert_eq!(ck.train_state().unwrap(), st);
        let restored = load_model(&ck).unwrap();
        assert_eq!(restored.cfg, cfg);
        for ((an, a), (bn, b)) in net
            .parameters()
            .into_iter()
            .chain(net.buffers())
            .zip(restored.parameters().into_iter().chain(restored.buffers()))
        {
            assert_eq!(an, bn);
            let av: Vec<u32> = a.to_vec().iter().map(|v| v.to_bits()).collect();
            let bv: Vec<u32> = b.to_vec().iter().map(|v| v.to_bits()).collect();
            assert_eq!(av, bv, "{an}");
        }
    }
}
