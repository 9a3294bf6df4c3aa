//! Adam optimizer with bias correction.

use alloc::{vec, vec::Vec};

use crate::{dim_err, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// First/second-moment state is kept per parameter in registration order;
/// a parameter with no gradient this step is skipped entirely (its moments
/// do not decay).
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    params: Vec<Tensor>,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, cfg: AdamConfig) -> Adam {
        let slots = params
            .iter()
            .map(|p| Slot { m: vec![0.0; p.numel()], v: vec![0.0; p.numel()] })
            .collect();
        Adam { cfg, t: 0, params, slots }
    }

    pub fn lr(&self) -> f32 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.cfg.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    pub fn step(&mut self) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.cfg.beta1 as f64, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.cfg.beta2 as f64, self.t as f64);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        for (p, slot) in self.params.iter().zip(self.slots.iter_mut()) {
            let Some(g) = p.grad() else { continue };
            let mut data = p.to_vec();
            for i in 0..data.len() {
                let gi = g[i];
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * gi;
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * gi * gi;
                let mhat = slot.m[i] as f64 / bc1;
                let vhat = slot.v[i] as f64 / bc2;
                data[i] -= (self.cfg.lr as f64 * mhat / (libm::sqrt(vhat) + self.cfg.eps as f64))
                    as f32;
            }
            p.set_data(&data)?;
        }
        Ok(())
    }

    /// Serializable optimizer state: step count plus per-parameter moment
    /// pairs in registration order.
    pub fn export_state(&self) -> (u64, Vec<(Vec<f32>, Vec<f32>)>) {
        (
            self.t,
            self.slots.iter().map(|s| (s.m.clone(), s.v.clone())).collect(),
        )
    }

    pub fn import_state(&mut self, t: u64, moments: Vec<(Vec<f32>, Vec<f32>)>) -> Result<()> {
        if moments.len() != self.slots.len() {
            return Err(dim_err!(
                "optimizer state has {} slots, expected {}",
                moments.len(),
                self.slots.len()
            ));
        }
        for (slot, (m, v)) in self.slots.iter_mut().zip(moments) {
            if m.len() != slot.m.len() || v.len() != slot.v.len() {
                return Err(dim_err!("optimizer moment extent mismatch"));
            }
            slot.m = m;
            slot.v = v;
        }
        self.t = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_a_quadratic() {
        // Minimize (x - 3)^2 + (y + 1)^2.
        let p = Tensor::param(vec![0.0, 0.0], &[2]).unwrap();
        let target = Tensor::from_vec(vec![3.0, -1.0], &[2]).unwrap();
        let mut opt = Adam::new(vec![p.clone()], AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..300 {
            opt.zero_grad();
            let d = p.sub(&target).unwrap();
            let loss = d.mul(&d).unwrap().sum(None).unwrap();
            loss.backward().unwrap();
            opt.step().unwrap();
        }
        let v = p.to_vec();
        assert!((v[0] - 3.0).abs() < 1e-2, "{v:?}");
        assert!((v[1] + 1.0).abs() < 1e-2, "{v:?}");
    }

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        // With bias correction the first update is lr * sign(g).
        for scale in [1e-3f32, 1.0, 1e3] {
            let p = Tensor::param(vec![0.0], &[1]).unwrap();
            let c = Tensor::scalar(scale);
            let mut opt = Adam::new(vec![p.clone()], AdamConfig::default());
            let loss = p.mul(&c).unwrap().sum(None).unwrap();
            loss.backward().unwrap();
            opt.step().unwrap();
            let v = p.to_vec()[0];
            assert!((v + 1e-3).abs() < 1e-7, "scale {scale}: {v}");
        }
    }

    #[test]
    fn state_round_trip_is_exact() {
        let p = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let mut opt = Adam::new(vec![p.clone()], AdamConfig::default());
        for _ in 0..3 {
            opt.zero_grad();
            let loss = p.mul(&p).unwrap().sum(None).unwrap();
            loss.backward().unwrap();
            opt.step().unwrap();
        }
        let (t, st) = opt.export_state();
        let mut opt2 = Adam::new(vec![p.clone()], AdamConfig::default());
        opt2.import_state(t, st).unwrap();
        let (t2, st2) = opt2.export_state();
        assert_eq!(t, t2);
        assert_eq!(opt.export_state().1, st2);
    }
}
