//! Complex-domain speech enhancement with a built-in reverse-mode autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] — dense N-d float tensors recording a computation graph,
//!   with [`tensor::Tensor::backward`] and an [`optim::Adam`] optimizer;
//! * [`dsp`] — STFT analysis/synthesis between [`dsp::Waveform`] and
//!   [`dsp::ComplexSpectrogram`] (Hann window, weighted overlap-add);
//! * [`nn`] / [`complex`] — real and complex-valued layers (conv, batch
//!   norm, PReLU, LSTM) following the complex-multiplication rule;
//! * [`attention`] — the criss-cross memory-assistance bottleneck;
//! * [`vocal`] — the TDNN vocal-embedding branch and spectrum fusion;
//! * [`model`] — the full encoder/attention/decoder network estimating a
//!   complex ratio mask;
//! * [`loss`] / [`metrics`] / [`mix`] — training losses, evaluation
//!   metrics and SNR-controlled mixing;
//! * [`gradcheck`] — the finite-difference verification suite behind the
//!   `gradcheck` CLI command.
//!
//! Everything is deterministic: fixed reduction orders, seeded
//! initialisation, and `libm` for transcendental functions so results do
//! not depend on the host libc.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod complex;
pub mod dsp;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod mix;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod vocal;

pub use error::{Error, Result};
pub use tensor::Tensor;
