//! Operator surface for the speech enhancer: WAV and manifest formats,
//! run configuration, checkpointing, the toy corpus synthesizer, and the
//! mix/train/enhance/evaluate command bodies. The `mvnet` binary is a
//! thin argument parser over these.

pub mod checkpoint;
pub mod enhance;
pub mod evaluate;
pub mod fail;
pub mod manifest;
pub mod mixcmd;
pub mod runconfig;
pub mod synth;
pub mod trainer;
pub mod wav;
