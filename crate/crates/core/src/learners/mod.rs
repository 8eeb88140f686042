//! Toy layered models, LoRA adapters and the local optimizers.

pub mod checkpoint;
mod clip;
pub mod lora;
mod model;
mod optim;
mod params;
pub mod shampoo;

pub use clip::{clip_slice, GradClip};
pub use lora::{lora_attach, lora_attach_named, lora_merge, lora_param_count, LoraAdapter, LoraConfig};
pub use model::{Layer, LayeredModel};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{mean, Param, ParamSet};
pub use shampoo::{ShampooConfig, ShampooState};
