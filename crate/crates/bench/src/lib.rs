//! Shared fixtures for the benchmark targets.

use tripletgen::data::ToyWorldConfig;
use tripletgen::diffusion::{DenoiserConfig, DenoiserVariant};

pub fn desk_base_config(vocab_size: usize) -> DenoiserConfig {
    DenoiserConfig {
        variant: DenoiserVariant::Base,
        image_size: 16,
        base_channels: 16,
        channel_mults: vec![1, 2],
        blocks_per_level: 1,
        attention_levels: vec![1],
        text_dim: 64,
        time_dim: 64,
        l_max: 8,
        vocab_size,
        text_conditioned: true,
    }
}

pub fn desk_toy_config() -> ToyWorldConfig {
    ToyWorldConfig { image_size: 16, noise_level: 0.02, ..Default::default() }
}
