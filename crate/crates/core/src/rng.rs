//! Seed derivation.
//!
//! Every run hangs off one master seed. Each consumer (data generation,
//! dataset split, parameter init, rollout sampling, ...) draws from its own
//! derived stream so that, e.g., changing the number of RL steps never
//! perturbs the generated dataset. Streams are indexed so per-episode /
//! per-step generators are independent of iteration order, which is what
//! makes multi-worker rollout fan-out bit-identical to the sequential path.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Data = 1,
    Split = 2,
    Init = 3,
    Rollout = 4,
    Curriculum = 5,
    SftShuffle = 6,
    GradCheck = 7,
}

/// splitmix64 finalizer; good avalanche, cheap, stable.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent generator for (master, purpose, index).
pub fn stream(master: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let a = mix(master ^ mix(purpose as u64));
    let b = mix(a ^ mix(index));
    let c = mix(b.wrapping_add(0x6a09_e667_f3bc_c908));
    let d = mix(c.wrapping_add(0xbb67_ae85_84ca_a73b));
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&a.to_le_bytes());
    seed[8..16].copy_from_slice(&b.to_le_bytes());
    seed[16..24].copy_from_slice(&c.to_le_bytes());
    seed[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}
