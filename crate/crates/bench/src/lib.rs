//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mlsim_core::coord::{EntityRecord, InitPayload};
use mlsim_core::{EntityId, EntityKind, InstanceId, Position, SimConfig, ToroidalWorld};

/// Desk-scale run: default model, `num_ses` entities, `timesteps` steps.
pub fn config(num_ses: usize, timesteps: u32, num_lps: usize) -> SimConfig {
    SimConfig {
        num_ses,
        total_timesteps: timesteps,
        num_lps,
        seed: 17,
        ..SimConfig::default()
    }
}

/// Uniform points in a world sized for `n` entities at the default density.
pub fn scattered(n: usize, seed: u64) -> (ToroidalWorld, Vec<Position>) {
    let world = ToroidalWorld::for_density(n, SimConfig::default().density);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| Position::new(rng.gen_range(0.0..world.width()), rng.gen_range(0.0..world.height())))
        .collect();
    (world, pts)
}

/// An INIT for one instance over a 1000 x 1000 region holding `entities`
/// pedestrians.
pub fn init(entities: usize) -> InitPayload {
    let mut rng = ChaCha8Rng::seed_from_u64(entities as u64);
    InitPayload {
        instance_id: InstanceId(0),
        seed: 5,
        grid_side: 10,
        fine_steps: 100,
        width: 1000.0,
        height: 1000.0,
        entities: (0..entities as u64)
            .map(|i| {
                let (x, y) = (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
                EntityRecord::new(EntityId(i), x, y, EntityKind::Mobile)
            })
            .collect(),
    }
}
