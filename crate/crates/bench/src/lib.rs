//! Shared workloads for the criterion benches.

use metafl_core::datagen::{generate_synthetic, partition, ClientShard};
use metafl_core::rng::Rng;
use metafl_core::{ClientId, ClientUpdate, HeterogeneitySpec, ModelParams, Shape};

/// `n` random updates of shape `(classes, features)`, seeded.
pub fn random_updates(n: usize, classes: usize, features: usize, seed: u64) -> Vec<ClientUpdate> {
    let shape = Shape::new(classes, features).expect("non-zero shape");
    let mut rng = Rng::new(seed, 0);
    (0..n)
        .map(|i| {
            let values = (0..shape.len())
                .map(|_| (rand_unit(&mut rng) - 0.5) * 0.2)
                .collect();
            let delta = ModelParams::new(shape, values).expect("finite values");
            ClientUpdate::new(ClientId(i), delta, 50, 1.0).expect("valid update")
        })
        .collect()
}

fn rand_unit(rng: &mut Rng) -> f64 {
    use metafl_core::rng::RngCore;
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Synthetic shards for local-training benches.
pub fn shards(
    classes: usize,
    features: usize,
    per_class: usize,
    clients: usize,
) -> Vec<ClientShard> {
    let data = generate_synthetic(classes, features, per_class, 0.5, &mut Rng::new(1, 0))
        .expect("valid dataset");
    partition(
        &data,
        clients,
        &HeterogeneitySpec::iid(),
        &mut Rng::new(1, 1),
    )
    .expect("valid partition")
}
