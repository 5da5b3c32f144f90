#![allow(dead_code)]

use bsbl::experiments::{gen_gaussian_matrix, rng_for};
use bsbl::{BlockPartition, MeasurementSystem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random block-sparse problem with Gaussian design and small noise.
pub struct Instance {
    pub system: MeasurementSystem,
    pub partition: BlockPartition,
    pub x: DVector<f64>,
}

/// Random partition of `n` into blocks of size `1..=max_d`.
pub fn random_partition(n: usize, max_d: usize, rng: &mut impl Rng) -> BlockPartition {
    let mut sizes = Vec::new();
    let mut left = n;
    while left > 0 {
        let d = rng.random_range(1..=max_d.min(left));
        sizes.push(d);
        left -= d;
    }
    BlockPartition::new(sizes).unwrap()
}

pub fn random_instance(seed: u64, max_m: usize, max_n: usize, max_d: usize) -> Instance {
    let mut rng = rng_for(seed);
    // Every block needs full column rank, so keep M well above the block size.
    let n = rng.random_range((2 * max_d).max(4)..=max_n);
    let m = rng.random_range((2 * max_d).min(max_m)..=max_m.min(n));
    let partition = random_partition(n, max_d, &mut rng);
    let phi = gen_gaussian_matrix(m, n, seed ^ 0x5eed) / (m as f64).sqrt();
    let g = partition.num_blocks();
    let mut x = DVector::zeros(n);
    let k = rng.random_range(1..=g.min(3));
    for _ in 0..k {
        let b = rng.random_range(0..g);
        for j in partition.range(b) {
            x[j] = rng.random_range(-2.0..2.0);
        }
    }
    let noise = DVector::from_fn(m, |_, _| rng.random_range(-0.01..0.01));
    let y = &phi * &x + noise;
    let beta = rng.random_range(10.0..1e3);
    Instance {
        system: MeasurementSystem::new(phi, y, beta).unwrap(),
        partition,
        x,
    }
}

/// Dense posterior `(Γ⁻¹ + βΦ_aᵀΦ_a)⁻¹` via explicit inverses.
pub fn dense_posterior(
    phi_a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let precision = gamma.clone().try_inverse().unwrap() + phi_a.transpose() * phi_a * beta;
    let sigma = precision.try_inverse().unwrap();
    let mu = &sigma * phi_a.transpose() * y * beta;
    (sigma, mu)
}
