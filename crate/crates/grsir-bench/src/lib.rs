//! Shared fixtures for the criterion benches.

use grsir::{
    compute_moments, indicator_basis, make_population, make_slices, random_orthogonal,
    sample_model, DesignMoments, ModelId,
};

/// Builds moments for a deterministic synthetic dataset (p >= 5).
pub fn bench_moments(n: usize, p: usize, num_slices: usize) -> DesignMoments {
    let q = random_orthogonal(p, 7);
    let population = make_population(p, 1.0, &q).unwrap();
    let data = sample_model(
        ModelId::One,
        n,
        &population.sigma,
        &population.beta,
        0.03,
        7,
    )
    .unwrap();
    let assignment = make_slices(data.y(), num_slices).unwrap();
    let basis = indicator_basis(&assignment);
    compute_moments(&data, &basis, &assignment).unwrap()
}
