//! Fixtures shared by the benchmarks.

use switchid_core::simulate::generate_dataset;
use switchid_core::{
    Dataset, ModeBook, ModeDynamics, MonomialBasis, SamplingScheme, SamplingSpec, SurfaceSet, SwitchingSystemModel,
};

/// Two damped oscillators switched across the line x = 0.
pub fn oscillator() -> SwitchingSystemModel {
    let basis = MonomialBasis::new(2, 1).expect("valid basis");
    let modes = [0.1, 0.5]
        .iter()
        .map(|g| ModeDynamics::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.0, -1.0, -g]]).expect("rectangular rows"))
        .collect();
    let surfaces = SurfaceSet::new(basis.clone(), vec![vec![0.0, 1.0, 0.0]]).expect("one surface");
    SwitchingSystemModel::new(basis, modes)
        .and_then(|m| m.with_surfaces(surfaces, ModeBook::canonical(2)?))
        .expect("consistent model")
}

/// Noise-free samples drawn uniformly from `[-3, 3]²`.
pub fn oscillator_dataset(num_samples: usize, seed: u64) -> Dataset {
    let spec = SamplingSpec {
        scheme: SamplingScheme::UniformBox { lower: vec![-3.0, -3.0], upper: vec![3.0, 3.0] },
        num_samples,
        noise_std: 0.0,
        seed,
    };
    generate_dataset(&oscillator(), &spec).expect("valid sampling")
}
