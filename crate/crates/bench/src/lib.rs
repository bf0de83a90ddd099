//! Seeded inputs shared by the benches.

use dot_core::data::{synth_shifted_gaussians, DomainDataset, ShiftKind, SyntheticSpec};
use dot_core::rng::Rng64;
use dot_core::Matrix;

/// `rows × cols` standard normal entries.
pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng64::seed(seed);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
        .expect("finite entries")
}

/// Three translated Gaussian classes in `dim` dimensions.
pub fn shifted_task(per_class: usize, dim: usize) -> (DomainDataset, DomainDataset) {
    synth_shifted_gaussians(&SyntheticSpec {
        classes: 3,
        dim,
        separation: 4.0,
        sigma: 1.0,
        shift: ShiftKind::Translation,
        magnitude: 4.0,
        per_class,
        seed: 0,
    })
    .expect("valid spec")
}
