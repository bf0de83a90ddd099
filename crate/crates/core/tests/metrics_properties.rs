use dot_core::data::{synth_shifted_gaussians, DomainDataset, DomainTag, ShiftKind, SyntheticSpec};
use dot_core::metrics::{a_distance, bound_monitor, ProbeConfig};
use dot_core::model::{train_source_only, TrainConfig};
use dot_core::numeric::Matrix;
use dot_core::rng::Rng64;

fn cloud(rng: &mut Rng64, n: usize, d: usize, shift: f64) -> Matrix {
    Matrix::new(n, d, (0..n * d).map(|_| rng.normal() + shift).collect()).unwrap()
}

fn rms_spread(f: &Matrix) -> f64 {
    let n = f.rows() as f64;
    let mean: Vec<f64> = (0..f.cols())
        .map(|j| (0..f.rows()).map(|i| f.get(i, j)).sum::<f64>() / n)
        .collect();
    let ss: f64 = (0..f.rows())
        .flat_map(|i| (0..f.cols()).map(move |j| (i, j)))
        .map(|(i, j)| (f.get(i, j) - mean[j]).powi(2))
        .sum();
    (ss / n).sqrt()
}

#[test]
fn a_distance_is_symmetric_within_probe_noise() {
    let mut rng = Rng64::seed(9);
    let probe = ProbeConfig::default();
    for shift in [0.0, 0.5, 1.5] {
        let fa = cloud(&mut rng, 400, 4, 0.0);
        let fb = cloud(&mut rng, 400, 4, shift);
        let ab = a_distance(&fa, &fb, &probe).unwrap();
        let ba = a_distance(&fb, &fa, &probe).unwrap();
        assert!((ab - ba).abs() < 0.1, "shift {shift}: {ab} vs {ba}");
    }
}

#[test]
fn bound_monitor_without_shift() {
    let spec = SyntheticSpec {
        classes: 2,
        dim: 4,
        separation: 8.0,
        sigma: 0.5,
        shift: ShiftKind::Translation,
        magnitude: 0.0,
        per_class: 60,
        seed: 3,
    };
    let (source, _) = synth_shifted_gaussians(&spec).unwrap();
    let target = DomainDataset::new(
        source.features().clone(),
        source.labels().map(<[usize]>::to_vec),
        DomainTag::Target,
        source.num_classes(),
    )
    .unwrap();
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let out = train_source_only(&source, &target, &config).unwrap();
    let r = bound_monitor(&out.params, &source, &target, 64).unwrap();
    assert_eq!(r.eps_t, 0.0);
    assert_eq!(r.eps_s, 0.0);
    // attention averages each row toward the high-norm points of its class,
    // so W2 settles near the within-class spread instead of 0
    let ft = out.params.target.forward(target.features()).unwrap();
    assert!(
        r.w2_hat.is_finite() && r.w2_hat < 0.5 * rms_spread(&ft),
        "{r:?}"
    );
    for e in [r.eps_s, r.eps_t] {
        assert!((0.0..=1.0).contains(&e));
    }
}
