//! Evaluation diagnostics: accuracy, domain correlation, scatter, proxy
//! A-distances, W2 tracking and the risk-bound monitor, plus exports.

mod export;
mod log;

pub use export::{export_curves, export_heatmap_csv};
pub use log::{EpochRecord, MetricsLog, TargetClasses};

use crate::attention::{attention_map, transport_features};
use crate::data::DomainDataset;
use crate::error::{DotError, Result};
use crate::model::{predict, ModelParams};
use crate::numeric::{FeatureMatrix, Matrix};
use crate::ot::{sinkhorn, uniform, CostMatrix, DEFAULT_MAX_ITER};
use crate::rng::Rng64;

/// Fraction of positions where `pred` and `truth` agree.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(DotError::shape(
            "accuracy",
            format!("{} predictions", pred.len()),
            format!("{} labels", truth.len()),
        ));
    }
    if pred.is_empty() {
        return Err(DotError::Input(
            "accuracy of an empty prediction set".into(),
        ));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `seed`-chosen sorted subset of `n` out of `0..total` (all of them when `n == total`).
fn subsample(total: usize, n: usize, seed: u64, stream: u64) -> Vec<usize> {
    if n >= total {
        return (0..total).collect();
    }
    let mut idx = Rng64::stream(seed, stream).permutation(total);
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Frobenius norm of the cross-covariance `(1/n)(Fa − ā)ᵀ(Fb − b̄)` with rows
/// paired by index. The longer input is subsampled (by `seed`, order kept) to
/// the shorter one's length.
pub fn cross_cov_fnorm(fa: &FeatureMatrix, fb: &FeatureMatrix, seed: u64) -> Result<f64> {
    let n = fa.rows().min(fb.rows());
    if n < 2 {
        return Err(DotError::Parameter(format!(
            "cross-covariance needs at least 2 paired rows, got {n}"
        )));
    }
    let a = center(&fa.select_rows(&subsample(fa.rows(), n, seed, 1)));
    let b = center(&fb.select_rows(&subsample(fb.rows(), n, seed, 2)));
    Ok(a.matmul_at(&b)?.scale(1.0 / n as f64).frobenius_norm())
}

fn center(m: &Matrix) -> Matrix {
    let mean = m.col_means();
    let mut out = m.clone();
    for i in 0..out.rows() {
        for (v, mu) in out.row_mut(i).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    crate::numeric::sq_dist(a, b).sqrt()
}

/// Class geometry of transformed source and target features.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterStats {
    /// Mean distance of source samples to their class center.
    pub within_source: f64,
    pub within_target: f64,
    /// Mean distance of source class centers to the center pooled over both
    /// domains.
    pub between_source: f64,
    pub between_target: f64,
    /// Mean distance between matching source and target class centers.
    pub center_distance: f64,
    /// Classes missing from one of the domains, left out of every average.
    pub skipped_classes: Vec<usize>,
}

pub fn scatter_stats(
    fs: &FeatureMatrix,
    ys: &[usize],
    ft: &FeatureMatrix,
    yt: &[usize],
) -> Result<ScatterStats> {
    if fs.rows() != ys.len() || ft.rows() != yt.len() {
        return Err(DotError::shape(
            "scatter_stats",
            format!("{} / {} rows", fs.rows(), ft.rows()),
            format!("{} / {} labels", ys.len(), yt.len()),
        ));
    }
    if fs.cols() != ft.cols() {
        return Err(DotError::shape(
            "scatter_stats",
            fs.shape_str(),
            ft.shape_str(),
        ));
    }
    let k = ys.iter().chain(yt).max().map_or(0, |m| m + 1);
    let centers = |f: &Matrix, y: &[usize]| -> Vec<Option<Vec<f64>>> {
        (0..k)
            .map(|c| {
                let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
                (!idx.is_empty()).then(|| f.select_rows(&idx).col_means())
            })
            .collect()
    };
    let cs = centers(fs, ys);
    let ct = centers(ft, yt);
    let shared: Vec<usize> = (0..k)
        .filter(|&c| cs[c].is_some() && ct[c].is_some())
        .collect();
    let skipped: Vec<usize> = (0..k)
        .filter(|&c| cs[c].is_some() != ct[c].is_some())
        .collect();
    if shared.is_empty() {
        return Err(DotError::Coverage(
            "no class present in both domains".into(),
        ));
    }

    let within = |f: &Matrix, y: &[usize], c: &[Option<Vec<f64>>]| {
        let (mut s, mut n) = (0.0, 0usize);
        for (i, &yi) in y.iter().enumerate() {
            if shared.contains(&yi) {
                s += dist(f.row(i), c[yi].as_deref().expect("shared class"));
                n += 1;
            }
        }
        s / n as f64
    };
    let pooled = fs.vstack(ft)?.col_means();
    let between = |c: &[Option<Vec<f64>>]| {
        shared
            .iter()
            .map(|&k| dist(c[k].as_deref().expect("shared class"), &pooled))
            .sum::<f64>()
            / shared.len() as f64
    };
    let center_distance = shared
        .iter()
        .map(|&k| {
            dist(
                cs[k].as_deref().expect("shared"),
                ct[k].as_deref().expect("shared"),
            )
        })
        .sum::<f64>()
        / shared.len() as f64;
    Ok(ScatterStats {
        within_source: within(fs, ys, &cs),
        within_target: within(ft, yt, &ct),
        between_source: between(&cs),
        between_target: between(&ct),
        center_distance,
        skipped_classes: skipped,
    })
}

/// Linear domain classifier used by the proxy A-distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 500,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

/// `2(1 − 2ε)` clamped to `[0, 2]`.
pub fn a_distance_from_error(eps: f64) -> f64 {
    (2.0 * (1.0 - 2.0 * eps)).clamp(0.0, 2.0)
}

/// Proxy A-distance between two feature sets.
///
/// Each domain is split in half (seeded); a logistic-regression probe on
/// standardised features is trained by full-batch gradient descent to tell
/// the domains apart on one half, and `ε` is its balanced error on the other.
pub fn a_distance(fa: &FeatureMatrix, fb: &FeatureMatrix, probe: &ProbeConfig) -> Result<f64> {
    if fa.cols() != fb.cols() {
        return Err(DotError::shape(
            "a_distance",
            fa.shape_str(),
            fb.shape_str(),
        ));
    }
    if fa.rows() < 4 || fb.rows() < 4 {
        return Err(DotError::Parameter(format!(
            "a_distance needs at least 4 samples per domain, got {} and {}",
            fa.rows(),
            fb.rows()
        )));
    }
    let split = |n: usize, stream: u64| {
        let perm = Rng64::stream(probe.seed, stream).permutation(n);
        let (tr, te) = perm.split_at(n / 2);
        (tr.to_vec(), te.to_vec())
    };
    let (a_tr, a_te) = split(fa.rows(), 11);
    let (b_tr, b_te) = split(fb.rows(), 12);
    let train = fa.select_rows(&a_tr).vstack(&fb.select_rows(&b_tr))?;
    let mut label = vec![0.0; a_tr.len()];
    label.resize(a_tr.len() + b_tr.len(), 1.0);

    // standardise with training statistics
    let d = train.cols();
    let mean = train.col_means();
    let mut sd = vec![0.0; d];
    for r in train.row_iter() {
        for j in 0..d {
            sd[j] += (r[j] - mean[j]).powi(2);
        }
    }
    let sd: Vec<f64> = sd
        .iter()
        .map(|v| {
            let s = (v / train.rows() as f64).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let z = |r: &[f64]| -> Vec<f64> { (0..d).map(|j| (r[j] - mean[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = train.row_iter().map(z).collect();

    // class-balanced logistic loss so unequal domain sizes do not bias ε
    let wa = 0.5 / a_tr.len() as f64;
    let wb = 0.5 / b_tr.len() as f64;
    let mut w = vec![0.0; d];
    let mut bias = 0.0;
    for _ in 0..probe.steps {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(&label) {
            let s = bias + crate::numeric::dot(&w, x);
            let p = 1.0 / (1.0 + (-s).exp());
            let c = (p - y) * if y == 0.0 { wa } else { wb };
            for j in 0..d {
                gw[j] += c * x[j];
            }
            gb += c;
        }
        for j in 0..d {
            w[j] -= probe.learning_rate * gw[j];
        }
        bias -= probe.learning_rate * gb;
    }
    let wrong = |f: &Matrix, idx: &[usize], y: bool| {
        idx.iter()
            .filter(|&&i| {
                let s = bias + crate::numeric::dot(&w, &z(f.row(i)));
                (s > 0.0) != y
            })
            .count() as f64
            / idx.len() as f64
    };
    let eps = 0.5 * (wrong(fa, &a_te, false) + wrong(fb, &b_te, true));
    Ok(a_distance_from_error(eps))
}

/// Class-conditional A-distance: per-class [`a_distance`] averaged with
/// weights given by the target class frequencies.
pub fn a_c_distance(
    fs: &FeatureMatrix,
    ys: &[usize],
    ft: &FeatureMatrix,
    yt: &[usize],
    probe: &ProbeConfig,
) -> Result<f64> {
    if fs.rows() != ys.len() || ft.rows() != yt.len() {
        return Err(DotError::shape(
            "a_c_distance",
            format!("{} / {} rows", fs.rows(), ft.rows()),
            format!("{} / {} labels", ys.len(), yt.len()),
        ));
    }
    let k = yt.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for c in 0..k {
        let it: Vec<usize> = (0..yt.len()).filter(|&i| yt[i] == c).collect();
        if it.is_empty() {
            continue;
        }
        let is: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] == c).collect();
        if is.len() < 4 || it.len() < 4 {
            return Err(DotError::Coverage(format!(
                "class {c} has {} source and {} target samples, need 4 each",
                is.len(),
                it.len()
            )));
        }
        let d = a_distance(&fs.select_rows(&is), &ft.select_rows(&it), probe)?;
        total += d * it.len() as f64 / yt.len() as f64;
    }
    Ok(total)
}

/// Entropic W2 estimate on at most `max_points` seeded samples per side, with
/// regularisation `0.05 ×` the mean squared distance. A solver that runs out
/// of iterations still yields its last plan, which is close enough for
/// tracking.
pub fn w2_estimate(
    xs: &FeatureMatrix,
    xt: &FeatureMatrix,
    max_points: usize,
    seed: u64,
) -> Result<f64> {
    let a = xs.select_rows(&subsample(xs.rows(), max_points, seed, 21));
    let b = xt.select_rows(&subsample(xt.rows(), max_points, seed, 22));
    let m = CostMatrix::squared_euclidean(&a, &b)?;
    let mean = m.matrix().sum() / m.matrix().len() as f64;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let plan = match sinkhorn(
        &m,
        &uniform(a.rows()),
        &uniform(b.rows()),
        0.05 * mean,
        1e-6,
        DEFAULT_MAX_ITER,
    ) {
        Ok(p) => p,
        Err(DotError::NotConverged { plan, .. }) => *plan,
        Err(e) => return Err(e),
    };
    Ok(plan.cost(&m)?.max(0.0).sqrt())
}

/// Quantities in the target-risk bound: source error of `C` on `F̂s`, target
/// error of the deployed predictor, and W2 between `F̂s` and `Ft`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub eps_s: f64,
    pub eps_t: f64,
    pub w2_hat: f64,
}

pub fn bound_monitor(
    params: &ModelParams,
    source: &DomainDataset,
    target: &DomainDataset,
    w2_points: usize,
) -> Result<BoundReport> {
    let ys = source.require_labels()?;
    let yt = target.require_labels()?;
    let fs = params.source.forward(source.features())?;
    let ft = params.target.forward(target.features())?;
    let fhat = transport_features(&attention_map(&fs, &ft)?, &ft)?;
    let src_pred = crate::model::argmax_rows(&params.classifier.probabilities(&fhat)?);
    let (tgt_pred, _) = predict(params, target.features())?;
    Ok(BoundReport {
        eps_s: 1.0 - accuracy(&src_pred, ys)?,
        eps_t: 1.0 - accuracy(&tgt_pred, yt)?,
        w2_hat: w2_estimate(&fhat, &ft, w2_points, params.seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random(rng: &mut Rng64, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect())
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn fnorm_examples() {
        let mut rng = Rng64::seed(1);
        let a = random(&mut rng, 10, 3);
        assert_eq!(
            cross_cov_fnorm(&a, &Matrix::filled(10, 2, 4.0), 0).unwrap(),
            0.0
        );
        let ac = center(&a);
        let cov = ac.matmul_at(&ac).unwrap().scale(0.1);
        assert!((cross_cov_fnorm(&a, &a, 0).unwrap() - cov.frobenius_norm()).abs() < 1e-12);
        assert!(cross_cov_fnorm(&a.select_rows(&[0]), &a, 0).is_err());
    }

    #[test]
    fn fnorm_matches_double_loop() {
        let mut rng = Rng64::seed(2);
        let a = random(&mut rng, 7, 3);
        let b = random(&mut rng, 7, 4);
        let (ma, mb) = (a.col_means(), b.col_means());
        let mut s = 0.0;
        for p in 0..3 {
            for q in 0..4 {
                let c: f64 = (0..7)
                    .map(|i| (a.get(i, p) - ma[p]) * (b.get(i, q) - mb[q]))
                    .sum::<f64>()
                    / 7.0;
                s += c * c;
            }
        }
        assert!((cross_cov_fnorm(&a, &b, 0).unwrap() - s.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn fnorm_subsamples_longer_side() {
        let mut rng = Rng64::seed(3);
        let a = random(&mut rng, 12, 2);
        let b = random(&mut rng, 5, 2);
        let v1 = cross_cov_fnorm(&a, &b, 4).unwrap();
        assert_eq!(v1, cross_cov_fnorm(&a, &b, 4).unwrap());
        assert!(v1.is_finite());
    }

    #[test]
    fn scatter_examples() {
        let f = Matrix::filled(4, 2, 1.5);
        let s = scatter_stats(&f, &[0, 1, 0, 1], &f, &[1, 0, 1, 0]).unwrap();
        assert_eq!(
            (s.within_source, s.between_source, s.center_distance),
            (0.0, 0.0, 0.0)
        );

        let f = Matrix::new(4, 2, vec![1.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0, 0.0]).unwrap();
        let y = [0, 0, 1, 1];
        let s = scatter_stats(&f, &y, &f, &y).unwrap();
        assert_eq!(s.within_source, 0.0);
        assert_eq!(s.within_target, 0.0);
        assert_eq!(s.between_source, 1.0);
        assert_eq!(s.between_target, 1.0);
        assert_eq!(s.center_distance, 0.0);
    }

    #[test]
    fn scatter_matches_definition() {
        let mut rng = Rng64::seed(5);
        let fs = random(&mut rng, 9, 2);
        let ft = random(&mut rng, 6, 2);
        let ys = [0, 1, 2, 0, 1, 2, 0, 1, 2];
        let yt = [2, 2, 1, 1, 0, 0];
        let s = scatter_stats(&fs, &ys, &ft, &yt).unwrap();
        let mean_of = |f: &Matrix, y: &[usize], c: usize| {
            let mut m = [0.0, 0.0];
            let mut n = 0.0;
            for i in 0..y.len() {
                if y[i] == c {
                    m[0] += f.get(i, 0);
                    m[1] += f.get(i, 1);
                    n += 1.0;
                }
            }
            [m[0] / n, m[1] / n]
        };
        let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut w = 0.0;
        for i in 0..9 {
            w += d([fs.get(i, 0), fs.get(i, 1)], mean_of(&fs, &ys, ys[i]));
        }
        assert!((s.within_source - w / 9.0).abs() < 1e-10);
        let mut pooled = [0.0, 0.0];
        for i in 0..9 {
            pooled[0] += fs.get(i, 0) / 15.0;
            pooled[1] += fs.get(i, 1) / 15.0;
        }
        for i in 0..6 {
            pooled[0] += ft.get(i, 0) / 15.0;
            pooled[1] += ft.get(i, 1) / 15.0;
        }
        let b: f64 = (0..3).map(|c| d(mean_of(&ft, &yt, c), pooled)).sum::<f64>() / 3.0;
        assert!((s.between_target - b).abs() < 1e-10);
        let cd: f64 = (0..3)
            .map(|c| d(mean_of(&fs, &ys, c), mean_of(&ft, &yt, c)))
            .sum::<f64>()
            / 3.0;
        assert!((s.center_distance - cd).abs() < 1e-10);
    }

    #[test]
    fn scatter_skips_unmatched_class() {
        let mut rng = Rng64::seed(6);
        let fs = random(&mut rng, 4, 2);
        let ft = random(&mut rng, 2, 2);
        let s = scatter_stats(&fs, &[0, 0, 1, 1], &ft, &[0, 0]).unwrap();
        assert_eq!(s.skipped_classes, vec![1]);
    }

    #[test]
    fn a_distance_formula() {
        assert_eq!(a_distance_from_error(0.25), 1.0);
        assert_eq!(a_distance_from_error(0.5), 0.0);
        assert_eq!(a_distance_from_error(0.7), 0.0);
        assert_eq!(a_distance_from_error(0.0), 2.0);
    }

    #[test]
    fn a_distance_extremes() {
        let mut rng = Rng64::seed(7);
        let a = random(&mut rng, 400, 3);
        let b = random(&mut rng, 400, 3);
        let p = ProbeConfig::default();
        assert!(a_distance(&a, &b, &p).unwrap() < 0.2);
        let far = b.map(|v| v + 6.0);
        assert!(a_distance(&a, &far, &p).unwrap() >= 1.8);
        let sym = (a_distance(&a, &far, &p).unwrap() - a_distance(&far, &a, &p).unwrap()).abs();
        assert!(sym < 0.1);
        assert!(a_distance(&a.select_rows(&[0, 1, 2]), &b, &p).is_err());
    }

    #[test]
    fn a_c_distance_two_cluster() {
        let mut rng = Rng64::seed(8);
        let n = 200;
        let mut fs = random(&mut rng, 2 * n, 2);
        let mut ft = random(&mut rng, 2 * n, 2);
        let y: Vec<usize> = (0..2 * n).map(|i| i / n).collect();
        for i in 0..n {
            fs.row_mut(i)[0] -= 20.0;
            ft.row_mut(i)[0] -= 20.0;
            // class 1 shifted in the target only
            ft.row_mut(n + i)[1] += 20.0;
        }
        let p = ProbeConfig::default();
        let d = a_c_distance(&fs, &y, &ft, &y, &p).unwrap();
        assert!((d - 1.0).abs() < 0.15, "{d}");

        let single = vec![0; 2 * n];
        let whole = a_distance(&fs, &ft, &p).unwrap();
        assert_eq!(a_c_distance(&fs, &single, &ft, &single, &p).unwrap(), whole);

        let err = a_c_distance(&fs, &vec![0; 2 * n], &ft, &y, &p).unwrap_err();
        assert!(matches!(err, DotError::Coverage(_)));
    }

    #[test]
    fn w2_estimate_identical_clouds_is_small() {
        let mut rng = Rng64::seed(9);
        let a = random(&mut rng, 50, 2);
        let shifted = a.map(|v| v + 3.0);
        let same = w2_estimate(&a, &a, 128, 0).unwrap();
        let far = w2_estimate(&a, &shifted, 128, 0).unwrap();
        assert!(same < 0.5 * far);
        // translation by (3, 3): W2 is its length
        assert!((far - 18f64.sqrt()).abs() < 0.2, "{far}");
    }

    proptest! {
        #[test]
        fn fnorm_shift_and_scale(seed in 0u64..500, shift in -5.0f64..5.0, c in 0.1f64..4.0) {
            let mut rng = Rng64::seed(seed);
            let a = random(&mut rng, 6, 3);
            let b = random(&mut rng, 6, 2);
            let base = cross_cov_fnorm(&a, &b, 0).unwrap();
            let moved = cross_cov_fnorm(&a.map(|v| v + shift), &b, 0).unwrap();
            prop_assert!((base - moved).abs() < 1e-10);
            let scaled = cross_cov_fnorm(&a, &b.scale(c), 0).unwrap();
            prop_assert!((scaled - c * base).abs() < 1e-10 * (1.0 + base));
        }

        #[test]
        fn scatter_rotation_invariant(seed in 0u64..500, theta in 0.0f64..6.3) {
            let mut rng = Rng64::seed(seed);
            let fs = random(&mut rng, 8, 2);
            let ft = random(&mut rng, 6, 2);
            let ys = [0, 1, 0, 1, 0, 1, 0, 1];
            let yt = [1, 0, 1, 0, 1, 0];
            let (s, c) = theta.sin_cos();
            let r = Matrix::new(2, 2, vec![c, s, -s, c]).unwrap();
            let a = scatter_stats(&fs, &ys, &ft, &yt).unwrap();
            let b = scatter_stats(&fs.matmul(&r).unwrap(), &ys, &ft.matmul(&r).unwrap(), &yt).unwrap();
            prop_assert!((a.within_source - b.within_source).abs() < 1e-8);
            prop_assert!((a.within_target - b.within_target).abs() < 1e-8);
            prop_assert!((a.between_source - b.between_source).abs() < 1e-8);
            prop_assert!((a.between_target - b.between_target).abs() < 1e-8);
            prop_assert!((a.center_distance - b.center_distance).abs() < 1e-8);
        }
    }
}
