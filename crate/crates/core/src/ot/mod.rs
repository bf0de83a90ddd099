//! Entropy-regularised and exact optimal transport between two empirical
//! distributions, plus the tools that relate transport plans to attention maps.

mod exact;
mod sinkhorn;

use std::path::Path;

pub use exact::{exact_ot_small, EXACT_CAPACITY};
pub use sinkhorn::{sinkhorn, DEFAULT_MAX_ITER, DEFAULT_TOL};

use crate::attention::AttentionMap;
use crate::error::{DotError, Result};
use crate::io::write_matrix_csv;
use crate::numeric::{dot, sq_dist, FeatureMatrix, Matrix};

/// Coupling between `n_s` source and `n_t` target samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    matrix: Matrix,
    mu: Vec<f64>,
    nu: Vec<f64>,
    iterations: usize,
}

impl TransportPlan {
    pub(crate) fn from_parts(
        matrix: Matrix,
        mu: Vec<f64>,
        nu: Vec<f64>,
        iterations: usize,
    ) -> Self {
        TransportPlan {
            matrix,
            mu,
            nu,
            iterations,
        }
    }

    /// Plan given explicitly; marginals are read off the matrix.
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        if matrix.as_slice().iter().any(|&v| v < 0.0) {
            return Err(DotError::Input("transport plan has negative mass".into()));
        }
        let mu = matrix.row_sums();
        let nu = matrix.col_sums();
        Ok(TransportPlan::from_parts(matrix, mu, nu, 0))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Solver iterations spent; zero for plans not produced by Sinkhorn.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `‖γ1 − μ‖₁ + ‖γᵀ1 − ν‖₁`.
    pub fn marginal_violation(&self) -> f64 {
        let r: f64 = self
            .matrix
            .row_sums()
            .iter()
            .zip(&self.mu)
            .map(|(a, b)| (a - b).abs())
            .sum();
        let c: f64 = self
            .matrix
            .col_sums()
            .iter()
            .zip(&self.nu)
            .map(|(a, b)| (a - b).abs())
            .sum();
        r + c
    }

    /// `⟨γ, M⟩`.
    pub fn cost(&self, m: &CostMatrix) -> Result<f64> {
        if m.matrix.shape() != self.matrix.shape() {
            return Err(DotError::shape(
                "TransportPlan::cost",
                self.matrix.shape_str(),
                m.matrix.shape_str(),
            ));
        }
        Ok(dot(self.matrix.as_slice(), m.matrix.as_slice()))
    }

    /// Same layout as the attention-map export.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(&self.matrix, path)
    }
}

/// Nonnegative, finite ground costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    matrix: Matrix,
}

impl CostMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if let Some(p) = matrix
            .as_slice()
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(DotError::Input(format!(
                "cost entry ({}, {}) is negative or non-finite",
                p / matrix.cols(),
                p % matrix.cols()
            )));
        }
        Ok(CostMatrix { matrix })
    }

    /// `M_ij = ‖x_i − y_j‖²`.
    pub fn squared_euclidean(xs: &FeatureMatrix, xt: &FeatureMatrix) -> Result<Self> {
        if xs.cols() != xt.cols() {
            return Err(DotError::shape("cost", xs.shape_str(), xt.shape_str()));
        }
        let data = xs
            .row_iter()
            .flat_map(|a| xt.row_iter().map(move |b| sq_dist(a, b)))
            .collect();
        CostMatrix::new(Matrix::from_vec(xs.rows(), xt.rows(), data))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn max(&self) -> f64 {
        self.matrix.as_slice().iter().cloned().fold(0.0, f64::max)
    }
}

/// `1/n` repeated `n` times.
pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub(crate) fn check_marginals(m: &CostMatrix, mu: &[f64], nu: &[f64]) -> Result<()> {
    for (name, w, n) in [("mu", mu, m.rows()), ("nu", nu, m.cols())] {
        if w.len() != n {
            return Err(DotError::shape(
                "marginals",
                format!("cost {}", m.matrix.shape_str()),
                format!("{name} of length {}", w.len()),
            ));
        }
        if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(DotError::Parameter(format!(
                "marginal {name} must be strictly positive"
            )));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(DotError::Parameter(format!(
                "marginal {name} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

/// `diag(γ1)⁻¹ γ Ft`: every source sample moved to the weighted mean of the
/// target samples it is coupled with.
pub fn barycentric_map(plan: &TransportPlan, ft: &FeatureMatrix) -> Result<FeatureMatrix> {
    if plan.matrix.cols() != ft.rows() {
        return Err(DotError::shape(
            "barycentric_map",
            format!("plan {}", plan.matrix.shape_str()),
            format!("features {}", ft.shape_str()),
        ));
    }
    if let Some(row) = plan
        .matrix
        .row_iter()
        .position(|r| r.iter().all(|&v| v <= 0.0))
    {
        return Err(DotError::DegenerateRow { row });
    }
    plan.matrix.row_normalized().matmul(ft)
}

/// Entropic estimate of the 2-Wasserstein distance between two point clouds
/// with uniform weights: `sqrt(⟨γ, M⟩)`.
pub fn w2_distance(xs: &FeatureMatrix, xt: &FeatureMatrix, lambda: f64, tol: f64) -> Result<f64> {
    let m = CostMatrix::squared_euclidean(xs, xt)?;
    let plan = sinkhorn(
        &m,
        &uniform(xs.rows()),
        &uniform(xt.rows()),
        lambda,
        tol,
        DEFAULT_MAX_ITER,
    )?;
    Ok(plan.cost(&m)?.max(0.0).sqrt())
}

/// How closely an attention map agrees with the entropic transport plan
/// between the same features.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// Max entry-wise gap between `A` and the row-normalised kernel
    /// `exp(Fs·Ftᵀ/√d₂)`.
    pub kernel_discrepancy: f64,
    pub lambda: f64,
    /// Max entry-wise gap between `A` and the row-normalised Sinkhorn plan.
    pub plan_max_diff: f64,
    /// Cosine similarity between matching rows of `A` and the normalised plan.
    pub row_cosine: Vec<f64>,
    pub mean_row_cosine: f64,
    /// Fraction of row-normalised plan entries below [`SPARSITY_THRESHOLD`].
    pub plan_sparsity: f64,
    /// Fraction of attention entries below [`SPARSITY_THRESHOLD`].
    pub attention_sparsity: f64,
    pub sinkhorn_iterations: usize,
}

pub const SPARSITY_THRESHOLD: f64 = 1e-6;

fn sparsity(m: &Matrix) -> f64 {
    let small = m
        .as_slice()
        .iter()
        .filter(|&&v| v < SPARSITY_THRESHOLD)
        .count();
    small as f64 / m.len() as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let den = (dot(a, a) * dot(b, b)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        dot(a, b) / den
    }
}

/// Compares `A` against its kernel form and against the Sinkhorn plan at
/// `lambda` (default `2√d₂`) on the squared-distance cost of `Fs`, `Ft`.
pub fn attention_ot_consistency(
    a: &AttentionMap,
    fs: &FeatureMatrix,
    ft: &FeatureMatrix,
    lambda: Option<f64>,
) -> Result<ConsistencyReport> {
    let s = fs.matmul_bt(ft)?;
    if s.shape() != a.matrix().shape() {
        return Err(DotError::shape(
            "attention_ot_consistency",
            format!("attention {}", a.matrix().shape_str()),
            format!("features give {}", s.shape_str()),
        ));
    }
    let d2 = fs.cols() as f64;
    // one global shift keeps exp finite without changing any row ratio
    let max = s
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let kernel = s.map(|v| ((v - max) / d2.sqrt()).exp()).row_normalized();
    let kernel_discrepancy = kernel.max_abs_diff(a.matrix());

    let lambda = lambda.unwrap_or(2.0 * d2.sqrt());
    let m = CostMatrix::squared_euclidean(fs, ft)?;
    let plan = sinkhorn(
        &m,
        &uniform(fs.rows()),
        &uniform(ft.rows()),
        lambda,
        DEFAULT_TOL,
        DEFAULT_MAX_ITER,
    )?;
    let g = plan.matrix().row_normalized();
    let row_cosine: Vec<f64> = g
        .row_iter()
        .zip(a.matrix().row_iter())
        .map(|(x, y)| cosine(x, y))
        .collect();
    let mean_row_cosine = row_cosine.iter().sum::<f64>() / row_cosine.len() as f64;
    Ok(ConsistencyReport {
        kernel_discrepancy,
        lambda,
        plan_max_diff: g.max_abs_diff(a.matrix()),
        row_cosine,
        mean_row_cosine,
        plan_sparsity: sparsity(&g),
        attention_sparsity: sparsity(a.matrix()),
        sinkhorn_iterations: plan.iterations(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{attention_map, transport_features};
    use crate::rng::Rng64;

    fn cloud(rng: &mut Rng64, n: usize, d: usize, shift: f64) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal() + shift).collect())
    }

    #[test]
    fn cost_rejects_negative() {
        assert!(CostMatrix::new(Matrix::new(1, 2, vec![0.0, -1.0]).unwrap()).is_err());
    }

    #[test]
    fn barycentric_identity_coupling() {
        let mut rng = Rng64::seed(1);
        let ft = cloud(&mut rng, 4, 3, 0.0);
        let mut g = Matrix::zeros(4, 4);
        for i in 0..4 {
            g.set(i, i, 0.25);
        }
        let plan = TransportPlan::from_matrix(g).unwrap();
        assert!(barycentric_map(&plan, &ft).unwrap().max_abs_diff(&ft) < 1e-15);
    }

    #[test]
    fn barycentric_uniform_averages() {
        let mut rng = Rng64::seed(2);
        let ft = cloud(&mut rng, 5, 2, 0.0);
        let plan = TransportPlan::from_matrix(Matrix::filled(3, 5, 1.0 / 15.0)).unwrap();
        let out = barycentric_map(&plan, &ft).unwrap();
        let mean = ft.col_means();
        for r in out.row_iter() {
            assert!((r[0] - mean[0]).abs() < 1e-12 && (r[1] - mean[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn barycentric_zero_row_is_named() {
        let g = Matrix::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let plan = TransportPlan::from_matrix(g).unwrap();
        let err = barycentric_map(&plan, &Matrix::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, DotError::DegenerateRow { row: 1 }));
    }

    #[test]
    fn barycentric_lands_in_matched_cluster() {
        // two well separated target clusters; sources sit next to them
        let mut rng = Rng64::seed(3);
        let mut ft = cloud(&mut rng, 6, 2, 0.0).scale(0.1);
        for i in 3..6 {
            ft.row_mut(i)[0] += 10.0;
        }
        let mut fs = cloud(&mut rng, 6, 2, 0.0).scale(0.1);
        for i in 3..6 {
            fs.row_mut(i)[0] += 10.0;
        }
        let m = CostMatrix::squared_euclidean(&fs, &ft).unwrap();
        let plan = exact_ot_small(&m, &uniform(6), &uniform(6)).unwrap();
        let out = barycentric_map(&plan, &ft).unwrap();
        for (i, r) in out.row_iter().enumerate() {
            let lo = if i < 3 { 0 } else { 3 };
            let xs: Vec<f64> = (lo..lo + 3).map(|j| ft.get(j, 0)).collect();
            let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(r[0] >= min - 1e-12 && r[0] <= max + 1e-12);
        }
    }

    #[test]
    fn barycentric_equals_attention_transport() {
        let mut rng = Rng64::seed(4);
        let fs = cloud(&mut rng, 5, 3, 0.0);
        let ft = cloud(&mut rng, 7, 3, 0.5);
        let a = attention_map(&fs, &ft).unwrap();
        // any positive row scaling of A normalises back to A
        let mut g = a.matrix().clone();
        for i in 0..5 {
            let c = 0.05 + rng.uniform();
            g.row_mut(i).iter_mut().for_each(|v| *v *= c);
        }
        let plan = TransportPlan::from_matrix(g).unwrap();
        let lhs = barycentric_map(&plan, &ft).unwrap();
        let rhs = transport_features(&a, &ft).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn w2_examples() {
        let a = Matrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        let b = Matrix::new(1, 2, vec![3.0, 0.0]).unwrap();
        assert!((w2_distance(&a, &b, 1.0, 1e-9).unwrap() - 3.0).abs() < 1e-12);

        let mut rng = Rng64::seed(5);
        let x = cloud(&mut rng, 6, 2, 0.0);
        let perm = x.select_rows(&rng.permutation(6));
        assert!(w2_distance(&x, &perm, 1e-3, 1e-9).unwrap() < 1e-4);
    }

    #[test]
    fn w2_matches_exact_on_small_clouds() {
        for seed in 0..5 {
            let mut rng = Rng64::seed(100 + seed);
            let xs = cloud(&mut rng, 5, 2, 0.0);
            let xt = cloud(&mut rng, 5, 2, 1.0);
            let m = CostMatrix::squared_euclidean(&xs, &xt).unwrap();
            let exact = exact_ot_small(&m, &uniform(5), &uniform(5)).unwrap();
            let w_exact = exact.cost(&m).unwrap().sqrt();
            let w = w2_distance(&xs, &xt, 1e-3, 1e-9).unwrap();
            assert!((w - w_exact).abs() < 1e-3, "seed {seed}: {w} vs {w_exact}");
        }
    }

    #[test]
    fn consistency_kernel_identity() {
        let mut rng = Rng64::seed(6);
        let fs = cloud(&mut rng, 6, 4, 0.0);
        let ft = cloud(&mut rng, 6, 4, 0.3);
        let a = attention_map(&fs, &ft).unwrap();
        let r = attention_ot_consistency(&a, &fs, &ft, None).unwrap();
        assert!(r.kernel_discrepancy < 1e-12);
        assert_eq!(r.lambda, 4.0);
        assert_eq!(r.row_cosine.len(), 6);
        assert!(r.row_cosine.iter().all(|c| (0.0..=1.0 + 1e-12).contains(c)));
    }

    #[test]
    fn consistency_single_pair_degenerates() {
        let fs = Matrix::new(1, 2, vec![0.3, -1.0]).unwrap();
        let ft = Matrix::new(1, 2, vec![2.0, 0.5]).unwrap();
        let a = attention_map(&fs, &ft).unwrap();
        let r = attention_ot_consistency(&a, &fs, &ft, None).unwrap();
        assert_eq!(r.kernel_discrepancy, 0.0);
        assert!(r.plan_max_diff < 1e-12);
        assert!((r.mean_row_cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn consistency_plan_at_least_as_sparse() {
        for seed in 0..5 {
            let mut rng = Rng64::seed(200 + seed);
            let fs = cloud(&mut rng, 6, 2, 0.0);
            let ft = cloud(&mut rng, 6, 2, 0.0);
            let a = attention_map(&fs, &ft).unwrap();
            let r = attention_ot_consistency(&a, &fs, &ft, None).unwrap();
            assert!(r.plan_sparsity >= r.attention_sparsity);
        }
    }
}
