//! Domain-level cross-attention: source samples are queries, target samples
//! are keys and values. Each transformed source feature is a convex
//! combination of target features.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{DotError, Result};
use crate::io::write_matrix_csv;
use crate::model::ProjectionNet;
use crate::numeric::{row_softmax, FeatureMatrix, Matrix, Tape, Var};

/// Row-stochastic `n_s × n_t` attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    matrix: Matrix,
    /// Divisor applied to the dot products, `√d₂` for learned maps.
    scale: f64,
}

impl AttentionMap {
    /// Wraps an arbitrary row-stochastic matrix.
    pub fn from_matrix(matrix: Matrix, scale: f64) -> Result<Self> {
        for (i, r) in matrix.row_iter().enumerate() {
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-10 || r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(DotError::Input(format!(
                    "attention row {i} is not stochastic (sum {s})"
                )));
            }
        }
        Ok(AttentionMap { matrix, scale })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn n_source(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_target(&self) -> usize {
        self.matrix.cols()
    }

    /// Row-major CSV with header `j0..j{n_t-1}`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(&self.matrix, path)
    }
}

/// `F = net(G)`.
pub fn project(net: &ProjectionNet, g: &FeatureMatrix) -> Result<FeatureMatrix> {
    net.forward(g)
}

fn check_widths(fs: &Matrix, ft: &Matrix) -> Result<()> {
    if fs.cols() != ft.cols() {
        return Err(DotError::shape(
            "attention_map",
            format!("queries {}", fs.shape_str()),
            format!("keys {}", ft.shape_str()),
        ));
    }
    Ok(())
}

/// `A = softmax_rows(Fs · Ftᵀ / √d₂)`.
pub fn attention_map(fs: &FeatureMatrix, ft: &FeatureMatrix) -> Result<AttentionMap> {
    check_widths(fs, ft)?;
    let scale = (fs.cols() as f64).sqrt();
    let matrix = row_softmax(&fs.matmul_bt(ft)?, scale)?;
    Ok(AttentionMap { matrix, scale })
}

/// Differentiable form of [`attention_map`].
pub fn attention_map_on(tape: &mut Tape, fs: Var, ft: Var) -> Result<Var> {
    check_widths(tape.value(fs), tape.value(ft))?;
    let scale = (tape.value(fs).cols() as f64).sqrt();
    let s = tape.matmul_bt(fs, ft)?;
    tape.row_softmax(s, scale)
}

/// `F̂s = A · Ft`.
pub fn transport_features(a: &AttentionMap, ft: &FeatureMatrix) -> Result<FeatureMatrix> {
    if a.n_target() != ft.rows() {
        return Err(DotError::shape(
            "transport_features",
            format!("attention {}", a.matrix.shape_str()),
            format!("values {}", ft.shape_str()),
        ));
    }
    a.matrix.matmul(ft)
}

/// Attention induced by ground-truth labels: each source row spreads its mass
/// uniformly over the target samples of the same class.
pub fn oracle_attention(src_labels: &[usize], tgt_labels: &[usize]) -> Result<AttentionMap> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, &y) in tgt_labels.iter().enumerate() {
        members.entry(y).or_default().push(j);
    }
    let mut missing: Vec<usize> = src_labels
        .iter()
        .filter(|y| !members.contains_key(y))
        .copied()
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(DotError::Coverage(format!(
            "source classes {missing:?} absent from target labels"
        )));
    }
    if src_labels.is_empty() || tgt_labels.is_empty() {
        return Err(DotError::Input(
            "oracle attention needs labels on both sides".into(),
        ));
    }
    let mut m = Matrix::zeros(src_labels.len(), tgt_labels.len());
    for (i, y) in src_labels.iter().enumerate() {
        let js = &members[y];
        let w = 1.0 / js.len() as f64;
        for &j in js {
            m.set(i, j, w);
        }
    }
    Ok(AttentionMap {
        matrix: m,
        scale: 1.0,
    })
}
