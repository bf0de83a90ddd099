//! Locality-structure regularisers: kNN and label adjacency graphs, the
//! locality-preserving loss, and the prediction-entropy loss.

use rayon::prelude::*;

use crate::error::{DotError, Result};
use crate::numeric::{sq_dist, FeatureMatrix, Matrix, Tape, Var, LOG_FLOOR};

/// Symmetric 0/1 adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    n: usize,
    adj: Vec<bool>,
    /// Undirected edges `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
}

impl AdjacencyGraph {
    fn from_adjacency(n: usize, adj: Vec<bool>) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if adj[i * n + j] {
                    edges.push((i, j));
                }
            }
        }
        AdjacencyGraph { n, adj, edges }
    }

    pub fn empty(n: usize) -> Self {
        AdjacencyGraph::from_adjacency(n, vec![false; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of ordered pairs with `w_ij = 1` (twice the undirected count).
    pub fn weight_sum(&self) -> usize {
        2 * self.edges.len()
    }

    /// Subgraph induced by `nodes`, relabelled to `0..nodes.len()`.
    pub fn induced(&self, nodes: &[usize]) -> AdjacencyGraph {
        let m = nodes.len();
        let mut adj = vec![false; m * m];
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                adj[a * m + b] = self.has_edge(i, j);
            }
        }
        AdjacencyGraph::from_adjacency(m, adj)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.n,
            self.n,
            self.adj
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
    }
}

/// OR-symmetrised k-nearest-neighbour graph under Euclidean distance.
/// Distance ties go to the smaller index.
pub fn knn_graph(features: &FeatureMatrix, k: usize) -> Result<AdjacencyGraph> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(DotError::Parameter(format!(
            "k = {k} must lie in [1, {}] for {n} points",
            n.saturating_sub(1)
        )));
    }
    let neighbours: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = features.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(xi, features.row(j)), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();

    let mut adj = vec![false; n * n];
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            adj[i * n + j] = true;
            adj[j * n + i] = true;
        }
    }
    Ok(AdjacencyGraph::from_adjacency(n, adj))
}

/// Connects every pair of distinct samples sharing a label.
pub fn supervised_graph(labels: &[usize]) -> AdjacencyGraph {
    let n = labels.len();
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            adj[i * n + j] = i != j && labels[i] == labels[j];
        }
    }
    AdjacencyGraph::from_adjacency(n, adj)
}

/// `Σ_{i,j} ‖f_i − f_j‖² w_ij` over ordered pairs.
pub fn lpp_loss(features: &FeatureMatrix, graph: &AdjacencyGraph) -> Result<f64> {
    check_lpp_shape(features, graph)?;
    Ok(graph
        .edges()
        .iter()
        .map(|&(i, j)| 2.0 * sq_dist(features.row(i), features.row(j)))
        .sum())
}

/// Differentiable form of [`lpp_loss`].
pub fn lpp_loss_on(tape: &mut Tape, features: Var, graph: &AdjacencyGraph) -> Result<Var> {
    check_lpp_shape(tape.value(features), graph)?;
    tape.lpp(features, graph.edges())
}

fn check_lpp_shape(features: &FeatureMatrix, graph: &AdjacencyGraph) -> Result<()> {
    if features.rows() != graph.n() {
        return Err(DotError::shape(
            "lpp_loss",
            features.shape_str(),
            format!("graph on {} nodes", graph.n()),
        ));
    }
    Ok(())
}

/// Mean row entropy of a probability matrix, with `0 · log 0 = 0`.
pub fn entropy_loss(probs: &Matrix) -> Result<f64> {
    for (i, r) in probs.row_iter().enumerate() {
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > 1e-6 || r.iter().any(|&p| p < 0.0) {
            return Err(DotError::Input(format!(
                "row {i} is not a probability vector (sum {s})"
            )));
        }
    }
    let total: f64 = probs
        .as_slice()
        .iter()
        .map(|&p| -p * p.max(LOG_FLOOR).ln())
        .sum();
    Ok(total / probs.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn points(xs: &[f64]) -> Matrix {
        Matrix::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn knn_saturates_to_complete_graph() {
        let f = points(&[0.0, 1.0, 5.0, 2.5]);
        let g = knn_graph(&f, 3).unwrap();
        for i in 0..4 {
            assert!(!g.has_edge(i, i));
            for j in 0..4 {
                if i != j {
                    assert!(g.has_edge(i, j));
                }
            }
        }
    }

    #[test]
    fn knn_collinear_example() {
        // 0's nearest is 1, 1's nearest is 0, 2's nearest is 1.
        let g = knn_graph(&points(&[0.0, 1.0, 3.0]), 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn knn_duplicates_connect() {
        let g = knn_graph(&points(&[4.0, 4.0, -10.0, 30.0]), 1).unwrap();
        assert!(g.has_edge(0, 1));
        assert!(g.has_edge(1, 0));
    }

    #[test]
    fn knn_tie_prefers_smaller_index() {
        // 1 is equidistant from 0 and 2
        let g = knn_graph(&points(&[0.0, 1.0, 2.0]), 1).unwrap();
        assert!(g.has_edge(0, 1));
        assert!(g.has_edge(1, 2)); // from 2's side
        let g = knn_graph(&points(&[0.0, 1.0, 2.0, 100.0]), 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let f = points(&[0.0, 1.0, 2.0]);
        assert!(matches!(knn_graph(&f, 0), Err(DotError::Parameter(_))));
        assert!(matches!(knn_graph(&f, 3), Err(DotError::Parameter(_))));
    }

    #[test]
    fn supervised_graph_examples() {
        let g = supervised_graph(&[2, 2, 2]);
        assert_eq!(g.edges().len(), 3);
        assert!(supervised_graph(&[0, 1, 2, 3]).edges().is_empty());
        assert_eq!(supervised_graph(&[0, 0, 1]).edges(), &[(0, 1)]);
    }

    #[test]
    fn lpp_examples() {
        let same = Matrix::filled(4, 3, 1.25);
        let g = supervised_graph(&[0, 0, 0, 0]);
        assert_eq!(lpp_loss(&same, &g).unwrap(), 0.0);

        let two = Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let g = supervised_graph(&[1, 1]);
        assert_eq!(lpp_loss(&two, &g).unwrap(), 50.0);

        assert!(lpp_loss(&two, &supervised_graph(&[0, 0, 0])).is_err());
    }

    #[test]
    fn lpp_matches_double_loop() {
        let mut rng = Rng64::seed(21);
        let f = Matrix::from_vec(6, 3, (0..18).map(|_| rng.normal()).collect());
        let mut adj = vec![false; 36];
        for i in 0..6 {
            for j in i + 1..6 {
                let e = rng.uniform() < 0.5;
                adj[i * 6 + j] = e;
                adj[j * 6 + i] = e;
            }
        }
        let g = AdjacencyGraph::from_adjacency(6, adj);
        let w = g.to_matrix();
        let mut oracle = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let d: f64 = (0..3).map(|k| (f.get(i, k) - f.get(j, k)).powi(2)).sum();
                oracle += d * w.get(i, j);
            }
        }
        assert!((lpp_loss(&f, &g).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn entropy_examples() {
        let onehot = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(entropy_loss(&onehot).unwrap(), 0.0);

        let uniform = Matrix::filled(3, 4, 0.25);
        assert!((entropy_loss(&uniform).unwrap() - 4f64.ln()).abs() < 1e-12);

        let p = Matrix::from_rows(&[vec![0.5, 0.25, 0.25]]).unwrap();
        assert!((entropy_loss(&p).unwrap() - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert!((entropy_loss(&p).unwrap() - 1.0397).abs() < 1e-4);

        let bad = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.6]]).unwrap();
        let msg = entropy_loss(&bad).unwrap_err().to_string();
        assert!(msg.contains("row 1"), "{msg}");
    }

    #[test]
    fn induced_subgraph_relabels() {
        let g = supervised_graph(&[0, 1, 0, 1]);
        let s = g.induced(&[3, 1, 2]);
        assert_eq!(s.edges(), &[(0, 1)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn feats() -> impl Strategy<Value = Matrix> {
            (2usize..9, 1usize..4).prop_flat_map(|(n, d)| {
                proptest::collection::vec(-5.0f64..5.0, n * d)
                    .prop_map(move |v| Matrix::from_vec(n, d, v))
            })
        }

        proptest! {
            #[test]
            fn lpp_translation_invariant_and_quadratic(
                f in feats(),
                shift in -3.0f64..3.0,
                c in -2.0f64..2.0,
                seed in 0u64..1000,
            ) {
                let mut rng = Rng64::seed(seed);
                let labels: Vec<usize> = (0..f.rows()).map(|_| rng.below(3)).collect();
                let g = supervised_graph(&labels);
                let base = lpp_loss(&f, &g).unwrap();
                prop_assert!(base >= 0.0);
                let moved = lpp_loss(&f.map(|v| v + shift), &g).unwrap();
                prop_assert!((moved - base).abs() < 1e-9 * (1.0 + base));
                let scaled = lpp_loss(&f.scale(c), &g).unwrap();
                prop_assert!((scaled - c * c * base).abs() < 1e-9 * (1.0 + base));
            }

            #[test]
            fn lpp_zero_iff_components_collapse(seed in 0u64..1000) {
                let mut rng = Rng64::seed(seed);
                let labels: Vec<usize> = (0..8).map(|_| rng.below(3)).collect();
                let centers: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
                let f = Matrix::from_vec(8, 1, labels.iter().map(|&y| centers[y]).collect());
                let g = supervised_graph(&labels);
                prop_assert!(lpp_loss(&f, &g).unwrap().abs() < 1e-10);
                // perturb one node that has a neighbour
                if let Some(&(i, _)) = g.edges().first() {
                    let mut h = f.clone();
                    h.set(i, 0, h.get(i, 0) + 0.5);
                    prop_assert!(lpp_loss(&h, &g).unwrap() > 1e-10);
                }
            }

            #[test]
            fn entropy_bounded_and_column_permutation_invariant(
                raw in proptest::collection::vec(0.0f64..1.0, 12),
                rot in 0usize..4,
            ) {
                let mut p = Matrix::from_vec(3, 4, raw.iter().map(|v| v + 1e-3).collect());
                p = p.row_normalized();
                let h = entropy_loss(&p).unwrap();
                prop_assert!(h >= 0.0 && h <= 4f64.ln() + 1e-12);
                let mut q = p.clone();
                for i in 0..3 {
                    let r: Vec<f64> = p.row(i).to_vec();
                    for k in 0..4 {
                        q.set(i, (k + rot) % 4, r[k]);
                    }
                }
                prop_assert!((entropy_loss(&q).unwrap() - h).abs() < 1e-12);
            }

            #[test]
            fn knn_permutation_equivariant(f in feats(), seed in 0u64..1000) {
                let n = f.rows();
                // distinct coordinates avoid tie-break dependence on labelling
                let f = Matrix::from_vec(n, f.cols(), f.as_slice().iter().enumerate()
                    .map(|(i, v)| v + i as f64 * 1e-6).collect());
                let perm = Rng64::seed(seed).permutation(n);
                let pf = f.select_rows(&perm);
                let k = 1 + (seed as usize) % (n - 1);
                let g = knn_graph(&f, k).unwrap();
                let pg = knn_graph(&pf, k).unwrap();
                for a in 0..n {
                    for b in 0..n {
                        prop_assert_eq!(pg.has_edge(a, b), g.has_edge(perm[a], perm[b]));
                    }
                }
            }
        }
    }
}
