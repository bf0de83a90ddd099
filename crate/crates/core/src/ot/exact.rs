use std::collections::VecDeque;

use crate::error::{DotError, Result};
use crate::numeric::Matrix;

use super::{check_marginals, CostMatrix, TransportPlan};

/// Largest `n_s · n_t` accepted by [`exact_ot_small`].
pub const EXACT_CAPACITY: usize = 400;

const PIVOT_LIMIT: usize = 100_000;

/// Exact minimiser of `⟨γ, M⟩` over the transportation polytope.
///
/// Primal transportation simplex on a spanning-tree basis of the bipartite
/// row/column graph. Starts from the north-west corner solution and pivots by
/// Bland's rule (lowest cell index enters; ties for leaving go to the lowest
/// index), so results are fully deterministic.
pub fn exact_ot_small(m: &CostMatrix, mu: &[f64], nu: &[f64]) -> Result<TransportPlan> {
    let (ns, nt) = (m.rows(), m.cols());
    if ns * nt > EXACT_CAPACITY {
        return Err(DotError::Capacity {
            cells: ns * nt,
            limit: EXACT_CAPACITY,
        });
    }
    check_marginals(m, mu, nu)?;
    let c = m.matrix().as_slice();
    let scale = m.max().max(1.0);
    let eps = 1e-12 * scale;

    let mut flow = vec![0.0; ns * nt];
    let mut basic = vec![false; ns * nt];

    // north-west corner: walks from (0,0) to (ns-1,nt-1), one basic cell per step
    let (mut supply, mut demand) = (mu.to_vec(), nu.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = supply[i].min(demand[j]);
        flow[i * nt + j] = x;
        basic[i * nt + j] = true;
        supply[i] -= x;
        demand[j] -= x;
        if i + 1 == ns && j + 1 == nt {
            break;
        }
        if j + 1 == nt || (i + 1 < ns && supply[i] <= demand[j]) {
            demand[j] += supply[i];
            supply[i] = 0.0;
            i += 1;
        } else {
            supply[i] += demand[j];
            demand[j] = 0.0;
            j += 1;
        }
    }

    let mut u = vec![0.0; ns];
    let mut v = vec![0.0; nt];
    for _ in 0..PIVOT_LIMIT {
        potentials(c, &basic, ns, nt, &mut u, &mut v);
        let entering = (0..ns * nt).find(|&k| !basic[k] && c[k] - u[k / nt] - v[k % nt] < -eps);
        let Some(enter) = entering else {
            let data = flow.iter().map(|&x| x.max(0.0)).collect();
            return Ok(TransportPlan::from_parts(
                Matrix::from_vec(ns, nt, data),
                mu.to_vec(),
                nu.to_vec(),
                0,
            ));
        };
        // cycle: entering cell (+), then the tree path from its column back to its row
        let path = tree_path(&basic, ns, nt, enter % nt, enter / nt);
        let minus: Vec<usize> = path.iter().step_by(2).copied().collect();
        let theta = minus.iter().map(|&k| flow[k]).fold(f64::INFINITY, f64::min);
        let leave = *minus
            .iter()
            .filter(|&&k| flow[k] <= theta)
            .min()
            .expect("cycle has a minus cell");
        flow[enter] += theta;
        for (s, &k) in path.iter().enumerate() {
            if s % 2 == 0 {
                flow[k] -= theta;
            } else {
                flow[k] += theta;
            }
        }
        flow[leave] = 0.0;
        basic[leave] = false;
        basic[enter] = true;
    }
    Err(DotError::Numeric(format!(
        "exact transport did not terminate within {PIVOT_LIMIT} pivots"
    )))
}

/// Solves `u_i + v_j = c_ij` on basic cells with `u_0 = 0`.
fn potentials(c: &[f64], basic: &[bool], ns: usize, nt: usize, u: &mut [f64], v: &mut [f64]) {
    let mut seen_r = vec![false; ns];
    let mut seen_c = vec![false; nt];
    let mut queue = VecDeque::new();
    u[0] = 0.0;
    seen_r[0] = true;
    queue.push_back(Node::Row(0));
    while let Some(n) = queue.pop_front() {
        match n {
            Node::Row(i) => {
                for j in 0..nt {
                    if basic[i * nt + j] && !seen_c[j] {
                        v[j] = c[i * nt + j] - u[i];
                        seen_c[j] = true;
                        queue.push_back(Node::Col(j));
                    }
                }
            }
            Node::Col(j) => {
                for i in 0..ns {
                    if basic[i * nt + j] && !seen_r[i] {
                        u[i] = c[i * nt + j] - v[j];
                        seen_r[i] = true;
                        queue.push_back(Node::Row(i));
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Node {
    Row(usize),
    Col(usize),
}

/// Basic cells on the tree path from column `j0` to row `i0`, in order.
fn tree_path(basic: &[bool], ns: usize, nt: usize, j0: usize, i0: usize) -> Vec<usize> {
    // parent cell for every reached node; rows then columns
    let mut parent_r: Vec<Option<usize>> = vec![None; ns];
    let mut parent_c: Vec<Option<usize>> = vec![None; nt];
    let mut seen_r = vec![false; ns];
    let mut seen_c = vec![false; nt];
    seen_c[j0] = true;
    let mut queue = VecDeque::from([Node::Col(j0)]);
    while let Some(n) = queue.pop_front() {
        match n {
            Node::Col(j) => {
                for i in 0..ns {
                    if basic[i * nt + j] && !seen_r[i] {
                        seen_r[i] = true;
                        parent_r[i] = Some(i * nt + j);
                        queue.push_back(Node::Row(i));
                    }
                }
            }
            Node::Row(i) => {
                if i == i0 {
                    break;
                }
                for j in 0..nt {
                    if basic[i * nt + j] && !seen_c[j] {
                        seen_c[j] = true;
                        parent_c[j] = Some(i * nt + j);
                        queue.push_back(Node::Col(j));
                    }
                }
            }
        }
    }
    let mut rev = Vec::new();
    let mut node = Node::Row(i0);
    loop {
        let cell = match node {
            Node::Row(i) => parent_r[i],
            Node::Col(j) => parent_c[j],
        };
        let Some(cell) = cell else { break };
        rev.push(cell);
        node = match node {
            Node::Row(_) => Node::Col(cell % nt),
            Node::Col(_) => Node::Row(cell / nt),
        };
    }
    rev.reverse();
    rev
}
