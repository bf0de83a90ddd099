use crate::error::{DotError, Result};
use crate::numeric::Matrix;

use super::{check_marginals, CostMatrix, TransportPlan};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Iterations allowed per intermediate stage of the lambda schedule.
const STAGE_ITER: usize = 200;
const STAGE_TOL: f64 = 1e-3;
/// Scaling iterations at the target lambda between rounds of Newton steps on
/// the dual, which converge much faster on nearly degenerate plans.
const NEWTON_AFTER: usize = 300;
const NEWTON_MAX_DIM: usize = 600;
const NEWTON_STEPS: usize = 30;
const WEAK_LINK: f64 = 1e-14;

/// Entropy-regularised transport plan `γ = diag(e^{f/λ}) e^{−M/λ} diag(e^{g/λ})`.
///
/// Works on the dual potentials `f`, `g` in log space. When `lambda` is small
/// compared to the costs, the potentials are first solved at a geometric
/// sequence of larger regularisations and warm-started downwards; only the
/// final stage at `lambda` must reach `tol` (ℓ1 marginal violation).
/// `max_iter` bounds the total number of iterations over all stages.
pub fn sinkhorn(
    m: &CostMatrix,
    mu: &[f64],
    nu: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(DotError::Parameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(tol > 0.0) {
        return Err(DotError::Parameter(format!(
            "tol must be positive, got {tol}"
        )));
    }
    check_marginals(m, mu, nu)?;
    if !(m.max() / lambda).is_finite() {
        return Err(DotError::Numeric(format!(
            "lambda {lambda:e} too small for costs up to {:e}; use a larger lambda",
            m.max()
        )));
    }

    let (ns, nt) = (m.rows(), m.cols());
    let c = m.matrix().as_slice();
    let log_mu: Vec<f64> = mu.iter().map(|v| v.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; ns];
    let mut g = vec![0.0; nt];
    let mut buf = vec![0.0; ns.max(nt)];

    let mut stages = Vec::new();
    let mut eps = lambda;
    let top = m.max();
    while eps < top {
        stages.push(eps);
        eps *= 4.0;
    }
    stages.push(eps);
    stages.reverse();

    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    for (s, &eps) in stages.iter().enumerate() {
        let last = s + 1 == stages.len();
        let (goal, cap) = if last {
            (tol, max_iter)
        } else {
            (STAGE_TOL.max(tol), (iterations + STAGE_ITER).min(max_iter))
        };
        let mut since_newton = 0;
        while iterations < cap {
            iterations += 1;
            since_newton += 1;
            for i in 0..ns {
                for j in 0..nt {
                    buf[j] = (g[j] - c[i * nt + j]) / eps;
                }
                f[i] = eps * (log_mu[i] - lse(&buf[..nt]));
            }
            for j in 0..nt {
                for i in 0..ns {
                    buf[i] = (f[i] - c[i * nt + j]) / eps;
                }
                g[j] = eps * (log_nu[j] - lse(&buf[..ns]));
            }
            // after the g update columns match exactly; measure the rows
            violation = 0.0;
            for i in 0..ns {
                let row: f64 = (0..nt)
                    .map(|j| ((f[i] + g[j] - c[i * nt + j]) / eps).exp())
                    .sum();
                violation += (row - mu[i]).abs();
            }
            if !violation.is_finite() {
                return Err(DotError::Numeric(format!(
                    "sinkhorn potentials underflowed at lambda {eps:e}; use a larger lambda"
                )));
            }
            if violation <= goal {
                break;
            }
            if last && since_newton >= NEWTON_AFTER {
                since_newton = 0;
                let dual = Dual {
                    c,
                    mu,
                    nu,
                    ns,
                    nt,
                    lambda: eps,
                };
                dual.balance_blocks(&mut f, &mut g);
                if ns + nt <= NEWTON_MAX_DIM {
                    let steps = (iterations + NEWTON_STEPS).min(cap);
                    violation = dual.newton(&mut f, &mut g, tol, &mut iterations, steps);
                    if violation <= goal {
                        break;
                    }
                }
            }
        }
    }

    let data = (0..ns * nt)
        .map(|k| ((f[k / nt] + g[k % nt] - c[k]) / lambda).exp())
        .collect();
    let plan = TransportPlan::from_parts(
        Matrix::from_vec(ns, nt, data),
        mu.to_vec(),
        nu.to_vec(),
        iterations,
    );
    if violation > tol {
        return Err(DotError::NotConverged {
            iterations,
            violation,
            plan: Box::new(plan),
        });
    }
    Ok(plan)
}

struct Dual<'a> {
    c: &'a [f64],
    mu: &'a [f64],
    nu: &'a [f64],
    ns: usize,
    nt: usize,
    lambda: f64,
}

impl Dual<'_> {
    fn plan(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let nt = self.nt;
        (0..self.ns * nt)
            .map(|k| ((f[k / nt] + g[k % nt] - self.c[k]) / self.lambda).exp())
            .collect()
    }

    /// Marginal residuals `μ − γ1` and `ν − γᵀ1`, plus their ℓ1 norm.
    fn residual(&self, p: &[f64]) -> (Vec<f64>, f64) {
        let (ns, nt) = (self.ns, self.nt);
        let mut r = Vec::with_capacity(ns + nt);
        for i in 0..ns {
            r.push(self.mu[i] - p[i * nt..(i + 1) * nt].iter().sum::<f64>());
        }
        for j in 0..nt {
            r.push(self.nu[j] - (0..ns).map(|i| p[i * nt + j]).sum::<f64>());
        }
        let norm = r.iter().map(|v| v.abs()).sum();
        (r, norm)
    }

    /// When the plan splits into blocks joined only by links too weak for
    /// scaling or Newton steps to move mass across, shifts each block's
    /// potentials (`f += δ`, `g −= δ` inside the block) so that the flow out
    /// of it matches its mass surplus. Internal entries are unchanged and the
    /// shift has a closed form in log space.
    fn balance_blocks(&self, f: &mut [f64], g: &mut [f64]) {
        let (ns, nt) = (self.ns, self.nt);
        let log_entry = |f: &[f64], g: &[f64], i: usize, j: usize| {
            (f[i] + g[j] - self.c[i * nt + j]) / self.lambda
        };
        let top = (0..ns * nt)
            .map(|k| log_entry(f, g, k / nt, k % nt))
            .fold(f64::NEG_INFINITY, f64::max);
        let floor = top + WEAK_LINK.ln();
        // rows are nodes 0..ns, columns ns..ns+nt
        let mut parent: Vec<usize> = (0..ns + nt).collect();
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for i in 0..ns {
            for j in 0..nt {
                if log_entry(f, g, i, j) >= floor {
                    let (a, b) = (root(&mut parent, i), root(&mut parent, ns + j));
                    parent[a] = b;
                }
            }
        }
        let block: Vec<usize> = (0..ns + nt).map(|x| root(&mut parent, x)).collect();
        let mut roots = block.clone();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() < 2 {
            return;
        }
        let mut out = Vec::new();
        let mut inward = Vec::new();
        for &b in &roots {
            let surplus: f64 = (0..ns)
                .filter(|&i| block[i] == b)
                .map(|i| self.mu[i])
                .sum::<f64>()
                - (0..nt)
                    .filter(|&j| block[ns + j] == b)
                    .map(|j| self.nu[j])
                    .sum::<f64>();
            out.clear();
            inward.clear();
            for i in 0..ns {
                for j in 0..nt {
                    match (block[i] == b, block[ns + j] == b) {
                        (true, false) => out.push(log_entry(f, g, i, j)),
                        (false, true) => inward.push(log_entry(f, g, i, j)),
                        _ => {}
                    }
                }
            }
            // solve X e^t − Y e^{−t} = surplus without cancellation
            let (lx, ly) = (lse(&out), lse(&inward));
            let root_term = (surplus * surplus + 4.0 * (lx + ly).exp()).sqrt();
            let t = if surplus >= 0.0 {
                (surplus + root_term).ln() - 2f64.ln() - lx
            } else {
                2f64.ln() + ly - (root_term - surplus).ln()
            };
            if !t.is_finite() {
                continue;
            }
            let shift = self.lambda * t;
            for i in 0..ns {
                if block[i] == b {
                    f[i] += shift;
                }
            }
            for j in 0..nt {
                if block[ns + j] == b {
                    g[j] -= shift;
                }
            }
        }
    }

    /// Damped Newton ascent on the dual. The dual is invariant to
    /// `f + t, g − t`, so `g[nt-1]` is held fixed. Eliminating `f` leaves a
    /// weighted graph Laplacian on the columns, which is factorised without
    /// subtractions so that near-degenerate plans stay well resolved.
    /// Returns the final ℓ1 violation.
    fn newton(
        &self,
        f: &mut [f64],
        g: &mut [f64],
        tol: f64,
        iterations: &mut usize,
        cap: usize,
    ) -> f64 {
        let (ns, nt) = (self.ns, self.nt);
        let mut p = self.plan(f, g);
        let (mut r, mut viol) = self.residual(&p);
        while viol > tol && *iterations < cap {
            *iterations += 1;
            let a: Vec<f64> = (0..ns)
                .map(|i| p[i * nt..(i + 1) * nt].iter().sum())
                .collect();
            let mut w = vec![0.0; nt * nt];
            for i in 0..ns {
                let row = &p[i * nt..(i + 1) * nt];
                for j in 0..nt {
                    let x = row[j] / a[i];
                    if x == 0.0 {
                        continue;
                    }
                    for k in j + 1..nt {
                        w[j * nt + k] += x * row[k];
                    }
                }
            }
            // links far below the dominant mass cannot be resolved in double
            // precision; cutting them lets each block be balanced separately
            let cut = WEAK_LINK * w.iter().cloned().fold(0.0, f64::max);
            for j in 0..nt {
                for k in j + 1..nt {
                    if w[j * nt + k] < cut {
                        w[j * nt + k] = 0.0;
                    }
                    w[k * nt + j] = w[j * nt + k];
                }
            }
            let mut dg: Vec<f64> = (0..nt)
                .map(|j| {
                    let back: f64 = (0..ns).map(|i| p[i * nt + j] * r[i] / a[i]).sum();
                    self.lambda * (r[ns + j] - back)
                })
                .collect();
            grounded_laplacian_solve(&mut w, nt, &mut dg);
            let df: Vec<f64> = (0..ns)
                .map(|i| {
                    let s: f64 = (0..nt).map(|j| p[i * nt + j] * dg[j]).sum();
                    (self.lambda * r[i] - s) / a[i]
                })
                .collect();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let nf: Vec<f64> = (0..ns).map(|i| f[i] + t * df[i]).collect();
                let ng: Vec<f64> = (0..nt).map(|j| g[j] + t * dg[j]).collect();
                let np = self.plan(&nf, &ng);
                let (nr, nv) = self.residual(&np);
                if nv < viol {
                    f.copy_from_slice(&nf);
                    g.copy_from_slice(&ng);
                    (p, r, viol) = (np, nr, nv);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        viol
    }
}

/// Solves `L x = b` where `L` is the Laplacian of the symmetric nonnegative
/// edge weights `w` (n×n, zero diagonal) and node `n-1` is grounded
/// (`x[n-1] = 0`). Gaussian elimination keeps every pivot as a sum of
/// positive weights, so no cancellation occurs. A node left without edges is
/// the last of its connected component and is grounded as well. `w` is
/// overwritten.
fn grounded_laplacian_solve(w: &mut [f64], n: usize, b: &mut [f64]) {
    let mut pivot = vec![0.0; n];
    for p in 0..n - 1 {
        let d: f64 = (p + 1..n).map(|k| w[p * n + k]).sum();
        if d == 0.0 {
            continue;
        }
        pivot[p] = d;
        for j in p + 1..n {
            let wj = w[j * n + p];
            if wj == 0.0 {
                continue;
            }
            b[j] += wj * b[p] / d;
            for k in p + 1..n {
                if k != j {
                    w[j * n + k] += wj * w[p * n + k] / d;
                }
            }
        }
    }
    b[n - 1] = 0.0;
    for p in (0..n - 1).rev() {
        if pivot[p] == 0.0 {
            b[p] = 0.0;
            continue;
        }
        let s: f64 = (p + 1..n - 1).map(|k| w[p * n + k] * b[k]).sum();
        b[p] = (b[p] + s) / pivot[p];
    }
}

fn lse(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
