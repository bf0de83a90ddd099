use crate::error::{DotError, Result};
use crate::rng::Rng64;

use super::matrix::Matrix;
use super::tape::{Tape, Var};

/// Compares tape gradients of a scalar function against central differences.
///
/// `loss` receives a fresh tape and one [`Var`] per entry of `params` (in
/// order) and must return a 1×1 value. With `max_coords = Some(m)` only `m`
/// coordinates, chosen by `seed`, are probed. Returns the largest
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(
    params: &[Matrix],
    step: f64,
    max_coords: Option<usize>,
    seed: u64,
    loss: F,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(DotError::Parameter(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }

    let eval = |ps: &[Matrix]| -> Result<(f64, Tape, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = loss(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.shape() != (1, 1) {
            return Err(DotError::shape("grad_check", v.shape_str(), "1x1"));
        }
        Ok((v.item(), tape, out))
    };

    let (_, tape, out) = eval(params)?;
    let analytic = tape.backward(out)?.into_params();

    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, m)| (0..m.len()).map(move |k| (p, k)))
        .collect();
    if let Some(m) = max_coords {
        if coords.len() > m {
            Rng64::seed(seed).shuffle(&mut coords);
            coords.truncate(m);
            coords.sort_unstable();
        }
    }

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (p, k) in coords {
        let orig = probe[p].as_slice()[k];
        probe[p].as_mut_slice()[k] = orig + step;
        let (up, _, _) = eval(&probe)?;
        probe[p].as_mut_slice()[k] = orig - step;
        let (down, _, _) = eval(&probe)?;
        probe[p].as_mut_slice()[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(DotError::Numeric(format!(
                "non-finite loss probing parameter {p} entry {k}"
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[p].as_slice()[k];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}
