use rand::seq::index::sample;

use super::params::ParamVector;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Distinct flat coordinates drawn uniformly without replacement (all of them if `n >= dim`).
pub fn sample_coords(dim: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= dim {
        return (0..dim).collect();
    }
    let mut coords = sample(&mut rng_from_seed(seed), dim, n).into_vec();
    coords.sort_unstable();
    coords
}

/// Compares `analytic` against central differences of `loss_fn` at the given coordinates.
///
/// Returns `max |a − c| / max(1, |a|, |c|)` where `c = (L(w + h·e_i) − L(w − h·e_i)) / 2h`.
pub fn finite_diff_grad_check(
    params: &ParamVector<f64>,
    analytic: &ParamVector<f64>,
    mut loss_fn: impl FnMut(&ParamVector<f64>) -> Result<f64>,
    coords: &[usize],
    h: f64,
) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if !params.same_layout(analytic) {
        return Err(Error::Shape("analytic gradient layout differs from parameters".into()));
    }
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for &i in coords {
        let w = params
            .get_flat(i)
            .ok_or_else(|| Error::invalid(format!("coordinate {i} out of range")))?;
        probe.set_flat(i, w + h)?;
        let up = loss_fn(&probe)?;
        probe.set_flat(i, w - h)?;
        let down = loss_fn(&probe)?;
        probe.set_flat(i, w)?;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        let central = (up - down) / (2.0 * h);
        let a = analytic.get_flat(i).expect("same layout");
        let err = (a - central).abs() / 1f64.max(a.abs()).max(central.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
