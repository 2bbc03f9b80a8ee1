//! Central-difference verification of analytic gradients.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::params::{ParamGrads, ParamSet};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub coords: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Sample `n` coordinates spread over every parameter group.
pub fn sample_coords(params: &ParamSet, n: usize, rng: &mut ChaCha12Rng) -> Vec<(usize, usize)> {
    let groups: Vec<usize> = params.iter().map(|(i, _)| i).collect();
    let mut coords = Vec::with_capacity(n);
    let mut g = 0;
    while coords.len() < n {
        let p = groups[g % groups.len()];
        let len = params.tensor(p).len();
        if len > 0 {
            coords.push((p, rng.random_range(0..len)));
        }
        g += 1;
    }
    coords
}

/// Compare analytic gradients against central differences at the given
/// coordinates. `loss_fn` must be a pure function of the parameter values.
pub fn finite_diff_check(
    params: &mut ParamSet,
    coords: &[(usize, usize)],
    epsilon: f64,
    analytic: &ParamGrads,
    mut loss_fn: impl FnMut(&ParamSet) -> f64,
) -> GradCheckReport {
    // Central differences of a loss of magnitude |f| carry ~|f|*ulp/epsilon
    // of roundoff; coordinates whose gradient sits below that noise floor
    // cannot be resolved relatively, so the denominator is floored at a
    // loss-scaled threshold.
    let base = loss_fn(params).abs();
    let floor = 1e-6 * (1.0 + base);
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for &(p, off) in coords {
        let orig = params.tensor(p).data[off];
        params.tensor_mut(p).data[off] = orig + epsilon;
        let up = loss_fn(params);
        params.tensor_mut(p).data[off] = orig - epsilon;
        let down = loss_fn(params);
        params.tensor_mut(p).data[off] = orig;

        let numeric = (up - down) / (2.0 * epsilon);
        let an = analytic.by_param[p]
            .as_ref()
            .map(|t| t.data[off])
            .unwrap_or(0.0);
        let abs = (an - numeric).abs();
        let rel = abs / an.abs().max(numeric.abs()).max(floor);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    GradCheckReport {
        coords: coords.len(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
    }
}
