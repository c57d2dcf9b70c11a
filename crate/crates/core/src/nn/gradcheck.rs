//! Central finite-difference verification of reverse-mode gradients.

use super::params::{ParamId, ParamSet};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat element index where the worst error occurred.
    pub worst: (String, usize),
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares analytic gradients (already accumulated in `params` by a backward
/// pass of the same loss) against central finite differences of `loss_fn` on
/// `samples` randomly chosen elements across `ids`. Parameters are restored
/// after probing.
///
/// Relative error: `|fd - g| / max(|fd|, |g|, 1e-6)`.
pub fn finite_difference_check<F>(
    params: &mut ParamSet,
    ids: &[ParamId],
    samples: usize,
    eps: f64,
    seed: u64,
    mut loss_fn: F,
) -> GradCheckReport
where
    F: FnMut(&ParamSet) -> f64,
{
    assert!(!ids.is_empty(), "no parameters to check");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: (String::new(), 0),
    };

    // Guarantee every block is probed at least once, then fill randomly.
    let mut probes: Vec<(ParamId, usize)> = Vec::with_capacity(samples);
    for &id in ids {
        let len = params.value(id).len();
        probes.push((id, rng.random_range(0..len)));
    }
    while probes.len() < samples {
        let id = *ids.choose(&mut rng).expect("non-empty ids");
        let len = params.value(id).len();
        probes.push((id, rng.random_range(0..len)));
    }

    for (id, flat) in probes {
        let original = {
            let v = params.value(id).as_slice().expect("contiguous param");
            v[flat]
        };
        let analytic = params.grad(id).as_slice().expect("contiguous grad")[flat];

        set_flat(params, id, flat, original + eps);
        let up = loss_fn(params);
        set_flat(params, id, flat, original - eps);
        let down = loss_fn(params);
        set_flat(params, id, flat, original);

        let fd = (up - down) / (2.0 * eps);
        let denom = analytic.abs().max(fd.abs()).max(1e-6);
        let rel = (fd - analytic).abs() / denom;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = (params.name(id).to_string(), flat);
        }
        report.checked += 1;
    }
    report
}

fn set_flat(params: &mut ParamSet, id: ParamId, flat: usize, value: f64) {
    params
        .value_mut(id)
        .as_slice_mut()
        .expect("contiguous param")[flat] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use ndarray::arr2;

    #[test]
    fn quadratic_gradient_verifies() {
        let mut params = ParamSet::new();
        let w = params.add("w", arr2(&[[1.5, -0.5], [2.0, 0.25]]));

        let loss = |p: &ParamSet| {
            let mut tape = Tape::new();
            let wn = tape.param(p, w);
            let sq = tape.mul(wn, wn);
            let l = tape.sum_all(sq);
            tape.scalar(l)
        };

        params.zero_grads();
        {
            let mut tape = Tape::new();
            let wn = tape.param(&params, w);
            let sq = tape.mul(wn, wn);
            let l = tape.sum_all(sq);
            tape.backward(l, &mut params).unwrap();
        }
        let report = finite_difference_check(&mut params, &[w], 20, 1e-5, 7, loss);
        assert!(report.passes(1e-6), "max rel err {}", report.max_rel_err);
    }
}
