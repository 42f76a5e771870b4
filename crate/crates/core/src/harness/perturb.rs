use crate::registry::{Case, FeatureValue};
use crate::rng::{fnv1a64, SplitMix64};
use crate::task::PerturbationPolicy;

/// Multiplicative Gaussian noise on every numeric element.
///
/// Numeric elements are numbered in feature-name order (array elements in
/// array order). Element `i` becomes `x * (1 + magnitude * g)` with `g` the
/// Box–Muller draw of a SplitMix64 stream seeded by
/// `run_seed ^ fnv1a64(case_id) ^ i`. Text and file features, the case id and
/// the subgroups pass through untouched.
pub fn perturb_case(case: &Case, policy: &PerturbationPolicy, run_seed: u64) -> Case {
    let mut out = case.clone();
    if policy.magnitude == 0.0 {
        return out;
    }
    let base = run_seed ^ fnv1a64(&case.case_id);
    let mut index = 0u64;
    let mut jitter = |x: f64| {
        let g = SplitMix64::new(base ^ index).next_gaussian();
        index += 1;
        x * (1.0 + policy.magnitude * g)
    };
    for value in out.features.values_mut() {
        match value {
            FeatureValue::Number(x) => *x = jitter(*x),
            FeatureValue::Array(xs) => xs.iter_mut().for_each(|x| *x = jitter(*x)),
            FeatureValue::Text(_) | FeatureValue::File { .. } => {}
        }
    }
    out
}
