use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, InputBox, MlpParams};
use crate::geometry::{mtv_margin, OrientedRectangle};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub input: [f64; 3],
    pub target: f64,
}

/// Exact MTV margin of a robot at relative pose `rel` around an ego robot at
/// the origin with heading 0. Both robots share `params`' footprint.
pub fn margin_target(rel: &[f64; 3], params: &VehicleParams) -> f64 {
    let ego = OrientedRectangle::new(0.0, 0.0, 0.0, params.length, params.width).expect("validated dimensions");
    let other = OrientedRectangle::new(rel[0], rel[1], rel[2], params.length, params.width).expect("validated dimensions");
    mtv_margin(&ego, &other).value
}

/// Uniform samples of the relative pose in `range` labelled with the exact
/// margin. The same seed always yields the same samples.
pub fn generate_dataset(range: &InputBox, count: usize, seed: u64, params: &VehicleParams) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let input = range.sample(&mut rng);
            Sample {
                input,
                target: margin_target(&input, params),
            }
        })
        .collect()
}

/// Empirical approximation error of the network against the exact margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub epsilon_max: f64,
    pub epsilon_mean: f64,
    pub eval_count: usize,
    pub seed: u64,
}

/// Max and mean absolute error over `count` fresh uniform samples of the
/// network's trained range.
pub fn estimate_error_bound(net: &MlpParams, count: usize, seed: u64, params: &VehicleParams) -> ErrorBound {
    let samples = generate_dataset(&net.trained_range, count, seed, params);
    let (max, sum) = samples.iter().fold((0.0f64, 0.0f64), |(max, sum), s| {
        let e = (forward(net, &s.input) - s.target).abs();
        (max.max(e), sum + e)
    });
    ErrorBound {
        epsilon_max: max,
        epsilon_mean: if count > 0 { sum / count as f64 } else { 0.0 },
        eval_count: count,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margin_net::DEFAULT_LAYER_DIMS;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn targets_match_geometry_examples() {
        assert!((margin_target(&[0.0, 0.0, 0.0], &params()) + 0.08).abs() < 1e-15);
        assert!((margin_target(&[0.30, 0.0, 0.0], &params()) - 0.14).abs() < 1e-15);
    }

    #[test]
    fn dataset_is_reproducible_and_in_range() {
        let range = InputBox::for_vehicle(&params());
        let a = generate_dataset(&range, 500, 9, &params());
        let b = generate_dataset(&range, 500, 9, &params());
        let c = generate_dataset(&range, 500, 10, &params());
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|s| range.contains(&s.input)));
    }

    #[test]
    fn zero_net_bound_is_max_target() {
        let range = InputBox::for_vehicle(&params());
        let net = MlpParams::zeros(&DEFAULT_LAYER_DIMS, range);
        let bound = estimate_error_bound(&net, 2000, 5, &params());
        let samples = generate_dataset(&range, 2000, 5, &params());
        let max = samples.iter().map(|s| s.target.abs()).fold(0.0, f64::max);
        let mean = samples.iter().map(|s| s.target.abs()).sum::<f64>() / 2000.0;
        assert_eq!(bound.epsilon_max, max);
        assert!((bound.epsilon_mean - mean).abs() < 1e-15);
        assert!(bound.epsilon_max >= bound.epsilon_mean);
    }
}
