//! Shared fixtures: one network trained with the default configuration,
//! cached on disk so the test binaries train it at most once.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use mtv_cbf::margin_net::{
    estimate_error_bound, generate_dataset, load_model, save_model, train, ErrorBound, InputBox, MlpParams, TrainingConfig,
};
use mtv_cbf::vehicle::VehicleParams;

pub const BOUND_POINTS: usize = 100_000;
pub const BOUND_SEED: u64 = 2024;

pub struct Trained {
    pub net: MlpParams,
    /// Wall time of the training run that produced the cached model.
    pub train_seconds: f64,
    pub epochs: usize,
    pub bound: ErrorBound,
}

fn cache_paths() -> (PathBuf, PathBuf) {
    let config = TrainingConfig::default();
    // changing the training setup invalidates the cache
    let tag = format!("{config:?}").bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    (dir.join(format!("margin_{tag:016x}.model")), dir.join(format!("margin_{tag:016x}.meta")))
}

pub fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let params = VehicleParams::default();
        let (model_path, meta_path) = cache_paths();
        let cached = load_model(&model_path).ok().zip(std::fs::read_to_string(&meta_path).ok());
        let (net, train_seconds, epochs) = match cached {
            Some((net, meta)) => {
                let mut it = meta.split_whitespace();
                let secs = it.next().and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
                let epochs = it.next().and_then(|s| s.parse().ok()).unwrap_or(0);
                (net, secs, epochs)
            }
            None => {
                let config = TrainingConfig::default();
                let range = InputBox::for_vehicle(&params);
                let data = generate_dataset(&range, config.sample_count, config.seed, &params);
                let (net, report) = train(&data, &config, range).expect("default training configuration is valid");
                let tmp = model_path.with_extension("tmp");
                save_model(&net, &tmp).unwrap();
                std::fs::rename(&tmp, &model_path).unwrap();
                std::fs::write(&meta_path, format!("{} {}", report.seconds, report.epochs)).unwrap();
                (net, report.seconds, report.epochs)
            }
        };
        let bound = estimate_error_bound(&net, BOUND_POINTS, BOUND_SEED, &params);
        Trained { net, train_seconds, epochs, bound }
    })
}
