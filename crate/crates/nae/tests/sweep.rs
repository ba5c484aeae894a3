use nae::report::OVERLAP;
use nae::sweep::{alpha_ablation, run_point, SweepConfig};
use nae_core::eval::MatchMode;
use nae_core::nn::ModelConfig;
use nae_core::noise::BoundMode;
use nae_core::synth::SceneSpec;
use nae_core::train::{AugmentConfig, TrainConfig};
use nae_core::Sampling;

fn config() -> SweepConfig {
    SweepConfig {
        scenes: 12,
        spec: SceneSpec::default(),
        data_seed: 1,
        train: TrainConfig {
            epochs: 2,
            augment: AugmentConfig {
                crop_size: 48,
                ..AugmentConfig::default()
            },
            bound_mode: BoundMode::Constant,
            model: ModelConfig {
                widths: vec![8, 16],
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        },
        sampling: Sampling::Bilinear,
        match_mode: MatchMode::Indexed,
    }
}

#[test]
fn clean_annotations_stay_put() {
    let cfg = config();
    let row = run_point(&cfg, 0.0, &cfg.train).unwrap();
    assert_eq!(row.mean_err_before, 0.0);
    assert_eq!(row.improvement_ratio, None);
    assert!(row.mean_err_after.unwrap() <= 0.5, "{row:?}");
}

#[test]
fn ablation_flags_overlapping_ranges() {
    let cfg = config();
    assert!(alpha_ablation(&cfg, 0.4, &[0.4, 0.6], false).is_err());
    let rows = alpha_ablation(&cfg, 0.4, &[0.4, 0.6], true).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(!rows[0].has_flag(OVERLAP) && rows[1].has_flag(OVERLAP));
    assert_eq!(rows[0].mean_err_before, rows[1].mean_err_before);
}
