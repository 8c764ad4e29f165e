use rand::Rng;

use homoguard::estimator::{
    estimate_two_stage, ClassicalConfig, ClassicalEstimator, EstimatorConfig, HomographyEstimator,
    OracleConfig, OracleEstimator, TwoStageOptions, ViewPair,
};
use homoguard::geometry::{corners_of_frame, dlt, Displacement, FrameConfig, Point2};
use homoguard::harness::{DatasetConfig, SyntheticProvider};
use homoguard::image::GrayImage;
use homoguard::metrics::mace;
use homoguard::rng;
use homoguard::sampler::{crop_and_resize, CropSpec};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn two_stage_oracle_is_exact_despite_box_perturbation() {
    let frames = FrameConfig::default();
    let mut r = rng::stream(7);
    let sat = GrayImage::filled(frames.w_s, frames.w_s, 50);
    let th = GrayImage::filled(frames.w_t, frames.w_t, 90);
    for trial in 0..50 {
        let c = frames.w_s as f64 / 2.0;
        let t0 = Point2::new(
            c - 256.0 + r.random_range(-400.0..400.0),
            c - 256.0 + r.random_range(-400.0..400.0),
        );
        let src = corners_of_frame(frames.w_t).unwrap();
        let dst = src.map(|p| {
            p + t0 + Point2::new(r.random_range(-30.0..30.0), r.random_range(-30.0..30.0))
        });
        let h = dlt(&src, &dst).unwrap();
        let oracle = OracleEstimator::new(OracleConfig {
            ground_truth: h,
            noise_sigma: 0.0,
            seed: trial,
        })
        .unwrap();
        let gt = oracle
            .exact_displacement(&ViewPair {
                satellite: &GrayImage::filled(frames.w_r, frames.w_r, 0),
                thermal: &GrayImage::filled(frames.w_r, frames.w_r, 0),
                satellite_view: frames.satellite_view(),
                thermal_view: frames.thermal_view(),
            })
            .unwrap();
        let options = TwoStageOptions {
            stage1_perturbation: Some(Displacement::from_fn(|_, _| r.random_range(-64.0..=64.0))),
        };
        let cfg = EstimatorConfig::default();
        let out = estimate_two_stage(&oracle, &sat, &th, &cfg, &frames, &options).unwrap();
        assert_eq!(out.trajectory.len(), cfg.k1 + cfg.k2);
        assert!((*out.trajectory.last() - gt).max_abs() < 1e-6);
        assert!(mace(out.trajectory.last(), &gt, &frames) < 1e-6);
        assert!(out.bounding_box.side <= frames.w_s as f64);
    }
}

#[test]
fn classical_is_accurate_on_clean_pairs() {
    let provider = SyntheticProvider::new(DatasetConfig {
        seed: 21,
        count: 12,
        clean_fraction: 1.0,
        map_size: 2048,
        rich_maps: 1,
        ..DatasetConfig::default()
    })
    .unwrap();
    let frames = provider.config().frames;
    let est = ClassicalEstimator::new(ClassicalConfig::default());
    let cfg = EstimatorConfig::default();
    let (mut one, mut two) = (Vec::new(), Vec::new());
    for i in 0..12 {
        let pair = provider.render_index(i).unwrap();
        let gt = frames.from_full_frame(&pair.gt);
        let sat_r = pair.satellite.resize_square(frames.w_r);
        let th_r = crop_and_resize(&pair.thermal, &CropSpec::full(frames.w_t), frames.w_r).unwrap();
        let view = ViewPair {
            satellite: &sat_r,
            thermal: &th_r,
            satellite_view: frames.satellite_view(),
            thermal_view: frames.thermal_view(),
        };
        let d = *est.estimate(&view, cfg.k1).unwrap().last();
        one.push(mace(&d, &gt, &frames));
        let out = estimate_two_stage(
            &est,
            &pair.satellite,
            &pair.thermal,
            &cfg,
            &frames,
            &TwoStageOptions::default(),
        )
        .unwrap();
        two.push(mace(out.trajectory.last(), &gt, &frames));
    }
    let (m1, m2) = (median(one), median(two));
    assert!(m1 < 3.0, "one-stage median MACE {m1}");
    assert!(m2 < 3.0, "two-stage median MACE {m2}");
}
