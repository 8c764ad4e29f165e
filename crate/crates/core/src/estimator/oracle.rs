use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_schedule, EstimateTrajectory, HomographyEstimator, ViewPair};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_homography, corners_of_frame, corners_to_displacement, Displacement, Homography,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Full thermal pixels -> full satellite pixels.
    pub ground_truth: Homography,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Returns the true displacement of every view, plus optional i.i.d.
/// Gaussian noise per element and iteration.
#[derive(Debug, Clone)]
pub struct OracleEstimator {
    cfg: OracleConfig,
}

impl OracleEstimator {
    pub fn new(cfg: OracleConfig) -> Result<Self> {
        if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma {}",
                cfg.noise_sigma
            )));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    /// Exact displacement of the thermal view's corners in the satellite view.
    pub fn exact_displacement(&self, pair: &ViewPair<'_>) -> Result<Displacement> {
        let view_h = pair
            .satellite_view
            .homography()
            .compose(&self.cfg.ground_truth)?
            .compose(&pair.thermal_view.inverse_homography())?;
        let src = corners_of_frame(pair.thermal.width())?;
        let base = corners_of_frame(pair.satellite.width())?;
        Ok(corners_to_displacement(
            &apply_homography(&view_h, &src)?,
            &base,
        ))
    }

    fn digest(pair: &ViewPair<'_>) -> u64 {
        let mut h = rng::fnv1a(pair.thermal.pixels());
        h = rng::mix(h, rng::fnv1a(pair.satellite.pixels()));
        for v in [
            pair.thermal_view.origin.x,
            pair.thermal_view.origin.y,
            pair.thermal_view.scale,
            pair.satellite_view.origin.x,
            pair.satellite_view.origin.y,
            pair.satellite_view.scale,
        ] {
            h = rng::mix(h, v.to_bits());
        }
        h
    }
}

impl HomographyEstimator for OracleEstimator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate_schedule(
        &self,
        pair: &ViewPair<'_>,
        planned: usize,
        run: usize,
    ) -> Result<EstimateTrajectory> {
        check_schedule(planned, run)?;
        pair.validate()?;
        let exact = self.exact_displacement(pair)?;
        let sigma = self.cfg.noise_sigma;
        let mut r = rng::stream(rng::mix(self.cfg.seed, Self::digest(pair)));
        let per_iteration = (0..run)
            .map(|_| {
                if sigma == 0.0 {
                    exact
                } else {
                    let noise =
                        Displacement::from_fn(|_, _| sigma * r.sample::<f64, _>(StandardNormal));
                    exact + noise
                }
            })
            .collect();
        EstimateTrajectory::new(per_iteration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ViewTransform;
    use crate::image::GrayImage;

    fn pair<'a>(s: &'a GrayImage, t: &'a GrayImage) -> ViewPair<'a> {
        ViewPair {
            satellite: s,
            thermal: t,
            satellite_view: ViewTransform::identity(),
            thermal_view: ViewTransform::identity(),
        }
    }

    #[test]
    fn exact_identity_is_zero() {
        let img = GrayImage::filled(32, 32, 9);
        let o = OracleEstimator::new(OracleConfig {
            ground_truth: Homography::identity(),
            noise_sigma: 0.0,
            seed: 1,
        })
        .unwrap();
        let t = o.estimate(&pair(&img, &img), 6).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.per_iteration.iter().all(|d| *d == Displacement::ZERO));
    }

    #[test]
    fn exact_translation_every_iteration() {
        let img = GrayImage::filled(256, 256, 9);
        let o = OracleEstimator::new(OracleConfig {
            ground_truth: Homography::translation(6.0, -6.0),
            noise_sigma: 0.0,
            seed: 1,
        })
        .unwrap();
        let t = o.estimate(&pair(&img, &img), 6).unwrap();
        for d in &t.per_iteration {
            assert!((*d - Displacement::constant(6.0, -6.0)).max_abs() < 1e-9);
        }
    }

    #[test]
    fn noisy_is_deterministic_and_prefix_stable() {
        let a = GrayImage::filled(16, 16, 1);
        let b = GrayImage::filled(16, 16, 2);
        let o = OracleEstimator::new(OracleConfig {
            ground_truth: Homography::identity(),
            noise_sigma: 2.0,
            seed: 5,
        })
        .unwrap();
        let full = o.estimate(&pair(&a, &a), 6).unwrap();
        assert_eq!(full, o.estimate(&pair(&a, &a), 6).unwrap());
        let prefix = o.estimate_schedule(&pair(&a, &a), 6, 2).unwrap();
        assert_eq!(prefix.per_iteration[..], full.per_iteration[..2]);
        // different view content draws different noise
        assert_ne!(full, o.estimate(&pair(&a, &b), 6).unwrap());
        assert!(OracleEstimator::new(OracleConfig {
            noise_sigma: -1.0,
            ..*o.config()
        })
        .is_err());
    }
}
