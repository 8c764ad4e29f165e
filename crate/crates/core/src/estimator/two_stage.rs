//! Coarse-to-fine two-stage estimation.
//!
//! Stage one aligns the resized thermal view with the whole resized
//! satellite image. The predicted thermal footprint's bounding box, expanded
//! by `w_b_expand` pixels, is cut from the full-resolution satellite image and
//! stage two re-estimates inside it. All reported displacements are in the
//! resized full-satellite frame.

use serde::{Deserialize, Serialize};

use super::{EstimateTrajectory, EstimatorConfig, HomographyEstimator, ViewPair};
use crate::error::{Error, Result};
use crate::geometry::{
    corners_of_frame, corners_to_displacement, displacement_to_corners, Displacement, FrameConfig,
    Point2, ViewTransform,
};
use crate::image::GrayImage;

/// Square satellite region used by the second stage, in satellite pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub origin: Point2,
    pub side: f64,
    /// The expanded box had to be moved or shrunk to fit the satellite frame.
    pub clamped: bool,
}

impl BoundingBox {
    /// Bounding box of the thermal footprint predicted by a resized-frame
    /// displacement, expanded and clamped to the satellite frame.
    pub fn from_prediction(d: &Displacement, expand: usize, frames: &FrameConfig) -> Result<Self> {
        let base = corners_of_frame(frames.w_r)?;
        let sat_view = frames.satellite_view();
        let quad = displacement_to_corners(d, &base).map(|p| sat_view.to_full(p));
        let w_s = frames.w_s as f64;
        let (lo, hi) = quad.bounds();
        let raw_side = (hi.x - lo.x).max(hi.y - lo.y);
        if !raw_side.is_finite() {
            return Ok(Self {
                origin: Point2::default(),
                side: w_s,
                clamped: true,
            });
        }
        let side = raw_side.max(2.0) + expand as f64;
        let center = Point2::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
        let want = Point2::new(center.x - side / 2.0, center.y - side / 2.0);

        let fitted = side.min(w_s);
        let origin = Point2::new(
            want.x.clamp(0.0, w_s - fitted),
            want.y.clamp(0.0, w_s - fitted),
        );
        let clamped = fitted < side || origin != want;
        Ok(Self {
            origin,
            side: fitted,
            clamped,
        })
    }

    pub fn view(&self, w_r: usize) -> ViewTransform {
        ViewTransform::new(self.origin, w_r as f64 / self.side)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TwoStageOptions {
    /// Offset added to every stage-one corner before the box is built, in
    /// full satellite pixels.
    pub stage1_perturbation: Option<Displacement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageOutput {
    /// Stage one followed by stage two, `k1 + k2` entries.
    pub trajectory: EstimateTrajectory,
    pub bounding_box: BoundingBox,
}

/// Stage two only, starting from a resized-frame stage-one estimate.
/// Returns the stage-two trajectory mapped to the resized satellite frame.
pub fn refine_second_stage(
    estimator: &dyn HomographyEstimator,
    satellite_full: &GrayImage,
    thermal_resized: &GrayImage,
    stage1: &Displacement,
    cfg: &EstimatorConfig,
    frames: &FrameConfig,
) -> Result<(EstimateTrajectory, BoundingBox)> {
    cfg.validate()?;
    if satellite_full.width() != frames.w_s || !satellite_full.is_square() {
        return Err(Error::InvalidConfig(format!(
            "satellite must be {0}x{0}, got {1}x{2}",
            frames.w_s,
            satellite_full.width(),
            satellite_full.height()
        )));
    }
    let bbox = BoundingBox::from_prediction(stage1, cfg.w_b_expand, frames)?;
    let box_view = bbox.view(frames.w_r);
    let sat_box =
        satellite_full.resample_region(bbox.origin.x, bbox.origin.y, bbox.side, frames.w_r);
    let pair = ViewPair {
        satellite: &sat_box,
        thermal: thermal_resized,
        satellite_view: box_view,
        thermal_view: frames.thermal_view(),
    };
    let stage2 = estimator.estimate(&pair, cfg.k2)?;

    let base = corners_of_frame(frames.w_r)?;
    let sat_view = frames.satellite_view();
    let to_frame = |d: &Displacement| {
        let pts = displacement_to_corners(d, &base).map(|p| sat_view.to_view(box_view.to_full(p)));
        corners_to_displacement(&pts, &base)
    };
    let mut out = EstimateTrajectory::new(stage2.per_iteration.iter().map(to_frame).collect())?;
    out.variance = stage2.variance;
    Ok((out, bbox))
}

pub fn estimate_two_stage(
    estimator: &dyn HomographyEstimator,
    satellite_full: &GrayImage,
    thermal: &GrayImage,
    cfg: &EstimatorConfig,
    frames: &FrameConfig,
    options: &TwoStageOptions,
) -> Result<TwoStageOutput> {
    cfg.validate()?;
    frames.validate()?;
    let sat_r = satellite_full.resize_square(frames.w_r);
    let th_r = if thermal.width() == frames.w_r {
        thermal.clone()
    } else {
        thermal.resize_square(frames.w_r)
    };
    let pair = ViewPair {
        satellite: &sat_r,
        thermal: &th_r,
        satellite_view: frames.satellite_view(),
        thermal_view: frames.thermal_view(),
    };
    let stage1 = estimator.estimate(&pair, cfg.k1)?;
    let mut start = *stage1.last();
    if let Some(p) = options.stage1_perturbation {
        start = start + frames.from_full_frame(&p);
    }
    let (stage2, bounding_box) =
        refine_second_stage(estimator, satellite_full, &th_r, &start, cfg, frames)?;
    let mut per_iteration = stage1.per_iteration;
    per_iteration.extend(stage2.per_iteration);
    let mut trajectory = EstimateTrajectory::new(per_iteration)?;
    trajectory.variance = stage2.variance;
    Ok(TwoStageOutput {
        trajectory,
        bounding_box,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_inside_frame_is_not_clamped() {
        let frames = FrameConfig::default();
        // centered 512 px thermal footprint: corners at 512..1023 full px
        let d = Displacement([
            [
                512.0 / 6.0,
                1023.0 / 6.0 - 255.0,
                1023.0 / 6.0 - 255.0,
                512.0 / 6.0,
            ],
            [
                512.0 / 6.0,
                512.0 / 6.0,
                1023.0 / 6.0 - 255.0,
                1023.0 / 6.0 - 255.0,
            ],
        ]);
        let b = BoundingBox::from_prediction(&d, 64, &frames).unwrap();
        assert!(!b.clamped);
        assert!((b.side - (511.0 + 64.0)).abs() < 1e-9);
        assert!((b.origin.x - (512.0 - 32.0)).abs() < 1e-9);
    }

    #[test]
    fn box_outside_frame_is_clamped() {
        let frames = FrameConfig::default();
        let d = Displacement::constant(400.0, 400.0);
        let b = BoundingBox::from_prediction(&d, 64, &frames).unwrap();
        assert!(b.clamped);
        assert!(b.origin.x >= 0.0 && b.origin.x + b.side <= 1536.0 + 1e-9);
        assert!(b.origin.y >= 0.0 && b.origin.y + b.side <= 1536.0 + 1e-9);
    }
}
