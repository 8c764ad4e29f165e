//! Homography estimators behind a common contract.
//!
//! An estimator receives a satellite view and a thermal view, both already
//! resized, and returns a trajectory of four-corner displacements, one per
//! iteration. The views carry the similarity that relates them to their full
//! resolution frames; the oracle uses it to produce exact answers and the
//! classical aligner uses only its scale.

mod classical;
mod external;
mod loss;
mod oracle;
mod two_stage;

use serde::{Deserialize, Serialize};

pub use classical::{Alignment, ClassicalConfig, ClassicalEstimator};
pub use external::{ExternalEstimator, ProtocolRequest, ProtocolResponse};
pub use loss::compute_croptta_loss;
pub use oracle::{OracleConfig, OracleEstimator};
pub use two_stage::{
    estimate_two_stage, refine_second_stage, BoundingBox, TwoStageOptions, TwoStageOutput,
};

use crate::error::{Error, Result};
use crate::geometry::{Displacement, ViewTransform};
use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTrajectory {
    pub per_iteration: Vec<Displacement>,
    /// Per-corner variance reported by estimators that model it.
    #[serde(default)]
    pub variance: Option<Displacement>,
}

impl EstimateTrajectory {
    pub fn new(per_iteration: Vec<Displacement>) -> Result<Self> {
        if per_iteration.is_empty() {
            return Err(Error::EmptyList("trajectory"));
        }
        Ok(Self {
            per_iteration,
            variance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.per_iteration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_iteration.is_empty()
    }

    /// The estimate: the last iteration.
    pub fn last(&self) -> &Displacement {
        self.per_iteration
            .last()
            .expect("trajectory is never empty")
    }

    /// Displacement after iteration `k` (1-based).
    pub fn at_iteration(&self, k: usize) -> Option<&Displacement> {
        k.checked_sub(1).and_then(|i| self.per_iteration.get(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub k1: usize,
    pub k2: usize,
    pub gamma: f64,
    pub w_b_expand: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            k1: 6,
            k2: 6,
            gamma: 0.85,
            w_b_expand: 64,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::InvalidConfig(
                "iteration counts must be positive".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma {} outside (0, 1]",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// A satellite/thermal view pair and how each view sits in its full frame.
#[derive(Debug, Clone, Copy)]
pub struct ViewPair<'a> {
    pub satellite: &'a GrayImage,
    pub thermal: &'a GrayImage,
    /// Full satellite pixels -> satellite view pixels.
    pub satellite_view: ViewTransform,
    /// Full thermal pixels -> thermal view pixels.
    pub thermal_view: ViewTransform,
}

impl<'a> ViewPair<'a> {
    pub fn validate(&self) -> Result<()> {
        if !self.satellite.is_square() || !self.thermal.is_square() {
            return Err(Error::InvalidConfig(
                "estimator inputs must be square".into(),
            ));
        }
        if self.satellite.width() < 2 || self.thermal.width() < 2 {
            return Err(Error::InvalidConfig("estimator inputs too small".into()));
        }
        Ok(())
    }
}

pub trait HomographyEstimator: Send + Sync {
    fn name(&self) -> &str;

    /// Run the iteration schedule planned for `planned` iterations and stop
    /// after `run` of them. The result is always a prefix of the full run.
    fn estimate_schedule(
        &self,
        pair: &ViewPair<'_>,
        planned: usize,
        run: usize,
    ) -> Result<EstimateTrajectory>;

    fn estimate(&self, pair: &ViewPair<'_>, iterations: usize) -> Result<EstimateTrajectory> {
        self.estimate_schedule(pair, iterations, iterations)
    }
}

pub(crate) fn check_schedule(planned: usize, run: usize) -> Result<()> {
    if planned == 0 || run == 0 || run > planned {
        return Err(Error::InvalidConfig(format!(
            "iteration schedule: run {run} of {planned}"
        )));
    }
    Ok(())
}
