//! Crop sampling for crop-consensus test-time augmentation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::image::GrayImage;
use crate::rng;

/// Square crop of the full thermal image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub origin: Point2,
    pub size: usize,
}

impl CropSpec {
    pub fn new(origin: Point2, size: usize) -> Self {
        Self { origin, size }
    }

    pub fn full(w_t: usize) -> Self {
        Self::new(Point2::default(), w_t)
    }

    pub fn is_full_view(&self, w_t: usize) -> bool {
        self.size == w_t && self.origin == Point2::default()
    }

    pub fn validate(&self, w_t: usize) -> Result<()> {
        let o = self.origin;
        let integral = o.x.fract() == 0.0 && o.y.fract() == 0.0;
        if self.size < 2
            || !integral
            || o.x < 0.0
            || o.y < 0.0
            || o.x + self.size as f64 > w_t as f64
            || o.y + self.size as f64 > w_t as f64
        {
            return Err(Error::OutOfBounds(format!(
                "crop {}px at ({}, {}) in {w_t}px frame",
                self.size, o.x, o.y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    Random,
    Grid,
}

impl FromStr for SamplingMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "grid" => Ok(Self::Grid),
            _ => Err(Error::InvalidConfig(format!(
                "unknown sampling method {s:?}"
            ))),
        }
    }
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Grid => "grid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub method: SamplingMethod,
    /// Crop offset in thermal pixels; crops have side `w_t - o_c`.
    pub o_c: usize,
    /// Total views including the original.
    pub n_c: usize,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            method: SamplingMethod::Random,
            o_c: 32,
            n_c: 5,
            seed: 0,
        }
    }
}

impl SamplingPlan {
    pub fn validate(&self, w_t: usize) -> Result<()> {
        if self.n_c == 0 {
            return Err(Error::InvalidPlan("n_c must be at least 1".into()));
        }
        if self.o_c >= w_t || w_t - self.o_c < 2 {
            return Err(Error::InvalidPlan(format!(
                "crop offset {} too large for {w_t}px",
                self.o_c
            )));
        }
        if self.method == SamplingMethod::Grid && !matches!(self.n_c, 1 | 5) {
            return Err(Error::InvalidPlan(format!(
                "grid sampling supports n_c of 1 or 5, got {}",
                self.n_c
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Crop list for one thermal image; element 0 is always the full view.
pub fn generate_crops(plan: &SamplingPlan, w_t: usize) -> Result<Vec<CropSpec>> {
    plan.validate(w_t)?;
    let size = w_t - plan.o_c;
    let mut crops = Vec::with_capacity(plan.n_c);
    crops.push(CropSpec::full(w_t));
    match plan.method {
        SamplingMethod::Random => {
            let mut r = rng::stream(plan.seed);
            for _ in 1..plan.n_c {
                let x = r.random_range(0..=plan.o_c) as f64;
                let y = r.random_range(0..=plan.o_c) as f64;
                crops.push(CropSpec::new(Point2::new(x, y), size));
            }
        }
        SamplingMethod::Grid => {
            if plan.n_c == 5 {
                let o = plan.o_c as f64;
                for (x, y) in [(0.0, 0.0), (o, 0.0), (0.0, o), (o, o)] {
                    crops.push(CropSpec::new(Point2::new(x, y), size));
                }
            }
        }
    }
    Ok(crops)
}

/// Extract `crop` from `image` and bilinearly resize it to `w_r`×`w_r`.
pub fn crop_and_resize(image: &GrayImage, crop: &CropSpec, w_r: usize) -> Result<GrayImage> {
    if w_r == 0 {
        return Err(Error::InvalidConfig("resize width must be positive".into()));
    }
    crop.validate(image.width().min(image.height()))?;
    Ok(image.resample_region(crop.origin.x, crop.origin.y, crop.size as f64, w_r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_crops() {
        let plan = SamplingPlan {
            method: SamplingMethod::Grid,
            o_c: 32,
            n_c: 5,
            seed: 1,
        };
        let crops = generate_crops(&plan, 512).unwrap();
        assert_eq!(crops[0], CropSpec::full(512));
        let origins: Vec<_> = crops[1..]
            .iter()
            .map(|c| (c.origin.x, c.origin.y, c.size))
            .collect();
        assert_eq!(
            origins,
            vec![
                (0.0, 0.0, 480),
                (32.0, 0.0, 480),
                (0.0, 32.0, 480),
                (32.0, 32.0, 480)
            ]
        );
    }

    #[test]
    fn zero_offset_gives_full_views() {
        let plan = SamplingPlan {
            method: SamplingMethod::Random,
            o_c: 0,
            n_c: 5,
            seed: 3,
        };
        let crops = generate_crops(&plan, 512).unwrap();
        assert_eq!(crops.len(), 5);
        assert!(crops.iter().all(|c| c.is_full_view(512)));
    }

    #[test]
    fn random_is_deterministic() {
        let plan = SamplingPlan {
            method: SamplingMethod::Random,
            o_c: 32,
            n_c: 5,
            seed: 42,
        };
        assert_eq!(
            generate_crops(&plan, 512).unwrap(),
            generate_crops(&plan, 512).unwrap()
        );
        let other = generate_crops(&plan.with_seed(43), 512).unwrap();
        assert_ne!(generate_crops(&plan, 512).unwrap(), other);
    }

    #[test]
    fn invalid_plans() {
        let grid = SamplingPlan {
            method: SamplingMethod::Grid,
            o_c: 32,
            n_c: 4,
            seed: 0,
        };
        assert!(matches!(
            generate_crops(&grid, 512),
            Err(Error::InvalidPlan(_))
        ));
        let big = SamplingPlan {
            o_c: 512,
            ..SamplingPlan::default()
        };
        assert!(matches!(
            generate_crops(&big, 512),
            Err(Error::InvalidPlan(_))
        ));
        let grid1 = SamplingPlan {
            method: SamplingMethod::Grid,
            o_c: 32,
            n_c: 1,
            seed: 0,
        };
        assert_eq!(generate_crops(&grid1, 512).unwrap().len(), 1);
    }

    #[test]
    fn crop_resize_identity_and_constant() {
        let img = GrayImage::from_fn(16, 16, |x, y| (x * 7 + y * 3) as u8);
        assert_eq!(crop_and_resize(&img, &CropSpec::full(16), 16).unwrap(), img);
        let flat = GrayImage::filled(20, 20, 77);
        let out = crop_and_resize(&flat, &CropSpec::new(Point2::new(3.0, 2.0), 15), 8).unwrap();
        assert_eq!(out, GrayImage::filled(8, 8, 77));
    }

    #[test]
    fn checkerboard_downsize_matches_hand_bilinear() {
        // 4x4 checkerboard of 0/200; downsizing 2x samples source positions
        // 0 and 2 on each axis, which all land on 0-valued pixels.
        let img = GrayImage::from_fn(4, 4, |x, y| if (x + y) % 2 == 0 { 0 } else { 200 });
        let out = crop_and_resize(&img, &CropSpec::full(4), 2).unwrap();
        assert_eq!(out.pixels(), &[0, 0, 0, 0]);
        // 4 -> 3 samples at 0, 4/3, 8/3. At (4/3, 0) between pixels 200 and 0
        // with fx = 1/3: 200*(2/3) = 133.3 -> 133. At (4/3, 4/3) the cell is
        // [[0,200],[200,0]]: rows 66.7 and 133.3, blended 2/3:1/3 -> 88.9 -> 89.
        let out = crop_and_resize(&img, &CropSpec::full(4), 3).unwrap();
        assert_eq!(out.get(1, 0), 133);
        assert_eq!(out.get(1, 1), 89);
        assert_eq!(out.get(0, 0), 0);
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = GrayImage::filled(10, 10, 0);
        let bad = CropSpec::new(Point2::new(4.0, 0.0), 8);
        assert!(matches!(
            crop_and_resize(&img, &bad, 4),
            Err(Error::OutOfBounds(_))
        ));
    }
}
