//! Satellite/thermal pair rendering and failure-mode corruptions.

use rand::Rng;
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use super::scene::{fill_polygon, random_quad, Scene, Texture};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_homography, corners_of_frame, corners_to_displacement, dlt, CornerSet, Displacement,
    FrameConfig, Homography, Point2,
};
use crate::image::{quantize, GrayImage, Plane};
use crate::metrics::{max_dc_m, sample_center_offset, Category, DcConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub category: Category,
    /// Category-specific strength:
    /// clean: projective jitter in px; textureless: remaining contrast
    /// fraction; corrupted: exposure gain; geometric noise: corner shift in
    /// px; exceeds region: fraction of the thermal width outside; outdated:
    /// fraction of the footprint repainted; self-similar: unused.
    pub magnitude: f64,
}

impl CorruptionSpec {
    pub fn new(category: Category, magnitude: f64) -> Result<Self> {
        let spec = Self {
            category,
            magnitude,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Typical magnitude for a category, drawn from `r` where it varies.
    pub fn sample(category: Category, r: &mut Pcg64) -> Self {
        let magnitude = match category {
            Category::Clean => 4.0,
            Category::Textureless => r.random_range(0.002..0.01),
            Category::Corrupted => {
                if r.random::<bool>() {
                    r.random_range(4.0..10.0)
                } else {
                    r.random_range(0.1..0.25)
                }
            }
            Category::GeometricNoise => 64.0,
            Category::SelfSimilar => 0.0,
            Category::ExceedsRegion => r.random_range(0.3..0.6),
            Category::Outdated => r.random_range(0.4..0.8),
        };
        Self {
            category,
            magnitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.magnitude;
        let ok = m.is_finite()
            && match self.category {
                Category::Clean => (0.0..=4.0).contains(&m),
                Category::Textureless => (0.0..=1.0).contains(&m),
                Category::Corrupted => (0.1..=10.0).contains(&m),
                Category::GeometricNoise => (0.0..=64.0).contains(&m),
                Category::SelfSimilar => m >= 0.0,
                Category::ExceedsRegion => (0.0..1.0).contains(&m),
                Category::Outdated => (0.0..=1.0).contains(&m),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "{} magnitude {m} out of range",
                self.category
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SamplePair {
    pub satellite: GrayImage,
    pub thermal: GrayImage,
    /// Label displacement in full satellite pixels.
    pub gt: Displacement,
    /// Label mapping from full thermal pixels to full satellite pixels.
    pub homography: Homography,
    pub category: Category,
}

/// Render one pair from `scene`.
///
/// The satellite patch is a `w_s` square of the scene. The thermal patch is a
/// `w_t` square whose center sits at a random offset within `d_c` of the
/// satellite center, seen through a monotone intensity remap, then
/// corrupted according to `corruption`. For `SelfSimilar`, pass a tiled
/// scene.
pub fn make_pair(
    scene: &Scene,
    d_c: &DcConfig,
    corruption: &CorruptionSpec,
    frames: &FrameConfig,
    seed: u64,
) -> Result<SamplePair> {
    let (placement, mut r) = place(scene.image.width(), d_c, corruption, frames, seed)?;
    if !scene.image.is_square() {
        return Err(Error::InvalidConfig("scene must be square".into()));
    }
    let Placement {
        sx,
        sy,
        footprint,
        homography,
        render_h,
        warp,
    } = placement;

    let mut satellite = scene
        .image
        .sub_image(sx as usize, sy as usize, frames.w_s, frames.w_s)?;
    let mut thermal = Plane::zeros(frames.w_t, frames.w_t);
    for y in 0..frames.w_t {
        for x in 0..frames.w_t {
            let p = render_h.apply_point(Point2::new(x as f64, y as f64))?;
            thermal.data[y * frames.w_t + x] =
                scene.image.sample_clamped(p.x + sx, p.y + sy) as f32;
        }
    }
    let mut thermal = domain_gap(&thermal, scene.spec.domain_gap, &mut r);
    if let Some(warp) = warp {
        // zero padding where the warped image pulls from outside the original
        let edge = (frames.w_t - 1) as f64;
        for y in 0..frames.w_t {
            for x in 0..frames.w_t {
                let p = warp.apply_point(Point2::new(x as f64, y as f64))?;
                if !(0.0..=edge).contains(&p.x) || !(0.0..=edge).contains(&p.y) {
                    thermal[y * frames.w_t + x] = 0.0;
                }
            }
        }
    }

    match corruption.category {
        Category::Textureless => {
            let mean = thermal.iter().sum::<f64>() / thermal.len() as f64;
            for v in &mut thermal {
                *v = mean
                    + (*v - mean) * corruption.magnitude
                    + 3.0 * r.sample::<f64, _>(StandardNormal);
            }
        }
        Category::Corrupted => exposure(&mut thermal, corruption.magnitude, &mut r),
        Category::Outdated => {
            satellite = outdate(&satellite, &footprint, corruption.magnitude, &mut r)?
        }
        Category::SelfSimilar if scene.spec.texture != Texture::Tiled => {
            return Err(Error::InvalidConfig(
                "self-similar pairs need a tiled scene".into(),
            ));
        }
        _ => {}
    }
    let thermal = GrayImage::new(
        frames.w_t,
        frames.w_t,
        thermal.into_iter().map(quantize).collect(),
    )?;

    let gt = full_frame_displacement(&homography, frames)?;
    Ok(SamplePair {
        satellite,
        thermal,
        gt,
        homography,
        category: corruption.category,
    })
}

/// Geometry of one sample, drawn before any pixel is rendered.
#[derive(Debug, Clone, Copy)]
pub struct Placement {
    /// Satellite patch origin in the scene.
    pub sx: f64,
    pub sy: f64,
    /// Untouched thermal corners in satellite pixels.
    pub footprint: CornerSet,
    /// Label mapping, full thermal to full satellite pixels.
    pub homography: Homography,
    /// Mapping the thermal pixels actually follow.
    pub render_h: Homography,
    /// Geometric-noise warp from rendered to untouched thermal pixels.
    pub warp: Option<Homography>,
}

/// Draw the sample geometry. Returns the stream positioned for rendering.
pub fn place(
    scene_size: usize,
    d_c: &DcConfig,
    corruption: &CorruptionSpec,
    frames: &FrameConfig,
    seed: u64,
) -> Result<(Placement, Pcg64)> {
    frames.validate()?;
    corruption.validate()?;
    let n = scene_size;
    if n < frames.w_s {
        return Err(Error::InvalidConfig(format!(
            "scene {n} px cannot hold a {} px patch",
            frames.w_s
        )));
    }
    let (w_s, w_t) = (frames.w_s as f64, frames.w_t as f64);
    let mut r = rng::stream(rng::derive(seed, "pair"));

    // satellite patch, keeping a margin for content beyond its border
    let margin = ((n - frames.w_s) / 2).min(frames.w_t);
    let sx = r.random_range(margin..=n - frames.w_s - margin) as f64;
    let sy = r.random_range(margin..=n - frames.w_s - margin) as f64;

    let offset = if corruption.category == Category::ExceedsRegion {
        exceeding_offset(corruption.magnitude, frames, &mut r)
    } else {
        sample_center_offset(d_c, frames, rng::derive(seed, "offset"))?
    };
    let t0 = Point2::new((w_s - w_t) / 2.0 + offset.x, (w_s - w_t) / 2.0 + offset.y);

    let thermal_corners = corners_of_frame(frames.w_t)?;
    let footprint = thermal_corners.map(|p| p + t0);
    let label_dst = if corruption.category == Category::Clean && corruption.magnitude > 0.0 {
        jitter(&footprint, corruption.magnitude, &mut r)
    } else {
        footprint
    };
    let homography = dlt(&thermal_corners, &label_dst)?;

    let warp = if corruption.category == Category::GeometricNoise && corruption.magnitude > 0.0 {
        let shifted = perturb_corners(&thermal_corners, corruption.magnitude, &mut r);
        Some(dlt(&thermal_corners, &shifted)?)
    } else {
        None
    };
    let render_h = match &warp {
        Some(w) => homography.compose(w)?,
        None => homography,
    };
    Ok((
        Placement {
            sx,
            sy,
            footprint,
            homography,
            render_h,
            warp,
        },
        r,
    ))
}

/// Full-pixel label displacement of a thermal-to-satellite homography: the
/// resized-frame corner displacement scaled back to satellite pixels.
pub fn full_frame_displacement(h: &Homography, frames: &FrameConfig) -> Result<Displacement> {
    let view_h = frames
        .satellite_view()
        .homography()
        .compose(h)?
        .compose(&frames.thermal_view().inverse_homography())?;
    let base = corners_of_frame(frames.w_r)?;
    let d = corners_to_displacement(&apply_homography(&view_h, &base)?, &base);
    Ok(frames.to_full_frame(&d))
}

/// Center offset that pushes `fraction` of the thermal width past one or two
/// satellite edges.
fn exceeding_offset(fraction: f64, frames: &FrameConfig, r: &mut Pcg64) -> Point2 {
    let reach = max_dc_m(frames) / frames.meters_per_pixel + fraction * frames.w_t as f64;
    let sx = if r.random::<bool>() { 1.0 } else { -1.0 };
    let sy = if r.random::<bool>() { 1.0 } else { -1.0 };
    match r.random_range(0..3) {
        0 => Point2::new(sx * reach, r.random_range(-0.5..0.5) * reach),
        1 => Point2::new(r.random_range(-0.5..0.5) * reach, sy * reach),
        _ => Point2::new(sx * reach, sy * reach),
    }
}

fn jitter(c: &CornerSet, max: f64, r: &mut Pcg64) -> CornerSet {
    c.map(|p| {
        Point2::new(
            p.x + r.random_range(-max..=max),
            p.y + r.random_range(-max..=max),
        )
    })
}

/// Shift every corner by between half and all of `max` pixels in a random
/// direction.
fn perturb_corners(c: &CornerSet, max: f64, r: &mut Pcg64) -> CornerSet {
    c.map(|p| {
        let rho = r.random_range(0.5 * max..=max);
        let theta = r.random_range(0.0..std::f64::consts::TAU);
        Point2::new(p.x + rho * theta.cos(), p.y + rho * theta.sin())
    })
}

/// Monotone gamma-like remap, slight blur and sensor noise.
fn domain_gap(plane: &Plane, strength: f64, r: &mut Pcg64) -> Vec<f64> {
    let blurred = if strength > 0.0 {
        plane.blur5()
    } else {
        plane.clone()
    };
    let gamma = 1.0 + 1.2 * strength;
    let sigma = 4.0 * strength;
    blurred
        .data
        .iter()
        .map(|&v| {
            let u = (v as f64 / 255.0).clamp(0.0, 1.0).powf(gamma);
            let noise = if sigma > 0.0 {
                sigma * r.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            20.0 + 215.0 * u + noise
        })
        .collect()
}

/// Over- (gain > 1) or under-exposure with clipping, then heavy noise.
fn exposure(values: &mut [f64], gain: f64, r: &mut Pcg64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let offset = if gain > 1.0 {
        // saturate all but the darkest tenth
        255.0 - gain * sorted[sorted.len() / 10]
    } else {
        0.0
    };
    for v in values.iter_mut() {
        *v = (gain * *v + offset).clamp(0.0, 255.0) + 12.0 * r.sample::<f64, _>(StandardNormal);
    }
}

/// Repaint random polygons over roughly `fraction` of the thermal footprint.
fn outdate(
    sat: &GrayImage,
    footprint: &CornerSet,
    fraction: f64,
    r: &mut Pcg64,
) -> Result<GrayImage> {
    let w = sat.width();
    let mut field: Vec<f64> = sat.pixels().iter().map(|&p| p as f64).collect();
    let (lo, hi) = footprint.bounds();
    let (fw, fh) = (hi.x - lo.x, hi.y - lo.y);
    let mut painted = 0.0;
    let target = fraction * fw * fh;
    while painted < target {
        let mut quad = random_quad((fw as usize).max(1), (fh as usize).max(1), 20.0, 90.0, r);
        for q in &mut quad {
            q.0 += lo.x;
            q.1 += lo.y;
        }
        let tone = r.random_range(20.0..235.0);
        let mut count = 0.0f64;
        fill_polygon(&mut field, w, w, &quad, |f, _, _| {
            *f = tone;
            count += 1.0;
        });
        painted += count.max(50.0);
    }
    GrayImage::new(w, w, field.into_iter().map(quantize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scene::{build_scene, SceneSpec};

    fn small() -> FrameConfig {
        FrameConfig {
            w_s: 192,
            w_t: 64,
            w_r: 32,
            meters_per_pixel: 1.0,
        }
    }

    fn scene(texture: Texture) -> Scene {
        build_scene(SceneSpec::new(9, texture, 400)).unwrap()
    }

    #[test]
    fn centered_clean_pair() {
        let f = small();
        let c = CorruptionSpec::new(Category::Clean, 0.0).unwrap();
        let p = make_pair(
            &scene(Texture::Rich),
            &DcConfig::new(0.0).unwrap(),
            &c,
            &f,
            1,
        )
        .unwrap();
        // thermal corners at 64..127 in satellite px; view scales 1/6 and 1/2
        let (s, t) = (32.0 / 192.0, 32.0 / 64.0);
        let want = Displacement::from_fn(|axis, corner| {
            let base = corners_of_frame(32).unwrap().0[corner];
            let b = if axis == 0 { base.x } else { base.y };
            (64.0 + b / t) * s - b
        });
        assert!((p.gt - f.to_full_frame(&want)).max_abs() < 1e-9);
        assert_eq!(p.thermal.width(), 64);
        assert_eq!(p.satellite.width(), 192);
    }

    #[test]
    fn zero_geometric_noise_matches_clean() {
        let f = small();
        let sc = scene(Texture::Rich);
        let dc = DcConfig::new(32.0).unwrap();
        let clean = make_pair(
            &sc,
            &dc,
            &CorruptionSpec::new(Category::Clean, 0.0).unwrap(),
            &f,
            5,
        )
        .unwrap();
        let geo = make_pair(
            &sc,
            &dc,
            &CorruptionSpec::new(Category::GeometricNoise, 0.0).unwrap(),
            &f,
            5,
        )
        .unwrap();
        assert_eq!(clean.thermal, geo.thermal);
        assert_eq!(clean.satellite, geo.satellite);
        assert_eq!(clean.gt, geo.gt);
    }

    #[test]
    fn geometric_noise_keeps_label() {
        let f = small();
        let sc = scene(Texture::Rich);
        let dc = DcConfig::new(32.0).unwrap();
        let clean = make_pair(
            &sc,
            &dc,
            &CorruptionSpec::new(Category::Clean, 0.0).unwrap(),
            &f,
            5,
        )
        .unwrap();
        let geo = make_pair(
            &sc,
            &dc,
            &CorruptionSpec::new(Category::GeometricNoise, 16.0).unwrap(),
            &f,
            5,
        )
        .unwrap();
        assert_eq!(clean.gt, geo.gt);
        assert_ne!(clean.thermal, geo.thermal);
        // the warp leaves zero padding where it reaches past the image
        let zeros = |p: &SamplePair| p.thermal.pixels().iter().filter(|&&v| v == 0).count();
        assert_eq!(zeros(&clean), 0);
        assert!(zeros(&geo) > 0);
    }

    #[test]
    fn exceeding_pairs_leave_the_frame() {
        let f = small();
        let c = CorruptionSpec::new(Category::ExceedsRegion, 0.4).unwrap();
        for seed in 0..20 {
            let p = make_pair(
                &scene(Texture::Rich),
                &DcConfig::new(0.0).unwrap(),
                &c,
                &f,
                seed,
            )
            .unwrap();
            let quad = apply_homography(&p.homography, &corners_of_frame(64).unwrap()).unwrap();
            let (lo, hi) = quad.bounds();
            assert!(
                lo.x < 0.0 || lo.y < 0.0 || hi.x > 191.0 || hi.y > 191.0,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn corruptions_change_statistics() {
        let f = small();
        let sc = scene(Texture::Rich);
        let dc = DcConfig::new(0.0).unwrap();
        let clean = make_pair(
            &sc,
            &dc,
            &CorruptionSpec::new(Category::Clean, 0.0).unwrap(),
            &f,
            2,
        )
        .unwrap();
        let flat = make_pair(
            &sc,
            &dc,
            &CorruptionSpec::new(Category::Textureless, 0.01).unwrap(),
            &f,
            2,
        )
        .unwrap();
        assert!(flat.thermal.mean_and_std().1 < 0.2 * clean.thermal.mean_and_std().1);
        let old = make_pair(
            &sc,
            &dc,
            &CorruptionSpec::new(Category::Outdated, 0.5).unwrap(),
            &f,
            2,
        )
        .unwrap();
        assert_eq!(old.thermal, clean.thermal);
        assert_ne!(old.satellite, clean.satellite);
        assert!(CorruptionSpec::new(Category::Corrupted, 20.0).is_err());
        assert!(CorruptionSpec::new(Category::GeometricNoise, 65.0).is_err());
        assert!(make_pair(
            &sc,
            &dc,
            &CorruptionSpec::new(Category::SelfSimilar, 0.0).unwrap(),
            &f,
            2
        )
        .is_err());
    }

    #[test]
    fn deterministic() {
        let f = small();
        let sc = scene(Texture::Rich);
        let dc = DcConfig::new(40.0).unwrap();
        let c = CorruptionSpec::new(Category::Corrupted, 6.0).unwrap();
        let a = make_pair(&sc, &dc, &c, &f, 77).unwrap();
        let b = make_pair(&sc, &dc, &c, &f, 77).unwrap();
        assert_eq!(a.thermal, b.thermal);
        assert_eq!(a.gt, b.gt);
    }
}
