//! Four-corner displacement algebra, DLT fitting and crop-view recovery.
//!
//! A displacement is a 2×4 matrix of per-corner offsets. Corners are always
//! ordered top-left, top-right, bottom-right, bottom-left, and the offsets are
//! measured from the corners of the satellite view toward the positions the
//! thermal view's corners land on.

use std::ops::{Add, Sub};

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::CropSpec;

const DEPTH_EPS: f64 = 1e-12;
const DET_EPS: f64 = 1e-12;
const H33_EPS: f64 = 1e-9;
const COLLINEAR_REL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

/// Four corners in TL, TR, BR, BL order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerSet(pub [Point2; 4]);

impl CornerSet {
    pub fn points(&self) -> &[Point2; 4] {
        &self.0
    }

    pub fn centroid(&self) -> Point2 {
        let s = self.0.iter().fold(Point2::default(), |a, &p| a + p);
        Point2::new(s.x / 4.0, s.y / 4.0)
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.0 {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    pub fn map(&self, f: impl FnMut(Point2) -> Point2) -> CornerSet {
        CornerSet(self.0.map(f))
    }
}

/// Per-corner `(dx, dy)` offsets stored as rows `[dx; dy]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Displacement(pub [[f64; 4]; 2]);

impl Displacement {
    pub const ZERO: Displacement = Displacement([[0.0; 4]; 2]);

    pub fn constant(dx: f64, dy: f64) -> Self {
        Displacement([[dx; 4], [dy; 4]])
    }

    /// Fill entries row by row, `f(axis, corner)`.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = [[0.0; 4]; 2];
        for (a, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f(a, c);
            }
        }
        Displacement(m)
    }

    pub fn get(&self, axis: usize, corner: usize) -> f64 {
        self.0[axis][corner]
    }

    pub fn corner(&self, i: usize) -> Point2 {
        Point2::new(self.0[0][i], self.0[1][i])
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flat_map(|r| r.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    pub fn scale(&self, s: f64) -> Displacement {
        Displacement::from_fn(|a, c| self.0[a][c] * s)
    }

    /// Elementwise absolute sum.
    pub fn l1(&self) -> f64 {
        self.iter().map(f64::abs).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Add for Displacement {
    type Output = Displacement;
    fn add(self, o: Displacement) -> Displacement {
        Displacement::from_fn(|a, c| self.0[a][c] + o.0[a][c])
    }
}

impl Sub for Displacement {
    type Output = Displacement;
    fn sub(self, o: Displacement) -> Displacement {
        Displacement::from_fn(|a, c| self.0[a][c] - o.0[a][c])
    }
}

/// A normalized, invertible 3×3 projective transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    /// `p -> s * p + t`
    pub fn scale_translation(s: f64, tx: f64, ty: f64) -> Self {
        Homography(Matrix3::new(s, 0.0, tx, 0.0, s, ty, 0.0, 0.0, 1.0))
    }

    /// Normalize so `h33 = 1` (or unit Frobenius norm when `h33` vanishes)
    /// and check invertibility.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateCorners("non-finite homography".into()));
        }
        let h33 = m[(2, 2)];
        let n = if h33.abs() > H33_EPS {
            m / h33
        } else {
            let f = m.norm();
            if f == 0.0 {
                return Err(Error::DegenerateCorners("zero homography".into()));
            }
            m / f
        };
        if n.determinant().abs() <= DET_EPS {
            return Err(Error::DegenerateCorners(format!(
                "singular homography (det {:e})",
                n.determinant()
            )));
        }
        Ok(Homography(n))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::DegenerateCorners("homography not invertible".into()))?;
        Homography::from_matrix(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        Homography::from_matrix(self.0 * other.0)
    }

    pub fn apply_point(&self, p: Point2) -> Result<Point2> {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() <= DEPTH_EPS {
            return Err(Error::PointAtInfinity { depth: v.z });
        }
        Ok(Point2::new(v.x / v.z, v.y / v.z))
    }

    /// Homography taking the corners of a `width` frame to those corners
    /// plus `d`.
    pub fn from_displacement(d: &Displacement, width: usize) -> Result<Homography> {
        let base = corners_of_frame(width)?;
        dlt(&base, &displacement_to_corners(d, &base))
    }

    /// Displacement of the corners of a `width` frame under this transform.
    pub fn displacement(&self, width: usize) -> Result<Displacement> {
        let base = corners_of_frame(width)?;
        Ok(corners_to_displacement(
            &apply_homography(self, &base)?,
            &base,
        ))
    }
}

/// Image geometry: satellite, thermal and network-input widths in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub w_s: usize,
    pub w_t: usize,
    pub w_r: usize,
    pub meters_per_pixel: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            w_s: 1536,
            w_t: 512,
            w_r: 256,
            meters_per_pixel: 1.0,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_r < 2 || self.w_r > self.w_t || self.w_t > self.w_s {
            return Err(Error::InvalidConfig(format!(
                "frame widths must satisfy 2 <= w_r <= w_t <= w_s (got {}, {}, {})",
                self.w_r, self.w_t, self.w_s
            )));
        }
        if !(self.meters_per_pixel > 0.0 && self.meters_per_pixel.is_finite()) {
            return Err(Error::InvalidConfig(
                "meters_per_pixel must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Meters covered by one pixel of the resized satellite view.
    pub fn meters_per_resized_pixel(&self) -> f64 {
        self.w_s as f64 / self.w_r as f64 * self.meters_per_pixel
    }

    pub fn satellite_view(&self) -> ViewTransform {
        ViewTransform::new(Point2::default(), self.w_r as f64 / self.w_s as f64)
    }

    pub fn thermal_view(&self) -> ViewTransform {
        ViewTransform::new(Point2::default(), self.w_r as f64 / self.w_t as f64)
    }

    pub fn crop_view(&self, crop: &CropSpec) -> ViewTransform {
        ViewTransform::new(crop.origin, self.w_r as f64 / crop.size as f64)
    }

    /// Resized-view displacement expressed in satellite pixels.
    pub fn to_full_frame(&self, d: &Displacement) -> Displacement {
        d.scale(self.w_s as f64 / self.w_r as f64)
    }

    pub fn from_full_frame(&self, d: &Displacement) -> Displacement {
        d.scale(self.w_r as f64 / self.w_s as f64)
    }
}

/// Axis-aligned similarity from a full-resolution frame into a view:
/// `view = (full - origin) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub origin: Point2,
    pub scale: f64,
}

impl ViewTransform {
    pub fn new(origin: Point2, scale: f64) -> Self {
        Self { origin, scale }
    }

    pub fn identity() -> Self {
        Self::new(Point2::default(), 1.0)
    }

    pub fn to_view(&self, p: Point2) -> Point2 {
        Point2::new(
            (p.x - self.origin.x) * self.scale,
            (p.y - self.origin.y) * self.scale,
        )
    }

    pub fn to_full(&self, v: Point2) -> Point2 {
        Point2::new(
            v.x / self.scale + self.origin.x,
            v.y / self.scale + self.origin.y,
        )
    }

    pub fn homography(&self) -> Homography {
        Homography::scale_translation(
            self.scale,
            -self.origin.x * self.scale,
            -self.origin.y * self.scale,
        )
    }

    pub fn inverse_homography(&self) -> Homography {
        Homography::scale_translation(1.0 / self.scale, self.origin.x, self.origin.y)
    }
}

/// Corners `(0,0), (w-1,0), (w-1,w-1), (0,w-1)` of a square frame.
pub fn corners_of_frame(width: usize) -> Result<CornerSet> {
    if width < 2 {
        return Err(Error::InvalidConfig(format!("frame width {width} < 2")));
    }
    let m = (width - 1) as f64;
    Ok(CornerSet([
        Point2::new(0.0, 0.0),
        Point2::new(m, 0.0),
        Point2::new(m, m),
        Point2::new(0.0, m),
    ]))
}

pub fn displacement_to_corners(d: &Displacement, base: &CornerSet) -> CornerSet {
    CornerSet(std::array::from_fn(|i| base.0[i] + d.corner(i)))
}

pub fn corners_to_displacement(target: &CornerSet, base: &CornerSet) -> Displacement {
    Displacement::from_fn(|axis, c| {
        let d = target.0[c] - base.0[c];
        if axis == 0 {
            d.x
        } else {
            d.y
        }
    })
}

pub fn apply_homography(h: &Homography, pts: &CornerSet) -> Result<CornerSet> {
    let p = pts.0;
    Ok(CornerSet([
        h.apply_point(p[0])?,
        h.apply_point(p[1])?,
        h.apply_point(p[2])?,
        h.apply_point(p[3])?,
    ]))
}

fn check_non_degenerate(pts: &CornerSet, which: &str) -> Result<()> {
    if !pts.0.iter().all(Point2::is_finite) {
        return Err(Error::DegenerateCorners(format!(
            "{which} corners not finite"
        )));
    }
    let c = pts.centroid();
    let scale = pts.0.iter().map(|&p| (p - c).norm()).fold(0.0, f64::max);
    let tol = COLLINEAR_REL_EPS * scale * scale;
    for skip in 0..4 {
        let tri: Vec<Point2> = (0..4).filter(|&i| i != skip).map(|i| pts.0[i]).collect();
        let (a, b) = (tri[1] - tri[0], tri[2] - tri[0]);
        let cross = a.x * b.y - a.y * b.x;
        if cross.abs() < tol || scale == 0.0 {
            return Err(Error::DegenerateCorners(format!(
                "three {which} corners are collinear (cross {cross:e})"
            )));
        }
    }
    Ok(())
}

/// Similarity moving the centroid to the origin with mean distance `sqrt(2)`.
fn hartley_normalization(pts: &CornerSet) -> Matrix3<f64> {
    let c = pts.centroid();
    let mean = pts.0.iter().map(|&p| (p - c).norm()).sum::<f64>() / 4.0;
    let s = std::f64::consts::SQRT_2 / mean;
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Fit the homography taking `src[i]` to `dst[i]` from four correspondences.
pub fn dlt(src: &CornerSet, dst: &CornerSet) -> Result<Homography> {
    check_non_degenerate(src, "source")?;
    check_non_degenerate(dst, "destination")?;

    let ts = hartley_normalization(src);
    let td = hartley_normalization(dst);

    // 8 equations padded with a zero row so the SVD yields the full 9x9 V.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..4 {
        let s = ts * Vector3::new(src.0[i].x, src.0[i].y, 1.0);
        let d = td * Vector3::new(dst.0[i].x, dst.0[i].y, 1.0);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * i, c)] = r0[c];
            a[(2 * i + 1, c)] = r1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateCorners("SVD failed".into()))?;
    let (min_idx, _) =
        svd.singular_values
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
            );
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::DegenerateCorners("normalization not invertible".into()))?;
    Homography::from_matrix(td_inv * hn * ts)
}

/// Lift a displacement estimated on a resized crop view to the displacement
/// the full thermal view would have under the same scene homography.
///
/// The crop-view estimate defines a homography from crop-view pixels into the
/// satellite view. Composing it with the inverse of the crop-to-thermal-view
/// similarity gives the thermal-view homography, whose corner displacement is
/// returned.
pub fn recover_full_displacement(
    d_crop: &Displacement,
    crop: &CropSpec,
    frames: &FrameConfig,
) -> Result<Displacement> {
    crop.validate(frames.w_t)?;
    let base = corners_of_frame(frames.w_r)?;
    let crop_to_sat = dlt(&base, &displacement_to_corners(d_crop, &base))?;
    // thermal view -> full thermal -> crop view
    let thermal_to_crop = frames
        .crop_view(crop)
        .homography()
        .compose(&frames.thermal_view().inverse_homography())?;
    let full = crop_to_sat.compose(&thermal_to_crop)?;
    Ok(corners_to_displacement(
        &apply_homography(&full, &base)?,
        &base,
    ))
}
