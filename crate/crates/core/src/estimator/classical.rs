//! Inverse-compositional photometric homography alignment.
//!
//! Coarse-to-fine Gauss-Newton over a Gaussian pyramid, with the thermal view
//! as the fixed template and the satellite view warped onto it. Intensities
//! are standardized over the overlapping pixels on every evaluation so the
//! cost is insensitive to gain and bias differences between modalities. Each
//! reported iteration is one damped Gauss-Newton step; steps that do not lower
//! the residual are retried with stronger Levenberg damping and dropped if
//! none succeeds.
//!
//! Initialization uses the scale implied by the two view transforms (both
//! full frames share a ground sampling distance) and, optionally, an
//! exhaustive normalized cross-correlation search for the translation on the
//! coarsest level.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_schedule, EstimateTrajectory, HomographyEstimator, ViewPair};
use crate::error::{Error, Result};
use crate::geometry::{Displacement, Point2};
use crate::image::Plane;
use crate::rng;

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;

const MIN_COARSE_SIDE: usize = 12;
const FLAT_STD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalConfig {
    pub levels: usize,
    pub global_search: bool,
    /// Uniform translation jitter applied after the search, in coarsest-level
    /// pixels. Zero for a deterministic aligner; ensemble members use it.
    pub init_jitter: f64,
    pub seed: u64,
    pub max_damping_steps: usize,
    /// Fraction of template pixels that must land inside the satellite view.
    pub min_overlap: f64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            global_search: true,
            init_jitter: 0.0,
            seed: 0,
            max_damping_steps: 6,
            min_overlap: 0.25,
        }
    }
}

/// Trajectory plus per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub trajectory: EstimateTrajectory,
    /// `(pyramid level, residual)` after each iteration.
    pub residuals: Vec<(usize, f64)>,
    pub accepted: Vec<bool>,
}

#[derive(Debug, Clone, Default)]
pub struct ClassicalEstimator {
    cfg: ClassicalConfig,
}

impl ClassicalEstimator {
    pub fn new(cfg: ClassicalConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &ClassicalConfig {
        &self.cfg
    }

    pub fn align(&self, pair: &ViewPair<'_>, planned: usize, run: usize) -> Result<Alignment> {
        check_schedule(planned, run)?;
        pair.validate()?;
        let s0 = pair.satellite_view.scale / pair.thermal_view.scale;
        if !(s0.is_finite() && s0 > 0.0) {
            return Err(Error::InvalidConfig(format!("view scale ratio {s0}")));
        }
        let tw = pair.thermal.width();
        let sw = pair.satellite.width();
        let offset = if s0 < 1.0 {
            (-s0.log2()).round() as usize
        } else {
            0
        };

        let mut levels = self.cfg.levels.max(1);
        while levels > 1
            && ((sw >> (levels - 1)) < MIN_COARSE_SIDE
                || (tw >> (levels - 1 + offset)) < MIN_COARSE_SIDE)
        {
            levels -= 1;
        }
        let sat_pyr = pyramid(pair.satellite.to_plane(), levels);
        let th_pyr = pyramid(pair.thermal.to_plane(), levels + offset);

        let mut warp = self.initial_warp(
            &sat_pyr[levels - 1],
            &th_pyr[levels - 1 + offset],
            levels - 1,
            offset,
            s0,
            tw,
            sw,
        );

        let mut per_iteration = Vec::with_capacity(run);
        let mut residuals = Vec::with_capacity(run);
        let mut accepted = Vec::with_capacity(run);
        for (idx, count) in level_schedule(planned, levels).into_iter().enumerate() {
            if per_iteration.len() == run {
                break;
            }
            if count == 0 {
                continue;
            }
            let level = levels - 1 - idx;
            let ctx = LevelContext::new(
                &th_pyr[level + offset],
                level + offset,
                &sat_pyr[level],
                level,
                self.cfg.min_overlap,
            );
            let mut a = ctx.to_level(&warp);
            let mut current = ctx.evaluate(&a, false).map(|e| e.residual);
            let mut lambda = 1e-3;
            for _ in 0..count {
                if per_iteration.len() == run {
                    break;
                }
                let mut took = false;
                if let (Some(cur), Some(ev)) = (current, ctx.evaluate(&a, true)) {
                    for _ in 0..self.cfg.max_damping_steps.max(1) {
                        let mut damped = ev.hessian;
                        for i in 0..8 {
                            damped[(i, i)] += lambda * ev.hessian[(i, i)].max(1e-12);
                        }
                        let Some(delta) = damped.lu().solve(&ev.gradient) else {
                            lambda *= 10.0;
                            continue;
                        };
                        if !delta.iter().all(|v| v.is_finite()) {
                            return Err(Error::SolverDiverged(
                                "non-finite Gauss-Newton update".into(),
                            ));
                        }
                        let Some(inv) = param_matrix(&delta).try_inverse() else {
                            lambda *= 10.0;
                            continue;
                        };
                        let trial = a * inv;
                        match ctx.evaluate(&trial, false) {
                            Some(t) if t.residual < cur => {
                                a = trial / trial[(2, 2)];
                                current = Some(t.residual);
                                lambda = (lambda / 10.0).max(1e-9);
                                took = true;
                                break;
                            }
                            _ => lambda *= 10.0,
                        }
                    }
                }
                warp = ctx.to_full(&a);
                if !warp.iter().all(|v| v.is_finite()) {
                    return Err(Error::SolverDiverged("non-finite warp".into()));
                }
                per_iteration.push(warp_displacement(&warp, tw, sw)?);
                residuals.push((level, current.unwrap_or(f64::NAN)));
                accepted.push(took);
            }
        }
        Ok(Alignment {
            trajectory: EstimateTrajectory::new(per_iteration)?,
            residuals,
            accepted,
        })
    }

    /// Level-0 warp (thermal view px -> satellite view px) before iterating.
    #[allow(clippy::too_many_arguments)]
    fn initial_warp(
        &self,
        sat: &Plane,
        thermal: &Plane,
        level: usize,
        offset: usize,
        s0: f64,
        tw: usize,
        sw: usize,
    ) -> Matrix3<f64> {
        let f = (1usize << level) as f64;
        let center = {
            let c = (sw as f64 - 1.0) / 2.0 - s0 * (tw as f64 - 1.0) / 2.0;
            Point2::new(c, c)
        };
        let mut t = if self.cfg.global_search {
            ncc_search(sat, thermal, (1usize << (level + offset)) as f64, f, s0, tw)
                .map(|p| Point2::new(p.x * f, p.y * f))
                .unwrap_or(center)
        } else {
            center
        };
        if self.cfg.init_jitter > 0.0 {
            let mut r = rng::stream(self.cfg.seed);
            let j = self.cfg.init_jitter;
            t.x += r.random_range(-j..=j) * f;
            t.y += r.random_range(-j..=j) * f;
        }
        Matrix3::new(s0, 0.0, t.x, 0.0, s0, t.y, 0.0, 0.0, 1.0)
    }
}

impl HomographyEstimator for ClassicalEstimator {
    fn name(&self) -> &str {
        "classical"
    }

    fn estimate_schedule(
        &self,
        pair: &ViewPair<'_>,
        planned: usize,
        run: usize,
    ) -> Result<EstimateTrajectory> {
        Ok(self.align(pair, planned, run)?.trajectory)
    }
}

/// Iterations per level from coarse to fine; the remainder goes to the finest.
fn level_schedule(planned: usize, levels: usize) -> Vec<usize> {
    let mut v = vec![planned / levels; levels];
    v[levels - 1] += planned % levels;
    v
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = Vec::with_capacity(levels);
    out.push(base);
    while out.len() < levels {
        let next = out.last().expect("non-empty").pyr_down();
        out.push(next);
    }
    out
}

fn param_matrix(p: &Vec8) -> Matrix3<f64> {
    Matrix3::new(
        1.0 + p[0],
        p[2],
        p[4],
        p[1],
        1.0 + p[3],
        p[5],
        p[6],
        p[7],
        1.0,
    )
}

fn warp_displacement(warp: &Matrix3<f64>, tw: usize, sw: usize) -> Result<Displacement> {
    let (t, s) = ((tw - 1) as f64, (sw - 1) as f64);
    let src = [(0.0, 0.0), (t, 0.0), (t, t), (0.0, t)];
    let dst = [(0.0, 0.0), (s, 0.0), (s, s), (0.0, s)];
    let mut d = Displacement::ZERO;
    for i in 0..4 {
        let v = warp * Vector3::new(src[i].0, src[i].1, 1.0);
        if v.z.abs() <= 1e-12 {
            return Err(Error::SolverDiverged(
                "warp sends a corner to infinity".into(),
            ));
        }
        d.0[0][i] = v.x / v.z - dst[i].0;
        d.0[1][i] = v.y / v.z - dst[i].1;
    }
    Ok(d)
}

struct Evaluation {
    residual: f64,
    gradient: Vec8,
    hessian: Mat8,
}

/// Template pixels of one pyramid level with their steepest-descent images,
/// in coordinates normalized to `[-1, 1]`.
struct LevelContext<'a> {
    sat: &'a Plane,
    coords: Vec<[f64; 2]>,
    template: Vec<f64>,
    sd: Vec<[f64; 8]>,
    /// template px -> thermal level-0 px
    template_scale: f64,
    /// satellite level-0 px -> level px
    sat_scale: f64,
    norm: Matrix3<f64>,
    min_valid: usize,
}

impl<'a> LevelContext<'a> {
    fn new(
        thermal: &Plane,
        t_level: usize,
        sat: &'a Plane,
        s_level: usize,
        min_overlap: f64,
    ) -> Self {
        let w = thermal.width;
        let h = thermal.height;
        let c = (w as f64 - 1.0) / 2.0;
        let r = c.max(1.0);
        let norm = Matrix3::new(1.0 / r, 0.0, -c / r, 0.0, 1.0 / r, -c / r, 0.0, 0.0, 1.0);

        let mut coords = Vec::new();
        let mut template = Vec::new();
        let mut grads = Vec::new();
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let gx = (thermal.at(x + 1, y) - thermal.at(x - 1, y)) as f64 * 0.5;
                let gy = (thermal.at(x, y + 1) - thermal.at(x, y - 1)) as f64 * 0.5;
                coords.push([(x as f64 - c) / r, (y as f64 - c) / r]);
                template.push(thermal.at(x, y) as f64);
                grads.push([gx * r, gy * r]);
            }
        }
        let n = template.len().max(1) as f64;
        let mean = template.iter().sum::<f64>() / n;
        let std = (template.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let inv = if std > FLAT_STD { 1.0 / std } else { 0.0 };
        for v in template.iter_mut() {
            *v = (*v - mean) * inv;
        }
        let sd = coords
            .iter()
            .zip(&grads)
            .map(|(&[u, v], &[gx, gy])| {
                let (gx, gy) = (gx * inv, gy * inv);
                [
                    gx * u,
                    gy * u,
                    gx * v,
                    gy * v,
                    gx,
                    gy,
                    -gx * u * u - gy * u * v,
                    -gx * u * v - gy * v * v,
                ]
            })
            .collect();
        let min_valid = ((min_overlap * template.len() as f64).ceil() as usize).max(16);
        Self {
            sat,
            coords,
            template,
            sd,
            template_scale: (1usize << t_level) as f64,
            sat_scale: 1.0 / (1usize << s_level) as f64,
            norm,
            min_valid,
        }
    }

    /// Level-0 warp -> normalized-template-to-satellite-level warp.
    fn to_level(&self, warp: &Matrix3<f64>) -> Matrix3<f64> {
        let s = Matrix3::new(
            self.sat_scale,
            0.0,
            0.0,
            0.0,
            self.sat_scale,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let t = Matrix3::new(
            self.template_scale,
            0.0,
            0.0,
            0.0,
            self.template_scale,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let n_inv = self
            .norm
            .try_inverse()
            .expect("normalization is invertible");
        let a = s * warp * t * n_inv;
        a / a[(2, 2)]
    }

    fn to_full(&self, a: &Matrix3<f64>) -> Matrix3<f64> {
        let s_inv = Matrix3::new(
            1.0 / self.sat_scale,
            0.0,
            0.0,
            0.0,
            1.0 / self.sat_scale,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let t_inv = Matrix3::new(
            1.0 / self.template_scale,
            0.0,
            0.0,
            0.0,
            1.0 / self.template_scale,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let m = s_inv * a * self.norm * t_inv;
        m / m[(2, 2)]
    }

    fn evaluate(&self, a: &Matrix3<f64>, with_gradient: bool) -> Option<Evaluation> {
        let mut valid = Vec::with_capacity(self.coords.len());
        let mut values = Vec::with_capacity(self.coords.len());
        for (i, &[u, v]) in self.coords.iter().enumerate() {
            let z = a[(2, 0)] * u + a[(2, 1)] * v + a[(2, 2)];
            if z.abs() <= 1e-12 {
                continue;
            }
            let x = (a[(0, 0)] * u + a[(0, 1)] * v + a[(0, 2)]) / z;
            let y = (a[(1, 0)] * u + a[(1, 1)] * v + a[(1, 2)]) / z;
            if let Some(val) = self.sat.sample(x, y) {
                valid.push(i);
                values.push(val as f64);
            }
        }
        if valid.len() < self.min_valid {
            return None;
        }
        let n = valid.len() as f64;
        let (mi, si) = mean_std(values.iter().copied(), n);
        let (mt, st) = mean_std(valid.iter().map(|&i| self.template[i]), n);
        let inv_i = if si > FLAT_STD { 1.0 / si } else { 0.0 };
        let inv_t = if st > FLAT_STD { 1.0 / st } else { 0.0 };

        let mut residual = 0.0;
        let mut gradient = Vec8::zeros();
        let mut hessian = Mat8::zeros();
        for (k, &i) in valid.iter().enumerate() {
            let e = (values[k] - mi) * inv_i - (self.template[i] - mt) * inv_t;
            residual += e * e;
            if with_gradient {
                let sd = &self.sd[i];
                for r in 0..8 {
                    gradient[r] += sd[r] * e;
                    for c in r..8 {
                        hessian[(r, c)] += sd[r] * sd[c];
                    }
                }
            }
        }
        if with_gradient {
            for r in 0..8 {
                for c in 0..r {
                    hessian[(r, c)] = hessian[(c, r)];
                }
            }
        }
        Some(Evaluation {
            residual: residual / n,
            gradient,
            hessian,
        })
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Exhaustive zero-mean NCC of the thermal view, rescaled to the satellite
/// level, over all fully-contained placements. Returns the best top-left
/// placement in satellite level pixels with parabolic sub-pixel refinement.
fn ncc_search(
    sat: &Plane,
    thermal: &Plane,
    thermal_level_scale: f64,
    sat_level_scale: f64,
    s0: f64,
    tw: usize,
) -> Option<Point2> {
    let m = ((tw as f64 - 1.0) * s0 / sat_level_scale).floor() as usize + 1;
    if m < 4 || m > sat.width || m > sat.height {
        return None;
    }
    // template pixel i (satellite level units) -> thermal level-0 px i * f / s0
    let step = sat_level_scale / s0 / thermal_level_scale;
    let mut tmpl = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            tmpl.push(thermal.sample_clamped(j as f64 * step, i as f64 * step) as f64);
        }
    }
    let n = (m * m) as f64;
    let mean = tmpl.iter().sum::<f64>() / n;
    for v in tmpl.iter_mut() {
        *v -= mean;
    }
    let tnorm = tmpl.iter().map(|v| v * v).sum::<f64>().sqrt();
    if tnorm / n.sqrt() < FLAT_STD {
        return None;
    }

    let (w, h) = (sat.width, sat.height);
    let mut sum = vec![0.0f64; (w + 1) * (h + 1)];
    let mut sq = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let v = sat.at(x, y) as f64;
            let i = (y + 1) * (w + 1) + x + 1;
            sum[i] = v + sum[i - 1] + sum[i - (w + 1)] - sum[i - w - 2];
            sq[i] = v * v + sq[i - 1] + sq[i - (w + 1)] - sq[i - w - 2];
        }
    }
    let rect = |t: &[f64], x: usize, y: usize| {
        let (x1, y1) = (x + m, y + m);
        t[y1 * (w + 1) + x1] - t[y * (w + 1) + x1] - t[y1 * (w + 1) + x] + t[y * (w + 1) + x]
    };

    let (nx, ny) = (w - m + 1, h - m + 1);
    let mut scores = vec![f64::NEG_INFINITY; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let s = rect(&sum, x, y);
            let var = rect(&sq, x, y) - s * s / n;
            if var <= 1e-9 {
                continue;
            }
            let mut cross = 0.0;
            for i in 0..m {
                let row = &sat.data[(y + i) * w + x..(y + i) * w + x + m];
                let trow = &tmpl[i * m..(i + 1) * m];
                cross += row
                    .iter()
                    .zip(trow)
                    .map(|(&a, &b)| a as f64 * b)
                    .sum::<f64>();
            }
            scores[y * nx + x] = cross / (tnorm * var.sqrt());
        }
    }
    let (best, &score) = scores
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (i, s)| {
            if *s > *acc.1 {
                (i, s)
            } else {
                acc
            }
        });
    if !score.is_finite() {
        return None;
    }
    let (bx, by) = (best % nx, best / nx);
    let refine = |lo: Option<f64>, mid: f64, hi: Option<f64>| match (lo, hi) {
        (Some(l), Some(r)) if l.is_finite() && r.is_finite() => {
            let den = l - 2.0 * mid + r;
            if den < -1e-12 {
                (0.5 * (l - r) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    let at = |x: usize, y: usize| scores[y * nx + x];
    let dx = refine(
        bx.checked_sub(1).map(|x| at(x, by)),
        score,
        (bx + 1 < nx).then(|| at(bx + 1, by)),
    );
    let dy = refine(
        by.checked_sub(1).map(|y| at(bx, y)),
        score,
        (by + 1 < ny).then(|| at(bx, by + 1)),
    );
    Some(Point2::new(bx as f64 + dx, by as f64 + dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ViewTransform;
    use crate::image::GrayImage;

    /// Smooth deterministic texture.
    fn texture(x: f64, y: f64) -> f64 {
        128.0
            + 40.0 * (x * 0.11).sin() * (y * 0.07).cos()
            + 30.0 * ((x + 2.0 * y) * 0.05).sin()
            + 25.0 * ((x * 0.031) - (y * 0.043)).cos()
    }

    #[test]
    fn schedule_split() {
        assert_eq!(level_schedule(6, 3), vec![2, 2, 2]);
        assert_eq!(level_schedule(7, 3), vec![2, 2, 3]);
        assert_eq!(level_schedule(2, 3), vec![0, 0, 2]);
    }

    #[test]
    fn recovers_three_pixel_shift() {
        // Thermal is the satellite shifted 3 px right: thermal pixel x shows
        // satellite content at x - 3, so every corner moves by (-3, 0).
        let sat = GrayImage::from_fn(128, 128, |x, y| texture(x as f64, y as f64) as u8);
        let th = GrayImage::from_fn(128, 128, |x, y| texture(x as f64 - 3.0, y as f64) as u8);
        let pair = ViewPair {
            satellite: &sat,
            thermal: &th,
            satellite_view: ViewTransform::identity(),
            thermal_view: ViewTransform::identity(),
        };
        let est = ClassicalEstimator::new(ClassicalConfig {
            global_search: false,
            ..Default::default()
        });
        let al = est.align(&pair, 6, 6).unwrap();
        let d = al.trajectory.last();
        assert!(
            (*d - Displacement::constant(-3.0, 0.0)).max_abs() < 0.5,
            "{d:?}"
        );
        for w in al.residuals.windows(2) {
            if w[0].0 == w[1].0 {
                assert!(w[1].1 <= w[0].1, "{:?}", al.residuals);
            }
        }
    }
}
