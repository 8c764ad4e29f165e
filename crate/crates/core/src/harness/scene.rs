//! Procedural stand-ins for satellite maps.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, GrayImage};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    /// Multi-octave value noise with field and road polygons.
    Rich,
    /// Near-constant intensity.
    Flat,
    /// A rich tile repeated with a fixed period.
    Tiled,
}

impl FromStr for Texture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rich" => Ok(Texture::Rich),
            "flat" => Ok(Texture::Flat),
            "tiled" => Ok(Texture::Tiled),
            _ => Err(Error::InvalidConfig(format!("unknown texture {s:?}"))),
        }
    }
}

impl fmt::Display for Texture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Texture::Rich => "rich",
            Texture::Flat => "flat",
            Texture::Tiled => "tiled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub texture: Texture,
    /// Strength of the satellite-to-thermal intensity remap, in `[0, 1]`.
    pub domain_gap: f64,
    pub size: usize,
    /// Tile period in pixels, used by `Tiled` only.
    #[serde(default = "default_period")]
    pub period: usize,
}

fn default_period() -> usize {
    96
}

impl SceneSpec {
    pub fn new(seed: u64, texture: Texture, size: usize) -> Self {
        Self {
            seed,
            texture,
            domain_gap: 0.5,
            size,
            period: default_period(),
        }
    }

    pub fn validate(&self, w_s: usize) -> Result<()> {
        if self.size < w_s {
            return Err(Error::InvalidConfig(format!(
                "scene size {} below satellite width {w_s}",
                self.size
            )));
        }
        if !(0.0..=1.0).contains(&self.domain_gap) {
            return Err(Error::InvalidConfig(format!(
                "domain gap {} outside [0, 1]",
                self.domain_gap
            )));
        }
        if self.texture == Texture::Tiled && !(8..=self.size).contains(&self.period) {
            return Err(Error::InvalidConfig(format!("tile period {}", self.period)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub image: GrayImage,
}

pub fn generate_scene(spec: &SceneSpec) -> Result<GrayImage> {
    if spec.size < 2 {
        return Err(Error::InvalidConfig("scene too small".into()));
    }
    let mut r = rng::stream(spec.seed);
    let n = spec.size;
    let field = match spec.texture {
        Texture::Rich => rich_field(n, n, &mut r),
        Texture::Flat => {
            let mut f = value_noise(n, n, 64, &mut r);
            f.iter_mut().for_each(|v| *v = 128.0 + 2.0 * (*v - 0.5));
            f
        }
        Texture::Tiled => {
            let p = spec.period.min(n);
            let tile = rich_field(p, p, &mut r);
            let mut f = vec![0.0; n * n];
            for y in 0..n {
                for x in 0..n {
                    f[y * n + x] = tile[(y % p) * p + x % p];
                }
            }
            f
        }
    };
    GrayImage::new(n, n, field.into_iter().map(quantize).collect())
}

pub fn build_scene(spec: SceneSpec) -> Result<Scene> {
    Ok(Scene {
        image: generate_scene(&spec)?,
        spec,
    })
}

/// Smoothly interpolated lattice noise in `[0, 1]` with lattice spacing `cell`.
fn value_noise(w: usize, h: usize, cell: usize, r: &mut Pcg64) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| r.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let gy = y / cell;
        let ty = smooth((y % cell) as f64 / cell as f64);
        for x in 0..w {
            let gx = x / cell;
            let tx = smooth((x % cell) as f64 / cell as f64);
            let l = |i: usize, j: usize| lattice[j * gw + i];
            let top = l(gx, gy) * (1.0 - tx) + l(gx + 1, gy) * tx;
            let bot = l(gx, gy + 1) * (1.0 - tx) + l(gx + 1, gy + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn rich_field(w: usize, h: usize, r: &mut Pcg64) -> Vec<f64> {
    let mut field = vec![0.0; w * h];
    let mut amplitude = 1.0;
    let mut total = 0.0;
    for cell in [96, 48, 24, 12, 6, 3] {
        let octave = value_noise(w, h, cell, r);
        field
            .iter_mut()
            .zip(&octave)
            .for_each(|(f, o)| *f += amplitude * o);
        total += amplitude;
        amplitude *= 0.7;
    }
    field
        .iter_mut()
        .for_each(|v| *v = 40.0 + 150.0 * *v / total);

    // fields: filled quadrilaterals with their own tone and grain
    let area = (w * h) as f64;
    let n_fields = (area / 18_000.0).ceil() as usize;
    for _ in 0..n_fields {
        let quad = random_quad(w, h, 12.0, 60.0, r);
        let tone = r.random_range(30.0..230.0);
        let grain = r.random_range(2.0..14.0);
        fill_polygon(&mut field, w, h, &quad, |f, x, y| {
            *f = 0.35 * *f + 0.65 * tone + grain * ((x as f64 * 0.9).sin() * (y as f64 * 0.7).cos())
        });
    }
    // roads: thick straight segments
    let n_roads = (area / 60_000.0).ceil() as usize;
    for _ in 0..n_roads {
        let a = (r.random_range(0.0..w as f64), r.random_range(0.0..h as f64));
        let len = r.random_range(60.0..400.0);
        let theta = r.random_range(0.0..std::f64::consts::PI);
        let b = (a.0 + len * theta.cos(), a.1 + len * theta.sin());
        let half = r.random_range(1.0..4.0);
        let tone = if r.random::<bool>() { 235.0 } else { 25.0 };
        draw_segment(&mut field, w, h, a, b, half, tone);
    }
    field
}

pub(crate) fn random_quad(
    w: usize,
    h: usize,
    min_r: f64,
    max_r: f64,
    r: &mut Pcg64,
) -> [(f64, f64); 4] {
    let cx = r.random_range(0.0..w as f64);
    let cy = r.random_range(0.0..h as f64);
    let rot = r.random_range(0.0..std::f64::consts::FRAC_PI_2);
    let mut quad = [(0.0, 0.0); 4];
    for (i, q) in quad.iter_mut().enumerate() {
        let ang = rot + i as f64 * std::f64::consts::FRAC_PI_2 + r.random_range(-0.3..0.3);
        let rad = r.random_range(min_r..max_r);
        *q = (cx + rad * ang.cos(), cy + rad * ang.sin());
    }
    quad
}

/// Apply `paint` to every pixel whose center lies inside the convex polygon.
pub(crate) fn fill_polygon(
    field: &mut [f64],
    w: usize,
    h: usize,
    poly: &[(f64, f64)],
    mut paint: impl FnMut(&mut f64, usize, usize),
) {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in poly {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let xs = x0.max(0.0).floor() as usize;
    let ys = y0.max(0.0).floor() as usize;
    let xe = (x1.ceil().max(0.0) as usize).min(w.saturating_sub(1));
    let ye = (y1.ceil().max(0.0) as usize).min(h.saturating_sub(1));
    if x1 < 0.0 || y1 < 0.0 || xs >= w || ys >= h {
        return;
    }
    for y in ys..=ye {
        for x in xs..=xe {
            if inside_convex(poly, x as f64, y as f64) {
                paint(&mut field[y * w + x], x, y);
            }
        }
    }
}

fn inside_convex(poly: &[(f64, f64)], px: f64, py: f64) -> bool {
    let mut sign = 0.0;
    for i in 0..poly.len() {
        let (ax, ay) = poly[i];
        let (bx, by) = poly[(i + 1) % poly.len()];
        let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

fn draw_segment(
    field: &mut [f64],
    w: usize,
    h: usize,
    a: (f64, f64),
    b: (f64, f64),
    half: f64,
    tone: f64,
) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let xs = (a.0.min(b.0) - half).floor().max(0.0) as usize;
    let ys = (a.1.min(b.1) - half).floor().max(0.0) as usize;
    let xe = ((a.0.max(b.0) + half).ceil().max(0.0) as usize).min(w - 1);
    let ye = ((a.1.max(b.1) + half).ceil().max(0.0) as usize).min(h - 1);
    for y in ys..=ye {
        for x in xs..=xe {
            let t = (((x as f64 - a.0) * dx + (y as f64 - a.1) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
            if (x as f64 - qx).hypot(y as f64 - qy) <= half {
                field[y * w + x] = tone;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = SceneSpec::new(11, Texture::Rich, 300);
        assert_eq!(
            generate_scene(&spec).unwrap(),
            generate_scene(&spec).unwrap()
        );
        let other = SceneSpec { seed: 12, ..spec };
        assert_ne!(
            generate_scene(&spec).unwrap(),
            generate_scene(&other).unwrap()
        );
    }

    #[test]
    fn flat_is_flat_and_rich_is_not() {
        let flat = generate_scene(&SceneSpec::new(3, Texture::Flat, 256)).unwrap();
        assert!(flat.mean_and_std().1 < 2.0);
        let rich = generate_scene(&SceneSpec::new(3, Texture::Rich, 256)).unwrap();
        assert!(rich.mean_and_std().1 > 20.0);
    }

    #[test]
    fn tiled_autocorrelation_peaks_at_period() {
        let p = 40;
        let spec = SceneSpec {
            period: p,
            ..SceneSpec::new(5, Texture::Tiled, 200)
        };
        let img = generate_scene(&spec).unwrap();
        let (mean, _) = img.mean_and_std();
        let corr = |lag: usize| {
            let mut s = 0.0;
            for y in 0..100 {
                for x in 0..100 {
                    s += (img.get(x, y) as f64 - mean) * (img.get(x + lag, y) as f64 - mean);
                }
            }
            s
        };
        let best = (1..=60)
            .max_by(|&a, &b| corr(a).total_cmp(&corr(b)))
            .unwrap();
        assert_eq!(best, p);
    }
}
