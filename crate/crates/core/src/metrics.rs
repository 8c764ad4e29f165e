//! Corner and center errors in meters, success rate, ROC sweeps and MACE
//! histograms.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Displacement, FrameConfig, Point2};
use crate::rng;

/// Failure categories of the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Clean,
    Textureless,
    Corrupted,
    GeometricNoise,
    SelfSimilar,
    ExceedsRegion,
    Outdated,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Clean,
        Category::Textureless,
        Category::Corrupted,
        Category::GeometricNoise,
        Category::SelfSimilar,
        Category::ExceedsRegion,
        Category::Outdated,
    ];

    pub const FAILURES: [Category; 6] = [
        Category::Textureless,
        Category::Corrupted,
        Category::GeometricNoise,
        Category::SelfSimilar,
        Category::ExceedsRegion,
        Category::Outdated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Clean => "clean",
            Category::Textureless => "textureless",
            Category::Corrupted => "corrupted",
            Category::GeometricNoise => "geometric_noise",
            Category::SelfSimilar => "self_similar",
            Category::ExceedsRegion => "exceeds_region",
            Category::Outdated => "outdated",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub mace_m: f64,
    pub ce_m: f64,
    /// Scalar uncertainty in resized-frame pixels.
    pub score: f64,
    pub rejected: bool,
    pub category: Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcConfig {
    /// Maximum thermal-to-satellite center distance in meters.
    pub d_c: f64,
}

impl DcConfig {
    pub const STUDY_VALUES: [f64; 3] = [128.0, 256.0, 512.0];

    pub fn new(d_c: f64) -> Result<Self> {
        if !(d_c.is_finite() && d_c >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "d_c must be non-negative, got {d_c}"
            )));
        }
        Ok(Self { d_c })
    }
}

fn meters_factor(frames: &FrameConfig) -> f64 {
    frames.meters_per_resized_pixel()
}

/// Mean corner distance in meters; inputs in resized-frame pixels.
pub fn mace(pred: &Displacement, gt: &Displacement, frames: &FrameConfig) -> f64 {
    let diff = *pred - *gt;
    let mean = (0..4).map(|i| diff.corner(i).norm()).sum::<f64>() / 4.0;
    mean * meters_factor(frames)
}

/// Distance between the corner means, in meters.
pub fn center_error(pred: &Displacement, gt: &Displacement, frames: &FrameConfig) -> f64 {
    let diff = *pred - *gt;
    let c = (0..4).fold(Point2::default(), |acc, i| acc + diff.corner(i));
    Point2::new(c.x / 4.0, c.y / 4.0).norm() * meters_factor(frames)
}

pub fn success_rate(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyList("records"));
    }
    let kept = records.iter().filter(|r| !r.rejected).count();
    Ok(kept as f64 / records.len() as f64)
}

/// ROC of the uncertainty score as a detector of records whose MACE exceeds
/// `error_threshold_m`.
///
/// A record is flagged at threshold `t` when `score > t`, matching the
/// rejection rule. Thresholds sweep the distinct scores from high to low;
/// the curve starts at `(0, 0)` and ends at `(1, 1)`.
pub fn roc_curve(records: &[EvalRecord], error_threshold_m: f64) -> Result<RocCurve> {
    let positives = records
        .iter()
        .filter(|r| r.mace_m > error_threshold_m)
        .count();
    let negatives = records.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels {
            positives,
            negatives,
        });
    }
    let mut sorted: Vec<(f64, bool)> = records
        .iter()
        .map(|r| (r.score, r.mace_m > error_threshold_m))
        .collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // just below `score`, every record at or above it is flagged
        let threshold = sorted
            .get(i)
            .map_or(score - 1.0, |next| (score + next.0) / 2.0);
        points.push(RocPoint {
            threshold,
            tpr: tp as f64 / p,
            fpr: fp as f64 / n,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve {
        points,
        auc,
        positives,
        negatives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub count: usize,
}

/// Half-open bins `[lo, lo + width)` from 0 up to `max_m`; the final bin,
/// starting at `max_m`, collects everything at or above it.
pub fn mace_histogram(
    records: &[EvalRecord],
    bin_width_m: f64,
    max_m: f64,
) -> Result<Vec<HistogramBin>> {
    if !(bin_width_m.is_finite() && bin_width_m > 0.0 && max_m.is_finite() && max_m > 0.0) {
        return Err(Error::InvalidConfig(
            "bin width and max must be positive".into(),
        ));
    }
    let regular = (max_m / bin_width_m).ceil() as usize;
    let mut bins: Vec<HistogramBin> = (0..regular)
        .map(|i| HistogramBin {
            lo: i as f64 * bin_width_m,
            count: 0,
        })
        .collect();
    bins.push(HistogramBin {
        lo: max_m,
        count: 0,
    });
    for r in records {
        let idx = if r.mace_m >= max_m {
            regular
        } else {
            ((r.mace_m / bin_width_m).floor() as usize).min(regular - 1)
        };
        bins[idx].count += 1;
    }
    Ok(bins)
}

/// Fraction of records whose MACE exceeds `threshold_m`.
pub fn tail_mass(records: &[EvalRecord], threshold_m: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.mace_m > threshold_m).count() as f64 / records.len() as f64
}

/// Largest feasible center distance: the thermal patch must fit inside the
/// satellite patch.
pub fn max_dc_m(frames: &FrameConfig) -> f64 {
    (frames.w_s - frames.w_t) as f64 / 2.0 * frames.meters_per_pixel
}

/// Thermal center offset in satellite pixels, uniform over the disk of
/// radius `d_c`.
pub fn sample_center_offset(d_c: &DcConfig, frames: &FrameConfig, seed: u64) -> Result<Point2> {
    let max_m = max_dc_m(frames);
    if d_c.d_c > max_m {
        return Err(Error::InfeasibleDc {
            d_c_m: d_c.d_c,
            max_m,
        });
    }
    let radius = d_c.d_c / frames.meters_per_pixel;
    if radius == 0.0 {
        return Ok(Point2::default());
    }
    let mut r = rng::stream(seed);
    let rho = radius * r.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * r.random::<f64>();
    Ok(Point2::new(rho * theta.cos(), rho * theta.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_frames() -> FrameConfig {
        FrameConfig {
            w_s: 256,
            w_t: 256,
            w_r: 256,
            meters_per_pixel: 1.0,
        }
    }

    fn rec(mace_m: f64, score: f64) -> EvalRecord {
        EvalRecord {
            sample_id: String::new(),
            mace_m,
            ce_m: 0.0,
            score,
            rejected: false,
            category: Category::Clean,
        }
    }

    #[test]
    fn mace_three_four_five() {
        let d = Displacement::constant(3.0, 4.0);
        assert_eq!(mace(&d, &d, &unit_frames()), 0.0);
        assert!((mace(&d, &Displacement::ZERO, &unit_frames()) - 5.0).abs() < 1e-12);
        assert!((mace(&d, &Displacement::ZERO, &FrameConfig::default()) - 30.0).abs() < 1e-12);
        assert!((center_error(&d, &Displacement::ZERO, &unit_frames()) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn center_error_cancels() {
        let d = Displacement([[1.0, -1.0, 1.0, -1.0], [2.0, 2.0, -2.0, -2.0]]);
        assert_eq!(center_error(&d, &Displacement::ZERO, &unit_frames()), 0.0);
        assert!(mace(&d, &Displacement::ZERO, &unit_frames()) > 0.0);
    }

    #[test]
    fn success_rates() {
        let mut rs: Vec<_> = (0..10).map(|_| rec(0.0, 0.0)).collect();
        assert_eq!(success_rate(&rs).unwrap(), 1.0);
        rs[0].rejected = true;
        rs[5].rejected = true;
        assert!((success_rate(&rs).unwrap() - 0.8).abs() < 1e-12);
        rs.iter_mut().for_each(|r| r.rejected = true);
        assert_eq!(success_rate(&rs).unwrap(), 0.0);
        assert!(success_rate(&[]).is_err());
    }

    #[test]
    fn roc_perfect_and_uninformative() {
        let sep = [rec(50.0, 9.0), rec(40.0, 8.0), rec(1.0, 1.0), rec(2.0, 2.0)];
        let c = roc_curve(&sep, 25.0).unwrap();
        assert_eq!(c.auc, 1.0);
        assert_eq!(c.points.first().map(|p| (p.tpr, p.fpr)), Some((0.0, 0.0)));
        assert_eq!(c.points.last().map(|p| (p.tpr, p.fpr)), Some((1.0, 1.0)));

        let tied = [rec(50.0, 3.0), rec(1.0, 3.0), rec(2.0, 3.0), rec(60.0, 3.0)];
        let c = roc_curve(&tied, 25.0).unwrap();
        assert_eq!(c.points.len(), 2);
        assert!((c.auc - 0.5).abs() < 1e-12);

        assert!(matches!(
            roc_curve(&[rec(1.0, 1.0)], 25.0),
            Err(Error::DegenerateLabels {
                positives: 0,
                negatives: 1
            })
        ));
    }

    #[test]
    fn roc_thresholds_reproduce_rejections() {
        let rs = [rec(50.0, 4.0), rec(1.0, 2.0), rec(30.0, 2.0), rec(2.0, 0.5)];
        let c = roc_curve(&rs, 25.0).unwrap();
        for p in &c.points {
            let tp = rs
                .iter()
                .filter(|r| r.mace_m > 25.0 && r.score > p.threshold)
                .count();
            let fp = rs
                .iter()
                .filter(|r| r.mace_m <= 25.0 && r.score > p.threshold)
                .count();
            assert_eq!(p.tpr, tp as f64 / 2.0);
            assert_eq!(p.fpr, fp as f64 / 2.0);
        }
    }

    #[test]
    fn random_scores_give_chance_auc() {
        let mut r = rng::stream(42);
        let rs: Vec<_> = (0..10_000)
            .map(|_| rec(r.random_range(0.0..50.0), r.random::<f64>()))
            .collect();
        let auc = roc_curve(&rs, 25.0).unwrap().auc;
        assert!((0.45..=0.55).contains(&auc), "{auc}");
    }

    #[test]
    fn histogram_conventions() {
        let h = mace_histogram(&[], 10.0, 100.0).unwrap();
        assert_eq!(h.len(), 11);
        assert!(h.iter().all(|b| b.count == 0));

        let h = mace_histogram(&[rec(10.0, 0.0)], 10.0, 100.0).unwrap();
        assert_eq!(h[1].count, 1);
        assert_eq!(h[0].count, 0);

        let h = mace_histogram(&[rec(100.0, 0.0), rec(250.0, 0.0)], 10.0, 100.0).unwrap();
        assert_eq!(h[10].lo, 100.0);
        assert_eq!(h[10].count, 2);

        let mut r = rng::stream(7);
        let rs: Vec<_> = (0..100)
            .map(|_| rec(r.random_range(0.0..100.0), 0.0))
            .collect();
        let h = mace_histogram(&rs, 10.0, 100.0).unwrap();
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 100);
        assert_eq!(h[10].count, 0);
    }

    #[test]
    fn center_offsets() {
        let frames = FrameConfig::default();
        assert_eq!(
            sample_center_offset(&DcConfig::new(0.0).unwrap(), &frames, 3).unwrap(),
            Point2::default()
        );
        let dc = DcConfig::new(512.0).unwrap();
        for seed in 0..1000 {
            assert!(sample_center_offset(&dc, &frames, seed).unwrap().norm() <= 512.0);
        }
        assert!(matches!(
            sample_center_offset(&DcConfig::new(513.0).unwrap(), &frames, 0),
            Err(Error::InfeasibleDc { .. })
        ));
    }

    #[test]
    fn category_names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
        }
        assert_eq!(
            "geometric-noise".parse::<Category>().unwrap(),
            Category::GeometricNoise
        );
    }

    fn disp() -> impl Strategy<Value = Displacement> {
        prop::array::uniform2(prop::array::uniform4(-100.0f64..100.0)).prop_map(Displacement)
    }

    proptest! {
        #[test]
        fn ce_never_exceeds_mace(a in disp(), b in disp()) {
            let f = FrameConfig::default();
            prop_assert!(center_error(&a, &b, &f) <= mace(&a, &b, &f) + 1e-9);
        }

        #[test]
        fn roc_is_monotone(pairs in prop::collection::vec((0.0f64..60.0, 0.0f64..5.0), 2..60)) {
            let mut rs: Vec<_> = pairs.iter().map(|&(m, s)| rec(m, (s * 4.0).round() / 4.0)).collect();
            rs[0].mace_m = 100.0;
            rs[1].mace_m = 0.0;
            let c = roc_curve(&rs, 25.0).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[1].tpr >= w[0].tpr && w[1].fpr >= w[0].fpr);
                prop_assert!(w[1].threshold < w[0].threshold);
            }
            prop_assert!((0.0..=1.0).contains(&c.auc));
        }
    }
}
