//! Crop and ensemble consensus: spread of displacements as uncertainty,
//! merge, rejection and aggregation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimateTrajectory, HomographyEstimator, ViewPair};
use crate::geometry::{recover_full_displacement, Displacement, FrameConfig};
use crate::image::GrayImage;
use crate::rng;
use crate::sampler::{crop_and_resize, generate_crops, CropSpec, SamplingPlan};

/// Per-corner, per-axis standard deviations in resized-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UncertaintyEstimate {
    pub stds: [[f64; 4]; 2],
}

impl UncertaintyEstimate {
    pub const ZERO: Self = Self {
        stds: [[0.0; 4]; 2],
    };

    pub fn new(stds: [[f64; 4]; 2]) -> Result<Self> {
        if !stds.iter().flatten().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidConfig(
                "uncertainty entries must be finite and >= 0".into(),
            ));
        }
        Ok(Self { stds })
    }

    pub fn uniform(v: f64) -> Self {
        Self { stds: [[v; 4]; 2] }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.stds.iter().flatten().copied()
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut stds = [[0.0; 4]; 2];
        for (a, row) in stds.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f(self.stds[a][c], other.stds[a][c]);
            }
        }
        Self { stds }
    }
}

macro_rules! lowercase_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(Error::InvalidConfig(format!(
                        concat!("unknown ", stringify!($name), " {:?}"), other
                    ))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text,)+ })
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Merge {
    Min,
    Max,
    Add,
}
lowercase_enum!(Merge { Min => "min", Max => "max", Add => "add" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Original,
    Mean,
}
lowercase_enum!(Aggregation { Original => "original", Mean => "mean" });

/// Which consensus produces the uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UeMethod {
    /// Original view only; uncertainty is zero and nothing is rejected.
    None,
    CropTta,
    Ensemble,
    CropTtaEnsemble,
}
lowercase_enum!(UeMethod {
    None => "none",
    CropTta => "croptta",
    Ensemble => "ensemble",
    CropTtaEnsemble => "croptta+ensemble",
});

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub method: UeMethod,
    /// Crop views including the original.
    pub n_c: usize,
    /// Ensemble members.
    pub n_m: usize,
    pub merge: Merge,
    pub aggregation: Aggregation,
    /// Rejection threshold in resized-frame pixels.
    pub s_c: f64,
    /// Estimator iterations per view.
    pub iterations: usize,
    pub early_stop_k: Option<usize>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            method: UeMethod::CropTta,
            n_c: 5,
            n_m: 5,
            merge: Merge::Max,
            aggregation: Aggregation::Original,
            s_c: 0.25,
            iterations: 6,
            early_stop_k: None,
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<()> {
        let uses_crops = matches!(self.method, UeMethod::CropTta | UeMethod::CropTtaEnsemble);
        let uses_members = matches!(self.method, UeMethod::Ensemble | UeMethod::CropTtaEnsemble);
        if uses_crops && self.n_c < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_c must be >= 2, got {}",
                self.n_c
            )));
        }
        if uses_members && self.n_m < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_m must be >= 2, got {}",
                self.n_m
            )));
        }
        if !(self.s_c.is_finite() && self.s_c > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "s_c must be positive, got {}",
                self.s_c
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        if let Some(k) = self.early_stop_k {
            if k == 0 || k > self.iterations {
                return Err(Error::InvalidConfig(format!(
                    "early_stop_k {k} outside 1..={}",
                    self.iterations
                )));
            }
        }
        Ok(())
    }

    pub fn members_needed(&self) -> usize {
        match self.method {
            UeMethod::Ensemble | UeMethod::CropTtaEnsemble => self.n_m,
            UeMethod::None | UeMethod::CropTta => 1,
        }
    }
}

fn population_std(displacements: &[Displacement]) -> Result<UncertaintyEstimate> {
    if displacements.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            actual: displacements.len(),
        });
    }
    let n = displacements.len() as f64;
    let mut stds = [[0.0; 4]; 2];
    for (a, row) in stds.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let mean = displacements.iter().map(|d| d.0[a][c]).sum::<f64>() / n;
            let var = displacements
                .iter()
                .map(|d| (d.0[a][c] - mean).powi(2))
                .sum::<f64>()
                / n;
            *v = var.sqrt();
        }
    }
    Ok(UncertaintyEstimate { stds })
}

/// Population standard deviation over the original and recovered crop-view
/// displacements.
pub fn croptta_uncertainty(displacements: &[Displacement]) -> Result<UncertaintyEstimate> {
    population_std(displacements)
}

/// Population standard deviation over ensemble member outputs.
pub fn ensemble_uncertainty(displacements: &[Displacement]) -> Result<UncertaintyEstimate> {
    population_std(displacements)
}

pub fn merge_uncertainty(
    u_tta: &UncertaintyEstimate,
    u_de: &UncertaintyEstimate,
    policy: Merge,
) -> UncertaintyEstimate {
    match policy {
        Merge::Min => u_tta.zip(u_de, f64::min),
        Merge::Max => u_tta.zip(u_de, f64::max),
        Merge::Add => u_tta.zip(u_de, |a, b| a + b),
    }
}

/// Smallest of the eight entries. `score > s` holds exactly when every entry
/// exceeds `s`.
pub fn uncertainty_score(u: &UncertaintyEstimate) -> f64 {
    u.iter().fold(f64::INFINITY, f64::min)
}

pub fn should_reject(u: &UncertaintyEstimate, s_c: f64) -> bool {
    uncertainty_score(u) > s_c
}

/// `displacements[0]` is the original view.
pub fn aggregate_displacement(
    displacements: &[Displacement],
    policy: Aggregation,
) -> Result<Displacement> {
    let first = *displacements
        .first()
        .ok_or(Error::EmptyList("displacements"))?;
    Ok(match policy {
        Aggregation::Original => first,
        Aggregation::Mean => {
            let n = displacements.len() as f64;
            Displacement::from_fn(|a, c| displacements.iter().map(|d| d.0[a][c]).sum::<f64>() / n)
        }
    })
}

/// Elementwise mean of several uncertainty estimates.
fn mean_uncertainty(us: &[UncertaintyEstimate]) -> UncertaintyEstimate {
    let n = us.len() as f64;
    let mut stds = [[0.0; 4]; 2];
    for (a, row) in stds.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = us.iter().map(|u| u.stds[a][c]).sum::<f64>() / n;
        }
    }
    UncertaintyEstimate { stds }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutput {
    /// Final displacement in the resized satellite frame.
    pub displacement: Displacement,
    pub uncertainty: UncertaintyEstimate,
    pub u_tta: Option<UncertaintyEstimate>,
    pub u_de: Option<UncertaintyEstimate>,
    pub score: f64,
    pub rejected: bool,
    /// Full trajectory of the original view of the first member.
    pub original: EstimateTrajectory,
    /// Total estimator iterations spent over all views and members.
    pub estimator_iterations: usize,
}

struct MemberResult {
    /// Full-view displacement per crop, at the uncertainty iteration.
    at_ue: Vec<Displacement>,
    original: EstimateTrajectory,
    iterations: usize,
}

fn run_member(
    estimator: &dyn HomographyEstimator,
    satellite: &GrayImage,
    thermal: &GrayImage,
    crops: &[CropSpec],
    cfg: &ConsensusConfig,
    full_run: bool,
    frames: &FrameConfig,
) -> Result<MemberResult> {
    let k_total = cfg.iterations;
    let k_ue = cfg.early_stop_k.unwrap_or(k_total);
    let mut at_ue = Vec::with_capacity(crops.len());
    let mut original = None;
    let mut iterations = 0;
    for (i, crop) in crops.iter().enumerate() {
        let view = if crop.is_full_view(frames.w_t) && thermal.width() == frames.w_r {
            thermal.clone()
        } else {
            crop_and_resize(thermal, crop, frames.w_r)?
        };
        let pair = ViewPair {
            satellite,
            thermal: &view,
            satellite_view: frames.satellite_view(),
            thermal_view: frames.crop_view(crop),
        };
        let run = if i == 0 && full_run { k_total } else { k_ue };
        let traj = estimator.estimate_schedule(&pair, k_total, run)?;
        iterations += traj.len();
        let d = *traj.at_iteration(k_ue).ok_or_else(|| {
            Error::Protocol(format!(
                "estimator returned {} of {run} iterations",
                traj.len()
            ))
        })?;
        at_ue.push(if crop.is_full_view(frames.w_t) {
            d
        } else {
            recover_full_displacement(&d, crop, frames)?
        });
        if i == 0 {
            original = Some(traj);
        }
    }
    let original = original.ok_or(Error::EmptyList("crops"))?;
    Ok(MemberResult {
        at_ue,
        original,
        iterations,
    })
}

/// Full consensus for one thermal image.
///
/// `satellite` is the satellite view (resized to `w_r`, or full `w_s` and
/// resized here); `thermal` is the full `w_t` thermal image. `members[0]` is
/// the primary estimator; ensemble methods need `cfg.n_m` members.
///
/// With early stopping at `k`, every view except the first member's original
/// runs only `k` iterations, the uncertainty is the spread at iteration `k`,
/// and the displacement is the original's final iterate.
pub fn run_consensus(
    satellite: &GrayImage,
    thermal: &GrayImage,
    plan: &SamplingPlan,
    cfg: &ConsensusConfig,
    members: &[&dyn HomographyEstimator],
    frames: &FrameConfig,
) -> Result<ConsensusOutput> {
    cfg.validate()?;
    frames.validate()?;
    let n_members = cfg.members_needed();
    if members.len() < n_members {
        return Err(Error::InvalidConfig(format!(
            "{} needs {n_members} estimators, got {}",
            cfg.method,
            members.len()
        )));
    }
    let uses_crops = matches!(cfg.method, UeMethod::CropTta | UeMethod::CropTtaEnsemble);
    if uses_crops && plan.n_c != cfg.n_c {
        return Err(Error::InvalidConfig(format!(
            "sampling plan has {} views, consensus expects {}",
            plan.n_c, cfg.n_c
        )));
    }
    let satellite_view;
    let satellite = if satellite.width() == frames.w_r {
        satellite
    } else if satellite.width() == frames.w_s && satellite.is_square() {
        satellite_view = satellite.resize_square(frames.w_r);
        &satellite_view
    } else {
        return Err(Error::InvalidConfig(format!(
            "satellite must be {} or {} px wide, got {}",
            frames.w_r,
            frames.w_s,
            satellite.width()
        )));
    };
    if !thermal.is_square() || thermal.width() != frames.w_t {
        return Err(Error::InvalidConfig(format!(
            "thermal must be {0}x{0}, got {1}x{2}",
            frames.w_t,
            thermal.width(),
            thermal.height()
        )));
    }

    let aggregation = if cfg.early_stop_k.is_some() {
        Aggregation::Original
    } else {
        cfg.aggregation
    };

    let mut results = Vec::with_capacity(n_members);
    for (m, estimator) in members.iter().take(n_members).enumerate() {
        let crops = if uses_crops {
            // independent crop stream per member; member 0 keeps the plan's seed
            let seed = if m == 0 {
                plan.seed
            } else {
                rng::mix(plan.seed, m as u64)
            };
            generate_crops(&plan.with_seed(seed), frames.w_t)?
        } else {
            vec![CropSpec::full(frames.w_t)]
        };
        results.push(run_member(
            *estimator,
            satellite,
            thermal,
            &crops,
            cfg,
            m == 0,
            frames,
        )?);
    }

    let mut u_tta = None;
    let mut u_de = None;
    let member_estimates: Vec<Displacement> = results
        .iter()
        .map(|r| aggregate_displacement(&r.at_ue, aggregation))
        .collect::<Result<_>>()?;
    if uses_crops {
        let per_member: Vec<_> = results
            .iter()
            .map(|r| croptta_uncertainty(&r.at_ue))
            .collect::<Result<_>>()?;
        u_tta = Some(mean_uncertainty(&per_member));
    }
    if n_members > 1 {
        u_de = Some(ensemble_uncertainty(&member_estimates)?);
    }
    let uncertainty = match (u_tta, u_de) {
        (Some(t), Some(d)) => merge_uncertainty(&t, &d, cfg.merge),
        (Some(u), None) | (None, Some(u)) => u,
        (None, None) => UncertaintyEstimate::ZERO,
    };

    let displacement = if cfg.early_stop_k.is_some() || aggregation == Aggregation::Original {
        *results[0].original.last()
    } else {
        aggregate_displacement(&member_estimates, aggregation)?
    };
    let score = uncertainty_score(&uncertainty);
    let rejected = cfg.method != UeMethod::None && score > cfg.s_c;
    let estimator_iterations = results.iter().map(|r| r.iterations).sum();
    let original = results.swap_remove(0).original;
    Ok(ConsensusOutput {
        displacement,
        uncertainty,
        u_tta,
        u_de,
        score,
        rejected,
        original,
        estimator_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(axis: usize, corner: usize, v: f64) -> Displacement {
        let mut d = Displacement::ZERO;
        d.0[axis][corner] = v;
        d
    }

    #[test]
    fn identical_samples_have_zero_spread() {
        let d = Displacement::constant(3.0, -2.0);
        assert_eq!(
            croptta_uncertainty(&[d, d, d]).unwrap(),
            UncertaintyEstimate::ZERO
        );
    }

    #[test]
    fn two_samples_one_element() {
        let u = croptta_uncertainty(&[Displacement::ZERO, single(1, 2, 2.0)]).unwrap();
        let mut want = [[0.0; 4]; 2];
        want[1][2] = 1.0;
        assert_eq!(u.stds, want);
    }

    #[test]
    fn population_not_sample_std() {
        let mut ds = vec![Displacement::ZERO; 4];
        ds.push(single(0, 0, 10.0));
        // mean 2, squared deviations 4*4 + 64 = 80, /5 = 16
        let u = ensemble_uncertainty(&ds).unwrap();
        assert!((u.stds[0][0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            croptta_uncertainty(&[Displacement::ZERO]),
            Err(Error::TooFewSamples {
                needed: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn merge_policies() {
        let mut a = UncertaintyEstimate::uniform(1.0);
        a.stds[0][1] = 2.0;
        let mut b = UncertaintyEstimate::uniform(2.0);
        b.stds[0][1] = 1.0;
        assert_eq!(
            merge_uncertainty(&a, &b, Merge::Max),
            UncertaintyEstimate::uniform(2.0)
        );
        assert_eq!(merge_uncertainty(&a, &a, Merge::Min), a);
        let add = merge_uncertainty(
            &UncertaintyEstimate::uniform(1.0),
            &UncertaintyEstimate::uniform(2.0),
            Merge::Add,
        );
        assert_eq!(add, UncertaintyEstimate::uniform(3.0));
    }

    #[test]
    fn score_and_rejection_boundary() {
        assert_eq!(uncertainty_score(&UncertaintyEstimate::uniform(5.0)), 5.0);
        let mut u = UncertaintyEstimate::uniform(7.0);
        u.stds[1][3] = 3.0;
        assert_eq!(uncertainty_score(&u), 3.0);
        assert!(should_reject(&UncertaintyEstimate::uniform(5.0), 4.0));
        let mut one_low = UncertaintyEstimate::uniform(5.0);
        one_low.stds[0][2] = 3.0;
        assert!(!should_reject(&one_low, 4.0));
        assert!(!should_reject(&UncertaintyEstimate::uniform(4.0), 4.0));
    }

    #[test]
    fn aggregation() {
        let a = Displacement::constant(0.0, 0.0);
        let b = Displacement::constant(2.0, 2.0);
        assert_eq!(aggregate_displacement(&[b], Aggregation::Mean).unwrap(), b);
        assert_eq!(
            aggregate_displacement(&[b], Aggregation::Original).unwrap(),
            b
        );
        assert_eq!(
            aggregate_displacement(&[a, b], Aggregation::Mean).unwrap(),
            Displacement::constant(1.0, 1.0)
        );
        assert_eq!(
            aggregate_displacement(&[a, b, b], Aggregation::Original).unwrap(),
            a
        );
        assert!(matches!(
            aggregate_displacement(&[], Aggregation::Mean),
            Err(Error::EmptyList(_))
        ));
    }

    #[test]
    fn enums_parse_and_print() {
        for m in [Merge::Min, Merge::Max, Merge::Add] {
            assert_eq!(m.to_string().parse::<Merge>().unwrap(), m);
        }
        assert_eq!("Mean".parse::<Aggregation>().unwrap(), Aggregation::Mean);
        assert_eq!(
            "croptta+ensemble".parse::<UeMethod>().unwrap(),
            UeMethod::CropTtaEnsemble
        );
        assert!("median".parse::<Aggregation>().is_err());
    }

    fn disp() -> impl Strategy<Value = Displacement> {
        prop::array::uniform2(prop::array::uniform4(-50.0f64..50.0)).prop_map(Displacement)
    }

    fn unc() -> impl Strategy<Value = UncertaintyEstimate> {
        prop::array::uniform2(prop::array::uniform4(0.0f64..20.0))
            .prop_map(|stds| UncertaintyEstimate { stds })
    }

    proptest! {
        #[test]
        fn spread_invariances(ds in prop::collection::vec(disp(), 2..8), shift in disp(), s in -4.0f64..4.0) {
            let u = croptta_uncertainty(&ds).unwrap();
            let mut rev = ds.clone();
            rev.reverse();
            let ur = croptta_uncertainty(&rev).unwrap();
            let shifted: Vec<_> = ds.iter().map(|d| *d + shift).collect();
            let us = croptta_uncertainty(&shifted).unwrap();
            let scaled: Vec<_> = ds.iter().map(|d| d.scale(s)).collect();
            let uk = croptta_uncertainty(&scaled).unwrap();
            for ((a, b), (c, e)) in u.iter().zip(ur.iter()).zip(us.iter().zip(uk.iter())) {
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!((a - c).abs() < 1e-9);
                prop_assert!((a * s.abs() - e).abs() < 1e-9);
            }
        }

        #[test]
        fn merge_ordering(a in unc(), b in unc()) {
            let min = merge_uncertainty(&a, &b, Merge::Min);
            let max = merge_uncertainty(&a, &b, Merge::Max);
            let add = merge_uncertainty(&a, &b, Merge::Add);
            for ((lo, hi), sum) in min.iter().zip(max.iter()).zip(add.iter()) {
                prop_assert!(lo <= hi && hi <= sum);
            }
            for p in [Merge::Min, Merge::Max, Merge::Add] {
                prop_assert_eq!(merge_uncertainty(&a, &b, p), merge_uncertainty(&b, &a, p));
            }
        }

        #[test]
        fn rejection_is_all_elements(u in unc(), s in 0.0f64..20.0) {
            prop_assert_eq!(should_reject(&u, s), u.iter().all(|v| v > s));
        }
    }
}
