//! One-axis-at-a-time sweeps over the consensus settings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::SampleProvider;
use super::eval::{run_evaluation, EvalConfig, EvalOutput, ResultTable};
use crate::consensus::{Aggregation, Merge, UeMethod};
use crate::error::{Error, Result};
use crate::sampler::SamplingMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Aggregation,
    Sampling,
    CropOffset,
    SampleNumbers,
    EarlyStopping,
    Merge,
}

impl AblationAxis {
    /// Values swept when none are given.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            Self::Aggregation => &["original", "mean"],
            Self::Sampling => &["random", "grid"],
            Self::CropOffset => &["16", "32", "64", "128"],
            Self::SampleNumbers => &["2", "3", "4", "5", "6", "7", "8"],
            Self::EarlyStopping => &["none", "1", "2", "3", "4", "5", "6"],
            Self::Merge => &["min", "max", "add"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &EvalConfig, value: &str) -> Result<EvalConfig> {
        let mut cfg = base.clone();
        let bad = || Error::InvalidConfig(format!("invalid {self} value {value:?}"));
        match self {
            Self::Aggregation => cfg.consensus.aggregation = value.parse::<Aggregation>()?,
            Self::Sampling => {
                cfg.plan.method = value.parse::<SamplingMethod>()?;
                if cfg.plan.method == SamplingMethod::Grid {
                    cfg.plan.n_c = 5;
                    cfg.consensus.n_c = 5;
                }
            }
            Self::CropOffset => cfg.plan.o_c = value.parse().map_err(|_| bad())?,
            Self::SampleNumbers => {
                let n: usize = value.parse().map_err(|_| bad())?;
                cfg.plan.n_c = n;
                cfg.consensus.n_c = n;
            }
            Self::EarlyStopping => {
                cfg.consensus.early_stop_k = match value {
                    "none" => None,
                    k => Some(k.parse().map_err(|_| bad())?),
                };
            }
            Self::Merge => {
                cfg.consensus.merge = value.parse::<Merge>()?;
                cfg.consensus.method = UeMethod::CropTtaEnsemble;
            }
        }
        Ok(cfg)
    }
}

impl FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "aggregation" => Self::Aggregation,
            "sampling" => Self::Sampling,
            "crop_offset" => Self::CropOffset,
            "sample_numbers" => Self::SampleNumbers,
            "early_stopping" => Self::EarlyStopping,
            "merge" => Self::Merge,
            _ => return Err(Error::InvalidConfig(format!("unknown ablation axis {s:?}"))),
        })
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Aggregation => "aggregation",
            Self::Sampling => "sampling",
            Self::CropOffset => "crop_offset",
            Self::SampleNumbers => "sample_numbers",
            Self::EarlyStopping => "early_stopping",
            Self::Merge => "merge",
        })
    }
}

/// Success rate and mean kept MACE at one rejection threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub s_c: f64,
    pub success_rate: f64,
    pub mace_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub value: String,
    pub table: ResultTable,
    /// Spread of the uncertainty score over the evaluated samples.
    pub score_std: f64,
    pub curve: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub axis: AblationAxis,
    pub entries: Vec<AblationEntry>,
}

/// Re-apply the rejection rule at each threshold without re-running the
/// estimator.
pub fn sweep_curve(output: &EvalOutput, thresholds: &[f64]) -> Vec<SweepPoint> {
    let n = output.outcomes.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&s_c| {
            let kept: Vec<f64> = output
                .outcomes
                .iter()
                .filter(|o| o.record.score <= s_c)
                .map(|o| o.record.mace_m)
                .collect();
            let mace_m = if kept.is_empty() {
                f64::NAN
            } else {
                kept.iter().sum::<f64>() / kept.len() as f64
            };
            SweepPoint {
                s_c,
                success_rate: kept.len() as f64 / n,
                mace_m,
            }
        })
        .collect()
}

pub fn run_ablation(
    axis: AblationAxis,
    values: &[String],
    base: &EvalConfig,
    provider: &dyn SampleProvider,
    thresholds: &[f64],
) -> Result<AblationResult> {
    if values.is_empty() {
        return Err(Error::EmptyList("ablation values"));
    }
    let mut entries = Vec::with_capacity(values.len());
    for value in values {
        let cfg = axis.apply(base, value)?;
        let output = run_evaluation(provider, &cfg)?;
        let table = output.table(cfg.error_threshold_m)?;
        let scores: Vec<f64> = output.outcomes.iter().map(|o| o.record.score).collect();
        let m = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        let score_std = (scores.iter().map(|s| (s - m).powi(2)).sum::<f64>()
            / scores.len().max(1) as f64)
            .sqrt();
        entries.push(AblationEntry {
            value: value.clone(),
            table,
            score_std,
            curve: sweep_curve(&output, thresholds),
        });
    }
    Ok(AblationResult { axis, entries })
}
