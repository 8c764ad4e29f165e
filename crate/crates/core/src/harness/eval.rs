//! Evaluation runs over a sample provider and the result tables they produce.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{ManifestEntry, SampleProvider};
use crate::consensus::{run_consensus, ConsensusConfig, UeMethod, UncertaintyEstimate};
use crate::error::{Error, Result};
use crate::estimator::{
    refine_second_stage, ClassicalConfig, ClassicalEstimator, EstimatorConfig, ExternalEstimator,
    HomographyEstimator, OracleConfig, OracleEstimator,
};
use crate::geometry::{Displacement, FrameConfig};
use crate::metrics::{center_error, mace, roc_curve, success_rate, Category, EvalRecord};
use crate::rng;
use crate::sampler::SamplingPlan;

/// Translation jitter of ensemble members after the global search, in
/// coarsest-level pixels.
pub const ENSEMBLE_JITTER: f64 = 1.5;

/// Which estimator an evaluation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EstimatorSelector {
    /// Label-exact oracle with Gaussian noise; failure categories use
    /// `corrupt_sigma`.
    Oracle {
        sigma: f64,
        corrupt_sigma: f64,
    },
    Classical,
    /// Shell command speaking the line protocol. Each worker spawns its own
    /// processes; ensemble member `m` sees `HOMOGUARD_MEMBER=m`.
    External(String),
}

impl FromStr for EstimatorSelector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                return Err(Error::InvalidConfig(
                    "external estimator needs a command".into(),
                ));
            }
            return Ok(Self::External(cmd.to_string()));
        }
        if s == "classical" {
            return Ok(Self::Classical);
        }
        let mut parts = s.split(':');
        if parts.next() == Some("oracle") {
            let num = |p: Option<&str>, default: f64| -> Result<f64> {
                match p {
                    None => Ok(default),
                    Some(v) => v
                        .parse::<f64>()
                        .ok()
                        .filter(|x| *x >= 0.0 && x.is_finite())
                        .ok_or_else(|| Error::InvalidConfig(format!("oracle sigma {v:?}"))),
                }
            };
            let sigma = num(parts.next(), 0.0)?;
            let corrupt_sigma = num(parts.next(), sigma)?;
            if parts.next().is_none() {
                return Ok(Self::Oracle {
                    sigma,
                    corrupt_sigma,
                });
            }
        }
        Err(Error::InvalidConfig(format!(
            "unknown estimator {s:?} (oracle[:sigma[:corrupt_sigma]], classical, external:<cmd>)"
        )))
    }
}

impl fmt::Display for EstimatorSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Oracle {
                sigma,
                corrupt_sigma,
            } if sigma == corrupt_sigma => write!(f, "oracle:{sigma}"),
            Self::Oracle {
                sigma,
                corrupt_sigma,
            } => write!(f, "oracle:{sigma}:{corrupt_sigma}"),
            Self::Classical => f.write_str("classical"),
            Self::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub estimator: EstimatorSelector,
    pub consensus: ConsensusConfig,
    pub plan: SamplingPlan,
    /// Refine the consensus result with a second stage on the bounding box.
    pub two_stage: Option<EstimatorConfig>,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub error_threshold_m: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorSelector::Classical,
            consensus: ConsensusConfig::default(),
            plan: SamplingPlan::default(),
            two_stage: None,
            seed: 0,
            threads: None,
            error_threshold_m: 25.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, frames: &FrameConfig) -> Result<()> {
        self.consensus.validate()?;
        if matches!(
            self.consensus.method,
            UeMethod::CropTta | UeMethod::CropTtaEnsemble
        ) {
            self.plan.validate(frames.w_t)?;
            if self.plan.n_c != self.consensus.n_c {
                return Err(Error::InvalidConfig(format!(
                    "sampling plan has {} views, consensus expects {}",
                    self.plan.n_c, self.consensus.n_c
                )));
            }
        }
        if let Some(ts) = &self.two_stage {
            ts.validate()?;
        }
        if !(self.error_threshold_m.is_finite() && self.error_threshold_m > 0.0) {
            return Err(Error::InvalidConfig(
                "error threshold must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Label used for result table rows.
    pub fn method_label(&self) -> String {
        let mut s = format!("{}/{}", self.estimator, self.consensus.method);
        if self.two_stage.is_some() {
            s.push_str("/two-stage");
        }
        s
    }
}

/// Everything recorded about one successfully evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub record: EvalRecord,
    pub d_c_m: f64,
    /// Final displacement, resized frame.
    pub displacement: Displacement,
    pub uncertainty: UncertaintyEstimate,
    pub estimator_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSample {
    pub sample_id: String,
    pub category: Category,
    pub d_c_m: f64,
    pub error: String,
    pub estimator_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub method: String,
    pub outcomes: Vec<SampleOutcome>,
    pub failures: Vec<FailedSample>,
}

impl EvalOutput {
    pub fn records(&self) -> Vec<EvalRecord> {
        self.outcomes.iter().map(|o| o.record.clone()).collect()
    }

    pub fn table(&self, error_threshold_m: f64) -> Result<ResultTable> {
        ResultTable::build(
            &self.method,
            &self.outcomes,
            &self.failures,
            error_threshold_m,
        )
    }
}

/// Estimators of one worker thread.
struct Worker {
    external: Vec<ExternalEstimator>,
}

fn spawn_external(cmd: &str, n: usize) -> Result<Vec<ExternalEstimator>> {
    (0..n)
        .map(|m| {
            let full = if n == 1 {
                cmd.to_string()
            } else {
                format!("HOMOGUARD_MEMBER={m} {cmd}")
            };
            ExternalEstimator::spawn(&full)
        })
        .collect()
}

fn classical_members(n: usize) -> Vec<ClassicalEstimator> {
    (0..n)
        .map(|m| {
            let mut cfg = ClassicalConfig::default();
            if m > 0 {
                cfg.init_jitter = ENSEMBLE_JITTER;
                cfg.seed = rng::mix(0x5eed, m as u64);
            }
            ClassicalEstimator::new(cfg)
        })
        .collect()
}

fn evaluate_sample(
    provider: &dyn SampleProvider,
    index: usize,
    cfg: &EvalConfig,
    classical: &[ClassicalEstimator],
    worker: &mut Option<Result<Worker>>,
) -> Result<SampleOutcome> {
    let entry: &ManifestEntry = &provider.entries()[index];
    let frames = provider.frames();
    let n_members = cfg.consensus.members_needed();
    let sample_seed = rng::derive(cfg.seed, &entry.id);
    let (satellite, thermal) = provider.load(index)?;

    let oracles: Vec<OracleEstimator>;
    let members: Vec<&dyn HomographyEstimator> = match &cfg.estimator {
        EstimatorSelector::Oracle {
            sigma,
            corrupt_sigma,
        } => {
            let noise = if entry.category == Category::Clean {
                *sigma
            } else {
                *corrupt_sigma
            };
            let ground_truth = entry.label_homography()?;
            oracles = (0..n_members)
                .map(|m| {
                    OracleEstimator::new(OracleConfig {
                        ground_truth,
                        noise_sigma: noise,
                        seed: rng::mix(sample_seed, m as u64),
                    })
                })
                .collect::<Result<_>>()?;
            oracles
                .iter()
                .map(|o| o as &dyn HomographyEstimator)
                .collect()
        }
        EstimatorSelector::Classical => classical
            .iter()
            .map(|c| c as &dyn HomographyEstimator)
            .collect(),
        EstimatorSelector::External(cmd) => {
            let w = worker.get_or_insert_with(|| {
                spawn_external(cmd, n_members).map(|external| Worker { external })
            });
            match w {
                Ok(w) => w
                    .external
                    .iter()
                    .map(|e| e as &dyn HomographyEstimator)
                    .collect(),
                Err(e) => return Err(Error::Protocol(format!("worker setup failed: {e}"))),
            }
        }
    };

    let plan = cfg.plan.with_seed(sample_seed);
    let sat_view = satellite.resize_square(frames.w_r);
    let out = run_consensus(&sat_view, &thermal, &plan, &cfg.consensus, &members, frames)?;
    let mut displacement = out.displacement;
    let mut estimator_iterations = out.estimator_iterations;
    if let Some(ts) = &cfg.two_stage {
        let th_view = thermal.resize_square(frames.w_r);
        let (stage2, _) =
            refine_second_stage(members[0], &satellite, &th_view, &displacement, ts, frames)?;
        displacement = *stage2.last();
        estimator_iterations += stage2.len();
    }

    let gt = frames.from_full_frame(&entry.gt);
    let record = EvalRecord {
        sample_id: entry.id.clone(),
        mace_m: mace(&displacement, &gt, frames),
        ce_m: center_error(&displacement, &gt, frames),
        score: out.score,
        rejected: out.rejected,
        category: entry.category,
    };
    Ok(SampleOutcome {
        record,
        d_c_m: entry.d_c_m,
        displacement,
        uncertainty: out.uncertainty,
        estimator_iterations,
    })
}

/// Evaluate every sample of `provider`. Per-sample failures are collected,
/// never fatal; outcomes keep manifest order whatever the thread count.
pub fn run_evaluation(provider: &dyn SampleProvider, cfg: &EvalConfig) -> Result<EvalOutput> {
    cfg.validate(provider.frames())?;
    let classical = if cfg.estimator == EstimatorSelector::Classical {
        classical_members(cfg.consensus.members_needed())
    } else {
        Vec::new()
    };
    let n = provider.entries().len();
    let run = || -> Vec<std::result::Result<SampleOutcome, FailedSample>> {
        (0..n)
            .into_par_iter()
            .map_init(
                || None,
                |worker, i| {
                    evaluate_sample(provider, i, cfg, &classical, worker).map_err(|e| {
                        let entry = &provider.entries()[i];
                        FailedSample {
                            sample_id: entry.id.clone(),
                            category: entry.category,
                            d_c_m: entry.d_c_m,
                            estimator_error: e.is_estimator_error(),
                            error: e.to_string(),
                        }
                    })
                },
            )
            .collect()
    };
    let results = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut outcomes = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(f) => {
                log::warn!("sample {} failed: {}", f.sample_id, f.error);
                failures.push(f);
            }
        }
    }
    Ok(EvalOutput {
        method: cfg.method_label(),
        outcomes,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    pub count: usize,
    pub success_rate: f64,
    /// Mean MACE over all evaluated samples of the category.
    pub mace_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub d_c_m: f64,
    pub count: usize,
    pub failed: usize,
    /// Means over the samples that were kept.
    pub mace_m: f64,
    pub ce_m: f64,
    /// Means over all evaluated samples.
    pub mace_all_m: f64,
    pub ce_all_m: f64,
    pub success_rate: f64,
    /// `None` when the samples hold a single error class.
    pub auc: Option<f64>,
    pub per_category: Vec<CategoryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl ResultTable {
    /// One row per distinct `d_c`.
    pub fn build(
        method: &str,
        outcomes: &[SampleOutcome],
        failures: &[FailedSample],
        error_threshold_m: f64,
    ) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::EmptyList("evaluated samples"));
        }
        let mut groups: BTreeMap<u64, Vec<&SampleOutcome>> = BTreeMap::new();
        for o in outcomes {
            groups.entry(o.d_c_m.to_bits()).or_default().push(o);
        }
        let mut rows = Vec::new();
        for (bits, group) in groups {
            let d_c_m = f64::from_bits(bits);
            let records: Vec<EvalRecord> = group.iter().map(|o| o.record.clone()).collect();
            let kept = || records.iter().filter(|r| !r.rejected);
            let mut per_category = Vec::new();
            for c in Category::ALL {
                let rs: Vec<EvalRecord> = records
                    .iter()
                    .filter(|r| r.category == c)
                    .cloned()
                    .collect();
                if rs.is_empty() {
                    continue;
                }
                per_category.push(CategoryRow {
                    category: c,
                    count: rs.len(),
                    success_rate: success_rate(&rs)?,
                    mace_m: mean(rs.iter().map(|r| r.mace_m)),
                });
            }
            rows.push(ResultRow {
                method: method.to_string(),
                d_c_m,
                count: records.len(),
                failed: failures
                    .iter()
                    .filter(|f| f.d_c_m.to_bits() == bits)
                    .count(),
                mace_m: mean(kept().map(|r| r.mace_m)),
                ce_m: mean(kept().map(|r| r.ce_m)),
                mace_all_m: mean(records.iter().map(|r| r.mace_m)),
                ce_all_m: mean(records.iter().map(|r| r.ce_m)),
                success_rate: success_rate(&records)?,
                auc: roc_curve(&records, error_threshold_m).ok().map(|c| c.auc),
                per_category,
            });
        }
        Ok(Self { rows })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Flat summary, one line per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "method",
            "d_c_m",
            "count",
            "failed",
            "mace_m",
            "ce_m",
            "success_rate",
            "auc",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.d_c_m.to_string(),
                r.count.to_string(),
                r.failed.to_string(),
                format!("{:.4}", r.mace_m),
                format!("{:.4}", r.ce_m),
                format!("{:.4}", r.success_rate),
                r.auc.map(|a| format!("{a:.4}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Write records, failures, the table (JSON and CSV) into `dir`.
pub fn write_outputs(
    output: &EvalOutput,
    error_threshold_m: f64,
    dir: &Path,
) -> Result<ResultTable> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("records.json"),
        serde_json::to_string_pretty(&output.records())?,
    )?;
    fs::write(
        dir.join("outcomes.json"),
        serde_json::to_string_pretty(&output.outcomes)?,
    )?;
    fs::write(
        dir.join("failures.json"),
        serde_json::to_string_pretty(&output.failures)?,
    )?;
    let table = output.table(error_threshold_m)?;
    table.write_json(&dir.join("table.json"))?;
    table.write_csv(&dir.join("table.csv"))?;
    Ok(table)
}

pub fn load_records(path: &Path) -> Result<Vec<EvalRecord>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
