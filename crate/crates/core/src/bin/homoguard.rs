use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use homoguard::consensus::{Aggregation, ConsensusConfig, Merge, UeMethod};
use homoguard::estimator::EstimatorConfig;
use homoguard::harness::eval::{load_records, write_outputs};
use homoguard::harness::{
    run_ablation, run_evaluation, AblationAxis, DatasetConfig, DiskProvider, EstimatorSelector,
    EvalConfig, Manifest, SampleProvider, Subset, SyntheticProvider,
};
use homoguard::metrics::{mace_histogram, roc_curve, Category};
use homoguard::sampler::{SamplingMethod, SamplingPlan};
use homoguard::Error;

const SEED_ENV: &str = "HOMOGUARD_SEED";

#[derive(Parser)]
#[command(
    name = "homoguard",
    version,
    about = "Crop-consensus uncertainty for homography estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Generate(GenerateArgs),
    /// Evaluate an estimator with consensus-based rejection.
    Evaluate(EvaluateArgs),
    /// ROC of the uncertainty score against large-error samples.
    Roc(RocArgs),
    /// MACE histogram.
    Hist(HistArgs),
    /// Sweep one consensus setting.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Center distances in meters, assigned round-robin.
    #[arg(long, value_delimiter = ',', default_value = "512")]
    dc: Vec<f64>,
    /// Failure categories for the non-clean share.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "textureless,corrupted,geometric_noise,self_similar,exceeds_region,outdated"
    )]
    categories: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    clean_fraction: f64,
    #[arg(long, default_value_t = 4096)]
    map_size: usize,
    /// Write only manifest.json; evaluate it with --in-memory.
    #[arg(long)]
    manifest_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Render samples from the manifest's generator config instead of
    /// reading PGM files.
    #[arg(long)]
    in_memory: bool,
    /// oracle[:sigma[:corrupt_sigma]] | classical | external:<cmd>
    #[arg(long, default_value = "classical")]
    estimator: String,
    /// none | croptta | ensemble | croptta+ensemble
    #[arg(long, default_value = "croptta")]
    method: String,
    #[arg(long, default_value_t = 5)]
    nc: usize,
    #[arg(long, default_value_t = 32)]
    oc: usize,
    #[arg(long, default_value = "random")]
    sampling: String,
    #[arg(long, default_value = "original")]
    agg: String,
    #[arg(long, default_value = "max")]
    merge: String,
    /// Ensemble members.
    #[arg(long, default_value_t = 5)]
    samples: usize,
    /// Rejection threshold s_c in resized-frame pixels.
    #[arg(long, default_value_t = ConsensusConfig::default().s_c)]
    threshold: f64,
    #[arg(long)]
    early_stop_k: Option<usize>,
    /// Estimator iterations per view.
    #[arg(long, default_value_t = 6)]
    iterations: usize,
    /// Refine with a second stage on the predicted bounding box.
    #[arg(long)]
    two_stage: bool,
    /// Evaluate only samples with this center distance.
    #[arg(long)]
    dc: Option<f64>,
    #[arg(long, default_value_t = 25.0)]
    error_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RocArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    error_threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HistArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    bin_width: f64,
    #[arg(long, default_value_t = 100.0)]
    max: f64,
    /// Only records of this category.
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    axis: String,
    /// Axis values; defaults depend on the axis.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Rejection thresholds for the success-rate curve.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4,8,16")]
    sweep: Vec<f64>,
    #[command(flatten)]
    eval: EvaluateArgs,
}

/// Exit status 2 for configuration problems, 3 for estimator failures.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_estimator_error() { 3 } else { 2 },
            msg: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn seed_override(flag: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Failure {
            code: 2,
            msg: format!("{SEED_ENV}={v:?} is not an unsigned integer"),
        }),
        Err(_) => Ok(flag),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> CliResult<T> {
    Ok(s.parse::<T>()?)
}

fn eval_config(a: &EvaluateArgs) -> CliResult<EvalConfig> {
    let consensus = ConsensusConfig {
        method: parse::<UeMethod>(&a.method)?,
        n_c: a.nc,
        n_m: a.samples,
        merge: parse::<Merge>(&a.merge)?,
        aggregation: parse::<Aggregation>(&a.agg)?,
        s_c: a.threshold,
        iterations: a.iterations,
        early_stop_k: a.early_stop_k,
    };
    let plan = SamplingPlan {
        method: parse::<SamplingMethod>(&a.sampling)?,
        o_c: a.oc,
        n_c: a.nc,
        seed: 0,
    };
    Ok(EvalConfig {
        estimator: parse::<EstimatorSelector>(&a.estimator)?,
        consensus,
        plan,
        two_stage: a.two_stage.then(|| EstimatorConfig {
            k1: a.iterations,
            ..EstimatorConfig::default()
        }),
        seed: seed_override(a.seed)?,
        threads: a.threads,
        error_threshold_m: a.error_threshold,
    })
}

fn open_provider(a: &EvaluateArgs) -> CliResult<Box<dyn SampleProvider>> {
    Ok(if a.in_memory {
        Box::new(SyntheticProvider::from_manifest(&Manifest::load(
            &a.manifest,
        )?)?)
    } else {
        Box::new(DiskProvider::open(&a.manifest)?)
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn generate(a: GenerateArgs) -> CliResult<()> {
    let categories = a
        .categories
        .iter()
        .map(|c| parse::<Category>(c))
        .collect::<CliResult<Vec<_>>>()?;
    let config = DatasetConfig {
        seed: seed_override(a.seed)?,
        count: a.count,
        d_c: a.dc,
        categories,
        clean_fraction: a.clean_fraction,
        map_size: a.map_size,
        ..DatasetConfig::default()
    };
    let provider = SyntheticProvider::new(config)?;
    let manifest = if a.manifest_only {
        fs::create_dir_all(&a.out).map_err(Error::from)?;
        let m = provider.manifest();
        m.save(&a.out.join("manifest.json"))?;
        m
    } else {
        provider.write(&a.out)?
    };
    println!(
        "wrote {} samples to {}",
        manifest.samples.len(),
        a.out.display()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let cfg = eval_config(&a)?;
    let provider = open_provider(&a)?;
    let output = match a.dc {
        Some(dc) => run_evaluation(&Subset::new(provider.as_ref(), |e| e.d_c_m == dc), &cfg)?,
        None => run_evaluation(provider.as_ref(), &cfg)?,
    };
    // the table needs at least one evaluated sample; estimator failures take
    // precedence over that
    let table = write_outputs(&output, cfg.error_threshold_m, &a.out);
    if let Ok(table) = &table {
        for r in &table.rows {
            println!(
                "{} d_c={} n={} failed={} MACE={:.2}m CE={:.2}m SR={:.3} AUC={}",
                r.method,
                r.d_c_m,
                r.count,
                r.failed,
                r.mace_m,
                r.ce_m,
                r.success_rate,
                r.auc.map_or("n/a".to_string(), |v| format!("{v:.3}"))
            );
        }
    }
    if output.failures.iter().any(|f| f.estimator_error) {
        return Err(Failure {
            code: 3,
            msg: format!("{} samples failed in the estimator", output.failures.len()),
        });
    }
    table?;
    Ok(())
}

fn roc(a: RocArgs) -> CliResult<()> {
    let records = load_records(&a.records)?;
    let curve = roc_curve(&records, a.error_threshold)?;
    println!(
        "AUC={:.4} positives={} negatives={}",
        curve.auc, curve.positives, curve.negatives
    );
    if let Some(out) = a.out {
        write_json(&out, &curve)?;
    }
    Ok(())
}

fn hist(a: HistArgs) -> CliResult<()> {
    let mut records = load_records(&a.records)?;
    if let Some(c) = &a.category {
        let c = parse::<Category>(c)?;
        records.retain(|r| r.category == c);
    }
    let bins = mace_histogram(&records, a.bin_width, a.max)?;
    for b in &bins {
        println!("{:>8.2} {}", b.lo, b.count);
    }
    if let Some(out) = a.out {
        write_json(&out, &bins)?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> CliResult<()> {
    let axis = parse::<AblationAxis>(&a.axis)?;
    let values = if a.values.is_empty() {
        axis.default_values()
    } else {
        a.values.clone()
    };
    let base = eval_config(&a.eval)?;
    let provider = open_provider(&a.eval)?;
    let result = run_ablation(axis, &values, &base, provider.as_ref(), &a.sweep)?;
    fs::create_dir_all(&a.eval.out).map_err(Error::from)?;
    write_json(&a.eval.out.join(format!("ablation_{axis}.json")), &result)?;
    for e in &result.entries {
        for r in &e.table.rows {
            println!(
                "{axis}={} d_c={} MACE={:.2}m SR={:.3} AUC={} score_std={:.4}",
                e.value,
                r.d_c_m,
                r.mace_m,
                r.success_rate,
                r.auc.map_or("n/a".to_string(), |v| format!("{v:.3}")),
                e.score_std
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Roc(a) => roc(a),
        Command::Hist(a) => hist(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
