//! Synthetic benchmark: procedural maps, failure-mode pairs, datasets,
//! evaluation runs and ablations.

pub mod ablation;
pub mod dataset;
pub mod eval;
pub mod pair;
pub mod scene;

pub use ablation::{run_ablation, sweep_curve, AblationAxis, AblationResult, SweepPoint};
pub use dataset::{
    DatasetConfig, DiskProvider, Manifest, ManifestEntry, SampleProvider, Subset, SyntheticProvider,
};
pub use eval::{
    run_evaluation, EstimatorSelector, EvalConfig, EvalOutput, ResultTable, SampleOutcome,
};
pub use pair::{make_pair, CorruptionSpec, SamplePair};
pub use scene::{generate_scene, Scene, SceneSpec, Texture};
