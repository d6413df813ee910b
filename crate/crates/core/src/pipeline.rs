//! Run orchestration: a single versioned JSON config drives corpus
//! generation, completion and denoiser training, reconstruction, and
//! evaluation. Every stochastic choice derives from the config seed, so a
//! full gen -> train -> eval run reproduces its numbers exactly.

use crate::completion::{completion_loss, tensor_to_cloud, CompletionError, CompletionModel, ModelConfig};
use crate::denoise::{self, DenoiseError, DenoiserConfig, NeighborhoodSpec, ScoreNet, StepSchedule};
use crate::fusion::FusionConfig;
use crate::geom::{self, GeomError, Point3, PointCloud};
use crate::metrics::{self, MetricReport, Threshold};
use crate::render::{RenderError, ViewSet};
use crate::synth::{self, derive_seed, CorpusConfig, CorpusSample, Split, SynthError};
use crate::tensor::adam::{Adam, AdamConfig};
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::{backward, scale, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Pipeline failures, split by the exit-code contract: data problems exit
/// with 2, numeric failures (NaN loss) with 3.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Data(_) => 2,
            PipelineError::Numeric(_) => 3,
        }
    }
}

macro_rules! from_data {
    ($($t:ty),*) => {
        $(impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Data(e.to_string())
            }
        })*
    };
}

from_data!(SynthError, GeomError, CompletionError, DenoiseError, CheckpointError, RenderError,
    geom::io::IoError, metrics::MetricError, TensorError);

fn io_data(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

/// The single run configuration document (schema version 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Corpus directory (input of train/eval, output of gen).
    pub corpus_dir: PathBuf,
    /// Output directory for checkpoints, manifests, and reports.
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub fusion_enabled: bool,
    pub fusion: FusionConfig,
    pub denoiser: DenoiserConfig,
    pub neighborhood: NeighborhoodSpec,
    pub schedule: StepSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Coverage threshold d in normalized units.
    pub threshold_d: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: 1,
            seed: 7,
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("out"),
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            fusion_enabled: false,
            fusion: FusionConfig::toy(),
            denoiser: DenoiserConfig::default(),
            neighborhood: NeighborhoodSpec::default(),
            schedule: StepSchedule::default(),
            epochs: 50,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            threshold_d: 0.01,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_data(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        if cfg.version != 1 {
            return Err(PipelineError::Data(format!(
                "unsupported config version {} (expected 1)",
                cfg.version
            )));
        }
        cfg.model.validate()?;
        cfg.fusion.validate().map_err(PipelineError::Data)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::Data(format!("config serialization: {e}")))?;
        fs::write(path, text).map_err(|e| io_data(path, e))
    }

    fn fusion_config(&self) -> Option<FusionConfig> {
        self.fusion_enabled.then_some(self.fusion)
    }
}

/// Per-run record: config snapshot, per-epoch losses, timing, checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub config: RunConfig,
    pub per_epoch_train_loss: Vec<f64>,
    pub wall_clock_seconds: f64,
    pub checkpoints: Vec<String>,
    pub final_checkpoint: String,
}

fn load_split(corpus_dir: &Path, split: Split) -> Result<Vec<CorpusSample>, PipelineError> {
    let (_, samples) = synth::load_corpus(corpus_dir)?;
    Ok(samples.into_iter().filter(|s| s.entry.split == split).collect())
}

/// Generates the corpus described by the config.
pub fn cmd_gen(cfg: &RunConfig) -> Result<synth::CorpusIndex, PipelineError> {
    Ok(synth::build_corpus(&cfg.corpus, &cfg.corpus_dir)?)
}

fn check_loss_finite(loss: f64, context: &str) -> Result<(), PipelineError> {
    if !loss.is_finite() {
        return Err(PipelineError::Numeric(format!("{context}: loss is {loss}")));
    }
    Ok(())
}

fn views_match_fusion(cfg: &RunConfig, sample: &CorpusSample) -> Result<(), PipelineError> {
    let res = sample.views.views[0].width;
    if res != cfg.fusion.image_resolution {
        return Err(PipelineError::Data(format!(
            "corpus views are {res}x{res} but fusion expects {0}x{0}; regenerate or adjust config",
            cfg.fusion.image_resolution
        )));
    }
    Ok(())
}

/// Trains the completion model (with fusion when enabled) on the corpus
/// train split: per-epoch seeded shuffling, gradient accumulation over
/// batches, one checkpoint per epoch, manifest at the end.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunManifest, PipelineError> {
    let start = Instant::now();
    let train = load_split(&cfg.corpus_dir, Split::Train)?;
    if train.is_empty() {
        return Err(PipelineError::Data(format!(
            "no training samples under {}",
            cfg.corpus_dir.display()
        )));
    }
    if cfg.fusion_enabled {
        views_match_fusion(cfg, &train[0])?;
    }
    let model = CompletionModel::new(cfg.model, cfg.fusion_config(), cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer);
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_data(&cfg.out_dir, e))?;

    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xE40C + epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            model.params.zero_grads();
            for &si in chunk {
                let sample = &train[si];
                let views = cfg.fusion_enabled.then_some(&sample.views);
                let out = model.complete(&sample.partial, views)?;
                let loss = completion_loss(&out.coarse, &out.dense, &sample.clean)?;
                let value = loss.item();
                check_loss_finite(value, &format!("epoch {epoch} sample {}", sample.entry.id))?;
                epoch_loss += value;
                backward(&scale(&loss, 1.0 / chunk.len() as f64))
                    .map_err(|e| PipelineError::Data(e.to_string()))?;
            }
            adam.step(&model.params)?;
        }
        per_epoch.push(epoch_loss / train.len() as f64);
        let ckpt = cfg.out_dir.join(format!("completion_epoch_{epoch:03}.ckpt"));
        checkpoint::save(&ckpt, &model.params)?;
        checkpoints.push(ckpt.display().to_string());
    }

    let final_path = cfg.out_dir.join("completion.ckpt");
    checkpoint::save(&final_path, &model.params)?;
    let manifest = RunManifest {
        version: 1,
        config: cfg.clone(),
        per_epoch_train_loss: per_epoch,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        checkpoints,
        final_checkpoint: final_path.display().to_string(),
    };
    write_manifest(&cfg.out_dir.join("train_manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Trains the score network on (clean + noise, clean) pairs drawn from the
/// corpus train split.
pub fn cmd_train_denoiser(cfg: &RunConfig) -> Result<RunManifest, PipelineError> {
    let start = Instant::now();
    let train = load_split(&cfg.corpus_dir, Split::Train)?;
    if train.is_empty() {
        return Err(PipelineError::Data(format!(
            "no training samples under {}",
            cfg.corpus_dir.display()
        )));
    }
    let net = ScoreNet::new(cfg.denoiser, derive_seed(cfg.seed, 0xD50));
    let mut adam = Adam::new(cfg.optimizer);
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_data(&cfg.out_dir, e))?;

    let sigma = cfg.neighborhood.sigma;
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for (si, sample) in train.iter().enumerate() {
            let noise_seed = derive_seed(cfg.seed, 0x4015E + (epoch * train.len() + si) as u64);
            let noisy = add_gaussian_noise(&sample.clean, sigma, noise_seed);
            net.params.zero_grads();
            let loss = net.denoise_loss(&noisy, &sample.clean, &cfg.neighborhood)?;
            let value = loss.item();
            check_loss_finite(value, &format!("denoiser epoch {epoch} sample {}", sample.entry.id))?;
            epoch_loss += value;
            backward(&loss).map_err(|e| PipelineError::Data(e.to_string()))?;
            adam.step(&net.params)?;
        }
        per_epoch.push(epoch_loss / train.len() as f64);
    }

    let final_path = cfg.out_dir.join("denoiser.ckpt");
    checkpoint::save(&final_path, &net.params)?;
    let manifest = RunManifest {
        version: 1,
        config: cfg.clone(),
        per_epoch_train_loss: per_epoch,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        checkpoints: vec![final_path.display().to_string()],
        final_checkpoint: final_path.display().to_string(),
    };
    write_manifest(&cfg.out_dir.join("denoiser_manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Adds isotropic Gaussian noise with a derived seed.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma must be positive");
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| {
                Point3::new(
                    p.x + normal.sample(&mut rng),
                    p.y + normal.sample(&mut rng),
                    p.z + normal.sample(&mut rng),
                )
            })
            .collect(),
        norm: cloud.norm,
    }
}

/// Loads a trained completion model from a checkpoint.
pub fn load_completion(cfg: &RunConfig, ckpt: &Path) -> Result<CompletionModel, PipelineError> {
    let model = CompletionModel::new(cfg.model, cfg.fusion_config(), cfg.seed)?;
    checkpoint::load(ckpt, &model.params)?;
    Ok(model)
}

/// Loads a trained score network from a checkpoint.
pub fn load_denoiser(cfg: &RunConfig, ckpt: &Path) -> Result<ScoreNet, PipelineError> {
    let net = ScoreNet::new(cfg.denoiser, 0);
    checkpoint::load(ckpt, &net.params)?;
    Ok(net)
}

/// Reconstruction record written next to the emitted cloud.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReconstructManifest {
    pub input: String,
    pub output: String,
    pub dense_points: usize,
    pub denoised: bool,
    pub wall_clock_seconds: f64,
}

/// Runs one cloud through the trained model: normalize, complete,
/// optionally denoise, then map back to the input frame and emit XYZ.
pub fn cmd_reconstruct(
    cfg: &RunConfig,
    ckpt: &Path,
    input: &Path,
    views: Option<&ViewSet>,
    denoiser_ckpt: Option<&Path>,
    out_file: &Path,
) -> Result<ReconstructManifest, PipelineError> {
    let start = Instant::now();
    let raw = geom::io::read_cloud_auto(input)?;
    if raw.is_empty() {
        return Err(PipelineError::Data(format!("{}: empty cloud", input.display())));
    }
    let (normalized, rec) = geom::normalize_unit(&raw)?;
    let model = load_completion(cfg, ckpt)?;
    let out = model.complete(&normalized, views)?;
    let mut dense = tensor_to_cloud(&out.dense);

    let mut denoised = false;
    if let Some(dn_path) = denoiser_ckpt {
        let net = load_denoiser(cfg, dn_path)?;
        let field = net.field(&dense, &cfg.neighborhood)?;
        dense = denoise::denoise(&dense, &cfg.schedule, &field)?;
        denoised = true;
    }

    let restored = dense.map_to_original(&rec);
    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_data(parent, e))?;
        }
    }
    geom::io::write_xyz(out_file, &restored)?;
    Ok(ReconstructManifest {
        input: input.display().to_string(),
        output: out_file.display().to_string(),
        dense_points: restored.len(),
        denoised,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// What stands in for the model during evaluation.
pub enum EvalSubject<'a> {
    Model(&'a CompletionModel),
    /// The `copy-partial` baseline: the partial input is the prediction.
    CopyPartial,
    /// Oracle self-check: the ground truth is the prediction.
    CopyClean,
}

/// Mean and population standard deviation of one metric column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Aggregate { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerSampleReport {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

/// Full evaluation output: per-sample reports plus aggregates, mirrored to
/// CSV and JSON on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub threshold_d: f64,
    pub samples: Vec<PerSampleReport>,
    pub precision: Aggregate,
    pub recall: Aggregate,
    pub f_score: Aggregate,
    pub cd_l1: Aggregate,
    pub cd_l2: Aggregate,
    pub emd: Aggregate,
    pub centroid_diff: Aggregate,
    pub cd_l1_x1000: Aggregate,
    pub cd_l2_x1000: Aggregate,
    pub emd_x1000: Aggregate,
    pub centroid_x1000: Aggregate,
}

/// Evaluates predictions over the corpus test split and writes
/// `eval.csv` / `eval.json` under the output directory.
pub fn cmd_eval(cfg: &RunConfig, subject: EvalSubject<'_>) -> Result<EvalSummary, PipelineError> {
    let test = load_split(&cfg.corpus_dir, Split::Test)?;
    if test.is_empty() {
        return Err(PipelineError::Data(format!(
            "no test samples under {}",
            cfg.corpus_dir.display()
        )));
    }
    let d = Threshold(cfg.threshold_d);
    let mut samples = Vec::with_capacity(test.len());
    for sample in &test {
        let prediction = match &subject {
            EvalSubject::Model(model) => {
                let views = cfg.fusion_enabled.then_some(&sample.views);
                tensor_to_cloud(&model.complete(&sample.partial, views)?.dense)
            }
            EvalSubject::CopyPartial => sample.partial.clone(),
            EvalSubject::CopyClean => sample.clean.clone(),
        };
        let report = metrics::evaluate_pair(&prediction, &sample.clean, d)?;
        samples.push(PerSampleReport { id: sample.entry.id.clone(), metrics: report });
    }

    let col = |f: fn(&MetricReport) -> f64| -> Vec<f64> { samples.iter().map(|s| f(&s.metrics)).collect() };
    let summary = EvalSummary {
        threshold_d: cfg.threshold_d,
        precision: aggregate(&col(|m| m.precision)),
        recall: aggregate(&col(|m| m.recall)),
        f_score: aggregate(&col(|m| m.f_score)),
        cd_l1: aggregate(&col(|m| m.cd_l1)),
        cd_l2: aggregate(&col(|m| m.cd_l2)),
        emd: aggregate(&col(|m| m.emd)),
        centroid_diff: aggregate(&col(|m| m.centroid_diff)),
        cd_l1_x1000: aggregate(&col(|m| m.cd_l1_x1000)),
        cd_l2_x1000: aggregate(&col(|m| m.cd_l2_x1000)),
        emd_x1000: aggregate(&col(|m| m.emd_x1000)),
        centroid_x1000: aggregate(&col(|m| m.centroid_diff_x1000)),
        samples,
    };

    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_data(&cfg.out_dir, e))?;
    let mut csv = String::from(metrics::CSV_HEADER);
    csv.push('\n');
    for s in &summary.samples {
        csv.push_str(&metrics::csv_row(&s.id, &s.metrics));
        csv.push('\n');
    }
    let csv_path = cfg.out_dir.join("eval.csv");
    fs::write(&csv_path, csv).map_err(|e| io_data(&csv_path, e))?;
    let json_path = cfg.out_dir.join("eval.json");
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| PipelineError::Data(format!("eval serialization: {e}")))?;
    fs::write(&json_path, json).map_err(|e| io_data(&json_path, e))?;
    Ok(summary)
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| PipelineError::Data(format!("manifest serialization: {e}")))?;
    fs::write(path, text).map_err(|e| io_data(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(root: &Path) -> RunConfig {
        RunConfig {
            corpus_dir: root.join("corpus"),
            out_dir: root.join("out"),
            corpus: CorpusConfig {
                total_samples: 10,
                points_per_cloud: 220,
                ..CorpusConfig::default()
            },
            model: ModelConfig {
                proxy_count: 24,
                embed_dim: 16,
                heads: 2,
                encoder_layers: 1,
                decoder_layers: 1,
                query_count: 8,
                folding_grid: 2,
                knn_k: 4,
            },
            epochs: 2,
            batch_size: 4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn gen_train_eval_smoke_and_determinism() {
        let root = std::env::temp_dir().join("pointfill-pipeline-smoke");
        let _ = fs::remove_dir_all(&root);
        let cfg = tiny_config(&root);

        cmd_gen(&cfg).unwrap();
        let m1 = cmd_train(&cfg).unwrap();
        assert_eq!(m1.per_epoch_train_loss.len(), 2);
        assert!(m1.per_epoch_train_loss.iter().all(|l| l.is_finite()));

        // retrain from scratch: identical losses
        let m2 = cmd_train(&cfg).unwrap();
        assert_eq!(m1.per_epoch_train_loss, m2.per_epoch_train_loss);

        // eval through the trained model and through the baseline
        let model = load_completion(&cfg, Path::new(&m1.final_checkpoint)).unwrap();
        let summary = cmd_eval(&cfg, EvalSubject::Model(&model)).unwrap();
        assert_eq!(summary.samples.len(), 1); // 10 samples -> 9 train / 1 test
        assert!(summary.cd_l1.mean.is_finite());

        let baseline = cmd_eval(&cfg, EvalSubject::CopyPartial).unwrap();
        assert!(baseline.cd_l1.mean > 0.0);

        // CSV row count matches the test split and aggregates recompute
        let csv = fs::read_to_string(cfg.out_dir.join("eval.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).filter(|l| !l.is_empty()).collect();
        assert_eq!(rows.len(), baseline.samples.len());
        let cd_col: Vec<f64> =
            rows.iter().map(|r| r.split(", ").nth(4).unwrap().parse().unwrap()).collect();
        let mean = cd_col.iter().sum::<f64>() / cd_col.len() as f64;
        assert!((mean - baseline.cd_l1_x1000.mean).abs() < 1e-9);

        let _ = fs::remove_dir_all(&root);
    }

    #[test]
    fn train_loss_decreases_on_overfit_config() {
        let root = std::env::temp_dir().join("pointfill-pipeline-overfit");
        let _ = fs::remove_dir_all(&root);
        let mut cfg = tiny_config(&root);
        cfg.corpus.total_samples = 2;
        cfg.epochs = 5;
        cfg.batch_size = 1;
        cfg.optimizer.lr = 3e-3;

        cmd_gen(&cfg).unwrap();
        let m = cmd_train(&cfg).unwrap();
        let first = m.per_epoch_train_loss[0];
        let last = *m.per_epoch_train_loss.last().unwrap();
        assert!(last < first, "loss failed to decrease: {first} -> {last}");
        let _ = fs::remove_dir_all(&root);
    }

    #[test]
    fn denoiser_training_smoke() {
        let root = std::env::temp_dir().join("pointfill-pipeline-denoiser");
        let _ = fs::remove_dir_all(&root);
        let mut cfg = tiny_config(&root);
        cfg.corpus.total_samples = 4;
        cfg.corpus.points_per_cloud = 150;
        cfg.epochs = 3;

        cmd_gen(&cfg).unwrap();
        let m = cmd_train_denoiser(&cfg).unwrap();
        assert_eq!(m.per_epoch_train_loss.len(), 3);
        let first = m.per_epoch_train_loss[0];
        let last = *m.per_epoch_train_loss.last().unwrap();
        assert!(last < first, "denoiser loss failed to decrease: {first} -> {last}");
        assert!(Path::new(&m.final_checkpoint).exists());
        let _ = fs::remove_dir_all(&root);
    }

    #[test]
    fn reconstruct_emits_dense_cloud_in_original_frame() {
        let root = std::env::temp_dir().join("pointfill-pipeline-reconstruct");
        let _ = fs::remove_dir_all(&root);
        let mut cfg = tiny_config(&root);
        cfg.corpus.total_samples = 4;
        cfg.epochs = 1;
        cmd_gen(&cfg).unwrap();
        let m = cmd_train(&cfg).unwrap();

        // an off-center unnormalized input exercises the frame round trip
        let spec = synth::ShapeSpec {
            family: synth::ShapeFamily::Sphere { radius: 3.0 },
            count: 200,
            seed: 5,
        };
        let cloud = synth::generate_shape(&spec).unwrap();
        let shifted = PointCloud::new(
            cloud.points.iter().map(|p| Point3::new(p.x * 40.0 + 100.0, p.y * 40.0, p.z * 40.0)).collect(),
        );
        let input = root.join("input.xyz");
        geom::io::write_xyz(&input, &shifted).unwrap();
        let out_file = root.join("prediction.xyz");
        let rec = cmd_reconstruct(
            &cfg,
            Path::new(&m.final_checkpoint),
            &input,
            None,
            None,
            &out_file,
        )
        .unwrap();
        assert_eq!(rec.dense_points, cfg.model.dense_count());
        let emitted = geom::io::read_xyz(&out_file).unwrap();
        assert_eq!(emitted.len(), cfg.model.dense_count());
        // prediction lives near the input's frame, not the unit box
        let centroid = geom::centroid(&emitted).unwrap();
        assert!(centroid.x > 50.0, "prediction not mapped back: centroid {centroid:?}");
        let _ = fs::remove_dir_all(&root);
    }

    #[test]
    fn eval_on_ground_truth_is_perfect() {
        let root = std::env::temp_dir().join("pointfill-pipeline-gt-oracle");
        let _ = fs::remove_dir_all(&root);
        let mut cfg = tiny_config(&root);
        cfg.corpus.total_samples = 12;
        cmd_gen(&cfg).unwrap();
        let summary = cmd_eval(&cfg, EvalSubject::CopyClean).unwrap();
        for s in &summary.samples {
            assert_eq!(s.metrics.f_score, 1.0);
            assert_eq!(s.metrics.cd_l1, 0.0);
            assert_eq!(s.metrics.cd_l2, 0.0);
            assert!(s.metrics.emd < 1e-9);
            assert_eq!(s.metrics.centroid_diff, 0.0);
        }
        let _ = fs::remove_dir_all(&root);
    }

    #[test]
    fn denoiser_rerun_reproduces_losses() {
        let root = std::env::temp_dir().join("pointfill-pipeline-denoiser-det");
        let _ = fs::remove_dir_all(&root);
        let mut cfg = tiny_config(&root);
        cfg.corpus.total_samples = 4;
        cfg.corpus.points_per_cloud = 120;
        cfg.epochs = 2;
        cmd_gen(&cfg).unwrap();
        let a = cmd_train_denoiser(&cfg).unwrap();
        let b = cmd_train_denoiser(&cfg).unwrap();
        assert_eq!(a.per_epoch_train_loss, b.per_epoch_train_loss);
        let _ = fs::remove_dir_all(&root);
    }

    #[test]
    fn reconstruct_with_denoiser_does_not_regress() {
        let root = std::env::temp_dir().join("pointfill-pipeline-denoise-pair");
        let _ = fs::remove_dir_all(&root);
        let mut cfg = tiny_config(&root);
        cfg.corpus.total_samples = 6;
        cfg.corpus.points_per_cloud = 200;
        cfg.corpus.families = vec![
            synth::ShapeFamily::Sphere { radius: 1.0 },
            synth::ShapeFamily::Torus { major: 1.0, minor: 0.4 },
        ];
        cfg.epochs = 4;
        cfg.batch_size = 2;
        cmd_gen(&cfg).unwrap();
        let m = cmd_train(&cfg).unwrap();
        let dn = cmd_train_denoiser(&cfg).unwrap();

        // reconstruct one test sample with and without the denoising pass
        let test = load_split(&cfg.corpus_dir, Split::Test).unwrap();
        let sample = &test[0];
        let input = synth::sample_dir(&cfg.corpus_dir, &sample.entry).join("partial.xyz");
        let plain_out = root.join("plain.xyz");
        let denoised_out = root.join("denoised.xyz");
        let ckpt = Path::new(&m.final_checkpoint);
        cmd_reconstruct(&cfg, ckpt, &input, None, None, &plain_out).unwrap();
        let rec = cmd_reconstruct(
            &cfg,
            ckpt,
            &input,
            None,
            Some(Path::new(&dn.final_checkpoint)),
            &denoised_out,
        )
        .unwrap();
        assert!(rec.denoised);

        // both predictions come back in the corpus frame
        let plain = geom::io::read_xyz(&plain_out).unwrap();
        let refined = geom::io::read_xyz(&denoised_out).unwrap();
        let cd_plain =
            crate::metrics::chamfer(&plain, &sample.clean, crate::metrics::ChamferNorm::L1).unwrap();
        let cd_refined =
            crate::metrics::chamfer(&refined, &sample.clean, crate::metrics::ChamferNorm::L1)
                .unwrap();
        assert!(
            cd_refined <= cd_plain * 1.02,
            "denoising pass regressed CD: {cd_plain} -> {cd_refined}"
        );
        let _ = fs::remove_dir_all(&root);
    }

    #[test]
    fn missing_config_and_bad_version_are_data_errors() {
        let missing = RunConfig::load(Path::new("/nonexistent/config.json")).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
        assert!(missing.to_string().contains("/nonexistent/config.json"));

        let root = std::env::temp_dir().join("pointfill-pipeline-cfg");
        fs::create_dir_all(&root).unwrap();
        let path = root.join("bad.json");
        fs::write(&path, r#"{"version": 9}"#).unwrap();
        let bad = RunConfig::load(&path).unwrap_err();
        assert!(bad.to_string().contains("version 9"));
    }

    #[test]
    fn incompatible_checkpoint_reports_dimension_diff() {
        let root = std::env::temp_dir().join("pointfill-pipeline-ckpt-mismatch");
        let _ = fs::remove_dir_all(&root);
        fs::create_dir_all(&root).unwrap();
        let mut cfg = tiny_config(&root);
        let model = CompletionModel::new(cfg.model, None, 1).unwrap();
        let ckpt = root.join("model.ckpt");
        checkpoint::save(&ckpt, &model.params).unwrap();

        cfg.model.embed_dim = 32; // shape drift
        let err = match load_completion(&cfg, &ckpt) {
            Err(e) => e,
            Ok(_) => panic!("mismatched checkpoint must not load"),
        };
        let msg = err.to_string();
        assert!(msg.contains("16") && msg.contains("32"), "no dimension diff in: {msg}");
        let _ = fs::remove_dir_all(&root);
    }
}
