//! Command-line surface of the reconstruction pipeline.
//!
//! Subcommands: `gen`, `train`, `train-denoiser`, `reconstruct`, `denoise`,
//! `eval`, `render`. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 numeric failure (NaN loss).

use clap::{Parser, Subcommand};
use pointfill::denoise;
use pointfill::geom::{self, Mesh, PointCloud};
use pointfill::pipeline::{self, EvalSubject, PipelineError, RunConfig};
use pointfill::render::{render_views, render_views_mesh, GrayscaleImage, ViewAxis, ViewSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pointfill", version, about = "Point-cloud completion pipeline: corpus generation, training, denoising, evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus described by the config
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the corpus output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the completion model on the corpus train split
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the run output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train the point-only model even if the config enables fusion
        #[arg(long)]
        no_fusion: bool,
    },
    /// Train the score-based denoiser on (clean + noise, clean) pairs
    TrainDenoiser {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Complete one partial cloud with a trained checkpoint
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Completion checkpoint (defaults to <out_dir>/completion.ckpt)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input cloud (.xyz, .ply, or .obj vertices)
        #[arg(long)]
        input: PathBuf,
        /// Directory holding view_x.pgm / view_y.pgm / view_z.pgm
        #[arg(long)]
        views: Option<PathBuf>,
        /// Refine the prediction with the trained denoiser
        #[arg(long)]
        denoise: bool,
        /// Denoiser checkpoint (defaults to <out_dir>/denoiser.ckpt)
        #[arg(long)]
        denoiser_checkpoint: Option<PathBuf>,
        /// Output XYZ path (defaults to <out_dir>/reconstruction.xyz)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_fusion: bool,
    },
    /// Refine a noisy cloud with a trained denoiser
    Denoise {
        #[arg(long)]
        config: PathBuf,
        /// Denoiser checkpoint (defaults to <out_dir>/denoiser.ckpt)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Output XYZ path (defaults to <out_dir>/denoised.xyz)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint or the copy-partial baseline on the test split
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `copy-partial`: score the partial input as the prediction
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_fusion: bool,
    },
    /// Render the three orthographic depth views of a cloud or mesh
    Render {
        /// Input geometry (.xyz, .ply, or .obj; OBJ faces rasterize as mesh)
        #[arg(long)]
        input: PathBuf,
        /// Output directory for view_x.pgm / view_y.pgm / view_z.pgm
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
        #[arg(long, default_value_t = 2)]
        splat: usize,
    },
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.corpus.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    Ok(cfg)
}

fn load_views(dir: &Path) -> Result<ViewSet, PipelineError> {
    let img = |tag: &str| -> Result<GrayscaleImage, PipelineError> {
        GrayscaleImage::read_pgm(&dir.join(format!("view_{tag}.pgm")))
            .map_err(|e| PipelineError::Data(e.to_string()))
    };
    Ok(ViewSet { views: [img("x")?, img("y")?, img("z")?] })
}

fn run(cmd: Cmd) -> Result<(), PipelineError> {
    match cmd {
        Cmd::Gen { config, seed, out } => {
            let mut cfg = load_config(&config, seed, None)?;
            if let Some(o) = out {
                cfg.corpus_dir = o;
            }
            let index = pipeline::cmd_gen(&cfg)?;
            let train = index.samples.iter().filter(|s| s.split == pointfill::synth::Split::Train).count();
            println!(
                "corpus: {} samples ({} train / {} test) at {}",
                index.samples.len(),
                train,
                index.samples.len() - train,
                cfg.corpus_dir.display()
            );
        }
        Cmd::Train { config, seed, out, no_fusion } => {
            let mut cfg = load_config(&config, seed, out)?;
            if no_fusion {
                cfg.fusion_enabled = false;
            }
            let manifest = pipeline::cmd_train(&cfg)?;
            println!(
                "trained {} epochs; final loss {:.6}; checkpoint {}",
                manifest.per_epoch_train_loss.len(),
                manifest.per_epoch_train_loss.last().copied().unwrap_or(f64::NAN),
                manifest.final_checkpoint
            );
        }
        Cmd::TrainDenoiser { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let manifest = pipeline::cmd_train_denoiser(&cfg)?;
            println!(
                "trained denoiser {} epochs; final loss {:.6}; checkpoint {}",
                manifest.per_epoch_train_loss.len(),
                manifest.per_epoch_train_loss.last().copied().unwrap_or(f64::NAN),
                manifest.final_checkpoint
            );
        }
        Cmd::Reconstruct {
            config,
            checkpoint,
            input,
            views,
            denoise: apply_denoise,
            denoiser_checkpoint,
            out,
            no_fusion,
        } => {
            let mut cfg = load_config(&config, None, None)?;
            if no_fusion {
                cfg.fusion_enabled = false;
            }
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join("completion.ckpt"));
            let out_file = out.unwrap_or_else(|| cfg.out_dir.join("reconstruction.xyz"));
            let view_set = match views {
                Some(dir) => Some(load_views(&dir)?),
                None => None,
            };
            let dn = if apply_denoise {
                Some(denoiser_checkpoint.unwrap_or_else(|| cfg.out_dir.join("denoiser.ckpt")))
            } else {
                None
            };
            let manifest = pipeline::cmd_reconstruct(
                &cfg,
                &ckpt,
                &input,
                view_set.as_ref(),
                dn.as_deref(),
                &out_file,
            )?;
            println!(
                "reconstructed {} points in {:.3}s -> {}",
                manifest.dense_points, manifest.wall_clock_seconds, manifest.output
            );
        }
        Cmd::Denoise { config, checkpoint, input, out } => {
            let cfg = load_config(&config, None, None)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join("denoiser.ckpt"));
            let out_file = out.unwrap_or_else(|| cfg.out_dir.join("denoised.xyz"));
            let raw = geom::io::read_cloud_auto(&input)?;
            let (normalized, rec) = geom::normalize_unit(&raw)?;
            let net = pipeline::load_denoiser(&cfg, &ckpt)?;
            let field = net.field(&normalized, &cfg.neighborhood).map_err(|e| PipelineError::Data(e.to_string()))?;
            let refined = denoise::denoise(&normalized, &cfg.schedule, &field)
                .map_err(|e| PipelineError::Data(e.to_string()))?;
            let restored = refined.map_to_original(&rec);
            if let Some(parent) = out_file.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| PipelineError::Data(format!("{}: {e}", parent.display())))?;
                }
            }
            geom::io::write_xyz(&out_file, &restored)?;
            println!("denoised {} points -> {}", restored.len(), out_file.display());
        }
        Cmd::Eval { config, checkpoint, baseline, seed, out, no_fusion } => {
            let mut cfg = load_config(&config, seed, out)?;
            if no_fusion {
                cfg.fusion_enabled = false;
            }
            let summary = match baseline.as_deref() {
                Some("copy-partial") => pipeline::cmd_eval(&cfg, EvalSubject::CopyPartial)?,
                Some("copy-clean") => pipeline::cmd_eval(&cfg, EvalSubject::CopyClean)?,
                Some(other) => {
                    return Err(PipelineError::Data(format!(
                        "unknown baseline {other:?}; supported: copy-partial, copy-clean"
                    )))
                }
                None => {
                    let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join("completion.ckpt"));
                    let model = pipeline::load_completion(&cfg, &ckpt)?;
                    pipeline::cmd_eval(&cfg, EvalSubject::Model(&model))?
                }
            };
            println!(
                "evaluated {} test samples (d = {})",
                summary.samples.len(),
                summary.threshold_d
            );
            println!(
                "  f_score {:.4} +- {:.4}   cd_l1(x1000) {:.4} +- {:.4}",
                summary.f_score.mean, summary.f_score.std, summary.cd_l1_x1000.mean, summary.cd_l1_x1000.std
            );
            println!(
                "  cd_l2(x1000) {:.4}   emd(x1000) {:.4}   centroid(x1000) {:.4}",
                summary.cd_l2_x1000.mean, summary.emd_x1000.mean, summary.centroid_x1000.mean
            );
            println!("  reports: {}/eval.csv, eval.json", cfg.out_dir.display());
        }
        Cmd::Render { input, out, resolution, splat } => {
            let is_obj = input.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("obj")).unwrap_or(false);
            std::fs::create_dir_all(&out)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", out.display())))?;
            let views = if is_obj {
                let mesh = geom::io::read_obj_mesh(&input)?;
                if mesh.triangles.is_empty() {
                    let (normalized, _) = geom::normalize_unit(&mesh.vertex_cloud())?;
                    render_views(&normalized, resolution, splat).map_err(PipelineError::from)?
                } else {
                    let (cloud, rec) = geom::normalize_unit(&mesh.vertex_cloud())?;
                    let _ = cloud;
                    let normalized = Mesh {
                        vertices: mesh.vertices.iter().map(|p| rec.to_normalized(p)).collect(),
                        triangles: mesh.triangles,
                    };
                    render_views_mesh(&normalized, resolution).map_err(PipelineError::from)?
                }
            } else {
                let raw: PointCloud = geom::io::read_cloud_auto(&input)?;
                let (normalized, _) = geom::normalize_unit(&raw)?;
                render_views(&normalized, resolution, splat).map_err(PipelineError::from)?
            };
            for axis in ViewAxis::ALL {
                let path = out.join(format!("view_{}.pgm", axis.file_tag()));
                views.view(axis).write_pgm(&path).map_err(PipelineError::from)?;
            }
            println!("rendered 3 views at {resolution}x{resolution} -> {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with zero meaning
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
