//! `eepose`: template building, synthetic sequences, pose estimation and
//! evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use eepose::config::PipelineConfig;
use eepose::features::SyntheticAppearance;
use eepose::pipeline::{
    align_records, evaluate, format_ablation_table, read_estimates, run_ablation, timing_path,
    write_curve_csv, write_estimates, write_summary, write_timing, FrameInput, FrameTiming,
    Tracker, Variant,
};
use eepose::synth::{
    generate_with_appearance, models, save_sequence, SceneFile, SequenceManifest, SEQUENCE_MANIFEST,
};
use eepose::templates::{FeatureFiles, TemplateSet};
use eepose::view_sampling::{build_viewpoints, render, template_intrinsics};
use eepose::{Error, Point3, Pose};

#[derive(Parser)]
#[command(
    name = "eepose",
    version,
    about = "Training-free end-effector 6D pose estimation"
)]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render templates from a model and build the retrieval vocabulary.
    Templates {
        /// Model point file, or a built-in name (gripper, cube, l_shape).
        #[arg(long)]
        model: String,
        /// Output directory of the template store.
        #[arg(long)]
        output: PathBuf,
        /// Directory of precomputed template feature maps named `00000.fmap`,
        /// `00001.fmap`, ... in viewpoint order. Synthetic features otherwise.
        #[arg(long)]
        features: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic sequence from a scene file.
    Synth {
        /// Scene TOML file; built-in defaults when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Output sequence directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Estimate per-frame poses of a sequence.
    Estimate {
        /// Sequence directory (containing manifest.json) or the manifest itself.
        #[arg(long)]
        sequence: PathBuf,
        /// Template store directory written by `templates`.
        #[arg(long)]
        templates: PathBuf,
        /// Estimates file (JSON lines); timings go to `<output>.timing.jsonl`.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score estimates against ground truth, or run the A-D ablation.
    Eval {
        /// Estimates file (JSON lines). Not used with --ablation.
        #[arg(long, required_unless_present = "ablation")]
        estimates: Option<PathBuf>,
        /// Sequence directory or manifest holding the ground-truth poses.
        #[arg(long)]
        sequence: PathBuf,
        /// Model point file, or a built-in name.
        #[arg(long)]
        model: String,
        /// Summary JSON {add_auc, adds_auc, n_frames}; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Accuracy curve CSV (threshold,add_acc,adds_acc).
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Run variants A-D on the sequence and print a table.
        #[arg(long, requires = "templates")]
        ablation: bool,
        /// Template store, for --ablation.
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Ignore frames flagged `predicted_only`.
        #[arg(long)]
        exclude_predicted: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Configuration file plus per-field overrides.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Pipeline TOML file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Viewpoints on the sphere.
    #[arg(long)]
    n_sphere: Option<usize>,
    /// In-plane rotations per viewpoint.
    #[arg(long)]
    n_inplane: Option<usize>,
    /// Templates retrieved per frame.
    #[arg(long)]
    k_r: Option<usize>,
    /// Keyframes used in refinement.
    #[arg(long)]
    k_f: Option<usize>,
    /// Minimum rotation between pool members, degrees.
    #[arg(long)]
    theta_deg: Option<f64>,
    /// Weight of the 3D loss term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Vocabulary size.
    #[arg(long)]
    bow_k: Option<usize>,
    /// Minimum descriptor similarity for a match.
    #[arg(long)]
    min_sim: Option<f32>,
    /// Rotation threshold for grouping candidates into modes, degrees.
    #[arg(long)]
    cluster_deg: Option<f64>,
    /// Memory pool capacity.
    #[arg(long)]
    pool_cap: Option<usize>,
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pipeline variant (a, b, c, d).
    #[arg(long)]
    variant: Option<Variant>,
    /// RANSAC inlier threshold, pixels.
    #[arg(long)]
    inlier_px: Option<f64>,
    /// Template render resolution, pixels.
    #[arg(long)]
    resolution: Option<u32>,
    /// Pixels per feature cell in templates.
    #[arg(long)]
    feature_stride: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => {
                require_file(p)?;
                PipelineConfig::load(p)?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            n_sphere => cfg.n_sphere,
            n_inplane => cfg.n_inplane,
            k_r => cfg.k_r,
            k_f => cfg.k_f,
            theta_deg => cfg.theta_deg,
            lambda => cfg.lambda,
            bow_k => cfg.bow_k,
            min_sim => cfg.min_sim,
            cluster_deg => cfg.cluster_deg,
            pool_cap => cfg.pool_cap,
            seed => cfg.seed,
            variant => cfg.variant,
            inlier_px => cfg.ransac.inlier_px,
            resolution => cfg.templates.resolution,
            feature_stride => cfg.templates.feature_stride,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Error with its exit code: 2 for usage and configuration problems, 1 for
/// runtime failures.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "file not found: {}",
            path.display()
        )))
    }
}

fn load_model(name: &str) -> Result<Vec<Point3>, Failure> {
    if let Some(m) = models::builtin(name) {
        return Ok(m);
    }
    let path = Path::new(name);
    require_file(path)?;
    Ok(models::load_model(path)?)
}

/// Accepts a sequence directory or its manifest file.
fn sequence_paths(path: &Path) -> Result<(PathBuf, PathBuf), Failure> {
    let manifest = if path.is_dir() {
        path.join(SEQUENCE_MANIFEST)
    } else {
        path.to_path_buf()
    };
    require_file(&manifest)?;
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, manifest))
}

fn require_store(dir: &Path) -> Result<(), Failure> {
    require_file(&dir.join(eepose::templates::MANIFEST_FILE))
}

struct Progress {
    quiet: bool,
}

impl Progress {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn cmd_templates(
    model: &str,
    output: &Path,
    features: Option<&Path>,
    cfg: &PipelineConfig,
    log: &Progress,
) -> Result<(), Failure> {
    let model = load_model(model)?;
    let params = cfg.template_params();
    log.say(format!(
        "rendering {} templates",
        params.n_sphere * params.n_inplane
    ));
    let set = match features {
        None => {
            let app = Arc::new(SyntheticAppearance::new(&model, &cfg.appearance.params())?);
            TemplateSet::build_synthetic(&model, app, &params)?
        }
        Some(dir) => {
            if !dir.is_dir() {
                return Err(Failure::usage(format!(
                    "feature directory not found: {}",
                    dir.display()
                )));
            }
            let radius = eepose::templates::model_radius(&model)?;
            let distance = params.distance_factor * radius;
            let k = template_intrinsics(params.resolution, radius, distance, params.fill)?;
            let viewpoints = build_viewpoints(params.n_sphere, params.n_inplane, distance)?;
            let depths = viewpoints
                .iter()
                .map(|vp| render(&model, &vp.camera_pose, &k, &params.render).map(|v| v.depth))
                .collect::<eepose::Result<Vec<_>>>()?;
            let files: Vec<PathBuf> = (0..viewpoints.len())
                .map(|i| dir.join(format!("{i:05}.fmap")))
                .collect();
            for f in &files {
                require_file(f)?;
            }
            TemplateSet::from_parts(
                k,
                viewpoints,
                depths,
                Box::new(FeatureFiles(files)),
                params.bow_k,
                params.seed,
            )?
        }
    };
    set.save(output)?;
    log.say(format!(
        "wrote {} templates to {}",
        set.len(),
        output.display()
    ));
    Ok(())
}

fn cmd_synth(scene: Option<&Path>, output: &Path, log: &Progress) -> Result<(), Failure> {
    let (file, base) = match scene {
        Some(p) => {
            require_file(p)?;
            (
                SceneFile::load(p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            )
        }
        None => (SceneFile::default(), PathBuf::from(".")),
    };
    let cfg = file.to_config(&base)?;
    log.say(format!("synthesizing {} frames", cfg.trajectory.len()));
    let app = SyntheticAppearance::new(&cfg.model, &cfg.appearance)?;
    let frames = generate_with_appearance(&cfg, &app)?;
    save_sequence(output, &cfg, &frames)?;
    log.say(format!(
        "wrote {}",
        output.join(SEQUENCE_MANIFEST).display()
    ));
    Ok(())
}

fn cmd_estimate(
    sequence: &Path,
    store: &Path,
    output: &Path,
    cfg: &PipelineConfig,
    log: &Progress,
) -> Result<(), Failure> {
    let (dir, manifest_path) = sequence_paths(sequence)?;
    require_store(store)?;
    let manifest = SequenceManifest::load(&manifest_path)?;
    let templates = TemplateSet::load(store)?;
    let mut tracker = Tracker::new(&templates, cfg.tracker_config())?;
    let n = manifest.frames.len();
    let mut records = Vec::with_capacity(n);
    let mut timings = Vec::with_capacity(n);
    for i in 0..n {
        let frame = manifest.load_frame(&dir, i)?;
        let input = FrameInput {
            frame_id: frame.id,
            intrinsics: &manifest.intrinsics,
            features: &frame.features,
            mask: &frame.mask,
            depth: &frame.depth,
            fk_pose: frame.fk_pose,
        };
        let out = tracker.process(&input)?;
        log.say(format!(
            "frame {} ({}/{n}): {} inliers, {:.3} s{}",
            frame.id,
            i + 1,
            out.record.diagnostics.inliers,
            out.wall_seconds,
            if out.record.flags.is_empty() {
                String::new()
            } else {
                format!(" [{}]", out.record.flags.join(","))
            }
        ));
        timings.push(FrameTiming {
            frame_id: frame.id,
            wall_seconds: out.wall_seconds,
        });
        records.push(out.record);
    }
    write_estimates(output, &records)?;
    write_timing(&timing_path(output), &timings)?;
    log.say(format!("wrote {}", output.display()));
    Ok(())
}

fn ground_truth(manifest: &SequenceManifest) -> Result<Vec<(u64, Pose)>, Failure> {
    manifest
        .frames
        .iter()
        .map(|r| {
            r.gt_pose
                .or_else(|| manifest.camera_to_base.map(|c| c.compose(&r.fk_pose)))
                .map(|p| (r.id, p))
                .ok_or_else(|| Failure::usage(format!("frame {} has no ground-truth pose", r.id)))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    estimates: Option<&Path>,
    sequence: &Path,
    model: &str,
    output: Option<&Path>,
    curve: Option<&Path>,
    ablation: Option<&Path>,
    mut cfg: PipelineConfig,
    log: &Progress,
) -> Result<(), Failure> {
    let (dir, manifest_path) = sequence_paths(sequence)?;
    let model = load_model(model)?;
    let manifest = SequenceManifest::load(&manifest_path)?;
    let gt = ground_truth(&manifest)?;

    if let Some(store) = ablation {
        require_store(store)?;
        let templates = TemplateSet::load(store)?;
        let frames = (0..manifest.frames.len())
            .map(|i| manifest.load_frame(&dir, i))
            .collect::<eepose::Result<Vec<_>>>()?;
        let inputs: Vec<FrameInput> = frames
            .iter()
            .map(|f| FrameInput::from_synth(f, &manifest.intrinsics))
            .collect();
        let poses: Vec<Pose> = gt.iter().map(|g| g.1).collect();
        log.say(format!("ablation over {} frames", frames.len()));
        cfg.variant = Variant::D;
        let rows = run_ablation(
            &templates,
            cfg.tracker_config(),
            &inputs,
            &poses,
            &model,
            &cfg.eval,
        )?;
        print!("{}", format_ablation_table(&rows));
        if let Some(p) = output {
            let text = serde_json::to_string_pretty(&rows).map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?;
            std::fs::write(p, text + "\n").map_err(|e| Failure {
                code: 1,
                message: format!("{}: {e}", p.display()),
            })?;
        }
        return Ok(());
    }

    let est_path = estimates.ok_or_else(|| Failure::usage("--estimates is required"))?;
    require_file(est_path)?;
    let records = read_estimates(est_path)?;
    let aligned = align_records(&records, &gt, cfg.eval.include_predicted)?;
    let e = evaluate(&aligned, &model, &cfg.eval)?;
    match output {
        Some(p) => write_summary(p, &e.summary)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&e.summary).map_err(|e| Failure {
                code: 1,
                message: e.to_string()
            })?
        ),
    }
    if let Some(p) = curve {
        write_curve_csv(p, &e)?;
    }
    log.say(format!(
        "ADD AUC {:.2}, ADD-S AUC {:.2} over {} frames",
        e.summary.add_auc, e.summary.adds_auc, e.summary.n_frames
    ));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let log = Progress { quiet: cli.quiet };
    match cli.command {
        Command::Templates {
            model,
            output,
            features,
            config,
        } => {
            let cfg = config.resolve()?;
            cmd_templates(&model, &output, features.as_deref(), &cfg, &log)
        }
        Command::Synth { scene, output } => cmd_synth(scene.as_deref(), &output, &log),
        Command::Estimate {
            sequence,
            templates,
            output,
            config,
        } => {
            let cfg = config.resolve()?;
            cmd_estimate(&sequence, &templates, &output, &cfg, &log)
        }
        Command::Eval {
            estimates,
            sequence,
            model,
            output,
            curve,
            ablation,
            templates,
            exclude_predicted,
            config,
        } => {
            let mut cfg = config.resolve()?;
            if exclude_predicted {
                cfg.eval.include_predicted = false;
            }
            let store = if ablation { templates.as_deref() } else { None };
            cmd_eval(
                estimates.as_deref(),
                &sequence,
                &model,
                output.as_deref(),
                curve.as_deref(),
                store,
                cfg,
                &log,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
