//! `delight`: run the decomposition pipeline on a project, or one stage at
//! a time.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 stage failure,
//! 4 illumination ratio rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use delight::pipeline::stages::{self, EvalReport};
use delight::pipeline::synth::{generate_scene, generate_test_suite, SuiteScene};
use delight::pipeline::{run_pipeline, Manifest, PipelineConfig, PipelineError, Stage, StageParams};
use delight::scene::{load_project, CaptureMeta, Project};
use delight::{sun_direction, GBuffer, IlluminationRatio, ScalarImage, VisibilityMask};

#[derive(Parser)]
#[command(name = "delight", version, about = "Albedo/shading decomposition for aerial image collections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage as configured in a TOML file, or replay a manifest.
    Run(RunArgs),
    /// Print the sun direction for a place and UTC time as JSON.
    Sunpos {
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        /// RFC 3339 UTC timestamp, e.g. 2021-06-21T08:00:00Z.
        #[arg(long)]
        time: String,
    },
    /// Render a synthetic project with ground-truth layers.
    Synth {
        /// plane, box, box-town, ring, or all (one subdirectory each).
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize per-image G-buffers from the mesh.
    Gbuffer {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine the projected sun-visibility masks with the dense CRF.
    Refine {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        gbuffer: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamsArg,
        #[arg(long)]
        crf_sigma_xy: Option<f64>,
        #[arg(long)]
        crf_sigma_rgb: Option<f64>,
        #[arg(long)]
        crf_iterations: Option<usize>,
    },
    /// Estimate the sun/sky ratio over the whole collection.
    EstimateLight {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        gbuffer: PathBuf,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamsArg,
    },
    /// Recover soft sun visibility across shadow boundaries.
    Soften {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        gbuffer: PathBuf,
        #[arg(long)]
        light: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamsArg,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Divide out the shading. `--masks` may hold soft (`alpha.pfm`) or
    /// binary (`mask.pfm`) visibility.
    Decompose {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        gbuffer: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        light: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamsArg,
    },
    /// Score decompositions against ground-truth layers.
    Eval {
        /// Directory of `<image>/{albedo.pfm,shading.pfm,flags.png}`.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of `<image>/{albedo,shading,alpha}.pfm`.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        params: ParamsArg,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Replay the configuration recorded in a manifest.
    #[arg(long, requires = "out")]
    manifest: Option<PathBuf>,
    /// Output directory for a replay.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, overriding the configuration (0: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Write per-stage wall-clock times and cache hits to this JSON file.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Args)]
struct ParamsArg {
    /// TOML file with [crf], [light], [penumbra], [decompose] and [eval]
    /// sections.
    #[arg(long = "params")]
    file: Option<PathBuf>,
}

impl ParamsArg {
    fn load(&self) -> Result<StageParams, Failure> {
        let Some(path) = &self.file else {
            return Ok(StageParams::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        Ok(StageParams::from_toml_str(&text)?)
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn stage(stage: Stage) -> impl Fn(String) -> Self {
        move |message| PipelineError::Stage { stage, message }.into()
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(args) => run(args),
        Command::Sunpos { lat, lon, time } => {
            let t = CaptureMeta::parse_timestamp(&time).map_err(|e| Failure::config(e.to_string()))?;
            let meta = CaptureMeta::new(lat, lon, t).map_err(|e| Failure::config(e.to_string()))?;
            let sun = sun_direction(&meta).map_err(|e| Failure::stage(Stage::Sunpos)(e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&sun).expect("serializable"));
            Ok(())
        }
        Command::Synth { scene, seed, out } => {
            if scene == "all" {
                for (kind, dir) in generate_test_suite(seed, &out).map_err(|e| Failure::stage(Stage::Gbuffer)(e.to_string()))? {
                    println!("{}: {}", kind.name(), dir.display());
                }
                return Ok(());
            }
            let kind = SuiteScene::parse(&scene)
                .ok_or_else(|| Failure::config(format!("unknown scene {scene:?}; expected plane, box, box-town, ring or all")))?;
            generate_scene(kind, seed, &out).map_err(|e| Failure::stage(Stage::Gbuffer)(e.to_string()))?;
            println!("{}: {}", kind.name(), out.display());
            Ok(())
        }
        Command::Gbuffer { project, out } => {
            let p = project_at(&project)?;
            let sun = stages::compute_sun(&p).map_err(Failure::stage(Stage::Sunpos))?;
            let g = stages::compute_gbuffers(&p, &sun).map_err(Failure::stage(Stage::Gbuffer))?;
            stages::save_gbuffers(&out, &names(&p), &g).map_err(Failure::stage(Stage::Gbuffer))
        }
        Command::Refine {
            project,
            gbuffer,
            out,
            params,
            crf_sigma_xy,
            crf_sigma_rgb,
            crf_iterations,
        } => {
            let mut params = params.load()?;
            params.crf.sigma_xy = crf_sigma_xy.unwrap_or(params.crf.sigma_xy);
            params.crf.sigma_rgb = crf_sigma_rgb.unwrap_or(params.crf.sigma_rgb);
            params.crf.iterations = crf_iterations.unwrap_or(params.crf.iterations);
            params.validate()?;
            let p = project_at(&project)?;
            let g = gbuffers_at(&gbuffer, &p, Stage::Refine)?;
            let masks = stages::refine_masks(&p, &g, &params.crf).map_err(Failure::stage(Stage::Refine))?;
            stages::save_masks(&out, &names(&p), &masks).map_err(Failure::stage(Stage::Refine))
        }
        Command::EstimateLight {
            project,
            masks,
            gbuffer,
            out,
            params,
        } => {
            let params = params.load()?;
            let p = project_at(&project)?;
            let g = gbuffers_at(&gbuffer, &p, Stage::Estimate)?;
            let m = masks_at(&masks, &p, Stage::Estimate)?;
            let est = stages::estimate_light(&p, &m, &g, &params.light).map_err(Failure::stage(Stage::Estimate))?;
            est.save(&out).map_err(|e| Failure::stage(Stage::Estimate)(e.to_string()))?;
            println!(
                "ratio {:.4} {:.4} {:.4}, {} pairs, accepted {}",
                est.ratio[0], est.ratio[1], est.ratio[2], est.n_pairs, est.accepted
            );
            accepted(&est)
        }
        Command::Soften {
            project,
            masks,
            gbuffer,
            light,
            out,
            params,
            lambda,
        } => {
            let mut params = params.load()?;
            params.penumbra.lambda = lambda.unwrap_or(params.penumbra.lambda);
            params.validate()?;
            let p = project_at(&project)?;
            let g = gbuffers_at(&gbuffer, &p, Stage::Soften)?;
            let m = masks_at(&masks, &p, Stage::Soften)?;
            let est = light_at(&light)?;
            accepted(&est)?;
            let soft = stages::soften_all(&p, &m, &g, &est, &params.penumbra).map_err(Failure::stage(Stage::Soften))?;
            stages::save_soft(&out, &names(&p), &soft).map_err(Failure::stage(Stage::Soften))
        }
        Command::Decompose {
            project,
            gbuffer,
            masks,
            light,
            out,
            params,
        } => {
            let params = params.load()?;
            let p = project_at(&project)?;
            let g = gbuffers_at(&gbuffer, &p, Stage::Decompose)?;
            let est = light_at(&light)?;
            accepted(&est)?;
            let alphas = names(&p)
                .iter()
                .map(|n| stages::load_visibility(&masks, n))
                .collect::<Result<Vec<ScalarImage>, _>>()
                .map_err(Failure::stage(Stage::Decompose))?;
            let refs: Vec<&ScalarImage> = alphas.iter().collect();
            let res = stages::decompose_all(&p, &g, &refs, &est, &params.decompose).map_err(Failure::stage(Stage::Decompose))?;
            stages::save_decomposed(&out, &names(&p), &res).map_err(Failure::stage(Stage::Decompose))
        }
        Command::Eval {
            pred,
            truth,
            report,
            params,
        } => {
            let params = params.load()?;
            let views = prediction_names(&pred)?
                .iter()
                .map(|n| {
                    let r = stages::load_decomposed(&pred, n)?;
                    stages::evaluate_view(n, &r, None, None, &truth.join(n), &params.eval)
                })
                .collect::<Result<Vec<_>, String>>()
                .map_err(Failure::stage(Stage::Eval))?;
            let rep = EvalReport::from_views(views, None);
            stages::write_json(&rep, &report).map_err(Failure::stage(Stage::Eval))?;
            println!(
                "albedo si-RMSE max {:.5} mean {:.5}",
                rep.max_albedo_si_rmse, rep.mean_albedo_si_rmse
            );
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = match (&args.config, &args.manifest) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(path)) => {
            let m = Manifest::load(path)?;
            let out = args.out.as_deref().expect("clap requires --out with --manifest");
            PipelineConfig::replay(&m.config, out, 0)?
        }
        (None, None) => unreachable!("clap requires --config or --manifest"),
    };
    if let Some(w) = args.workers {
        cfg.workers = w;
        cfg.validate()?;
    }
    let result = run_pipeline(&cfg);
    if let Ok(r) = &result {
        for s in &r.stages {
            println!("{:<10} {:>8.2}s{}", s.stage.name(), s.seconds, if s.cached { "  (cached)" } else { "" });
        }
        if let Some(l) = &r.manifest.light {
            println!("ratio {:.4} {:.4} {:.4} from {} pairs", l.ratio[0], l.ratio[1], l.ratio[2], l.n_pairs);
        }
        if let Some(e) = &r.manifest.eval {
            println!("albedo si-RMSE max {:.5} mean {:.5}", e.max_albedo_si_rmse, e.mean_albedo_si_rmse);
        }
        for w in &r.manifest.warnings {
            eprintln!("warning: {w}");
        }
        if let Some(path) = &args.timings {
            let text = serde_json::to_string_pretty(&r.stages).expect("serializable") + "\n";
            fs::write(path, text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        }
    }
    result.map(|_| ()).map_err(Failure::from)
}

fn project_at(dir: &Path) -> Result<Project, Failure> {
    load_project(dir).map_err(|e| Failure::stage(Stage::Sunpos)(format!("loading project: {e}")))
}

fn names(p: &Project) -> Vec<String> {
    p.images.iter().map(|im| im.name.clone()).collect()
}

fn gbuffers_at(dir: &Path, p: &Project, stage: Stage) -> Result<Vec<GBuffer>, Failure> {
    stages::load_gbuffers(dir, &names(p)).map_err(Failure::stage(stage))
}

fn masks_at(dir: &Path, p: &Project, stage: Stage) -> Result<Vec<VisibilityMask>, Failure> {
    stages::load_masks(dir, &names(p)).map_err(Failure::stage(stage))
}

fn light_at(path: &Path) -> Result<IlluminationRatio, Failure> {
    IlluminationRatio::load(path).map_err(|e| Failure::stage(Stage::Estimate)(e.to_string()))
}

fn accepted(est: &IlluminationRatio) -> Result<(), Failure> {
    if est.accepted {
        return Ok(());
    }
    Err(PipelineError::RatioRejected {
        reason: est.reason.clone().unwrap_or_else(|| "not accepted".into()),
    }
    .into())
}

fn prediction_names(pred: &Path) -> Result<Vec<String>, Failure> {
    let entries = fs::read_dir(pred).map_err(|e| Failure::stage(Stage::Eval)(format!("{}: {e}", pred.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("albedo.pfm").is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Failure::stage(Stage::Eval)(format!("no <image>/albedo.pfm under {}", pred.display())));
    }
    Ok(names)
}
