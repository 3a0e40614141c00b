//! End-to-end orchestration: sun position, G-buffers, mask refinement,
//! collection-wide light estimation, penumbra softening, decomposition and
//! evaluation against ground truth when the project carries it.
//!
//! Every stage is cached under the output directory, keyed by a SHA-256
//! over its inputs, its configuration section and the key of the stage it
//! reads from. A rerun with the same configuration loads every stage from
//! disk. Output files do not depend on the worker count: parallel work is
//! always collected in input order.
//!
//! Output layout:
//!
//! ```text
//! <output_dir>/sun.json
//!              gbuffer/<image>/{depth,normal,ksun,ksky,alpha}.pfm
//!              masks/<image>/mask.pfm
//!              light.json
//!              soft/<image>/{alpha,blend_weight}.pfm, profiles.json
//!              decomposed/<image>/{albedo,shading}.pfm, flags.png
//!              eval/report.json
//!              keys/<stage>.key
//!              manifest.json
//! ```

mod config;
pub mod stages;
pub mod synth;

pub use config::{EvalParams, PipelineConfig, Stage, StageParams};
pub use stages::{EvalReport, FlagCounts, ViewEval};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crf::VisibilityMask;
use crate::decompose::AlbedoResult;
use crate::gbuffer::GBuffer;
use crate::light::IlluminationRatio;
use crate::penumbra::{SoftVisibility, SoftenStats};
use crate::scene::{load_project, Project};
use crate::solar::SunDirection;
use config::hex;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}\n  hint: {hint}", hint = stage.hint())]
    Stage { stage: Stage, message: String },
    #[error("illumination ratio rejected: {reason}\n  hint: {hint}", hint = Stage::Estimate.hint())]
    RatioRejected { reason: String },
}

impl PipelineError {
    /// Process exit code: 2 configuration, 3 stage failure, 4 rejected ratio.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
            PipelineError::RatioRejected { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightSummary {
    pub ratio: [f64; 3],
    pub accepted: bool,
    pub n_pairs: usize,
    pub n_inliers: usize,
    pub pairs_per_image: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Deterministic record of a run: identical configuration and inputs give
/// an identical manifest. Wall-clock timings and cache hits are reported
/// separately in [`RunReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// Hash of `config`.
    pub config_hash: String,
    /// Configuration in its recorded form; see [`PipelineConfig::recorded`].
    pub config: PipelineConfig,
    /// SHA-256 of every project input file, by path relative to the project.
    pub inputs: BTreeMap<String, String>,
    pub stage_keys: BTreeMap<Stage, String>,
    pub completed: Vec<Stage>,
    pub sun: Option<SunDirection>,
    pub light: Option<LightSummary>,
    pub profiles: BTreeMap<String, SoftenStats>,
    pub flags: BTreeMap<String, FlagCounts>,
    pub eval: Option<EvalSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub max_albedo_si_rmse: f64,
    pub mean_albedo_si_rmse: f64,
    pub patch_consistency: Option<f64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        stages::read_json(path).map_err(PipelineError::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: Stage,
    pub cached: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: Manifest,
    pub stages: Vec<StageRun>,
}

/// Runs the configured stages on a worker pool of `cfg.workers` threads.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    pool.install(|| Runner::new(cfg)?.run())
}

#[derive(Clone, Copy)]
enum Inputs {
    None,
    Meta,
    Geometry,
    Images,
    Truth,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    project: Project,
    names: Vec<String>,
    out: PathBuf,
    manifest: Manifest,
    stages: Vec<StageRun>,
    last_key: String,
}

fn stage_err(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

fn file_hash(path: &Path) -> Result<String, String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn project_inputs(project: &Project) -> Result<BTreeMap<String, String>, String> {
    let mut files = vec![crate::scene::CAMERAS_FILE.to_string(), crate::scene::META_FILE.to_string()];
    for m in ["mesh.obj", "mesh.ply"] {
        if project.dir.join(m).exists() {
            files.push(m.to_string());
            break;
        }
    }
    files.extend(project.images.iter().map(|im| im.file.clone()));
    let truth = project.dir.join(crate::gbuffer::render::TRUTH_DIR);
    if truth.is_dir() {
        for im in &project.images {
            for layer in ["albedo.pfm", "shading.pfm", "alpha.pfm"] {
                let rel = format!("{}/{}/{layer}", crate::gbuffer::render::TRUTH_DIR, im.name);
                if project.dir.join(&rel).exists() {
                    files.push(rel);
                }
            }
        }
    }
    files.into_iter().map(|f| Ok((f.clone(), file_hash(&project.dir.join(&f))?))).collect()
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a PipelineConfig) -> Result<Self, PipelineError> {
        let project = load_project(&cfg.project_dir).map_err(|e| stage_err(Stage::Sunpos)(format!("loading project: {e}")))?;
        let inputs = project_inputs(&project).map_err(stage_err(Stage::Sunpos))?;
        fs::create_dir_all(cfg.output_dir.join("keys")).map_err(|e| PipelineError::Config(format!("{}: {e}", cfg.output_dir.display())))?;
        let names = project.images.iter().map(|im| im.name.clone()).collect();
        Ok(Self {
            out: cfg.output_dir.clone(),
            names,
            manifest: Manifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: cfg.recorded().hash(),
                config: cfg.recorded(),
                inputs,
                stage_keys: BTreeMap::new(),
                completed: Vec::new(),
                sun: None,
                light: None,
                profiles: BTreeMap::new(),
                flags: BTreeMap::new(),
                eval: None,
                warnings: Vec::new(),
            },
            project,
            cfg,
            stages: Vec::new(),
            last_key: String::new(),
        })
    }

    /// Input files of one kind, by path relative to the project.
    fn inputs_of(&self, kind: Inputs) -> Vec<String> {
        let truth = format!("{}/", crate::gbuffer::render::TRUTH_DIR);
        let images: Vec<&str> = self.project.images.iter().map(|im| im.file.as_str()).collect();
        self.manifest
            .inputs
            .keys()
            .filter(|p| match kind {
                Inputs::None => false,
                Inputs::Meta => p.as_str() == crate::scene::META_FILE,
                Inputs::Geometry => p.as_str() == crate::scene::CAMERAS_FILE || p.starts_with("mesh."),
                Inputs::Images => images.contains(&p.as_str()),
                Inputs::Truth => p.starts_with(&truth),
            })
            .cloned()
            .collect()
    }

    fn key(&self, stage: Stage, section: &impl Serialize, kind: Inputs) -> String {
        let files = self.inputs_of(kind);
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(self.manifest.version.as_bytes());
        field(stage.name().as_bytes());
        field(self.last_key.as_bytes());
        field(&serde_json::to_vec(section).expect("serializable"));
        for path in &files {
            field(path.as_bytes());
            field(self.manifest.inputs[path].as_bytes());
        }
        hex(&h.finalize())
    }

    /// Loads the stage from cache when its key matches, otherwise computes
    /// and saves it.
    fn stage<T>(
        &mut self,
        stage: Stage,
        key: String,
        load: impl FnOnce(&Path) -> Result<T, String>,
        compute: impl FnOnce(&Self) -> Result<T, PipelineError>,
        save: impl FnOnce(&Path, &T) -> Result<(), String>,
    ) -> Result<T, PipelineError> {
        let start = Instant::now();
        let key_path = self.out.join("keys").join(format!("{}.key", stage.name()));
        let cached = fs::read_to_string(&key_path).ok().filter(|k| k.trim() == key).and_then(|_| load(&self.out).ok());
        let (value, hit) = match cached {
            Some(v) => (v, true),
            None => {
                let _ = fs::remove_file(&key_path);
                let v = compute(self)?;
                save(&self.out, &v).map_err(stage_err(stage))?;
                fs::write(&key_path, format!("{key}\n")).map_err(|e| stage_err(stage)(format!("{}: {e}", key_path.display())))?;
                (v, false)
            }
        };
        self.stages.push(StageRun {
            stage,
            cached: hit,
            seconds: start.elapsed().as_secs_f64(),
        });
        self.manifest.stage_keys.insert(stage, key.clone());
        self.manifest.completed.push(stage);
        self.last_key = key;
        Ok(value)
    }

    fn done(&self, stage: Stage) -> bool {
        self.cfg.stop_after == Some(stage)
    }

    fn finish(mut self) -> Result<RunReport, PipelineError> {
        self.manifest.warnings.sort();
        self.manifest.warnings.dedup();
        stages::write_json(&self.manifest, &self.out.join(MANIFEST_FILE)).map_err(PipelineError::Config)?;
        Ok(RunReport {
            manifest: self.manifest,
            stages: self.stages,
        })
    }

    fn run(mut self) -> Result<RunReport, PipelineError> {
        let cfg = self.cfg;
        let names = self.names.clone();

        let key = self.key(Stage::Sunpos, &(), Inputs::Meta);
        let sun: SunDirection = self.stage(
            Stage::Sunpos,
            key,
            |o| stages::read_json(&o.join("sun.json")),
            |r| stages::compute_sun(&r.project).map_err(stage_err(Stage::Sunpos)),
            |o, s| stages::write_json(s, &o.join("sun.json")),
        )?;
        self.manifest.sun = Some(sun);
        if sun.elevation_deg < 10.0 {
            self.manifest.warnings.push(format!("low sun elevation {:.1}°: long shadows, weak direct light", sun.elevation_deg));
        }
        if self.done(Stage::Sunpos) {
            return self.finish();
        }

        let key = self.key(Stage::Gbuffer, &(), Inputs::Geometry);
        let n = names.clone();
        let gbufs: Vec<GBuffer> = self.stage(
            Stage::Gbuffer,
            key,
            |o| stages::load_gbuffers(&o.join("gbuffer"), &n),
            |r| stages::compute_gbuffers(&r.project, &sun).map_err(stage_err(Stage::Gbuffer)),
            |o, g| stages::save_gbuffers(&o.join("gbuffer"), &names, g),
        )?;
        if self.done(Stage::Gbuffer) {
            return self.finish();
        }

        let key = self.key(Stage::Refine, &cfg.crf, Inputs::Images);
        let masks: Vec<VisibilityMask> = self.stage(
            Stage::Refine,
            key,
            |o| stages::load_masks(&o.join("masks"), &names),
            |r| stages::refine_masks(&r.project, &gbufs, &cfg.crf).map_err(stage_err(Stage::Refine)),
            |o, m| stages::save_masks(&o.join("masks"), &names, m),
        )?;
        if self.done(Stage::Refine) {
            return self.finish();
        }

        let key = self.key(Stage::Estimate, &cfg.light, Inputs::None);
        let light: IlluminationRatio = self.stage(
            Stage::Estimate,
            key,
            |o| IlluminationRatio::load(o.join("light.json")).map_err(|e| e.to_string()),
            |r| stages::estimate_light(&r.project, &masks, &gbufs, &cfg.light).map_err(stage_err(Stage::Estimate)),
            |o, l| l.save(o.join("light.json")).map_err(|e| e.to_string()),
        )?;
        self.manifest.light = Some(LightSummary {
            ratio: light.ratio,
            accepted: light.accepted,
            n_pairs: light.n_pairs,
            n_inliers: light.n_inliers,
            pairs_per_image: names.iter().cloned().zip(light.pairs_per_image.iter().copied()).collect(),
            reason: light.reason.clone(),
        });
        for (name, &c) in names.iter().zip(&light.pairs_per_image) {
            if c == 0 {
                self.manifest.warnings.push(format!("{name}: no lit/shadow pairs"));
            }
        }
        if !light.accepted {
            let reason = light.reason.clone().unwrap_or_else(|| "not accepted".into());
            self.finish()?;
            return Err(PipelineError::RatioRejected { reason });
        }
        if self.done(Stage::Estimate) {
            return self.finish();
        }

        let key = self.key(Stage::Soften, &cfg.penumbra, Inputs::None);
        let soft: Vec<(SoftVisibility, SoftenStats)> = self.stage(
            Stage::Soften,
            key,
            |o| stages::load_soft(&o.join("soft"), &names),
            |r| stages::soften_all(&r.project, &masks, &gbufs, &light, &cfg.penumbra).map_err(stage_err(Stage::Soften)),
            |o, s| stages::save_soft(&o.join("soft"), &names, s),
        )?;
        for (name, (_, stats)) in names.iter().zip(&soft) {
            if stats.boundary_pixels > 0 && stats.profiles == 0 {
                self.manifest.warnings.push(format!("{name}: shadow boundaries present but no valid profile"));
            }
            self.manifest.profiles.insert(name.clone(), stats.clone());
        }
        if self.done(Stage::Soften) {
            return self.finish();
        }

        let key = self.key(Stage::Decompose, &cfg.decompose, Inputs::Images);
        let alphas: Vec<_> = soft.iter().map(|(s, _)| &s.alpha).collect();
        let results: Vec<AlbedoResult> = self.stage(
            Stage::Decompose,
            key,
            |o| names.iter().map(|n| stages::load_decomposed(&o.join("decomposed"), n)).collect(),
            |r| stages::decompose_all(&r.project, &gbufs, &alphas, &light, &cfg.decompose).map_err(stage_err(Stage::Decompose)),
            |o, res| stages::save_decomposed(&o.join("decomposed"), &names, res),
        )?;
        for (name, r) in names.iter().zip(&results) {
            let counts = FlagCounts::of(r);
            if counts.shading_floor > 0 {
                self.manifest.warnings.push(format!("{name}: {} pixels at the shading floor", counts.shading_floor));
            }
            self.manifest.flags.insert(name.clone(), counts);
        }
        if self.done(Stage::Decompose) {
            return self.finish();
        }

        if !self.project.dir.join(crate::gbuffer::render::TRUTH_DIR).is_dir() {
            self.manifest.warnings.push("no ground truth in the project; evaluation skipped".into());
            return self.finish();
        }
        let key = self.key(Stage::Eval, &cfg.eval, Inputs::Truth);
        let report: EvalReport = self.stage(
            Stage::Eval,
            key,
            |o| stages::read_json(&o.join("eval").join("report.json")),
            |r| stages::evaluate_project(&r.project, &gbufs, &results, &cfg.eval).map_err(stage_err(Stage::Eval)),
            |o, rep| {
                stages::fresh_dir(&o.join("eval"))?;
                stages::write_json(rep, &o.join("eval").join("report.json"))
            },
        )?;
        self.manifest.eval = Some(EvalSummary {
            max_albedo_si_rmse: report.max_albedo_si_rmse,
            mean_albedo_si_rmse: report.mean_albedo_si_rmse,
            patch_consistency: report.patch_consistency,
        });
        self.finish()
    }
}
