use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::crf::CrfParams;
use crate::decompose::DecomposeParams;
use crate::light::LightParams;
use crate::penumbra::PenumbraParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Sunpos,
    Gbuffer,
    Refine,
    Estimate,
    Soften,
    Decompose,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Sunpos,
        Stage::Gbuffer,
        Stage::Refine,
        Stage::Estimate,
        Stage::Soften,
        Stage::Decompose,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sunpos => "sunpos",
            Stage::Gbuffer => "gbuffer",
            Stage::Refine => "refine",
            Stage::Estimate => "estimate",
            Stage::Soften => "soften",
            Stage::Decompose => "decompose",
            Stage::Eval => "eval",
        }
    }

    pub fn hint(self) -> &'static str {
        match self {
            Stage::Sunpos => "check latitude, longitude and timestamp_utc in meta.json; the sun must be above the horizon",
            Stage::Gbuffer => "check that the mesh and camera poses share one world frame and the cameras see the mesh",
            Stage::Refine => "check that images and G-buffers have matching sizes; CRF parameters live in [crf]",
            Stage::Estimate => "the collection needs cast shadows on surfaces of uniform albedo; see [light] thresholds",
            Stage::Soften => "see [penumbra]; set stop_after = \"estimate\" to inspect the ratio first",
            Stage::Decompose => "see [decompose]",
            Stage::Eval => "ground truth is read from <project>/truth/<image>/{albedo,shading,alpha}.pfm",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    /// Pixels this close (Chebyshev, px) to a true shadow boundary are left
    /// out of the albedo and shading metrics.
    pub boundary_exclusion: usize,
    /// Center of the tracked patch for cross-image consistency, in world
    /// coordinates. Defaults to the center of the mesh bounding box.
    pub patch_center: Option<[f64; 2]>,
    /// Radius of the vertical cylinder around the patch center.
    pub patch_radius: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            boundary_exclusion: 14,
            patch_center: None,
            patch_radius: 2.0,
        }
    }
}

/// Algorithm parameters of every stage, usable on their own by the
/// stage-wise commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageParams {
    #[serde(default)]
    pub crf: CrfParams,
    #[serde(default)]
    pub light: LightParams,
    #[serde(default)]
    pub penumbra: PenumbraParams,
    #[serde(default)]
    pub decompose: DecomposeParams,
    #[serde(default)]
    pub eval: EvalParams,
}

impl StageParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: String| PipelineError::Config(e);
        self.crf.validate().map_err(|e| cfg(format!("[crf] {e}")))?;
        self.light.validate().map_err(|e| cfg(format!("[light] {e}")))?;
        self.penumbra.validate().map_err(|e| cfg(format!("[penumbra] {e}")))?;
        self.decompose.validate().map_err(|e| cfg(format!("[decompose] {e}")))?;
        if !(self.eval.patch_radius > 0.0 && self.eval.patch_radius.is_finite()) {
            return Err(cfg("[eval] patch_radius must be positive".into()));
        }
        if self.eval.patch_center.is_some_and(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(cfg("[eval] patch_center must be finite".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let p: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub project_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    /// Last stage to run; all stages when unset.
    #[serde(default)]
    pub stop_after: Option<Stage>,
    #[serde(default)]
    pub crf: CrfParams,
    #[serde(default)]
    pub light: LightParams,
    #[serde(default)]
    pub penumbra: PenumbraParams,
    #[serde(default)]
    pub decompose: DecomposeParams,
    #[serde(default)]
    pub eval: EvalParams,
}

impl PipelineConfig {
    pub fn new(project_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            project_dir: project_dir.into(),
            output_dir: output_dir.into(),
            workers: 0,
            stop_after: None,
            crf: CrfParams::default(),
            light: LightParams::default(),
            penumbra: PenumbraParams::default(),
            decompose: DecomposeParams::default(),
            eval: EvalParams::default(),
        }
    }

    pub fn params(&self) -> StageParams {
        StageParams {
            crf: self.crf,
            light: self.light,
            penumbra: self.penumbra,
            decompose: self.decompose,
            eval: self.eval,
        }
    }

    /// Parses a TOML document; relative paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self, PipelineError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(base) = base {
            if cfg.project_dir.is_relative() {
                cfg.project_dir = base.join(&cfg.project_dir);
            }
            if cfg.output_dir.is_relative() {
                cfg.output_dir = base.join(&cfg.output_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.project_dir.as_os_str().is_empty() || self.output_dir.as_os_str().is_empty() {
            return Err(PipelineError::Config("project_dir and output_dir are required".into()));
        }
        if self.project_dir == self.output_dir {
            return Err(PipelineError::Config("output_dir must differ from project_dir".into()));
        }
        if self.workers > 4096 {
            return Err(PipelineError::Config("workers must be at most 4096".into()));
        }
        self.params().validate()
    }

    /// The form stored in a run manifest: scheduling and the output location
    /// do not affect results, so `workers` is reset and `output_dir` becomes
    /// `.`, the directory holding the manifest.
    pub fn recorded(&self) -> Self {
        Self {
            workers: 0,
            output_dir: PathBuf::from("."),
            ..self.clone()
        }
    }

    /// Rebuilds a runnable configuration from a manifest's recorded form.
    pub fn replay(recorded: &Self, output_dir: &Path, workers: usize) -> Result<Self, PipelineError> {
        let cfg = Self {
            workers,
            output_dir: output_dir.to_path_buf(),
            ..recorded.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = PipelineConfig::from_toml_str("project_dir = \"p\"\noutput_dir = \"o\"\n", Some(Path::new("/base"))).unwrap();
        assert_eq!(cfg.project_dir, PathBuf::from("/base/p"));
        assert_eq!(cfg.penumbra, PenumbraParams::default());
        assert_eq!(cfg.stop_after, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "project_dir = \"p\"\noutput_dir = \"o\"\nworker = 2\n",
            "project_dir = \"p\"\noutput_dir = \"o\"\n[crf]\nsigma_xyz = 3.0\n",
            "project_dir = \"p\"\noutput_dir = \"o\"\n[lights]\n",
        ] {
            assert!(matches!(PipelineConfig::from_toml_str(text, None), Err(PipelineError::Config(_))), "{text}");
        }
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for text in [
            "project_dir = \"p\"\noutput_dir = \"o\"\n[light]\nexposure_hi = 1.5\n",
            "project_dir = \"p\"\noutput_dir = \"o\"\n[penumbra]\nstride = 0\n",
            "project_dir = \"p\"\noutput_dir = \"p\"\n",
            "project_dir = \"p\"\noutput_dir = \"o\"\n[decompose]\ns_floor = -1.0\n",
        ] {
            assert!(matches!(PipelineConfig::from_toml_str(text, None), Err(PipelineError::Config(_))), "{text}");
        }
    }

    #[test]
    fn toml_round_trip_and_stable_hash() {
        let mut cfg = PipelineConfig::new("/p", "/o");
        cfg.stop_after = Some(Stage::Estimate);
        cfg.decompose.clip_level = Some(0.9);
        let back = PipelineConfig::from_toml_str(&cfg.to_toml(), None).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        cfg.penumbra.lambda = 2.0;
        assert_ne!(back.hash(), cfg.hash());
    }

    #[test]
    fn recorded_form_ignores_scheduling_and_output() {
        let mut a = PipelineConfig::new("/p", "/o1");
        let mut b = PipelineConfig::new("/p", "/o2");
        a.workers = 1;
        b.workers = 7;
        assert_eq!(a.recorded().hash(), b.recorded().hash());
        let back = PipelineConfig::replay(&a.recorded(), Path::new("/o3"), 3).unwrap();
        assert_eq!((back.output_dir.as_path(), back.workers), (Path::new("/o3"), 3));
        assert_eq!(back.recorded(), a.recorded());
    }
}
