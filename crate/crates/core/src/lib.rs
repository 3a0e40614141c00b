//! Albedo/shading decomposition of outdoor image collections with known
//! geometry, capture time and location.
//!
//! The pipeline stages live in their own modules: [`solar`] positions the
//! sun, [`gbuffer`] projects the mesh into each view, [`crf`] refines the
//! projected sun-visibility mask, [`light`] estimates the sun/sky ratio,
//! [`penumbra`] softens shadow boundaries and [`decompose`] divides out
//! the shading.

pub mod crf;
pub mod decompose;
pub mod gbuffer;
pub mod image;
pub mod light;
pub mod penumbra;
pub mod pipeline;
pub mod scene;
pub mod solar;

pub use crf::{refine_visibility, CrfParams, Provenance, VisibilityMask};
pub use decompose::{assemble_shading, decompose_albedo, AlbedoResult, DecomposeParams, PixelFlag};
pub use gbuffer::{rasterize_gbuffer, Bvh, GBuffer};
pub use image::{ImageError, LinearImage, ScalarImage};
pub use light::{estimate_ratio, IlluminationRatio, LightParams, LitShadowPair};
pub use penumbra::{solve_profile, soften_view, PenumbraParams, ShadowProfile, SoftVisibility};
pub use scene::{CameraPose, CaptureMeta, Project, TriangleMesh, Vec3};
pub use solar::{sun_direction, SunDirection};
