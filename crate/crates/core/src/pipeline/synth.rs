//! Canonical synthetic projects with ground-truth layers.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gbuffer::render::{render_synthetic_project, Illumination, SyntheticScene};
use crate::gbuffer::GeometryError;
use crate::scene::{CameraPose, CaptureMeta, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteScene {
    /// Ground plane only; no shadow anywhere.
    Plane,
    /// One box casting a hard shadow.
    Box,
    /// Grid of boxes under an extended sun disk (penumbrae), eight views.
    BoxTown,
    /// Box cluster seen by eight oblique cameras on a ring.
    Ring,
}

impl SuiteScene {
    pub const ALL: [SuiteScene; 4] = [SuiteScene::Plane, SuiteScene::Box, SuiteScene::BoxTown, SuiteScene::Ring];

    pub fn name(self) -> &'static str {
        match self {
            SuiteScene::Plane => "plane",
            SuiteScene::Box => "box",
            SuiteScene::BoxTown => "box-town",
            SuiteScene::Ring => "ring",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Sky radiance of every suite scene (bluish); the sun is four times it in
/// every channel.
pub const SUITE_L_SKY: [f64; 3] = [0.20, 0.22, 0.26];
pub const SUITE_RATIO: f64 = 4.0;
/// Angular radius of the sun disk in the box-town scene; about twice the
/// real sun so penumbrae span several pixels at this resolution.
pub const BOX_TOWN_SUN_RADIUS_DEG: f64 = 0.53;

const GROUND: [f64; 3] = [0.42, 0.40, 0.36];
const WALLS: [f64; 3] = [0.55, 0.50, 0.45];

fn meta() -> CaptureMeta {
    // Munich, summer solstice morning: elevation ≈ 45°, azimuth ≈ 105°
    let t = CaptureMeta::parse_timestamp("2021-06-21T08:00:00Z").expect("valid timestamp");
    CaptureMeta::new(48.137, 11.575, t).expect("valid meta")
}

fn illumination(sun_radius_deg: f64) -> Illumination {
    Illumination {
        l_sun: SUITE_L_SKY.map(|l| l * SUITE_RATIO),
        l_sky: SUITE_L_SKY,
        sun_radius_deg,
        ambient: None,
    }
}

fn look(eye: [f64; 3], target: [f64; 3], focal: f64, size: usize) -> CameraPose {
    let (eye, target) = (Vec3::from(eye), Vec3::from(target));
    CameraPose::look_at(eye, target, Vec3::y(), focal, size, size).expect("valid camera")
}

fn roof(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let base: f64 = rng.random_range(0.55..0.75);
    [base, base * 0.95, base * 0.9]
}

/// Renders one scene into `dir`.
pub fn generate_scene(kind: SuiteScene, seed: u64, dir: &Path) -> Result<(), GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x5851_F42D_4C95_7F2D));
    let mut scene = SyntheticScene::new();
    let (cams, size, radius) = match kind {
        SuiteScene::Plane => {
            scene.add_ground(60.0, GROUND);
            let cams = vec![look([0.0, 0.0, 40.0], [0.0, 0.0, 0.0], 400.0, 128), look([6.0, -4.0, 40.0], [6.0, 0.0, 0.0], 400.0, 128)];
            (cams, 128, 0.0)
        }
        SuiteScene::Box => {
            scene.add_ground(60.0, GROUND);
            scene.add_box([0.0, 0.0], [6.0, 6.0], 8.0, roof(&mut rng), WALLS);
            let cams = vec![look([0.0, 0.0, 50.0], [-3.0, 0.0, 0.0], 300.0, 192), look([-8.0, 5.0, 50.0], [-3.0, 1.0, 0.0], 300.0, 192)];
            (cams, 192, 0.0)
        }
        SuiteScene::BoxTown => {
            scene.add_ground(80.0, GROUND);
            for i in -1..=1 {
                for j in -1..=1 {
                    let c = [i as f64 * 13.0 + rng.random_range(-1.5..1.5), j as f64 * 13.0 + rng.random_range(-1.5..1.5)];
                    let size = [rng.random_range(4.0..7.0), rng.random_range(4.0..7.0)];
                    let h = rng.random_range(5.0..10.0);
                    let r = roof(&mut rng);
                    scene.add_box(c, size, h, r, WALLS);
                }
            }
            let focal = 770.0;
            let mut cams = vec![look([0.0, 0.0, 60.0], [0.0, 0.0, 0.0], focal, 512)];
            for k in 0..7 {
                let a = k as f64 * std::f64::consts::TAU / 7.0;
                cams.push(look([12.0 * a.cos(), 12.0 * a.sin(), 60.0], [3.0 * a.cos(), 3.0 * a.sin(), 0.0], focal, 512));
            }
            (cams, 512, BOX_TOWN_SUN_RADIUS_DEG)
        }
        SuiteScene::Ring => {
            scene.add_ground(120.0, GROUND);
            scene.add_box([-5.0, -3.0], [6.0, 5.0], 7.0, roof(&mut rng), WALLS);
            scene.add_box([6.0, 2.0], [5.0, 7.0], 9.0, roof(&mut rng), WALLS);
            scene.add_box([-2.0, 9.0], [5.0, 4.0], 5.0, roof(&mut rng), WALLS);
            let cams = (0..8)
                .map(|k| {
                    let a = k as f64 * std::f64::consts::TAU / 8.0;
                    look([40.0 * a.cos(), 40.0 * a.sin(), 40.0], [0.0, 0.0, 0.0], 480.0, 256)
                })
                .collect();
            (cams, 256, 0.0)
        }
    };
    render_synthetic_project(dir, &scene, &meta(), &cams, &illumination(radius), size, size, seed)?;
    Ok(())
}

/// Writes every canonical scene under `out/<name>`.
pub fn generate_test_suite(seed: u64, out: &Path) -> Result<Vec<(SuiteScene, PathBuf)>, GeometryError> {
    SuiteScene::ALL
        .iter()
        .map(|&k| {
            let dir = out.join(k.name());
            generate_scene(k, seed, &dir)?;
            Ok((k, dir))
        })
        .collect()
}
