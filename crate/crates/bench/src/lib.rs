//! Input generators shared by the benchmarks.

use delight::gbuffer::Ray;
use delight::{TriangleMesh, Vec3};
use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` independent triangles of edge length up to `size` scattered in a
/// 100 m cube.
pub fn triangle_soup(n: usize, size: f64, seed: u64) -> TriangleMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let c = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        for _ in 0..3 {
            let o = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            vertices.push(Point3::from(c + o * size));
        }
    }
    let faces = (0..n as u32).map(|f| [3 * f, 3 * f + 1, 3 * f + 2]).collect();
    TriangleMesh::new(vertices, faces, None).expect("valid indices")
}

/// Rays from outside the soup aimed at its interior.
pub fn rays(n: usize, seed: u64) -> Vec<Ray> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let origin = Vec3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), 90.0);
            let target = Vec3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
            Ray {
                origin,
                dir: (target - origin).normalize(),
            }
        })
        .collect()
}

/// Per-pair sun/sky ratios: a tight inlier cluster plus uniform outliers.
pub fn ratio_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| if i % 20 == 0 { rng.random_range(0.5..12.0) } else { 4.0 + rng.random_range(-0.1..0.1) })
        .collect()
}
