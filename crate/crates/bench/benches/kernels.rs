use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use delight::gbuffer::{brute_force_intersect, Bvh};
use delight::light::fit_gmm2;
use delight::penumbra::{random_profile, PenumbraParams};
use delight::solve_profile;
use delight_bench::{ratio_samples, rays, triangle_soup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bvh(c: &mut Criterion) {
    let mesh = triangle_soup(10_000, 2.0, 1);
    let rays = rays(1000, 2);
    c.bench_function("bvh build 10k", |b| b.iter(|| Bvh::build(black_box(&mesh)).unwrap()));
    let bvh = Bvh::build(&mesh).unwrap();
    c.bench_function("bvh 1k rays 10k tris", |b| {
        b.iter(|| rays.iter().filter(|r| bvh.intersect(r, 1e-9).is_some()).count())
    });
    let tris = bvh.triangles().to_vec();
    c.bench_function("brute force 100 rays 10k tris", |b| {
        b.iter(|| rays[..100].iter().filter(|r| brute_force_intersect(&tris, r, 1e-9).is_some()).count())
    });
}

fn profiles(c: &mut Criterion) {
    let params = PenumbraParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ps: Vec<_> = (0..1000).map(|_| random_profile(&mut rng, params.half_length)).collect();
    let ws: Vec<_> = ps.iter().map(|p| p.prior_weights(&params)).collect();
    c.bench_function("solve 1000 profiles", |b| {
        b.iter(|| {
            for (p, w) in ps.iter().zip(&ws) {
                black_box(solve_profile(p, w, params.lambda).unwrap());
            }
        })
    });
}

fn gmm(c: &mut Criterion) {
    let xs = ratio_samples(20_000, 4);
    c.bench_function("gmm2 20k samples", |b| b.iter_batched(|| xs.clone(), |v| fit_gmm2(&v).unwrap(), BatchSize::SmallInput));
}

criterion_group!(benches, bvh, profiles, gmm);
criterion_main!(benches);
