use criterion::{criterion_group, criterion_main, Criterion};
use delight::crf::{refine_visibility, CrfParams, VisibilityMask};
use delight::pipeline::stages;
use delight::pipeline::synth::{generate_scene, SuiteScene};
use delight::scene::load_project;
use delight::{soften_view, LightParams, PenumbraParams};

fn ring(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    generate_scene(SuiteScene::Ring, 1, dir.path()).unwrap();
    let project = load_project(dir.path()).unwrap();
    let sun = stages::compute_sun(&project).unwrap();
    let mut g = c.benchmark_group("ring 8x256");
    g.sample_size(10);
    g.bench_function("gbuffer", |b| b.iter(|| stages::compute_gbuffers(&project, &sun).unwrap()));
    let gbufs = stages::compute_gbuffers(&project, &sun).unwrap();

    let crf = CrfParams::default();
    let (im, gb) = (&project.images[0], &gbufs[0]);
    let init = VisibilityMask::from_gbuffer(gb, crf.unary_confidence as f32);
    g.bench_function("crf one view", |b| b.iter(|| refine_visibility(&init, &im.image, gb, &crf).unwrap()));

    let masks = stages::refine_masks(&project, &gbufs, &crf).unwrap();
    g.bench_function("estimate light", |b| b.iter(|| stages::estimate_light(&project, &masks, &gbufs, &LightParams::default()).unwrap()));
    let light = stages::estimate_light(&project, &masks, &gbufs, &LightParams::default()).unwrap();
    let pp = PenumbraParams::default();
    g.bench_function("soften one view", |b| b.iter(|| soften_view(&masks[0], gb, &im.image, &light, &pp).unwrap()));
    g.finish();
}

criterion_group!(benches, ring);
criterion_main!(benches);
