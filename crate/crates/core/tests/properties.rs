use chrono::{Duration, TimeZone, Utc};
use nalgebra::Point3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use delight::gbuffer::{k_sky, k_sun};
use delight::light::{estimate_ratio, LightParams, LitShadowPair};
use delight::penumbra::{profile_objective, random_profile, solve_profile, PenumbraParams};
use delight::scene::area_weighted_normals;
use delight::{sun_direction, CaptureMeta, Vec3};

fn unit(v: [f64; 3]) -> Option<Vec3> {
    let v = Vec3::from(v);
    (v.norm() > 1e-3).then(|| v.normalize())
}

fn pairs(seed: u64, n: usize) -> Vec<LitShadowPair> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let albedo: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
            let (ks, ky) = (rng.random_range(0.3..1.0), rng.random_range(0.5..1.0));
            let r = if i % 10 == 0 { rng.random_range(1.0..9.0) } else { 4.0 + rng.random_range(-0.05..0.05) };
            LitShadowPair {
                image: 0,
                lit_px: (i, 0),
                shadow_px: (i, 1),
                i_lit: albedo.map(|a| a * (r * ks + ky)),
                i_shadow: albedo.map(|a| a * ky),
                k_sun: ks,
                k_sky: ky,
                n_lit: [0.0, 0.0, 1.0],
                n_shadow: [0.0, 0.0, 1.0],
                depth_lit: 50.0,
                depth_shadow: 50.0,
            }
        })
        .collect()
}

fn scale_pairs(p: &[LitShadowPair], c: f64) -> Vec<LitShadowPair> {
    p.iter()
        .map(|q| LitShadowPair {
            i_lit: q.i_lit.map(|v| v * c),
            i_shadow: q.i_shadow.map(|v| v * c),
            ..q.clone()
        })
        .collect()
}

fn meta(lat: f64, lon: f64, secs: i64) -> CaptureMeta {
    let t = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap() + Duration::seconds(secs);
    CaptureMeta::new(lat, lon, t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shading_factors_are_bounded(n in prop::array::uniform3(-1.0f64..1.0), s in prop::array::uniform3(-1.0f64..1.0)) {
        if let (Some(n), Some(s)) = (unit(n), unit(s)) {
            let z = Vec3::z();
            prop_assert!((0.0..=1.0).contains(&k_sun(&n, &s)));
            prop_assert!((0.0..=1.0).contains(&k_sky(&n, &z)));
        }
    }

    #[test]
    fn vertex_normals_are_unit(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<Point3<f64>> = (0..30).map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect();
        let f: Vec<[u32; 3]> = (0..20).map(|_| [rng.random_range(0..30), rng.random_range(0..30), rng.random_range(0..30)]).collect();
        for n in area_weighted_normals(&v, &f) {
            prop_assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sun_moves_little_in_a_day(lat in -60.0f64..60.0, lon in -180.0f64..180.0, secs in 0i64..40 * 365 * 86_400) {
        let a = sun_direction(&meta(lat, lon, secs)).unwrap();
        let b = sun_direction(&meta(lat, lon, secs + 86_400)).unwrap();
        // Azimuth is ill-conditioned near the zenith and nadir.
        prop_assume!(a.elevation_deg.abs() < 80.0);
        let d = (a.azimuth_deg - b.azimuth_deg + 180.0).rem_euclid(360.0) - 180.0;
        prop_assert!(d.abs() < 1.5, "azimuth moved {d} deg");
        prop_assert_eq!(sun_direction(&meta(lat, lon, secs)).unwrap(), a);
    }

    #[test]
    fn sun_is_due_south_at_solar_noon(lat in 35.0f64..65.0, lon in -180.0f64..180.0, day in 0i64..14_000) {
        // Local solar noon is the elevation maximum near 12:00 local mean time.
        let guess = day * 86_400 + ((12.0 - lon / 15.0) * 3600.0) as i64;
        let el = |s: i64| sun_direction(&meta(lat, lon, s)).unwrap().elevation_deg;
        let (mut lo, mut hi) = (guess - 3600, guess + 3600);
        while hi - lo > 2 {
            let (m1, m2) = (lo + (hi - lo) / 3, hi - (hi - lo) / 3);
            if el(m1) < el(m2) { lo = m1 } else { hi = m2 }
        }
        let az = sun_direction(&meta(lat, lon, (lo + hi) / 2)).unwrap().azimuth_deg;
        prop_assert!((az - 180.0).abs() < 5.0, "azimuth {az}");
    }

    #[test]
    fn ratio_is_exposure_invariant(seed in any::<u64>(), k in -10i32..10, c in 0.01f64..100.0) {
        let p = pairs(seed, 300);
        let params = LightParams::default();
        let base = estimate_ratio(&p, &params).unwrap();
        let pow2 = estimate_ratio(&scale_pairs(&p, 2f64.powi(k)), &params).unwrap();
        prop_assert_eq!(&pow2.ratio, &base.ratio);
        prop_assert_eq!(pow2.accepted, base.accepted);
        let any = estimate_ratio(&scale_pairs(&p, c), &params).unwrap();
        for ch in 0..3 {
            prop_assert!((any.ratio[ch] / base.ratio[ch] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn profile_solution_keeps_ends_and_lowers_objective(seed in any::<u64>(), lambda in 0.01f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PenumbraParams::default();
        let p = random_profile(&mut rng, params.half_length);
        let w = p.prior_weights(&params);
        let a = solve_profile(&p, &w, lambda).unwrap();
        let n = p.len();
        prop_assert!((a[0] - p.alpha0[0]).abs() <= 1e-6);
        prop_assert!((a[n - 1] - p.alpha0[n - 1]).abs() <= 1e-6);
        prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(profile_objective(&p, &w, lambda, &a) <= profile_objective(&p, &w, lambda, &p.alpha0) + 1e-12);
    }
}
