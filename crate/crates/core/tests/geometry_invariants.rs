use std::f64::consts::{FRAC_PI_4, SQRT_2};

use billiard3d::geometry::{
    build_section3, build_section4, numerical_monodromy, perturbation_growth, trace_orbit, GrowthMode, Ray, Vec3,
};
use billiard3d::jacobi::full_monodromy;
use proptest::prelude::*;

fn nudged(start: Ray, dp: [f64; 3], dd: [f64; 3]) -> Ray {
    Ray::new(start.origin + Vec3::new(dp[0], dp[1], dp[2]), start.dir + Vec3::new(dd[0], dd[1], dd[2]))
}

#[test]
fn direction_stays_unit_over_a_million_reflections() {
    let table = build_section3(1.5).unwrap();
    let mut ray = table.start_ray();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 1_000_000 {
        let out = trace_orbit(&table, &ray, 1000).unwrap();
        assert!(!out.escaped, "escaped after {done} reflections");
        for h in &out.hits {
            worst = worst.max((h.outgoing.norm() - 1.0).abs());
        }
        let last = out.hits.last().unwrap();
        ray = Ray { origin: last.point, dir: last.outgoing };
        done += out.hits.len();
    }
    assert!(worst < 1e-10, "drift {worst:e}");
}

#[test]
fn six_sphere_monodromy_examples() {
    // l = 1, h = 1e-7: both blocks near -7.89 once the per-block sign is applied
    let table = build_section3(1.0).unwrap();
    let est = numerical_monodromy(&table, 1e-7).unwrap();
    let cmp = est.compare(&full_monodromy(1.0, FRAC_PI_4, 1.0).unwrap());
    for (t, s) in est.block_traces().iter().zip(cmp.block_signs) {
        assert!((s * t + 7.8948).abs() < 1e-3, "{t} with sign {s}");
    }

    // l = 1.5: sum of both blocks is 2 * 0.0247 up to sign
    let table = build_section3(1.5).unwrap();
    let est = numerical_monodromy(&table, 1e-6).unwrap();
    let cmp = est.compare(&full_monodromy(1.5, FRAC_PI_4, 1.0).unwrap());
    let aligned: f64 = est.block_traces().iter().zip(cmp.block_signs).map(|(t, s)| s * t).sum();
    assert!((aligned - 2.0 * 0.024_683_971).abs() < 1e-3);
    assert!((est.det() - 1.0).abs() < 1e-6);
}

#[test]
fn swap_property_holds_for_both_constructions() {
    for l in [0.5, 1.0, 1.5, 2.0] {
        let est = numerical_monodromy(&build_section3(l).unwrap(), 1e-6).unwrap();
        assert!(est.off_block_leakage() < 1e-6, "l={l}");
    }
    let phi = 62f64.to_radians();
    for l in [1.0 / phi.cos() + 0.05, 2.5] {
        let table = build_section4(l, phi).unwrap();
        let est = numerical_monodromy(&table, 1e-6).unwrap();
        let cmp = est.compare(&full_monodromy(l, phi, 1.0).unwrap());
        assert!(cmp.off_block_leakage < 1e-6 * cmp.scale, "l={l}: {cmp:?}");
        assert!(cmp.block_trace_errors.iter().all(|e| *e < 1e-3), "l={l}: {cmp:?}");
    }
}

#[test]
fn sphere_flat_traces_twelve_alternating_hits() {
    let table = build_section4(2.1, 62f64.to_radians()).unwrap();
    let out = trace_orbit(&table, &table.start_ray(), 12).unwrap();
    assert!(!out.escaped);
    for (k, h) in out.hits.iter().enumerate() {
        assert_eq!(table.patches[h.patch].is_sphere(), k % 2 == 1);
    }
    assert!(out.hits[11].point.distance(table.reference_orbit[0].point) < 1e-10);
}

#[test]
fn stable_growth_stays_bounded() {
    let table = build_section3(1.5).unwrap();
    let n = 10_000;
    let g = perturbation_growth(&table, 1e-6, n, GrowthMode::Linearized, 5).unwrap();
    assert!(g.max_amplification < 1e3);
    // the final amplification of a bounded orbit stays within a fixed factor
    // of 1 either way, so the mean rate decays like 1/n toward zero
    let bound = 1e3f64.ln();
    assert!(g.mean_log_growth.abs() * n as f64 <= bound, "{}", g.mean_log_growth);
    let longer = perturbation_growth(&table, 1e-6, 10 * n, GrowthMode::Linearized, 5).unwrap();
    assert!(longer.max_amplification < 1e3);
    assert!(longer.mean_log_growth.abs() * (10 * n) as f64 <= bound, "{}", longer.mean_log_growth);

    let g = perturbation_growth(&table, 1e-8, 2000, GrowthMode::Nonlinear, 5).unwrap();
    assert_eq!(g.escaped_at, None);
    assert!(g.max_amplification < 1e3);
}

#[test]
fn unstable_growth_rate_and_escape() {
    let table = build_section3(1.0).unwrap();
    let target = 7.766_037_443_345_956f64.ln();
    let g = perturbation_growth(&table, 1e-6, 20, GrowthMode::Linearized, 1).unwrap();
    assert!((g.mean_log_growth - target).abs() / target < 0.05, "{}", g.mean_log_growth);
    let g = perturbation_growth(&table, 1e-6, 50, GrowthMode::Nonlinear, 1).unwrap();
    assert!(g.escaped_at.is_some(), "unstable orbit never left the caps");
}

#[test]
fn parabolic_growth_is_linear() {
    let table = build_section3(SQRT_2).unwrap();
    let g = perturbation_growth(&table, 1.0, 1000, GrowthMode::Linearized, 2).unwrap();
    let d = &g.deviations;
    for (a, b) in [(99, 199), (199, 399), (499, 999)] {
        let ratio = d[b] / d[a];
        let want = (b + 1) as f64 / (a + 1) as f64;
        assert!((ratio - want).abs() / want < 0.02, "{a}->{b}: {ratio}");
    }
    assert!(g.mean_log_growth < 0.01);
}

#[test]
fn seeds_are_reproducible() {
    let table = build_section3(1.5).unwrap();
    let a = perturbation_growth(&table, 1e-6, 100, GrowthMode::Nonlinear, 9).unwrap();
    let b = perturbation_growth(&table, 1e-6, 100, GrowthMode::Nonlinear, 9).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn specular_at_every_hit(
        l in 0.6f64..2.0,
        dp in proptest::array::uniform3(-1e-4f64..1e-4),
        dd in proptest::array::uniform3(-1e-4f64..1e-4),
    ) {
        let table = build_section3(l).unwrap();
        let out = trace_orbit(&table, &nudged(table.start_ray(), dp, dd), 6).unwrap();
        for h in &out.hits {
            let n = table.patches[h.patch].normal_at(h.point);
            prop_assert!((h.incoming.dot(n).abs() - h.outgoing.dot(n).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn specular_on_sphere_flat_table(
        dp in proptest::array::uniform3(-1e-4f64..1e-4),
        dd in proptest::array::uniform3(-1e-4f64..1e-4),
    ) {
        let table = build_section4(2.1, 62f64.to_radians()).unwrap();
        let out = trace_orbit(&table, &nudged(table.start_ray(), dp, dd), 12).unwrap();
        for h in &out.hits {
            let n = table.patches[h.patch].normal_at(h.point);
            prop_assert!((h.incoming.dot(n).abs() - h.outgoing.dot(n).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn reversed_trace_retraces(
        l in 0.6f64..2.0,
        dp in proptest::array::uniform3(-1e-5f64..1e-5),
        dd in proptest::array::uniform3(-1e-5f64..1e-5),
    ) {
        let table = build_section3(l).unwrap();
        let fwd = trace_orbit(&table, &nudged(table.start_ray(), dp, dd), 6).unwrap().hits;
        prop_assume!(fwd.len() == 6);
        let last = fwd[5];
        let back = trace_orbit(&table, &Ray::new(last.point, -last.incoming), 5).unwrap().hits;
        prop_assert_eq!(back.len(), 5);
        for k in 0..5 {
            prop_assert!(back[k].point.distance(fwd[4 - k].point) < 1e-9);
        }
    }
}
