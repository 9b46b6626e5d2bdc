//! Perturbation growth on stable and unstable orbits, plus the parabolic case.

use std::f64::consts::SQRT_2;

use billiard3d::geometry::{build_section3, perturbation_growth, GrowthMode};

fn main() {
    for (label, l, periods) in [("stable", 1.5, 10_000), ("unstable", 1.0, 20), ("parabolic", SQRT_2, 1000)] {
        let table = build_section3(l).expect("table");
        for mode in [GrowthMode::Linearized, GrowthMode::Nonlinear] {
            let g = perturbation_growth(&table, 1e-8, periods, mode, 7).expect("growth run");
            let escape = g.escaped_at.map(|k| format!(", left the caps in period {}", k + 1)).unwrap_or_default();
            println!(
                "{label:<9} l={l:.4} {mode:?}: {} periods, max amplification {:.4e}, mean log-growth {:+.4e}{escape}",
                g.deviations.len(),
                g.max_amplification,
                g.mean_log_growth
            );
        }
    }
}
