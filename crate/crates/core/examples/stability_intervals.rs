//! Stable intervals of the 45° orbit and the exception points inside them.
//!
//! `cargo run --example stability_intervals -- 60` picks another angle (degrees).

use billiard3d::stability::stability_intervals;

fn main() {
    let deg: f64 = std::env::args().nth(1).map(|s| s.parse().expect("angle in degrees")).unwrap_or(45.0);
    let phi = deg.to_radians();
    let l_max = 1.0 / phi.cos() + 1.5;
    let report = stability_intervals(phi, l_max).expect("interval scan");

    println!("phi = {deg}°, scanning l in [0, {l_max:.4}]");
    for iv in &report.intervals {
        let note = if iv.truncated { " (scan limit)" } else { "" };
        println!("  stable for {:.12} < l < {:.12}{note}", iv.lo, iv.hi);
    }
    for p in &report.exception_points {
        println!("  exception point l = {:.12}, trace touches {:+}", p.l, p.level);
    }
    if let Some(eps) = report.window {
        println!("  window above 1/cos(phi) = {:.12}: width {eps:.12}", 1.0 / phi.cos());
    }
}
