//! Build both 3D tables and save them as JSON after verifying.

use billiard3d::geometry::{build_section3, build_section4, verify_table, BilliardTable};

fn show(name: &str, table: &BilliardTable) {
    let report = verify_table(table).expect("verification runs");
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
    println!(
        "{name}: {} patches, {} hits per period, closure {:.1e}, {} checks, {} failed",
        table.patches.len(),
        table.hits_per_period(),
        table.closure_residual(),
        report.checks.len(),
        failed.len()
    );
    for c in failed {
        println!("  FAILED {}: {:e} >= {:e}", c.name, c.residual, c.tolerance);
    }
}

fn main() {
    let dir = std::env::temp_dir();
    let s3 = build_section3(1.5).expect("six-sphere table");
    show("six spheres, l = 1.5", &s3);

    let phi = 62f64.to_radians();
    let s4 = build_section4(1.0 / phi.cos() + 0.05, phi).expect("sphere and flat table");
    show("spheres and flats, 62°", &s4);

    for (file, t) in [("six_spheres.json", &s3), ("spheres_and_flats.json", &s4)] {
        let path = dir.join(file);
        std::fs::write(&path, t.to_json().expect("finite numbers")).expect("write table");
        println!("wrote {}", path.display());
    }

    match build_section4(0.3, phi) {
        Ok(_) => println!("unexpected: tiny table built"),
        Err(e) => println!("l = 0.3 is refused: {e}"),
    }
}
