//! Ray-traced return map versus the matrix model.

use billiard3d::geometry::{build_section3, build_section4, numerical_monodromy, BilliardTable};
use billiard3d::jacobi::full_monodromy;

fn compare(label: &str, table: &BilliardTable) {
    let (l, phi) = (table.params.l, table.params.phi);
    let est = numerical_monodromy(table, 1e-6).expect("finite differences");
    let cmp = est.compare(&full_monodromy(l, phi, 1.0).expect("valid parameters"));
    let [p, t] = est.block_traces();
    println!(
        "{label:<22} numeric traces ({p:+.9}, {t:+.9}) signs ({:+}, {:+}) errors ({:.1e}, {:.1e}) det-1 {:.1e} leakage {:.1e}",
        cmp.block_signs[0],
        cmp.block_signs[1],
        cmp.block_trace_errors[0],
        cmp.block_trace_errors[1],
        cmp.det_error,
        cmp.off_block_leakage
    );
}

fn main() {
    for l in [0.5, 1.0, 1.5, 2.0] {
        compare(&format!("45°, l = {l}"), &build_section3(l).expect("table"));
    }
    let phi = 62f64.to_radians();
    for l in [1.0 / phi.cos() + 0.05, 2.5] {
        compare(&format!("62°, l = {l:.4}"), &build_section4(l, phi).expect("table"));
    }
}
