//! Trace and class over an (angle, length) grid, written as CSV to stdout.
//!
//! Pipe it into any plotting tool; rows are ordered angle-major.

use billiard3d::stability::{sweep, write_sweep_csv};

fn main() -> std::io::Result<()> {
    let phis: Vec<f64> = (0..=40).map(|k| (45.0 + k as f64).to_radians()).collect();
    let ls: Vec<f64> = (0..=200).map(|k| 0.05 * k as f64).collect();
    let rows = sweep(&phis, &ls).expect("valid grid");
    write_sweep_csv(&rows, std::io::stdout().lock())
}
