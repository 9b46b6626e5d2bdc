//! Stable windows just beyond l = 1/cos(phi) as phi approaches 90°.
//!
//! The sphere separation grows without bound while a window of stable
//! lengths survives at every angle.

use billiard3d::stability::{classify, epsilon_window, trace_value};

fn main() {
    println!("{:>6} {:>14} {:>14} {:>12} {:>18}", "deg", "1/cos(phi)", "window", "trace(l0)", "class at middle");
    for deg in [46.0f64, 50.0, 60.0, 70.0, 75.0, 80.0, 85.0, 88.0, 89.0] {
        let phi = deg.to_radians();
        let l0 = 1.0 / phi.cos();
        let eps = epsilon_window(phi).expect("window");
        let mid = classify(l0 + eps / 2.0, phi).expect("classify");
        let t0 = trace_value(l0, phi).expect("trace");
        println!("{deg:>6} {l0:>14.6} {eps:>14.6} {t0:>12.3e} {:>18}", mid.class);
    }
}
