//! The 45° period block and its trace, in exact arithmetic over Q(√2).

use billiard3d::exact_algebra::QuadExt;
use billiard3d::jacobi::exact::{period_block_at, period_block_poly};
use billiard3d::stability::trace_poly_exact;

fn main() {
    let a = period_block_poly();
    println!("A11(l) = {}", a.m11);
    println!("A12(l) = {}", a.m12);
    println!("A21(l) = {}", a.m21);
    println!("A22(l) = {}", a.m22);
    println!("det    = {}", a.det());

    let trace = trace_poly_exact();
    let p = trace.exact().expect("exact at 45°");
    println!("\ntrace(l) = {p}");

    // stability interval endpoints are exact roots of trace ∓ 2
    for (name, l) in [
        ("sqrt(2)/2", QuadExt::from_fracs(0, 1, 1, 2)),
        ("sqrt(2)", QuadExt::sqrt2()),
        ("3 sqrt(2)/2", QuadExt::from_fracs(0, 1, 3, 2)),
    ] {
        println!("trace({name}) = {}", p.eval_quad(&l));
    }
    let at = period_block_at(&QuadExt::sqrt2());
    println!("\nA(sqrt 2) = [[{}, {}], [{}, {}]]", at.m11, at.m12, at.m21, at.m22);
}
