pub mod cli;
mod ddouble;
pub mod exact_algebra;
pub mod geometry;
pub mod jacobi;
pub mod numfmt;
pub mod stability;
