//! Grid-based evaluation of sigma-order nonlocal elliptic operators.
//!
//! The crate represents bounded functions on all of space as node values on
//! an extended uniform grid plus a constant exterior rule, turns the singular
//! second-difference integrals of order `sigma` in (0, 2) into finite sums
//! with precomputed cell-exact weights, and builds on that to provide:
//!
//! - the matrix-valued sigma-order Hessian, the induced linear operators
//!   `L_A`, and the extremal operators over the ellipticity class;
//! - monotone (M-matrix certified) dense solves of the exterior-data
//!   Dirichlet problem, with comparison checks and a certified compactly
//!   supported barrier;
//! - an exact dyadic stopping-time decomposition of cell sets;
//! - experiment runners that measure the maximum-principle bound, the
//!   potential lower bound, level-set tail exponents and the induced
//!   quasi-norm estimate, and the cutoff localization constants, emitting
//!   reproducible CSV reports.

pub mod analysis;
pub mod barrier;
pub mod cz;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod ops;
pub mod quad;
pub mod solver;
pub mod symmat;

pub use error::{Error, Result};

/// Pin the worker-thread count for both the node-parallel loops and the
/// dense factorizations. Call once at startup; later calls only adjust the
/// factorization backend (the global thread pool cannot shrink).
pub fn set_worker_threads(threads: usize) {
    if threads >= 1 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
        if threads == 1 {
            faer::set_global_parallelism(faer::Par::Seq);
        } else {
            faer::set_global_parallelism(faer::Par::rayon(threads));
        }
    }
}
