//! Path-based Isomap.
//!
//! Nonlinear dimensionality reduction that covers a k-nearest-neighbour graph
//! with geodesic shortest paths, maps every path to a straight line in the
//! target space with a closed-form eigen-solve, and averages the per-line
//! estimates into a low-dimensional embedding. Only `P` lines are optimized
//! instead of `N` points, and `P` grows sub-linearly in `N`.
//!
//! The pipeline is
//!
//! 1. [`graph::build_knn_graph`]: symmetric kNN graph with Euclidean weights.
//! 2. [`cover::sspc`]: stochastic shortest path covering.
//! 3. [`rigidity::ensure_rigidity`]: check that the line network pins down a
//!    unique shape, adding compensation paths when it does not.
//! 4. [`mapper::assemble_matrices`] and [`mapper::solve_lines`]: the quadratic
//!    program over line starts and directions, started from an eigenproblem
//!    and refined under the unit-direction constraints.
//! 5. [`mapper::reconstruct_embedding`]: average the estimates of every sample.
//!
//! [`mapper::embed`] runs all of it. [`baseline`] has classical Isomap for
//! comparison and [`eval`] has the quality metrics and runtime benchmarks.
//!
//! ```
//! use plisomap::{dataset, mapper};
//!
//! let cloud = dataset::generate_swiss_roll(800, 0.0, 3).unwrap();
//! let (embedding, report) = mapper::embed(&cloud, &mapper::EmbedOptions::new(8, 2, 3)).unwrap();
//! assert_eq!(embedding.coords.ncols(), 2);
//! assert!(report.paths < 400);
//! ```

pub mod baseline;
pub mod cover;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub(crate) mod linalg;
pub mod mapper;
pub mod rigidity;
pub mod rng;

pub use error::{Error, Result};

/// Version tag written into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/geodesics.md")]
    mod geodesics {}
    #[doc = include_str!("../../../book/src/covering.md")]
    mod covering {}
    #[doc = include_str!("../../../book/src/rigidity.md")]
    mod rigidity {}
    #[doc = include_str!("../../../book/src/mapping.md")]
    mod mapping {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
