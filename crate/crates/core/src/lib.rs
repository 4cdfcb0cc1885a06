//! # gramdep
//!
//! Multivariate statistical dependence estimated directly from samples via
//! eigenspectra of normalized kernel Gram matrices.
//!
//! Given N joint samples of L variable groups (each group of any dimension),
//! the crate builds one unit-trace Gram matrix per group, composes a joint
//! Gram by Hadamard product, and measures dependence as gaps between Renyi
//! entropies of the spectra:
//!
//! | Measure | Definition | Zero iff |
//! |---------|-----------|----------|
//! | total correlation (TC) | sum of marginal entropies minus joint entropy | groups mutually independent |
//! | dual total correlation (DTC) | sum of leave-one-out joint entropies minus (L-1) x joint | groups mutually independent |
//! | mutual information (MI) | the L = 2 case of either | the two groups independent |
//!
//! Normalized variants (NTC, NDTC, NMI) divide by the appropriate entropy so
//! the value lands in `[0, 1]` at any finite sample size. No density is ever
//! estimated, the estimates are differentiable in the Gram entries, and the
//! `alpha = 2` order runs in O(N^2) per entropy through a Frobenius-norm
//! fast path.
//!
//! ## Module map
//!
//! - [`kernel`]: Gram construction (RBF / delta), bandwidth rules, Hadamard
//!   joints.
//! - [`entropy`]: spectra, Renyi/von Neumann entropy, the Shearer gap family.
//! - [`measures`]: TC / DTC / MI (raw and normalized), the HSIC baseline,
//!   subsampled estimation.
//! - [`gradients`]: analytic gradients of the entropy functionals w.r.t.
//!   Gram entries, eigenvalue gradients, the chain rule back to samples, and
//!   a finite-difference verification harness.
//! - [`inference`]: permutation independence tests, power experiments, AUC.
//! - [`dataset`]: sample tables, column grouping, CSV I/O, synthetic
//!   generators.
//! - [`outliers`]: dependence-guided subspace search plus LOF scoring.
//! - [`grn`]: pairwise dependence networks and AUC evaluation against a
//!   reference edge set.
//! - [`learning`]: small regressors trained with MSE / MAE / residual-entropy
//!   / input-residual-dependence losses.
//!
//! ## Quick start
//!
//! ```rust
//! use gramdep::dataset::generators;
//! use gramdep::entropy::Alpha;
//! use gramdep::kernel::KernelSpec;
//! use gramdep::measures::{measure_from_table, MeasureKind};
//!
//! // three binary columns with y = x1 XOR x2: pairwise independent,
//! // jointly fully dependent
//! let table = generators::gen_xor(500, 7).unwrap();
//! let ntc = measure_from_table(
//!     &table,
//!     MeasureKind::NormalizedTotalCorrelation,
//!     Alpha::TWO,
//!     &KernelSpec::delta(),
//! )
//! .unwrap();
//! assert!(ntc.value > 0.3);
//! ```
//!
//! ## What can go wrong
//!
//! 1. **All samples identical**: the median heuristic has no scale and
//!    reports a degenerate-bandwidth error; pass a fixed bandwidth.
//! 2. **Constant groups**: carry no dependence signal. Normalized measures
//!    return a flagged zero (`degenerate = true`) instead of dividing by
//!    zero.
//! 3. **Bandwidth regime**: very small bandwidths drive every Gram toward
//!    the identity and every normalized measure toward 1; very large ones
//!    wash structure out. The estimate is only meaningful relative to a
//!    stated kernel configuration.
//! 4. **alpha != 2 costs O(N^3)** per entropy (eigendecomposition); prefer
//!    the default `alpha = 2` for large N.

pub mod dataset;
pub mod entropy;
pub mod error;
pub mod gradients;
pub mod grn;
pub mod inference;
pub mod kernel;
pub mod learning;
pub mod measures;
pub mod outliers;

pub use error::{Error, Result};
