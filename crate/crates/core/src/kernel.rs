//! Kernel Gram matrices normalized to unit trace.
//!
//! The central object is [`GramMatrix`]: the N x N matrix
//! `A_ij = K_ij / (N * sqrt(K_ii * K_jj))` built from a positive definite
//! kernel evaluated on all sample pairs. `A` is symmetric, PSD, has unit
//! trace, and (for the kernels here, which satisfy `K_ii = 1`) constant
//! diagonal `1/N`. Entropy functionals over its eigenspectrum live in
//! [`crate::entropy`].
//!
//! Two kernels are supported:
//! - Gaussian RBF `k(a,b) = exp(-||a-b||^2 / (2 sigma^2))`, infinitely
//!   divisible, the default for continuous data;
//! - the delta kernel `k(a,b) = [a == b]` (exact equality, no tolerance) for
//!   genuinely discrete data.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    GaussianRbf,
    Delta,
}

/// How the RBF bandwidth is chosen. Ignored by the delta kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// Median of the nonzero pairwise Euclidean distances.
    MedianHeuristic,
    /// `1.06 * s * N^(-1/(4+d))` with `s` the mean per-dimension std dev.
    Silverman,
    /// A caller-supplied positive bandwidth.
    Fixed(f64),
}

/// Kernel family plus bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: BandwidthRule,
}

impl KernelSpec {
    /// Gaussian RBF with the median heuristic (the default spec).
    pub fn rbf_median() -> Self {
        KernelSpec { kind: KernelKind::GaussianRbf, bandwidth: BandwidthRule::MedianHeuristic }
    }

    /// Gaussian RBF with Silverman's rule.
    pub fn rbf_silverman() -> Self {
        KernelSpec { kind: KernelKind::GaussianRbf, bandwidth: BandwidthRule::Silverman }
    }

    /// Gaussian RBF with a fixed bandwidth.
    pub fn rbf_fixed(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Argument(format!("fixed bandwidth must be positive, got {sigma}")));
        }
        Ok(KernelSpec { kind: KernelKind::GaussianRbf, bandwidth: BandwidthRule::Fixed(sigma) })
    }

    /// Delta kernel (exact equality) for discrete data.
    pub fn delta() -> Self {
        KernelSpec { kind: KernelKind::Delta, bandwidth: BandwidthRule::Fixed(1.0) }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::rbf_median()
    }
}

/// N x N symmetric PSD matrix with unit trace.
///
/// Kernel-built Grams additionally have every diagonal entry equal to `1/N`;
/// [`GramMatrix::from_entries`] only enforces the shape, symmetry and trace
/// invariants so that arbitrary unit-trace PSD matrices (test fixtures,
/// renormalized Hadamard products) are representable. PSD violations surface
/// in [`crate::entropy::spectrum`].
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    n: usize,
}

impl GramMatrix {
    /// Validate symmetry (1e-12 relative) and unit trace (1e-12), then wrap.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "gram matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let a = entries[(i, j)];
                let b = entries[(j, i)];
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Argument(format!(
                        "gram matrix not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        let trace = entries.trace();
        if (trace - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!("gram matrix trace is {trace}, expected 1")));
        }
        Ok(GramMatrix { entries, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Apply one permutation to rows and columns simultaneously:
    /// `B[i,j] = A[perm[i], perm[j]]`.
    ///
    /// For any kernel Gram this equals the Gram of the permuted sample, so
    /// permutation tests can reuse a single kernelization.
    pub fn permuted(&self, perm: &[usize]) -> GramMatrix {
        debug_assert_eq!(perm.len(), self.n);
        let n = self.n;
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let src = self.entries.column(perm[j]);
            let mut dst = out.column_mut(j);
            for i in 0..n {
                dst[i] = src[perm[i]];
            }
        }
        GramMatrix { entries: out, n }
    }
}

/// Bandwidth for `samples` (rows = samples) under `rule`.
pub fn select_bandwidth(samples: &DMatrix<f64>, rule: BandwidthRule) -> Result<f64> {
    match rule {
        BandwidthRule::Fixed(sigma) => {
            if !(sigma > 0.0) {
                return Err(Error::Argument(format!("fixed bandwidth must be positive, got {sigma}")));
            }
            Ok(sigma)
        }
        BandwidthRule::MedianHeuristic => {
            let n = samples.nrows();
            let mut dists = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    let d2 = row_dist2(samples, i, j);
                    if d2 > 0.0 {
                        dists.push(d2.sqrt());
                    }
                }
            }
            if dists.is_empty() {
                return Err(Error::DegenerateBandwidth);
            }
            dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            let m = dists.len();
            Ok(if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) })
        }
        BandwidthRule::Silverman => {
            let n = samples.nrows();
            let d = samples.ncols();
            let mut s_sum = 0.0;
            for c in 0..d {
                let col = samples.column(c);
                let mean = col.mean();
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                s_sum += var.sqrt();
            }
            let s = s_sum / d as f64;
            let sigma = 1.06 * s * (n as f64).powf(-1.0 / (4.0 + d as f64));
            if !(sigma > 0.0) {
                return Err(Error::DegenerateBandwidth);
            }
            Ok(sigma)
        }
    }
}

#[inline]
fn row_dist2(samples: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..samples.ncols() {
        let d = samples[(i, c)] - samples[(j, c)];
        acc += d * d;
    }
    acc
}

#[inline]
fn rows_equal(samples: &DMatrix<f64>, i: usize, j: usize) -> bool {
    (0..samples.ncols()).all(|c| samples[(i, c)] == samples[(j, c)])
}

/// Un-normalized kernel matrix `K_ij = k(y_i, y_j)` (used by the HSIC
/// baseline, which centers `K` itself instead of trace-normalizing).
pub(crate) fn raw_kernel_matrix(samples: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 samples, got {n}")));
    }
    let sigma = match spec.kind {
        KernelKind::GaussianRbf => select_bandwidth(samples, spec.bandwidth)?,
        KernelKind::Delta => 1.0,
    };
    let kind = spec.kind;
    let compute_col = |j: usize| -> Vec<f64> {
        (0..n)
            .map(|i| match kind {
                KernelKind::GaussianRbf => (-row_dist2(samples, i, j) / (2.0 * sigma * sigma)).exp(),
                KernelKind::Delta => {
                    if rows_equal(samples, i, j) {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    };
    let data: Vec<f64> = if n >= 256 {
        (0..n).into_par_iter().map(compute_col).flatten_iter().collect()
    } else {
        (0..n).flat_map(compute_col).collect()
    };
    Ok(DMatrix::from_vec(n, n, data))
}

/// Normalized Gram matrix `A_ij = K_ij / (N * sqrt(K_ii * K_jj))` of one
/// variable group (rows of `samples` are the N realizations).
pub fn gram(samples: &DMatrix<f64>, spec: &KernelSpec) -> Result<GramMatrix> {
    let mut k = raw_kernel_matrix(samples, spec)?;
    let n = k.nrows();
    let inv_sqrt_diag: Vec<f64> = (0..n).map(|i| 1.0 / k[(i, i)].sqrt()).collect();
    let nf = n as f64;
    for j in 0..n {
        for i in 0..n {
            k[(i, j)] *= inv_sqrt_diag[i] * inv_sqrt_diag[j] / nf;
        }
    }
    Ok(GramMatrix { entries: k, n })
}

/// Hadamard product of the parts, renormalized to unit trace (the joint Gram
/// of the grouped variables).
pub fn joint_gram(parts: &[GramMatrix]) -> Result<GramMatrix> {
    let refs: Vec<&GramMatrix> = parts.iter().collect();
    joint_gram_refs(&refs)
}

pub(crate) fn joint_gram_refs(parts: &[&GramMatrix]) -> Result<GramMatrix> {
    let first = parts.first().ok_or_else(|| Error::Argument("joint_gram needs at least one part".into()))?;
    let n = first.n;
    for p in parts.iter().skip(1) {
        if p.n != n {
            return Err(Error::DimensionMismatch(format!(
                "joint_gram parts disagree on sample count: {} vs {}",
                n, p.n
            )));
        }
    }
    let mut prod = first.entries.clone();
    for p in parts.iter().skip(1) {
        prod.component_mul_assign(&p.entries);
    }
    let trace = prod.trace();
    if !(trace > 0.0) {
        return Err(Error::Argument(format!("joint gram has non-positive trace {trace}")));
    }
    prod /= trace;
    Ok(GramMatrix { entries: prod, n })
}
