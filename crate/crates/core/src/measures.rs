//! The dependence measures: total correlation, dual total correlation,
//! mutual information (raw and normalized), the HSIC baseline, and the
//! subsampled estimator.
//!
//! All Gram-level measures are permutation invariant in the ordering of the
//! variable groups and invariant under a common row permutation of the
//! samples. Normalized values are guaranteed in `[0, 1]` at any finite
//! sample size; tiny floating-point leaks are clamped (a clamp beyond 1e-6
//! is logged as a warning, since it would indicate a real defect).
//!
//! Degenerate denominators (a constant variable carries no dependence
//! signal) yield a flagged zero report instead of an error so that ranking
//! pipelines can score many candidates without aborting.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{seeded_rng, SampleTable};
use crate::entropy::{joint_entropy_refs, renyi_entropy, Alpha};
use crate::error::{Error, Result};
use crate::kernel::{gram, raw_kernel_matrix, GramMatrix, KernelSpec};

/// Threshold below which a normalization denominator counts as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Which measure a report carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureKind {
    #[serde(rename = "TC")]
    TotalCorrelation,
    #[serde(rename = "NTC")]
    NormalizedTotalCorrelation,
    #[serde(rename = "DTC")]
    DualTotalCorrelation,
    #[serde(rename = "NDTC")]
    NormalizedDualTotalCorrelation,
    #[serde(rename = "MI")]
    MutualInformation,
    #[serde(rename = "NMI-max")]
    NormalizedMiMax,
    #[serde(rename = "NMI-min")]
    NormalizedMiMin,
    #[serde(rename = "HSIC")]
    Hsic,
}

impl MeasureKind {
    pub fn is_normalized(self) -> bool {
        matches!(
            self,
            MeasureKind::NormalizedTotalCorrelation
                | MeasureKind::NormalizedDualTotalCorrelation
                | MeasureKind::NormalizedMiMax
                | MeasureKind::NormalizedMiMin
        )
    }
}

/// Result of one dependence measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub kind: MeasureKind,
    /// Entropy order; absent for HSIC.
    pub alpha: Option<f64>,
    pub value: f64,
    /// True when the normalization denominator vanished (value forced to 0).
    pub degenerate: bool,
    pub n: usize,
    pub group_dims: Vec<usize>,
}

impl MeasureReport {
    fn new(kind: MeasureKind, alpha: Option<f64>, value: f64, n: usize) -> Self {
        MeasureReport { kind, alpha, value, degenerate: false, n, group_dims: Vec::new() }
    }

    fn degenerate(kind: MeasureKind, alpha: Option<f64>, n: usize) -> Self {
        MeasureReport { kind, alpha, value: 0.0, degenerate: true, n, group_dims: Vec::new() }
    }

    fn with_group_dims(mut self, dims: Vec<usize>) -> Self {
        self.group_dims = dims;
        self
    }
}

fn clamp_unit(value: f64, what: &str) -> f64 {
    let clamped = value.clamp(0.0, 1.0);
    if (value - clamped).abs() > 1e-6 {
        log::warn!("{what} = {value} clamped to [0,1]; leak exceeds 1e-6");
    }
    clamped
}

fn check_shared_n(parts: &[&GramMatrix]) -> Result<usize> {
    let n = parts[0].n();
    for p in parts {
        if p.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "gram matrices disagree on sample count: {} vs {}",
                n,
                p.n()
            )));
        }
    }
    Ok(n)
}

/// Total correlation of the groups: sum of marginal entropies minus joint
/// entropy. Normalized, divides by `sum - max` of the marginal entropies.
pub fn total_correlation(parts: &[GramMatrix], alpha: Alpha, normalized: bool) -> Result<MeasureReport> {
    let refs: Vec<&GramMatrix> = parts.iter().collect();
    total_correlation_refs(&refs, alpha, normalized)
}

pub(crate) fn total_correlation_refs(
    refs: &[&GramMatrix],
    alpha: Alpha,
    normalized: bool,
) -> Result<MeasureReport> {
    if refs.len() < 2 {
        return Err(Error::Argument(format!("total correlation needs L >= 2 groups, got {}", refs.len())));
    }
    let n = check_shared_n(refs)?;
    let kind = if normalized { MeasureKind::NormalizedTotalCorrelation } else { MeasureKind::TotalCorrelation };
    let marginals: Vec<f64> = refs.iter().map(|p| renyi_entropy(p, alpha)).collect::<Result<_>>()?;
    let joint = joint_entropy_refs(refs, alpha)?;
    let sum: f64 = marginals.iter().sum();
    let numerator = sum - joint;
    if !normalized {
        return Ok(MeasureReport::new(kind, Some(alpha.value()), numerator, n));
    }
    let max = marginals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denominator = sum - max;
    if denominator < DEGENERACY_EPS {
        return Ok(MeasureReport::degenerate(kind, Some(alpha.value()), n));
    }
    let value = clamp_unit(numerator / denominator, "NTC");
    Ok(MeasureReport::new(kind, Some(alpha.value()), value, n))
}

/// Dual total correlation: sum of leave-one-out joint entropies minus
/// `(L-1)` times the full joint entropy. Normalized, divides by the full
/// joint entropy.
pub fn dual_total_correlation(parts: &[GramMatrix], alpha: Alpha, normalized: bool) -> Result<MeasureReport> {
    let refs: Vec<&GramMatrix> = parts.iter().collect();
    dual_total_correlation_refs(&refs, alpha, normalized)
}

pub(crate) fn dual_total_correlation_refs(
    refs: &[&GramMatrix],
    alpha: Alpha,
    normalized: bool,
) -> Result<MeasureReport> {
    if refs.len() < 2 {
        return Err(Error::Argument(format!("dual total correlation needs L >= 2 groups, got {}", refs.len())));
    }
    let n = check_shared_n(refs)?;
    let l = refs.len();
    let kind = if normalized {
        MeasureKind::NormalizedDualTotalCorrelation
    } else {
        MeasureKind::DualTotalCorrelation
    };
    let full = joint_entropy_refs(refs, alpha)?;
    let mut loo_sum = 0.0;
    for i in 0..l {
        let loo: Vec<&GramMatrix> = refs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| *p).collect();
        loo_sum += joint_entropy_refs(&loo, alpha)?;
    }
    let numerator = loo_sum - (l as f64 - 1.0) * full;
    if !normalized {
        return Ok(MeasureReport::new(kind, Some(alpha.value()), numerator, n));
    }
    if full < DEGENERACY_EPS {
        return Ok(MeasureReport::degenerate(kind, Some(alpha.value()), n));
    }
    let value = clamp_unit(numerator / full, "NDTC");
    Ok(MeasureReport::new(kind, Some(alpha.value()), value, n))
}

/// How to normalize mutual information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiNormalization {
    None,
    /// Divide by the larger marginal entropy (the better-behaved choice).
    Max,
    /// Divide by the smaller marginal entropy.
    Min,
}

/// Mutual information between two groups, optionally normalized by the max
/// or min marginal entropy.
pub fn mutual_information(
    a: &GramMatrix,
    b: &GramMatrix,
    alpha: Alpha,
    normalization: MiNormalization,
) -> Result<MeasureReport> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", a.n(), b.n())));
    }
    let n = a.n();
    let sa = renyi_entropy(a, alpha)?;
    let sb = renyi_entropy(b, alpha)?;
    let joint = joint_entropy_refs(&[a, b], alpha)?;
    let mi = sa + sb - joint;
    let (kind, denominator) = match normalization {
        MiNormalization::None => {
            return Ok(MeasureReport::new(MeasureKind::MutualInformation, Some(alpha.value()), mi, n))
        }
        MiNormalization::Max => (MeasureKind::NormalizedMiMax, sa.max(sb)),
        MiNormalization::Min => (MeasureKind::NormalizedMiMin, sa.min(sb)),
    };
    if denominator < DEGENERACY_EPS {
        return Ok(MeasureReport::degenerate(kind, Some(alpha.value()), n));
    }
    let value = clamp_unit(mi / denominator, "NMI");
    Ok(MeasureReport::new(kind, Some(alpha.value()), value, n))
}

/// Biased HSIC estimator `tr(K_x H K_y H) / (N-1)^2` on the un-normalized
/// kernel matrices, with `H` the centering matrix.
pub fn hsic(x: &DMatrix<f64>, y: &DMatrix<f64>, spec: &KernelSpec) -> Result<MeasureReport> {
    let n = x.nrows();
    if n < 4 {
        return Err(Error::Argument(format!("HSIC needs N >= 4, got {n}")));
    }
    if y.nrows() != n {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", n, y.nrows())));
    }
    let kx = raw_kernel_matrix(x, spec)?;
    let ky = raw_kernel_matrix(y, spec)?;
    let value = hsic_from_kernels(&kx, &ky);
    Ok(MeasureReport::new(MeasureKind::Hsic, None, value, n)
        .with_group_dims(vec![x.ncols(), y.ncols()]))
}

/// HSIC statistic from precomputed kernel matrices (`K_x` gets centered).
pub(crate) fn hsic_from_kernels(kx: &DMatrix<f64>, ky: &DMatrix<f64>) -> f64 {
    let centered = center_kernel(kx);
    let n = kx.nrows() as f64;
    let mut acc = 0.0;
    for (m, k) in centered.as_slice().iter().zip(ky.as_slice()) {
        acc += m * k;
    }
    acc / ((n - 1.0) * (n - 1.0))
}

/// Double centering `H K H` without materializing `H`.
pub(crate) fn center_kernel(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let nf = n as f64;
    let mut row_means = vec![0.0; n];
    for i in 0..n {
        row_means[i] = k.row(i).sum() / nf;
    }
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - row_means[j] + grand)
}

/// One Gram per variable group of the table.
pub fn group_grams(table: &SampleTable, spec: &KernelSpec) -> Result<Vec<GramMatrix>> {
    (0..table.num_groups()).map(|m| gram(&table.group_matrix(m), spec)).collect()
}

/// Build the per-group Grams and dispatch to the selected measure.
pub fn measure_from_table(
    table: &SampleTable,
    kind: MeasureKind,
    alpha: Alpha,
    spec: &KernelSpec,
) -> Result<MeasureReport> {
    let dims = table.group_dims();
    let report = match kind {
        MeasureKind::TotalCorrelation | MeasureKind::NormalizedTotalCorrelation => {
            let parts = group_grams(table, spec)?;
            total_correlation(&parts, alpha, kind.is_normalized())?
        }
        MeasureKind::DualTotalCorrelation | MeasureKind::NormalizedDualTotalCorrelation => {
            let parts = group_grams(table, spec)?;
            dual_total_correlation(&parts, alpha, kind.is_normalized())?
        }
        MeasureKind::MutualInformation | MeasureKind::NormalizedMiMax | MeasureKind::NormalizedMiMin => {
            if table.num_groups() != 2 {
                return Err(Error::Argument(format!(
                    "mutual information needs exactly 2 groups, got {}",
                    table.num_groups()
                )));
            }
            let parts = group_grams(table, spec)?;
            let norm = match kind {
                MeasureKind::MutualInformation => MiNormalization::None,
                MeasureKind::NormalizedMiMax => MiNormalization::Max,
                _ => MiNormalization::Min,
            };
            mutual_information(&parts[0], &parts[1], alpha, norm)?
        }
        MeasureKind::Hsic => {
            if table.num_groups() != 2 {
                return Err(Error::Argument(format!(
                    "HSIC needs exactly 2 groups, got {}",
                    table.num_groups()
                )));
            }
            hsic(&table.group_matrix(0), &table.group_matrix(1), spec)?
        }
    };
    Ok(report.with_group_dims(dims))
}

/// Average the measure over `num_subsamples` row subsets of size
/// `subsample_size` drawn without replacement (the same row subset is used
/// for every group within a replica; bandwidths are re-selected per
/// replica). The replica mean is taken in replica-index order.
pub fn subsampled_measure(
    table: &SampleTable,
    kind: MeasureKind,
    alpha: Alpha,
    spec: &KernelSpec,
    subsample_size: usize,
    num_subsamples: usize,
    seed: u64,
) -> Result<MeasureReport> {
    let n = table.n();
    if subsample_size < 4 || subsample_size > n {
        return Err(Error::Argument(format!(
            "subsample size {subsample_size} outside 4..={n}"
        )));
    }
    if num_subsamples == 0 {
        return Err(Error::Argument("need at least one subsample".into()));
    }
    let replicas: Vec<Result<MeasureReport>> = (0..num_subsamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeded_rng(seed, r as u64 + 1);
            let mut idx = rand::seq::index::sample(&mut rng, n, subsample_size).into_vec();
            idx.sort_unstable();
            let sub = table.subset_rows(&idx)?;
            measure_from_table(&sub, kind, alpha, spec)
        })
        .collect();
    let mut sum = 0.0;
    let mut all_degenerate = true;
    for r in replicas {
        let rep = r?;
        sum += rep.value;
        all_degenerate &= rep.degenerate;
    }
    let mut report = MeasureReport::new(kind, Some(alpha.value()), sum / num_subsamples as f64, n)
        .with_group_dims(table.group_dims());
    if all_degenerate {
        report.value = 0.0;
        report.degenerate = true;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generators;
    use crate::kernel::KernelSpec;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn column(vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(vals.len(), 1, vals)
    }

    fn ones_gram(n: usize) -> GramMatrix {
        GramMatrix::from_entries(DMatrix::from_element(n, n, 1.0 / n as f64)).unwrap()
    }

    #[test]
    fn identical_delta_variables_have_unit_ntc_and_nmi() {
        let a = gram(&column(&[0.0, 1.0, 2.0, 3.0]), &KernelSpec::delta()).unwrap();
        let tc = total_correlation(&[a.clone(), a.clone()], Alpha::TWO, true).unwrap();
        assert_relative_eq!(tc.value, 1.0, epsilon = 1e-12);
        let mi = mutual_information(&a, &a, Alpha::TWO, MiNormalization::Max).unwrap();
        assert_relative_eq!(mi.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_group_degenerates_ntc() {
        let ones = ones_gram(4);
        let rep = total_correlation(&[ones.clone(), ones], Alpha::TWO, true).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.value, 0.0);
    }

    #[test]
    fn all_constant_degenerates_ndtc() {
        let ones = ones_gram(4);
        let rep = dual_total_correlation(&[ones.clone(), ones], Alpha::TWO, true).unwrap();
        assert!(rep.degenerate);
    }

    #[test]
    fn constant_partner_gives_zero_mi() {
        let spec = KernelSpec::rbf_fixed(0.9).unwrap();
        let a = gram(&column(&[0.0, 0.5, 1.7, -0.3]), &spec).unwrap();
        let rep = mutual_information(&a, &ones_gram(4), Alpha::TWO, MiNormalization::None).unwrap();
        assert!(rep.value.abs() < 1e-12, "{}", rep.value);
    }

    #[test]
    fn l2_tc_equals_dtc_equals_mi() {
        let spec = KernelSpec::rbf_fixed(0.9).unwrap();
        let a = gram(&column(&[0.0, 0.5, 1.7, -0.3, 0.9]), &spec).unwrap();
        let b = gram(&column(&[1.0, -0.2, 0.4, 0.8, -1.1]), &spec).unwrap();
        let tc = total_correlation(&[a.clone(), b.clone()], Alpha::TWO, false).unwrap().value;
        let dtc = dual_total_correlation(&[a.clone(), b.clone()], Alpha::TWO, false).unwrap().value;
        let mi = mutual_information(&a, &b, Alpha::TWO, MiNormalization::None).unwrap().value;
        assert_relative_eq!(tc, mi, epsilon = 1e-12);
        assert_relative_eq!(dtc, mi, epsilon = 1e-12);
    }

    #[test]
    fn group_reordering_is_invariant() {
        let spec = KernelSpec::rbf_fixed(0.7).unwrap();
        let parts: Vec<GramMatrix> = [
            &[0.0, 0.5, 1.7, -0.3, 0.9][..],
            &[1.0, -0.2, 0.4, 0.8, -1.1][..],
            &[0.3, 0.3, -0.6, 1.2, 0.1][..],
        ]
        .iter()
        .map(|v| gram(&column(v), &spec).unwrap())
        .collect();
        let fwd = total_correlation(&parts, Alpha::TWO, true).unwrap().value;
        let rev: Vec<GramMatrix> = parts.iter().rev().cloned().collect();
        let bwd = total_correlation(&rev, Alpha::TWO, true).unwrap().value;
        assert!((fwd - bwd).abs() < 1e-10);
        let fwd = dual_total_correlation(&parts, Alpha::TWO, true).unwrap().value;
        let bwd = dual_total_correlation(&rev, Alpha::TWO, true).unwrap().value;
        assert!((fwd - bwd).abs() < 1e-10);
    }

    #[test]
    fn hsic_of_constant_column_is_zero() {
        let x = column(&[0.1, 0.9, -0.4, 1.2]);
        let y = column(&[3.0, 3.0, 3.0, 3.0]);
        let rep = hsic(&x, &y, &KernelSpec::rbf_fixed(1.0).unwrap()).unwrap();
        assert!(rep.value.abs() < 1e-12);
    }

    #[test]
    fn hsic_self_dependence_positive() {
        let x = column(&[0.1, 0.9, -0.4, 1.2, 2.0]);
        let rep = hsic(&x, &x, &KernelSpec::rbf_median()).unwrap();
        assert!(rep.value > 0.0);
    }

    #[test]
    fn mi_needs_two_groups_from_table() {
        let t = generators::gen_data_a(32, 3, 1).unwrap();
        let err = measure_from_table(&t, MeasureKind::NormalizedMiMax, Alpha::TWO, &KernelSpec::rbf_median());
        assert!(err.is_err());
        let single = t.regrouped(vec![vec![0, 1, 2]]).unwrap();
        let err = measure_from_table(&single, MeasureKind::NormalizedTotalCorrelation, Alpha::TWO, &KernelSpec::rbf_median());
        assert!(err.is_err());
    }

    #[test]
    fn xor_marginals_carry_no_information_but_triple_does() {
        let t = generators::gen_xor(2000, 5).unwrap();
        let spec = KernelSpec::delta();
        let pair = t.select_columns(&[0, 2]).unwrap();
        let mi = measure_from_table(&pair, MeasureKind::NormalizedMiMax, Alpha::TWO, &spec).unwrap();
        assert!(mi.value < 0.05, "NMI(x1;y) = {}", mi.value);
        let ntc = measure_from_table(&t, MeasureKind::NormalizedTotalCorrelation, Alpha::TWO, &spec).unwrap();
        assert!(ntc.value > 0.3, "NTC(x1,x2,y) = {}", ntc.value);
    }

    #[test]
    fn subsample_full_size_equals_full_measure() {
        let t = generators::gen_data_b(64, 3, 2).unwrap();
        let spec = KernelSpec::rbf_median();
        let full = measure_from_table(&t, MeasureKind::NormalizedTotalCorrelation, Alpha::TWO, &spec).unwrap();
        let sub = subsampled_measure(&t, MeasureKind::NormalizedTotalCorrelation, Alpha::TWO, &spec, 64, 1, 9).unwrap();
        assert_eq!(full.value, sub.value);
    }

    #[test]
    fn subsample_is_deterministic() {
        let t = generators::gen_data_b(128, 4, 2).unwrap();
        let spec = KernelSpec::rbf_median();
        let a = subsampled_measure(&t, MeasureKind::NormalizedTotalCorrelation, Alpha::TWO, &spec, 32, 5, 9).unwrap();
        let b = subsampled_measure(&t, MeasureKind::NormalizedTotalCorrelation, Alpha::TWO, &spec, 32, 5, 9).unwrap();
        assert_eq!(a.value, b.value);
        assert!(subsampled_measure(&t, MeasureKind::NormalizedTotalCorrelation, Alpha::TWO, &spec, 200, 5, 9).is_err());
    }

    #[test]
    fn common_row_permutation_leaves_measures_unchanged() {
        let t = generators::gen_data_b(48, 3, 7).unwrap();
        let spec = KernelSpec::rbf_fixed(0.5).unwrap();
        let fwd = measure_from_table(&t, MeasureKind::NormalizedTotalCorrelation, Alpha::TWO, &spec).unwrap();
        let perm: Vec<usize> = (0..48).rev().collect();
        let t2 = t.subset_rows(&perm).unwrap();
        let bwd = measure_from_table(&t2, MeasureKind::NormalizedTotalCorrelation, Alpha::TWO, &spec).unwrap();
        assert!((fwd.value - bwd.value).abs() < 1e-10);
    }
}
