//! Eigenspectrum-based Renyi entropy of unit-trace Gram matrices.
//!
//! For a Gram matrix `A` with eigenvalues `lambda_i >= 0, sum = 1`,
//!
//! ```text
//! S_alpha(A) = 1/(1-alpha) * log2( sum_i lambda_i^alpha ),   alpha != 1
//! S_1(A)     = -sum_i lambda_i * log2(lambda_i)              (von Neumann limit)
//! ```
//!
//! `S_alpha` lies in `[0, log2 N]`. No density estimation is involved: the
//! spectrum of the normalized Gram plays the role of a probability vector.
//!
//! `alpha = 2` admits a fast path with no eigendecomposition:
//! `sum lambda_i^2 = tr(A^2) = sum_ij A_ij^2`, so
//! `S_2(A) = -log2(||A||_F^2)`. [`renyi_entropy`] dispatches to it; the
//! eigendecomposition route stays available as [`renyi_entropy_eigen`] and
//! serves as the verification oracle for the fast path.
//!
//! Joint entropy of several groups is the entropy of their renormalized
//! Hadamard product ([`crate::kernel::joint_gram`]). [`shearer_gap`]
//! generalizes: for every `r`-subset family of the `L` groups, each group
//! lies in exactly `k = C(L-1, r-1)` subsets, and
//! `(1/k) * sum_S S_alpha(joint over S) - S_alpha(joint over all)` is a
//! nonnegative dependence gap; `r = 1` gives the total-correlation numerator,
//! `r = L-1` gives the dual-total-correlation numerator divided by `L-1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{joint_gram_refs, GramMatrix};

/// Entropy order. Positive; the value 1 selects the von Neumann limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Argument(format!("alpha must be positive and finite, got {value}")));
        }
        Ok(Alpha(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_von_neumann(self) -> bool {
        self.0 == 1.0
    }

    /// The paper's default order (and the one with the Frobenius fast path).
    pub const TWO: Alpha = Alpha(2.0);
}

/// Eigenvalues of a Gram matrix: nonincreasing, nonnegative, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    lambdas: Vec<f64>,
}

impl EigenSpectrum {
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

/// Symmetric eigendecomposition of `(M + M^T)/2`, eigenvalues sorted
/// nonincreasing with matching eigenvector columns.
pub(crate) fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let decomp = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| decomp.eigenvalues[b].partial_cmp(&decomp.eigenvalues[a]).unwrap());
    let values = DVector::from_iterator(n, order.iter().map(|&i| decomp.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &decomp.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Eigenvalues of `A`, sorted nonincreasing, with roundoff negatives in
/// `[-1e-10, 0)` clamped to zero and the result renormalized to sum 1.
pub fn spectrum(a: &GramMatrix) -> Result<EigenSpectrum> {
    let (values, _) = sym_eigen(a.entries());
    spectrum_from_eigenvalues(values.as_slice())
}

fn spectrum_from_eigenvalues(values: &[f64]) -> Result<EigenSpectrum> {
    let mut lambdas = Vec::with_capacity(values.len());
    let mut max = 0.0_f64;
    for &v in values {
        if v < -1e-10 {
            return Err(Error::NotPsd { min_eigenvalue: v });
        }
        let v = v.max(0.0);
        max = max.max(v);
        lambdas.push(v);
    }
    // roundoff noise near zero is symmetric; sub-machine-rank eigenvalues
    // are zeroed the same way the negative ones are, otherwise fractional
    // orders amplify them (sqrt of 1e-17 is 3e-9)
    let tol = values.len() as f64 * f64::EPSILON * max;
    let mut sum = 0.0;
    for l in &mut lambdas {
        if *l < tol {
            *l = 0.0;
        }
        sum += *l;
    }
    if !(sum > 0.0) {
        return Err(Error::Argument("spectrum sums to zero".into()));
    }
    for l in &mut lambdas {
        *l /= sum;
    }
    lambdas.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(EigenSpectrum { lambdas })
}

/// Entropy of a spectrum, in bits, clamped into `[0, log2 N]`.
pub fn entropy_from_spectrum(spec: &EigenSpectrum, alpha: Alpha) -> f64 {
    let n = spec.lambdas.len();
    let log2n = (n as f64).log2();
    let value = if alpha.is_von_neumann() {
        -spec
            .lambdas
            .iter()
            .filter(|&&l| l > 0.0)
            .map(|&l| l * l.log2())
            .sum::<f64>()
    } else {
        let a = alpha.value();
        // 0^a := 0 for every a > 0 (continuous extension below a = 1).
        let sum: f64 = spec.lambdas.iter().filter(|&&l| l > 0.0).map(|&l| l.powf(a)).sum();
        sum.log2() / (1.0 - a)
    };
    value.clamp(0.0, log2n)
}

/// `S_2(A) = -log2(sum_ij A_ij^2)` without any eigendecomposition.
pub fn entropy_alpha2_frobenius(a: &GramMatrix) -> f64 {
    let frob2: f64 = a.entries().as_slice().iter().map(|v| v * v).sum();
    (-frob2.log2()).clamp(0.0, (a.n() as f64).log2())
}

/// Renyi entropy of `A` in bits. Dispatches `alpha = 2` to the Frobenius
/// path; every other order goes through the eigenspectrum.
pub fn renyi_entropy(a: &GramMatrix, alpha: Alpha) -> Result<f64> {
    if alpha.value() == 2.0 {
        Ok(entropy_alpha2_frobenius(a))
    } else {
        renyi_entropy_eigen(a, alpha)
    }
}

/// Eigendecomposition route for any order; the oracle for the fast path.
pub fn renyi_entropy_eigen(a: &GramMatrix, alpha: Alpha) -> Result<f64> {
    Ok(entropy_from_spectrum(&spectrum(a)?, alpha))
}

/// Joint entropy: entropy of the renormalized Hadamard product of the parts.
pub fn joint_entropy(parts: &[GramMatrix], alpha: Alpha) -> Result<f64> {
    let refs: Vec<&GramMatrix> = parts.iter().collect();
    joint_entropy_refs(&refs, alpha)
}

pub(crate) fn joint_entropy_refs(parts: &[&GramMatrix], alpha: Alpha) -> Result<f64> {
    renyi_entropy(&joint_gram_refs(parts)?, alpha)
}

/// All `r`-subsets of `0..l` in lexicographic order.
pub(crate) fn combinations(l: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..r).collect();
    if r == 0 || r > l {
        return out;
    }
    loop {
        out.push(cur.clone());
        // advance the rightmost index that can still move
        let mut i = r;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] != i + l - r {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in (i + 1)..r {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Shearer gap at subset size `r`: with `phi` the family of all `r`-subsets
/// of the `L` groups (each group lies in `k = C(L-1, r-1)` of them),
///
/// ```text
/// gap = (1/k) * sum_{S in phi} S_alpha(joint over S)  -  S_alpha(joint over all)
/// ```
///
/// `r = 1` is the total-correlation numerator; `r = L-1` is the
/// dual-total-correlation numerator divided by `L-1`.
pub fn shearer_gap(parts: &[GramMatrix], r: usize, alpha: Alpha) -> Result<f64> {
    let l = parts.len();
    if l < 2 {
        return Err(Error::Argument(format!("shearer_gap needs at least 2 groups, got {l}")));
    }
    if r == 0 || r >= l {
        return Err(Error::Argument(format!("subset size r = {r} must lie in 1..={}", l - 1)));
    }
    if l > 20 && r != 1 && r != l - 1 {
        return Err(Error::Argument(format!(
            "refusing to enumerate C({l},{r}) subsets; only r = 1 and r = L-1 are supported for L > 20"
        )));
    }
    let k = binomial(l - 1, r - 1);
    let refs: Vec<&GramMatrix> = parts.iter().collect();
    // fixed lexicographic subset order for a deterministic summation order
    let mut subset_sum = 0.0;
    for subset in combinations(l, r) {
        let sub_refs: Vec<&GramMatrix> = subset.iter().map(|&i| refs[i]).collect();
        subset_sum += joint_entropy_refs(&sub_refs, alpha)?;
    }
    let full = joint_entropy_refs(&refs, alpha)?;
    Ok(subset_sum / k - full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram, KernelSpec};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn gm(entries: DMatrix<f64>) -> GramMatrix {
        GramMatrix::from_entries(entries).unwrap()
    }

    fn column(vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(vals.len(), 1, vals)
    }

    #[test]
    fn spectrum_of_scaled_identity_is_uniform() {
        let s = spectrum(&gm(DMatrix::identity(3, 3) / 3.0)).unwrap();
        for &l in s.lambdas() {
            assert_relative_eq!(l, 1.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn spectrum_of_rank_one_is_unit() {
        let s = spectrum(&gm(DMatrix::from_element(3, 3, 1.0 / 3.0))).unwrap();
        assert_relative_eq!(s.lambdas()[0], 1.0, epsilon = 1e-12);
        assert!(s.lambdas()[1].abs() < 1e-12);
    }

    #[test]
    fn spectrum_of_two_by_two_analytic() {
        let s = spectrum(&gm(dmatrix![0.5, 0.25; 0.25, 0.5])).unwrap();
        assert_relative_eq!(s.lambdas()[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(s.lambdas()[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn uniform_spectrum_gives_log2_n_for_every_alpha() {
        let a = gm(DMatrix::identity(3, 3) / 3.0);
        for alpha in [0.5, 1.0, 2.0, 3.0] {
            let h = renyi_entropy(&a, Alpha::new(alpha).unwrap()).unwrap();
            assert_relative_eq!(h, 3.0_f64.log2(), epsilon = 1e-12);
        }
        assert_relative_eq!(
            renyi_entropy(&a, Alpha::TWO).unwrap(),
            1.58496,
            epsilon = 1e-5
        );
    }

    #[test]
    fn rank_one_gives_zero_for_every_alpha() {
        let a = gm(DMatrix::from_element(4, 4, 0.25));
        for alpha in [0.5, 1.0, 2.0, 3.0] {
            let h = renyi_entropy(&a, Alpha::new(alpha).unwrap()).unwrap();
            assert!(h.abs() < 1e-10, "alpha={alpha}: {h}");
        }
    }

    #[test]
    fn alpha2_matches_hand_computation() {
        let a = gm(dmatrix![0.5, 0.25; 0.25, 0.5]);
        // spectrum (0.75, 0.25): -log2(0.625)
        let expect = -(0.75_f64.powi(2) + 0.25_f64.powi(2)).log2();
        assert_relative_eq!(renyi_entropy(&a, Alpha::TWO).unwrap(), expect, epsilon = 1e-12);
        assert_relative_eq!(expect, 0.67807, epsilon = 1e-5);
        assert_relative_eq!(
            renyi_entropy_eigen(&a, Alpha::TWO).unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn joint_entropy_ignores_constant_group_and_order() {
        let spec = KernelSpec::rbf_fixed(1.0).unwrap();
        let a = gram(&column(&[0.0, 1.0, 3.0]), &spec).unwrap();
        let ones = gm(DMatrix::from_element(3, 3, 1.0 / 3.0));
        let alpha = Alpha::TWO;
        let solo = renyi_entropy(&a, alpha).unwrap();
        assert_relative_eq!(
            joint_entropy(std::slice::from_ref(&a), alpha).unwrap(),
            solo,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            joint_entropy(&[a.clone(), ones.clone()], alpha).unwrap(),
            solo,
            epsilon = 1e-12
        );
        let ab = joint_entropy(&[a.clone(), ones.clone()], alpha).unwrap();
        let ba = joint_entropy(&[ones, a], alpha).unwrap();
        assert_relative_eq!(ab, ba, epsilon = 1e-13);
    }

    #[test]
    fn alpha_one_limit_is_continuous() {
        let spec = KernelSpec::rbf_fixed(0.8).unwrap();
        let a = gram(&column(&[0.0, 0.7, 1.9, -0.4, 2.2]), &spec).unwrap();
        let h1 = renyi_entropy(&a, Alpha::new(1.0).unwrap()).unwrap();
        for eps in [1e-4, -1e-4] {
            let h = renyi_entropy(&a, Alpha::new(1.0 + eps).unwrap()).unwrap();
            assert!((h - h1).abs() < 1e-3, "alpha=1{eps:+}: {h} vs {h1}");
        }
    }

    #[test]
    fn shearer_gap_r1_is_tc_numerator() {
        let spec = KernelSpec::rbf_fixed(0.8).unwrap();
        let parts = [
            gram(&column(&[0.0, 0.7, 1.9, -0.4]), &spec).unwrap(),
            gram(&column(&[1.0, -0.3, 0.2, 0.5]), &spec).unwrap(),
            gram(&column(&[0.4, 0.4, -1.0, 0.9]), &spec).unwrap(),
        ];
        let alpha = Alpha::TWO;
        let gap = shearer_gap(&parts, 1, alpha).unwrap();
        let expect: f64 = parts.iter().map(|p| renyi_entropy(p, alpha).unwrap()).sum::<f64>()
            - joint_entropy(&parts, alpha).unwrap();
        assert_relative_eq!(gap, expect, epsilon = 1e-12);
    }

    #[test]
    fn shearer_gap_r_lminus1_is_dtc_numerator_scaled() {
        let spec = KernelSpec::rbf_fixed(0.8).unwrap();
        let parts = [
            gram(&column(&[0.0, 0.7, 1.9, -0.4]), &spec).unwrap(),
            gram(&column(&[1.0, -0.3, 0.2, 0.5]), &spec).unwrap(),
            gram(&column(&[0.4, 0.4, -1.0, 0.9]), &spec).unwrap(),
        ];
        let alpha = Alpha::TWO;
        let gap = shearer_gap(&parts, 2, alpha).unwrap();
        let full = joint_entropy(&parts, alpha).unwrap();
        let mut loo_sum = 0.0;
        for i in 0..3 {
            let loo: Vec<GramMatrix> =
                (0..3).filter(|&j| j != i).map(|j| parts[j].clone()).collect();
            loo_sum += joint_entropy(&loo, alpha).unwrap();
        }
        let expect = (loo_sum - 2.0 * full) / 2.0;
        assert_relative_eq!(gap, expect, epsilon = 1e-12);
    }

    #[test]
    fn shearer_gap_bad_r_rejected() {
        let spec = KernelSpec::rbf_fixed(0.8).unwrap();
        let parts = [
            gram(&column(&[0.0, 0.7, 1.9]), &spec).unwrap(),
            gram(&column(&[1.0, -0.3, 0.2]), &spec).unwrap(),
        ];
        assert!(shearer_gap(&parts, 0, Alpha::TWO).is_err());
        assert!(shearer_gap(&parts, 2, Alpha::TWO).is_err());
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        assert_eq!(combinations(4, 2), vec![
            vec![0, 1], vec![0, 2], vec![0, 3],
            vec![1, 2], vec![1, 3], vec![2, 3],
        ]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn joint_entropy_dominates_marginals_but_subadditivity_can_fail() {
        // the lower bound S(joint) >= max marginal is a majorization fact
        // and must always hold; the upper bound S(joint) <= S(A) + S(B) is
        // NOT a theorem away from alpha = 1 and genuinely fails on a few
        // percent of near-independent draws, so it is only reported here
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, Normal};
        let g = Normal::new(0.0, 1.0).unwrap();
        let spec = KernelSpec::rbf_median();
        let mut superadditive = 0usize;
        for t in 0..60u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(t);
            let n = rng.random_range(8..=48);
            let a = gram(&DMatrix::from_fn(n, 1, |_, _| g.sample(&mut rng)), &spec).unwrap();
            let b = gram(&DMatrix::from_fn(n, 1, |_, _| g.sample(&mut rng)), &spec).unwrap();
            for alpha in [Alpha::new(0.5).unwrap(), Alpha::TWO] {
                let sa = renyi_entropy(&a, alpha).unwrap();
                let sb = renyi_entropy(&b, alpha).unwrap();
                let joint = joint_entropy(&[a.clone(), b.clone()], alpha).unwrap();
                assert!(joint >= sa.max(sb) - 1e-9, "joint {joint} < max({sa}, {sb})");
                if joint > sa + sb + 1e-9 {
                    superadditive += 1;
                }
            }
        }
        println!("subadditivity violations (expected occasionally at alpha=2): {superadditive}/120");
    }

    #[test]
    fn not_psd_is_reported() {
        // symmetric, unit trace, but indefinite
        let m = dmatrix![0.0, 0.6; 0.6, 1.0];
        let a = gm(m);
        assert!(matches!(spectrum(&a), Err(Error::NotPsd { .. })));
    }
}
