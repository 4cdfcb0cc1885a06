//! Analytic gradients of the entropy functionals with respect to Gram
//! entries, plus the chain rule back to the samples and a finite-difference
//! verification harness.
//!
//! Convention: all gradients here differentiate the *natural-log* entropy
//! `S_alpha(A) = ln(tr(A^alpha)) / (1 - alpha)`; the bit-valued measure
//! differs by the constant factor `1/ln 2`, which is irrelevant for
//! optimization and cancels entirely in normalized (ratio) losses. With this
//! convention the gradients are exactly
//!
//! ```text
//! dS_alpha(A)/dA   = alpha/(1-alpha) * A^(alpha-1) / tr(A^alpha)
//! dS_alpha(A,B)/dA = alpha/(1-alpha) * [ (A.B)^(alpha-1).B / tr((A.B)^alpha)
//!                                        - (I.B) / tr(A.B) ]
//! dI_alpha(A;B)/dA = dS_alpha(A)/dA - dS_alpha(A,B)/dA
//! dlambda_i/dA     = v_i v_i^T
//! ```
//!
//! (`.` is the Hadamard product; the joint formula differentiates through
//! the un-renormalized product since `S_alpha(A,B)` trace-normalizes
//! internally.)
//!
//! Matrices live on the symmetric manifold: finite-difference checks
//! perturb along symmetric directions `P` and compare `<G, P>_F` against a
//! central difference, which sidesteps the factor-2 ambiguity that
//! coordinate-wise perturbation of a symmetric matrix invites.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::seeded_rng;
use crate::entropy::{sym_eigen, Alpha};
use crate::error::{Error, Result};
use crate::kernel::{gram, BandwidthRule, GramMatrix, KernelKind, KernelSpec};

/// Gradient of a scalar with respect to the entries of a Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramGradient {
    entries: DMatrix<f64>,
}

impl GramGradient {
    pub(crate) fn wrap(entries: DMatrix<f64>) -> Self {
        GramGradient { entries }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Frobenius inner product with a direction matrix.
    pub fn dot(&self, direction: &DMatrix<f64>) -> f64 {
        self.entries.as_slice().iter().zip(direction.as_slice()).map(|(g, p)| g * p).sum()
    }
}

/// `M^p` for symmetric PSD `M` via the eigendecomposition; zero eigenvalues
/// contribute zero when `p > 0` and are an error when `p < 0`.
fn sym_power(m: &DMatrix<f64>, p: f64, alpha_for_error: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (values, vectors) = sym_eigen(m);
    let mut powered = Vec::with_capacity(values.len());
    for &l in values.iter() {
        let l = l.max(0.0);
        if l <= 1e-14 {
            if p < 0.0 {
                return Err(Error::SingularPower { alpha: alpha_for_error });
            }
            powered.push(0.0);
        } else {
            powered.push(l.powf(p));
        }
    }
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        if powered[k] == 0.0 {
            continue;
        }
        let v = vectors.column(k);
        for j in 0..n {
            let s = powered[k] * v[j];
            for i in 0..n {
                out[(i, j)] += s * v[i];
            }
        }
    }
    let lambdas = values.iter().map(|&l| l.max(0.0)).collect();
    Ok((out, lambdas))
}

fn require_renyi(alpha: Alpha) -> Result<f64> {
    if alpha.is_von_neumann() {
        return Err(Error::Argument("gradients require alpha != 1".into()));
    }
    Ok(alpha.value())
}

/// `dS_alpha(A)/dA = alpha/(1-alpha) * A^(alpha-1) / tr(A^alpha)`.
pub fn grad_entropy(a: &GramMatrix, alpha: Alpha) -> Result<GramGradient> {
    let al = require_renyi(alpha)?;
    let m = a.entries();
    if al == 2.0 {
        let tr: f64 = m.as_slice().iter().map(|v| v * v).sum();
        return Ok(GramGradient { entries: m * (-2.0 / tr) });
    }
    let (pow, lambdas) = sym_power(m, al - 1.0, al)?;
    let tr: f64 = lambdas.iter().filter(|&&l| l > 0.0).map(|&l| l.powf(al)).sum();
    Ok(GramGradient { entries: pow * (al / (1.0 - al) / tr) })
}

/// `dS_alpha(A,B)/dA` through the un-renormalized Hadamard product.
pub fn grad_joint_entropy(a: &GramMatrix, b: &GramMatrix, alpha: Alpha) -> Result<GramGradient> {
    let al = require_renyi(alpha)?;
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", a.n(), b.n())));
    }
    let n = a.n();
    let c = a.entries().component_mul(b.entries());
    let trace_c = c.trace();
    let (c_pow, tr_c_alpha) = if al == 2.0 {
        let tr: f64 = c.as_slice().iter().map(|v| v * v).sum();
        (c.clone(), tr)
    } else {
        let (pow, lambdas) = sym_power(&c, al - 1.0, al)?;
        let tr: f64 = lambdas.iter().filter(|&&l| l > 0.0).map(|&l| l.powf(al)).sum();
        (pow, tr)
    };
    let mut out = c_pow.component_mul(b.entries()) / tr_c_alpha;
    for i in 0..n {
        out[(i, i)] -= b.entries()[(i, i)] / trace_c;
    }
    Ok(GramGradient { entries: out * (al / (1.0 - al)) })
}

/// Gradients of `I_alpha(A;B) = S(A) + S(B) - S(A,B)` with respect to both
/// arguments, in that order.
pub fn grad_mutual_information(
    a: &GramMatrix,
    b: &GramMatrix,
    alpha: Alpha,
) -> Result<(GramGradient, GramGradient)> {
    let ga = grad_entropy(a, alpha)?.entries - grad_joint_entropy(a, b, alpha)?.entries;
    let gb = grad_entropy(b, alpha)?.entries - grad_joint_entropy(b, a, alpha)?.entries;
    Ok((GramGradient { entries: ga }, GramGradient { entries: gb }))
}

/// `dlambda_i/dA = v_i v_i^T` for the i-th largest eigenvalue; errors when
/// the eigenvalue is numerically repeated (gap <= 1e-8).
pub fn grad_eigenvalue(a: &GramMatrix, index: usize) -> Result<GramGradient> {
    let n = a.n();
    if index >= n {
        return Err(Error::Argument(format!("eigenvalue index {index} out of range for n = {n}")));
    }
    let (values, vectors) = sym_eigen(a.entries());
    let mut gap = f64::INFINITY;
    if index > 0 {
        gap = gap.min((values[index - 1] - values[index]).abs());
    }
    if index + 1 < n {
        gap = gap.min((values[index] - values[index + 1]).abs());
    }
    if gap <= 1e-8 {
        return Err(Error::DegenerateEigenvalue { index, gap });
    }
    let v = vectors.column(index);
    let outer = DMatrix::from_fn(n, n, |i, j| v[i] * v[j]);
    Ok(GramGradient { entries: outer })
}

/// Chain a Gram-space gradient back to the samples of a Gaussian-RBF Gram
/// with a fixed bandwidth:
///
/// ```text
/// dLoss/dy_i = sum_j (G_ij + G_ji) * A_ij * (y_j - y_i) / sigma^2
/// ```
///
/// The bandwidth is treated as a constant during differentiation.
pub fn backprop_to_samples(
    loss_grad: &GramGradient,
    samples: &DMatrix<f64>,
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    let sigma = match (spec.kind, spec.bandwidth) {
        (KernelKind::GaussianRbf, BandwidthRule::Fixed(s)) => s,
        _ => {
            return Err(Error::Unsupported(
                "backprop_to_samples requires a Gaussian RBF kernel with a fixed bandwidth".into(),
            ))
        }
    };
    let n = samples.nrows();
    let d = samples.ncols();
    if loss_grad.entries.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "gradient is {}x{} but there are {n} samples",
            loss_grad.entries.nrows(),
            loss_grad.entries.ncols()
        )));
    }
    let a = gram(samples, spec)?;
    let g = &loss_grad.entries;
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = (g[(i, j)] + g[(j, i)]) * a.entries()[(i, j)] * inv_s2;
            for c in 0..d {
                out[(i, c)] += w * (samples[(j, c)] - samples[(i, c)]);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Natural-log Renyi entropy `ln(tr(M^alpha)) / (1-alpha)` evaluated
/// literally on a symmetric matrix (no trace renormalization). This is the
/// exact functional the analytic gradients differentiate.
pub fn nats_entropy(m: &DMatrix<f64>, alpha: f64) -> f64 {
    if alpha == 2.0 {
        let tr: f64 = m.as_slice().iter().map(|v| v * v).sum();
        return tr.ln() / (1.0 - alpha);
    }
    let (values, _) = sym_eigen(m);
    let tr: f64 = values.iter().filter(|&&l| l > 0.0).map(|&l| l.powf(alpha)).sum();
    tr.ln() / (1.0 - alpha)
}

/// Natural-log joint entropy of the trace-normalized Hadamard product,
/// `ln(tr(C^alpha))/(1-alpha) - alpha/(1-alpha) * ln(tr C)` with `C = A.B`.
pub fn nats_joint_entropy(a: &DMatrix<f64>, b: &DMatrix<f64>, alpha: f64) -> f64 {
    let c = a.component_mul(b);
    nats_entropy(&c, alpha) - alpha / (1.0 - alpha) * c.trace().ln()
}

/// Central finite difference of `f` at `at` along the symmetric direction
/// `dir`: `(f(at + h dir) - f(at - h dir)) / 2h`.
pub fn fd_directional<F: Fn(&DMatrix<f64>) -> f64>(
    f: F,
    at: &DMatrix<f64>,
    dir: &DMatrix<f64>,
    step: f64,
) -> f64 {
    let plus = f(&(at + dir * step));
    let minus = f(&(at - dir * step));
    (plus - minus) / (2.0 * step)
}

fn rel_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-10)
}

/// Well-conditioned random unit-trace PSD fixture (all eigenvalues bounded
/// away from zero so fractional matrix powers stay finite).
pub fn random_psd_gram<R: Rng>(rng: &mut R, n: usize) -> GramMatrix {
    let g = Normal::new(0.0, 1.0).unwrap();
    let m = DMatrix::from_fn(n, n, |_, _| g.sample(rng));
    let mut psd = &m * m.transpose();
    for i in 0..n {
        psd[(i, i)] += 0.5 * n as f64;
    }
    let tr = psd.trace();
    GramMatrix::from_entries(psd / tr).unwrap()
}

fn random_symmetric_direction<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = Normal::new(0.0, 1.0).unwrap();
    let m = DMatrix::from_fn(n, n, |_, _| g.sample(rng));
    let sym = (&m + m.transpose()) * 0.5;
    let norm = sym.norm();
    sym / norm
}

/// Outcome of one gradient-check batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub operation: String,
    pub fixtures: usize,
    pub max_rel_error: f64,
}

/// Run every analytic gradient against central finite differences
/// (step 1e-5) on `fixtures` random well-conditioned fixtures of size `n`,
/// returning the worst relative error per operation. The spectral
/// operations use random symmetric directions; the sample chain rule is
/// checked coordinate-wise end to end through kernel construction.
pub fn gradient_check_report(n: usize, alpha: Alpha, fixtures: usize, seed: u64) -> Result<Vec<GradCheckResult>> {
    let al = require_renyi(alpha)?;
    let step = 1e-5;
    let mut results = Vec::new();

    let mut worst_entropy = 0.0_f64;
    let mut worst_joint = 0.0_f64;
    let mut worst_mi = 0.0_f64;
    let mut worst_eig = 0.0_f64;
    for k in 0..fixtures {
        let mut rng = seeded_rng(seed, k as u64 + 1);
        let a = random_psd_gram(&mut rng, n);
        let b = random_psd_gram(&mut rng, n);
        let dir = random_symmetric_direction(&mut rng, n);

        let g = grad_entropy(&a, alpha)?;
        let fd = fd_directional(|m| nats_entropy(m, al), a.entries(), &dir, step);
        worst_entropy = worst_entropy.max(rel_error(g.dot(&dir), fd));

        let g = grad_joint_entropy(&a, &b, alpha)?;
        let fd = fd_directional(|m| nats_joint_entropy(m, b.entries(), al), a.entries(), &dir, step);
        worst_joint = worst_joint.max(rel_error(g.dot(&dir), fd));

        let (ga, gb) = grad_mutual_information(&a, &b, alpha)?;
        let fd_a = fd_directional(
            |m| nats_entropy(m, al) + nats_entropy(b.entries(), al) - nats_joint_entropy(m, b.entries(), al),
            a.entries(),
            &dir,
            step,
        );
        worst_mi = worst_mi.max(rel_error(ga.dot(&dir), fd_a));
        let fd_b = fd_directional(
            |m| nats_entropy(a.entries(), al) + nats_entropy(m, al) - nats_joint_entropy(a.entries(), m, al),
            b.entries(),
            &dir,
            step,
        );
        worst_mi = worst_mi.max(rel_error(gb.dot(&dir), fd_b));

        // top eigenvalue of a generic PSD fixture is simple
        let g = grad_eigenvalue(&a, 0)?;
        let fd = fd_directional(
            |m| {
                let (values, _) = sym_eigen(m);
                values[0]
            },
            a.entries(),
            &dir,
            step,
        );
        worst_eig = worst_eig.max(rel_error(g.dot(&dir), fd));
    }
    results.push(GradCheckResult { operation: "grad_entropy".into(), fixtures, max_rel_error: worst_entropy });
    results.push(GradCheckResult { operation: "grad_joint_entropy".into(), fixtures, max_rel_error: worst_joint });
    results.push(GradCheckResult { operation: "grad_mutual_information".into(), fixtures, max_rel_error: worst_mi });
    results.push(GradCheckResult { operation: "grad_eigenvalue".into(), fixtures, max_rel_error: worst_eig });

    // end-to-end: samples -> RBF Gram -> alpha-entropy (nats), per coordinate
    let spec = KernelSpec::rbf_fixed(1.0)?;
    let mut worst_chain = 0.0_f64;
    for k in 0..fixtures.min(8) {
        let mut rng = seeded_rng(seed, 1000 + k as u64);
        let g = Normal::new(0.0, 1.0).unwrap();
        let rows = n.min(8);
        let samples = DMatrix::from_fn(rows, 2, |_, _| g.sample(&mut rng));
        let a = gram(&samples, &spec)?;
        let loss_grad = grad_entropy(&a, alpha)?;
        let sample_grad = backprop_to_samples(&loss_grad, &samples, &spec)?;
        for i in 0..rows {
            for c in 0..2 {
                let mut plus = samples.clone();
                plus[(i, c)] += step;
                let mut minus = samples.clone();
                minus[(i, c)] -= step;
                let f_plus = nats_entropy(gram(&plus, &spec)?.entries(), al);
                let f_minus = nats_entropy(gram(&minus, &spec)?.entries(), al);
                let fd = (f_plus - f_minus) / (2.0 * step);
                let analytic = sample_grad[(i, c)];
                let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                worst_chain = worst_chain.max(err);
            }
        }
    }
    results.push(GradCheckResult {
        operation: "backprop_to_samples".into(),
        fixtures: fixtures.min(8),
        max_rel_error: worst_chain,
    });
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn grad_entropy_at_scaled_identity() {
        let a = GramMatrix::from_entries(DMatrix::identity(4, 4) / 4.0).unwrap();
        let g = grad_entropy(&a, Alpha::TWO).unwrap();
        // (2/(1-2)) * (I/4) / (1/4) = -2 I
        assert_relative_eq!((g.entries() + DMatrix::identity(4, 4) * 2.0).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn grad_entropy_alpha2_closed_form() {
        let mut rng = seeded_rng(3, 0);
        let a = random_psd_gram(&mut rng, 6);
        let g = grad_entropy(&a, Alpha::TWO).unwrap();
        let tr2: f64 = a.entries().as_slice().iter().map(|v| v * v).sum();
        let expect = a.entries() * (-2.0 / tr2);
        assert_relative_eq!((g.entries() - expect).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn grad_commutes_with_matrix() {
        let mut rng = seeded_rng(5, 0);
        let a = random_psd_gram(&mut rng, 6);
        for alpha in [0.5, 2.0, 3.0] {
            let g = grad_entropy(&a, Alpha::new(alpha).unwrap()).unwrap();
            let comm = g.entries() * a.entries() - a.entries() * g.entries();
            assert!(comm.norm() < 1e-8, "alpha={alpha}: {}", comm.norm());
        }
    }

    #[test]
    fn gradients_are_symmetric_matrices() {
        let mut rng = seeded_rng(6, 0);
        let a = random_psd_gram(&mut rng, 6);
        let b = random_psd_gram(&mut rng, 6);
        for g in [
            grad_entropy(&a, Alpha::TWO).unwrap(),
            grad_joint_entropy(&a, &b, Alpha::TWO).unwrap(),
            grad_eigenvalue(&a, 0).unwrap(),
        ] {
            let asym = g.entries() - g.entries().transpose();
            assert!(asym.norm() < 1e-8);
        }
    }

    #[test]
    fn eigenvalue_gradient_of_diagonal_matrix() {
        let a = GramMatrix::from_entries(dmatrix![0.7, 0.0; 0.0, 0.3]).unwrap();
        let g = grad_eigenvalue(&a, 0).unwrap();
        assert_relative_eq!(g.entries()[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(g.entries()[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn eigenvalue_gradients_sum_to_identity() {
        let a = GramMatrix::from_entries(
            dmatrix![0.4, 0.02, 0.0; 0.02, 0.35, 0.01; 0.0, 0.01, 0.25],
        )
        .unwrap();
        let mut sum = DMatrix::zeros(3, 3);
        for i in 0..3 {
            sum += grad_eigenvalue(&a, i).unwrap().entries();
        }
        assert_relative_eq!((sum - DMatrix::identity(3, 3)).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn repeated_eigenvalue_is_rejected() {
        let a = GramMatrix::from_entries(DMatrix::identity(3, 3) / 3.0).unwrap();
        assert!(matches!(grad_eigenvalue(&a, 1), Err(Error::DegenerateEigenvalue { .. })));
    }

    #[test]
    fn swapping_mi_arguments_swaps_gradients() {
        let mut rng = seeded_rng(8, 0);
        let a = random_psd_gram(&mut rng, 5);
        let b = random_psd_gram(&mut rng, 5);
        let (ga, gb) = grad_mutual_information(&a, &b, Alpha::TWO).unwrap();
        let (gb2, ga2) = grad_mutual_information(&b, &a, Alpha::TWO).unwrap();
        assert_eq!(ga.entries(), ga2.entries());
        assert_eq!(gb.entries(), gb2.entries());
    }

    #[test]
    fn alpha_one_rejected_alpha_below_one_singular_guard() {
        let a = GramMatrix::from_entries(DMatrix::from_element(3, 3, 1.0 / 3.0)).unwrap();
        assert!(grad_entropy(&a, Alpha::new(1.0).unwrap()).is_err());
        // rank-one matrix has zero eigenvalues: alpha < 1 must refuse
        assert!(matches!(
            grad_entropy(&a, Alpha::new(0.5).unwrap()),
            Err(Error::SingularPower { .. })
        ));
    }

    #[test]
    fn translation_invariance_gives_zero_row_sums() {
        let mut rng = seeded_rng(9, 0);
        let g = Normal::new(0.0, 1.0).unwrap();
        let samples = DMatrix::from_fn(6, 2, |_, _| g.sample(&mut rng));
        let spec = KernelSpec::rbf_fixed(0.9).unwrap();
        let a = gram(&samples, &spec).unwrap();
        let loss_grad = grad_entropy(&a, Alpha::TWO).unwrap();
        let sg = backprop_to_samples(&loss_grad, &samples, &spec).unwrap();
        for c in 0..2 {
            let col_sum: f64 = (0..6).map(|i| sg[(i, c)]).sum();
            assert!(col_sum.abs() < 1e-8, "column {c}: {col_sum}");
        }
    }

    #[test]
    fn duplicate_samples_get_identical_gradient_rows() {
        let samples = DMatrix::from_row_slice(4, 1, &[0.5, 0.5, -1.0, 2.0]);
        let spec = KernelSpec::rbf_fixed(0.8).unwrap();
        let a = gram(&samples, &spec).unwrap();
        let loss_grad = grad_entropy(&a, Alpha::TWO).unwrap();
        let sg = backprop_to_samples(&loss_grad, &samples, &spec).unwrap();
        assert_relative_eq!(sg[(0, 0)], sg[(1, 0)], epsilon = 1e-12);
    }

    #[test]
    fn backprop_requires_fixed_rbf() {
        let samples = DMatrix::from_row_slice(4, 1, &[0.5, 0.1, -1.0, 2.0]);
        let spec = KernelSpec::rbf_fixed(0.8).unwrap();
        let a = gram(&samples, &spec).unwrap();
        let lg = grad_entropy(&a, Alpha::TWO).unwrap();
        assert!(backprop_to_samples(&lg, &samples, &KernelSpec::rbf_median()).is_err());
        assert!(backprop_to_samples(&lg, &samples, &KernelSpec::delta()).is_err());
    }

    #[test]
    fn gradient_check_passes_for_alpha_2() {
        let report = gradient_check_report(8, Alpha::TWO, 20, 42).unwrap();
        for r in &report {
            let bound = if r.operation == "backprop_to_samples" { 1e-4 } else { 1e-5 };
            assert!(r.max_rel_error < bound, "{}: {}", r.operation, r.max_rel_error);
        }
    }

    #[test]
    fn gradient_check_passes_for_fractional_alpha() {
        let report = gradient_check_report(6, Alpha::new(1.5).unwrap(), 10, 11).unwrap();
        for r in &report {
            let bound = if r.operation == "backprop_to_samples" { 1e-4 } else { 1e-5 };
            assert!(r.max_rel_error < bound, "{}: {}", r.operation, r.max_rel_error);
        }
    }
}
