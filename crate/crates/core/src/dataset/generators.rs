//! Synthetic benchmark generators.
//!
//! Every generator is a pure function of its parameters and the seed: the
//! same call yields a bit-identical table.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StudentT, Uniform};

use super::{seeded_rng, SampleTable};
use crate::error::{Error, Result};

/// The benchmark source-density menu: five zero-mean unit-variance
/// non-Gaussian densities. Which two get mixed is drawn from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SourceDensity {
    Uniform,
    Laplace,
    StudentT5,
    CenteredExponential,
    TwoGaussianMixture,
}

const DENSITY_MENU: [SourceDensity; 5] = [
    SourceDensity::Uniform,
    SourceDensity::Laplace,
    SourceDensity::StudentT5,
    SourceDensity::CenteredExponential,
    SourceDensity::TwoGaussianMixture,
];

fn draw_density<R: Rng>(rng: &mut R, which: SourceDensity, n: usize) -> Vec<f64> {
    match which {
        SourceDensity::Uniform => {
            let half = 3.0_f64.sqrt();
            let u = Uniform::new(-half, half).unwrap();
            (0..n).map(|_| u.sample(rng)).collect()
        }
        SourceDensity::Laplace => {
            // inverse CDF; scale 1/sqrt(2) gives unit variance
            let b = 1.0 / 2.0_f64.sqrt();
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() - 0.5;
                    let arg = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
                    -b * u.signum() * arg.ln()
                })
                .collect()
        }
        SourceDensity::StudentT5 => {
            let t = StudentT::new(5.0).unwrap();
            let scale = (3.0_f64 / 5.0).sqrt();
            (0..n).map(|_| t.sample(rng) * scale).collect()
        }
        SourceDensity::CenteredExponential => {
            let e = Exp::new(1.0).unwrap();
            (0..n).map(|_| e.sample(rng) - 1.0).collect()
        }
        SourceDensity::TwoGaussianMixture => {
            // strongly bimodal: means +-0.95, total variance 1
            let mu = 0.95_f64;
            let sd = (1.0 - mu * mu).sqrt();
            let g = Normal::new(0.0, sd).unwrap();
            (0..n)
                .map(|_| {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    g.sample(rng) + sign * mu
                })
                .collect()
        }
    }
}

/// Standardize in place to zero mean and unit sample variance.
fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt().max(f64::MIN_POSITIVE);
    for x in v {
        *x = (*x - mean) / sd;
    }
}

/// Haar-distributed random orthogonal matrix: QR of an i.i.d. Gaussian
/// matrix with the columns sign-corrected by the diagonal of R.
fn haar_orthogonal<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let g = Normal::new(0.0, 1.0).unwrap();
    let m = DMatrix::from_fn(d, d, |_, _| g.sample(rng));
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Rotation-mixed pair: two sources from the density menu, mixed by the 2x2
/// rotation of angle `theta`, padded with `extra_dims` standard-normal
/// dimensions per group, then each group multiplied by an independent random
/// orthogonal matrix. `theta = 0` makes the two groups independent; power to
/// detect dependence grows toward `theta = pi/4`.
pub fn gen_rotation_pair(n: usize, theta: f64, extra_dims: usize, seed: u64) -> Result<SampleTable> {
    if n < 4 {
        return Err(Error::Argument(format!("need n >= 4, got {n}")));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_4).contains(&theta) {
        return Err(Error::Argument(format!("theta = {theta} outside [0, pi/4]")));
    }
    let mut rng = seeded_rng(seed, 0);
    let w1 = DENSITY_MENU[rng.random_range(0..DENSITY_MENU.len())];
    let w2 = DENSITY_MENU[rng.random_range(0..DENSITY_MENU.len())];
    let mut s1 = draw_density(&mut rng, w1, n);
    let mut s2 = draw_density(&mut rng, w2, n);
    standardize(&mut s1);
    standardize(&mut s2);

    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let d = extra_dims + 1;
    let g = Normal::new(0.0, 1.0).unwrap();
    let mut group1 = DMatrix::zeros(n, d);
    let mut group2 = DMatrix::zeros(n, d);
    for i in 0..n {
        group1[(i, 0)] = cos_t * s1[i] - sin_t * s2[i];
        group2[(i, 0)] = sin_t * s1[i] + cos_t * s2[i];
    }
    for c in 1..d {
        for i in 0..n {
            group1[(i, c)] = g.sample(&mut rng);
        }
    }
    for c in 1..d {
        for i in 0..n {
            group2[(i, c)] = g.sample(&mut rng);
        }
    }
    let q1 = haar_orthogonal(&mut rng, d);
    let q2 = haar_orthogonal(&mut rng, d);
    let group1 = group1 * q1.transpose();
    let group2 = group2 * q2.transpose();

    let mut values = DMatrix::zeros(n, 2 * d);
    values.view_mut((0, 0), (n, d)).copy_from(&group1);
    values.view_mut((0, d), (n, d)).copy_from(&group2);
    let groups = vec![(0..d).collect(), (d..2 * d).collect()];
    SampleTable::new(values, groups, None)
}

/// Product pair: `Y1` is n x 5 standard Gaussian, `Y2_ml = Y1_ml * eps_ml`
/// with independent standard-normal `eps`. The two groups are uncorrelated
/// but strongly dependent.
pub fn gen_product_pair(n: usize, seed: u64) -> Result<SampleTable> {
    if n < 4 {
        return Err(Error::Argument(format!("need n >= 4, got {n}")));
    }
    let mut rng = seeded_rng(seed, 0);
    let g = Normal::new(0.0, 1.0).unwrap();
    let y1 = DMatrix::from_fn(n, 5, |_, _| g.sample(&mut rng));
    let eps = DMatrix::from_fn(n, 5, |_, _| g.sample(&mut rng));
    let mut values = DMatrix::zeros(n, 10);
    for i in 0..n {
        for j in 0..5 {
            values[(i, j)] = y1[(i, j)];
            values[(i, j + 5)] = y1[(i, j)] * eps[(i, j)];
        }
    }
    let groups = vec![(0..5).collect(), (5..10).collect()];
    SampleTable::new(values, groups, None)
}

/// Data A: `y1 ~ Uniform[0,1]`, `y_i = y1^i` for `i = 2..d`; d scalar
/// groups, all nonlinearly dependent on the first.
pub fn gen_data_a(n: usize, d: usize, seed: u64) -> Result<SampleTable> {
    if d < 2 {
        return Err(Error::Argument(format!("need d >= 2, got {d}")));
    }
    if n < 2 {
        return Err(Error::Argument(format!("need n >= 2, got {n}")));
    }
    let mut rng = seeded_rng(seed, 0);
    let mut values = DMatrix::zeros(n, d);
    for i in 0..n {
        let y1: f64 = rng.random();
        for j in 0..d {
            values[(i, j)] = y1.powi(j as i32 + 1);
        }
    }
    SampleTable::with_scalar_groups(values, None)
}

/// Data B: `y2..yd ~ i.i.d. Uniform[0,1]`, `y1 = (mean of the rest)^2`;
/// d scalar groups whose shared dependence weakens as d grows.
pub fn gen_data_b(n: usize, d: usize, seed: u64) -> Result<SampleTable> {
    if d < 2 {
        return Err(Error::Argument(format!("need d >= 2, got {d}")));
    }
    if n < 2 {
        return Err(Error::Argument(format!("need n >= 2, got {n}")));
    }
    let mut rng = seeded_rng(seed, 0);
    let mut values = DMatrix::zeros(n, d);
    for i in 0..n {
        let mut sum = 0.0;
        for j in 1..d {
            let u: f64 = rng.random();
            values[(i, j)] = u;
            sum += u;
        }
        let mean = sum / (d as f64 - 1.0);
        values[(i, 0)] = mean * mean;
    }
    SampleTable::with_scalar_groups(values, None)
}

/// XOR triple: `x1, x2 ~ Bernoulli(0.5)`, `y = x1 XOR x2`. Three scalar
/// binary groups; each input is independent of the output, yet the triple is
/// fully dependent.
pub fn gen_xor(n: usize, seed: u64) -> Result<SampleTable> {
    if n < 4 {
        return Err(Error::Argument(format!("need n >= 4, got {n}")));
    }
    let mut rng = seeded_rng(seed, 0);
    let mut values = DMatrix::zeros(n, 3);
    for i in 0..n {
        let x1 = rng.random::<bool>() as u8;
        let x2 = rng.random::<bool>() as u8;
        values[(i, 0)] = x1 as f64;
        values[(i, 1)] = x2 as f64;
        values[(i, 2)] = (x1 ^ x2) as f64;
    }
    SampleTable::with_scalar_groups(values, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_rotation_pair(16, 0.3, 2, 9).unwrap(), gen_rotation_pair(16, 0.3, 2, 9).unwrap());
        assert_eq!(gen_product_pair(16, 9).unwrap(), gen_product_pair(16, 9).unwrap());
        assert_eq!(gen_data_a(16, 3, 9).unwrap(), gen_data_a(16, 3, 9).unwrap());
        assert_eq!(gen_data_b(16, 3, 9).unwrap(), gen_data_b(16, 3, 9).unwrap());
        assert_eq!(gen_xor(16, 9).unwrap(), gen_xor(16, 9).unwrap());
        assert_ne!(gen_xor(16, 9).unwrap(), gen_xor(16, 10).unwrap());
    }

    #[test]
    fn rotation_pair_shapes_and_theta_range() {
        let t = gen_rotation_pair(32, 0.0, 3, 1).unwrap();
        assert_eq!(t.dim(), 8);
        assert_eq!(t.group_dims(), vec![4, 4]);
        assert!(gen_rotation_pair(32, -0.1, 0, 1).is_err());
        assert!(gen_rotation_pair(32, 1.0, 0, 1).is_err());
        assert!(gen_rotation_pair(3, 0.0, 0, 1).is_err());
    }

    #[test]
    fn product_pair_columns_nearly_uncorrelated() {
        let t = gen_product_pair(5000, 3).unwrap();
        let v = t.values();
        for c in 0..5 {
            let (a, b) = (v.column(c), v.column(c + 5));
            let (ma, mb) = (a.mean(), b.mean());
            let mut cov = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for i in 0..t.n() {
                cov += (a[i] - ma) * (b[i] - mb);
                va += (a[i] - ma).powi(2);
                vb += (b[i] - mb).powi(2);
            }
            let r = cov / (va.sqrt() * vb.sqrt());
            assert!(r.abs() < 0.05, "column {c}: r = {r}");
        }
    }

    #[test]
    fn data_a_monotone_power_identities() {
        let t = gen_data_a(64, 3, 5).unwrap();
        let v = t.values();
        let mut order: Vec<usize> = (0..64).collect();
        order.sort_by(|&a, &b| v[(a, 0)].partial_cmp(&v[(b, 0)]).unwrap());
        for w in order.windows(2) {
            for c in 0..3 {
                assert!(v[(w[0], c)] <= v[(w[1], c)]);
            }
        }
        for i in 0..64 {
            assert!((v[(i, 2)] - v[(i, 1)] * v[(i, 0)]).abs() < 1e-14);
            assert!((0.0..=1.0).contains(&v[(i, 2)]));
        }
    }

    #[test]
    fn data_b_definition_and_range() {
        let t = gen_data_b(64, 2, 5).unwrap();
        let v = t.values();
        for i in 0..64 {
            assert!((v[(i, 0)] - v[(i, 1)] * v[(i, 1)]).abs() < 1e-14);
        }
        let t = gen_data_b(64, 6, 5).unwrap();
        for i in 0..64 {
            assert!((0.0..=1.0).contains(&t.values()[(i, 0)]));
        }
    }

    #[test]
    fn xor_identity_holds_rowwise() {
        let t = gen_xor(256, 11).unwrap();
        let v = t.values();
        for i in 0..256 {
            assert_eq!(v[(i, 2)], (v[(i, 0)] as u8 ^ v[(i, 1)] as u8) as f64);
            assert!(v[(i, 0)] == 0.0 || v[(i, 0)] == 1.0);
        }
    }

    #[test]
    fn haar_matrix_is_orthogonal() {
        let mut rng = seeded_rng(3, 0);
        let q = haar_orthogonal(&mut rng, 5);
        let qtq = q.transpose() * &q;
        assert!((qtq - DMatrix::identity(5, 5)).norm() < 1e-12);
    }

    #[test]
    fn density_menu_is_standardized() {
        let mut rng = seeded_rng(17, 0);
        for which in DENSITY_MENU {
            let v = draw_density(&mut rng, which, 200_000);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 0.02, "{which:?}: mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "{which:?}: var {var}");
        }
    }
}
