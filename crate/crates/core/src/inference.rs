//! Permutation independence tests, power experiments, and AUC scoring.
//!
//! The permutation test breaks the cross-group sample correspondence by
//! applying independent uniform row permutations to every group but the
//! first, recomputing the dependence statistic each time. Permuting a
//! precomputed Gram (rows and columns together) is mathematically identical
//! to re-kernelizing permuted samples, so each replica costs O(N^2); the
//! group-1 Gram and all bandwidths are reused across replicas.
//!
//! The threshold is the empirical `1 - tau` quantile (linear interpolation
//! between order statistics) of the permuted statistics, and the p-value is
//! the add-one estimate `(1 + #{permuted >= observed}) / (1 + P)`, which
//! cannot be zero.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{generators, seeded_rng, SampleTable};
use crate::entropy::{renyi_entropy, Alpha};
use crate::error::{Error, Result};
use crate::kernel::{raw_kernel_matrix, GramMatrix, KernelSpec};
use crate::measures::{
    self, center_kernel, group_grams, MeasureKind, MiNormalization, DEGENERACY_EPS,
};

/// Outcome of one permutation test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermTestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject_h0: bool,
    pub num_permutations: usize,
    pub tau: f64,
}

/// Null-acceptance (or alternative-detection) rate over a parameter grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerCurve {
    pub x_values: Vec<f64>,
    pub rates: Vec<f64>,
    pub trials: usize,
    pub measure_kind: MeasureKind,
    pub tau: f64,
}

/// Deterministic per-replica seed mixing (splitmix64 over the packed tag).
fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ (a.wrapping_mul(0x9E3779B97F4A7C15)) ^ (b.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Everything a replica needs to produce the test statistic for a given set
/// of group permutations (group 0 is never permuted).
enum StatEngine {
    /// Gram-based measures at alpha = 2: marginal entropies are permutation
    /// invariant, so only the (fused, O(N^2)) joint entropies recompute.
    GramAlpha2 { parts: Vec<GramMatrix>, marginals: Vec<f64>, kind: MeasureKind },
    /// Gram-based measures at general alpha: permuted Grams are
    /// materialized and the measure recomputed (O(N^3) per replica).
    GramGeneral { parts: Vec<GramMatrix>, kind: MeasureKind, alpha: Alpha },
    /// HSIC over raw kernels: `K_x` is centered once.
    Hsic { centered_kx: DMatrix<f64>, ky: DMatrix<f64> },
}

/// `S_2` (bits) of the trace-normalized Hadamard product of the selected
/// parts under per-part row/column permutations, computed in one fused pass
/// (no permuted matrix is materialized). Uses the symmetry of each part:
/// `A[p(i), p(j)]` is read from column `p(i)` at row `p(j)`.
fn joint_s2_permuted(parts: &[&DMatrix<f64>], perms: &[Option<&[usize]>]) -> f64 {
    let n = parts[0].nrows();
    let mut frob = 0.0;
    let mut trace = 0.0;
    let mut cols: Vec<&[f64]> = Vec::with_capacity(parts.len());
    for i in 0..n {
        cols.clear();
        for (m, part) in parts.iter().enumerate() {
            let src = perms[m].map_or(i, |p| p[i]);
            cols.push(&part.as_slice()[src * n..(src + 1) * n]);
        }
        let mut diag = 1.0;
        for (m, col) in cols.iter().enumerate() {
            diag *= col[perms[m].map_or(i, |p| p[i])];
        }
        trace += diag;
        match (cols.len(), perms) {
            (2, [None, Some(p)]) => {
                let (c0, c1) = (cols[0], cols[1]);
                for j in 0..n {
                    let prod = c0[j] * c1[p[j]];
                    frob += prod * prod;
                }
            }
            (3, [None, Some(p2), Some(p3)]) => {
                let (c0, c1, c2) = (cols[0], cols[1], cols[2]);
                for j in 0..n {
                    let prod = c0[j] * c1[p2[j]] * c2[p3[j]];
                    frob += prod * prod;
                }
            }
            _ => {
                for j in 0..n {
                    let mut prod = 1.0;
                    for (m, col) in cols.iter().enumerate() {
                        prod *= col[perms[m].map_or(j, |p| p[j])];
                    }
                    frob += prod * prod;
                }
            }
        }
    }
    -(frob / (trace * trace)).log2()
}

impl StatEngine {
    fn build(table: &SampleTable, kind: MeasureKind, alpha: Alpha, spec: &KernelSpec) -> Result<Self> {
        match kind {
            MeasureKind::Hsic => {
                if table.num_groups() != 2 {
                    return Err(Error::Argument("HSIC permutation test needs exactly 2 groups".into()));
                }
                let kx = raw_kernel_matrix(&table.group_matrix(0), spec)?;
                let ky = raw_kernel_matrix(&table.group_matrix(1), spec)?;
                Ok(StatEngine::Hsic { centered_kx: center_kernel(&kx), ky })
            }
            _ => {
                let parts = group_grams(table, spec)?;
                if alpha.value() == 2.0 {
                    let marginals: Vec<f64> =
                        parts.iter().map(|p| renyi_entropy(p, alpha)).collect::<Result<_>>()?;
                    Ok(StatEngine::GramAlpha2 { parts, marginals, kind })
                } else {
                    Ok(StatEngine::GramGeneral { parts, kind, alpha })
                }
            }
        }
    }

    /// The statistic under the given permutations (`None` = identity).
    fn statistic(&self, perms: &[Option<&[usize]>]) -> Result<f64> {
        match self {
            StatEngine::Hsic { centered_kx, ky } => {
                let n = ky.nrows();
                let mut acc = 0.0;
                match perms[1] {
                    None => {
                        for (m, k) in centered_kx.as_slice().iter().zip(ky.as_slice()) {
                            acc += m * k;
                        }
                    }
                    Some(p) => {
                        for i in 0..n {
                            let mcol = &centered_kx.as_slice()[i * n..(i + 1) * n];
                            let kcol = &ky.as_slice()[p[i] * n..(p[i] + 1) * n];
                            for j in 0..n {
                                acc += mcol[j] * kcol[p[j]];
                            }
                        }
                    }
                }
                let nf = n as f64;
                Ok(acc / ((nf - 1.0) * (nf - 1.0)))
            }
            StatEngine::GramAlpha2 { parts, marginals, kind } => {
                let mats: Vec<&DMatrix<f64>> = parts.iter().map(|p| p.entries()).collect();
                let l = parts.len();
                let sum: f64 = marginals.iter().sum();
                Ok(match kind {
                    MeasureKind::TotalCorrelation | MeasureKind::NormalizedTotalCorrelation => {
                        let joint = joint_s2_permuted(&mats, perms);
                        let num = sum - joint;
                        if kind.is_normalized() {
                            let max = marginals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let den = sum - max;
                            if den < DEGENERACY_EPS {
                                0.0
                            } else {
                                num / den
                            }
                        } else {
                            num
                        }
                    }
                    MeasureKind::MutualInformation
                    | MeasureKind::NormalizedMiMax
                    | MeasureKind::NormalizedMiMin => {
                        let joint = joint_s2_permuted(&mats, perms);
                        let mi = sum - joint;
                        let den = match kind {
                            MeasureKind::NormalizedMiMax => marginals[0].max(marginals[1]),
                            MeasureKind::NormalizedMiMin => marginals[0].min(marginals[1]),
                            _ => return Ok(mi),
                        };
                        if den < DEGENERACY_EPS {
                            0.0
                        } else {
                            mi / den
                        }
                    }
                    MeasureKind::DualTotalCorrelation | MeasureKind::NormalizedDualTotalCorrelation => {
                        let full = joint_s2_permuted(&mats, perms);
                        let mut loo_sum = 0.0;
                        for skip in 0..l {
                            let sub_mats: Vec<&DMatrix<f64>> =
                                (0..l).filter(|&m| m != skip).map(|m| mats[m]).collect();
                            let sub_perms: Vec<Option<&[usize]>> =
                                (0..l).filter(|&m| m != skip).map(|m| perms[m]).collect();
                            loo_sum += joint_s2_permuted(&sub_mats, &sub_perms);
                        }
                        let num = loo_sum - (l as f64 - 1.0) * full;
                        if kind.is_normalized() {
                            if full < DEGENERACY_EPS {
                                0.0
                            } else {
                                num / full
                            }
                        } else {
                            num
                        }
                    }
                    MeasureKind::Hsic => unreachable!(),
                })
            }
            StatEngine::GramGeneral { parts, kind, alpha } => {
                let permuted: Vec<GramMatrix> = parts
                    .iter()
                    .enumerate()
                    .map(|(m, p)| match perms[m] {
                        None => p.clone(),
                        Some(perm) => p.permuted(perm),
                    })
                    .collect();
                let report = match kind {
                    MeasureKind::TotalCorrelation | MeasureKind::NormalizedTotalCorrelation => {
                        measures::total_correlation(&permuted, *alpha, kind.is_normalized())?
                    }
                    MeasureKind::DualTotalCorrelation
                    | MeasureKind::NormalizedDualTotalCorrelation => {
                        measures::dual_total_correlation(&permuted, *alpha, kind.is_normalized())?
                    }
                    MeasureKind::MutualInformation => {
                        measures::mutual_information(&permuted[0], &permuted[1], *alpha, MiNormalization::None)?
                    }
                    MeasureKind::NormalizedMiMax => {
                        measures::mutual_information(&permuted[0], &permuted[1], *alpha, MiNormalization::Max)?
                    }
                    MeasureKind::NormalizedMiMin => {
                        measures::mutual_information(&permuted[0], &permuted[1], *alpha, MiNormalization::Min)?
                    }
                    MeasureKind::Hsic => unreachable!(),
                };
                Ok(report.value)
            }
        }
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub(crate) fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn run_test(
    table: &SampleTable,
    kind: MeasureKind,
    alpha: Alpha,
    spec: &KernelSpec,
    num_permutations: usize,
    tau: f64,
    seed: u64,
) -> Result<PermTestResult> {
    if num_permutations < 20 {
        return Err(Error::Argument(format!("need at least 20 permutations, got {num_permutations}")));
    }
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::Argument(format!("tau = {tau} outside (0, 1)")));
    }
    let l = table.num_groups();
    let n = table.n();
    let engine = StatEngine::build(table, kind, alpha, spec)?;
    let identity: Vec<Option<&[usize]>> = vec![None; l];
    let observed = engine.statistic(&identity)?;

    let permuted: Vec<Result<f64>> = (0..num_permutations)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeded_rng(seed, r as u64 + 1);
            let mut perms: Vec<Vec<usize>> = Vec::with_capacity(l - 1);
            for _ in 1..l {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                perms.push(p);
            }
            let refs: Vec<Option<&[usize]>> = std::iter::once(None)
                .chain(perms.iter().map(|p| Some(p.as_slice())))
                .collect();
            engine.statistic(&refs)
        })
        .collect();
    let mut stats = Vec::with_capacity(num_permutations);
    for s in permuted {
        stats.push(s?);
    }
    let exceed = stats.iter().filter(|&&s| s >= observed).count();
    let p_value = (1 + exceed) as f64 / (1 + num_permutations) as f64;
    stats.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = empirical_quantile(&stats, 1.0 - tau);
    Ok(PermTestResult {
        statistic: observed,
        threshold,
        p_value,
        reject_h0: observed > threshold,
        num_permutations,
        tau,
    })
}

/// Two-group permutation independence test: group 2's rows are shuffled,
/// group 1 and all bandwidths are reused.
pub fn permutation_test(
    table: &SampleTable,
    kind: MeasureKind,
    alpha: Alpha,
    spec: &KernelSpec,
    num_permutations: usize,
    tau: f64,
    seed: u64,
) -> Result<PermTestResult> {
    if table.num_groups() != 2 {
        return Err(Error::Argument(format!(
            "permutation_test needs exactly 2 groups, got {}; use permutation_test_multi",
            table.num_groups()
        )));
    }
    run_test(table, kind, alpha, spec, num_permutations, tau, seed)
}

/// Multi-group variant: every group but the first gets an independent
/// permutation, which samples the fully-independent null.
pub fn permutation_test_multi(
    table: &SampleTable,
    kind: MeasureKind,
    alpha: Alpha,
    spec: &KernelSpec,
    num_permutations: usize,
    tau: f64,
    seed: u64,
) -> Result<PermTestResult> {
    if table.num_groups() < 2 {
        return Err(Error::Argument("need at least 2 groups".into()));
    }
    run_test(table, kind, alpha, spec, num_permutations, tau, seed)
}

/// Which synthetic power study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerScenario {
    /// H0-acceptance rate vs rotation angle theta in {0, pi/32, ..., pi/4}
    /// at n = 256. Dependence grows with theta, so the curve should fall
    /// from ~(1 - tau) toward 0.
    RotationSweep,
    /// H1-detection rate vs sample count n in {32, 64, 128, 256, 512} on
    /// the product pair, whose dependence is invisible to correlation.
    ProductNSweep,
}

/// Scenario internals (the sweep grids themselves are fixed by scenario).
#[derive(Debug, Clone)]
pub struct PowerOptions {
    /// Sample count per trial in the rotation sweep.
    pub rotation_n: usize,
    /// Extra noise dimensions per group in the rotation sweep.
    pub rotation_extra_dims: usize,
    /// Kernel for the rotation sweep statistic. Silverman keeps power on
    /// light-tailed source pairs where the median heuristic has none.
    pub rotation_spec: KernelSpec,
    /// Kernel for the product sweep statistic.
    pub product_spec: KernelSpec,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            rotation_n: 256,
            rotation_extra_dims: 0,
            rotation_spec: KernelSpec::rbf_silverman(),
            product_spec: KernelSpec::rbf_median(),
        }
    }
}

/// Monte-Carlo power study. Trials are independently seeded from
/// `(seed, grid index, trial index)` and may run concurrently; rates are
/// aggregated in trial order.
pub fn power_experiment(
    scenario: PowerScenario,
    kind: MeasureKind,
    alpha: Alpha,
    trials: usize,
    num_permutations: usize,
    tau: f64,
    seed: u64,
) -> Result<PowerCurve> {
    power_experiment_with(scenario, kind, alpha, trials, num_permutations, tau, seed, &PowerOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn power_experiment_with(
    scenario: PowerScenario,
    kind: MeasureKind,
    alpha: Alpha,
    trials: usize,
    num_permutations: usize,
    tau: f64,
    seed: u64,
    options: &PowerOptions,
) -> Result<PowerCurve> {
    if trials < 10 {
        return Err(Error::Argument(format!("need at least 10 trials, got {trials}")));
    }
    match scenario {
        PowerScenario::RotationSweep => {
            let thetas: Vec<f64> =
                (0..=8).map(|k| k as f64 * std::f64::consts::PI / 32.0).collect();
            let mut rates = Vec::with_capacity(thetas.len());
            for (ti, &theta) in thetas.iter().enumerate() {
                let outcomes: Vec<Result<bool>> = (0..trials)
                    .into_par_iter()
                    .map(|t| {
                        let data_seed = mix_seed(seed, ti as u64, t as u64);
                        let table = generators::gen_rotation_pair(
                            options.rotation_n,
                            theta,
                            options.rotation_extra_dims,
                            data_seed,
                        )?;
                        let res = run_test(
                            &table,
                            kind,
                            alpha,
                            &options.rotation_spec,
                            num_permutations,
                            tau,
                            mix_seed(seed, 7919 + ti as u64, t as u64),
                        )?;
                        Ok(!res.reject_h0)
                    })
                    .collect();
                let mut accepted = 0usize;
                for o in outcomes {
                    accepted += o? as usize;
                }
                rates.push(accepted as f64 / trials as f64);
            }
            Ok(PowerCurve { x_values: thetas, rates, trials, measure_kind: kind, tau })
        }
        PowerScenario::ProductNSweep => {
            let ns = [32usize, 64, 128, 256, 512];
            let mut rates = Vec::with_capacity(ns.len());
            for (ni, &n) in ns.iter().enumerate() {
                let outcomes: Vec<Result<bool>> = (0..trials)
                    .into_par_iter()
                    .map(|t| {
                        let data_seed = mix_seed(seed, ni as u64, t as u64);
                        let table = generators::gen_product_pair(n, data_seed)?;
                        let res = run_test(
                            &table,
                            kind,
                            alpha,
                            &options.product_spec,
                            num_permutations,
                            tau,
                            mix_seed(seed, 104729 + ni as u64, t as u64),
                        )?;
                        Ok(res.reject_h0)
                    })
                    .collect();
                let mut rejected = 0usize;
                for o in outcomes {
                    rejected += o? as usize;
                }
                rates.push(rejected as f64 / trials as f64);
            }
            Ok(PowerCurve {
                x_values: ns.iter().map(|&n| n as f64).collect(),
                rates,
                trials,
                measure_kind: kind,
                tau,
            })
        }
    }
}

/// Rank-based (Mann-Whitney) AUC; ties contribute 1/2.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Argument("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels.iter().zip(&ranks).filter(|(&l, _)| l).map(|(_, &r)| r).sum();
    let auc = (rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64);
    Ok(auc)
}
