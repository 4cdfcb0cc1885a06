//! Subspace outlier detection: a dependence-scored levelwise (Apriori-style)
//! subspace search, LOF scoring inside the best subspaces, and max-fusion of
//! the per-subspace scores.
//!
//! High total dependence of a column subset means the subspace carries joint
//! structure an outlier can violate, so subspaces are ranked by NTC / NDTC
//! and LOF runs only in the top ones. The exponential subspace lattice is
//! bounded by a beam: each level keeps the `beam_width` best candidates and
//! only extensions that improve on their parent survive to the next level.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{seeded_rng, SampleTable};
use crate::entropy::Alpha;
use crate::error::{Error, Result};
use crate::inference::auc;
use crate::kernel::{gram, GramMatrix, KernelSpec};
use crate::measures::{dual_total_correlation_refs, total_correlation_refs, MeasureKind};

/// A candidate column subset with its dependence score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceCandidate {
    /// Sorted column indices, at least two.
    pub columns: Vec<usize>,
    pub score: f64,
    pub degenerate: bool,
}

/// Output of [`detect`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutlierResult {
    /// Max-fused LOF score per data point.
    pub scores: Vec<f64>,
    pub top_subspaces: Vec<SubspaceCandidate>,
    /// Present when labels were supplied.
    pub auc: Option<f64>,
}

/// Search configuration with the defaults used throughout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchParams {
    pub beam_width: usize,
    pub max_dim: usize,
    pub top_k: usize,
    pub lof_k: usize,
    /// Rows used for dependence scoring inside the search
    /// (`min(N, subsample_cap)` rows, one fixed subset per search).
    pub subsample_cap: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { beam_width: 50, max_dim: 5, top_k: 10, lof_k: 20, subsample_cap: 500 }
    }
}

/// Levelwise dependence-guided subspace search over the scalar columns of
/// the table. Returns the global `top_k` subspaces by score across all
/// levels, ties broken by lexicographic column order.
pub fn apriori_search(
    table: &SampleTable,
    measure_kind: MeasureKind,
    alpha: Alpha,
    spec: &KernelSpec,
    params: &SearchParams,
    seed: u64,
) -> Result<Vec<SubspaceCandidate>> {
    let d = table.dim();
    if d < 2 {
        return Err(Error::Argument(format!("subspace search needs d >= 2 columns, got {d}")));
    }
    if params.top_k == 0 {
        return Err(Error::Argument("top_k must be at least 1".into()));
    }
    if params.beam_width < params.top_k {
        return Err(Error::Argument(format!(
            "beam width {} must be at least top_k {}",
            params.beam_width, params.top_k
        )));
    }
    if !matches!(
        measure_kind,
        MeasureKind::NormalizedTotalCorrelation | MeasureKind::NormalizedDualTotalCorrelation
    ) {
        return Err(Error::Argument("subspace search scores with NTC or NDTC".into()));
    }

    // one fixed row subset for every score in this search
    let n = table.n();
    let score_table = if n > params.subsample_cap {
        let mut rng = seeded_rng(seed, 0);
        let mut idx = rand::seq::index::sample(&mut rng, n, params.subsample_cap).into_vec();
        idx.sort_unstable();
        table.subset_rows(&idx)?
    } else {
        table.clone()
    };

    // per-column Grams; a column whose bandwidth degenerates scores as
    // degenerate everywhere it appears
    let grams: Vec<Option<GramMatrix>> = (0..d)
        .into_par_iter()
        .map(|c| gram(&score_table.columns_matrix(&[c]), spec).ok())
        .collect();

    let score = |cols: &[usize]| -> Result<(f64, bool)> {
        let mut refs = Vec::with_capacity(cols.len());
        for &c in cols {
            match &grams[c] {
                Some(g) => refs.push(g),
                None => return Ok((0.0, true)),
            }
        }
        let report = match measure_kind {
            MeasureKind::NormalizedTotalCorrelation => total_correlation_refs(&refs, alpha, true)?,
            _ => dual_total_correlation_refs(&refs, alpha, true)?,
        };
        Ok((report.value, report.degenerate))
    };

    let score_batch = |batch: &[Vec<usize>]| -> Result<Vec<SubspaceCandidate>> {
        let scored: Vec<Result<SubspaceCandidate>> = batch
            .par_iter()
            .map(|cols| {
                let (s, degenerate) = score(cols)?;
                Ok(SubspaceCandidate { columns: cols.clone(), score: s, degenerate })
            })
            .collect();
        scored.into_iter().collect()
    };

    let mut pool: Vec<SubspaceCandidate> = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();

    // level 2: every pair
    let pairs: Vec<Vec<usize>> =
        (0..d).flat_map(|i| ((i + 1)..d).map(move |j| vec![i, j])).collect();
    for c in &pairs {
        seen.insert(c.clone());
    }
    let mut level = score_batch(&pairs)?;
    sort_candidates(&mut level);
    pool.extend(level.iter().cloned());
    level.truncate(params.beam_width);

    let mut dim = 2;
    while dim < params.max_dim {
        // extend each beam member by one unseen column
        let mut children: Vec<(Vec<usize>, f64)> = Vec::new();
        for parent in &level {
            for c in 0..d {
                if parent.columns.contains(&c) {
                    continue;
                }
                let mut cols = parent.columns.clone();
                cols.push(c);
                cols.sort_unstable();
                if seen.insert(cols.clone()) {
                    children.push((cols, parent.score));
                }
            }
        }
        if children.is_empty() {
            break;
        }
        let batch: Vec<Vec<usize>> = children.iter().map(|(c, _)| c.clone()).collect();
        let scored = score_batch(&batch)?;
        pool.extend(scored.iter().cloned());
        // only extensions that improve on their parent stay in the beam
        let mut next: Vec<SubspaceCandidate> = scored
            .into_iter()
            .zip(children.iter())
            .filter(|(cand, (_, parent_score))| !cand.degenerate && cand.score > *parent_score)
            .map(|(cand, _)| cand)
            .collect();
        if next.is_empty() {
            break;
        }
        sort_candidates(&mut next);
        next.truncate(params.beam_width);
        level = next;
        dim += 1;
    }

    sort_candidates(&mut pool);
    pool.truncate(params.top_k);
    Ok(pool)
}

fn sort_candidates(cands: &mut [SubspaceCandidate]) {
    cands.sort_by(|a, b| {
        a.degenerate
            .cmp(&b.degenerate)
            .then_with(|| b.score.partial_cmp(&a.score).unwrap())
            .then_with(|| a.columns.cmp(&b.columns))
    });
}

/// Standard LOF: k-distance neighborhoods (ties included), reachability
/// distances, local reachability density, ratio-of-densities score.
/// Reachability distances are floored at 1e-12 so exact duplicates keep the
/// density finite (a fully duplicated cloud scores 1 everywhere).
pub fn lof(points: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::Argument("LOF needs k >= 1".into()));
    }
    if k >= n {
        return Err(Error::Argument(format!("LOF needs k < N, got k = {k}, N = {n}")));
    }
    let d = points.ncols();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..d {
                let delta = points[(i, c)] - points[(j, c)];
                acc += delta * delta;
            }
            let v = acc.sqrt();
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    // k-distance and neighborhood (every point within the k-distance)
    let mut kdist = vec![0.0; n];
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            dist[i * n + a].partial_cmp(&dist[i * n + b]).unwrap().then(a.cmp(&b))
        });
        let kd = dist[i * n + order[k - 1]];
        kdist[i] = kd;
        neighbors.push(order.into_iter().filter(|&j| dist[i * n + j] <= kd).collect());
    }
    // local reachability density
    let mut lrd = vec![0.0; n];
    for i in 0..n {
        let mut sum = 0.0;
        for &o in &neighbors[i] {
            sum += kdist[o].max(dist[i * n + o]).max(1e-12);
        }
        lrd[i] = neighbors[i].len() as f64 / sum;
    }
    // ratio of neighbor densities to own density
    let mut scores = vec![0.0; n];
    for i in 0..n {
        let mut sum = 0.0;
        for &o in &neighbors[i] {
            sum += lrd[o];
        }
        scores[i] = sum / (neighbors[i].len() as f64 * lrd[i]);
    }
    Ok(scores)
}

/// Column-wise z-scoring (std floor 1e-12 keeps constant columns at zero).
pub fn zscore_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for c in 0..m.ncols() {
        let col = m.column(c);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt().max(1e-12);
        for i in 0..n {
            out[(i, c)] = (m[(i, c)] - mean) / sd;
        }
    }
    out
}

/// Full pipeline: subspace search, LOF on the z-scored columns of each top
/// subspace (full sample), per-point max fusion, optional AUC.
pub fn detect(
    table: &SampleTable,
    labels: Option<&[bool]>,
    measure_kind: MeasureKind,
    alpha: Alpha,
    spec: &KernelSpec,
    params: &SearchParams,
    seed: u64,
) -> Result<OutlierResult> {
    let n = table.n();
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::DimensionMismatch(format!("{} labels for {n} rows", l.len())));
        }
    }
    if params.lof_k >= n {
        return Err(Error::Argument(format!("lof_k = {} must be < N = {n}", params.lof_k)));
    }
    let top = apriori_search(table, measure_kind, alpha, spec, params, seed)?;
    let per_subspace: Vec<Result<Vec<f64>>> = top
        .par_iter()
        .map(|cand| {
            let points = zscore_columns(&table.columns_matrix(&cand.columns));
            lof(&points, params.lof_k)
        })
        .collect();
    let mut fused = vec![f64::NEG_INFINITY; n];
    for scores in per_subspace {
        let scores = scores?;
        for (f, s) in fused.iter_mut().zip(scores) {
            *f = f.max(s);
        }
    }
    if fused.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("no usable subspace produced LOF scores".into()));
    }
    let auc_value = match labels {
        Some(l) => Some(auc(&fused, l)?),
        None => None,
    };
    Ok(OutlierResult { scores: fused, top_subspaces: top, auc: auc_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generators;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn far_point_has_max_lof() {
        // 5x6 grid plus one far point
        let mut rows = Vec::new();
        for i in 0..5 {
            for j in 0..6 {
                rows.push([i as f64, j as f64]);
            }
        }
        rows.push([20.0, 20.0]);
        let m = DMatrix::from_fn(rows.len(), 2, |i, c| rows[i][c]);
        let scores = lof(&m, 5).unwrap();
        let far = scores[rows.len() - 1];
        assert!(far > 1.5, "far point LOF = {far}");
        for (i, &s) in scores.iter().enumerate().take(rows.len() - 1) {
            assert!(s < far, "grid point {i} scored {s} >= {far}");
        }
    }

    #[test]
    fn identical_points_score_one() {
        let m = DMatrix::from_element(12, 2, 3.5);
        let scores = lof(&m, 4).unwrap();
        for s in scores {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lof_invariant_to_translation_and_scale() {
        let mut rng = crate::dataset::seeded_rng(4, 0);
        let g = Normal::new(0.0, 1.0).unwrap();
        let m = DMatrix::from_fn(40, 3, |_, _| g.sample(&mut rng));
        let base = lof(&m, 6).unwrap();
        let transformed = m.map(|v| v * 3.75 + 11.0);
        let moved = lof(&transformed, 6).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn lof_argument_checks() {
        let m = DMatrix::from_element(5, 1, 0.0);
        assert!(lof(&m, 0).is_err());
        assert!(lof(&m, 5).is_err());
    }

    #[test]
    fn search_finds_the_dependent_pair() {
        // cols 0,1 tightly dependent, col 2 noise
        let mut rng = crate::dataset::seeded_rng(7, 0);
        let g = Normal::new(0.0, 1.0).unwrap();
        let n = 200;
        let mut values = DMatrix::zeros(n, 3);
        for i in 0..n {
            let t: f64 = g.sample(&mut rng);
            values[(i, 0)] = t;
            values[(i, 1)] = t + 0.05 * g.sample(&mut rng);
            values[(i, 2)] = g.sample(&mut rng);
        }
        let table = SampleTable::with_scalar_groups(values, None).unwrap();
        let params = SearchParams { beam_width: 3, max_dim: 3, top_k: 3, ..Default::default() };
        let top = apriori_search(
            &table,
            MeasureKind::NormalizedTotalCorrelation,
            Alpha::TWO,
            &KernelSpec::rbf_median(),
            &params,
            1,
        )
        .unwrap();
        assert_eq!(top[0].columns, vec![0, 1]);
        assert!(top[0].score > top.last().unwrap().score);
    }

    #[test]
    fn exhaustive_level2_when_beam_covers_all_pairs() {
        let t = generators::gen_data_a(80, 3, 3).unwrap();
        let params = SearchParams { beam_width: 3, max_dim: 2, top_k: 3, ..Default::default() };
        let top = apriori_search(
            &t,
            MeasureKind::NormalizedTotalCorrelation,
            Alpha::TWO,
            &KernelSpec::rbf_median(),
            &params,
            1,
        )
        .unwrap();
        assert_eq!(top.len(), 3); // all C(3,2) pairs scored
    }

    #[test]
    fn detect_is_deterministic_and_scores_every_point() {
        let t = generators::gen_data_b(120, 4, 9).unwrap();
        let params =
            SearchParams { beam_width: 4, max_dim: 3, top_k: 2, lof_k: 10, ..Default::default() };
        let a = detect(
            &t,
            None,
            MeasureKind::NormalizedTotalCorrelation,
            Alpha::TWO,
            &KernelSpec::rbf_median(),
            &params,
            5,
        )
        .unwrap();
        let b = detect(
            &t,
            None,
            MeasureKind::NormalizedTotalCorrelation,
            Alpha::TWO,
            &KernelSpec::rbf_median(),
            &params,
            5,
        )
        .unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.scores.len(), 120);
        assert!(a.auc.is_none());
    }

    #[test]
    fn search_rejects_bad_arguments() {
        let t = generators::gen_data_a(32, 3, 1).unwrap();
        let bad = SearchParams { beam_width: 1, top_k: 5, ..Default::default() };
        assert!(apriori_search(
            &t,
            MeasureKind::NormalizedTotalCorrelation,
            Alpha::TWO,
            &KernelSpec::rbf_median(),
            &bad,
            0
        )
        .is_err());
        let single = t.select_columns(&[0]).unwrap();
        assert!(apriori_search(
            &single,
            MeasureKind::NormalizedTotalCorrelation,
            Alpha::TWO,
            &KernelSpec::rbf_median(),
            &SearchParams::default(),
            0
        )
        .is_err());
    }
}
