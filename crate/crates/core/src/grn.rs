//! Dependence-network inference: score every gene pair with a bivariate
//! measure, then rank candidate edges against a reference network by AUC.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::Alpha;
use crate::error::{Error, Result};
use crate::inference::auc;
use crate::kernel::{gram, KernelSpec};
use crate::measures::{hsic, mutual_information, MiNormalization};

/// Which statistic scores a gene pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairScoreKind {
    /// Normalized mutual information (max normalization).
    NmiMax,
    Hsic,
    /// Absolute Pearson correlation, the linear baseline.
    PearsonAbs,
}

/// Symmetric g x g matrix of pairwise dependence scores (diagonal unused).
#[derive(Debug, Clone)]
pub struct EdgeScoreMatrix {
    scores: DMatrix<f64>,
    names: Option<Vec<String>>,
}

impl EdgeScoreMatrix {
    pub fn genes(&self) -> usize {
        self.scores.nrows()
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// All unordered pairs `(i, j, score)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let g = self.genes();
        let mut out = Vec::with_capacity(g * (g - 1) / 2);
        for i in 0..g {
            for j in (i + 1)..g {
                out.push((i, j, self.scores[(i, j)]));
            }
        }
        out
    }
}

fn pearson_abs(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va < 1e-24 || vb < 1e-24 {
        return 0.0;
    }
    (cov / (va.sqrt() * vb.sqrt())).abs()
}

/// Score all gene pairs of an N x g expression matrix (columns = genes).
/// Constant genes contribute degenerate zero scores.
pub fn score_pairs(
    expressions: &DMatrix<f64>,
    names: Option<Vec<String>>,
    kind: PairScoreKind,
    alpha: Alpha,
    spec: &KernelSpec,
) -> Result<EdgeScoreMatrix> {
    let n = expressions.nrows();
    let g = expressions.ncols();
    if g < 2 {
        return Err(Error::Argument(format!("need at least 2 genes, got {g}")));
    }
    if n < 4 {
        return Err(Error::Argument(format!("need at least 4 samples, got {n}")));
    }
    if let Some(nm) = &names {
        if nm.len() != g {
            return Err(Error::Argument(format!("{} names for {g} genes", nm.len())));
        }
    }
    let columns: Vec<DMatrix<f64>> =
        (0..g).map(|c| DMatrix::from_fn(n, 1, |i, _| expressions[(i, c)])).collect();

    // per-gene Grams are cached for the NMI path; constant genes get None
    let grams = if kind == PairScoreKind::NmiMax {
        columns
            .iter()
            .map(|c| gram(c, spec).ok())
            .collect::<Vec<_>>()
    } else {
        Vec::new()
    };

    let pairs: Vec<(usize, usize)> =
        (0..g).flat_map(|i| ((i + 1)..g).map(move |j| (i, j))).collect();
    let scored: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| match kind {
            PairScoreKind::PearsonAbs => {
                Ok(pearson_abs(columns[i].as_slice(), columns[j].as_slice()))
            }
            PairScoreKind::Hsic => {
                if is_constant(columns[i].as_slice()) || is_constant(columns[j].as_slice()) {
                    return Ok(0.0);
                }
                Ok(hsic(&columns[i], &columns[j], spec)?.value)
            }
            PairScoreKind::NmiMax => match (&grams[i], &grams[j]) {
                (Some(a), Some(b)) => {
                    Ok(mutual_information(a, b, alpha, MiNormalization::Max)?.value)
                }
                _ => Ok(0.0),
            },
        })
        .collect();

    let mut scores = DMatrix::zeros(g, g);
    for (&(i, j), value) in pairs.iter().zip(scored) {
        let v = value?;
        scores[(i, j)] = v;
        scores[(j, i)] = v;
    }
    Ok(EdgeScoreMatrix { scores, names })
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Reference edge set over gene indices, `i < j` normalized.
pub type TruthEdges = HashSet<(usize, usize)>;

/// Parse a truth-edge CSV: rows `gene_i,gene_j,label` with 0/1 labels.
/// Genes may be named (resolved against `names`) or written as indices.
/// Label-0 rows are explicit non-edges and simply stay out of the set.
pub fn truth_edges_from_reader<R: Read>(reader: R, names: Option<&[String]>) -> Result<TruthEdges> {
    let mut csv_reader =
        csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let resolve = |token: &str, row: usize| -> Result<usize> {
        if let Some(names) = names {
            if let Some(idx) = names.iter().position(|n| n == token) {
                return Ok(idx);
            }
        }
        token.parse::<usize>().map_err(|_| Error::Parse {
            row,
            msg: format!("unknown gene '{token}'"),
        })
    };
    let mut edges = TruthEdges::new();
    for (idx, record) in csv_reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        if record.len() != 3 {
            return Err(Error::Parse { row, msg: format!("expected 3 fields, got {}", record.len()) });
        }
        let i = resolve(&record[0], row)?;
        let j = resolve(&record[1], row)?;
        if i == j {
            return Err(Error::Parse { row, msg: format!("self edge on gene {i}") });
        }
        let label = &record[2];
        match label {
            "1" => {
                edges.insert((i.min(j), i.max(j)));
            }
            "0" => {}
            other => {
                return Err(Error::Parse { row, msg: format!("label must be 0 or 1, got '{other}'") })
            }
        }
    }
    Ok(edges)
}

/// Load a truth-edge CSV from a path.
pub fn load_truth_edges<P: AsRef<Path>>(path: P, names: Option<&[String]>) -> Result<TruthEdges> {
    let file = std::fs::File::open(path)?;
    truth_edges_from_reader(file, names)
}

/// AUC of the score ranking over all unordered pairs, positives being the
/// truth edges. Needs at least one edge and one non-edge.
pub fn evaluate_network(scores: &EdgeScoreMatrix, truth: &TruthEdges) -> Result<f64> {
    let g = scores.genes();
    for &(i, j) in truth {
        if i >= g || j >= g {
            return Err(Error::Argument(format!("truth edge ({i},{j}) out of range for {g} genes")));
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, j, score) in scores.edges() {
        values.push(score);
        labels.push(truth.contains(&(i, j)));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Argument("truth must contain at least one edge and one non-edge".into()));
    }
    auc(&values, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::seeded_rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_columns_pearson_is_one() {
        let m = DMatrix::from_fn(8, 2, |i, _| i as f64 * 0.5);
        let s = score_pairs(&m, None, PairScoreKind::PearsonAbs, Alpha::TWO, &KernelSpec::rbf_median()).unwrap();
        assert!((s.scores()[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn functional_edge_outranks_noise_edges() {
        let mut rng = seeded_rng(5, 0);
        let g = Normal::new(0.0, 1.0).unwrap();
        let n = 100;
        let mut m = DMatrix::zeros(n, 3);
        for i in 0..n {
            let y1: f64 = g.sample(&mut rng);
            m[(i, 0)] = y1;
            m[(i, 1)] = y1.sin() + 0.1 * g.sample(&mut rng);
            m[(i, 2)] = g.sample(&mut rng);
        }
        let s = score_pairs(&m, None, PairScoreKind::NmiMax, Alpha::TWO, &KernelSpec::rbf_median()).unwrap();
        assert!(s.scores()[(0, 1)] > s.scores()[(0, 2)]);
        assert!(s.scores()[(0, 1)] > s.scores()[(1, 2)]);
        // symmetry
        for i in 0..3 {
            for j in 0..3 {
                assert!((s.scores()[(i, j)] - s.scores()[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_gene_scores_zero() {
        let mut m = DMatrix::zeros(16, 2);
        for i in 0..16 {
            m[(i, 0)] = i as f64;
            m[(i, 1)] = 2.0;
        }
        for kind in [PairScoreKind::NmiMax, PairScoreKind::Hsic, PairScoreKind::PearsonAbs] {
            let s = score_pairs(&m, None, kind, Alpha::TWO, &KernelSpec::rbf_median()).unwrap();
            assert!(s.scores()[(0, 1)].abs() < 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn perfect_ranking_has_unit_auc() {
        let mut scores = DMatrix::zeros(3, 3);
        scores[(0, 1)] = 0.9;
        scores[(1, 0)] = 0.9;
        scores[(0, 2)] = 0.1;
        scores[(2, 0)] = 0.1;
        scores[(1, 2)] = 0.2;
        scores[(2, 1)] = 0.2;
        let esm = EdgeScoreMatrix { scores, names: None };
        let truth: TruthEdges = [(0usize, 1usize)].into_iter().collect();
        assert_eq!(evaluate_network(&esm, &truth).unwrap(), 1.0);
        let truth_all: TruthEdges = [(0, 1), (0, 2), (1, 2)].into_iter().collect();
        assert!(evaluate_network(&esm, &truth_all).is_err());
    }

    #[test]
    fn truth_parser_resolves_names_and_indices() {
        let names = vec!["G1".to_string(), "G2".to_string(), "G3".to_string()];
        let edges =
            truth_edges_from_reader("G1,G2,1\nG2,G3,0\n0,2,1\n".as_bytes(), Some(&names)).unwrap();
        assert!(edges.contains(&(0, 1)));
        assert!(edges.contains(&(0, 2)));
        assert!(!edges.contains(&(1, 2)));
        assert!(truth_edges_from_reader("G1,G1,1\n".as_bytes(), Some(&names)).is_err());
        assert!(truth_edges_from_reader("G1,G2,x\n".as_bytes(), Some(&names)).is_err());
    }
}
