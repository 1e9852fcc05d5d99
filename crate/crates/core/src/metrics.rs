//! External cluster-validity indices from pair counts.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Cross-tabulation of predicted (rows) against reference (columns) labels.
/// Row and column order follow the sorted label values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pred_labels: Vec<usize>,
    true_labels: Vec<usize>,
    counts: Vec<Vec<u64>>,
    n: u64,
}

impl ContingencyTable {
    pub fn from_labels(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::InvalidArgument(format!(
                "label vectors differ in length ({} vs {})",
                pred.len(),
                truth.len()
            )));
        }
        let rows = index_of(pred);
        let cols = index_of(truth);
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for (p, t) in pred.iter().zip(truth) {
            counts[rows[p]][cols[t]] += 1;
        }
        Ok(Self {
            pred_labels: rows.into_keys().collect(),
            true_labels: cols.into_keys().collect(),
            counts,
            n: pred.len() as u64,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn pred_labels(&self) -> &[usize] {
        &self.pred_labels
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row][col]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.true_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn pair_counts(&self) -> PairCounts {
        let same_both: u64 = self.counts.iter().flatten().map(|&v| choose2(v)).sum();
        let same_pred: u64 = self.row_sums().into_iter().map(choose2).sum();
        let same_true: u64 = self.col_sums().into_iter().map(choose2).sum();
        let total = choose2(self.n);
        PairCounts {
            same_same: same_both,
            same_diff: same_pred - same_both,
            diff_same: same_true - same_both,
            diff_diff: total + same_both - same_pred - same_true,
        }
    }
}

fn index_of(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut map: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, 0)).collect();
    for (k, v) in map.values_mut().enumerate() {
        *v = k;
    }
    map
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Unordered-pair agreement counts between a prediction and a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    /// Together in both partitions.
    pub same_same: u64,
    /// Together in the prediction, apart in the reference.
    pub same_diff: u64,
    /// Apart in the prediction, together in the reference.
    pub diff_same: u64,
    pub diff_diff: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.same_same + self.same_diff + self.diff_same + self.diff_diff
    }
}

pub fn pair_counts(pred: &[usize], truth: &[usize]) -> Result<PairCounts> {
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("pair counts need at least two labels".into()));
    }
    Ok(ContingencyTable::from_labels(pred, truth)?.pair_counts())
}

/// Agreement indices; `None` where a denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indices {
    pub rand: Option<f64>,
    /// Hubert–Arabie adjusted Rand index.
    pub ha: Option<f64>,
    /// Morey–Agresti adjusted Rand index.
    pub ma: Option<f64>,
    /// Fowlkes–Mallows.
    pub fm: Option<f64>,
    pub jaccard: Option<f64>,
}

impl Indices {
    pub const NAMES: [&'static str; 5] = ["Rand", "HA", "MA", "FM", "Jaccard"];

    pub fn values(&self) -> [Option<f64>; 5] {
        [self.rand, self.ha, self.ma, self.fm, self.jaccard]
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Computes the five indices. When both partitions agree on every pair
/// (no discordant pairs) all indices are 1, including the degenerate
/// all-singletons case.
pub fn indices(pc: &PairCounts, ct: &ContingencyTable) -> Indices {
    let (a, b, c, d) = (
        pc.same_same as f64,
        pc.same_diff as f64,
        pc.diff_same as f64,
        pc.diff_diff as f64,
    );
    if pc.same_diff == 0 && pc.diff_same == 0 {
        return Indices {
            rand: Some(1.0),
            ha: Some(1.0),
            ma: Some(1.0),
            fm: Some(1.0),
            jaccard: Some(1.0),
        };
    }
    let m = a + b + c + d;
    let expected = (a + b) * (a + c) / m;
    let ha = ratio(a - expected, 0.5 * ((a + b) + (a + c)) - expected);

    // Squared-count sums recovered from pair counts: sum n^2 = 2 * pairs + N.
    let n = ct.n() as f64;
    let sum_ij = 2.0 * a + n;
    let sum_i = 2.0 * (a + b) + n;
    let sum_j = 2.0 * (a + c) + n;
    let chance = sum_i * sum_j / (n * n);
    let ma = ratio(sum_ij - chance, 0.5 * (sum_i + sum_j) - chance);

    Indices {
        rand: ratio(a + d, m),
        ha,
        ma,
        fm: ratio(a, ((a + b) * (a + c)).sqrt()),
        jaccard: ratio(a, a + b + c),
    }
}

pub fn compare(pred: &[usize], truth: &[usize]) -> Result<Indices> {
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("indices need at least two labels".into()));
    }
    let ct = ContingencyTable::from_labels(pred, truth)?;
    Ok(indices(&ct.pair_counts(), &ct))
}

/// Maps each predicted cluster to its most frequent reference class (ties go
/// to the smaller class label) and returns the fraction matched.
pub fn majority_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("accuracy needs at least one label".into()));
    }
    let ct = ContingencyTable::from_labels(pred, truth)?;
    let hits: u64 = ct
        .counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / ct.n() as f64)
}

/// The modal reference class for every predicted label.
pub fn majority_mapping(pred: &[usize], truth: &[usize]) -> Result<Vec<(usize, usize)>> {
    let ct = ContingencyTable::from_labels(pred, truth)?;
    Ok(ct
        .pred_labels
        .iter()
        .zip(&ct.counts)
        .map(|(&p, row)| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            (p, ct.true_labels[best])
        })
        .collect())
}
