// SPDX-License-Identifier: MIT OR Apache-2.0

//! ROC/AUC, threshold classification, slot-matrix averaging, projections
//! and summary statistics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    Empty,

    #[error("length mismatch: {0} scores, {1} labels")]
    LengthMismatch(usize, usize),

    #[error("need at least one positive and one negative instance")]
    SingleClass,

    #[error("non-finite value {0}")]
    NonFinite(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(&v) => Err(StatsError::NonFinite(v)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    /// Score threshold reached at each point (`+inf` for the origin).
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

/// ROC curve with one vertex per distinct score, and its trapezoidal area.
/// Higher scores rank as more positive; tied scores move along a diagonal,
/// which credits ties with one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores.len(), labels.len()));
    }
    check_finite(scores)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(StatsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let (x0, y0) = *points.last().unwrap();
        let (x1, y1) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
        thresholds.push(s);
    }
    Ok(RocCurve { points, thresholds, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub high_class: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Label → (correct, total).
    pub per_class: BTreeMap<String, (usize, usize)>,
    /// Label → (predicted high, predicted low).
    pub confusion: BTreeMap<String, (usize, usize)>,
}

/// Predicts `high_class` when `score >= t`, any other class otherwise.
/// An instance is correct when the prediction agrees with whether its label
/// is `high_class`.
pub fn threshold_classify(scores: &[f64], labels: &[String], t: f64, high_class: &str) -> Result<ThresholdResult> {
    if scores.is_empty() {
        return Err(StatsError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores.len(), labels.len()));
    }
    let mut per_class: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut confusion: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (s, l) in scores.iter().zip(labels) {
        let high = *s >= t;
        let ok = high == (l == high_class);
        correct += ok as usize;
        let e = per_class.entry(l.clone()).or_default();
        e.0 += ok as usize;
        e.1 += 1;
        let c = confusion.entry(l.clone()).or_default();
        if high {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
    }
    Ok(ThresholdResult {
        threshold: t,
        high_class: high_class.to_string(),
        correct,
        total: scores.len(),
        accuracy: correct as f64 / scores.len() as f64,
        per_class,
        confusion,
    })
}

/// A square matrix over named slot roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMatrix {
    pub roles: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SlotMatrix {
    pub fn new(roles: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != roles.len() || values.iter().any(|r| r.len() != roles.len()) {
            return Err(StatsError::Shape(format!(
                "{} roles but a {}-row matrix",
                roles.len(),
                values.len()
            )));
        }
        Ok(Self { roles, values })
    }

    pub fn dim(&self) -> usize {
        self.roles.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row][col]
    }
}

/// Position-wise mean of aligned matrices, with the diagonal replaced by the
/// mean global affinity of each slot (`globals[m][k]` for input `m`).
pub fn class_mean_matrix(matrices: &[SlotMatrix], globals: &[Vec<f64>]) -> Result<SlotMatrix> {
    let first = matrices.first().ok_or(StatsError::Empty)?;
    let k = first.dim();
    if globals.len() != matrices.len() {
        return Err(StatsError::Shape(format!(
            "{} matrices but {} global profiles",
            matrices.len(),
            globals.len()
        )));
    }
    for (m, g) in matrices.iter().zip(globals) {
        if m.roles != first.roles {
            return Err(StatsError::Shape(format!("roles {:?} vs {:?}", m.roles, first.roles)));
        }
        if g.len() != k {
            return Err(StatsError::Shape(format!("global profile of length {} for {k} roles", g.len())));
        }
    }
    let n = matrices.len() as f64;
    let mut values = vec![vec![0.0; k]; k];
    for (r, row) in values.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = if r == c {
                globals.iter().map(|g| g[r]).sum::<f64>() / n
            } else {
                matrices.iter().map(|m| m.values[r][c]).sum::<f64>() / n
            };
        }
    }
    SlotMatrix::new(first.roles.clone(), values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiff {
    pub row: String,
    pub col: String,
    pub row_index: usize,
    pub col_index: usize,
    pub abs_diff: f64,
}

/// The `k` cells with the largest `|a - b|`, ties in row-major order.
pub fn top_k_diff(a: &SlotMatrix, b: &SlotMatrix, k: usize) -> Result<Vec<CellDiff>> {
    if a.roles != b.roles || a.values.len() != b.values.len() {
        return Err(StatsError::Shape(format!("roles {:?} vs {:?}", a.roles, b.roles)));
    }
    let n = a.dim();
    if k > n * n {
        return Err(StatsError::Invalid(format!("k = {k} exceeds {} cells", n * n)));
    }
    let mut cells: Vec<CellDiff> = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| CellDiff {
            row: a.roles[r].clone(),
            col: a.roles[c].clone(),
            row_index: r,
            col_index: c,
            abs_diff: (a.values[r][c] - b.values[r][c]).abs(),
        })
        .collect();
    // stable sort keeps row-major order among equal differences
    cells.sort_by(|x, y| y.abs_diff.total_cmp(&x.abs_diff));
    cells.truncate(k);
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// One row of `out_dims` coordinates per input point.
    pub coords: Vec<Vec<f64>>,
    /// Principal axes, one unit vector per output dimension.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Mean-centred PCA. Each component's largest-magnitude loading is made
/// positive (first such loading on ties). All-identical points project to
/// zeros.
pub fn pca_project(features: &[Vec<f64>], out_dims: usize) -> Result<Projection> {
    if features.len() < 2 {
        return Err(StatsError::Invalid("need at least two points".into()));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(StatsError::Shape("ragged feature vectors".into()));
    }
    if out_dims == 0 || d < out_dims {
        return Err(StatsError::Invalid(format!("cannot project {d} dims onto {out_dims}")));
    }
    for f in features {
        check_finite(f)?;
    }
    let n = features.len();
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().sum();
    if total <= f64::EPSILON * d as f64 {
        log::warn!("all points identical; projection is zero");
        return Ok(Projection {
            coords: vec![vec![0.0; out_dims]; n],
            components: (0..out_dims)
                .map(|k| (0..d).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
                .collect(),
            explained_variance_ratio: vec![0.0; out_dims],
        });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(out_dims);
    let mut ratios = Vec::with_capacity(out_dims);
    for &k in order.iter().take(out_dims) {
        let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
        let mut lead = 0;
        for j in 1..d {
            if v[j].abs() > v[lead].abs() + 1e-12 {
                lead = j;
            }
        }
        if v[lead] < 0.0 {
            v = -v;
        }
        ratios.push(eig.eigenvalues[k].max(0.0) / total);
        components.push(v);
    }
    let coords = (0..n)
        .map(|i| components.iter().map(|c| centered.row(i).dot(&c.transpose())).collect())
        .collect();
    Ok(Projection {
        coords,
        components: components.into_iter().map(|c| c.iter().copied().collect()).collect(),
        explained_variance_ratio: ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSeparation {
    pub weights: Vec<f64>,
    pub threshold: f64,
    /// Training accuracy of `w·x >= threshold` predicting the positive class.
    pub accuracy: f64,
}

/// Fisher linear discriminant fitted on all points, with the threshold that
/// maximises training accuracy.
pub fn linear_separability(features: &[Vec<f64>], labels: &[bool]) -> Result<LinearSeparation> {
    if features.len() != labels.len() {
        return Err(StatsError::LengthMismatch(features.len(), labels.len()));
    }
    let pos: Vec<&Vec<f64>> = features.iter().zip(labels).filter(|(_, &l)| l).map(|(f, _)| f).collect();
    let neg: Vec<&Vec<f64>> = features.iter().zip(labels).filter(|(_, &l)| !l).map(|(f, _)| f).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(StatsError::SingleClass);
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(StatsError::Shape("ragged feature vectors".into()));
    }
    let mean_of = |rows: &[&Vec<f64>]| DVector::from_fn(d, |j, _| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64);
    let (mp, mn) = (mean_of(&pos), mean_of(&neg));
    let mut sw = DMatrix::<f64>::zeros(d, d);
    for (rows, m) in [(&pos, &mp), (&neg, &mn)] {
        for r in rows.iter() {
            let c = DVector::from_fn(d, |j, _| r[j] - m[j]);
            sw += &c * c.transpose();
        }
    }
    let ridge = 1e-9 * (sw.trace() / d as f64).max(1e-12);
    for j in 0..d {
        sw[(j, j)] += ridge;
    }
    let diff = &mp - &mn;
    let w = sw.lu().solve(&diff).unwrap_or(diff);
    let proj: Vec<f64> = features.iter().map(|f| (0..d).map(|j| w[j] * f[j]).sum()).collect();

    let mut cuts: Vec<f64> = proj.clone();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(cuts.windows(2).map(|p| (p[0] + p[1]) / 2.0));
    candidates.push(f64::INFINITY);
    for t in candidates {
        let correct = proj.iter().zip(labels).filter(|(p, &l)| (**p >= t) == l).count();
        if correct > best.1 {
            best = (t, correct);
        }
    }
    Ok(LinearSeparation {
        weights: w.iter().copied().collect(),
        threshold: best.0,
        accuracy: best.1 as f64 / labels.len() as f64,
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

/// Tukey box-plot summary: whiskers reach the most extreme data within
/// 1.5 IQR of the quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    check_finite(values)?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence).collect();
    Ok(BoxStats {
        n: v.len(),
        min: v[0],
        q1,
        median: quantile_sorted(&v, 0.5),
        q3,
        max: v[v.len() - 1],
        whisker_low: inside[0],
        whisker_high: inside[inside.len() - 1],
        outliers: v.iter().copied().filter(|x| *x < lo_fence || *x > hi_fence).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

/// Fixed-width bins over `[lo, hi]`: left-closed, right-open, except the
/// last bin which also holds `hi`. Values outside the range are dropped.
pub fn histogram(values: &[f64], lo: f64, hi: f64, width: f64) -> Result<Vec<Bin>> {
    if !(width > 0.0) || !(hi > lo) {
        return Err(StatsError::Invalid(format!("range [{lo}, {hi}] with width {width}")));
    }
    check_finite(values)?;
    let n = ((hi - lo) / width - 1e-9).ceil().max(1.0) as usize;
    let mut bins: Vec<Bin> = (0..n)
        .map(|k| Bin {
            start: lo + k as f64 * width,
            end: (lo + (k + 1) as f64 * width).min(hi),
            count: 0,
        })
        .collect();
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        // relative slack so values printed as a bin edge land in the bin it opens
        let k = (((v - lo) / width + 1e-9).floor() as usize).min(n - 1);
        bins[k].count += 1;
    }
    Ok(bins)
}
