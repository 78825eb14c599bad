//! Measurement suite: linear probing, alignment quality, discriminability,
//! multiple-choice evaluation with a confusion matrix, and 2-D export.
//!
//! Discriminability uses cosine-centroid definitions:
//! `inter` is the mean over class pairs of `1 - cos(centroid_i, centroid_j)`
//! and `intra` the mean over classes of the mean `1 - cos(x, centroid)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AlignmentDataset, Split};
use crate::model::{ModelError, ProjectionModel};
use crate::numerics::{cosine_slices, DegeneratePolicy, Matrix, NumericsError};

#[derive(Debug, thiserror::Error)]
pub enum DiagError {
    #[error("class {class} has no training samples")]
    DegenerateLabels { class: usize },
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },
    #[error("choices {choices} out of range 1..={classes}")]
    ChoicesOutOfRange { choices: usize, classes: usize },
    #[error("covariance has rank below 2")]
    DegenerateCovariance,
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("{what}: expected {expected}, found {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 500, lr: 0.1 }
    }
}

fn check_labels(feats: &Matrix, labels: &[usize], what: &'static str) -> Result<(), DiagError> {
    if feats.rows() != labels.len() {
        return Err(DiagError::DimMismatch { what, expected: feats.rows(), found: labels.len() });
    }
    Ok(())
}

/// Multinomial logistic regression by full-batch gradient descent from zero
/// weights; returns test top-1 accuracy.
pub fn linear_probe(
    train: &Matrix,
    train_labels: &[usize],
    test: &Matrix,
    test_labels: &[usize],
    cfg: ProbeConfig,
) -> Result<f64, DiagError> {
    check_labels(train, train_labels, "train labels")?;
    check_labels(test, test_labels, "test labels")?;
    if test.cols() != train.cols() {
        return Err(DiagError::DimMismatch { what: "test features", expected: train.cols(), found: test.cols() });
    }
    if test.rows() == 0 {
        return Err(DiagError::TooFewSamples { needed: 1, found: 0 });
    }
    let classes = train_labels.iter().chain(test_labels).max().map_or(0, |m| m + 1);
    let mut seen = vec![false; classes];
    for &l in train_labels {
        seen[l] = true;
    }
    if let Some(class) = seen.iter().position(|s| !s) {
        return Err(DiagError::DegenerateLabels { class });
    }
    if classes < 2 {
        return Err(DiagError::DegenerateLabels { class: 1 });
    }

    let (n, d) = train.shape();
    // weights d×C, bias C
    let mut w = vec![0.0; d * classes];
    let mut b = vec![0.0; classes];
    let mut probs = vec![0.0; classes];
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; d * classes];
        let mut gb = vec![0.0; classes];
        for (i, &y) in train_labels.iter().enumerate() {
            let x = train.row(i);
            for (c, p) in probs.iter_mut().enumerate() {
                *p = b[c] + x.iter().enumerate().map(|(j, xj)| xj * w[j * classes + c]).sum::<f64>();
            }
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for p in probs.iter_mut() {
                *p = (*p - max).exp();
                z += *p;
            }
            for (c, p) in probs.iter_mut().enumerate() {
                *p /= z;
                let delta = *p - f64::from(u8::from(c == y));
                gb[c] += delta;
                for (j, xj) in x.iter().enumerate() {
                    gw[j * classes + c] += delta * xj;
                }
            }
        }
        let step = cfg.lr / n as f64;
        w.iter_mut().zip(&gw).for_each(|(wi, gi)| *wi -= step * gi);
        b.iter_mut().zip(&gb).for_each(|(bi, gi)| *bi -= step * gi);
    }
    let correct = test_labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let x = test.row(i);
            let score = |c: usize| b[c] + x.iter().enumerate().map(|(j, xj)| xj * w[j * classes + c]).sum::<f64>();
            argmax((0..classes).map(score)) == y
        })
        .count();
    Ok(correct as f64 / test_labels.len() as f64)
}

/// Lenient cosine: zero-norm rows score 0. Callers have checked dims.
fn cos(a: &[f64], b: &[f64]) -> f64 {
    cosine_slices(a, b, DegeneratePolicy::Lenient).unwrap_or(0.0)
}

/// First index of the maximum; earlier indices win ties.
fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

fn class_members(labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>, DiagError> {
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(DiagError::DimMismatch { what: "label", expected: classes, found: l });
        }
        members[l].push(i);
    }
    if let Some(class) = members.iter().position(Vec::is_empty) {
        return Err(DiagError::EmptyClass { class });
    }
    Ok(members)
}

/// Per-class mean cosine between each object row and its category row,
/// averaged over classes. `categories` has one row per class.
pub fn alignment_quality_raw(objects: &Matrix, labels: &[usize], categories: &Matrix) -> Result<f64, DiagError> {
    check_labels(objects, labels, "object labels")?;
    if objects.cols() != categories.cols() {
        return Err(DiagError::DimMismatch { what: "category dim", expected: objects.cols(), found: categories.cols() });
    }
    let members = class_members(labels, categories.rows())?;
    let per_class: Vec<f64> = members
        .iter()
        .enumerate()
        .map(|(c, ids)| {
            ids.iter().map(|&i| cos(objects.row(i), categories.row(c))).sum::<f64>() / ids.len() as f64
        })
        .collect();
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Alignment quality of the projected samples in one split.
pub fn alignment_quality(ds: &AlignmentDataset, model: &ProjectionModel, split: Split) -> Result<f64, DiagError> {
    let ids = ds.split_ids(split);
    let objects = model.project_objects(&ds.object_matrix(&ids))?;
    let categories = model.project_categories(&ds.table().embedding_matrix())?;
    alignment_quality_raw(&objects, &ds.labels(&ids), &categories)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discriminability {
    pub inter_class_distance: f64,
    pub intra_class_variance: f64,
}

pub fn discriminability(embeddings: &Matrix, labels: &[usize]) -> Result<Discriminability, DiagError> {
    check_labels(embeddings, labels, "labels")?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(DiagError::EmptyClass { class: classes });
    }
    let members = class_members(labels, classes)?;
    let d = embeddings.cols();
    let centroids: Vec<Vec<f64>> = members
        .iter()
        .map(|ids| {
            let mut c = vec![0.0; d];
            for &i in ids {
                c.iter_mut().zip(embeddings.row(i)).for_each(|(a, x)| *a += x);
            }
            c.iter_mut().for_each(|a| *a /= ids.len() as f64);
            c
        })
        .collect();
    let mut inter = 0.0;
    let mut pairs = 0usize;
    for i in 0..classes {
        for j in i + 1..classes {
            inter += 1.0 - cos(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }
    let intra = members
        .iter()
        .zip(&centroids)
        .map(|(ids, c)| ids.iter().map(|&i| 1.0 - cos(embeddings.row(i), c)).sum::<f64>() / ids.len() as f64)
        .sum::<f64>()
        / classes as f64;
    Ok(Discriminability {
        inter_class_distance: inter / pairs as f64,
        intra_class_variance: intra,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choices {
    Count(usize),
    All,
}

impl std::str::FromStr for Choices {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::All);
        }
        s.parse().map(Self::Count).map_err(|_| format!("expected a count or `all`, got {s:?}"))
    }
}

impl std::fmt::Display for Choices {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Count(n) => write!(f, "{n}"),
            Self::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub per_class_accuracy: Vec<f64>,
    pub choices: Choices,
    /// One candidate per question makes accuracy trivially 1.
    pub degenerate: bool,
}

/// Multiple-choice evaluation on raw object rows against per-class
/// candidate rows: argmax cosine over the true class plus seeded
/// distractors. Ties go to the lower category id.
pub fn evaluate_mc_raw(
    objects: &Matrix,
    labels: &[usize],
    categories: &Matrix,
    choices: Choices,
    seed: u64,
) -> Result<McResult, DiagError> {
    check_labels(objects, labels, "object labels")?;
    let classes = categories.rows();
    let count = match choices {
        Choices::All => classes,
        Choices::Count(n) if (1..=classes).contains(&n) => n,
        Choices::Count(n) => return Err(DiagError::ChoicesOutOfRange { choices: n, classes }),
    };
    if labels.is_empty() {
        return Err(DiagError::TooFewSamples { needed: 1, found: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(DiagError::DimMismatch { what: "label", expected: classes, found: y });
        }
        let mut candidates: Vec<usize> = if count == classes {
            (0..classes).collect()
        } else {
            let others: Vec<usize> = (0..classes).filter(|&c| c != y).collect();
            let mut picked: Vec<usize> = others.choose_multiple(&mut rng, count - 1).copied().collect();
            picked.push(y);
            picked
        };
        candidates.sort_unstable();
        let x = objects.row(i);
        let best = candidates[argmax(candidates.iter().map(|&c| cos(x, categories.row(c))))];
        confusion[y][best] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: u64 = row.iter().sum();
            if n == 0 { 0.0 } else { row[c] as f64 / n as f64 }
        })
        .collect();
    Ok(McResult {
        accuracy: trace as f64 / total as f64,
        confusion,
        per_class_accuracy,
        choices,
        degenerate: count == 1,
    })
}

/// Multiple-choice evaluation of the test split through the model.
pub fn evaluate_mc(ds: &AlignmentDataset, model: &ProjectionModel, choices: Choices, seed: u64) -> Result<McResult, DiagError> {
    let ids = ds.split_ids(Split::Test);
    let objects = model.project_objects(&ds.object_matrix(&ids))?;
    let categories = model.project_categories(&ds.table().embedding_matrix())?;
    evaluate_mc_raw(&objects, &ds.labels(&ids), &categories, choices, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportMethod {
    #[default]
    Pca2d,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Method actually used; differs from the request after a fallback.
    pub method: ExportMethod,
    pub coords: Matrix,
    pub labels: Vec<usize>,
    /// Covariance eigenvalues (population normalization), descending. PCA only.
    pub eigenvalues: Vec<f64>,
    pub degenerate_fallback: bool,
}

impl Projection {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label");
        for j in 0..self.coords.cols() {
            let _ = write!(out, "\t{}{}", if self.method == ExportMethod::Pca2d { "pc" } else { "x" }, j + 1);
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            let _ = write!(out, "{l}");
            for v in self.coords.row(i) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Top-2 principal component scores. Each component's first nonzero
/// loading is positive.
pub fn pca2d(embeddings: &Matrix) -> Result<(Matrix, Vec<f64>), DiagError> {
    let (n, d) = embeddings.shape();
    if n < 2 {
        return Err(DiagError::TooFewSamples { needed: 2, found: n });
    }
    if d < 2 {
        return Err(DiagError::DegenerateCovariance);
    }
    let x = nalgebra::DMatrix::from_row_slice(n, d, embeddings.as_slice());
    let mean = x.row_mean();
    let centered = nalgebra::DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let tol = 1e-12 * eigenvalues[0].max(1.0);
    if eigenvalues[1] <= tol {
        return Err(DiagError::DegenerateCovariance);
    }
    let mut coords = Matrix::zeros(n, 2);
    for (k, &col) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        for i in 0..n {
            let s: f64 = (0..d).map(|j| centered[(i, j)] * v[j]).sum();
            coords.set(i, k, s);
        }
    }
    Ok((coords, eigenvalues))
}

/// Plot-ready table; a rank-deficient PCA falls back to raw vectors with
/// `degenerate_fallback` set.
pub fn export_projection(embeddings: &Matrix, labels: &[usize], method: ExportMethod) -> Result<Projection, DiagError> {
    check_labels(embeddings, labels, "labels")?;
    if embeddings.rows() < 2 {
        return Err(DiagError::TooFewSamples { needed: 2, found: embeddings.rows() });
    }
    let raw = |fallback| Projection {
        method: ExportMethod::Raw,
        coords: embeddings.clone(),
        labels: labels.to_vec(),
        eigenvalues: Vec::new(),
        degenerate_fallback: fallback,
    };
    match method {
        ExportMethod::Raw => Ok(raw(false)),
        ExportMethod::Pca2d => match pca2d(embeddings) {
            Ok((coords, eigenvalues)) => Ok(Projection {
                method: ExportMethod::Pca2d,
                coords,
                labels: labels.to_vec(),
                eigenvalues,
                degenerate_fallback: false,
            }),
            Err(DiagError::DegenerateCovariance) => Ok(raw(true)),
            Err(e) => Err(e),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Test accuracy of a linear probe per feature source.
    pub probe_accuracy: BTreeMap<String, f64>,
    pub alignment_quality: f64,
    pub inter_class_distance: f64,
    pub intra_class_variance: f64,
    /// Names the discriminability formulas used.
    pub discriminability_definition: String,
    pub mc_accuracy: f64,
    pub mc_choices: Choices,
    pub mc_degenerate: bool,
    pub confusion: Vec<Vec<u64>>,
    pub per_class_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub choices: Choices,
    pub seed: u64,
    /// `None` skips probing.
    pub probe: Option<ProbeConfig>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            choices: Choices::All,
            seed: crate::dataset::DEFAULT_SEED,
            probe: Some(ProbeConfig::default()),
        }
    }
}

/// Full report on the test split through `model`.
pub fn metrics_report(ds: &AlignmentDataset, model: &ProjectionModel, cfg: &ReportConfig) -> Result<MetricsReport, DiagError> {
    let test_ids = ds.split_ids(Split::Test);
    let test_labels = ds.labels(&test_ids);
    let test_raw = ds.object_matrix(&test_ids);
    let test_proj = model.project_objects(&test_raw)?;
    let categories = model.project_categories(&ds.table().embedding_matrix())?;

    let mut probe_accuracy = BTreeMap::new();
    if let Some(p) = cfg.probe {
        let train_ids = ds.split_ids(Split::Train);
        let train_labels = ds.labels(&train_ids);
        let train_raw = ds.object_matrix(&train_ids);
        let train_proj = model.project_objects(&train_raw)?;
        probe_accuracy.insert("raw_object".into(), linear_probe(&train_raw, &train_labels, &test_raw, &test_labels, p)?);
        probe_accuracy.insert("projected_object".into(), linear_probe(&train_proj, &train_labels, &test_proj, &test_labels, p)?);
    }
    let disc = discriminability(&test_proj, &test_labels)?;
    let mc = evaluate_mc_raw(&test_proj, &test_labels, &categories, cfg.choices, cfg.seed)?;
    Ok(MetricsReport {
        probe_accuracy,
        alignment_quality: alignment_quality_raw(&test_proj, &test_labels, &categories)?,
        inter_class_distance: disc.inter_class_distance,
        intra_class_variance: disc.intra_class_variance,
        discriminability_definition: "cosine-centroid: inter = mean(1 - cos(centroid_i, centroid_j)), intra = mean(1 - cos(x, centroid))".into(),
        mc_accuracy: mc.accuracy,
        mc_choices: mc.choices,
        mc_degenerate: mc.degenerate,
        confusion: mc.confusion,
        per_class_accuracy: mc.per_class_accuracy,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `metric<TAB>value` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for (k, v) in &self.probe_accuracy {
            let _ = writeln!(out, "probe_accuracy.{k}\t{v}");
        }
        let _ = writeln!(out, "alignment_quality\t{}", self.alignment_quality);
        let _ = writeln!(out, "inter_class_distance\t{}", self.inter_class_distance);
        let _ = writeln!(out, "intra_class_variance\t{}", self.intra_class_variance);
        let _ = writeln!(out, "mc_accuracy\t{}", self.mc_accuracy);
        let _ = writeln!(out, "mc_choices\t{}", self.mc_choices);
        let _ = writeln!(out, "mc_degenerate\t{}", self.mc_degenerate);
        for (c, a) in self.per_class_accuracy.iter().enumerate() {
            let _ = writeln!(out, "per_class_accuracy.{c}\t{a}");
        }
        out
    }

    /// Dense integer grid, one whitespace-separated row per true class.
    pub fn confusion_grid(&self) -> String {
        self.confusion
            .iter()
            .map(|row| row.iter().map(u64::to_string).collect::<Vec<_>>().join(" ") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn probe_separable_two_class() {
        let train = m(4, 2, &[1.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0, 0.0]);
        let acc = linear_probe(&train, &[0, 0, 1, 1], &train, &[0, 0, 1, 1], ProbeConfig::default()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn probe_rejects_missing_train_class() {
        let x = m(2, 1, &[1.0, 2.0]);
        assert!(matches!(
            linear_probe(&x, &[0, 0], &x, &[0, 1], ProbeConfig::default()),
            Err(DiagError::DegenerateLabels { class: 1 })
        ));
    }

    #[test]
    fn alignment_identities() {
        let cats = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let objs = m(3, 2, &[2.0, 0.0, 0.5, 0.0, 0.0, 3.0]);
        assert!((alignment_quality_raw(&objs, &[0, 0, 1], &cats).unwrap() - 1.0).abs() < 1e-12);
        let orth = m(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(alignment_quality_raw(&orth, &[0, 1], &cats).unwrap().abs() < 1e-12);
        assert!(matches!(alignment_quality_raw(&objs, &[0, 0, 0], &cats), Err(DiagError::EmptyClass { class: 1 })));
    }

    #[test]
    fn discriminability_identities() {
        let x = m(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 2.0]);
        let d = discriminability(&x, &[0, 0, 1, 1]).unwrap();
        assert!((d.inter_class_distance - 1.0).abs() < 1e-12);
        assert!(d.intra_class_variance.abs() < 1e-12);
        let dup = m(4, 2, &[1.0, 0.2, 0.5, 0.9, 1.0, 0.2, 0.5, 0.9]);
        assert!(discriminability(&dup, &[0, 0, 1, 1]).unwrap().inter_class_distance.abs() < 1e-12);
        // relabeling leaves both statistics unchanged
        let y = m(4, 2, &[1.0, 0.1, 0.9, 0.0, 0.2, 2.0, 0.0, 1.8]);
        let a = discriminability(&y, &[0, 0, 1, 1]).unwrap();
        let b = discriminability(&y, &[1, 1, 0, 0]).unwrap();
        assert!((a.inter_class_distance - b.inter_class_distance).abs() < 1e-15);
        assert!((a.intra_class_variance - b.intra_class_variance).abs() < 1e-15);
    }

    #[test]
    fn mc_perfect_and_degenerate() {
        let cats = m(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let labels = [0, 1, 2, 2];
        let objs = m(4, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let r = evaluate_mc_raw(&objs, &labels, &cats, Choices::All, 0).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        let wrong = m(4, 3, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let one = evaluate_mc_raw(&wrong, &labels, &cats, Choices::Count(1), 0).unwrap();
        assert_eq!(one.accuracy, 1.0);
        assert!(one.degenerate);
        assert!(matches!(
            evaluate_mc_raw(&objs, &labels, &cats, Choices::Count(4), 0),
            Err(DiagError::ChoicesOutOfRange { choices: 4, classes: 3 })
        ));
        assert!(evaluate_mc_raw(&objs, &labels, &cats, Choices::Count(0), 0).is_err());
    }

    #[test]
    fn mc_rows_sum_to_class_counts() {
        let cats = m(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let objs = m(5, 2, &[0.3, 0.2, -0.1, 0.9, 0.5, -0.5, -0.3, -0.2, 0.7, 0.7]);
        let labels = [0, 1, 2, 2, 1];
        let r = evaluate_mc_raw(&objs, &labels, &cats, Choices::Count(2), 11).unwrap();
        let sums: Vec<u64> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(sums, vec![1, 2, 2]);
    }

    #[test]
    fn pca_axis_aligned_ellipse() {
        let pts = m(4, 2, &[3.0, 0.0, -3.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let (coords, eig) = pca2d(&pts).unwrap();
        assert!((eig[0] - 4.5).abs() < 1e-12 && (eig[1] - 0.5).abs() < 1e-12);
        // first component is the x axis with positive loading
        assert!((coords.get(0, 0) - 3.0).abs() < 1e-12);
        assert!(coords.get(0, 1).abs() < 1e-12);
        assert!((coords.get(2, 1).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_degenerate_falls_back() {
        let pts = m(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(pca2d(&pts), Err(DiagError::DegenerateCovariance)));
        let p = export_projection(&pts, &[0, 0, 1], ExportMethod::Pca2d).unwrap();
        assert!(p.degenerate_fallback);
        assert_eq!(p.method, ExportMethod::Raw);
        assert!(p.to_tsv().starts_with("label\tx1\tx2\n"));
    }

    #[test]
    fn choices_parse() {
        assert_eq!("all".parse::<Choices>().unwrap(), Choices::All);
        assert_eq!("4".parse::<Choices>().unwrap(), Choices::Count(4));
        assert!("x".parse::<Choices>().is_err());
    }
}
