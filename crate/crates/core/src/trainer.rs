//! Local model training: standardization, High/Low-Performer labelling by
//! 2-means clustering of average scores, and a logistic-regression
//! classifier trained by full-batch gradient descent.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{average_score, compute_measure_vector, Granularity, ScoringError, TrackingSnapshot, Variable};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("feature matrix is empty")]
    EmptyMatrix,
    #[error("ragged feature matrix: row {row} has {found} columns, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("column count mismatch: expected {expected}, found {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("row/label count mismatch: {rows} rows, {labels} labels")]
    LabelCountMismatch { rows: usize, labels: usize },
    #[error("mixed granularities in one dataset")]
    MixedGranularity,
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid fold count {folds} for {rows} rows")]
    InvalidFolds { folds: usize, rows: usize },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {msg}")]
    CsvValue { row: usize, msg: String },
}

/// Which representation of a snapshot feeds the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// The eight raw tracking variables D,T,P,S,C,Q,R,F.
    #[default]
    Raw,
    /// The four learning measures.
    Measures,
}

impl FeatureSet {
    pub fn names(self) -> Vec<String> {
        match self {
            FeatureSet::Raw => Variable::ALL.iter().map(|v| v.symbol().to_string()).collect(),
            FeatureSet::Measures => ["conscientiousness", "motivation", "understanding", "engagement"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    granularity: Granularity,
    /// Set when the rows are the output of [`standardize_apply`].
    standardizer: Option<Standardizer>,
}

impl FeatureMatrix {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, granularity: Granularity) -> Result<Self, TrainError> {
        if rows.is_empty() {
            return Err(TrainError::EmptyMatrix);
        }
        let expected = feature_names.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != expected {
                return Err(TrainError::Ragged {
                    row: i,
                    expected,
                    found: r.len(),
                });
            }
        }
        Ok(FeatureMatrix {
            feature_names,
            rows,
            granularity,
            standardizer: None,
        })
    }

    pub fn from_snapshots(snapshots: &[TrackingSnapshot], features: FeatureSet) -> Result<Self, TrainError> {
        let first = snapshots.first().ok_or(TrainError::EmptyMatrix)?;
        let granularity = first.granularity;
        let mut rows = Vec::with_capacity(snapshots.len());
        for s in snapshots {
            if s.granularity != granularity {
                return Err(TrainError::MixedGranularity);
            }
            s.validate()?;
            rows.push(match features {
                FeatureSet::Raw => s.values().to_vec(),
                FeatureSet::Measures => compute_measure_vector(s)?.as_array().to_vec(),
            });
        }
        FeatureMatrix::new(features.names(), rows, granularity)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    /// Rows at the given indices, preserving standardization metadata.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            granularity: self.granularity,
            standardizer: self.standardizer.clone(),
        }
    }

    /// Concatenates matrices with identical column layout.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix, TrainError> {
        let first = parts.first().ok_or(TrainError::EmptyMatrix)?;
        let mut rows = Vec::new();
        for p in parts {
            if p.feature_names != first.feature_names {
                return Err(TrainError::ColumnMismatch {
                    expected: first.n_cols(),
                    found: p.n_cols(),
                });
            }
            if p.granularity != first.granularity {
                return Err(TrainError::MixedGranularity);
            }
            rows.extend(p.rows.iter().cloned());
        }
        FeatureMatrix::new(first.feature_names.clone(), rows, first.granularity)
    }
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n_cols: usize) -> Self {
        Standardizer {
            means: vec![0.0; n_cols],
            stddevs: vec![1.0; n_cols],
        }
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>, TrainError> {
        if row.len() != self.means.len() {
            return Err(TrainError::ColumnMismatch {
                expected: self.means.len(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.stddevs))
            .map(|(x, (m, s))| if *s == 0.0 { 0.0 } else { (x - m) / s })
            .collect())
    }
}

pub fn standardize_fit(m: &FeatureMatrix) -> Result<Standardizer, TrainError> {
    if m.rows.is_empty() {
        return Err(TrainError::EmptyMatrix);
    }
    let n = m.n_rows() as f64;
    let cols = m.n_cols();
    let mut means = vec![0.0; cols];
    for row in &m.rows {
        for (acc, x) in means.iter_mut().zip(row) {
            *acc += x;
        }
    }
    means.iter_mut().for_each(|x| *x /= n);
    let mut vars = vec![0.0; cols];
    for row in &m.rows {
        for ((acc, x), mean) in vars.iter_mut().zip(row).zip(&means) {
            *acc += (x - mean) * (x - mean);
        }
    }
    let stddevs = vars.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(Standardizer { means, stddevs })
}

/// Maps each cell to `(x - mean) / stddev`; zero-variance columns map to 0.
pub fn standardize_apply(z: &Standardizer, m: &FeatureMatrix) -> Result<FeatureMatrix, TrainError> {
    let rows = m
        .rows
        .iter()
        .map(|r| z.transform_row(r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureMatrix {
        feature_names: m.feature_names.clone(),
        rows,
        granularity: m.granularity,
        standardizer: Some(z.clone()),
    })
}

/// Fits on `m` and applies the result to it.
pub fn standardize(m: &FeatureMatrix) -> Result<FeatureMatrix, TrainError> {
    standardize_apply(&standardize_fit(m)?, m)
}

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-8;

/// A fitted 2-means model over average scores. Centroids are ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: [f64; 2],
    pub iterations_run: usize,
    pub inertia: f64,
    /// Inertia after each Lloyd assignment step.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        2
    }
}

fn nearest(x: f64, centroids: &[f64; 2]) -> usize {
    // ties go to the lower index
    if (x - centroids[1]).abs() < (x - centroids[0]).abs() {
        1
    } else {
        0
    }
}

fn inertia_of(points: &[f64], centroids: &[f64; 2], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(x, &a)| (x - centroids[a]).powi(2))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding for k = 2 on scalar data.
pub fn kmeans_fit(points: &[f64], seed: u64) -> Result<(ClusterModel, Vec<usize>), TrainError> {
    if points.iter().any(|x| !x.is_finite()) {
        return Err(TrainError::Degenerate("non-finite score".into()));
    }
    let distinct = points.iter().skip(1).any(|x| points.first().is_some_and(|f| x != f));
    if !distinct {
        return Err(TrainError::Degenerate(
            "k-means needs at least two distinct values".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = points[rng.gen_range(0..points.len())];
    let d2: Vec<f64> = points.iter().map(|x| (x - first).powi(2)).collect();
    let total: f64 = d2.iter().sum();
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut second = None;
    for (x, w) in points.iter().zip(&d2) {
        acc += w;
        if *w > 0.0 && acc > target {
            second = Some(*x);
            break;
        }
    }
    let second = second.unwrap_or_else(|| {
        *points
            .iter()
            .zip(&d2)
            .rev()
            .find(|(_, w)| **w > 0.0)
            .expect("distinct values exist")
            .0
    });

    let mut centroids = [first, second];
    let mut assignment = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations_run = 0;
    for it in 1..=KMEANS_MAX_ITER {
        for (a, x) in assignment.iter_mut().zip(points) {
            *a = nearest(*x, &centroids);
        }
        history.push(inertia_of(points, &centroids, &assignment));
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (x, &a) in points.iter().zip(&assignment) {
            sums[a] += x;
            counts[a] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..2 {
            if counts[c] > 0 {
                let next = sums[c] / counts[c] as f64;
                shift = shift.max((next - centroids[c]).abs());
                centroids[c] = next;
            }
        }
        iterations_run = it;
        if shift < KMEANS_TOL {
            break;
        }
    }
    for (a, x) in assignment.iter_mut().zip(points) {
        *a = nearest(*x, &centroids);
    }
    if centroids[0] > centroids[1] {
        centroids.swap(0, 1);
        assignment.iter_mut().for_each(|a| *a = 1 - *a);
    }
    let inertia = inertia_of(points, &centroids, &assignment);
    Ok((
        ClusterModel {
            centroids,
            iterations_run,
            inertia,
            inertia_history: history,
        },
        assignment,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerformanceLabel {
    LowPerformer = 0,
    HighPerformer = 1,
}

impl PerformanceLabel {
    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    pub fn from_value(v: u8) -> Option<Self> {
        match v {
            0 => Some(PerformanceLabel::LowPerformer),
            1 => Some(PerformanceLabel::HighPerformer),
            _ => None,
        }
    }
}

/// The cluster whose centroid is larger becomes `HighPerformer`.
pub fn map_labels(model: &ClusterModel, assignments: &[usize]) -> Vec<PerformanceLabel> {
    let high = if model.centroids[1] > model.centroids[0] { 1 } else { 0 };
    assignments
        .iter()
        .map(|&a| {
            if a == high {
                PerformanceLabel::HighPerformer
            } else {
                PerformanceLabel::LowPerformer
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_lambda: f64,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 200,
            l2_lambda: 1e-3,
            convergence_tol: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be non-negative");
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            return bad("convergence_tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_names: Vec<String>,
    pub trained_on: Granularity,
    pub standardizer: Standardizer,
    pub version: u64,
}

impl LogisticModel {
    pub fn zeros(feature_names: Vec<String>, granularity: Granularity) -> Self {
        let n = feature_names.len();
        LogisticModel {
            weights: vec![0.0; n],
            bias: 0.0,
            feature_names,
            trained_on: granularity,
            standardizer: Standardizer::identity(n),
            version: 0,
        }
    }

    /// Flat parameter vector: weights followed by the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), TrainError> {
        if params.len() != self.weights.len() + 1 {
            return Err(TrainError::ColumnMismatch {
                expected: self.weights.len() + 1,
                found: params.len(),
            });
        }
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias = b[0];
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn linear(params: &[f64], row: &[f64]) -> f64 {
    let (w, b) = params.split_at(params.len() - 1);
    w.iter().zip(row).map(|(a, x)| a * x).sum::<f64>() + b[0]
}

/// Mean cross-entropy plus `l2/2 * |w|^2` (bias unregularized) and its
/// gradient with respect to `[weights.., bias]`.
pub fn loss_and_gradient(params: &[f64], x: &FeatureMatrix, y: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let n = x.n_rows() as f64;
    let nw = params.len() - 1;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (row, &t) in x.rows.iter().zip(y) {
        let z = linear(params, row);
        loss += softplus(z) - t * z;
        let r = sigmoid(z) - t;
        for (g, xi) in grad[..nw].iter_mut().zip(row) {
            *g += r * xi;
        }
        grad[nw] += r;
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    let w = &params[..nw];
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (g, wi) in grad[..nw].iter_mut().zip(w) {
        *g += l2 * wi;
    }
    (loss, grad)
}

/// One full-batch gradient-descent step.
pub fn gradient_step(params: &[f64], x: &FeatureMatrix, y: &[f64], cfg: &TrainConfig) -> Vec<f64> {
    let (_, g) = loss_and_gradient(params, x, y, cfg.l2_lambda);
    params
        .iter()
        .zip(&g)
        .map(|(p, gi)| p - cfg.learning_rate * gi)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdRun {
    pub params: Vec<f64>,
    /// Loss at the start of each executed epoch, plus the final loss.
    pub loss_history: Vec<f64>,
    pub epochs_run: usize,
}

fn check_labels(x: &FeatureMatrix, labels: &[PerformanceLabel]) -> Result<Vec<f64>, TrainError> {
    if x.n_rows() != labels.len() {
        return Err(TrainError::LabelCountMismatch {
            rows: x.n_rows(),
            labels: labels.len(),
        });
    }
    if labels.len() < 2 || labels.iter().all(|l| *l == labels[0]) {
        return Err(TrainError::SingleClass);
    }
    Ok(labels.iter().map(|l| l.as_f64()).collect())
}

/// Full-batch gradient descent from `init`. Stops after `cfg.epochs` steps or
/// once an epoch improves the loss by less than `cfg.convergence_tol`.
pub fn gradient_descent(
    init: &[f64],
    x: &FeatureMatrix,
    labels: &[PerformanceLabel],
    cfg: &TrainConfig,
) -> Result<GdRun, TrainError> {
    cfg.validate()?;
    if init.len() != x.n_cols() + 1 {
        return Err(TrainError::ColumnMismatch {
            expected: x.n_cols() + 1,
            found: init.len(),
        });
    }
    let y = check_labels(x, labels)?;
    let mut params = init.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        let (loss, grad) = loss_and_gradient(&params, x, &y, cfg.l2_lambda);
        if !loss.is_finite() {
            return Err(TrainError::Diverged { epoch, loss });
        }
        if let Some(prev) = history.last() {
            if prev - loss < cfg.convergence_tol {
                history.push(loss);
                return Ok(GdRun {
                    params,
                    loss_history: history,
                    epochs_run,
                });
            }
        }
        history.push(loss);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        epochs_run = epoch + 1;
    }
    let (loss, _) = loss_and_gradient(&params, x, &y, cfg.l2_lambda);
    if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
        return Err(TrainError::Diverged {
            epoch: cfg.epochs,
            loss,
        });
    }
    history.push(loss);
    Ok(GdRun {
        params,
        loss_history: history,
        epochs_run,
    })
}

/// Trains a zero-initialized logistic model on (already standardized) rows.
pub fn train_logistic(
    m: &FeatureMatrix,
    labels: &[PerformanceLabel],
    cfg: &TrainConfig,
) -> Result<LogisticModel, TrainError> {
    let mut model = LogisticModel::zeros(m.feature_names.clone(), m.granularity);
    if let Some(z) = &m.standardizer {
        model.standardizer = z.clone();
    }
    let run = gradient_descent(&model.params(), m, labels, cfg)?;
    model.set_params(&run.params)?;
    Ok(model)
}

/// Probability of `HighPerformer` for a row in the model's feature space.
pub fn predict_proba(model: &LogisticModel, row: &[f64]) -> Result<f64, TrainError> {
    if row.len() != model.weights.len() {
        return Err(TrainError::ColumnMismatch {
            expected: model.weights.len(),
            found: row.len(),
        });
    }
    let z = model.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + model.bias;
    Ok(sigmoid(z))
}

pub fn predict(model: &LogisticModel, row: &[f64], threshold: f64) -> Result<PerformanceLabel, TrainError> {
    Ok(if predict_proba(model, row)? >= threshold {
        PerformanceLabel::HighPerformer
    } else {
        PerformanceLabel::LowPerformer
    })
}

/// Features ranked by |weight|, descending; ties keep column order.
pub fn feature_significance(model: &LogisticModel) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = model
        .feature_names
        .iter()
        .cloned()
        .zip(model.weights.iter().map(|w| w.abs()))
        .collect();
    // stable sort keeps column order among ties
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

pub fn accuracy(model: &LogisticModel, m: &FeatureMatrix, labels: &[PerformanceLabel]) -> Result<f64, TrainError> {
    if m.n_rows() != labels.len() {
        return Err(TrainError::LabelCountMismatch {
            rows: m.n_rows(),
            labels: labels.len(),
        });
    }
    let mut hits = 0usize;
    for (row, label) in m.rows.iter().zip(labels) {
        if predict(model, row, 0.5)? == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_rows: usize,
    /// `None` when the fold could not be trained.
    pub accuracy: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub mean_accuracy: f64,
    /// Population standard deviation over successful folds.
    pub std_accuracy: f64,
    pub per_fold: Vec<FoldResult>,
}

impl CvReport {
    pub fn failed_folds(&self) -> usize {
        self.per_fold.iter().filter(|f| f.accuracy.is_none()).count()
    }
}

/// Stratified fold assignment: each class is shuffled separately with the
/// seeded RNG, the classes are concatenated (Low first) and dealt
/// round-robin into folds.
pub fn stratified_folds(labels: &[PerformanceLabel], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(labels.len());
    for class in [PerformanceLabel::LowPerformer, PerformanceLabel::HighPerformer] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        order.extend(idx);
    }
    let mut assignment = vec![0; labels.len()];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % folds;
    }
    assignment
}

pub fn cross_validate(
    m: &FeatureMatrix,
    labels: &[PerformanceLabel],
    folds: usize,
    cfg: &TrainConfig,
) -> Result<CvReport, TrainError> {
    if m.n_rows() != labels.len() {
        return Err(TrainError::LabelCountMismatch {
            rows: m.n_rows(),
            labels: labels.len(),
        });
    }
    if folds < 2 || folds > m.n_rows() {
        return Err(TrainError::InvalidFolds {
            folds,
            rows: m.n_rows(),
        });
    }
    cfg.validate()?;
    let assignment = stratified_folds(labels, folds, cfg.seed);
    let mut per_fold = Vec::with_capacity(folds);
    for fold in 0..folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..m.n_rows()).partition(|&i| assignment[i] == fold);
        let train_labels: Vec<_> = train.iter().map(|&i| labels[i]).collect();
        let test_labels: Vec<_> = test.iter().map(|&i| labels[i]).collect();
        let result = train_logistic(&m.select(&train), &train_labels, cfg)
            .and_then(|model| accuracy(&model, &m.select(&test), &test_labels));
        per_fold.push(match result {
            Ok(acc) => FoldResult {
                fold,
                test_rows: test.len(),
                accuracy: Some(acc),
                failure: None,
            },
            Err(e) => FoldResult {
                fold,
                test_rows: test.len(),
                accuracy: None,
                failure: Some(e.to_string()),
            },
        });
    }
    let accs: Vec<f64> = per_fold.iter().filter_map(|f| f.accuracy).collect();
    let (mean, std) = if accs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    Ok(CvReport {
        mean_accuracy: mean,
        std_accuracy: std,
        per_fold,
    })
}

/// Locally prepared training data: standardized features plus the labels
/// derived by clustering each row's average measure score.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub matrix: FeatureMatrix,
    pub labels: Vec<PerformanceLabel>,
    pub cluster: ClusterModel,
    pub average_scores: Vec<f64>,
}

pub fn prepare_local(
    snapshots: &[TrackingSnapshot],
    features: FeatureSet,
    seed: u64,
) -> Result<PreparedData, TrainError> {
    let raw = FeatureMatrix::from_snapshots(snapshots, features)?;
    let average_scores = snapshots
        .iter()
        .map(|s| compute_measure_vector(s).map(|v| average_score(&v)))
        .collect::<Result<Vec<_>, _>>()?;
    let (cluster, assignment) = kmeans_fit(&average_scores, seed)?;
    let labels = map_labels(&cluster, &assignment);
    Ok(PreparedData {
        matrix: standardize(&raw)?,
        labels,
        cluster,
        average_scores,
    })
}

/// Everything the local training system reports for one granularity.
#[derive(Debug, Clone)]
pub struct LocalReport {
    pub model: LogisticModel,
    pub train_accuracy: f64,
    pub significance: Vec<(String, f64)>,
    pub cross_validation: CvReport,
    pub cluster: ClusterModel,
}

pub fn train_local(
    snapshots: &[TrackingSnapshot],
    features: FeatureSet,
    folds: usize,
    cfg: &TrainConfig,
) -> Result<LocalReport, TrainError> {
    let data = prepare_local(snapshots, features, cfg.seed)?;
    let model = train_logistic(&data.matrix, &data.labels, cfg)?;
    let train_accuracy = accuracy(&model, &data.matrix, &data.labels)?;
    let cross_validation = cross_validate(&data.matrix, &data.labels, folds, cfg)?;
    Ok(LocalReport {
        significance: feature_significance(&model),
        model,
        train_accuracy,
        cross_validation,
        cluster: data.cluster,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    learner_id: String,
    period_index: u32,
    #[serde(rename = "D")]
    d: f64,
    #[serde(rename = "T")]
    t: f64,
    #[serde(rename = "P")]
    p: f64,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "C")]
    c: f64,
    #[serde(rename = "Q")]
    q: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "F")]
    f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

fn count_field(row: usize, name: &str, v: f64) -> Result<u32, TrainError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
        Ok(v as u32)
    } else {
        Err(TrainError::CsvValue {
            row,
            msg: format!("{name} must be a non-negative integer, got {v}"),
        })
    }
}

/// A dataset read from CSV; `labels` is present only if every row had one.
#[derive(Debug, Clone)]
pub struct CsvDataset {
    pub snapshots: Vec<TrackingSnapshot>,
    pub labels: Option<Vec<PerformanceLabel>>,
}

/// Reads `learner_id,period_index,D,T,P,S,C,Q,R,F[,label]` rows.
pub fn read_snapshots_csv<R: Read>(reader: R, granularity: Granularity) -> Result<CsvDataset, TrainError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut snapshots = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let r = rec?;
        let s = TrackingSnapshot {
            learner_id: r.learner_id,
            period_index: r.period_index,
            granularity,
            logins_streak_days: count_field(i, "D", r.d)?,
            time_spent_hours: r.t,
            page_visits: count_field(i, "P", r.p)?,
            search_queries: count_field(i, "S", r.s)?,
            activity_completion_pct: r.c,
            quiz_avg_pct: r.q,
            reaction_ratio: r.r,
            feedback_avg: r.f,
        };
        s.validate().map_err(|e| TrainError::CsvValue {
            row: i,
            msg: e.to_string(),
        })?;
        snapshots.push(s);
        labels.push(r.label.map(|v| {
            PerformanceLabel::from_value(v).ok_or(TrainError::CsvValue {
                row: i,
                msg: format!("label must be 0 or 1, got {v}"),
            })
        }));
    }
    if snapshots.is_empty() {
        return Err(TrainError::EmptyMatrix);
    }
    let labels = if labels.iter().all(Option::is_some) {
        Some(labels.into_iter().map(|l| l.unwrap()).collect::<Result<Vec<_>, _>>()?)
    } else {
        None
    };
    Ok(CsvDataset { snapshots, labels })
}

pub fn write_snapshots_csv<W: Write>(
    writer: W,
    snapshots: &[TrackingSnapshot],
    labels: Option<&[PerformanceLabel]>,
) -> Result<(), TrainError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (i, s) in snapshots.iter().enumerate() {
        let v = s.values();
        wtr.serialize(CsvRow {
            learner_id: s.learner_id.clone(),
            period_index: s.period_index,
            d: v[0],
            t: v[1],
            p: v[2],
            s: v[3],
            c: v[4],
            q: v[5],
            r: v[6],
            f: v[7],
            label: labels.map(|l| l[i].value()),
        })?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
