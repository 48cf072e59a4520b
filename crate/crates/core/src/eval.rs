//! Average precision, cross-validation and the environmental-audio
//! evaluation in both aggregation modes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::{Label, SEGMENT_SECONDS};
use crate::models::{self, ModelError, ModelKind, TrainConfig, TrainedModel};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no positive labels; average precision is undefined")]
    NoPositives,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("fold {0} has no samples")]
    EmptyFold(u8),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Points in order of falling threshold, one per distinct score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NonFiniteScore);
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: t,
            precision,
            recall,
        });
    }
    Ok(PrCurve {
        points,
        average_precision: ap,
    })
}

/// Step-wise AP: `Σ (Rₙ − Rₙ₋₁)·Pₙ` over distinct thresholds, no
/// interpolation. Tied scores share one threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    Ok(pr_curve(scores, labels)?.average_precision)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub trait Scorer {
    fn score(&self, x: &[f64]) -> Result<f64, EvalError>;

    fn score_all(&self, xs: &[&[f64]]) -> Result<Vec<f64>, EvalError> {
        xs.iter().map(|x| self.score(x)).collect()
    }
}

impl Scorer for TrainedModel {
    fn score(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(self.predict(x)?)
    }
}

pub trait Learner {
    type Model: Scorer;
    fn kind(&self) -> ModelKind;
    fn fit(&self, xs: &[&[f64]], ys: &[bool], seed: u64) -> Result<Self::Model, EvalError>;
}

/// Trains a model kind with a fixed config; the seed argument replaces the
/// config seed and the spec seed.
#[derive(Debug, Clone)]
pub struct KindLearner {
    pub kind: ModelKind,
    pub config: TrainConfig,
}

impl Learner for KindLearner {
    type Model = TrainedModel;

    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn fit(&self, xs: &[&[f64]], ys: &[bool], seed: u64) -> Result<TrainedModel, EvalError> {
        let cfg = TrainConfig {
            seed,
            ..self.config.clone()
        };
        Ok(models::fit(self.kind, xs, ys, &cfg)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub kind: ModelKind,
    /// Held-out fold number and its AP.
    pub folds: Vec<(u8, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl CvReport {
    pub fn from_folds(kind: ModelKind, folds: Vec<(u8, f64)>) -> Self {
        let aps: Vec<f64> = folds.iter().map(|f| f.1).collect();
        let (mean, std) = mean_std(&aps);
        CvReport { kind, folds, mean, std }
    }
}

pub struct CvOutcome<M> {
    pub report: CvReport,
    /// One model per held-out fold, in the order of `report.folds`.
    pub models: Vec<M>,
}

/// Trains one model per fold in `cv_folds`, on the remaining folds of that
/// list, and scores it on the held-out fold. The model for held-out fold
/// `k` is fitted with seed `seed + k`. Samples in other folds are unused.
pub fn cross_validate<L: Learner>(
    learner: &L,
    xs: &[&[f64]],
    ys: &[bool],
    folds: &[u8],
    cv_folds: &[u8],
    seed: u64,
) -> Result<CvOutcome<L::Model>, EvalError> {
    if xs.len() != ys.len() || xs.len() != folds.len() {
        return Err(EvalError::LengthMismatch {
            scores: xs.len(),
            labels: ys.len(),
        });
    }
    let mut results = Vec::new();
    let mut models = Vec::new();
    for &k in cv_folds {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..xs.len() {
            if folds[i] == k {
                vx.push(xs[i]);
                vy.push(ys[i]);
            } else if cv_folds.contains(&folds[i]) {
                tx.push(xs[i]);
                ty.push(ys[i]);
            }
        }
        if vx.is_empty() {
            return Err(EvalError::EmptyFold(k));
        }
        let model = learner.fit(&tx, &ty, seed + k as u64)?;
        let scores = model.score_all(&vx)?;
        results.push((k, average_precision(&scores, &vy)?));
        models.push(model);
    }
    Ok(CvOutcome {
        report: CvReport::from_folds(learner.kind(), results),
        models,
    })
}

/// One hour of environmental audio: a feature vector and a label per 5 s bin.
#[derive(Debug, Clone)]
pub struct EnvHour {
    pub id: String,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

/// Scores for the scored (non-ignored) bins of an hour.
fn hour_scores(model: &dyn Scorer, hour: &EnvHour) -> Result<(Vec<f64>, Vec<bool>), EvalError> {
    if hour.features.len() != hour.labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: hour.features.len(),
            labels: hour.labels.len(),
        });
    }
    let mut s = Vec::new();
    let mut y = Vec::new();
    for (x, l) in hour.features.iter().zip(&hour.labels) {
        if let Some(b) = l.as_bool() {
            s.push(model.score(x)?);
            y.push(b);
        }
    }
    Ok((s, y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvReport {
    pub models: Vec<String>,
    pub hours: Vec<String>,
    /// `matrix[model][hour]`; `None` where the hour has no positive bins.
    pub matrix: Vec<Vec<Option<f64>>>,
    /// Per-model mean over defined hours.
    pub row_means: Vec<Option<f64>>,
    /// Per-hour mean over models.
    pub col_means: Vec<Option<f64>>,
    /// Hours skipped for lack of positives.
    pub no_positive_hours: Vec<String>,
    /// Per-model AP over all hours concatenated.
    pub pooled: Vec<f64>,
}

impl EnvReport {
    /// Mean and std over models of each model's mean per-hour AP.
    pub fn per_hour_summary(&self) -> (f64, f64) {
        let v: Vec<f64> = self.row_means.iter().flatten().copied().collect();
        mean_std(&v)
    }

    /// Mean and std over models of pooled AP.
    pub fn pooled_summary(&self) -> (f64, f64) {
        mean_std(&self.pooled)
    }
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let d: Vec<f64> = v.flatten().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Scores every model on every hour. Ignore bins are dropped before
/// scoring in both modes; hours without positives stay undefined in the
/// matrix but still contribute their negatives to the pooled AP.
pub fn evaluate_env(models: &[(String, &dyn Scorer)], hours: &[EnvHour]) -> Result<EnvReport, EvalError> {
    let mut matrix = Vec::with_capacity(models.len());
    let mut pooled = Vec::with_capacity(models.len());
    let mut no_pos = Vec::new();
    for (mi, (_, m)) in models.iter().enumerate() {
        let mut row = Vec::with_capacity(hours.len());
        let (mut all_s, mut all_y) = (Vec::new(), Vec::new());
        for h in hours {
            let (s, y) = hour_scores(*m, h)?;
            row.push(match average_precision(&s, &y) {
                Ok(ap) => Some(ap),
                Err(EvalError::NoPositives) => {
                    if mi == 0 {
                        no_pos.push(h.id.clone());
                    }
                    None
                }
                Err(e) => return Err(e),
            });
            all_s.extend(s);
            all_y.extend(y);
        }
        pooled.push(average_precision(&all_s, &all_y)?);
        matrix.push(row);
    }
    let row_means = matrix.iter().map(|r| mean_defined(r.iter().copied())).collect();
    let col_means = (0..hours.len()).map(|h| mean_defined(matrix.iter().map(|r| r[h]))).collect();
    Ok(EnvReport {
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        hours: hours.iter().map(|h| h.id.clone()).collect(),
        matrix,
        row_means,
        col_means,
        no_positive_hours: no_pos,
        pooled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t_start_s: f64,
    pub ground_truth: Label,
    pub probability: f64,
}

/// Model probability for every bin of an hour, ignore bins included.
pub fn probability_trace(model: &dyn Scorer, hour: &EnvHour) -> Result<Vec<TraceRow>, EvalError> {
    if hour.features.len() != hour.labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: hour.features.len(),
            labels: hour.labels.len(),
        });
    }
    hour.features
        .iter()
        .zip(&hour.labels)
        .enumerate()
        .map(|(i, (x, &l))| {
            Ok(TraceRow {
                t_start_s: i as f64 * SEGMENT_SECONDS,
                ground_truth: l,
                probability: model.score(x)?,
            })
        })
        .collect()
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("t_start_s,ground_truth,probability\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6}", r.t_start_s, r.ground_truth, r.probability);
    }
    s
}

/// One row of the summary results table. Values are fractions in [0, 1];
/// the CSV prints them as percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub kind: ModelKind,
    pub cv: Option<(f64, f64)>,
    pub test: Option<(f64, f64)>,
    pub env: Option<(f64, f64)>,
}

fn pct(v: Option<(f64, f64)>) -> String {
    match v {
        Some((m, s)) => format!("{:.2},{:.2}", 100.0 * m, 100.0 * s),
        None => ",".to_string(),
    }
}

/// `model,cv_map,cv_std,test_map,test_std,env_map,env_std` in percent.
pub fn results_table_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from("model,cv_map,cv_std,test_map,test_std,env_map,env_std\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.kind, pct(r.cv), pct(r.test), pct(r.env));
    }
    s
}

/// Per-model-per-hour AP table in percent, with a mean column and a mean
/// row. Undefined cells are left empty.
pub fn env_table_csv(report: &EnvReport) -> String {
    let cell = |v: Option<f64>| v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_default();
    let mut s = String::from("model");
    for h in &report.hours {
        let _ = write!(s, ",{h}");
    }
    s.push_str(",mean\n");
    for (i, name) in report.models.iter().enumerate() {
        s.push_str(name);
        for v in &report.matrix[i] {
            let _ = write!(s, ",{}", cell(*v));
        }
        let _ = writeln!(s, ",{}", cell(report.row_means[i]));
    }
    s.push_str("mean");
    for v in &report.col_means {
        let _ = write!(s, ",{}", cell(*v));
    }
    let _ = writeln!(s, ",{}", cell(mean_defined(report.row_means.iter().copied())));
    s
}
