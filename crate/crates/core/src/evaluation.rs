//! Experiment protocols: repeated-subset MAE curves, linearity diagnostics,
//! bridging ablations and rank-correlation sorting.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::mean_predictor;
use crate::boundary::Hyperplane;
use crate::calibration::{
    fit_linear, fit_linear_multi, fit_polynomial, select_samples, Regularization, DEFAULT_SELECTION_ATTEMPTS,
};
use crate::error::{check_dim, Error, Result};
use crate::importance::{ablation_distances, distance_weighted, layer_distances, DistanceMode, LayerScores};
use crate::inversion::{invert, InversionConfig};
use crate::io::write_csv;
use crate::latent::{ExtendedLatent, ImageVector};
use crate::linalg::{mean, mean_std};
use crate::seed;
use crate::synthetic::Generator;

pub const DEFAULT_REPEATS: usize = 1000;
pub const N_TRAIN_GRID: [usize; 6] = [2, 5, 10, 20, 100, 1000];
pub const POLYNOMIAL_DEGREES: [usize; 4] = [1, 2, 3, 5];

pub fn mae(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_dim("mae labels", predictions.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Empty("mae inputs"));
    }
    Ok(predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / labels.len() as f64)
}

/// Coefficient of determination of the OLS line of `y` on `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSquared {
    pub value: f64,
    /// `y` was constant; `value` is 0 by convention.
    pub constant_target: bool,
}

pub fn r_squared(x: &[f64], y: &[f64]) -> Result<RSquared> {
    let fit = fit_linear(x, y, Regularization::None)?;
    let my = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if ss_tot == 0.0 {
        return Ok(RSquared {
            value: 0.0,
            constant_target: true,
        });
    }
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (fit.predict(*a) - b).powi(2)).sum();
    Ok(RSquared {
        value: 1.0 - ss_res / ss_tot,
        constant_target: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Uniform,
    /// Gap-constrained selection from the central band of the feature.
    Paper,
    /// Gap-constrained selection up to `paper_max` training items, uniform
    /// above. The gap rule is rarely satisfiable for large subsets, and
    /// there the uniform mean is already well behaved.
    Hybrid { paper_max: usize },
}

impl Sampler {
    fn uses_gap_rule(&self, n_train: usize) -> bool {
        match *self {
            Sampler::Uniform => false,
            Sampler::Paper => true,
            Sampler::Hybrid { paper_max } => n_train <= paper_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibratorKind {
    Linear { regularization: Regularization },
    Polynomial { degree: usize },
    Mean,
}

impl CalibratorKind {
    pub const OLS: CalibratorKind = CalibratorKind::Linear {
        regularization: Regularization::None,
    };

    pub fn label(&self) -> String {
        match self {
            CalibratorKind::Linear { regularization } => match regularization {
                Regularization::None => "ols".into(),
                Regularization::L1 { .. } => "lasso".into(),
                Regularization::L2 { .. } => "ridge".into(),
                Regularization::ElasticNet { .. } => "elastic_net".into(),
            },
            CalibratorKind::Polynomial { degree } => format!("poly{degree}"),
            CalibratorKind::Mean => "mean".into(),
        }
    }

    fn min_samples(&self) -> usize {
        match self {
            CalibratorKind::Polynomial { degree } => degree + 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n_train: usize,
    pub repeats: usize,
    pub calibrator: CalibratorKind,
    pub sampler: Sampler,
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn new(n_train: usize, calibrator: CalibratorKind, seed: u64) -> Self {
        Self {
            n_train,
            repeats: DEFAULT_REPEATS,
            calibrator,
            sampler: Sampler::Uniform,
            seed,
        }
    }
}

/// Mean and sample standard deviation of test MAE over repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub n_train: usize,
    pub mean_mae: f64,
    pub std_mae: f64,
    pub repeats: usize,
    /// Repeats whose paper-sampler selection fell back to the quantile grid.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub feature_kind: String,
    pub calibrator: String,
    pub seed: u64,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn record(&self, n_train: usize) -> Option<&EvalRecord> {
        self.records.iter().find(|r| r.n_train == n_train)
    }
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub feature_kind: String,
    pub calibrator: String,
    pub n_train: usize,
    pub repeats: usize,
    pub mean_mae: f64,
    pub std_mae: f64,
    pub seed: u64,
}

pub fn report_rows(reports: &[EvalReport]) -> Vec<ReportRow> {
    reports
        .iter()
        .flat_map(|rep| {
            rep.records.iter().map(move |r| ReportRow {
                experiment: rep.experiment.clone(),
                feature_kind: rep.feature_kind.clone(),
                calibrator: rep.calibrator.clone(),
                n_train: r.n_train,
                repeats: r.repeats,
                mean_mae: r.mean_mae,
                std_mae: r.std_mae,
                seed: rep.seed,
            })
        })
        .collect()
}

pub fn write_report_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    write_csv(path, &report_rows(reports))
}

/// Training indices (ascending) for one draw, plus whether the gap sampler
/// fell back to its grid pick. `values` is the feature the gap rule spaces.
pub fn training_split(values: &[f64], n_train: usize, sampler: Sampler, seed: u64) -> Result<(Vec<usize>, bool)> {
    if sampler.uses_gap_rule(n_train) {
        let sel = select_samples(values, n_train, seed, DEFAULT_SELECTION_ATTEMPTS)?;
        Ok((sel.indices, sel.fallback))
    } else {
        if values.len() < n_train {
            return Err(Error::InsufficientSamples {
                needed: n_train,
                got: values.len(),
            });
        }
        let mut rng = seed::rng(seed);
        let mut idx = rand::seq::index::sample(&mut rng, values.len(), n_train).into_vec();
        idx.sort_unstable();
        Ok((idx, false))
    }
}

fn complement(n: usize, train: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; n];
    train.iter().for_each(|&i| mask[i] = true);
    (0..n).filter(|&i| !mask[i]).collect()
}

/// Shared repeat loop: `eval(train, test)` returns the test MAE. Repeats run
/// in parallel but are aggregated in repeat order, so the result does not
/// depend on the thread count.
fn run_repeats<F>(n: usize, cfg: &ProtocolConfig, selection_values: &[f64], eval: F) -> Result<EvalRecord>
where
    F: Fn(&[usize], &[usize]) -> Result<f64> + Sync,
{
    if cfg.n_train < cfg.calibrator.min_samples() {
        return Err(Error::InsufficientSamples {
            needed: cfg.calibrator.min_samples(),
            got: cfg.n_train,
        });
    }
    if cfg.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    if n <= cfg.n_train {
        return Err(Error::InsufficientSamples {
            needed: cfg.n_train + 1,
            got: n,
        });
    }
    let outcomes: Vec<(f64, bool)> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let (train, fallback) = training_split(selection_values, cfg.n_train, cfg.sampler, seed::derive(cfg.seed, r as u64))?;
            let test = complement(n, &train);
            Ok((eval(&train, &test)?, fallback))
        })
        .collect::<Result<_>>()?;
    let maes: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let (mean_mae, std_mae) = mean_std(&maes);
    Ok(EvalRecord {
        n_train: cfg.n_train,
        mean_mae,
        std_mae,
        repeats: cfg.repeats,
        fallbacks: outcomes.iter().filter(|o| o.1).count(),
    })
}

fn gather(values: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| values[i]).collect()
}

/// Fits a calibrator on random training subsets of a scalar feature and
/// scores it on the remaining items.
pub fn repeated_subset_protocol(features: &[f64], labels: &[f64], cfg: &ProtocolConfig) -> Result<EvalRecord> {
    check_dim("protocol labels", features.len(), labels.len())?;
    run_repeats(features.len(), cfg, features, |train, test| {
        let (x, y) = (gather(features, train), gather(labels, train));
        let (tx, ty) = (gather(features, test), gather(labels, test));
        let preds: Vec<f64> = match cfg.calibrator {
            CalibratorKind::Linear { regularization } => {
                let c = fit_linear(&x, &y, regularization)?;
                tx.iter().map(|d| c.predict(*d)).collect()
            }
            CalibratorKind::Polynomial { degree } => {
                let c = fit_polynomial(&x, &y, degree)?;
                tx.iter().map(|d| c.predict(*d)).collect()
            }
            CalibratorKind::Mean => {
                let c = mean_predictor(&y)?;
                tx.iter().map(|d| c.predict(*d)).collect()
            }
        };
        mae(&preds, &ty)
    })
}

/// Linear regression on several feature columns under the same protocol.
/// Only the uniform sampler applies; polynomial calibrators are rejected.
pub fn repeated_subset_protocol_multi(columns: &[Vec<f64>], labels: &[f64], cfg: &ProtocolConfig) -> Result<EvalRecord> {
    let regularization = match cfg.calibrator {
        CalibratorKind::Linear { regularization } => regularization,
        other => {
            return Err(Error::InvalidConfig(format!(
                "multi-column features need a linear calibrator, got {}",
                other.label()
            )))
        }
    };
    if cfg.sampler.uses_gap_rule(cfg.n_train) {
        return Err(Error::InvalidConfig("multi-column features use the uniform sampler".into()));
    }
    if columns.is_empty() {
        return Err(Error::Empty("feature columns"));
    }
    for c in columns {
        check_dim("feature column", labels.len(), c.len())?;
    }
    run_repeats(labels.len(), cfg, labels, |train, test| {
        let cols: Vec<Vec<f64>> = columns.iter().map(|c| gather(c, train)).collect();
        let model = fit_linear_multi(&cols, &gather(labels, train), regularization)?;
        let mut row = vec![0.0; columns.len()];
        let preds: Vec<f64> = test
            .iter()
            .map(|&i| {
                row.iter_mut().zip(columns).for_each(|(r, c)| *r = c[i]);
                model.predict(&row)
            })
            .collect();
        mae(&preds, &gather(labels, test))
    })
}

/// One protocol run per grid entry.
pub fn few_shot_curve(
    experiment: &str,
    feature_kind: &str,
    features: &[f64],
    labels: &[f64],
    grid: &[usize],
    base: &ProtocolConfig,
) -> Result<EvalReport> {
    let records = grid
        .iter()
        .map(|&n_train| repeated_subset_protocol(features, labels, &ProtocolConfig { n_train, ..*base }))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        experiment: experiment.to_owned(),
        feature_kind: feature_kind.to_owned(),
        calibrator: base.calibrator.label(),
        seed: base.seed,
        records,
    })
}

/// Degree-by-degree curves; grid entries below a degree's sample floor are
/// skipped for that degree. Degree 1 is the plain least-squares line.
pub fn polynomial_comparison(
    distances: &[f64],
    labels: &[f64],
    degrees: &[usize],
    grid: &[usize],
    repeats: usize,
    sampler: Sampler,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    degrees
        .iter()
        .map(|&degree| {
            let calibrator = if degree == 1 {
                CalibratorKind::OLS
            } else {
                CalibratorKind::Polynomial { degree }
            };
            let feasible: Vec<usize> = grid.iter().copied().filter(|&n| n > degree).collect();
            let base = ProtocolConfig {
                n_train: 0,
                repeats,
                calibrator,
                sampler,
                seed,
            };
            let mut rep = few_shot_curve("polynomial", "latent_distance", distances, labels, &feasible, &base)?;
            rep.calibrator = format!("poly{degree}");
            Ok(rep)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// One report per mode: all_layers, euclidean_replicated,
    /// best_single_layer, weighted.
    pub reports: Vec<EvalReport>,
    pub best_layer: usize,
    /// R² of each layer's distance against the labels over the full set.
    pub layer_r2: Vec<f64>,
}

impl AblationReport {
    pub fn mode(&self, name: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.feature_kind == name)
    }
}

/// Compares the ways of turning an extended code into a distance, on
/// identical uniform splits with OLS calibration.
pub fn bridging_ablation(
    latents: &[ExtendedLatent],
    labels: &[f64],
    plane: &Hyperplane,
    scores: &LayerScores,
    grid: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<AblationReport> {
    check_dim("ablation labels", latents.len(), labels.len())?;
    if latents.is_empty() {
        return Err(Error::Empty("ablation dataset"));
    }
    let layers = latents[0].layers();
    check_dim("layer scores", layers, scores.len())?;
    let per_layer: Vec<Vec<f64>> = latents
        .par_iter()
        .map(|w| layer_distances(w, plane))
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<f64>> = (0..layers).map(|l| per_layer.iter().map(|d| d[l]).collect()).collect();
    let layer_r2: Vec<f64> = columns
        .iter()
        .map(|c| r_squared(c, labels).map(|r| r.value).or(Ok::<f64, Error>(0.0)))
        .collect::<Result<_>>()?;
    let best_layer = (0..layers)
        .max_by(|&a, &b| layer_r2[a].total_cmp(&layer_r2[b]).then(b.cmp(&a)))
        .expect("at least one layer");

    let scalar = |mode: DistanceMode| -> Result<Vec<f64>> {
        latents
            .par_iter()
            .map(|w| ablation_distances(w, plane, &mode).map(|v| v[0]))
            .collect()
    };
    let base = ProtocolConfig {
        n_train: 0,
        repeats,
        calibrator: CalibratorKind::OLS,
        sampler: Sampler::Uniform,
        seed,
    };
    let all_layers = EvalReport {
        experiment: "bridging_ablation".into(),
        feature_kind: "all_layers".into(),
        calibrator: base.calibrator.label(),
        seed,
        records: grid
            .iter()
            .map(|&n_train| repeated_subset_protocol_multi(&columns, labels, &ProtocolConfig { n_train, ..base }))
            .collect::<Result<_>>()?,
    };
    let mut reports = vec![all_layers];
    for (name, mode) in [
        ("euclidean_replicated", DistanceMode::EuclideanReplicated),
        ("best_single_layer", DistanceMode::SingleLayer { layer: best_layer }),
        (
            "weighted",
            DistanceMode::Weighted {
                scores: scores.clone(),
            },
        ),
    ] {
        let feats = scalar(mode)?;
        reports.push(few_shot_curve("bridging_ablation", name, &feats, labels, grid, &base)?);
    }
    Ok(AblationReport {
        reports,
        best_layer,
        layer_r2,
    })
}

/// Kendall rank correlation between two orderings of the same items,
/// counted in `O(n log n)` via merge-sort inversions.
pub fn kendall_tau(order_a: &[usize], order_b: &[usize]) -> Result<f64> {
    let n = order_a.len();
    if order_b.len() != n {
        return Err(Error::NotPermutation);
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut pos_b = HashMap::with_capacity(n);
    for (p, &item) in order_b.iter().enumerate() {
        if pos_b.insert(item, p).is_some() {
            return Err(Error::NotPermutation);
        }
    }
    let mut seq = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for item in order_a {
        let p = *pos_b.get(item).ok_or(Error::NotPermutation)?;
        if std::mem::replace(&mut seen[p], true) {
            return Err(Error::NotPermutation);
        }
        seq.push(p);
    }
    let inversions = count_inversions(&mut seq);
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((pairs - 2.0 * inversions as f64) / pairs)
}

fn count_inversions(v: &mut [usize]) -> u64 {
    let mut buf = v.to_vec();
    merge_count(v, &mut buf)
}

fn merge_count(v: &mut [usize], buf: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

/// Items ordered by ascending score (ties by index).
pub fn order_by(values: &[f64], items: &[usize]) -> Vec<usize> {
    let mut order = items.to_vec();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortResult {
    /// Item indices, ascending by score. Failed items are left out.
    pub ordering: Vec<usize>,
    /// Score of `ordering[i]`.
    pub scores: Vec<f64>,
    /// Items whose inversion failed.
    pub failed: Vec<usize>,
    pub kendall_tau: Option<f64>,
}

/// Inverts every image, scores it by weighted layer distance and sorts.
/// Tau is computed against `oracle` values when given.
pub fn sort_by_attribute(
    items: &[ImageVector],
    g: &Generator,
    plane: &Hyperplane,
    scores: &LayerScores,
    cfg: &InversionConfig,
    oracle: Option<&[f64]>,
) -> Result<SortResult> {
    if items.is_empty() {
        return Err(Error::Empty("sort collection"));
    }
    if let Some(o) = oracle {
        check_dim("oracle values", items.len(), o.len())?;
    }
    let inverted = items
        .par_iter()
        .enumerate()
        .map(|(i, im)| {
            invert(g, im, &item_config(cfg, i))
                .and_then(|r| distance_weighted(&r.latent, plane, scores))
                .ok()
        })
        .collect::<Vec<Option<f64>>>();
    let ok: Vec<usize> = (0..items.len()).filter(|&i| inverted[i].is_some()).collect();
    let failed: Vec<usize> = (0..items.len()).filter(|&i| inverted[i].is_none()).collect();
    let values: Vec<f64> = inverted.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let ordering = order_by(&values, &ok);
    let sorted_scores = ordering.iter().map(|&i| values[i]).collect();
    let kendall = match oracle {
        Some(o) if ordering.len() >= 2 => Some(kendall_tau(&ordering, &order_by(o, &ok))?),
        _ => None,
    };
    Ok(SortResult {
        ordering,
        scores: sorted_scores,
        failed,
        kendall_tau: kendall,
    })
}

/// Random initialization gets the same per-item seed as batch inversion.
fn item_config(cfg: &InversionConfig, i: usize) -> InversionConfig {
    let mut c = cfg.clone();
    if let crate::inversion::InitMode::Random { seed: s } = cfg.init {
        c.init = crate::inversion::InitMode::Random {
            seed: seed::derive(s, i as u64),
        };
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortRow {
    pub rank: usize,
    pub item_index: usize,
    pub score: f64,
    pub oracle_value: Option<f64>,
}

pub fn write_sort_csv(path: &Path, result: &SortResult, oracle: Option<&[f64]>) -> Result<()> {
    let rows: Vec<SortRow> = result
        .ordering
        .iter()
        .zip(&result.scores)
        .enumerate()
        .map(|(rank, (&item_index, &score))| SortRow {
            rank,
            item_index,
            score,
            oracle_value: oracle.map(|o| o[item_index]),
        })
        .collect();
    write_csv(path, &rows)
}
