//! Unsupervised per-layer importance of a semantic direction and the weighted
//! layered distance built on it.
//!
//! For each sampled code `w`, the replicated code is optimized toward the image
//! of the edited code `w + α·n`. Layers that carry the attribute receive large
//! gradients; layers that do not receive little or none. Raw gradient
//! magnitudes are divided by the magnitudes seen when optimizing between
//! unrelated codes, which removes per-layer gradient scale.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::Hyperplane;
use crate::error::{check_dim, Error, Result};
use crate::inversion::{descend, InversionConfig};
use crate::latent::{dot, ExtendedLatent, LatentCode};
use crate::seed;
use crate::synthetic::Generator;

/// Nonnegative per-layer weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LayerScores(Vec<f64>);

impl LayerScores {
    /// Normalizes nonnegative weights to sum one.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("layer scores"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig(
                "layer weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig("layer weights sum to zero".into()));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(layers: usize) -> Self {
        Self(vec![1.0 / layers as f64; layers])
    }

    pub fn one_hot(layers: usize, layer: usize) -> Result<Self> {
        if layer >= layers {
            return Err(Error::InvalidLayer { layer, layers });
        }
        let mut s = vec![0.0; layers];
        s[layer] = 1.0;
        Ok(Self(s))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }
}

impl TryFrom<Vec<f64>> for LayerScores {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Format(format!("layer scores sum to {total}, not 1")));
        }
        Self::from_weights(v)
    }
}

impl From<LayerScores> for Vec<f64> {
    fn from(s: LayerScores) -> Self {
        s.0
    }
}

/// How gradient magnitudes along one optimization path are summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GradientAccumulation {
    /// Sum of per-layer gradient norms over every iteration.
    AllIterations,
    /// Sum over the first `count` iterations only.
    EarlyIterations { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    /// Number of sampled codes to edit.
    pub samples: usize,
    /// Edit strength along the hyperplane normal.
    pub alpha: f64,
    pub inversion: InversionConfig,
    pub unrelated_pairs: usize,
    pub accumulation: GradientAccumulation,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            samples: 32,
            alpha: 3.0,
            inversion: InversionConfig {
                restarts: 1,
                ..InversionConfig::default()
            },
            unrelated_pairs: 16,
            accumulation: GradientAccumulation::AllIterations,
            seed: 0,
        }
    }
}

impl ImportanceConfig {
    fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.unrelated_pairs == 0 {
            return Err(Error::InvalidConfig(
                "importance sample and pair counts must be at least 1".into(),
            ));
        }
        if self.alpha == 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig("edit strength alpha must be nonzero".into()));
        }
        if let GradientAccumulation::EarlyIterations { count: 0 } = self.accumulation {
            return Err(Error::InvalidConfig("early-iteration count must be >= 1".into()));
        }
        self.inversion.validate()
    }
}

/// On-disk form of [`LayerScores`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresFile {
    pub attribute: String,
    #[serde(rename = "L")]
    pub layers: usize,
    pub scores: LayerScores,
    pub config: ImportanceConfig,
}

fn sample_code(dim: usize, stream_seed: u64, index: u64) -> LatentCode {
    let mut rng = seed::stream(stream_seed, index);
    let v = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    LatentCode::new(v).expect("gaussian draws are finite")
}

/// Per-layer gradient magnitude accumulated while optimizing `start` toward
/// `target_code`'s image.
fn tracked_norms(
    g: &Generator,
    start: &LatentCode,
    target_code: &LatentCode,
    cfg: &ImportanceConfig,
) -> Result<Vec<f64>> {
    let target = g.render(target_code)?;
    let init = ExtendedLatent::replicate(start, g.layers());
    let mut acc = vec![0.0; g.layers()];
    let mut seen = 0usize;
    let limit = match cfg.accumulation {
        GradientAccumulation::AllIterations => usize::MAX,
        GradientAccumulation::EarlyIterations { count } => count,
    };
    descend(g, target.as_slice(), init, &cfg.inversion, |grad| {
        if seen < limit {
            acc.iter_mut()
                .zip(grad.row_norms())
                .for_each(|(a, n)| *a += n);
        }
        seen += 1;
    })?;
    Ok(acc)
}

fn mean_rows(rows: Vec<Vec<f64>>, layers: usize) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; layers];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Mean per-layer gradient magnitude when optimizing between independently
/// sampled codes. Pair `p` uses streams `2p` and `2p + 1`, so the two codes of
/// a pair never share a seed.
pub fn unrelated_baseline(g: &Generator, cfg: &ImportanceConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let pair_seed = seed::derive_named(cfg.seed, "unrelated-pairs");
    let rows = (0..cfg.unrelated_pairs)
        .into_par_iter()
        .map(|p| {
            let a = sample_code(g.latent_dim(), pair_seed, 2 * p as u64);
            let b = sample_code(g.latent_dim(), pair_seed, 2 * p as u64 + 1);
            tracked_norms(g, &a, &b, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline = mean_rows(rows, g.layers());
    if let Some(layer) = baseline.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::ZeroBaseline { layer });
    }
    Ok(baseline)
}

/// Mean per-layer gradient magnitude of the edit-recovery problems, before
/// normalization.
pub fn raw_edit_scores(g: &Generator, plane: &Hyperplane, cfg: &ImportanceConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_dim("importance hyperplane", g.latent_dim(), plane.dim())?;
    let code_seed = seed::derive_named(cfg.seed, "edited-codes");
    let rows = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let w = sample_code(g.latent_dim(), code_seed, i as u64);
            let edited = plane.edit(&w, cfg.alpha)?;
            tracked_norms(g, &w, &edited, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_rows(rows, g.layers()))
}

pub fn compute_layer_scores(
    g: &Generator,
    plane: &Hyperplane,
    cfg: &ImportanceConfig,
) -> Result<LayerScores> {
    let raw = raw_edit_scores(g, plane, cfg)?;
    let baseline = unrelated_baseline(g, cfg)?;
    let normalized: Vec<f64> = raw.iter().zip(&baseline).map(|(r, b)| r / b).collect();
    LayerScores::from_weights(normalized)
}

fn check_layered(w_plus: &ExtendedLatent, plane: &Hyperplane) -> Result<()> {
    check_dim("layered distance dim", plane.dim(), w_plus.dim())
}

/// Distance of every layer row to the plane.
pub fn layer_distances(w_plus: &ExtendedLatent, plane: &Hyperplane) -> Result<Vec<f64>> {
    check_layered(w_plus, plane)?;
    Ok(w_plus
        .rows()
        .map(|r| dot(r, plane.normal()) + plane.intercept())
        .collect())
}

/// `Σ_i S_i · (row_i · n + b)`.
pub fn distance_weighted(
    w_plus: &ExtendedLatent,
    plane: &Hyperplane,
    scores: &LayerScores,
) -> Result<f64> {
    check_dim("layer scores", w_plus.layers(), scores.len())?;
    let d = layer_distances(w_plus, plane)?;
    Ok(d.iter().zip(scores.as_slice()).map(|(d, s)| s * d).sum())
}

/// How a layered code is reduced to regression features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DistanceMode {
    /// One feature per layer.
    AllLayers,
    /// Euclidean distance to the plane copied into every layer.
    EuclideanReplicated,
    SingleLayer { layer: usize },
    Weighted { scores: LayerScores },
}

pub fn ablation_distances(
    w_plus: &ExtendedLatent,
    plane: &Hyperplane,
    mode: &DistanceMode,
) -> Result<Vec<f64>> {
    let per_layer = layer_distances(w_plus, plane)?;
    let layers = w_plus.layers();
    Ok(match mode {
        DistanceMode::AllLayers => per_layer,
        DistanceMode::EuclideanReplicated => {
            vec![per_layer.iter().sum::<f64>() / (layers as f64).sqrt()]
        }
        DistanceMode::SingleLayer { layer } => {
            if *layer >= layers {
                return Err(Error::InvalidLayer {
                    layer: *layer,
                    layers,
                });
            }
            vec![per_layer[*layer]]
        }
        DistanceMode::Weighted { scores } => vec![distance_weighted(w_plus, plane, scores)?],
    })
}
