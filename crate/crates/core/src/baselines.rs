//! Feature-space baselines: pixel and PCA SVMs, and the training-mean model.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::boundary::{fit_svm, Hyperplane, SvmConfig};
use crate::error::{check_dim, Error, Result};
use crate::io;
use crate::latent::{dot, ImageVector};

pub const DEFAULT_PCA_COMPONENTS: usize = 30;
/// Above this pixel count the covariance is never formed.
const DENSE_EIGEN_LIMIT: usize = 4096;
const SUBSPACE_MAX_ITERS: usize = 500;
const SUBSPACE_TOL: f64 = 1e-12;

/// Principal subspace of a set of images. Features are not whitened.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl PcaBasis {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Sample variances along each component, descending.
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn pixels(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn reconstruct(&self, features: &[f64]) -> Result<Vec<f64>> {
        check_dim("pca features", self.k(), features.len())?;
        let mut out = self.mean.clone();
        for (c, f) in self.components.iter().zip(features) {
            out.iter_mut().zip(c).for_each(|(o, v)| *o += f * v);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_pca_parts(path, &self.mean, &self.components, &self.variances)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mean, components, variances) = io::read_pca_parts(path)?;
        Ok(Self {
            mean,
            components,
            variances,
        })
    }
}

/// Top-`k` principal components of the sample covariance. Each component is
/// signed so that its largest-magnitude entry is positive.
///
/// `k` may not exceed `min(n − 1, P)`; components beyond the actual rank of
/// the data come back with (numerically) zero variance.
pub fn pca_fit(images: &[ImageVector], k: usize) -> Result<PcaBasis> {
    if k == 0 {
        return Err(Error::InvalidConfig("pca needs k >= 1".into()));
    }
    if images.len() < k + 1 {
        return Err(Error::InsufficientSamples {
            needed: k + 1,
            got: images.len(),
        });
    }
    let p = images[0].len();
    for im in images {
        check_dim("pca image", p, im.len())?;
    }
    if k > p {
        return Err(Error::RankDeficient);
    }
    let n = images.len();
    let mut mean = vec![0.0; p];
    for im in images {
        mean.iter_mut().zip(im.as_slice()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, p, |i, j| images[i].as_slice()[j] - mean[j]);

    let (mut components, variances) = if p <= DENSE_EIGEN_LIMIT {
        dense_eigen(&centered, k)
    } else {
        subspace_iteration(&centered, k)
    };
    for c in &mut components {
        canonical_sign(c);
    }
    Ok(PcaBasis {
        mean,
        components,
        variances,
    })
}

fn dense_eigen(x: &DMatrix<f64>, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = x.nrows();
    let cov = (x.transpose() * x) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order
        .into_iter()
        .take(k)
        .map(|i| {
            (
                eig.eigenvectors.column(i).iter().copied().collect::<Vec<f64>>(),
                eig.eigenvalues[i].max(0.0),
            )
        })
        .unzip()
}

/// Orthogonal iteration on `XᵀX` applied through `X`, then a Rayleigh-Ritz
/// step on the converged subspace.
fn subspace_iteration(x: &DMatrix<f64>, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, p) = x.shape();
    let mut rng = crate::seed::rng(crate::seed::derive_named(0, "pca-subspace"));
    let start = DMatrix::from_fn(p, k, |_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
    let mut q = start.qr().q();
    let mut prev = f64::INFINITY;
    for _ in 0..SUBSPACE_MAX_ITERS {
        let z = x.transpose() * (x * &q);
        q = z.qr().q();
        let trace: f64 = (x * &q).norm_squared();
        if (trace - prev).abs() <= SUBSPACE_TOL * trace.max(1.0) {
            break;
        }
        prev = trace;
    }
    let xq = x * &q;
    let small = (xq.transpose() * &xq) / (n - 1) as f64;
    let eig = SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order
        .into_iter()
        .map(|i| {
            let v = &q * eig.eigenvectors.column(i);
            (v.iter().copied().collect(), eig.eigenvalues[i].max(0.0))
        })
        .unzip()
}

fn canonical_sign(c: &mut [f64]) {
    let mut best = 0;
    for (i, v) in c.iter().enumerate() {
        if v.abs() > c[best].abs() {
            best = i;
        }
    }
    if c[best] < 0.0 {
        c.iter_mut().for_each(|v| *v = -*v);
    }
}

pub fn pca_project(basis: &PcaBasis, image: &ImageVector) -> Result<Vec<f64>> {
    check_dim("pca projection", basis.pixels(), image.len())?;
    let centered: Vec<f64> = image.as_slice().iter().zip(&basis.mean).map(|(x, m)| x - m).collect();
    Ok(basis.components.iter().map(|c| dot(c, &centered)).collect())
}

/// Linear SVM in an arbitrary feature space (pixels or PCA coefficients).
pub fn fit_feature_svm<V: AsRef<[f64]>>(features: &[V], labels: &[i8], cfg: &SvmConfig) -> Result<Hyperplane> {
    fit_svm(features, labels, cfg)
}

/// Always answers the training mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPredictor {
    pub value: f64,
}

impl MeanPredictor {
    pub fn predict(&self, _feature: f64) -> f64 {
        self.value
    }
}

pub fn mean_predictor(labels: &[f64]) -> Result<MeanPredictor> {
    if labels.is_empty() {
        return Err(Error::Empty("mean predictor labels"));
    }
    Ok(MeanPredictor {
        value: crate::linalg::mean(labels),
    })
}
