//! Semantic hyperplanes: linear SVM fitting from binary labels, signed
//! distances and latent edits along the normal.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::latent::{dot, LatentCode};

/// The boundary `normal · w + intercept = 0` with a unit normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    normal: Vec<f64>,
    intercept: f64,
    intercept_known: bool,
}

impl Hyperplane {
    /// Normalizes `direction`. A supplied intercept is rescaled with it; a
    /// missing one is set to zero.
    pub fn from_direction(direction: Vec<f64>, intercept: Option<f64>) -> Result<Self> {
        let norm = dot(&direction, &direction).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::DegenerateSeparator);
        }
        let normal = direction.into_iter().map(|v| v / norm).collect();
        Ok(Self {
            normal,
            intercept: intercept.map_or(0.0, |b| b / norm),
            intercept_known: intercept.is_some(),
        })
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn intercept_known(&self) -> bool {
        self.intercept_known
    }

    /// Same plane with the positive side flipped.
    pub fn negated(&self) -> Self {
        Self {
            normal: self.normal.iter().map(|v| -v).collect(),
            intercept: -self.intercept,
            intercept_known: self.intercept_known,
        }
    }

    /// Signed distance `w · n + b`.
    pub fn distance(&self, w: &[f64]) -> Result<f64> {
        check_dim("hyperplane distance", self.dim(), w.len())?;
        Ok(dot(w, &self.normal) + self.intercept)
    }

    /// `w + alpha · n`.
    pub fn edit(&self, w: &LatentCode, alpha: f64) -> Result<LatentCode> {
        check_dim("hyperplane edit", self.dim(), w.dim())?;
        LatentCode::new(
            w.as_slice()
                .iter()
                .zip(&self.normal)
                .map(|(x, n)| x + alpha * n)
                .collect(),
        )
    }

    pub fn to_file(&self, attribute_name: &str) -> BoundaryFile {
        BoundaryFile {
            dim: self.dim(),
            normal: self.normal.clone(),
            intercept: self.intercept,
            intercept_known: self.intercept_known,
            attribute_name: attribute_name.to_owned(),
        }
    }
}

/// On-disk form of a [`Hyperplane`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFile {
    pub dim: usize,
    pub normal: Vec<f64>,
    pub intercept: f64,
    pub intercept_known: bool,
    pub attribute_name: String,
}

impl TryFrom<BoundaryFile> for Hyperplane {
    type Error = Error;

    fn try_from(f: BoundaryFile) -> Result<Self> {
        check_dim("boundary file normal", f.dim, f.normal.len())?;
        let norm = dot(&f.normal, &f.normal).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Format(format!("boundary normal has norm {norm}")));
        }
        if !f.intercept_known && f.intercept != 0.0 {
            return Err(Error::Format(
                "boundary intercept must be 0 when it is not known".into(),
            ));
        }
        Ok(Self {
            normal: f.normal,
            intercept: f.intercept,
            intercept_known: f.intercept_known,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    /// Soft-margin penalty `C`.
    pub c: f64,
    /// Iteration budget, in multiples of the training-set size.
    pub max_epochs: usize,
    /// Stopping threshold on the maximal KKT violation.
    pub tolerance: f64,
    /// Recorded for provenance; the solver draws no random numbers.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_epochs: 500,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("svm C must be positive, got {}", self.c)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig("svm tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Soft-margin linear SVM with an unpenalized bias.
///
/// Solves the dual with sequential minimal optimization (second-order working
/// set selection). Examples are put in a canonical order first, so the result
/// does not depend on how the caller ordered them.
pub fn fit_svm<V: AsRef<[f64]>>(points: &[V], labels: &[i8], cfg: &SvmConfig) -> Result<Hyperplane> {
    cfg.validate()?;
    check_dim("svm labels", points.len(), labels.len())?;
    if points.is_empty() {
        return Err(Error::Empty("svm training set"));
    }
    let dim = points[0].as_ref().len();
    for p in points {
        check_dim("svm example", dim, p.as_ref().len())?;
    }
    if labels.iter().any(|&y| y != 1 && y != -1) {
        return Err(Error::InvalidConfig("svm labels must be +1 or -1".into()));
    }
    if !(labels.contains(&1) && labels.contains(&-1)) {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .as_ref()
            .iter()
            .zip(points[b].as_ref())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(labels[a].cmp(&labels[b]))
    });
    let x: Vec<&[f64]> = order.iter().map(|&i| points[i].as_ref()).collect();
    // Solve with the first canonical example labeled +1 so that negating all
    // labels yields exactly the negated plane.
    let sign = f64::from(labels[order[0]]);
    let y: Vec<f64> = order.iter().map(|&i| sign * f64::from(labels[i])).collect();

    let (alpha, bias) = smo(&x, &y, cfg);
    let mut w = vec![0.0; dim];
    for ((xi, yi), a) in x.iter().zip(&y).zip(&alpha) {
        if *a != 0.0 {
            w.iter_mut().zip(*xi).for_each(|(wk, v)| *wk += a * yi * v);
        }
    }
    w.iter_mut().for_each(|v| *v *= sign);
    let bias = sign * bias;
    let y: Vec<f64> = y.iter().map(|v| v * sign).collect();
    let plane = Hyperplane::from_direction(w, Some(bias))?;

    // positive side holds the majority of the +1 class
    let (mut pos, mut total) = (0usize, 0usize);
    for (xi, yi) in x.iter().zip(&y) {
        if *yi > 0.0 {
            total += 1;
            if plane.distance(xi)? > 0.0 {
                pos += 1;
            }
        }
    }
    Ok(if 2 * pos < total { plane.negated() } else { plane })
}

const TAU: f64 = 1e-12;
const ROW_CACHE: usize = 1024;

struct Kernel<'a> {
    x: &'a [&'a [f64]],
    y: &'a [f64],
    diag: Vec<f64>,
    cache: HashMap<usize, Vec<f64>>,
}

impl<'a> Kernel<'a> {
    fn new(x: &'a [&'a [f64]], y: &'a [f64]) -> Self {
        let diag = x.iter().map(|v| dot(v, v)).collect();
        Self {
            x,
            y,
            diag,
            cache: HashMap::new(),
        }
    }

    /// Row `i` of `Q = diag(y) K diag(y)`.
    fn row(&mut self, i: usize) -> &[f64] {
        if !self.cache.contains_key(&i) {
            if self.cache.len() >= ROW_CACHE {
                self.cache.clear();
            }
            let xi = self.x[i];
            let yi = self.y[i];
            let row = self
                .x
                .iter()
                .zip(self.y)
                .map(|(xj, yj)| yi * yj * dot(xi, xj))
                .collect();
            self.cache.insert(i, row);
        }
        &self.cache[&i]
    }
}

fn smo(x: &[&[f64]], y: &[f64], cfg: &SvmConfig) -> (Vec<f64>, f64) {
    let n = x.len();
    let c = cfg.c;
    let mut kernel = Kernel::new(x, y);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let max_iter = cfg.max_epochs.max(1).saturating_mul(n).max(10_000);

    for _ in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let movable = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if movable && v >= gmax {
                gmax = v;
                i_sel = t;
            }
        }
        if i_sel == usize::MAX {
            break;
        }
        let i = i_sel;
        let qi: Vec<f64> = kernel.row(i).to_vec();
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let movable = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !movable {
                continue;
            }
            let v = y[t] * grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let mut quad = kernel.diag[i] + kernel.diag[t] - 2.0 * y[i] * y[t] * qi[t];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -diff * diff / quad;
                if obj <= best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        if gmax + gmax2 < cfg.tolerance || j_sel == usize::MAX {
            break;
        }
        let j = j_sel;
        let qj: Vec<f64> = kernel.row(j).to_vec();
        let (old_i, old_j) = (alpha[i], alpha[j]);

        if y[i] != y[j] {
            let mut quad = kernel.diag[i] + kernel.diag[j] + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = kernel.diag[i] + kernel.diag[j] - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
    }

    // bias from the free support vectors, else the midpoint of the feasible range
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        0.5 * (ub + lb)
    };
    (alpha, -rho)
}

/// Fraction of examples whose distance sign matches the label; a distance of
/// exactly zero counts as `+1`.
pub fn svm_validation_accuracy<V: AsRef<[f64]>>(
    plane: &Hyperplane,
    points: &[V],
    labels: &[i8],
) -> Result<f64> {
    check_dim("validation labels", points.len(), labels.len())?;
    if points.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut correct = 0usize;
    for (p, &y) in points.iter().zip(labels) {
        let predicted = if plane.distance(p.as_ref())? >= 0.0 { 1 } else { -1 };
        if predicted == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / points.len() as f64)
}
