//! Mapping latent distances to attribute values from a handful of labels.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{lstsq, mean};
use crate::seed;

const CD_TOLERANCE: f64 = 1e-10;
const CD_MAX_SWEEPS: usize = 100_000;
const RANK_TOL: f64 = 1e-12;

/// Penalty applied to the slope(s). Penalized fits standardize every feature
/// first and follow the `1/(2n)·RSS + λ·mix·|β|₁ + λ·(1−mix)/2·|β|²`
/// convention; the intercept is never penalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularization {
    None,
    L1 { lambda: f64 },
    L2 { lambda: f64 },
    ElasticNet { lambda: f64, mix: f64 },
}

impl Regularization {
    /// Elastic net with unit strength and an even L1/L2 mix.
    pub fn elastic_net_default() -> Self {
        Regularization::ElasticNet {
            lambda: 1.0,
            mix: 0.5,
        }
    }

    fn penalties(&self) -> Option<(f64, f64)> {
        match *self {
            Regularization::None => None,
            Regularization::L1 { lambda } => Some((lambda, 0.0)),
            Regularization::L2 { lambda } => Some((0.0, lambda)),
            Regularization::ElasticNet { lambda, mix } => Some((lambda * mix, lambda * (1.0 - mix))),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Regularization::None => true,
            Regularization::L1 { lambda } | Regularization::L2 { lambda } => lambda >= 0.0,
            Regularization::ElasticNet { lambda, mix } => lambda >= 0.0 && (0.0..=1.0).contains(&mix),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid regularization {self:?}")))
        }
    }
}

/// `y = slope · d + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearCalibrator {
    pub slope: f64,
    pub intercept: f64,
    pub regularization: Regularization,
}

impl LinearCalibrator {
    pub fn predict(&self, d: f64) -> f64 {
        self.slope * d + self.intercept
    }
}

/// Linear model over several features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Polynomial in the distance with coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialCalibrator {
    pub coefficients: Vec<f64>,
}

impl PolynomialCalibrator {
    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    pub fn predict(&self, d: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * d + c)
    }
}

/// Any fitted distance-to-value map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibrator {
    Linear(LinearCalibrator),
    Polynomial(PolynomialCalibrator),
}

impl Calibrator {
    pub fn predict(&self, d: f64) -> f64 {
        match self {
            Calibrator::Linear(c) => c.predict(d),
            Calibrator::Polynomial(c) => c.predict(d),
        }
    }

    pub fn degree(&self) -> usize {
        match self {
            Calibrator::Linear(_) => 1,
            Calibrator::Polynomial(c) => c.degree(),
        }
    }

    /// Coefficients in ascending powers.
    pub fn coefficients(&self) -> Vec<f64> {
        match self {
            Calibrator::Linear(c) => vec![c.intercept, c.slope],
            Calibrator::Polynomial(c) => c.coefficients.clone(),
        }
    }
}

/// On-disk form of a calibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorFile {
    pub kind: String,
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub regularization: Regularization,
    pub attribute: String,
    pub training_indices: Vec<usize>,
}

impl CalibratorFile {
    pub fn new(cal: &Calibrator, attribute: &str, training_indices: Vec<usize>) -> Self {
        let (kind, regularization) = match cal {
            Calibrator::Linear(c) => ("linear", c.regularization),
            Calibrator::Polynomial(_) => ("polynomial", Regularization::None),
        };
        Self {
            kind: kind.to_owned(),
            degree: cal.degree(),
            coefficients: cal.coefficients(),
            regularization,
            attribute: attribute.to_owned(),
            training_indices,
        }
    }

    pub fn calibrator(&self) -> Result<Calibrator> {
        check_dim("calibrator coefficients", self.degree + 1, self.coefficients.len())?;
        match self.kind.as_str() {
            "linear" => Ok(Calibrator::Linear(LinearCalibrator {
                intercept: self.coefficients[0],
                slope: self.coefficients[1],
                regularization: self.regularization,
            })),
            "polynomial" => Ok(Calibrator::Polynomial(PolynomialCalibrator {
                coefficients: self.coefficients.clone(),
            })),
            other => Err(Error::Format(format!("unknown calibrator kind `{other}`"))),
        }
    }
}

/// Fits `y = a·d + b`. Needs two samples with distinct distances.
pub fn fit_linear(distances: &[f64], labels: &[f64], reg: Regularization) -> Result<LinearCalibrator> {
    check_dim("calibration labels", distances.len(), labels.len())?;
    if distances.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: distances.len(),
        });
    }
    let model = fit_linear_multi(&[distances.to_vec()], labels, reg)?;
    Ok(LinearCalibrator {
        slope: model.coefficients[0],
        intercept: model.intercept,
        regularization: reg,
    })
}

/// Linear regression on feature columns (`columns[j][i]` is feature `j` of
/// sample `i`).
///
/// Without a penalty this is minimum-norm least squares, which stays defined
/// when there are fewer samples than features or duplicated columns.
/// Constant columns get a zero coefficient; if every column is constant the
/// fit fails.
pub fn fit_linear_multi(columns: &[Vec<f64>], labels: &[f64], reg: Regularization) -> Result<LinearModel> {
    reg.validate()?;
    if columns.is_empty() {
        return Err(Error::Empty("feature columns"));
    }
    let n = labels.len();
    for c in columns {
        check_dim("feature column", n, c.len())?;
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let y_mean = mean(labels);
    let yc: Vec<f64> = labels.iter().map(|y| y - y_mean).collect();
    let stats: Vec<(f64, f64)> = columns
        .iter()
        .map(|c| {
            let m = mean(c);
            let var = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            (m, var.sqrt())
        })
        .collect();
    let active: Vec<usize> = (0..columns.len()).filter(|&j| stats[j].1 > 0.0).collect();
    if active.is_empty() {
        return Err(Error::ZeroVariance);
    }

    let mut coefficients = vec![0.0; columns.len()];
    match reg.penalties() {
        None if active.len() == 1 => {
            let j = active[0];
            let (m, _) = stats[j];
            let sxy: f64 = columns[j].iter().zip(&yc).map(|(x, y)| (x - m) * y).sum();
            let sxx: f64 = columns[j].iter().map(|x| (x - m) * (x - m)).sum();
            coefficients[j] = sxy / sxx;
        }
        None => {
            let k = active.len();
            let mut a = vec![0.0; n * k];
            for (col, &j) in active.iter().enumerate() {
                let (m, sd) = stats[j];
                for i in 0..n {
                    a[i * k + col] = (columns[j][i] - m) / sd;
                }
            }
            let (beta, _) = lstsq(&a, n, k, &yc, RANK_TOL)?;
            for (col, &j) in active.iter().enumerate() {
                coefficients[j] = beta[col] / stats[j].1;
            }
        }
        Some((l1, l2)) => {
            let z: Vec<Vec<f64>> = active
                .iter()
                .map(|&j| {
                    let (m, sd) = stats[j];
                    columns[j].iter().map(|x| (x - m) / sd).collect()
                })
                .collect();
            let beta = coordinate_descent(&z, &yc, l1, l2);
            for (col, &j) in active.iter().enumerate() {
                coefficients[j] = beta[col] / stats[j].1;
            }
        }
    }
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&stats)
            .map(|(c, (m, _))| c * m)
            .sum::<f64>();
    if !(intercept.is_finite() && coefficients.iter().all(|c| c.is_finite())) {
        return Err(Error::RankDeficient);
    }
    Ok(LinearModel {
        coefficients,
        intercept,
    })
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on standardized, centered data (unit second
/// moment per column).
fn coordinate_descent(z: &[Vec<f64>], y: &[f64], l1: f64, l2: f64) -> Vec<f64> {
    let n = y.len() as f64;
    let mut beta = vec![0.0; z.len()];
    let mut resid = y.to_vec();
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for (j, col) in z.iter().enumerate() {
            let rho = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n + beta[j];
            let updated = soft_threshold(rho, l1) / (1.0 + l2);
            let delta = updated - beta[j];
            if delta != 0.0 {
                resid.iter_mut().zip(col).for_each(|(r, x)| *r -= delta * x);
                beta[j] = updated;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < CD_TOLERANCE {
            break;
        }
    }
    beta
}

/// Least-squares polynomial of the given degree on a column-scaled
/// Vandermonde matrix.
pub fn fit_polynomial(distances: &[f64], labels: &[f64], degree: usize) -> Result<PolynomialCalibrator> {
    check_dim("calibration labels", distances.len(), labels.len())?;
    if degree == 0 {
        return Err(Error::InvalidConfig("polynomial degree must be >= 1".into()));
    }
    let n = distances.len();
    let k = degree + 1;
    if n < k {
        return Err(Error::InsufficientSamples { needed: k, got: n });
    }
    let mut v = vec![0.0; n * k];
    for (i, d) in distances.iter().enumerate() {
        let mut p = 1.0;
        for j in 0..k {
            v[i * k + j] = p;
            p *= d;
        }
    }
    let scales: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| v[i * k + j] * v[i * k + j]).sum::<f64>().sqrt())
        .collect();
    if scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::RankDeficient);
    }
    for i in 0..n {
        for j in 0..k {
            v[i * k + j] /= scales[j];
        }
    }
    let (beta, rank) = lstsq(&v, n, k, labels, RANK_TOL)?;
    if rank < k {
        return Err(Error::RankDeficient);
    }
    Ok(PolynomialCalibrator {
        coefficients: beta.iter().zip(&scales).map(|(b, s)| b / s).collect(),
    })
}

/// Minimal spacing enforced between selected distances.
pub fn gap_bound(range: f64, n: usize) -> f64 {
    range / (n as f64).powf(1.3)
}

/// Indices chosen for labeling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Ascending item indices.
    pub indices: Vec<usize>,
    /// Rejection sampling gave up and the quantile-grid pick was used.
    pub fallback: bool,
    /// Every pairwise gap meets [`gap_bound`].
    pub gap_satisfied: bool,
}

pub const DEFAULT_SELECTION_ATTEMPTS: usize = 10_000;

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Picks `n` roughly evenly spaced items from the central 95% of the
/// distance distribution.
///
/// Uniform index subsets of the central band are drawn until every pairwise
/// gap is at least `(b − a) / n^1.3`, where `[a, b]` is the 2.5%–97.5%
/// quantile range. Subsets are built one index at a time and abandoned at the
/// first violation, which accepts exactly the same subsets as checking them
/// whole. After `max_attempts` failures the deterministic quantile-grid pick
/// is returned with `fallback` set.
pub fn select_samples(distances: &[f64], n: usize, seed: u64, max_attempts: usize) -> Result<Selection> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::Format("distances must be finite".into()));
    }
    if distances.len() < n {
        return Err(Error::InsufficientSamples {
            needed: n,
            got: distances.len(),
        });
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let a = quantile_sorted(&sorted, 0.025);
    let b = quantile_sorted(&sorted, 0.975);
    if !(b > a) {
        return Err(Error::DegenerateRange);
    }
    let mut central: Vec<usize> = (0..distances.len())
        .filter(|&i| distances[i] >= a && distances[i] <= b)
        .collect();
    if central.len() < n {
        return Err(Error::InsufficientSamples {
            needed: n,
            got: central.len(),
        });
    }
    let gap = gap_bound(b - a, n);

    // Bucket of width `gap`: two accepted values never share a bucket, and
    // only values up to two buckets away need an exact comparison.
    let bucket_of = |v: f64| ((v - a) / gap).floor() as usize;
    let mut buckets = vec![f64::NAN; bucket_of(b) + 3];
    let mut rng = seed::rng(seed);
    'attempt: for _ in 0..max_attempts {
        for k in 0..n {
            let j = rng.random_range(k..central.len());
            central.swap(k, j);
            let v = distances[central[k]];
            let slot = bucket_of(v);
            let near = slot.saturating_sub(2)..=(slot + 2).min(buckets.len() - 1);
            let clash = !buckets[slot].is_nan() || buckets[near].iter().any(|u| (v - u).abs() < gap);
            if clash {
                for &i in &central[..k] {
                    buckets[bucket_of(distances[i])] = f64::NAN;
                }
                continue 'attempt;
            }
            buckets[slot] = v;
        }
        let mut indices = central[..n].to_vec();
        indices.sort_unstable();
        return Ok(Selection {
            indices,
            fallback: false,
            gap_satisfied: true,
        });
    }

    let indices = grid_pick(distances, &central, n, a, b);
    let mut vals: Vec<f64> = indices.iter().map(|&i| distances[i]).collect();
    vals.sort_by(f64::total_cmp);
    let gap_satisfied = vals.windows(2).all(|w| w[1] - w[0] >= gap);
    Ok(Selection {
        indices,
        fallback: true,
        gap_satisfied,
    })
}

fn find(links: &mut [usize], mut x: usize) -> usize {
    let mut root = x;
    while links[root] != root {
        root = links[root];
    }
    while links[x] != root {
        let next = links[x];
        links[x] = root;
        x = next;
    }
    root
}

/// For each of `n` evenly spaced targets across `[a, b]`, the nearest unused
/// central item (ties go to the smaller distance, then the smaller index).
fn grid_pick(distances: &[f64], central: &[usize], n: usize, a: f64, b: f64) -> Vec<usize> {
    let mut by_value = central.to_vec();
    by_value.sort_by(|&i, &j| distances[i].total_cmp(&distances[j]).then(i.cmp(&j)));
    let m = by_value.len();
    // Union-find "nearest unused slot" links; slot 0 and m + 1 are sentinels.
    let mut left: Vec<usize> = (0..m + 2).collect();
    let mut right: Vec<usize> = (0..m + 2).collect();
    let mut picked = Vec::with_capacity(n);
    for t in 0..n {
        let target = a + (b - a) * t as f64 / (n - 1) as f64;
        let split = by_value.partition_point(|&i| distances[i] < target);
        let l = find(&mut left, split);
        let r = find(&mut right, split + 1);
        let value = |slot: usize| distances[by_value[slot - 1]];
        let slot = match (l > 0, r <= m) {
            (true, true) if (value(r) - target).abs() < (target - value(l)).abs() => r,
            (true, _) => l,
            (false, true) => r,
            (false, false) => unreachable!("central band holds at least n items"),
        };
        left[slot] = slot - 1;
        right[slot] = slot + 1;
        picked.push(by_value[slot - 1]);
    }
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_point_interpolation() {
        let c = fit_linear(&[0.0, 1.0], &[10.0, 12.0], Regularization::None).unwrap();
        assert_eq!((c.slope, c.intercept), (2.0, 10.0));
        assert_eq!(c.predict(3.0), 16.0);
    }

    #[test]
    fn noiseless_line_is_recovered() {
        let d: Vec<f64> = (0..25).map(|i| i as f64 * 0.37 - 3.0).collect();
        let y: Vec<f64> = d.iter().map(|d| -1.5 * d + 4.0).collect();
        let c = fit_linear(&d, &y, Regularization::None).unwrap();
        assert!((c.slope + 1.5).abs() < 1e-12);
        assert!((c.intercept - 4.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_errors() {
        assert!(matches!(
            fit_linear(&[1.0], &[2.0], Regularization::None),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            fit_linear(&[1.0, 1.0, 1.0], &[2.0, 3.0, 4.0], Regularization::None),
            Err(Error::ZeroVariance)
        ));
        assert!(fit_linear(&[1.0, 2.0], &[2.0], Regularization::None).is_err());
        assert!(fit_linear(
            &[1.0, 2.0],
            &[2.0, 3.0],
            Regularization::ElasticNet { lambda: 1.0, mix: 2.0 }
        )
        .is_err());
    }

    fn noisy_line(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = crate::seed::rng(seed);
        let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = d
            .iter()
            .map(|d| 3.0 * d - 2.0 + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect::<Vec<f64>>();
        (d, y)
    }

    #[test]
    fn tiny_penalty_matches_ols() {
        let (d, y) = noisy_line(100, 1);
        // closed-form oracle
        let (md, my) = (mean(&d), mean(&y));
        let sxy: f64 = d.iter().zip(&y).map(|(a, b)| (a - md) * (b - my)).sum();
        let sxx: f64 = d.iter().map(|a| (a - md) * (a - md)).sum();
        let (a, b) = (sxy / sxx, my - sxy / sxx * md);
        let reg = Regularization::ElasticNet { lambda: 1e-12, mix: 0.5 };
        let c = fit_linear(&d, &y, reg).unwrap();
        assert!((c.slope - a).abs() < 1e-6);
        assert!((c.intercept - b).abs() < 1e-6);
    }

    #[test]
    fn penalties_shrink_the_slope() {
        let (d, y) = noisy_line(50, 2);
        let ols = fit_linear(&d, &y, Regularization::None).unwrap();
        for reg in [
            Regularization::L1 { lambda: 0.5 },
            Regularization::L2 { lambda: 0.5 },
            Regularization::elastic_net_default(),
        ] {
            let c = fit_linear(&d, &y, reg).unwrap();
            assert!(c.slope.abs() < ols.slope.abs(), "{reg:?}");
            assert!(c.slope > 0.0);
        }
        let huge = fit_linear(&d, &y, Regularization::L1 { lambda: 1e6 }).unwrap();
        assert_eq!(huge.slope, 0.0);
        assert!((huge.intercept - mean(&y)).abs() < 1e-12);
    }

    #[test]
    fn affine_relabeling_is_equivariant() {
        let (d, y) = noisy_line(40, 3);
        let base = fit_linear(&d, &y, Regularization::None).unwrap();
        let (c, k) = (-2.5, 7.0);
        let y2: Vec<f64> = y.iter().map(|v| c * v + k).collect();
        let t = fit_linear(&d, &y2, Regularization::None).unwrap();
        assert!((t.slope - c * base.slope).abs() < 1e-9);
        assert!((t.intercept - (c * base.intercept + k)).abs() < 1e-9);
    }

    #[test]
    fn ols_is_locally_optimal() {
        let (d, y) = noisy_line(30, 4);
        let c = fit_linear(&d, &y, Regularization::None).unwrap();
        let rss = |a: f64, b: f64| d.iter().zip(&y).map(|(x, t)| (a * x + b - t).powi(2)).sum::<f64>();
        let best = rss(c.slope, c.intercept);
        for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3), (1e-3, 1e-3), (-1e-3, -1e-3)] {
            assert!(best <= rss(c.slope + da, c.intercept + db));
        }
    }

    #[test]
    fn multi_feature_min_norm_matches_single() {
        let (d, y) = noisy_line(5, 5);
        let single = fit_linear(&d, &y, Regularization::None).unwrap();
        let cols = vec![d.clone(), d.clone(), d.clone(), vec![1.0; 5]];
        let multi = fit_linear_multi(&cols, &y, Regularization::None).unwrap();
        for (x, _) in d.iter().zip(&y) {
            let row = [*x, *x, *x, 1.0];
            assert!((multi.predict(&row) - single.predict(*x)).abs() < 1e-9);
        }
        assert_eq!(multi.coefficients[3], 0.0);
    }

    #[test]
    fn polynomial_examples() {
        let p = PolynomialCalibrator {
            coefficients: vec![1.0, 0.0, 1.0],
        };
        assert_eq!(p.predict(2.0), 5.0);

        let (d, y) = noisy_line(20, 6);
        let lin = fit_linear(&d, &y, Regularization::None).unwrap();
        let p1 = fit_polynomial(&d, &y, 1).unwrap();
        assert!((p1.coefficients[0] - lin.intercept).abs() < 1e-9);
        assert!((p1.coefficients[1] - lin.slope).abs() < 1e-9);

        let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
        let p2 = fit_polynomial(&d, &sq, 2).unwrap();
        let resid: f64 = d.iter().zip(&sq).map(|(x, t)| (p2.predict(*x) - t).powi(2)).sum();
        assert!(resid <= 1e-9);
    }

    #[test]
    fn polynomial_errors() {
        assert!(matches!(
            fit_polynomial(&[1.0, 2.0], &[1.0, 2.0], 2),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            fit_polynomial(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0], 2),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn calibrator_file_round_trip() {
        let c = Calibrator::Linear(LinearCalibrator {
            slope: 2.0,
            intercept: 10.0,
            regularization: Regularization::elastic_net_default(),
        });
        let f = CalibratorFile::new(&c, "yaw", vec![3, 9]);
        let back: CalibratorFile = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back.calibrator().unwrap(), c);
        assert_eq!(back.coefficients, vec![10.0, 2.0]);
    }

    #[test]
    fn gap_bound_constant() {
        assert!((gap_bound(95.0, 2) - 38.58).abs() < 0.01);
    }

    #[test]
    fn degenerate_selection() {
        assert!(matches!(
            select_samples(&[3.0; 50], 2, 1, 100),
            Err(Error::DegenerateRange)
        ));
        assert!(select_samples(&[1.0, 2.0, 3.0], 1, 1, 100).is_err());
        assert!(select_samples(&[1.0, 2.0, 3.0], 5, 1, 100).is_err());
    }

    #[test]
    fn selection_is_seeded() {
        let d: Vec<f64> = (0..500).map(|i| ((i * 7919) % 500) as f64).collect();
        let a = select_samples(&d, 5, 11, DEFAULT_SELECTION_ATTEMPTS).unwrap();
        let b = select_samples(&d, 5, 11, DEFAULT_SELECTION_ATTEMPTS).unwrap();
        assert_eq!(a, b);
        assert!(!a.fallback);
    }

    #[test]
    fn zero_attempts_fall_back_to_grid() {
        let d: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let s = select_samples(&d, 3, 0, 0).unwrap();
        assert!(s.fallback);
        // band is [2.5, 97.5]; grid targets 2.5, 50, 97.5
        assert_eq!(s.indices, vec![3, 50, 97]);
        assert!(s.gap_satisfied);
    }
}
