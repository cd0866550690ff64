use crate::error::Result;

const JACOBI_SWEEPS: usize = 60;

/// Minimum-norm least squares for a row-major `rows x cols` matrix.
/// Singular values below `rel_tol · σ_max` are treated as zero; the returned
/// rank lets callers reject deficient systems.
///
/// One-sided Jacobi SVD: columns are rotated pairwise until mutually
/// orthogonal, at which point their norms are the singular values.
pub(crate) fn lstsq(a: &[f64], rows: usize, cols: usize, b: &[f64], rel_tol: f64) -> Result<(Vec<f64>, usize)> {
    let mut u: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| a[i * cols + j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&u[p], &u[p]);
                let beta = dot(&u[q], &u[q]);
                let gamma = dot(&u[p], &u[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = u.iter().map(|c| dot(c, c).sqrt()).collect();
    let smax = sigma.iter().copied().fold(0.0, f64::max);
    let mut x = vec![0.0; cols];
    if !(smax > 0.0) {
        return Ok((x, 0));
    }
    let eps = rel_tol * smax;
    let mut rank = 0;
    for j in 0..cols {
        if sigma[j] > eps {
            rank += 1;
            let coef = dot(&u[j], b) / (sigma[j] * sigma[j]);
            x.iter_mut().zip(&v[j]).for_each(|(xi, vi)| *xi += coef * vi);
        }
    }
    Ok((x, rank))
}

fn rotate(m: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = m.split_at_mut(q);
    for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-pass mean and sample standard deviation (zero for a single value).
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (m, (ss / (v.len() - 1) as f64).sqrt())
}
