use latreg_core::baselines::{fit_feature_svm, mean_predictor, pca_fit, pca_project};
use latreg_core::boundary::{fit_svm, svm_validation_accuracy};
use latreg_core::evaluation::{
    bridging_ablation, kendall_tau, mae, order_by, r_squared, repeated_subset_protocol, sort_by_attribute,
    CalibratorKind, ProtocolConfig,
};
use latreg_core::importance::distance_weighted;
use latreg_core::synthetic::sample_dataset;
use latreg_core::{
    seed, ExtendedLatent, Generator, Hyperplane, ImageVector, InversionConfig, LatentCode, LayerScores, SvmConfig,
    SyntheticSpec,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn brute_tau(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let pos = |o: &[usize], x: usize| o.iter().position(|&v| v == x).unwrap();
    let (mut conc, mut disc) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let (x, y) = (a[i], a[j]);
            if pos(b, x) < pos(b, y) {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    (conc - disc) as f64 / (n * (n - 1) / 2) as f64
}

fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(i);
        for mut p in permutations(rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

#[test]
fn kendall_matches_pair_counting_on_all_four_element_orders() {
    let identity = vec![0, 1, 2, 3];
    let perms = permutations(identity.clone());
    assert_eq!(perms.len(), 24);
    let mut total = 0.0;
    for p in &perms {
        let tau = kendall_tau(p, &identity).unwrap();
        assert_eq!(tau, brute_tau(p, &identity));
        total += tau;
    }
    assert!((total / 24.0).abs() <= 1e-15);
}

#[test]
fn mae_matches_independent_accumulation() {
    let mut rng = seed::rng(41);
    let p: Vec<f64> = (0..100).map(|_| rng.random_range(-50.0..50.0)).collect();
    let y: Vec<f64> = (0..100).map(|_| rng.random_range(-50.0..50.0)).collect();
    // compensated sum in reverse order
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for i in (0..100).rev() {
        let term = (p[i] - y[i]).abs() - comp;
        let t = sum + term;
        comp = (t - sum) - term;
        sum = t;
    }
    assert!((mae(&p, &y).unwrap() - sum / 100.0).abs() <= 1e-12);
}

#[test]
fn r_squared_matches_pearson() {
    let mut rng = seed::rng(8);
    let x: Vec<f64> = (0..50).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<f64> = x.iter().map(|v| 0.7 * v + rng.sample::<f64, _>(StandardNormal)).collect();
    let n = 50.0;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
    assert!((r_squared(&x, &y).unwrap().value - r * r).abs() <= 1e-10);
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

#[test]
fn pca_agrees_with_jacobi_on_anisotropic_data() {
    let mut rng = seed::rng(5);
    let p = 8;
    let sig = [9.0, 4.0, 1.0, 0.5, 0.3, 0.2, 0.1, 0.05];
    let images: Vec<ImageVector> = (0..400)
        .map(|_| ImageVector::new(sig.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal) + 1.0).collect()).unwrap())
        .collect();
    let n = images.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| images.iter().map(|im| im.as_slice()[j]).sum::<f64>() / n).collect();
    let cov: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    images.iter().map(|im| (im.as_slice()[i] - mean[i]) * (im.as_slice()[j] - mean[j])).sum::<f64>()
                        / (n - 1.0)
                })
                .collect()
        })
        .collect();
    let (values, vectors) = jacobi_eigen(cov.clone());
    let basis = pca_fit(&images, 4).unwrap();
    for k in 0..4 {
        assert!((basis.variances()[k] - values[k]).abs() <= 1e-8 * values[k]);
        let cos: f64 = basis.components()[k].iter().zip(&vectors[k]).map(|(a, b)| a * b).sum();
        assert!(cos.abs() >= 1.0 - 1e-8);
    }
    // axes 1 and 2 dominate
    assert!(basis.components()[0][0].abs() > 0.99 && basis.components()[1][1].abs() > 0.99);
    let total: f64 = (0..p).map(|i| cov[i][i]).sum();
    assert!(basis.variances().iter().sum::<f64>() <= total);
    let full = pca_fit(&images, p).unwrap();
    assert!((full.variances().iter().sum::<f64>() - total).abs() <= 1e-9 * total);
}

#[test]
fn pca_features_keep_pixel_accuracy() {
    let spec = SyntheticSpec::reference();
    let g = Generator::new(spec).unwrap();
    let train = sample_dataset(&g, 1000, 31).unwrap();
    let valid = sample_dataset(&g, 500, 32).unwrap();
    let images = |rs: &[latreg_core::Record]| rs.iter().map(|r| r.image.clone()).collect::<Vec<_>>();
    let labels = |rs: &[latreg_core::Record]| rs.iter().map(|r| r.labels["yaw"].binary).collect::<Vec<i8>>();
    let (ti, vi) = (images(&train), images(&valid));
    let pix = fit_feature_svm(&ti, &labels(&train), &SvmConfig::default()).unwrap();
    let pix_acc = svm_validation_accuracy(&pix, &vi, &labels(&valid)).unwrap();
    let basis = pca_fit(&ti, 30).unwrap();
    let proj = |ims: &[ImageVector]| ims.iter().map(|im| pca_project(&basis, im).unwrap()).collect::<Vec<_>>();
    let pca = fit_feature_svm(&proj(&ti), &labels(&train), &SvmConfig::default()).unwrap();
    let pca_acc = svm_validation_accuracy(&pca, &proj(&vi), &labels(&valid)).unwrap();
    assert!(pca_acc >= pix_acc - 0.05, "{pca_acc} vs {pix_acc}");
}

fn noisy_line(n: usize, s: u64, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed::rng(s);
    let d: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y = d.iter().map(|x| 10.0 * x + 3.0 + noise * rng.sample::<f64, _>(StandardNormal)).collect();
    (d, y)
}

#[test]
fn protocol_examples() {
    let (d, y) = noisy_line(300, 1, 0.0);
    let mut cfg = ProtocolConfig::new(2, CalibratorKind::OLS, 4);
    cfg.repeats = 50;
    let exact = repeated_subset_protocol(&d, &y, &cfg).unwrap();
    assert!(exact.mean_mae <= 1e-9 && exact.std_mae <= 1e-9);

    let (d, y) = noisy_line(1200, 2, 0.5);
    cfg.repeats = 1;
    assert_eq!(repeated_subset_protocol(&d, &y, &cfg).unwrap().std_mae, 0.0);
    cfg.repeats = 200;
    let few = repeated_subset_protocol(&d, &y, &cfg).unwrap();
    let many = repeated_subset_protocol(&d, &y, &ProtocolConfig { n_train: 1000, ..cfg }).unwrap();
    assert!(many.mean_mae <= few.mean_mae + few.std_mae);
    let mean = repeated_subset_protocol(&d, &y, &ProtocolConfig { calibrator: CalibratorKind::Mean, ..cfg }).unwrap();
    assert!(few.mean_mae < mean.mean_mae);
    assert_eq!(mean_predictor(&[1.0, 2.0, 3.0]).unwrap().predict(17.0), 2.0);
}

#[test]
fn replicated_codes_make_ablation_modes_coincide() {
    let spec = SyntheticSpec::reference();
    let g = Generator::new(spec.clone()).unwrap();
    let recs = sample_dataset(&g, 200, 13).unwrap();
    let plane = Hyperplane::from_direction(spec.attributes[0].direction.clone(), Some(0.2)).unwrap();
    let latents: Vec<ExtendedLatent> = recs.iter().map(|r| r.extended.clone()).collect();
    let labels: Vec<f64> = recs.iter().map(|r| r.labels["yaw"].noisy).collect();
    let scores = LayerScores::from_weights(vec![3.0, 1.0, 2.0, 0.5, 0.1, 0.1, 0.2, 0.1]).unwrap();
    let rep = bridging_ablation(&latents, &labels, &plane, &scores, &[5, 20], 100, 3).unwrap();
    let reference = rep.mode("weighted").unwrap();
    for r in &rep.reports {
        for (a, b) in r.records.iter().zip(&reference.records) {
            assert!((a.mean_mae - b.mean_mae).abs() <= 1e-9, "{} {} {}", r.feature_kind, a.mean_mae, b.mean_mae);
        }
    }
}

#[test]
fn sorting_examples() {
    let spec = SyntheticSpec::reference();
    let g = Generator::new(spec.clone()).unwrap();
    let attr = &spec.attributes[2];
    let plane = Hyperplane::from_direction(attr.direction.clone(), Some(0.0)).unwrap();
    let scores = LayerScores::uniform(g.layers());
    // oracle values 1 and 5, listed high first
    let code = |v: f64| {
        let t = (v - attr.offset) / attr.slope;
        LatentCode::new(attr.direction.iter().map(|u| t * u).collect()).unwrap()
    };
    let items = vec![g.render(&code(5.0)).unwrap(), g.render(&code(1.0)).unwrap()];
    let cfg = InversionConfig::default();
    let res = sort_by_attribute(&items, &g, &plane, &scores, &cfg, Some(&[5.0, 1.0])).unwrap();
    assert_eq!(res.ordering, vec![1, 0]);
    assert_eq!(res.kendall_tau, Some(1.0));

    let recs = sample_dataset(&g, 12, 6).unwrap();
    let items: Vec<ImageVector> = recs.iter().map(|r| r.image.clone()).collect();
    let fwd = sort_by_attribute(&items, &g, &plane, &scores, &cfg, None).unwrap();
    let back = sort_by_attribute(&items, &g, &plane.negated(), &scores, &cfg, None).unwrap();
    let mut reversed = back.ordering.clone();
    reversed.reverse();
    assert_eq!(fwd.ordering, reversed);
    assert!(fwd.scores.windows(2).all(|w| w[0] <= w[1]));
}

proptest! {
    #[test]
    fn kendall_matches_brute_force(n in 2usize..40, s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let mut a: Vec<usize> = (0..n).collect();
        let mut b = a.clone();
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        let tau = kendall_tau(&a, &b).unwrap();
        prop_assert!((tau - brute_tau(&a, &b)).abs() <= 1e-15);
        prop_assert!((-1.0..=1.0).contains(&tau));
    }

    #[test]
    fn positive_affine_features_keep_protocol_mae(c in 0.01f64..100.0, k in -50.0f64..50.0, s in 0u64..1000) {
        let (d, y) = noisy_line(80, s, 1.0);
        let mut cfg = ProtocolConfig::new(5, CalibratorKind::OLS, s);
        cfg.repeats = 20;
        let base = repeated_subset_protocol(&d, &y, &cfg).unwrap();
        let moved: Vec<f64> = d.iter().map(|v| c * v + k).collect();
        let other = repeated_subset_protocol(&moved, &y, &cfg).unwrap();
        prop_assert!((base.mean_mae - other.mean_mae).abs() <= 1e-8 * (1.0 + base.mean_mae));
        let idx: Vec<usize> = (0..d.len()).collect();
        prop_assert_eq!(order_by(&d, &idx), order_by(&moved, &idx));
    }

    #[test]
    fn projection_never_grows(s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let images: Vec<ImageVector> = (0..12)
            .map(|_| ImageVector::new((0..6).map(|_| rng.sample(StandardNormal)).collect()).unwrap())
            .collect();
        let basis = pca_fit(&images, 3).unwrap();
        for im in &images {
            let f = pca_project(&basis, im).unwrap();
            let centered: f64 = im.as_slice().iter().zip(basis.mean()).map(|(a, m)| (a - m) * (a - m)).sum();
            prop_assert!(f.iter().map(|v| v * v).sum::<f64>() <= centered + 1e-12);
        }
    }

    #[test]
    fn eq3_matches_plain_distance_for_any_scores(w in prop::collection::vec(-3.0f64..3.0, 16),
                                                 weights in prop::collection::vec(0.01f64..1.0, 8)) {
        let spec = SyntheticSpec::reference();
        let plane = fit_svm(&[spec.attributes[0].direction.clone(), spec.attributes[0].direction.iter().map(|v| -v).collect()], &[1, -1], &SvmConfig::default()).unwrap();
        let code = LatentCode::new(w).unwrap();
        let scores = LayerScores::from_weights(weights).unwrap();
        let lhs = distance_weighted(&ExtendedLatent::replicate(&code, 8), &plane, &scores).unwrap();
        prop_assert!((lhs - plane.distance(code.as_slice()).unwrap()).abs() <= 1e-12);
    }
}
