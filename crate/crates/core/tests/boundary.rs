use latreg_core::boundary::{fit_svm, svm_validation_accuracy};
use latreg_core::synthetic::sample_dataset;
use latreg_core::{seed, Generator, Hyperplane, LatentCode, SvmConfig, SyntheticSpec};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn split(spec: &SyntheticSpec, attr: &str, n: usize, s: u64) -> (Vec<Vec<f64>>, Vec<i8>) {
    let g = Generator::new(spec.clone()).unwrap();
    let recs = sample_dataset(&g, n, s).unwrap();
    let x = recs.iter().map(|r| r.latent.as_slice().to_vec()).collect();
    let y = recs.iter().map(|r| r.labels[attr].binary).collect();
    (x, y)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn median_split_recovers_ground_truth_direction() {
    let spec = SyntheticSpec::reference();
    for attr in &spec.attributes {
        let (x, y) = split(&spec, &attr.name, 2000, 1);
        let plane = fit_svm(&x, &y, &SvmConfig::default()).unwrap();
        assert!(cosine(plane.normal(), &attr.direction) >= 0.99, "{}", attr.name);
        let (vx, vy) = split(&spec, &attr.name, 1000, 2);
        assert!(svm_validation_accuracy(&plane, &vx, &vy).unwrap() >= 0.97);
    }
}

#[test]
fn positive_scaling_with_rescaled_penalty_keeps_accuracy() {
    let spec = SyntheticSpec::reference();
    let (x, y) = split(&spec, "age", 300, 4);
    let (vx, vy) = split(&spec, "age", 300, 5);
    let base = fit_svm(&x, &y, &SvmConfig::default()).unwrap();
    let acc = svm_validation_accuracy(&base, &vx, &vy).unwrap();
    for c in [0.5, 3.0] {
        let sx: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| c * v).collect()).collect();
        let svx: Vec<Vec<f64>> = vx.iter().map(|r| r.iter().map(|v| c * v).collect()).collect();
        let cfg = SvmConfig {
            c: 1.0 / (c * c),
            ..SvmConfig::default()
        };
        let scaled = fit_svm(&sx, &y, &cfg).unwrap();
        assert_eq!(svm_validation_accuracy(&scaled, &svx, &vy).unwrap(), acc);
        assert!(cosine(scaled.normal(), base.normal()) > 1.0 - 1e-6);
    }
}

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_affine(n in vec_strategy(4), w in vec_strategy(4), u in vec_strategy(4),
                          b in -3.0f64..3.0, t in -10.0f64..10.0) {
        prop_assume!(n.iter().any(|v| v.abs() > 1e-3));
        let plane = Hyperplane::from_direction(n, Some(b)).unwrap();
        let moved: Vec<f64> = w.iter().zip(&u).map(|(a, c)| a + t * c).collect();
        let un: f64 = u.iter().zip(plane.normal()).map(|(a, c)| a * c).sum();
        let lhs = plane.distance(&moved).unwrap();
        let rhs = plane.distance(&w).unwrap() + t * un;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn edits_shift_distance_by_alpha(n in vec_strategy(5), w in vec_strategy(5), alpha in -8.0f64..8.0) {
        prop_assume!(n.iter().any(|v| v.abs() > 1e-3));
        let plane = Hyperplane::from_direction(n, Some(0.25)).unwrap();
        let code = LatentCode::new(w).unwrap();
        let edited = plane.edit(&code, alpha).unwrap();
        let shift = plane.distance(edited.as_slice()).unwrap() - plane.distance(code.as_slice()).unwrap();
        prop_assert!((shift - alpha).abs() <= 1e-9);
        let back = plane.edit(&edited, -alpha).unwrap();
        for (a, b) in back.as_slice().iter().zip(code.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn fit_ignores_input_order(s in any::<u64>(), rot in 1usize..39) {
        let mut rng = seed::rng(s);
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let y: Vec<i8> = x.iter().map(|p: &Vec<f64>| if p[0] + 0.3 * p[1] >= 0.0 { 1 } else { -1 }).collect();
        prop_assume!(y.contains(&1) && y.contains(&-1));
        let a = fit_svm(&x, &y, &SvmConfig::default()).unwrap();
        let (mut px, mut py) = (x.clone(), y.clone());
        px.rotate_left(rot);
        py.rotate_left(rot);
        px.reverse();
        py.reverse();
        let b = fit_svm(&px, &py, &SvmConfig::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
