//! Recovering an extended latent code for an image by direct optimization of
//! the squared reconstruction error.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::latent::{ExtendedLatent, ImageVector};
use crate::seed;
use crate::synthetic::Generator;

const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    Zeros,
    Provided { latent: ExtendedLatent },
    /// Independent standard-normal entries; restart `r` uses stream `r` of `seed`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub step_size: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this.
    pub tolerance: f64,
    pub restarts: usize,
    pub init: InitMode,
    /// Weight of `Σ_l ||w_l − mean(w)||²`, pulling the solution toward
    /// replicated codes. Zero disables it.
    pub manifold_weight: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            max_iterations: 2000,
            tolerance: 1e-10,
            restarts: 3,
            init: InitMode::Zeros,
            manifold_weight: 0.0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "inversion step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("inversion needs at least one restart".into()));
        }
        if !(self.tolerance >= 0.0) || !(self.manifold_weight >= 0.0) {
            return Err(Error::InvalidConfig(
                "inversion tolerance and manifold weight must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub latent: ExtendedLatent,
    /// Reconstruction error of `latent`.
    pub loss: f64,
    /// Accepted descent steps.
    pub iterations: usize,
}

/// `Σ (G(w⁺) − target)²`.
pub fn reconstruction_error(
    g: &Generator,
    w_plus: &ExtendedLatent,
    target: &ImageVector,
) -> Result<f64> {
    check_dim("reconstruction target", g.pixels(), target.len())?;
    let img = g.generate(w_plus)?;
    Ok(img
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

pub(crate) struct Descent {
    pub latent: ExtendedLatent,
    pub objective: f64,
    pub reconstruction: f64,
    pub iterations: usize,
}

struct Objective<'a> {
    g: &'a Generator,
    target: &'a [f64],
    manifold_weight: f64,
    image: Vec<f64>,
}

impl Objective<'_> {
    /// Returns (objective, reconstruction error) and leaves the residual in `image`.
    fn eval(&mut self, x: &ExtendedLatent) -> (f64, f64) {
        self.g.render_into(x, &mut self.image);
        let mut recon = 0.0;
        for (px, t) in self.image.iter_mut().zip(self.target) {
            *px -= t;
            recon += *px * *px;
        }
        let mut obj = recon;
        if self.manifold_weight > 0.0 {
            let mean = x.row_mean();
            let spread: f64 = x
                .rows()
                .map(|r| {
                    r.iter()
                        .zip(mean.as_slice())
                        .map(|(a, m)| (a - m) * (a - m))
                        .sum::<f64>()
                })
                .sum();
            obj += self.manifold_weight * spread;
        }
        (obj, recon)
    }

    fn gradient(&self, x: &ExtendedLatent, grad: &mut ExtendedLatent) {
        self.g.backward_into(x, &self.image, grad);
        grad.as_flat_mut().iter_mut().for_each(|v| *v *= 2.0);
        if self.manifold_weight > 0.0 {
            let mean = x.row_mean();
            for l in 0..x.layers() {
                let row = x.row(l);
                grad.row_mut(l)
                    .iter_mut()
                    .zip(row.iter().zip(mean.as_slice()))
                    .for_each(|(gv, (a, m))| *gv += 2.0 * self.manifold_weight * (a - m));
            }
        }
    }
}

/// Gradient descent with step halving from `init`. `observe` sees the
/// gradient at every iterate before the step is taken.
pub(crate) fn descend(
    g: &Generator,
    target: &[f64],
    init: ExtendedLatent,
    cfg: &InversionConfig,
    mut observe: impl FnMut(&ExtendedLatent),
) -> Result<Descent> {
    let mut obj = Objective {
        g,
        target,
        manifold_weight: cfg.manifold_weight,
        image: vec![0.0; g.pixels()],
    };
    let mut x = init;
    let (mut loss, mut recon) = obj.eval(&x);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    let mut grad = ExtendedLatent::zeros(x.layers(), x.dim());
    let mut cand = x.clone();
    let mut step = cfg.step_size;
    let mut accepted = 0usize;

    while accepted < cfg.max_iterations && loss > 0.0 {
        obj.gradient(&x, &mut grad);
        observe(&grad);
        let mut halvings = 0usize;
        let found = loop {
            cand.as_flat_mut()
                .iter_mut()
                .zip(x.as_flat().iter().zip(grad.as_flat()))
                .for_each(|(c, (xv, gv))| *c = xv - step * gv);
            let (cand_loss, cand_recon) = obj.eval(&cand);
            if !cand_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: accepted + 1,
                });
            }
            if cand_loss <= loss {
                break Some((cand_loss, cand_recon));
            }
            if halvings == MAX_HALVINGS {
                break None;
            }
            halvings += 1;
            step *= 0.5;
        };
        let Some((new_loss, new_recon)) = found else {
            break;
        };
        std::mem::swap(&mut x, &mut cand);
        accepted += 1;
        let decrease = loss - new_loss;
        loss = new_loss;
        recon = new_recon;
        if decrease < cfg.tolerance {
            break;
        }
    }
    // the residual buffer may belong to a rejected candidate
    let (loss_final, recon_final) = obj.eval(&x);
    debug_assert!(loss_final == loss && recon_final == recon);
    Ok(Descent {
        latent: x,
        objective: loss_final,
        reconstruction: recon_final,
        iterations: accepted,
    })
}

fn initial_code(g: &Generator, cfg: &InversionConfig, restart: usize) -> Result<ExtendedLatent> {
    let (layers, dim) = (g.layers(), g.latent_dim());
    match &cfg.init {
        InitMode::Zeros => Ok(ExtendedLatent::zeros(layers, dim)),
        InitMode::Provided { latent } => {
            check_dim("initial code layers", layers, latent.layers())?;
            check_dim("initial code dim", dim, latent.dim())?;
            Ok(latent.clone())
        }
        InitMode::Random { seed } => {
            let mut rng = seed::stream(*seed, restart as u64);
            let data = (0..layers * dim).map(|_| rng.sample(StandardNormal)).collect();
            ExtendedLatent::from_flat(layers, dim, data)
        }
    }
}

/// Minimizes `||G(w⁺) − target||²` and returns the best restart.
pub fn invert(g: &Generator, target: &ImageVector, cfg: &InversionConfig) -> Result<InversionResult> {
    cfg.validate()?;
    check_dim("inversion target", g.pixels(), target.len())?;
    // deterministic inits give identical restarts
    let restarts = match cfg.init {
        InitMode::Random { .. } => cfg.restarts,
        _ => 1,
    };
    let mut best: Option<Descent> = None;
    for r in 0..restarts {
        let run = descend(g, target.as_slice(), initial_code(g, cfg, r)?, cfg, |_| {})?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(InversionResult {
        latent: best.latent,
        loss: best.reconstruction,
        iterations: best.iterations,
    })
}

/// Inverts every target. With random initialization, target `i` uses stream
/// `i` of the configured seed, so results are independent of scheduling.
pub fn invert_batch(
    g: &Generator,
    targets: &[ImageVector],
    cfg: &InversionConfig,
) -> Result<Vec<InversionResult>> {
    targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut item_cfg = cfg.clone();
            if let InitMode::Random { seed } = cfg.init {
                item_cfg.init = InitMode::Random {
                    seed: seed::derive(seed, i as u64),
                };
            }
            invert(g, t, &item_cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::LatentCode;
    use crate::synthetic::SyntheticSpec;

    fn code(g: &Generator, s: u64) -> ExtendedLatent {
        let mut rng = seed::rng(s);
        let data = (0..g.layers() * g.latent_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        ExtendedLatent::from_flat(g.layers(), g.latent_dim(), data).unwrap()
    }

    #[test]
    fn provided_optimum_stops_immediately() {
        let g = Generator::new(SyntheticSpec::reference()).unwrap();
        let w = code(&g, 1);
        let target = g.generate(&w).unwrap();
        let cfg = InversionConfig {
            init: InitMode::Provided { latent: w.clone() },
            ..InversionConfig::default()
        };
        let res = invert(&g, &target, &cfg).unwrap();
        assert_eq!(res.latent, w);
        assert_eq!(res.loss, 0.0);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn affine_generator_reaches_global_optimum() {
        let spec = SyntheticSpec::with_masks(8, 4, &[vec![0, 1], vec![1, 2, 3]], 0.0, 5);
        let g = Generator::new(spec).unwrap();
        let target = g.generate(&code(&g, 2)).unwrap();
        let cfg = InversionConfig {
            init: InitMode::Random { seed: 9 },
            ..InversionConfig::default()
        };
        let res = invert(&g, &target, &cfg).unwrap();
        assert!(res.loss <= 1e-8, "loss {}", res.loss);
    }

    #[test]
    fn reconstruction_error_examples() {
        let g = Generator::new(SyntheticSpec::reference()).unwrap();
        let w = code(&g, 3);
        let img = g.generate(&w).unwrap();
        assert_eq!(reconstruction_error(&g, &w, &img).unwrap(), 0.0);
        let c = 0.25;
        let shifted = ImageVector::new(img.as_slice().iter().map(|v| v + c).collect()).unwrap();
        let err = reconstruction_error(&g, &w, &shifted).unwrap();
        assert!((err - g.pixels() as f64 * c * c).abs() < 1e-10);
        assert!(reconstruction_error(&g, &w, &ImageVector::zeros(3)).is_err());
    }

    #[test]
    fn returned_loss_is_reconstruction_error() {
        let g = Generator::new(SyntheticSpec::reference()).unwrap();
        let target = g.render(&LatentCode::new(vec![0.5; 16]).unwrap()).unwrap();
        let cfg = InversionConfig {
            max_iterations: 50,
            ..InversionConfig::default()
        };
        let res = invert(&g, &target, &cfg).unwrap();
        assert_eq!(res.loss, reconstruction_error(&g, &res.latent, &target).unwrap());
    }

    #[test]
    fn more_restarts_never_hurt() {
        let g = Generator::new(SyntheticSpec::reference()).unwrap();
        let target = g.generate(&code(&g, 4)).unwrap();
        let base = InversionConfig {
            init: InitMode::Random { seed: 12 },
            max_iterations: 100,
            ..InversionConfig::default()
        };
        let mut prev = f64::INFINITY;
        for restarts in 1..=4 {
            let cfg = InversionConfig {
                restarts,
                ..base.clone()
            };
            let res = invert(&g, &target, &cfg).unwrap();
            assert!(res.loss <= prev);
            prev = res.loss;
        }
    }

    #[test]
    fn huge_steps_backtrack_monotonically() {
        let g = Generator::new(SyntheticSpec::reference()).unwrap();
        let target = g.generate(&code(&g, 5)).unwrap();
        let cfg = InversionConfig {
            step_size: 50.0,
            max_iterations: 30,
            ..InversionConfig::default()
        };
        let mut losses = Vec::new();
        let init = ExtendedLatent::zeros(g.layers(), g.latent_dim());
        let start = reconstruction_error(&g, &init, &target).unwrap();
        descend(&g, target.as_slice(), init, &cfg, |grad| {
            losses.push(grad.as_flat().iter().map(|v| v * v).sum::<f64>());
        })
        .unwrap();
        let res = invert(&g, &target, &cfg).unwrap();
        assert!(res.loss < start);
    }

    #[test]
    fn divergent_step_is_reported() {
        let g = Generator::new(SyntheticSpec::reference()).unwrap();
        let target = g.generate(&code(&g, 6)).unwrap();
        let cfg = InversionConfig {
            step_size: 1e300,
            ..InversionConfig::default()
        };
        assert!(matches!(
            invert(&g, &target, &cfg),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let g = Generator::new(SyntheticSpec::reference()).unwrap();
        let t = ImageVector::zeros(g.pixels());
        for cfg in [
            InversionConfig {
                step_size: 0.0,
                ..InversionConfig::default()
            },
            InversionConfig {
                restarts: 0,
                ..InversionConfig::default()
            },
        ] {
            assert!(matches!(invert(&g, &t, &cfg), Err(Error::InvalidConfig(_))));
        }
        assert!(invert(&g, &ImageVector::zeros(2), &InversionConfig::default()).is_err());
    }
}
