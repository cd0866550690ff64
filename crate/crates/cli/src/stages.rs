//! Pipeline stages. Each stage reads declared artifacts from the output
//! directory, writes its own, and records them in `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use latreg_core::baselines::{fit_feature_svm, pca_fit, pca_project, PcaBasis};
use latreg_core::boundary::{fit_svm, svm_validation_accuracy, BoundaryFile};
use latreg_core::calibration::{fit_linear, CalibratorFile};
use latreg_core::evaluation::{
    bridging_ablation, few_shot_curve, mae, polynomial_comparison, repeated_subset_protocol, sort_by_attribute,
    training_split, write_report_csv, write_sort_csv, CalibratorKind, EvalReport, ProtocolConfig, Sampler,
};
use latreg_core::importance::{compute_layer_scores, ScoresFile};
use latreg_core::inversion::invert_batch;
use latreg_core::io::{self, Dataset, InversionRow, LatentTable};
use latreg_core::{Calibrator, Generator, Hyperplane, ImageVector, InitMode, LayerScores, SyntheticSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Loaded;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    GenData,
    FitBoundary,
    Invert,
    LayerScores,
    Calibrate,
    Evaluate,
    Ablate,
    Sort,
}

impl Stage {
    /// Pipeline order.
    pub const ALL: [Stage; 8] = [
        Stage::GenData,
        Stage::FitBoundary,
        Stage::Invert,
        Stage::LayerScores,
        Stage::Calibrate,
        Stage::Evaluate,
        Stage::Ablate,
        Stage::Sort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::FitBoundary => "fit-boundary",
            Stage::Invert => "invert",
            Stage::LayerScores => "layer-scores",
            Stage::Calibrate => "calibrate",
            Stage::Evaluate => "evaluate",
            Stage::Ablate => "ablate",
            Stage::Sort => "sort",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BOUNDARY_FILE: &str = "boundary.json";
pub const BASELINES_FILE: &str = "baselines.json";
pub const PCA_FILE: &str = "pca.f64";
pub const SCORES_FILE: &str = "scores.json";
pub const CALIBRATOR_FILE: &str = "calibrator.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const SORT_CSV: &str = "sort.csv";
pub const SORT_JSON: &str = "sort.json";
const TRAIN_DIR: &str = "data/train";
const POOL_DIR: &str = "data/pool";

/// Version string embedded in every artifact.
pub fn version() -> &'static str {
    env!("LATREG_VERSION")
}

pub struct Context {
    pub loaded: Loaded,
    out: PathBuf,
    written: Vec<String>,
}

impl Context {
    pub fn new(loaded: Loaded) -> Self {
        let out = loaded.out_dir();
        Self {
            loaded,
            out,
            written: Vec::new(),
        }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn input(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::missing(&p, &"required input not found"))
        }
    }

    fn record(&mut self, rel: &str) {
        self.written.push(rel.to_owned());
    }

    fn seed(&self, label: &str) -> u64 {
        self.loaded.config.stage_seed(label)
    }

    fn attribute(&self) -> &str {
        &self.loaded.config.data.attribute
    }

    /// Writes `{version, run_config, ..body}` as pretty JSON.
    fn write_json<T: Serialize>(&mut self, rel: &str, body: &T) -> CliResult<()> {
        let mut value = serde_json::to_value(body)?;
        let obj = value.as_object_mut().expect("artifact bodies are structs");
        obj.insert("version".into(), Value::String(version().to_owned()));
        obj.insert("run_config".into(), serde_json::to_value(&self.loaded.config)?);
        std::fs::write(self.path(rel), serde_json::to_string_pretty(&value)? + "\n")
            .map_err(|e| CliError::from(e).with_path(&self.path(rel)))?;
        self.record(rel);
        Ok(())
    }

    fn read_json<T: DeserializeOwned>(&self, rel: &str) -> CliResult<T> {
        let p = self.input(rel)?;
        let text = io::read_text(&p)?;
        serde_json::from_str(&text).map_err(|e| CliError::from(latreg_core::Error::Format(format!("{}: {e}", p.display()))))
    }

    fn dataset(&self, dir: &str) -> CliResult<Dataset> {
        for f in [io::SPEC_FILE, io::LATENTS_FILE, io::LABELS_FILE] {
            self.input(&format!("{dir}/{f}"))?;
        }
        let data = io::read_dataset(&self.path(dir))?;
        data.labels_for(self.attribute())?;
        Ok(data)
    }

    fn plane(&self) -> CliResult<Hyperplane> {
        let f: BoundaryArtifact = self.read_json(BOUNDARY_FILE)?;
        Ok(Hyperplane::try_from(f.boundary)?)
    }

    fn scores(&self) -> CliResult<LayerScores> {
        let f: ScoresFile = self.read_json(SCORES_FILE)?;
        Ok(f.scores)
    }

    fn write_manifest(&self, stage: Stage) -> CliResult<()> {
        let path = self.path(MANIFEST_FILE);
        let mut stages: BTreeMap<String, Vec<String>> = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str::<Manifest>(&text).map(|m| m.stages).unwrap_or_default(),
            Err(_) => BTreeMap::new(),
        };
        stages.insert(stage.name().to_owned(), self.written.clone());
        let manifest = Manifest {
            version: version().to_owned(),
            run_config: serde_json::to_value(&self.loaded.config)?,
            stages,
        };
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| CliError::from(e).with_path(&path))?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    run_config: Value,
    stages: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BoundaryArtifact {
    boundary: BoundaryFile,
    validation_accuracy: f64,
    /// Cosine between the fitted normal and the generator's true direction.
    direction_cosine: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeaturePlane {
    boundary: BoundaryFile,
    validation_accuracy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BaselinesArtifact {
    pixel: FeaturePlane,
    pca: FeaturePlane,
    pca_components: usize,
}

#[derive(Debug, Serialize)]
struct CalibratorArtifact {
    calibrator: CalibratorFile,
    holdout_mae: f64,
    /// The gap sampler fell back to its grid pick.
    fallback: bool,
}

#[derive(Debug, Serialize)]
struct ReportArtifact<'a> {
    reports: &'a [EvalReport],
}

#[derive(Debug, Serialize)]
struct AblationArtifact<'a> {
    items: usize,
    best_layer: usize,
    layer_r2: &'a [f64],
    reports: &'a [EvalReport],
}

#[derive(Debug, Serialize)]
struct SortArtifact<'a> {
    items: usize,
    kendall_tau: Option<f64>,
    ordering: &'a [usize],
    failed: &'a [usize],
}

/// Runs one stage inside the configured thread pool and updates the manifest.
pub fn run_stage(ctx: &mut Context, stage: Stage) -> CliResult<()> {
    ctx.written.clear();
    std::fs::create_dir_all(ctx.out()).map_err(|e| CliError::from(e).with_path(ctx.out()))?;
    let threads = ctx.loaded.config.parallelism.threads();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    pool.install(|| match stage {
        Stage::GenData => gen_data(ctx),
        Stage::FitBoundary => fit_boundary(ctx),
        Stage::Invert => invert(ctx),
        Stage::LayerScores => layer_scores(ctx),
        Stage::Calibrate => calibrate(ctx),
        Stage::Evaluate => evaluate(ctx),
        Stage::Ablate => ablate(ctx),
        Stage::Sort => sort(ctx),
    })
    .and_then(|()| ctx.write_manifest(stage))
    .map_err(|e| e.in_stage(stage.name()))
}

pub fn run_pipeline(ctx: &mut Context) -> CliResult<()> {
    for stage in Stage::ALL {
        run_stage(ctx, stage)?;
    }
    Ok(())
}

fn images(g: &Generator, data: &Dataset, n: usize) -> CliResult<Vec<ImageVector>> {
    Ok(data.latents.latents[..n]
        .iter()
        .map(|w| g.generate(w))
        .collect::<latreg_core::Result<_>>()?)
}

/// Distance of each generating code to the plane. Stored codes are
/// replicated, so the row mean is the base code.
fn latent_distances(data: &Dataset, plane: &Hyperplane) -> CliResult<Vec<f64>> {
    Ok(data
        .latents
        .latents
        .iter()
        .map(|w| plane.distance(w.row_mean().as_slice()))
        .collect::<latreg_core::Result<_>>()?)
}

fn noisy_labels(ctx: &Context, data: &Dataset) -> CliResult<Vec<f64>> {
    Ok(data.labels_for(ctx.attribute())?.iter().map(|l| l.noisy).collect())
}

fn binary_labels(ctx: &Context, data: &Dataset) -> CliResult<Vec<i8>> {
    Ok(data.labels_for(ctx.attribute())?.iter().map(|l| l.binary).collect())
}

fn check_items(what: &str, wanted: usize, available: usize) -> CliResult<()> {
    if wanted > available {
        return Err(CliError::config(format!(
            "{what} asks for {wanted} items but the pool has {available}"
        )));
    }
    Ok(())
}

fn gen_data(ctx: &mut Context) -> CliResult<()> {
    let spec_path = ctx.loaded.spec_path();
    let text = std::fs::read_to_string(&spec_path).map_err(|e| CliError::missing(&spec_path, &e))?;
    let spec: SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", spec_path.display())))?;
    let g = Generator::new(spec.clone())?;
    spec.attribute(ctx.attribute())?;
    let data = ctx.loaded.config.data.clone();
    for (dir, n, label) in [(TRAIN_DIR, data.train_size, "data-train"), (POOL_DIR, data.pool_size, "data-pool")] {
        let records = latreg_core::synthetic::sample_dataset(&g, n, ctx.seed(label))?;
        io::write_dataset(&ctx.path(dir), &spec, &records)?;
        for f in [io::SPEC_FILE, io::LATENTS_FILE, io::LABELS_FILE] {
            ctx.record(&format!("{dir}/{f}"));
        }
    }
    Ok(())
}

fn fit_boundary(ctx: &mut Context) -> CliResult<()> {
    let train = ctx.dataset(TRAIN_DIR)?;
    let pool = ctx.dataset(POOL_DIR)?;
    let g = Generator::new(train.spec.clone())?;
    let cfg = ctx.loaded.config.svm.clone();
    let (train_bin, pool_bin) = (binary_labels(ctx, &train)?, binary_labels(ctx, &pool)?);

    let codes = |d: &Dataset| -> Vec<Vec<f64>> { d.latents.latents.iter().map(|w| w.row_mean().into_vec()).collect() };
    let (train_codes, pool_codes) = (codes(&train), codes(&pool));
    let plane = fit_svm(&train_codes, &train_bin, &cfg)?;
    let truth = &train.spec.attribute(ctx.attribute())?.direction;
    let artifact = BoundaryArtifact {
        boundary: plane.to_file(ctx.attribute()),
        validation_accuracy: svm_validation_accuracy(&plane, &pool_codes, &pool_bin)?,
        direction_cosine: plane.normal().iter().zip(truth).map(|(a, b)| a * b).sum(),
    };
    ctx.write_json(BOUNDARY_FILE, &artifact)?;

    let train_images = images(&g, &train, train.len())?;
    let pool_images = images(&g, &pool, pool.len())?;
    let pixel_plane = fit_feature_svm(&train_images, &train_bin, &cfg)?;
    let k = ctx.loaded.config.evaluation.pca_components;
    let basis = pca_fit(&train_images, k)?;
    let project = |ims: &[ImageVector]| -> CliResult<Vec<Vec<f64>>> {
        Ok(ims.iter().map(|im| pca_project(&basis, im)).collect::<latreg_core::Result<_>>()?)
    };
    let (train_pca, pool_pca) = (project(&train_images)?, project(&pool_images)?);
    let pca_plane = fit_feature_svm(&train_pca, &train_bin, &cfg)?;
    basis.save(&ctx.path(PCA_FILE))?;
    ctx.record(PCA_FILE);
    let baselines = BaselinesArtifact {
        pixel: FeaturePlane {
            boundary: pixel_plane.to_file(ctx.attribute()),
            validation_accuracy: svm_validation_accuracy(&pixel_plane, &pool_images, &pool_bin)?,
        },
        pca: FeaturePlane {
            boundary: pca_plane.to_file(ctx.attribute()),
            validation_accuracy: svm_validation_accuracy(&pca_plane, &pool_pca, &pool_bin)?,
        },
        pca_components: k,
    };
    ctx.write_json(BASELINES_FILE, &baselines)
}

fn invert(ctx: &mut Context) -> CliResult<()> {
    let pool = ctx.dataset(POOL_DIR)?;
    let g = Generator::new(pool.spec.clone())?;
    let stage = ctx.loaded.config.inversion.clone();
    check_items("inversion", stage.items, pool.len())?;
    let targets = images(&g, &pool, stage.items)?;
    let results = invert_batch(&g, &targets, &stage.solver)?;
    let table = LatentTable {
        layers: g.layers(),
        dim: g.latent_dim(),
        latents: results.iter().map(|r| r.latent.clone()).collect(),
    };
    io::write_latents(&ctx.path(io::INVERTED_FILE), &table)?;
    ctx.record(io::INVERTED_FILE);
    let rows: Vec<InversionRow> = results
        .iter()
        .enumerate()
        .map(|(index, r)| InversionRow {
            index,
            final_loss: r.loss,
            iterations: r.iterations,
        })
        .collect();
    io::write_csv(&ctx.path(io::INVERSION_REPORT_FILE), &rows)?;
    ctx.record(io::INVERSION_REPORT_FILE);
    Ok(())
}

fn layer_scores(ctx: &mut Context) -> CliResult<()> {
    let pool = ctx.dataset(POOL_DIR)?;
    let g = Generator::new(pool.spec.clone())?;
    let plane = ctx.plane()?;
    let cfg = ctx.loaded.config.importance.clone();
    let scores = compute_layer_scores(&g, &plane, &cfg)?;
    let file = ScoresFile {
        attribute: ctx.attribute().to_owned(),
        layers: g.layers(),
        scores,
        config: cfg,
    };
    ctx.write_json(SCORES_FILE, &file)
}

fn calibrate(ctx: &mut Context) -> CliResult<()> {
    let pool = ctx.dataset(POOL_DIR)?;
    let plane = ctx.plane()?;
    let cfg = ctx.loaded.config.calibration.clone();
    let d = latent_distances(&pool, &plane)?;
    let y = noisy_labels(ctx, &pool)?;
    let (train, fallback) = training_split(&d, cfg.n_train, cfg.sampler, ctx.seed("calibrate"))?;
    let pick = |v: &[f64], idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| v[i]).collect() };
    let cal = fit_linear(&pick(&d, &train), &pick(&y, &train), cfg.regularization)?;
    let mut in_train = vec![false; d.len()];
    train.iter().for_each(|&i| in_train[i] = true);
    let test: Vec<usize> = (0..d.len()).filter(|&i| !in_train[i]).collect();
    let preds: Vec<f64> = test.iter().map(|&i| cal.predict(d[i])).collect();
    let artifact = CalibratorArtifact {
        holdout_mae: mae(&preds, &pick(&y, &test))?,
        calibrator: CalibratorFile::new(&Calibrator::Linear(cal), ctx.attribute(), train),
        fallback,
    };
    ctx.write_json(CALIBRATOR_FILE, &artifact)
}

fn evaluate(ctx: &mut Context) -> CliResult<()> {
    let pool = ctx.dataset(POOL_DIR)?;
    let g = Generator::new(pool.spec.clone())?;
    let plane = ctx.plane()?;
    let baselines: BaselinesArtifact = ctx.read_json(BASELINES_FILE)?;
    let basis = PcaBasis::load(&ctx.input(PCA_FILE)?)?;
    let pixel_plane = Hyperplane::try_from(baselines.pixel.boundary)?;
    let pca_plane = Hyperplane::try_from(baselines.pca.boundary)?;
    let ev = ctx.loaded.config.evaluation.clone();

    let y = noisy_labels(ctx, &pool)?;
    let latent = latent_distances(&pool, &plane)?;
    let pool_images = images(&g, &pool, pool.len())?;
    let pixel: Vec<f64> = pool_images
        .iter()
        .map(|im| pixel_plane.distance(im.as_slice()))
        .collect::<latreg_core::Result<_>>()?;
    let pca: Vec<f64> = pool_images
        .iter()
        .map(|im| pca_project(&basis, im).and_then(|f| pca_plane.distance(&f)))
        .collect::<latreg_core::Result<_>>()?;

    let seed = ctx.seed("evaluate");
    let base = ProtocolConfig {
        n_train: 0,
        repeats: ev.repeats,
        calibrator: CalibratorKind::OLS,
        sampler: ev.sampler,
        seed,
    };
    let pca_kind = format!("pca{}_svm", baselines.pca_components);
    let mut reports = vec![
        few_shot_curve("few_shot", "latent_distance", &latent, &y, &ev.grid, &base)?,
        few_shot_curve("few_shot", "pixel_svm", &pixel, &y, &ev.grid, &base)?,
        few_shot_curve("few_shot", &pca_kind, &pca, &y, &ev.grid, &base)?,
        few_shot_curve(
            "few_shot",
            "mean_predictor",
            &latent,
            &y,
            &ev.grid,
            &ProtocolConfig {
                calibrator: CalibratorKind::Mean,
                ..base
            },
        )?,
    ];
    for &regularization in &ev.regularized {
        let cfg = ProtocolConfig {
            calibrator: CalibratorKind::Linear { regularization },
            ..base
        };
        reports.push(few_shot_curve("regularized", "latent_distance", &latent, &y, &ev.grid, &cfg)?);
    }
    reports.extend(polynomial_comparison(
        &latent,
        &y,
        &ev.polynomial_degrees,
        &ev.polynomial_grid,
        ev.repeats,
        ev.polynomial_sampler,
        seed,
    )?);
    for (name, sampler) in [("sampler_paper", Sampler::Paper), ("sampler_uniform", Sampler::Uniform)] {
        let cfg = ProtocolConfig {
            n_train: ev.sampler_comparison_n,
            sampler,
            ..base
        };
        reports.push(EvalReport {
            experiment: name.into(),
            feature_kind: "latent_distance".into(),
            calibrator: cfg.calibrator.label(),
            seed,
            records: vec![repeated_subset_protocol(&latent, &y, &cfg)?],
        });
    }
    write_report_csv(&ctx.path(REPORT_CSV), &reports)?;
    ctx.record(REPORT_CSV);
    ctx.write_json(REPORT_JSON, &ReportArtifact { reports: &reports })
}

fn ablate(ctx: &mut Context) -> CliResult<()> {
    let pool = ctx.dataset(POOL_DIR)?;
    let plane = ctx.plane()?;
    let scores = ctx.scores()?;
    let table = io::read_latents(&ctx.input(io::INVERTED_FILE)?)?;
    let n = table.latents.len();
    check_items("ablation", n, pool.len())?;
    let y = noisy_labels(ctx, &pool)?;
    let cfg = ctx.loaded.config.ablation.clone();
    let report = bridging_ablation(&table.latents, &y[..n], &plane, &scores, &cfg.grid, cfg.repeats, ctx.seed("ablate"))?;
    write_report_csv(&ctx.path(ABLATION_CSV), &report.reports)?;
    ctx.record(ABLATION_CSV);
    let artifact = AblationArtifact {
        items: n,
        best_layer: report.best_layer,
        layer_r2: &report.layer_r2,
        reports: &report.reports,
    };
    ctx.write_json(ABLATION_JSON, &artifact)
}

fn sort(ctx: &mut Context) -> CliResult<()> {
    let pool = ctx.dataset(POOL_DIR)?;
    let g = Generator::new(pool.spec.clone())?;
    let plane = ctx.plane()?;
    let scores = ctx.scores()?;
    let n = ctx.loaded.config.sort.items;
    check_items("sort", n, pool.len())?;
    let items = images(&g, &pool, n)?;
    let oracle: Vec<f64> = pool.labels_for(ctx.attribute())?[..n].iter().map(|l| l.clean).collect();
    let mut solver = ctx.loaded.config.inversion.solver.clone();
    if let InitMode::Random { .. } = solver.init {
        solver.init = InitMode::Random { seed: ctx.seed("sort") };
    }
    let result = sort_by_attribute(&items, &g, &plane, &scores, &solver, Some(&oracle))?;
    write_sort_csv(&ctx.path(SORT_CSV), &result, Some(&oracle))?;
    ctx.record(SORT_CSV);
    let artifact = SortArtifact {
        items: n,
        kendall_tau: result.kendall_tau,
        ordering: &result.ordering,
        failed: &result.failed,
    };
    ctx.write_json(SORT_JSON, &artifact)
}
