//! Run configuration: a JSON file, then `--set` overrides, then the dedicated
//! flags. Stage seeds are derived from the global seed.

use std::path::{Path, PathBuf};

use latreg_core::calibration::Regularization;
use latreg_core::evaluation::{Sampler, N_TRAIN_GRID, POLYNOMIAL_DEGREES};
use latreg_core::{seed, ImportanceConfig, InitMode, InversionConfig, SvmConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Synthetic spec file, relative to the config file.
    pub spec: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub parallelism: Parallelism,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub svm: SvmConfig,
    #[serde(default)]
    pub inversion: InversionStage,
    #[serde(default)]
    pub importance: ImportanceConfig,
    #[serde(default)]
    pub calibration: CalibrationStage,
    #[serde(default)]
    pub evaluation: EvaluationStage,
    #[serde(default)]
    pub ablation: AblationStage,
    #[serde(default)]
    pub sort: SortStage,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Parallelism {
    #[default]
    Serial,
    Workers {
        count: usize,
    },
}

impl Parallelism {
    pub fn threads(self) -> usize {
        match self {
            Parallelism::Serial => 1,
            Parallelism::Workers { count } => count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub attribute: String,
    /// Samples used to fit the hyperplanes.
    pub train_size: usize,
    /// Samples used for inversion, calibration and evaluation.
    pub pool_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            attribute: "yaw".into(),
            train_size: 2000,
            pool_size: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionStage {
    /// Leading pool items to invert.
    pub items: usize,
    pub solver: InversionConfig,
}

impl Default for InversionStage {
    fn default() -> Self {
        Self {
            items: 500,
            solver: InversionConfig {
                init: InitMode::Random { seed: 0 },
                restarts: 1,
                ..InversionConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationStage {
    pub n_train: usize,
    pub regularization: Regularization,
    pub sampler: Sampler,
}

impl Default for CalibrationStage {
    fn default() -> Self {
        Self {
            n_train: 5,
            regularization: Regularization::None,
            sampler: Sampler::Paper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationStage {
    pub grid: Vec<usize>,
    pub repeats: usize,
    pub sampler: Sampler,
    pub pca_components: usize,
    /// Penalized fits reported next to plain least squares.
    pub regularized: Vec<Regularization>,
    pub polynomial_degrees: Vec<usize>,
    pub polynomial_grid: Vec<usize>,
    pub polynomial_sampler: Sampler,
    /// Training size at which the gap sampler is compared with uniform draws.
    pub sampler_comparison_n: usize,
}

impl Default for EvaluationStage {
    fn default() -> Self {
        Self {
            grid: N_TRAIN_GRID.to_vec(),
            repeats: 1000,
            sampler: Sampler::Hybrid { paper_max: 20 },
            pca_components: 30,
            regularized: vec![Regularization::elastic_net_default()],
            polynomial_degrees: POLYNOMIAL_DEGREES.to_vec(),
            polynomial_grid: vec![6, 20, 100, 1000],
            polynomial_sampler: Sampler::Uniform,
            sampler_comparison_n: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationStage {
    pub grid: Vec<usize>,
    pub repeats: usize,
}

impl Default for AblationStage {
    fn default() -> Self {
        Self {
            grid: vec![2, 5, 10, 20, 100],
            repeats: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SortStage {
    pub items: usize,
}

impl Default for SortStage {
    fn default() -> Self {
        Self { items: 50 }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// A loaded config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn spec_path(&self) -> PathBuf {
        self.base_dir.join(&self.config.spec)
    }

    /// Output directory; relative paths resolve against the working directory.
    pub fn out_dir(&self) -> PathBuf {
        self.config.out.clone()
    }
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, &e))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    for set in &overrides.sets {
        apply_set(&mut value, set)?;
    }
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::config(format!("{}: top level must be an object", path.display())))?;
    if let Some(s) = overrides.seed {
        obj.insert("seed".into(), s.into());
    }
    if let Some(out) = &overrides.out {
        obj.insert("out".into(), Value::String(out.display().to_string()));
    }
    if let Some(count) = overrides.workers {
        obj.insert("parallelism".into(), serde_json::json!({ "mode": "workers", "count": count }));
    }
    let mut config: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    config.derive_seeds();
    config.validate()?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base_dir })
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise; missing objects along the path are created.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--set expects key=value, got `{assignment}`")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::usage(format!("--set has an empty key segment in `{key}`")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert((*part).to_owned(), parsed);
                    return Ok(());
                }
                map.entry(*part).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::usage(format!("--set: `{part}` is not an array index in `{key}`")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::usage(format!("--set: index {idx} out of range ({len}) in `{key}`")))?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::usage(format!("--set: `{key}` descends into a scalar"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

impl RunConfig {
    fn derive_seeds(&mut self) {
        self.svm.seed = seed::derive_named(self.seed, "svm");
        self.importance.seed = seed::derive_named(self.seed, "importance");
        if let InitMode::Random { .. } = self.inversion.solver.init {
            self.inversion.solver.init = InitMode::Random {
                seed: seed::derive_named(self.seed, "inversion"),
            };
        }
    }

    /// Stage seed for labelled randomness outside the core configs.
    pub fn stage_seed(&self, label: &str) -> u64 {
        seed::derive_named(self.seed, label)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::config(m.to_owned()));
        if self.data.train_size < 2 || self.data.pool_size < 2 {
            return bad("data sizes must be at least 2");
        }
        if self.parallelism.threads() == 0 {
            return bad("worker count must be at least 1");
        }
        if self.inversion.items == 0 || self.sort.items == 0 {
            return bad("inversion and sort item counts must be at least 1");
        }
        if self.evaluation.grid.is_empty() || self.evaluation.repeats == 0 {
            return bad("evaluation needs a nonempty grid and at least one repeat");
        }
        if self.ablation.grid.is_empty() || self.ablation.repeats == 0 {
            return bad("ablation needs a nonempty grid and at least one repeat");
        }
        Ok(())
    }
}
