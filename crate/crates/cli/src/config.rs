//! Run configuration file (JSON).

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clipbound::clipping::{
    DEFAULT_BOUND_LR, DEFAULT_TARGET_QUANTILE, DEFAULT_THRESHOLD_MULTIPLIER,
};
use clipbound::datasets::{
    balance_by_attribute, gen_bimodal, gen_skewed_classification, load_idx_pair, read_csv_rows, skew_class,
    SkewedBlobs, TabularEncoder, TabularRows, TabularSchema,
};
use clipbound::hpo::{Axis, ChargePolicy, GridSpec, AXIS_BATCH_SIZE, AXIS_CLIP_PARAM, AXIS_LEARNING_RATE};
use clipbound::privacy::{DEFAULT_COUNT_RATIO, DEFAULT_DELTA};
use clipbound::{ClippingConfig, ClippingMode, Dataset, ModelKind, ModelSpec, OptimizerKind, Rng, StepBudget, Strategy};
use serde::{Deserialize, Serialize};

/// Overrides the root against which relative dataset paths resolve.
pub const DATA_DIR_ENV: &str = "CLIPBOUND_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hpo: Option<HpoConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyConfig>,
    pub output_dir: PathBuf,
    /// Explicit seed list; mutually exclusive with `num_seeds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Seeds `1..=num_seeds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_seeds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Bimodal {
        #[serde(default = "default_bimodal_n")]
        n: usize,
        #[serde(default = "default_p_major")]
        p_major: f64,
        #[serde(default)]
        mode_lo: f64,
        #[serde(default = "one")]
        mode_hi: f64,
        #[serde(default = "default_jitter")]
        jitter_std: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Gaussian blobs; the training set is skewed, the test set is balanced.
    SkewedSynthetic {
        n_per_class: usize,
        num_classes: usize,
        minority_class: usize,
        #[serde(default = "default_keep")]
        keep_fraction: f64,
        cluster_separation: f64,
        dim: usize,
        test_per_class: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        num_classes: Option<usize>,
        /// Subsample one class of the training set.
        #[serde(default)]
        skew: Option<SkewConfig>,
        #[serde(default)]
        seed: u64,
    },
    Tabular {
        train: PathBuf,
        /// Held-out file; when absent `test_fraction` of `train` is split off.
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        schema: TabularSchema,
        #[serde(default)]
        balance_groups: bool,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewConfig {
    pub class: usize,
    #[serde(default = "default_keep")]
    pub keep_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClippingBlock {
    pub strategy: Strategy,
    /// Fixed bound (constant), initial bound (unbounded) or lower bound
    /// (bounded).
    pub clip_param: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_bound: Option<f64>,
    #[serde(default = "default_gamma")]
    pub target_quantile: f64,
    #[serde(default = "default_tau")]
    pub threshold_multiplier: f64,
    #[serde(default = "default_eta")]
    pub bound_lr: f64,
}

impl ClippingBlock {
    pub fn to_config(&self, strategy: Strategy, clip_param: f64) -> ClippingConfig {
        let mut cfg = strategy
            .config(clip_param)
            .with_adaptation(self.target_quantile, self.threshold_multiplier, self.bound_lr);
        if let (Some(c0), ClippingMode::Adaptive) = (self.initial_bound, cfg.mode) {
            cfg.initial_bound = c0;
        }
        cfg
    }

    pub fn clipping(&self) -> ClippingConfig {
        self.to_config(self.strategy, self.clip_param)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_rate: Option<f64>,
    /// Expected batch size; converted to a sampling rate over the training set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub clipping: ClippingBlock,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "yes")]
    pub record_grad_norms: bool,
}

impl TrainingConfig {
    pub fn budget(&self) -> Result<StepBudget> {
        match (self.epochs, self.steps) {
            (Some(e), None) => Ok(StepBudget::Epochs(e)),
            (None, Some(t)) => Ok(StepBudget::Steps(t)),
            _ => bail!("training needs exactly one of `epochs` or `steps`"),
        }
    }

    /// Sampling rate for a training set of `n` rows, with an optional batch
    /// size override.
    pub fn sampling_rate_for(&self, n: usize, batch_size: Option<usize>) -> Result<f64> {
        let q = match (batch_size, self.batch_size, self.sampling_rate) {
            (Some(b), _, _) | (None, Some(b), None) => b as f64 / n as f64,
            (None, None, Some(q)) => q,
            _ => bail!("training needs exactly one of `sampling_rate` or `batch_size`"),
        };
        ensure!(q > 0.0 && q <= 1.0, "sampling rate {q} outside (0, 1] for {n} training rows");
        Ok(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_grad: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// `σ_count / σ_grad` for adaptive strategies.
    #[serde(default = "default_count_ratio")]
    pub count_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrialsConfig {
    Fixed { count: usize },
    Tnb { shape: f64, gamma: f64 },
    /// Geometric with mean equal to the grid size.
    GridMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpoConfig {
    #[serde(default = "default_lrs")]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_clips")]
    pub clip_params: Vec<f64>,
    /// Adds a leading batch-size axis when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub policy: ChargePolicy,
    #[serde(default = "default_trials")]
    pub trials: TrialsConfig,
    /// Fraction of the training set held out to score trials.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    /// Retrain the best configuration on the full training set and report
    /// test metrics; its privacy cost is composed on top of the search.
    #[serde(default = "yes")]
    pub final_run: bool,
}

impl HpoConfig {
    pub fn grid_spec(&self) -> GridSpec {
        let mut axes = vec![
            Axis::new(AXIS_LEARNING_RATE, self.learning_rates.clone()),
            Axis::new(AXIS_CLIP_PARAM, self.clip_params.clone()),
        ];
        if let Some(b) = &self.batch_sizes {
            axes.insert(0, Axis::new(AXIS_BATCH_SIZE, b.iter().map(|&b| b as f64).collect::<Vec<_>>()));
        }
        GridSpec::new(axes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    #[serde(default = "one")]
    pub constant_bound: f64,
    #[serde(default = "default_toy_lb")]
    pub lower_bound: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            constant_bound: 1.0,
            lower_bound: default_toy_lb(),
        }
    }
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn default_bimodal_n() -> usize {
    10_000
}
fn default_p_major() -> f64 {
    0.6
}
fn default_jitter() -> f64 {
    0.05
}
fn default_keep() -> f64 {
    0.1
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_gamma() -> f64 {
    DEFAULT_TARGET_QUANTILE
}
fn default_tau() -> f64 {
    DEFAULT_THRESHOLD_MULTIPLIER
}
fn default_eta() -> f64 {
    DEFAULT_BOUND_LR
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_count_ratio() -> f64 {
    DEFAULT_COUNT_RATIO
}
fn default_lrs() -> Vec<f64> {
    clipbound::hpo::DEFAULT_LEARNING_RATES.to_vec()
}
fn default_clips() -> Vec<f64> {
    clipbound::hpo::DEFAULT_CLIP_PARAMS.to_vec()
}
fn default_trials() -> TrialsConfig {
    TrialsConfig::GridMean
}
fn default_validation() -> f64 {
    0.2
}
fn default_toy_lb() -> f64 {
    0.1
}

/// Train and test sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl RunConfig {
    /// Reads and validates a config file. Relative dataset paths resolve
    /// against `CLIPBOUND_DATA_DIR` when set, otherwise against the file's
    /// directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let root = match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        cfg.dataset.resolve_paths(&root);
        cfg.validate()?;
        Ok(cfg)
    }

    /// The bimodal mean-estimation setup (exact point masses) with all
    /// three strategies.
    pub fn default_toy(output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset: DatasetConfig::Bimodal {
                n: default_bimodal_n(),
                p_major: default_p_major(),
                mode_lo: 0.0,
                mode_hi: 1.0,
                jitter_std: 0.0,
                seed: 0,
            },
            model: ModelConfig {
                kind: ModelKind::Mean,
                hidden: None,
            },
            training: TrainingConfig {
                epochs: None,
                steps: Some(5000),
                sampling_rate: Some(1.0),
                batch_size: None,
                learning_rate: 0.002,
                clipping: ClippingBlock {
                    strategy: Strategy::Bounded,
                    clip_param: default_toy_lb(),
                    initial_bound: None,
                    target_quantile: DEFAULT_TARGET_QUANTILE,
                    threshold_multiplier: 1.0,
                    bound_lr: DEFAULT_BOUND_LR,
                },
                optimizer: OptimizerKind::Sgd,
                noiseless: true,
                record_grad_norms: true,
            },
            privacy: None,
            hpo: None,
            toy: Some(ToyConfig::default()),
            output_dir: output_dir.into(),
            seeds: None,
            num_seeds: None,
        }
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        match (&self.seeds, self.num_seeds) {
            (Some(_), Some(_)) => bail!("give either `seeds` or `num_seeds`, not both"),
            (Some(s), None) => {
                ensure!(!s.is_empty(), "`seeds` is empty");
                Ok(s.clone())
            }
            (None, Some(n)) => {
                ensure!(n > 0, "`num_seeds` must be >= 1");
                Ok((1..=n as u64).collect())
            }
            (None, None) => Ok(vec![1]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.seeds()?;
        self.training.budget()?;
        let t = &self.training;
        ensure!(
            !(t.sampling_rate.is_some() && t.batch_size.is_some()),
            "training needs exactly one of `sampling_rate` or `batch_size`"
        );
        ensure!(
            t.sampling_rate.is_some() || t.batch_size.is_some(),
            "training needs one of `sampling_rate` or `batch_size`"
        );
        ensure!(t.learning_rate > 0.0, "learning rate must be positive");
        ensure!(t.clipping.clip_param > 0.0, "clip_param must be positive");
        t.clipping.clipping().validate()?;
        if let Some(p) = &self.privacy {
            match (p.target_epsilon, p.sigma_grad) {
                (Some(e), None) => ensure!(e > 0.0, "target_epsilon must be positive"),
                (None, Some(s)) => ensure!(s >= 0.0, "sigma_grad must be non-negative"),
                _ => bail!("privacy needs exactly one of `target_epsilon` or `sigma_grad`"),
            }
            ensure!(p.delta > 0.0 && p.delta < 1.0, "delta must lie in (0, 1)");
            ensure!(p.count_ratio >= 0.0, "count_ratio must be non-negative");
        } else if !t.noiseless {
            bail!("a `privacy` block with `target_epsilon` or `sigma_grad` is required unless training is noiseless");
        }
        if let Some(h) = &self.hpo {
            h.grid_spec().validate()?;
            ensure!(
                h.validation_fraction > 0.0 && h.validation_fraction < 1.0,
                "validation_fraction must lie in (0, 1)"
            );
            if let TrialsConfig::Fixed { count } = h.trials {
                ensure!(count > 0, "fixed trial count must be >= 1");
            }
        }
        if let Some(toy) = &self.toy {
            ensure!(toy.constant_bound > 0.0, "toy constant_bound must be positive");
            ensure!(toy.lower_bound > 0.0, "toy lower_bound must be positive");
        }
        match (&self.model.kind, self.model.hidden) {
            (ModelKind::Mlp, None) => bail!("mlp model needs `hidden`"),
            (ModelKind::Mlp, Some(0)) => bail!("mlp `hidden` must be >= 1"),
            (ModelKind::Mlp, Some(_)) | (_, None) => {}
            (_, Some(_)) => bail!("`hidden` only applies to the mlp model"),
        }
        Ok(())
    }

    pub fn model_spec(&self, data: &Dataset) -> Result<ModelSpec> {
        let (d, k) = (data.dim(), data.num_classes());
        let spec = match self.model.kind {
            ModelKind::Mean => {
                ensure!(d == 1, "the mean model needs one-dimensional data, got {d}");
                ModelSpec::mean()
            }
            ModelKind::Logistic => {
                ensure!(k == 2, "logistic regression needs 2 classes, got {k}");
                ModelSpec::logistic(d)
            }
            ModelKind::Softmax => ModelSpec::softmax(d, k),
            ModelKind::Mlp => ModelSpec::mlp(d, self.model.hidden.unwrap_or(0), k),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl DatasetConfig {
    fn resolve_paths(&mut self, root: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        match self {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DatasetConfig::Tabular { train, test, .. } => {
                fix(train);
                if let Some(t) = test {
                    fix(t);
                }
            }
            DatasetConfig::Bimodal { .. } | DatasetConfig::SkewedSynthetic { .. } => {}
        }
    }

    /// Materializes the data. The bimodal task has no held-out set; its test
    /// split is the training set.
    pub fn load(&self) -> Result<Splits> {
        match self {
            &DatasetConfig::Bimodal {
                n,
                p_major,
                mode_lo,
                mode_hi,
                jitter_std,
                seed,
            } => {
                let ds = gen_bimodal(n, p_major, mode_lo, mode_hi, jitter_std, &mut Rng::new(seed))?;
                Ok(Splits {
                    train: ds.clone(),
                    test: ds,
                })
            }
            &DatasetConfig::SkewedSynthetic {
                n_per_class,
                num_classes,
                minority_class,
                keep_fraction,
                cluster_separation,
                dim,
                test_per_class,
                seed,
            } => {
                let blobs = SkewedBlobs {
                    n_per_class,
                    num_classes,
                    minority_class,
                    keep_fraction,
                    cluster_separation,
                    dim,
                };
                let mut rng = Rng::new(seed);
                let train = gen_skewed_classification(&blobs, &mut rng)?;
                let balanced = SkewedBlobs {
                    n_per_class: test_per_class,
                    keep_fraction: 1.0,
                    ..blobs
                };
                let test = gen_skewed_classification(&balanced, &mut rng)?;
                Ok(Splits { train, test })
            }
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                num_classes,
                skew,
                seed,
            } => {
                let mut train = load_idx_pair(train_images, train_labels, *num_classes)?;
                let test = load_idx_pair(test_images, test_labels, Some(train.num_classes()))?;
                if let Some(s) = skew {
                    train = skew_class(&train, s.class, s.keep_fraction, &mut Rng::new(*seed).fork("skew"))?;
                }
                Ok(Splits { train, test })
            }
            DatasetConfig::Tabular {
                train,
                test,
                test_fraction,
                schema,
                balance_groups,
                seed,
            } => {
                let rows = read_csv_rows(train)?;
                let rng = Rng::new(*seed);
                let (train_rows, test_rows) = match test {
                    Some(path) => (rows, read_csv_rows(path)?),
                    None => split_rows(rows, *test_fraction, &mut rng.fork("split"))?,
                };
                let encoder = TabularEncoder::fit(&train_rows, schema)?;
                let train_t = encoder.transform(&train_rows)?;
                let test_t = encoder.transform(&test_rows)?;
                if train_t.dropped_rows + test_t.dropped_rows > 0 {
                    log::info!(
                        "dropped {} training and {} test rows with missing or excluded values",
                        train_t.dropped_rows,
                        test_t.dropped_rows
                    );
                }
                let (mut train, mut test) = (train_t.dataset, test_t.dataset);
                if *balance_groups {
                    train = balance_by_attribute(&train, &mut rng.fork("balance_train"))?;
                    test = balance_by_attribute(&test, &mut rng.fork("balance_test"))?;
                }
                Ok(Splits { train, test })
            }
        }
    }
}

fn split_rows(rows: TabularRows, test_fraction: f64, rng: &mut Rng) -> Result<(TabularRows, TabularRows)> {
    ensure!(
        (0.0..1.0).contains(&test_fraction) && test_fraction > 0.0,
        "test_fraction must lie in (0, 1)"
    );
    let n = rows.rows.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut is_test = vec![false; n];
    for i in rng.sample_without_replacement(n, n_test) {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (row, t) in rows.rows.into_iter().zip(is_test) {
        if t {
            test.push(row);
        } else {
            train.push(row);
        }
    }
    Ok((
        TabularRows {
            header: rows.header.clone(),
            rows: train,
        },
        TabularRows {
            header: rows.header,
            rows: test,
        },
    ))
}
