//! The unified normalized DPSGD loop with constant, unbounded-adaptive and
//! lower-bounded-adaptive clipping.
//!
//! Per step: Poisson-subsample with rate `q`, compute per-sample gradients,
//! sum their normalized clips at the current bound, add `N(0, σ_grad² I)`,
//! divide by the *expected* batch size `B = qN`, and hand the result to the
//! optimizer. Adaptive runs then release a noisy count of raw norms above
//! `τ·C_t` and update the bound.

mod optim;

pub use optim::{optimizer_update, Optimizer, OptimizerKind};

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::clipping::{privatize_count, update_bound, ClippableBatch, ClippingConfig, ClippingState};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalMetrics};
use crate::models::{init_params, per_sample_loss_grads, ModelSpec, ModelState};
use crate::numkit::{gaussian_vector, poisson_subsample, quantiles, Rng};
use crate::privacy::{self, LedgerSummary, MechanismParams, DEFAULT_DELTA};

/// Loss above which a run is aborted as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepBudget {
    /// `T = epochs · ⌈1/q⌉`.
    Epochs(usize),
    Steps(usize),
}

impl StepBudget {
    pub fn steps(self, sampling_rate: f64) -> usize {
        match self {
            StepBudget::Steps(t) => t,
            StepBudget::Epochs(e) => e * (1.0 / sampling_rate).ceil() as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub budget: StepBudget,
    pub sampling_rate: f64,
    pub learning_rate: f64,
    pub sigma_grad: f64,
    /// Noise on the clipped count; only used in adaptive mode.
    #[serde(default)]
    pub sigma_count: Option<f64>,
    pub clipping: ClippingConfig,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub seed: u64,
    /// Drops all noise. The run is reported as non-private.
    #[serde(default)]
    pub noiseless: bool,
    /// Record raw gradient-norm quantiles in the history (non-private).
    #[serde(default = "yes")]
    pub record_grad_norms: bool,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn yes() -> bool {
    true
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl TrainConfig {
    pub fn steps(&self) -> usize {
        self.budget.steps(self.sampling_rate)
    }

    pub fn validate(&self) -> Result<()> {
        self.clipping.validate()?;
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::param(format!("sampling rate must lie in (0, 1], got {}", self.sampling_rate)));
        }
        if self.steps() == 0 {
            return Err(Error::param("training needs at least one step"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning rate must be positive"));
        }
        if !self.noiseless {
            if !(self.sigma_grad > 0.0) {
                return Err(Error::param("private training needs sigma_grad > 0"));
            }
            if self.clipping.is_adaptive() && !matches!(self.sigma_count, Some(s) if s > 0.0) {
                return Err(Error::param("private adaptive clipping needs sigma_count > 0"));
            }
        }
        Ok(())
    }

    /// Mechanism seen by the accountant; `None` for noiseless runs.
    pub fn mechanism(&self) -> Option<MechanismParams> {
        (!self.noiseless).then(|| MechanismParams {
            sampling_rate: self.sampling_rate,
            steps: self.steps(),
            sigma_grad: self.sigma_grad,
            sigma_count: if self.clipping.is_adaptive() { self.sigma_count } else { None },
            delta: self.delta,
        })
    }

    pub fn non_private_flags(&self) -> Vec<String> {
        let mut flags = vec!["training_loss".to_string()];
        if self.noiseless {
            flags.insert(0, "noiseless".to_string());
        }
        if self.record_grad_norms {
            flags.push("grad_norm_quantiles".to_string());
        }
        flags
    }
}

/// One row of the per-step history; also the history CSV record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: f64,
    pub clip_bound: f64,
    pub noisy_clip_fraction: Option<f64>,
    pub grad_norm_p50: Option<f64>,
    pub grad_norm_p90: Option<f64>,
    pub grad_norm_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub final_state: ModelState,
    pub history: Vec<HistoryRow>,
    pub steps: usize,
    /// `None` for noiseless runs.
    pub privacy: Option<LedgerSummary>,
    pub metrics: Option<EvalMetrics>,
    pub non_private_flags: Vec<String>,
}

impl RunResult {
    pub fn final_bound(&self) -> Option<f64> {
        self.history.last().map(|h| h.clip_bound)
    }
}

/// Privatized mean gradient `(Σ clip(g_i) + N(0, σ² I)) / B`.
pub fn noisy_mean_gradient<G: ClippableBatch>(
    batch: &G,
    bound: f64,
    sigma_grad: f64,
    expected_batch: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut sum = batch.clipped_sum(bound)?;
    let noise = gaussian_vector(sum.len(), sigma_grad, rng)?;
    for (s, z) in sum.iter_mut().zip(noise) {
        *s = (*s + z) / expected_batch;
    }
    Ok(sum)
}

/// Noisy fraction `b̃` of raw norms above `τ·C`.
pub fn noisy_clip_fraction<G: ClippableBatch>(
    batch: &G,
    cfg: &ClippingConfig,
    bound: f64,
    sigma_count: f64,
    expected_batch: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let count = batch.count_exceeding(cfg.threshold_multiplier, bound);
    privatize_count(count, expected_batch, sigma_count, rng)
}

pub fn train(cfg: &TrainConfig, dataset: &Dataset, spec: &ModelSpec, rng: &Rng) -> Result<RunResult> {
    cfg.validate()?;
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    if dataset.dim() != spec.input_dim {
        return Err(Error::Dimension { expected: spec.input_dim, got: dataset.dim() });
    }
    let mut state = init_params(spec, &mut rng.fork("init"))?;
    let mut sample_rng = rng.fork("sample");
    let mut grad_noise = rng.fork("grad_noise");
    let mut count_noise = rng.fork("count_noise");
    let mut optimizer = Optimizer::new(cfg.optimizer, spec.num_params());
    let mut clip = ClippingState::new(&cfg.clipping)?;

    let steps = cfg.steps();
    let expected_batch = cfg.sampling_rate * dataset.len() as f64;
    let (sigma_grad, sigma_count) = if cfg.noiseless {
        (0.0, 0.0)
    } else {
        (cfg.sigma_grad, cfg.sigma_count.unwrap_or(0.0))
    };
    let mut history = Vec::with_capacity(steps);

    for t in 0..steps {
        let idx = poisson_subsample(dataset.len(), cfg.sampling_rate, &mut sample_rng)?;
        let batch = if idx.len() == dataset.len() {
            Cow::Borrowed(dataset)
        } else {
            Cow::Owned(dataset.subset(&idx))
        };
        let grads = per_sample_loss_grads(&state, batch.features(), batch.labels())?;
        let bound = clip.bound();

        let loss = grads.mean_loss();
        let (p50, p90, max) = if cfg.record_grad_norms {
            let q = quantiles(grads.norms(), &[0.5, 0.9, 1.0]);
            (Some(q[0]), Some(q[1]), Some(q[2]))
        } else {
            (None, None, None)
        };
        if !grads.is_empty() && !(loss.is_finite() && loss <= DIVERGENCE_LOSS) {
            return Err(Error::Diverged { step: t, loss, history: Box::new(history) });
        }

        let direction = noisy_mean_gradient(&grads, bound, sigma_grad, expected_batch, &mut grad_noise)?;
        optimizer.update(&mut state.params, &direction, cfg.learning_rate)?;

        let fraction = if cfg.clipping.is_adaptive() {
            let f = noisy_clip_fraction(&grads, &cfg.clipping, bound, sigma_count, expected_batch, &mut count_noise)?;
            update_bound(&mut clip, f, &cfg.clipping, t);
            Some(f)
        } else {
            None
        };
        if state.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { step: t, loss: f64::NAN, history: Box::new(history) });
        }

        history.push(HistoryRow {
            step: t,
            loss,
            clip_bound: bound,
            noisy_clip_fraction: fraction,
            grad_norm_p50: p50,
            grad_norm_p90: p90,
            grad_norm_max: max,
        });
    }

    let privacy = cfg.mechanism().map(|m| privacy::epsilon(&m)).transpose()?;
    Ok(RunResult {
        final_state: state,
        history,
        steps,
        privacy,
        metrics: None,
        non_private_flags: cfg.non_private_flags(),
    })
}

/// [`train`] followed by [`evaluate`] on a held-out set.
pub fn train_and_evaluate(
    cfg: &TrainConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
    spec: &ModelSpec,
    rng: &Rng,
) -> Result<RunResult> {
    let mut run = train(cfg, train_set, spec, rng)?;
    run.metrics = Some(evaluate(&run.final_state, eval_set)?);
    Ok(run)
}
