//! Subcommand implementations. Each writes its artifacts under the config's
//! output directory and returns a summary for the caller.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clipbound::hpo::{
    build_grid, dphpo_charge, run_random_search, ChargePolicy, DphpoCharge, GridConfig, GridSpec, TnbParams,
    TrialCount, TrialOutcome, AXIS_BATCH_SIZE, AXIS_CLIP_PARAM, AXIS_LEARNING_RATE,
};
use clipbound::privacy::{calibrate_sigma, epsilon, DEFAULT_DELTA};
use clipbound::trainer::{train, train_and_evaluate};
use clipbound::{
    ClippingConfig, Error as CoreError, EvalMetrics, LedgerSummary, MechanismParams, ModelKind,
    Rng, RunResult, Strategy, TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifacts::{write_history, write_json, write_sweep, Manifest, MeanSe, SweepRow, VERSION};
use crate::config::{DatasetConfig, RunConfig, TrialsConfig};

/// Noise levels for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePlan {
    pub sigma_grad: f64,
    pub sigma_count: Option<f64>,
    pub delta: f64,
    pub noiseless: bool,
}

/// Resolves the noise for a run with `clipping`, sampling rate `q` and
/// `steps` steps: calibrated to the target ε or taken as given.
pub fn noise_plan(cfg: &RunConfig, clipping: &ClippingConfig, q: f64, steps: usize) -> Result<NoisePlan> {
    let delta = cfg.privacy.as_ref().map_or(DEFAULT_DELTA, |p| p.delta);
    if cfg.training.noiseless {
        return Ok(NoisePlan {
            sigma_grad: 0.0,
            sigma_count: None,
            delta,
            noiseless: true,
        });
    }
    let privacy = cfg.privacy.as_ref().context("missing privacy block")?;
    let ratio = if clipping.is_adaptive() {
        ensure!(privacy.count_ratio > 0.0, "adaptive clipping needs count_ratio > 0");
        privacy.count_ratio
    } else {
        0.0
    };
    let sigma_grad = match (privacy.target_epsilon, privacy.sigma_grad) {
        (Some(target), _) => calibrate_sigma(target, delta, q, steps, ratio)?,
        (None, Some(s)) => s,
        (None, None) => bail!("privacy needs `target_epsilon` or `sigma_grad`"),
    };
    Ok(NoisePlan {
        sigma_grad,
        sigma_count: (ratio > 0.0).then_some(ratio * sigma_grad),
        delta,
        noiseless: false,
    })
}

pub fn train_config(
    cfg: &RunConfig,
    clipping: ClippingConfig,
    learning_rate: f64,
    q: f64,
    plan: &NoisePlan,
    seed: u64,
) -> Result<TrainConfig> {
    let tc = TrainConfig {
        budget: cfg.training.budget()?,
        sampling_rate: q,
        learning_rate,
        sigma_grad: plan.sigma_grad,
        sigma_count: plan.sigma_count,
        clipping,
        optimizer: cfg.training.optimizer,
        seed,
        noiseless: plan.noiseless,
        record_grad_norms: cfg.training.record_grad_norms,
        delta: plan.delta,
    };
    tc.validate()?;
    Ok(tc)
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn privacy_fields(ledger: Option<&LedgerSummary>) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    match ledger {
        Some(l) => (Some(l.epsilon), Some(l.delta), Some(l.sigma_grad), l.sigma_count),
        None => (None, None, None, None),
    }
}

/// Final estimate and bound of one toy strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModeSummary {
    pub strategy: Strategy,
    pub clip_param: f64,
    pub final_estimate: f64,
    #[serde(rename = "C_T")]
    pub final_bound: f64,
    pub final_loss: f64,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub seed: u64,
    pub steps: usize,
    pub modes: Vec<ToyModeSummary>,
}

impl ToySummary {
    pub fn mode(&self, strategy: Strategy) -> &ToyModeSummary {
        self.modes.iter().find(|m| m.strategy == strategy).expect("all three strategies run")
    }
}

pub fn toy_history_path(out: &Path, strategy: Strategy) -> PathBuf {
    out.join(format!("{}_history.csv", strategy.name()))
}

/// Mean estimation on bimodal data under all three strategies with a shared
/// seed. Writes `<strategy>_history.csv`, `summary.json`, `manifest.json`.
pub fn cmd_toy(cfg: &RunConfig) -> Result<ToySummary> {
    ensure!(
        matches!(cfg.dataset, DatasetConfig::Bimodal { .. }),
        "the toy command needs a bimodal dataset"
    );
    ensure!(cfg.model.kind == ModelKind::Mean, "the toy command needs the mean model");
    let toy = cfg.toy.clone().unwrap_or_default();
    let data = cfg.dataset.load()?;
    let spec = cfg.model_spec(&data.train)?;
    let seed = cfg.seeds()?[0];
    let q = cfg.training.sampling_rate_for(data.train.len(), None)?;
    let steps = cfg.training.budget()?.steps(q);
    let clip = &cfg.training.clipping;
    let modes = [
        (Strategy::Constant, toy.constant_bound),
        (Strategy::Unbounded, clip.initial_bound.unwrap_or(clipbound::clipping::DEFAULT_INITIAL_BOUND)),
        (Strategy::Bounded, toy.lower_bound),
    ];
    let mut summaries = Vec::new();
    let mut flags = Vec::new();
    let mut worst_ledger: Option<LedgerSummary> = None;
    for (strategy, param) in modes {
        let clipping = clip.to_config(strategy, param);
        let plan = noise_plan(cfg, &clipping, q, steps)?;
        let tc = train_config(cfg, clipping, cfg.training.learning_rate, q, &plan, seed)?;
        let run = train(&tc, &data.train, &spec, &Rng::new(seed))?;
        write_history(&toy_history_path(&cfg.output_dir, strategy), &run.history)?;
        if let Some(l) = run.privacy {
            if worst_ledger.is_none_or(|w| l.epsilon > w.epsilon) {
                worst_ledger = Some(l);
            }
        }
        flags = run.non_private_flags.clone();
        summaries.push(ToyModeSummary {
            strategy,
            clip_param: param,
            final_estimate: run.final_state.params[0],
            final_bound: run.final_bound().unwrap_or(f64::NAN),
            final_loss: run.history.last().map_or(f64::NAN, |h| h.loss),
            epsilon: run.privacy.map(|l| l.epsilon),
        });
    }
    let summary = ToySummary {
        seed,
        steps,
        modes: summaries,
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    let (eps, delta, sigma_grad, sigma_count) = privacy_fields(worst_ledger.as_ref());
    let manifest = Manifest {
        config: cfg.clone(),
        seeds: vec![seed],
        epsilon: eps,
        delta,
        sigma_grad,
        sigma_count,
        steps,
        sampling_rate: q,
        metrics: serde_json::to_value(&summary.modes)?,
        non_private_flags: flags,
        version: VERSION.to_string(),
        hpo: None,
    };
    write_json(&cfg.output_dir.join("manifest.json"), &manifest)?;
    Ok(summary)
}

/// Aggregated metrics over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub strategy: Strategy,
    pub clip_param: f64,
    pub learning_rate: f64,
    pub target_epsilon: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MeanSe>,
}

impl Aggregate {
    pub fn metric(&self, name: &str) -> Option<&MeanSe> {
        self.metrics.get(name)
    }
}

fn aggregate_metrics(runs: &[EvalMetrics]) -> BTreeMap<String, MeanSe> {
    let mut out = BTreeMap::new();
    let collect = |f: &dyn Fn(&EvalMetrics) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    out.insert("macro_acc".to_string(), MeanSe::of(&collect(&|m| m.macro_acc)));
    out.insert("micro_acc".to_string(), MeanSe::of(&collect(&|m| m.micro_acc)));
    out.insert("worst_acc".to_string(), MeanSe::of(&collect(&|m| m.worst_acc)));
    let k = runs[0].per_class_acc.len();
    for c in 0..k {
        out.insert(format!("class_{c}_acc"), MeanSe::of(&collect(&|m| m.per_class_acc[c])));
    }
    if let Some(groups) = &runs[0].group_acc {
        for g in 0..groups.len() {
            let vals: Vec<f64> = runs.iter().filter_map(|m| m.group_acc.as_ref().map(|a| a[g])).collect();
            out.insert(format!("group_{g}_acc"), MeanSe::of(&vals));
        }
    }
    out
}

/// Trains and evaluates once per seed. Writes `seed_<s>/{history.csv,
/// manifest.json}`, `aggregate.json` and a top-level `manifest.json`.
/// Fails after writing if any seed diverged.
pub fn cmd_train(cfg: &RunConfig) -> Result<Aggregate> {
    let data = cfg.dataset.load()?;
    let spec = cfg.model_spec(&data.train)?;
    let seeds = cfg.seeds()?;
    let q = cfg.training.sampling_rate_for(data.train.len(), None)?;
    let steps = cfg.training.budget()?.steps(q);
    let clipping = cfg.training.clipping.clipping();
    let plan = noise_plan(cfg, &clipping, q, steps)?;
    let mut metrics = Vec::new();
    let mut failed = Vec::new();
    let mut ledger = None;
    let mut flags = Vec::new();
    for &seed in &seeds {
        let tc = train_config(cfg, clipping.clone(), cfg.training.learning_rate, q, &plan, seed)?;
        let dir = seed_dir(&cfg.output_dir, seed);
        match train_and_evaluate(&tc, &data.train, &data.test, &spec, &Rng::new(seed)) {
            Ok(run) => {
                write_history(&dir.join("history.csv"), &run.history)?;
                let m = run.metrics.clone().expect("evaluated");
                write_json(&dir.join("manifest.json"), &run_manifest(cfg, seed, &run, serde_json::to_value(&m)?))?;
                ledger = run.privacy;
                flags = run.non_private_flags;
                metrics.push(m);
            }
            Err(CoreError::Diverged { step, loss, history }) => {
                log::error!("seed {seed} diverged at step {step} (loss {loss})");
                write_history(&dir.join("history.csv"), &history)?;
                failed.push(seed);
            }
            Err(e) => return Err(e).with_context(|| format!("seed {seed}")),
        }
    }
    ensure!(!metrics.is_empty(), "every seed diverged: {failed:?}");
    let (eps, delta, sigma_grad, sigma_count) = privacy_fields(ledger.as_ref());
    let aggregate = Aggregate {
        strategy: cfg.training.clipping.strategy,
        clip_param: cfg.training.clipping.clip_param,
        learning_rate: cfg.training.learning_rate,
        target_epsilon: cfg.privacy.as_ref().and_then(|p| p.target_epsilon),
        epsilon: eps,
        delta,
        seeds: seeds.clone(),
        metrics: aggregate_metrics(&metrics),
    };
    write_json(&cfg.output_dir.join("aggregate.json"), &aggregate)?;
    let manifest = Manifest {
        config: cfg.clone(),
        seeds,
        epsilon: eps,
        delta,
        sigma_grad,
        sigma_count,
        steps,
        sampling_rate: q,
        metrics: serde_json::to_value(&aggregate.metrics)?,
        non_private_flags: flags,
        version: VERSION.to_string(),
        hpo: None,
    };
    write_json(&cfg.output_dir.join("manifest.json"), &manifest)?;
    if !failed.is_empty() {
        bail!("seeds {failed:?} diverged");
    }
    Ok(aggregate)
}

fn run_manifest(cfg: &RunConfig, seed: u64, run: &RunResult, metrics: Value) -> Manifest {
    let (eps, delta, sigma_grad, sigma_count) = privacy_fields(run.privacy.as_ref());
    Manifest {
        config: cfg.clone(),
        seeds: vec![seed],
        epsilon: eps,
        delta,
        sigma_grad,
        sigma_count,
        steps: run.steps,
        sampling_rate: run.privacy.map_or(f64::NAN, |l| l.q),
        metrics,
        non_private_flags: run.non_private_flags.clone(),
        version: VERSION.to_string(),
        hpo: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoSummary {
    pub policy: ChargePolicy,
    pub grid_size: usize,
    pub trials_drawn: usize,
    pub failed_trials: usize,
    pub best_trial: Option<usize>,
    pub best_config: Option<GridConfig>,
    pub best_objective: Option<f64>,
    pub charge: Option<DphpoCharge>,
    pub final_metrics: Option<EvalMetrics>,
}

/// Per-batch-size run setup shared by every trial with that batch size.
struct TrialSetup {
    q: f64,
    steps: usize,
    plan: NoisePlan,
}

fn trial_setup(cfg: &RunConfig, strategy_clipping: &ClippingConfig, n: usize, batch: Option<f64>) -> Result<TrialSetup> {
    let q = cfg.training.sampling_rate_for(n, batch.map(|b| b as usize))?;
    let steps = cfg.training.budget()?.steps(q);
    let plan = noise_plan(cfg, strategy_clipping, q, steps)?;
    Ok(TrialSetup { q, steps, plan })
}

fn mechanism(setup: &TrialSetup) -> MechanismParams {
    MechanismParams {
        sampling_rate: setup.q,
        steps: setup.steps,
        sigma_grad: setup.plan.sigma_grad,
        sigma_count: setup.plan.sigma_count,
        delta: setup.plan.delta,
    }
}

pub fn trial_count(cfg: &RunConfig, grid_size: usize) -> Result<TrialCount> {
    let hpo = cfg.hpo.as_ref().context("missing hpo block")?;
    Ok(match hpo.trials {
        TrialsConfig::Fixed { count } => TrialCount::Fixed(count),
        TrialsConfig::Tnb { shape, gamma } => TrialCount::Random(TnbParams::new(shape, gamma)?),
        TrialsConfig::GridMean if grid_size == 1 => TrialCount::Fixed(1),
        TrialsConfig::GridMean => TrialCount::Random(TnbParams::with_mean(grid_size as f64)?),
    })
}

/// Random search over the configured grid, scored by macro accuracy on a
/// validation split of the training set. Writes `sweep.csv`,
/// `manifest.json` and, with a final run, `final/history.csv`.
pub fn cmd_hpo(cfg: &RunConfig) -> Result<HpoSummary> {
    let hpo = cfg.hpo.as_ref().context("the hpo command needs an `hpo` block")?;
    let data = cfg.dataset.load()?;
    let spec = cfg.model_spec(&data.train)?;
    let base_seed = cfg.seeds()?[0];
    let base = Rng::new(base_seed);
    let (tune_train, validation) = data.train.split(hpo.validation_fraction, &mut base.fork("validation"))?;
    let grid_spec = hpo.grid_spec();
    let grid = build_grid(&grid_spec)?;
    let strategy = cfg.training.clipping.strategy;
    // the noise depends on the strategy only through whether a count query is made
    let probe = cfg.training.clipping.clipping();
    let batch_values: Vec<Option<f64>> = match &hpo.batch_sizes {
        Some(b) => b.iter().map(|&b| Some(b as f64)).collect(),
        None => vec![None],
    };
    let mut setups: Vec<(Option<f64>, Result<TrialSetup>)> = Vec::new();
    for b in batch_values {
        setups.push((b, trial_setup(cfg, &probe, tune_train.len(), b)));
    }
    let setup_for = |config: &GridConfig| -> Result<&TrialSetup> {
        let b = config.get(AXIS_BATCH_SIZE);
        let (_, s) = setups.iter().find(|(v, _)| *v == b).expect("every grid batch size has a setup");
        s.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))
    };
    let count = trial_count(cfg, grid.len())?;
    let objective = |index: usize, config: &GridConfig| -> clipbound::Result<TrialOutcome<(EvalMetrics, u64)>> {
        let seed = base.fork_indexed("trial", index as u64).seed();
        let setup = setup_for(config).map_err(|e| CoreError::Precondition(e.to_string()))?;
        let lr = config.get(AXIS_LEARNING_RATE).expect("learning rate axis");
        let clip = config.get(AXIS_CLIP_PARAM).expect("clip axis");
        let clipping = cfg.training.clipping.to_config(strategy, clip);
        let tc = train_config(cfg, clipping, lr, setup.q, &setup.plan, seed)
            .map_err(|e| CoreError::Precondition(e.to_string()))?;
        let run = train_and_evaluate(&tc, &tune_train, &validation, &spec, &Rng::new(seed))?;
        let m = run.metrics.expect("evaluated");
        Ok(TrialOutcome {
            objective: m.macro_acc,
            per_run_epsilon: run.privacy.map(|l| l.epsilon),
            detail: (m, seed),
        })
    };
    let mut result = run_random_search(&grid, &count, objective, &base.fork("search"))?;

    let rows: Vec<SweepRow> = result
        .trials
        .iter()
        .map(|t| {
            let ok = t.outcome.as_ref().ok();
            SweepRow {
                trial_index: t.index,
                learning_rate: t.config.get(AXIS_LEARNING_RATE).unwrap_or(f64::NAN),
                clip_param: t.config.get(AXIS_CLIP_PARAM).unwrap_or(f64::NAN),
                batch_size: t.config.get(AXIS_BATCH_SIZE),
                seed: ok.map_or_else(|| base.fork_indexed("trial", t.index as u64).seed(), |o| o.detail.1),
                objective: ok.map(|o| o.objective),
                macro_acc: ok.map(|o| o.detail.0.macro_acc),
                worst_acc: ok.map(|o| o.detail.0.worst_acc),
                per_run_epsilon: ok.and_then(|o| o.per_run_epsilon),
            }
        })
        .collect();
    write_sweep(&cfg.output_dir.join("sweep.csv"), &rows)?;

    let best_config = result.best_trial().map(|t| t.config.clone());
    let mut final_run = None;
    if let (true, Some(best)) = (hpo.final_run, &best_config) {
        let setup = trial_setup(cfg, &probe, data.train.len(), best.get(AXIS_BATCH_SIZE))?;
        let clipping = cfg.training.clipping.to_config(strategy, best.get(AXIS_CLIP_PARAM).expect("clip axis"));
        let lr = best.get(AXIS_LEARNING_RATE).expect("learning rate axis");
        let tc = train_config(cfg, clipping, lr, setup.q, &setup.plan, base_seed)?;
        let run = train_and_evaluate(&tc, &data.train, &data.test, &spec, &Rng::new(base_seed))?;
        write_history(&cfg.output_dir.join("final").join("history.csv"), &run.history)?;
        final_run = Some((run, mechanism(&setup)));
    }

    let charge = if cfg.training.noiseless {
        None
    } else {
        let mechanisms: Vec<MechanismParams> =
            setups.iter().filter_map(|(_, s)| s.as_ref().ok()).map(mechanism).collect();
        ensure!(!mechanisms.is_empty(), "no batch size in the grid yields a valid sampling rate");
        Some(dphpo_charge(&mechanisms, grid.len(), hpo.policy, final_run.as_ref().map(|(_, m)| m))?)
    };
    result.charge = charge;

    let summary = HpoSummary {
        policy: hpo.policy,
        grid_size: result.grid_size,
        trials_drawn: result.trials_drawn,
        failed_trials: result.trials.iter().filter(|t| t.outcome.is_err()).count(),
        best_trial: result.best,
        best_config,
        best_objective: result.best_trial().and_then(|t| t.objective()),
        charge,
        final_metrics: final_run.as_ref().and_then(|(r, _)| r.metrics.clone()),
    };
    let mut flags = final_run
        .as_ref()
        .map_or_else(|| vec!["training_loss".to_string()], |(r, _)| r.non_private_flags.clone());
    if hpo.policy == ChargePolicy::SingleRun {
        flags.push("hpo_not_charged".to_string());
    }
    let final_ledger = final_run.as_ref().and_then(|(r, _)| r.privacy);
    let (q, steps) = match &final_run {
        Some((r, m)) => (m.sampling_rate, r.steps),
        None => (f64::NAN, 0),
    };
    let manifest = Manifest {
        config: cfg.clone(),
        seeds: vec![base_seed],
        epsilon: charge.map(|c| c.total_epsilon),
        delta: charge.map(|c| c.delta),
        sigma_grad: final_ledger.map(|l| l.sigma_grad),
        sigma_count: final_ledger.and_then(|l| l.sigma_count),
        steps,
        sampling_rate: q,
        metrics: json!({
            "best_objective": summary.best_objective,
            "final": summary.final_metrics,
        }),
        non_private_flags: flags,
        version: VERSION.to_string(),
        hpo: Some(json!({
            "policy": summary.policy,
            "grid_size": summary.grid_size,
            "trials_drawn": summary.trials_drawn,
            "trial_count": trial_count_json(&count),
            "failed_trials": summary.failed_trials,
            "best_trial": summary.best_trial,
            "best_config": summary.best_config,
            "charge": summary.charge,
        })),
    };
    write_json(&cfg.output_dir.join("manifest.json"), &manifest)?;
    Ok(summary)
}

fn trial_count_json(count: &TrialCount) -> Value {
    match count {
        TrialCount::Fixed(k) => json!({ "kind": "fixed", "count": k }),
        TrialCount::Random(t) => json!({ "kind": "tnb", "shape": t.shape(), "gamma": t.gamma(), "mean": t.mean() }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountRequest {
    pub sampling_rate: f64,
    pub steps: usize,
    /// Ignored when calibrating.
    pub sigma_grad: Option<f64>,
    /// `σ_count / σ_grad`; `None` for no count query.
    pub count_ratio: Option<f64>,
    pub delta: f64,
    /// Calibrate `σ_grad` to this ε instead of evaluating.
    pub target_epsilon: Option<f64>,
}

pub fn cmd_account(req: &AccountRequest) -> Result<LedgerSummary> {
    if let Some(r) = req.count_ratio {
        ensure!(r > 0.0, "count ratio must be positive");
    }
    let sigma_grad = match (req.target_epsilon, req.sigma_grad) {
        (Some(target), _) => {
            calibrate_sigma(target, req.delta, req.sampling_rate, req.steps, req.count_ratio.unwrap_or(0.0))?
        }
        (None, Some(s)) => s,
        (None, None) => bail!("give --sigma-grad or --calibrate with --target-epsilon"),
    };
    let params = MechanismParams {
        sampling_rate: req.sampling_rate,
        steps: req.steps,
        sigma_grad,
        sigma_count: req.count_ratio.map(|r| r * sigma_grad),
        delta: req.delta,
    };
    Ok(epsilon(&params)?)
}

/// CSV listing of a grid: header then one line per configuration.
pub fn grid_listing(spec: &GridSpec) -> Result<String> {
    let grid = build_grid(spec)?;
    let mut out = String::from("index");
    for axis in &spec.axes {
        out.push(',');
        out.push_str(&axis.name);
    }
    out.push('\n');
    for (i, config) in grid.iter().enumerate() {
        out.push_str(&i.to_string());
        for (_, v) in &config.values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::fs;

    use clipbound::hpo::{build_grid, GridSpec};
    use serde_json::{json, Value};

    use super::*;
    use crate::artifacts::{read_history, read_sweep, HISTORY_HEADER, SWEEP_HEADER};
    use crate::config::tests::{parse, train_value};

    #[test]
    fn toy_with_large_constant_bound_recovers_mean() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default_toy(dir.path());
        cfg.training.learning_rate = 0.1;
        cfg.training.steps = Some(2000);
        cfg.toy.as_mut().unwrap().constant_bound = 10.0;
        let summary = cmd_toy(&cfg).unwrap();
        let constant = summary.mode(Strategy::Constant);
        assert!((constant.final_estimate - 0.4).abs() <= 1e-3, "{}", constant.final_estimate);

        let path = toy_history_path(dir.path(), Strategy::Constant);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), HISTORY_HEADER);
        assert_eq!(read_history(&path).unwrap().len(), 2000);
        assert!(dir.path().join("summary.json").exists());
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn train_writes_per_seed_histories_and_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = train_value(json!({ "target_epsilon": 3.0 }));
        v["output_dir"] = json!(dir.path());
        v["num_seeds"] = json!(2);
        let agg = cmd_train(&parse(v).unwrap()).unwrap();
        assert_eq!(agg.seeds, vec![1, 2]);
        assert!(agg.epsilon.unwrap() <= 3.0);
        for key in ["macro_acc", "micro_acc", "worst_acc", "class_0_acc", "class_2_acc"] {
            assert_eq!(agg.metric(key).unwrap().values.len(), 2, "{key}");
        }
        for seed in [1, 2] {
            let rows = read_history(&dir.path().join(format!("seed_{seed}")).join("history.csv")).unwrap();
            assert!(!rows.is_empty());
            assert!(rows.iter().all(|r| r.clip_bound >= 0.1));
        }
        let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["seeds"], json!([1, 2]));
        assert!(manifest["sigma_count"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn hpo_with_one_trial_writes_single_sweep_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = train_value(json!({ "sigma_grad": 1.5 }));
        v["output_dir"] = json!(dir.path());
        v["hpo"] = json!({ "learning_rates": [0.1, 0.5], "clip_params": [0.1, 1.0], "trials": { "kind": "fixed", "count": 1 } });
        let summary = cmd_hpo(&parse(v).unwrap()).unwrap();
        assert_eq!(summary.grid_size, 4);
        assert_eq!(summary.trials_drawn, 1);
        let sweep_path = dir.path().join("sweep.csv");
        let text = fs::read_to_string(&sweep_path).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER);
        let rows = read_sweep(&sweep_path).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].objective.is_some());
        let charge = summary.charge.unwrap();
        assert!(charge.hpo_epsilon > charge.per_run_epsilon);
        assert!(charge.total_epsilon > charge.hpo_epsilon, "final run composed on top");
        assert!(dir.path().join("final").join("history.csv").exists());
    }

    #[test]
    fn account_count_ratio_matches_combined_single_query() {
        let base = AccountRequest {
            sampling_rate: 0.02,
            steps: 500,
            sigma_grad: Some(1.2),
            count_ratio: Some(10.0),
            delta: 1e-5,
            target_epsilon: None,
        };
        let two = cmd_account(&base).unwrap();
        let one = cmd_account(&AccountRequest { sigma_grad: Some(1.2 / 1.01f64.sqrt()), count_ratio: None, ..base }).unwrap();
        assert_eq!(two.epsilon, one.epsilon);

        let calibrated = cmd_account(&AccountRequest { sigma_grad: None, target_epsilon: Some(1.0), ..base }).unwrap();
        assert!(calibrated.epsilon <= 1.0 && calibrated.epsilon > 0.99);
        assert!(cmd_account(&AccountRequest { sigma_grad: None, ..base }).is_err());
    }

    #[test]
    fn batch_size_grid_lists_every_combination() {
        let spec = GridSpec::with_batch_sizes();
        assert_eq!(build_grid(&spec).unwrap().len(), 1200);
        let listing = grid_listing(&GridSpec::standard()).unwrap();
        assert_eq!(listing.lines().count(), 201);
        assert!(listing.starts_with("index,"));
    }
}
