//! Grid construction, randomized search and privacy charging for tuning.
//!
//! The number of trials can be fixed or drawn from a truncated negative
//! binomial distribution. The privacy cost of the search is charged
//! conservatively by composing the per-run RDP curve once per grid point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::privacy::{account, default_orders, rdp_to_eps, MechanismParams, RdpCurve};

pub const AXIS_LEARNING_RATE: &str = "learning_rate";
pub const AXIS_CLIP_PARAM: &str = "clip_param";
pub const AXIS_BATCH_SIZE: &str = "batch_size";

pub const DEFAULT_LEARNING_RATES: [f64; 10] = [
    1.0000, 1.2915, 1.6681, 2.1544, 2.7826, 3.5938, 4.6416, 5.9948, 7.7426, 10.0000,
];

pub const DEFAULT_CLIP_PARAMS: [f64; 20] = [
    0.0010, 0.0018, 0.0031, 0.0055, 0.0098, 0.0172, 0.0305, 0.0539, 0.0952, 0.1682, 0.2973, 0.5254,
    0.9285, 1.6409, 2.9000, 5.1252, 9.0579, 16.0082, 28.2915, 50.0000,
];

pub const DEFAULT_BATCH_SIZES: [f64; 6] = [1024.0, 2048.0, 4096.0, 8192.0, 16384.0, 32768.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: impl Into<String>, values: impl Into<Vec<f64>>) -> Self {
        Self {
            name: name.into(),
            values: values.into(),
        }
    }
}

/// Ordered categorical axes. The first axis varies slowest in [`build_grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self { axes }
    }

    /// Learning rate × clipping parameter, 10 × 20.
    pub fn standard() -> Self {
        Self::new(vec![
            Axis::new(AXIS_LEARNING_RATE, DEFAULT_LEARNING_RATES),
            Axis::new(AXIS_CLIP_PARAM, DEFAULT_CLIP_PARAMS),
        ])
    }

    /// Batch size × learning rate × clipping parameter, 6 × 10 × 20.
    pub fn with_batch_sizes() -> Self {
        let mut spec = Self::standard();
        spec.axes.insert(0, Axis::new(AXIS_BATCH_SIZE, DEFAULT_BATCH_SIZES));
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::param("grid has no axes"));
        }
        for (i, axis) in self.axes.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(Error::param(format!("grid axis `{}` is empty", axis.name)));
            }
            if axis.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::param(format!("grid axis `{}` has a non-finite value", axis.name)));
            }
            if self.axes[..i].iter().any(|a| a.name == axis.name) {
                return Err(Error::param(format!("grid axis `{}` appears twice", axis.name)));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }
}

/// One point of a grid: `(axis name, value)` in axis order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub values: Vec<(String, f64)>,
}

impl GridConfig {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

impl fmt::Display for GridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, value)) in self.values.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{name}={value}")?;
        }
        Ok(())
    }
}

/// Cartesian product in lexicographic order of axis indices.
pub fn build_grid(spec: &GridSpec) -> Result<Vec<GridConfig>> {
    spec.validate()?;
    let size = spec.size();
    let mut grid = Vec::with_capacity(size);
    for flat in 0..size {
        let mut rem = flat;
        let mut values = vec![(String::new(), 0.0); spec.axes.len()];
        for (slot, axis) in values.iter_mut().zip(&spec.axes).rev() {
            let len = axis.values.len();
            *slot = (axis.name.clone(), axis.values[rem % len]);
            rem /= len;
        }
        grid.push(GridConfig { values });
    }
    Ok(grid)
}

/// Tail mass left outside the tabulated support.
const TNB_TAIL_MASS: f64 = 1e-13;
const TNB_MAX_SUPPORT: usize = 50_000_000;

/// Truncated negative binomial on `{1, 2, ...}` with shape `η > -1` and
/// `γ ∈ (0, 1)`. `η = 1` is the geometric distribution with success
/// probability `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TnbParams {
    shape: f64,
    gamma: f64,
    cdf: Vec<f64>,
}

impl TnbParams {
    pub fn new(shape: f64, gamma: f64) -> Result<Self> {
        if !(shape > -1.0 && shape.is_finite()) {
            return Err(Error::param(format!("tnb shape {shape} must be > -1")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::param(format!("tnb gamma {gamma} outside (0, 1)")));
        }
        let mut cdf = Vec::new();
        let mut total = 0.0;
        let mut p = tnb_pmf(shape, gamma, 1);
        let mut k = 1;
        while total < 1.0 - TNB_TAIL_MASS {
            if k > TNB_MAX_SUPPORT || !p.is_finite() {
                return Err(Error::param(format!(
                    "tnb({shape}, {gamma}) tail too heavy to tabulate"
                )));
            }
            total += p;
            cdf.push(total);
            p = next_pmf(shape, gamma, k, p);
            k += 1;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("tnb({shape}, {gamma}) pmf sums to {total}")));
        }
        Ok(Self { shape, gamma, cdf })
    }

    /// Geometric (`η = 1`) with mean `mean`.
    pub fn with_mean(mean: f64) -> Result<Self> {
        if !(mean >= 1.0 && mean.is_finite()) {
            return Err(Error::param(format!("tnb mean {mean} must be >= 1")));
        }
        if mean == 1.0 {
            return Err(Error::param("tnb mean 1 is degenerate; use a fixed trial count"));
        }
        Self::new(1.0, 1.0 / mean)
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Largest `k` with tabulated mass.
    pub fn support_len(&self) -> usize {
        self.cdf.len()
    }

    pub fn pmf(&self, k: usize) -> f64 {
        tnb_pmf(self.shape, self.gamma, k)
    }

    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        let mut mean = 0.0;
        for (i, &c) in self.cdf.iter().enumerate() {
            mean += (i + 1) as f64 * (c - prev);
            prev = c;
        }
        mean / prev
    }
}

/// `P[K = k]`; zero for `k = 0`.
pub fn tnb_pmf(shape: f64, gamma: f64, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if shape == 1.0 {
        return gamma * (1.0 - gamma).powi(k as i32 - 1);
    }
    if shape == 0.0 {
        return (1.0 - gamma).powi(k as i32) / (k as f64 * (1.0 / gamma).ln());
    }
    let mut p = (1.0 - gamma) * shape / (gamma.powf(-shape) - 1.0);
    for j in 1..k {
        p = next_pmf(shape, gamma, j, p);
    }
    p
}

/// `P[K = k + 1]` from `P[K = k]`.
fn next_pmf(shape: f64, gamma: f64, k: usize, p: f64) -> f64 {
    if shape == 1.0 {
        return p * (1.0 - gamma);
    }
    let k = k as f64;
    p * (1.0 - gamma) * (k + shape) / (k + 1.0)
}

/// Inverse-CDF draw.
pub fn sample_tnb(params: &TnbParams, rng: &mut Rng) -> usize {
    let total = *params.cdf.last().expect("tabulated support is nonempty");
    let u = rng.uniform() * total;
    params.cdf.partition_point(|&c| c <= u).min(params.cdf.len() - 1) + 1
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialCount {
    Fixed(usize),
    Random(TnbParams),
}

/// What a trial reports back to the search.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome<R> {
    pub objective: f64,
    pub per_run_epsilon: Option<f64>,
    pub detail: R,
}

#[derive(Debug, Clone)]
pub struct TrialRecord<R> {
    pub index: usize,
    pub grid_index: usize,
    pub config: GridConfig,
    /// `Err` holds the failure message; failed trials never win.
    pub outcome: std::result::Result<TrialOutcome<R>, String>,
}

impl<R> TrialRecord<R> {
    pub fn objective(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.objective)
    }
}

#[derive(Debug, Clone)]
pub struct HpoResult<R> {
    pub trials: Vec<TrialRecord<R>>,
    /// Index into `trials`; `None` when every trial failed.
    pub best: Option<usize>,
    pub grid_size: usize,
    pub trials_drawn: usize,
    pub charge: Option<DphpoCharge>,
}

impl<R> HpoResult<R> {
    pub fn best_trial(&self) -> Option<&TrialRecord<R>> {
        self.best.map(|i| &self.trials[i])
    }
}

/// Draws the trial count, then evaluates that many configurations sampled
/// uniformly with replacement. The objective receives the trial index so it
/// can derive its own seeds. Ties go to the earliest trial; a failing or
/// non-finite objective marks the trial failed.
pub fn run_random_search<R, F>(
    grid: &[GridConfig],
    count: &TrialCount,
    mut objective: F,
    rng: &Rng,
) -> Result<HpoResult<R>>
where
    F: FnMut(usize, &GridConfig) -> Result<TrialOutcome<R>>,
{
    if grid.is_empty() {
        return Err(Error::param("empty grid"));
    }
    let trials_drawn = match count {
        TrialCount::Fixed(0) => return Err(Error::param("fixed trial count must be >= 1")),
        TrialCount::Fixed(k) => *k,
        TrialCount::Random(tnb) => sample_tnb(tnb, &mut rng.fork("trial_count")),
    };
    let mut pick = rng.fork("trial_configs");
    let mut trials: Vec<TrialRecord<R>> = Vec::with_capacity(trials_drawn);
    let mut best: Option<usize> = None;
    for index in 0..trials_drawn {
        let grid_index = pick.below(grid.len());
        let config = grid[grid_index].clone();
        let outcome = match objective(index, &config) {
            Ok(o) if o.objective.is_finite() => Ok(o),
            Ok(o) => Err(format!("non-finite objective {}", o.objective)),
            Err(e) => Err(e.to_string()),
        };
        if let Err(msg) = &outcome {
            log::warn!("trial {index} ({config}) failed: {msg}");
        }
        let record = TrialRecord {
            index,
            grid_index,
            config,
            outcome,
        };
        if let Some(obj) = record.objective() {
            if best.is_none_or(|b: usize| obj > trials[b].objective().expect("best trial succeeded")) {
                best = Some(index);
            }
        }
        trials.push(record);
    }
    Ok(HpoResult {
        trials,
        best,
        grid_size: grid.len(),
        trials_drawn,
        charge: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChargePolicy {
    /// Compose the per-run curve once per grid point.
    #[default]
    GridComposition,
    /// Charge one run only; the search itself is treated as non-private.
    SingleRun,
}

impl ChargePolicy {
    pub fn name(self) -> &'static str {
        match self {
            ChargePolicy::GridComposition => "grid-composition",
            ChargePolicy::SingleRun => "single-run",
        }
    }
}

impl fmt::Display for ChargePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChargePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid-composition" => Ok(ChargePolicy::GridComposition),
            "single-run" => Ok(ChargePolicy::SingleRun),
            other => Err(Error::param(format!(
                "unknown charge policy `{other}` (expected grid-composition or single-run)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DphpoCharge {
    pub policy: ChargePolicy,
    pub grid_size: usize,
    pub delta: f64,
    /// ε of the worst-case single trial.
    pub per_run_epsilon: f64,
    /// ε of the search under `policy`.
    pub hpo_epsilon: f64,
    /// ε of the final retraining run, if one is charged.
    pub final_run_epsilon: Option<f64>,
    /// Search and final run composed.
    pub total_epsilon: f64,
}

/// Worst case over trial mechanisms (they differ when batch size is tuned).
fn per_run_curve(per_run: &[MechanismParams]) -> Result<(RdpCurve, f64)> {
    let first = per_run.first().ok_or_else(|| Error::param("no per-run mechanisms given"))?;
    if per_run.iter().any(|p| p.delta != first.delta) {
        return Err(Error::param("per-run mechanisms disagree on delta"));
    }
    let orders = default_orders();
    let curves = per_run.iter().map(|p| account(p, &orders)).collect::<Result<Vec<_>>>()?;
    Ok((RdpCurve::pointwise_max(&curves)?, first.delta))
}

/// Total ε of a search over a grid of `grid_size` points.
pub fn dphpo_total_epsilon(per_run: &[MechanismParams], grid_size: usize, policy: ChargePolicy) -> Result<f64> {
    Ok(dphpo_charge(per_run, grid_size, policy, None)?.hpo_epsilon)
}

/// Full breakdown, optionally composing a final run on top of the search.
pub fn dphpo_charge(
    per_run: &[MechanismParams],
    grid_size: usize,
    policy: ChargePolicy,
    final_run: Option<&MechanismParams>,
) -> Result<DphpoCharge> {
    if grid_size == 0 {
        return Err(Error::param("grid size must be >= 1"));
    }
    let (curve, delta) = per_run_curve(per_run)?;
    let per_run_epsilon = rdp_to_eps(&curve, delta)?.0;
    let search = match policy {
        ChargePolicy::GridComposition => curve.compose(grid_size),
        ChargePolicy::SingleRun => curve,
    };
    let hpo_epsilon = rdp_to_eps(&search, delta)?.0;
    let (final_run_epsilon, total_epsilon) = match final_run {
        None => (None, hpo_epsilon),
        Some(p) => {
            if p.delta != delta {
                return Err(Error::param("final run delta differs from the search delta"));
            }
            let final_curve = account(p, &default_orders())?;
            let final_eps = rdp_to_eps(&final_curve, delta)?.0;
            let total = match policy {
                ChargePolicy::GridComposition => rdp_to_eps(&search.then(&final_curve)?, delta)?.0,
                ChargePolicy::SingleRun => final_eps,
            };
            (Some(final_eps), total)
        }
    };
    Ok(DphpoCharge {
        policy,
        grid_size,
        delta,
        per_run_epsilon,
        hpo_epsilon,
        final_run_epsilon,
        total_epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(steps: usize) -> MechanismParams {
        MechanismParams {
            sampling_rate: 0.01,
            steps,
            sigma_grad: 1.0,
            sigma_count: Some(10.0),
            delta: 1e-5,
        }
    }

    #[test]
    fn standard_grids_have_expected_sizes() {
        assert_eq!(build_grid(&GridSpec::standard()).unwrap().len(), 200);
        assert_eq!(build_grid(&GridSpec::with_batch_sizes()).unwrap().len(), 1200);
    }

    #[test]
    fn grid_order_is_lexicographic_first_axis_slowest() {
        let spec = GridSpec::new(vec![Axis::new("a", [1.0, 2.0]), Axis::new("b", [10.0, 20.0, 30.0])]);
        let grid = build_grid(&spec).unwrap();
        let pairs: Vec<_> = grid.iter().map(|c| (c.get("a").unwrap(), c.get("b").unwrap())).collect();
        assert_eq!(
            pairs,
            vec![(1.0, 10.0), (1.0, 20.0), (1.0, 30.0), (2.0, 10.0), (2.0, 20.0), (2.0, 30.0)]
        );
    }

    #[test]
    fn single_axis_grid_is_the_axis() {
        let grid = build_grid(&GridSpec::new(vec![Axis::new("lr", [0.1, 0.2, 0.3])])).unwrap();
        let values: Vec<f64> = grid.iter().map(|c| c.get("lr").unwrap()).collect();
        assert_eq!(values, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(build_grid(&GridSpec::new(vec![])).is_err());
        assert!(build_grid(&GridSpec::new(vec![Axis::new("a", [1.0]), Axis::new("b", [])])).is_err());
        assert!(build_grid(&GridSpec::new(vec![Axis::new("a", [1.0]), Axis::new("a", [2.0])])).is_err());
        assert!(build_grid(&GridSpec::new(vec![Axis::new("a", [f64::NAN])])).is_err());
    }

    #[test]
    fn geometric_pmf_matches_closed_form() {
        let tnb = TnbParams::new(1.0, 0.1).unwrap();
        for k in 1..50 {
            assert_eq!(tnb.pmf(k), 0.1 * 0.9f64.powi(k as i32 - 1));
        }
        assert!((tnb.mean() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn general_shape_pmf_agrees_with_recursion_at_shape_one() {
        // the generic product formula evaluated near shape 1 approaches the geometric pmf
        let g = 0.3;
        let near = |k| {
            let shape = 1.0 + 1e-9;
            tnb_pmf(shape, g, k)
        };
        for k in 1..20 {
            assert!((near(k) - tnb_pmf(1.0, g, k)).abs() < 1e-7);
        }
    }

    #[test]
    fn pmf_normalizes_for_several_shapes() {
        for (shape, gamma) in [(1.0, 0.1), (1.0, 0.5), (0.0, 0.5), (2.0, 0.2), (-0.5, 0.3)] {
            let tnb = TnbParams::new(shape, gamma).unwrap();
            let total: f64 = (1..=tnb.support_len()).map(|k| tnb.pmf(k)).sum();
            assert!((total - 1.0).abs() < 1e-9, "({shape}, {gamma}) sums to {total}");
        }
    }

    #[test]
    fn tnb_rejects_bad_domain() {
        assert!(TnbParams::new(-1.0, 0.5).is_err());
        assert!(TnbParams::new(1.0, 0.0).is_err());
        assert!(TnbParams::new(1.0, 1.0).is_err());
        assert!(TnbParams::with_mean(0.5).is_err());
    }

    #[test]
    fn with_mean_targets_expected_count() {
        let tnb = TnbParams::with_mean(200.0).unwrap();
        assert!((tnb.mean() - 200.0).abs() < 1e-6);
        assert_eq!(tnb.gamma(), 1.0 / 200.0);
    }

    #[test]
    fn sample_mean_close_to_expectation() {
        let tnb = TnbParams::new(1.0, 0.1).unwrap();
        let mut rng = Rng::new(3);
        let n = 20_000;
        let mean = (0..n).map(|_| sample_tnb(&tnb, &mut rng) as f64).sum::<f64>() / n as f64;
        // sd of the geometric is sqrt(90) ≈ 9.5, so the standard error is ~0.07
        assert!((mean - 10.0).abs() < 0.35, "mean {mean}");
    }

    #[test]
    fn single_trial_returns_that_config() {
        let grid = build_grid(&GridSpec::standard()).unwrap();
        let res = run_random_search(
            &grid,
            &TrialCount::Fixed(1),
            |_, c| Ok(TrialOutcome { objective: c.get(AXIS_LEARNING_RATE).unwrap(), per_run_epsilon: None, detail: () }),
            &Rng::new(0),
        )
        .unwrap();
        assert_eq!(res.trials.len(), 1);
        assert_eq!(res.best, Some(0));
        assert_eq!(res.best_trial().unwrap().config, grid[res.trials[0].grid_index]);
    }

    #[test]
    fn ties_go_to_first_trial_and_failures_never_win() {
        let grid = build_grid(&GridSpec::new(vec![Axis::new("x", [1.0, 2.0, 3.0])])).unwrap();
        let res = run_random_search(
            &grid,
            &TrialCount::Fixed(6),
            |i, _| {
                if i == 0 {
                    Err(Error::param("boom"))
                } else if i == 1 {
                    Ok(TrialOutcome { objective: f64::NAN, per_run_epsilon: None, detail: () })
                } else {
                    Ok(TrialOutcome { objective: 0.5, per_run_epsilon: None, detail: () })
                }
            },
            &Rng::new(0),
        )
        .unwrap();
        assert!(res.trials[0].outcome.is_err());
        assert!(res.trials[1].outcome.is_err());
        assert_eq!(res.best, Some(2));
    }

    #[test]
    fn all_failed_has_no_best() {
        let grid = build_grid(&GridSpec::new(vec![Axis::new("x", [1.0])])).unwrap();
        let res = run_random_search::<(), _>(&grid, &TrialCount::Fixed(3), |_, _| Err(Error::param("no")), &Rng::new(0))
            .unwrap();
        assert_eq!(res.best, None);
    }

    #[test]
    fn exhaustive_search_finds_global_argmax() {
        let grid = build_grid(&GridSpec::new(vec![Axis::new("a", [1.0, 2.0, 3.0]), Axis::new("b", [0.0, 1.0])])).unwrap();
        let f = |c: &GridConfig| -(c.get("a").unwrap() - 2.0).powi(2) + c.get("b").unwrap();
        let res = run_random_search(
            &grid,
            &TrialCount::Fixed(200),
            |_, c| Ok(TrialOutcome { objective: f(c), per_run_epsilon: None, detail: () }),
            &Rng::new(9),
        )
        .unwrap();
        let covered: std::collections::BTreeSet<_> = res.trials.iter().map(|t| t.grid_index).collect();
        assert_eq!(covered.len(), grid.len());
        let best = res.best_trial().unwrap();
        assert_eq!((best.config.get("a"), best.config.get("b")), (Some(2.0), Some(1.0)));
        let max = res.trials.iter().filter_map(|t| t.objective()).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.objective(), Some(max));
    }

    #[test]
    fn random_trial_count_is_reproducible() {
        let grid = build_grid(&GridSpec::standard()).unwrap();
        let count = TrialCount::Random(TnbParams::with_mean(5.0).unwrap());
        let run = || {
            run_random_search(
                &grid,
                &count,
                |_, c| Ok(TrialOutcome { objective: c.get(AXIS_CLIP_PARAM).unwrap(), per_run_epsilon: None, detail: () }),
                &Rng::new(77),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.trials_drawn, b.trials_drawn);
        assert_eq!(a.trials.iter().map(|t| t.grid_index).collect::<Vec<_>>(), b.trials.iter().map(|t| t.grid_index).collect::<Vec<_>>());
    }

    #[test]
    fn zero_fixed_count_and_empty_grid_are_errors() {
        let grid = build_grid(&GridSpec::standard()).unwrap();
        let obj = |_: usize, _: &GridConfig| Ok(TrialOutcome { objective: 0.0, per_run_epsilon: None, detail: () });
        assert!(run_random_search(&grid, &TrialCount::Fixed(0), obj, &Rng::new(0)).is_err());
        assert!(run_random_search(&[], &TrialCount::Fixed(1), obj, &Rng::new(0)).is_err());
    }

    #[test]
    fn grid_composition_of_one_equals_per_run() {
        let p = params(100);
        let per_run = crate::privacy::epsilon(&p).unwrap().epsilon;
        let one = dphpo_total_epsilon(&[p], 1, ChargePolicy::GridComposition).unwrap();
        assert_eq!(one, per_run);
    }

    #[test]
    fn doubling_is_between_one_and_two_times() {
        let p = params(100);
        let one = dphpo_total_epsilon(&[p], 1, ChargePolicy::GridComposition).unwrap();
        let two = dphpo_total_epsilon(&[p], 2, ChargePolicy::GridComposition).unwrap();
        assert!(two > one && two < 2.0 * one, "{one} {two}");
    }

    #[test]
    fn single_run_ignores_grid_size() {
        let p = params(100);
        let one = dphpo_total_epsilon(&[p], 1, ChargePolicy::SingleRun).unwrap();
        assert_eq!(dphpo_total_epsilon(&[p], 200, ChargePolicy::SingleRun).unwrap(), one);
    }

    #[test]
    fn grid_composition_nondecreasing_in_grid_size() {
        let p = params(50);
        let mut prev = 0.0;
        for g in [1, 2, 5, 10, 50, 200] {
            let e = dphpo_total_epsilon(&[p], g, ChargePolicy::GridComposition).unwrap();
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn mixed_mechanisms_charge_the_worst_case() {
        let small = params(10);
        let large = params(100);
        let mixed = dphpo_total_epsilon(&[small, large], 3, ChargePolicy::GridComposition).unwrap();
        let worst = dphpo_total_epsilon(&[large], 3, ChargePolicy::GridComposition).unwrap();
        assert_eq!(mixed, worst);
    }

    #[test]
    fn final_run_composes_on_top() {
        let p = params(100);
        let charge = dphpo_charge(&[p], 10, ChargePolicy::GridComposition, Some(&p)).unwrap();
        let eleven = dphpo_total_epsilon(&[p], 11, ChargePolicy::GridComposition).unwrap();
        assert!((charge.total_epsilon - eleven).abs() < 1e-12);
        assert!(charge.total_epsilon > charge.hpo_epsilon);
        assert!(charge.hpo_epsilon >= charge.per_run_epsilon);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("grid-composition".parse::<ChargePolicy>().unwrap(), ChargePolicy::GridComposition);
        assert_eq!("single-run".parse::<ChargePolicy>().unwrap(), ChargePolicy::SingleRun);
        assert!("bogus".parse::<ChargePolicy>().is_err());
        assert!(dphpo_total_epsilon(&[params(1)], 0, ChargePolicy::GridComposition).is_err());
        assert!(dphpo_total_epsilon(&[], 1, ChargePolicy::GridComposition).is_err());
    }
}
