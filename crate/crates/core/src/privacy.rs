//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Adaptive clipping touches the data twice per step (the clipped-gradient
//! sum and the clipped count), each a sensitivity-1 Gaussian mechanism. Their
//! composition is exactly a single Gaussian mechanism with noise multiplier
//! `(σ_grad⁻² + σ_count⁻²)^{-1/2}`, so one subsampled-Gaussian RDP curve at
//! that combined multiplier, composed over `T` steps, accounts for the whole
//! run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-5;
/// `σ_count = 10 · σ_grad`.
pub const DEFAULT_COUNT_RATIO: f64 = 10.0;

/// Integer orders 2..=64 plus 128 and 256.
pub fn default_orders() -> Vec<u32> {
    (2..=64).chain([128, 256]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub sampling_rate: f64,
    pub steps: usize,
    pub sigma_grad: f64,
    /// `None` when the run makes no count query (constant clipping).
    pub sigma_count: Option<f64>,
    pub delta: f64,
}

impl MechanismParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sampling_rate) {
            return Err(Error::param(format!("sampling rate {} outside [0, 1]", self.sampling_rate)));
        }
        if self.steps == 0 {
            return Err(Error::param("steps must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param(format!("delta {} outside (0, 1)", self.delta)));
        }
        combined_sigma(self.sigma_grad, self.sigma_count).map(|_| ())
    }

    pub fn combined_sigma(&self) -> Result<f64> {
        combined_sigma(self.sigma_grad, self.sigma_count)
    }
}

/// `(σ_grad⁻² + σ_count⁻²)^{-1/2}`, evaluated as `σ_grad / √(1 + (σ_grad/σ_count)²)`.
pub fn combined_sigma(sigma_grad: f64, sigma_count: Option<f64>) -> Result<f64> {
    if !(sigma_grad > 0.0 && sigma_grad.is_finite()) {
        return Err(Error::param(format!("sigma_grad must be positive, got {sigma_grad}")));
    }
    match sigma_count {
        None => Ok(sigma_grad),
        Some(sc) if sc > 0.0 => {
            let r = sigma_grad / sc;
            Ok(sigma_grad / (1.0 + r * r).sqrt())
        }
        Some(sc) => Err(Error::param(format!("sigma_count must be positive, got {sc}"))),
    }
}

/// RDP of the (unsubsampled) Gaussian mechanism: `α / (2σ²)`.
pub fn gaussian_rdp(sigma: f64, alpha: f64) -> f64 {
    alpha / (2.0 * sigma * sigma)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Integer-order RDP of the Poisson-subsampled Gaussian mechanism:
/// `1/(α−1) · log Σ_k C(α,k) (1−q)^{α−k} q^k exp(k(k−1)/(2σ²))`, summed in log space.
pub fn subsampled_gaussian_rdp(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if alpha < 2 {
        return Err(Error::param(format!("integer order must be >= 2, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::param(format!("sampling rate {q} outside [0, 1]")));
    }
    if !(sigma > 0.0) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(gaussian_rdp(sigma, f64::from(alpha)));
    }
    let (log_q, log_1mq) = (q.ln(), (-q).ln_1p());
    let two_var = 2.0 * sigma * sigma;
    let mut log_binom = 0.0;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=alpha {
        if k > 0 {
            log_binom += f64::from(alpha - k + 1).ln() - f64::from(k).ln();
        }
        let kf = f64::from(k);
        let term = log_binom + f64::from(alpha - k) * log_1mq + kf * log_q + kf * (kf - 1.0) / two_var;
        acc = log_add_exp(acc, term);
    }
    Ok((acc / f64::from(alpha - 1)).max(0.0))
}

/// `(order, rdp)` pairs with strictly increasing orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    points: Vec<(u32, f64)>,
}

impl RdpCurve {
    pub fn new(points: Vec<(u32, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::param("rdp orders must be strictly increasing"));
        }
        if points.iter().any(|&(a, v)| a < 2 || !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::param("rdp values must be finite and non-negative at orders >= 2"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(u32, f64)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Additive composition with itself `times` times.
    pub fn compose(&self, times: usize) -> RdpCurve {
        let k = times as f64;
        RdpCurve {
            points: self.points.iter().map(|&(a, v)| (a, v * k)).collect(),
        }
    }

    /// Sequential composition of two different mechanisms.
    pub fn then(&self, other: &RdpCurve) -> Result<RdpCurve> {
        if other.points.len() != self.points.len() || other.points.iter().zip(&self.points).any(|(a, b)| a.0 != b.0) {
            return Err(Error::param("rdp curves use different order grids"));
        }
        Ok(RdpCurve {
            points: self.points.iter().zip(&other.points).map(|(&(a, x), &(_, y))| (a, x + y)).collect(),
        })
    }

    /// Pointwise maximum of curves on identical order grids.
    pub fn pointwise_max(curves: &[RdpCurve]) -> Result<RdpCurve> {
        let first = curves.first().ok_or_else(|| Error::param("no curves to combine"))?;
        let mut points = first.points.clone();
        for c in &curves[1..] {
            if c.points.len() != points.len() || c.points.iter().zip(&points).any(|(a, b)| a.0 != b.0) {
                return Err(Error::param("rdp curves use different order grids"));
            }
            for (p, &(_, v)) in points.iter_mut().zip(&c.points) {
                p.1 = p.1.max(v);
            }
        }
        Ok(RdpCurve { points })
    }
}

/// RDP of the whole run at the requested integer orders.
pub fn account(params: &MechanismParams, orders: &[u32]) -> Result<RdpCurve> {
    params.validate()?;
    let sigma = params.combined_sigma()?;
    let steps = params.steps as f64;
    let points = orders
        .iter()
        .map(|&a| Ok((a, steps * subsampled_gaussian_rdp(params.sampling_rate, sigma, a)?)))
        .collect::<Result<Vec<_>>>()?;
    RdpCurve::new(points)
}

/// `min_α rdp(α) + log(1/δ)/(α−1)`; returns `(ε, minimizing order)`, lowest
/// order on ties.
pub fn rdp_to_eps(curve: &RdpCurve, delta: f64) -> Result<(f64, u32)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta {delta} outside (0, 1)")));
    }
    let log_inv_delta = -delta.ln();
    curve
        .points
        .iter()
        .map(|&(a, v)| (v + log_inv_delta / f64::from(a - 1), a))
        .fold(None, |best: Option<(f64, u32)>, cand| match best {
            Some(b) if b.0 <= cand.0 => Some(b),
            _ => Some(cand),
        })
        .ok_or_else(|| Error::param("empty rdp curve"))
}

/// Serializable ledger entry for run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub q: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub sigma_grad: f64,
    pub sigma_count: Option<f64>,
    pub delta: f64,
    pub epsilon: f64,
    pub opt_order: u32,
}

/// `(ε, δ)` of a run at the default order grid.
pub fn epsilon(params: &MechanismParams) -> Result<LedgerSummary> {
    let curve = account(params, &default_orders())?;
    let (epsilon, opt_order) = rdp_to_eps(&curve, params.delta)?;
    Ok(LedgerSummary {
        q: params.sampling_rate,
        steps: params.steps,
        sigma_grad: params.sigma_grad,
        sigma_count: params.sigma_count,
        delta: params.delta,
        epsilon,
        opt_order,
    })
}

const SIGMA_MIN: f64 = 1e-2;
const SIGMA_MAX: f64 = 1e4;

/// Smallest-noise `σ_grad` (to relative tolerance 1e-3 in ε) whose run
/// satisfies `ε <= target`. `count_ratio = σ_count/σ_grad`; 0 means no
/// count query.
pub fn calibrate_sigma(target_eps: f64, delta: f64, q: f64, steps: usize, count_ratio: f64) -> Result<f64> {
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(Error::param(format!("target epsilon must be positive, got {target_eps}")));
    }
    if !(count_ratio >= 0.0) {
        return Err(Error::param("count ratio must be non-negative"));
    }
    let eps_at = |sigma_grad: f64| -> Result<f64> {
        let params = MechanismParams {
            sampling_rate: q,
            steps,
            sigma_grad,
            sigma_count: (count_ratio > 0.0).then_some(count_ratio * sigma_grad),
            delta,
        };
        Ok(epsilon(&params)?.epsilon)
    };
    let lower_ok = 0.999 * target_eps;
    if eps_at(SIGMA_MAX)? > target_eps {
        return Err(Error::Calibration(format!(
            "epsilon {target_eps} is unattainable even at sigma {SIGMA_MAX}"
        )));
    }
    if eps_at(SIGMA_MIN)? <= target_eps {
        return Err(Error::Calibration(format!(
            "epsilon {target_eps} is already met at sigma {SIGMA_MIN}; widen the search bracket"
        )));
    }
    // invariant: eps(lo) > target >= eps(hi)
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let e = eps_at(mid)?;
        if e > target_eps {
            lo = mid;
        } else {
            hi = mid;
            if e >= lower_ok {
                return Ok(hi);
            }
        }
    }
    Err(Error::Calibration(format!(
        "bisection did not reach relative tolerance 1e-3 for epsilon {target_eps}"
    )))
}
