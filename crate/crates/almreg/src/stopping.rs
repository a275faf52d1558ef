//! Stopping rules for the outer iteration and the analyses built on them:
//! the discrepancy-principle index, the overshoot trade-off curve and its
//! minimizer, a closed-form infimum used by the error bounds, admissibility
//! checks for a-priori rules, and detection of degenerate sweeps where the
//! stopping index freezes as the noise level drops.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alm::StepSchedule;
use crate::error::{AlmregError, Result};

/// When the outer iteration stops.
#[derive(Clone)]
pub enum StoppingRule {
    /// First `n` with `||K u_n - g_delta|| < rho * delta` (strict).
    Morozov { rho: f64, delta: f64 },
    /// Stop after exactly `n` steps.
    Fixed { n: usize },
    /// Stop at an index chosen from the noise level alone.
    APriori {
        index: Arc<dyn Fn(f64) -> usize + Send + Sync>,
        delta: f64,
    },
}

impl StoppingRule {
    pub fn morozov(rho: f64, delta: f64) -> Result<Self> {
        if !(rho > 1.0 && rho.is_finite()) {
            return Err(AlmregError::Domain(format!(
                "discrepancy factor must satisfy rho > 1, got {rho}"
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(AlmregError::Domain(format!(
                "noise level must be positive, got {delta}"
            )));
        }
        Ok(StoppingRule::Morozov { rho, delta })
    }

    pub fn fixed(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(AlmregError::Domain("fixed stop needs n >= 1".into()));
        }
        Ok(StoppingRule::Fixed { n })
    }

    pub fn a_priori(
        index: impl Fn(f64) -> usize + Send + Sync + 'static,
        delta: f64,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(AlmregError::Domain(format!(
                "noise level must be positive, got {delta}"
            )));
        }
        Ok(StoppingRule::APriori {
            index: Arc::new(index),
            delta,
        })
    }

    /// Fixed target index, if the rule prescribes one up front.
    pub fn fixed_target(&self) -> Option<usize> {
        match self {
            StoppingRule::Fixed { n } => Some(*n),
            StoppingRule::APriori { index, delta } => Some(index(*delta).max(1)),
            StoppingRule::Morozov { .. } => None,
        }
    }

    /// True when a state with this residual stops the iteration.
    pub fn fires(&self, n: usize, residual: f64) -> bool {
        match self {
            StoppingRule::Morozov { rho, delta } => residual < rho * delta,
            _ => self.fixed_target() == Some(n),
        }
    }
}

impl fmt::Debug for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingRule::Morozov { rho, delta } => {
                write!(f, "Morozov {{ rho: {rho}, delta: {delta} }}")
            }
            StoppingRule::Fixed { n } => write!(f, "Fixed {{ n: {n} }}"),
            StoppingRule::APriori { delta, .. } => {
                write!(f, "APriori {{ delta: {delta}, index: <fn> }}")
            }
        }
    }
}

/// Offline discrepancy index: first 1-based `n` with `residuals[n-1] < rho*delta`,
/// or `None` when the threshold is never crossed.
pub fn morozov_index(residuals: &[f64], rho: f64, delta: f64) -> Result<Option<usize>> {
    if !(rho > 1.0 && rho.is_finite()) {
        return Err(AlmregError::Domain(format!(
            "discrepancy factor must satisfy rho > 1, got {rho}"
        )));
    }
    let threshold = rho * delta;
    Ok(residuals
        .iter()
        .position(|&r| r < threshold)
        .map(|i| i + 1))
}

/// Overshoot trade-off curve `f(rho) = rho (sqrt(rho) + 1) / sqrt(rho - 1)`:
/// the leading error-bound constant as a function of the discrepancy factor.
pub fn f_rho(rho: f64) -> Result<f64> {
    if !(rho > 1.0 && rho.is_finite()) {
        return Err(AlmregError::Domain(format!(
            "f_rho is defined for rho > 1, got {rho}"
        )));
    }
    Ok(rho * (rho.sqrt() + 1.0) / (rho - 1.0).sqrt())
}

/// Minimizer of [`f_rho`] on `(1, 10]` by golden-section search, returned as
/// `(rho_star, f(rho_star))`. The curve is unimodal there: it blows up at
/// both ends of `(1, infinity)` and has a single interior minimum.
pub fn optimal_rho() -> (f64, f64) {
    let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let (mut a, mut b) = (1.0 + 1e-9, 10.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f_rho(c).unwrap();
    let mut fd = f_rho(d).unwrap();
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f_rho(c).unwrap();
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f_rho(d).unwrap();
        }
    }
    let rho = 0.5 * (a + b);
    (rho, f_rho(rho).unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuxInfimum {
    pub value: f64,
    pub gamma_star: f64,
}

/// Closed form of `inf_{gamma > 1} [ gamma/(gamma-1) a + gamma^2/(gamma-1) b ]`
/// for positive `a`, `b`: the infimum equals `(sqrt(b) + sqrt(a+b))^2` and is
/// attained at `gamma = 1 + sqrt(1 + a/b)`.
pub fn auxlem_infimum(a: f64, b: f64) -> Result<AuxInfimum> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(AlmregError::Domain(format!(
            "auxlem_infimum needs positive a, b; got a={a}, b={b}"
        )));
    }
    Ok(AuxInfimum {
        value: (b.sqrt() + (a + b).sqrt()).powi(2),
        gamma_star: 1.0 + (1.0 + a / b).sqrt(),
    })
}

/// One noise sweep, smallest essentials only: what each run stopped at.
/// Richer per-run data lives with the harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    /// Noise levels, strictly decreasing.
    pub deltas: Vec<f64>,
    /// Stopping index per run; `None` when the rule never fired.
    pub gamma_indices: Vec<Option<usize>>,
    /// Cumulative step sum at the stopping index.
    pub t_values: Vec<Option<f64>>,
    pub diagnostics: Vec<RunDiagnostics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub outer_steps: usize,
    pub residual_last: f64,
    pub stopped: bool,
    /// True when any inner solve missed its tolerance.
    pub any_inexact_inner: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaTrend {
    /// The last `window` stopping indices are all equal to this value:
    /// the sweep looks degenerate (exact-data discrepancy already below
    /// threshold at a fixed index).
    Degenerate { n: usize },
    /// Indices nondecreasing over the window, with growth: the expected
    /// picture for a genuinely noisy instance.
    Increasing,
    /// Anything else, including runs where the rule never fired.
    Mixed,
}

/// Classifies the tail of the stopping-index sequence of a sweep.
pub fn degenerate_detect(record: &SweepRecord, window: usize) -> Result<GammaTrend> {
    let n = record.gamma_indices.len();
    if window < 2 || window > n {
        return Err(AlmregError::Domain(format!(
            "window must lie in [2, {n}], got {window}"
        )));
    }
    let tail = &record.gamma_indices[n - window..];
    if tail.iter().any(|g| g.is_none()) {
        return Ok(GammaTrend::Mixed);
    }
    let vals: Vec<usize> = tail.iter().map(|g| g.unwrap()).collect();
    if vals.iter().all(|&v| v == vals[0]) {
        return Ok(GammaTrend::Degenerate { n: vals[0] });
    }
    if vals.windows(2).all(|w| w[0] <= w[1]) {
        return Ok(GammaTrend::Increasing);
    }
    Ok(GammaTrend::Mixed)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityPoint {
    pub delta: f64,
    pub n: usize,
    pub t: f64,
    pub delta_sq_t: f64,
    pub delta_t: f64,
}

/// Empirical admissibility of an a-priori rule `delta -> n(delta)`.
#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub points: Vec<AdmissibilityPoint>,
    /// Trend test over the last half: `delta^2 t -> 0` while `t` grows,
    /// the regime where the a-priori error bound vanishes.
    pub vanishing_energy: bool,
    /// Trend test over the last half: `delta t` stays bounded, the regime
    /// with a convergence-rate guarantee.
    pub bounded_delta_t: bool,
}

/// Evaluates an a-priori index rule along a decreasing noise sequence and
/// reports which asymptotic regime its trends are consistent with.
pub fn apriori_admissible(
    schedule: &StepSchedule,
    index: impl Fn(f64) -> usize,
    deltas: &[f64],
) -> Result<AdmissibilityReport> {
    if deltas.len() < 4 {
        return Err(AlmregError::InsufficientData {
            needed: 4,
            got: deltas.len(),
        });
    }
    if !deltas.windows(2).all(|w| w[0] > w[1] && w[1] > 0.0) {
        return Err(AlmregError::Domain(
            "noise sequence must be strictly decreasing and positive".into(),
        ));
    }
    let points: Vec<AdmissibilityPoint> = deltas
        .iter()
        .map(|&delta| {
            let n = index(delta).max(1);
            let t = schedule.t_at(n);
            AdmissibilityPoint {
                delta,
                n,
                t,
                delta_sq_t: delta * delta * t,
                delta_t: delta * t,
            }
        })
        .collect();
    let tail = &points[points.len() / 2..];
    let energy_decreasing = tail
        .windows(2)
        .all(|w| w[1].delta_sq_t < w[0].delta_sq_t * (1.0 + 1e-12));
    let t_growing = tail.windows(2).all(|w| w[1].t > w[0].t * (1.0 + 1e-12));
    let vanishing_energy = energy_decreasing && t_growing;
    let bounded_delta_t = tail
        .windows(2)
        .all(|w| w[1].delta_t <= w[0].delta_t * (1.0 + 1e-9));
    Ok(AdmissibilityReport {
        points,
        vanishing_energy,
        bounded_delta_t,
    })
}
