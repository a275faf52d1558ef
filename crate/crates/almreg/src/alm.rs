//! The outer augmented Lagrangian iteration for `K u = g_delta`:
//!
//! ```text
//!     u_n = argmin_u (tau_n/2) ||K u - b_n||^2 + J(u),   b_n = g_delta + p_{n-1}/tau_n,
//!     p_n = p_{n-1} + tau_n (g_delta - K u_n),
//! ```
//!
//! which in the dual is the proximal point method on
//! `G(p) = J*(K* p) - <p, g_delta>` with step `tau_n`. Two identities the
//! code leans on: the dual update gives `K* p_n` as an (inexactness-level)
//! subgradient of `J` at `u_n`, and `||p_n - p_{n-1}|| = tau_n ||K u_n - g_delta||`.

use serde::{Deserialize, Serialize};

use crate::error::{AlmregError, Result};
use crate::linop::{LinearOperator, Vector};
use crate::penalty::{ExtReal, Penalty, SubproblemSpec, WarmStart};
use crate::stopping::StoppingRule;

/// Positive step sizes `tau_n`. Either one constant value, or an explicit
/// prefix continued by a constant tail; both keep `sup_n tau_n` finite,
/// which the stopping-time bound depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { tau: f64 },
    Sequence { prefix: Vec<f64>, tail: f64 },
}

impl StepSchedule {
    pub fn constant(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(AlmregError::Domain(format!(
                "step size must be positive and finite, got {tau}"
            )));
        }
        Ok(StepSchedule::Constant { tau })
    }

    pub fn sequence(prefix: Vec<f64>, tail: f64) -> Result<Self> {
        if prefix.iter().chain([&tail]).any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(AlmregError::Domain(
                "all step sizes must be positive and finite".into(),
            ));
        }
        Ok(StepSchedule::Sequence { prefix, tail })
    }

    /// Step used at outer iteration `n` (1-based).
    pub fn tau_at(&self, n: usize) -> f64 {
        assert!(n >= 1, "steps are 1-indexed");
        match self {
            StepSchedule::Constant { tau } => *tau,
            StepSchedule::Sequence { prefix, tail } => {
                prefix.get(n - 1).copied().unwrap_or(*tail)
            }
        }
    }

    /// Cumulative step sum `t_n = tau_1 + ... + tau_n`; `t_0 = 0`.
    pub fn t_at(&self, n: usize) -> f64 {
        match self {
            StepSchedule::Constant { tau } => tau * n as f64,
            StepSchedule::Sequence { prefix, tail } => {
                let head = prefix.len().min(n);
                let head_sum: f64 = prefix[..head].iter().sum();
                head_sum + *tail * (n - head) as f64
            }
        }
    }

    /// `sup_n tau_n`.
    pub fn tau_sup(&self) -> f64 {
        match self {
            StepSchedule::Constant { tau } => *tau,
            StepSchedule::Sequence { prefix, tail } => {
                prefix.iter().copied().fold(*tail, f64::max)
            }
        }
    }
}

/// State after outer step `n`.
#[derive(Debug, Clone)]
pub struct AlmState {
    pub n: usize,
    pub u: Vector,
    pub p: Vector,
    /// Cumulative step sum `t_n`.
    pub t: f64,
    /// `||K u_n - g_delta||`.
    pub residual: f64,
    /// True when the inner solver missed its tolerance at this step.
    pub inexact: bool,
}

impl AlmState {
    /// State before the first step: `u` is the zero vector, `p = p0`, `t = 0`.
    pub fn initial(dim_u: usize, p0: Vector) -> Self {
        AlmState {
            n: 0,
            u: Vector::zeros(dim_u),
            p: p0,
            t: 0.0,
            residual: f64::NAN,
            inexact: false,
        }
    }
}

/// Options for the outer loop; `None` tolerances fall back to the penalty's
/// defaults.
#[derive(Debug, Clone)]
pub struct AlmOptions {
    pub schedule: StepSchedule,
    /// Starting dual variable; zero when absent.
    pub p0: Option<Vector>,
    pub inner_tol: Option<f64>,
    pub max_inner: Option<usize>,
    pub max_outer: usize,
}

impl AlmOptions {
    pub fn new(schedule: StepSchedule) -> Self {
        AlmOptions {
            schedule,
            p0: None,
            inner_tol: None,
            max_inner: None,
            max_outer: 50_000,
        }
    }

    pub fn resolved_tol(&self, pen: &Penalty) -> f64 {
        self.inner_tol.unwrap_or_else(|| pen.default_tol())
    }

    pub fn resolved_max_inner(&self, pen: &Penalty) -> usize {
        self.max_inner.unwrap_or(match pen {
            Penalty::Quadratic { .. } => 10_000,
            Penalty::Lq { .. } => 50_000,
            Penalty::Tv { .. } => 200_000,
        })
    }
}

/// One outer step from `prev`, with step size `tau`.
///
/// The dual update is carried out in exact arithmetic on the computed `u`,
/// so the residual identity `||p_n - p_{n-1}|| = tau ||K u_n - g_delta||`
/// holds to rounding error regardless of inner-solver accuracy.
pub fn alm_step(
    k: &LinearOperator,
    g_delta: &Vector,
    pen: &Penalty,
    prev: &AlmState,
    tau: f64,
    tol: f64,
    max_inner: usize,
    warm: &mut WarmStart,
) -> Result<AlmState> {
    if g_delta.len() != k.dim_out() {
        return Err(AlmregError::Dimension {
            context: "alm_step data",
            expected: k.dim_out(),
            got: g_delta.len(),
        });
    }
    let b = g_delta.add_scaled(1.0 / tau, &prev.p);
    let spec = SubproblemSpec {
        op: k,
        b,
        tau,
        tol,
        max_inner,
    };
    warm.u = Some(prev.u.clone());
    let (u, diag) = crate::penalty::solve_subproblem(pen, &spec, warm)?;
    let misfit = g_delta.sub(&k.apply(&u));
    let p = prev.p.add_scaled(tau, &misfit);
    Ok(AlmState {
        n: prev.n + 1,
        u,
        p,
        t: prev.t + tau,
        residual: misfit.norm(),
        inexact: !diag.converged,
    })
}

/// Full trajectory of one run, including the starting dual and enough of the
/// configuration to re-derive every reported quantity.
#[derive(Debug, Clone)]
pub struct AlmTrajectory {
    pub states: Vec<AlmState>,
    pub p0: Vector,
    pub schedule: StepSchedule,
    pub inner_tol: f64,
    /// Index at which the stopping rule fired; `None` when it never did
    /// within the outer iteration cap.
    pub stopped_at: Option<usize>,
}

impl AlmTrajectory {
    /// State of step `n` (1-based).
    pub fn state(&self, n: usize) -> &AlmState {
        &self.states[n - 1]
    }

    pub fn last(&self) -> &AlmState {
        self.states.last().expect("trajectory has at least one state")
    }

    /// State the run stopped at, when the rule fired.
    pub fn stopped_state(&self) -> Option<&AlmState> {
        self.stopped_at.map(|n| self.state(n))
    }

    /// Dual iterate before step `n`: `p0` for `n = 1`.
    pub fn p_before(&self, n: usize) -> &Vector {
        if n <= 1 {
            &self.p0
        } else {
            &self.states[n - 2].p
        }
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.residual).collect()
    }

    /// True when any inner solve along the way missed its tolerance.
    pub fn any_inexact(&self) -> bool {
        self.states.iter().any(|s| s.inexact)
    }

    /// Steps `(n, excess)` violating one-step residual monotonicity by more
    /// than the inexactness allowance `10 tol (1 + residual_n)`.
    pub fn residual_monotonicity_violations(&self) -> Vec<(usize, f64)> {
        self.states
            .windows(2)
            .filter_map(|w| {
                let slack = 10.0 * self.inner_tol * (1.0 + w[0].residual);
                let excess = w[1].residual - w[0].residual - slack;
                (excess > 0.0).then_some((w[1].n, excess))
            })
            .collect()
    }
}

/// Runs the iteration from `u = 0`, `p = p0` until the stopping rule fires
/// or `max_outer` steps are exhausted. Inner solves are warm-started from
/// the previous step; the stopping check happens right after each step, so
/// a discrepancy rule stops at its exact first crossing.
pub fn alm_run(
    k: &LinearOperator,
    g_delta: &Vector,
    pen: &Penalty,
    options: &AlmOptions,
    rule: &StoppingRule,
) -> Result<AlmTrajectory> {
    let p0 = match &options.p0 {
        Some(p) => {
            if p.len() != k.dim_out() {
                return Err(AlmregError::Dimension {
                    context: "alm_run p0",
                    expected: k.dim_out(),
                    got: p.len(),
                });
            }
            p.clone()
        }
        None => Vector::zeros(k.dim_out()),
    };
    let tol = options.resolved_tol(pen);
    let max_inner = options.resolved_max_inner(pen);
    let mut warm = WarmStart::default();
    let mut prev = AlmState::initial(k.dim_in(), p0.clone());
    let mut states = Vec::new();
    let mut stopped_at = None;
    let cap = match rule.fixed_target() {
        Some(n) => n.min(options.max_outer),
        None => options.max_outer,
    };
    for n in 1..=cap {
        let tau = options.schedule.tau_at(n);
        let state = alm_step(k, g_delta, pen, &prev, tau, tol, max_inner, &mut warm)?;
        let fired = rule.fires(n, state.residual);
        states.push(state.clone());
        prev = state;
        if fired {
            stopped_at = Some(n);
            break;
        }
    }
    Ok(AlmTrajectory {
        states,
        p0,
        schedule: options.schedule.clone(),
        inner_tol: tol,
        stopped_at,
    })
}

/// Dual objective `G(p) = J*(K* p) - <p, data>`; the outer iteration is the
/// proximal point method on this function.
pub fn dual_objective(
    k: &LinearOperator,
    pen: &Penalty,
    p: &Vector,
    data: &Vector,
) -> ExtReal {
    match pen.conjugate_eval(&k.adjoint_apply(p)) {
        ExtReal::Finite(v) => ExtReal::Finite(v - p.dot(data)),
        other => other,
    }
}

/// Per-step slack in the proximal-point descent estimate: for each `n`,
///
/// ```text
/// slack_n = ||p_ref - p0||^2/(2 t_n) - ||p_ref - p_n||^2/(2 t_n)
///           - t_n ||K u_n - g_delta||^2 / 2  -  [G(p_n) - G(p_ref)]
/// ```
///
/// (the quadratic dual-increment term is written via the residual identity).
/// Nonnegative for exact inner solves, for any reference dual `p_ref`;
/// `+inf` when `p_ref` is outside the domain of `G` (vacuous bound).
pub fn gueler_slack(
    traj: &AlmTrajectory,
    k: &LinearOperator,
    pen: &Penalty,
    g_delta: &Vector,
    p_ref: &Vector,
) -> Result<Vec<f64>> {
    let g_ref = match dual_objective(k, pen, p_ref, g_delta) {
        ExtReal::Finite(v) => v,
        ExtReal::PosInf => return Ok(vec![f64::INFINITY; traj.states.len()]),
        ExtReal::Unavailable => return Err(AlmregError::ConjugateUnavailable),
    };
    traj.states
        .iter()
        .map(|s| {
            let g_n = match dual_objective(k, pen, &s.p, g_delta) {
                ExtReal::Finite(v) => v,
                ExtReal::PosInf => return Ok(f64::NEG_INFINITY),
                ExtReal::Unavailable => return Err(AlmregError::ConjugateUnavailable),
            };
            let d0 = p_ref.sub(&traj.p0).norm();
            let dn = p_ref.sub(&s.p).norm();
            let lhs = (d0 * d0 - dn * dn) / (2.0 * s.t)
                - s.t * s.residual * s.residual / 2.0;
            Ok(lhs - (g_n - g_ref))
        })
        .collect()
}

/// Per-state summary with the scalars worth serializing; vectors stay in
/// [`AlmTrajectory`].
#[derive(Debug, Clone, Serialize)]
pub struct StateSummary {
    pub n: usize,
    pub t: f64,
    pub residual: f64,
    pub penalty_value: f64,
    pub dual_objective: ExtReal,
    pub inexact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySummary {
    pub schedule: StepSchedule,
    pub p0: Vec<f64>,
    pub inner_tol: f64,
    pub stopped_at: Option<usize>,
    pub states: Vec<StateSummary>,
}

impl AlmTrajectory {
    pub fn summarize(
        &self,
        k: &LinearOperator,
        pen: &Penalty,
        g_delta: &Vector,
    ) -> TrajectorySummary {
        TrajectorySummary {
            schedule: self.schedule.clone(),
            p0: self.p0.as_slice().to_vec(),
            inner_tol: self.inner_tol,
            stopped_at: self.stopped_at,
            states: self
                .states
                .iter()
                .map(|s| StateSummary {
                    n: s.n,
                    t: s.t,
                    residual: s.residual,
                    penalty_value: pen.eval(&s.u),
                    dual_objective: dual_objective(k, pen, &s.p, g_delta),
                    inexact: s.inexact,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::linop::DenseMatrix;

    fn scalar_setup() -> (LinearOperator, Vector, Penalty) {
        (
            LinearOperator::identity(1),
            Vector::new(vec![1.0]),
            Penalty::quadratic_identity(1),
        )
    }

    #[test]
    fn schedule_partial_sums_and_sup() {
        let s = StepSchedule::sequence(vec![1.0, 2.0, 4.0], 0.5).unwrap();
        assert_eq!(s.tau_at(1), 1.0);
        assert_eq!(s.tau_at(3), 4.0);
        assert_eq!(s.tau_at(4), 0.5);
        assert_eq!(s.t_at(0), 0.0);
        assert_eq!(s.t_at(3), 7.0);
        assert_eq!(s.t_at(5), 8.0);
        assert_eq!(s.tau_sup(), 4.0);
        let c = StepSchedule::constant(2.0).unwrap();
        assert_eq!(c.t_at(5), 10.0);
        assert_eq!(c.tau_sup(), 2.0);
        assert!(StepSchedule::constant(0.0).is_err());
        assert!(StepSchedule::sequence(vec![1.0, -1.0], 1.0).is_err());
    }

    #[test]
    fn scalar_recursion_closed_form() {
        // K = I, g = 1, tau = 1, J = u^2/2: u_n = p_n = 1 - 2^-n.
        let (k, g, pen) = scalar_setup();
        let mut options = AlmOptions::new(StepSchedule::constant(1.0).unwrap());
        options.inner_tol = Some(1e-14);
        let rule = StoppingRule::fixed(30).unwrap();
        let traj = alm_run(&k, &g, &pen, &options, &rule).unwrap();
        assert_eq!(traj.states.len(), 30);
        for s in &traj.states {
            let want = 1.0 - 0.5_f64.powi(s.n as i32);
            assert!((s.u[0] - want).abs() <= 1e-12, "u_{} = {}", s.n, s.u[0]);
            assert!((s.p[0] - want).abs() <= 1e-12);
            assert!((s.residual - 0.5_f64.powi(s.n as i32)).abs() <= 1e-12);
        }
    }

    #[test]
    fn scalar_morozov_stops_at_first_crossing() {
        let (k, g, pen) = scalar_setup();
        let mut options = AlmOptions::new(StepSchedule::constant(1.0).unwrap());
        options.inner_tol = Some(1e-14);
        let rule = StoppingRule::morozov(2.0, 0.1).unwrap();
        let traj = alm_run(&k, &g, &pen, &options, &rule).unwrap();
        // Residual 2^-n dips under 0.2 first at n = 3.
        assert_eq!(traj.stopped_at, Some(3));
        assert_eq!(traj.states.len(), 3);
    }

    #[test]
    fn online_stop_agrees_with_offline_index() {
        let (k, g, pen) = scalar_setup();
        let mut options = AlmOptions::new(StepSchedule::constant(1.0).unwrap());
        options.inner_tol = Some(1e-14);
        let rule = StoppingRule::morozov(1.5, 0.03).unwrap();
        let traj = alm_run(&k, &g, &pen, &options, &rule).unwrap();
        let offline = crate::stopping::morozov_index(&traj.residuals(), 1.5, 0.03).unwrap();
        assert_eq!(offline, traj.stopped_at);
    }

    #[test]
    fn residual_dual_identity_holds_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<f64> = (0..20).map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)).collect();
        let k = LinearOperator::dense(DenseMatrix::new(4, 5, data).unwrap());
        let g = Vector::randn(4, &mut rng);
        let pen = Penalty::lq(1.0).unwrap();
        let options = AlmOptions::new(StepSchedule::constant(2.0).unwrap());
        let rule = StoppingRule::fixed(5).unwrap();
        let traj = alm_run(&k, &g, &pen, &options, &rule).unwrap();
        for n in 1..=5 {
            let s = traj.state(n);
            let dual_inc = s.p.sub(traj.p_before(n)).norm();
            let tau = traj.schedule.tau_at(n);
            assert!(
                (dual_inc - tau * s.residual).abs() <= 1e-13 * (1.0 + dual_inc),
                "identity broken at n={n}"
            );
        }
    }

    #[test]
    fn l1_identity_first_step_matches_hand_computation() {
        let k = LinearOperator::identity(2);
        let g = Vector::new(vec![3.0, 0.1]);
        let pen = Penalty::lq(1.0).unwrap();
        let prev = AlmState::initial(2, Vector::zeros(2));
        let state = alm_step(&k, &g, &pen, &prev, 1.0, 1e-12, 1000, &mut WarmStart::default())
            .unwrap();
        assert!((state.u[0] - 2.0).abs() <= 1e-10);
        assert!(state.u[1].abs() <= 1e-12);
        assert!((state.p[0] - 1.0).abs() <= 1e-10);
        assert!((state.p[1] - 0.1).abs() <= 1e-12);
    }

    #[test]
    fn small_data_stops_in_one_step() {
        // Data entirely below the first soft threshold: u_1 = 0 and the
        // residual is already inside the discrepancy ball.
        let k = LinearOperator::identity(2);
        let g = Vector::new(vec![0.3, -0.2]);
        let pen = Penalty::lq(1.0).unwrap();
        let options = AlmOptions::new(StepSchedule::constant(1.0).unwrap());
        let rule = StoppingRule::morozov(2.0, 0.5).unwrap();
        let traj = alm_run(&k, &g, &pen, &options, &rule).unwrap();
        assert_eq!(traj.stopped_at, Some(1));
        assert!(traj.state(1).u.norm() <= 1e-12);
        assert!((traj.state(1).residual - g.norm()).abs() <= 1e-12);
    }

    #[test]
    fn saddle_point_is_fixed() {
        // Start the step at a state satisfying K u = g_delta with
        // K* p a subgradient at u; nothing should move.
        let k = LinearOperator::identity(2);
        let g = Vector::new(vec![2.0, -0.5]);
        let pen = Penalty::quadratic_identity(2);
        let saddle = AlmState {
            n: 7,
            u: g.clone(),
            p: g.clone(),
            t: 7.0,
            residual: 0.0,
            inexact: false,
        };
        let next = alm_step(&k, &g, &pen, &saddle, 1.0, 1e-12, 1000, &mut WarmStart::default())
            .unwrap();
        assert!(next.u.sub(&saddle.u).norm() <= 1e-10);
        assert!(next.p.sub(&saddle.p).norm() <= 1e-10);
    }

    #[test]
    fn gueler_slack_nonnegative_on_scalar_problem() {
        let (k, g, pen) = scalar_setup();
        let mut options = AlmOptions::new(StepSchedule::constant(1.0).unwrap());
        options.inner_tol = Some(1e-14);
        let rule = StoppingRule::fixed(25).unwrap();
        let traj = alm_run(&k, &g, &pen, &options, &rule).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let p_ref = Vector::randn(1, &mut rng).scale(3.0);
            let slacks = gueler_slack(&traj, &k, &pen, &g, &p_ref).unwrap();
            for (i, s) in slacks.iter().enumerate() {
                assert!(*s >= -1e-10, "slack at n={} is {s:.3e}", i + 1);
            }
        }
    }

    #[test]
    fn gueler_slack_vacuous_outside_dual_domain() {
        let k = LinearOperator::identity(2);
        let g = Vector::new(vec![3.0, 0.1]);
        let pen = Penalty::lq(1.0).unwrap();
        let options = AlmOptions::new(StepSchedule::constant(1.0).unwrap());
        let rule = StoppingRule::fixed(3).unwrap();
        let traj = alm_run(&k, &g, &pen, &options, &rule).unwrap();
        let outside = Vector::new(vec![5.0, 0.0]);
        let slacks = gueler_slack(&traj, &k, &pen, &g, &outside).unwrap();
        assert!(slacks.iter().all(|s| s.is_infinite() && *s > 0.0));
    }

    #[test]
    fn dual_objective_unavailable_propagates() {
        let k = LinearOperator::identity(4);
        let g = Vector::zeros(4);
        let pen = Penalty::tv(crate::linop::GridShape::line(4), crate::penalty::TvFlavor::Anisotropic);
        assert_eq!(dual_objective(&k, &pen, &g, &g), ExtReal::Unavailable);
        let options = AlmOptions::new(StepSchedule::constant(1.0).unwrap());
        let rule = StoppingRule::fixed(1).unwrap();
        let traj = alm_run(&k, &Vector::new(vec![1.0, 1.0, 0.0, 0.0]), &pen, &options, &rule).unwrap();
        let res = gueler_slack(&traj, &k, &pen, &Vector::new(vec![1.0, 1.0, 0.0, 0.0]), &g);
        assert!(matches!(res, Err(AlmregError::ConjugateUnavailable)));
    }

    #[test]
    fn trajectory_summary_serializes() {
        let (k, g, pen) = scalar_setup();
        let options = AlmOptions::new(StepSchedule::constant(1.0).unwrap());
        let rule = StoppingRule::fixed(2).unwrap();
        let traj = alm_run(&k, &g, &pen, &options, &rule).unwrap();
        let text = serde_json::to_string(&traj.summarize(&k, &pen, &g)).unwrap();
        assert!(text.contains("\"residual\""));
        assert!(text.contains("\"dual_objective\""));
        assert!(text.contains("\"stopped_at\":2"));
    }
}
