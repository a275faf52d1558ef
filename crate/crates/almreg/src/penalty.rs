//! Convex penalties, their conjugates and Bregman distances, and the inner
//! solvers for the regularized least-squares subproblem
//!
//! ```text
//!     min_u  (tau/2) ||K u - b||^2 + J(u).
//! ```
//!
//! Three penalty families are supported:
//!
//! * `Quadratic(L)`: `J(u) = 0.5 ||L u||^2`, solved by conjugate gradients
//!   on the normal equations,
//! * `Lq(q)`: `J(u) = sum_k |u_k|^q` with `q` in `[1, 2]` (no `1/q` factor;
//!   conjugates below match this convention), solved by an accelerated
//!   proximal gradient loop,
//! * `Tv`: anisotropic or isotropic total variation of a grid function with
//!   forward differences and Neumann boundary, solved by a primal-dual
//!   scheme on the saddle formulation with the operator pair
//!   `(K, discrete gradient)`.

use serde::Serialize;

use crate::error::{AlmregError, Result};
use crate::linop::{GridShape, LinearOperator, Vector};

/// Value on the extended real line; `Unavailable` marks quantities the
/// penalty has no implemented closed form for (e.g. the conjugate of TV).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtReal {
    Finite(f64),
    PosInf,
    Unavailable,
}

impl ExtReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TvFlavor {
    Anisotropic,
    Isotropic,
}

/// Convex penalty `J`.
#[derive(Debug, Clone)]
pub enum Penalty {
    /// `0.5 ||L u||^2`.
    Quadratic { l: LinearOperator },
    /// `sum_k |u_k|^q`, `1 <= q <= 2`.
    Lq { q: f64 },
    /// Total variation on a grid; signals are one-row grids.
    Tv { grid: GridShape, flavor: TvFlavor },
}

impl Penalty {
    pub fn quadratic(l: LinearOperator) -> Self {
        Penalty::Quadratic { l }
    }

    /// Quadratic penalty with `L = I`, the only one whose conjugate is known.
    pub fn quadratic_identity(n: usize) -> Self {
        Penalty::Quadratic {
            l: LinearOperator::identity(n),
        }
    }

    pub fn lq(q: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&q) {
            return Err(AlmregError::Domain(format!(
                "lq exponent must lie in [1, 2], got {q}"
            )));
        }
        Ok(Penalty::Lq { q })
    }

    pub fn tv(grid: GridShape, flavor: TvFlavor) -> Self {
        Penalty::Tv { grid, flavor }
    }

    /// Inner-solver tolerance used when the caller does not override it.
    pub fn default_tol(&self) -> f64 {
        match self {
            Penalty::Quadratic { .. } => 1e-10,
            Penalty::Lq { .. } => 1e-8,
            Penalty::Tv { .. } => 1e-6,
        }
    }

    pub fn eval(&self, u: &Vector) -> f64 {
        match self {
            Penalty::Quadratic { l } => {
                let lu = l.apply(u);
                0.5 * lu.dot(&lu)
            }
            Penalty::Lq { q } => {
                if *q == 1.0 {
                    u.norm_l1()
                } else if *q == 2.0 {
                    u.dot(u)
                } else {
                    u.as_slice().iter().map(|x| x.abs().powf(*q)).sum()
                }
            }
            Penalty::Tv { grid, flavor } => {
                assert_eq!(u.len(), grid.len(), "tv eval: grid mismatch");
                let (dx, dy) = tv_grad(*grid, u.as_slice());
                match flavor {
                    TvFlavor::Anisotropic => {
                        dx.iter().map(|v| v.abs()).sum::<f64>()
                            + dy.iter().map(|v| v.abs()).sum::<f64>()
                    }
                    TvFlavor::Isotropic => dx
                        .iter()
                        .zip(&dy)
                        .map(|(a, b)| (a * a + b * b).sqrt())
                        .sum(),
                }
            }
        }
    }

    /// Convex conjugate `J*(xi) = sup_u <xi, u> - J(u)`.
    ///
    /// Closed forms exist for `Quadratic` with `L = I` and for `Lq`; for
    /// `q = 1` the conjugate is the indicator of the unit sup-norm ball.
    /// Everything else reports `Unavailable`.
    pub fn conjugate_eval(&self, xi: &Vector) -> ExtReal {
        match self {
            Penalty::Quadratic { l } if l.is_identity() => {
                ExtReal::Finite(0.5 * xi.dot(xi))
            }
            Penalty::Quadratic { .. } => ExtReal::Unavailable,
            Penalty::Lq { q } => {
                if *q == 1.0 {
                    if xi.norm_linf() <= 1.0 {
                        ExtReal::Finite(0.0)
                    } else {
                        ExtReal::PosInf
                    }
                } else {
                    // Per-coordinate sup_t (xi t - |t|^q) = (q^(1-r)/r) |xi|^r
                    // with r = q/(q-1); for q = 2 this is |xi|^2/4.
                    let r = q / (q - 1.0);
                    let coeff = q.powf(1.0 - r) / r;
                    ExtReal::Finite(
                        xi.as_slice()
                            .iter()
                            .map(|s| coeff * s.abs().powf(r))
                            .sum(),
                    )
                }
            }
            Penalty::Tv { .. } => ExtReal::Unavailable,
        }
    }

    /// Gradient of `J` where it is differentiable: quadratic penalties
    /// (`L*L u`) and `Lq` with `q > 1`. None for `l1` and TV.
    pub fn gradient(&self, u: &Vector) -> Option<Vector> {
        match self {
            Penalty::Quadratic { l } => Some(l.adjoint_apply(&l.apply(u))),
            Penalty::Lq { q } if *q > 1.0 => Some(Vector::from_fn(u.len(), |k| {
                let x = u[k];
                q * x.signum() * x.abs().powf(q - 1.0)
            })),
            _ => None,
        }
    }

    /// Fenchel gap `J(u) + J*(xi) - <xi, u>`, which is zero exactly when
    /// `xi` is a subgradient of `J` at `u`.
    ///
    /// For `q = 1` the raw formula is infinite whenever `xi` leaves the dual
    /// ball, which an inexact inner solve will do at rounding level; the gap
    /// is therefore measured against the clamped multiplier plus the ball
    /// violation, a finite quantity with the same zero set.
    pub fn fenchel_gap(&self, u: &Vector, xi: &Vector) -> Result<f64> {
        assert_eq!(u.len(), xi.len(), "fenchel_gap: length mismatch");
        match self {
            Penalty::Quadratic { l } if l.is_identity() => {
                let d = u.sub(xi);
                Ok(0.5 * d.dot(&d))
            }
            Penalty::Lq { q } if *q == 1.0 => {
                let violation = (xi.norm_linf() - 1.0).max(0.0);
                let gap: f64 = u
                    .as_slice()
                    .iter()
                    .zip(xi.as_slice())
                    .map(|(x, s)| x.abs() - s.clamp(-1.0, 1.0) * x)
                    .sum();
                Ok(gap + violation)
            }
            Penalty::Lq { .. } => match self.conjugate_eval(xi) {
                ExtReal::Finite(conj) => Ok(self.eval(u) + conj - xi.dot(u)),
                _ => unreachable!("lq conjugate is finite for q > 1"),
            },
            _ => Err(AlmregError::ConjugateUnavailable),
        }
    }

    /// Bregman distance `D_J(v, u; xi) = J(v) - J(u) - <xi, v - u>` for a
    /// claimed subgradient `xi` of `J` at `u`.
    ///
    /// A result below `-1e-10` (relative to the magnitudes involved) means
    /// `xi` is not a subgradient and is reported as an error rather than
    /// returned as a bogus negative distance.
    pub fn bregman(&self, v: &Vector, u: &Vector, xi: &Vector) -> Result<f64> {
        let jv = self.eval(v);
        let ju = self.eval(u);
        let cross = xi.dot(&v.sub(u));
        let d = jv - ju - cross;
        let tol = 1e-10 * (1.0 + jv.abs() + ju.abs() + cross.abs());
        if d < -tol {
            return Err(AlmregError::InvalidSubgradient {
                violation: -d,
                tol,
            });
        }
        Ok(d)
    }

    /// Symmetric Bregman distance `<xi_v - xi_u, v - u>` for claimed
    /// subgradients at `v` and `u` respectively.
    pub fn symmetric_bregman(
        &self,
        v: &Vector,
        u: &Vector,
        xi_v: &Vector,
        xi_u: &Vector,
    ) -> Result<f64> {
        let diff = v.sub(u);
        let d = xi_v.sub(xi_u).dot(&diff);
        let tol = 1e-10 * (1.0 + xi_v.norm() * diff.norm() + xi_u.norm() * diff.norm());
        if d < -tol {
            return Err(AlmregError::InvalidSubgradient {
                violation: -d,
                tol,
            });
        }
        Ok(d)
    }
}

/// Proximal map of `lam |.|^q` at `z`: the unique minimizer of
/// `0.5 (x - z)^2 + lam |x|^q`.
pub fn prox_scalar_power(z: f64, lam: f64, q: f64) -> Result<f64> {
    if !(1.0..=2.0).contains(&q) {
        return Err(AlmregError::Domain(format!(
            "prox exponent must lie in [1, 2], got {q}"
        )));
    }
    if !(lam >= 0.0 && lam.is_finite() && z.is_finite()) {
        return Err(AlmregError::Domain(
            "prox requires finite z and lam >= 0".into(),
        ));
    }
    Ok(prox_pow_unchecked(z, lam, q))
}

fn prox_pow_unchecked(z: f64, lam: f64, q: f64) -> f64 {
    if lam == 0.0 {
        return z;
    }
    if q == 1.0 {
        // Soft threshold.
        return z.signum() * (z.abs() - lam).max(0.0);
    }
    if q == 2.0 {
        return z / (1.0 + 2.0 * lam);
    }
    let a = z.abs();
    if a == 0.0 {
        return 0.0;
    }
    // Root of g(x) = x + lam q x^(q-1) - a on [0, a]; g is increasing there.
    let g = |x: f64| x + lam * q * x.powf(q - 1.0) - a;
    let (mut lo, mut hi) = (0.0_f64, a);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * a.max(1.0) {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    // Newton polish; the derivative 1 + lam q (q-1) x^(q-2) blows up at 0,
    // which only helps: steps stay inside the bracket.
    for _ in 0..4 {
        let dg = 1.0 + lam * q * (q - 1.0) * x.powf(q - 2.0);
        let step = g(x) / dg;
        let next = x - step;
        if next > 0.0 && next < a {
            x = next;
        }
    }
    z.signum() * x
}

/// One inner problem `min_u (tau/2)||K u - b||^2 + J(u)`.
pub struct SubproblemSpec<'a> {
    pub op: &'a LinearOperator,
    pub b: Vector,
    pub tau: f64,
    /// Solver tolerance; semantics depend on the penalty (relative CG
    /// residual, prox-gradient fixed-point residual, or KKT surrogate).
    pub tol: f64,
    pub max_inner: usize,
}

/// What the inner solver achieved.
#[derive(Debug, Clone, Serialize)]
pub struct InnerDiagnostics {
    pub method: &'static str,
    pub iterations: usize,
    /// Final value of the solver's own optimality measure.
    pub optimality: f64,
    /// False when the iteration cap was hit before reaching `tol`.
    pub converged: bool,
}

/// Carry-over state between consecutive inner solves. Starting the next
/// subproblem from the previous solution (and dual, for TV) does not change
/// what is computed, only how fast.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub u: Option<Vector>,
    tv: Option<TvDualState>,
}

#[derive(Debug, Clone)]
struct TvDualState {
    y: Vector,
    zx: Vec<f64>,
    zy: Vec<f64>,
}

pub fn solve_subproblem(
    pen: &Penalty,
    spec: &SubproblemSpec,
    warm: &mut WarmStart,
) -> Result<(Vector, InnerDiagnostics)> {
    if !(spec.tau > 0.0 && spec.tau.is_finite()) {
        return Err(AlmregError::Domain(format!(
            "subproblem needs tau > 0, got {}",
            spec.tau
        )));
    }
    if spec.b.len() != spec.op.dim_out() {
        return Err(AlmregError::Dimension {
            context: "solve_subproblem data",
            expected: spec.op.dim_out(),
            got: spec.b.len(),
        });
    }
    let (u, diag) = match pen {
        Penalty::Quadratic { l } => {
            if l.dim_in() != spec.op.dim_in() {
                return Err(AlmregError::Dimension {
                    context: "quadratic penalty operator",
                    expected: spec.op.dim_in(),
                    got: l.dim_in(),
                });
            }
            solve_quadratic_cg(l, spec, warm.u.as_ref())
        }
        Penalty::Lq { q } => solve_lq_fista(*q, spec, warm.u.as_ref()),
        Penalty::Tv { grid, flavor } => {
            if grid.len() != spec.op.dim_in() {
                return Err(AlmregError::Dimension {
                    context: "tv penalty grid",
                    expected: spec.op.dim_in(),
                    got: grid.len(),
                });
            }
            solve_tv_pdhg(*grid, *flavor, spec, warm)
        }
    };
    warm.u = Some(u.clone());
    Ok((u, diag))
}

/// CG on `(tau K*K + L*L) u = tau K* b`, stopped at relative residual `tol`.
fn solve_quadratic_cg(
    l: &LinearOperator,
    spec: &SubproblemSpec,
    warm: Option<&Vector>,
) -> (Vector, InnerDiagnostics) {
    let n = spec.op.dim_in();
    let apply_a = |v: &Vector| -> Vector {
        let mut out = spec.op.gram_apply(v).scale(spec.tau);
        out.add_scaled_mut(1.0, &l.gram_apply(v));
        out
    };
    let rhs = spec.op.adjoint_apply(&spec.b).scale(spec.tau);
    let rhs_norm = rhs.norm();
    if rhs_norm == 0.0 {
        return (
            Vector::zeros(n),
            InnerDiagnostics {
                method: "cg",
                iterations: 0,
                optimality: 0.0,
                converged: true,
            },
        );
    }
    let mut u = match warm {
        Some(w) if w.len() == n => w.clone(),
        _ => Vector::zeros(n),
    };
    let mut r = rhs.sub(&apply_a(&u));
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iters = 0;
    while rr.sqrt() > spec.tol * rhs_norm && iters < spec.max_inner {
        let ap = apply_a(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        u.add_scaled_mut(alpha, &p);
        r.add_scaled_mut(-alpha, &ap);
        let rr_new = r.dot(&r);
        p = r.add_scaled(rr_new / rr, &p);
        rr = rr_new;
        iters += 1;
    }
    let resid = rr.sqrt() / rhs_norm;
    (
        u,
        InnerDiagnostics {
            method: "cg",
            iterations: iters,
            optimality: resid,
            converged: resid <= spec.tol,
        },
    )
}

/// Accelerated proximal gradient with gradient restart; step `1/(tau ||K||^2)`,
/// stop on the fixed-point residual of the prox-gradient map.
fn solve_lq_fista(
    q: f64,
    spec: &SubproblemSpec,
    warm: Option<&Vector>,
) -> (Vector, InnerDiagnostics) {
    let n = spec.op.dim_in();
    let knorm = spec.op.norm_est();
    // Tiny inflation keeps the step below 1/Lipschitz even though the power
    // iteration approaches the norm from below.
    let lip = spec.tau * (knorm * knorm).max(1e-300) * (1.0 + 1e-9);
    let step = 1.0 / lip;
    let mut x = match warm {
        Some(w) if w.len() == n => w.clone(),
        _ => Vector::zeros(n),
    };
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut res = f64::INFINITY;
    let mut iters = 0;
    while iters < spec.max_inner {
        let grad = spec.op.adjoint_apply(&spec.op.apply(&y).sub(&spec.b)).scale(spec.tau);
        let v = y.add_scaled(-step, &grad);
        let x_new = Vector::from_fn(n, |k| prox_pow_unchecked(v[k], step, q));
        iters += 1;
        res = x_new.sub(&y).norm() / x_new.norm().max(1.0);
        if res <= spec.tol {
            x = x_new;
            break;
        }
        let restart = y.sub(&x_new).dot(&x_new.sub(&x)) > 0.0;
        let t_new = if restart {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
        };
        let beta = if restart { 0.0 } else { (t - 1.0) / t_new };
        y = x_new.add_scaled(beta, &x_new.sub(&x));
        x = x_new;
        t = t_new;
    }
    (
        x,
        InnerDiagnostics {
            method: "apg",
            iterations: iters,
            optimality: res,
            converged: res <= spec.tol,
        },
    )
}

/// Forward differences with Neumann boundary: the difference across the last
/// column (resp. row) is zero. Returns the two channels (along columns,
/// along rows); for one-row grids the second channel is identically zero.
pub(crate) fn tv_grad(grid: GridShape, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nr, nc) = (grid.rows, grid.cols);
    let mut dx = vec![0.0; nr * nc];
    let mut dy = vec![0.0; nr * nc];
    for i in 0..nr {
        for j in 0..nc {
            let k = i * nc + j;
            if j + 1 < nc {
                dx[k] = u[k + 1] - u[k];
            }
            if i + 1 < nr {
                dy[k] = u[k + nc] - u[k];
            }
        }
    }
    (dx, dy)
}

/// Exact transpose of `tv_grad` (negative discrete divergence).
pub(crate) fn tv_grad_adjoint(grid: GridShape, zx: &[f64], zy: &[f64]) -> Vec<f64> {
    let (nr, nc) = (grid.rows, grid.cols);
    let mut out = vec![0.0; nr * nc];
    for i in 0..nr {
        for j in 0..nc {
            let k = i * nc + j;
            if j + 1 < nc {
                out[k + 1] += zx[k];
                out[k] -= zx[k];
            }
            if i + 1 < nr {
                out[k + nc] += zy[k];
                out[k] -= zy[k];
            }
        }
    }
    out
}

/// Squared norm bound for the discrete gradient: 4 on signals, 8 on grids.
fn tv_grad_norm_sq(grid: GridShape) -> f64 {
    if grid.is_line() {
        4.0
    } else {
        8.0
    }
}

/// Primal-dual iteration on
/// `min_u max_{y,z} <K u, y> - F1*(y) + <D u, z> - F2*(z)`
/// where `F1 = (tau/2)||. - b||^2` and `F2` is the TV norm of the gradient
/// image. Stopped on a KKT surrogate: stationarity residual of
/// `tau K*(Ku - b) + D* z` plus the complementarity defect `TV(u) - <z, Du>`.
fn solve_tv_pdhg(
    grid: GridShape,
    flavor: TvFlavor,
    spec: &SubproblemSpec,
    warm: &mut WarmStart,
) -> (Vector, InnerDiagnostics) {
    let n = grid.len();
    let m = spec.op.dim_out();
    let knorm = spec.op.norm_est();
    let l_sq = knorm * knorm + tv_grad_norm_sq(grid);
    let step = 0.99 / l_sq.sqrt();
    let (sigma, s) = (step, step);

    let (mut u, mut y, mut zx, mut zy) = match (&warm.u, &warm.tv) {
        (Some(u0), Some(d)) if u0.len() == n && d.y.len() == m => {
            (u0.clone(), d.y.clone(), d.zx.clone(), d.zy.clone())
        }
        (Some(u0), _) if u0.len() == n => {
            (u0.clone(), Vector::zeros(m), vec![0.0; n], vec![0.0; n])
        }
        _ => (
            Vector::zeros(n),
            Vector::zeros(m),
            vec![0.0; n],
            vec![0.0; n],
        ),
    };
    let mut u_bar = u.clone();
    let scale_stat = 1.0 + spec.tau * spec.op.adjoint_apply(&spec.b).norm();
    let tv_pen = Penalty::tv(grid, flavor);

    let mut iters = 0;
    let mut measure = f64::INFINITY;
    while iters < spec.max_inner {
        // Dual ascent in y (quadratic conjugate is a scaled shift) ...
        let ky = spec.op.apply(&u_bar);
        for k in 0..m {
            let w = y.as_slice()[k] + sigma * ky[k] - sigma * spec.b[k];
            y.as_mut_slice()[k] = w / (1.0 + sigma / spec.tau);
        }
        // ... and in z (projection onto the dual ball of the TV norm).
        let (dx, dy) = tv_grad(grid, u_bar.as_slice());
        match flavor {
            TvFlavor::Anisotropic => {
                for k in 0..n {
                    zx[k] = (zx[k] + sigma * dx[k]).clamp(-1.0, 1.0);
                    zy[k] = (zy[k] + sigma * dy[k]).clamp(-1.0, 1.0);
                }
            }
            TvFlavor::Isotropic => {
                for k in 0..n {
                    let ax = zx[k] + sigma * dx[k];
                    let ay = zy[k] + sigma * dy[k];
                    let r = (ax * ax + ay * ay).sqrt().max(1.0);
                    zx[k] = ax / r;
                    zy[k] = ay / r;
                }
            }
        }
        // Primal descent and over-relaxation.
        let mut drift = spec.op.adjoint_apply(&y);
        drift.add_scaled_mut(1.0, &Vector::new(tv_grad_adjoint(grid, &zx, &zy)));
        let u_new = u.add_scaled(-s, &drift);
        u_bar = u_new.add_scaled(1.0, &u_new.sub(&u));
        u = u_new;
        iters += 1;

        if iters % 20 == 0 || iters == spec.max_inner {
            let resid = spec.op.apply(&u).sub(&spec.b);
            let mut stat = spec.op.adjoint_apply(&resid).scale(spec.tau);
            stat.add_scaled_mut(1.0, &Vector::new(tv_grad_adjoint(grid, &zx, &zy)));
            let (dxu, dyu) = tv_grad(grid, u.as_slice());
            let pairing: f64 = zx
                .iter()
                .zip(&dxu)
                .chain(zy.iter().zip(&dyu))
                .map(|(a, b)| a * b)
                .sum();
            let tv_u = tv_pen.eval(&u);
            let comp = (tv_u - pairing).max(0.0) / (1.0 + tv_u);
            measure = stat.norm() / scale_stat + comp;
            if measure <= spec.tol {
                break;
            }
        }
    }
    warm.tv = Some(TvDualState { y, zx, zy });
    (
        u,
        InnerDiagnostics {
            method: "pdhg",
            iterations: iters,
            optimality: measure,
            converged: measure <= spec.tol,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use crate::linop::DenseMatrix;

    #[test]
    fn lq_eval_matches_manual_sum() {
        let pen = Penalty::lq(1.5).unwrap();
        let u = Vector::new(vec![2.0, -1.0, 0.0]);
        let expect = 2.0_f64.powf(1.5) + 1.0;
        assert!((pen.eval(&u) - expect).abs() <= 1e-14);
        assert!(Penalty::lq(0.9).is_err());
        assert!(Penalty::lq(2.1).is_err());
    }

    #[test]
    fn quadratic_eval_is_half_squared_seminorm() {
        let l = LinearOperator::diagonal(vec![2.0, 1.0]);
        let pen = Penalty::quadratic(l);
        let u = Vector::new(vec![1.0, 3.0]);
        assert!((pen.eval(&u) - 0.5 * (4.0 + 9.0)).abs() <= 1e-14);
    }

    // Numeric sup oracle for the 1-D conjugate of |t|^q.
    fn conj_1d_oracle(xi: f64, q: f64) -> f64 {
        let f = |t: f64| xi * t - t.abs().powf(q);
        // The maximizer has the sign of xi and magnitude below |xi|^(1/(q-1)) + 1.
        let hi = xi.abs().powf(1.0 / (q - 1.0)) + 1.0;
        let (mut a, mut b) = (-hi, hi);
        for _ in 0..300 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if f(m1) < f(m2) {
                a = m1;
            } else {
                b = m2;
            }
        }
        f(0.5 * (a + b))
    }

    #[test]
    fn lq_conjugate_matches_per_coordinate_sup() {
        for &q in &[1.3, 1.5, 1.7, 2.0] {
            let pen = Penalty::lq(q).unwrap();
            for &xi in &[0.0, 0.4, -1.2, 3.0] {
                let got = pen
                    .conjugate_eval(&Vector::new(vec![xi]))
                    .finite()
                    .unwrap();
                let want = conj_1d_oracle(xi, q);
                assert!(
                    (got - want).abs() <= 1e-9 * (1.0 + want.abs()),
                    "q={q} xi={xi}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn l2_conjugate_is_quarter_norm() {
        let pen = Penalty::lq(2.0).unwrap();
        let v = pen.conjugate_eval(&Vector::new(vec![2.0, 0.0]));
        assert_eq!(v, ExtReal::Finite(1.0));
    }

    #[test]
    fn l1_conjugate_is_ball_indicator() {
        let pen = Penalty::lq(1.0).unwrap();
        assert_eq!(
            pen.conjugate_eval(&Vector::new(vec![0.5, -1.0])),
            ExtReal::Finite(0.0)
        );
        assert_eq!(
            pen.conjugate_eval(&Vector::new(vec![1.2, 0.0])),
            ExtReal::PosInf
        );
    }

    #[test]
    fn tv_conjugate_unavailable() {
        let pen = Penalty::tv(GridShape::line(4), TvFlavor::Anisotropic);
        assert_eq!(
            pen.conjugate_eval(&Vector::zeros(4)),
            ExtReal::Unavailable
        );
    }

    #[test]
    fn tv_eval_matches_double_loop_oracle() {
        let grid = GridShape::new(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u: Vec<f64> = (0..16).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut aniso = 0.0;
        let mut iso = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let dx = if j + 1 < 4 { u[i * 4 + j + 1] - u[i * 4 + j] } else { 0.0 };
                let dy = if i + 1 < 4 { u[(i + 1) * 4 + j] - u[i * 4 + j] } else { 0.0 };
                aniso += dx.abs() + dy.abs();
                iso += (dx * dx + dy * dy).sqrt();
            }
        }
        let v = Vector::new(u);
        let pa = Penalty::tv(grid, TvFlavor::Anisotropic);
        let pi = Penalty::tv(grid, TvFlavor::Isotropic);
        assert!((pa.eval(&v) - aniso).abs() <= 1e-12);
        assert!((pi.eval(&v) - iso).abs() <= 1e-12);
    }

    #[test]
    fn tv_of_staircase_is_total_jump_height() {
        let pen = Penalty::tv(GridShape::line(4), TvFlavor::Anisotropic);
        let u = Vector::new(vec![0.0, 0.0, 1.0, 1.0]);
        assert!((pen.eval(&u) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn tv_gradient_pair_is_adjoint() {
        let grid = GridShape::new(5, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let u: Vec<f64> = (0..35).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let zx: Vec<f64> = (0..35).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let zy: Vec<f64> = (0..35).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (dx, dy) = tv_grad(grid, &u);
            let dtz = tv_grad_adjoint(grid, &zx, &zy);
            let lhs: f64 = dx.iter().zip(&zx).chain(dy.iter().zip(&zy)).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(&dtz).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn prox_soft_threshold_and_scaling() {
        assert_eq!(prox_scalar_power(3.0, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(prox_scalar_power(-0.5, 1.0, 1.0).unwrap(), 0.0);
        let v = prox_scalar_power(3.0, 0.5, 2.0).unwrap();
        assert!((v - 1.5).abs() <= 1e-15);
        assert!(prox_scalar_power(1.0, 1.0, 2.5).is_err());
        assert!(prox_scalar_power(1.0, -0.1, 1.5).is_err());
    }

    #[test]
    fn prox_power_three_halves_known_value() {
        // x + 1.5 sqrt(x) = 1 has the root x = 1/4.
        let v = prox_scalar_power(1.0, 1.0, 1.5).unwrap();
        assert!((v - 0.25).abs() <= 1e-12, "got {v}");
    }

    #[test]
    fn prox_satisfies_stationarity() {
        for &q in &[1.2, 1.5, 1.8] {
            for &z in &[0.3, 1.0, -4.0, 7.5] {
                for &lam in &[0.1, 1.0, 10.0] {
                    let x = prox_scalar_power(z, lam, q).unwrap();
                    let g = x + lam * q * x.signum() * x.abs().powf(q - 1.0) - z;
                    assert!(
                        g.abs() <= 1e-11 * z.abs().max(1.0),
                        "q={q} z={z} lam={lam}: residual {g:.2e}"
                    );
                    assert_eq!(x.signum(), z.signum());
                }
            }
        }
    }

    #[test]
    fn bregman_quadratic_identity_is_half_distance() {
        let pen = Penalty::quadratic_identity(2);
        let u = Vector::new(vec![1.0, 0.0]);
        let v = Vector::new(vec![0.0, 2.0]);
        let d = pen.bregman(&v, &u, &u).unwrap();
        assert!((d - 0.5 * 5.0).abs() <= 1e-14);
    }

    #[test]
    fn bregman_rejects_non_subgradient() {
        let pen = Penalty::lq(1.0).unwrap();
        let u = Vector::new(vec![1.0, 0.0]);
        let v = Vector::new(vec![2.0, 0.0]);
        let fake = Vector::new(vec![2.0, 0.0]);
        assert!(matches!(
            pen.bregman(&v, &u, &fake),
            Err(AlmregError::InvalidSubgradient { .. })
        ));
    }

    #[test]
    fn fenchel_gap_zero_for_true_subgradients() {
        let pen = Penalty::lq(1.5).unwrap();
        let u = Vector::new(vec![0.7, -2.0, 0.0]);
        let xi = pen.gradient(&u).unwrap();
        let gap = pen.fenchel_gap(&u, &xi).unwrap();
        assert!(gap.abs() <= 1e-12, "gap {gap:.2e}");

        let pen1 = Penalty::lq(1.0).unwrap();
        let xi1 = Vector::new(vec![1.0, -0.3]);
        let u1 = Vector::new(vec![2.0, 0.0]);
        let gap1 = pen1.fenchel_gap(&u1, &xi1).unwrap();
        assert!(gap1.abs() <= 1e-15);
        // Slightly outside the dual ball: finite, small gap, not infinity.
        let xi1b = Vector::new(vec![1.0 + 1e-9, -0.3]);
        let gap1b = pen1.fenchel_gap(&u1, &xi1b).unwrap();
        assert!(gap1b > 0.0 && gap1b <= 1e-8);
    }

    fn gaussian_op(rows: usize, cols: usize, seed: u64) -> LinearOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        LinearOperator::dense(DenseMatrix::new(rows, cols, data).unwrap())
    }

    #[test]
    fn quadratic_subproblem_matches_dense_solve() {
        // Oracle: Gauss elimination on the explicit 3x3 normal equations.
        let op = gaussian_op(4, 3, 12);
        let b = Vector::new(vec![1.0, -2.0, 0.5, 3.0]);
        let tau = 2.5;
        let pen = Penalty::quadratic_identity(3);
        let spec = SubproblemSpec {
            op: &op,
            b: b.clone(),
            tau,
            tol: 1e-12,
            max_inner: 500,
        };
        let (u, diag) = solve_subproblem(&pen, &spec, &mut WarmStart::default()).unwrap();
        assert!(diag.converged);

        let mut a = [[0.0f64; 4]; 3];
        for i in 0..3 {
            let ei = Vector::from_fn(3, |k| if k == i { 1.0 } else { 0.0 });
            let col = op.gram_apply(&ei).scale(tau);
            for r in 0..3 {
                a[r][i] = col[r];
            }
            a[i][i] += 1.0;
        }
        let rhs = op.adjoint_apply(&b).scale(tau);
        for r in 0..3 {
            a[r][3] = rhs[r];
        }
        for c in 0..3 {
            let piv = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..3 {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..4 {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        for i in 0..3 {
            let want = a[i][3] / a[i][i];
            assert!((u[i] - want).abs() <= 1e-9, "component {i}: {} vs {want}", u[i]);
        }
    }

    #[test]
    fn l1_subproblem_with_identity_is_soft_threshold() {
        let op = LinearOperator::identity(3);
        let b = Vector::new(vec![3.0, 0.1, -2.0]);
        let pen = Penalty::lq(1.0).unwrap();
        let spec = SubproblemSpec {
            op: &op,
            b,
            tau: 1.0,
            tol: 1e-12,
            max_inner: 100,
        };
        let (u, _) = solve_subproblem(&pen, &spec, &mut WarmStart::default()).unwrap();
        assert!((u[0] - 2.0).abs() <= 1e-10);
        assert!(u[1].abs() <= 1e-12);
        assert!((u[2] + 1.0).abs() <= 1e-10);
    }

    #[test]
    fn lq_subproblem_satisfies_stationarity() {
        let op = gaussian_op(5, 8, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Vector::randn(5, &mut rng);
        let pen = Penalty::lq(1.5).unwrap();
        let tau = 1.7;
        let spec = SubproblemSpec {
            op: &op,
            b: b.clone(),
            tau,
            tol: 1e-10,
            max_inner: 50_000,
        };
        let (u, diag) = solve_subproblem(&pen, &spec, &mut WarmStart::default()).unwrap();
        assert!(diag.converged, "apg stalled at {:.2e}", diag.optimality);
        let grad_f = op.adjoint_apply(&op.apply(&u).sub(&b)).scale(tau);
        let grad_j = pen.gradient(&u).unwrap();
        let station = grad_f.add(&grad_j).norm();
        assert!(station <= 1e-7, "stationarity residual {station:.2e}");
    }

    #[test]
    fn tv_subproblem_large_tau_reproduces_data() {
        let grid = GridShape::new(8, 8);
        let op = LinearOperator::identity(64);
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let b = Vector::randn(64, &mut rng);
        let pen = Penalty::tv(grid, TvFlavor::Anisotropic);
        let spec = SubproblemSpec {
            op: &op,
            b: b.clone(),
            tau: 1e6,
            tol: 1e-8,
            max_inner: 200_000,
        };
        let (u, _) = solve_subproblem(&pen, &spec, &mut WarmStart::default()).unwrap();
        let dev = u.sub(&b).norm_linf();
        assert!(dev <= 1e-3, "penalty failed to wash out: {dev:.2e}");
    }

    #[test]
    fn tv_subproblem_denoises_staircase() {
        // ROF on a clean staircase shrinks the jump but keeps monotonicity,
        // and the KKT surrogate certifies the solve.
        let grid = GridShape::line(16);
        let op = LinearOperator::identity(16);
        let b = Vector::from_fn(16, |k| if k < 8 { 0.0 } else { 1.0 });
        let pen = Penalty::tv(grid, TvFlavor::Anisotropic);
        let spec = SubproblemSpec {
            op: &op,
            b: b.clone(),
            tau: 4.0,
            tol: 1e-7,
            max_inner: 200_000,
        };
        let (u, diag) = solve_subproblem(&pen, &spec, &mut WarmStart::default()).unwrap();
        assert!(diag.converged, "pdhg stalled at {:.2e}", diag.optimality);
        // Exact minimizer: move each flat level toward the data mean by
        // 1/(tau * run length) = 1/32.
        for k in 0..16 {
            let want = if k < 8 { 1.0 / 32.0 } else { 1.0 - 1.0 / 32.0 };
            assert!((u[k] - want).abs() <= 1e-4, "u[{k}] = {}", u[k]);
        }
    }

    #[test]
    fn warm_start_does_not_change_the_answer() {
        let op = gaussian_op(6, 10, 55);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = Vector::randn(6, &mut rng);
        let pen = Penalty::lq(1.0).unwrap();
        let spec = SubproblemSpec {
            op: &op,
            b: b.clone(),
            tau: 3.0,
            tol: 1e-10,
            max_inner: 50_000,
        };
        let (cold, _) = solve_subproblem(&pen, &spec, &mut WarmStart::default()).unwrap();
        let mut warm = WarmStart {
            u: Some(Vector::randn(10, &mut rng)),
            tv: None,
        };
        let (warm_u, _) = solve_subproblem(&pen, &spec, &mut warm).unwrap();
        assert!(cold.sub(&warm_u).norm() <= 1e-7);
    }
}
