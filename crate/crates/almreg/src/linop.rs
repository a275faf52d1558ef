//! Matrix-free linear operators between finite-dimensional spaces.
//!
//! Operators are closed under composition and every kind carries an exact
//! adjoint: `apply` and `adjoint_apply` of the same operator are transposes
//! of one another by construction (gather/scatter over the same index map),
//! so `adjoint_check` holds to rounding error, not discretization error.

use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{AlmregError, Result};

/// Dense vector with finite entries. The element type is fixed to `f64`;
/// all norms are Euclidean unless the method name says otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl serde::Serialize for Vector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for Vector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<f64>::deserialize(d)?;
        if entries.is_empty() {
            return Err(serde::de::Error::custom("vector must have positive length"));
        }
        if !entries.iter().all(|x| x.is_finite()) {
            return Err(serde::de::Error::custom("vector entries must be finite"));
        }
        Ok(Vector(entries))
    }
}

impl Vector {
    /// Wraps entries after checking each one is finite.
    ///
    /// Panics on NaN or infinite entries and on empty input; both indicate
    /// a bug in the caller, not a recoverable condition.
    pub fn new(entries: Vec<f64>) -> Self {
        assert!(!entries.is_empty(), "Vector must have positive length");
        assert!(
            entries.iter().all(|x| x.is_finite()),
            "Vector entries must be finite"
        );
        Vector(entries)
    }

    fn from_raw(entries: Vec<f64>) -> Self {
        debug_assert!(entries.iter().all(|x| x.is_finite()));
        Vector(entries)
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n > 0);
        Vector(vec![0.0; n])
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        Vector::new((0..n).map(f).collect())
    }

    /// Standard normal entries from a seeded generator.
    pub fn randn(n: usize, rng: &mut ChaCha8Rng) -> Self {
        Vector::new((0..n).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn norm_linf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `(sum |x_k|^p)^(1/p)` for `p >= 1`.
    pub fn norm_lp(&self, p: f64) -> f64 {
        assert!(p >= 1.0, "norm_lp requires p >= 1");
        self.0.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }

    pub fn scale(&self, a: f64) -> Vector {
        Vector::from_raw(self.0.iter().map(|x| a * x).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "add: length mismatch");
        Vector::from_raw(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "sub: length mismatch");
        Vector::from_raw(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "add_scaled: length mismatch");
        Vector::from_raw(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| x + a * y)
                .collect(),
        )
    }

    /// In-place `self += a * other`; used by the inner solver loops.
    pub fn add_scaled_mut(&mut self, a: f64, other: &Vector) {
        assert_eq!(self.len(), other.len(), "add_scaled_mut: length mismatch");
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += a * y;
        }
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Rectangular grid that gives a flat vector a 2-D reading (row major).
/// A signal is a grid with a single row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        GridShape { rows, cols }
    }

    /// 1-D signal of length `n`.
    pub fn line(n: usize) -> Self {
        GridShape::new(1, n)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_line(&self) -> bool {
        self.rows == 1 || self.cols == 1
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AlmregError::Dimension {
                context: "DenseMatrix::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(AlmregError::Domain(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Reads a header-free, comma-separated, row-major matrix.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entries: Vec<f64> = line
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|e| {
                        AlmregError::Csv(format!("line {}: {e}", lineno + 1))
                    })
                })
                .collect::<Result<_>>()?;
            match cols {
                None => cols = Some(entries.len()),
                Some(c) if c != entries.len() => {
                    return Err(AlmregError::Csv(format!(
                        "line {}: expected {} columns, got {}",
                        lineno + 1,
                        c,
                        entries.len()
                    )));
                }
                _ => {}
            }
            data.extend(entries);
            rows += 1;
        }
        if rows == 0 {
            return Err(AlmregError::Csv("empty matrix".into()));
        }
        DenseMatrix::new(rows, cols.unwrap(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    fn matvec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            out[i] = row.iter().zip(u).map(|(a, b)| a * b).sum();
        }
        out
    }

    fn matvec_t(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * w[i];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum OpKind {
    Identity,
    Dense(DenseMatrix),
    Diagonal(Vec<f64>),
    Convolution { kernel: DenseMatrix, grid: GridShape },
    MaskedSampling { mask: Vec<bool> },
    Composition { outer: Box<LinearOperator>, inner: Box<LinearOperator> },
}

/// Linear map together with its exact adjoint.
///
/// `apply` and `adjoint_apply` panic on dimension mismatch (caller bug);
/// constructors return errors for inconsistent configuration.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    dim_in: usize,
    dim_out: usize,
    kind: OpKind,
    norm_cache: OnceLock<f64>,
}

/// Iteration count used when an operator estimates its own norm lazily.
const NORM_EST_ITERS: usize = 300;
/// Fixed seed for the lazy self-estimate, so repeated runs agree bitwise.
const NORM_EST_SEED: u64 = 0x5eed;

impl LinearOperator {
    fn make(dim_in: usize, dim_out: usize, kind: OpKind) -> Self {
        LinearOperator {
            dim_in,
            dim_out,
            kind,
            norm_cache: OnceLock::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0);
        Self::make(n, n, OpKind::Identity)
    }

    pub fn dense(m: DenseMatrix) -> Self {
        let (r, c) = (m.rows, m.cols);
        Self::make(c, r, OpKind::Dense(m))
    }

    pub fn diagonal(d: Vec<f64>) -> Self {
        assert!(!d.is_empty() && d.iter().all(|x| x.is_finite()));
        let n = d.len();
        Self::make(n, n, OpKind::Diagonal(d))
    }

    /// 2-D convolution on `grid` with symmetric (whole-cell reflect) boundary
    /// extension. The kernel must have odd extents so the stencil is centred.
    /// A signal kernel is a 1-row matrix on a 1-row grid.
    pub fn convolution(kernel: DenseMatrix, grid: GridShape) -> Result<Self> {
        if kernel.rows % 2 == 0 || kernel.cols % 2 == 0 {
            return Err(AlmregError::Config(
                "convolution kernel extents must be odd".into(),
            ));
        }
        let n = grid.len();
        Ok(Self::make(n, n, OpKind::Convolution { kernel, grid }))
    }

    /// Keeps the entries where `mask` is true, in index order.
    pub fn masked_sampling(mask: Vec<bool>) -> Result<Self> {
        let kept = mask.iter().filter(|&&b| b).count();
        if kept == 0 {
            return Err(AlmregError::Config(
                "sampling mask must keep at least one entry".into(),
            ));
        }
        let n = mask.len();
        Ok(Self::make(n, kept, OpKind::MaskedSampling { mask }))
    }

    /// `outer . inner` (apply `inner` first).
    pub fn compose(outer: LinearOperator, inner: LinearOperator) -> Result<Self> {
        if inner.dim_out != outer.dim_in {
            return Err(AlmregError::Dimension {
                context: "compose",
                expected: outer.dim_in,
                got: inner.dim_out,
            });
        }
        Ok(Self::make(
            inner.dim_in,
            outer.dim_out,
            OpKind::Composition {
                outer: Box::new(outer),
                inner: Box::new(inner),
            },
        ))
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, OpKind::Identity)
    }

    pub fn apply(&self, u: &Vector) -> Vector {
        assert_eq!(u.len(), self.dim_in, "apply: dimension mismatch");
        match &self.kind {
            OpKind::Identity => u.clone(),
            OpKind::Dense(m) => Vector::from_raw(m.matvec(u.as_slice())),
            OpKind::Diagonal(d) => Vector::from_raw(
                u.as_slice().iter().zip(d).map(|(x, s)| x * s).collect(),
            ),
            OpKind::Convolution { kernel, grid } => {
                Vector::from_raw(conv_gather(kernel, *grid, u.as_slice()))
            }
            OpKind::MaskedSampling { mask } => Vector::from_raw(
                u.as_slice()
                    .iter()
                    .zip(mask)
                    .filter(|(_, &keep)| keep)
                    .map(|(x, _)| *x)
                    .collect(),
            ),
            OpKind::Composition { outer, inner } => outer.apply(&inner.apply(u)),
        }
    }

    pub fn adjoint_apply(&self, w: &Vector) -> Vector {
        assert_eq!(w.len(), self.dim_out, "adjoint_apply: dimension mismatch");
        match &self.kind {
            OpKind::Identity => w.clone(),
            OpKind::Dense(m) => Vector::from_raw(m.matvec_t(w.as_slice())),
            OpKind::Diagonal(d) => Vector::from_raw(
                w.as_slice().iter().zip(d).map(|(x, s)| x * s).collect(),
            ),
            OpKind::Convolution { kernel, grid } => {
                Vector::from_raw(conv_scatter(kernel, *grid, w.as_slice()))
            }
            OpKind::MaskedSampling { mask } => {
                let mut out = vec![0.0; self.dim_in];
                let mut k = 0;
                for (i, &keep) in mask.iter().enumerate() {
                    if keep {
                        out[i] = w[k];
                        k += 1;
                    }
                }
                Vector::from_raw(out)
            }
            OpKind::Composition { outer, inner } => {
                inner.adjoint_apply(&outer.adjoint_apply(w))
            }
        }
    }

    /// `K*(K u)` in one call; the normal-equation solvers live on this.
    pub fn gram_apply(&self, u: &Vector) -> Vector {
        self.adjoint_apply(&self.apply(u))
    }

    /// Cached spectral-norm estimate with a fixed internal seed.
    pub fn norm_est(&self) -> f64 {
        *self
            .norm_cache
            .get_or_init(|| operator_norm_estimate(self, NORM_EST_SEED, NORM_EST_ITERS))
    }
}

fn reflect(mut i: isize, n: isize) -> isize {
    // Whole-cell symmetric extension: ..., u1, u0 | u0, u1, ..., u_{n-1} | u_{n-1}, ...
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i;
        }
    }
}

fn conv_gather(kernel: &DenseMatrix, grid: GridShape, u: &[f64]) -> Vec<f64> {
    let (nr, nc) = (grid.rows as isize, grid.cols as isize);
    let (cr, cc) = (kernel.rows as isize / 2, kernel.cols as isize / 2);
    let mut out = vec![0.0; u.len()];
    for i in 0..nr {
        for j in 0..nc {
            let mut acc = 0.0;
            for a in 0..kernel.rows as isize {
                for b in 0..kernel.cols as isize {
                    let si = reflect(i + a - cr, nr);
                    let sj = reflect(j + b - cc, nc);
                    acc += kernel.get(a as usize, b as usize) * u[(si * nc + sj) as usize];
                }
            }
            out[(i * nc + j) as usize] = acc;
        }
    }
    out
}

fn conv_scatter(kernel: &DenseMatrix, grid: GridShape, w: &[f64]) -> Vec<f64> {
    // Transpose of conv_gather: identical index arithmetic, reversed data flow.
    let (nr, nc) = (grid.rows as isize, grid.cols as isize);
    let (cr, cc) = (kernel.rows as isize / 2, kernel.cols as isize / 2);
    let mut out = vec![0.0; w.len()];
    for i in 0..nr {
        for j in 0..nc {
            let wij = w[(i * nc + j) as usize];
            for a in 0..kernel.rows as isize {
                for b in 0..kernel.cols as isize {
                    let si = reflect(i + a - cr, nr);
                    let sj = reflect(j + b - cc, nc);
                    out[(si * nc + sj) as usize] += kernel.get(a as usize, b as usize) * wij;
                }
            }
        }
    }
    out
}

/// Largest normalized duality mismatch `|<Ku,w> - <u,K*w>| / (|Ku||w| + eps)`
/// over `trials` seeded random pairs.
pub fn adjoint_check(op: &LinearOperator, seed: u64, trials: usize) -> f64 {
    adjoint_check_pair(
        |u| op.apply(u),
        |w| op.adjoint_apply(w),
        op.dim_in,
        op.dim_out,
        seed,
        trials,
    )
}

/// Same check for an arbitrary apply/adjoint pair; lets tests probe a
/// deliberately broken adjoint without constructing an invalid operator.
pub fn adjoint_check_pair(
    apply: impl Fn(&Vector) -> Vector,
    adjoint: impl Fn(&Vector) -> Vector,
    dim_in: usize,
    dim_out: usize,
    seed: u64,
    trials: usize,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let u = Vector::randn(dim_in, &mut rng);
        let w = Vector::randn(dim_out, &mut rng);
        let ku = apply(&u);
        let ktw = adjoint(&w);
        let lhs = ku.dot(&w);
        let rhs = u.dot(&ktw);
        let scale = ku.norm() * w.norm() + 1e-300;
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    worst
}

/// Power iteration on `K*K`: returns a lower estimate of the spectral norm
/// that is nondecreasing in `iters` for a fixed seed (Rayleigh-quotient
/// monotonicity) and can overshoot the true norm only by rounding error.
pub fn operator_norm_estimate(op: &LinearOperator, seed: u64, iters: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vector::randn(op.dim_in, &mut rng);
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    v = v.scale(1.0 / nv);
    for _ in 0..iters {
        let w = op.gram_apply(&v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        v = w.scale(1.0 / nw);
    }
    op.apply(&v).norm()
}
