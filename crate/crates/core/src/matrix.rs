//! Dense nonnegative-matrix algebra: stochasticity, scrambling, the
//! ergodicity coefficient, per-step update matrices and flow products.

use serde::{Deserialize, Serialize};

use crate::dynamics::CommunicationWeight;
use crate::error::{Error, Result};
use crate::graph::Digraph;

/// Row-sum tolerance for a freshly built update matrix.
pub const FRESH_STOCHASTIC_TOL: f64 = 1e-12;
/// Row-sum tolerance for products of many update matrices.
pub const PRODUCT_STOCHASTIC_TOL: f64 = 1e-10;

/// Dense row-major `n x n` matrix with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSquare")]
pub struct SquareMatrix {
    n: usize,
    entries: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSquare {
    n: usize,
    entries: Vec<f64>,
}

impl TryFrom<RawSquare> for SquareMatrix {
    type Error = Error;

    fn try_from(raw: RawSquare) -> Result<Self> {
        SquareMatrix::from_row_major(raw.n, raw.entries)
    }
}

impl SquareMatrix {
    pub fn from_row_major(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::DimensionMismatch("matrix order must be positive".into()));
        }
        if n.checked_mul(n) != Some(entries.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} entries cannot form a {n}x{n} matrix",
                entries.len()
            )));
        }
        if let Some(k) = entries.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "matrix entry ({}, {}) is not finite",
                k / n,
                k % n
            )));
        }
        Ok(SquareMatrix { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "row of length {} in a {n}-row matrix",
                r.len()
            )));
        }
        SquareMatrix::from_row_major(n, rows.concat())
    }

    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            entries: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    /// Every entry equal to `1/n`.
    pub fn uniform(n: usize) -> Self {
        SquareMatrix {
            n,
            entries: vec![1.0 / n as f64; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row_sums(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.chunks_exact(self.n).map(|r| r.iter().sum())
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest `|row sum - 1|`.
    pub fn max_row_sum_defect(&self) -> f64 {
        self.row_sums().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &SquareMatrix) -> Result<SquareMatrix> {
        if self.n != rhs.n {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {0}x{0} by {1}x{1}",
                self.n, rhs.n
            )));
        }
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let out_row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(SquareMatrix { n, entries: out })
    }

    /// `self * rows` for an `n x d` block.
    pub fn apply(&self, rows: &Points) -> Result<Points> {
        if rows.n() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "cannot apply a {0}x{0} matrix to {1} rows",
                self.n,
                rows.n()
            )));
        }
        let d = rows.d();
        let mut out = Points::zeros(rows.n(), d);
        for i in 0..self.n {
            let o = out.row_mut(i);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (ov, rv) in o.iter_mut().zip(rows.row(k)) {
                    *ov += a * rv;
                }
            }
        }
        Ok(out)
    }

    fn ensure_nonnegative(&self) -> Result<()> {
        match self.entries.iter().position(|&x| x < 0.0) {
            Some(k) => Err(Error::NotNonnegative {
                row: k / self.n,
                col: k % self.n,
                value: self.entries[k],
            }),
            None => Ok(()),
        }
    }
}

/// `N x d` block of row vectors (positions, velocities, or perturbations).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Points {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for Points {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Points::from_rows(&rows)
    }
}

impl From<Points> for Vec<Vec<f64>> {
    fn from(p: Points) -> Self {
        p.rows().map(<[f64]>::to_vec).collect()
    }
}

impl Points {
    pub fn zeros(n: usize, d: usize) -> Self {
        Points {
            n,
            d,
            data: vec![0.0; n * d],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("need at least one row".into()));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::DimensionMismatch("rows must have positive dimension".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "row {} has dimension {}, expected {d}",
                i + 1,
                rows[i].len()
            )));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("coordinates must be finite".into()));
        }
        Ok(Points {
            n,
            d,
            data: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Euclidean distance between rows `i` and `j`.
    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest pairwise Euclidean distance between rows; 0 for a single row.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                best = best.max(self.distance(i, j));
            }
        }
        best
    }

    /// Row average.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.n as f64);
        m
    }

    pub fn max_abs_diff(&self, other: &Points) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self + scale * other`, in place.
    pub fn add_scaled(&mut self, scale: f64, other: &Points) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }
}

/// Nonnegative entries and every row sum within `tol` of one.
pub fn is_stochastic(a: &SquareMatrix, tol: f64) -> bool {
    a.entries.iter().all(|&x| x >= -tol) && a.row_sums().all(|s| (s - 1.0).abs() <= tol)
}

/// `mu(A) = min_{i,j} sum_k min(a_ik, a_jk)`; `a_11` for a 1x1 matrix.
pub fn ergodicity_coefficient(a: &SquareMatrix) -> Result<f64> {
    a.ensure_nonnegative()?;
    let n = a.n;
    if n == 1 {
        return Ok(a.entries[0]);
    }
    let mut mu = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let overlap: f64 = a
                .row(i)
                .iter()
                .zip(a.row(j))
                .map(|(x, y)| x.min(*y))
                .sum();
            mu = mu.min(overlap);
        }
    }
    Ok(mu)
}

/// Every pair of rows shares a column where both are positive.
pub fn is_scrambling(a: &SquareMatrix) -> Result<bool> {
    a.ensure_nonnegative()?;
    let n = a.n;
    let scrambling = (0..n).all(|i| {
        (i + 1..n).all(|j| a.row(i).iter().zip(a.row(j)).any(|(x, y)| *x > 0.0 && *y > 0.0))
    });
    Ok(scrambling && (n > 1 || a.entries[0] > 0.0))
}

/// Checks `0 < h * kappa < 1`.
pub fn check_stability(h: f64, kappa: f64) -> Result<()> {
    let hk = h * kappa;
    if hk > 0.0 && hk < 1.0 && hk.is_finite() {
        Ok(())
    } else {
        Err(Error::StabilityViolated(hk))
    }
}

/// `Id - (h/N) L` with `L = D - A`, `a_ij = chi_ij phi(|x_i - x_j|)` and
/// `d_i = sum_j a_ij`. The self-loop terms cancel, so the diagonal is
/// `1 - sum_{j != i} m_ij` and each row sums to one.
pub fn update_matrix(
    positions: &Points,
    g: &Digraph,
    h: f64,
    w: &CommunicationWeight,
) -> Result<SquareMatrix> {
    check_stability(h, w.kappa())?;
    let n = positions.n();
    if g.n_vertices() != n {
        return Err(Error::DimensionMismatch(format!(
            "digraph has {} vertices but the configuration has {n} agents",
            g.n_vertices()
        )));
    }
    let scale = h / n as f64;
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i && g.chi(i, j) {
                let a = scale * w.phi(positions.distance(i, j));
                m.set(i, j, a);
                off += a;
            }
        }
        m.set(i, i, 1.0 - off);
    }
    Ok(m)
}

/// Ordered product of per-step matrices `[M_{s0}, M_{s0+1}, ..., M_{s1-1}]`,
/// returned as `M_{s1-1} ... M_{s0}` so that it maps `V[s0]` to `V[s1]`.
pub fn flow_product(ms: &[SquareMatrix]) -> Result<SquareMatrix> {
    let first = ms.first().ok_or(Error::EmptyWindow)?;
    let mut acc = FlowAccumulator::new(first.n);
    for m in ms {
        acc.push(m)?;
    }
    Ok(acc.into_matrix())
}

/// Running flow matrix; starts at the identity (`Phi[s, s] = Id`) and
/// left-multiplies each new step matrix.
#[derive(Clone, Debug)]
pub struct FlowAccumulator {
    phi: SquareMatrix,
    steps: usize,
}

impl FlowAccumulator {
    pub fn new(n: usize) -> Self {
        FlowAccumulator {
            phi: SquareMatrix::identity(n),
            steps: 0,
        }
    }

    pub fn push(&mut self, m: &SquareMatrix) -> Result<()> {
        self.phi = m.matmul(&self.phi)?;
        self.steps += 1;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.phi
    }

    pub fn into_matrix(self) -> SquareMatrix {
        self.phi
    }

    pub fn reset(&mut self) {
        self.phi = SquareMatrix::identity(self.phi.n);
        self.steps = 0;
    }
}

/// Both sides of the contraction inequality for `W = A Z + B`:
/// `(D(W), (1 - mu(A)) D(Z) + sqrt(2) |B|_F)`.
pub fn contraction_check(a: &SquareMatrix, z: &Points, b: &Points) -> Result<(f64, f64)> {
    if !is_stochastic(a, PRODUCT_STOCHASTIC_TOL) {
        let (row, sum) = a
            .row_sums()
            .enumerate()
            .max_by(|x, y| (x.1 - 1.0).abs().total_cmp(&(y.1 - 1.0).abs()))
            .expect("matrix has rows");
        return Err(Error::NotStochastic { row, sum });
    }
    if z.n() != b.n() || z.d() != b.d() {
        return Err(Error::DimensionMismatch("Z and B must have the same shape".into()));
    }
    let mut w = a.apply(z)?;
    w.add_scaled(1.0, b);
    let mu = ergodicity_coefficient(a)?;
    Ok((
        w.diameter(),
        (1.0 - mu) * z.diameter() + std::f64::consts::SQRT_2 * b.frobenius_norm(),
    ))
}
