//! Sparse matrices and the linear solvers behind every cell, Dirichlet and eigen solve.
//!
//! All operators assembled by this crate are (up to sign and a diagonal shift) row
//! diagonally dominant Z-matrices, so Gaussian elimination without pivoting is stable
//! and preserves the band. Periodic problems are reordered with [`interleaved_order`]
//! so the wraparound couplings stay close to the diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Coordinate-format accumulator; duplicate entries are summed.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 1.0);
        }
        t.build()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    /// `alpha * self + beta * I`.
    pub fn scaled_shift(&self, alpha: f64, beta: f64) -> CsrMatrix {
        let mut t = Triplets::with_capacity(self.n, self.nnz() + self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push(i, j, alpha * v);
            }
            if beta != 0.0 {
                t.push(i, i, beta);
            }
        }
        t.build()
    }

    /// Applies a closure to every stored entry.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.vals[k] = f(i, self.cols[k], self.vals[k]);
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = Triplets::with_capacity(self.n, self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push(j, i, v);
            }
        }
        t.build()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Lower and upper bandwidth of `P A Pᵀ` where `perm[new] = old`.
    pub fn bandwidths(&self, perm: Option<&[usize]>) -> (usize, usize) {
        let inv = perm.map(invert_permutation);
        let (mut kl, mut ku) = (0usize, 0usize);
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                let (pi, pj) = match &inv {
                    Some(inv) => (inv[i], inv[j]),
                    None => (i, j),
                };
                if pi > pj {
                    kl = kl.max(pi - pj);
                } else {
                    ku = ku.max(pj - pi);
                }
            }
        }
        (kl, ku)
    }
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// Ordering `0, n-1, 1, n-2, ...` that turns a cyclic chain into a band of width 2.
pub fn interleaved_order(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        order.push(lo);
        lo += 1;
        if lo < hi {
            hi -= 1;
            order.push(hi);
        }
    }
    order
}

/// Banded LU factorization without pivoting.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major band storage, `width = kl + ku + 1` entries per row.
    band: Vec<f64>,
    perm: Option<Vec<usize>>,
}

impl BandLu {
    pub fn storage(n: usize, kl: usize, ku: usize) -> usize {
        n * (kl + ku + 1)
    }

    pub fn factor(a: &CsrMatrix, perm: Option<&[usize]>) -> Result<Self> {
        let n = a.dim();
        let (kl, ku) = a.bandwidths(perm);
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let inv = perm.map(invert_permutation);
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (pi, pj) = match &inv {
                    Some(inv) => (inv[i], inv[j]),
                    None => (i, j),
                };
                band[pi * width + (pj + kl - pi)] += v;
            }
        }
        let mut scale = 0.0f64;
        for v in &band {
            scale = scale.max(v.abs());
        }
        let tiny = scale * 1e-14;
        for k in 0..n {
            let pivot = band[k * width + kl];
            if !(pivot.abs() > tiny) || !pivot.is_finite() {
                return Err(Error::Solver(format!(
                    "zero pivot {pivot:.3e} at row {k} during banded elimination"
                )));
            }
            let jmax = (k + ku).min(n - 1);
            let imax = (k + kl).min(n - 1);
            for i in k + 1..=imax {
                let ik = i * width + (k + kl - i);
                let lik = band[ik];
                if lik == 0.0 {
                    continue;
                }
                let l = lik / pivot;
                band[ik] = l;
                let (upper, lower) = band.split_at_mut(i * width);
                let krow = &upper[k * width..(k + 1) * width];
                let irow = &mut lower[..width];
                for j in k + 1..=jmax {
                    irow[j + kl - i] -= l * krow[j + kl - k];
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            band,
            perm: perm.map(|p| p.to_vec()),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let width = self.kl + self.ku + 1;
        let kl = self.kl;
        let mut y: Vec<f64> = match &self.perm {
            Some(p) => p.iter().map(|&old| b[old]).collect(),
            None => b.to_vec(),
        };
        for i in 0..n {
            let row = &self.band[i * width..(i + 1) * width];
            let mut acc = y[i];
            for j in i.saturating_sub(kl)..i {
                acc -= row[j + kl - i] * y[j];
            }
            y[i] = acc;
        }
        for i in (0..n).rev() {
            let row = &self.band[i * width..(i + 1) * width];
            let mut acc = y[i];
            for j in i + 1..=(i + self.ku).min(n - 1) {
                acc -= row[j + kl - i] * y[j];
            }
            y[i] = acc / row[kl];
        }
        match &self.perm {
            Some(p) => {
                let mut x = vec![0.0; n];
                for (new, &old) in p.iter().enumerate() {
                    x[old] = y[new];
                }
                x
            }
            None => y,
        }
    }
}

/// Incomplete LU with zero fill, used to precondition BiCGSTAB.
#[derive(Clone, Debug)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let mut lu = a.clone();
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.cols[k] == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::Solver(format!("ILU(0): missing diagonal in row {i}")));
            }
        }
        for i in 1..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for kk in start..end {
                let k = lu.cols[kk];
                if k >= i {
                    break;
                }
                let pivot = lu.vals[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(Error::Solver(format!("ILU(0): zero pivot at row {k}")));
                }
                let l = lu.vals[kk] / pivot;
                lu.vals[kk] = l;
                // a_ij -= l * u_kj for j > k present in row i
                let mut jj = kk + 1;
                for kj in diag_pos[k] + 1..lu.row_ptr[k + 1] {
                    let col = lu.cols[kj];
                    while jj < end && lu.cols[jj] < col {
                        jj += 1;
                    }
                    if jj < end && lu.cols[jj] == col {
                        lu.vals[jj] -= l * lu.vals[kj];
                    }
                }
            }
        }
        Ok(Self { lu, diag_pos })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.lu.n;
        for i in 0..n {
            let mut acc = r[i];
            for k in self.lu.row_ptr[i]..self.diag_pos[i] {
                acc -= self.lu.vals[k] * z[self.lu.cols[k]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for k in self.diag_pos[i] + 1..self.lu.row_ptr[i + 1] {
                acc -= self.lu.vals[k] * z[self.lu.cols[k]];
            }
            z[i] = acc / self.lu.vals[self.diag_pos[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB. Stops when `‖b − Ax‖₂ ≤ tol·‖b‖₂`.
pub fn bicgstab(
    a: &CsrMatrix,
    pre: &Ilu0,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = a.dim();
    let bnorm = norm2(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut r = a.matvec(&x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = norm2(&r);
    for _ in 0..max_iter {
        if res <= tol * bnorm {
            return Ok(x);
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.apply(&p, &mut phat);
        a.matvec_into(&phat, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            r[i] -= alpha * v[i];
        }
        if norm2(&r) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(x);
        }
        pre.apply(&r, &mut shat);
        a.matvec_into(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &r) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] -= omega * t[i];
        }
        res = norm2(&r);
        if omega == 0.0 {
            break;
        }
    }
    // recompute the true residual before giving up
    let ax = a.matvec(&x);
    let true_res = norm2(&ax.iter().zip(b).map(|(p, q)| q - p).collect::<Vec<_>>());
    if true_res <= tol * bnorm {
        Ok(x)
    } else {
        Err(Error::IterationLimit {
            iterations: max_iter,
            residual: true_res / bnorm,
        })
    }
}

/// Which linear solver backs an operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Banded factorization unless the band storage exceeds [`AUTO_BAND_LIMIT`].
    #[default]
    Auto,
    Banded,
    Iterative,
}

/// Largest band storage (in f64 entries, ~320 MB) that `Auto` still factorizes.
pub const AUTO_BAND_LIMIT: usize = 40_000_000;

/// A factorized (or preconditioned) square system ready for repeated solves.
#[derive(Clone, Debug)]
pub enum LinearSolver {
    Banded(BandLu),
    Iterative {
        matrix: CsrMatrix,
        ilu: Ilu0,
        tol: f64,
        max_iter: usize,
    },
}

impl LinearSolver {
    pub fn new(a: &CsrMatrix, perm: Option<&[usize]>, kind: SolverKind) -> Result<Self> {
        let banded = match kind {
            SolverKind::Banded => true,
            SolverKind::Iterative => false,
            SolverKind::Auto => {
                let (kl, ku) = a.bandwidths(perm);
                BandLu::storage(a.dim(), kl, ku) <= AUTO_BAND_LIMIT
            }
        };
        if banded {
            Ok(LinearSolver::Banded(BandLu::factor(a, perm)?))
        } else {
            Ok(LinearSolver::Iterative {
                matrix: a.clone(),
                ilu: Ilu0::new(a)?,
                tol: 1e-14,
                max_iter: 20_000,
            })
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            LinearSolver::Banded(lu) => Ok(lu.solve(b)),
            LinearSolver::Iterative {
                matrix,
                ilu,
                tol,
                max_iter,
            } => bicgstab(matrix, ilu, b, None, *tol, *max_iter),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyclic_laplacian(n: usize) -> CsrMatrix {
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 2.5);
            t.push(i, (i + 1) % n, -1.0);
            t.push(i, (i + n - 1) % n, -1.0);
        }
        t.build()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let mut t = Triplets::new(2);
        t.push(0, 1, 1.0);
        t.push(0, 1, 2.0);
        t.push(1, 0, -1.0);
        let a = t.build();
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn interleaving_narrows_cyclic_band() {
        let a = cyclic_laplacian(10);
        assert_eq!(a.bandwidths(None), (9, 9));
        let perm = interleaved_order(10);
        let (kl, ku) = a.bandwidths(Some(&perm));
        assert!(kl <= 2 && ku <= 2, "{kl} {ku}");
    }

    #[test]
    fn band_lu_solves_permuted_system() {
        let n = 17;
        let a = cyclic_laplacian(n);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.matvec(&x);
        let perm = interleaved_order(n);
        let lu = BandLu::factor(&a, Some(&perm)).unwrap();
        let y = lu.solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn bicgstab_matches_band_lu() {
        let n = 40;
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 3.0);
            if i > 0 {
                t.push(i, i - 1, -1.2);
            }
            if i + 1 < n {
                t.push(i, i + 1, -0.7);
            }
        }
        let a = t.build();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let lu = BandLu::factor(&a, None).unwrap().solve(&b);
        let ilu = Ilu0::new(&a).unwrap();
        let it = bicgstab(&a, &ilu, &b, None, 1e-14, 200).unwrap();
        for (p, q) in lu.iter().zip(&it) {
            assert!((p - q).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut t = Triplets::new(2);
        t.push(0, 1, 1.0);
        t.push(1, 0, 1.0);
        assert!(matches!(
            BandLu::factor(&t.build(), None),
            Err(Error::Solver(_))
        ));
    }
}
