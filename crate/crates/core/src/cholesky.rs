//! Sparse Cholesky factorisation `P A P' = L L'` for symmetric positive
//! definite matrices.
//!
//! The symbolic analysis (fill-reducing ordering, elimination tree, column
//! counts) depends only on the sparsity pattern and is shared through an
//! [`Arc`] so that repeated factorisations with new values skip it. The
//! numeric phase is the up-looking row-by-row algorithm; columns of `L` store
//! the diagonal first followed by strictly increasing row indices.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const NO_PARENT: usize = usize::MAX;

#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `iperm[old] = new`.
    iperm: Vec<usize>,
    parent: Vec<usize>,
    /// Column pointers of `L`.
    lp: Vec<usize>,
    /// Upper triangle of `P A P'` in compressed-column form; `c_src[p]` is the
    /// index into the values of `A` feeding entry `p`.
    cp: Vec<usize>,
    ci: Vec<usize>,
    c_src: Vec<usize>,
    a_indptr: Vec<usize>,
    a_indices: Vec<usize>,
}

impl SymbolicCholesky {
    /// Analyses the pattern of a square matrix whose pattern is symmetric.
    pub fn analyse(a: &CsrMatrix) -> Result<Arc<Self>> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::invalid("Cholesky needs a square matrix"));
        }
        let perm = if n == 0 {
            Vec::new()
        } else {
            let (p, _, _) = amd::order(n, a.indptr(), a.indices(), &amd::Control::default())
                .map_err(|s| Error::Numerical(format!("AMD ordering failed: {s:?}")))?;
            p
        };
        Ok(Arc::new(Self::with_ordering(a, perm)?))
    }

    /// Analysis with a caller-supplied ordering (`perm[new] = old`).
    pub fn with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        if perm.len() != n {
            return Err(Error::invalid("ordering length differs from matrix size"));
        }
        let mut iperm = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || iperm[old] != usize::MAX {
                return Err(Error::invalid("ordering is not a permutation"));
            }
            iperm[old] = new;
        }

        // Upper triangle of C = P A P' by columns. A's row i is column i of A
        // because the pattern is symmetric.
        let mut counts = vec![0usize; n + 1];
        for i in 0..n {
            for (j, _) in a.row(i) {
                let (pi, pj) = (iperm[i], iperm[j]);
                if pi <= pj {
                    counts[pj + 1] += 1;
                }
            }
        }
        for k in 0..n {
            counts[k + 1] += counts[k];
        }
        let cp = counts.clone();
        let mut next = counts;
        let mut ci = vec![0usize; cp[n]];
        let mut c_src = vec![0usize; cp[n]];
        for i in 0..n {
            for q in a.indptr()[i]..a.indptr()[i + 1] {
                let j = a.indices()[q];
                let (pi, pj) = (iperm[i], iperm[j]);
                if pi <= pj {
                    let p = next[pj];
                    ci[p] = pi;
                    c_src[p] = q;
                    next[pj] += 1;
                }
            }
        }

        // Elimination tree with path compression.
        let mut parent = vec![NO_PARENT; n];
        let mut ancestor = vec![NO_PARENT; n];
        for k in 0..n {
            for &start in &ci[cp[k]..cp[k + 1]] {
                let mut i = start;
                while i != NO_PARENT && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NO_PARENT {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Column counts by walking each row subtree.
        let mut colcount = vec![1usize; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        for k in 0..n {
            let top = ereach(&cp, &ci, &parent, k, &mut mark, &mut stack);
            for &i in &stack[top..n] {
                colcount[i] += 1;
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + colcount[k];
        }

        Ok(Self {
            n,
            perm,
            iperm,
            parent,
            lp,
            cp,
            ci,
            c_src,
            a_indptr: a.indptr().to_vec(),
            a_indices: a.indices().to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries of `L`, diagonal included.
    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn matches(&self, a: &CsrMatrix) -> bool {
        a.nrows() == self.n && a.indptr() == self.a_indptr.as_slice() && a.indices() == self.a_indices.as_slice()
    }
}

/// Nonzero pattern of row `k` of `L`, in topological order, written to
/// `stack[top..n]`.
fn ereach(
    cp: &[usize],
    ci: &[usize],
    parent: &[usize],
    k: usize,
    mark: &mut [usize],
    stack: &mut [usize],
) -> usize {
    let n = parent.len();
    let mut top = n;
    mark[k] = k;
    for &start in &ci[cp[k]..cp[k + 1]] {
        if start > k {
            continue;
        }
        let mut i = start;
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            top -= 1;
            len -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Numeric Cholesky factor.
#[derive(Debug, Clone)]
pub struct Cholesky {
    symbolic: Arc<SymbolicCholesky>,
    li: Vec<usize>,
    lx: Vec<f64>,
}

impl Cholesky {
    /// Full factorisation including a fresh symbolic analysis.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let symbolic = SymbolicCholesky::analyse(a)?;
        Self::factor(symbolic, a)
    }

    /// Numeric factorisation reusing a symbolic analysis of the same pattern.
    pub fn factor(symbolic: Arc<SymbolicCholesky>, a: &CsrMatrix) -> Result<Self> {
        if !symbolic.matches(a) {
            return Err(Error::invalid("matrix pattern differs from the symbolic analysis"));
        }
        let s = &*symbolic;
        let n = s.n;
        let nnz = s.lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0; nnz];
        let mut next: Vec<usize> = s.lp[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        let av = a.values();
        for k in 0..n {
            let top = ereach(&s.cp, &s.ci, &s.parent, k, &mut mark, &mut stack);
            x[k] = 0.0;
            for p in s.cp[k]..s.cp[k + 1] {
                x[s.ci[p]] = av[s.c_src[p]];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..n] {
                let lki = x[i] / lx[s.lp[i]];
                x[i] = 0.0;
                for p in s.lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                li[p] = k;
                lx[p] = lki;
                next[i] += 1;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: s.perm[k],
                    value: d,
                    hint: "check hyperparameters or refine the mesh",
                });
            }
            let p = next[k];
            li[p] = k;
            lx[p] = d.sqrt();
            next[k] += 1;
        }
        Ok(Self { symbolic, li, lx })
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn n(&self) -> usize {
        self.symbolic.n
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        let s = &self.symbolic;
        (0..s.n).map(|j| self.lx[s.lp[j]].ln()).sum::<f64>() * 2.0
    }

    /// Solves `L y = b` in place (permuted coordinates).
    fn forward(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let start = s.lp[j];
            y[j] /= self.lx[start];
            let yj = y[j];
            if yj != 0.0 {
                for p in start + 1..s.lp[j + 1] {
                    y[self.li[p]] -= self.lx[p] * yj;
                }
            }
        }
    }

    /// Solves `L' y = b` in place (permuted coordinates).
    fn backward(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let start = s.lp[j];
            let mut acc = y[j];
            for p in start + 1..s.lp[j + 1] {
                acc -= self.lx[p] * y[self.li[p]];
            }
            y[j] = acc / self.lx[start];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        assert_eq!(b.len(), s.n);
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Maps a standard-normal vector `z` to a draw from `N(0, A^{-1})`.
    pub fn colour_noise(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        let mut v = z.to_vec();
        self.backward(&mut v);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = v[new];
        }
        x
    }

    /// One draw from `N(0, A^{-1})`.
    pub fn sample_zero_mean<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n()).map(|_| rng.sample(StandardNormal)).collect();
        self.colour_noise(&z)
    }

    /// Entries of `A^{-1}` on the pattern of `L` (Takahashi recursions).
    ///
    /// For column `j` with off-diagonal rows `R`, every pair of `R` lies in
    /// the column of its smaller row, so scanning those columns once with a
    /// scatter map of `R` finds all the entries the recursion needs.
    pub fn selected_inverse(&self) -> SelectedInverse {
        let s = &self.symbolic;
        let n = s.n;
        let mut sx = vec![0.0; self.lx.len()];
        let mut pos = vec![usize::MAX; n];
        let max_col = (0..n).map(|j| s.lp[j + 1] - s.lp[j]).max().unwrap_or(0);
        let mut acc = vec![0.0; max_col];
        for j in (0..n).rev() {
            let start = s.lp[j];
            let end = s.lp[j + 1];
            let ljj = self.lx[start];
            let rows = &self.li[start + 1..end];
            let lcol = &self.lx[start + 1..end];
            let m = rows.len();
            for (k, &r) in rows.iter().enumerate() {
                pos[r] = k;
                acc[k] = 0.0;
            }
            for q in 0..m {
                let c = rows[q];
                let lq = lcol[q];
                let mut aq = lq * sx[s.lp[c]];
                for e in s.lp[c] + 1..s.lp[c + 1] {
                    let pk = pos[self.li[e]];
                    if pk != usize::MAX {
                        acc[pk] += lq * sx[e];
                        aq += lcol[pk] * sx[e];
                    }
                }
                acc[q] += aq;
            }
            let mut diag = 0.0;
            for k in 0..m {
                let v = -acc[k] / ljj;
                sx[start + 1 + k] = v;
                diag += lcol[k] * v;
            }
            sx[start] = 1.0 / (ljj * ljj) - diag / ljj;
            for &r in rows {
                pos[r] = usize::MAX;
            }
        }
        // Root of each elimination subtree: different roots mean
        // disconnected components of the graph, hence an exact zero.
        let mut root: Vec<usize> = (0..n).collect();
        for j in (0..n).rev() {
            if s.lp[j + 1] - s.lp[j] > 1 {
                root[j] = root[self.li[s.lp[j] + 1]];
            }
        }
        SelectedInverse {
            symbolic: Arc::clone(&self.symbolic),
            li: self.li.clone(),
            values: sx,
            root,
        }
    }
}

/// Entries of `A^{-1}` restricted to the factor pattern.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: Arc<SymbolicCholesky>,
    li: Vec<usize>,
    values: Vec<f64>,
    root: Vec<usize>,
}

impl SelectedInverse {
    /// `(A^{-1})_{ij}` in original indices, or `None` outside the pattern
    /// when `i` and `j` are connected in the graph of `A`.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let s = &self.symbolic;
        let (a, b) = (s.iperm[i], s.iperm[j]);
        if self.root[a] != self.root[b] {
            return Some(0.0);
        }
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        let span = s.lp[c]..s.lp[c + 1];
        self.li[span.clone()]
            .binary_search(&r)
            .ok()
            .map(|k| self.values[span.start + k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let s = &self.symbolic;
        (0..s.n).map(|old| self.values[s.lp[s.iperm[old]]]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random sparse SPD matrix: a sparse `B` with `B B' + n I`.
    fn random_spd(n: usize, density: f64, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j || rng.random::<f64>() < density {
                    t.push((i, j, rng.random::<f64>() - 0.5));
                }
            }
        }
        let b = CsrMatrix::from_triplets(n, n, t);
        b.matmul(&b.transpose())
            .add_scaled(1.0, &CsrMatrix::identity(n), 0.5)
    }

    #[test]
    fn factor_solve_matches_dense() {
        let a = random_spd(60, 0.04, 1);
        let chol = Cholesky::new(&a).unwrap();
        let b: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let x = chol.solve(&b);
        let ax = a.mul_vec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
        let dense = a.to_dense();
        let ld = dense.clone().cholesky().unwrap();
        let logdet: f64 = 2.0 * ld.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        assert!((chol.log_det() - logdet).abs() < 1e-9);
    }

    #[test]
    fn selected_inverse_matches_dense_inverse() {
        let a = random_spd(50, 0.05, 7);
        let chol = Cholesky::new(&a).unwrap();
        let sel = chol.selected_inverse();
        let inv = a.to_dense().try_inverse().unwrap();
        for i in 0..50 {
            assert!((sel.diagonal()[i] - inv[(i, i)]).abs() < 1e-10);
            for (j, _) in a.row(i) {
                let v = sel.get(i, j).expect("pattern of A is inside the factor pattern");
                assert!((v - inv[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn disconnected_blocks_read_as_exact_zeros() {
        let a = CsrMatrix::from_triplets(
            4,
            4,
            vec![(0, 0, 2.0), (0, 2, 1.0), (2, 0, 1.0), (2, 2, 2.0), (1, 1, 3.0), (3, 3, 1.0)],
        );
        let sel = Cholesky::new(&a).unwrap().selected_inverse();
        assert_eq!(sel.get(0, 1), Some(0.0));
        assert_eq!(sel.get(3, 2), Some(0.0));
        assert!((sel.get(0, 2).unwrap() + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn colour_noise_has_inverse_covariance() {
        // x = P' L^{-T} z, so Cov(x) = A^{-1}: check column by column.
        let a = random_spd(20, 0.1, 3);
        let chol = Cholesky::new(&a).unwrap();
        let mut cols = DMatrix::zeros(20, 20);
        for k in 0..20 {
            let mut z = vec![0.0; 20];
            z[k] = 1.0;
            let x = chol.colour_noise(&z);
            for i in 0..20 {
                cols[(i, k)] = x[i];
            }
        }
        let cov = &cols * cols.transpose();
        let inv = a.to_dense().try_inverse().unwrap();
        assert!((cov - inv).abs().max() < 1e-10);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(Cholesky::new(&a), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn symbolic_reuse_requires_same_pattern() {
        let a = random_spd(10, 0.2, 5);
        let sym = SymbolicCholesky::analyse(&a).unwrap();
        let scaled = a.scale(2.0);
        let c = Cholesky::factor(Arc::clone(&sym), &scaled).unwrap();
        assert!((c.log_det() - Cholesky::new(&a).unwrap().log_det() - 10.0 * 2f64.ln()).abs() < 1e-10);
        assert!(Cholesky::factor(sym, &CsrMatrix::identity(10)).is_err());
    }
}
