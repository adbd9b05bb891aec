//! Small dense matrix kernels: one-sided Jacobi SVD, Moore–Penrose
//! pseudo-inverse and the top right singular vector.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::config("matrix must have at least one row and column"));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
                context: "matrix storage",
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("matrix has non-finite entries".into()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                    context: "matrix row",
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let rows = cols.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.max(1), cols.len().max(1));
        if rows == 0 || cols.is_empty() {
            return Err(Error::config("matrix must have at least one row and column"));
        }
        for (j, c) in cols.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::Dimension {
                    expected: rows,
                    got: c.len(),
                    context: "matrix column",
                });
            }
            for (i, x) in c.iter().enumerate() {
                m[(i, j)] = *x;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                expected: self.cols,
                got: other.rows,
                context: "matrix product",
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                got: v.len(),
                context: "matrix-vector product",
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `selfᵀ v`.
    pub fn transpose_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::Dimension {
                expected: self.rows,
                got: v.len(),
                context: "transposed matrix-vector product",
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
                context: "matrix difference",
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin SVD `A = U diag(s) Vᵀ` with `s` sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    /// rows × k
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    /// cols × k
    pub v: DenseMatrix,
}

const MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &DenseMatrix) -> Result<Svd> {
    if a.rows < a.cols {
        let t = svd_tall(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    svd_tall(a)
}

fn svd_tall(a: &DenseMatrix) -> Result<Svd> {
    let (m, n) = (a.rows, a.cols);
    // Column-major working copies: columns of A are rotated until orthogonal.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let eps = f64::EPSILON;
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for i in 0..m {
                        al += wp[i] * wp[i];
                        be += wq[i] * wq[i];
                        ga += wp[i] * wq[i];
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge after {MAX_SWEEPS} sweeps on a {m}x{n} matrix \
             (frobenius norm {:.3e})",
            a.frobenius_norm()
        )));
    }
    let norms: Vec<f64> = w
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the lowest column index first among ties.
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DenseMatrix::zeros(m, n);
    let mut vm = DenseMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..m {
                u[(i, k)] = w[j][i] / sigma;
            }
        }
        for i in 0..n {
            vm[(i, k)] = v[j][i];
        }
    }
    Ok(Svd {
        u,
        singular_values: s,
        v: vm,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Default relative rank tolerance for an `rows × cols` matrix.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    1e-10 * rows.max(cols) as f64
}

/// Moore–Penrose pseudo-inverse. Singular values at or below
/// `rank_tol · σ_max` are treated as zero.
pub fn pseudo_inverse(a: &DenseMatrix, rank_tol: f64) -> Result<DenseMatrix> {
    if !(rank_tol >= 0.0) {
        return Err(Error::config("rank tolerance must be nonnegative"));
    }
    let dec = svd(a)?;
    Ok(pinv_from_svd(a, &dec, rank_tol))
}

pub(crate) fn pinv_from_svd(a: &DenseMatrix, dec: &Svd, rank_tol: f64) -> DenseMatrix {
    let smax = dec.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = rank_tol * smax;
    let mut out = DenseMatrix::zeros(a.cols, a.rows);
    for (k, &sigma) in dec.singular_values.iter().enumerate() {
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        let inv = 1.0 / sigma;
        for i in 0..a.cols {
            let vik = dec.v[(i, k)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..a.rows {
                out[(i, j)] += vik * dec.u[(j, k)];
            }
        }
    }
    out
}

/// Unit right singular vector of the largest singular value, with its first
/// nonzero component made positive. `None` for an all-zero matrix.
pub fn top_right_singular_vector(a: &DenseMatrix) -> Result<Option<Vec<f64>>> {
    if a.data.iter().all(|x| *x == 0.0) {
        return Ok(None);
    }
    let dec = svd(a)?;
    let mut v = dec.v.column(0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(None);
    }
    for x in &mut v {
        *x /= norm;
    }
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-300) {
        if first < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
    }
    Ok(Some(v))
}
