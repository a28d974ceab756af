//! Structured direct solvers: scalar and block tridiagonal Thomas sweeps and
//! a small dense LU wrapper. All solves are direct and deterministic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VpfpError};

/// Tridiagonal operator stored by diagonals.
///
/// Row `i` reads `lower[i] * x[i-1] + diag[i] * x[i] + upper[i] * x[i+1]`;
/// `lower[0]` and `upper[n-1]` are ignored (kept zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Tridiag {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n);
        t.diag.iter_mut().for_each(|d| *d = 1.0);
        t
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// `a * self + b * other`, entrywise on the diagonals.
    pub fn combine(&self, a: f64, other: &Tridiag, b: f64) -> Tridiag {
        let lin = |u: &[f64], w: &[f64]| u.iter().zip(w).map(|(s, t)| a * s + b * t).collect();
        Tridiag {
            lower: lin(&self.lower, &other.lower),
            diag: lin(&self.diag, &other.diag),
            upper: lin(&self.upper, &other.upper),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i > 0 {
                m[(i, i - 1)] = self.lower[i];
            }
            if i + 1 < n {
                m[(i, i + 1)] = self.upper[i];
            }
        }
        m
    }

    /// Thomas sweep without pivoting. Fails on a vanishing pivot.
    pub fn solve(&self, rhs: &[f64], module: &'static str) -> Result<Vec<f64>> {
        let n = self.len();
        if rhs.len() != n {
            return Err(VpfpError::dim(module, n, rhs.len()));
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut prev_c = 0.0;
        let mut prev_d = 0.0;
        for i in 0..n {
            let low = if i > 0 { self.lower[i] } else { 0.0 };
            let m = self.diag[i] - low * prev_c;
            if m == 0.0 || !m.is_finite() {
                return Err(VpfpError::Singular {
                    module,
                    index: i,
                    detail: format!("tridiagonal pivot {m:e}"),
                });
            }
            c[i] = if i + 1 < n { self.upper[i] / m } else { 0.0 };
            d[i] = (rhs[i] - low * prev_d) / m;
            prev_c = c[i];
            prev_d = d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }
}

/// Block tridiagonal system with square `r x r` blocks.
///
/// Block row `q` reads `lower[q] x[q-1] + diag[q] x[q] + upper[q] x[q+1]`.
#[derive(Debug, Clone)]
pub struct BlockTridiag {
    pub lower: Vec<DMatrix<f64>>,
    pub diag: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
}

impl BlockTridiag {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.diag.first().map_or(0, |d| d.nrows())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let r = self.block_size();
        let mut m = DMatrix::zeros(n * r, n * r);
        for q in 0..n {
            m.view_mut((q * r, q * r), (r, r)).copy_from(&self.diag[q]);
            if q > 0 {
                m.view_mut((q * r, (q - 1) * r), (r, r))
                    .copy_from(&self.lower[q]);
            }
            if q + 1 < n {
                m.view_mut((q * r, (q + 1) * r), (r, r))
                    .copy_from(&self.upper[q]);
            }
        }
        m
    }

    /// Block Thomas elimination. `rhs[q]` is the length-`r` right-hand side
    /// of block row `q`.
    pub fn solve(&self, rhs: &[DVector<f64>], module: &'static str) -> Result<Vec<DVector<f64>>> {
        let n = self.len();
        if rhs.len() != n {
            return Err(VpfpError::dim(module, n, rhs.len()));
        }
        let mut cp: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut dp: Vec<DVector<f64>> = Vec::with_capacity(n);
        for q in 0..n {
            let (m, b) = if q == 0 {
                (self.diag[0].clone(), rhs[0].clone())
            } else {
                (
                    &self.diag[q] - &self.lower[q] * &cp[q - 1],
                    &rhs[q] - &self.lower[q] * &dp[q - 1],
                )
            };
            let lu = m.lu();
            let singular = || VpfpError::Singular {
                module,
                index: q,
                detail: "block Thomas pivot block is singular".into(),
            };
            if q + 1 < n {
                cp.push(lu.solve(&self.upper[q]).ok_or_else(singular)?);
            } else {
                cp.push(DMatrix::zeros(0, 0));
            }
            dp.push(lu.solve(&b).ok_or_else(singular)?);
        }
        for q in (0..n.saturating_sub(1)).rev() {
            let next = dp[q + 1].clone();
            dp[q] -= &cp[q] * next;
        }
        Ok(dp)
    }
}

/// Dense LU solve that reports the failing index on singularity.
pub fn dense_solve(
    a: DMatrix<f64>,
    b: &DVector<f64>,
    module: &'static str,
    index: usize,
) -> Result<DVector<f64>> {
    let out = a.lu().solve(b).ok_or_else(|| VpfpError::Singular {
        module,
        index,
        detail: "dense LU failed".into(),
    })?;
    if out.iter().any(|t| !t.is_finite()) {
        return Err(VpfpError::Singular {
            module,
            index,
            detail: "non-finite solution".into(),
        });
    }
    Ok(out)
}

/// Column-major vectorization of a matrix.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn thomas_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 9;
        let mut t = Tridiag::zeros(n);
        for i in 0..n {
            t.lower[i] = if i > 0 {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            };
            t.upper[i] = if i + 1 < n {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            };
            t.diag[i] = 4.0 + rng.random_range(0.0..1.0);
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = t.solve(&b, "test").unwrap();
        let dense = t
            .to_dense()
            .lu()
            .solve(&DVector::from_vec(b.clone()))
            .unwrap();
        for i in 0..n {
            assert!((x[i] - dense[i]).abs() < 1e-13);
        }
        let back = t.apply(&x);
        for i in 0..n {
            assert!((back[i] - b[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn thomas_reports_zero_pivot() {
        let t = Tridiag::zeros(3);
        let err = t.solve(&[1.0, 1.0, 1.0], "test").unwrap_err();
        assert!(matches!(err, VpfpError::Singular { index: 0, .. }));
    }

    #[test]
    fn block_thomas_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, r) = (6, 3);
        let mut rand_block =
            |scale: f64| DMatrix::from_fn(r, r, |_, _| scale * rng.random_range(-1.0..1.0));
        let lower: Vec<_> = (0..n).map(|_| rand_block(1.0)).collect();
        let upper: Vec<_> = (0..n).map(|_| rand_block(1.0)).collect();
        let diag: Vec<_> = (0..n)
            .map(|_| rand_block(1.0) + DMatrix::identity(r, r) * 8.0)
            .collect();
        let bt = BlockTridiag { lower, diag, upper };
        let rhs: Vec<DVector<f64>> = (0..n)
            .map(|q| DVector::from_fn(r, |i, _| (q * r + i) as f64 * 0.1 - 0.5))
            .collect();
        let x = bt.solve(&rhs, "test").unwrap();
        let flat = DVector::from_iterator(n * r, rhs.iter().flat_map(|b| b.iter().copied()));
        let dense = bt.to_dense().lu().solve(&flat).unwrap();
        for q in 0..n {
            for i in 0..r {
                assert!((x[q][i] - dense[q * r + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vec_roundtrip() {
        let m = DMatrix::from_fn(3, 2, |i, j| (i + 10 * j) as f64);
        assert_eq!(unvec(&vec_of(&m), 3, 2), m);
        assert_eq!(vec_of(&m)[3], 10.0);
    }
}
