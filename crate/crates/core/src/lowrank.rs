//! Rank-r factored states `f = X S V^T` with factors orthonormal under the
//! weighted discrete inner products, plus the weighted QR and truncated SVD
//! that produce them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Result, VpfpError};
use crate::fokker_planck::check_orthonormal;
use crate::grid::PhaseGrid;
use crate::output::{fmt_num, read_matrix_csv, write_matrix_csv};

/// Relative residual below which a column is treated as linearly dependent.
const DEFICIENCY_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankState {
    /// Spatial basis, `nx x r`.
    pub x: DMatrix<f64>,
    /// Coefficients, `r x r`.
    pub s: DMatrix<f64>,
    /// Velocity basis, `nv x r`.
    pub v: DMatrix<f64>,
}

fn w_dot(a: &[f64], b: &[f64], w: f64) -> f64 {
    a.iter().zip(b).map(|(s, t)| s * t).sum::<f64>() * w
}

/// Weighted QR by modified Gram-Schmidt with repeated passes.
///
/// Returns `Q` with `Q^T Q w = I` and upper-triangular `R` with nonnegative
/// diagonal such that `Q R = columns`. A dependent column gets a zero
/// diagonal in `R` and is replaced in `Q` by the first canonical vector that
/// is not already (numerically) in the span.
pub fn weighted_qr(columns: &DMatrix<f64>, weight: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, r) = columns.shape();
    let mut q = DMatrix::zeros(n, r);
    let mut rr = DMatrix::zeros(r, r);
    for j in 0..r {
        let mut u: Vec<f64> = columns.column(j).iter().copied().collect();
        let orig = w_dot(&u, &u, weight).sqrt();
        let mut norm = orig;
        for _pass in 0..4 {
            let before = norm;
            for i in 0..j {
                let qi = q.column(i);
                let c = w_dot(qi.as_slice(), &u, weight);
                rr[(i, j)] += c;
                for (ut, qt) in u.iter_mut().zip(qi.iter()) {
                    *ut -= c * qt;
                }
            }
            norm = w_dot(&u, &u, weight).sqrt();
            if norm >= 0.5 * before || norm <= DEFICIENCY_TOL * orig {
                break;
            }
        }
        if orig == 0.0 || norm <= DEFICIENCY_TOL * orig {
            rr[(j, j)] = 0.0;
            let fill = complete_basis(&q, j, weight);
            q.column_mut(j).copy_from_slice(&fill);
        } else {
            rr[(j, j)] = norm;
            for (i, ut) in u.iter().enumerate() {
                q[(i, j)] = ut / norm;
            }
        }
    }
    (q, rr)
}

/// First canonical vector orthogonalized against the leading `j` columns of
/// `q` that survives with a healthy norm.
fn complete_basis(q: &DMatrix<f64>, j: usize, weight: f64) -> Vec<f64> {
    let n = q.nrows();
    for k in 0..n {
        let mut u = vec![0.0; n];
        u[k] = 1.0 / weight.sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let c = w_dot(qi.as_slice(), &u, weight);
                for (ut, qt) in u.iter_mut().zip(qi.iter()) {
                    *ut -= c * qt;
                }
            }
        }
        let norm = w_dot(&u, &u, weight).sqrt();
        if norm > 0.5 {
            u.iter_mut().for_each(|t| *t /= norm);
            return u;
        }
    }
    // j < n always leaves some canonical direction with norm >= 1/sqrt(n)
    unreachable!("no canonical completion found; rank exceeds dimension")
}

impl LowRankState {
    pub fn rank(&self) -> usize {
        self.s.nrows()
    }

    /// Best rank-`r` approximation of `f0` in the weighted Frobenius norm.
    pub fn from_dense(f0: &DMatrix<f64>, r: usize, grid: &PhaseGrid) -> Result<Self> {
        Ok(Self::from_dense_with_error(f0, r, grid)?.0)
    }

    /// As [`from_dense`](Self::from_dense), also returning the weighted
    /// truncation error `sqrt(sum_{k > r} sigma_k^2)`.
    pub fn from_dense_with_error(
        f0: &DMatrix<f64>,
        r: usize,
        grid: &PhaseGrid,
    ) -> Result<(Self, f64)> {
        grid.check_tensor("lowrank::init_from_function", f0)?;
        if r == 0 || r > grid.nx.min(grid.nv) {
            return Err(VpfpError::Config(format!(
                "rank {r} must lie in 1..={}",
                grid.nx.min(grid.nv)
            )));
        }
        let w = (grid.dx * grid.dv).sqrt();
        let scaled = faer::Mat::<f64>::from_fn(grid.nx, grid.nv, |p, q| f0[(p, q)] * w);
        let svd = scaled.thin_svd().map_err(|e| VpfpError::Singular {
            module: "lowrank::init_from_function",
            index: 0,
            detail: format!("SVD did not converge: {e:?}"),
        })?;
        let (u, vm, sv) = (svd.U(), svd.V(), svd.S());
        let sigma: Vec<f64> = (0..grid.nx.min(grid.nv)).map(|k| sv[k]).collect();
        let mut order: Vec<usize> = (0..sigma.len()).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        let keep = &order[..r];
        let tail = order[r..]
            .iter()
            .map(|&k| sigma[k] * sigma[k])
            .sum::<f64>()
            .sqrt();

        let mut x = DMatrix::zeros(grid.nx, r);
        let mut v = DMatrix::zeros(grid.nv, r);
        let mut s = DMatrix::zeros(r, r);
        for (c, &k) in keep.iter().enumerate() {
            for p in 0..grid.nx {
                x[(p, c)] = u[(p, k)] / grid.dx.sqrt();
            }
            for q in 0..grid.nv {
                v[(q, c)] = vm[(q, k)] / grid.dv.sqrt();
            }
            s[(c, c)] = sigma[k];
        }
        Ok((LowRankState { x, s, v }, tail))
    }

    /// `K = X S`, `nx x r`.
    pub fn to_k(&self) -> DMatrix<f64> {
        &self.x * &self.s
    }

    /// `L = V S^T`, `nv x r`, so that `f = sum_i X_i L_i`.
    pub fn to_l(&self) -> DMatrix<f64> {
        &self.v * self.s.transpose()
    }

    pub fn from_k(k: &DMatrix<f64>, v: DMatrix<f64>, grid: &PhaseGrid) -> Self {
        let (x, s) = weighted_qr(k, grid.dx);
        LowRankState { x, s, v }
    }

    pub fn from_l(l: &DMatrix<f64>, x: DMatrix<f64>, grid: &PhaseGrid) -> Self {
        let (v, r) = weighted_qr(l, grid.dv);
        LowRankState {
            x,
            s: r.transpose(),
            v,
        }
    }

    /// Dense tensor `X S V^T`. O(nx nv r); diagnostics only.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.x * &self.s * self.v.transpose()
    }

    fn velocity_moment(&self, weight: impl Fn(usize) -> f64, grid: &PhaseGrid) -> Vec<f64> {
        let r = self.rank();
        let m = DVector::from_fn(r, |j, _| {
            (0..grid.nv)
                .map(|q| self.v[(q, j)] * weight(q))
                .sum::<f64>()
                * grid.dv
        });
        let out = &self.x * (&self.s * m);
        out.iter().copied().collect()
    }

    /// `rho = sum_j K_j <V_j, 1>_v`.
    pub fn density(&self, grid: &PhaseGrid) -> Vec<f64> {
        self.velocity_moment(|_| 1.0, grid)
    }

    pub fn current(&self, grid: &PhaseGrid) -> Vec<f64> {
        self.velocity_moment(|q| grid.v[q], grid)
    }

    pub fn mass(&self, grid: &PhaseGrid) -> f64 {
        self.density(grid).iter().sum::<f64>() * grid.dx
    }

    pub fn check_orthonormal(&self, grid: &PhaseGrid) -> Result<()> {
        check_orthonormal("lowrank::state", &self.x, grid.dx)?;
        check_orthonormal("lowrank::state", &self.v, grid.dv)
    }

    pub fn check_shape(&self, grid: &PhaseGrid) -> Result<()> {
        let r = self.rank();
        if self.x.shape() != (grid.nx, r) || self.v.shape() != (grid.nv, r) || self.s.ncols() != r {
            return Err(VpfpError::dim(
                "lowrank::state",
                format!("X {}x{r}, V {}x{r}", grid.nx, grid.nv),
                format!(
                    "X {:?}, S {:?}, V {:?}",
                    self.x.shape(),
                    self.s.shape(),
                    self.v.shape()
                ),
            ));
        }
        Ok(())
    }
}

/// Truncated weighted SVD of sampled initial data.
pub fn init_from_function(
    f0_values: &DMatrix<f64>,
    r: usize,
    grid: &PhaseGrid,
) -> Result<LowRankState> {
    LowRankState::from_dense(f0_values, r, grid)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub grid: PhaseGrid,
    pub rank: usize,
    pub time: f64,
    pub files: Vec<String>,
}

/// Writes `X.csv`, `S.csv`, `V.csv` and `checkpoint.json` into `dir`.
pub fn write_checkpoint(
    dir: &Path,
    state: &LowRankState,
    grid: &PhaseGrid,
    time: f64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        grid: grid.clone(),
        rank: state.rank(),
        time,
        files: vec!["X.csv".into(), "S.csv".into(), "V.csv".into()],
    };
    fs::write(
        dir.join("checkpoint.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    write_matrix_csv(&dir.join("X.csv"), &state.x)?;
    write_matrix_csv(&dir.join("S.csv"), &state.s)?;
    write_matrix_csv(&dir.join("V.csv"), &state.v)?;
    log::debug!(
        "checkpoint at t = {} written to {}",
        fmt_num(time),
        dir.display()
    );
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<(LowRankState, CheckpointManifest)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("checkpoint.json"))?)?;
    let state = LowRankState {
        x: read_matrix_csv(&dir.join("X.csv"))?,
        s: read_matrix_csv(&dir.join("S.csv"))?,
        v: read_matrix_csv(&dir.join("V.csv"))?,
    };
    state.check_shape(&manifest.grid)?;
    Ok((state, manifest))
}
