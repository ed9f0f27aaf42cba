//! Exact filtering and smoothing for linear Gaussian state-space models.
//!
//! This is the ground-truth oracle used to validate the particle estimators:
//! for a model `x_t = A x_{t-1} + N(0, Q)`, `y_t = C x_t + N(0, Rm)`, the
//! forward Kalman recursion and the Rauch–Tung–Striebel backward pass give the
//! smoothing moments in closed form. Covariance updates use the Joseph form
//! and are re-symmetrized each step, which keeps long horizons stable.
//!
//! State dimensions here are tiny (the built-in models have `d_x <= 2`), so
//! the module carries its own dense row-major matrix type rather than a
//! linear-algebra dependency.

use crate::error::{Error, Result};
use crate::ssm::ObservationRecord;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn scalar(x: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Lower Cholesky factor; fails on non-positive-definite input.
    pub fn cholesky(&self) -> Result<Matrix> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite (pivot {sum} at {i})"
                        )));
                    }
                    l[(i, i)] = sum.sqrt();
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        Ok(l)
    }

    /// Solve `self * X = rhs` for symmetric positive definite `self`.
    pub fn solve_spd(&self, rhs: &Matrix) -> Result<Matrix> {
        let l = self.cholesky()?;
        let n = self.rows;
        assert_eq!(rhs.rows, n);
        let mut x = rhs.clone();
        for col in 0..rhs.cols {
            // Forward substitution L z = b.
            for i in 0..n {
                let mut sum = x[(i, col)];
                for k in 0..i {
                    sum -= l[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = sum / l[(i, i)];
            }
            // Back substitution L' y = z.
            for i in (0..n).rev() {
                let mut sum = x[(i, col)];
                for k in (i + 1)..n {
                    sum -= l[(k, i)] * x[(k, col)];
                }
                x[(i, col)] = sum / l[(i, i)];
            }
        }
        Ok(x)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Time-invariant linear Gaussian model
/// `x_0 ~ N(m0, P0)`, `x_t = A x_{t-1} + N(0, Q)`, `y_t = C x_t + N(0, Rm)`.
#[derive(Clone, Debug)]
pub struct LinearGaussianSpec {
    pub a: Matrix,
    pub q: Matrix,
    pub c: Matrix,
    pub rm: Matrix,
    pub m0: Vec<f64>,
    pub p0: Matrix,
}

impl LinearGaussianSpec {
    pub fn new(
        a: Matrix,
        q: Matrix,
        c: Matrix,
        rm: Matrix,
        m0: Vec<f64>,
        p0: Matrix,
    ) -> Result<Self> {
        let dx = a.rows();
        let dy = c.rows();
        let check = |cond: bool, msg: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        };
        check(dx > 0 && a.cols() == dx, "A must be square")?;
        check(q.rows() == dx && q.cols() == dx, "Q must be d_x x d_x")?;
        check(c.cols() == dx && dy > 0, "C must be d_y x d_x")?;
        check(rm.rows() == dy && rm.cols() == dy, "Rm must be d_y x d_y")?;
        check(m0.len() == dx, "m0 must have length d_x")?;
        check(p0.rows() == dx && p0.cols() == dx, "P0 must be d_x x d_x")?;
        for (m, name) in [(&q, "Q"), (&rm, "Rm"), (&p0, "P0")] {
            check(m.is_symmetric(1e-9), &format!("{name} must be symmetric"))?;
        }
        Ok(LinearGaussianSpec { a, q, c, rm, m0, p0 })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.rows()
    }
}

/// Gaussian mean/covariance at one time point.
#[derive(Clone, Debug)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

struct FilterPass {
    filtered: Vec<GaussianMoments>,
    predicted: Vec<GaussianMoments>, // predicted[t] = p(x_t | y_{1..t-1}); predicted[0] = prior
}

fn filter_pass(spec: &LinearGaussianSpec, obs: &ObservationRecord) -> Result<FilterPass> {
    if obs.obs_dim() != spec.obs_dim() {
        return Err(Error::Dimension {
            what: "observation",
            expected: spec.obs_dim(),
            got: obs.obs_dim(),
        });
    }
    let horizon = obs.horizon();
    let dx = spec.state_dim();
    let identity = Matrix::identity(dx);
    let mut filtered = Vec::with_capacity(horizon + 1);
    let mut predicted = Vec::with_capacity(horizon + 1);

    let mut mean = spec.m0.clone();
    let mut cov = spec.p0.clone();
    predicted.push(GaussianMoments {
        mean: mean.clone(),
        cov: cov.clone(),
    });
    filtered.push(GaussianMoments {
        mean: mean.clone(),
        cov: cov.clone(),
    });

    for t in 1..=horizon {
        // Predict.
        mean = spec.a.matvec(&mean);
        cov = spec.a.matmul(&cov).matmul(&spec.a.transpose()).add(&spec.q);
        cov.symmetrize();
        predicted.push(GaussianMoments {
            mean: mean.clone(),
            cov: cov.clone(),
        });

        // Update, unless the observation is missing.
        if let Some(y) = obs.get(t) {
            let ct = spec.c.transpose();
            let s = spec.c.matmul(&cov).matmul(&ct).add(&spec.rm);
            // K = P C' S^{-1}, via S K' = C P.
            let kt = s.solve_spd(&spec.c.matmul(&cov))?;
            let k = kt.transpose();
            let innovation: Vec<f64> = {
                let pred_obs = spec.c.matvec(&mean);
                y.iter().zip(pred_obs).map(|(yi, pi)| yi - pi).collect()
            };
            let correction = k.matvec(&innovation);
            for (m, c) in mean.iter_mut().zip(correction) {
                *m += c;
            }
            // Joseph form: (I - KC) P (I - KC)' + K Rm K'.
            let ikc = identity.sub(&k.matmul(&spec.c));
            cov = ikc
                .matmul(&cov)
                .matmul(&ikc.transpose())
                .add(&k.matmul(&spec.rm).matmul(&k.transpose()));
            cov.symmetrize();
        }
        filtered.push(GaussianMoments {
            mean: mean.clone(),
            cov: cov.clone(),
        });
    }
    Ok(FilterPass {
        filtered,
        predicted,
    })
}

/// Forward Kalman filter: moments of `p(x_t | y_{1:t})` for `t = 0..=T`.
///
/// Missing observations skip the update step, so those entries are the
/// one-step-ahead predictive moments.
pub fn kalman_filter(
    spec: &LinearGaussianSpec,
    obs: &ObservationRecord,
) -> Result<Vec<GaussianMoments>> {
    Ok(filter_pass(spec, obs)?.filtered)
}

/// Rauch–Tung–Striebel smoother: moments of `p(x_t | y_{1:T})` for `t = 0..=T`.
pub fn rts_smoother(
    spec: &LinearGaussianSpec,
    obs: &ObservationRecord,
) -> Result<Vec<GaussianMoments>> {
    let pass = filter_pass(spec, obs)?;
    let horizon = obs.horizon();
    let mut smoothed: Vec<GaussianMoments> = pass.filtered.clone();
    for t in (0..horizon).rev() {
        let pred_next = &pass.predicted[t + 1];
        let filt = &pass.filtered[t];
        // G = P_t A' P_{t+1|t}^{-1}, via P_{t+1|t} G' = A P_t.
        let gt = pred_next.cov.solve_spd(&spec.a.matmul(&filt.cov))?;
        let g = gt.transpose();
        let mean_diff: Vec<f64> = smoothed[t + 1]
            .mean
            .iter()
            .zip(&pred_next.mean)
            .map(|(s, p)| s - p)
            .collect();
        let mean: Vec<f64> = filt
            .mean
            .iter()
            .zip(g.matvec(&mean_diff))
            .map(|(m, d)| m + d)
            .collect();
        let cov_diff = smoothed[t + 1].cov.sub(&pred_next.cov);
        let mut cov = filt.cov.add(&g.matmul(&cov_diff).matmul(&g.transpose()));
        cov.symmetrize();
        smoothed[t] = GaussianMoments { mean, cov };
    }
    Ok(smoothed)
}
