//! Shared helpers for the integration suites: an independent dense-Gaussian
//! smoothing oracle, goodness-of-fit machinery and Monte Carlo error bars.
#![allow(dead_code)]

use coupled_smoother::models::Ar1Params;
use coupled_smoother::ssm::ObservationRecord;
use coupled_smoother::stats::normal_quantile;

/// Exact smoothing moments for a scalar AR(1)-with-noise model, computed by
/// brute force: build the joint Gaussian of `x_{0:T}`, condition on the
/// observed coordinates with a dense solve. Deliberately shares no code with
/// the Kalman recursion it cross-checks.
pub struct DenseSmoother {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn dense_gaussian_smoother(params: &Ar1Params, obs: &ObservationRecord) -> DenseSmoother {
    let t_len = obs.horizon() + 1;
    let eta = params.eta;
    // Marginal variances v_t = eta^2 v_{t-1} + q.
    let mut v = vec![0.0; t_len];
    v[0] = params.init_sd * params.init_sd;
    for t in 1..t_len {
        v[t] = eta * eta * v[t - 1] + params.trans_sd * params.trans_sd;
    }
    // Cov(x_s, x_t) = eta^{t-s} v_s for s <= t.
    let mut sigma = vec![vec![0.0; t_len]; t_len];
    for s in 0..t_len {
        for t in s..t_len {
            let cov = eta.powi((t - s) as i32) * v[s];
            sigma[s][t] = cov;
            sigma[t][s] = cov;
        }
    }
    let observed: Vec<(usize, f64)> = (1..t_len)
        .filter_map(|t| obs.get(t).map(|y| (t, y[0])))
        .collect();
    if observed.is_empty() {
        return DenseSmoother {
            mean: vec![0.0; t_len],
            var: v,
        };
    }
    let n_obs = observed.len();
    // S = Sigma_OO + R I, solve S z = y and S W = Sigma_O: for the update.
    let r = params.obs_sd * params.obs_sd;
    let mut s = vec![vec![0.0; n_obs]; n_obs];
    for (i, (ti, _)) in observed.iter().enumerate() {
        for (j, (tj, _)) in observed.iter().enumerate() {
            s[i][j] = sigma[*ti][*tj] + if i == j { r } else { 0.0 };
        }
    }
    let y: Vec<f64> = observed.iter().map(|(_, y)| *y).collect();
    // Prior mean is zero, so the conditional mean is Sigma_{:,O} S^{-1} y.
    let z = solve_dense(&s, std::slice::from_ref(&y)).pop().unwrap();
    let mut mean = vec![0.0; t_len];
    for t in 0..t_len {
        mean[t] = observed
            .iter()
            .enumerate()
            .map(|(i, (ti, _))| sigma[t][*ti] * z[i])
            .sum();
    }
    // Conditional variance: diag(Sigma - Sigma_{:,O} S^{-1} Sigma_{O,:}).
    // One linear system per time point, each of dimension n_obs.
    let rhs: Vec<Vec<f64>> = (0..t_len)
        .map(|t| observed.iter().map(|(ti, _)| sigma[*ti][t]).collect())
        .collect();
    let w = solve_dense(&s, &rhs);
    let mut var = vec![0.0; t_len];
    for t in 0..t_len {
        let correction: f64 = (0..n_obs)
            .map(|i| sigma[t][observed[i].0] * w[t][i])
            .sum();
        var[t] = sigma[t][t] - correction;
    }
    DenseSmoother { mean, var }
}

/// Gaussian elimination with partial pivoting; solves `A x = b` for several
/// right-hand sides at once.
fn solve_dense(a: &[Vec<f64>], rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = rhs.len();
    let width = rhs[0].len().max(1);
    // Augmented matrix, rhs columns appended per system.
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i].clone();
            for r in rhs {
                row.push(r[i]);
            }
            row
        })
        .collect();
    let _ = width;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular system");
        for row in (col + 1)..n {
            let f = aug[row][col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..aug[row].len() {
                let v = aug[col][k];
                aug[row][k] -= f * v;
            }
        }
    }
    let mut out = vec![vec![0.0; n]; m];
    for sys in 0..m {
        for i in (0..n).rev() {
            let mut acc = aug[i][n + sys];
            for k in (i + 1)..n {
                acc -= aug[i][k] * out[sys][k];
            }
            out[sys][i] = acc / aug[i][i];
        }
    }
    out
}

/// Chi-square upper quantile via the Wilson-Hilferty approximation; accurate
/// to a few tenths of a percent, plenty for test thresholds.
pub fn chi_square_critical(df: usize, alpha: f64) -> f64 {
    let z = normal_quantile(1.0 - alpha);
    let k = df as f64;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

/// Pearson chi-square statistic of observed counts against expected
/// proportions.
pub fn chi_square_statistic(counts: &[usize], probs: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(c, p)| {
            let expected = p * total as f64;
            if expected == 0.0 {
                assert_eq!(*c, 0, "observed count in zero-probability cell");
                0.0
            } else {
                let d = *c as f64 - expected;
                d * d / expected
            }
        })
        .sum()
}

/// Monte Carlo standard error of a (possibly autocorrelated) chain mean via
/// nonoverlapping batch means.
pub fn batch_mcse(xs: &[f64], n_batches: usize) -> f64 {
    assert!(n_batches >= 2 && xs.len() >= 2 * n_batches);
    let batch = xs.len() / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| {
            let chunk = &xs[b * batch..(b + 1) * batch];
            chunk.iter().sum::<f64>() / batch as f64
        })
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var_batch = means
        .iter()
        .map(|m| (m - grand) * (m - grand))
        .sum::<f64>()
        / (n_batches - 1) as f64;
    (var_batch / n_batches as f64).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    coupled_smoother::stats::mean(xs)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    coupled_smoother::stats::std_dev(xs)
}

/// Standard error of an i.i.d. sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

#[cfg(test)]
mod self_tests {
    use super::*;

    #[test]
    fn dense_solver_inverts_a_known_system() {
        let a = vec![vec![4.0, 1.0], vec![1.0, 3.0]];
        let sol = solve_dense(&a, &[vec![1.0, 2.0]]);
        // x = A^{-1} [1, 2]: determinant 11.
        assert!((sol[0][0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((sol[0][1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_critical_matches_tables() {
        // df = 1: 10.828; df = 4: 18.467; df = 49: 85.351 at alpha = 0.001.
        // Wilson-Hilferty is a few percent high at tiny df, which only makes
        // the goodness-of-fit thresholds marginally more permissive.
        assert!((chi_square_critical(1, 0.001) - 10.828).abs() < 0.4);
        assert!((chi_square_critical(4, 0.001) - 18.467).abs() < 0.3);
        assert!((chi_square_critical(49, 0.001) - 85.351).abs() < 0.5);
    }
}
