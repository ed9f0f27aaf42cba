//! Stochastic Lotka–Volterra plankton model.
//!
//! The state `x_t = (p_t, z_t)` holds phytoplankton and zooplankton
//! populations. Between integer times the populations follow
//!
//! ```text
//! dp/dt = alpha p - c p z,      dz/dt = e c p z - m_l z - m_q z^2,
//! ```
//!
//! where the daily growth rate `alpha ~ N(mu_alpha, sigma_alpha^2)` is redrawn
//! at every integer time and held constant over the unit interval. The ODE is
//! advanced by classical fixed-step fourth-order Runge–Kutta so that the
//! transition stays a pure function of `(x, u, theta)` — an adaptive solver
//! would make the step sequence data-dependent and break common-random-number
//! coupling. Only the phytoplankton is observed, through
//! `log y_t ~ N(log p_t, obs_log_sd^2)`; weights use the density of `log y`,
//! which is bounded, whereas the density in `y` itself is not. The transition
//! density is intractable, so ancestor sampling is unavailable for this model.

use crate::error::{Error, Result};
use crate::ssm::StateSpaceModel;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LotkaVolterraParams {
    /// Mean of the daily growth rate distribution.
    pub mu_alpha: f64,
    /// Standard deviation of the daily growth rate distribution.
    pub sigma_alpha: f64,
    /// Clearance rate of the prey.
    pub c: f64,
    /// Growth efficiency of the predator.
    pub e: f64,
    /// Linear mortality rate of the predator.
    pub m_l: f64,
    /// Quadratic mortality rate of the predator.
    pub m_q: f64,
    /// Observation noise on the log scale.
    pub obs_log_sd: f64,
    /// Runge–Kutta step in days; the unit interval is split into
    /// `round(1 / rk4_step)` equal substeps.
    pub rk4_step: f64,
}

impl Default for LotkaVolterraParams {
    fn default() -> Self {
        LotkaVolterraParams {
            mu_alpha: 0.7,
            sigma_alpha: 0.5,
            c: 0.25,
            e: 0.3,
            m_l: 0.1,
            m_q: 0.1,
            obs_log_sd: 0.2,
            rk4_step: 0.1,
        }
    }
}

impl LotkaVolterraParams {
    fn validate(&self) -> Result<()> {
        let ok = self.mu_alpha.is_finite()
            && self.sigma_alpha >= 0.0
            && self.c >= 0.0
            && self.e >= 0.0
            && self.m_l >= 0.0
            && self.m_q >= 0.0
            && self.obs_log_sd > 0.0
            && self.rk4_step > 0.0
            && self.rk4_step <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "Lotka-Volterra parameters must be nonnegative, with obs_log_sd > 0 and rk4_step in (0, 1]".into(),
            ))
        }
    }
}

#[derive(Clone, Debug)]
pub struct LotkaVolterraModel {
    params: LotkaVolterraParams,
    n_substeps: usize,
    theta: [f64; 7],
}

pub fn make_lotka_volterra(params: LotkaVolterraParams) -> Result<LotkaVolterraModel> {
    params.validate()?;
    let n_substeps = (1.0 / params.rk4_step).round().max(1.0) as usize;
    Ok(LotkaVolterraModel {
        params,
        n_substeps,
        theta: [
            params.mu_alpha,
            params.sigma_alpha,
            params.c,
            params.e,
            params.m_l,
            params.m_q,
            params.obs_log_sd,
        ],
    })
}

impl LotkaVolterraModel {
    pub fn params(&self) -> &LotkaVolterraParams {
        &self.params
    }

    #[inline]
    fn rhs(&self, alpha: f64, p: f64, z: f64) -> (f64, f64) {
        let interaction = self.params.c * p * z;
        (
            alpha * p - interaction,
            self.params.e * interaction - self.params.m_l * z - self.params.m_q * z * z,
        )
    }

    /// Advance one unit of time with `alpha` held constant.
    fn integrate_unit_interval(&self, alpha: f64, p0: f64, z0: f64) -> (f64, f64) {
        let h = 1.0 / self.n_substeps as f64;
        let mut p = p0;
        let mut z = z0;
        for _ in 0..self.n_substeps {
            let (k1p, k1z) = self.rhs(alpha, p, z);
            let (k2p, k2z) = self.rhs(alpha, p + 0.5 * h * k1p, z + 0.5 * h * k1z);
            let (k3p, k3z) = self.rhs(alpha, p + 0.5 * h * k2p, z + 0.5 * h * k2z);
            let (k4p, k4z) = self.rhs(alpha, p + h * k3p, z + h * k3z);
            p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
        }
        (p, z)
    }

    /// Stiff-corner fallback: the same flow integrated in log-population
    /// coordinates with four times the substeps. Positivity holds by
    /// construction, so the only remaining failure mode is genuine overflow.
    /// Deterministic in `(x, alpha)`, like the primary path.
    fn integrate_log_space(&self, alpha: f64, p0: f64, z0: f64) -> (f64, f64) {
        if z0 == 0.0 {
            // The predator axis is invariant; the prey grows exactly
            // exponentially along it.
            return (p0 * alpha.exp(), 0.0);
        }
        let n = 4 * self.n_substeps;
        let h = 1.0 / n as f64;
        let rhs = |u: f64, v: f64| -> (f64, f64) {
            let p = u.exp();
            let z = v.exp();
            (
                alpha - self.params.c * z,
                self.params.e * self.params.c * p - self.params.m_l - self.params.m_q * z,
            )
        };
        let mut u = p0.ln();
        let mut v = z0.ln();
        for _ in 0..n {
            let (k1u, k1v) = rhs(u, v);
            let (k2u, k2v) = rhs(u + 0.5 * h * k1u, v + 0.5 * h * k1v);
            let (k3u, k3v) = rhs(u + 0.5 * h * k2u, v + 0.5 * h * k2v);
            let (k4u, k4v) = rhs(u + h * k3u, v + h * k3v);
            u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        (u.exp(), v.exp())
    }
}

impl StateSpaceModel for LotkaVolterraModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn init_state(&self, noise: &[f64], out: &mut [f64]) {
        // log p_0 ~ N(log 2, 1), log z_0 ~ N(log 2, 1).
        out[0] = (2.0f64.ln() + noise[0]).exp();
        out[1] = (2.0f64.ln() + noise[1]).exp();
    }

    fn transition(&self, state: &[f64], noise: &[f64], out: &mut [f64]) {
        let alpha = self.params.mu_alpha + self.params.sigma_alpha * noise[0];
        let valid = |p: f64, z: f64| p.is_finite() && z.is_finite() && p > 0.0 && z >= 0.0;
        let (mut p, mut z) = self.integrate_unit_interval(alpha, state[0], state[1]);
        if !valid(p, z) && valid(state[0], state[1]) {
            // The fixed-step scheme overshot in a stiff corner of the state
            // space; re-integrate the same interval in log coordinates.
            (p, z) = self.integrate_log_space(alpha, state[0], state[1]);
        }
        // Remaining blow-ups surface as non-finite states so the sweep can
        // fail the replicate instead of clamping silently.
        if valid(p, z) {
            out[0] = p;
            out[1] = z;
        } else {
            out[0] = f64::NAN;
            out[1] = f64::NAN;
        }
    }

    fn log_obs_density(&self, obs: &[f64], state: &[f64]) -> f64 {
        let y = obs[0];
        let p = state[0];
        if y <= 0.0 || p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let diff = y.ln() - p.ln();
        let sd = self.params.obs_log_sd;
        -0.5 * LN_2PI - sd.ln() - 0.5 * (diff / sd) * (diff / sd)
    }

    fn log_obs_bound(&self) -> Option<f64> {
        Some(-0.5 * LN_2PI - self.params.obs_log_sd.ln())
    }

    fn sample_obs(&self, state: &[f64], noise: &[f64], out: &mut [f64]) {
        out[0] = (state[0].ln() + self.params.obs_log_sd * noise[0]).exp();
    }
}
