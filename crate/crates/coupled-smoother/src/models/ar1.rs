//! Hidden auto-regressive model: `x_0 ~ N(0, init_sd^2)`,
//! `x_t = eta x_{t-1} + N(0, trans_sd^2)`, `y_t ~ N(x_t, obs_sd^2)`.

use crate::error::{Error, Result};
use crate::kalman::{LinearGaussianSpec, Matrix};
use crate::ssm::{AuxProposal, ObservationRecord, StateSpaceModel};

const LN_2PI: f64 = 1.8378770664093453;

#[inline]
fn normal_logpdf(diff: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (diff / sd) * (diff / sd)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ar1Params {
    pub eta: f64,
    pub init_sd: f64,
    pub trans_sd: f64,
    pub obs_sd: f64,
}

impl Default for Ar1Params {
    fn default() -> Self {
        Ar1Params {
            eta: 0.9,
            init_sd: 1.0,
            trans_sd: 1.0,
            obs_sd: 1.0,
        }
    }
}

impl Ar1Params {
    /// The highly-informative-observation variant: all standard deviations
    /// equal to 0.1.
    pub fn unlikely() -> Self {
        Ar1Params {
            eta: 0.9,
            init_sd: 0.1,
            trans_sd: 0.1,
            obs_sd: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.eta.is_finite()
            && self.init_sd > 0.0
            && self.trans_sd > 0.0
            && self.obs_sd > 0.0
            && [self.init_sd, self.trans_sd, self.obs_sd]
                .iter()
                .all(|s| s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "AR(1) standard deviations must be positive and finite".into(),
            ))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ar1Model {
    params: Ar1Params,
    theta: [f64; 4],
}

pub fn make_ar1(params: Ar1Params) -> Result<Ar1Model> {
    params.validate()?;
    Ok(Ar1Model {
        params,
        theta: [params.eta, params.init_sd, params.trans_sd, params.obs_sd],
    })
}

impl Ar1Model {
    pub fn params(&self) -> &Ar1Params {
        &self.params
    }
}

impl StateSpaceModel for Ar1Model {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn init_state(&self, noise: &[f64], out: &mut [f64]) {
        out[0] = self.params.init_sd * noise[0];
    }

    fn transition(&self, state: &[f64], noise: &[f64], out: &mut [f64]) {
        out[0] = self.params.eta * state[0] + self.params.trans_sd * noise[0];
    }

    fn log_obs_density(&self, obs: &[f64], state: &[f64]) -> f64 {
        normal_logpdf(obs[0] - state[0], self.params.obs_sd)
    }

    fn log_obs_bound(&self) -> Option<f64> {
        // sup_y g(y | x) is the normal density at its mode.
        Some(-0.5 * LN_2PI - self.params.obs_sd.ln())
    }

    fn log_transition_density(&self, to: &[f64], from: &[f64]) -> Option<f64> {
        Some(normal_logpdf(
            to[0] - self.params.eta * from[0],
            self.params.trans_sd,
        ))
    }

    fn aux_proposal(&self) -> Option<&dyn AuxProposal> {
        Some(self)
    }

    fn sample_obs(&self, state: &[f64], noise: &[f64], out: &mut [f64]) {
        out[0] = state[0] + self.params.obs_sd * noise[0];
    }
}

/// Fully adapted proposal: `q = p(x_t | x_{t-1}, y_t)` with first-stage
/// weight `nu = p(y_t | x_{t-1})`. In this linear Gaussian model both are
/// available in closed form, and the residual particle weights are constant.
impl AuxProposal for Ar1Model {
    fn sample(&self, state_from: &[f64], obs_next: &[f64], noise: &[f64], out: &mut [f64]) {
        let (mean, var) = self.conditional(state_from[0], obs_next[0]);
        out[0] = mean + var.sqrt() * noise[0];
    }

    fn log_density(&self, state_to: &[f64], state_from: &[f64], obs_next: &[f64]) -> f64 {
        let (mean, var) = self.conditional(state_from[0], obs_next[0]);
        normal_logpdf(state_to[0] - mean, var.sqrt())
    }

    fn log_lookahead(&self, state_from: &[f64], obs_next: &[f64]) -> f64 {
        let predictive_var =
            self.params.trans_sd * self.params.trans_sd + self.params.obs_sd * self.params.obs_sd;
        normal_logpdf(
            obs_next[0] - self.params.eta * state_from[0],
            predictive_var.sqrt(),
        )
    }
}

impl Ar1Model {
    fn conditional(&self, from: f64, y: f64) -> (f64, f64) {
        let q = self.params.trans_sd * self.params.trans_sd;
        let r = self.params.obs_sd * self.params.obs_sd;
        let var = q * r / (q + r);
        let mean = var * (self.params.eta * from / q + y / r);
        (mean, var)
    }
}

/// Stylized model with a single highly informative observation: all
/// standard deviations 0.1 and the one observation `y_T = 1` given as data.
pub fn make_unlikely(params: &Ar1Params, horizon: usize) -> Result<(Ar1Model, ObservationRecord)> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let model = make_ar1(*params)?;
    let mut record = ObservationRecord::new(horizon, 1);
    record.set(horizon, vec![1.0])?;
    Ok((model, record))
}

/// Convenience constructor for the canonical instance (`T = 10`).
pub fn make_unlikely_default() -> (Ar1Model, ObservationRecord) {
    make_unlikely(&Ar1Params::unlikely(), 10).expect("canonical parameters are valid")
}

/// The model cast as a linear Gaussian spec for the Kalman oracle.
pub fn ar1_linear_gaussian(params: &Ar1Params) -> LinearGaussianSpec {
    LinearGaussianSpec::new(
        Matrix::scalar(params.eta),
        Matrix::scalar(params.trans_sd * params.trans_sd),
        Matrix::scalar(1.0),
        Matrix::scalar(params.obs_sd * params.obs_sd),
        vec![0.0],
        Matrix::scalar(params.init_sd * params.init_sd),
    )
    .expect("validated parameters give a valid spec")
}
