//! Built-in state-space models and synthetic data generation.

mod ar1;
mod lotka_volterra;

pub use ar1::{
    ar1_linear_gaussian, make_ar1, make_unlikely, make_unlikely_default, Ar1Model, Ar1Params,
};
pub use lotka_volterra::{make_lotka_volterra, LotkaVolterraModel, LotkaVolterraParams};

use crate::error::{Error, Result};
use crate::ssm::{ObservationRecord, StateSpaceModel, Trajectory};
use crate::stream::{tag, KeyedStream};

/// Simulate a latent path `x_{0:T}` and observations `y_{1:T}` from a model.
///
/// Deterministic given `seed`: the state and observation noise come from
/// separate keyed streams, so regenerating with the same seed reproduces the
/// record bit-for-bit.
pub fn generate_data(
    model: &dyn StateSpaceModel,
    horizon: usize,
    seed: u64,
) -> Result<(Trajectory, ObservationRecord)> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let mut state_rng = KeyedStream::from_key(&[tag::DATA, seed]);
    let mut obs_rng = KeyedStream::from_key(&[tag::OBS, seed]);

    let dx = model.state_dim();
    let mut traj = Trajectory::zeros(horizon + 1, dx);
    let mut record = ObservationRecord::new(horizon, model.obs_dim());
    let mut noise = vec![0.0; model.noise_dim()];
    let mut obs_noise = vec![0.0; model.obs_dim()];

    for u in noise.iter_mut() {
        *u = state_rng.normal();
    }
    let mut current = vec![0.0; dx];
    model.init_state(&noise, &mut current);
    if !current.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    traj.state_mut(0).copy_from_slice(&current);

    let mut next = vec![0.0; dx];
    let mut y = vec![0.0; model.obs_dim()];
    for t in 1..=horizon {
        for u in noise.iter_mut() {
            *u = state_rng.normal();
        }
        model.transition(&current, &noise, &mut next);
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteState { step: t });
        }
        traj.state_mut(t).copy_from_slice(&next);
        current.copy_from_slice(&next);

        for u in obs_noise.iter_mut() {
            *u = obs_rng.normal();
        }
        model.sample_obs(&current, &obs_noise, &mut y);
        record.set(t, y.clone())?;
    }
    Ok((traj, record))
}
