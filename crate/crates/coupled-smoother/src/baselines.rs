//! Comparison smoothers: plain particle-filter trajectory smoothing and
//! fixed-lag smoothing.
//!
//! Both are biased for finite `N` (severely so under highly informative
//! observations), but cheap and low-variance; they are run at matched cost to
//! put the unbiased estimator's variance in context. Cost is reported in the
//! same propagation units as the coupled estimator: one bootstrap filter pass
//! costs `N * T` units.

use serde::{Deserialize, Serialize};

use crate::cpf::pf_system;
use crate::error::{Error, Result};
use crate::rhee_glynn::{summarize, FailureReason, ReplicateSummary, UnbiasedReport};
use crate::ssm::{ObservationRecord, StateSpaceModel, TestFunction};
use crate::stream::{replicate_stream, KeyedStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedLagConfig {
    /// Smoothing marginals at time `t` are read from the filter at time
    /// `min(t + lag, T)` by tracing ancestry back. `lag = 0` returns
    /// filtering means; `lag >= T` reproduces the full-trajectory smoother.
    pub lag: usize,
    pub n_particles: usize,
}

impl FixedLagConfig {
    fn validate(&self, horizon: usize) -> Result<()> {
        if self.lag > horizon {
            return Err(Error::Config(format!(
                "lag {} exceeds horizon {horizon}",
                self.lag
            )));
        }
        Ok(())
    }
}

/// Trajectory-based smoothing estimate from one bootstrap particle filter:
/// the weighted average of `h` over the surviving trajectories.
pub fn pf_smoother(
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    n_particles: usize,
    h: &TestFunction,
    rng: &mut KeyedStream,
) -> Result<Vec<f64>> {
    h.validate(obs.horizon(), model.state_dim())?;
    let system = pf_system(model, obs, n_particles, rng)?;
    Ok(system.rao_blackwell(h).value)
}

/// Fixed-lag smoothing estimate from one bootstrap particle filter.
///
/// For each `t` the marginal is estimated at filter time `s = min(t + lag, T)`
/// with ancestry traced back `s - t` steps (truncated genealogy).
pub fn fixed_lag_smoother(
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    cfg: &FixedLagConfig,
    h: &TestFunction,
    rng: &mut KeyedStream,
) -> Result<Vec<f64>> {
    let horizon = obs.horizon();
    cfg.validate(horizon)?;
    h.validate(horizon, model.state_dim())?;
    let system = pf_system(model, obs, cfg.n_particles, rng)?;
    if cfg.lag >= horizon {
        // Full lag degenerates to the trajectory smoother, exactly.
        return Ok(system.rao_blackwell(h).value);
    }

    let n = system.n_particles();
    let d = system.state_dim();
    let mut means = vec![0.0; (horizon + 1) * d];
    let mut mass = vec![0.0; n];
    let mut next_mass = vec![0.0; n];
    for t in 0..=horizon {
        let s = (t + cfg.lag).min(horizon);
        mass.copy_from_slice(system.posterior_weights(s).normalized());
        for level in ((t + 1)..=s).rev() {
            next_mass.iter_mut().for_each(|m| *m = 0.0);
            for j in 0..n {
                next_mass[system.parent(level, j)] += mass[j];
            }
            std::mem::swap(&mut mass, &mut next_mass);
        }
        let block = &mut means[t * d..(t + 1) * d];
        for j in 0..n {
            let w = mass[j];
            if w == 0.0 {
                continue;
            }
            let state = system.state(t, j);
            for (o, x) in block.iter_mut().zip(state) {
                *o += w * x;
            }
        }
    }
    Ok(h.project_path_means(&means, horizon, d))
}

/// Cost of one baseline filter pass, in the coupled estimator's units.
pub fn baseline_cost_units(n_particles: usize, horizon: usize) -> f64 {
    (n_particles * horizon) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    ParticleFilter,
    FixedLag { lag: usize },
}

impl BaselineKind {
    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::ParticleFilter => "pf",
            BaselineKind::FixedLag { .. } => "fixed_lag",
        }
    }
}

/// Independent baseline replicates with the same keyed-randomness contract as
/// the unbiased runner; reports carry no meeting time and the per-pass cost.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline_replicates(
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    kind: BaselineKind,
    n_particles: usize,
    h: &TestFunction,
    r: usize,
    master_seed: u64,
    alpha: f64,
    workers: usize,
) -> Result<BaselineRun> {
    if r == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    if let BaselineKind::FixedLag { lag } = kind {
        FixedLagConfig { lag, n_particles }.validate(obs.horizon())?;
    }
    h.validate(obs.horizon(), model.state_dim())?;

    let run_one = |rep: usize| -> Result<UnbiasedReport> {
        let mut rng = replicate_stream(master_seed, rep as u64);
        let value = match kind {
            BaselineKind::ParticleFilter => pf_smoother(model, obs, n_particles, h, &mut rng),
            BaselineKind::FixedLag { lag } => fixed_lag_smoother(
                model,
                obs,
                &FixedLagConfig { lag, n_particles },
                h,
                &mut rng,
            ),
        };
        let cost = baseline_cost_units(n_particles, obs.horizon());
        match value {
            Ok(value) => Ok(UnbiasedReport {
                value,
                tau: None,
                cost_units: cost,
                sweep_count: 1,
                failed: None,
            }),
            Err(err) => match failure_of(&err) {
                Some(reason) => Ok(UnbiasedReport {
                    value: Vec::new(),
                    tau: None,
                    cost_units: cost,
                    sweep_count: 1,
                    failed: Some(reason),
                }),
                None => Err(err),
            },
        }
    };
    let reports = crate::rhee_glynn::map_replicates(r, workers, run_one)?;
    let summary = summarize(&reports, alpha)?;
    Ok(BaselineRun { reports, summary })
}

fn failure_of(err: &Error) -> Option<FailureReason> {
    match err {
        Error::DegenerateWeights { step } => Some(FailureReason::DegenerateWeights { step: *step }),
        Error::NonFiniteState { step } => Some(FailureReason::NonFiniteState { step: *step }),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub reports: Vec<UnbiasedReport>,
    pub summary: ReplicateSummary,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{generate_data, make_ar1, Ar1Params};

    #[test]
    fn one_particle_is_rejected() {
        let model = make_ar1(Ar1Params::default()).unwrap();
        let (_, obs) = generate_data(&model, 5, 1).unwrap();
        let mut rng = replicate_stream(0, 0);
        assert!(pf_smoother(&model, &obs, 1, &TestFunction::Path, &mut rng).is_err());
    }

    #[test]
    fn full_lag_equals_the_trajectory_smoother_exactly() {
        let model = make_ar1(Ar1Params::default()).unwrap();
        let (_, obs) = generate_data(&model, 12, 4).unwrap();
        let h = TestFunction::Path;
        let a = pf_smoother(&model, &obs, 64, &h, &mut replicate_stream(9, 3)).unwrap();
        let cfg = FixedLagConfig {
            lag: 12,
            n_particles: 64,
        };
        let b = fixed_lag_smoother(&model, &obs, &cfg, &h, &mut replicate_stream(9, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn excessive_lag_is_rejected() {
        let model = make_ar1(Ar1Params::default()).unwrap();
        let (_, obs) = generate_data(&model, 5, 2).unwrap();
        let cfg = FixedLagConfig {
            lag: 6,
            n_particles: 16,
        };
        let mut rng = replicate_stream(1, 1);
        assert!(fixed_lag_smoother(&model, &obs, &cfg, &TestFunction::Path, &mut rng).is_err());
    }

    #[test]
    fn baseline_replicates_summarize_and_report_cost() {
        let model = make_ar1(Ar1Params::default()).unwrap();
        let (_, obs) = generate_data(&model, 8, 6).unwrap();
        let run = run_baseline_replicates(
            &model,
            &obs,
            BaselineKind::ParticleFilter,
            32,
            &TestFunction::Coord { coord: 0 },
            20,
            77,
            0.05,
            0,
        )
        .unwrap();
        assert_eq!(run.reports.len(), 20);
        for report in &run.reports {
            assert_eq!(report.cost_units, baseline_cost_units(32, 8));
            assert!(report.tau.is_none());
        }
        assert_eq!(run.summary.mean.len(), 9);
    }
}
