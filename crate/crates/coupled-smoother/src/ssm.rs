//! State-space model abstraction, trajectories and observation records.
//!
//! Models are given in random-function form: a deterministic initializer
//! `M(u, θ)` and transition `F(x, u, θ)` driven by standard normal noise
//! vectors `u`, plus a measurement log-density `g(y | x, θ)`. Writing the
//! dynamics as pure functions of exogenous noise is what makes
//! common-random-number coupling possible: feeding two systems the same `u`
//! from a [`crate::stream::NoiseTable`] propagates matched particle pairs
//! through bit-identical computations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A state-space model with fixed parameter vector θ.
///
/// Implementations must be pure: equal inputs produce bit-identical outputs,
/// and methods must be callable concurrently from several replicate workers.
pub trait StateSpaceModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    /// Length of the noise vector consumed by `init_state` and `transition`.
    fn noise_dim(&self) -> usize;
    /// The fixed parameter vector θ for this run.
    fn theta(&self) -> &[f64];

    /// `M(u, θ)`: initial state from a standard normal noise vector.
    fn init_state(&self, noise: &[f64], out: &mut [f64]);

    /// `F(x, u, θ)`: next state from the current state and a noise vector.
    ///
    /// May write non-finite values on numerical blow-up (e.g. ODE overflow);
    /// callers check finiteness and surface a propagation error.
    fn transition(&self, state: &[f64], noise: &[f64], out: &mut [f64]);

    /// `log g(y | x, θ)`.
    fn log_obs_density(&self, obs: &[f64], state: &[f64]) -> f64;

    /// Declared upper bound `log ḡ` on the measurement log-density, when the
    /// model has one (`None` marks it unavailable).
    fn log_obs_bound(&self) -> Option<f64> {
        None
    }

    /// `log f(x' | x, θ)` when tractable; `None` forbids ancestor sampling.
    fn log_transition_density(&self, _to: &[f64], _from: &[f64]) -> Option<f64> {
        None
    }

    /// Proposal for auxiliary-filter mode, when the model provides one.
    fn aux_proposal(&self) -> Option<&dyn AuxProposal> {
        None
    }

    /// Sample an observation `y | x` using standard normal noise of length
    /// `obs_dim` (used by data generation).
    fn sample_obs(&self, state: &[f64], noise: &[f64], out: &mut [f64]);
}

/// Observation-aware proposal for auxiliary particle filters.
///
/// `sample` draws `x_t ~ q(· | x_{t-1}, y_t)` from a noise vector,
/// `log_density` evaluates `log q`, and `log_lookahead` is the first-stage
/// weight `log ν(x_{t-1}, y_t)` folded into the resampling weights one step
/// ahead. For a fully adapted proposal, `q = p(x_t | x_{t-1}, y_t)` and
/// `ν = p(y_t | x_{t-1})`, and the residual particle weights are constant.
pub trait AuxProposal: Send + Sync {
    fn sample(&self, state_from: &[f64], obs_next: &[f64], noise: &[f64], out: &mut [f64]);
    fn log_density(&self, state_to: &[f64], state_from: &[f64], obs_next: &[f64]) -> f64;
    fn log_lookahead(&self, state_from: &[f64], obs_next: &[f64]) -> f64;
}

/// Checked wrapper around [`StateSpaceModel::transition`].
pub fn propagate(model: &dyn StateSpaceModel, state: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if state.len() != model.state_dim() {
        return Err(Error::Dimension {
            what: "state",
            expected: model.state_dim(),
            got: state.len(),
        });
    }
    if noise.len() != model.noise_dim() {
        return Err(Error::Dimension {
            what: "noise",
            expected: model.noise_dim(),
            got: noise.len(),
        });
    }
    let mut out = vec![0.0; model.state_dim()];
    model.transition(state, noise, &mut out);
    Ok(out)
}

/// A latent path `x_{0:T}`, stored flat with `len = T + 1` states.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dim: usize,
    states: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(len: usize, dim: usize) -> Self {
        assert!(len > 0 && dim > 0);
        Trajectory {
            dim,
            states: vec![0.0; len * dim],
        }
    }

    pub fn from_flat(dim: usize, states: Vec<f64>) -> Result<Self> {
        if dim == 0 || states.is_empty() || !states.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "trajectory storage of {} values is not a multiple of dim {}",
                states.len(),
                dim
            )));
        }
        Ok(Trajectory { dim, states })
    }

    /// Number of time points `T + 1`.
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Time horizon `T`.
    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.dim..(t + 1) * self.dim]
    }

    pub fn state_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.states[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn all_finite(&self) -> bool {
        self.states.iter().all(|x| x.is_finite())
    }
}

/// Observations `y_t` for `t = 1..=T`, with gaps allowed.
///
/// Slot `t = 0` never carries an observation; a model observed only at the
/// final time stores `None` everywhere else.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    obs_dim: usize,
    slots: Vec<Option<Vec<f64>>>,
}

impl ObservationRecord {
    /// An empty record over `t = 0..=horizon`.
    pub fn new(horizon: usize, obs_dim: usize) -> Self {
        assert!(obs_dim > 0);
        ObservationRecord {
            obs_dim,
            slots: vec![None; horizon + 1],
        }
    }

    /// Build from `(t, y_t)` pairs with strictly increasing time indices.
    pub fn from_pairs(horizon: usize, obs_dim: usize, pairs: &[(usize, Vec<f64>)]) -> Result<Self> {
        let mut rec = ObservationRecord::new(horizon, obs_dim);
        let mut last = 0usize;
        for (t, y) in pairs {
            if *t == 0 || *t > horizon {
                return Err(Error::IndexOutOfRange {
                    what: "observation time",
                    got: *t,
                    limit: horizon + 1,
                });
            }
            if *t <= last && last != 0 {
                return Err(Error::Config(
                    "observation times must be strictly increasing".into(),
                ));
            }
            rec.set(*t, y.clone())?;
            last = *t;
        }
        Ok(rec)
    }

    pub fn set(&mut self, t: usize, y: Vec<f64>) -> Result<()> {
        if t == 0 || t >= self.slots.len() {
            return Err(Error::IndexOutOfRange {
                what: "observation time",
                got: t,
                limit: self.slots.len(),
            });
        }
        if y.len() != self.obs_dim {
            return Err(Error::Dimension {
                what: "observation",
                expected: self.obs_dim,
                got: y.len(),
            });
        }
        self.slots[t] = Some(y);
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.slots.len() - 1
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// The observation at time `t`, if present.
    pub fn get(&self, t: usize) -> Option<&[f64]> {
        self.slots.get(t).and_then(|s| s.as_deref())
    }

    pub fn n_observed(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Write as CSV: header `t,y0,...`, one row per time `1..=T`, blank cells
    /// for missing observations.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "t")?;
        for c in 0..self.obs_dim {
            write!(out, ",y{c}")?;
        }
        writeln!(out)?;
        for t in 1..=self.horizon() {
            write!(out, "{t}")?;
            match self.get(t) {
                Some(y) => {
                    for v in y {
                        write!(out, ",{v}")?;
                    }
                }
                None => {
                    for _ in 0..self.obs_dim {
                        write!(out, ",")?;
                    }
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Parse the CSV format written by [`Self::write_csv`]. The horizon is
    /// the largest time index present; time indices must be strictly
    /// increasing and every present observation must fill all components.
    pub fn read_csv<R: std::io::BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty observation CSV".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::Config(format!(
                "observation CSV header must be t,y0,... (got {header:?})"
            )));
        }
        let obs_dim = cols.len() - 1;
        let mut pairs: Vec<(usize, Option<Vec<f64>>)> = Vec::new();
        let mut last_t = 0usize;
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != obs_dim + 1 {
                return Err(Error::Config(format!(
                    "row {}: expected {} fields, got {}",
                    row + 2,
                    obs_dim + 1,
                    fields.len()
                )));
            }
            let t: usize = fields[0]
                .parse()
                .map_err(|_| Error::Config(format!("row {}: bad time index", row + 2)))?;
            if t == 0 || t <= last_t {
                return Err(Error::Config(
                    "observation times must be strictly increasing and start at 1".into(),
                ));
            }
            last_t = t;
            let blanks = fields[1..].iter().filter(|f| f.trim().is_empty()).count();
            let y = if blanks == obs_dim {
                None
            } else if blanks == 0 {
                let mut y = Vec::with_capacity(obs_dim);
                for f in &fields[1..] {
                    y.push(f.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("row {}: bad observation value", row + 2))
                    })?);
                }
                Some(y)
            } else {
                return Err(Error::Config(format!(
                    "row {}: observations must be fully present or fully blank",
                    row + 2
                )));
            };
            pairs.push((t, y));
        }
        if last_t == 0 {
            return Err(Error::Config("observation CSV has no rows".into()));
        }
        let mut rec = ObservationRecord::new(last_t, obs_dim);
        for (t, y) in pairs {
            if let Some(y) = y {
                rec.set(t, y)?;
            }
        }
        Ok(rec)
    }
}

/// Built-in test functions `h(x_{0:T})` whose smoothing expectation is
/// estimated.
///
/// All built-ins are per-time marginals, which lets the Rao–Blackwellized
/// estimate be accumulated over the particle genealogy without materializing
/// every trajectory. Values are laid out time-major: `Path` on a
/// two-dimensional state yields `[x_0[0], x_0[1], x_1[0], ...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TestFunction {
    /// The identity on paths: every coordinate of every state.
    Path,
    /// One state coordinate at every time: `t -> x_t[coord]`.
    Coord { coord: usize },
    /// A single state coordinate at a single time.
    StateAt { t: usize, coord: usize },
}

impl TestFunction {
    pub fn validate(&self, horizon: usize, state_dim: usize) -> Result<()> {
        let coord = match self {
            TestFunction::Path => return Ok(()),
            TestFunction::Coord { coord } => *coord,
            TestFunction::StateAt { t, coord } => {
                if *t > horizon {
                    return Err(Error::IndexOutOfRange {
                        what: "test function time",
                        got: *t,
                        limit: horizon + 1,
                    });
                }
                *coord
            }
        };
        if coord >= state_dim {
            return Err(Error::IndexOutOfRange {
                what: "test function coordinate",
                got: coord,
                limit: state_dim,
            });
        }
        Ok(())
    }

    /// Output dimension for a given horizon and state dimension.
    pub fn dim(&self, horizon: usize, state_dim: usize) -> usize {
        match self {
            TestFunction::Path => (horizon + 1) * state_dim,
            TestFunction::Coord { .. } => horizon + 1,
            TestFunction::StateAt { .. } => 1,
        }
    }

    /// Evaluate on a single trajectory.
    pub fn eval(&self, traj: &Trajectory) -> Vec<f64> {
        match self {
            TestFunction::Path => traj.as_flat().to_vec(),
            TestFunction::Coord { coord } => {
                (0..traj.len()).map(|t| traj.state(t)[*coord]).collect()
            }
            TestFunction::StateAt { t, coord } => vec![traj.state(*t)[*coord]],
        }
    }

    /// Project per-time weighted state means (time-major, `(T+1) * d` values)
    /// onto this function's output layout. Used by the Rao–Blackwellized
    /// estimator, which computes exactly those means over the genealogy.
    pub(crate) fn project_path_means(
        &self,
        means: &[f64],
        horizon: usize,
        state_dim: usize,
    ) -> Vec<f64> {
        debug_assert_eq!(means.len(), (horizon + 1) * state_dim);
        match self {
            TestFunction::Path => means.to_vec(),
            TestFunction::Coord { coord } => (0..=horizon)
                .map(|t| means[t * state_dim + coord])
                .collect(),
            TestFunction::StateAt { t, coord } => vec![means[t * state_dim + coord]],
        }
    }
}
