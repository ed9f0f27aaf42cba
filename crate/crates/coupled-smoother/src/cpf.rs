//! Conditional particle filter kernels and their coupling.
//!
//! A conditional particle filter (CPF) sweep runs a particle filter with one
//! slot frozen to a reference trajectory and selects a new trajectory at the
//! end; iterating sweeps defines a Markov kernel that leaves the smoothing
//! distribution invariant. The coupled sweep (CCPF) advances two such systems
//! jointly: free particles consume the same noise table, ancestors are drawn
//! from a maximal coupling of the two weight vectors, and the final selection
//! is coupled as well, so two chains can produce bit-identical trajectories in
//! finitely many steps. Once the references coincide, every subsequent coupled
//! sweep reproduces identical systems exactly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resampling::{
    coupled_multinomial, maximal_coupling_pair, multinomial_ancestors, shared_uniform_pair,
    WeightVector,
};
use crate::ssm::{AuxProposal, ObservationRecord, StateSpaceModel, TestFunction, Trajectory};
use crate::stream::{KeyedStream, NoiseTable};

/// Below this many particles the propagation loop stays sequential; above it
/// the `parallel` feature spreads the loop across the rayon pool. Output is
/// bit-identical either way since every slot derives its noise from the table.
#[cfg(feature = "parallel")]
const PAR_MIN_PARTICLES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// Propagate from the model transition; weight by `g(y_t | x_t)`.
    Bootstrap,
    /// Propagate from the model's observation-aware proposal with first-stage
    /// lookahead weights folded into the resampling distribution.
    Auxiliary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpfOptions {
    pub n_particles: usize,
    pub ancestor_sampling: bool,
    pub proposal: Proposal,
}

impl CpfOptions {
    pub fn new(n_particles: usize) -> Self {
        CpfOptions {
            n_particles,
            ancestor_sampling: false,
            proposal: Proposal::Bootstrap,
        }
    }

    pub fn with_ancestor_sampling(mut self, on: bool) -> Self {
        self.ancestor_sampling = on;
        self
    }

    pub fn with_proposal(mut self, proposal: Proposal) -> Self {
        self.proposal = proposal;
        self
    }

    /// Check the options against a model's capabilities.
    pub fn validate(&self, model: &dyn StateSpaceModel) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config("need at least 2 particles".into()));
        }
        let d = model.state_dim();
        let has_transition_density = model
            .log_transition_density(&vec![0.0; d], &vec![0.0; d])
            .is_some();
        if self.ancestor_sampling && !has_transition_density {
            return Err(Error::Config(
                "ancestor sampling requires a tractable transition density".into(),
            ));
        }
        if self.proposal == Proposal::Auxiliary {
            if model.aux_proposal().is_none() {
                return Err(Error::Config(
                    "auxiliary proposal requested but the model does not provide one".into(),
                ));
            }
            if !has_transition_density {
                return Err(Error::Config(
                    "auxiliary mode requires a tractable transition density for the residual weights"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// One full particle system: states, ancestry and weights for every step.
///
/// Slot `n - 1` carries the reference trajectory during a conditional sweep.
/// Memory is `O(N T)`; paths are reconstructed by tracing ancestors backwards.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    n_particles: usize,
    state_dim: usize,
    horizon: usize,
    states: Vec<f64>,
    ancestors: Vec<u32>,
    post_weights: Vec<WeightVector>,
    resamp_weights: Vec<WeightVector>,
}

impl ParticleSystem {
    fn new(n: usize, d: usize, horizon: usize) -> Self {
        ParticleSystem {
            n_particles: n,
            state_dim: d,
            horizon,
            states: vec![0.0; (horizon + 1) * n * d],
            ancestors: vec![0; horizon * n],
            post_weights: Vec::with_capacity(horizon + 1),
            resamp_weights: Vec::with_capacity(horizon + 1),
        }
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state(&self, t: usize, j: usize) -> &[f64] {
        let base = (t * self.n_particles + j) * self.state_dim;
        &self.states[base..base + self.state_dim]
    }

    /// Ancestor index `a_{t-1}^j` of particle `j` at time `t >= 1`.
    pub fn parent(&self, t: usize, j: usize) -> usize {
        self.ancestors[(t - 1) * self.n_particles + j] as usize
    }

    /// Normalized posterior weights at step `t` (used for selection and
    /// Rao–Blackwellization).
    pub fn posterior_weights(&self, t: usize) -> &WeightVector {
        &self.post_weights[t]
    }

    /// Normalized resampling weights at step `t` (posterior weights times the
    /// auxiliary lookahead, when one applies).
    pub fn resampling_weights(&self, t: usize) -> &WeightVector {
        &self.resamp_weights[t]
    }

    /// Reconstruct the trajectory ending in slot `idx` at the final time.
    pub fn trace_back(&self, idx: usize) -> Trajectory {
        let mut traj = Trajectory::zeros(self.horizon + 1, self.state_dim);
        let mut b = idx;
        for t in (0..=self.horizon).rev() {
            traj.state_mut(t).copy_from_slice(self.state(t, b));
            if t > 0 {
                b = self.parent(t, b);
            }
        }
        traj
    }

    /// Per-time weighted state means over the surviving genealogy,
    /// `Σ_j w_T^j x_t^{b_t(j)}`, laid out time-major.
    ///
    /// This is the conditional expectation of the selected trajectory given
    /// the system, computed by pushing the final weights backwards through the
    /// ancestry instead of materializing all `N` paths.
    pub fn weighted_path_means(&self) -> Vec<f64> {
        let n = self.n_particles;
        let d = self.state_dim;
        let mut out = vec![0.0; (self.horizon + 1) * d];
        let mut mass = self.post_weights[self.horizon].normalized().to_vec();
        let mut next_mass = vec![0.0; n];
        for t in (0..=self.horizon).rev() {
            let block = &mut out[t * d..(t + 1) * d];
            for j in 0..n {
                let w = mass[j];
                if w == 0.0 {
                    continue;
                }
                let s = self.state(t, j);
                for (o, x) in block.iter_mut().zip(s) {
                    *o += w * x;
                }
            }
            if t > 0 {
                next_mass.iter_mut().for_each(|m| *m = 0.0);
                for j in 0..n {
                    next_mass[self.parent(t, j)] += mass[j];
                }
                std::mem::swap(&mut mass, &mut next_mass);
            }
        }
        out
    }

    /// Rao–Blackwellized estimate of a test function over this system.
    pub fn rao_blackwell(&self, h: &TestFunction) -> RaoBlackwellEstimate {
        let means = self.weighted_path_means();
        RaoBlackwellEstimate {
            value: h.project_path_means(&means, self.horizon, self.state_dim),
        }
    }
}

/// `Σ_j w_T^j h(x_{0:T}^j)`: the conditional expectation of `h` of the
/// selected trajectory given the particle system.
#[derive(Clone, Debug, PartialEq)]
pub struct RaoBlackwellEstimate {
    pub value: Vec<f64>,
}

impl RaoBlackwellEstimate {
    fn empty() -> Self {
        RaoBlackwellEstimate { value: Vec::new() }
    }
}

/// Output of one coupled sweep.
#[derive(Clone, Debug)]
pub struct CcpfOutput {
    pub path: Trajectory,
    pub path_tilde: Trajectory,
    pub rb: RaoBlackwellEstimate,
    pub rb_tilde: RaoBlackwellEstimate,
    /// Whether the two selected trajectories are identical.
    pub met: bool,
}

enum SweepNoise<'a> {
    /// Keyed per `(t, slot)`: both systems of a coupled sweep share it.
    Table(&'a NoiseTable),
    /// Drawn sequentially from the sweep's stream (initial particle filters).
    FromRng,
}

fn at_step(err: Error, step: usize) -> Error {
    match err {
        Error::DegenerateWeights { .. } => Error::DegenerateWeights { step },
        other => other,
    }
}

fn check_finite(block: &[f64], step: usize) -> Result<()> {
    if block.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step })
    }
}

struct SweepInputs<'a> {
    model: &'a dyn StateSpaceModel,
    obs: &'a ObservationRecord,
    opts: &'a CpfOptions,
    aux: Option<&'a dyn AuxProposal>,
}

impl<'a> SweepInputs<'a> {
    fn prepare(
        model: &'a dyn StateSpaceModel,
        obs: &'a ObservationRecord,
        opts: &'a CpfOptions,
        reference: Option<&Trajectory>,
    ) -> Result<Self> {
        opts.validate(model)?;
        if obs.obs_dim() != model.obs_dim() {
            return Err(Error::Dimension {
                what: "observation record",
                expected: model.obs_dim(),
                got: obs.obs_dim(),
            });
        }
        if let Some(r) = reference {
            if r.len() != obs.horizon() + 1 {
                return Err(Error::Dimension {
                    what: "reference trajectory",
                    expected: obs.horizon() + 1,
                    got: r.len(),
                });
            }
            if r.dim() != model.state_dim() {
                return Err(Error::Dimension {
                    what: "reference state",
                    expected: model.state_dim(),
                    got: r.dim(),
                });
            }
        }
        let aux = if opts.proposal == Proposal::Auxiliary {
            model.aux_proposal()
        } else {
            None
        };
        Ok(SweepInputs {
            model,
            obs,
            opts,
            aux,
        })
    }

    /// First-stage lookahead weights for resampling into step `t + 1`, folded
    /// onto the posterior log-weights.
    fn resampling_from(
        &self,
        post_logs: &[f64],
        states_t: &[f64],
        t: usize,
        post: &WeightVector,
    ) -> Result<WeightVector> {
        let horizon = self.obs.horizon();
        if t >= horizon {
            return Ok(post.clone());
        }
        match (self.aux, self.obs.get(t + 1)) {
            (Some(aux), Some(y_next)) => {
                let d = self.model.state_dim();
                let logs: Vec<f64> = post_logs
                    .iter()
                    .enumerate()
                    .map(|(j, lw)| lw + aux.log_lookahead(&states_t[j * d..(j + 1) * d], y_next))
                    .collect();
                WeightVector::from_log(logs).map_err(|e| at_step(e, t))
            }
            _ => Ok(post.clone()),
        }
    }

    /// Posterior log-weight of particle `j` after propagation at step `t`.
    fn posterior_log_weight(
        &self,
        y_t: Option<&[f64]>,
        particle: &[f64],
        parent: &[f64],
    ) -> f64 {
        match y_t {
            None => 0.0,
            Some(y) => {
                let log_g = self.model.log_obs_density(y, particle);
                match self.aux {
                    None => log_g,
                    Some(aux) => {
                        let log_f = self
                            .model
                            .log_transition_density(particle, parent)
                            .expect("validated: auxiliary mode requires transition density");
                        log_g + log_f
                            - aux.log_density(particle, parent, y)
                            - aux.log_lookahead(parent, y)
                    }
                }
            }
        }
    }

    fn posterior_weights(
        &self,
        t: usize,
        prev: &[f64],
        cur: &[f64],
        anc: &[u32],
        n: usize,
    ) -> Result<(Vec<f64>, WeightVector)> {
        let d = self.model.state_dim();
        let y_t = self.obs.get(t);
        let logs: Vec<f64> = (0..n)
            .map(|j| {
                let parent = &prev[anc[j] as usize * d..(anc[j] as usize + 1) * d];
                self.posterior_log_weight(y_t, &cur[j * d..(j + 1) * d], parent)
            })
            .collect();
        let wv = WeightVector::from_log(logs.clone()).map_err(|e| at_step(e, t))?;
        Ok((logs, wv))
    }

    /// Ancestor-sampling distribution for the reference slot: posterior weight
    /// times the transition density to the frozen next reference state.
    fn ancestor_sampling_weights(
        &self,
        post_prev: &WeightVector,
        prev: &[f64],
        ref_state_t: &[f64],
        t: usize,
        n: usize,
    ) -> Result<WeightVector> {
        let d = self.model.state_dim();
        let logs: Vec<f64> = (0..n)
            .map(|j| {
                post_prev.log_weights()[j]
                    + self
                        .model
                        .log_transition_density(ref_state_t, &prev[j * d..(j + 1) * d])
                        .expect("validated: ancestor sampling requires transition density")
            })
            .collect();
        WeightVector::from_log(logs).map_err(|e| at_step(e, t))
    }
}

/// Propagate free slots `0..n_free` of one system into `cur`.
fn propagate_free_slots(
    inputs: &SweepInputs,
    y_t: Option<&[f64]>,
    noise: &SweepNoise,
    rng: &mut KeyedStream,
    t: usize,
    prev: &[f64],
    cur: &mut [f64],
    anc: &[u32],
    n_free: usize,
) {
    let model = inputs.model;
    let d = model.state_dim();
    let aux_with_obs = match (inputs.aux, y_t) {
        (Some(aux), Some(y)) => Some((aux, y)),
        _ => None,
    };
    let step_one = |j: usize, out: &mut [f64], buf: &mut [f64]| {
        let parent = &prev[anc[j] as usize * d..(anc[j] as usize + 1) * d];
        match aux_with_obs {
            Some((aux, y)) => aux.sample(parent, y, buf, out),
            None => model.transition(parent, buf, out),
        }
    };
    match noise {
        SweepNoise::Table(table) => {
            #[cfg(feature = "parallel")]
            if n_free >= PAR_MIN_PARTICLES {
                cur.par_chunks_mut(d)
                    .take(n_free)
                    .enumerate()
                    .for_each_init(
                        || vec![0.0; model.noise_dim()],
                        |buf, (j, out)| {
                            table.fill(t, j, buf);
                            step_one(j, out, buf);
                        },
                    );
                return;
            }
            let mut buf = vec![0.0; model.noise_dim()];
            for (j, out) in cur.chunks_mut(d).take(n_free).enumerate() {
                table.fill(t, j, &mut buf);
                step_one(j, out, &mut buf);
            }
        }
        SweepNoise::FromRng => {
            let mut buf = vec![0.0; model.noise_dim()];
            for (j, out) in cur.chunks_mut(d).take(n_free).enumerate() {
                for u in buf.iter_mut() {
                    *u = rng.normal();
                }
                step_one(j, out, &mut buf);
            }
        }
    }
}

/// Propagate free slots of both coupled systems with shared noise.
#[allow(clippy::too_many_arguments)]
fn propagate_free_slots_coupled(
    inputs: &SweepInputs,
    y_t: Option<&[f64]>,
    table: &NoiseTable,
    t: usize,
    prev_a: &[f64],
    prev_b: &[f64],
    cur_a: &mut [f64],
    cur_b: &mut [f64],
    anc_a: &[u32],
    anc_b: &[u32],
    n_free: usize,
) {
    let model = inputs.model;
    let d = model.state_dim();
    let aux_with_obs = match (inputs.aux, y_t) {
        (Some(aux), Some(y)) => Some((aux, y)),
        _ => None,
    };
    let step_pair = |j: usize, out_a: &mut [f64], out_b: &mut [f64], buf: &mut [f64]| {
        table.fill(t, j, buf);
        let parent_a = &prev_a[anc_a[j] as usize * d..(anc_a[j] as usize + 1) * d];
        let parent_b = &prev_b[anc_b[j] as usize * d..(anc_b[j] as usize + 1) * d];
        match aux_with_obs {
            Some((aux, y)) => {
                aux.sample(parent_a, y, buf, out_a);
                aux.sample(parent_b, y, buf, out_b);
            }
            None => {
                model.transition(parent_a, buf, out_a);
                model.transition(parent_b, buf, out_b);
            }
        }
    };
    #[cfg(feature = "parallel")]
    if n_free >= PAR_MIN_PARTICLES {
        cur_a
            .par_chunks_mut(d)
            .zip(cur_b.par_chunks_mut(d))
            .take(n_free)
            .enumerate()
            .for_each_init(
                || vec![0.0; model.noise_dim()],
                |buf, (j, (out_a, out_b))| step_pair(j, out_a, out_b, buf),
            );
        return;
    }
    let mut buf = vec![0.0; model.noise_dim()];
    for (j, (out_a, out_b)) in cur_a
        .chunks_mut(d)
        .zip(cur_b.chunks_mut(d))
        .take(n_free)
        .enumerate()
    {
        step_pair(j, out_a, out_b, &mut buf);
    }
}

/// Run one (conditional) particle filter sweep and return the full system.
fn run_single(
    inputs: &SweepInputs,
    reference: Option<&Trajectory>,
    noise: &SweepNoise,
    rng: &mut KeyedStream,
) -> Result<ParticleSystem> {
    let model = inputs.model;
    let obs = inputs.obs;
    let n = inputs.opts.n_particles;
    let d = model.state_dim();
    let horizon = obs.horizon();
    let n_free = if reference.is_some() { n - 1 } else { n };

    let mut system = ParticleSystem::new(n, d, horizon);

    // Step 0: fresh particles in the free slots, reference frozen in slot N.
    {
        let cur = &mut system.states[..n * d];
        propagate_init_slots(inputs, noise, rng, cur, n_free);
        if let Some(r) = reference {
            cur[(n - 1) * d..n * d].copy_from_slice(r.state(0));
        }
        check_finite(cur, 0)?;
    }
    let post0 = WeightVector::uniform(n);
    let resamp0 = inputs.resampling_from(
        &vec![0.0; n],
        &system.states[..n * d],
        0,
        &post0,
    )?;
    system.post_weights.push(post0);
    system.resamp_weights.push(resamp0);

    for t in 1..=horizon {
        // Ancestors for the free slots; the reference keeps (or redraws) its own.
        let mut anc = multinomial_ancestors(&system.resamp_weights[t - 1], n_free, rng)
            .map_err(|e| at_step(e, t))?;
        let (before, rest) = system.states.split_at_mut(t * n * d);
        let prev = &before[(t - 1) * n * d..];
        let cur = &mut rest[..n * d];
        if let Some(r) = reference {
            let ref_anc = if inputs.opts.ancestor_sampling {
                let as_weights = inputs.ancestor_sampling_weights(
                    &system.post_weights[t - 1],
                    prev,
                    r.state(t),
                    t,
                    n,
                )?;
                as_weights.sample_index(rng)
            } else {
                (n - 1) as u32
            };
            anc.push(ref_anc);
        }

        propagate_free_slots(inputs, obs.get(t), noise, rng, t, prev, cur, &anc, n_free);
        if let Some(r) = reference {
            cur[(n - 1) * d..n * d].copy_from_slice(r.state(t));
        }
        check_finite(cur, t)?;

        let (post_logs, post) = inputs.posterior_weights(t, prev, cur, &anc, n)?;
        let resamp = inputs.resampling_from(&post_logs, cur, t, &post)?;
        system.ancestors[(t - 1) * n..t * n].copy_from_slice(&anc);
        system.post_weights.push(post);
        system.resamp_weights.push(resamp);
    }
    Ok(system)
}

fn propagate_init_slots(
    inputs: &SweepInputs,
    noise: &SweepNoise,
    rng: &mut KeyedStream,
    cur: &mut [f64],
    n_free: usize,
) {
    let model = inputs.model;
    let d = model.state_dim();
    match noise {
        SweepNoise::Table(table) => {
            let mut buf = vec![0.0; model.noise_dim()];
            for (j, out) in cur.chunks_mut(d).take(n_free).enumerate() {
                table.fill(0, j, &mut buf);
                model.init_state(&buf, out);
            }
        }
        SweepNoise::FromRng => {
            let mut buf = vec![0.0; model.noise_dim()];
            for out in cur.chunks_mut(d).take(n_free) {
                for u in buf.iter_mut() {
                    *u = rng.normal();
                }
                model.init_state(&buf, out);
            }
        }
    }
}

/// One conditional particle filter sweep: returns the selected trajectory and
/// the Rao–Blackwellized estimate of `h` (empty when `h` is `None`), plus the
/// full particle system.
pub fn cpf_sweep_system(
    reference: &Trajectory,
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    opts: &CpfOptions,
    noise: &NoiseTable,
    rng: &mut KeyedStream,
    h: Option<&TestFunction>,
) -> Result<(Trajectory, RaoBlackwellEstimate, ParticleSystem)> {
    let inputs = SweepInputs::prepare(model, obs, opts, Some(reference))?;
    let system = run_single(&inputs, Some(reference), &SweepNoise::Table(noise), rng)?;
    let idx = system
        .posterior_weights(obs.horizon())
        .sample_index(rng) as usize;
    let path = system.trace_back(idx);
    let rb = h
        .map(|h| system.rao_blackwell(h))
        .unwrap_or_else(RaoBlackwellEstimate::empty);
    Ok((path, rb, system))
}

/// See [`cpf_sweep_system`]; drops the particle system.
pub fn cpf_sweep(
    reference: &Trajectory,
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    opts: &CpfOptions,
    noise: &NoiseTable,
    rng: &mut KeyedStream,
    h: Option<&TestFunction>,
) -> Result<(Trajectory, RaoBlackwellEstimate)> {
    cpf_sweep_system(reference, model, obs, opts, noise, rng, h)
        .map(|(path, rb, _)| (path, rb))
}

/// One coupled conditional particle filter sweep.
///
/// Both systems consume the same noise table; ancestor pairs come from the
/// maximal coupling of the two resampling-weight vectors, and the final pair
/// of trajectory indices from a shared uniform through both posterior CDFs.
/// Marginally each output is distributed as the corresponding [`cpf_sweep`]
/// output.
pub fn ccpf_sweep(
    reference: &Trajectory,
    reference_tilde: &Trajectory,
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    opts: &CpfOptions,
    noise: &NoiseTable,
    rng: &mut KeyedStream,
    h: Option<&TestFunction>,
) -> Result<CcpfOutput> {
    let inputs = SweepInputs::prepare(model, obs, opts, Some(reference))?;
    SweepInputs::prepare(model, obs, opts, Some(reference_tilde))?;
    let n = opts.n_particles;
    let d = model.state_dim();
    let horizon = obs.horizon();
    let n_free = n - 1;

    let mut sys_a = ParticleSystem::new(n, d, horizon);
    let mut sys_b = ParticleSystem::new(n, d, horizon);

    {
        let cur_a = &mut sys_a.states[..n * d];
        let cur_b = &mut sys_b.states[..n * d];
        // Same noise for both systems: free pairs start identical.
        let mut buf = vec![0.0; model.noise_dim()];
        for j in 0..n_free {
            noise.fill(0, j, &mut buf);
            let out_a = &mut cur_a[j * d..(j + 1) * d];
            model.init_state(&buf, out_a);
            let out_b = &mut cur_b[j * d..(j + 1) * d];
            model.init_state(&buf, out_b);
        }
        cur_a[n_free * d..n * d].copy_from_slice(reference.state(0));
        cur_b[n_free * d..n * d].copy_from_slice(reference_tilde.state(0));
        check_finite(cur_a, 0)?;
        check_finite(cur_b, 0)?;
    }
    let zeros = vec![0.0; n];
    let post0 = WeightVector::uniform(n);
    let resamp0_a = inputs.resampling_from(&zeros, &sys_a.states[..n * d], 0, &post0)?;
    let resamp0_b = inputs.resampling_from(&zeros, &sys_b.states[..n * d], 0, &post0)?;
    sys_a.post_weights.push(post0.clone());
    sys_b.post_weights.push(post0);
    sys_a.resamp_weights.push(resamp0_a);
    sys_b.resamp_weights.push(resamp0_b);

    for t in 1..=horizon {
        let pairs = coupled_multinomial(
            &sys_a.resamp_weights[t - 1],
            &sys_b.resamp_weights[t - 1],
            n_free,
            rng,
        )
        .map_err(|e| at_step(e, t))?;
        let mut anc_a: Vec<u32> = pairs.iter().map(|p| p.a).collect();
        let mut anc_b: Vec<u32> = pairs.iter().map(|p| p.a_tilde).collect();

        let (before_a, rest_a) = sys_a.states.split_at_mut(t * n * d);
        let prev_a = &before_a[(t - 1) * n * d..];
        let cur_a = &mut rest_a[..n * d];
        let (before_b, rest_b) = sys_b.states.split_at_mut(t * n * d);
        let prev_b = &before_b[(t - 1) * n * d..];
        let cur_b = &mut rest_b[..n * d];

        if opts.ancestor_sampling {
            let as_a = inputs.ancestor_sampling_weights(
                &sys_a.post_weights[t - 1],
                prev_a,
                reference.state(t),
                t,
                n,
            )?;
            let as_b = inputs.ancestor_sampling_weights(
                &sys_b.post_weights[t - 1],
                prev_b,
                reference_tilde.state(t),
                t,
                n,
            )?;
            let pair = maximal_coupling_pair(&as_a, &as_b, rng).map_err(|e| at_step(e, t))?;
            anc_a.push(pair.a);
            anc_b.push(pair.a_tilde);
        } else {
            anc_a.push(n_free as u32);
            anc_b.push(n_free as u32);
        }

        propagate_free_slots_coupled(
            &inputs,
            obs.get(t),
            noise,
            t,
            prev_a,
            prev_b,
            cur_a,
            cur_b,
            &anc_a,
            &anc_b,
            n_free,
        );
        cur_a[n_free * d..n * d].copy_from_slice(reference.state(t));
        cur_b[n_free * d..n * d].copy_from_slice(reference_tilde.state(t));
        check_finite(cur_a, t)?;
        check_finite(cur_b, t)?;

        let (logs_a, post_a) = inputs.posterior_weights(t, prev_a, cur_a, &anc_a, n)?;
        let (logs_b, post_b) = inputs.posterior_weights(t, prev_b, cur_b, &anc_b, n)?;
        let resamp_a = inputs.resampling_from(&logs_a, cur_a, t, &post_a)?;
        let resamp_b = inputs.resampling_from(&logs_b, cur_b, t, &post_b)?;
        sys_a.ancestors[(t - 1) * n..t * n].copy_from_slice(&anc_a);
        sys_b.ancestors[(t - 1) * n..t * n].copy_from_slice(&anc_b);
        sys_a.post_weights.push(post_a);
        sys_b.post_weights.push(post_b);
        sys_a.resamp_weights.push(resamp_a);
        sys_b.resamp_weights.push(resamp_b);
    }

    // Selection coupling: a shared uniform through both inverse CDFs. Exact
    // marginals, and equal systems always select the same index; its
    // coincidence probability matches the meeting-time scale reported for
    // the method, which a maximal selection coupling overshoots.
    let selection = shared_uniform_pair(
        sys_a.posterior_weights(horizon),
        sys_b.posterior_weights(horizon),
        rng,
    )
    .map_err(|e| at_step(e, horizon))?;
    let path = sys_a.trace_back(selection.a as usize);
    let path_tilde = sys_b.trace_back(selection.a_tilde as usize);
    let met = path == path_tilde;
    let (rb, rb_tilde) = match h {
        Some(h) => (sys_a.rao_blackwell(h), sys_b.rao_blackwell(h)),
        None => (
            RaoBlackwellEstimate::empty(),
            RaoBlackwellEstimate::empty(),
        ),
    };
    Ok(CcpfOutput {
        path,
        path_tilde,
        rb,
        rb_tilde,
        met,
    })
}

/// Full (unconditional) bootstrap particle filter system; noise comes from the
/// sweep's stream.
pub fn pf_system(
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    n_particles: usize,
    rng: &mut KeyedStream,
) -> Result<ParticleSystem> {
    let opts = CpfOptions::new(n_particles);
    let inputs = SweepInputs::prepare(model, obs, &opts, None)?;
    run_single(&inputs, None, &SweepNoise::FromRng, rng)
}

/// Draw one trajectory from a particle filter: the chain initialization π0.
pub fn pf_init(
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    n_particles: usize,
    rng: &mut KeyedStream,
) -> Result<Trajectory> {
    pf_init_with_estimate(model, obs, n_particles, rng, None).map(|(path, _)| path)
}

/// [`pf_init`] plus the Rao–Blackwellized estimate over the initializing
/// filter's cloud.
pub fn pf_init_with_estimate(
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    n_particles: usize,
    rng: &mut KeyedStream,
    h: Option<&TestFunction>,
) -> Result<(Trajectory, RaoBlackwellEstimate)> {
    let system = pf_system(model, obs, n_particles, rng)?;
    let idx = system
        .posterior_weights(obs.horizon())
        .sample_index(rng) as usize;
    let path = system.trace_back(idx);
    let rb = h
        .map(|h| system.rao_blackwell(h))
        .unwrap_or_else(RaoBlackwellEstimate::empty);
    Ok((path, rb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_ar1, make_unlikely_default, Ar1Params};
    use crate::models::generate_data;
    use crate::stream::replicate_stream;

    fn ar1() -> crate::models::Ar1Model {
        make_ar1(Ar1Params::default()).unwrap()
    }

    fn table(seed: u64, sweep: u64, horizon: usize, n: usize, dim: usize) -> NoiseTable {
        NoiseTable::new(seed, 0, sweep, horizon, n, dim)
    }

    #[test]
    fn reference_slot_is_frozen_bit_exactly() {
        let model = ar1();
        let (_, obs) = generate_data(&model, 12, 3).unwrap();
        let mut rng = replicate_stream(1, 0);
        let reference = pf_init(&model, &obs, 16, &mut rng).unwrap();
        let opts = CpfOptions::new(16);
        let noise = table(1, 5, 12, 16, 1);
        let (_, _, system) =
            cpf_sweep_system(&reference, &model, &obs, &opts, &noise, &mut rng, None).unwrap();
        for t in 0..=12 {
            assert_eq!(system.state(t, 15), reference.state(t), "t = {t}");
            if t >= 1 {
                assert_eq!(system.parent(t, 15), 15);
            }
        }
    }

    #[test]
    fn uninformative_weights_select_the_reference_half_the_time_with_two_particles() {
        let model = make_ar1(Ar1Params {
            obs_sd: 1.0e6,
            ..Ar1Params::default()
        })
        .unwrap();
        let (_, obs) = generate_data(&model, 4, 9).unwrap();
        let mut rng = replicate_stream(7, 0);
        let reference = pf_init(&model, &obs, 2, &mut rng).unwrap();
        let opts = CpfOptions::new(2);
        let mut hits = 0usize;
        let sweeps = 10_000;
        for s in 0..sweeps {
            let noise = table(7, s as u64, 4, 2, 1);
            let (path, _) =
                cpf_sweep(&reference, &model, &obs, &opts, &noise, &mut rng, None).unwrap();
            if path == reference {
                hits += 1;
            }
        }
        let freq = hits as f64 / sweeps as f64;
        assert!((freq - 0.5).abs() < 0.02, "reference selected at rate {freq}");
    }

    #[test]
    fn equal_references_give_identical_outputs() {
        let model = ar1();
        let (_, obs) = generate_data(&model, 10, 21).unwrap();
        let opts = CpfOptions::new(32).with_ancestor_sampling(true);
        let mut rng = replicate_stream(3, 0);
        let reference = pf_init(&model, &obs, 32, &mut rng).unwrap();
        for s in 0..100 {
            let noise = table(3, s, 10, 32, 1);
            let out = ccpf_sweep(
                &reference, &reference, &model, &obs, &opts, &noise, &mut rng, None,
            )
            .unwrap();
            assert!(out.met);
            assert_eq!(out.path, out.path_tilde);
        }
    }

    #[test]
    fn fully_adapted_residual_weights_are_constant() {
        // For the exact conditional proposal the residual particle weights are
        // equal across particles at every observed step.
        let model = ar1();
        let (_, obs) = generate_data(&model, 15, 5).unwrap();
        let opts = CpfOptions::new(64).with_proposal(Proposal::Auxiliary);
        let mut rng = replicate_stream(11, 0);
        let reference = pf_init(&model, &obs, 64, &mut rng).unwrap();
        let noise = table(11, 1, 15, 64, 1);
        let (_, _, system) =
            cpf_sweep_system(&reference, &model, &obs, &opts, &noise, &mut rng, None).unwrap();
        for t in 1..=15 {
            let w = system.posterior_weights(t).normalized();
            let uniform = 1.0 / 64.0;
            for (j, wj) in w.iter().enumerate() {
                assert!(
                    ((wj - uniform) / uniform).abs() < 1e-10,
                    "t = {t}, j = {j}, w = {wj}"
                );
            }
        }
    }

    #[test]
    fn missing_observations_leave_weights_uniform() {
        let (model, obs) = make_unlikely_default();
        let mut rng = replicate_stream(2, 0);
        let reference = pf_init(&model, &obs, 8, &mut rng).unwrap();
        let opts = CpfOptions::new(8);
        let noise = table(2, 0, 10, 8, 1);
        let (_, _, system) =
            cpf_sweep_system(&reference, &model, &obs, &opts, &noise, &mut rng, None).unwrap();
        for t in 0..10 {
            let w = system.posterior_weights(t).normalized();
            assert!(w.iter().all(|&x| (x - 0.125).abs() < 1e-15), "t = {t}");
        }
        // The final observed step concentrates weights.
        let w_last = system.posterior_weights(10).normalized();
        assert!(w_last.iter().any(|&x| (x - 0.125).abs() > 1e-6));
    }

    #[test]
    fn pf_init_is_deterministic_given_the_stream() {
        let model = ar1();
        let (_, obs) = generate_data(&model, 8, 17).unwrap();
        let a = pf_init(&model, &obs, 32, &mut replicate_stream(5, 1)).unwrap();
        let b = pf_init(&model, &obs, 32, &mut replicate_stream(5, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pf_init_with_two_particles_picks_either_path_under_uninformative_obs() {
        let model = make_ar1(Ar1Params {
            obs_sd: 1.0e6,
            ..Ar1Params::default()
        })
        .unwrap();
        let (_, obs) = generate_data(&model, 3, 2).unwrap();
        let mut rng = replicate_stream(6, 0);
        let mut seen_slot = [false; 2];
        for _ in 0..200 {
            let system = pf_system(&model, &obs, 2, &mut rng).unwrap();
            let idx = system.posterior_weights(3).sample_index(&mut rng) as usize;
            seen_slot[idx.min(1)] = true;
        }
        assert!(seen_slot[0] && seen_slot[1]);
    }

    #[test]
    fn options_validation_rejects_impossible_modes() {
        let lv = crate::models::make_lotka_volterra(crate::models::LotkaVolterraParams::default())
            .unwrap();
        assert!(CpfOptions::new(8)
            .with_ancestor_sampling(true)
            .validate(&lv)
            .is_err());
        assert!(CpfOptions::new(8)
            .with_proposal(Proposal::Auxiliary)
            .validate(&lv)
            .is_err());
        assert!(CpfOptions::new(1).validate(&ar1()).is_err());
        assert!(CpfOptions::new(8)
            .with_ancestor_sampling(true)
            .with_proposal(Proposal::Auxiliary)
            .validate(&ar1())
            .is_ok());
    }

    #[test]
    fn rao_blackwell_matches_direct_average_over_paths() {
        // The genealogy-mass accumulation must agree with the brute-force
        // weighted average of h over all reconstructed trajectories.
        let model = ar1();
        let (_, obs) = generate_data(&model, 6, 13).unwrap();
        let mut rng = replicate_stream(8, 0);
        let system = pf_system(&model, &obs, 32, &mut rng).unwrap();
        let h = TestFunction::Path;
        let fast = system.rao_blackwell(&h).value;
        let w = system.posterior_weights(6).normalized().to_vec();
        let mut slow = vec![0.0; 7];
        for (j, wj) in w.iter().enumerate() {
            let path = system.trace_back(j);
            for (acc, v) in slow.iter_mut().zip(h.eval(&path)) {
                *acc += wj * v;
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
