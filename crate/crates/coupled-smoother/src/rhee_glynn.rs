//! The unbiased smoothing estimator built from coupled CPF chains.
//!
//! One replicate initializes two chains independently from a particle filter,
//! advances the first by one CPF sweep, then iterates the coupled kernel until
//! the chains meet at time `τ` (and plain CPF sweeps afterwards while the
//! iteration count is below `m`). The time-averaged estimator `H_{k:m}`
//! combines an ergodic average of iterations `k..=m` with a weighted
//! telescoping bias correction accumulated while the chains differ; its
//! expectation is exactly the smoothing expectation, for any `k <= m` and any
//! number of particles.
//!
//! Replicates are independent and keyed by `(master_seed, replicate)`, so they
//! can run on any number of workers with bit-identical results, and the
//! replicate average satisfies a central limit theorem that yields the
//! reported confidence intervals.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpf::{ccpf_sweep, cpf_sweep, pf_init_with_estimate, CpfOptions};
use crate::error::{Error, Result};
use crate::ssm::{ObservationRecord, StateSpaceModel, TestFunction, Trajectory};
use crate::stats;
use crate::stream::{replicate_stream, NoiseTable};

/// Safety cap on chain iterations when no pilot-derived cap is configured.
/// Meeting times have geometric tails, so in healthy configurations this is
/// never approached.
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Burn-in: iterations before `k` enter only the bias correction.
    pub k: usize,
    /// Last iteration of the ergodic average; `k <= m`.
    pub m: usize,
    pub cpf: CpfOptions,
    /// Test function whose smoothing expectation is estimated.
    pub h: TestFunction,
    /// Hard cap on chain iterations; exceeding it fails the replicate.
    pub max_sweeps: usize,
    /// Replace selected-trajectory values by their conditional expectation
    /// over the whole particle cloud (variance reduction at no cost in bias).
    pub rao_blackwell: bool,
}

impl EstimatorConfig {
    pub fn new(k: usize, m: usize, cpf: CpfOptions) -> Self {
        EstimatorConfig {
            k,
            m,
            cpf,
            h: TestFunction::Path,
            max_sweeps: DEFAULT_MAX_SWEEPS.max(100 * m.max(1)),
            rao_blackwell: true,
        }
    }

    pub fn with_test_function(mut self, h: TestFunction) -> Self {
        self.h = h;
        self
    }

    pub fn with_rao_blackwell(mut self, on: bool) -> Self {
        self.rao_blackwell = on;
        self
    }

    pub fn with_max_sweeps(mut self, cap: usize) -> Self {
        self.max_sweeps = cap;
        self
    }

    /// Tuning from a pilot survey: `k` at the 90% quantile of observed meeting
    /// times, `m = 2k`, and the sweep cap at 100 times the larger of `m` and
    /// the median meeting time.
    pub fn from_pilot(survey: &MeetingTimeSurvey, cpf: CpfOptions) -> Result<Self> {
        let k = survey.suggest_k()?;
        let m = 2 * k;
        let cap = 100 * m.max(survey.median()?).max(1);
        Ok(EstimatorConfig {
            k,
            m,
            cpf,
            h: TestFunction::Path,
            max_sweeps: cap,
            rao_blackwell: true,
        })
    }

    pub fn validate(&self, model: &dyn StateSpaceModel, obs: &ObservationRecord) -> Result<()> {
        if self.k > self.m {
            return Err(Error::Config(format!(
                "k = {} must not exceed m = {}",
                self.k, self.m
            )));
        }
        if self.max_sweeps <= self.m {
            return Err(Error::Config(format!(
                "max_sweeps = {} must exceed m = {}",
                self.max_sweeps, self.m
            )));
        }
        self.cpf.validate(model)?;
        self.h.validate(obs.horizon(), model.state_dim())?;
        Ok(())
    }
}

/// Why a replicate failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureReason {
    DegenerateWeights { step: usize },
    NonFiniteState { step: usize },
    SweepCapExceeded { cap: usize },
}

impl FailureReason {
    fn from_error(err: &Error) -> Option<FailureReason> {
        match err {
            Error::DegenerateWeights { step } => {
                Some(FailureReason::DegenerateWeights { step: *step })
            }
            Error::NonFiniteState { step } => Some(FailureReason::NonFiniteState { step: *step }),
            Error::SweepCapExceeded { cap } => Some(FailureReason::SweepCapExceeded { cap: *cap }),
            _ => None,
        }
    }
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureReason::DegenerateWeights { step } => {
                write!(f, "degenerate_weights@{step}")
            }
            FailureReason::NonFiniteState { step } => write!(f, "non_finite_state@{step}"),
            FailureReason::SweepCapExceeded { cap } => write!(f, "sweep_cap_exceeded@{cap}"),
        }
    }
}

/// One replicate's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnbiasedReport {
    /// `H_{k:m}`, one entry per coordinate of the test function; empty when
    /// the replicate failed.
    pub value: Vec<f64>,
    /// Meeting time, when reached.
    pub tau: Option<usize>,
    /// Particle propagations in units of one N-particle filter pass:
    /// `N (3 + 2(τ-1) + max(0, m-τ))`.
    pub cost_units: f64,
    /// Total kernel sweeps executed (initial filters excluded).
    pub sweep_count: usize,
    pub failed: Option<FailureReason>,
}

/// Cost of one replicate in particle propagations: two initial filters, one
/// CPF sweep, `τ - 1` coupled sweeps at twice the price, and `m - τ` plain
/// sweeps when `m > τ`.
pub fn cost_units(tau: usize, m: usize, n_particles: usize) -> f64 {
    assert!(tau >= 1);
    let sweeps = 3 + 2 * (tau - 1) + m.saturating_sub(tau);
    (n_particles * sweeps) as f64
}

/// Evaluate the time-averaged estimator from recorded per-iteration values.
///
/// `h_x[n]` and `h_x_tilde[n]` hold the (possibly Rao–Blackwellized) values of
/// the test function at chain iteration `n`. The result is
///
/// ```text
/// (m-k+1)^-1 Σ_{n=k}^m h_x[n]
///   + Σ_{n=k+1}^{tau-1} min(m-k+1, n-k)/(m-k+1) (h_x[n] - h_x_tilde[n-1])
/// ```
///
/// `h_x` must reach index `max(m, tau-1)` and `h_x_tilde` index `tau-2`
/// (when the correction range is nonempty).
pub fn combine_h_km(
    h_x: &[Vec<f64>],
    h_x_tilde: &[Vec<f64>],
    k: usize,
    m: usize,
    tau: usize,
) -> Result<Vec<f64>> {
    if k > m {
        return Err(Error::Config(format!("k = {k} must not exceed m = {m}")));
    }
    if tau < 1 {
        return Err(Error::Config("tau must be at least 1".into()));
    }
    let last_x = m.max(tau - 1);
    if h_x.len() <= last_x {
        return Err(Error::InsufficientHistory(format!(
            "need h_x through index {last_x}, have {}",
            h_x.len()
        )));
    }
    let dim = h_x[k].len();
    let span = (m - k + 1) as f64;
    let mut out = vec![0.0; dim];

    for h in h_x.iter().take(m + 1).skip(k) {
        if h.len() != dim {
            return Err(Error::Dimension {
                what: "h value",
                expected: dim,
                got: h.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(h) {
            *o += v / span;
        }
    }

    if k + 1 < tau && h_x_tilde.len() + 1 < tau {
        return Err(Error::InsufficientHistory(format!(
            "need h_x_tilde through index {}, have {}",
            tau - 2,
            h_x_tilde.len()
        )));
    }
    for n in (k + 1)..tau {
        let weight = span.min((n - k) as f64) / span;
        let hx = &h_x[n];
        let ht = &h_x_tilde[n - 1];
        if hx.len() != dim || ht.len() != dim {
            return Err(Error::Dimension {
                what: "h value",
                expected: dim,
                got: hx.len().max(ht.len()),
            });
        }
        for ((o, a), b) in out.iter_mut().zip(hx).zip(ht) {
            *o += weight * (a - b);
        }
    }
    Ok(out)
}

/// Per-iteration values recorded along one coupled chain.
struct ChainRecord {
    h_x: Vec<Vec<f64>>,
    h_xt: Vec<Vec<f64>>,
    tau: usize,
}

struct ChainDriver<'a> {
    model: &'a dyn StateSpaceModel,
    obs: &'a ObservationRecord,
    config: &'a EstimatorConfig,
    master_seed: u64,
    replicate: u64,
    pf_passes: usize,
    sweeps: usize,
}

impl<'a> ChainDriver<'a> {
    fn noise(&self, sweep: usize) -> NoiseTable {
        NoiseTable::new(
            self.master_seed,
            self.replicate,
            sweep as u64,
            self.obs.horizon(),
            self.config.cpf.n_particles,
            self.model.noise_dim(),
        )
    }

    fn h_value(&self, rb: &crate::cpf::RaoBlackwellEstimate, path: &Trajectory) -> Vec<f64> {
        if self.config.rao_blackwell {
            rb.value.clone()
        } else {
            self.config.h.eval(path)
        }
    }

    /// Run the full estimator chain and record the per-iteration values;
    /// `Err` carries runtime failures that the caller converts into a failed
    /// report.
    fn run_estimate(&mut self) -> std::result::Result<ChainRecord, Error> {
        let config = self.config;
        let h = Some(&config.h);
        let mut rng = replicate_stream(self.master_seed, self.replicate);

        let (x0, rb0) =
            pf_init_with_estimate(self.model, self.obs, config.cpf.n_particles, &mut rng, h)?;
        self.pf_passes += 1;
        let (xt0, rbt0) =
            pf_init_with_estimate(self.model, self.obs, config.cpf.n_particles, &mut rng, h)?;
        self.pf_passes += 1;

        let mut h_x: Vec<Vec<f64>> = vec![self.h_value(&rb0, &x0)];
        let mut h_xt: Vec<Vec<f64>> = vec![self.h_value(&rbt0, &xt0)];

        let noise = self.noise(0);
        let (x1, rb1) = cpf_sweep(
            &x0,
            self.model,
            self.obs,
            &config.cpf,
            &noise,
            &mut rng,
            h,
        )?;
        self.pf_passes += 1;
        self.sweeps += 1;
        h_x.push(self.h_value(&rb1, &x1));

        let mut x = x1;
        let mut xt = xt0;
        let mut n = 1usize;
        let mut tau: Option<usize> = if x == xt { Some(1) } else { None };

        while n < config.m.max(tau.unwrap_or(usize::MAX)) {
            match tau {
                None => {
                    if n >= config.max_sweeps {
                        return Err(Error::SweepCapExceeded {
                            cap: config.max_sweeps,
                        });
                    }
                    let noise = self.noise(n);
                    let out = ccpf_sweep(
                        &x,
                        &xt,
                        self.model,
                        self.obs,
                        &config.cpf,
                        &noise,
                        &mut rng,
                        h,
                    )?;
                    self.pf_passes += 2;
                    self.sweeps += 1;
                    h_x.push(self.h_value(&out.rb, &out.path));
                    h_xt.push(self.h_value(&out.rb_tilde, &out.path_tilde));
                    x = out.path;
                    xt = out.path_tilde;
                    n += 1;
                    if out.met {
                        tau = Some(n);
                    }
                }
                Some(_) => {
                    let noise = self.noise(n);
                    let (next, rb) = cpf_sweep(
                        &x,
                        self.model,
                        self.obs,
                        &config.cpf,
                        &noise,
                        &mut rng,
                        h,
                    )?;
                    self.pf_passes += 1;
                    self.sweeps += 1;
                    h_x.push(self.h_value(&rb, &next));
                    x = next;
                    n += 1;
                }
            }
        }
        let tau = tau.expect("loop exits only once the meeting time is known");
        Ok(ChainRecord { h_x, h_xt, tau })
    }

    /// Run only until the chains meet (pilot / survey mode).
    fn run_survey(&mut self) -> std::result::Result<TauOutcome, Error> {
        let config = self.config;
        let mut rng = replicate_stream(self.master_seed, self.replicate);
        let x0 = crate::cpf::pf_init(self.model, self.obs, config.cpf.n_particles, &mut rng)?;
        self.pf_passes += 1;
        let xt0 = crate::cpf::pf_init(self.model, self.obs, config.cpf.n_particles, &mut rng)?;
        self.pf_passes += 1;

        let noise = self.noise(0);
        let (x1, _) = cpf_sweep(
            &x0,
            self.model,
            self.obs,
            &config.cpf,
            &noise,
            &mut rng,
            None,
        )?;
        self.pf_passes += 1;
        self.sweeps += 1;

        let mut x = x1;
        let mut xt = xt0;
        let mut n = 1usize;
        if x == xt {
            return Ok(TauOutcome::Met(1));
        }
        loop {
            if n >= config.max_sweeps {
                return Ok(TauOutcome::Censored {
                    cap: config.max_sweeps,
                });
            }
            let noise = self.noise(n);
            let out = ccpf_sweep(
                &x,
                &xt,
                self.model,
                self.obs,
                &config.cpf,
                &noise,
                &mut rng,
                None,
            )?;
            self.pf_passes += 2;
            self.sweeps += 1;
            x = out.path;
            xt = out.path_tilde;
            n += 1;
            if out.met {
                return Ok(TauOutcome::Met(n));
            }
        }
    }
}

/// Produce one unbiased estimate of the smoothing expectation of `config.h`.
///
/// Runtime failures (degenerate weights, non-finite states, cap exceeded)
/// yield a failed report; `Err` is reserved for contract violations.
pub fn run_coupled_chains(
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    config: &EstimatorConfig,
    master_seed: u64,
    replicate: u64,
) -> Result<UnbiasedReport> {
    config.validate(model, obs)?;
    let mut driver = ChainDriver {
        model,
        obs,
        config,
        master_seed,
        replicate,
        pf_passes: 0,
        sweeps: 0,
    };
    match driver.run_estimate() {
        Ok(record) => {
            let tau = record.tau;
            // With Rao-Blackwellized values the telescoping terms vanish
            // exactly only from the first sweep run on equal references, i.e.
            // after the meeting sweep itself; evaluating through `tau + 1`
            // keeps the meeting sweep's term. Without Rao-Blackwellization
            // that extra term is identically zero, so both modes share this
            // call.
            let value = combine_h_km(&record.h_x, &record.h_xt, config.k, config.m, tau + 1)?;
            let cost = cost_units(tau, config.m, config.cpf.n_particles);
            debug_assert_eq!(
                cost,
                (config.cpf.n_particles * driver.pf_passes) as f64,
                "cost formula must account for every executed pass"
            );
            Ok(UnbiasedReport {
                value,
                tau: Some(tau),
                cost_units: cost,
                sweep_count: driver.sweeps,
                failed: None,
            })
        }
        Err(err) => {
            let reason = FailureReason::from_error(&err);
            match reason {
                Some(reason) => Ok(UnbiasedReport {
                    value: Vec::new(),
                    tau: None,
                    cost_units: (config.cpf.n_particles * driver.pf_passes) as f64,
                    sweep_count: driver.sweeps,
                    failed: Some(reason),
                }),
                None => Err(err),
            }
        }
    }
}

/// Overall status of a replicate run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// More than 10% of replicates failed.
    Warning,
}

/// Summary statistics over successful replicates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub r_total: usize,
    pub r_failed: usize,
    pub status: RunStatus,
    /// Confidence level is `1 - alpha`.
    pub alpha: f64,
    pub mean: Vec<f64>,
    pub sd: Option<Vec<f64>>,
    pub ci_low: Option<Vec<f64>>,
    pub ci_high: Option<Vec<f64>>,
    pub mean_cost: f64,
    /// Expected cost times variance, per coordinate.
    pub inefficiency: Option<Vec<f64>>,
}

/// Reports plus their summary.
#[derive(Clone, Debug)]
pub struct ReplicateRun {
    pub reports: Vec<UnbiasedReport>,
    pub summary: ReplicateSummary,
}

/// Run `r` independent replicates of the estimator.
///
/// Randomness is keyed by `(master_seed, replicate)`, so the output is
/// bit-identical for any worker count. With the `parallel` feature the
/// replicates spread over a rayon pool of `workers` threads (0 = default).
pub fn run_replicates(
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    config: &EstimatorConfig,
    r: usize,
    master_seed: u64,
    alpha: f64,
    workers: usize,
) -> Result<ReplicateRun> {
    if r == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config("alpha must be in (0, 1)".into()));
    }
    config.validate(model, obs)?;

    let run_one = |rep: usize| run_coupled_chains(model, obs, config, master_seed, rep as u64);
    let reports = map_replicates(r, workers, run_one)?;
    let summary = summarize(&reports, alpha)?;
    Ok(ReplicateRun { reports, summary })
}

#[cfg(feature = "parallel")]
pub(crate) fn map_replicates<T: Send>(
    r: usize,
    workers: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("could not build worker pool: {e}")))?;
    pool.install(|| (0..r).into_par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_replicates<T>(r: usize, _workers: usize, f: impl Fn(usize) -> Result<T>) -> Result<Vec<T>> {
    (0..r).map(f).collect()
}

/// Build the summary (mean, sd, CLT confidence interval, cost, inefficiency)
/// from a set of reports, excluding failures.
pub fn summarize(reports: &[UnbiasedReport], alpha: f64) -> Result<ReplicateSummary> {
    let r_total = reports.len();
    let ok: Vec<&UnbiasedReport> = reports.iter().filter(|r| r.failed.is_none()).collect();
    let r_failed = r_total - ok.len();
    if ok.is_empty() {
        return Err(Error::Numerical("every replicate failed".into()));
    }
    let dim = ok[0].value.len();
    for rep in &ok {
        if rep.value.len() != dim {
            return Err(Error::Dimension {
                what: "replicate value",
                expected: dim,
                got: rep.value.len(),
            });
        }
    }
    let n = ok.len();
    let mut mean = vec![0.0; dim];
    for rep in &ok {
        for (m, v) in mean.iter_mut().zip(&rep.value) {
            *m += v / n as f64;
        }
    }
    let mean_cost = ok.iter().map(|r| r.cost_units).sum::<f64>() / n as f64;

    let (sd, ci_low, ci_high, inefficiency) = if n >= 2 {
        let mut var = vec![0.0; dim];
        for rep in &ok {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(&rep.value) {
                *v += (x - m) * (x - m) / (n - 1) as f64;
            }
        }
        let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
        let z_lo = stats::normal_quantile(alpha / 2.0);
        let z_hi = stats::normal_quantile(1.0 - alpha / 2.0);
        let scale = 1.0 / (n as f64).sqrt();
        let ci_low: Vec<f64> = mean
            .iter()
            .zip(&sd)
            .map(|(m, s)| m + z_lo * s * scale)
            .collect();
        let ci_high: Vec<f64> = mean
            .iter()
            .zip(&sd)
            .map(|(m, s)| m + z_hi * s * scale)
            .collect();
        let inefficiency: Vec<f64> = var.iter().map(|v| v * mean_cost).collect();
        (Some(sd), Some(ci_low), Some(ci_high), Some(inefficiency))
    } else {
        (None, None, None, None)
    };

    let status = if r_failed * 10 > r_total {
        RunStatus::Warning
    } else {
        RunStatus::Ok
    };
    Ok(ReplicateSummary {
        r_total,
        r_failed,
        status,
        alpha,
        mean,
        sd,
        ci_low,
        ci_high,
        mean_cost,
        inefficiency,
    })
}

/// Outcome of one meeting-time draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauOutcome {
    Met(usize),
    Censored { cap: usize },
    Failed(FailureReason),
}

/// Meeting-time samples from repeated coupled chains (no estimator
/// accumulation).
#[derive(Clone, Debug)]
pub struct MeetingTimeSurvey {
    pub outcomes: Vec<TauOutcome>,
}

impl MeetingTimeSurvey {
    /// Meeting times of the replicates that met.
    pub fn taus(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .filter_map(|o| match o {
                TauOutcome::Met(tau) => Some(*tau),
                _ => None,
            })
            .collect()
    }

    pub fn n_censored(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, TauOutcome::Censored { .. }))
            .count()
    }

    pub fn n_failed(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, TauOutcome::Failed(_)))
            .count()
    }

    pub fn mean(&self) -> Result<f64> {
        let taus = self.taus();
        if taus.is_empty() {
            return Err(Error::Numerical("no meeting times observed".into()));
        }
        Ok(taus.iter().sum::<usize>() as f64 / taus.len() as f64)
    }

    pub fn sd(&self) -> Result<f64> {
        let taus: Vec<f64> = self.taus().iter().map(|t| *t as f64).collect();
        if taus.len() < 2 {
            return Err(Error::Numerical("need two meeting times for a spread".into()));
        }
        Ok(stats::std_dev(&taus))
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        let mut taus: Vec<f64> = self.taus().iter().map(|t| *t as f64).collect();
        if taus.is_empty() {
            return Err(Error::Numerical("no meeting times observed".into()));
        }
        taus.sort_by(f64::total_cmp);
        Ok(stats::empirical_quantile(&taus, q))
    }

    pub fn median(&self) -> Result<usize> {
        Ok(self.quantile(0.5)?.round() as usize)
    }

    /// Suggested burn-in: the 90% quantile of the meeting times.
    pub fn suggest_k(&self) -> Result<usize> {
        Ok(self.quantile(0.9)?.ceil() as usize)
    }

    /// Empirical survival function `P(tau > n)` evaluated at `n = 0..=max`.
    pub fn survival(&self) -> Vec<f64> {
        let taus = self.taus();
        if taus.is_empty() {
            return Vec::new();
        }
        let max = *taus.iter().max().unwrap();
        let total = taus.len() as f64;
        (0..=max)
            .map(|n| taus.iter().filter(|&&t| t > n).count() as f64 / total)
            .collect()
    }
}

/// Sample the meeting time `r` times; `config.k`, `config.m` and `config.h`
/// are ignored.
pub fn meeting_time_survey(
    model: &dyn StateSpaceModel,
    obs: &ObservationRecord,
    config: &EstimatorConfig,
    r: usize,
    master_seed: u64,
    workers: usize,
) -> Result<MeetingTimeSurvey> {
    if r == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    config.cpf.validate(model)?;
    let run_one = |rep: usize| -> Result<TauOutcome> {
        let mut driver = ChainDriver {
            model,
            obs,
            config,
            master_seed,
            replicate: rep as u64,
            pf_passes: 0,
            sweeps: 0,
        };
        match driver.run_survey() {
            Ok(outcome) => Ok(outcome),
            Err(err) => match FailureReason::from_error(&err) {
                Some(reason) => Ok(TauOutcome::Failed(reason)),
                None => Err(err),
            },
        }
    };
    let outcomes = map_replicates(r, workers, run_one)?;
    Ok(MeetingTimeSurvey { outcomes })
}
