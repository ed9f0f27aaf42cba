//! Configuration-driven harness for unbiased smoothing experiments.
//!
//! Reads a strict JSON config describing a model, dataset and estimator, runs
//! the requested experiment and writes diff-able CSV/JSON artifacts. Exit
//! codes: 0 on success, 2 on configuration errors, 3 when more than 10% of
//! replicates failed.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::Parser;
use serde::{Deserialize, Serialize};

use coupled_smoother::baselines::{run_baseline_replicates, BaselineKind};
use coupled_smoother::cpf::{CpfOptions, Proposal};
use coupled_smoother::models::{
    generate_data, make_ar1, make_lotka_volterra, make_unlikely, Ar1Params, LotkaVolterraParams,
};
use coupled_smoother::report::{
    write_ci_series_csv, write_replicates_csv, write_tau_samples_csv,
};
use coupled_smoother::rhee_glynn::{
    meeting_time_survey, run_replicates, EstimatorConfig, MeetingTimeSurvey, ReplicateSummary,
    RunStatus, DEFAULT_MAX_SWEEPS,
};
use coupled_smoother::ssm::{ObservationRecord, StateSpaceModel, TestFunction};

const WORKERS_ENV: &str = "COUPLED_SMOOTHER_WORKERS";

#[derive(Parser, Debug)]
#[command(
    name = "coupled-smoother",
    about = "Unbiased smoothing for state-space models via coupled conditional particle filters"
)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config output_dir, else current directory).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores). Falls back to the config, then the
    /// COUPLED_SMOOTHER_WORKERS environment variable.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the config's estimator (unbiased | pf | fixed_lag | meeting_survey).
    #[arg(long)]
    estimator: Option<String>,
    /// Run only the meeting-time pilot and suggest k and m.
    #[arg(long)]
    pilot: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Experiment {
    Ar1,
    Unlikely,
    LotkaVolterra,
    CustomCsv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EstimatorKind {
    Unbiased,
    Pf,
    FixedLag,
    MeetingSurvey,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum KmValue {
    Fixed(usize),
    Keyword(String),
}

impl KmValue {
    fn resolve(&self, what: &str) -> anyhow::Result<Option<usize>> {
        match self {
            KmValue::Fixed(v) => Ok(Some(*v)),
            KmValue::Keyword(s) if s == "auto" => Ok(None),
            KmValue::Keyword(s) => bail!("{what} must be an integer or \"auto\", got {s:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Ar1Section {
    eta: f64,
    init_sd: f64,
    trans_sd: f64,
    obs_sd: f64,
}

impl Default for Ar1Section {
    fn default() -> Self {
        let p = Ar1Params::default();
        Ar1Section {
            eta: p.eta,
            init_sd: p.init_sd,
            trans_sd: p.trans_sd,
            obs_sd: p.obs_sd,
        }
    }
}

impl From<Ar1Section> for Ar1Params {
    fn from(s: Ar1Section) -> Ar1Params {
        Ar1Params {
            eta: s.eta,
            init_sd: s.init_sd,
            trans_sd: s.trans_sd,
            obs_sd: s.obs_sd,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LvSection {
    mu_alpha: f64,
    sigma_alpha: f64,
    c: f64,
    e: f64,
    m_l: f64,
    m_q: f64,
    obs_log_sd: f64,
    rk4_step: f64,
}

impl Default for LvSection {
    fn default() -> Self {
        let p = LotkaVolterraParams::default();
        LvSection {
            mu_alpha: p.mu_alpha,
            sigma_alpha: p.sigma_alpha,
            c: p.c,
            e: p.e,
            m_l: p.m_l,
            m_q: p.m_q,
            obs_log_sd: p.obs_log_sd,
            rk4_step: p.rk4_step,
        }
    }
}

impl From<LvSection> for LotkaVolterraParams {
    fn from(s: LvSection) -> LotkaVolterraParams {
        LotkaVolterraParams {
            mu_alpha: s.mu_alpha,
            sigma_alpha: s.sigma_alpha,
            c: s.c,
            e: s.e,
            m_l: s.m_l,
            m_q: s.m_q,
            obs_log_sd: s.obs_log_sd,
            rk4_step: s.rk4_step,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
enum DataSection {
    /// Simulate observations from the model with a dedicated seed.
    Generate { seed: u64 },
    /// Read observations from CSV (columns: t, y components; blank = missing).
    Csv { path: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ar1: Option<Ar1Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lotka_volterra: Option<LvSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    n_particles: usize,
    k: KmValue,
    m: KmValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pilot_r: Option<usize>,
    replicates: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default)]
    ancestor_sampling: bool,
    #[serde(default = "default_proposal")]
    proposal: Proposal,
    #[serde(default = "default_estimator")]
    estimator: EstimatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lag: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    test_function: Option<TestFunction>,
    master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_sweeps: Option<usize>,
    #[serde(default = "default_rao_blackwell")]
    rao_blackwell: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_proposal() -> Proposal {
    Proposal::Bootstrap
}

fn default_estimator() -> EstimatorKind {
    EstimatorKind::Unbiased
}

fn default_rao_blackwell() -> bool {
    true
}

/// The fully resolved settings echoed into summary.json.
#[derive(Clone, Debug, Serialize)]
struct ResolvedConfig {
    experiment: Experiment,
    estimator: EstimatorKind,
    horizon: usize,
    n_particles: usize,
    k: usize,
    m: usize,
    max_sweeps: usize,
    ancestor_sampling: bool,
    proposal: Proposal,
    rao_blackwell: bool,
    test_function: TestFunction,
    replicates: usize,
    alpha: f64,
    master_seed: u64,
    workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    lag: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pilot_r: Option<usize>,
}

enum Model {
    Ar1(coupled_smoother::models::Ar1Model),
    Lv(coupled_smoother::models::LotkaVolterraModel),
}

impl Model {
    fn as_dyn(&self) -> &dyn StateSpaceModel {
        match self {
            Model::Ar1(m) => m,
            Model::Lv(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

/// Print a line to stdout, ignoring a consumer that closed the pipe early
/// (`... | head` must not kill the run).
fn outln(line: std::fmt::Arguments) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_fmt(line);
    let _ = out.write_all(b"\n");
}

fn run(args: Args) -> anyhow::Result<ExitCode> {
    let file = File::open(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let mut config: RunConfig = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("invalid config {}", args.config.display()))?;

    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(name) = &args.estimator {
        config.estimator = match name.as_str() {
            "unbiased" => EstimatorKind::Unbiased,
            "pf" => EstimatorKind::Pf,
            "fixed_lag" => EstimatorKind::FixedLag,
            "meeting_survey" => EstimatorKind::MeetingSurvey,
            other => bail!("unknown estimator {other:?}"),
        };
    }
    if args.pilot {
        config.estimator = EstimatorKind::MeetingSurvey;
    }
    let workers = args
        .workers
        .or(config.workers)
        .or_else(|| {
            std::env::var(WORKERS_ENV)
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    let out_dir = args
        .output
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    // Build the model and dataset.
    let (model, obs) = build_model_and_data(&config)?;
    let model_dyn = model.as_dyn();
    let horizon = obs.horizon();

    let h = config.test_function.clone().unwrap_or(match config.experiment {
        Experiment::Ar1 | Experiment::CustomCsv => TestFunction::Path,
        Experiment::Unlikely => TestFunction::StateAt {
            t: horizon.saturating_sub(1),
            coord: 0,
        },
        Experiment::LotkaVolterra => TestFunction::Coord { coord: 1 },
    });
    let cpf = CpfOptions::new(config.n_particles)
        .with_ancestor_sampling(config.ancestor_sampling)
        .with_proposal(config.proposal);
    cpf.validate(model_dyn)
        .map_err(|e| anyhow!("invalid filter options: {e}"))?;

    // Pilot-or-fixed tuning of (k, m) and the sweep cap.
    let k_fixed = config.k.resolve("k")?;
    let m_fixed = config.m.resolve("m")?;
    let survey_for_pilot = |r: usize| -> anyhow::Result<MeetingTimeSurvey> {
        let pilot_cfg = EstimatorConfig::new(0, 1, cpf).with_max_sweeps(DEFAULT_MAX_SWEEPS);
        meeting_time_survey(model_dyn, &obs, &pilot_cfg, r, config.master_seed ^ 0x9e37, workers)
            .map_err(|e| anyhow!("pilot survey failed: {e}"))
    };
    let (k, m, pilot_cap) = match (k_fixed, m_fixed) {
        (Some(k), Some(m)) => (k, m, None),
        (k_fixed, m_fixed) => {
            let pilot_r = config
                .pilot_r
                .ok_or_else(|| anyhow!("k/m \"auto\" requires the pilot_r field"))?;
            let survey = survey_for_pilot(pilot_r)?;
            let suggested_k = survey
                .suggest_k()
                .map_err(|e| anyhow!("pilot survey produced no meeting times: {e}"))?;
            let k = k_fixed.unwrap_or(suggested_k);
            let m = m_fixed.unwrap_or(2 * k);
            let cap = 100 * m.max(survey.median().unwrap_or(1)).max(1);
            eprintln!(
                "pilot: {} meeting times, mean {:.2}, suggested k = {k}, m = {m}",
                survey.taus().len(),
                survey.mean().unwrap_or(f64::NAN),
            );
            (k, m, Some(cap))
        }
    };
    if k > m {
        bail!("resolved k = {k} exceeds m = {m}");
    }
    let max_sweeps = config
        .max_sweeps
        .or(pilot_cap)
        .unwrap_or(DEFAULT_MAX_SWEEPS)
        .max(m + 1);

    let resolved = ResolvedConfig {
        experiment: config.experiment,
        estimator: config.estimator,
        horizon,
        n_particles: config.n_particles,
        k,
        m,
        max_sweeps,
        ancestor_sampling: config.ancestor_sampling,
        proposal: config.proposal,
        rao_blackwell: config.rao_blackwell,
        test_function: h.clone(),
        replicates: config.replicates,
        alpha: config.alpha,
        master_seed: config.master_seed,
        workers,
        lag: config.lag,
        pilot_r: config.pilot_r,
    };

    match config.estimator {
        EstimatorKind::MeetingSurvey => {
            let est = EstimatorConfig::new(0, 1, cpf).with_max_sweeps(max_sweeps);
            let survey = meeting_time_survey(
                model_dyn,
                &obs,
                &est,
                config.replicates,
                config.master_seed,
                workers,
            )?;
            write_file(&out_dir.join("tau_samples.csv"), |buf| {
                write_tau_samples_csv(buf, &survey).map_err(Into::into)
            })?;
            print_survey(&survey);
            let summary = serde_json::json!({
                "config": resolved,
                "n_met": survey.taus().len(),
                "n_censored": survey.n_censored(),
                "n_failed": survey.n_failed(),
                "mean_tau": survey.mean().ok(),
                "sd_tau": survey.sd().ok(),
                "quantiles": {
                    "q50": survey.quantile(0.5).ok(),
                    "q90": survey.quantile(0.9).ok(),
                    "q99": survey.quantile(0.99).ok(),
                },
                "suggested_k": survey.suggest_k().ok(),
                "suggested_m": survey.suggest_k().ok().map(|k| 2 * k),
            });
            write_json(&out_dir.join("summary.json"), &summary)?;
            Ok(ExitCode::SUCCESS)
        }
        EstimatorKind::Unbiased => {
            let est = EstimatorConfig {
                k,
                m,
                cpf,
                h: h.clone(),
                max_sweeps,
                rao_blackwell: config.rao_blackwell,
            };
            let run = run_replicates(
                model_dyn,
                &obs,
                &est,
                config.replicates,
                config.master_seed,
                config.alpha,
                workers,
            )?;
            let h_dim = h.dim(horizon, model_dyn.state_dim());
            emit_replicate_outputs(
                &out_dir,
                "unbiased",
                &run.reports,
                h_dim,
                &run.summary,
                &resolved,
            )?;
            print_summary("unbiased", &run.summary);
            exit_for_status(&run.summary)
        }
        EstimatorKind::Pf | EstimatorKind::FixedLag => {
            let kind = match config.estimator {
                EstimatorKind::Pf => BaselineKind::ParticleFilter,
                _ => BaselineKind::FixedLag {
                    lag: config
                        .lag
                        .ok_or_else(|| anyhow!("fixed_lag estimator requires the lag field"))?,
                },
            };
            let run = run_baseline_replicates(
                model_dyn,
                &obs,
                kind,
                config.n_particles,
                &h,
                config.replicates,
                config.master_seed,
                config.alpha,
                workers,
            )?;
            let h_dim = h.dim(horizon, model_dyn.state_dim());
            emit_replicate_outputs(
                &out_dir,
                kind.label(),
                &run.reports,
                h_dim,
                &run.summary,
                &resolved,
            )?;
            print_summary(kind.label(), &run.summary);
            exit_for_status(&run.summary)
        }
    }
}

fn build_model_and_data(config: &RunConfig) -> anyhow::Result<(Model, ObservationRecord)> {
    let choose_data = |default_seed: u64| config.data.clone().unwrap_or(DataSection::Generate {
        seed: default_seed,
    });
    match config.experiment {
        Experiment::Ar1 => {
            let params: Ar1Params = config.ar1.unwrap_or_default().into();
            let model = make_ar1(params)?;
            let horizon = config.horizon.unwrap_or(100);
            let obs = load_or_generate(&model, horizon, &choose_data(config.master_seed ^ 0xDA7A))?;
            Ok((Model::Ar1(model), obs))
        }
        Experiment::Unlikely => {
            if config.data.is_some() {
                bail!("the unlikely experiment fixes its dataset; remove the data section");
            }
            let params: Ar1Params = config
                .ar1
                .map(Into::into)
                .unwrap_or_else(Ar1Params::unlikely);
            let horizon = config.horizon.unwrap_or(10);
            let (model, obs) = make_unlikely(&params, horizon)?;
            Ok((Model::Ar1(model), obs))
        }
        Experiment::LotkaVolterra => {
            let params: LotkaVolterraParams = config.lotka_volterra.unwrap_or_default().into();
            let model = make_lotka_volterra(params)?;
            let horizon = config.horizon.unwrap_or(365);
            let obs = load_or_generate(&model, horizon, &choose_data(config.master_seed ^ 0xDA7A))?;
            Ok((Model::Lv(model), obs))
        }
        Experiment::CustomCsv => {
            let data = config
                .data
                .clone()
                .ok_or_else(|| anyhow!("custom_csv requires a data section"))?;
            let DataSection::Csv { path } = data else {
                bail!("custom_csv requires data.source = \"csv\"");
            };
            let file = File::open(&path)
                .with_context(|| format!("cannot read data file {}", path.display()))?;
            let obs = ObservationRecord::read_csv(BufReader::new(file))?;
            if let Some(h) = config.horizon {
                if h != obs.horizon() {
                    bail!(
                        "config horizon {h} does not match data horizon {}",
                        obs.horizon()
                    );
                }
            }
            let model = match (&config.ar1, &config.lotka_volterra) {
                (Some(ar1), None) => Model::Ar1(make_ar1((*ar1).into())?),
                (None, Some(lv)) => Model::Lv(make_lotka_volterra((*lv).into())?),
                _ => bail!("custom_csv requires exactly one model section (ar1 or lotka_volterra)"),
            };
            if obs.obs_dim() != model.as_dyn().obs_dim() {
                bail!(
                    "data has {} observation components, model expects {}",
                    obs.obs_dim(),
                    model.as_dyn().obs_dim()
                );
            }
            Ok((model, obs))
        }
    }
}

fn load_or_generate(
    model: &dyn StateSpaceModel,
    horizon: usize,
    data: &DataSection,
) -> anyhow::Result<ObservationRecord> {
    match data {
        DataSection::Generate { seed } => {
            let (_, obs) = generate_data(model, horizon, *seed)?;
            Ok(obs)
        }
        DataSection::Csv { path } => {
            let file = File::open(path)
                .with_context(|| format!("cannot read data file {}", path.display()))?;
            let obs = ObservationRecord::read_csv(BufReader::new(file))?;
            if obs.horizon() != horizon {
                bail!(
                    "data horizon {} does not match configured horizon {horizon}",
                    obs.horizon()
                );
            }
            Ok(obs)
        }
    }
}

fn emit_replicate_outputs(
    out_dir: &Path,
    tag: &str,
    reports: &[coupled_smoother::rhee_glynn::UnbiasedReport],
    h_dim: usize,
    summary: &ReplicateSummary,
    resolved: &ResolvedConfig,
) -> anyhow::Result<()> {
    write_file(&out_dir.join("replicates.csv"), |buf| {
        write_replicates_csv(buf, tag, reports, h_dim).map_err(Into::into)
    })?;
    write_file(&out_dir.join("ci_series.csv"), |buf| {
        write_ci_series_csv(buf, summary).map_err(Into::into)
    })?;
    let json = serde_json::json!({
        "config": resolved,
        "estimator": tag,
        "summary": summary,
    });
    write_json(&out_dir.join("summary.json"), &json)?;
    Ok(())
}

fn write_file<F>(path: &Path, write: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn print_survey(survey: &MeetingTimeSurvey) {
    outln(format_args!(
        "meeting times: {} met, {} censored, {} failed",
        survey.taus().len(),
        survey.n_censored(),
        survey.n_failed()
    ));
    if let (Ok(mean), Ok(q50), Ok(q90), Ok(q99)) = (
        survey.mean(),
        survey.quantile(0.5),
        survey.quantile(0.9),
        survey.quantile(0.99),
    ) {
        outln(format_args!(
            "tau: mean {mean:.2}, median {q50:.1}, q90 {q90:.1}, q99 {q99:.1}"
        ));
    }
    if let Ok(k) = survey.suggest_k() {
        outln(format_args!(
            "suggested k = {k} (90% quantile), m = {}",
            2 * k
        ));
    }
}

fn print_summary(tag: &str, summary: &ReplicateSummary) {
    outln(format_args!(
        "{tag}: {} replicates ({} failed), mean cost {:.1} units",
        summary.r_total, summary.r_failed, summary.mean_cost
    ));
    for (i, mean) in summary.mean.iter().enumerate() {
        let sd = summary.sd.as_ref().map(|v| v[i]);
        let lo = summary.ci_low.as_ref().map(|v| v[i]);
        let hi = summary.ci_high.as_ref().map(|v| v[i]);
        match (sd, lo, hi) {
            (Some(sd), Some(lo), Some(hi)) => outln(format_args!(
                "h_{i}: mean={mean:.6} sd={sd:.6} ci=[{lo:.6}, {hi:.6}]"
            )),
            _ => outln(format_args!("h_{i}: mean={mean:.6}")),
        }
    }
}

fn exit_for_status(summary: &ReplicateSummary) -> anyhow::Result<ExitCode> {
    match summary.status {
        RunStatus::Ok => Ok(ExitCode::SUCCESS),
        RunStatus::Warning => {
            eprintln!(
                "warning: {} of {} replicates failed",
                summary.r_failed, summary.r_total
            );
            Ok(ExitCode::from(3))
        }
    }
}
