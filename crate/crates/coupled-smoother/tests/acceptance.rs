//! Acceptance suite: one test per release criterion, each printing a PASS or
//! FAIL line with its measured statistics (run with `--nocapture` to see the
//! lines for passing criteria too).

mod common;

use std::time::Instant;

use common::{chi_square_critical, chi_square_statistic, mean, standard_error};
use coupled_smoother::baselines::pf_smoother;
use coupled_smoother::cpf::{ccpf_sweep, cpf_sweep, pf_init, CpfOptions, Proposal};
use coupled_smoother::kalman::rts_smoother;
use coupled_smoother::models::{
    ar1_linear_gaussian, generate_data, make_ar1, make_lotka_volterra, make_unlikely_default,
    Ar1Params, LotkaVolterraParams,
};
use coupled_smoother::report::{to_csv_string, write_replicates_csv};
use coupled_smoother::resampling::{maximal_coupling_pair, WeightVector};
use coupled_smoother::rhee_glynn::{
    combine_h_km, cost_units, meeting_time_survey, run_replicates, EstimatorConfig,
};
use coupled_smoother::ssm::{StateSpaceModel, TestFunction};
use coupled_smoother::stats::correlation;
use coupled_smoother::stream::{replicate_stream, KeyedStream, NoiseTable};

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {id} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {id} ({name}) failed: {detail}");
}

#[test]
fn acceptance_01_unbiasedness_vs_kalman() {
    let start = Instant::now();
    let params = Ar1Params::default();
    let model = make_ar1(params).unwrap();
    let (_, obs) = generate_data(&model, 10, 2024).unwrap();
    let truth: Vec<f64> = rts_smoother(&ar1_linear_gaussian(&params), &obs)
        .unwrap()
        .iter()
        .map(|m| m.mean[0])
        .collect();

    let r = 5000;
    let config = EstimatorConfig::new(2, 4, CpfOptions::new(64).with_ancestor_sampling(true));
    let run = run_replicates(&model, &obs, &config, r, 11, 0.05, 1).unwrap();
    assert_eq!(run.summary.r_failed, 0);

    let mut within = 0usize;
    let mut worst = 0.0f64;
    for t in 0..=10 {
        let series: Vec<f64> = run.reports.iter().map(|rep| rep.value[t]).collect();
        let dev = (mean(&series) - truth[t]).abs();
        let band = 4.0 * standard_error(&series);
        if dev <= band {
            within += 1;
        }
        worst = worst.max(dev / (band / 4.0));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = within >= 10 && elapsed < 300.0;
    verdict(
        1,
        "unbiasedness vs Kalman oracle",
        pass,
        &format!(
            "{within}/11 coordinates within 4 se (worst {worst:.2} se), {elapsed:.1}s single-threaded"
        ),
    );
}

#[test]
fn acceptance_02_meeting_time_n_sweep() {
    let params = Ar1Params::default();
    let model = make_ar1(params).unwrap();
    let (_, obs) = generate_data(&model, 100, 2025).unwrap();
    let bands: [(usize, f64, f64); 5] = [
        (16, 50.0, 200.0),
        (128, 8.0, 30.0),
        (256, 4.0, 14.0),
        (512, 2.0, 8.0),
        (1024, 2.0, 6.0),
    ];
    let mut means = Vec::new();
    let mut pass = true;
    let mut detail = String::new();
    for (n, lo, hi) in bands {
        let config = EstimatorConfig::new(0, 1, CpfOptions::new(n).with_ancestor_sampling(true));
        let survey = meeting_time_survey(&model, &obs, &config, 500, 7 + n as u64, 0).unwrap();
        pass &= survey.n_censored() == 0 && survey.n_failed() == 0;
        let m = survey.mean().unwrap();
        pass &= (lo..=hi).contains(&m);
        detail.push_str(&format!("N={n}: {m:.2} in [{lo},{hi}]; "));
        means.push(m);
    }
    for pair in means.windows(2) {
        pass &= pair[1] < pair[0];
    }
    verdict(
        2,
        "meeting times decrease with N within reported bands",
        pass,
        detail.trim_end(),
    );
}

#[test]
fn acceptance_03_kernel_variants_order_meeting_times() {
    let params = Ar1Params::default();
    let model = make_ar1(params).unwrap();
    let (_, obs) = generate_data(&model, 50, 2026).unwrap();
    let variants = [
        ("bootstrap", false),
        ("bootstrap+AS", true),
        ("auxiliary", false),
        ("auxiliary+AS", true),
    ];
    let mut taus = Vec::new();
    for (i, (label, anc)) in variants.iter().enumerate() {
        let proposal = if label.starts_with("aux") {
            Proposal::Auxiliary
        } else {
            Proposal::Bootstrap
        };
        let opts = CpfOptions::new(128)
            .with_ancestor_sampling(*anc)
            .with_proposal(proposal);
        let config = EstimatorConfig::new(0, 1, opts);
        let survey = meeting_time_survey(&model, &obs, &config, 300, 600 + i as u64, 0).unwrap();
        assert_eq!(survey.n_censored() + survey.n_failed(), 0);
        taus.push(survey.mean().unwrap());
    }
    let (boot, boot_as, aux, aux_as) = (taus[0], taus[1], taus[2], taus[3]);
    let pass = boot > boot_as
        && boot_as > aux
        && aux >= aux_as
        && (9.0..=36.0).contains(&boot)
        && (2.0..=7.0).contains(&aux_as);
    verdict(
        3,
        "bootstrap/auxiliary and ancestor-sampling ordering",
        pass,
        &format!(
            "bootstrap {boot:.2} > bootstrap+AS {boot_as:.2} > auxiliary {aux:.2} >= auxiliary+AS {aux_as:.2}"
        ),
    );
}

#[test]
fn acceptance_04_geometric_meeting_time_tail() {
    let params = Ar1Params::default();
    let model = make_ar1(params).unwrap();
    let (_, obs) = generate_data(&model, 50, 2027).unwrap();
    let config = EstimatorConfig::new(0, 1, CpfOptions::new(128));
    let survey = meeting_time_survey(&model, &obs, &config, 1000, 31, 0).unwrap();
    let censored = survey.n_censored();
    let survival = survey.survival();
    let median = survey.quantile(0.5).unwrap() as usize;
    let mut ns = Vec::new();
    let mut logs = Vec::new();
    for (n, s) in survival.iter().enumerate() {
        if n >= median && *s > 0.0 {
            ns.push(n as f64);
            logs.push(s.ln());
        }
    }
    let corr = correlation(&ns, &logs);
    let pass = corr <= -0.9 && censored == 0;
    verdict(
        4,
        "geometric tail of the meeting time",
        pass,
        &format!(
            "log-survival correlation {corr:.3} over {} points beyond median {median}, {censored} censored",
            ns.len()
        ),
    );
}

#[test]
fn acceptance_05_maximal_coupling_exactness() {
    let mut rng = KeyedStream::from_key(&[505]);
    let draws = 100_000usize;
    let mut pass = true;
    let mut worst_chi = 0.0f64;
    let mut worst_overlap = 0.0f64;
    for pair_idx in 0..20 {
        let n = [2usize, 5, 50][pair_idx % 3];
        let raw: Vec<f64> = (0..n).map(|_| 0.5 + rng.uniform()).collect();
        let raw_tilde: Vec<f64> = (0..n).map(|_| 0.5 + rng.uniform()).collect();
        let w = WeightVector::from_log(raw.iter().map(|x| x.ln()).collect()).unwrap();
        let wt = WeightVector::from_log(raw_tilde.iter().map(|x| x.ln()).collect()).unwrap();
        let overlap = w.overlap(&wt);

        let mut counts = vec![0usize; n];
        let mut counts_tilde = vec![0usize; n];
        let mut equal = 0usize;
        for _ in 0..draws {
            let pair = maximal_coupling_pair(&w, &wt, &mut rng).unwrap();
            counts[pair.a as usize] += 1;
            counts_tilde[pair.a_tilde as usize] += 1;
            if pair.a == pair.a_tilde {
                equal += 1;
            }
        }
        let critical = chi_square_critical(n - 1, 0.001);
        let chi_a = chi_square_statistic(&counts, w.normalized());
        let chi_b = chi_square_statistic(&counts_tilde, wt.normalized());
        worst_chi = worst_chi.max(chi_a / critical).max(chi_b / critical);
        pass &= chi_a < critical && chi_b < critical;
        let gap = (equal as f64 / draws as f64 - overlap).abs();
        worst_overlap = worst_overlap.max(gap);
        pass &= gap <= 0.01;
    }
    verdict(
        5,
        "maximal coupling marginals and overlap",
        pass,
        &format!(
            "20 weight pairs x {draws} draws: worst chi-square ratio {worst_chi:.2}, worst overlap gap {worst_overlap:.4}"
        ),
    );
}

#[test]
fn acceptance_06_faithfulness_of_the_coupled_kernel() {
    let params = Ar1Params::default();
    let model = make_ar1(params).unwrap();
    let (_, obs) = generate_data(&model, 25, 2028).unwrap();
    let opts = CpfOptions::new(64);
    let mut rng = replicate_stream(606, 0);

    // Equal references must produce identical outputs, every time.
    let mut identical = 0usize;
    let trials = 1000;
    for s in 0..trials {
        let reference = pf_init(&model, &obs, 64, &mut rng).unwrap();
        let noise = NoiseTable::new(606, 1, s as u64, 25, 64, 1);
        let out = ccpf_sweep(
            &reference, &reference, &model, &obs, &opts, &noise, &mut rng, None,
        )
        .unwrap();
        let bit_equal = out
            .path
            .as_flat()
            .iter()
            .zip(out.path_tilde.as_flat())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if out.met && bit_equal {
            identical += 1;
        }
    }

    // Once a coupled pair meets, fifty further coupled sweeps stay equal.
    let x0 = pf_init(&model, &obs, 64, &mut rng).unwrap();
    let xt0 = pf_init(&model, &obs, 64, &mut rng).unwrap();
    let noise = NoiseTable::new(606, 2, 0, 25, 64, 1);
    let (mut x, _) = cpf_sweep(&x0, &model, &obs, &opts, &noise, &mut rng, None).unwrap();
    let mut xt = xt0;
    let mut sweep = 1u64;
    while x != xt {
        let noise = NoiseTable::new(606, 2, sweep, 25, 64, 1);
        let out = ccpf_sweep(&x, &xt, &model, &obs, &opts, &noise, &mut rng, None).unwrap();
        x = out.path;
        xt = out.path_tilde;
        sweep += 1;
        assert!(sweep < 10_000);
    }
    let mut post_equal = 0usize;
    for _ in 0..50 {
        let noise = NoiseTable::new(606, 2, sweep, 25, 64, 1);
        let out = ccpf_sweep(&x, &xt, &model, &obs, &opts, &noise, &mut rng, None).unwrap();
        let bit_equal = out
            .path
            .as_flat()
            .iter()
            .zip(out.path_tilde.as_flat())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if out.met && bit_equal {
            post_equal += 1;
        }
        x = out.path;
        xt = out.path_tilde;
        sweep += 1;
    }
    let pass = identical == trials && post_equal == 50;
    verdict(
        6,
        "faithfulness: equal references stay equal",
        pass,
        &format!("{identical}/{trials} equal-reference sweeps identical, {post_equal}/50 post-meeting sweeps identical"),
    );
}

#[test]
fn acceptance_07_unlikely_observation_bias_and_coverage() {
    let start = Instant::now();
    let (model, obs) = make_unlikely_default();
    let params = Ar1Params::unlikely();
    let truth = rts_smoother(&ar1_linear_gaussian(&params), &obs).unwrap()[9].mean[0];
    let h = TestFunction::StateAt { t: 9, coord: 0 };

    // (a) The plain particle filter is measurably biased at N = 128.
    let runs = 2000;
    let mut estimates = Vec::with_capacity(runs);
    for rep in 0..runs {
        let mut rng = replicate_stream(707, rep as u64);
        estimates.push(pf_smoother(&model, &obs, 128, &h, &mut rng).unwrap()[0]);
    }
    let bias = mean(&estimates) - truth;
    let se = standard_error(&estimates);
    let bias_visible = bias.abs() > 5.0 * se;

    // (b) The unbiased estimator's confidence interval covers the truth, with
    // k = m set to the pilot's mean meeting time (no ancestor sampling).
    let pilot_cfg = EstimatorConfig::new(0, 1, CpfOptions::new(128));
    let pilot = meeting_time_survey(&model, &obs, &pilot_cfg, 100, 708, 0).unwrap();
    let k = pilot.mean().unwrap().ceil() as usize;
    let config = EstimatorConfig::new(k, k, CpfOptions::new(128)).with_test_function(h.clone());
    let run = run_replicates(&model, &obs, &config, 2000, 709, 0.05, 0).unwrap();
    let lo = run.summary.ci_low.as_ref().unwrap()[0];
    let hi = run.summary.ci_high.as_ref().unwrap()[0];
    let covers = lo <= truth && truth <= hi;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = bias_visible && covers && run.summary.r_failed == 0 && elapsed < 600.0;
    verdict(
        7,
        "highly-informative observation: PF bias vs unbiased coverage",
        pass,
        &format!(
            "pf bias {bias:.4} ({:.1} se); unbiased CI [{lo:.4}, {hi:.4}] vs truth {truth:.4} (k = m = {k}); {elapsed:.1}s",
            bias.abs() / se
        ),
    );
}

#[test]
fn acceptance_08_rao_blackwellization() {
    let params = Ar1Params::default();
    let model = make_ar1(params).unwrap();
    let (_, obs) = generate_data(&model, 10, 2029).unwrap();
    let r = 5000;
    let base = EstimatorConfig::new(2, 4, CpfOptions::new(64));
    let rb_run = run_replicates(&model, &obs, &base, r, 808, 0.05, 0).unwrap();
    let sel_run = run_replicates(
        &model,
        &obs,
        &base.clone().with_rao_blackwell(false),
        r,
        808,
        0.05,
        0,
    )
    .unwrap();

    let mut pass = true;
    let mut worst_mean = 0.0f64;
    let mut worst_var_excess = f64::NEG_INFINITY;
    for t in 0..=10 {
        let rb: Vec<f64> = rb_run.reports.iter().map(|rep| rep.value[t]).collect();
        let sel: Vec<f64> = sel_run.reports.iter().map(|rep| rep.value[t]).collect();
        let diffs: Vec<f64> = rb.iter().zip(&sel).map(|(a, b)| a - b).collect();
        let dse = standard_error(&diffs).max(1e-12);
        let ratio = mean(&diffs).abs() / dse;
        worst_mean = worst_mean.max(ratio);
        pass &= ratio <= 4.0;

        let var_rb = common::std_dev(&rb).powi(2);
        let var_sel = common::std_dev(&sel).powi(2);
        let mut boot = KeyedStream::from_key(&[909, t as u64]);
        let mut deltas = Vec::with_capacity(200);
        for _ in 0..200 {
            let idx: Vec<usize> = (0..r)
                .map(|_| (boot.uniform() * r as f64) as usize % r)
                .collect();
            let mr = mean(&idx.iter().map(|&i| rb[i]).collect::<Vec<_>>());
            let ms = mean(&idx.iter().map(|&i| sel[i]).collect::<Vec<_>>());
            let vr: f64 = idx.iter().map(|&i| (rb[i] - mr) * (rb[i] - mr)).sum::<f64>()
                / (r - 1) as f64;
            let vs: f64 = idx.iter().map(|&i| (sel[i] - ms) * (sel[i] - ms)).sum::<f64>()
                / (r - 1) as f64;
            deltas.push(vr - vs);
        }
        let boot_se = common::std_dev(&deltas);
        let excess = var_rb - var_sel - 3.0 * boot_se;
        worst_var_excess = worst_var_excess.max(excess);
        pass &= excess <= 0.0;
    }
    verdict(
        8,
        "Rao-Blackwellization: equal means, no variance inflation",
        pass,
        &format!(
            "worst paired mean deviation {worst_mean:.2} se; worst variance excess {worst_var_excess:.2e}"
        ),
    );
}

#[test]
fn acceptance_09_lotka_volterra_desk_scale() {
    let model = make_lotka_volterra(LotkaVolterraParams::default()).unwrap();
    let horizon = 50;
    let (_, obs) = generate_data(&model, horizon, 909).unwrap();
    let h = TestFunction::Coord { coord: 1 };
    let n = 512usize;

    // Reference: a long CPF chain, averaged after burn-in.
    let chain_len = 20_000usize;
    let burn = 500usize;
    let opts = CpfOptions::new(n);
    let mut rng = replicate_stream(910, 0);
    let mut x = pf_init(&model, &obs, n, &mut rng).unwrap();
    let mut reference = vec![0.0; horizon + 1];
    let mut kept = 0usize;
    for s in 0..chain_len {
        let noise = NoiseTable::new(911, 0, s as u64, horizon, n, model.noise_dim());
        let (next, rb) = cpf_sweep(&x, &model, &obs, &opts, &noise, &mut rng, Some(&h)).unwrap();
        if s >= burn {
            for (acc, v) in reference.iter_mut().zip(&rb.value) {
                *acc += v;
            }
            kept += 1;
        }
        x = next;
    }
    for v in reference.iter_mut() {
        *v /= kept as f64;
    }

    // Pilot, then the replicate run.
    let pilot_cfg = EstimatorConfig::new(0, 1, opts);
    let pilot = meeting_time_survey(&model, &obs, &pilot_cfg, 100, 912, 0).unwrap();
    let k = pilot.suggest_k().unwrap();
    let config = EstimatorConfig::from_pilot(&pilot, opts)
        .unwrap()
        .with_test_function(h.clone());
    let r = 100;
    let run = run_replicates(&model, &obs, &config, r, 913, 0.05, 0).unwrap();

    let succeeded = run.reports.iter().filter(|rep| rep.failed.is_none()).count();
    let success_ok = succeeded * 100 >= 95 * r;

    let lo = run.summary.ci_low.as_ref().unwrap();
    let hi = run.summary.ci_high.as_ref().unwrap();
    let mut covered = 0usize;
    for t in 0..=horizon {
        if lo[t] <= reference[t] && reference[t] <= hi[t] {
            covered += 1;
        }
    }
    let coverage_ok = covered * 100 >= 90 * (horizon + 1);

    let cost_ok = run
        .reports
        .iter()
        .filter(|rep| rep.failed.is_none())
        .all(|rep| rep.cost_units == cost_units(rep.tau.unwrap(), config.m, n));

    let pass = success_ok && coverage_ok && cost_ok;
    verdict(
        9,
        "Lotka-Volterra desk-scale run",
        pass,
        &format!(
            "k = {k}, m = {}: {succeeded}/{r} replicates succeeded; CI covers long-chain reference at {covered}/{} time points; cost formula exact: {cost_ok}",
            config.m,
            horizon + 1
        ),
    );
}

#[test]
fn acceptance_10_estimator_combination_matches_brute_force() {
    let mut rng = KeyedStream::from_key(&[1010]);
    let mut worst = 0.0f64;
    let mut pass = true;
    for _ in 0..1000 {
        let k = (rng.uniform() * 6.0) as usize;
        let m = k + (rng.uniform() * 6.0) as usize;
        let tau = 1 + (rng.uniform() * 11.0) as usize;
        let dim = 3;
        let len_x = m.max(tau.saturating_sub(1)) + 1;
        let h_x: Vec<Vec<f64>> = (0..len_x)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();
        let len_xt = tau.saturating_sub(1).max(1);
        let h_xt: Vec<Vec<f64>> = (0..len_xt)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();

        let got = combine_h_km(&h_x, &h_xt, k, m, tau).unwrap();

        // Brute force: average the per-start telescoping estimators.
        let span = (m - k + 1) as f64;
        let mut brute = vec![0.0; dim];
        for start in k..=m {
            for d in 0..dim {
                brute[d] += h_x[start][d] / span;
            }
            for l in (start + 1)..tau {
                for d in 0..dim {
                    brute[d] += (h_x[l][d] - h_xt[l - 1][d]) / span;
                }
            }
        }
        for d in 0..dim {
            let rel = (got[d] - brute[d]).abs() / brute[d].abs().max(1.0);
            worst = worst.max(rel);
            pass &= rel <= 1e-12;
        }
    }
    verdict(
        10,
        "time-averaged estimator matches brute-force evaluation",
        pass,
        &format!("1000 randomized (k, m, tau) instances, worst relative gap {worst:.2e}"),
    );
}

#[test]
fn acceptance_11_parallel_invariance_of_outputs() {
    let params = Ar1Params::default();
    let model = make_ar1(params).unwrap();
    let (_, obs) = generate_data(&model, 10, 2030).unwrap();
    let config = EstimatorConfig::new(1, 3, CpfOptions::new(64));
    let csv_for = |workers: usize| {
        let run = run_replicates(&model, &obs, &config, 50, 1111, 0.05, workers).unwrap();
        to_csv_string(|buf| write_replicates_csv(buf, "unbiased", &run.reports, 11)).unwrap()
    };
    let serial = csv_for(1);
    let wide = csv_for(8);
    let pass = serial == wide && serial.lines().count() == 51;
    verdict(
        11,
        "bit-identical outputs for any worker count",
        pass,
        &format!(
            "replicates.csv identical across 1 and 8 workers ({} bytes)",
            serial.len()
        ),
    );
}
