//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the report is always printed; exits nonzero if any fail.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snngbp_core::coding::{decode, encode, linspace, variance_ratio, EncoderConfig};
use snngbp_core::config::Params;
use snngbp_core::ffg::{
    classic_blr, compare_backends, reference_blr_config, run_blr, run_kalman, Backend, BlrDataset, Experiment,
    SpikingBackend,
};
use snngbp_core::gaussian::{
    addition_backward, addition_forward, blr_posterior, gaussian_product, scaling_backward, scaling_forward,
    KalmanConfig,
};
use snngbp_core::nodes::{
    scaling_apply, AdditionDirection, AdditionNodeSnn, EqualityNodeSnn, PairSampler, ScalingDirection,
};
use snngbp_core::plasticity::{train_equality, TrainingConfig, WeightStore};
use snngbp_core::GaussianMessage;

/// c_100: decoded-to-true variance ratio of a 100-neuron code.
const C_100: f64 = 0.975_448_963_501_317_3;

const TRAIN_SEED: u64 = 7;
const HELD_OUT_SEED: u64 = 99;
const SEEDS: std::ops::Range<u64> = 0..20;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: &str, pass: bool, elapsed: Duration, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {detail} ({:.2}s)", elapsed.as_secs_f64());
        if !pass {
            self.failures += 1;
        }
    }
}

fn g(m: f64, v: f64) -> GaussianMessage {
    GaussianMessage::new(m, v).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_snngbp"))
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = bin().args(args).env_remove("SNNGBP_CONFIG").output().expect("spawn snngbp");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn kalman_gains(report: &mut Report) {
    let t = Instant::now();
    let run = run_kalman(&KalmanConfig::reference(), &[0.0; 10], &Backend::Analytic).unwrap();
    let gains: Vec<f64> = run.steps.iter().map(|s| s.gain.unwrap()).collect();
    let vars: Vec<f64> = run.steps.iter().map(|s| s.posterior.variance()).collect();
    let pred10 = run.steps[9].prediction.variance();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-3;
    let ok = [0.336, 0.254, 0.206].iter().zip(&gains).all(|(e, a)| close(*e, *a))
        && [0.671, 0.508, 0.411].iter().zip(&vars).all(|(e, a)| close(*e, *a))
        && close(pred10, 0.222);
    let el = t.elapsed();
    report.record(
        "1 kalman-table",
        ok && el < Duration::from_secs(1),
        el,
        format!(
            "gains {:.4} {:.4} {:.4}, variances {:.4} {:.4} {:.4}, step-10 prediction variance {pred10:.4}",
            gains[0], gains[1], gains[2], vars[0], vars[1], vars[2]
        ),
    );
}

/// Posterior mean of `w` on a grid, for the reference prior and noise.
fn grid_posterior_mean(xs: &[f64], ys: &[f64]) -> [f64; 2] {
    let cfg = reference_blr_config();
    let grid = linspace(-3.0, 5.0, 200);
    let mut logp = Vec::with_capacity(200 * 200);
    for &w0 in &grid {
        for &w1 in &grid {
            let prior = -0.5 * (cfg.prior_precision[0] * w0 * w0 + cfg.prior_precision[1] * w1 * w1);
            let lik: f64 = xs.iter().zip(ys).map(|(x, y)| -0.5 * cfg.noise_precision * (y - w0 - w1 * x).powi(2)).sum();
            logp.push((w0, w1, prior + lik));
        }
    }
    let max = logp.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m0, mut m1) = (0.0, 0.0, 0.0);
    for (w0, w1, lp) in logp {
        let p = (lp - max).exp();
        z += p;
        m0 += p * w0;
        m1 += p * w1;
    }
    [m0 / z, m1 / z]
}

fn oracle_properties(report: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ok = true;
    for _ in 0..1000 {
        let a = g(uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, 0.1, 5.0));
        let b = g(uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, 0.1, 5.0));
        let p = gaussian_product(a, b).unwrap();
        ok &= (p.precision() - a.precision() - b.precision()).abs() <= 1e-9 * p.precision();
        let s = addition_forward(a, b).unwrap();
        ok &= (s.mean() - a.mean() - b.mean()).abs() <= 1e-12 && (s.variance() - a.variance() - b.variance()).abs() <= 1e-12;
        let back = addition_backward(a, s).unwrap();
        ok &= (back.mean() - b.mean()).abs() <= 1e-9;
        let k = uniform(&mut rng, 0.2, 4.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let r = scaling_backward(scaling_forward(a, k).unwrap(), k).unwrap();
        ok &= (r.mean() - a.mean()).abs() <= 1e-9 && (r.variance() - a.variance()).abs() <= 1e-9;
    }
    let data = BlrDataset::synthetic(3, [1.0, 1.0], 0.5, 4).unwrap();
    let exact = blr_posterior(&data.design(), &data.targets, &reference_blr_config()).unwrap();
    let grid = grid_posterior_mean(&data.inputs, &data.targets);
    let rel: Vec<f64> = (0..2).map(|i| ((grid[i] - exact.mean[i]) / exact.mean[i]).abs()).collect();
    ok &= rel.iter().all(|&r| r <= 0.02);
    let el = t.elapsed();
    report.record(
        "2 oracle-properties",
        ok && el < Duration::from_secs(10),
        el,
        format!("1000 random algebra checks; blr vs 200x200 grid relative mean error {:.2e}, {:.2e}", rel[0], rel[1]),
    );
}

fn round_trip(report: &mut Report) {
    let t = Instant::now();
    let cfg = EncoderConfig { neurons: 100, ..EncoderConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_m, mut worst_c) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let msg = g(uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, 0.3, 3.0));
        let d = decode(&encode(msg, &cfg).unwrap()).unwrap();
        worst_m = worst_m.max((d.mean() - msg.mean()).abs());
        worst_c = worst_c.max((d.variance() / msg.variance() - C_100).abs());
    }
    let pinned = (variance_ratio(100) - C_100).abs() <= 1e-12;
    report.record(
        "3 encode-decode",
        worst_m <= 1e-9 && worst_c <= 1e-6 && pinned,
        t.elapsed(),
        format!("100 cases: max |dm| {worst_m:.1e}, max |ratio - c_100| {worst_c:.1e}, c_100 = {C_100}"),
    );
}

fn trained_equality(report: &mut Report, dir: &Path) -> Option<WeightStore> {
    let t = Instant::now();
    let weights = dir.join("weights.txt");
    let (code, _) = run_cli(&["train", "--out", weights.to_str().unwrap(), "--seed", &TRAIN_SEED.to_string()]);
    let store = match (code, WeightStore::load(&weights, Some(100))) {
        (0, Ok(w)) => w,
        (c, e) => {
            report.record("4 trained-equality", false, t.elapsed(), format!("train exited {c}, load {:?}", e.err()));
            return None;
        }
    };
    let node = EqualityNodeSnn::new(Some(store.clone()), Params::default()).unwrap();
    let sampler = PairSampler::default();
    let mut rng = ChaCha8Rng::seed_from_u64(HELD_OUT_SEED);
    let mut good = 0;
    let (mut worst_m, mut worst_v) = (0.0f64, 0.0f64);
    for case in 0..50u64 {
        let (x, y) = sampler.sample(&mut rng).unwrap();
        let truth = gaussian_product(x, y).unwrap();
        let Ok(est) = node.apply(x, y, 1000 + case) else { continue };
        let dm = (est.mean() - truth.mean()).abs();
        let dv = (est.variance() - truth.variance()).abs() / truth.variance();
        worst_m = worst_m.max(dm);
        worst_v = worst_v.max(dv);
        if dm <= 0.1 * truth.std_dev() + 0.05 && dv <= 0.25 {
            good += 1;
        }
    }
    let el = t.elapsed();
    report.record(
        "4 trained-equality",
        good >= 45 && el < Duration::from_secs(300),
        el,
        format!("{good}/50 held-out pairs within tolerance (max |dm| {worst_m:.3}, max rel dv {worst_v:.3})"),
    );
    Some(store)
}

fn spiking_kalman(report: &mut Report, weights: &WeightStore) {
    let t = Instant::now();
    let snn = Backend::Spiking(Box::new(SpikingBackend::new(Params::default(), Some(weights.clone()), 0).unwrap()));
    let seeds: Vec<u64> = SEEDS.collect();
    let table = compare_backends(Experiment::Kalman, &seeds, &Backend::Analytic, &snn);
    let el = t.elapsed();
    let (ok, detail) = match table {
        Ok(table) => {
            let dv = table.rows.iter().map(|r| (r.candidate.variance() - r.reference.variance()).abs()).fold(0.0, f64::max);
            let dm = table.max_abs_err_m();
            (dm <= 0.5 && dv <= 0.12, format!("{} seeds x 10 steps: max |dm| {dm:.3}, max |dv| {dv:.3}", seeds.len()))
        }
        Err(e) => (false, format!("run failed: {e}")),
    };
    report.record("5 spiking-kalman", ok && el < Duration::from_secs(600), el, detail);
}

fn addition(report: &mut Report) {
    let t = Instant::now();
    let node = AdditionNodeSnn::new(Params::default()).unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for (name, dir) in [("fwd", AdditionDirection::Forward), ("bwd", AdditionDirection::BackwardY)] {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut good = 0;
        for _ in 0..20 {
            let a = g(uniform(&mut rng, -3.0, 3.0), uniform(&mut rng, 0.3, 3.0));
            let b = g(uniform(&mut rng, -3.0, 3.0), uniform(&mut rng, 0.3, 3.0));
            assert!(a.std_dev().max(b.std_dev()) / a.std_dev().min(b.std_dev()) <= 4.0);
            let truth = match dir {
                AdditionDirection::Forward => addition_forward(a, b).unwrap(),
                _ => addition_backward(a, b).unwrap(),
            };
            if let Ok(est) = node.apply(a, b, dir) {
                let dm = (est.mean() - truth.mean()).abs();
                let dv = (est.variance() - truth.variance()).abs() / truth.variance();
                if dm <= 0.15 * (a.std_dev() + b.std_dev()) && dv <= 0.30 {
                    good += 1;
                }
            }
        }
        ok &= good >= 18;
        details.push(format!("{name} {good}/20"));
    }
    let el = t.elapsed();
    report.record("6 addition", ok && el < Duration::from_secs(600), el, details.join(", "));
}

fn scaling(report: &mut Report) {
    let t = Instant::now();
    let params = Params::default();
    let c = variance_ratio(params.n_neurons);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_m, mut worst_v) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let msg = g(uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, 0.3, 3.0));
        let a = uniform(&mut rng, 0.5, 3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        for dir in [ScalingDirection::Forward, ScalingDirection::Backward] {
            let truth = match dir {
                ScalingDirection::Forward => scaling_forward(msg, a).unwrap(),
                ScalingDirection::Backward => scaling_backward(msg, a).unwrap(),
            };
            for corrected in [false, true] {
                let est = scaling_apply(msg, a, dir, &params, corrected).unwrap();
                let expect_v = truth.variance() * if corrected { 1.0 } else { c };
                worst_m = worst_m.max((est.mean() - truth.mean()).abs());
                worst_v = worst_v.max((est.variance() - expect_v).abs());
            }
        }
    }
    let el = t.elapsed();
    report.record(
        "7 scaling",
        worst_m <= 1e-9 && worst_v <= 1e-6 && el < Duration::from_secs(10),
        el,
        format!("20 cases x fwd/bwd x raw/corrected: max |dm| {worst_m:.1e}, max |dv| {worst_v:.1e}"),
    );
}

fn stdp_convergence(report: &mut Report) {
    let t = Instant::now();
    let params = Params::default();
    let outcome = train_equality(&TrainingConfig { seed: TRAIN_SEED, ..TrainingConfig::default() }, &params).unwrap();
    let tail = outcome.tail_mean_abs_change(0.1);
    let bounded = outcome.trajectory.iter().flatten().all(|&w| (params.w_min..=params.w_max).contains(&w));
    report.record(
        "8 stdp-convergence",
        tail < 0.05 * params.w_max && bounded,
        t.elapsed(),
        format!(
            "tail mean |dw| {tail:.5} (bound {:.3}); weights within [{}, {}]: {bounded}",
            0.05 * params.w_max,
            params.w_min,
            params.w_max
        ),
    );
}

fn blr_agreement(report: &mut Report, weights: &WeightStore) {
    let t = Instant::now();
    let snn = Backend::Spiking(Box::new(SpikingBackend::new(Params::default(), Some(weights.clone()), 0).unwrap()));
    let seeds: Vec<u64> = SEEDS.collect();
    let cfg = reference_blr_config();
    let table = compare_backends(Experiment::Blr, &seeds, &Backend::Analytic, &snn);
    let mut classic_gap = 0.0f64;
    for &s in &seeds {
        let data = BlrDataset::synthetic(10, [1.0, 1.0], 0.5, s).unwrap();
        let classic = classic_blr(&data, &cfg).unwrap();
        let mp = run_blr(&data, &cfg, &Backend::Analytic, 1).unwrap().posteriors;
        classic_gap = classic.iter().zip(&mp).map(|(a, b)| (a.mean() - b.mean()).abs()).fold(classic_gap, f64::max);
    }
    let el = t.elapsed();
    let (ok, detail) = match table {
        Ok(table) => {
            let gap = table.max_abs_err_m();
            (
                gap <= 0.1,
                format!("{} seeds: max |mp - snn| mean gap {gap:.4}; classic vs mp gap {classic_gap:.4} (reported)", seeds.len()),
            )
        }
        Err(e) => (false, format!("run failed: {e}")),
    };
    report.record("9 blr-agreement", ok && el < Duration::from_secs(600), el, detail);
}

fn determinism(report: &mut Report, dir: &Path) {
    let t = Instant::now();
    let weights = dir.join("weights.txt");
    let w = weights.to_str().unwrap();
    let commands: [&[&str]; 5] = [
        &["kalman", "--backend", "both", "--seed", "3", "--weights", w],
        &["blr", "--backend", "both", "--seed", "5", "--weights", w],
        &["eval", "add", "--direction", "bwd", "--random", "5", "--seed", "1"],
        &["eval", "equality", "--random", "10", "--seed", "4", "--weights", w],
        &["encode", "--mean", "0.5", "--variance", "2"],
    ];
    let mut ok = true;
    for args in commands {
        let (c1, a) = run_cli(args);
        let (c2, b) = run_cli(args);
        ok &= c1 == 0 && c2 == 0 && a == b && a.starts_with(b"# snngbp ");
    }
    let w2 = dir.join("weights2.txt");
    run_cli(&["train", "--out", w2.to_str().unwrap(), "--seed", &TRAIN_SEED.to_string()]);
    ok &= std::fs::read(&weights).ok() == std::fs::read(&w2).ok();
    report.record("10 determinism", ok, t.elapsed(), "re-runs give byte-identical CSVs and weight files".into());
}

fn main() {
    // Respect `cargo test -- <filter>` style invocations that target other tests.
    if std::env::args().skip(1).any(|a| a == "--list") {
        return;
    }
    let dir = tempfile::tempdir().expect("tempdir");
    let mut report = Report { failures: 0 };
    kalman_gains(&mut report);
    oracle_properties(&mut report);
    round_trip(&mut report);
    let weights = trained_equality(&mut report, dir.path());
    match &weights {
        Some(w) => spiking_kalman(&mut report, w),
        None => report.record("5 spiking-kalman", false, Duration::ZERO, "no trained weights".into()),
    }
    addition(&mut report);
    scaling(&mut report);
    stdp_convergence(&mut report);
    match &weights {
        Some(w) => blr_agreement(&mut report, w),
        None => report.record("9 blr-agreement", false, Duration::ZERO, "no trained weights".into()),
    }
    determinism(&mut report, dir.path());
    if report.failures > 0 {
        println!("{} acceptance criteria failed", report.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
