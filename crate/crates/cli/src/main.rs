use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use snngbp_core::coding::{self, decode, decode_corrected, encode, rates_to_spikes, RateCode, SpikeScheme, SpikeTrain};
use snngbp_core::config::Params;
use snngbp_core::ffg::{
    classic_blr, compare_backends, generate_observations, reference_blr_config, run_blr, run_kalman, Backend,
    BlrDataset, Experiment, KalmanRun, SpikingBackend,
};
use snngbp_core::gaussian::KalmanConfig;
use snngbp_core::nodes::eval_csv;
use snngbp_core::plasticity::{train_equality, TrainingConfig, WeightStore};
use snngbp_core::GaussianMessage;

mod eval;
mod output;
mod plot;

use eval::{Direction, Evaluator, NodeArg};
use output::{emit, read_file, CmdResult, Failure, EXIT_MISSING, EXIT_TOLERANCE};

#[derive(Parser)]
#[command(name = "snngbp", version, about = "Gaussian belief propagation with spiking neural networks")]
struct Cli {
    /// key=value parameter file.
    #[arg(long, global = true, env = "SNNGBP_CONFIG")]
    config: Option<PathBuf>,
    /// Override one parameter, e.g. `--set n_neurons=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the equality node's input weights with STDP.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Weight trajectory CSV [default: <out>.trajectory.csv].
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Also render the trajectory as SVG.
        #[arg(long)]
        plot: bool,
    },
    /// Compare a spiking node with its closed-form rule.
    Eval {
        #[arg(value_enum)]
        node: NodeArg,
        #[arg(long, default_value = "fwd")]
        direction: String,
        /// Case file (see README for the format).
        #[arg(long, conflicts_with = "random")]
        cases: Option<PathBuf>,
        /// Number of seeded random cases.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 5 when the tolerances are not met.
        #[arg(long)]
        check: bool,
        /// Undo the decoder's variance truncation bias (mul only).
        #[arg(long)]
        corrected: bool,
    },
    /// Scalar Kalman filter as message passing.
    Kalman {
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = BackendArg::Analytic)]
        backend: BackendArg,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// SVG of the filtered means and the observations.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// With `--backend both`: exit 5 unless |Δm| <= 0.5 and |Δv| <= 0.12 at every step.
        #[arg(long)]
        check: bool,
    },
    /// Bayesian linear regression `y = w0 + w1 x` on synthetic data.
    Blr {
        #[arg(long, default_value_t = 10)]
        n_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = BackendArg::Analytic)]
        backend: BackendArg,
        #[arg(long, default_value_t = 1)]
        sweeps: usize,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// SVG of the regression line ± one predictive std per method.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// With `--backend both`: exit 5 unless every mean gap is <= 0.1.
        #[arg(long)]
        check: bool,
    },
    /// Population-encode a Gaussian message.
    Encode {
        #[arg(long, allow_hyphen_values = true)]
        mean: f64,
        #[arg(long)]
        variance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one window of spikes.
        #[arg(long)]
        spikes: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SchemeArg::Periodic)]
        scheme: SchemeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decode a rate code (or spike counts on its grid).
    Decode {
        #[arg(long)]
        rates: PathBuf,
        /// Spike CSV whose counts replace the rates.
        #[arg(long)]
        spikes: Option<PathBuf>,
        #[arg(long)]
        corrected: bool,
    },
    /// Multi-seed spiking-vs-analytic comparison of an experiment.
    Compare {
        #[arg(value_parser = parse_experiment)]
        experiment: Experiment,
        /// Seeds 0..n.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Analytic,
    Snn,
    Both,
}

impl BackendArg {
    fn analytic(self) -> bool {
        self != BackendArg::Snn
    }

    fn snn(self) -> bool {
        self != BackendArg::Analytic
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Periodic,
    Poisson,
    Slotted,
}

impl From<SchemeArg> for SpikeScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Periodic => SpikeScheme::Periodic,
            SchemeArg::Poisson => SpikeScheme::Poisson,
            SchemeArg::Slotted => SpikeScheme::Slotted,
        }
    }
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse().map_err(|e: snngbp_core::Error| e.to_string())
}

fn load_params(cli: &Cli) -> CmdResult<Params> {
    let mut params = match &cli.config {
        Some(path) => Params::parse(&read_file(path)?)?,
        None => Params::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        params.set(k.trim(), v.trim())?;
    }
    params.validate()?;
    Ok(params)
}

/// Any problem with the weight file counts as a missing artifact.
fn load_weights(path: Option<&Path>, params: &Params) -> CmdResult<WeightStore> {
    let path = path.ok_or_else(|| Failure::new(EXIT_MISSING, "this command needs trained weights (--weights)"))?;
    WeightStore::load(path, Some(params.n_neurons))
        .map_err(|e| Failure::new(EXIT_MISSING, format!("unusable weight file {}: {e}", path.display())))
}

fn spiking(params: &Params, weights: Option<&Path>, seed: u64) -> CmdResult<Backend> {
    let w = load_weights(weights, params)?;
    Ok(Backend::Spiking(Box::new(SpikingBackend::new(*params, Some(w), seed)?)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("snngbp: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    let params = load_params(cli)?;
    match &cli.command {
        Command::Train { out, trajectory, seed, samples, plot } => {
            cmd_train(&params, out, trajectory.as_deref(), *seed, *samples, *plot)
        }
        Command::Eval { node, direction, cases, random, seed, weights, out, check, corrected } => {
            let dir = Direction::parse(*node, direction)?;
            let cases = match (cases, random) {
                (Some(path), _) => eval::load_cases(path, *node)?,
                (None, Some(k)) => eval::random_cases(*node, &dir, *k, *seed)?,
                (None, None) => return Err(Failure::usage("eval needs --cases PATH or --random K")),
            };
            let weights = match node {
                NodeArg::Equality => Some(load_weights(weights.as_deref(), &params)?),
                _ => None,
            };
            let evaluator = Evaluator::new(params, weights, *corrected, *seed)?;
            let rows = evaluator.run(&dir, &cases)?;
            emit(out.as_deref(), &params, *seed, &eval_csv(direction, &rows))?;
            let max_m = rows.iter().map(|r| r.abs_err_m()).fold(0.0, f64::max);
            let max_v = rows.iter().map(|r| r.rel_err_v()).fold(0.0, f64::max);
            let verdict = eval::check(&dir, &cases, &rows, &params, *corrected);
            eprintln!(
                "{} {direction}: cases={} max_abs_err_m={max_m:.6} max_rel_err_v={max_v:.6} within_tolerance={}/{}",
                node_name(*node),
                rows.len(),
                verdict.passed,
                verdict.total
            );
            if *check && !verdict.ok {
                return Err(Failure::new(EXIT_TOLERANCE, "tolerance check failed"));
            }
            Ok(())
        }
        Command::Kalman { steps, seed, backend, weights, out, plot, check } => {
            cmd_kalman(&params, *steps, *seed, *backend, weights.as_deref(), out.as_deref(), plot.as_deref(), *check)
        }
        Command::Blr { n_points, seed, backend, sweeps, weights, out, plot, check } => cmd_blr(
            &params,
            *n_points,
            *seed,
            *backend,
            *sweeps,
            weights.as_deref(),
            out.as_deref(),
            plot.as_deref(),
            *check,
        ),
        Command::Encode { mean, variance, out, spikes, scheme, seed } => {
            let msg = GaussianMessage::new(*mean, *variance)?;
            let enc = params.encoder(*seed).with_scheme((*scheme).into());
            let code = encode(msg, &enc)?;
            emit(out.as_deref(), &params, *seed, &code.to_csv())?;
            if let Some(path) = spikes {
                let train = rates_to_spikes(&code, &enc)?;
                emit(Some(path), &params, *seed, &train.to_csv())?;
            }
            Ok(())
        }
        Command::Decode { rates, spikes, corrected } => {
            let mut code = RateCode::from_csv(&read_file(rates)?, params.r_max_hz, params.t_s_s)?;
            if let Some(path) = spikes {
                let train = SpikeTrain::from_csv(&read_file(path)?, code.len(), code.window())?;
                let rates = coding::spikes_to_rates(&train);
                // Stochastic trains can overshoot r_max in one window.
                let ceiling = rates.iter().copied().fold(code.r_max(), f64::max);
                code = RateCode::new(code.locations().to_vec(), rates, ceiling, code.window())?;
            }
            let msg = if *corrected { decode_corrected(&code)? } else { decode(&code)? };
            println!("mean={} variance={}", msg.mean(), msg.variance());
            Ok(())
        }
        Command::Compare { experiment, seeds, weights, out } => {
            let candidate = spiking(&params, weights.as_deref(), 0)?;
            let seeds: Vec<u64> = (0..*seeds).collect();
            let table = compare_backends(*experiment, &seeds, &Backend::Analytic, &candidate)?;
            emit(out.as_deref(), &params, 0, &table.to_csv())?;
            eprintln!(
                "max_abs_err_m={:.6} mean_abs_err_m={:.6} max_rel_err_v={:.6}",
                table.max_abs_err_m(),
                table.mean_abs_err_m(),
                table.max_rel_err_v()
            );
            Ok(())
        }
    }
}

fn node_name(node: NodeArg) -> &'static str {
    match node {
        NodeArg::Equality => "equality",
        NodeArg::Add => "add",
        NodeArg::Mul => "mul",
    }
}

/// Columns tracked in the trajectory CSV: ten weights spread over both
/// input layers.
fn tracked(n: usize) -> Vec<usize> {
    let total = 2 * n;
    let k = total.min(10);
    (0..k).map(|i| i * total / k).collect()
}

fn cmd_train(params: &Params, out: &Path, trajectory: Option<&Path>, seed: u64, samples: usize, plot: bool) -> CmdResult {
    if samples == 0 {
        eprintln!("snngbp: warning: --samples 0 leaves the weights at their random initialization");
    }
    let cfg = TrainingConfig { samples, seed, ..TrainingConfig::default() };
    let outcome = train_equality(&cfg, params)?;
    outcome.weights.save(out)?;

    let n = params.n_neurons;
    let cols = tracked(n);
    let name = |c: usize| if c < n { format!("w_x{c}") } else { format!("w_y{}", c - n) };
    let mut csv = String::from("sample");
    for &c in &cols {
        let _ = write!(csv, ",{}", name(c));
    }
    csv.push('\n');
    for (s, snap) in outcome.trajectory.iter().enumerate() {
        let _ = write!(csv, "{s}");
        for &c in &cols {
            let _ = write!(csv, ",{}", snap[c]);
        }
        csv.push('\n');
    }
    let traj_path = trajectory.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("trajectory.csv"));
    emit(Some(&traj_path), params, seed, &csv)?;
    if plot {
        let series: Vec<plot::Series> = cols
            .iter()
            .map(|&c| plot::Series {
                label: name(c),
                points: outcome.trajectory.iter().enumerate().map(|(s, snap)| (s as f64, snap[c])).collect(),
            })
            .collect();
        plot::lines(&output::sibling_svg(&traj_path), "STDP weight trajectories", &series, None)?;
    }
    eprintln!(
        "trained {samples} samples: tail_mean_abs_dw={:.6} weights={}",
        outcome.tail_mean_abs_change(0.1),
        out.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

#[allow(clippy::too_many_arguments)]
fn cmd_kalman(
    params: &Params,
    steps: usize,
    seed: u64,
    backend: BackendArg,
    weights: Option<&Path>,
    out: Option<&Path>,
    plot_path: Option<&Path>,
    check: bool,
) -> CmdResult {
    let cfg = KalmanConfig::reference();
    let obs = generate_observations(&cfg, steps, seed)?;
    let analytic = backend.analytic().then(|| run_kalman(&cfg, &obs, &Backend::Analytic)).transpose()?;
    let snn: Option<KalmanRun> = if backend.snn() {
        Some(run_kalman(&cfg, &obs, &spiking(params, weights, seed)?)?)
    } else {
        None
    };

    let mut csv = String::from("step,y,gain,m_analytic,v_analytic,m_snn,v_snn\n");
    let mut worst = (0.0f64, 0.0f64);
    for (t, y) in obs.iter().enumerate() {
        let a = analytic.as_ref().map(|r| r.steps[t]);
        let s = snn.as_ref().map(|r| r.steps[t]);
        if let (Some(a), Some(s)) = (a, s) {
            worst.0 = worst.0.max((a.posterior.mean() - s.posterior.mean()).abs());
            worst.1 = worst.1.max((a.posterior.variance() - s.posterior.variance()).abs());
        }
        let _ = writeln!(
            csv,
            "{},{y},{},{},{},{},{}",
            t + 1,
            fmt_opt(a.and_then(|a| a.gain)),
            fmt_opt(a.map(|a| a.posterior.mean())),
            fmt_opt(a.map(|a| a.posterior.variance())),
            fmt_opt(s.map(|s| s.posterior.mean())),
            fmt_opt(s.map(|s| s.posterior.variance())),
        );
    }
    emit(out, params, seed, &csv)?;

    if let Some(path) = plot_path {
        let mut series = Vec::new();
        for (label, run) in [("analytic", &analytic), ("snn", &snn)] {
            if let Some(run) = run {
                series.push(plot::Band {
                    label: label.into(),
                    points: run
                        .steps
                        .iter()
                        .enumerate()
                        .map(|(t, r)| ((t + 1) as f64, r.posterior.mean(), r.posterior.std_dev()))
                        .collect(),
                });
            }
        }
        let data = plot::Series {
            label: "observations".into(),
            points: obs.iter().enumerate().map(|(t, &y)| ((t + 1) as f64, y)).collect(),
        };
        plot::bands(path, "Kalman posterior mean ± 1 std", &series, &data)?;
    }

    if analytic.is_some() && snn.is_some() {
        eprintln!("kalman: max_abs_dm={:.6} max_abs_dv={:.6}", worst.0, worst.1);
        if check && (worst.0 > 0.5 || worst.1 > 0.12) {
            return Err(Failure::new(EXIT_TOLERANCE, "spiking filter outside tolerance"));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_blr(
    params: &Params,
    n_points: usize,
    seed: u64,
    backend: BackendArg,
    sweeps: usize,
    weights: Option<&Path>,
    out: Option<&Path>,
    plot_path: Option<&Path>,
    check: bool,
) -> CmdResult {
    let cfg = reference_blr_config();
    let noise_var = 1.0 / cfg.noise_precision;
    let data = BlrDataset::synthetic(n_points, [1.0, 1.0], noise_var, seed)?;
    let mut methods: Vec<(&str, Vec<GaussianMessage>)> = vec![("classic", classic_blr(&data, &cfg)?)];
    if backend.analytic() {
        methods.push(("mp", run_blr(&data, &cfg, &Backend::Analytic, sweeps)?.posteriors));
    }
    if backend.snn() {
        methods.push(("snn", run_blr(&data, &cfg, &spiking(params, weights, seed)?, sweeps)?.posteriors));
    }

    let mut csv = String::from("weight,method,post_mean,post_var\n");
    for w in 0..2 {
        for (name, post) in &methods {
            let _ = writeln!(csv, "w{w},{name},{},{}", post[w].mean(), post[w].variance());
        }
    }
    emit(out, params, seed, &csv)?;

    if let Some(path) = plot_path {
        let xs: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        let bands: Vec<plot::Band> = methods
            .iter()
            .map(|(name, post)| plot::Band {
                label: (*name).into(),
                points: xs
                    .iter()
                    .map(|&x| {
                        let var = post[0].variance() + x * x * post[1].variance() + noise_var;
                        (x, post[0].mean() + post[1].mean() * x, var.sqrt())
                    })
                    .collect(),
            })
            .collect();
        let pts = plot::Series { label: "data".into(), points: data.inputs.iter().copied().zip(data.targets.iter().copied()).collect() };
        plot::bands(path, "Regression line ± 1 predictive std", &bands, &pts)?;
    }

    let find = |m: &str| methods.iter().find(|(n, _)| *n == m).map(|(_, p)| p);
    if let (Some(mp), Some(snn)) = (find("mp"), find("snn")) {
        let gap = mp.iter().zip(snn).map(|(a, b)| (a.mean() - b.mean()).abs()).fold(0.0, f64::max);
        eprintln!("blr: max_mean_gap_mp_snn={gap:.6}");
        if check && gap > 0.1 {
            return Err(Failure::new(EXIT_TOLERANCE, "spiking regression outside tolerance"));
        }
    }
    Ok(())
}
