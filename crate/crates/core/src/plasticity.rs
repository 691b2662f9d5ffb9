//! Pair-based STDP and the teacher-forced training loop of the equality node.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coding::{complement, encode_on_grid, rates_to_spikes, SpikeScheme, SpikeTrain};
use crate::config::Params;
use crate::error::{Error, Result};
use crate::gaussian::{gaussian_product, GaussianMessage};
use crate::lif::{simulate, LifNetwork, Pre};
use crate::nodes::{equality_grid, PairSampler};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdpParams {
    pub a_plus: f64,
    /// Depression magnitude; the rule supplies the sign.
    pub a_minus_mag: f64,
    /// Seconds.
    pub tau_plus: f64,
    /// Seconds.
    pub tau_minus: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for StdpParams {
    fn default() -> Self {
        Self { a_plus: 0.25, a_minus_mag: 0.125, tau_plus: 0.020, tau_minus: 0.020, w_min: -1.0, w_max: 1.0 }
    }
}

impl StdpParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(pos(self.a_plus) && pos(self.a_minus_mag) && pos(self.tau_plus) && pos(self.tau_minus)) {
            return Err(Error::Config("STDP amplitudes and time constants must be > 0".into()));
        }
        if !(self.w_min.is_finite() && self.w_max.is_finite() && self.w_min < self.w_max) {
            return Err(Error::Config("need w_min < w_max".into()));
        }
        Ok(())
    }

    fn clip(&self, w: f64) -> f64 {
        w.clamp(self.w_min, self.w_max)
    }
}

/// Weight change for one pre/post pair, `dt = t_post - t_pre`.
pub fn stdp_delta(dt: f64, p: &StdpParams) -> f64 {
    if dt > 0.0 {
        p.a_plus * (-dt / p.tau_plus).exp()
    } else if dt < 0.0 {
        -p.a_minus_mag * (dt / p.tau_minus).exp()
    } else {
        0.0
    }
}

/// Summed all-pairs change for one synapse, computed with exponential traces
/// in a single merge over both spike lists. Simultaneous spikes do not pair.
pub fn pair_sum(pre: &[f64], post: &[f64], p: &StdpParams) -> f64 {
    let (mut i, mut j) = (0, 0);
    // Traces hold sums of exp(t_k / tau) relative to a moving reference time.
    let (mut pre_trace, mut post_trace) = (0.0, 0.0);
    let mut last = f64::NEG_INFINITY;
    let mut total = 0.0;
    while i < pre.len() || j < post.len() {
        let t = match (pre.get(i), post.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        if last.is_finite() {
            pre_trace *= (-(t - last) / p.tau_plus).exp();
            post_trace *= (-(t - last) / p.tau_minus).exp();
        }
        last = t;
        let mut n_pre = 0usize;
        while i < pre.len() && pre[i] == t {
            n_pre += 1;
            i += 1;
        }
        let mut n_post = 0usize;
        while j < post.len() && post[j] == t {
            n_post += 1;
            j += 1;
        }
        // Pair with strictly earlier partners only, then add this step's spikes.
        total += n_post as f64 * p.a_plus * pre_trace;
        total -= n_pre as f64 * p.a_minus_mag * post_trace;
        pre_trace += n_pre as f64;
        post_trace += n_post as f64;
    }
    total
}

/// Applies all-pairs STDP to each plastic synapse `(pre neuron, post neuron)`
/// and clips to the weight bounds.
pub fn apply_stdp(
    weights: &[f64],
    synapses: &[(usize, usize)],
    pre: &SpikeTrain,
    post: &SpikeTrain,
    p: &StdpParams,
) -> Result<Vec<f64>> {
    if weights.len() != synapses.len() {
        return Err(Error::Dimension(format!("{} weights for {} synapses", weights.len(), synapses.len())));
    }
    weights
        .iter()
        .zip(synapses)
        .map(|(&w, &(i, j))| {
            if i >= pre.neurons() || j >= post.neurons() {
                return Err(Error::Graph(format!("plastic synapse ({i}, {j}) out of range")));
            }
            Ok(p.clip(w + pair_sum(pre.train(i), post.train(j), p)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub samples: usize,
    pub sampler: PairSampler,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { samples: 500, sampler: PairSampler::default(), seed: 0 }
    }
}

/// Unit (dimensionless) plastic weights of the equality node.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    pub w_x: Vec<f64>,
    pub w_y: Vec<f64>,
}

const WEIGHT_MAGIC: &str = "# snngbp-weights v1 N=";

impl WeightStore {
    pub fn new(w_x: Vec<f64>, w_y: Vec<f64>) -> Result<Self> {
        if w_x.len() != w_y.len() {
            return Err(Error::Dimension(format!("W_x has {} entries, W_y {}", w_x.len(), w_y.len())));
        }
        if w_x.iter().chain(&w_y).any(|w| !w.is_finite()) {
            return Err(Error::Malformed { what: "weight store", detail: "non-finite weight".into() });
        }
        Ok(Self { w_x, w_y })
    }

    pub fn neurons(&self) -> usize {
        self.w_x.len()
    }

    /// Text form; `{:?}` float formatting round-trips exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{WEIGHT_MAGIC}{}\n", self.neurons());
        for (i, (x, y)) in self.w_x.iter().zip(&self.w_y).enumerate() {
            let _ = writeln!(out, "{i},{x:?},{y:?}");
        }
        out
    }

    /// Parses the text form; `expected` rejects a file for a different `N`.
    pub fn parse(text: &str, expected: Option<usize>) -> Result<Self> {
        let bad = |detail: String| Error::Malformed { what: "weight file", detail };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let n: usize = header
            .strip_prefix(WEIGHT_MAGIC)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(format!("bad header '{header}'")))?;
        if let Some(e) = expected {
            if e != n {
                return Err(Error::SizeMismatch { expected: e, found: n });
            }
        }
        let (mut w_x, mut w_y) = (Vec::new(), Vec::new());
        for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(format!("row {row}: expected 3 fields")));
            }
            let idx: usize = f[0].trim().parse().map_err(|_| bad(format!("row {row}: bad index")))?;
            if idx != row || row >= n {
                return Err(bad(format!("row {row}: unexpected index {idx}")));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| bad(format!("row {row}: bad weight '{}'", s.trim())))
            };
            w_x.push(num(f[1])?);
            w_y.push(num(f[2])?);
        }
        if w_x.len() != n {
            return Err(bad(format!("header says N={n} but {} rows follow", w_x.len())));
        }
        Self::new(w_x, w_y)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<usize>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, expected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub weights: WeightStore,
    /// Snapshot of `[W_x.., W_y..]` before training and after every sample.
    pub trajectory: Vec<Vec<f64>>,
}

impl TrainingOutcome {
    /// Mean absolute per-sample weight change over the last `fraction` of
    /// the run.
    pub fn tail_mean_abs_change(&self, fraction: f64) -> f64 {
        let steps = self.trajectory.len().saturating_sub(1);
        if steps == 0 {
            return 0.0;
        }
        let k = ((steps as f64 * fraction).ceil() as usize).clamp(1, steps);
        let mut sum = 0.0;
        let mut count = 0usize;
        for s in steps - k..steps {
            for (a, b) in self.trajectory[s].iter().zip(&self.trajectory[s + 1]) {
                sum += (b - a).abs();
                count += 1;
            }
        }
        sum / count as f64
    }

    /// Mean over weights of each weight's variance across the snapshots in
    /// `[from, to)` as fractions of the run.
    pub fn window_variance(&self, from: f64, to: f64) -> f64 {
        let n = self.trajectory.len();
        let a = ((n as f64 * from).floor() as usize).min(n);
        let b = ((n as f64 * to).ceil() as usize).clamp(a, n);
        let rows = &self.trajectory[a..b];
        if rows.len() < 2 {
            return 0.0;
        }
        let dims = rows[0].len();
        let mut total = 0.0;
        for d in 0..dims {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64;
            total += rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / rows.len() as f64;
        }
        total / dims as f64
    }
}

/// Seeded uniform initialization in `[0, 0.25 w_max]`.
pub fn initial_weights(n: usize, p: &StdpParams, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1417);
    let hi = 0.25 * p.w_max;
    let w_x = (0..n).map(|_| rng.random::<f64>() * hi).collect();
    let w_y = (0..n).map(|_| rng.random::<f64>() * hi).collect();
    WeightStore { w_x, w_y }
}

/// One teacher-forced presentation: returns the input trains (arrival-time
/// aligned) and the output raster.
fn present(
    x: GaussianMessage,
    y: GaussianMessage,
    weights: &WeightStore,
    params: &Params,
    rng: &mut ChaCha8Rng,
) -> Result<(SpikeTrain, SpikeTrain)> {
    let n = params.n_neurons;
    let target = gaussian_product(x, y)?;
    let grid = equality_grid(x, y, n);
    let enc = |seed: u64| params.encoder(seed).with_scheme(SpikeScheme::Slotted);

    let code_x = encode_on_grid(x, grid.clone(), &enc(0))?;
    let code_y = encode_on_grid(y, grid.clone(), &enc(0))?;
    let code_z = encode_on_grid(target, grid, &enc(0))?;
    let sx = rates_to_spikes(&code_x, &enc(rng.random()))?;
    let sy = rates_to_spikes(&code_y, &enc(rng.random()))?;
    let sz = rates_to_spikes(&code_z, &enc(rng.random()))?;
    let sn = rates_to_spikes(&complement(&code_z), &enc(rng.random()))?;

    let offset = params.teacher_offset_ms * 1e-3;
    let teach_pos = sz.shifted(offset);
    let teach_neg = sn.shifted(-offset);
    let external = SpikeTrain::stack(&[&sx, &sy, &teach_pos, &teach_neg])?;

    let scale = params.weight_scale();
    let mut net = LifNetwork::new(4 * n);
    let out_params = params.lif().with_threshold(params.theta_high_mv);
    for _ in 0..n {
        net.add_neuron(out_params);
    }
    for i in 0..n {
        net.connect(Pre::Input(i), i, weights.w_x[i] * scale, 0.0);
        net.connect(Pre::Input(n + i), i, weights.w_y[i] * scale, 0.0);
        net.connect(Pre::Input(2 * n + i), i, 2.0 * scale, 0.0);
        net.connect(Pre::Input(3 * n + i), i, 2.0 * scale, 0.0);
    }
    let out = simulate(&net, &external, &params.sim())?;

    // Presynaptic spikes take effect one step after emission.
    let inputs = SpikeTrain::stack(&[&sx, &sy])?.shifted(params.dt_ms * 1e-3);
    Ok((inputs, out.raster))
}

/// Trains the 2N plastic input weights of the equality node by STDP under
/// teacher forcing with the product message.
pub fn train_equality(cfg: &TrainingConfig, params: &Params) -> Result<TrainingOutcome> {
    params.validate()?;
    cfg.sampler.validate()?;
    let n = params.n_neurons;
    let stdp = params.stdp();
    let mut weights = initial_weights(n, &stdp, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let synapses: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).chain((0..n).map(|i| (n + i, i))).collect();

    let snapshot = |w: &WeightStore| -> Vec<f64> { w.w_x.iter().chain(&w.w_y).copied().collect() };
    let mut trajectory = vec![snapshot(&weights)];
    for _ in 0..cfg.samples {
        let (x, y) = cfg.sampler.sample(&mut rng)?;
        let (pre, post) = present(x, y, &weights, params, &mut rng)?;
        let flat = apply_stdp(&snapshot(&weights), &synapses, &pre, &post, &stdp)?;
        weights = WeightStore { w_x: flat[..n].to_vec(), w_y: flat[n..].to_vec() };
        trajectory.push(flat);
    }
    Ok(TrainingOutcome { weights, trajectory })
}
