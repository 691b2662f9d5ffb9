//! Spiking realizations of the equality, addition and scaling node updates.
//!
//! Two-operand nodes encode both operands on one shared grid. With a shared
//! grid, index `i` of either input layer refers to the same location, so the
//! equality network's per-index product and the addition network's discrete
//! convolution both land on well-defined output locations.

use std::fmt::Write as _;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coding::{
    decode, decode_corrected, encode, encode_on_grid, linspace, rates_to_spikes, shift_locations, support,
    RateCode, SpikeScheme, SpikeTrain, SUPPORT_SIGMAS,
};
use crate::config::Params;
use crate::error::{Error, Result};
use crate::gaussian::GaussianMessage;
use crate::lif::{simulate, LifNetwork, Pre};
use crate::plasticity::WeightStore;

/// Half-width, in standard deviations, of each operand's contribution to the
/// equality grid.
pub const EQUALITY_SIGMAS: f64 = 5.0;

/// Grid for the equality node: the overlap of both operands' ±5σ supports,
/// where their product carries its mass. Falls back to the union of the
/// ±3σ supports when the operands do not overlap at all.
pub fn equality_grid(x: GaussianMessage, y: GaussianMessage, n: usize) -> Vec<f64> {
    let (xl, xh) = support(x, EQUALITY_SIGMAS);
    let (yl, yh) = support(y, EQUALITY_SIGMAS);
    let (lo, hi) = (xl.max(yl), xh.min(yh));
    if lo < hi {
        linspace(lo, hi, n)
    } else {
        union_grid(x, y, n)
    }
}

/// Grid spanning both operands' standard ±3σ supports.
pub fn union_grid(x: GaussianMessage, y: GaussianMessage, n: usize) -> Vec<f64> {
    let (xl, xh) = support(x, SUPPORT_SIGMAS);
    let (yl, yh) = support(y, SUPPORT_SIGMAS);
    linspace(xl.min(yl), xh.max(yh), n)
}

/// Evenly spaced grid covering both ±3σ supports, placed so that `anchor`
/// falls exactly on a grid point. Anchoring the kernel's mean keeps a kernel
/// narrower than the spacing from vanishing between grid points.
pub fn anchored_grid(x: GaussianMessage, y: GaussianMessage, anchor: f64, n: usize) -> Vec<f64> {
    let (xl, xh) = support(x, SUPPORT_SIGMAS);
    let (yl, yh) = support(y, SUPPORT_SIGMAS);
    let (lo, hi) = (xl.min(yl), xh.max(yh));
    if n < 3 {
        return linspace(lo, hi, n);
    }
    let h = (hi - lo) / (n - 2) as f64;
    let start = anchor - ((anchor - lo) / h).ceil() * h;
    (0..n).map(|i| start + i as f64 * h).collect()
}

/// Output locations of the equality node: position-wise midpoints of the two
/// input grids (the identity when they coincide).
pub fn midpoint_grid(sx: &[f64], sy: &[f64]) -> Vec<f64> {
    sx.iter().zip(sy).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Random operand pairs for training and evaluating the equality node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSampler {
    pub mean_range: (f64, f64),
    pub variance_range: (f64, f64),
    /// Largest accepted `|m_x - m_y| / sqrt(v_x + v_y)`. The product of two
    /// codes shrinks by `exp(-d^2 / 2)`, so far-apart pairs leave the output
    /// layer almost silent.
    pub max_separation: f64,
}

impl Default for PairSampler {
    fn default() -> Self {
        Self { mean_range: (-5.0, 5.0), variance_range: (0.3, 3.0), max_separation: 2.0 }
    }
}

impl PairSampler {
    pub fn validate(&self) -> Result<()> {
        let (ml, mh) = self.mean_range;
        let (vl, vh) = self.variance_range;
        if !(ml.is_finite() && mh.is_finite() && ml <= mh) {
            return Err(Error::Config("mean range must be finite with lo <= hi".into()));
        }
        if !(vl > 0.0 && vh.is_finite() && vl <= vh) {
            return Err(Error::Config("variance range must satisfy 0 < lo <= hi".into()));
        }
        if !(self.max_separation > 0.0) {
            return Err(Error::Config("max_separation must be > 0".into()));
        }
        Ok(())
    }

    pub fn message<R: Rng>(&self, rng: &mut R) -> Result<GaussianMessage> {
        let m = uniform(rng, self.mean_range);
        let v = uniform(rng, self.variance_range);
        GaussianMessage::new(m, v)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<(GaussianMessage, GaussianMessage)> {
        loop {
            let x = self.message(rng)?;
            let y = self.message(rng)?;
            let d = (x.mean() - y.mean()).abs() / (x.variance() + y.variance()).sqrt();
            if d <= self.max_separation {
                return Ok((x, y));
            }
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Test-phase equality node: two input layers wired index-to-index onto one
/// output layer through the trained weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualityNodeSnn {
    pub weights: Option<WeightStore>,
    pub params: Params,
    /// Output spikes wanted before rates are estimated. Far-apart operands
    /// make few coincidences, so presentation repeats with fresh input spikes
    /// until this many have accumulated (or `max_windows` is reached).
    pub min_spikes: usize,
    pub max_windows: usize,
}

impl EqualityNodeSnn {
    pub fn new(weights: Option<WeightStore>, params: Params) -> Result<Self> {
        params.validate()?;
        if let Some(w) = &weights {
            if w.neurons() != params.n_neurons {
                return Err(Error::SizeMismatch { expected: params.n_neurons, found: w.neurons() });
            }
        }
        Ok(Self { weights, params, min_spikes: 400, max_windows: 1000 })
    }

    /// Output-layer rate code for one presentation of `(x, y)`.
    pub fn rates(&self, x: GaussianMessage, y: GaussianMessage, seed: u64) -> Result<RateCode> {
        let w = self.weights.as_ref().ok_or(Error::NotTrained)?;
        let p = &self.params;
        let n = p.n_neurons;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = |seed: u64| p.encoder(seed).with_scheme(SpikeScheme::Slotted);
        let grid = equality_grid(x, y, n);
        let code_x = encode_on_grid(x, grid.clone(), &enc(0))?;
        let code_y = encode_on_grid(y, grid, &enc(0))?;
        let scale = p.weight_scale();
        let mut net = LifNetwork::new(2 * n);
        let out = p.lif().with_threshold(p.theta_high_mv);
        for i in 0..n {
            net.add_neuron(out);
            net.connect(Pre::Input(i), i, w.w_x[i] * scale, 0.0);
            net.connect(Pre::Input(n + i), i, w.w_y[i] * scale, 0.0);
        }
        let mut counts = vec![0usize; n];
        let mut windows = 0usize;
        while windows < self.max_windows.max(1) && counts.iter().sum::<usize>() < self.min_spikes.max(1) {
            let sx = rates_to_spikes(&code_x, &enc(rng.random()))?;
            let sy = rates_to_spikes(&code_y, &enc(rng.random()))?;
            let raster = simulate(&net, &SpikeTrain::stack(&[&sx, &sy])?, &p.sim())?.raster;
            for (c, t) in counts.iter_mut().zip(raster.trains()) {
                *c += t.len();
            }
            windows += 1;
        }
        let span = windows as f64 * p.t_s_s;
        let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / span).collect();
        let r_max = rates.iter().copied().fold(p.r_max_hz, f64::max);
        RateCode::new(midpoint_grid(code_x.locations(), code_y.locations()), rates, r_max, p.t_s_s)
    }

    /// Spiking estimate of the product message; also serves the backward
    /// directions by relabeling.
    pub fn apply(&self, x: GaussianMessage, y: GaussianMessage, seed: u64) -> Result<GaussianMessage> {
        decode(&self.rates(x, y, seed)?)
    }
}

/// Low-threshold neuron count of each kernel group.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub locations: Vec<f64>,
    pub low: Vec<usize>,
    pub m: usize,
}

impl KernelSpec {
    pub fn high(&self, i: usize) -> usize {
        self.m - self.low[i]
    }
}

/// Kernel thresholds for `y` on the given locations: `floor(M exp(-(s - m)^2 / 2 v))`
/// low-threshold neurons per group, the rest high.
pub fn build_kernel(y: GaussianMessage, locations: &[f64], m: usize) -> KernelSpec {
    let low = locations
        .iter()
        .map(|&s| {
            let d = s - y.mean();
            let frac = (-(d * d) / (2.0 * y.variance())).exp();
            ((m as f64 * frac).floor() as usize).min(m)
        })
        .collect();
    KernelSpec { locations: locations.to_vec(), low, m }
}

/// Windows of length `n` over the zero-padded input layer of length `3n - 2`.
pub fn make_patches(n: usize) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    (0..2 * n - 1).map(|i| i..i + n).collect()
}

/// `2N - 1` output locations spanning twice the global extrema of both grids.
pub fn addition_output_grid(sx: &[f64], sy: &[f64]) -> Vec<f64> {
    let n = sx.len().max(sy.len());
    let lo = sx.iter().chain(sy).copied().fold(f64::INFINITY, f64::min);
    let hi = sx.iter().chain(sy).copied().fold(f64::NEG_INFINITY, f64::max);
    if n <= 1 {
        return vec![2.0 * lo];
    }
    linspace(2.0 * lo, 2.0 * hi, 2 * n - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdditionDirection {
    /// `(x, y) -> z`
    Forward,
    /// `(x, z) -> y`
    BackwardY,
    /// `(y, z) -> x`
    BackwardX,
}

impl FromStr for AdditionDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "fwd" => Ok(Self::Forward),
            "backward_y" | "backward" | "bwd" => Ok(Self::BackwardY),
            "backward_x" => Ok(Self::BackwardX),
            other => Err(Error::Usage(format!("unknown addition direction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingDirection {
    Forward,
    Backward,
}

impl FromStr for ScalingDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "fwd" => Ok(Self::Forward),
            "backward" | "bwd" => Ok(Self::Backward),
            other => Err(Error::Usage(format!("unknown scaling direction '{other}'"))),
        }
    }
}

/// Convolutional addition node. Each of the `2N - 1` output positions owns
/// `N x M` kernel neurons; neuron `(k, q)` of output `j` listens to padded
/// input channel `j + k` and has threshold `θ_l` when `q` is below the low
/// count of kernel group `N - 1 - k` (true convolution), `θ_h` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditionNodeSnn {
    pub params: Params,
}

impl AdditionNodeSnn {
    pub fn new(params: Params) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    fn synapse_weight(&self) -> f64 {
        self.params.theta_low_mv - self.params.v_rest_mv + self.params.eps_mv
    }

    /// The explicit `(2N - 1) x N x M` network over the `3N - 2` padded input
    /// channels. Only practical for small `N`; used to check the collapsed
    /// simulation.
    pub fn full_network(&self, kernel: &KernelSpec) -> LifNetwork {
        let n = kernel.low.len();
        let p = &self.params;
        let low = p.lif().with_threshold(p.theta_low_mv);
        let high = p.lif().with_threshold(p.theta_high_mv);
        let mut net = LifNetwork::new(3 * n - 2);
        for patch in make_patches(n) {
            for (k, channel) in patch.enumerate() {
                let group = n - 1 - k;
                for q in 0..kernel.m {
                    let id = net.add_neuron(if q < kernel.low[group] { low } else { high });
                    net.connect(Pre::Input(channel), id, self.synapse_weight(), 0.0);
                }
            }
        }
        net
    }

    /// Zero-pads an `N`-channel input raster to `3N - 2` channels.
    pub fn pad(input: &SpikeTrain) -> Result<SpikeTrain> {
        let n = input.neurons();
        let zeros = SpikeTrain::empty(n.saturating_sub(1), input.window())?;
        SpikeTrain::stack(&[&zeros, input, &zeros])
    }

    /// Pooled output rates from the raster of [`full_network`](Self::full_network).
    pub fn pool_full(&self, raster: &SpikeTrain, n: usize, m: usize) -> Vec<f64> {
        let per_output = n * m;
        (0..2 * n - 1)
            .map(|j| {
                let count: usize = (j * per_output..(j + 1) * per_output).map(|i| raster.train(i).len()).sum();
                count as f64 / (per_output as f64 * raster.window())
            })
            .collect()
    }

    /// Pooled output rates, simulating one representative neuron per
    /// (input channel, threshold) pair. Kernel neurons sharing a channel and a
    /// threshold receive identical input and so spike identically.
    pub fn convolve_rates(&self, input: &SpikeTrain, kernel: &KernelSpec) -> Result<Vec<f64>> {
        let n = input.neurons();
        if kernel.low.len() != n {
            return Err(Error::Dimension(format!("kernel has {} groups for {n} channels", kernel.low.len())));
        }
        let p = &self.params;
        let mut net = LifNetwork::new(n);
        for c in 0..n {
            let lo = net.add_neuron(p.lif().with_threshold(p.theta_low_mv));
            let hi = net.add_neuron(p.lif().with_threshold(p.theta_high_mv));
            net.connect(Pre::Input(c), lo, self.synapse_weight(), 0.0);
            net.connect(Pre::Input(c), hi, self.synapse_weight(), 0.0);
        }
        let raster = simulate(&net, input, &p.sim())?.raster;
        let count = |padded: usize, high: bool| -> f64 {
            if padded + 1 < n || padded >= 2 * n - 1 {
                return 0.0;
            }
            raster.train(2 * (padded + 1 - n) + high as usize).len() as f64
        };
        let m = kernel.m as f64;
        Ok(make_patches(n)
            .into_iter()
            .map(|patch| {
                let total: f64 = patch
                    .enumerate()
                    .map(|(k, channel)| {
                        let group = n - 1 - k;
                        kernel.low[group] as f64 * count(channel, false) + kernel.high(group) as f64 * count(channel, true)
                    })
                    .sum();
                total / (n as f64 * m * input.window())
            })
            .collect())
    }

    /// `Forward` takes `(x, y)`, `BackwardY` takes `(x, z)`, `BackwardX`
    /// takes `(y, z)`.
    pub fn apply(&self, a: GaussianMessage, b: GaussianMessage, dir: AdditionDirection) -> Result<GaussianMessage> {
        let (input, kernel_msg) = match dir {
            AdditionDirection::Forward => (a, b),
            AdditionDirection::BackwardY | AdditionDirection::BackwardX => (b, GaussianMessage::new(-a.mean(), a.variance())?),
        };
        let p = &self.params;
        let enc = p.encoder(0);
        let grid = anchored_grid(input, kernel_msg, kernel_msg.mean(), p.n_neurons);
        let code = encode_on_grid(input, grid.clone(), &enc)?;
        let spikes = rates_to_spikes(&code, &enc)?;
        let kernel = build_kernel(kernel_msg, &grid, p.m_kernel);
        let rates = self.convolve_rates(&spikes, &kernel)?;
        let r_max = rates.iter().copied().fold(p.r_max_hz, f64::max);
        decode(&RateCode::new(addition_output_grid(&grid, &grid), rates, r_max, p.t_s_s)?)
    }
}

/// Location-scaling node: rates are kept, locations multiplied by `a`
/// (forward) or `1/a` (backward).
pub fn scaling_apply(
    msg: GaussianMessage,
    a: f64,
    dir: ScalingDirection,
    params: &Params,
    corrected: bool,
) -> Result<GaussianMessage> {
    crate::gaussian::check_scale(a)?;
    let factor = match dir {
        ScalingDirection::Forward => a,
        ScalingDirection::Backward => 1.0 / a,
    };
    let code = shift_locations(&encode(msg, &params.encoder(0))?, factor)?;
    if corrected {
        decode_corrected(&code)
    } else {
        decode(&code)
    }
}

/// One row of a node-evaluation report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub case_id: usize,
    pub truth: GaussianMessage,
    pub estimate: GaussianMessage,
}

impl EvalRow {
    pub fn abs_err_m(&self) -> f64 {
        (self.estimate.mean() - self.truth.mean()).abs()
    }

    pub fn rel_err_v(&self) -> f64 {
        (self.estimate.variance() - self.truth.variance()).abs() / self.truth.variance()
    }
}

/// `case_id,direction,m_true,v_true,m_snn,v_snn,abs_err_m,rel_err_v`
pub fn eval_csv(direction: &str, rows: &[EvalRow]) -> String {
    let mut out = String::from("case_id,direction,m_true,v_true,m_snn,v_snn,abs_err_m,rel_err_v\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{direction},{},{},{},{},{},{}",
            r.case_id,
            r.truth.mean(),
            r.truth.variance(),
            r.estimate.mean(),
            r.estimate.variance(),
            r.abs_err_m(),
            r.rel_err_v()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::variance_ratio;
    use crate::gaussian::{addition_backward, addition_forward};
    use approx::assert_relative_eq;

    fn g(m: f64, v: f64) -> GaussianMessage {
        GaussianMessage::new(m, v).unwrap()
    }

    #[test]
    fn kernel_counts() {
        let y = g(0.0, 1.0);
        let k = build_kernel(y, &[0.0, 1.0, 3.0, -1.0], 50);
        assert_eq!(k.low, vec![50, 30, 0, 30]);
        assert_eq!(k.high(1), 20);
    }

    #[test]
    fn patch_shapes() {
        let p = make_patches(3);
        assert_eq!(p.len(), 5);
        assert_eq!(p.last().unwrap().end, 7);
        assert_eq!(make_patches(1), vec![0..1]);
        assert_eq!(make_patches(100).len(), 199);
    }

    #[test]
    fn output_grid_examples() {
        let a = linspace(-3.0, 3.0, 4);
        let z = addition_output_grid(&a, &a);
        assert_eq!(z.len(), 7);
        assert_relative_eq!(z[0], -6.0);
        assert_relative_eq!(z[6], 6.0);
        let b = linspace(1.0, 7.0, 4);
        let z = addition_output_grid(&a, &b);
        assert_relative_eq!(z[0], -6.0);
        assert_relative_eq!(z[6], 14.0);
    }

    #[test]
    fn anchored_grid_covers_and_hits_anchor() {
        let (x, y) = (g(0.3, 1.0), g(2.0, 1e-6));
        let grid = anchored_grid(x, y, 2.0, 100);
        assert!(grid[0] <= -2.7 && *grid.last().unwrap() >= 3.3);
        assert!(grid.iter().any(|&s| (s - 2.0).abs() < 1e-12));
        let steps: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|d| (d - steps[0]).abs() < 1e-12));
    }

    #[test]
    fn addition_with_point_like_operand_shifts() {
        let node = AdditionNodeSnn::new(Params::default()).unwrap();
        let z = node.apply(g(1.0, 0.1), g(0.04, 2e-5), AdditionDirection::Forward).unwrap();
        assert!((z.mean() - 1.04).abs() < 0.01, "{z:?}");
    }

    #[test]
    fn collapsed_matches_full_network() {
        let params = Params { n_neurons: 5, m_kernel: 4, ..Params::default() };
        let node = AdditionNodeSnn::new(params).unwrap();
        let x = g(0.5, 1.0);
        let grid = union_grid(x, g(1.0, 0.5), 5);
        let code = encode_on_grid(x, grid.clone(), &params.encoder(0)).unwrap();
        let spikes = rates_to_spikes(&code, &params.encoder(0)).unwrap();
        let kernel = build_kernel(g(1.0, 0.5), &grid, 4);
        let collapsed = node.convolve_rates(&spikes, &kernel).unwrap();
        let net = node.full_network(&kernel);
        let raster = simulate(&net, &AdditionNodeSnn::pad(&spikes).unwrap(), &params.sim()).unwrap().raster;
        let full = node.pool_full(&raster, 5, 4);
        assert_eq!(collapsed, full);
        assert!(collapsed.iter().any(|&r| r > 0.0));
    }

    #[test]
    fn addition_forward_example() {
        let node = AdditionNodeSnn::new(Params::default()).unwrap();
        let (x, y) = (g(1.0, 1.0), g(2.0, 3.0));
        let z = node.apply(x, y, AdditionDirection::Forward).unwrap();
        let truth = addition_forward(x, y).unwrap();
        assert!((z.mean() - truth.mean()).abs() < 0.15 * (1.0 + 3f64.sqrt()), "{z:?}");
        assert!((z.variance() / truth.variance() - 1.0).abs() < 0.3, "{z:?}");
    }

    #[test]
    fn addition_backward_example() {
        let node = AdditionNodeSnn::new(Params::default()).unwrap();
        let (x, z) = (g(1.0, 1.0), g(3.0, 4.0));
        let y = node.apply(x, z, AdditionDirection::BackwardY).unwrap();
        let truth = addition_backward(x, z).unwrap();
        assert!((y.mean() - truth.mean()).abs() < 0.15 * 3.0, "{y:?}");
        assert!((y.variance() / truth.variance() - 1.0).abs() < 0.3, "{y:?}");
    }

    #[test]
    fn scaling_examples() {
        let p = Params::default();
        let c = variance_ratio(100);
        let z = scaling_apply(g(1.0, 1.0), 2.0, ScalingDirection::Forward, &p, false).unwrap();
        assert_relative_eq!(z.mean(), 2.0, epsilon = 1e-9);
        assert_relative_eq!(z.variance(), 4.0 * c, epsilon = 1e-9);
        let z = scaling_apply(g(1.0, 1.0), 2.0, ScalingDirection::Forward, &p, true).unwrap();
        assert_relative_eq!(z.variance(), 4.0, epsilon = 1e-9);
        let y = scaling_apply(g(8.0, 16.0), 4.0, ScalingDirection::Backward, &p, false).unwrap();
        assert_relative_eq!(y.mean(), 2.0, epsilon = 1e-9);
        assert_relative_eq!(y.variance(), c, epsilon = 1e-9);
        assert!(matches!(
            scaling_apply(g(0.0, 1.0), 0.0, ScalingDirection::Forward, &p, false),
            Err(Error::SingularScale(_))
        ));
    }

    #[test]
    fn untrained_equality_errors() {
        let node = EqualityNodeSnn::new(None, Params::default()).unwrap();
        assert_eq!(node.apply(g(0.0, 1.0), g(0.0, 1.0), 0), Err(Error::NotTrained));
    }

    #[test]
    fn equality_with_saturated_weights_multiplies() {
        let p = Params::default();
        let w = WeightStore::new(vec![1.0; 100], vec![1.0; 100]).unwrap();
        let node = EqualityNodeSnn::new(Some(w), p).unwrap();
        let z = node.apply(g(0.0, 1.0), g(1.0, 2.0), 3).unwrap();
        assert!((z.mean() - 1.0 / 3.0).abs() < 0.1 * (2f64 / 3.0).sqrt() + 0.05, "{z:?}");
        assert!((z.variance() / (2.0 / 3.0) - 1.0).abs() < 0.25, "{z:?}");
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("fwd".parse::<AdditionDirection>().unwrap(), AdditionDirection::Forward);
        assert!(matches!("sideways".parse::<AdditionDirection>(), Err(Error::Usage(_))));
        assert_eq!("bwd".parse::<ScalingDirection>().unwrap(), ScalingDirection::Backward);
    }
}
