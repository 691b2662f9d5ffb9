//! Population rate codes for Gaussian messages.
//!
//! A message `N(m, s^2)` is represented by `N` neurons with evenly spaced
//! preferred locations over `[m - 3s, m + 3s]`, each firing at a rate
//! proportional to the Gaussian density at its location. Decoding takes the
//! rate-weighted mean and variance of the locations.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::gaussian::{check_scale, GaussianMessage};

/// Half-width of the encoding support, in standard deviations.
pub const SUPPORT_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpikeScheme {
    /// `round(r * T)` evenly spaced spikes per window.
    Periodic,
    /// Homogeneous Poisson process, seeded.
    Poisson,
    /// Discrete-time Bernoulli process: the window is cut into slots of width
    /// `1 / r_max` and a neuron fires at the centre of each slot with
    /// probability `r / r_max`. Spikes of different neurons are slot-aligned,
    /// which is what coincidence-detecting layers need.
    Slotted,
}

impl std::str::FromStr for SpikeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" | "deterministic" | "deterministic-periodic" => Ok(Self::Periodic),
            "poisson" => Ok(Self::Poisson),
            "slotted" => Ok(Self::Slotted),
            other => Err(Error::Config(format!("unknown spike scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub neurons: usize,
    pub r_max: f64,
    /// Length of one encoding window `T_s`, seconds.
    pub window: f64,
    pub scheme: SpikeScheme,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { neurons: 100, r_max: 100.0, window: 1.0, scheme: SpikeScheme::Periodic, seed: 0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neurons < 2 {
            return Err(Error::Config(format!("need at least 2 neurons, got {}", self.neurons)));
        }
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            return Err(Error::Config(format!("r_max must be > 0, got {}", self.r_max)));
        }
        if !(self.window.is_finite() && self.window > 0.0) {
            return Err(Error::Config(format!("window must be > 0, got {}", self.window)));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_scheme(self, scheme: SpikeScheme) -> Self {
        Self { scheme, ..self }
    }
}

/// Firing-rate representation `{s_i, r_i}` of a message.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCode {
    locations: Vec<f64>,
    rates: Vec<f64>,
    r_max: f64,
    window: f64,
}

impl RateCode {
    pub fn new(locations: Vec<f64>, rates: Vec<f64>, r_max: f64, window: f64) -> Result<Self> {
        if locations.len() != rates.len() {
            return Err(Error::Dimension(format!(
                "{} locations but {} rates",
                locations.len(),
                rates.len()
            )));
        }
        if locations.len() < 2 {
            return Err(Error::Config("a rate code needs at least 2 neurons".into()));
        }
        if !(r_max.is_finite() && r_max > 0.0 && window.is_finite() && window > 0.0) {
            return Err(Error::Config("r_max and window must be finite and > 0".into()));
        }
        if locations.iter().any(|s| !s.is_finite())
            || locations.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::Config("locations must be finite and strictly increasing".into()));
        }
        if rates.iter().any(|r| !(r.is_finite() && (0.0..=r_max).contains(r))) {
            return Err(Error::Config(format!("rates must lie in [0, {r_max}]")));
        }
        Ok(Self { locations, rates, r_max, window })
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Same locations, new rates (e.g. rates measured from a spiking layer).
    pub fn with_rates(&self, rates: Vec<f64>) -> Result<Self> {
        Self::new(self.locations.clone(), rates, self.r_max, self.window)
    }

    /// `index,location,rate` rows under a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,location,rate\n");
        for (i, (s, r)) in self.locations.iter().zip(&self.rates).enumerate() {
            let _ = writeln!(out, "{i},{s},{r}");
        }
        out
    }

    /// Parses the CSV written by [`RateCode::to_csv`]. Lines starting with `#`
    /// are comments. Rows must be listed in index order.
    pub fn from_csv(text: &str, r_max: f64, window: f64) -> Result<Self> {
        let mut locations = Vec::new();
        let mut rates = Vec::new();
        let mut seen_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                if line != "index,location,rate" {
                    return Err(malformed("rate code", format!("unexpected header '{line}'")));
                }
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(malformed("rate code", format!("line {}: expected 3 fields", lineno + 1)));
            }
            let index: usize = parse_field("rate code", fields[0], lineno)?;
            if index != locations.len() {
                return Err(malformed("rate code", format!("line {}: index {index} out of order", lineno + 1)));
            }
            locations.push(parse_field("rate code", fields[1], lineno)?);
            rates.push(parse_field("rate code", fields[2], lineno)?);
        }
        if !seen_header {
            return Err(malformed("rate code", "missing header".into()));
        }
        Self::new(locations, rates, r_max, window)
    }
}

/// Per-neuron spike times within one window `[0, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    trains: Vec<Vec<f64>>,
    window: f64,
}

impl SpikeTrain {
    pub fn new(trains: Vec<Vec<f64>>, window: f64) -> Result<Self> {
        if !(window.is_finite() && window > 0.0) {
            return Err(Error::Config(format!("window must be > 0, got {window}")));
        }
        for (i, t) in trains.iter().enumerate() {
            if t.iter().any(|&x| !(x.is_finite() && (0.0..window).contains(&x))) {
                return Err(Error::Config(format!("neuron {i}: spike time outside [0, {window})")));
            }
            if t.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config(format!("neuron {i}: spike times not strictly increasing")));
            }
        }
        Ok(Self { trains, window })
    }

    pub fn empty(neurons: usize, window: f64) -> Result<Self> {
        Self::new(vec![Vec::new(); neurons], window)
    }

    pub fn neurons(&self) -> usize {
        self.trains.len()
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn train(&self, neuron: usize) -> &[f64] {
        &self.trains[neuron]
    }

    pub fn trains(&self) -> &[Vec<f64>] {
        &self.trains
    }

    pub fn total_spikes(&self) -> usize {
        self.trains.iter().map(Vec::len).sum()
    }

    /// Moves every spike by `offset` seconds, dropping spikes that leave the
    /// window.
    pub fn shifted(&self, offset: f64) -> Self {
        let trains = self
            .trains
            .iter()
            .map(|t| {
                t.iter()
                    .map(|&x| x + offset)
                    .filter(|x| (0.0..self.window).contains(x))
                    .collect()
            })
            .collect();
        Self { trains, window: self.window }
    }

    /// Concatenates the neuron lists of several trains over the same window.
    pub fn stack(parts: &[&SpikeTrain]) -> Result<Self> {
        let window = parts.first().map(|p| p.window).unwrap_or(1.0);
        if parts.iter().any(|p| p.window != window) {
            return Err(Error::Config("stacked spike trains must share a window".into()));
        }
        let trains = parts.iter().flat_map(|p| p.trains.iter().cloned()).collect();
        Ok(Self { trains, window })
    }

    /// `neuron,spike_time_s` rows, neuron-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("neuron,spike_time_s\n");
        for (i, t) in self.trains.iter().enumerate() {
            for x in t {
                let _ = writeln!(out, "{i},{x}");
            }
        }
        out
    }

    /// Parses `neuron,spike_time_s` rows. Rows may appear in any order; each
    /// neuron's spikes are sorted and must be distinct.
    pub fn from_csv(text: &str, neurons: usize, window: f64) -> Result<Self> {
        let mut trains = vec![Vec::new(); neurons];
        let mut seen_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                if line != "neuron,spike_time_s" {
                    return Err(malformed("spike train", format!("unexpected header '{line}'")));
                }
                seen_header = true;
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| malformed("spike train", format!("line {}: expected 2 fields", lineno + 1)))?;
            let neuron: usize = parse_field("spike train", a, lineno)?;
            let t: f64 = parse_field("spike train", b, lineno)?;
            let slot = trains
                .get_mut(neuron)
                .ok_or_else(|| malformed("spike train", format!("line {}: neuron {neuron} out of range", lineno + 1)))?;
            slot.push(t);
        }
        if !seen_header {
            return Err(malformed("spike train", "missing header".into()));
        }
        for t in &mut trains {
            t.sort_by(f64::total_cmp);
        }
        Self::new(trains, window)
    }
}

fn malformed(what: &'static str, detail: String) -> Error {
    Error::Malformed { what, detail }
}

fn parse_field<T: std::str::FromStr>(what: &'static str, field: &str, lineno: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(what, format!("line {}: cannot parse '{}'", lineno + 1, field.trim())))
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n as f64 - 1.0);
    (0..n).map(|i| lo + i as f64 * step).collect()
}

/// Interval `[m - k s, m + k s]`.
pub fn support(msg: GaussianMessage, sigmas: f64) -> (f64, f64) {
    let half = sigmas * msg.std_dev();
    (msg.mean() - half, msg.mean() + half)
}

/// Standard encoding on the message's own `[m - 3s, m + 3s]` grid.
pub fn encode(msg: GaussianMessage, cfg: &EncoderConfig) -> Result<RateCode> {
    cfg.validate()?;
    let (lo, hi) = support(msg, SUPPORT_SIGMAS);
    encode_on_grid(msg, linspace(lo, hi, cfg.neurons), cfg)
}

/// Evaluates the scaled Gaussian bump at arbitrary (increasing) locations.
///
/// Two-operand nodes use this to place both operands on one shared grid.
pub fn encode_on_grid(msg: GaussianMessage, locations: Vec<f64>, cfg: &EncoderConfig) -> Result<RateCode> {
    cfg.validate()?;
    let rates = locations
        .iter()
        .map(|&s| {
            let d = s - msg.mean();
            cfg.r_max * (-(d * d) / (2.0 * msg.variance())).exp()
        })
        .collect();
    RateCode::new(locations, rates, cfg.r_max, cfg.window)
}

/// Rate-weighted mean and variance of the locations.
pub fn decode(code: &RateCode) -> Result<GaussianMessage> {
    let total: f64 = code.rates.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyCode);
    }
    let mean = code.locations.iter().zip(&code.rates).map(|(s, r)| r * s).sum::<f64>() / total;
    let variance = code
        .locations
        .iter()
        .zip(&code.rates)
        .map(|(s, r)| r * (s - mean) * (s - mean))
        .sum::<f64>()
        / total;
    if !(variance > 0.0) {
        // A single active neuron carries no spread information.
        return Err(Error::InvalidMessage(format!(
            "decoded variance {variance} is not positive (activity on a single location)"
        )));
    }
    GaussianMessage::new(mean, variance)
}

/// Decodes and divides the variance by the truncation constant of an
/// `N`-neuron standard code, undoing the systematic underestimate.
pub fn decode_corrected(code: &RateCode) -> Result<GaussianMessage> {
    let raw = decode(code)?;
    GaussianMessage::new(raw.mean(), raw.variance() / variance_ratio(code.len()))
}

/// Ratio of decoded to true variance for a standard `n`-neuron code.
///
/// Independent of the message because the standard grid is an affine image of
/// one fixed grid in standardized units.
pub fn variance_ratio(n: usize) -> f64 {
    let grid = linspace(-SUPPORT_SIGMAS, SUPPORT_SIGMAS, n);
    let (mut w, mut wu2) = (0.0, 0.0);
    for u in grid {
        let r = (-0.5 * u * u).exp();
        w += r;
        wu2 += r * u * u;
    }
    wu2 / w
}

/// Realizes a rate code as spikes in one window.
pub fn rates_to_spikes(code: &RateCode, cfg: &EncoderConfig) -> Result<SpikeTrain> {
    let window = code.window;
    let trains = match cfg.scheme {
        SpikeScheme::Periodic => code
            .rates
            .iter()
            .map(|&r| {
                let count = (r * window).round() as usize;
                let period = window / count as f64;
                (0..count).map(|k| period * (k as f64 + 0.5)).collect()
            })
            .collect(),
        SpikeScheme::Poisson => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            code.rates
                .iter()
                .map(|&r| {
                    let mut t = Vec::new();
                    if r <= 0.0 {
                        return t;
                    }
                    let isi = Exp::new(r).expect("positive rate");
                    let mut now = isi.sample(&mut rng);
                    while now < window {
                        t.push(now);
                        now += isi.sample(&mut rng);
                    }
                    t
                })
                .collect()
        }
        SpikeScheme::Slotted => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let slot = 1.0 / code.r_max;
            let slots = (window * code.r_max).floor() as usize;
            code.rates
                .iter()
                .map(|&r| {
                    let p = r / code.r_max;
                    (0..slots)
                        .filter(|_| rng.random::<f64>() < p)
                        .map(|k| slot * (k as f64 + 0.5))
                        .collect()
                })
                .collect()
        }
    };
    SpikeTrain::new(trains, window)
}

/// Spike count per neuron divided by the window.
pub fn spikes_to_rates(train: &SpikeTrain) -> Vec<f64> {
    train.trains.iter().map(|t| t.len() as f64 / train.window).collect()
}

/// `r_max - r_i` at unchanged locations.
pub fn complement(code: &RateCode) -> RateCode {
    RateCode {
        locations: code.locations.clone(),
        rates: code.rates.iter().map(|r| code.r_max - r).collect(),
        r_max: code.r_max,
        window: code.window,
    }
}

/// Multiplies every location by `a`, keeping each neuron's rate. A negative
/// factor reverses the order so locations stay increasing.
pub fn shift_locations(code: &RateCode, a: f64) -> Result<RateCode> {
    check_scale(a)?;
    let mut locations: Vec<f64> = code.locations.iter().map(|s| a * s).collect();
    let mut rates = code.rates.clone();
    if a < 0.0 {
        locations.reverse();
        rates.reverse();
    }
    RateCode::new(locations, rates, code.r_max, code.window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(n: usize) -> EncoderConfig {
        EncoderConfig { neurons: n, ..EncoderConfig::default() }
    }

    fn g(m: f64, v: f64) -> GaussianMessage {
        GaussianMessage::new(m, v).unwrap()
    }

    #[test]
    fn encode_standard_normal_five_neurons() {
        let code = encode(g(0.0, 1.0), &cfg(5)).unwrap();
        let expect_s = [-3.0, -1.5, 0.0, 1.5, 3.0];
        let expect_r = [1.110_899_653_824_23, 32.465_246_735_834_97, 100.0, 32.465_246_735_834_97, 1.110_899_653_824_23];
        for i in 0..5 {
            assert_relative_eq!(code.locations()[i], expect_s[i], epsilon = 1e-12);
            assert_relative_eq!(code.rates()[i], expect_r[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn encode_shifted_three_neurons() {
        let code = encode(g(2.0, 1.0), &cfg(3)).unwrap();
        assert_eq!(code.locations(), &[-1.0, 2.0, 5.0]);
        assert_relative_eq!(code.rates()[0], 1.110_899_653_824_23, epsilon = 1e-9);
        assert_eq!(code.rates()[1], 100.0);
    }

    #[test]
    fn decode_examples() {
        let code = encode(g(0.0, 1.0), &cfg(5)).unwrap();
        let d = decode(&code).unwrap();
        assert!(d.mean().abs() < 1e-12);
        assert_relative_eq!(d.variance(), 0.993_643_588_840_102_8, epsilon = 1e-12);

        let code = RateCode::new(vec![0.0, 1.0], vec![50.0, 50.0], 100.0, 1.0).unwrap();
        assert_eq!(decode(&code).unwrap(), g(0.5, 0.25));

        let code = RateCode::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![7.0; 5], 100.0, 1.0).unwrap();
        assert_relative_eq!(decode(&code).unwrap().mean(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn decode_rejects_silent_code() {
        let code = RateCode::new(vec![0.0, 1.0], vec![0.0, 0.0], 100.0, 1.0).unwrap();
        assert_eq!(decode(&code), Err(Error::EmptyCode));
    }

    #[test]
    fn corrected_decode_recovers_variance() {
        let code = encode(g(-1.0, 2.5), &cfg(100)).unwrap();
        let d = decode_corrected(&code).unwrap();
        assert_relative_eq!(d.variance(), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn periodic_spikes() {
        let code = RateCode::new(vec![0.0, 1.0], vec![100.0, 0.0], 100.0, 1.0).unwrap();
        let train = rates_to_spikes(&code, &cfg(2)).unwrap();
        assert_eq!(train.train(0).len(), 100);
        assert!(train.train(1).is_empty());
        assert_relative_eq!(train.train(0)[0], 0.005, epsilon = 1e-15);
        for w in train.train(0).windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.01, epsilon = 1e-12);
        }
        assert_eq!(spikes_to_rates(&train), vec![100.0, 0.0]);
    }

    #[test]
    fn poisson_spikes_are_seeded() {
        let code = RateCode::new(vec![0.0, 1.0], vec![100.0, 100.0], 100.0, 1.0).unwrap();
        let c = cfg(2).with_scheme(SpikeScheme::Poisson).with_seed(42);
        let a = rates_to_spikes(&code, &c).unwrap();
        let b = rates_to_spikes(&code, &c).unwrap();
        assert_eq!(a, b);
        for n in 0..2 {
            assert!((70..=130).contains(&a.train(n).len()), "count {}", a.train(n).len());
        }
        let other = rates_to_spikes(&code, &c.with_seed(43)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn slotted_spikes_stay_on_slot_centres() {
        let code = RateCode::new(vec![0.0, 1.0, 2.0], vec![100.0, 50.0, 0.0], 100.0, 1.0).unwrap();
        let train = rates_to_spikes(&code, &cfg(3).with_scheme(SpikeScheme::Slotted).with_seed(1)).unwrap();
        assert_eq!(train.train(0).len(), 100);
        assert!(train.train(2).is_empty());
        assert!((30..=70).contains(&train.train(1).len()));
        for &t in train.train(1) {
            let k = (t * 100.0 - 0.5).round();
            assert_relative_eq!(t, (k + 0.5) / 100.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spikes_to_rates_uses_window() {
        let train = SpikeTrain::new(vec![vec![0.0, 0.1, 0.2, 0.3, 0.4], vec![]], 0.5).unwrap();
        assert_eq!(spikes_to_rates(&train), vec![10.0, 0.0]);
    }

    #[test]
    fn complement_flips_rates() {
        let code = encode(g(0.0, 1.0), &cfg(5)).unwrap();
        let c = complement(&code);
        let expect = [98.889_100_346_175_77, 67.534_753_264_165_03, 0.0, 67.534_753_264_165_03, 98.889_100_346_175_77];
        for (got, want) in c.rates().iter().zip(expect) {
            assert_relative_eq!(*got, want, epsilon = 1e-9);
        }
        assert_eq!(c.locations(), code.locations());
    }

    #[test]
    fn shift_locations_scales_and_mirrors() {
        let code = encode(g(0.0, 1.0), &cfg(5)).unwrap();
        let twice = shift_locations(&code, 2.0).unwrap();
        assert_eq!(twice.locations(), &[-6.0, -3.0, 0.0, 3.0, 6.0]);
        assert_eq!(twice.rates(), code.rates());

        assert_eq!(shift_locations(&code, 1.0).unwrap(), code);

        let asym = RateCode::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0], 100.0, 1.0).unwrap();
        let mirrored = shift_locations(&asym, -1.0).unwrap();
        assert_eq!(mirrored.locations(), &[-2.0, -1.0, 0.0]);
        assert_eq!(mirrored.rates(), &[3.0, 2.0, 1.0]);

        assert_eq!(shift_locations(&code, 0.0), Err(Error::SingularScale(0.0)));
    }

    #[test]
    fn rate_code_invariants_enforced() {
        assert!(RateCode::new(vec![0.0], vec![1.0], 100.0, 1.0).is_err());
        assert!(RateCode::new(vec![1.0, 0.0], vec![1.0, 1.0], 100.0, 1.0).is_err());
        assert!(RateCode::new(vec![0.0, 1.0], vec![101.0, 1.0], 100.0, 1.0).is_err());
        assert!(SpikeTrain::new(vec![vec![0.2, 0.1]], 1.0).is_err());
        assert!(SpikeTrain::new(vec![vec![1.0]], 1.0).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let code = encode(g(0.3, 0.7), &cfg(7)).unwrap();
        let back = RateCode::from_csv(&code.to_csv(), 100.0, 1.0).unwrap();
        assert_eq!(back, code);

        let train = rates_to_spikes(&code, &cfg(7)).unwrap();
        let back = SpikeTrain::from_csv(&train.to_csv(), 7, 1.0).unwrap();
        assert_eq!(back, train);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(RateCode::from_csv("", 100.0, 1.0), Err(Error::Malformed { .. })));
        assert!(matches!(
            RateCode::from_csv("index,location,rate\n0,1.0\n", 100.0, 1.0),
            Err(Error::Malformed { .. })
        ));
        assert!(matches!(
            SpikeTrain::from_csv("neuron,spike_time_s\n3,0.1\n", 2, 1.0),
            Err(Error::Malformed { .. })
        ));
        assert!(SpikeTrain::from_csv("neuron,spike_time_s\n0,0.1\n0,0.1\n", 1, 1.0).is_err());
    }
}
