//! Clock-driven leaky integrate-and-fire simulation.
//!
//! Membrane update is forward Euler on `tau_m dV/dt = -(V - V_rest) + R_m I`.
//! Synapses use a delta-pulse postsynaptic kernel: an arriving spike moves the
//! membrane by the synaptic weight (mV) in the step it arrives. A spike emitted
//! in step `k` arrives in step `k + 1 + delay/dt`.

use std::fmt::Write as _;

use crate::coding::SpikeTrain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    /// Membrane time constant, seconds.
    pub tau_m: f64,
    /// Resting (and reset) potential, mV.
    pub v_rest: f64,
    pub r_m: f64,
    /// Firing threshold, mV.
    pub threshold: f64,
    /// Absolute refractory period, seconds.
    pub refractory: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self { tau_m: 0.010, v_rest: -80.0, r_m: 1.0, threshold: -50.0, refractory: 0.0 }
    }
}

impl LifParams {
    pub fn with_threshold(self, threshold: f64) -> Self {
        Self { threshold, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m.is_finite() && self.tau_m > 0.0) {
            return Err(Error::Config(format!("tau_m must be > 0, got {}", self.tau_m)));
        }
        if !(self.threshold.is_finite() && self.v_rest.is_finite() && self.threshold > self.v_rest) {
            return Err(Error::Config(format!(
                "threshold ({}) must exceed the resting potential ({})",
                self.threshold, self.v_rest
            )));
        }
        if !(self.r_m.is_finite() && self.refractory.is_finite() && self.refractory >= 0.0) {
            return Err(Error::Config("r_m and refractory must be finite, refractory >= 0".into()));
        }
        Ok(())
    }

    /// Jump needed to reach threshold from rest.
    pub fn threshold_gap(&self) -> f64 {
        self.threshold - self.v_rest
    }
}

fn advance(v: f64, drive: f64, jump: f64, p: &LifParams, dt: f64) -> (f64, bool) {
    if v >= p.threshold {
        return (p.v_rest, true);
    }
    let v = v + (dt / p.tau_m) * (-(v - p.v_rest) + p.r_m * drive) + jump;
    if v >= p.threshold {
        (p.v_rest, true)
    } else {
        (v, false)
    }
}

/// One Euler step under a continuous input drive `I` (so `R_m I` is in mV).
/// Returns the new potential and whether the neuron fired (and was reset).
pub fn step_neuron(v: f64, drive: f64, p: &LifParams, dt: f64) -> (f64, bool) {
    advance(v, drive, 0.0, p, dt)
}

/// Presynaptic end of a synapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pre {
    /// Externally driven spike source (an input-layer channel).
    Input(usize),
    Neuron(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synapse {
    pub pre: Pre,
    pub post: usize,
    /// Membrane jump per arriving spike, mV.
    pub weight: f64,
    /// Extra transmission delay, seconds.
    pub delay: f64,
}

/// Neurons, external input channels and the synapses between them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LifNetwork {
    inputs: usize,
    neurons: Vec<LifParams>,
    synapses: Vec<Synapse>,
}

impl LifNetwork {
    pub fn new(inputs: usize) -> Self {
        Self { inputs, neurons: Vec::new(), synapses: Vec::new() }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn neurons(&self) -> &[LifParams] {
        &self.neurons
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    pub fn add_neuron(&mut self, params: LifParams) -> usize {
        self.neurons.push(params);
        self.neurons.len() - 1
    }

    /// Adds a synapse and returns its id. Ids order same-step arrivals.
    pub fn connect(&mut self, pre: Pre, post: usize, weight: f64, delay: f64) -> usize {
        self.synapses.push(Synapse { pre, post, weight, delay });
        self.synapses.len() - 1
    }

    pub fn set_weight(&mut self, synapse: usize, weight: f64) {
        self.synapses[synapse].weight = weight;
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.neurons {
            p.validate()?;
        }
        for (id, s) in self.synapses.iter().enumerate() {
            let pre_ok = match s.pre {
                Pre::Input(i) => i < self.inputs,
                Pre::Neuron(n) => n < self.neurons.len(),
            };
            if !pre_ok || s.post >= self.neurons.len() {
                return Err(Error::Graph(format!("synapse {id} references a missing endpoint: {s:?}")));
            }
            if !s.weight.is_finite() || !(s.delay.is_finite() && s.delay >= 0.0) {
                return Err(Error::Graph(format!("synapse {id}: weight must be finite and delay >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Record {
    Spikes,
    SpikesAndVoltages,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub record: Record,
}

impl SimConfig {
    pub fn new(dt: f64, duration: f64) -> Self {
        Self { dt, duration, record: Record::Spikes }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.duration.is_finite() && self.dt > 0.0 && self.dt <= self.duration) {
            return Err(Error::Config(format!(
                "need 0 < dt <= duration, got dt={} duration={}",
                self.dt, self.duration
            )));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    fn step_of(&self, t: f64) -> usize {
        // Nudge so that times written as k * dt land in step k.
        (t / self.dt + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// Spikes of every neuron (not the external inputs).
    pub raster: SpikeTrain,
    /// `voltages[neuron][step]`, after the step's update and any reset.
    pub voltages: Option<Vec<Vec<f64>>>,
    pub dt: f64,
}

impl SimOutput {
    /// `neuron,t_s,V_mV` rows, or `None` if voltages were not recorded.
    pub fn voltage_csv(&self) -> Option<String> {
        let v = self.voltages.as_ref()?;
        let mut out = String::from("neuron,t_s,V_mV\n");
        for (n, trace) in v.iter().enumerate() {
            for (k, x) in trace.iter().enumerate() {
                let _ = writeln!(out, "{n},{},{x}", k as f64 * self.dt);
            }
        }
        Some(out)
    }
}

/// Runs the network for `cfg.duration`, with `external` supplying the spikes
/// of each input channel.
pub fn simulate(net: &LifNetwork, external: &SpikeTrain, cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    net.validate()?;
    if external.neurons() != net.inputs {
        return Err(Error::Graph(format!(
            "network has {} inputs but {} external trains were given",
            net.inputs,
            external.neurons()
        )));
    }
    if external.trains().iter().flatten().any(|&t| t >= cfg.duration) {
        return Err(Error::Config("external spikes must fall inside the simulated duration".into()));
    }

    let steps = cfg.steps();
    let n = net.neurons.len();

    let mut out_inputs: Vec<Vec<usize>> = vec![Vec::new(); net.inputs];
    let mut out_neurons: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut delay_steps = Vec::with_capacity(net.synapses.len());
    for (id, s) in net.synapses.iter().enumerate() {
        match s.pre {
            Pre::Input(i) => out_inputs[i].push(id),
            Pre::Neuron(j) => out_neurons[j].push(id),
        }
        delay_steps.push((s.delay / cfg.dt).round() as usize);
    }

    // Arrivals per step, as synapse ids.
    let mut arrivals: Vec<Vec<usize>> = vec![Vec::new(); steps + 1];
    let schedule = |arrivals: &mut Vec<Vec<usize>>, emitted: usize, syn: usize| {
        let at = emitted + 1 + delay_steps[syn];
        if at < steps {
            arrivals[at].push(syn);
        }
    };
    for (i, train) in external.trains().iter().enumerate() {
        for &t in train {
            let k = cfg.step_of(t);
            for &syn in &out_inputs[i] {
                schedule(&mut arrivals, k, syn);
            }
        }
    }

    let mut v: Vec<f64> = net.neurons.iter().map(|p| p.v_rest).collect();
    let mut refractory_until = vec![0usize; n];
    let refractory_steps: Vec<usize> =
        net.neurons.iter().map(|p| (p.refractory / cfg.dt).round() as usize).collect();
    let mut jump = vec![0.0; n];
    let mut spikes: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut voltages = match cfg.record {
        Record::SpikesAndVoltages => Some(vec![Vec::with_capacity(steps); n]),
        Record::Spikes => None,
    };
    let mut fired = Vec::new();

    for step in 0..steps {
        let mut due = std::mem::take(&mut arrivals[step]);
        due.sort_unstable();
        for &syn in &due {
            let s = &net.synapses[syn];
            jump[s.post] += s.weight;
        }

        fired.clear();
        for i in 0..n {
            let p = &net.neurons[i];
            if step < refractory_until[i] {
                v[i] = p.v_rest;
            } else {
                let (nv, spiked) = advance(v[i], 0.0, jump[i], p, cfg.dt);
                v[i] = nv;
                if spiked {
                    spikes[i].push(step as f64 * cfg.dt);
                    refractory_until[i] = step + 1 + refractory_steps[i];
                    fired.push(i);
                }
            }
            jump[i] = 0.0;
            if let Some(trace) = voltages.as_mut() {
                trace[i].push(v[i]);
            }
        }
        for &i in &fired {
            for &syn in &out_neurons[i] {
                schedule(&mut arrivals, step, syn);
            }
        }
    }

    for train in &mut spikes {
        train.retain(|&t| t < cfg.duration);
    }
    Ok(SimOutput { raster: SpikeTrain::new(spikes, cfg.duration)?, voltages, dt: cfg.dt })
}
