//! Simulation parameters as a flat `key=value` file.
//!
//! Keys mirror the usual LIF/STDP parameter table; unknown keys are rejected
//! so typos do not silently fall back to defaults.

use std::fmt::Write as _;

use crate::coding::{EncoderConfig, SpikeScheme};
use crate::error::{Error, Result};
use crate::lif::{LifParams, SimConfig};
use crate::plasticity::StdpParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub theta_mv: f64,
    pub v_rest_mv: f64,
    pub r_m: f64,
    pub a_plus: f64,
    pub a_minus_mag: f64,
    pub theta_low_mv: f64,
    pub theta_high_mv: f64,
    pub r_max_hz: f64,
    pub t_s_s: f64,
    pub w_max: f64,
    pub w_min: f64,
    pub tau_plus_ms: f64,
    pub tau_minus_ms: f64,
    pub tau_m_ms: f64,
    pub dt_ms: f64,
    pub teacher_offset_ms: f64,
    pub eps_mv: f64,
    pub n_neurons: usize,
    pub m_kernel: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            theta_mv: -50.0,
            v_rest_mv: -80.0,
            r_m: 1.0,
            a_plus: 0.25,
            a_minus_mag: 0.125,
            theta_low_mv: -50.0,
            theta_high_mv: -30.0,
            r_max_hz: 100.0,
            t_s_s: 1.0,
            w_max: 1.0,
            w_min: -1.0,
            tau_plus_ms: 20.0,
            tau_minus_ms: 20.0,
            tau_m_ms: 10.0,
            dt_ms: 1.0,
            teacher_offset_ms: 1.0,
            eps_mv: 1.0,
            n_neurons: 100,
            m_kernel: 50,
        }
    }
}

const KEYS: &[&str] = &[
    "theta_mV",
    "v_rest_mV",
    "r_m",
    "a_plus",
    "a_minus_mag",
    "theta_low_mV",
    "theta_high_mV",
    "r_max_hz",
    "t_s_s",
    "w_max",
    "w_min",
    "tau_plus_ms",
    "tau_minus_ms",
    "tau_m_ms",
    "dt_ms",
    "teacher_offset_ms",
    "eps_mV",
    "n_neurons",
    "m_kernel",
];

impl Params {
    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            p.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        p.validate()?;
        Ok(p)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let real = || -> Result<f64> {
            let v: f64 = value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: '{value}' is not a number")))?;
            if !v.is_finite() {
                return Err(Error::Config(format!("{key}: value must be finite")));
            }
            Ok(v)
        };
        let count = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: '{value}' is not a non-negative integer")))
        };
        match key {
            "theta_mV" => self.theta_mv = real()?,
            "v_rest_mV" => self.v_rest_mv = real()?,
            "r_m" => self.r_m = real()?,
            "a_plus" => self.a_plus = real()?,
            "a_minus_mag" => self.a_minus_mag = real()?,
            "theta_low_mV" => self.theta_low_mv = real()?,
            "theta_high_mV" => self.theta_high_mv = real()?,
            "r_max_hz" => self.r_max_hz = real()?,
            "t_s_s" => self.t_s_s = real()?,
            "w_max" => self.w_max = real()?,
            "w_min" => self.w_min = real()?,
            "tau_plus_ms" => self.tau_plus_ms = real()?,
            "tau_minus_ms" => self.tau_minus_ms = real()?,
            "tau_m_ms" => self.tau_m_ms = real()?,
            "dt_ms" => self.dt_ms = real()?,
            "teacher_offset_ms" => self.teacher_offset_ms = real()?,
            "eps_mV" => self.eps_mv = real()?,
            "n_neurons" => self.n_neurons = count()?,
            "m_kernel" => self.m_kernel = count()?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.lif().validate()?;
        self.stdp().validate()?;
        self.encoder(0).validate()?;
        if !(self.v_rest_mv < self.theta_low_mv && self.theta_low_mv < self.theta_high_mv) {
            return Err(Error::Config("need v_rest < theta_low < theta_high".into()));
        }
        if !(self.eps_mv > 0.0) {
            return Err(Error::Config("eps_mV must be > 0".into()));
        }
        if self.m_kernel < 1 {
            return Err(Error::Config("m_kernel must be >= 1".into()));
        }
        if !(self.teacher_offset_ms >= 0.0) {
            return Err(Error::Config("teacher_offset_ms must be >= 0".into()));
        }
        self.sim().validate()?;
        if self.r_max_hz * self.dt_ms * 1e-3 > 1.0 {
            return Err(Error::Config("r_max_hz exceeds one spike per simulation step".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same parameters.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key));
        }
        out
    }

    fn get(&self, key: &str) -> String {
        match key {
            "theta_mV" => self.theta_mv.to_string(),
            "v_rest_mV" => self.v_rest_mv.to_string(),
            "r_m" => self.r_m.to_string(),
            "a_plus" => self.a_plus.to_string(),
            "a_minus_mag" => self.a_minus_mag.to_string(),
            "theta_low_mV" => self.theta_low_mv.to_string(),
            "theta_high_mV" => self.theta_high_mv.to_string(),
            "r_max_hz" => self.r_max_hz.to_string(),
            "t_s_s" => self.t_s_s.to_string(),
            "w_max" => self.w_max.to_string(),
            "w_min" => self.w_min.to_string(),
            "tau_plus_ms" => self.tau_plus_ms.to_string(),
            "tau_minus_ms" => self.tau_minus_ms.to_string(),
            "tau_m_ms" => self.tau_m_ms.to_string(),
            "dt_ms" => self.dt_ms.to_string(),
            "teacher_offset_ms" => self.teacher_offset_ms.to_string(),
            "eps_mV" => self.eps_mv.to_string(),
            "n_neurons" => self.n_neurons.to_string(),
            "m_kernel" => self.m_kernel.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    pub fn lif(&self) -> LifParams {
        LifParams {
            tau_m: self.tau_m_ms * 1e-3,
            v_rest: self.v_rest_mv,
            r_m: self.r_m,
            threshold: self.theta_mv,
            refractory: 0.0,
        }
    }

    pub fn stdp(&self) -> StdpParams {
        StdpParams {
            a_plus: self.a_plus,
            a_minus_mag: self.a_minus_mag,
            tau_plus: self.tau_plus_ms * 1e-3,
            tau_minus: self.tau_minus_ms * 1e-3,
            w_min: self.w_min,
            w_max: self.w_max,
        }
    }

    pub fn encoder(&self, seed: u64) -> EncoderConfig {
        EncoderConfig {
            neurons: self.n_neurons,
            r_max: self.r_max_hz,
            window: self.t_s_s,
            scheme: SpikeScheme::Periodic,
            seed,
        }
    }

    /// One encoding window at the configured step.
    pub fn sim(&self) -> SimConfig {
        SimConfig::new(self.dt_ms * 1e-3, self.t_s_s)
    }

    /// mV per unit of plastic weight: `w = 1` lifts a resting neuron exactly
    /// to the base threshold.
    pub fn weight_scale(&self) -> f64 {
        self.theta_mv - self.v_rest_mv
    }
}
