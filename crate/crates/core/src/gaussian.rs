//! Closed-form Gaussian message arithmetic.
//!
//! These are the exact sum-product rules for the linear node types (equality,
//! addition, scaling) plus the two closed-form references used by the
//! experiments: the scalar Kalman recursion and the conjugate Bayesian linear
//! regression posterior. Everything here is a pure function.

use crate::error::{Error, Result};

/// A one-dimensional Gaussian message in moment form, `N(mean, variance)`.
///
/// Degenerate messages (zero or infinite variance) cannot be constructed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMessage {
    mean: f64,
    variance: f64,
}

impl GaussianMessage {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidMessage(format!("mean must be finite, got {mean}")));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidMessage(format!(
                "variance must be finite and > 0, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.variance
    }
}

/// Equality-node update: precisions and precision-weighted means add.
///
/// The equality factor is symmetric in its three variables, so the same rule
/// gives the forward and both backward messages.
pub fn gaussian_product(a: GaussianMessage, b: GaussianMessage) -> Result<GaussianMessage> {
    let precision = a.precision() + b.precision();
    let variance = 1.0 / precision;
    let mean = variance * (a.mean * a.precision() + b.mean * b.precision());
    GaussianMessage::new(mean, variance)
}

/// Divides `joint` by `factor`, i.e. removes a previously multiplied message.
///
/// Fails when the result would have non-positive precision.
pub fn gaussian_quotient(joint: GaussianMessage, factor: GaussianMessage) -> Result<GaussianMessage> {
    let precision = joint.precision() - factor.precision();
    if !(precision > 0.0) {
        return Err(Error::Numerical(format!(
            "quotient precision {precision} is not positive"
        )));
    }
    let variance = 1.0 / precision;
    let mean = variance * (joint.mean * joint.precision() - factor.mean * factor.precision());
    GaussianMessage::new(mean, variance)
}

/// Forward message of `z = x + y`.
pub fn addition_forward(x: GaussianMessage, y: GaussianMessage) -> Result<GaussianMessage> {
    GaussianMessage::new(x.mean + y.mean, x.variance + y.variance)
}

/// Backward message toward `y` for `z = x + y`, given the forward message on
/// `x` and the backward message on `z`. By symmetry the same function gives the
/// message toward `x` when called with the `y` message in first position.
pub fn addition_backward(x: GaussianMessage, z: GaussianMessage) -> Result<GaussianMessage> {
    GaussianMessage::new(z.mean - x.mean, x.variance + z.variance)
}

/// Forward message of `z = a * y`.
pub fn scaling_forward(y: GaussianMessage, a: f64) -> Result<GaussianMessage> {
    check_scale(a)?;
    GaussianMessage::new(a * y.mean, a * a * y.variance)
}

/// Backward message toward `y` for `z = a * y`.
pub fn scaling_backward(z: GaussianMessage, a: f64) -> Result<GaussianMessage> {
    check_scale(a)?;
    GaussianMessage::new(z.mean / a, z.variance / (a * a))
}

pub(crate) fn check_scale(a: f64) -> Result<()> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::SingularScale(a));
    }
    Ok(())
}

/// Parameters of the scalar random-walk-with-drift state space model
/// `x_t = x_{t-1} + u_t + n_t`, `y_t = x_t + e_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    pub prior_mean: f64,
    pub prior_variance: f64,
    /// Mean of the (known) control input `u_t`.
    pub input_mean: f64,
    pub input_variance: f64,
    /// Process noise variance; may be zero.
    pub process_variance: f64,
    pub observation_variance: f64,
}

impl KalmanConfig {
    /// Settings that reproduce the published gain sequence 0.336 / 0.254 /
    /// 0.206: prior variance 1.0 and a total per-step noise of 0.01, all of it
    /// attributed to the control input.
    pub fn reference() -> Self {
        Self {
            prior_mean: 1.0,
            prior_variance: 1.0,
            input_mean: 4.0,
            input_variance: 0.01,
            process_variance: 0.0,
            observation_variance: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.prior_mean,
            self.prior_variance,
            self.input_mean,
            self.input_variance,
            self.process_variance,
            self.observation_variance,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("kalman parameters must be finite".into()));
        }
        if self.prior_variance <= 0.0 {
            return Err(Error::Config("prior variance must be > 0".into()));
        }
        if self.input_variance < 0.0 || self.process_variance < 0.0 {
            return Err(Error::Config("input/process variances must be >= 0".into()));
        }
        if self.observation_variance <= 0.0 {
            return Err(Error::Config("observation variance must be > 0".into()));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<GaussianMessage> {
        GaussianMessage::new(self.prior_mean, self.prior_variance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanStepResult {
    pub gain: f64,
    pub prediction: GaussianMessage,
    pub posterior: GaussianMessage,
}

/// One step of the closed-form scalar Kalman filter.
pub fn kalman_step(prior: GaussianMessage, cfg: &KalmanConfig, observation: f64) -> Result<KalmanStepResult> {
    cfg.validate()?;
    if !observation.is_finite() {
        return Err(Error::Config(format!("observation must be finite, got {observation}")));
    }
    let pred_mean = prior.mean + cfg.input_mean;
    let pred_var = prior.variance + cfg.process_variance + cfg.input_variance;
    let gain = pred_var / (pred_var + cfg.observation_variance);
    let post_mean = pred_mean + gain * (observation - pred_mean);
    let post_var = (1.0 - gain) * pred_var;
    Ok(KalmanStepResult {
        gain,
        prediction: GaussianMessage::new(pred_mean, pred_var)?,
        posterior: GaussianMessage::new(post_mean, post_var)?,
    })
}

/// Prior and noise settings for Bayesian linear regression with a
/// per-dimension prior precision.
#[derive(Debug, Clone, PartialEq)]
pub struct BlrConfig {
    pub prior_mean: Vec<f64>,
    pub prior_precision: Vec<f64>,
    /// `beta = 1 / sigma^2`.
    pub noise_precision: f64,
}

impl BlrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prior_mean.len() != self.prior_precision.len() {
            return Err(Error::Dimension(format!(
                "prior mean has {} entries, precision has {}",
                self.prior_mean.len(),
                self.prior_precision.len()
            )));
        }
        if self.prior_precision.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Config("prior precisions must be finite and > 0".into()));
        }
        if !(self.noise_precision.is_finite() && self.noise_precision > 0.0) {
            return Err(Error::Config("noise precision must be finite and > 0".into()));
        }
        if self.prior_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("prior means must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn prior_marginals(&self) -> Result<Vec<GaussianMessage>> {
        self.prior_mean
            .iter()
            .zip(&self.prior_precision)
            .map(|(&m, &a)| GaussianMessage::new(m, 1.0 / a))
            .collect()
    }
}

/// Joint Gaussian posterior over regression weights.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// Conjugate posterior `S_N = (diag(alpha) + beta X^T X)^-1`,
/// `m_N = S_N (diag(alpha) m_w + beta X^T y)`, for one or two weights.
pub fn blr_posterior(design: &[Vec<f64>], targets: &[f64], cfg: &BlrConfig) -> Result<JointGaussian> {
    cfg.validate()?;
    let m = cfg.dim();
    if !(1..=2).contains(&m) {
        return Err(Error::Dimension(format!("only 1 or 2 weights are supported, got {m}")));
    }
    if design.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} design rows but {} targets",
            design.len(),
            targets.len()
        )));
    }
    let beta = cfg.noise_precision;
    let mut normal = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for j in 0..m {
        normal[j][j] = cfg.prior_precision[j];
        rhs[j] = cfg.prior_precision[j] * cfg.prior_mean[j];
    }
    for (row, &y) in design.iter().zip(targets) {
        if row.len() != m {
            return Err(Error::Dimension(format!("design row has {} columns, expected {m}", row.len())));
        }
        for j in 0..m {
            rhs[j] += beta * row[j] * y;
            for k in 0..m {
                normal[j][k] += beta * row[j] * row[k];
            }
        }
    }
    let covariance = invert_small(&normal)?;
    let mean = (0..m)
        .map(|j| (0..m).map(|k| covariance[j][k] * rhs[k]).sum())
        .collect();
    Ok(JointGaussian { mean, covariance })
}

fn invert_small(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    match a.len() {
        1 => {
            if a[0][0] == 0.0 {
                return Err(Error::Numerical("singular 1x1 normal matrix".into()));
            }
            Ok(vec![vec![1.0 / a[0][0]]])
        }
        2 => {
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            if det == 0.0 || !det.is_finite() {
                return Err(Error::Numerical(format!("singular 2x2 normal matrix (det = {det})")));
            }
            Ok(vec![
                vec![a[1][1] / det, -a[0][1] / det],
                vec![-a[1][0] / det, a[0][0] / det],
            ])
        }
        n => Err(Error::Dimension(format!("no closed-form inverse for {n}x{n}"))),
    }
}

/// Mean-field marginals: keep the exact means, drop the off-diagonal covariance.
pub fn mean_field_diag(mean: &[f64], covariance: &[Vec<f64>]) -> Result<Vec<GaussianMessage>> {
    if covariance.len() != mean.len() || covariance.iter().any(|r| r.len() != mean.len()) {
        return Err(Error::Dimension("covariance must be square and match the mean".into()));
    }
    mean.iter()
        .enumerate()
        .map(|(j, &m)| GaussianMessage::new(m, covariance[j][j]))
        .collect()
}
