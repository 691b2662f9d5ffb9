//! Tree-structured Forney-style factor graphs with an explicit message
//! schedule, and the Kalman filter / linear regression drivers built on them.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Params;
use crate::error::{Error, Result};
use crate::gaussian::{
    addition_backward, addition_forward, blr_posterior, gaussian_product, gaussian_quotient, mean_field_diag,
    scaling_backward, scaling_forward, BlrConfig, GaussianMessage, KalmanConfig,
};
use crate::nodes::{scaling_apply, AdditionDirection, AdditionNodeSnn, EqualityNodeSnn, ScalingDirection};
use crate::plasticity::WeightStore;

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    /// Emits a fixed message on its single port.
    GaussianPrior(GaussianMessage),
    /// Observation `N(x | y, σ²)` seen as a message on its single port.
    Data(GaussianMessage),
    /// Ports `[a, b, c]`; all three carry the same variable.
    Equality,
    /// Ports `[x, y, z]` with `z = x + y`.
    Addition,
    /// Ports `[y, z]` with `z = a y`.
    Scaling(f64),
}

impl NodeKind {
    fn ports(&self) -> usize {
        match self {
            NodeKind::GaussianPrior(_) | NodeKind::Data(_) => 1,
            NodeKind::Scaling(_) => 2,
            NodeKind::Equality | NodeKind::Addition => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Edge {
    name: String,
    ends: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    kind: NodeKind,
    ports: Vec<EdgeId>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactorGraph {
    edges: Vec<Edge>,
    nodes: Vec<Node>,
    schedule: Vec<(NodeId, EdgeId)>,
}

/// Computed messages, keyed by edge and sending node.
#[derive(Debug, Clone, PartialEq)]
pub struct Messages {
    by_edge: Vec<Vec<(NodeId, GaussianMessage)>>,
}

impl Messages {
    pub fn get(&self, edge: EdgeId, from: NodeId) -> Option<GaussianMessage> {
        self.by_edge.get(edge)?.iter().find(|(n, _)| *n == from).map(|(_, m)| *m)
    }

    /// Product of the messages travelling both ways on `edge` (or the single
    /// one, for an open edge), using the analytic product.
    pub fn marginal(&self, edge: EdgeId) -> Result<GaussianMessage> {
        let msgs = self.by_edge.get(edge).ok_or_else(|| Error::Graph(format!("no edge {edge}")))?;
        let mut it = msgs.iter().map(|(_, m)| *m);
        let first = it.next().ok_or_else(|| Error::Graph(format!("no message was scheduled on edge {edge}")))?;
        it.try_fold(first, gaussian_product)
    }
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_edge(&mut self, name: &str) -> EdgeId {
        self.edges.push(Edge { name: name.to_string(), ends: Vec::new() });
        self.edges.len() - 1
    }

    pub fn add_node(&mut self, kind: NodeKind, ports: &[EdgeId]) -> Result<NodeId> {
        if ports.len() != kind.ports() {
            return Err(Error::Graph(format!("{kind:?} needs {} ports, got {}", kind.ports(), ports.len())));
        }
        let id = self.nodes.len();
        for &e in ports {
            let edge = self.edges.get_mut(e).ok_or_else(|| Error::Graph(format!("no edge {e}")))?;
            if edge.ends.len() == 2 {
                return Err(Error::Graph(format!("edge '{}' already joins two nodes", edge.name)));
            }
            edge.ends.push(id);
        }
        self.nodes.push(Node { kind, ports: ports.to_vec() });
        Ok(id)
    }

    /// Appends "node sends on edge" to the schedule.
    pub fn schedule(&mut self, node: NodeId, edge: EdgeId) -> Result<()> {
        let n = self.nodes.get(node).ok_or_else(|| Error::Graph(format!("no node {node}")))?;
        if !n.ports.contains(&edge) {
            return Err(Error::Graph(format!("node {node} is not attached to edge {edge}")));
        }
        self.schedule.push((node, edge));
        Ok(())
    }

    pub fn edge_name(&self, edge: EdgeId) -> Option<&str> {
        self.edges.get(edge).map(|e| e.name.as_str())
    }

    /// Rejects cycles; only trees (forests) are supported.
    pub fn validate(&self) -> Result<()> {
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn root(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for e in &self.edges {
            if let [a, b] = e.ends[..] {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra == rb {
                    return Err(Error::Graph(format!("edge '{}' closes a cycle", e.name)));
                }
                parent[ra] = rb;
            }
        }
        Ok(())
    }

    /// Executes the schedule in order.
    pub fn run(&self, rules: &mut Rules<'_>) -> Result<Messages> {
        self.validate()?;
        let mut msgs = Messages { by_edge: vec![Vec::new(); self.edges.len()] };
        for &(node, out) in &self.schedule {
            let n = &self.nodes[node];
            let incoming = |port: usize| -> Result<Option<GaussianMessage>> {
                let e = n.ports[port];
                match self.edges[e].ends.iter().find(|&&o| o != node) {
                    None => Ok(None),
                    Some(&other) => msgs.get(e, other).map(Some).ok_or_else(|| {
                        Error::Graph(format!(
                            "message on '{}' toward node {node} is needed before it is scheduled",
                            self.edges[e].name
                        ))
                    }),
                }
            };
            let need = |port: usize| -> Result<GaussianMessage> {
                incoming(port)?.ok_or_else(|| {
                    Error::Graph(format!("edge '{}' is open but its message is required", self.edges[n.ports[port]].name))
                })
            };
            let port_of_out = n.ports.iter().position(|&e| e == out).expect("checked when scheduled");
            let msg = match n.kind {
                NodeKind::GaussianPrior(m) | NodeKind::Data(m) => m,
                NodeKind::Equality => {
                    let others: Vec<GaussianMessage> =
                        (0..3).filter(|&p| p != port_of_out).filter_map(|p| incoming(p).transpose()).collect::<Result<_>>()?;
                    match others[..] {
                        [a, b] => rules.equality(a, b)?,
                        [a] => a,
                        _ => return Err(Error::Graph("equality node has no incoming messages".into())),
                    }
                }
                NodeKind::Addition => match port_of_out {
                    2 => rules.addition(need(0)?, need(1)?, AdditionDirection::Forward)?,
                    1 => rules.addition(need(0)?, need(2)?, AdditionDirection::BackwardY)?,
                    _ => rules.addition(need(1)?, need(2)?, AdditionDirection::BackwardX)?,
                },
                NodeKind::Scaling(a) => match port_of_out {
                    1 => rules.scaling(need(0)?, a, ScalingDirection::Forward)?,
                    _ => rules.scaling(need(1)?, a, ScalingDirection::Backward)?,
                },
            };
            let slot = &mut msgs.by_edge[out];
            slot.retain(|(from, _)| *from != node);
            slot.push((node, msg));
        }
        Ok(msgs)
    }
}

/// Spiking node implementations sharing one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingBackend {
    pub equality: EqualityNodeSnn,
    pub addition: AdditionNodeSnn,
    pub seed: u64,
    /// Undo the decoder's truncation bias in the scaling node.
    pub scaling_corrected: bool,
}

impl SpikingBackend {
    pub fn new(params: Params, weights: Option<WeightStore>, seed: u64) -> Result<Self> {
        let weights = weights.ok_or(Error::NotTrained)?;
        Ok(Self {
            equality: EqualityNodeSnn::new(Some(weights), params)?,
            addition: AdditionNodeSnn::new(params)?,
            seed,
            scaling_corrected: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Analytic,
    Spiking(Box<SpikingBackend>),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Analytic => "analytic",
            Backend::Spiking(_) => "snn",
        }
    }

    /// Same backend with a different stochastic seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            Backend::Analytic => Backend::Analytic,
            Backend::Spiking(s) => Backend::Spiking(Box::new(SpikingBackend { seed, ..(**s).clone() })),
        }
    }

    pub fn rules(&self) -> Rules<'_> {
        Rules { backend: self, calls: 0 }
    }
}

/// Node update rules of a backend for one run. Each spiking equality call
/// draws a fresh sub-seed, so a run is replayable from the backend seed.
#[derive(Debug)]
pub struct Rules<'a> {
    backend: &'a Backend,
    calls: u64,
}

impl Rules<'_> {
    pub fn equality(&mut self, a: GaussianMessage, b: GaussianMessage) -> Result<GaussianMessage> {
        match self.backend {
            Backend::Analytic => gaussian_product(a, b),
            Backend::Spiking(s) => {
                self.calls += 1;
                let sub = s.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.calls);
                s.equality.apply(a, b, sub)
            }
        }
    }

    pub fn addition(&mut self, a: GaussianMessage, b: GaussianMessage, dir: AdditionDirection) -> Result<GaussianMessage> {
        match self.backend {
            Backend::Analytic => match dir {
                AdditionDirection::Forward => addition_forward(a, b),
                AdditionDirection::BackwardY | AdditionDirection::BackwardX => addition_backward(a, b),
            },
            Backend::Spiking(s) => s.addition.apply(a, b, dir),
        }
    }

    pub fn scaling(&mut self, m: GaussianMessage, a: f64, dir: ScalingDirection) -> Result<GaussianMessage> {
        match self.backend {
            Backend::Analytic => match dir {
                ScalingDirection::Forward => scaling_forward(m, a),
                ScalingDirection::Backward => scaling_backward(m, a),
            },
            Backend::Spiking(s) => scaling_apply(m, a, dir, &s.equality.params, s.scaling_corrected),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanRecord {
    /// Closed-form gain of the step (analytic backend only).
    pub gain: Option<f64>,
    pub prediction: GaussianMessage,
    pub posterior: GaussianMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanRun {
    pub prior: GaussianMessage,
    pub steps: Vec<KalmanRecord>,
}

impl KalmanRun {
    /// Latest posterior, or the prior when no step was taken.
    pub fn last(&self) -> GaussianMessage {
        self.steps.last().map_or(self.prior, |s| s.posterior)
    }
}

/// An edge together with the node whose outgoing message on it we read.
type Port = (EdgeId, NodeId);

/// Graph of one filtering step: the previous posterior plus the control
/// input (plus process noise, when present) gives the prediction, which meets
/// the observation at an equality node.
fn kalman_graph(prev: GaussianMessage, cfg: &KalmanConfig, y: f64) -> Result<(FactorGraph, Port, Port)> {
    let mut g = FactorGraph::new();
    let e_prev = g.add_edge("x_prev");
    let e_u = g.add_edge("u");
    let e_s = g.add_edge("x_driven");
    let n_prev = g.add_node(NodeKind::GaussianPrior(prev), &[e_prev])?;
    let n_u = g.add_node(NodeKind::GaussianPrior(GaussianMessage::new(cfg.input_mean, cfg.input_variance)?), &[e_u])?;
    let n_add = g.add_node(NodeKind::Addition, &[e_prev, e_u, e_s])?;
    g.schedule(n_prev, e_prev)?;
    g.schedule(n_u, e_u)?;
    g.schedule(n_add, e_s)?;
    let (e_pred, n_pred) = if cfg.process_variance > 0.0 {
        let e_n = g.add_edge("process_noise");
        let e_bar = g.add_edge("x_pred");
        let n_noise = g.add_node(NodeKind::GaussianPrior(GaussianMessage::new(0.0, cfg.process_variance)?), &[e_n])?;
        let n_add2 = g.add_node(NodeKind::Addition, &[e_s, e_n, e_bar])?;
        g.schedule(n_noise, e_n)?;
        g.schedule(n_add2, e_bar)?;
        (e_bar, n_add2)
    } else {
        (e_s, n_add)
    };
    let e_obs = g.add_edge("y");
    let e_post = g.add_edge("x");
    let n_obs = g.add_node(NodeKind::Data(GaussianMessage::new(y, cfg.observation_variance)?), &[e_obs])?;
    let n_eq = g.add_node(NodeKind::Equality, &[e_pred, e_obs, e_post])?;
    g.schedule(n_obs, e_obs)?;
    g.schedule(n_eq, e_post)?;
    Ok((g, (e_pred, n_pred), (e_post, n_eq)))
}

/// Filters `observations` by message passing on the chosen backend.
pub fn run_kalman(cfg: &KalmanConfig, observations: &[f64], backend: &Backend) -> Result<KalmanRun> {
    cfg.validate()?;
    let prior = cfg.prior()?;
    let mut rules = backend.rules();
    let mut prev = prior;
    let mut steps = Vec::with_capacity(observations.len());
    for &y in observations {
        let (g, pred, post) = kalman_graph(prev, cfg, y)?;
        let msgs = g.run(&mut rules)?;
        let missing = || Error::Graph("scheduled message missing".into());
        let prediction = msgs.get(pred.0, pred.1).ok_or_else(missing)?;
        let posterior = msgs.get(post.0, post.1).ok_or_else(missing)?;
        let gain = match backend {
            Backend::Analytic => Some(prediction.variance() / (prediction.variance() + cfg.observation_variance)),
            Backend::Spiking(_) => None,
        };
        steps.push(KalmanRecord { gain, prediction, posterior });
        prev = posterior;
    }
    Ok(KalmanRun { prior, steps })
}

/// Observations `y_t = m_u + y_{t-1} + e_t`, `e_t ~ N(0, σ_y²)`, starting
/// from `y_0` at the prior mean.
pub fn generate_observations(cfg: &KalmanConfig, steps: usize, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.observation_variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = cfg.prior_mean;
    Ok((0..steps)
        .map(|_| {
            y += cfg.input_mean + noise.sample(&mut rng);
            y
        })
        .collect())
}

/// Scalar inputs with targets; the bias feature is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct BlrDataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub true_weights: Option<[f64; 2]>,
    pub seed: Option<u64>,
}

impl BlrDataset {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Dimension(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Config("dataset values must be finite".into()));
        }
        Ok(Self { inputs, targets, true_weights: None, seed: None })
    }

    /// `x ~ U[0, 5]`, `y = w0 + w1 x + e`, `e ~ N(0, noise_variance)`.
    pub fn synthetic(n: usize, w: [f64; 2], noise_variance: f64, seed: u64) -> Result<Self> {
        let noise = Normal::new(0.0, noise_variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x = 5.0 * rng.random::<f64>();
            inputs.push(x);
            targets.push(w[0] + w[1] * x + noise.sample(&mut rng));
        }
        Ok(Self { inputs, targets, true_weights: Some(w), seed: Some(seed) })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Rows `[1, x_i]`.
    pub fn design(&self) -> Vec<Vec<f64>> {
        self.inputs.iter().map(|&x| vec![1.0, x]).collect()
    }
}

/// The reference regression config: `σ² = 0.5`, `m_w = 0`, `α = [1, 3]`.
pub fn reference_blr_config() -> BlrConfig {
    BlrConfig { prior_mean: vec![0.0, 0.0], prior_precision: vec![1.0, 3.0], noise_precision: 2.0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlrRun {
    /// Marginal posterior of `w0` and `w1`.
    pub posteriors: Vec<GaussianMessage>,
}

struct PointGraph {
    graph: FactorGraph,
    to_w0: (EdgeId, NodeId),
    to_w1: (EdgeId, NodeId),
    post: [(EdgeId, NodeId); 2],
}

/// Graph of one data point: `w0 + x w1 + noise = y`, with each weight's
/// current cavity belief entering through an equality node.
fn point_graph(cavity: [GaussianMessage; 2], x: f64, likelihood: GaussianMessage) -> Result<PointGraph> {
    let mut g = FactorGraph::new();
    let c0 = g.add_edge("w0_in");
    let c1 = g.add_edge("w1_in");
    let a0 = g.add_edge("w0");
    let a1 = g.add_edge("w1");
    let p0 = g.add_edge("w0_out");
    let p1 = g.add_edge("w1_out");
    let z1 = g.add_edge("x_w1");
    let f = g.add_edge("f");
    let n_c0 = g.add_node(NodeKind::GaussianPrior(cavity[0]), &[c0])?;
    let n_c1 = g.add_node(NodeKind::GaussianPrior(cavity[1]), &[c1])?;
    let n_eq0 = g.add_node(NodeKind::Equality, &[c0, a0, p0])?;
    let n_eq1 = g.add_node(NodeKind::Equality, &[c1, a1, p1])?;
    let n_sc = g.add_node(NodeKind::Scaling(x), &[a1, z1])?;
    let n_add = g.add_node(NodeKind::Addition, &[a0, z1, f])?;
    // Observation noise is folded into the data node's message.
    let n_y = g.add_node(NodeKind::Data(likelihood), &[f])?;
    for (n, e) in [
        (n_c0, c0),
        (n_c1, c1),
        (n_eq0, a0),
        (n_eq1, a1),
        (n_sc, z1),
        (n_y, f),
        (n_add, a0),
        (n_add, z1),
        (n_sc, a1),
        (n_eq0, p0),
        (n_eq1, p1),
    ] {
        g.schedule(n, e)?;
    }
    Ok(PointGraph { graph: g, to_w0: (a0, n_add), to_w1: (a1, n_sc), post: [(p0, n_eq0), (p1, n_eq1)] })
}

/// Online regression by message passing: data points are absorbed one at a
/// time into mean-field weight beliefs. Later sweeps replace each point's
/// previous contribution (divided out analytically) with a refreshed one.
pub fn run_blr(data: &BlrDataset, cfg: &BlrConfig, backend: &Backend, sweeps: usize) -> Result<BlrRun> {
    cfg.validate()?;
    if cfg.dim() != 2 {
        return Err(Error::Dimension(format!("message-passing regression expects 2 weights, config has {}", cfg.dim())));
    }
    let priors = cfg.prior_marginals()?;
    let mut post = [priors[0], priors[1]];
    let noise_var = 1.0 / cfg.noise_precision;
    let mut rules = backend.rules();
    let mut contributions: Vec<Option<[GaussianMessage; 2]>> = vec![None; data.len()];
    for _ in 0..sweeps.max(1) {
        for (i, (&x, &y)) in data.inputs.iter().zip(&data.targets).enumerate() {
            let cavity = match contributions[i] {
                None => post,
                Some([m0, m1]) => [gaussian_quotient(post[0], m0)?, gaussian_quotient(post[1], m1)?],
            };
            let pg = point_graph(cavity, x, GaussianMessage::new(y, noise_var)?)?;
            let msgs = pg.graph.run(&mut rules)?;
            let get = |(e, n): (EdgeId, NodeId)| {
                msgs.get(e, n).ok_or_else(|| Error::Graph("scheduled message missing".into()))
            };
            contributions[i] = Some([get(pg.to_w0)?, get(pg.to_w1)?]);
            post = [get(pg.post[0])?, get(pg.post[1])?];
        }
    }
    Ok(BlrRun { posteriors: post.to_vec() })
}

/// Closed-form posterior reduced to its mean-field marginals.
pub fn classic_blr(data: &BlrDataset, cfg: &BlrConfig) -> Result<Vec<GaussianMessage>> {
    let joint = blr_posterior(&data.design(), &data.targets, cfg)?;
    mean_field_diag(&joint.mean, &joint.covariance)
}

/// Which experiment [`compare_backends`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Kalman,
    Blr,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kalman" => Ok(Self::Kalman),
            "blr" => Ok(Self::Blr),
            other => Err(Error::Usage(format!("unknown experiment '{other}' (expected kalman or blr)"))),
        }
    }
}

/// Per-seed, per-quantity comparison of two backends.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    /// Filtering step (1-based) or weight index.
    pub index: usize,
    pub reference: GaussianMessage,
    pub candidate: GaussianMessage,
}

impl ComparisonRow {
    pub fn abs_err_m(&self) -> f64 {
        (self.candidate.mean() - self.reference.mean()).abs()
    }

    pub fn rel_err_v(&self) -> f64 {
        (self.candidate.variance() - self.reference.variance()).abs() / self.reference.variance()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub experiment: Experiment,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn max_abs_err_m(&self) -> f64 {
        self.rows.iter().map(ComparisonRow::abs_err_m).fold(0.0, f64::max)
    }

    pub fn mean_abs_err_m(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(ComparisonRow::abs_err_m).sum::<f64>() / self.rows.len() as f64
    }

    pub fn max_rel_err_v(&self) -> f64 {
        self.rows.iter().map(ComparisonRow::rel_err_v).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,index,m_ref,v_ref,m_cand,v_cand,abs_err_m,rel_err_v\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.seed,
                r.index,
                r.reference.mean(),
                r.reference.variance(),
                r.candidate.mean(),
                r.candidate.variance(),
                r.abs_err_m(),
                r.rel_err_v()
            );
        }
        let _ = writeln!(
            out,
            "# max_abs_err_m={} mean_abs_err_m={} max_rel_err_v={}",
            self.max_abs_err_m(),
            self.mean_abs_err_m(),
            self.max_rel_err_v()
        );
        out
    }
}

/// Runs the reference experiment (10 Kalman steps, or 10 regression points)
/// for each seed on both backends. The seed drives the data and the
/// candidate's spike generation.
pub fn compare_backends(
    experiment: Experiment,
    seeds: &[u64],
    reference: &Backend,
    candidate: &Backend,
) -> Result<ComparisonTable> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let (r, c) = (reference.reseeded(seed), candidate.reseeded(seed));
        let pairs: Vec<(GaussianMessage, GaussianMessage)> = match experiment {
            Experiment::Kalman => {
                let cfg = KalmanConfig::reference();
                let obs = generate_observations(&cfg, 10, seed)?;
                let a = run_kalman(&cfg, &obs, &r)?;
                let b = run_kalman(&cfg, &obs, &c)?;
                a.steps.iter().zip(&b.steps).map(|(x, y)| (x.posterior, y.posterior)).collect()
            }
            Experiment::Blr => {
                let cfg = reference_blr_config();
                let data = BlrDataset::synthetic(10, [1.0, 1.0], 1.0 / cfg.noise_precision, seed)?;
                let a = run_blr(&data, &cfg, &r, 1)?;
                let b = run_blr(&data, &cfg, &c, 1)?;
                a.posteriors.into_iter().zip(b.posteriors).collect()
            }
        };
        let base = usize::from(experiment == Experiment::Kalman);
        rows.extend(pairs.into_iter().enumerate().map(|(i, (reference, candidate))| ComparisonRow {
            seed,
            index: i + base,
            reference,
            candidate,
        }));
    }
    Ok(ComparisonTable { experiment, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::kalman_step;
    use approx::assert_relative_eq;

    fn g(m: f64, v: f64) -> GaussianMessage {
        GaussianMessage::new(m, v).unwrap()
    }

    #[test]
    fn reference_gains_and_variances() {
        let cfg = KalmanConfig::reference();
        let obs = generate_observations(&cfg, 10, 1).unwrap();
        let run = run_kalman(&cfg, &obs, &Backend::Analytic).unwrap();
        let gains: Vec<f64> = run.steps.iter().take(3).map(|s| s.gain.unwrap()).collect();
        for (k, want) in gains.iter().zip([0.336, 0.254, 0.206]) {
            assert!((k - want).abs() <= 1e-3, "{gains:?}");
        }
        for (s, want) in run.steps.iter().zip([0.671, 0.508, 0.411]) {
            assert!((s.posterior.variance() - want).abs() <= 1e-3);
        }
        assert!((run.steps[9].prediction.variance() - 0.222).abs() <= 1e-3);
    }

    #[test]
    fn graph_matches_closed_form() {
        let cfg = KalmanConfig { process_variance: 0.3, ..KalmanConfig::reference() };
        let obs = [5.2, 8.9, 13.5, 16.0];
        let run = run_kalman(&cfg, &obs, &Backend::Analytic).unwrap();
        let mut prev = cfg.prior().unwrap();
        for (rec, &y) in run.steps.iter().zip(&obs) {
            let want = kalman_step(prev, &cfg, y).unwrap();
            assert_relative_eq!(rec.posterior.mean(), want.posterior.mean(), max_relative = 1e-12);
            assert_relative_eq!(rec.posterior.variance(), want.posterior.variance(), max_relative = 1e-12);
            assert_relative_eq!(rec.gain.unwrap(), want.gain, max_relative = 1e-12);
            prev = rec.posterior;
        }
    }

    #[test]
    fn zero_steps_return_prior() {
        let cfg = KalmanConfig::reference();
        let run = run_kalman(&cfg, &[], &Backend::Analytic).unwrap();
        assert_eq!(run.last(), cfg.prior().unwrap());
    }

    #[test]
    fn spiking_backend_needs_weights() {
        assert_eq!(SpikingBackend::new(Params::default(), None, 0), Err(Error::NotTrained));
    }

    #[test]
    fn cycles_are_rejected() {
        let mut fg = FactorGraph::new();
        let (a, b, c) = (fg.add_edge("a"), fg.add_edge("b"), fg.add_edge("c"));
        let d = fg.add_edge("d");
        fg.add_node(NodeKind::Equality, &[a, b, c]).unwrap();
        fg.add_node(NodeKind::Addition, &[a, b, d]).unwrap();
        assert!(matches!(fg.validate(), Err(Error::Graph(_))));
    }

    #[test]
    fn out_of_order_schedule_is_an_error() {
        let mut fg = FactorGraph::new();
        let (a, b) = (fg.add_edge("a"), fg.add_edge("b"));
        let p = fg.add_node(NodeKind::GaussianPrior(g(0.0, 1.0)), &[a]).unwrap();
        let s = fg.add_node(NodeKind::Scaling(2.0), &[a, b]).unwrap();
        fg.schedule(s, b).unwrap();
        fg.schedule(p, a).unwrap();
        assert!(matches!(fg.run(&mut Backend::Analytic.rules()), Err(Error::Graph(_))));
    }

    #[test]
    fn port_and_edge_checks() {
        let mut fg = FactorGraph::new();
        let a = fg.add_edge("a");
        assert!(fg.add_node(NodeKind::Equality, &[a]).is_err());
        fg.add_node(NodeKind::Data(g(0.0, 1.0)), &[a]).unwrap();
        fg.add_node(NodeKind::Data(g(0.0, 1.0)), &[a]).unwrap();
        assert!(fg.add_node(NodeKind::Data(g(0.0, 1.0)), &[a]).is_err());
        assert!(fg.schedule(0, 7).is_err());
    }

    #[test]
    fn blr_empty_dataset_gives_priors() {
        let cfg = reference_blr_config();
        let data = BlrDataset::new(vec![], vec![]).unwrap();
        let run = run_blr(&data, &cfg, &Backend::Analytic, 1).unwrap();
        assert_eq!(run.posteriors, cfg.prior_marginals().unwrap());
    }

    #[test]
    fn blr_single_point_matches_exact_marginal_update() {
        // One point: w0 = w0 prior times message from y - x w1.
        let cfg = reference_blr_config();
        let data = BlrDataset::new(vec![2.0], vec![3.0]).unwrap();
        let run = run_blr(&data, &cfg, &Backend::Analytic, 1).unwrap();
        let msg0 = g(3.0, 0.5 + 4.0 / 3.0);
        let want0 = gaussian_product(g(0.0, 1.0), msg0).unwrap();
        assert_relative_eq!(run.posteriors[0].mean(), want0.mean(), max_relative = 1e-12);
        let msg1 = g(1.5, (0.5 + 1.0) / 4.0);
        let want1 = gaussian_product(g(0.0, 1.0 / 3.0), msg1).unwrap();
        assert_relative_eq!(run.posteriors[1].variance(), want1.variance(), max_relative = 1e-12);
    }

    #[test]
    fn blr_sweeps_converge() {
        let cfg = reference_blr_config();
        let data = BlrDataset::synthetic(10, [1.0, 1.0], 0.5, 5).unwrap();
        let a = run_blr(&data, &cfg, &Backend::Analytic, 99).unwrap();
        let b = run_blr(&data, &cfg, &Backend::Analytic, 100).unwrap();
        for (x, y) in a.posteriors.iter().zip(&b.posteriors) {
            assert!((x.mean() - y.mean()).abs() < 1e-6);
        }
    }

    #[test]
    fn analytic_comparison_is_exact() {
        for exp in [Experiment::Kalman, Experiment::Blr] {
            let t = compare_backends(exp, &[1, 2], &Backend::Analytic, &Backend::Analytic).unwrap();
            assert_eq!(t.max_abs_err_m(), 0.0);
            assert_eq!(t.max_rel_err_v(), 0.0);
        }
        assert!(matches!("filter".parse::<Experiment>(), Err(Error::Usage(_))));
    }
}
