//! Node evaluation suites: spiking node vs closed-form rule on a case list.

use std::path::Path;
use std::str::FromStr;

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snngbp_core::coding::variance_ratio;
use snngbp_core::config::Params;
use snngbp_core::gaussian::{addition_backward, addition_forward, gaussian_product, scaling_backward, scaling_forward};
use snngbp_core::nodes::{
    scaling_apply, AdditionDirection, AdditionNodeSnn, EqualityNodeSnn, EvalRow, PairSampler, ScalingDirection,
};
use snngbp_core::plasticity::WeightStore;
use snngbp_core::{Error, GaussianMessage, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NodeArg {
    Equality,
    Add,
    Mul,
}

/// One evaluation input: two operands, or an operand and a scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Case {
    Pair(GaussianMessage, GaussianMessage),
    Scaled(GaussianMessage, f64),
}

pub enum Direction {
    Equality,
    Add(AdditionDirection),
    Mul(ScalingDirection),
}

impl Direction {
    pub fn parse(node: NodeArg, s: &str) -> Result<Self> {
        Ok(match node {
            NodeArg::Equality => match s {
                "fwd" | "forward" | "bwd" | "backward" => Direction::Equality,
                other => return Err(Error::Usage(format!("unknown equality direction '{other}'"))),
            },
            NodeArg::Add => Direction::Add(AdditionDirection::from_str(s)?),
            NodeArg::Mul => Direction::Mul(ScalingDirection::from_str(s)?),
        })
    }
}

fn g(m: f64, v: f64) -> GaussianMessage {
    GaussianMessage::new(m, v).expect("valid literal message")
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// `k` seeded cases. Addition suites start with the textbook case
/// (x=(1,1), y=(2,3) forward; x=(1,1), z=(3,4) backward).
pub fn random_cases(node: NodeArg, dir: &Direction, k: usize, seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(k);
    match dir {
        Direction::Equality => {
            let sampler = PairSampler::default();
            for _ in 0..k {
                let (x, y) = sampler.sample(&mut rng)?;
                cases.push(Case::Pair(x, y));
            }
        }
        Direction::Add(d) => {
            if k > 0 {
                cases.push(match d {
                    AdditionDirection::Forward => Case::Pair(g(1.0, 1.0), g(2.0, 3.0)),
                    _ => Case::Pair(g(1.0, 1.0), g(3.0, 4.0)),
                });
            }
            // Variances within [0.3, 3] keep the std ratio below 4.
            while cases.len() < k {
                let a = GaussianMessage::new(uniform(&mut rng, -3.0, 3.0), uniform(&mut rng, 0.3, 3.0))?;
                let b = GaussianMessage::new(uniform(&mut rng, -3.0, 3.0), uniform(&mut rng, 0.3, 3.0))?;
                cases.push(Case::Pair(a, b));
            }
        }
        Direction::Mul(_) => {
            for _ in 0..k {
                let msg = GaussianMessage::new(uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, 0.3, 3.0))?;
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                cases.push(Case::Scaled(msg, sign * uniform(&mut rng, 0.5, 3.0)));
            }
        }
    }
    debug_assert!(matches!(node, NodeArg::Mul) == matches!(dir, Direction::Mul(_)));
    Ok(cases)
}

/// Case file: `m_a,v_a,m_b,v_b` rows for equality/add, `m,v,a` rows for mul.
/// `#` lines are comments; the first other line is the header.
pub fn parse_cases(text: &str, node: NodeArg) -> Result<Vec<Case>> {
    let (header, width) = match node {
        NodeArg::Mul => ("m,v,a", 3),
        _ => ("m_a,v_a,m_b,v_b", 4),
    };
    let bad = |detail: String| Error::Malformed { what: "case file", detail };
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let l = l.trim();
        !l.is_empty() && !l.starts_with('#')
    });
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => return Err(bad(format!("expected header '{header}', found '{}'", h.trim()))),
        None => return Err(bad("missing header".into())),
    }
    let mut cases = Vec::new();
    for (lineno, line) in lines {
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != width {
            return Err(bad(format!("line {}: expected {width} fields", lineno + 1)));
        }
        cases.push(match node {
            NodeArg::Mul => Case::Scaled(GaussianMessage::new(vals[0], vals[1])?, vals[2]),
            _ => Case::Pair(GaussianMessage::new(vals[0], vals[1])?, GaussianMessage::new(vals[2], vals[3])?),
        });
    }
    Ok(cases)
}

pub struct Evaluator {
    pub params: Params,
    pub equality: Option<EqualityNodeSnn>,
    pub corrected: bool,
    pub seed: u64,
}

impl Evaluator {
    pub fn new(params: Params, weights: Option<WeightStore>, corrected: bool, seed: u64) -> Result<Self> {
        let equality = match weights {
            Some(w) => Some(EqualityNodeSnn::new(Some(w), params)?),
            None => None,
        };
        Ok(Self { params, equality, corrected, seed })
    }

    fn truth(dir: &Direction, case: Case) -> Result<GaussianMessage> {
        match (dir, case) {
            (Direction::Equality, Case::Pair(x, y)) => gaussian_product(x, y),
            (Direction::Add(AdditionDirection::Forward), Case::Pair(x, y)) => addition_forward(x, y),
            (Direction::Add(_), Case::Pair(a, z)) => addition_backward(a, z),
            (Direction::Mul(ScalingDirection::Forward), Case::Scaled(m, a)) => scaling_forward(m, a),
            (Direction::Mul(ScalingDirection::Backward), Case::Scaled(m, a)) => scaling_backward(m, a),
            _ => Err(Error::Usage("case shape does not match the node".into())),
        }
    }

    fn estimate(&self, dir: &Direction, case_id: usize, case: Case) -> Result<GaussianMessage> {
        match (dir, case) {
            (Direction::Equality, Case::Pair(x, y)) => {
                let node = self.equality.as_ref().ok_or(Error::NotTrained)?;
                node.apply(x, y, self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(case_id as u64))
            }
            (Direction::Add(d), Case::Pair(a, b)) => AdditionNodeSnn::new(self.params)?.apply(a, b, *d),
            (Direction::Mul(d), Case::Scaled(m, a)) => scaling_apply(m, a, *d, &self.params, self.corrected),
            _ => Err(Error::Usage("case shape does not match the node".into())),
        }
    }

    /// Evaluates all cases, spread over the available cores. Each case has
    /// its own seed, so the result does not depend on the thread count.
    pub fn run(&self, dir: &Direction, cases: &[Case]) -> Result<Vec<EvalRow>> {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cases.len().max(1));
        let chunk = cases.len().div_ceil(workers).max(1);
        let results: Vec<Result<Vec<EvalRow>>> = std::thread::scope(|s| {
            let handles: Vec<_> = cases
                .chunks(chunk)
                .enumerate()
                .map(|(c, part)| {
                    s.spawn(move || {
                        part.iter()
                            .enumerate()
                            .map(|(i, &case)| {
                                let case_id = c * chunk + i;
                                Ok(EvalRow {
                                    case_id,
                                    truth: Self::truth(dir, case)?,
                                    estimate: self.estimate(dir, case_id, case)?,
                                })
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
        });
        let mut rows = Vec::with_capacity(cases.len());
        for r in results {
            rows.extend(r?);
        }
        Ok(rows)
    }
}

/// Outcome of `--check`.
pub struct Verdict {
    pub passed: usize,
    pub total: usize,
    pub ok: bool,
}

/// Equality: `|Δm| <= 0.1 σ + 0.05` and `|Δv|/v <= 25%` on 90% of cases.
/// Addition: `|Δm| <= 0.15 (σ_a + σ_b)` and `|Δv|/v <= 30%` on 90% of cases.
/// Scaling: mean exact to 1e-9 and variance equal to the decoder's
/// expectation to 1e-6 on every case.
pub fn check(dir: &Direction, cases: &[Case], rows: &[EvalRow], params: &Params, corrected: bool) -> Verdict {
    let pass: Vec<bool> = cases
        .iter()
        .zip(rows)
        .map(|(case, r)| match (dir, case) {
            (Direction::Equality, _) => {
                r.abs_err_m() <= 0.1 * r.truth.std_dev() + 0.05 && r.rel_err_v() <= 0.25
            }
            (Direction::Add(_), Case::Pair(a, b)) => {
                r.abs_err_m() <= 0.15 * (a.std_dev() + b.std_dev()) && r.rel_err_v() <= 0.30
            }
            (Direction::Mul(_), _) => {
                let c = if corrected { 1.0 } else { variance_ratio(params.n_neurons) };
                let expected_v = r.truth.variance() * c;
                r.abs_err_m() <= 1e-9 && ((r.estimate.variance() - expected_v) / expected_v).abs() <= 1e-6
            }
            _ => false,
        })
        .collect();
    let passed = pass.iter().filter(|&&p| p).count();
    let total = pass.len();
    let ok = match dir {
        Direction::Mul(_) => passed == total,
        _ => passed as f64 >= 0.9 * total as f64,
    };
    Verdict { passed, total, ok }
}

pub fn load_cases(path: &Path, node: NodeArg) -> std::result::Result<Vec<Case>, crate::output::Failure> {
    let text = crate::output::read_file(path)?;
    Ok(parse_cases(&text, node)?)
}
