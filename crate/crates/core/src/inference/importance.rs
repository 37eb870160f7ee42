use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec, Predictor, Theta};
use crate::normal::posterior_mode;
use crate::seqreduce::{sequential_reduction_loglik, SrConfig};
use crate::special::{log_phi, LN_2PI};

/// Weight coefficient of variation above which an estimate is flagged unreliable.
pub const UNRELIABLE_CV: f64 = 10.0;

/// How long a sampler runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Samples(usize),
    Time(Duration),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    /// Samples drawn so far (per parameter value), or the level for reduction traces.
    pub count: usize,
    pub elapsed_ms: f64,
    pub estimate: f64,
    pub standard_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub seed: Option<u64>,
    pub points: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ISResult {
    pub estimate: f64,
    /// Delta-method standard error of the log estimate from the weight variance.
    pub standard_error: f64,
    pub weight_cv: f64,
    pub unreliable: bool,
    pub samples: usize,
    pub trace: Trace,
}

struct Sampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
    family: Family,
    response: Vec<f64>,
    predictor: Predictor,
    rng: ChaCha8Rng,
    eps: Vec<f64>,
    u: Vec<f64>,
}

impl Sampler {
    fn new(spec: &ModelSpec, theta: &Theta, seed: u64, stream: u64) -> Result<Self> {
        let response = spec.require_response()?.to_vec();
        let na = posterior_mode(spec, theta)?;
        let n = na.dim();
        let chol = na
            .covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("posterior covariance is not positive definite"))?
            .l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Sampler {
            log_norm: 0.5 * (n as f64 * LN_2PI - na.log_det_precision),
            mean: na.mode,
            chol,
            family: spec.family(),
            response,
            predictor: spec.predictor(theta)?,
            rng,
            eps: vec![0.0; n],
            u: vec![0.0; n],
        })
    }

    /// `log g(u) − log φ_n(u; μ, Σ)` for a fresh draw `u = μ + Lε`.
    fn next_log_weight(&mut self) -> f64 {
        let n = self.eps.len();
        let mut sq = 0.0;
        for e in self.eps.iter_mut() {
            *e = StandardNormal.sample(&mut self.rng);
            sq += *e * *e;
        }
        for i in 0..n {
            let mut s = self.mean[i];
            for j in 0..=i {
                s += self.chol[(i, j)] * self.eps[j];
            }
            self.u[i] = s;
        }
        let mut log_g: f64 = self.u.iter().map(|v| log_phi(*v)).sum();
        for (i, y) in self.response.iter().enumerate() {
            log_g += self
                .family
                .log_density_unchecked(*y, self.predictor.eta(i, &self.u));
        }
        log_g + self.log_norm + 0.5 * sq
    }
}

/// Streaming log-mean-exp of the weights with their second moment.
#[derive(Debug, Clone, Copy)]
struct Accumulator {
    max: f64,
    sum: f64,
    sum_sq: f64,
    count: usize,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
            count: 0,
        }
    }

    fn add(&mut self, lw: f64) {
        self.count += 1;
        if lw == f64::NEG_INFINITY {
            return;
        }
        if lw > self.max {
            let r = (self.max - lw).exp();
            self.sum *= r;
            self.sum_sq *= r * r;
            self.max = lw;
        }
        let w = (lw - self.max).exp();
        self.sum += w;
        self.sum_sq += w * w;
    }

    fn estimate(&self) -> f64 {
        self.max + (self.sum / self.count as f64).ln()
    }

    fn cv(&self) -> f64 {
        let n = self.count as f64;
        let mean = self.sum / n;
        ((self.sum_sq / n) / (mean * mean) - 1.0).max(0.0).sqrt()
    }

    fn standard_error(&self) -> f64 {
        self.cv() / (self.count as f64).sqrt()
    }
}

/// Eight checkpoints per doubling of the sample count.
fn is_checkpoint(count: usize) -> bool {
    if count < 16 {
        return count.is_power_of_two();
    }
    count.is_multiple_of(1 << (count.ilog2() - 3))
}

/// Importance sampling from the Laplace normal approximation.
pub fn importance_sampling(spec: &ModelSpec, theta: &Theta, budget: Budget, seed: u64) -> Result<ISResult> {
    if let Budget::Samples(0) = budget {
        return Err(Error::invalid("importance sampling needs at least one sample"));
    }
    let mut sampler = Sampler::new(spec, theta, seed, 0)?;
    let mut acc = Accumulator::new();
    let start = Instant::now();
    let mut points = Vec::new();
    let record = |acc: &Accumulator, start: &Instant| TracePoint {
        count: acc.count,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        estimate: acc.estimate(),
        standard_error: Some(acc.standard_error()),
    };
    loop {
        acc.add(sampler.next_log_weight());
        let done = match budget {
            Budget::Samples(n) => acc.count >= n,
            Budget::Time(limit) => acc.count.is_multiple_of(64) && start.elapsed() >= limit,
        };
        if is_checkpoint(acc.count) || done {
            points.push(record(&acc, &start));
        }
        if done {
            break;
        }
    }
    let cv = acc.cv();
    Ok(ISResult {
        estimate: acc.estimate(),
        standard_error: acc.standard_error(),
        weight_cv: cv,
        unreliable: !(cv <= UNRELIABLE_CV),
        samples: acc.count,
        trace: Trace {
            seed: Some(seed),
            points,
        },
    })
}

/// Importance-sampling log-likelihood from `n` samples.
pub fn importance_sampling_loglik(spec: &ModelSpec, theta: &Theta, n: usize, seed: u64) -> Result<ISResult> {
    importance_sampling(spec, theta, Budget::Samples(n), seed)
}

/// How to approximate a log-likelihood difference.
#[derive(Debug, Clone, PartialEq)]
pub enum DifferenceMethod {
    /// Paired samplers with independent streams for the two parameter values.
    ImportanceSampling { seed: u64 },
    /// One point per storage level.
    SequentialReduction { levels: Vec<usize>, nodes: usize },
}

/// Running estimates of `ℓ(θ_a) − ℓ(θ_b)`.
pub fn loglik_difference_trace(
    spec: &ModelSpec,
    theta_a: &Theta,
    theta_b: &Theta,
    method: &DifferenceMethod,
    budget: Budget,
) -> Result<Trace> {
    let start = Instant::now();
    match method {
        DifferenceMethod::ImportanceSampling { seed } => {
            if let Budget::Samples(0) = budget {
                return Err(Error::invalid("importance sampling needs at least one sample"));
            }
            let mut sa = Sampler::new(spec, theta_a, *seed, 0)?;
            let mut sb = Sampler::new(spec, theta_b, *seed, 1)?;
            let mut aa = Accumulator::new();
            let mut ab = Accumulator::new();
            let mut points = Vec::new();
            loop {
                aa.add(sa.next_log_weight());
                ab.add(sb.next_log_weight());
                let done = match budget {
                    Budget::Samples(n) => aa.count >= n,
                    Budget::Time(limit) => aa.count.is_multiple_of(64) && start.elapsed() >= limit,
                };
                if is_checkpoint(aa.count) || done {
                    let se = (aa.standard_error().powi(2) + ab.standard_error().powi(2)).sqrt();
                    points.push(TracePoint {
                        count: aa.count,
                        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
                        estimate: aa.estimate() - ab.estimate(),
                        standard_error: Some(se),
                    });
                }
                if done {
                    break;
                }
            }
            Ok(Trace {
                seed: Some(*seed),
                points,
            })
        }
        DifferenceMethod::SequentialReduction { levels, nodes } => {
            let mut points = Vec::new();
            for k in levels {
                if let Budget::Time(limit) = budget {
                    if start.elapsed() >= limit {
                        break;
                    }
                }
                let cfg = SrConfig::new(*k).with_nodes(*nodes);
                let a = sequential_reduction_loglik(spec, theta_a, cfg)?;
                let b = if theta_a == theta_b {
                    a
                } else {
                    sequential_reduction_loglik(spec, theta_b, cfg)?
                };
                points.push(TracePoint {
                    count: *k,
                    elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
                    estimate: a - b,
                    standard_error: None,
                });
            }
            Ok(Trace { seed: None, points })
        }
    }
}
