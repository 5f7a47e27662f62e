//! In-process simulation of decentralized momentum SGD on `n` logical nodes.
//!
//! State is stacked row-wise: row `i` of `x` and `m` belongs to node `i`.
//! One DmSGD step is
//!
//! ```text
//! m' = W (beta m + g)
//! x' = W (x - gamma m)      // the momentum from before this step
//! ```

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::WeightSchedule;
use crate::error::{Error, Result};
use crate::rng;
use crate::synthdata::{global_gradient, stochastic_gradient, NodeDataset};
use crate::topology::WeightMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Mixes both the momentum and the iterate.
    DmSgd,
    /// Local heavy-ball momentum; only iterates are mixed.
    VanillaDmSgd,
    /// DmSGD with `beta = 0`.
    Dsgd,
    /// DmSGD over exact global averaging.
    ParallelMsgd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DmSgd => "dmsgd",
            Algorithm::VanillaDmSgd => "vanilla-dmsgd",
            Algorithm::Dsgd => "dsgd",
            Algorithm::ParallelMsgd => "parallel-msgd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dmsgd" => Ok(Algorithm::DmSgd),
            "vanilla-dmsgd" | "vanilla" => Ok(Algorithm::VanillaDmSgd),
            "dsgd" => Ok(Algorithm::Dsgd),
            "parallel-msgd" | "parallel" | "pmsgd" => Ok(Algorithm::ParallelMsgd),
            other => Err(Error::Parse(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Piecewise-constant step size: `gamma(k) = gamma0 * prod { mult : (at, mult), at <= k }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSize {
    pub initial: f64,
    #[serde(default)]
    pub decay: Vec<(u64, f64)>,
}

impl StepSize {
    pub fn constant(gamma: f64) -> Self {
        StepSize {
            initial: gamma,
            decay: Vec::new(),
        }
    }

    /// Multiplies by `factor` at every multiple of `period` below `horizon`.
    pub fn stepped(gamma: f64, factor: f64, period: u64, horizon: u64) -> Self {
        let decay = (1..)
            .map(|j| j * period)
            .take_while(|&k| k < horizon)
            .map(|k| (k, factor))
            .collect();
        StepSize { initial: gamma, decay }
    }

    pub fn at(&self, k: u64) -> f64 {
        self.decay
            .iter()
            .filter(|(at, _)| *at <= k)
            .fold(self.initial, |g, (_, mult)| g * mult)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub n: usize,
    pub d: usize,
    pub gamma: StepSize,
    pub beta: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub schedule: WeightSchedule,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub trials: usize,
    /// Metrics are logged after every `record_every`-th step and after the
    /// last one. 1 logs every iteration.
    pub record_every: u64,
}

impl TrainConfig {
    /// Defaults: d = 10, constant gamma = 0.05, beta = 0.8, 1000 iterations,
    /// batch 1, one trial, seed 0, every iteration logged.
    pub fn new(schedule: WeightSchedule, algorithm: Algorithm) -> Self {
        TrainConfig {
            n: schedule.n(),
            d: 10,
            gamma: StepSize::constant(0.05),
            beta: 0.8,
            iterations: 1000,
            batch_size: 1,
            schedule,
            algorithm,
            seed: 0,
            trials: 1,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.initial > 0.0) || self.gamma.decay.iter().any(|(_, m)| !(*m > 0.0)) {
            return Err(Error::Domain("step size must stay positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Domain(format!("momentum must lie in [0, 1), got {}", self.beta)));
        }
        if self.iterations == 0 || self.trials == 0 || self.batch_size == 0 || self.record_every == 0 {
            return Err(Error::Domain(
                "iterations, trials, batch size and record interval must be positive".into(),
            ));
        }
        if self.schedule.n() != self.n {
            return Err(Error::InvalidSize(format!(
                "schedule has {} nodes, config has {}",
                self.schedule.n(),
                self.n
            )));
        }
        Ok(())
    }

    /// Momentum actually used by the configured algorithm.
    pub fn effective_beta(&self) -> f64 {
        match self.algorithm {
            Algorithm::Dsgd => 0.0,
            _ => self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub x: Array2<f64>,
    pub m: Array2<f64>,
    /// Number of steps taken so far.
    pub iteration: u64,
}

impl NodeState {
    /// Every node starts at `x0`; momenta start at zero.
    pub fn replicated(n: usize, x0: &[f64]) -> Self {
        let d = x0.len();
        let x = Array2::from_shape_fn((n, d), |(_, j)| x0[j]);
        NodeState {
            x,
            m: Array2::zeros((n, d)),
            iteration: 0,
        }
    }

    pub fn mean_x(&self) -> Array1<f64> {
        self.x.mean_axis(Axis(0)).expect("nonempty")
    }

    pub fn mean_m(&self) -> Array1<f64> {
        self.m.mean_axis(Axis(0)).expect("nonempty")
    }

    /// `||x - 1 xbar^T||_F^2`.
    pub fn consensus_distance(&self) -> f64 {
        let mean = self.mean_x();
        self.x
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum()
    }

    fn check_finite(self) -> Result<Self> {
        if self.x.iter().chain(self.m.iter()).all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::Divergence {
                trial: None,
                iteration: self.iteration,
            })
        }
    }
}

fn check_shapes(state: &NodeState, w: &WeightMatrix, grads: &Array2<f64>) -> Result<()> {
    if w.n() != state.x.nrows() || grads.dim() != state.x.dim() || state.m.dim() != state.x.dim() {
        return Err(Error::InvalidSize(format!(
            "inconsistent shapes: W {0}x{0}, x {1:?}, m {2:?}, g {3:?}",
            w.n(),
            state.x.dim(),
            state.m.dim(),
            grads.dim()
        )));
    }
    Ok(())
}

pub fn dmsgd_step(state: &NodeState, w: &WeightMatrix, grads: &Array2<f64>, gamma: f64, beta: f64) -> Result<NodeState> {
    check_shapes(state, w, grads)?;
    let w = w.entries();
    let m = w.dot(&(&state.m * beta + grads));
    let x = w.dot(&(&state.x - &(&state.m * gamma)));
    NodeState {
        x,
        m,
        iteration: state.iteration + 1,
    }
    .check_finite()
}

/// Heavy-ball momentum kept local to each node; only the iterates are mixed.
pub fn vanilla_dmsgd_step(state: &NodeState, w: &WeightMatrix, grads: &Array2<f64>, gamma: f64, beta: f64) -> Result<NodeState> {
    check_shapes(state, w, grads)?;
    let m = &state.m * beta + grads;
    let x = w.entries().dot(&(&state.x - &(&m * gamma)));
    NodeState {
        x,
        m,
        iteration: state.iteration + 1,
    }
    .check_finite()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    /// Steps completed (1-based).
    pub k: u64,
    /// `(1/n) sum_i ||x_i - x*||^2`.
    pub mse: f64,
    /// `||grad f(xbar)||^2`.
    pub grad_norm: f64,
    /// `||x - 1 xbar^T||_F^2`.
    pub consensus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn mse(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mse).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

fn record(state: &NodeState, ds: &NodeDataset, x_star: &[f64]) -> TraceRecord {
    let n = state.x.nrows() as f64;
    let mse = state
        .x
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(x_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    let mean = state.mean_x();
    let grad = global_gradient(ds, mean.as_slice().expect("contiguous"));
    TraceRecord {
        k: state.iteration,
        mse,
        grad_norm: grad.iter().map(|g| g * g).sum(),
        consensus: state.consensus_distance(),
    }
}

/// Runs one trial. The trial's random stream draws the shared initial point
/// first, then every minibatch in (iteration, node) order.
pub fn run_trial(cfg: &TrainConfig, ds: &NodeDataset, trial: usize) -> Result<TrainTrace> {
    let x_star = ds
        .x_star
        .as_deref()
        .ok_or_else(|| Error::Domain("dataset has no reference solution; call with_reference first".into()))?;
    let mut r = rng::stream(cfg.seed, rng::domain::TRIAL, trial as u64);
    let x0: Vec<f64> = (0..cfg.d).map(|_| r.sample(StandardNormal)).collect();
    let mut state = NodeState::replicated(cfg.n, &x0);
    let beta = cfg.effective_beta();
    let averaging = WeightMatrix::averaging(cfg.n);
    let mut records = Vec::with_capacity(cfg.iterations.div_ceil(cfg.record_every) as usize);
    let mut grads = Array2::zeros((cfg.n, cfg.d));
    for k in 0..cfg.iterations {
        let w = match cfg.algorithm {
            Algorithm::ParallelMsgd => averaging.clone(),
            _ => cfg.schedule.next_matrix(k),
        };
        for i in 0..cfg.n {
            let xi = state.x.row(i);
            let g = stochastic_gradient(ds, i, xi.as_slice().expect("contiguous"), cfg.batch_size, &mut r);
            grads.row_mut(i).assign(&Array1::from(g));
        }
        let gamma = cfg.gamma.at(k);
        let step = match cfg.algorithm {
            Algorithm::VanillaDmSgd => vanilla_dmsgd_step(&state, &w, &grads, gamma, beta),
            _ => dmsgd_step(&state, &w, &grads, gamma, beta),
        };
        state = step.map_err(|e| match e {
            Error::Divergence { iteration, .. } => Error::Divergence {
                trial: Some(trial),
                iteration,
            },
            other => other,
        })?;
        if state.iteration % cfg.record_every == 0 || state.iteration == cfg.iterations {
            let rec = record(&state, ds, x_star);
            // iterates can stay finite while their squares overflow
            if !(rec.mse.is_finite() && rec.consensus.is_finite()) {
                return Err(Error::Divergence {
                    trial: Some(trial),
                    iteration: state.iteration,
                });
            }
            records.push(rec);
        }
    }
    Ok(TrainTrace { records })
}

/// Runs `cfg.trials` independent trials (in parallel) and averages their
/// metrics in trial order, so the result does not depend on scheduling.
pub fn run_training(cfg: &TrainConfig, ds: &NodeDataset) -> Result<TrainTrace> {
    cfg.validate()?;
    if ds.n != cfg.n || ds.d != cfg.d {
        return Err(Error::InvalidSize(format!(
            "dataset is {}x{} (n x d) but config expects {}x{}",
            ds.n, ds.d, cfg.n, cfg.d
        )));
    }
    let traces: Vec<TrainTrace> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, ds, t))
        .collect::<Result<_>>()?;
    let count = traces.len() as f64;
    let records = (0..traces[0].len())
        .map(|idx| {
            let mut acc = TraceRecord {
                k: traces[0].records[idx].k,
                mse: 0.0,
                grad_norm: 0.0,
                consensus: 0.0,
            };
            for t in &traces {
                let r = &t.records[idx];
                acc.mse += r.mse;
                acc.grad_norm += r.grad_norm;
                acc.consensus += r.consensus;
            }
            acc.mse /= count;
            acc.grad_norm /= count;
            acc.consensus /= count;
            acc
        })
        .collect();
    Ok(TrainTrace { records })
}

pub const DEFAULT_DELTA: f64 = 0.1;

/// Smallest `K` such that `dec.mse[k] <= (1 + delta) * par.mse[k]` for every
/// logged iteration `k > K`. Returns the iteration of the last failing record,
/// 0 when none fails and the final iteration when the last one fails.
pub fn estimate_transient_iterations(dec: &TrainTrace, par: &TrainTrace, delta: f64) -> Result<usize> {
    if dec.len() != par.len() {
        return Err(Error::InvalidSize(format!(
            "traces differ in length: {} vs {}",
            dec.len(),
            par.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    Ok(dec
        .records
        .iter()
        .zip(&par.records)
        .rev()
        .find(|(a, b)| a.mse > (1.0 + delta) * b.mse)
        .map_or(0, |(a, _)| a.k as usize))
}
