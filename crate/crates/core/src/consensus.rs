//! Time-varying weight schedules and finite-time averaging.
//!
//! Products of schedule matrices are always formed newest-on-the-left:
//! `W(start + len - 1) * ... * W(start + 1) * W(start)`.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use ndarray::{Array2, Axis};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::operator_norm;
use crate::topology::{
    build_family, ceil_log2, one_peer_with_exponent, TopologyKind, TopologySpec, WeightMatrix,
};

/// Per-entry tolerance for calling a product "exactly" the average.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// The same matrix every iteration.
    Static,
    /// One-peer exponential graph with hop `2^(k mod tau)`.
    CyclicOnePeer,
    /// One-peer hops drawn without replacement in blocks of `tau`.
    PermutationOnePeer,
    /// One-peer hops drawn uniformly with replacement.
    UniformOnePeer,
    /// A fresh random perfect matching every iteration.
    BipartiteMatchSequence,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Static => "static",
            ScheduleKind::CyclicOnePeer => "cyclic",
            ScheduleKind::PermutationOnePeer => "permutation",
            ScheduleKind::UniformOnePeer => "uniform",
            ScheduleKind::BipartiteMatchSequence => "bipartite",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(ScheduleKind::Static),
            "cyclic" | "cyclic-one-peer" | "one-peer" => Ok(ScheduleKind::CyclicOnePeer),
            "permutation" | "perm" => Ok(ScheduleKind::PermutationOnePeer),
            "uniform" => Ok(ScheduleKind::UniformOnePeer),
            "bipartite" | "bipartite-match" | "match" => Ok(ScheduleKind::BipartiteMatchSequence),
            other => Err(Error::Parse(format!("unknown schedule `{other}`"))),
        }
    }
}

/// A rule giving the weight matrix of every iteration. The matrix at
/// iteration `k` is a pure function of `(kind, base, seed, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    kind: ScheduleKind,
    base: TopologySpec,
    seed: u64,
    fixed: Option<WeightMatrix>,
}

impl WeightSchedule {
    pub fn new(kind: ScheduleKind, base: TopologySpec, seed: u64) -> Result<Self> {
        base.validate()?;
        let fixed = match kind {
            ScheduleKind::Static => {
                let mut r = rng::stream(base.seed, rng::domain::TOPOLOGY, 0);
                Some(build_family(&base, 0, &mut r)?)
            }
            ScheduleKind::BipartiteMatchSequence if base.n % 2 != 0 => {
                return Err(Error::InvalidSize(format!(
                    "bipartite match schedule needs an even n, got {}",
                    base.n
                )))
            }
            _ => None,
        };
        Ok(WeightSchedule {
            kind,
            base,
            seed,
            fixed,
        })
    }

    /// Static schedule over a family realization.
    pub fn fixed(kind: TopologyKind, n: usize) -> Result<Self> {
        WeightSchedule::new(ScheduleKind::Static, TopologySpec::new(kind, n), 0)
    }

    pub fn cyclic_one_peer(n: usize) -> Result<Self> {
        WeightSchedule::new(
            ScheduleKind::CyclicOnePeer,
            TopologySpec::new(TopologyKind::OnePeerExponential, n),
            0,
        )
    }

    pub fn permutation_one_peer(n: usize, seed: u64) -> Result<Self> {
        WeightSchedule::new(
            ScheduleKind::PermutationOnePeer,
            TopologySpec::new(TopologyKind::OnePeerExponential, n),
            seed,
        )
    }

    pub fn uniform_one_peer(n: usize, seed: u64) -> Result<Self> {
        WeightSchedule::new(
            ScheduleKind::UniformOnePeer,
            TopologySpec::new(TopologyKind::OnePeerExponential, n),
            seed,
        )
    }

    pub fn bipartite_matches(n: usize, seed: u64) -> Result<Self> {
        WeightSchedule::new(
            ScheduleKind::BipartiteMatchSequence,
            TopologySpec::new(TopologyKind::BipartiteRandomMatch, n),
            seed,
        )
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn base(&self) -> &TopologySpec {
        &self.base
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.base.n
    }

    /// `ceil(log2 n)`, the period of the one-peer schedules.
    pub fn tau(&self) -> u32 {
        ceil_log2(self.base.n)
    }

    /// Short label such as `static:ring` or `cyclic`.
    pub fn label(&self) -> String {
        match self.kind {
            ScheduleKind::Static => format!("static:{}", self.base.kind),
            other => other.name().to_string(),
        }
    }

    /// Name used for output series: the family for static schedules,
    /// otherwise `one-peer-exp`, `one-peer-perm`, `one-peer-uniform` or
    /// `bipartite-match`.
    pub fn series_name(&self) -> String {
        match self.kind {
            ScheduleKind::Static => self.base.kind.name().to_string(),
            ScheduleKind::CyclicOnePeer => "one-peer-exp".into(),
            ScheduleKind::PermutationOnePeer => "one-peer-perm".into(),
            ScheduleKind::UniformOnePeer => "one-peer-uniform".into(),
            ScheduleKind::BipartiteMatchSequence => "bipartite-match".into(),
        }
    }

    /// Parses a schedule token: a schedule kind (`cyclic`, `permutation`,
    /// `uniform`, `bipartite`), a series name, `static:<family>`, or a bare
    /// family name. Time-varying families map to their natural schedule.
    pub fn from_token(token: &str, n: usize, seed: u64) -> Result<Self> {
        let t = token.trim().to_ascii_lowercase();
        if let Some(family) = t.strip_prefix("static:") {
            let kind: TopologyKind = family.parse()?;
            return WeightSchedule::new(ScheduleKind::Static, TopologySpec::new(kind, n).with_seed(seed), seed);
        }
        let kind = match t.as_str() {
            "one-peer-perm" => Some(ScheduleKind::PermutationOnePeer),
            "one-peer-uniform" => Some(ScheduleKind::UniformOnePeer),
            "static" => None,
            other => other.parse::<ScheduleKind>().ok(),
        };
        if let Some(kind) = kind {
            let family = match kind {
                ScheduleKind::BipartiteMatchSequence => TopologyKind::BipartiteRandomMatch,
                _ => TopologyKind::OnePeerExponential,
            };
            return WeightSchedule::new(kind, TopologySpec::new(family, n), seed);
        }
        match t.parse::<TopologyKind>() {
            Ok(TopologyKind::OnePeerExponential) => WeightSchedule::new(
                ScheduleKind::CyclicOnePeer,
                TopologySpec::new(TopologyKind::OnePeerExponential, n),
                seed,
            ),
            Ok(TopologyKind::BipartiteRandomMatch) => WeightSchedule::new(
                ScheduleKind::BipartiteMatchSequence,
                TopologySpec::new(TopologyKind::BipartiteRandomMatch, n),
                seed,
            ),
            Ok(kind) => WeightSchedule::new(ScheduleKind::Static, TopologySpec::new(kind, n).with_seed(seed), seed),
            Err(_) => Err(Error::Parse(format!("unknown schedule or family `{token}`"))),
        }
    }

    /// Hop exponent used at iteration `k` by the one-peer schedules.
    pub fn one_peer_exponent(&self, k: u64) -> Option<u32> {
        let tau = u64::from(self.tau());
        match self.kind {
            ScheduleKind::CyclicOnePeer => Some((k % tau) as u32),
            ScheduleKind::PermutationOnePeer => {
                let mut order: Vec<u32> = (0..tau as u32).collect();
                order.shuffle(&mut rng::stream(self.seed, rng::domain::PERMUTATION_BLOCK, k / tau));
                Some(order[(k % tau) as usize])
            }
            ScheduleKind::UniformOnePeer => Some(
                rng::stream(self.seed, rng::domain::UNIFORM_DRAW, k).random_range(0..tau as u32),
            ),
            _ => None,
        }
    }

    /// `W(k)`.
    pub fn next_matrix(&self, k: u64) -> WeightMatrix {
        if let Some(w) = &self.fixed {
            return w.clone();
        }
        if let Some(e) = self.one_peer_exponent(k) {
            return one_peer_with_exponent(self.base.n, e);
        }
        let mut r = rng::stream(self.seed, rng::domain::MATCHING, k);
        let spec = TopologySpec::new(TopologyKind::BipartiteRandomMatch, self.base.n);
        build_family(&spec, k, &mut r).expect("schedule validated at construction")
    }
}

fn max_abs_deviation_from_average(p: &Array2<f64>) -> f64 {
    let avg = 1.0 / p.nrows() as f64;
    p.iter().map(|v| (v - avg).abs()).fold(0.0, f64::max)
}

/// Max-abs entry of `W(start+len-1) ... W(start) - 11^T/n`.
pub fn product_exactness(schedule: &WeightSchedule, start: u64, len: u64) -> f64 {
    let mut p = Array2::eye(schedule.n());
    for k in start..start + len {
        p = schedule.next_matrix(k).entries().dot(&p);
    }
    max_abs_deviation_from_average(&p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidueSeries {
    /// `values[k]` is the residue after applying `W(0), ..., W(k)`.
    pub values: Vec<f64>,
    pub d: usize,
}

/// Subtracts the per-column mean from each row and returns the Frobenius norm.
pub fn consensus_residue(y: &Array2<f64>) -> f64 {
    let mean = y.mean_axis(Axis(0)).expect("nonempty");
    y.rows()
        .into_iter()
        .map(|row| row.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Residues `||(W(k)...W(0) - 11^T/n) x0||` for `k = 0..steps`, computed by
/// repeated mixing of `x0` (rows are nodes).
pub fn residue_decay(schedule: &WeightSchedule, x0: &Array2<f64>, steps: usize) -> Result<ResidueSeries> {
    if x0.nrows() != schedule.n() {
        return Err(Error::InvalidSize(format!(
            "x0 has {} rows but the schedule has {} nodes",
            x0.nrows(),
            schedule.n()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("x0 must be finite".into()));
    }
    let mut y = x0.clone();
    let mut values = Vec::with_capacity(steps);
    for k in 0..steps as u64 {
        y = schedule.next_matrix(k).entries().dot(&y);
        values.push(consensus_residue(&y));
    }
    Ok(ResidueSeries {
        values,
        d: x0.ncols(),
    })
}

/// Standard-normal `n x d` starting block for residue experiments.
pub fn random_initial_state(n: usize, d: usize, seed: u64, trial: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, rng::domain::INITIAL_STATE, trial);
    Array2::from_shape_simple_fn((n, d), || r.sample(rand_distr::StandardNormal))
}

/// Smallest `len <= cap` with `product_exactness(schedule, 0, len) <= tol`.
pub fn min_exact_steps(schedule: &WeightSchedule, tol: f64, cap: u64) -> Option<u64> {
    let mut p = Array2::eye(schedule.n());
    for len in 1..=cap {
        p = schedule.next_matrix(len - 1).entries().dot(&p);
        if max_abs_deviation_from_average(&p) <= tol {
            return Some(len);
        }
    }
    None
}

/// Default cap for [`min_exact_steps`]: ten periods.
pub fn default_exact_cap(n: usize) -> u64 {
    10 * u64::from(ceil_log2(n).max(1))
}

/// `entry[k] = ||prod_{i<k} (W(i) - 11^T/n)||_2` for `k = 0..=steps`
/// (entry 0 is the empty product, norm 1).
pub fn product_norm_series(schedule: &WeightSchedule, steps: usize) -> Result<Vec<f64>> {
    let n = schedule.n();
    let avg = 1.0 / n as f64;
    let mut p = Mat::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(1.0);
    for k in 0..steps as u64 {
        let w = schedule.next_matrix(k);
        let centered = Mat::from_fn(n, n, |i, j| w.get(i, j) - avg);
        p = &centered * &p;
        out.push(operator_norm(&p)?);
    }
    Ok(out)
}

/// [`product_norm_series`] along the cyclic one-peer schedule.
pub fn rho_max_series(n: usize, steps: usize) -> Result<Vec<f64>> {
    product_norm_series(&WeightSchedule::cyclic_one_peer(n)?, steps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoStepSearch {
    pub min_deviation: f64,
    /// `(alpha, beta)` attaining the minimum on the grid.
    pub argmin: (f64, f64),
    /// Discriminant of `a^2 - a + 1/3`, the condition exact averaging would
    /// impose with `alpha = beta = a`.
    #[serde(serialize_with = "ratio_as_string")]
    pub discriminant: Ratio<i64>,
}

fn ratio_as_string<S: serde::Serializer>(r: &Ratio<i64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

/// The two 3-node one-peer matrices, parameterized by their off-diagonal
/// weights: `W0` sends weight `alpha` one hop back, `W1` sends `beta` one hop
/// forward.
pub fn three_node_pair(alpha: f64, beta: f64) -> (Array2<f64>, Array2<f64>) {
    let w0 = ndarray::arr2(&[
        [1.0 - alpha, 0.0, alpha],
        [alpha, 1.0 - alpha, 0.0],
        [0.0, alpha, 1.0 - alpha],
    ]);
    let w1 = ndarray::arr2(&[
        [1.0 - beta, beta, 0.0],
        [0.0, 1.0 - beta, beta],
        [beta, 0.0, 1.0 - beta],
    ]);
    (w0, w1)
}

/// Max-abs deviation of `W1 W0` from `11^T/3`.
pub fn three_node_deviation(alpha: f64, beta: f64) -> f64 {
    let (w0, w1) = three_node_pair(alpha, beta);
    max_abs_deviation_from_average(&w1.dot(&w0))
}

/// Exhaustive search over `alpha, beta in {0, 1/s, ..., 1}` for the two-step
/// 3-node product closest to the exact average.
pub fn two_step_symmetric_search(n: usize, grid_steps: usize) -> Result<TwoStepSearch> {
    if n != 3 {
        return Err(Error::Unsupported(format!("two-step search is defined for n = 3 only, got {n}")));
    }
    if grid_steps < 10 {
        return Err(Error::Domain(format!("grid_steps must be at least 10, got {grid_steps}")));
    }
    let mut best = (f64::INFINITY, (0.0, 0.0));
    for a in 0..=grid_steps {
        let alpha = a as f64 / grid_steps as f64;
        for b in 0..=grid_steps {
            let beta = b as f64 / grid_steps as f64;
            let dev = three_node_deviation(alpha, beta);
            if dev < best.0 {
                best = (dev, (alpha, beta));
            }
        }
    }
    // b^2 - 4ac for a^2 - a + 1/3
    let (qa, qb, qc) = (Ratio::from_integer(1), Ratio::from_integer(-1), Ratio::new(1, 3));
    let discriminant = qb * qb - Ratio::from_integer(4) * qa * qc;
    Ok(TwoStepSearch {
        min_deviation: best.0,
        argmin: best.1,
        discriminant,
    })
}
