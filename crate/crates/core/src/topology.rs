//! Graph families and their doubly-stochastic weight matrices.
//!
//! Undirected families (ring, star, grid, torus, hypercube) use Metropolis
//! weights `w_ij = 1 / (1 + max(deg_i, deg_j))`. The exponential graphs are
//! directed circulants: node `i` sends to `i + 2^t (mod n)`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used to certify every generated matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

const HALF_RANDOM_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Ring,
    Star,
    Grid2D,
    Torus2D,
    HalfRandom,
    BipartiteRandomMatch,
    StaticExponential,
    OnePeerExponential,
    Hypercube,
    FullyConnected,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 10] = [
        TopologyKind::Ring,
        TopologyKind::Star,
        TopologyKind::Grid2D,
        TopologyKind::Torus2D,
        TopologyKind::HalfRandom,
        TopologyKind::BipartiteRandomMatch,
        TopologyKind::StaticExponential,
        TopologyKind::OnePeerExponential,
        TopologyKind::Hypercube,
        TopologyKind::FullyConnected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Star => "star",
            TopologyKind::Grid2D => "grid",
            TopologyKind::Torus2D => "torus",
            TopologyKind::HalfRandom => "half-random",
            TopologyKind::BipartiteRandomMatch => "bipartite-match",
            TopologyKind::StaticExponential => "static-exp",
            TopologyKind::OnePeerExponential => "one-peer-exp",
            TopologyKind::Hypercube => "hypercube",
            TopologyKind::FullyConnected => "fully-connected",
        }
    }

    /// Families whose realization depends on a random draw.
    pub fn is_random(self) -> bool {
        matches!(self, TopologyKind::HalfRandom | TopologyKind::BipartiteRandomMatch)
    }

    /// Families whose matrix changes with the iteration index.
    pub fn is_time_varying(self) -> bool {
        matches!(
            self,
            TopologyKind::BipartiteRandomMatch | TopologyKind::OnePeerExponential
        )
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().as_str() {
            "ring" => TopologyKind::Ring,
            "star" => TopologyKind::Star,
            "grid" | "grid2d" => TopologyKind::Grid2D,
            "torus" | "torus2d" => TopologyKind::Torus2D,
            "half-random" | "halfrandom" | "random" => TopologyKind::HalfRandom,
            "bipartite-match" | "bipartite" | "match" => TopologyKind::BipartiteRandomMatch,
            "static-exp" | "static-exponential" | "exp" => TopologyKind::StaticExponential,
            "one-peer-exp" | "one-peer" | "one-peer-exponential" => {
                TopologyKind::OnePeerExponential
            }
            "hypercube" => TopologyKind::Hypercube,
            "fully-connected" | "full" | "complete" => TopologyKind::FullyConnected,
            other => return Err(Error::Parse(format!("unknown topology family `{other}`"))),
        };
        Ok(kind)
    }
}

/// Declarative description of one graph instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
    /// Grid and torus shape; `rows * cols == n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<(usize, usize)>,
    #[serde(default)]
    pub seed: u64,
}

impl TopologySpec {
    /// Grid and torus specs get the most nearly square `rows x cols`
    /// factorization of `n` with `rows <= cols`.
    pub fn new(kind: TopologyKind, n: usize) -> Self {
        let shape = matches!(kind, TopologyKind::Grid2D | TopologyKind::Torus2D)
            .then(|| near_square_shape(n));
        TopologySpec {
            kind,
            n,
            shape,
            seed: 0,
        }
    }

    pub fn with_shape(mut self, rows: usize, cols: usize) -> Self {
        self.shape = Some((rows, cols));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidSize(format!(
                "{} needs n >= 2, got {}",
                self.kind, self.n
            )));
        }
        match self.kind {
            TopologyKind::Grid2D | TopologyKind::Torus2D => {
                let (rows, cols) = self.shape.unwrap_or_else(|| near_square_shape(self.n));
                if rows == 0 || cols == 0 || rows * cols != self.n {
                    return Err(Error::InvalidSize(format!(
                        "{} shape {rows}x{cols} does not cover n = {}",
                        self.kind, self.n
                    )));
                }
            }
            TopologyKind::Hypercube if !self.n.is_power_of_two() => {
                return Err(Error::InvalidSize(format!(
                    "hypercube needs a power-of-two n, got {}",
                    self.n
                )));
            }
            TopologyKind::BipartiteRandomMatch if self.n % 2 != 0 => {
                return Err(Error::InvalidSize(format!(
                    "bipartite random match needs an even n, got {}",
                    self.n
                )));
            }
            _ => {}
        }
        Ok(())
    }

    fn grid_shape(&self) -> (usize, usize) {
        self.shape.unwrap_or_else(|| near_square_shape(self.n))
    }
}

/// `rows x cols = n` with `rows` the largest divisor not exceeding `sqrt(n)`.
pub fn near_square_shape(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt() as usize;
    while rows > 1 && n % rows != 0 {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, n / rows)
}

/// `ceil(log2(n))` for `n >= 1`.
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Dense row-major mixing matrix. Entry `(i, j)` scales what node `i`
/// receives from node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: Array2<f64>,
    directed: bool,
    family: Option<TopologyKind>,
}

impl WeightMatrix {
    /// Wraps a square matrix. No stochasticity check is made here; see
    /// [`validate_doubly_stochastic`].
    pub fn from_entries(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::InvalidSize(format!(
                "weight matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let directed = entries != entries.t();
        Ok(WeightMatrix {
            entries,
            directed,
            family: None,
        })
    }

    /// The uniform averaging matrix `11^T / n`.
    pub fn averaging(n: usize) -> Self {
        WeightMatrix {
            entries: Array2::from_elem((n, n), 1.0 / n as f64),
            directed: false,
            family: Some(TopologyKind::FullyConnected),
        }
    }

    pub fn identity(n: usize) -> Self {
        WeightMatrix {
            entries: Array2::eye(n),
            directed: false,
            family: None,
        }
    }

    fn tagged(entries: Array2<f64>, family: TopologyKind) -> Self {
        let mut w = WeightMatrix::from_entries(entries).expect("builders produce square matrices");
        w.family = Some(family);
        w
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// The family that produced this matrix, when it came from a builder.
    pub fn family(&self) -> Option<TopologyKind> {
        self.family
    }

    /// Column indices of the nonzero entries of row `i`, self included.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.entries
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// Largest number of off-diagonal nonzeros in any row.
    pub fn max_out_degree(&self) -> usize {
        (0..self.n())
            .map(|i| self.neighbors(i).into_iter().filter(|&j| j != i).count())
            .max()
            .unwrap_or(0)
    }

    /// True when entry `(i, j)` depends only on `(j - i) mod n`.
    pub fn is_circulant(&self, tol: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| (self.entries[[i, j]] - self.entries[[0, (j + n - i) % n]]).abs() <= tol))
    }

    /// First row, which generates the matrix when it is circulant.
    pub fn generator(&self) -> Vec<f64> {
        self.entries.row(0).to_vec()
    }

    /// `self * other` (the left factor is applied last).
    pub fn compose(&self, other: &WeightMatrix) -> WeightMatrix {
        let entries = self.entries.dot(&other.entries);
        WeightMatrix::from_entries(entries).expect("product of square matrices is square")
    }

    /// Applies a simultaneous row/column relabeling: result `(i, j)` is
    /// `self(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> WeightMatrix {
        let n = self.n();
        let entries = Array2::from_shape_fn((n, n), |(i, j)| self.entries[[perm[i], perm[j]]]);
        let mut w = WeightMatrix::from_entries(entries).expect("square");
        w.family = self.family;
        w
    }

    /// Writes `n` on the first line, then `n` comma-separated rows with 17
    /// significant digits per value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.n())?;
        for row in self.entries.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))??;
        let n: usize = header
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad size header `{header}`: {e}")))?;
        let mut entries = Array2::zeros((n, n));
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing row {i}")))??;
            let values: Vec<&str> = line.trim().split(',').collect();
            if values.len() != n {
                return Err(Error::Parse(format!("row {i} has {} values, expected {n}", values.len())));
            }
            for (j, v) in values.into_iter().enumerate() {
                entries[[i, j]] = v
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {i} column {j}: {e}")))?;
            }
        }
        WeightMatrix::from_entries(entries)
    }
}

/// True iff all row and column sums are within `tol` of 1 and every entry
/// is at least `-tol`.
pub fn validate_doubly_stochastic(w: &WeightMatrix, tol: f64) -> bool {
    let e = w.entries();
    e.iter().all(|&v| v >= -tol)
        && e.rows().into_iter().all(|r| (r.sum() - 1.0).abs() <= tol)
        && e.columns().into_iter().all(|c| (c.sum() - 1.0).abs() <= tol)
}

/// Weights `1/(ceil(log2 n) + 1)` on the self loop and on every hop
/// `2^0, 2^1, ..., 2^floor(log2(n-1))`.
pub fn build_static_exponential(n: usize) -> Result<WeightMatrix> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("static exponential graph needs n >= 2, got {n}")));
    }
    let tau = ceil_log2(n);
    let weight = 1.0 / (tau as f64 + 1.0);
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        entries[[i, i]] = weight;
        for t in 0..tau {
            entries[[i, (i + (1usize << t)) % n]] = weight;
        }
    }
    Ok(WeightMatrix::tagged(entries, TopologyKind::StaticExponential))
}

/// One realization of the one-peer exponential graph: every node keeps half
/// of its value and sends half to the node `2^(k mod tau)` hops ahead.
pub fn build_one_peer_exponential(n: usize, k: u64) -> Result<WeightMatrix> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("one-peer exponential graph needs n >= 2, got {n}")));
    }
    let tau = u64::from(ceil_log2(n));
    Ok(one_peer_with_exponent(n, (k % tau) as u32))
}

/// One-peer matrix with hop `2^exponent`; `exponent < ceil(log2 n)`.
pub(crate) fn one_peer_with_exponent(n: usize, exponent: u32) -> WeightMatrix {
    let hop = 1usize << exponent;
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        entries[[i, i]] = 0.5;
        entries[[i, (i + hop) % n]] = 0.5;
    }
    WeightMatrix::tagged(entries, TopologyKind::OnePeerExponential)
}

/// Metropolis weights for a symmetric, loop-free, connected adjacency.
pub fn metropolis_weights(adjacency: &Array2<bool>) -> Result<WeightMatrix> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n || n == 0 {
        return Err(Error::InvalidAdjacency("adjacency must be square and non-empty".into()));
    }
    for i in 0..n {
        if adjacency[[i, i]] {
            return Err(Error::InvalidAdjacency(format!("self loop at node {i}")));
        }
        for j in (i + 1)..n {
            if adjacency[[i, j]] != adjacency[[j, i]] {
                return Err(Error::InvalidAdjacency(format!("edge ({i}, {j}) is not symmetric")));
            }
        }
    }
    if !is_connected(adjacency) {
        return Err(Error::Disconnected);
    }
    let degree: Vec<usize> = adjacency
        .rows()
        .into_iter()
        .map(|r| r.iter().filter(|&&a| a).count())
        .collect();
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency[[i, j]] {
                let w = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
                entries[[i, j]] = w;
                entries[[j, i]] = w;
            }
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| entries[[i, j]]).sum();
        entries[[i, i]] = 1.0 - off;
    }
    WeightMatrix::from_entries(entries)
}

pub fn is_connected(adjacency: &Array2<bool>) -> bool {
    let n = adjacency.nrows();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if adjacency[[i, j]] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn connect(adjacency: &mut Array2<bool>, i: usize, j: usize) {
    if i != j {
        adjacency[[i, j]] = true;
        adjacency[[j, i]] = true;
    }
}

pub fn ring_adjacency(n: usize) -> Array2<bool> {
    let mut a = Array2::from_elem((n, n), false);
    for i in 0..n {
        connect(&mut a, i, (i + 1) % n);
    }
    a
}

pub fn star_adjacency(n: usize) -> Array2<bool> {
    let mut a = Array2::from_elem((n, n), false);
    for i in 1..n {
        connect(&mut a, 0, i);
    }
    a
}

/// Row-major node numbering: node `r * cols + c`.
pub fn grid_adjacency(rows: usize, cols: usize, wrap: bool) -> Array2<bool> {
    let n = rows * cols;
    let mut a = Array2::from_elem((n, n), false);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                connect(&mut a, i, i + 1);
            } else if wrap {
                connect(&mut a, i, r * cols);
            }
            if r + 1 < rows {
                connect(&mut a, i, i + cols);
            } else if wrap {
                connect(&mut a, i, c);
            }
        }
    }
    a
}

pub fn hypercube_adjacency(n: usize) -> Array2<bool> {
    let mut a = Array2::from_elem((n, n), false);
    let dims = n.trailing_zeros();
    for i in 0..n {
        for b in 0..dims {
            connect(&mut a, i, i ^ (1 << b));
        }
    }
    a
}

/// Each undirected edge is present independently with probability 1/2.
/// Off-diagonal weights are `A / d_max`, the diagonal takes the remainder
/// `1 - deg_i / d_max` (zero at maximum-degree nodes).
fn half_random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<WeightMatrix> {
    for _ in 0..HALF_RANDOM_RETRIES {
        let mut a = Array2::from_elem((n, n), false);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(0.5) {
                    connect(&mut a, i, j);
                }
            }
        }
        if !is_connected(&a) {
            continue;
        }
        let degree: Vec<usize> = a.rows().into_iter().map(|r| r.iter().filter(|&&x| x).count()).collect();
        let d_max = *degree.iter().max().expect("n >= 2") as f64;
        let mut entries = a.mapv(|x| if x { 1.0 / d_max } else { 0.0 });
        for i in 0..n {
            entries[[i, i]] = 1.0 - degree[i] as f64 / d_max;
        }
        return Ok(WeightMatrix::tagged(entries, TopologyKind::HalfRandom));
    }
    Err(Error::Disconnected)
}

/// Pairs `perm[2j]` with `perm[2j + 1]`; paired entries and the diagonal are
/// all one half.
pub fn matching_from_permutation(perm: &[usize]) -> Result<WeightMatrix> {
    let n = perm.len();
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidSize(format!("matching needs an even n >= 2, got {n}")));
    }
    let mut entries = Array2::zeros((n, n));
    for pair in perm.chunks_exact(2) {
        let (a, b) = (pair[0], pair[1]);
        if a >= n || b >= n {
            return Err(Error::InvalidSize(format!("permutation entry out of range for n = {n}")));
        }
        entries[[a, a]] = 0.5;
        entries[[b, b]] = 0.5;
        entries[[a, b]] = 0.5;
        entries[[b, a]] = 0.5;
    }
    Ok(WeightMatrix::tagged(entries, TopologyKind::BipartiteRandomMatch))
}

fn bipartite_match<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<WeightMatrix> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    matching_from_permutation(&perm)
}

/// Builds the weight matrix of `spec` at iteration `k`. Random families draw
/// from `rng`; only the one-peer family looks at `k`.
pub fn build_family<R: Rng + ?Sized>(spec: &TopologySpec, k: u64, rng: &mut R) -> Result<WeightMatrix> {
    spec.validate()?;
    let n = spec.n;
    let tag = |w: WeightMatrix| WeightMatrix { family: Some(spec.kind), ..w };
    match spec.kind {
        TopologyKind::Ring => metropolis_weights(&ring_adjacency(n)).map(tag),
        TopologyKind::Star => metropolis_weights(&star_adjacency(n)).map(tag),
        TopologyKind::Grid2D => {
            let (rows, cols) = spec.grid_shape();
            metropolis_weights(&grid_adjacency(rows, cols, false)).map(tag)
        }
        TopologyKind::Torus2D => {
            let (rows, cols) = spec.grid_shape();
            metropolis_weights(&grid_adjacency(rows, cols, true)).map(tag)
        }
        TopologyKind::Hypercube => metropolis_weights(&hypercube_adjacency(n)).map(tag),
        TopologyKind::HalfRandom => half_random(n, rng),
        TopologyKind::BipartiteRandomMatch => bipartite_match(n, rng),
        TopologyKind::StaticExponential => build_static_exponential(n),
        TopologyKind::OnePeerExponential => build_one_peer_exponential(n, k),
        TopologyKind::FullyConnected => Ok(WeightMatrix::averaging(n)),
    }
}
