//! Synthetic distributed logistic regression.
//!
//! Node `i` holds `M` samples `(h, y)` with `h ~ N(0, 10 I_d)` and
//! `y = +1` with probability `sigmoid(h^T x_i)` for a unit-norm generating
//! vector `x_i`. The local loss is `f_i(x) = mean_m ln(1 + exp(-y h^T x))`.
//!
//! # Binary format
//!
//! ```text
//! magic      16 bytes  b"EXPOGRAPH-DATA01"
//! n, M, d    3 x u64 little-endian
//! hetero     u64 (0 = non-iid, 1 = iid independent, 2 = iid replicated)
//! seed       u64
//! has_star   u64 (0 or 1)
//! features   n*M*d f64 little-endian, row-major (node, sample, coordinate)
//! labels     n*M   f64 (+1.0 / -1.0)
//! generators n*d   f64
//! x_star     d     f64 (only when has_star = 1)
//! ```

use std::io::{Read, Write};

use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MAGIC: &[u8; 16] = b"EXPOGRAPH-DATA01";

/// Variance of every feature coordinate.
pub const FEATURE_VARIANCE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Heterogeneity {
    /// Each node has its own generating vector.
    NonIid,
    /// One shared generating vector, independent samples per node.
    IidIndependent,
    /// One shared generating vector and literally the same samples on every
    /// node.
    IidReplicated,
}

impl Heterogeneity {
    fn code(self) -> u64 {
        match self {
            Heterogeneity::NonIid => 0,
            Heterogeneity::IidIndependent => 1,
            Heterogeneity::IidReplicated => 2,
        }
    }

    fn from_code(c: u64) -> Result<Self> {
        match c {
            0 => Ok(Heterogeneity::NonIid),
            1 => Ok(Heterogeneity::IidIndependent),
            2 => Ok(Heterogeneity::IidReplicated),
            _ => Err(Error::Parse(format!("unknown heterogeneity code {c}"))),
        }
    }
}

impl std::str::FromStr for Heterogeneity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "non-iid" | "noniid" | "heterogeneous" => Ok(Heterogeneity::NonIid),
            "iid" | "iid-independent" | "homogeneous" => Ok(Heterogeneity::IidIndependent),
            "iid-replicated" | "replicated" => Ok(Heterogeneity::IidReplicated),
            other => Err(Error::Parse(format!("unknown heterogeneity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    /// `n * m * d`, indexed `(node * m + sample) * d + coord`.
    pub features: Vec<f64>,
    /// `n * m`, each exactly `+1.0` or `-1.0`.
    pub labels: Vec<f64>,
    /// Per-node generating vectors, `n * d`.
    pub generators: Vec<f64>,
    pub heterogeneity: Heterogeneity,
    pub seed: u64,
    /// Minimizer of the global loss, once [`solve_reference`] has run.
    pub x_star: Option<Vec<f64>>,
}

fn unit_normal_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate_logistic(n: usize, m: usize, d: usize, heterogeneity: Heterogeneity, seed: u64) -> Result<NodeDataset> {
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::InvalidSize(format!("dataset dims must be positive, got n={n} M={m} d={d}")));
    }
    let mut r = rng::stream(seed, rng::domain::DATASET, 0);
    let scale = FEATURE_VARIANCE.sqrt();
    let generators: Vec<f64> = match heterogeneity {
        Heterogeneity::NonIid => (0..n).flat_map(|_| unit_normal_vector(d, &mut r)).collect(),
        _ => unit_normal_vector(d, &mut r).repeat(n),
    };
    let mut features = Vec::with_capacity(n * m * d);
    let mut labels = Vec::with_capacity(n * m);
    for i in 0..n {
        if heterogeneity == Heterogeneity::IidReplicated && i > 0 {
            features.extend_from_within(0..m * d);
            labels.extend_from_within(0..m);
            continue;
        }
        let g = &generators[i * d..(i + 1) * d];
        for _ in 0..m {
            let h: Vec<f64> = (0..d)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r))
                .collect();
            let u: f64 = r.random();
            labels.push(if u <= sigmoid(dot(&h, g)) { 1.0 } else { -1.0 });
            features.extend(h);
        }
    }
    Ok(NodeDataset {
        n,
        m,
        d,
        features,
        labels,
        generators,
        heterogeneity,
        seed,
        x_star: None,
    })
}

impl NodeDataset {
    pub fn sample(&self, node: usize, idx: usize) -> (&[f64], f64) {
        let row = node * self.m + idx;
        (&self.features[row * self.d..(row + 1) * self.d], self.labels[row])
    }

    pub fn generator(&self, node: usize) -> &[f64] {
        &self.generators[node * self.d..(node + 1) * self.d]
    }

    /// Solves for `x_star` and stores it.
    pub fn with_reference(mut self, tol: f64) -> Result<Self> {
        self.x_star = Some(solve_reference(&self, tol)?);
        Ok(self)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        let header = [
            self.n as u64,
            self.m as u64,
            self.d as u64,
            self.heterogeneity.code(),
            self.seed,
            u64::from(self.x_star.is_some()),
        ];
        for v in header {
            out.write_all(&v.to_le_bytes())?;
        }
        let floats = self
            .features
            .iter()
            .chain(&self.labels)
            .chain(&self.generators)
            .chain(self.x_star.iter().flatten());
        for v in floats {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 16];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not an expograph dataset (bad magic)".into()));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n = next_u64(&mut input)? as usize;
        let m = next_u64(&mut input)? as usize;
        let d = next_u64(&mut input)? as usize;
        let heterogeneity = Heterogeneity::from_code(next_u64(&mut input)?)?;
        let seed = next_u64(&mut input)?;
        let has_star = next_u64(&mut input)? == 1;
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            input.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let features = read_f64s(n * m * d)?;
        let labels = read_f64s(n * m)?;
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Parse("labels must be +1 or -1".into()));
        }
        let generators = read_f64s(n * d)?;
        let x_star = if has_star { Some(read_f64s(d)?) } else { None };
        Ok(NodeDataset {
            n,
            m,
            d,
            features,
            labels,
            generators,
            heterogeneity,
            seed,
            x_star,
        })
    }
}

/// `f_i(x)`.
pub fn local_loss(ds: &NodeDataset, node: usize, x: &[f64]) -> f64 {
    (0..ds.m)
        .map(|s| {
            let (h, y) = ds.sample(node, s);
            softplus(-y * dot(h, x))
        })
        .sum::<f64>()
        / ds.m as f64
}

/// `f(x) = (1/n) sum_i f_i(x)`.
pub fn global_loss(ds: &NodeDataset, x: &[f64]) -> f64 {
    (0..ds.n).map(|i| local_loss(ds, i, x)).sum::<f64>() / ds.n as f64
}

fn accumulate_sample_gradient(ds: &NodeDataset, node: usize, idx: usize, x: &[f64], acc: &mut [f64]) {
    let (h, y) = ds.sample(node, idx);
    // d/dx ln(1 + exp(-y h^T x)) = -y h sigmoid(-y h^T x)
    let coef = -y * sigmoid(-y * dot(h, x));
    for (a, hv) in acc.iter_mut().zip(h) {
        *a += coef * hv;
    }
}

/// Average of per-sample gradients over `indices`.
pub fn minibatch_gradient(ds: &NodeDataset, node: usize, x: &[f64], indices: &[usize]) -> Vec<f64> {
    let mut g = vec![0.0; ds.d];
    for &idx in indices {
        accumulate_sample_gradient(ds, node, idx, x, &mut g);
    }
    let scale = 1.0 / indices.len() as f64;
    g.iter_mut().for_each(|v| *v *= scale);
    g
}

/// `grad f_i(x)`.
pub fn local_full_gradient(ds: &NodeDataset, node: usize, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; ds.d];
    for idx in 0..ds.m {
        accumulate_sample_gradient(ds, node, idx, x, &mut g);
    }
    let scale = 1.0 / ds.m as f64;
    g.iter_mut().for_each(|v| *v *= scale);
    g
}

/// Unbiased estimate of `grad f_i(x)` from `batch_size` indices drawn
/// uniformly with replacement.
pub fn stochastic_gradient<R: Rng + ?Sized>(
    ds: &NodeDataset,
    node: usize,
    x: &[f64],
    batch_size: usize,
    rng: &mut R,
) -> Vec<f64> {
    let indices: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..ds.m)).collect();
    minibatch_gradient(ds, node, x, &indices)
}

/// `grad f(x)`.
pub fn global_gradient(ds: &NodeDataset, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; ds.d];
    for i in 0..ds.n {
        for (a, b) in g.iter_mut().zip(local_full_gradient(ds, i, x)) {
            *a += b;
        }
    }
    g.iter_mut().for_each(|v| *v /= ds.n as f64);
    g
}

fn global_hessian(ds: &NodeDataset, x: &[f64]) -> Mat<f64> {
    let d = ds.d;
    let mut hess = Mat::<f64>::zeros(d, d);
    for node in 0..ds.n {
        for s in 0..ds.m {
            let (h, _) = ds.sample(node, s);
            let p = sigmoid(dot(h, x));
            let w = p * (1.0 - p);
            for a in 0..d {
                for b in 0..=a {
                    hess[(a, b)] += w * h[a] * h[b];
                }
            }
        }
    }
    let total = (ds.n * ds.m) as f64;
    for a in 0..d {
        for b in 0..=a {
            let v = hess[(a, b)] / total;
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    hess
}

/// `(1/n) sum_i ||grad f_i(x) - grad f(x)||^2`.
pub fn heterogeneity_at(ds: &NodeDataset, x: &[f64]) -> f64 {
    let global = global_gradient(ds, x);
    (0..ds.n)
        .map(|i| {
            local_full_gradient(ds, i, x)
                .iter()
                .zip(&global)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / ds.n as f64
}

pub const REFERENCE_TOL: f64 = 1e-10;
pub const REFERENCE_MAX_ITERS: usize = 1_000_000;

pub fn solve_reference(ds: &NodeDataset, tol: f64) -> Result<Vec<f64>> {
    solve_reference_from(ds, &vec![0.0; ds.d], tol, REFERENCE_MAX_ITERS)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimizes the global loss from `x0` by damped Newton steps with an
/// Armijo backtracking line search, stopping once `||grad f|| <= tol`.
///
/// Near the optimum loss decreases fall below rounding, so a trial step is
/// also accepted when the loss is unchanged to within a few ulps and the
/// gradient norm shrinks.
pub fn solve_reference_from(ds: &NodeDataset, x0: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let d = ds.d;
    let mut x = x0.to_vec();
    let mut f = global_loss(ds, &x);
    let mut g = global_gradient(ds, &x);
    let mut gnorm = norm(&g);
    for _ in 0..max_iters {
        if gnorm <= tol {
            return Ok(x);
        }
        let hess = global_hessian(ds, &x);
        let rhs = Mat::from_fn(d, 1, |i, _| -g[i]);
        let newton = hess.llt(faer::Side::Lower).ok().map(|llt| llt.solve(&rhs));
        let mut dir: Vec<f64> = match newton {
            Some(sol) if (0..d).all(|i| sol[(i, 0)].is_finite()) => (0..d).map(|i| sol[(i, 0)]).collect(),
            _ => g.iter().map(|v| -v).collect(),
        };
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-20 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let f_trial = global_loss(ds, &trial);
            let armijo = f_trial <= f + 1e-4 * t * slope;
            let flat = f_trial <= f + 8.0 * f64::EPSILON * f.abs().max(1.0);
            if armijo || flat {
                let g_trial = global_gradient(ds, &trial);
                let gn_trial = norm(&g_trial);
                if armijo || gn_trial < gnorm {
                    x = trial;
                    f = f_trial;
                    g = g_trial;
                    gnorm = gn_trial;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if gnorm <= tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: max_iters,
            grad_norm: gnorm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> NodeDataset {
        generate_logistic(4, 200, 5, Heterogeneity::NonIid, 11).unwrap()
    }

    #[test]
    fn shapes_and_labels() {
        let ds = generate_logistic(3, 50, 10, Heterogeneity::NonIid, 1).unwrap();
        assert_eq!(ds.features.len(), 3 * 50 * 10);
        assert_eq!(ds.labels.len(), 150);
        assert!(ds.labels.iter().all(|&y| y == 1.0 || y == -1.0));
        for i in 0..3 {
            assert!((norm(ds.generator(i)) - 1.0).abs() < 1e-12);
        }
        assert_ne!(ds.generator(0), ds.generator(1));
        let iid = generate_logistic(3, 50, 10, Heterogeneity::IidIndependent, 1).unwrap();
        assert_eq!(iid.generator(0), iid.generator(2));
        let rep = generate_logistic(3, 50, 10, Heterogeneity::IidReplicated, 1).unwrap();
        assert_eq!(rep.sample(0, 7), rep.sample(2, 7));
        assert!(generate_logistic(0, 1, 1, Heterogeneity::NonIid, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(toy(), toy());
        assert_ne!(toy(), generate_logistic(4, 200, 5, Heterogeneity::NonIid, 12).unwrap());
    }

    #[test]
    fn full_scale_shapes() {
        let ds = generate_logistic(64, 14000, 10, Heterogeneity::NonIid, 0).unwrap();
        assert_eq!(ds.features.len(), 64 * 14000 * 10);
    }

    #[test]
    fn gradient_at_origin_and_single_sample() {
        let ds = toy();
        let g = local_full_gradient(&ds, 1, &[0.0; 5]);
        let mut expect = [0.0; 5];
        for s in 0..ds.m {
            let (h, y) = ds.sample(1, s);
            for c in 0..5 {
                expect[c] += -y * h[c] / 2.0 / ds.m as f64;
            }
        }
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }

        let single = NodeDataset {
            n: 1,
            m: 1,
            d: 3,
            features: vec![1.0, 0.0, 0.0],
            labels: vec![1.0],
            generators: vec![1.0, 0.0, 0.0],
            heterogeneity: Heterogeneity::NonIid,
            seed: 0,
            x_star: None,
        };
        assert_eq!(local_full_gradient(&single, 0, &[0.0; 3]), vec![-0.5, 0.0, 0.0]);
    }

    #[test]
    fn full_batch_enumeration_matches_full_gradient() {
        let ds = toy();
        let x = [0.3, -0.2, 0.1, 0.5, -0.7];
        let all: Vec<usize> = (0..ds.m).collect();
        assert_eq!(minibatch_gradient(&ds, 2, &x, &all), local_full_gradient(&ds, 2, &x));
    }

    #[test]
    fn stochastic_gradient_is_unbiased() {
        let ds = generate_logistic(1, 100, 3, Heterogeneity::NonIid, 4).unwrap();
        let x = [0.2, -0.4, 0.3];
        let full = local_full_gradient(&ds, 0, &x);
        let draws = 100_000;
        let mut r = rng::stream(1, rng::domain::TRIAL, 0);
        let samples: Vec<Vec<f64>> = (0..draws).map(|_| stochastic_gradient(&ds, 0, &x, 1, &mut r)).collect();
        for c in 0..3 {
            let mean = samples.iter().map(|s| s[c]).sum::<f64>() / draws as f64;
            let var = samples.iter().map(|s| (s[c] - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let se = (var / draws as f64).sqrt();
            assert!((mean - full[c]).abs() <= 3.0 * se, "coord {c}: {mean} vs {}", full[c]);
        }
        let a = stochastic_gradient(&ds, 0, &x, 8, &mut rng::stream(5, 0, 0));
        let b = stochastic_gradient(&ds, 0, &x, 8, &mut rng::stream(5, 0, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn reference_solution_and_restart_agreement() {
        let ds = toy();
        let a = solve_reference(&ds, REFERENCE_TOL).unwrap();
        assert!(norm(&global_gradient(&ds, &a)) <= REFERENCE_TOL);
        let b = solve_reference_from(&ds, &[1.0, -2.0, 0.5, 3.0, -1.0], REFERENCE_TOL, REFERENCE_MAX_ITERS).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-6);
        }
        assert!(solve_reference(&ds, 0.0).is_err());
    }

    #[test]
    fn separable_toy_hits_iteration_cap() {
        let ds = NodeDataset {
            n: 1,
            m: 2,
            d: 2,
            features: vec![1.0, 0.2, -1.0, 0.1],
            labels: vec![1.0, -1.0],
            generators: vec![1.0, 0.0],
            heterogeneity: Heterogeneity::NonIid,
            seed: 0,
            x_star: None,
        };
        match solve_reference_from(&ds, &[0.0, 0.0], REFERENCE_TOL, 3) {
            Err(Error::NoConvergence { grad_norm, .. }) => assert!(grad_norm > REFERENCE_TOL),
            other => panic!("expected a convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn heterogeneity_shrinks_for_iid_and_persists_for_non_iid() {
        let non = generate_logistic(4, 2000, 5, Heterogeneity::NonIid, 3).unwrap().with_reference(1e-10).unwrap();
        assert!(heterogeneity_at(&non, non.x_star.as_ref().unwrap()) > 1e-3);
        let mut last = f64::INFINITY;
        for m in [100, 1000, 10_000] {
            let ds = generate_logistic(4, m, 5, Heterogeneity::IidIndependent, 3).unwrap().with_reference(1e-10).unwrap();
            let h = heterogeneity_at(&ds, ds.x_star.as_ref().unwrap());
            assert!(h < last, "M={m}: {h} !< {last}");
            last = h;
        }
        let rep = generate_logistic(4, 300, 5, Heterogeneity::IidReplicated, 3).unwrap();
        assert!(heterogeneity_at(&rep, &[0.1; 5]) < 1e-28);
    }

    #[test]
    fn loss_is_finite_for_huge_iterates() {
        let ds = toy();
        let x = [1e6, -1e6, 1e6, 1e6, -1e6];
        assert!(global_loss(&ds, &x).is_finite());
        assert!(global_gradient(&ds, &x).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn binary_round_trip_and_bad_magic() {
        let ds = toy().with_reference(1e-10).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..16], MAGIC);
        assert_eq!(buf.len(), 16 + 6 * 8 + 8 * (4 * 200 * 5 + 4 * 200 + 4 * 5 + 5));
        assert_eq!(NodeDataset::read_from(buf.as_slice()).unwrap(), ds);
        buf[0] = b'X';
        assert!(NodeDataset::read_from(buf.as_slice()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn gradient_matches_central_differences(node in 0usize..4, x in proptest::collection::vec(-1.0f64..1.0, 5), dir in proptest::collection::vec(-1.0f64..1.0, 5)) {
            let ds = toy();
            let g = local_full_gradient(&ds, node, &x);
            let step = 1e-5;
            let plus: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let minus: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a - step * b).collect();
            let fd = (local_loss(&ds, node, &plus) - local_loss(&ds, node, &minus)) / (2.0 * step);
            let analytic = dot(&g, &dir);
            let scale = analytic.abs().max(norm(&g) * norm(&dir)).max(1e-8);
            prop_assert!((fd - analytic).abs() / scale <= 1e-5, "fd {} analytic {}", fd, analytic);
        }
    }
}
