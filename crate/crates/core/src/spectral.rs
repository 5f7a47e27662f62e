//! Spectra of mixing matrices and the bound formulas built on them.
//!
//! `rho` is the second-largest eigenvalue magnitude: the eigenvalue closest
//! to 1 is removed and the largest remaining modulus is reported. It is not
//! the spectral radius.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use faer::{Mat, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::topology::{build_family, ceil_log2, TopologyKind, TopologySpec, WeightMatrix};

/// An eigenvalue this close to `1 + 0i` counts as the unit eigenvalue.
pub const UNIT_EIGENVALUE_TOL: f64 = 1e-9;

/// Entry tolerance for routing a matrix through the DFT closed form.
pub const CIRCULANT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub n: usize,
    pub eigenvalues: Vec<Complex64>,
    pub rho: f64,
    pub gap: f64,
    /// `||W - 11^T/n||_2`.
    pub deviation_norm: f64,
    /// Closed-form gap for families that have one.
    pub predicted_gap: Option<f64>,
}

/// Eigenvalues of the circulant matrix whose first row is `c`:
/// `lambda_i = sum_m c_m * exp(2 pi j m i / n)`, in index order.
pub fn circulant_eigenvalues(c: &[f64]) -> Vec<Complex64> {
    let n = c.len();
    (0..n)
        .map(|i| {
            c.iter()
                .enumerate()
                .filter(|(_, &cm)| cm != 0.0)
                .map(|(m, &cm)| {
                    // reduce m*i mod n first so the angle stays in [0, 2pi)
                    let phase = 2.0 * PI * ((m * i) % n) as f64 / n as f64;
                    Complex64::from_polar(cm, phase)
                })
                .sum()
        })
        .collect()
}

fn to_faer(w: &WeightMatrix) -> Mat<f64> {
    let e = w.entries();
    Mat::from_fn(e.nrows(), e.ncols(), |i, j| e[[i, j]])
}

/// Eigenvalues from the general (non-symmetric) dense solver, whatever the
/// structure of `w`.
pub fn dense_eigenvalues(w: &WeightMatrix) -> Result<Vec<Complex64>> {
    to_faer(w)
        .eigenvalues()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))
}

fn symmetric_eigenvalues(m: &Mat<f64>) -> Result<Vec<f64>> {
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))
}

/// Eigenvalues of `w`, through the cheapest exact route: the DFT for
/// circulants, the symmetric solver for symmetric matrices, and the general
/// solver otherwise.
pub fn eigenvalues(w: &WeightMatrix) -> Result<Vec<Complex64>> {
    if w.is_circulant(CIRCULANT_TOL) {
        Ok(circulant_eigenvalues(&w.generator()))
    } else if !w.is_directed() {
        Ok(symmetric_eigenvalues(&to_faer(w))?
            .into_iter()
            .map(|v| Complex64::new(v, 0.0))
            .collect())
    } else {
        dense_eigenvalues(w)
    }
}

/// Second-largest eigenvalue magnitude, after removing exactly one
/// eigenvalue at 1.
pub fn second_largest_magnitude(eigenvalues: &[Complex64]) -> Result<f64> {
    let one = Complex64::new(1.0, 0.0);
    let unit = eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - one).norm().total_cmp(&(b.1 - one).norm()))
        .map(|(i, _)| i)
        .ok_or(Error::NoUnitEigenvalue)?;
    if (eigenvalues[unit] - one).norm() > UNIT_EIGENVALUE_TOL {
        return Err(Error::NoUnitEigenvalue);
    }
    let near_one = eigenvalues
        .iter()
        .filter(|l| (*l - one).norm() <= UNIT_EIGENVALUE_TOL)
        .count();
    if near_one > 1 {
        return Err(Error::DisconnectedSpectrum(near_one));
    }
    Ok(eigenvalues
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != unit)
        .map(|(_, l)| l.norm())
        .fold(0.0, f64::max))
}

/// `||W - 11^T/n||_2`, as the square root of the top eigenvalue of
/// `(W - J)^T (W - J)`.
pub fn deviation_norm(w: &WeightMatrix) -> Result<f64> {
    let n = w.n();
    let avg = 1.0 / n as f64;
    let centered = Mat::from_fn(n, n, |i, j| w.get(i, j) - avg);
    operator_norm(&centered)
}

/// Spectral norm of a square matrix via the symmetric eigenproblem on
/// `M^T M`.
pub(crate) fn operator_norm(m: &Mat<f64>) -> Result<f64> {
    let gram = m.transpose() * m;
    let top = symmetric_eigenvalues(&gram)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(top.max(0.0).sqrt())
}

/// Closed-form gap: `2 / (1 + ceil(log2 n))` for the static exponential
/// graph (exact for even n, a strict lower bound for odd n) and `2 / (1 + log2 n)`
/// for the hypercube.
pub fn predicted_gap(kind: TopologyKind, n: usize) -> Option<f64> {
    match kind {
        TopologyKind::StaticExponential | TopologyKind::Hypercube => {
            Some(2.0 / (1.0 + f64::from(ceil_log2(n))))
        }
        TopologyKind::FullyConnected => Some(1.0),
        _ => None,
    }
}

pub fn full_spectrum(w: &WeightMatrix) -> Result<SpectrumReport> {
    let eigenvalues = eigenvalues(w)?;
    let rho = second_largest_magnitude(&eigenvalues)?;
    Ok(SpectrumReport {
        n: w.n(),
        rho,
        gap: 1.0 - rho,
        deviation_norm: deviation_norm(w)?,
        predicted_gap: w.family().and_then(|k| predicted_gap(k, w.n())),
        eigenvalues,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Homogeneous,
    Heterogeneous,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "homogeneous" | "homo" | "iid" => Ok(Regime::Homogeneous),
            "heterogeneous" | "hetero" | "non-iid" => Ok(Regime::Heterogeneous),
            other => Err(Error::Parse(format!("unknown regime `{other}`"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Homogeneous => "homogeneous",
            Regime::Heterogeneous => "heterogeneous",
        })
    }
}

/// Transient-iteration order `n^3 / gap^2` (homogeneous data) or
/// `n^3 / gap^4` (heterogeneous data), with every hidden constant set to 1.
/// Only meaningful for comparisons between topologies.
pub fn transient_bound(n: usize, gap: f64, regime: Regime) -> Result<f64> {
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(Error::Domain(format!("spectral gap must lie in (0, 1], got {gap}")));
    }
    let n3 = (n as f64).powi(3);
    Ok(match regime {
        Regime::Homogeneous => n3 / gap.powi(2),
        Regime::Heterogeneous => n3 / gap.powi(4),
    })
}

/// Inputs to the three-term rate bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub n: usize,
    pub iterations: u64,
    pub beta: f64,
    pub sigma2: f64,
    pub b2: f64,
    pub rho: f64,
    pub tau: u32,
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Domain("rate bound needs at least one iteration".into()));
        }
        if !(0.0..1.0).contains(&self.beta) || !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Domain("beta and rho must lie in [0, 1)".into()));
        }
        if self.sigma2 < 0.0 || self.b2 < 0.0 {
            return Err(Error::Domain("variance bounds must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateForm {
    /// Static topology, in terms of `1 - rho`.
    StaticGap,
    /// Static exponential graph, in terms of `log2 n` and `1 - beta`.
    StaticExponential,
    /// One-peer exponential graph, in terms of `tau` and `1 - beta`.
    OnePeer,
}

/// The three terms of the selected rate bound (noise, consensus-noise,
/// heterogeneity), constants set to 1.
pub fn rate_bound_terms(p: &RateParams, form: RateForm) -> Result<[f64; 3]> {
    p.validate()?;
    let n = p.n as f64;
    let t = p.iterations as f64;
    let one_minus_beta = 1.0 - p.beta;
    Ok(match form {
        RateForm::StaticGap => {
            let gap = 1.0 - p.rho;
            [
                p.sigma2 / (n * t).sqrt(),
                n * p.sigma2 / (t * gap),
                n * p.b2 / (t * gap * gap),
            ]
        }
        RateForm::StaticExponential | RateForm::OnePeer => {
            let log_term = match form {
                RateForm::StaticExponential => n.log2(),
                _ => f64::from(p.tau),
            };
            [
                p.sigma2 / (one_minus_beta * n * t).sqrt(),
                n * log_term * one_minus_beta * p.sigma2 / t,
                n * one_minus_beta * p.b2 * log_term * log_term / t,
            ]
        }
    })
}

pub fn rate_bound(p: &RateParams, form: RateForm) -> Result<f64> {
    Ok(rate_bound_terms(p, form)?.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub family: TopologyKind,
    pub n: usize,
    pub per_iter_degree: usize,
    /// Measured gap; for the one-peer family this is the static exponential
    /// gap it shares its bound with, and it is absent for random matchings.
    pub gap: Option<f64>,
    pub transient_bound: Option<f64>,
}

/// Families listed in the communication/transient comparison.
pub const COMPARISON_FAMILIES: [TopologyKind; 8] = [
    TopologyKind::Ring,
    TopologyKind::Star,
    TopologyKind::Grid2D,
    TopologyKind::Torus2D,
    TopologyKind::HalfRandom,
    TopologyKind::BipartiteRandomMatch,
    TopologyKind::StaticExponential,
    TopologyKind::OnePeerExponential,
];

pub fn comparison_row(kind: TopologyKind, n: usize, regime: Regime, seed: u64) -> Result<ComparisonRow> {
    if n < 4 {
        return Err(Error::InvalidSize(format!("comparison table needs n >= 4, got {n}")));
    }
    let spec = TopologySpec::new(kind, n).with_seed(seed);
    let mut r = rng::stream(seed, rng::domain::TOPOLOGY, 0);
    let w = build_family(&spec, 0, &mut r)?;
    let per_iter_degree = w.max_out_degree();
    let gap = match kind {
        TopologyKind::BipartiteRandomMatch => None,
        TopologyKind::OnePeerExponential => {
            Some(full_spectrum(&crate::topology::build_static_exponential(n)?)?.gap)
        }
        _ => Some(full_spectrum(&w)?.gap),
    };
    let transient_bound = gap.map(|g| transient_bound(n, g, regime)).transpose()?;
    Ok(ComparisonRow {
        family: kind,
        n,
        per_iter_degree,
        gap,
        transient_bound,
    })
}

/// Rows ordered by `n`, then by family in [`COMPARISON_FAMILIES`] order.
pub fn comparison_table(ns: &[usize], regime: Regime, seed: u64) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(ns.len() * COMPARISON_FAMILIES.len());
    for &n in ns {
        for kind in COMPARISON_FAMILIES {
            rows.push(comparison_row(kind, n, regime, seed)?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_one_peer_exponential, build_static_exponential, metropolis_weights, ring_adjacency};
    use ndarray::Array2;

    fn kind_spectrum(kind: TopologyKind, n: usize) -> SpectrumReport {
        let mut r = rng::stream(0, rng::domain::TOPOLOGY, 0);
        full_spectrum(&build_family(&TopologySpec::new(kind, n), 0, &mut r).unwrap()).unwrap()
    }

    /// Sorted moduli, for comparing spectra independent of ordering.
    fn moduli(v: &[Complex64]) -> Vec<f64> {
        let mut m: Vec<f64> = v.iter().map(|l| l.norm()).collect();
        m.sort_by(f64::total_cmp);
        m
    }

    #[test]
    fn circulant_examples() {
        let e = circulant_eigenvalues(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(e.iter().all(|l| (l - Complex64::new(1.0, 0.0)).norm() < 1e-15));

        let third = 1.0 / 3.0;
        let e = circulant_eigenvalues(&[third, third, third, 0.0]);
        let expect = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, third),
            Complex64::new(third, 0.0),
            Complex64::new(0.0, -third),
        ];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).norm() < 1e-15, "{a} vs {b}");
        }
        let w = build_static_exponential(4).unwrap();
        let dense = dense_eigenvalues(&w).unwrap();
        for (a, b) in moduli(&dense).iter().zip(moduli(&e)) {
            assert!((a - b).abs() < 1e-12);
        }

        let e = circulant_eigenvalues(&[0.2; 5]);
        assert!((e[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(e[1..].iter().all(|l| l.norm() < 1e-15));
    }

    #[test]
    fn full_spectrum_examples() {
        let s = full_spectrum(&build_static_exponential(8).unwrap()).unwrap();
        assert!((s.gap - 0.5).abs() < 1e-9);
        assert_eq!(s.predicted_gap, Some(0.5));

        let s = full_spectrum(&WeightMatrix::averaging(6)).unwrap();
        assert!(s.rho.abs() < 1e-12);
        assert!((s.gap - 1.0).abs() < 1e-12);
        assert!(s.deviation_norm.abs() < 1e-7);

        // odd n never attains the closed form; the bound rho <= (tau-1)/(tau+1)
        // is strict, so the gap lies above 2/(1+tau). For n = 5 every
        // nontrivial eigenvalue is -omega^(3i)/4.
        let s = full_spectrum(&build_static_exponential(5).unwrap()).unwrap();
        assert!(s.gap > 0.5 + 1e-9, "gap {}", s.gap);
        assert!((s.gap - 0.75).abs() < 1e-12);
        // dense eigen oracle for the odd case
        let dense = dense_eigenvalues(&build_static_exponential(5).unwrap()).unwrap();
        assert!((second_largest_magnitude(&dense).unwrap() - s.rho).abs() < 1e-12);
    }

    #[test]
    fn disconnected_matrix_is_rejected() {
        let mut e = Array2::zeros((4, 4));
        for i in 0..4 {
            e[[i, i ^ 1]] = 0.5;
            e[[i, i]] = 0.5;
        }
        let w = WeightMatrix::from_entries(e).unwrap();
        assert!(matches!(full_spectrum(&w), Err(Error::DisconnectedSpectrum(2))));
        assert!(matches!(full_spectrum(&WeightMatrix::identity(3)), Err(Error::DisconnectedSpectrum(3))));
    }

    #[test]
    fn symmetric_dense_and_general_paths_agree() {
        let w = metropolis_weights(&ring_adjacency(9)).unwrap();
        let sym = eigenvalues(&w).unwrap();
        let gen = dense_eigenvalues(&w).unwrap();
        for (a, b) in moduli(&sym).iter().zip(moduli(&gen)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn hypercube_gap_matches_closed_form() {
        for tau in 2..=6u32 {
            let n = 1usize << tau;
            let s = kind_spectrum(TopologyKind::Hypercube, n);
            assert!((s.gap - 2.0 / (1.0 + f64::from(tau))).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn one_peer_realization_eigenvalues_match_dense() {
        for n in [3usize, 6, 12, 16, 31] {
            let w = build_one_peer_exponential(n, 1).unwrap();
            let fast = moduli(&circulant_eigenvalues(&w.generator()));
            let slow = moduli(&dense_eigenvalues(&w).unwrap());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rho_is_invariant_under_relabeling() {
        let w = build_static_exponential(10).unwrap();
        let perm = [3, 7, 0, 9, 1, 5, 2, 8, 6, 4];
        let a = full_spectrum(&w).unwrap().rho;
        let b = full_spectrum(&w.permuted(&perm)).unwrap().rho;
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn gap_ordering_ring_torus_exp() {
        for n in [16usize, 64, 256] {
            let ring = kind_spectrum(TopologyKind::Ring, n).gap;
            let torus = kind_spectrum(TopologyKind::Torus2D, n).gap;
            let exp = kind_spectrum(TopologyKind::StaticExponential, n).gap;
            assert!(ring < torus, "n={n}");
            if n == 16 {
                // the 4x4 torus ties the exponential graph at 0.4
                assert!(torus <= exp + 1e-9);
            } else {
                assert!(torus < exp, "n={n}");
            }
        }
    }

    #[test]
    fn transient_bound_examples() {
        assert_eq!(transient_bound(8, 0.5, Regime::Homogeneous).unwrap(), 2048.0);
        assert_eq!(transient_bound(8, 0.5, Regime::Heterogeneous).unwrap(), 8192.0);
        assert_eq!(transient_bound(7, 1.0, Regime::Homogeneous).unwrap(), 343.0);
        assert!(transient_bound(7, 0.0, Regime::Homogeneous).is_err());
        let ring = kind_spectrum(TopologyKind::Ring, 64).gap;
        let exp = kind_spectrum(TopologyKind::StaticExponential, 64).gap;
        assert!(
            transient_bound(64, ring, Regime::Homogeneous).unwrap()
                > transient_bound(64, exp, Regime::Homogeneous).unwrap()
        );
    }

    #[test]
    fn rate_bound_examples() {
        let p = RateParams {
            n: 16,
            iterations: 1_000_000,
            beta: 0.9,
            sigma2: 0.0,
            b2: 0.0,
            rho: 0.6,
            tau: 4,
        };
        for form in [RateForm::StaticGap, RateForm::StaticExponential, RateForm::OnePeer] {
            assert_eq!(rate_bound(&p, form).unwrap(), 0.0);
        }
        let p = RateParams { sigma2: 1.0, b2: 0.5, ..p };
        assert_eq!(
            rate_bound_terms(&p, RateForm::StaticExponential).unwrap(),
            rate_bound_terms(&p, RateForm::OnePeer).unwrap()
        );
        // sigma^2 / sqrt(0.1 * 16e6) + 16 * 4 * 0.1 / 1e6 + 16 * 0.1 * 0.5 * 16 / 1e6
        let expect = 1.0 / (1.6e6f64).sqrt() + 6.4e-6 + 1.28e-5;
        assert!((rate_bound(&p, RateForm::OnePeer).unwrap() - expect).abs() < 1e-15);
        // 1/sqrt(16e6) + 16/(1e6 * 0.4) + 16*0.5/(1e6*0.16)
        let expect = 2.5e-4 + 4e-5 + 5e-5;
        assert!((rate_bound(&p, RateForm::StaticGap).unwrap() - expect).abs() < 1e-15);
        assert!(rate_bound(&RateParams { iterations: 0, ..p }, RateForm::StaticGap).is_err());
    }

    #[test]
    fn comparison_table_examples() {
        let rows = comparison_table(&[64], Regime::Homogeneous, 1).unwrap();
        let get = |k| rows.iter().find(|r| r.family == k).unwrap();
        assert_eq!(get(TopologyKind::StaticExponential).per_iter_degree, 6);
        assert_eq!(get(TopologyKind::OnePeerExponential).per_iter_degree, 1);
        assert_eq!(get(TopologyKind::Ring).per_iter_degree, 2);
        assert_eq!(get(TopologyKind::Grid2D).per_iter_degree, 4);
        assert_eq!(get(TopologyKind::Star).per_iter_degree, 63);
        assert_eq!(get(TopologyKind::BipartiteRandomMatch).per_iter_degree, 1);
        assert!(get(TopologyKind::BipartiteRandomMatch).transient_bound.is_none());
        let tb = |k| get(k).transient_bound.unwrap();
        assert!(tb(TopologyKind::StaticExponential) < tb(TopologyKind::Grid2D));
        assert_eq!(tb(TopologyKind::StaticExponential), tb(TopologyKind::OnePeerExponential));
        assert!(tb(TopologyKind::Grid2D) < tb(TopologyKind::Ring));
        assert!(comparison_table(&[3], Regime::Homogeneous, 1).is_err());
    }
}
