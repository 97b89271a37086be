//! The two-block spin model: parameters, partitions, the Hamiltonian in its
//! pair-sum and order-parameter forms, and the mean-field phase diagram.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerance on `|alpha| + beta - 2` used to detect the critical line.
pub const CRITICAL_TOL: f64 = 1e-12;

/// Model parameterization `(N, alpha, beta)`.
///
/// `alpha` couples spins in different blocks, `beta` spins in the same block.
/// Construction enforces `N >= 4` even, `beta > 0`, `|alpha| <= beta` and
/// `alpha < beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    n_sites: usize,
    alpha: f64,
    beta: f64,
}

impl ModelParams {
    pub fn new(n_sites: usize, alpha: f64, beta: f64) -> Result<Self> {
        if n_sites < 4 || !n_sites.is_multiple_of(2) {
            return Err(invalid!("number of sites must be even and at least 4, got {n_sites}"));
        }
        check_couplings(alpha, beta)?;
        Ok(Self { n_sites, alpha, beta })
    }

    /// Parameters on the critical line, `beta = 2 - |alpha|`.
    pub fn critical(n_sites: usize, alpha: f64) -> Result<Self> {
        Self::new(n_sites, alpha, 2.0 - alpha.abs())
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Size of each block, `N / 2`.
    pub fn block_size(&self) -> usize {
        self.n_sites / 2
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Same couplings at a different system size.
    pub fn with_sites(&self, n_sites: usize) -> Result<Self> {
        Self::new(n_sites, self.alpha, self.beta)
    }
}

fn check_couplings(alpha: f64, beta: f64) -> Result<()> {
    if !alpha.is_finite() || !beta.is_finite() {
        return Err(invalid!("couplings must be finite, got alpha={alpha}, beta={beta}"));
    }
    if beta <= 0.0 {
        return Err(invalid!("beta must be positive, got {beta}"));
    }
    if alpha.abs() > beta {
        return Err(invalid!("|alpha| must not exceed beta, got alpha={alpha}, beta={beta}"));
    }
    if alpha >= beta {
        return Err(invalid!("alpha = beta does not identify the blocks"));
    }
    Ok(())
}

/// Balanced block membership: `r[i] = +1` iff site `i` is in `S`.
///
/// Two partitions describe the same bisection iff they are equal or one is the
/// global negation of the other; see [`Partition::equivalent`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    r: Vec<i8>,
}

impl Partition {
    pub fn new(r: Vec<i8>) -> Result<Self> {
        if r.is_empty() || !r.len().is_multiple_of(2) {
            return Err(invalid!("partition length must be even and positive, got {}", r.len()));
        }
        if let Some(bad) = r.iter().find(|&&x| x != 1 && x != -1) {
            return Err(invalid!("partition entries must be +1 or -1, found {bad}"));
        }
        let sum: i64 = r.iter().map(|&x| x as i64).sum();
        if sum != 0 {
            return Err(invalid!("partition is not balanced (sum of entries {sum})"));
        }
        Ok(Self { r })
    }

    /// First half of the sites in `S`, second half in the complement.
    pub fn contiguous(n_sites: usize) -> Result<Self> {
        let h = n_sites / 2;
        Self::new((0..n_sites).map(|i| if i < h { 1 } else { -1 }).collect())
    }

    /// Uniformly random balanced partition.
    pub fn random<R: Rng + ?Sized>(n_sites: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::contiguous(n_sites)?;
        p.r.shuffle(rng);
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.r
    }

    pub fn flipped(&self) -> Self {
        Self { r: self.r.iter().map(|&x| -x).collect() }
    }

    pub fn equivalent(&self, other: &Partition) -> bool {
        self == other || *self == other.flipped()
    }

    /// Indices of sites in `S` (entries `+1`).
    pub fn members(&self) -> Vec<usize> {
        self.indices_with(1)
    }

    /// Indices of sites in the complement (entries `-1`).
    pub fn complement(&self) -> Vec<usize> {
        self.indices_with(-1)
    }

    fn indices_with(&self, sign: i8) -> Vec<usize> {
        self.r
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == sign)
            .map(|(i, _)| i)
            .collect()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &x) in self.r.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

/// A configuration `sigma` in `{-1, +1}^N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration {
    sigma: Vec<i8>,
}

impl SpinConfiguration {
    pub fn new(sigma: Vec<i8>) -> Result<Self> {
        if let Some(bad) = sigma.iter().find(|&&x| x != 1 && x != -1) {
            return Err(invalid!("spins must be +1 or -1, found {bad}"));
        }
        Ok(Self { sigma })
    }

    pub fn all_up(n_sites: usize) -> Self {
        Self { sigma: vec![1; n_sites] }
    }

    /// Configuration from the low `n_sites` bits of `mask` (bit set = spin up).
    pub fn from_bits(mask: u64, n_sites: usize) -> Self {
        let sigma = (0..n_sites)
            .map(|i| if mask >> i & 1 == 1 { 1 } else { -1 })
            .collect();
        Self { sigma }
    }

    pub fn random<R: Rng + ?Sized>(n_sites: usize, rng: &mut R) -> Self {
        let sigma = (0..n_sites)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Self { sigma }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.sigma
    }

    pub fn flipped(&self) -> Self {
        Self { sigma: self.sigma.iter().map(|&x| -x).collect() }
    }
}

impl From<&Partition> for SpinConfiguration {
    fn from(p: &Partition) -> Self {
        Self { sigma: p.as_slice().to_vec() }
    }
}

/// Block magnetizations `(m1, m2)`, each `(2/N)` times the block spin sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMagnetization {
    pub m1: f64,
    pub m2: f64,
}

impl BlockMagnetization {
    /// Magnetizations when block 1 has `k1` up spins and block 2 has `k2`.
    pub fn from_counts(n_sites: usize, k1: usize, k2: usize) -> Self {
        let n = n_sites as f64;
        Self {
            m1: (4.0 * k1 as f64 - n) / n,
            m2: (4.0 * k2 as f64 - n) / n,
        }
    }
}

/// `m1 = (2/N) sum_{r_i=+1} sigma_i`, `m2 = (2/N) sum_{r_i=-1} sigma_i`.
pub fn block_magnetizations(sigma: &SpinConfiguration, part: &Partition) -> Result<BlockMagnetization> {
    let (s1, s2) = block_sums(sigma.as_slice(), part.as_slice())?;
    let n = sigma.len() as f64;
    Ok(BlockMagnetization {
        m1: 2.0 * s1 as f64 / n,
        m2: 2.0 * s2 as f64 / n,
    })
}

/// Raw block spin sums of one row.
pub(crate) fn block_sums(sigma: &[i8], r: &[i8]) -> Result<(i64, i64)> {
    if sigma.len() != r.len() {
        return Err(invalid!(
            "configuration has {} sites but partition has {}",
            sigma.len(),
            r.len()
        ));
    }
    let mut s1 = 0i64;
    let mut s2 = 0i64;
    for (&s, &ri) in sigma.iter().zip(r) {
        if ri > 0 {
            s1 += s as i64;
        } else {
            s2 += s as i64;
        }
    }
    Ok((s1, s2))
}

/// Hamiltonian as the literal double sum over ordered pairs, diagonal included:
/// `-beta/(2N) sum_{i~j} s_i s_j - alpha/(2N) sum_{i!~j} s_i s_j`.
pub fn hamiltonian_pairs(params: &ModelParams, part: &Partition, sigma: &SpinConfiguration) -> Result<f64> {
    let n = params.n_sites();
    if part.len() != n || sigma.len() != n {
        return Err(invalid!(
            "expected {n} sites, got partition {} and configuration {}",
            part.len(),
            sigma.len()
        ));
    }
    let r = part.as_slice();
    let s = sigma.as_slice();
    let mut same = 0i64;
    let mut cross = 0i64;
    for i in 0..n {
        for j in 0..n {
            let prod = (s[i] * s[j]) as i64;
            if r[i] == r[j] {
                same += prod;
            } else {
                cross += prod;
            }
        }
    }
    let nf = n as f64;
    Ok(-params.beta() / (2.0 * nf) * same as f64 - params.alpha() / (2.0 * nf) * cross as f64)
}

/// Hamiltonian in terms of the order parameter:
/// `-(N/2) (alpha m1 m2 / 2 + beta m1^2 / 4 + beta m2^2 / 4)`.
pub fn hamiltonian_magnetization(params: &ModelParams, m: BlockMagnetization) -> f64 {
    let n = params.n_sites() as f64;
    -n / 2.0 * (params.alpha() * m.m1 * m.m2 / 2.0 + params.beta() * (m.m1 * m.m1 + m.m2 * m.m2) / 4.0)
}

/// Coupling matrix `Q` with `Q_ij = beta/N` for same-block pairs (diagonal
/// included) and `alpha/N` otherwise, so that `H(sigma) = -Tr(sigma sigma^T Q)/2`.
pub fn coupling_matrix(params: &ModelParams, part: &Partition) -> Result<ndarray::Array2<f64>> {
    let n = params.n_sites();
    if part.len() != n {
        return Err(invalid!("partition has {} sites, model has {n}", part.len()));
    }
    let r = part.as_slice();
    let nf = n as f64;
    let (same, cross) = (params.beta() / nf, params.alpha() / nf);
    Ok(ndarray::Array2::from_shape_fn((n, n), |(i, j)| {
        if r[i] == r[j] {
            same
        } else {
            cross
        }
    }))
}

/// Largest nonnegative root of `z = tanh(beta_eff z)`; zero when `beta_eff <= 1`.
///
/// Bisection on `[1e-15, 1]`, where `z - tanh(beta_eff z)` changes sign for
/// `beta_eff > 1`.
pub fn solve_mplus(beta_eff: f64) -> Result<f64> {
    if beta_eff.is_nan() || beta_eff < 0.0 {
        return Err(invalid!("inverse temperature must be nonnegative, got {beta_eff}"));
    }
    if beta_eff <= 1.0 {
        return Ok(0.0);
    }
    let f = |z: f64| z - (beta_eff * z).tanh();
    let (mut lo, mut hi) = (1e-15_f64, 1.0_f64);
    // f(lo) < 0 < f(hi) unless beta_eff is within rounding of 1.
    if f(lo) >= 0.0 {
        return Ok(0.0);
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Phase label of `(alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Subcritical,
    SupercriticalZeroAlpha,
    SupercriticalPositiveAlpha,
    SupercriticalNegativeAlpha,
    CriticalPositiveAlpha,
    CriticalNegativeAlpha,
    CriticalZeroAlpha,
}

impl Regime {
    pub fn is_critical(self) -> bool {
        matches!(
            self,
            Regime::CriticalPositiveAlpha | Regime::CriticalNegativeAlpha | Regime::CriticalZeroAlpha
        )
    }
}

/// Classify `(alpha, beta)` by `beta + |alpha|` against 2.
///
/// Points with `|beta + |alpha| - 2| <= 1e-12` get a critical tag (their limit
/// law is still the point mass at the origin).
pub fn classify_regime(alpha: f64, beta: f64) -> Result<Regime> {
    check_couplings(alpha, beta)?;
    let s = beta + alpha.abs();
    let sign = |zero, pos, neg| {
        if alpha > 0.0 {
            pos
        } else if alpha < 0.0 {
            neg
        } else {
            zero
        }
    };
    Ok(if (s - 2.0).abs() <= CRITICAL_TOL {
        sign(
            Regime::CriticalZeroAlpha,
            Regime::CriticalPositiveAlpha,
            Regime::CriticalNegativeAlpha,
        )
    } else if s < 2.0 {
        Regime::Subcritical
    } else {
        sign(
            Regime::SupercriticalZeroAlpha,
            Regime::SupercriticalPositiveAlpha,
            Regime::SupercriticalNegativeAlpha,
        )
    })
}

/// Atoms of the large-N limit law of `(m1, m2)` with their weights.
pub fn limit_support_points(alpha: f64, beta: f64) -> Result<Vec<(BlockMagnetization, f64)>> {
    let at = |m1, m2| BlockMagnetization { m1, m2 };
    Ok(match classify_regime(alpha, beta)? {
        Regime::Subcritical
        | Regime::CriticalZeroAlpha
        | Regime::CriticalPositiveAlpha
        | Regime::CriticalNegativeAlpha => vec![(at(0.0, 0.0), 1.0)],
        Regime::SupercriticalZeroAlpha => {
            let m = solve_mplus(beta / 2.0)?;
            vec![
                (at(m, m), 0.25),
                (at(m, -m), 0.25),
                (at(-m, m), 0.25),
                (at(-m, -m), 0.25),
            ]
        }
        Regime::SupercriticalPositiveAlpha => {
            let m = solve_mplus((alpha + beta) / 2.0)?;
            vec![(at(m, m), 0.5), (at(-m, -m), 0.5)]
        }
        Regime::SupercriticalNegativeAlpha => {
            let m = solve_mplus((beta - alpha) / 2.0)?;
            vec![(at(m, -m), 0.5), (at(-m, m), 0.5)]
        }
    })
}
