//! Sampling from the Gibbs measure of the two-block model.
//!
//! The law of a configuration depends on it only through the block up-spin
//! counts `(k1, k2)`, so the whole measure is captured by an
//! `(N/2 + 1) x (N/2 + 1)` table of log-weights. [`ExactSampler`] inverts the
//! table's CDF and then places the up spins uniformly inside each block;
//! [`glauber_sample`] runs heat-bath dynamics on the same measure and exists
//! to cross-check the table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    block_sums, hamiltonian_magnetization, hamiltonian_pairs, BlockMagnetization, ModelParams,
    Partition, SpinConfiguration,
};

/// Largest system size the weight table is built for unless a caller
/// supplies another budget. The table holds `(N/2 + 1)^2` entries.
pub const DEFAULT_MAX_TABLE_SITES: usize = 20_000;

/// Generator used for every random draw in the toolkit.
pub type SpinRng = ChaCha8Rng;

/// Reproducible seed lineage.
///
/// The generator for `(master_seed, stream_index)` is ChaCha8 keyed with the
/// little-endian bytes of `master_seed` followed by 24 zero bytes, positioned
/// on stream `stream_index` (ChaCha's 64-bit stream id). Distinct pairs give
/// distinct key/stream combinations, and the same pair always reproduces the
/// same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub master_seed: u64,
    #[serde(default)]
    pub stream_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self { master_seed, stream_index }
    }

    /// Same master seed on another stream.
    pub fn with_stream(self, stream_index: u64) -> Self {
        Self { stream_index, ..self }
    }

    pub fn rng(&self) -> SpinRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// `ln k!` for `k = 0..=n`, accumulated term by term.
fn log_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Exact law of the block up-spin counts `(k1, k2)` in log domain.
#[derive(Debug, Clone)]
pub struct WeightTable {
    params: ModelParams,
    log_w: Vec<f64>,
    log_norm: f64,
    prob: Vec<f64>,
}

impl WeightTable {
    pub fn build(params: &ModelParams) -> Result<Self> {
        Self::build_with_budget(params, DEFAULT_MAX_TABLE_SITES)
    }

    pub fn build_with_budget(params: &ModelParams, max_sites: usize) -> Result<Self> {
        let n = params.n_sites();
        if n > max_sites {
            return Err(Error::Resource(format!(
                "weight table for N={n} exceeds the budget of {max_sites} sites"
            )));
        }
        let h = params.block_size();
        let lf = log_factorials(h);
        let log_binom: Vec<f64> = (0..=h).map(|k| lf[h] - lf[k] - lf[h - k]).collect();
        let dim = h + 1;
        let mut log_w = Vec::with_capacity(dim * dim);
        for k1 in 0..=h {
            for k2 in 0..=h {
                let m = BlockMagnetization::from_counts(n, k1, k2);
                log_w.push(log_binom[k1] + log_binom[k2] - hamiltonian_magnetization(params, m));
            }
        }
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut prob: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = prob.iter().sum();
        let log_norm = max + total.ln();
        for p in &mut prob {
            *p /= total;
        }
        Ok(Self { params: *params, log_w, log_norm, prob })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n_sites(&self) -> usize {
        self.params.n_sites()
    }

    pub fn block_size(&self) -> usize {
        self.params.block_size()
    }

    fn index(&self, k1: usize, k2: usize) -> usize {
        k1 * (self.block_size() + 1) + k2
    }

    pub fn log_weight(&self, k1: usize, k2: usize) -> f64 {
        self.log_w[self.index(k1, k2)]
    }

    pub fn probability(&self, k1: usize, k2: usize) -> f64 {
        self.prob[self.index(k1, k2)]
    }

    /// `ln Z` of the Gibbs measure, i.e. the log-sum-exp of the table.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Normalized probabilities, row-major in `(k1, k2)`.
    pub fn probabilities(&self) -> &[f64] {
        &self.prob
    }

    /// `(k1, k2, probability)` over the whole grid.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let dim = self.block_size() + 1;
        self.prob
            .iter()
            .enumerate()
            .map(move |(i, &p)| (i / dim, i % dim, p))
    }

    /// Exact `E[f(m1, m2)]`.
    pub fn expectation<F: Fn(BlockMagnetization) -> f64>(&self, f: F) -> f64 {
        let n = self.n_sites();
        self.iter()
            .filter(|&(_, _, p)| p > 0.0)
            .map(|(k1, k2, p)| p * f(BlockMagnetization::from_counts(n, k1, k2)))
            .sum()
    }
}

/// Observations `sigma^(1..n)` stored row-major as `n x N` spins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch {
    n_sites: usize,
    n_obs: usize,
    spins: Vec<i8>,
    seed: Option<SeedSpec>,
}

impl SampleBatch {
    pub fn new(n_sites: usize, spins: Vec<i8>, seed: Option<SeedSpec>) -> Result<Self> {
        if n_sites == 0 {
            return Err(invalid!("batch needs at least one site"));
        }
        if !spins.len().is_multiple_of(n_sites) {
            return Err(invalid!(
                "{} spins do not form rows of {n_sites} sites",
                spins.len()
            ));
        }
        if let Some(bad) = spins.iter().find(|&&x| x != 1 && x != -1) {
            return Err(invalid!("spins must be +1 or -1, found {bad}"));
        }
        Ok(Self { n_sites, n_obs: spins.len() / n_sites, spins, seed })
    }

    pub fn from_configurations(configs: &[SpinConfiguration]) -> Result<Self> {
        let n_sites = configs.first().map(|c| c.len()).ok_or_else(|| invalid!("no configurations"))?;
        let mut spins = Vec::with_capacity(n_sites * configs.len());
        for c in configs {
            if c.len() != n_sites {
                return Err(invalid!("configurations have differing lengths"));
            }
            spins.extend_from_slice(c.as_slice());
        }
        Self::new(n_sites, spins, None)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn is_empty(&self) -> bool {
        self.n_obs == 0
    }

    pub fn seed(&self) -> Option<SeedSpec> {
        self.seed
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn row(&self, k: usize) -> &[i8] {
        &self.spins[k * self.n_sites..(k + 1) * self.n_sites]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, i8> {
        self.spins.chunks_exact(self.n_sites)
    }

    /// First `n` observations.
    pub fn truncated(&self, n: usize) -> SampleBatch {
        let n = n.min(self.n_obs);
        SampleBatch {
            n_sites: self.n_sites,
            n_obs: n,
            spins: self.spins[..n * self.n_sites].to_vec(),
            seed: self.seed,
        }
    }

    /// Block magnetizations of every row.
    pub fn magnetizations(&self, part: &Partition) -> Result<Vec<BlockMagnetization>> {
        let n = self.n_sites as f64;
        self.rows()
            .map(|row| {
                block_sums(row, part.as_slice()).map(|(s1, s2)| BlockMagnetization {
                    m1: 2.0 * s1 as f64 / n,
                    m2: 2.0 * s2 as f64 / n,
                })
            })
            .collect()
    }
}

/// CDF-inversion sampler over a [`WeightTable`].
#[derive(Debug, Clone)]
pub struct ExactSampler<'a> {
    table: &'a WeightTable,
    cdf: Vec<f64>,
    last_positive: usize,
}

impl<'a> ExactSampler<'a> {
    pub fn new(table: &'a WeightTable) -> Self {
        let mut acc = 0.0;
        let mut last_positive = 0;
        let cdf = table
            .probabilities()
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if p > 0.0 {
                    last_positive = i;
                }
                acc += p;
                acc
            })
            .collect();
        Self { table, cdf, last_positive }
    }

    pub fn table(&self) -> &WeightTable {
        self.table
    }

    /// Draw `(k1, k2)` from the table law.
    pub fn draw_counts<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let total = *self.cdf.last().unwrap_or(&1.0);
        let u = rng.random::<f64>() * total;
        let idx = self.cdf.partition_point(|&c| c <= u).min(self.last_positive);
        let dim = self.table.block_size() + 1;
        (idx / dim, idx % dim)
    }

    /// `count` i.i.d. rows drawn with `rng`.
    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        part: &Partition,
        rng: &mut R,
        count: usize,
    ) -> Result<SampleBatch> {
        let n = self.table.n_sites();
        if part.len() != n {
            return Err(invalid!("partition has {} sites, table has {n}", part.len()));
        }
        let mut block1 = part.members();
        let mut block2 = part.complement();
        let mut spins = Vec::with_capacity(n * count);
        let mut row = vec![0i8; n];
        for _ in 0..count {
            let (k1, k2) = self.draw_counts(rng);
            place_up_spins(&mut row, &mut block1, k1, rng);
            place_up_spins(&mut row, &mut block2, k2, rng);
            spins.extend_from_slice(&row);
        }
        SampleBatch::new(n, spins, None)
    }

    pub fn sample(&self, part: &Partition, seed: SeedSpec, count: usize) -> Result<SampleBatch> {
        let mut rng = seed.rng();
        let mut batch = self.sample_with(part, &mut rng, count)?;
        batch.seed = Some(seed);
        Ok(batch)
    }
}

/// Set exactly `k` of the sites listed in `block` to +1 and the rest to -1,
/// with the up set uniform among all `k`-subsets (partial Fisher-Yates).
fn place_up_spins<R: Rng + ?Sized>(row: &mut [i8], block: &mut [usize], k: usize, rng: &mut R) {
    let h = block.len();
    let (picked, fill, mark) = if k <= h - k { (k, -1, 1) } else { (h - k, 1, -1) };
    for &i in block.iter() {
        row[i] = fill;
    }
    for t in 0..picked {
        let j = rng.random_range(t..h);
        block.swap(t, j);
        row[block[t]] = mark;
    }
}

/// Draw `count` i.i.d. configurations from the Gibbs measure.
pub fn exact_sample(table: &WeightTable, part: &Partition, seed: SeedSpec, count: usize) -> Result<SampleBatch> {
    ExactSampler::new(table).sample(part, seed, count)
}

/// Heat-bath (Glauber) dynamics in systematic sweep order.
///
/// One chain seeded from `seed`: a uniformly random start, `sweeps` sweeps of
/// burn-in, then `count` recorded states each separated by `sweeps` sweeps.
/// Independent chains come from distinct seeds.
pub fn glauber_sample(
    params: &ModelParams,
    part: &Partition,
    seed: SeedSpec,
    sweeps: usize,
    count: usize,
) -> Result<SampleBatch> {
    let n = params.n_sites();
    if part.len() != n {
        return Err(invalid!("partition has {} sites, model has {n}", part.len()));
    }
    if sweeps == 0 {
        return Err(invalid!("at least one sweep between samples is required"));
    }
    let mut rng = seed.rng();
    let r = part.as_slice();
    let mut sigma: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    let (s1, s2) = block_sums(&sigma, r)?;
    let mut sums = [s1, s2];
    let nf = n as f64;
    let (same, cross) = (params.beta() / nf, params.alpha() / nf);

    let sweep = |sigma: &mut [i8], sums: &mut [i64; 2], rng: &mut SpinRng| {
        for i in 0..n {
            let (own, other) = if r[i] > 0 { (0, 1) } else { (1, 0) };
            let old = sigma[i] as i64;
            let field = same * (sums[own] - old) as f64 + cross * sums[other] as f64;
            let p_up = 1.0 / (1.0 + (-2.0 * field).exp());
            let new: i8 = if rng.random::<f64>() < p_up { 1 } else { -1 };
            sums[own] += new as i64 - old;
            sigma[i] = new;
        }
    };

    for _ in 0..sweeps {
        sweep(&mut sigma, &mut sums, &mut rng);
    }
    let mut spins = Vec::with_capacity(n * count);
    for _ in 0..count {
        for _ in 0..sweeps {
            sweep(&mut sigma, &mut sums, &mut rng);
        }
        spins.extend_from_slice(&sigma);
    }
    let batch = SampleBatch::new(n, spins, Some(seed))?;
    Ok(batch)
}

/// Conditional probability that site `i` is up given the rest, as used by
/// [`glauber_sample`].
pub fn heat_bath_up_probability(params: &ModelParams, part: &Partition, sigma: &[i8], i: usize) -> f64 {
    let n = params.n_sites() as f64;
    let r = part.as_slice();
    let mut own = 0i64;
    let mut other = 0i64;
    for (j, (&s, &rj)) in sigma.iter().zip(r).enumerate() {
        if j == i {
            continue;
        }
        if rj == r[i] {
            own += s as i64;
        } else {
            other += s as i64;
        }
    }
    let field = params.beta() / n * own as f64 + params.alpha() / n * other as f64;
    1.0 / (1.0 + (-2.0 * field).exp())
}

/// Exact pair correlations: `z` for two distinct sites in the same block,
/// `z_prime` for sites in different blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub z: f64,
    pub z_prime: f64,
}

impl Correlations {
    pub fn gap(&self) -> f64 {
        self.z - self.z_prime
    }
}

/// `Z = (E[S1^2] - N/2) / ((N/2)(N/2 - 1))` with `S1 = N m1 / 2`, and
/// `Z' = E[m1 m2]`, summed exactly over the table.
pub fn exact_correlations(table: &WeightTable) -> Correlations {
    let n = table.n_sites() as f64;
    let h = n / 2.0;
    let s1_sq = table.expectation(|m| (n * m.m1 / 2.0).powi(2));
    Correlations {
        z: (s1_sq - h) / (h * (h - 1.0)),
        z_prime: table.expectation(|m| m.m1 * m.m2),
    }
}

/// Largest `N` accepted by [`brute_force_distribution`].
pub const BRUTE_FORCE_MAX_SITES: usize = 16;

/// Gibbs probability of every configuration, indexed by bit mask
/// (bit `i` set means site `i` is up). Enumeration oracle for small `N`.
pub fn brute_force_distribution(params: &ModelParams, part: &Partition) -> Result<Vec<f64>> {
    let n = params.n_sites();
    if n > BRUTE_FORCE_MAX_SITES {
        return Err(Error::Resource(format!(
            "enumeration refused for N={n} (limit {BRUTE_FORCE_MAX_SITES})"
        )));
    }
    let neg_h = (0..1u64 << n)
        .map(|mask| hamiltonian_pairs(params, part, &SpinConfiguration::from_bits(mask, n)).map(|h| -h))
        .collect::<Result<Vec<f64>>>()?;
    let max = neg_h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = neg_h.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    Ok(p)
}
