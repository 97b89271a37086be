//! Critical-line fluctuations of the block magnetizations.
//!
//! With `w1 = (m1 + m2)/2` and `w2 = (m1 - m2)/2`, on `|alpha| + beta = 2`
//! one of the two combinations fluctuates on the Gaussian scale `sqrt(N)`
//! and the other on the scale `N^(1/4)` with limit density proportional to
//! `exp(-x^4/12)`. This module computes the scaled statistics, their limit
//! laws, goodness of fit, pair-correlation gaps and the tilted density used
//! to derive the limits.

use std::io::Write;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{block_sums, classify_regime, BlockMagnetization, Partition, Regime};
use crate::quadrature::{gauss_kronrod, integrate};
use crate::sampler::{SampleBatch, WeightTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatKind {
    /// `m1 + m2`
    SumW1,
    /// `m1 - m2`
    DiffW2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scale {
    /// `sqrt(N)/2`
    Half,
    /// `N^(1/4)/2`
    Quarter,
}

impl Scale {
    pub fn exponent(self) -> f64 {
        match self {
            Scale::Half => 0.5,
            Scale::Quarter => 0.25,
        }
    }

    pub fn factor(self, n_sites: usize) -> f64 {
        (n_sites as f64).powf(self.exponent()) / 2.0
    }
}

/// `N^e/2 * (m1 +- m2)` for one magnetization pair.
pub fn statistic_value(kind: StatKind, scale: Scale, n_sites: usize, m: BlockMagnetization) -> f64 {
    let combo = match kind {
        StatKind::SumW1 => m.m1 + m.m2,
        StatKind::DiffW2 => m.m1 - m.m2,
    };
    scale.factor(n_sites) * combo
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledStatistic {
    pub kind: StatKind,
    pub scale: Scale,
    pub n_sites: usize,
    pub values: Vec<f64>,
}

impl ScaledStatistic {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.mean();
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    pub fn second_moment(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }
}

pub fn scaled_statistic(batch: &SampleBatch, part: &Partition, kind: StatKind, scale: Scale) -> Result<ScaledStatistic> {
    let values = batch
        .magnetizations(part)?
        .into_iter()
        .map(|m| statistic_value(kind, scale, batch.n_sites(), m))
        .collect();
    Ok(ScaledStatistic { kind, scale, n_sites: batch.n_sites(), values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LimitLaw {
    Gaussian { variance: f64 },
    Quartic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitPrediction {
    pub law: LimitLaw,
    pub kind: StatKind,
    /// Scale at which `kind` has the limit `law`.
    pub scale: Scale,
    /// `alpha + beta`
    pub kappa: f64,
    /// `beta - alpha`
    pub eta: f64,
}

impl LimitPrediction {
    pub fn cdf(&self, x: f64) -> f64 {
        match self.law {
            LimitLaw::Gaussian { variance } => 0.5 * libm::erfc(-x / (2.0 * variance).sqrt()),
            LimitLaw::Quartic => quartic_law().cdf(x),
        }
    }

    pub fn variance(&self) -> f64 {
        match self.law {
            LimitLaw::Gaussian { variance } => variance,
            LimitLaw::Quartic => quartic_law().variance(),
        }
    }
}

/// Limit law of `kind` on the critical line.
///
/// For `alpha > 0` the difference is Gaussian with variance
/// `2/(2 - eta)` at scale `sqrt(N)/2` and the sum is quartic at
/// `N^(1/4)/2`; for `alpha < 0` the sum is Gaussian with variance
/// `-1/alpha` and the difference is quartic.
pub fn predict_limit(alpha: f64, beta: f64, kind: StatKind) -> Result<LimitPrediction> {
    let regime = classify_regime(alpha, beta)?;
    if !regime.is_critical() {
        return Err(Error::Domain(format!("(alpha, beta) = ({alpha}, {beta}) is not on the critical line")));
    }
    if alpha == 0.0 {
        return Err(Error::Domain("alpha = 0 has no block-sensitive critical limit".into()));
    }
    let kappa = alpha + beta;
    let eta = beta - alpha;
    let gaussian_kind = if alpha > 0.0 { StatKind::DiffW2 } else { StatKind::SumW1 };
    let (law, scale) = if kind == gaussian_kind {
        let variance = if alpha > 0.0 { 2.0 / (2.0 - eta) } else { -1.0 / alpha };
        (LimitLaw::Gaussian { variance }, Scale::Half)
    } else {
        (LimitLaw::Quartic, Scale::Quarter)
    };
    Ok(LimitPrediction { law, kind, scale, kappa, eta })
}

const QUARTIC_LIMIT: f64 = 8.0;
const QUARTIC_STEPS_PER_UNIT: usize = 64;

/// Law with density `exp(-x^4/12)/K`.
#[derive(Debug, Clone)]
pub struct QuarticLaw {
    k: f64,
    variance: f64,
    grid_cdf: Vec<f64>,
}

fn quartic_kernel(x: f64) -> f64 {
    (-x.powi(4) / 12.0).exp()
}

impl QuarticLaw {
    fn compute() -> Result<Self> {
        let half = integrate(quartic_kernel, 0.0, QUARTIC_LIMIT, 1e-14)?;
        let k = 2.0 * half;
        let variance = 2.0 * integrate(|x| x * x * quartic_kernel(x), 0.0, QUARTIC_LIMIT, 1e-14)? / k;
        let cells = 2 * QUARTIC_LIMIT as usize * QUARTIC_STEPS_PER_UNIT;
        let h = 1.0 / QUARTIC_STEPS_PER_UNIT as f64;
        let mut grid_cdf = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        grid_cdf.push(0.0);
        for c in 0..cells {
            let a = -QUARTIC_LIMIT + c as f64 * h;
            acc += integrate(quartic_kernel, a, a + h, 1e-16)? / k;
            grid_cdf.push(acc);
        }
        if (acc - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("quartic density integrates to {acc}")));
        }
        Ok(Self { k, variance, grid_cdf })
    }

    /// Normalizer `K = integral of exp(-x^4/12)`.
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn density(&self, x: f64) -> f64 {
        quartic_kernel(x) / self.k
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Tabulated CDF at grid points plus one Kronrod panel to `x`; the tails
    /// beyond `|x| = 8` are taken as 0 and 1.
    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= -QUARTIC_LIMIT {
            return 0.0;
        }
        if x >= QUARTIC_LIMIT {
            return 1.0;
        }
        if x > 0.0 {
            return 1.0 - self.cdf(-x);
        }
        let h = 1.0 / QUARTIC_STEPS_PER_UNIT as f64;
        let cell = (((x + QUARTIC_LIMIT) / h).floor() as usize).min(self.grid_cdf.len() - 2);
        let left = -QUARTIC_LIMIT + cell as f64 * h;
        let (part, _) = gauss_kronrod(&quartic_kernel, left, x);
        self.grid_cdf[cell] + part / self.k
    }

    /// Write `x,density,cdf` rows on an even grid over `[-8, 8]`.
    pub fn write_csv<W: Write>(&self, out: W, points: usize) -> Result<()> {
        if points < 2 {
            return Err(invalid!("need at least two grid points, got {points}"));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "density", "cdf"]).map_err(csv_io)?;
        for i in 0..points {
            let x = -QUARTIC_LIMIT + 2.0 * QUARTIC_LIMIT * i as f64 / (points - 1) as f64;
            w.write_record([x.to_string(), self.density(x).to_string(), self.cdf(x).to_string()])
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Malformed(format!("{other:?}")),
    }
}

/// The quartic law, computed once per process.
pub fn quartic_law() -> &'static QuarticLaw {
    static LAW: OnceLock<QuarticLaw> = OnceLock::new();
    LAW.get_or_init(|| QuarticLaw::compute().expect("quartic law quadrature converges at its fixed tolerance"))
}

/// Kolmogorov–Smirnov distance between the sample and `law`.
pub fn ks_statistic(stat: &ScaledStatistic, law: &LimitPrediction) -> Result<f64> {
    ks_distance(&stat.values, |x| law.cdf(x))
}

/// KS distance of raw values against any continuous CDF. Tied values are
/// handled as one jump of the empirical CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> Result<f64> {
    if values.len() < 100 {
        return Err(invalid!("KS distance needs at least 100 samples, got {}", values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sample contains non-finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let f = cdf(sorted[i]);
        d = d.max((f - i as f64 / n).abs()).max((j as f64 / n - f).abs());
        i = j;
    }
    Ok(d)
}

/// Exact law of the scaled statistic under the weight table, as sorted
/// `(value, probability)` atoms.
pub fn exact_statistic_law(table: &WeightTable, kind: StatKind, scale: Scale) -> Vec<(f64, f64)> {
    let b = table.block_size();
    let n = table.n_sites();
    let mut mass = vec![0.0; 2 * b + 1];
    for (k1, k2, p) in table.iter() {
        let key = match kind {
            StatKind::SumW1 => k1 + k2,
            StatKind::DiffW2 => k1 + b - k2,
        };
        mass[key] += p;
    }
    let factor = scale.factor(n);
    mass.into_iter()
        .enumerate()
        .map(|(key, p)| {
            let combo = match kind {
                StatKind::SumW1 => (4.0 * key as f64 - 2.0 * n as f64) / n as f64,
                StatKind::DiffW2 => 4.0 * (key as f64 - b as f64) / n as f64,
            };
            (factor * combo, p)
        })
        .collect()
}

/// Mean and variance of the scaled statistic, summed exactly over the table.
pub fn exact_statistic_moments(table: &WeightTable, kind: StatKind, scale: Scale) -> (f64, f64) {
    let law = exact_statistic_law(table, kind, scale);
    let mean: f64 = law.iter().map(|(x, p)| x * p).sum();
    let second: f64 = law.iter().map(|(x, p)| x * x * p).sum();
    (mean, second - mean * mean)
}

/// Sup distance between a discrete law (sorted atoms) and a continuous CDF.
pub fn ks_distance_discrete<F: Fn(f64) -> f64>(atoms: &[(f64, f64)], cdf: F) -> f64 {
    let mut below = 0.0;
    let mut d: f64 = 0.0;
    for &(x, p) in atoms {
        let f = cdf(x);
        let above = below + p;
        d = d.max((f - below).abs()).max((above - f).abs());
        below = above;
    }
    d
}

/// Within-block and cross-block pair correlations estimated from a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGapEstimate {
    pub z_hat: f64,
    pub zprime_hat: f64,
    pub gap: f64,
    /// Standard error of `gap` from the spread of per-observation gaps.
    pub stderr: f64,
    pub n_sites: usize,
    pub n_obs: usize,
}

/// Averages of `sigma_i sigma_j` over all ordered within-block pairs
/// `i != j` and all cross-block pairs. Per observation these follow from
/// the block sums: within-block pairs sum to `S1^2 + S2^2 - N` and
/// cross-block pairs to `2 S1 S2`.
pub fn correlation_gap(batch: &SampleBatch, part: &Partition) -> Result<CorrelationGapEstimate> {
    if batch.n_obs() < 2 {
        return Err(invalid!("correlation gap needs at least two observations, got {}", batch.n_obs()));
    }
    let n = batch.n_sites();
    if n < 4 {
        return Err(invalid!("correlation gap needs N >= 4, got {n}"));
    }
    let b = (n / 2) as f64;
    let within_pairs = 2.0 * b * (b - 1.0);
    let mut z = Vec::with_capacity(batch.n_obs());
    let mut zp = Vec::with_capacity(batch.n_obs());
    for row in batch.rows() {
        let (s1, s2) = block_sums(row, part.as_slice())?;
        let (s1, s2) = (s1 as f64, s2 as f64);
        z.push((s1 * s1 + s2 * s2 - 2.0 * b) / within_pairs);
        zp.push(s1 * s2 / (b * b));
    }
    let count = z.len() as f64;
    let z_hat = z.iter().sum::<f64>() / count;
    let zprime_hat = zp.iter().sum::<f64>() / count;
    let gap = z_hat - zprime_hat;
    let var = z.iter().zip(&zp).map(|(a, c)| (a - c - gap).powi(2)).sum::<f64>() / (count - 1.0);
    Ok(CorrelationGapEstimate {
        z_hat,
        zprime_hat,
        gap,
        stderr: (var / count).sqrt(),
        n_sites: n,
        n_obs: batch.n_obs(),
    })
}

/// Large-N value of the pair correlation at the critical point with
/// `alpha > 0`: `sqrt(12/N) Gamma(3/4)/Gamma(1/4)`.
pub fn critical_correlation_asymptote(n_sites: usize) -> f64 {
    (12.0 / n_sites as f64).sqrt() * libm::tgamma(0.75) / libm::tgamma(0.25)
}

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Fit `log y = intercept + slope log x`. Points with nonpositive or
/// non-finite coordinates are dropped with a warning; fewer than
/// `min_points` survivors is an error.
pub fn power_law_fit(points: &[(f64, f64)], min_points: usize) -> Result<PowerLawFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| {
            let ok = x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite();
            if !ok {
                log::warn!("dropping point ({x}, {y}) from log-log fit");
            }
            ok
        })
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if kept.len() < min_points.max(2) {
        return Err(invalid!("log-log fit needs {} positive points, {} remain", min_points.max(2), kept.len()));
    }
    let m = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / m;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = kept.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid!("log-log fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: f64 = kept.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - resid / syy };
    Ok(PowerLawFit { slope, intercept, r_squared, points_used: kept.len() })
}

/// Scaling of the correlation gap with `N`, from `(N, gap)` pairs.
pub fn gap_scaling_exponent(points: &[(usize, f64)]) -> Result<PowerLawFit> {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(n, g)| (n as f64, g)).collect();
    power_law_fit(&pts, 4)
}

/// `log cosh z` without overflow or loss of precision near 0.
pub fn log_cosh(z: f64) -> f64 {
    let a = z.abs();
    if a < 1.0 {
        let s = (0.5 * a).sinh();
        (2.0 * s * s).ln_1p()
    } else {
        a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }
}

fn critical_kappa(alpha: f64, beta: f64) -> Result<f64> {
    if !classify_regime(alpha, beta)?.is_critical() {
        return Err(Error::Domain(format!("(alpha, beta) = ({alpha}, {beta}) is not on the critical line")));
    }
    Ok(alpha + beta)
}

/// Negative exponent of the tilted density in the coordinates
/// `x = sqrt(N) w1`, `y = N^(1/4) w2`:
///
/// `kappa x^2/4 + sqrt(N) y^2/2 - (N/2)[log cosh(a + b) + log cosh(a - b)]`
/// with `a = kappa x/(2 sqrt N)` and `b = y/N^(1/4)`.
pub fn phi_exponent(x: f64, y: f64, n_sites: usize, alpha: f64, beta: f64) -> Result<f64> {
    let kappa = critical_kappa(alpha, beta)?;
    if n_sites == 0 {
        return Err(invalid!("N must be positive"));
    }
    let n = n_sites as f64;
    let a = kappa * x / (2.0 * n.sqrt());
    let b = y / n.powf(0.25);
    Ok(kappa * x * x / 4.0 + n.sqrt() * y * y / 2.0 - 0.5 * n * (log_cosh(a + b) + log_cosh(a - b)))
}

/// `N -> infinity` limit of [`phi_exponent`]:
/// `x^2/2 (kappa/2 - kappa^2/4) + y^4/12`.
pub fn phi_limit(x: f64, y: f64, alpha: f64, beta: f64) -> Result<f64> {
    let kappa = critical_kappa(alpha, beta)?;
    Ok(x * x / 2.0 * (kappa / 2.0 - kappa * kappa / 4.0) + y.powi(4) / 12.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Coordinates `(sqrt(N) w1, N^(1/4) w2)`, kernel `diag(2/kappa, 1/sqrt(N))`.
    AlphaNeg,
    /// Coordinates `(N^(1/4) w1, sqrt(N) w2)`, kernel `diag(1/sqrt(N), 2/eta)`.
    AlphaPos,
}

impl Branch {
    fn check(self, alpha: f64, beta: f64) -> Result<()> {
        let regime = classify_regime(alpha, beta)?;
        let ok = matches!(
            (self, regime),
            (Branch::AlphaNeg, Regime::CriticalNegativeAlpha) | (Branch::AlphaPos, Regime::CriticalPositiveAlpha)
        );
        if !ok {
            return Err(Error::Domain(format!(
                "{self:?} needs critical parameters of matching sign, got ({alpha}, {beta})"
            )));
        }
        Ok(())
    }
}

/// Law of the branch's scaled `(w1, w2)` convolved with the branch's
/// Gaussian kernel, evaluated on the product grid `xs x ys`
/// (`out[i][j]` at `(xs[i], ys[j])`).
pub fn tilted_density_grid(table: &WeightTable, xs: &[f64], ys: &[f64], branch: Branch) -> Result<Vec<Vec<f64>>> {
    let params = table.params();
    let (alpha, beta) = (params.alpha(), params.beta());
    branch.check(alpha, beta)?;
    let n = table.n_sites() as f64;
    let b = table.block_size();
    let (sx, sy, vx, vy) = match branch {
        Branch::AlphaNeg => (n.sqrt(), n.powf(0.25), 2.0 / (alpha + beta), 1.0 / n.sqrt()),
        Branch::AlphaPos => (n.powf(0.25), n.sqrt(), 1.0 / n.sqrt(), 2.0 / (beta - alpha)),
    };
    // w1 = (2s - N)/N for s = k1 + k2, w2 = 2d/N for d = k1 - k2.
    let w1: Vec<f64> = (0..=2 * b).map(|s| sx * (2.0 * s as f64 - n) / n).collect();
    let w2: Vec<f64> = (0..=2 * b).map(|d| sy * 2.0 * (d as f64 - b as f64) / n).collect();
    let kernel = |v: f64, var: f64| (-v * v / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();

    let mut out = vec![vec![0.0; ys.len()]; xs.len()];
    let mut by_d = vec![0.0; 2 * b + 1];
    for (i, &x) in xs.iter().enumerate() {
        let ax: Vec<f64> = w1.iter().map(|&u| kernel(x - u, vx)).collect();
        by_d.iter_mut().for_each(|v| *v = 0.0);
        for (k1, k2, p) in table.iter() {
            by_d[k1 + b - k2] += p * ax[k1 + k2];
        }
        for (j, &y) in ys.iter().enumerate() {
            out[i][j] = by_d.iter().zip(&w2).map(|(&m, &u)| if m == 0.0 { 0.0 } else { m * kernel(y - u, vy) }).sum();
        }
    }
    Ok(out)
}

pub fn tilted_density(table: &WeightTable, point: (f64, f64), branch: Branch) -> Result<f64> {
    Ok(tilted_density_grid(table, &[point.0], &[point.1], branch)?[0][0])
}

/// Normalized large-N limit of [`tilted_density`]: a Gaussian factor with
/// precision `c/2 - c^2/4` (`c = kappa` or `eta`) times the quartic density
/// in the other coordinate.
pub fn tilted_limit_density(point: (f64, f64), alpha: f64, beta: f64, branch: Branch) -> Result<f64> {
    branch.check(alpha, beta)?;
    let (g, q) = match branch {
        Branch::AlphaNeg => (point.0, point.1),
        Branch::AlphaPos => (point.1, point.0),
    };
    let c = match branch {
        Branch::AlphaNeg => alpha + beta,
        Branch::AlphaPos => beta - alpha,
    };
    let precision = c / 2.0 - c * c / 4.0;
    let gauss = (-g * g * precision / 2.0).exp() * (precision / (2.0 * std::f64::consts::PI)).sqrt();
    Ok(gauss * quartic_law().density(q))
}
