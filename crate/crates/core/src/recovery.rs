//! Block recovery from observations.
//!
//! Maximizing the likelihood over balanced partitions `r` is maximizing
//! `r^T Sigma_hat r`. The pipeline centers the empirical second moment,
//! relaxes the problem to the elliptope (PSD, unit diagonal), solves the
//! relaxation with row-wise coordinate ascent on a low-rank factor `V V^T`,
//! and rounds the leading eigenvector to an exactly balanced partition.
//! A swap-based local search on the unrelaxed objective is available as a
//! baseline and as an optional refinement.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Partition;
use crate::sampler::{SampleBatch, SeedSpec};

/// `Sigma_hat = (1/n) sum_k sigma^(k) sigma^(k)^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCovariance {
    sigma_hat: Array2<f64>,
    n_obs: usize,
}

impl EmpiricalCovariance {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.sigma_hat
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_sites(&self) -> usize {
        self.sigma_hat.nrows()
    }

    /// `r^T Sigma_hat r`.
    pub fn quadratic_form(&self, part: &Partition) -> f64 {
        quadratic_form(self.sigma_hat.view(), part.as_slice())
    }
}

fn quadratic_form(a: ArrayView2<'_, f64>, r: &[i8]) -> f64 {
    let mut total = 0.0;
    for (i, row) in a.outer_iter().enumerate() {
        let inner: f64 = row.iter().zip(r).map(|(&x, &rj)| x * rj as f64).sum();
        total += r[i] as f64 * inner;
    }
    total
}

pub fn empirical_second_moment(batch: &SampleBatch) -> Result<EmpiricalCovariance> {
    if batch.is_empty() {
        return Err(invalid!("second moment needs at least one observation"));
    }
    let n = batch.n_sites();
    let x = Array2::from_shape_fn((batch.n_obs(), n), |(k, i)| batch.row(k)[i] as f64);
    let mut sigma_hat = x.t().dot(&x) / batch.n_obs() as f64;
    for i in 0..n {
        sigma_hat[[i, i]] = 1.0;
    }
    Ok(EmpiricalCovariance { sigma_hat, n_obs: batch.n_obs() })
}

/// `Gamma_hat = Pi Sigma_hat Pi` with `Pi = I - (1/N) 11^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredGram {
    gamma_hat: Array2<f64>,
}

impl CenteredGram {
    /// Wrap an already centered symmetric matrix.
    pub fn from_matrix(gamma_hat: Array2<f64>) -> Result<Self> {
        let (r, c) = gamma_hat.dim();
        if r != c || r == 0 {
            return Err(invalid!("objective matrix must be square and nonempty, got {r}x{c}"));
        }
        if gamma_hat.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("objective matrix has non-finite entries".into()));
        }
        Ok(Self { gamma_hat: gamma_hat.as_standard_layout().into_owned() })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.gamma_hat
    }

    pub fn n_sites(&self) -> usize {
        self.gamma_hat.nrows()
    }

    /// `Tr(Gamma_hat r r^T)`.
    pub fn quadratic_form(&self, part: &Partition) -> f64 {
        quadratic_form(self.gamma_hat.view(), part.as_slice())
    }
}

pub fn center(cov: &EmpiricalCovariance) -> CenteredGram {
    let s = &cov.sigma_hat;
    let n = s.nrows();
    let nf = n as f64;
    let row_mean: Vec<f64> = s.outer_iter().map(|r| r.sum() / nf).collect();
    let col_mean: Vec<f64> = (0..n).map(|j| s.column(j).sum() / nf).collect();
    let grand = row_mean.iter().sum::<f64>() / nf;
    let gamma_hat = Array2::from_shape_fn((n, n), |(i, j)| s[[i, j]] - row_mean[i] - col_mean[j] + grand);
    CenteredGram { gamma_hat }
}

/// Factor `V` (N x k, unit-norm rows) of a point `V V^T` of the elliptope.
#[derive(Debug, Clone, PartialEq)]
pub struct ElliptopeFactor {
    v: Array2<f64>,
}

impl ElliptopeFactor {
    pub fn new(v: Array2<f64>) -> Result<Self> {
        if v.nrows() == 0 || v.ncols() == 0 {
            return Err(invalid!("factor must be nonempty"));
        }
        for (i, row) in v.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(invalid!("row {i} of the factor has norm {norm}"));
            }
        }
        Ok(Self { v: v.as_standard_layout().into_owned() })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn n_sites(&self) -> usize {
        self.v.nrows()
    }

    /// `R = V V^T`.
    pub fn gram(&self) -> Array2<f64> {
        self.v.dot(&self.v.t())
    }
}

/// Rank used by default: `ceil(sqrt(2N)) + 1`.
pub fn default_rank(n_sites: usize) -> usize {
    (2.0 * n_sites as f64).sqrt().ceil() as usize + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdpOptions {
    /// Factor rank; `None` picks [`default_rank`].
    pub rank: Option<usize>,
    /// Stop when a sweep raises the objective by less than `tol` relative.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Independent random starts; the best objective wins, ties go to the
    /// lowest restart index.
    pub restarts: usize,
    /// Restart `i` is initialized from `seed.with_stream(seed.stream_index + i)`.
    pub seed: SeedSpec,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            rank: None,
            tol: 1e-7,
            max_sweeps: 2000,
            restarts: 1,
            seed: SeedSpec::new(0, 0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub factor: ElliptopeFactor,
    /// `Tr(Gamma_hat V V^T)` recomputed at the returned factor.
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after initialization and after each sweep of the winning
    /// restart.
    pub trace: Vec<f64>,
}

/// Maximize `Tr(Gamma_hat R)` over the elliptope by coordinate ascent on
/// the rows of `V`: each row is replaced by `g_i / |g_i|` with
/// `g_i = sum_{j != i} Gamma_ij v_j`, sweeping `i = 0..N` in order.
/// A row whose `g_i` is exactly zero is left unchanged.
pub fn sdp_solve(gram: &CenteredGram, opts: &SdpOptions) -> Result<SdpSolution> {
    let n = gram.n_sites();
    let k = opts.rank.unwrap_or_else(|| default_rank(n));
    if k < 2 {
        return Err(invalid!("factor rank must be at least 2, got {k}"));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(invalid!("tolerance must be positive, got {}", opts.tol));
    }
    if opts.restarts == 0 {
        return Err(invalid!("at least one restart is required"));
    }
    if gram.gamma_hat.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("objective matrix has non-finite entries".into()));
    }
    let mut best: Option<SdpSolution> = None;
    for restart in 0..opts.restarts {
        let seed = opts.seed.with_stream(opts.seed.stream_index.wrapping_add(restart as u64));
        let sol = solve_from(gram, k, opts, seed)?;
        if best.as_ref().is_none_or(|b| sol.objective > b.objective) {
            best = Some(sol);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn solve_from(gram: &CenteredGram, k: usize, opts: &SdpOptions, seed: SeedSpec) -> Result<SdpSolution> {
    let n = gram.n_sites();
    let g = gram.gamma_hat.as_slice().expect("standard layout");
    let mut rng = seed.rng();
    let mut v = vec![0.0; n * k];
    for row in v.chunks_exact_mut(k) {
        loop {
            for x in row.iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-3 {
                row.iter_mut().for_each(|x| *x /= norm);
                break;
            }
        }
    }

    let mut objective = full_objective(g, &v, n, k);
    let mut trace = vec![objective];
    let mut grad = vec![0.0; k];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        let before = objective;
        for i in 0..n {
            grad.iter_mut().for_each(|x| *x = 0.0);
            let gi = &g[i * n..(i + 1) * n];
            for (j, &gij) in gi.iter().enumerate() {
                if j == i || gij == 0.0 {
                    continue;
                }
                let vj = &v[j * k..(j + 1) * k];
                for (a, &b) in grad.iter_mut().zip(vj) {
                    *a += gij * b;
                }
            }
            let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let vi = &mut v[i * k..(i + 1) * k];
            let aligned: f64 = vi.iter().zip(&grad).map(|(a, b)| a * b).sum();
            let gain = 2.0 * (norm - aligned);
            if gain > 0.0 {
                for (a, &b) in vi.iter_mut().zip(&grad) {
                    *a = b / norm;
                }
                objective += gain;
            }
        }
        sweeps += 1;
        if !objective.is_finite() {
            return Err(Error::Numeric("objective diverged during coordinate ascent".into()));
        }
        trace.push(objective);
        if objective - before <= opts.tol * objective.abs() {
            converged = true;
            break;
        }
    }
    let objective = full_objective(g, &v, n, k);
    let factor = ElliptopeFactor { v: Array2::from_shape_vec((n, k), v).expect("shape") };
    Ok(SdpSolution { factor, objective, sweeps, converged, trace })
}

fn full_objective(g: &[f64], v: &[f64], n: usize, k: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let vi = &v[i * k..(i + 1) * k];
        for j in 0..n {
            let gij = g[i * n + j];
            if gij != 0.0 {
                let vj = &v[j * k..(j + 1) * k];
                total += gij * vi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    total
}

/// Outcome of rounding a factor to a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Rounding {
    pub partition: Partition,
    /// Set when the leading eigenvalue of `V V^T` was not separated and the
    /// first column of `V` was rounded instead.
    pub used_fallback: bool,
}

/// Balanced partition with `+1` on the `N/2` largest scores; ties go to the
/// smaller index.
pub fn balanced_from_scores(scores: &[f64]) -> Result<Partition> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut r = vec![-1i8; scores.len()];
    for &i in &order[..scores.len() / 2] {
        r[i] = 1;
    }
    Partition::new(r)
}

/// Round `V V^T` through its leading eigenvector.
///
/// Power iteration runs in the k-dimensional factor space on `V^T V`, whose
/// leading eigenvector `w` gives `u = V w`, the leading eigenvector of
/// `V V^T`. If the top two eigenvalues of `V^T V` agree to 1e-14 relative,
/// the first column of `V` is rounded instead.
pub fn extract_partition(factor: &ElliptopeFactor) -> Result<Rounding> {
    let v = &factor.v;
    let k = v.ncols();
    let m = v.t().dot(v);
    let start: Vec<f64> = (0..k).map(|c| 1.0 / (c as f64 + 1.0)).collect();
    let (w, lambda1) = power_iteration(&m, start.clone(), 20_000);

    let mut deflated = m.clone();
    for a in 0..k {
        for b in 0..k {
            deflated[[a, b]] -= lambda1 * w[a] * w[b];
        }
    }
    let second_start: Vec<f64> = (0..k).map(|c| if c % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let (_, lambda2) = power_iteration(&deflated, second_start, 2_000);

    let scale = lambda1.abs().max(f64::MIN_POSITIVE);
    if lambda1 <= 0.0 || (lambda1 - lambda2.abs()) / scale < 1e-14 {
        let scores: Vec<f64> = v.column(0).to_vec();
        return Ok(Rounding { partition: balanced_from_scores(&scores)?, used_fallback: true });
    }
    let scores: Vec<f64> = v.outer_iter().map(|row| row.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
    Ok(Rounding { partition: balanced_from_scores(&scores)?, used_fallback: false })
}

/// Power iteration on a symmetric PSD matrix. Returns the normalized vector
/// and its Rayleigh quotient.
fn power_iteration(m: &Array2<f64>, start: Vec<f64>, max_iter: usize) -> (Vec<f64>, f64) {
    let k = m.nrows();
    let normalize = |x: &mut Vec<f64>| {
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            x.iter_mut().for_each(|a| *a /= norm);
        }
        norm
    };
    let mut w = start;
    normalize(&mut w);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let mut next: Vec<f64> = (0..k).map(|a| (0..k).map(|b| m[[a, b]] * w[b]).sum()).collect();
        lambda = next.iter().zip(&w).map(|(a, b)| a * b).sum();
        if normalize(&mut next) == 0.0 {
            return (w, 0.0);
        }
        let diff = next.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        w = next;
        if diff < 1e-13 {
            break;
        }
    }
    (w, lambda)
}

/// Estimate plus solver bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub estimate: Partition,
    /// For [`recover`], `Tr(Gamma_hat R)` at the SDP solution; for
    /// [`ml_local_search`], `r^T Sigma_hat r` at the returned partition.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub solver_trace: Option<Vec<f64>>,
    pub rounding_fallback: bool,
    /// Swaps made by local-search refinement, when it ran.
    pub refinement_moves: Option<usize>,
}

/// Hill-climb `r^T Sigma_hat r` over balanced partitions by swapping one
/// member of each block, taking the best strictly improving swap each step
/// (first in `(i, j)` order on ties).
pub fn ml_local_search(cov: &EmpiricalCovariance, init: &Partition, max_moves: usize) -> Result<RecoveryResult> {
    let a = &cov.sigma_hat;
    let n = a.nrows();
    if init.len() != n {
        return Err(invalid!("initial partition has {} sites, covariance has {n}", init.len()));
    }
    let mut r: Vec<f64> = init.as_slice().iter().map(|&x| x as f64).collect();
    let mut g: Vec<f64> = (0..n).map(|i| a.row(i).iter().zip(&r).map(|(x, y)| x * y).sum()).collect();
    let mut objective: f64 = r.iter().zip(&g).map(|(x, y)| x * y).sum();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())) * n as f64;
    let min_gain = 1e-12 * scale.max(1.0);
    let mut trace = vec![objective];
    let mut moves = 0;
    let mut converged = false;
    while moves < max_moves {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| r[i] > 0.0) {
            for j in (0..n).filter(|&j| r[j] < 0.0) {
                let gain = -4.0 * (r[i] * g[i] + r[j] * g[j]) + 4.0 * (a[[i, i]] + a[[j, j]]) - 8.0 * a[[i, j]];
                if gain > min_gain && best.is_none_or(|(_, _, b)| gain > b) {
                    best = Some((i, j, gain));
                }
            }
        }
        let Some((i, j, gain)) = best else {
            converged = true;
            break;
        };
        let (ri, rj) = (r[i], r[j]);
        for (t, gt) in g.iter_mut().enumerate() {
            *gt -= 2.0 * (ri * a[[t, i]] + rj * a[[t, j]]);
        }
        r[i] = -ri;
        r[j] = -rj;
        objective += gain;
        trace.push(objective);
        moves += 1;
    }
    let estimate = Partition::new(r.iter().map(|&x| x as i8).collect())?;
    let objective = cov.quadratic_form(&estimate);
    Ok(RecoveryResult {
        estimate,
        objective,
        iterations: moves,
        converged,
        solver_trace: Some(trace),
        rounding_fallback: false,
        refinement_moves: None,
    })
}

/// Fraction of misassigned sites, minimized over the global relabeling.
pub fn recovery_error(est: &Partition, truth: &Partition) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(invalid!("partitions have {} and {} sites", est.len(), truth.len()));
    }
    let n = est.len();
    let diff = est.as_slice().iter().zip(truth.as_slice()).filter(|(a, b)| a != b).count();
    Ok(diff.min(n - diff) as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverOptions {
    pub sdp: SdpOptions,
    /// Polish the rounded partition with [`ml_local_search`].
    pub refine: bool,
    pub max_moves: usize,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self { sdp: SdpOptions::default(), refine: false, max_moves: 10_000 }
    }
}

/// Second moment, centering, SDP, rounding, and optional refinement.
pub fn recover(batch: &SampleBatch, opts: &RecoverOptions) -> Result<RecoveryResult> {
    let cov = empirical_second_moment(batch)?;
    recover_from_covariance(&cov, opts)
}

pub fn recover_from_covariance(cov: &EmpiricalCovariance, opts: &RecoverOptions) -> Result<RecoveryResult> {
    let gram = center(cov);
    let sol = sdp_solve(&gram, &opts.sdp)?;
    let rounding = extract_partition(&sol.factor)?;
    let (estimate, refinement_moves) = if opts.refine {
        let refined = ml_local_search(cov, &rounding.partition, opts.max_moves)?;
        (refined.estimate, Some(refined.iterations))
    } else {
        (rounding.partition, None)
    };
    Ok(RecoveryResult {
        estimate,
        objective: sol.objective,
        iterations: sol.sweeps,
        converged: sol.converged,
        solver_trace: Some(sol.trace),
        rounding_fallback: rounding.used_fallback,
        refinement_moves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::sampler::{exact_sample, WeightTable};

    fn planted(part: &Partition) -> CenteredGram {
        let r = part.as_slice();
        let n = r.len();
        CenteredGram::from_matrix(Array2::from_shape_fn((n, n), |(i, j)| (r[i] * r[j]) as f64)).unwrap()
    }

    fn batch_of(rows: &[Vec<i8>]) -> SampleBatch {
        let n = rows[0].len();
        SampleBatch::new(n, rows.concat(), None).unwrap()
    }

    #[test]
    fn second_moment_examples() {
        let s = vec![1i8, -1, -1, 1, 1, -1];
        let cov = empirical_second_moment(&batch_of(std::slice::from_ref(&s))).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(cov.matrix()[[i, j]], (s[i] * s[j]) as f64);
            }
        }
        let neg: Vec<i8> = s.iter().map(|x| -x).collect();
        let cov2 = empirical_second_moment(&batch_of(&[s.clone(), neg])).unwrap();
        assert_eq!(cov.matrix(), cov2.matrix());
        assert_eq!(cov2.n_obs(), 2);
        let empty = SampleBatch::new(6, vec![], None).unwrap();
        assert!(empirical_second_moment(&empty).is_err());
    }

    #[test]
    fn centering_examples() {
        let id = EmpiricalCovariance { sigma_hat: Array2::eye(2), n_obs: 1 };
        let g = center(&id);
        assert_eq!(g.matrix(), &ndarray::arr2(&[[0.5, -0.5], [-0.5, 0.5]]));
        let ones = EmpiricalCovariance { sigma_hat: Array2::ones((5, 5)), n_obs: 1 };
        assert!(center(&ones).matrix().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn centering_preserves_balanced_objective() {
        let p = ModelParams::new(16, -0.5, 1.5).unwrap();
        let t = WeightTable::build(&p).unwrap();
        let mut rng = SeedSpec::new(3, 0).rng();
        let truth = Partition::random(16, &mut rng).unwrap();
        let batch = exact_sample(&t, &truth, SeedSpec::new(3, 1), 50).unwrap();
        let cov = empirical_second_moment(&batch).unwrap();
        let gram = center(&cov);
        for row in gram.matrix().outer_iter() {
            assert!(row.sum().abs() < 1e-9 * 16.0);
        }
        for _ in 0..100 {
            let r = Partition::random(16, &mut rng).unwrap();
            assert!((cov.quadratic_form(&r) - gram.quadratic_form(&r)).abs() < 1e-9);
        }
    }

    #[test]
    fn planted_rank_one_is_recovered() {
        let mut rng = SeedSpec::new(8, 0).rng();
        let truth = Partition::random(16, &mut rng).unwrap();
        let opts = SdpOptions { rank: Some(6), ..Default::default() };
        let sol = sdp_solve(&planted(&truth), &opts).unwrap();
        assert!((sol.objective - 256.0).abs() < 1e-6 * 256.0);
        assert!(sol.converged);
        let rounded = extract_partition(&sol.factor).unwrap();
        assert!(!rounded.used_fallback);
        assert!(rounded.partition.equivalent(&truth));
    }

    #[test]
    fn zero_objective_converges_immediately() {
        let g = CenteredGram::from_matrix(Array2::zeros((8, 8))).unwrap();
        let sol = sdp_solve(&g, &SdpOptions::default()).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.sweeps, 1);
        assert!(sol.converged);
    }

    #[test]
    fn sdp_rejects_bad_inputs() {
        let g = CenteredGram::from_matrix(Array2::zeros((4, 4))).unwrap();
        assert!(sdp_solve(&g, &SdpOptions { rank: Some(1), ..Default::default() }).is_err());
        assert!(sdp_solve(&g, &SdpOptions { tol: 0.0, ..Default::default() }).is_err());
        let mut bad = Array2::zeros((4, 4));
        bad[[0, 1]] = f64::NAN;
        assert!(matches!(CenteredGram::from_matrix(bad), Err(Error::Numeric(_))));
    }

    #[test]
    fn sdp_trace_is_monotone_on_random_psd() {
        let n = 32;
        for restart in 0..20u64 {
            let mut rng = SeedSpec::new(100, restart).rng();
            let b = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
            let psd = b.dot(&b.t());
            let cov = EmpiricalCovariance { sigma_hat: psd, n_obs: 1 };
            let gram = center(&cov);
            let opts = SdpOptions { seed: SeedSpec::new(restart, 0), ..Default::default() };
            let sol = sdp_solve(&gram, &opts).unwrap();
            let trace = &sol.trace;
            assert!(trace.windows(2).all(|w| w[1] >= w[0]), "restart {restart}");
            assert!((sol.objective - trace.last().unwrap()).abs() < 1e-8 * sol.objective.abs().max(1.0));
            for row in sol.factor.matrix().outer_iter() {
                assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rounding_exact_rank_one_factor() {
        let signs = [1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
        let v = Array2::from_shape_fn((6, 3), |(i, c)| if c == 0 { signs[i] } else { 0.0 });
        let rounded = extract_partition(&ElliptopeFactor::new(v).unwrap()).unwrap();
        assert_eq!(rounded.partition.as_slice(), &[1, -1, -1, 1, 1, -1]);
    }

    #[test]
    fn rounding_ties_prefer_small_index() {
        let p = balanced_from_scores(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(p.as_slice(), &[1, 1, -1, -1]);
        let p = balanced_from_scores(&[0.1, 0.7, 0.7, 0.7, -1.0, 0.7]).unwrap();
        assert_eq!(p.as_slice(), &[-1, 1, 1, 1, -1, -1]);
        let v = Array2::from_shape_fn((4, 2), |(_, c)| if c == 0 { 1.0 } else { 0.0 });
        let f = ElliptopeFactor::new(v).unwrap();
        let a = extract_partition(&f).unwrap();
        assert_eq!(a, extract_partition(&f).unwrap());
        assert_eq!(a.partition.as_slice(), &[1, 1, -1, -1]);
    }

    #[test]
    fn rounding_falls_back_without_eigengap() {
        // Rows e1, e1, e2, e2 give V^T V = 2 I: no separated leading direction.
        let v = ndarray::arr2(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let r = extract_partition(&ElliptopeFactor::new(v).unwrap()).unwrap();
        assert!(r.used_fallback);
        assert_eq!(r.partition.as_slice(), &[1, 1, -1, -1]);
    }

    #[test]
    fn factor_validation() {
        assert!(ElliptopeFactor::new(ndarray::arr2(&[[1.0, 1.0]])).is_err());
        assert!(ElliptopeFactor::new(ndarray::arr2(&[[0.6, 0.8]])).is_ok());
    }

    #[test]
    fn local_search_keeps_optimum() {
        let truth = Partition::new(vec![1, -1, 1, -1, -1, 1]).unwrap();
        let r = truth.as_slice();
        let cov = EmpiricalCovariance {
            sigma_hat: Array2::from_shape_fn((6, 6), |(i, j)| (r[i] * r[j]) as f64),
            n_obs: 1,
        };
        let res = ml_local_search(&cov, &truth, 100).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.converged);
        assert_eq!(res.estimate, truth);
        assert_eq!(res.objective, 36.0);
    }

    fn balanced_partitions(n: usize) -> Vec<Partition> {
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == n / 2 && m & 1 == 1)
            .map(|m| Partition::new((0..n).map(|i| if m >> i & 1 == 1 { 1 } else { -1 }).collect()).unwrap())
            .collect()
    }

    #[test]
    fn local_search_finds_enumerated_optimum() {
        let n = 12;
        let p = ModelParams::new(n, -0.5, 1.5).unwrap();
        let t = WeightTable::build(&p).unwrap();
        let mut rng = SeedSpec::new(21, 0).rng();
        let truth = Partition::random(n, &mut rng).unwrap();
        let batch = exact_sample(&t, &truth, SeedSpec::new(21, 1), 400).unwrap();
        let cov = empirical_second_moment(&batch).unwrap();
        let all = balanced_partitions(n);
        assert_eq!(all.len(), 462);
        let best = all
            .iter()
            .map(|r| cov.quadratic_form(r))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut hits = 0;
        for _ in 0..20 {
            let init = Partition::random(n, &mut rng).unwrap();
            let res = ml_local_search(&cov, &init, 1000).unwrap();
            assert!(res.objective >= cov.quadratic_form(&init) - 1e-9);
            let trace = res.solver_trace.as_ref().unwrap();
            assert!(trace.windows(2).all(|w| w[1] >= w[0]));
            if (res.objective - best).abs() < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 19, "hits {hits}");
    }

    #[test]
    fn argmax_does_not_depend_on_couplings() {
        let n = 10;
        let p = ModelParams::new(n, 0.3, 1.2).unwrap();
        let t = WeightTable::build(&p).unwrap();
        let truth = Partition::contiguous(n).unwrap();
        let batch = exact_sample(&t, &truth, SeedSpec::new(4, 0), 60).unwrap();
        let cov = empirical_second_moment(&batch).unwrap();
        let all = balanced_partitions(n);
        let argmax = |alpha: f64, beta: f64| {
            let params = ModelParams::new(n, alpha, beta).unwrap();
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (idx, r) in all.iter().enumerate() {
                let q = crate::model::coupling_matrix(&params, r).unwrap();
                let v = (cov.matrix() * &q).sum();
                if v > best.0 + 1e-12 {
                    best = (v, idx);
                }
            }
            best.1
        };
        let reference = argmax(0.3, 1.2);
        for &(a, b) in &[(-0.9, 1.0), (0.0, 0.5), (0.49, 0.5), (-2.0, 3.0)] {
            assert_eq!(argmax(a, b), reference, "alpha={a} beta={b}");
        }
    }

    #[test]
    fn error_metric() {
        let truth = Partition::new(vec![1, 1, 1, 1, -1, -1, -1, -1]).unwrap();
        assert_eq!(recovery_error(&truth, &truth).unwrap(), 0.0);
        assert_eq!(recovery_error(&truth.flipped(), &truth).unwrap(), 0.0);
        let swapped = Partition::new(vec![1, 1, 1, -1, 1, -1, -1, -1]).unwrap();
        assert_eq!(recovery_error(&swapped, &truth).unwrap(), 0.25);
        let other = Partition::new(vec![1, -1]).unwrap();
        assert!(recovery_error(&other, &truth).is_err());
    }

    #[test]
    fn noise_free_batch_recovers_truth() {
        let mut rng = SeedSpec::new(17, 0).rng();
        let truth = Partition::random(20, &mut rng).unwrap();
        let batch = batch_of(&[truth.as_slice().to_vec()]);
        let res = recover(&batch, &RecoverOptions::default()).unwrap();
        assert!(res.estimate.equivalent(&truth));
        assert_eq!(res, recover(&batch, &RecoverOptions::default()).unwrap());
    }

    #[test]
    fn sdp_bound_dominates_rounded_partition() {
        let p = ModelParams::new(24, -0.5, 1.5).unwrap();
        let t = WeightTable::build(&p).unwrap();
        let truth = Partition::contiguous(24).unwrap();
        let batch = exact_sample(&t, &truth, SeedSpec::new(6, 0), 30).unwrap();
        let opts = RecoverOptions { refine: true, ..Default::default() };
        let res = recover(&batch, &opts).unwrap();
        let gram = center(&empirical_second_moment(&batch).unwrap());
        assert!(res.objective >= gram.quadratic_form(&res.estimate) - 1e-6);
    }
}
