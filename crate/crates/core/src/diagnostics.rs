//! Chain-quality metrics.
//!
//! Every statistic at sample index `t` uses only the retained half of the
//! chain: samples `floor(t/2)..t`.
//!
//! The multivariate PSRF projects samples onto the `(n-1)`-dimensional
//! subspace parallel to the simplex before forming covariances, because the
//! raw `n x n` covariances are singular (rows sum to 1).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{ChainEnsemble, ChainTrace};

/// Index range `floor(t/2)..t` retained at sample index `t`.
pub fn retained_range(len: usize, t: usize) -> Result<std::ops::Range<usize>> {
    if t == 0 || t > len {
        return Err(Error::SliceOutOfRange { t, len });
    }
    Ok(t / 2..t)
}

/// Rows of `trace` retained at sample index `t`, as a row-major view.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    trace: &'a ChainTrace,
    start: usize,
    end: usize,
}

impl<'a> SampleView<'a> {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn rows(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        let trace = self.trace;
        (self.start..self.end).map(move |t| trace.row(t))
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.trace.component(i, self.start..self.end)
    }

    /// Componentwise mean and unbiased variance (0 for a single sample).
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.trace.dim();
        let len = self.len() as f64;
        let mut mean = vec![0.0; n];
        for row in self.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= len);
        let mut var = vec![0.0; n];
        if self.len() > 1 {
            for row in self.rows() {
                for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= len - 1.0);
        }
        (mean, var)
    }
}

pub fn burn_in_slice(trace: &ChainTrace, t: usize) -> Result<SampleView<'_>> {
    let range = retained_range(trace.len(), t)?;
    Ok(SampleView {
        trace,
        start: range.start,
        end: range.end,
    })
}

/// Biased sample autocorrelation of component `component` over the retained
/// slice at `t`, one value per lag. A constant series has no defined
/// autocorrelation and yields `None` for every lag.
pub fn autocorrelation(
    trace: &ChainTrace,
    component: usize,
    lags: &[usize],
    t: usize,
) -> Result<Vec<Option<f64>>> {
    if component >= trace.dim() {
        return Err(Error::ComponentOutOfRange {
            component,
            n: trace.dim(),
        });
    }
    let xs = burn_in_slice(trace, t)?.component(component);
    if let Some(&lag) = lags.iter().find(|&&l| l >= xs.len()) {
        return Err(Error::LagTooLarge { lag, len: xs.len() });
    }
    Ok(series_autocorrelation(&xs, lags))
}

/// Biased autocorrelation of a raw series at the given lags.
pub fn series_autocorrelation(xs: &[f64], lags: &[usize]) -> Vec<Option<f64>> {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let centered: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let denom: f64 = centered.iter().map(|c| c * c).sum();
    if denom == 0.0 || !denom.is_finite() {
        return vec![None; lags.len()];
    }
    lags.iter()
        .map(|&lag| {
            if lag == 0 {
                return Some(1.0);
            }
            let num: f64 = centered.iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum();
            Some(num / denom)
        })
        .collect()
}

/// Orthonormal basis of the subspace `{x : sum x = 0}` as an `n x (n-1)` matrix.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    q: DMatrix<f64>,
}

impl ProjectionBasis {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn from_matrix(q: DMatrix<f64>) -> Self {
        ProjectionBasis { q }
    }

    /// `Q^T x` for a row of length `n`.
    pub fn project(&self, x: &[f64]) -> DVector<f64> {
        self.q.tr_mul(&DVector::from_column_slice(x))
    }
}

/// Q factor of the reduced QR decomposition of the `n x (n-1)` matrix whose
/// column `k` holds `-(n-1)` in row `k` and `1` elsewhere. Columns are
/// sign-normalized so that `R` has a positive diagonal.
pub fn projection_basis(n: usize) -> Result<ProjectionBasis> {
    if n < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: n,
        });
    }
    let a = DMatrix::from_fn(n, n - 1, |i, k| if i == k { -((n - 1) as f64) } else { 1.0 });
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..n - 1 {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    Ok(ProjectionBasis { q })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpsrfResult {
    /// Mean within-chain covariance of the projected samples.
    pub w: DMatrix<f64>,
    /// Covariance of the projected chain means.
    pub b_over_t: DMatrix<f64>,
    /// Pooled variance estimate `(T-1)/T W + (1 + 1/M) B/T`.
    pub v_hat: DMatrix<f64>,
    pub r_hat: f64,
    /// Retained samples per chain.
    pub retained: usize,
    pub chains: usize,
    /// Set when `W` needed a diagonal jitter to factorize.
    pub jittered: bool,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Largest `lambda` with `det(lambda W - V) = 0`, via `L^-1 V L^-T` where
/// `W = L L^T`. Returns the eigenvalue and whether `W` needed jitter.
fn largest_generalized_eigenvalue(w: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(f64, bool)> {
    let dim = w.nrows();
    let (chol, jittered) = match w.clone().cholesky() {
        Some(c) => (c, false),
        None => {
            let jitter = 1e-12 * w.trace() / dim as f64;
            let shifted = w + DMatrix::identity(dim, dim) * jitter;
            match (jitter > 0.0).then(|| shifted.cholesky()).flatten() {
                Some(c) => (c, true),
                None => {
                    return Err(Error::SingularWithinCovariance {
                        detail: format!("Cholesky failed with trace(W) = {}", w.trace()),
                    })
                }
            }
        }
    };
    let l = chol.l();
    let l_inv_v = l
        .solve_lower_triangular(v)
        .ok_or_else(|| Error::SingularWithinCovariance { detail: "triangular solve failed".into() })?;
    let mut c = l
        .solve_lower_triangular(&l_inv_v.transpose())
        .ok_or_else(|| Error::SingularWithinCovariance { detail: "triangular solve failed".into() })?;
    symmetrize(&mut c);
    let eig = SymmetricEigen::new(c);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((max, jittered))
}

/// Projected multivariate PSRF at sample index `t`, using the default basis.
pub fn mpsrf(ensemble: &ChainEnsemble, t: usize) -> Result<MpsrfResult> {
    let basis = projection_basis(ensemble.dim())?;
    mpsrf_with_basis(ensemble, t, &basis)
}

/// Projected multivariate PSRF with an explicit orthonormal basis.
pub fn mpsrf_with_basis(
    ensemble: &ChainEnsemble,
    t: usize,
    basis: &ProjectionBasis,
) -> Result<MpsrfResult> {
    let chains = ensemble.num_chains();
    if chains < 2 {
        return Err(Error::TooFewChains {
            needed: 2,
            found: chains,
        });
    }
    let range = retained_range(ensemble.steps(), t)?;
    let len = range.len();
    if len < 2 {
        return Err(Error::SliceTooShort { len });
    }
    let dim = basis.matrix().ncols();

    let mut w = DMatrix::<f64>::zeros(dim, dim);
    let mut means = Vec::with_capacity(chains);
    for chain in ensemble.chains() {
        let projected: Vec<DVector<f64>> = range.clone().map(|s| basis.project(chain.row(s))).collect();
        let mean = projected.iter().fold(DVector::zeros(dim), |acc, y| acc + y) / len as f64;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for y in &projected {
            let d = y - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        w += cov / (len as f64 - 1.0);
        means.push(mean);
    }
    w /= chains as f64;

    let grand = means.iter().fold(DVector::zeros(dim), |acc, m| acc + m) / chains as f64;
    let mut b_over_t = DMatrix::<f64>::zeros(dim, dim);
    for m in &means {
        let d = m - &grand;
        b_over_t.ger(1.0, &d, &d, 1.0);
    }
    b_over_t /= chains as f64 - 1.0;

    let tf = len as f64;
    let mut v_hat = &w * ((tf - 1.0) / tf) + &b_over_t * (1.0 + 1.0 / chains as f64);
    symmetrize(&mut w);
    symmetrize(&mut b_over_t);
    symmetrize(&mut v_hat);

    let (r_hat, jittered) = largest_generalized_eigenvalue(&w, &v_hat)?;
    Ok(MpsrfResult {
        w,
        b_over_t,
        v_hat,
        r_hat,
        retained: len,
        chains,
        jittered,
    })
}

/// `count` equally spaced sample indices ending at `steps`
/// (`round(k * steps / count)` for `k = 1..=count`, deduplicated, all >= 1).
pub fn checkpoints(steps: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=count.max(1))
        .map(|k| ((k * steps) as f64 / count.max(1) as f64).round() as usize)
        .map(|t| t.clamp(1, steps.max(1)))
        .collect();
    out.dedup();
    out
}

/// Mean, 10th and 90th percentile of a set of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Linear-interpolation percentile (`q` in [0, 1]) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl Band {
    pub fn from_values(values: &[f64]) -> Self {
        Band {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p10: percentile(values, 0.1),
            p90: percentile(values, 0.9),
        }
    }
}

/// Per-checkpoint errors of the retained-slice moments against references.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceCurves {
    pub checkpoints: Vec<usize>,
    /// `[checkpoint][chain]` l2 error of the componentwise mean.
    pub mean_errors: Vec<Vec<f64>>,
    /// `[checkpoint][chain]` l2 error of the componentwise variance.
    pub var_errors: Vec<Vec<f64>>,
    pub mean_band: Vec<Band>,
    pub var_band: Vec<Band>,
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn statistic_convergence(
    ensemble: &ChainEnsemble,
    reference_mean: &[f64],
    reference_var: &[f64],
    checkpoints: &[usize],
) -> Result<ConvergenceCurves> {
    let n = ensemble.dim();
    crate::simplex::check_dim(n, reference_mean.len())?;
    crate::simplex::check_dim(n, reference_var.len())?;
    let mut mean_errors = Vec::with_capacity(checkpoints.len());
    let mut var_errors = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let mut me = Vec::with_capacity(ensemble.num_chains());
        let mut ve = Vec::with_capacity(ensemble.num_chains());
        for chain in ensemble.chains() {
            let (mean, var) = burn_in_slice(chain, t)?.moments();
            me.push(l2_distance(&mean, reference_mean));
            ve.push(l2_distance(&var, reference_var));
        }
        mean_errors.push(me);
        var_errors.push(ve);
    }
    Ok(ConvergenceCurves {
        checkpoints: checkpoints.to_vec(),
        mean_band: mean_errors.iter().map(|e| Band::from_values(e)).collect(),
        var_band: var_errors.iter().map(|e| Band::from_values(e)).collect(),
        mean_errors,
        var_errors,
    })
}

/// Componentwise mean and variance pooled over every chain's retained slice
/// at `t` (the mean of per-chain moments; slices have equal length).
pub fn pooled_moments(ensemble: &ChainEnsemble, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = ensemble.dim();
    let mut count = 0usize;
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for chain in ensemble.chains() {
        for row in burn_in_slice(chain, t)?.rows() {
            count += 1;
            for ((s, q), x) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(row) {
                *s += x;
                *q += x * x;
            }
        }
    }
    let c = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
    let var = sum_sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| if count > 1 { (q - c * m * m) / (c - 1.0) } else { 0.0 })
        .collect();
    Ok((mean, var))
}

/// Per-lag autocorrelation across chains: values per chain plus bands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutocorrSummary {
    pub component: usize,
    pub lags: Vec<usize>,
    /// `[chain][lag]`; `None` for constant chains.
    pub per_chain: Vec<Vec<Option<f64>>>,
    /// Bands over chains with a defined value; `None` when no chain has one.
    pub band: Vec<Option<Band>>,
}

pub fn autocorrelation_summary(
    ensemble: &ChainEnsemble,
    component: usize,
    lags: &[usize],
    t: usize,
) -> Result<AutocorrSummary> {
    let per_chain = ensemble
        .chains()
        .iter()
        .map(|c| autocorrelation(c, component, lags, t))
        .collect::<Result<Vec<_>>>()?;
    let band = (0..lags.len())
        .map(|k| {
            let vals: Vec<f64> = per_chain.iter().filter_map(|c| c[k]).collect();
            (!vals.is_empty()).then(|| Band::from_values(&vals))
        })
        .collect();
    Ok(AutocorrSummary {
        component,
        lags: lags.to_vec(),
        per_chain,
        band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::{sample_dirichlet, DirichletParams};
    use crate::trace::{SamplerKind, TraceMetadata};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn iid_trace(alpha: &DirichletParams, steps: usize, seed: u64) -> ChainTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trace = ChainTrace::with_capacity(alpha.dim(), steps, TraceMetadata::new(SamplerKind::Exact));
        for t in 0..steps {
            trace.push(&sample_dirichlet(alpha, &mut rng), t as f64);
        }
        trace
    }

    fn trace_from(rows: Vec<Vec<f64>>) -> ChainTrace {
        let ts = (0..rows.len()).map(|t| t as f64).collect();
        ChainTrace::from_rows(rows, ts, TraceMetadata::new(SamplerKind::Exact)).unwrap()
    }

    #[test]
    fn burn_in_examples() {
        let alpha = DirichletParams::symmetric(3, 2.0).unwrap();
        let trace = iid_trace(&alpha, 5000, 1);
        let v = burn_in_slice(&trace, 2).unwrap();
        assert_eq!((v.start(), v.len()), (1, 1));
        let v = burn_in_slice(&trace, 1).unwrap();
        assert_eq!((v.start(), v.len()), (0, 1));
        let v = burn_in_slice(&trace, 5000).unwrap();
        assert_eq!((v.start(), v.len()), (2500, 2500));
        assert!(burn_in_slice(&trace, 0).is_err());
        assert!(burn_in_slice(&trace, 5001).is_err());
    }

    #[test]
    fn autocorrelation_basics() {
        let alpha = DirichletParams::symmetric(4, 2.0).unwrap();
        let trace = iid_trace(&alpha, 8000, 2);
        let rho = autocorrelation(&trace, 0, &[0, 1, 5, 10], 8000).unwrap();
        assert_eq!(rho[0], Some(1.0));
        let bound = 4.0 / (4000f64).sqrt();
        for r in &rho[1..] {
            assert!(r.unwrap().abs() < bound, "{r:?}");
        }
        assert!(matches!(
            autocorrelation(&trace, 4, &[1], 8000),
            Err(Error::ComponentOutOfRange { .. })
        ));
        assert!(matches!(
            autocorrelation(&trace, 0, &[4000], 8000),
            Err(Error::LagTooLarge { .. })
        ));
    }

    #[test]
    fn alternating_series_tends_to_minus_one() {
        let short: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let long: Vec<f64> = (0..10_000).map(|i| (i % 2) as f64).collect();
        let a = series_autocorrelation(&short, &[1])[0].unwrap();
        let b = series_autocorrelation(&long, &[1])[0].unwrap();
        assert!(b < a && b < -0.999, "{a} {b}");
    }

    #[test]
    fn constant_series_has_no_autocorrelation() {
        let rows = vec![vec![0.5, 0.5]; 10];
        assert_eq!(autocorrelation(&trace_from(rows), 0, &[0, 1], 10).unwrap(), vec![None, None]);
    }

    #[test]
    fn projection_basis_is_orthonormal_and_orthogonal_to_ones() {
        for n in 2..=20 {
            let q = projection_basis(n).unwrap();
            let m = q.matrix();
            let gram = m.tr_mul(m);
            assert!((gram - DMatrix::identity(n - 1, n - 1)).abs().max() < 1e-12);
            let ones = DVector::from_element(n, 1.0);
            assert!(m.tr_mul(&ones).abs().max() < 1e-12);
        }
    }

    #[test]
    fn projected_vertices_form_equilateral_triangle() {
        let q = projection_basis(3).unwrap();
        let v: Vec<DVector<f64>> = (0..3)
            .map(|i| {
                let mut e = [0.0; 3];
                e[i] = 1.0;
                q.project(&e)
            })
            .collect();
        let d01 = (&v[0] - &v[1]).norm();
        let d02 = (&v[0] - &v[2]).norm();
        let d12 = (&v[1] - &v[2]).norm();
        assert!((d01 - d02).abs() < 1e-12 && (d01 - d12).abs() < 1e-12);
        assert!((d01 - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_chains_give_shrink_factor() {
        let alpha = DirichletParams::symmetric(5, 2.0).unwrap();
        let chain = iid_trace(&alpha, 400, 3);
        let ensemble = ChainEnsemble::new(vec![chain; 4]).unwrap();
        let result = mpsrf(&ensemble, 400).unwrap();
        assert!(result.b_over_t.abs().max() == 0.0);
        assert!((result.r_hat - 199.0 / 200.0).abs() < 1e-10, "{}", result.r_hat);
    }

    #[test]
    fn mpsrf_errors() {
        let alpha = DirichletParams::symmetric(3, 2.0).unwrap();
        let one = ChainEnsemble::new(vec![iid_trace(&alpha, 10, 4)]).unwrap();
        assert!(matches!(mpsrf(&one, 10), Err(Error::TooFewChains { .. })));
        let two = ChainEnsemble::new(vec![iid_trace(&alpha, 10, 4), iid_trace(&alpha, 10, 5)]).unwrap();
        assert!(matches!(mpsrf(&two, 2), Err(Error::SliceTooShort { len: 1 })));
        // constant chains: W is exactly zero, jitter cannot help
        let flat = trace_from(vec![vec![0.2, 0.3, 0.5]; 10]);
        let ens = ChainEnsemble::new(vec![flat.clone(), flat]).unwrap();
        assert!(matches!(mpsrf(&ens, 10), Err(Error::SingularWithinCovariance { .. })));
        assert!(ChainEnsemble::new(vec![iid_trace(&alpha, 10, 4), iid_trace(&alpha, 11, 4)]).is_err());
    }

    /// Gelman-Rubin scalar PSRF, written directly from its definition.
    fn scalar_psrf(chains: &[Vec<f64>]) -> f64 {
        let m = chains.len() as f64;
        let t = chains[0].len() as f64;
        let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / t).collect();
        let grand = means.iter().sum::<f64>() / m;
        let w = chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (t - 1.0))
            .sum::<f64>()
            / m;
        let b_over_t = means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
        ((t - 1.0) / t * w + (1.0 + 1.0 / m) * b_over_t) / w
    }

    #[test]
    fn two_dimensional_mpsrf_matches_scalar_psrf() {
        let alpha = DirichletParams::new(vec![2.0, 3.0]).unwrap();
        let chains: Vec<ChainTrace> = (0..6).map(|s| iid_trace(&alpha, 300, 10 + s)).collect();
        let ensemble = ChainEnsemble::new(chains.clone()).unwrap();
        let r = mpsrf(&ensemble, 300).unwrap().r_hat;
        // projection onto (1, -1)/sqrt(2) is an affine rescaling of pi_0
        let series: Vec<Vec<f64>> = chains.iter().map(|c| c.component(0, 150..300)).collect();
        assert!((r - scalar_psrf(&series)).abs() < 1e-10);
    }

    #[test]
    fn iid_dirichlet_mpsrf_near_one() {
        let alpha = DirichletParams::symmetric(10, 2.0).unwrap();
        let chains: Vec<ChainTrace> = (0..10).map(|s| iid_trace(&alpha, 2000, 100 + s)).collect();
        let r = mpsrf(&ChainEnsemble::new(chains).unwrap(), 2000).unwrap().r_hat;
        assert!((1.0..=1.05).contains(&r), "{r}");
    }

    #[test]
    fn checkpoint_grid() {
        let c = checkpoints(5000, 25);
        assert_eq!(c.len(), 25);
        assert_eq!(c[0], 200);
        assert_eq!(c[24], 5000);
        assert!(c.windows(2).all(|w| w[1] - w[0] == 200));
        assert_eq!(checkpoints(3, 25), vec![1, 2, 3]);
    }

    #[test]
    fn percentiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0];
        assert_eq!(percentile(&v, 0.1), 2.0);
        assert_eq!(percentile(&v, 0.9), 10.0);
        assert_eq!(percentile(&[3.0, 1.0], 0.5), 2.0);
    }

    #[test]
    fn self_reference_has_zero_final_error() {
        let alpha = DirichletParams::symmetric(4, 2.0).unwrap();
        let chain = iid_trace(&alpha, 1000, 20);
        let (mean, var) = burn_in_slice(&chain, 1000).unwrap().moments();
        let ens = ChainEnsemble::new(vec![chain]).unwrap();
        let curves = statistic_convergence(&ens, &mean, &var, &checkpoints(1000, 10)).unwrap();
        assert_eq!(curves.mean_errors.last().unwrap()[0], 0.0);
        assert_eq!(curves.var_errors.last().unwrap()[0], 0.0);
        assert!(curves.mean_errors[0][0] > 0.0);
    }

    #[test]
    fn iid_mean_error_decays_at_root_t_rate() {
        let alpha = DirichletParams::symmetric(10, 2.0).unwrap();
        let chains: Vec<ChainTrace> = (0..10).map(|s| iid_trace(&alpha, 5000, 200 + s)).collect();
        let ens = ChainEnsemble::new(chains).unwrap();
        let curves = statistic_convergence(&ens, &alpha.mean(), &alpha.variance(), &checkpoints(5000, 25)).unwrap();
        let xs: Vec<f64> = curves.checkpoints.iter().map(|&t| (t as f64).ln()).collect();
        let ys: Vec<f64> = curves.mean_band.iter().map(|b| b.mean.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 25.0, ys.iter().sum::<f64>() / 25.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((-0.7..=-0.3).contains(&slope), "slope {slope}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn mpsrf_invariant_to_coordinate_permutation_and_basis(
            seed in any::<u64>(),
            n in 3usize..7,
            rotation_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let alpha = DirichletParams::new((0..n).map(|i| 1.0 + i as f64).collect()).unwrap();
            let chains: Vec<ChainTrace> = (0..4).map(|s| iid_trace(&alpha, 60, seed.wrapping_add(s))).collect();
            let base = mpsrf(&ChainEnsemble::new(chains.clone()).unwrap(), 60).unwrap().r_hat;

            let mut rng = ChaCha8Rng::seed_from_u64(rotation_seed);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<ChainTrace> = chains.iter().map(|c| {
                trace_from(c.rows().map(|r| perm.iter().map(|&i| r[i]).collect()).collect())
            }).collect();
            let r_perm = mpsrf(&ChainEnsemble::new(permuted).unwrap(), 60).unwrap().r_hat;
            prop_assert!((base - r_perm).abs() < 1e-10, "{} vs {}", base, r_perm);

            // any other orthonormal basis of the same subspace: Q times a random orthogonal matrix
            let q = projection_basis(n).unwrap();
            let g = DMatrix::from_fn(n - 1, n - 1, |_, _| rand::Rng::random::<f64>(&mut rng) - 0.5);
            let rot = g.qr().q();
            let other = ProjectionBasis::from_matrix(q.matrix() * rot);
            let r_rot = mpsrf_with_basis(&ChainEnsemble::new(chains).unwrap(), 60, &other).unwrap().r_hat;
            prop_assert!((base - r_rot).abs() < 1e-10, "{} vs {}", base, r_rot);
        }

        #[test]
        fn covariances_are_exactly_symmetric(seed in any::<u64>()) {
            let alpha = DirichletParams::symmetric(6, 1.5).unwrap();
            let chains: Vec<ChainTrace> = (0..3).map(|s| iid_trace(&alpha, 40, seed.wrapping_add(s))).collect();
            let res = mpsrf(&ChainEnsemble::new(chains).unwrap(), 40).unwrap();
            prop_assert!(res.w == res.w.transpose());
            prop_assert!(res.v_hat == res.v_hat.transpose());
            prop_assert!(res.r_hat >= (19.0 / 20.0) - 1e-12);
        }
    }
}
