//! Simplex and Dirichlet primitives.
//!
//! Densities are exposed in log-space only. Dirichlet draws are built from
//! log-gamma variates and normalized with a max shift, so concentrations far
//! below 1 do not collapse every coordinate to zero.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` accepted when constructing a [`SimplexPoint`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// A probability vector on the (n-1)-simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    /// Validates and renormalizes `coords`. Rejects negative or non-finite
    /// entries and sums further than [`SIMPLEX_TOLERANCE`] from 1.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty);
        }
        for (index, &value) in coords.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidCoordinate { index, value });
            }
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::NotOnSimplex { sum });
        }
        let coords = if sum == 1.0 {
            coords
        } else {
            coords.into_iter().map(|c| c / sum).collect()
        };
        Ok(SimplexPoint { coords })
    }

    /// The barycenter (1/n, ..., 1/n).
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty);
        }
        Ok(SimplexPoint {
            coords: vec![1.0 / n as f64; n],
        })
    }

    /// Caller guarantees nonnegative finite entries summing to 1 up to rounding.
    pub(crate) fn from_normalized(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite() && *c >= 0.0));
        debug_assert!((coords.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE);
        SimplexPoint { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.coords
    }

    /// True when some coordinate is exactly zero.
    pub fn on_boundary(&self) -> bool {
        self.coords.iter().any(|&c| c == 0.0)
    }
}

impl AsRef<[f64]> for SimplexPoint {
    fn as_ref(&self) -> &[f64] {
        &self.coords
    }
}

/// Dirichlet concentration vector; every component is finite and > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Empty);
        }
        for (index, &value) in alpha.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidConcentration { index, value });
            }
        }
        Ok(DirichletParams { alpha })
    }

    pub fn symmetric(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Componentwise mean `alpha_i / sum(alpha)`.
    pub fn mean(&self) -> Vec<f64> {
        let total = self.total();
        self.alpha.iter().map(|a| a / total).collect()
    }

    /// Componentwise variance of the Dirichlet marginals.
    pub fn variance(&self) -> Vec<f64> {
        let total = self.total();
        self.alpha
            .iter()
            .map(|a| a * (total - a) / (total * total * (total + 1.0)))
            .collect()
    }

    /// `sum(ln Gamma(alpha_i)) - ln Gamma(sum(alpha))`, the log of the
    /// normalizing constant of the unnormalized density `prod pi_i^(alpha_i - 1)`.
    pub fn log_normalizer(&self) -> f64 {
        let parts: f64 = sorted_sum(self.alpha.iter().map(|&a| ln_gamma(a)).collect());
        parts - ln_gamma(sorted_sum(self.alpha.clone()))
    }
}

/// Nonnegative integer counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountVector {
    counts: Vec<u64>,
}

impl CountVector {
    pub fn new(counts: Vec<u64>) -> Self {
        CountVector { counts }
    }

    pub fn zeros(n: usize) -> Self {
        CountVector { counts: vec![0; n] }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

impl From<Vec<u64>> for CountVector {
    fn from(counts: Vec<u64>) -> Self {
        CountVector::new(counts)
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Sums after sorting so the result does not depend on input order.
pub(crate) fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// `(alpha_i - 1) ln pi_i` with the `0 * ln 0 = 0` convention at `alpha_i = 1`.
fn log_kernel_term(index: usize, p: f64, a: f64) -> Result<f64> {
    if p > 0.0 {
        Ok((a - 1.0) * p.ln())
    } else if a == 1.0 {
        Ok(0.0)
    } else if a > 1.0 {
        Ok(f64::NEG_INFINITY)
    } else {
        Err(Error::DivergentDensity { index, alpha: a })
    }
}

/// `sum_i (alpha_i - 1) ln pi_i`, the Dirichlet log-density without its constant.
pub fn dirichlet_log_kernel(pi: &SimplexPoint, alpha: &DirichletParams) -> Result<f64> {
    check_dim(alpha.dim(), pi.dim())?;
    let terms = pi
        .coords()
        .iter()
        .zip(alpha.alpha())
        .enumerate()
        .map(|(i, (&p, &a))| log_kernel_term(i, p, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(sorted_sum(terms))
}

/// Log of `Gamma(sum alpha) / prod Gamma(alpha_i) * prod pi_i^(alpha_i - 1)`.
///
/// Returns negative infinity on a face where some `alpha_i > 1` has
/// `pi_i = 0`. A zero coordinate with `alpha_i < 1` is an error since the
/// density diverges there.
pub fn dirichlet_log_density(pi: &SimplexPoint, alpha: &DirichletParams) -> Result<f64> {
    check_dim(alpha.dim(), pi.dim())?;
    let mut terms = Vec::with_capacity(pi.dim());
    for (i, (&p, &a)) in pi.coords().iter().zip(alpha.alpha()).enumerate() {
        terms.push(log_kernel_term(i, p, a)? - ln_gamma(a));
    }
    Ok(ln_gamma(sorted_sum(alpha.alpha().to_vec())) + sorted_sum(terms))
}

/// Draws `ln G` with `G ~ Gamma(shape, 1)`.
///
/// For `shape < 1` uses `G = G' * U^(1/shape)` with `G' ~ Gamma(shape + 1)`,
/// which stays finite in log-space where `G` itself underflows.
pub(crate) fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let gamma = Gamma::new(shape, 1.0).expect("shape validated by caller");
        gamma.sample(rng).ln()
    } else {
        let gamma = Gamma::new(shape + 1.0, 1.0).expect("shape validated by caller");
        // 1 - U lies in (0, 1], keeping the log finite.
        let u: f64 = 1.0 - rng.random::<f64>();
        gamma.sample(rng).ln() + u.ln() / shape
    }
}

/// Normalizes log-weights onto the simplex with a max shift.
pub(crate) fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Samples from `Dir(alpha)` by normalizing independent gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &DirichletParams, rng: &mut R) -> SimplexPoint {
    let logs: Vec<f64> = alpha
        .alpha()
        .iter()
        .map(|&a| log_gamma_variate(a, rng))
        .collect();
    SimplexPoint::from_normalized(normalize_log_weights(&logs))
}

/// `sum_i m_i ln pi_i`; no multinomial coefficient.
pub fn multinomial_log_likelihood(m: &CountVector, pi: &SimplexPoint) -> Result<f64> {
    check_dim(m.dim(), pi.dim())?;
    let mut total = 0.0;
    for (&count, &p) in m.counts().iter().zip(pi.coords()) {
        if count == 0 {
            continue;
        }
        if p == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += count as f64 * p.ln();
    }
    Ok(total)
}

/// Conjugate update `alpha + m`.
pub fn conjugate_posterior(alpha: &DirichletParams, m: &CountVector) -> Result<DirichletParams> {
    check_dim(alpha.dim(), m.dim())?;
    let updated = alpha
        .alpha()
        .iter()
        .zip(m.counts())
        .map(|(&a, &c)| a + c as f64)
        .collect();
    Ok(DirichletParams { alpha: updated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point(c: &[f64]) -> SimplexPoint {
        SimplexPoint::new(c.to_vec()).unwrap()
    }

    fn params(a: &[f64]) -> DirichletParams {
        DirichletParams::new(a.to_vec()).unwrap()
    }

    fn empirical_mean(alpha: &DirichletParams, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = vec![0.0; alpha.dim()];
        for _ in 0..draws {
            let p = sample_dirichlet(alpha, &mut rng);
            for (a, c) in acc.iter_mut().zip(p.coords()) {
                *a += c;
            }
        }
        acc.iter().map(|a| a / draws as f64).collect()
    }

    #[test]
    fn simplex_point_renormalizes_within_tolerance() {
        let p = SimplexPoint::new(vec![0.5, 0.5 + 1e-10]).unwrap();
        assert!((p.coords().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(matches!(
            SimplexPoint::new(vec![0.5, 0.6]),
            Err(Error::NotOnSimplex { .. })
        ));
        assert!(matches!(
            SimplexPoint::new(vec![-0.1, 1.1]),
            Err(Error::InvalidCoordinate { index: 0, .. })
        ));
        assert!(SimplexPoint::new(vec![]).is_err());
    }

    #[test]
    fn alpha_must_be_positive() {
        assert!(DirichletParams::new(vec![1.0, 0.0]).is_err());
        assert!(DirichletParams::new(vec![1.0, f64::NAN]).is_err());
        assert!(DirichletParams::new(vec![]).is_err());
    }

    #[test]
    fn uniform_density_on_two_simplex() {
        let v = dirichlet_log_density(&point(&[1.0 / 3.0; 3]), &params(&[1.0, 1.0, 1.0])).unwrap();
        assert_relative_eq!(v, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn beta_two_two_at_half() {
        let v = dirichlet_log_density(&point(&[0.5, 0.5]), &params(&[2.0, 2.0])).unwrap();
        assert_relative_eq!(v, 1.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn density_matches_termwise_evaluation() {
        // Gamma(6) / Gamma(2)^3 * 0.2 * 0.5 * 0.3 = 120 * 0.03 = 3.6
        let v = dirichlet_log_density(&point(&[0.2, 0.5, 0.3]), &params(&[2.0, 2.0, 2.0])).unwrap();
        assert_relative_eq!(v, 3.6f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn boundary_policy() {
        let face = point(&[0.0, 0.5, 0.5]);
        assert_eq!(
            dirichlet_log_density(&face, &params(&[2.0, 2.0, 2.0])).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(dirichlet_log_density(&face, &params(&[1.0, 2.0, 2.0]))
            .unwrap()
            .is_finite());
        assert!(matches!(
            dirichlet_log_density(&face, &params(&[0.5, 2.0, 2.0])),
            Err(Error::DivergentDensity { index: 0, .. })
        ));
        assert!(matches!(
            dirichlet_log_density(&face, &params(&[2.0, 2.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn concentrated_dirichlet_mean() {
        let mean = empirical_mean(&params(&[1e6, 1e6]), 10_000, 1);
        for m in mean {
            assert!((m - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn symmetric_dirichlet_mean() {
        let mean = empirical_mean(&params(&[2.0, 2.0, 2.0]), 100_000, 2);
        for m in mean {
            assert!((m - 1.0 / 3.0).abs() < 0.005, "{m}");
        }
    }

    #[test]
    fn asymmetric_dirichlet_mean() {
        let mean = empirical_mean(&params(&[2.0, 4.0, 2.0]), 100_000, 3);
        for (m, e) in mean.iter().zip([0.25, 0.5, 0.25]) {
            assert!((m - e).abs() < 0.005, "{m} vs {e}");
        }
    }

    #[test]
    fn multinomial_likelihood_examples() {
        let pi = point(&[0.2, 0.5, 0.3]);
        assert_eq!(multinomial_log_likelihood(&CountVector::zeros(3), &pi).unwrap(), 0.0);
        assert_relative_eq!(
            multinomial_log_likelihood(&vec![0, 2, 0].into(), &pi).unwrap(),
            2.0 * 0.5f64.ln()
        );
        assert_relative_eq!(
            multinomial_log_likelihood(&vec![1, 1].into(), &point(&[0.3, 0.7])).unwrap(),
            0.21f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(
            multinomial_log_likelihood(&vec![1, 1].into(), &point(&[0.0, 1.0])).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn conjugate_update_examples() {
        let up = |a: &[f64], m: Vec<u64>| {
            conjugate_posterior(&params(a), &m.into()).unwrap().alpha().to_vec()
        };
        assert_eq!(up(&[2.0, 2.0, 2.0], vec![0, 2, 0]), vec![2.0, 4.0, 2.0]);
        assert_eq!(up(&[1.0, 1.0], vec![0, 0]), vec![1.0, 1.0]);
        assert_eq!(up(&[0.5, 0.5], vec![3, 1]), vec![3.5, 1.5]);
    }

    #[test]
    fn log_normalizer_matches_beta_function() {
        // B(2, 3) = 1/12
        assert_relative_eq!(params(&[2.0, 3.0]).log_normalizer(), (1.0f64 / 12.0).ln(), epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn samples_stay_on_simplex(
            alpha in prop::collection::vec(prop_oneof![0.01f64..1.0, 1.0f64..1e6], 2..12),
            seed in any::<u64>(),
        ) {
            let alpha = DirichletParams::new(alpha).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = sample_dirichlet(&alpha, &mut rng);
            prop_assert!(p.coords().iter().all(|c| c.is_finite() && *c >= 0.0));
            prop_assert!((p.coords().iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE);
        }

        #[test]
        fn density_is_exchangeable(
            raw in prop::collection::vec((0.01f64..1.0, 0.1f64..10.0), 2..10),
            shuffle_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let total: f64 = raw.iter().map(|r| r.0).sum();
            let coords: Vec<f64> = raw.iter().map(|r| r.0 / total).collect();
            let alpha: Vec<f64> = raw.iter().map(|r| r.1).collect();
            let mut order: Vec<usize> = (0..coords.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            let base = dirichlet_log_density(
                &SimplexPoint::from_normalized(coords.clone()),
                &DirichletParams::new(alpha.clone()).unwrap(),
            ).unwrap();
            let permuted = dirichlet_log_density(
                &SimplexPoint::from_normalized(order.iter().map(|&i| coords[i]).collect()),
                &DirichletParams::new(order.iter().map(|&i| alpha[i]).collect()).unwrap(),
            ).unwrap();
            prop_assert_eq!(base.to_bits(), permuted.to_bits());
        }

        #[test]
        fn conjugate_update_with_zero_counts_is_identity(
            alpha in prop::collection::vec(0.01f64..100.0, 1..10),
        ) {
            let n = alpha.len();
            let a = DirichletParams::new(alpha).unwrap();
            prop_assert_eq!(conjugate_posterior(&a, &CountVector::zeros(n)).unwrap(), a);
        }
    }
}
