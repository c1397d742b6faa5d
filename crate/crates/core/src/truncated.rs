//! Truncated multinomial likelihood terms and the unnormalized target posterior.

use rand::Rng;

use crate::error::{Error, Result};
use crate::simplex::{
    check_dim, dirichlet_log_kernel, multinomial_log_likelihood, sample_dirichlet, sorted_sum,
    CountVector, DirichletParams, SimplexPoint,
};

/// Largest supported per-term total, keeping augmented sums exact in `u64`.
pub const MAX_TERM_TOTAL: u64 = 1 << 32;

/// Indices conditioned to have zero counts; a proper subset of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationSet {
    indices: Vec<usize>,
    n: usize,
}

impl TruncationSet {
    /// Sorts and deduplicates `indices`.
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&index) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::TruncationIndexOutOfRange { index, n });
        }
        if indices.len() >= n {
            return Err(Error::TruncationNotProper { n });
        }
        Ok(TruncationSet { indices, n })
    }

    pub fn empty(n: usize) -> Self {
        TruncationSet { indices: Vec::new(), n }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Indices not in the set, ascending.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.contains(i)).collect()
    }

    /// Total probability mass `sum_{i in I} pi_i`.
    pub fn mass(&self, pi: &SimplexPoint) -> f64 {
        self.indices.iter().map(|&i| pi.coords()[i]).sum()
    }

    /// `1 - mass(pi)`. Above one half it is summed over the complement, so it
    /// stays accurate (and nonzero) when the truncated block holds nearly
    /// all of the mass.
    pub fn untruncated_mass(&self, pi: &SimplexPoint) -> f64 {
        let mass = self.mass(pi);
        if mass <= 0.5 {
            return 1.0 - mass;
        }
        pi.coords()
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.contains(*i))
            .map(|(_, p)| p)
            .sum()
    }
}

/// One likelihood factor: a truncation set and counts supported off it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncatedCounts {
    trunc: TruncationSet,
    counts: CountVector,
    total: u64,
}

impl TruncatedCounts {
    pub fn new(trunc: TruncationSet, counts: CountVector) -> Result<Self> {
        check_dim(trunc.dim(), counts.dim())?;
        for &i in trunc.indices() {
            let count = counts.counts()[i];
            if count != 0 {
                return Err(Error::CountOnTruncatedIndex { index: i, count });
            }
        }
        let total = counts
            .counts()
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .unwrap_or(u64::MAX);
        if total > MAX_TERM_TOTAL {
            return Err(Error::CountTotalTooLarge { total });
        }
        Ok(TruncatedCounts {
            trunc,
            counts,
            total,
        })
    }

    /// Convenience constructor from raw index and count lists.
    pub fn from_parts(truncated: Vec<usize>, counts: Vec<u64>) -> Result<Self> {
        let n = counts.len();
        Self::new(TruncationSet::new(truncated, n)?, CountVector::new(counts))
    }

    pub fn trunc(&self) -> &TruncationSet {
        &self.trunc
    }

    pub fn counts(&self) -> &CountVector {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn dim(&self) -> usize {
        self.counts.dim()
    }
}

/// An ordered, nonempty list of likelihood terms of common dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationModel {
    terms: Vec<TruncatedCounts>,
}

impl ObservationModel {
    pub fn new(terms: Vec<TruncatedCounts>) -> Result<Self> {
        let first = terms.first().ok_or(Error::NoTerms)?;
        let n = first.dim();
        for term in &terms[1..] {
            check_dim(n, term.dim())?;
        }
        Ok(ObservationModel { terms })
    }

    pub fn terms(&self) -> &[TruncatedCounts] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.terms[0].dim()
    }

    /// Sum of all observed totals.
    pub fn observed_total(&self) -> u64 {
        self.terms.iter().map(TruncatedCounts::total).sum()
    }
}

/// `-m. ln(1 - sum_{i in I} pi_i) + sum_{i not in I} m_i ln pi_i`.
///
/// For a truncated block above one half, `1 - sum_{i in I} pi_i` is
/// evaluated as the complement sum, which avoids cancellation near 1.
pub fn truncated_log_likelihood(term: &TruncatedCounts, pi: &SimplexPoint) -> Result<f64> {
    check_dim(term.dim(), pi.dim())?;
    let mass = term.trunc().mass(pi);
    let rest = term.trunc().untruncated_mass(pi);
    if rest <= 0.0 {
        return Err(Error::TruncatedMassAtOne { mass });
    }
    let log_rest = if mass <= 0.5 { (-mass).ln_1p() } else { rest.ln() };
    // Counts vanish on I, so the multinomial part only sees the complement.
    let observed = multinomial_log_likelihood(term.counts(), pi)?;
    Ok(observed - term.total() as f64 * log_rest)
}

/// Log of the unnormalized posterior: Dirichlet kernel plus every term's
/// truncated log-likelihood. Term contributions are summed in sorted order,
/// so the value does not depend on term order.
pub fn posterior_log_density_unnormalized(
    pi: &SimplexPoint,
    alpha: &DirichletParams,
    model: &ObservationModel,
) -> Result<f64> {
    check_dim(model.dim(), pi.dim())?;
    let prior = dirichlet_log_kernel(pi, alpha)?;
    let likelihood = model
        .terms()
        .iter()
        .map(|term| truncated_log_likelihood(term, pi))
        .collect::<Result<Vec<_>>>()?;
    Ok(prior + sorted_sum(likelihood))
}

/// Exact draw from `Dir(alpha) * TruncMult_I(m)` for a single-term model.
///
/// The prior splits into the block mass `s = sum_{i in I} pi_i`, the
/// normalized block `pi_I / s` and the normalized complement
/// `pi_Ibar / (1 - s)`, all independent. The likelihood only sees the
/// normalized complement, so the posterior keeps `s ~ Beta(sum alpha_I,
/// sum alpha_Ibar)` and `pi_I / s ~ Dir(alpha_I)` and updates the complement
/// to `Dir(alpha_Ibar + m_Ibar)`.
pub fn sample_single_truncation_posterior<R: Rng + ?Sized>(
    alpha: &DirichletParams,
    model: &ObservationModel,
    rng: &mut R,
) -> Result<SimplexPoint> {
    if model.terms().len() != 1 {
        return Err(Error::NotSingleTerm {
            terms: model.terms().len(),
        });
    }
    let term = &model.terms()[0];
    check_dim(term.dim(), alpha.dim())?;
    let truncated = term.trunc().indices();
    let kept = term.trunc().complement();
    let a = alpha.alpha();
    let m = term.counts().counts();

    let kept_alpha: Vec<f64> = kept.iter().map(|&i| a[i] + m[i] as f64).collect();
    let kept_draw = sample_dirichlet(&DirichletParams::new(kept_alpha)?, rng);

    let mut coords = vec![0.0; alpha.dim()];
    if truncated.is_empty() {
        for (&i, &x) in kept.iter().zip(kept_draw.coords()) {
            coords[i] = x;
        }
        return Ok(SimplexPoint::from_normalized(coords));
    }

    let mass_alpha = vec![
        truncated.iter().map(|&i| a[i]).sum::<f64>(),
        kept.iter().map(|&i| a[i]).sum::<f64>(),
    ];
    let split = sample_dirichlet(&DirichletParams::new(mass_alpha)?, rng);
    let (mass, rest) = (split.coords()[0], split.coords()[1]);
    let block_alpha: Vec<f64> = truncated.iter().map(|&i| a[i]).collect();
    let block_draw = sample_dirichlet(&DirichletParams::new(block_alpha)?, rng);

    for (&i, &x) in truncated.iter().zip(block_draw.coords()) {
        coords[i] = mass * x;
    }
    for (&i, &x) in kept.iter().zip(kept_draw.coords()) {
        coords[i] = rest * x;
    }
    Ok(SimplexPoint::from_normalized(coords))
}
