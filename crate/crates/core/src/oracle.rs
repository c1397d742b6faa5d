//! Brute-force posterior moments on a simplex mesh (n <= 4).
//!
//! The simplex is mapped affinely onto the order simplex
//! `{h >= y_1 >= ... >= y_d >= 0}` (`d = n - 1`), which the Kuhn
//! triangulation of the unit cube grid splits into `h^d` congruent cells.
//! Each cell contributes its centroid with equal weight, so no node touches
//! the boundary and the rule is second-order accurate.

use serde::{Deserialize, Serialize};

use crate::diagnostics::burn_in_slice;
use crate::error::{Error, Result};
use crate::simplex::{check_dim, DirichletParams, SimplexPoint};
use crate::trace::{ChainEnsemble, ChainTrace};
use crate::truncated::{posterior_log_density_unnormalized, ObservationModel};

pub const MAX_GRID_DIM: usize = 4;

/// Default resolution per dimension: 128 for n <= 3, 32 for n = 4.
pub fn default_resolution(n: usize) -> usize {
    if n <= 3 {
        128
    } else {
        32
    }
}

#[derive(Debug, Clone)]
pub struct SimplexGrid {
    pub n: usize,
    pub resolution: usize,
    pub points: Vec<SimplexPoint>,
    /// Lebesgue cell volume in the first `n - 1` coordinates:
    /// `1 / ((n-1)! h^(n-1))`.
    pub weight: f64,
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d - 1);
            out.push(q);
        }
    }
    out
}

fn factorial(d: usize) -> f64 {
    (1..=d).map(|k| k as f64).product()
}

pub fn build_grid(n: usize, resolution: usize) -> Result<SimplexGrid> {
    if !(2..=MAX_GRID_DIM).contains(&n) {
        return Err(Error::GridDimension { n });
    }
    if resolution == 0 {
        return Err(Error::GridResolution(resolution));
    }
    let d = n - 1;
    let h = resolution;
    let hf = h as f64;
    let perms = permutations(d);
    // centroid offset of the Kuhn simplex for permutation sigma:
    // coordinate sigma[k] gets (d - k) / (d + 1)
    let offsets: Vec<Vec<f64>> = perms
        .iter()
        .map(|sigma| {
            let mut off = vec![0.0; d];
            for (k, &axis) in sigma.iter().enumerate() {
                off[axis] = (d - k) as f64 / (d + 1) as f64;
            }
            off
        })
        .collect();

    let mut points = Vec::with_capacity(h.pow(d as u32));
    let mut corner = vec![0usize; d];
    loop {
        // cubes intersecting the order simplex have nonincreasing corners
        if corner.windows(2).all(|w| w[0] >= w[1]) {
            for off in &offsets {
                let y: Vec<f64> = corner.iter().zip(off).map(|(&c, &o)| c as f64 + o).collect();
                if y.windows(2).all(|w| w[0] > w[1]) {
                    let mut coords = Vec::with_capacity(n);
                    coords.push(1.0 - y[0] / hf);
                    for k in 1..d {
                        coords.push((y[k - 1] - y[k]) / hf);
                    }
                    coords.push(y[d - 1] / hf);
                    points.push(SimplexPoint::new(coords)?);
                }
            }
        }
        // odometer increment over {0..h-1}^d
        let mut k = d;
        loop {
            if k == 0 {
                return Ok(SimplexGrid {
                    n,
                    resolution,
                    points,
                    weight: 1.0 / (factorial(d) * hf.powi(d as i32)),
                });
            }
            k -= 1;
            corner[k] += 1;
            if corner[k] < h {
                break;
            }
            corner[k] = 0;
        }
    }
}

/// Grid evaluation of the posterior with normalizer and moments.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub grid: SimplexGrid,
    /// Unnormalized log-density at each grid point.
    pub log_density: Vec<f64>,
    /// `ln sum_j weight * exp(log_density_j)`.
    pub log_normalizer: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GridPosterior {
    /// Normalized probability mass of each cell; sums to 1.
    pub fn cell_masses(&self) -> Vec<f64> {
        let lw = self.grid.weight.ln();
        self.log_density
            .iter()
            .map(|l| (l + lw - self.log_normalizer).exp())
            .collect()
    }

    /// Normalized density value at each grid point.
    pub fn densities(&self) -> Vec<f64> {
        self.log_density
            .iter()
            .map(|l| (l - self.log_normalizer).exp())
            .collect()
    }
}

pub fn grid_posterior(
    alpha: &DirichletParams,
    model: &ObservationModel,
    resolution: usize,
) -> Result<GridPosterior> {
    check_dim(model.dim(), alpha.dim())?;
    let grid = build_grid(alpha.dim(), resolution)?;
    let log_density = grid
        .points
        .iter()
        .map(|p| posterior_log_density_unnormalized(p, alpha, model))
        .collect::<Result<Vec<_>>>()?;
    let max = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_density.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = scaled.iter().sum();
    let log_normalizer = max + (total * grid.weight).ln();

    let n = grid.n;
    let mut mean = vec![0.0; n];
    for (p, w) in grid.points.iter().zip(&scaled) {
        for (m, c) in mean.iter_mut().zip(p.coords()) {
            *m += w * c;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut variance = vec![0.0; n];
    for (p, w) in grid.points.iter().zip(&scaled) {
        for ((v, c), m) in variance.iter_mut().zip(p.coords()).zip(&mean) {
            *v += w * (c - m) * (c - m);
        }
    }
    variance.iter_mut().for_each(|v| *v /= total);
    Ok(GridPosterior {
        grid,
        log_density,
        log_normalizer,
        mean,
        variance,
    })
}

/// Componentwise moment estimates with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub variance_se: Vec<f64>,
}

impl MomentEstimate {
    /// Known moments with no sampling error.
    pub fn exact(mean: Vec<f64>, variance: Vec<f64>) -> Self {
        let n = mean.len();
        MomentEstimate {
            mean,
            variance,
            mean_se: vec![0.0; n],
            variance_se: vec![0.0; n],
        }
    }

    pub fn from_grid(grid: &GridPosterior) -> Self {
        Self::exact(grid.mean.clone(), grid.variance.clone())
    }

    /// Moments pooled over the retained slices at `t`; standard errors from
    /// the spread of the per-chain estimates (`sd / sqrt(M)`).
    pub fn from_ensemble(ensemble: &ChainEnsemble, t: usize) -> Result<Self> {
        let per_chain = ensemble
            .chains()
            .iter()
            .map(|c| burn_in_slice(c, t).map(|v| v.moments()))
            .collect::<Result<Vec<_>>>()?;
        let (mean, mean_se) = spread(per_chain.iter().map(|(m, _)| m.as_slice()));
        let (variance, variance_se) = spread(per_chain.iter().map(|(_, v)| v.as_slice()));
        Ok(MomentEstimate {
            mean,
            variance,
            mean_se,
            variance_se,
        })
    }

    /// Moments of a single chain's retained slice at `t`; standard errors
    /// from `batches` contiguous batch estimates.
    pub fn from_trace(trace: &ChainTrace, t: usize, batches: usize) -> Result<Self> {
        let view = burn_in_slice(trace, t)?;
        let size = view.len() / batches.max(1);
        if size < 2 {
            return Err(Error::SliceTooShort { len: size });
        }
        let (mean, variance) = view.moments();
        let batch_moments: Vec<(Vec<f64>, Vec<f64>)> = (0..batches)
            .map(|b| {
                let start = view.start() + b * size;
                let rows: Vec<Vec<f64>> = (start..start + size).map(|s| trace.row(s).to_vec()).collect();
                moments_of_rows(&rows)
            })
            .collect();
        let (_, mean_se) = spread(batch_moments.iter().map(|(m, _)| m.as_slice()));
        let (_, variance_se) = spread(batch_moments.iter().map(|(_, v)| v.as_slice()));
        Ok(MomentEstimate {
            mean,
            variance,
            mean_se,
            variance_se,
        })
    }

    /// Moments of independent draws; standard errors from the sample
    /// variance and fourth central moment.
    pub fn from_iid(rows: &[Vec<f64>]) -> Self {
        let (mean, variance) = moments_of_rows(rows);
        let c = rows.len() as f64;
        let m4: Vec<f64> = (0..mean.len())
            .map(|i| rows.iter().map(|r| (r[i] - mean[i]).powi(4)).sum::<f64>() / c)
            .collect();
        MomentEstimate {
            mean_se: variance.iter().map(|v| (v / c).sqrt()).collect(),
            variance_se: m4
                .iter()
                .zip(&variance)
                .map(|(m4, v)| ((m4 - v * v).max(0.0) / c).sqrt())
                .collect(),
            mean,
            variance,
        }
    }
}

fn moments_of_rows(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let c = rows.len() as f64;
    let n = rows[0].len();
    let mean: Vec<f64> = (0..n).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / c).collect();
    let var = (0..n)
        .map(|i| rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / (c - 1.0).max(1.0))
        .collect();
    (mean, var)
}

/// Componentwise mean of several estimates and the standard error of that mean.
fn spread<'a>(estimates: impl Iterator<Item = &'a [f64]>) -> (Vec<f64>, Vec<f64>) {
    let est: Vec<&[f64]> = estimates.collect();
    let k = est.len() as f64;
    let n = est[0].len();
    let mean: Vec<f64> = (0..n).map(|i| est.iter().map(|e| e[i]).sum::<f64>() / k).collect();
    let se = (0..n)
        .map(|i| {
            if est.len() < 2 {
                return f64::INFINITY;
            }
            let var = est.iter().map(|e| (e[i] - mean[i]).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        })
        .collect();
    (mean, se)
}

/// Pass rule: `|deviation| <= max(floor, se_multiplier * se)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTolerance {
    pub mean_floor: f64,
    pub variance_floor: f64,
    pub se_multiplier: f64,
}

impl MomentTolerance {
    pub fn standard_errors(k: f64) -> Self {
        MomentTolerance {
            mean_floor: 0.0,
            variance_floor: 0.0,
            se_multiplier: k,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub reference: f64,
    pub estimate: f64,
    pub deviation: f64,
    /// Combined standard error of reference and estimate.
    pub se: f64,
    pub allowed: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean: Vec<ComponentCheck>,
    pub variance: Vec<ComponentCheck>,
    pub pass: bool,
}

impl MomentReport {
    pub fn max_mean_deviation(&self) -> f64 {
        self.mean.iter().map(|c| c.deviation.abs()).fold(0.0, f64::max)
    }
}

fn check(reference: f64, ref_se: f64, estimate: f64, est_se: f64, floor: f64, k: f64) -> ComponentCheck {
    let se = (ref_se * ref_se + est_se * est_se).sqrt();
    let allowed = floor.max(k * se);
    let deviation = estimate - reference;
    ComponentCheck {
        reference,
        estimate,
        deviation,
        se,
        allowed,
        pass: deviation.abs() <= allowed,
    }
}

/// Compares two moment estimates component by component.
pub fn compare_estimates(
    reference: &MomentEstimate,
    estimate: &MomentEstimate,
    tol: &MomentTolerance,
) -> Result<MomentReport> {
    check_dim(reference.mean.len(), estimate.mean.len())?;
    let n = reference.mean.len();
    let mean: Vec<ComponentCheck> = (0..n)
        .map(|i| {
            check(
                reference.mean[i],
                reference.mean_se[i],
                estimate.mean[i],
                estimate.mean_se[i],
                tol.mean_floor,
                tol.se_multiplier,
            )
        })
        .collect();
    let variance: Vec<ComponentCheck> = (0..n)
        .map(|i| {
            check(
                reference.variance[i],
                reference.variance_se[i],
                estimate.variance[i],
                estimate.variance_se[i],
                tol.variance_floor,
                tol.se_multiplier,
            )
        })
        .collect();
    let pass = mean.iter().chain(&variance).all(|c| c.pass);
    Ok(MomentReport { mean, variance, pass })
}

/// Samples to compare against a grid posterior.
pub enum SampleSource<'a> {
    Trace(&'a ChainTrace),
    Ensemble(&'a ChainEnsemble),
}

/// Batches used for single-trace standard errors.
pub const TRACE_BATCHES: usize = 20;

/// Compares sampled moments at `t` against the grid moments.
pub fn compare_moments(
    grid: &GridPosterior,
    samples: SampleSource<'_>,
    t: usize,
    tol: &MomentTolerance,
) -> Result<MomentReport> {
    let estimate = match samples {
        SampleSource::Trace(trace) => MomentEstimate::from_trace(trace, t, TRACE_BATCHES)?,
        SampleSource::Ensemble(ens) => MomentEstimate::from_ensemble(ens, t)?,
    };
    compare_estimates(&MomentEstimate::from_grid(grid), &estimate, tol)
}
