//! Metropolis-Hastings on the simplex with a `Dir(beta * pi)` proposal.
//!
//! The proposal is centered on the current point, and larger `beta` makes
//! moves more local. `beta` is adapted only during a burn-in phase, then
//! frozen, so sampling always uses a fixed kernel.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{
    check_dim, dirichlet_log_density, sample_dirichlet, DirichletParams, SimplexPoint,
};
use crate::trace::{ChainTrace, SamplerKind, TraceMetadata};
use crate::truncated::{posterior_log_density_unnormalized, ObservationModel};

/// Steps per adaptation batch.
pub const ADAPT_BATCH: usize = 100;
/// Initial adaptation gain; batch `b` (1-based) uses `ADAPT_GAIN / sqrt(b)`.
pub const ADAPT_GAIN: f64 = 0.5;
/// Half-width of the acceptance band reported as "tuned".
pub const ACCEPTANCE_BAND: f64 = 0.05;
/// Number of trailing batches averaged when judging the band.
const BAND_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    pub beta: f64,
    pub target_acceptance: f64,
    pub adapt_steps: usize,
}

impl MhConfig {
    pub fn fixed(beta: f64) -> Self {
        MhConfig {
            beta,
            target_acceptance: 0.24,
            adapt_steps: 0,
        }
    }

    pub fn adaptive(initial_beta: f64, adapt_steps: usize) -> Self {
        MhConfig {
            beta: initial_beta,
            target_acceptance: 0.24,
            adapt_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidMhConfig(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidMhConfig(format!(
                "target acceptance must be in (0, 1), got {}",
                self.target_acceptance
            )));
        }
        Ok(())
    }
}

/// Record of the burn-in adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub initial_beta: f64,
    pub final_beta: f64,
    pub target_acceptance: f64,
    pub batch_size: usize,
    pub gain: f64,
    pub batches: usize,
    /// Acceptance over the trailing batches of the adaptation phase.
    pub tail_acceptance: f64,
    pub in_band: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhStats {
    pub proposals: u64,
    pub accepts: u64,
    pub current_beta: f64,
    pub tuning: Option<TuningRecord>,
}

impl MhStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

/// Draws from `Dir(beta * pi)`. Returns `None` when some coordinate of `pi`
/// is zero, where the proposal is undefined.
pub fn propose<R: Rng + ?Sized>(pi: &SimplexPoint, beta: f64, rng: &mut R) -> Option<SimplexPoint> {
    if pi.on_boundary() {
        return None;
    }
    let params = DirichletParams::new(pi.coords().iter().map(|&p| beta * p).collect()).ok()?;
    Some(sample_dirichlet(&params, rng))
}

/// `ln Dir(to | beta * from)`.
fn log_proposal_density(to: &SimplexPoint, from: &SimplexPoint, beta: f64) -> Result<f64> {
    let params = DirichletParams::new(from.coords().iter().map(|&p| beta * p).collect())?;
    dirichlet_log_density(to, &params)
}

/// Log acceptance ratio for moving from `current` to `proposed`.
///
/// `current_log_target` is the cached target log-density at `current`.
/// Proposals with a zero coordinate, or where the target is not finite,
/// give negative infinity.
pub fn log_acceptance_ratio(
    current: &SimplexPoint,
    current_log_target: f64,
    proposed: &SimplexPoint,
    proposed_log_target: f64,
    beta: f64,
) -> Result<f64> {
    if proposed.on_boundary() || !proposed_log_target.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let forward = log_proposal_density(proposed, current, beta)?;
    let reverse = log_proposal_density(current, proposed, beta)?;
    Ok((proposed_log_target + reverse) - (current_log_target + forward))
}

/// Chain state with the cached target log-density of the current point.
struct Kernel<'a> {
    alpha: &'a DirichletParams,
    model: &'a ObservationModel,
    pi: SimplexPoint,
    log_target: f64,
}

impl<'a> Kernel<'a> {
    fn new(alpha: &'a DirichletParams, model: &'a ObservationModel, pi: SimplexPoint) -> Result<Self> {
        check_dim(model.dim(), alpha.dim())?;
        check_dim(model.dim(), pi.dim())?;
        let log_target = posterior_log_density_unnormalized(&pi, alpha, model)?;
        Ok(Kernel {
            alpha,
            model,
            pi,
            log_target,
        })
    }

    fn step<R: Rng + ?Sized>(&mut self, beta: f64, rng: &mut R) -> Result<bool> {
        let Some(proposed) = propose(&self.pi, beta, rng) else {
            return Ok(false);
        };
        if proposed.on_boundary() {
            return Ok(false);
        }
        let proposed_log_target = posterior_log_density_unnormalized(&proposed, self.alpha, self.model)?;
        let log_ratio = log_acceptance_ratio(&self.pi, self.log_target, &proposed, proposed_log_target, beta)?;
        // ln U < 0 always, so a zero log-ratio is always accepted
        let u: f64 = rng.random();
        if u.ln() < log_ratio {
            self.pi = proposed;
            self.log_target = proposed_log_target;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

/// One MH transition with the configured `beta`. Returns the new point and
/// whether the proposal was accepted.
pub fn mh_step<R: Rng + ?Sized>(
    pi: &SimplexPoint,
    alpha: &DirichletParams,
    model: &ObservationModel,
    cfg: &MhConfig,
    rng: &mut R,
) -> Result<(SimplexPoint, bool)> {
    cfg.validate()?;
    let mut kernel = Kernel::new(alpha, model, pi.clone())?;
    let accepted = kernel.step(cfg.beta, rng)?;
    Ok((kernel.pi, accepted))
}

/// Outcome of [`tune_beta`]: the frozen `beta`, the adaptation record and
/// the chain position at the end of burn-in.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub beta: f64,
    pub record: TuningRecord,
    pub state: SimplexPoint,
}

/// Adapts `beta` during `cfg.adapt_steps` burn-in steps from `init`.
///
/// After each batch of [`ADAPT_BATCH`] steps with acceptance rate `a`,
/// `beta <- beta * exp(-eta_b * (a - target))` with `eta_b = 0.5 / sqrt(b)`:
/// too many acceptances widen the proposal (smaller `beta`), too few narrow it.
pub fn tune_beta<R: Rng + ?Sized>(
    alpha: &DirichletParams,
    model: &ObservationModel,
    cfg: &MhConfig,
    init: SimplexPoint,
    rng: &mut R,
) -> Result<TuneOutcome> {
    cfg.validate()?;
    if cfg.adapt_steps == 0 {
        return Err(Error::InvalidMhConfig("adapt_steps must be > 0 to tune".into()));
    }
    let start = Instant::now();
    let mut kernel = Kernel::new(alpha, model, init)?;
    let mut beta = cfg.beta;
    let mut batch_rates = Vec::new();
    let mut done = 0;
    while done < cfg.adapt_steps {
        let size = ADAPT_BATCH.min(cfg.adapt_steps - done);
        let mut accepts = 0;
        for _ in 0..size {
            accepts += kernel.step(beta, rng)? as usize;
        }
        done += size;
        let rate = accepts as f64 / size as f64;
        batch_rates.push(rate);
        let gain = ADAPT_GAIN / (batch_rates.len() as f64).sqrt();
        beta *= (-gain * (rate - cfg.target_acceptance)).exp();
    }
    let window = &batch_rates[batch_rates.len().saturating_sub(BAND_WINDOW)..];
    let tail_acceptance = window.iter().sum::<f64>() / window.len() as f64;
    Ok(TuneOutcome {
        beta,
        record: TuningRecord {
            initial_beta: cfg.beta,
            final_beta: beta,
            target_acceptance: cfg.target_acceptance,
            batch_size: ADAPT_BATCH,
            gain: ADAPT_GAIN,
            batches: batch_rates.len(),
            tail_acceptance,
            in_band: (tail_acceptance - cfg.target_acceptance).abs() <= ACCEPTANCE_BAND,
            seconds: start.elapsed().as_secs_f64(),
        },
        state: kernel.pi,
    })
}

/// Runs an MH chain of `steps` recorded samples. With `cfg.adapt_steps > 0`
/// the chain first tunes `beta` from `init` and then samples from the
/// burn-in end point with `beta` frozen; timestamps start after tuning.
/// Acceptance statistics in the trace metadata cover the sampling phase only.
pub fn run_mh_chain<R: Rng + ?Sized>(
    alpha: &DirichletParams,
    model: &ObservationModel,
    init: SimplexPoint,
    steps: usize,
    cfg: &MhConfig,
    rng: &mut R,
) -> Result<ChainTrace> {
    if steps == 0 {
        return Err(Error::NoSteps);
    }
    cfg.validate()?;
    let (beta, tuning, start_point) = if cfg.adapt_steps > 0 {
        let outcome = tune_beta(alpha, model, cfg, init, rng)?;
        (outcome.beta, Some(outcome.record), outcome.state)
    } else {
        (cfg.beta, None, init)
    };
    let mut kernel = Kernel::new(alpha, model, start_point)?;
    let start = Instant::now();
    let mut trace = ChainTrace::with_capacity(model.dim(), steps, TraceMetadata::new(SamplerKind::Mh));
    let mut accepts = 0u64;
    for _ in 0..steps {
        accepts += kernel.step(beta, rng)? as u64;
        trace.push(&kernel.pi, start.elapsed().as_secs_f64());
    }
    trace.metadata.mh = Some(MhStats {
        proposals: steps as u64,
        accepts,
        current_beta: beta,
        tuning,
    });
    Ok(trace)
}
