//! Sample traces produced by the chain drivers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mh::MhStats;
use crate::simplex::{SimplexPoint, SIMPLEX_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Aux,
    Mh,
    /// Independent draws from a known distribution (tests, reference runs).
    Exact,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Aux => "aux",
            SamplerKind::Mh => "mh",
            SamplerKind::Exact => "exact",
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub sampler: SamplerKind,
    pub seed: Option<u64>,
    pub mh: Option<MhStats>,
}

impl TraceMetadata {
    pub fn new(sampler: SamplerKind) -> Self {
        TraceMetadata {
            sampler,
            seed: None,
            mh: None,
        }
    }
}

/// `T x n` sample matrix (row-major) with per-sample elapsed seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    dim: usize,
    samples: Vec<f64>,
    timestamps: Vec<f64>,
    pub metadata: TraceMetadata,
}

impl ChainTrace {
    pub fn with_capacity(dim: usize, steps: usize, metadata: TraceMetadata) -> Self {
        ChainTrace {
            dim,
            samples: Vec::with_capacity(dim * steps),
            timestamps: Vec::with_capacity(steps),
            metadata,
        }
    }

    /// Builds a trace from rows, validating simplex rows and monotone time.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        timestamps: Vec<f64>,
        metadata: TraceMetadata,
    ) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::NoSteps)?;
        if timestamps.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: timestamps.len(),
            });
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] < w[0]) {
            return Err(Error::MalformedTrace {
                path: String::new(),
                reason: format!("timestamps decrease ({} -> {})", w[0], w[1]),
            });
        }
        let mut trace = ChainTrace::with_capacity(dim, rows.len(), metadata);
        for (row, t) in rows.into_iter().zip(timestamps) {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|c| !c.is_finite() || *c < 0.0)
                || (sum - 1.0).abs() > SIMPLEX_TOLERANCE
            {
                return Err(Error::NotOnSimplex { sum });
            }
            trace.samples.extend_from_slice(&row);
            trace.timestamps.push(t);
        }
        Ok(trace)
    }

    pub fn push(&mut self, pi: &SimplexPoint, seconds: f64) {
        debug_assert_eq!(pi.dim(), self.dim);
        self.samples.extend_from_slice(pi.coords());
        self.timestamps.push(seconds);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.samples[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    /// Values of one coordinate across `rows` (a half-open index range).
    pub fn component(&self, i: usize, rows: std::ops::Range<usize>) -> Vec<f64> {
        rows.map(|t| self.samples[t * self.dim + i]).collect()
    }
}

/// `M` traces sharing `T` and `n`.
#[derive(Debug, Clone)]
pub struct ChainEnsemble {
    chains: Vec<ChainTrace>,
}

impl ChainEnsemble {
    pub fn new(chains: Vec<ChainTrace>) -> Result<Self> {
        let first = chains.first().ok_or(Error::TooFewChains {
            needed: 1,
            found: 0,
        })?;
        let (steps, dim) = (first.len(), first.dim());
        for (index, c) in chains.iter().enumerate() {
            if c.len() != steps || c.dim() != dim {
                return Err(Error::RaggedEnsemble {
                    index,
                    steps,
                    dim,
                    found_steps: c.len(),
                    found_dim: c.dim(),
                });
            }
        }
        Ok(ChainEnsemble { chains })
    }

    pub fn chains(&self) -> &[ChainTrace] {
        &self.chains
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn steps(&self) -> usize {
        self.chains[0].len()
    }

    pub fn dim(&self) -> usize {
        self.chains[0].dim()
    }

    pub fn into_chains(self) -> Vec<ChainTrace> {
        self.chains
    }
}
