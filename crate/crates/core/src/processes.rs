//! Seeded arrival and availability generators.
//!
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, domain, epoch, entity)`, so arrival and availability draws never
//! share state and a run is reproducible from its seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Per-epoch count process for one task type (arrivals) or one agent type
/// (available agents).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    Poisson { mean: f64 },
    /// Number of successes out of `n` independent trials.
    Bernoulli { n: u64, p: f64 },
    Deterministic { value: u64 },
    /// Replays `values[t - 1]`; past the end it wraps when `cyclic`, else 0.
    Trace {
        values: Vec<u64>,
        #[serde(default)]
        cyclic: bool,
    },
}

impl ProcessSpec {
    pub fn mean(&self) -> f64 {
        match self {
            ProcessSpec::Poisson { mean } => *mean,
            ProcessSpec::Bernoulli { n, p } => *n as f64 * p,
            ProcessSpec::Deterministic { value } => *value as f64,
            ProcessSpec::Trace { values, .. } => {
                if values.is_empty() {
                    0.0
                } else {
                    values.iter().sum::<u64>() as f64 / values.len() as f64
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ProcessSpec::Poisson { mean } if !mean.is_finite() || *mean < 0.0 => {
                Err(format!("poisson mean must be finite and >= 0, got {mean}"))
            }
            ProcessSpec::Bernoulli { p, .. } if !(0.0..=1.0).contains(p) => {
                Err(format!("bernoulli p must lie in [0, 1], got {p}"))
            }
            _ => Ok(()),
        }
    }

    /// Multiplies the mean by `factor`. Only Poisson processes can be
    /// rescaled continuously.
    pub fn scaled(&self, factor: f64) -> Result<ProcessSpec, String> {
        match self {
            ProcessSpec::Poisson { mean } => Ok(ProcessSpec::Poisson {
                mean: mean * factor,
            }),
            other if (factor - 1.0).abs() < 1e-12 => Ok(other.clone()),
            other => Err(format!("cannot rescale a {other:?} process")),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, t: u64) -> u64 {
        match self {
            ProcessSpec::Poisson { mean } => {
                if *mean <= 0.0 {
                    0
                } else {
                    Poisson::new(*mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
                }
            }
            ProcessSpec::Bernoulli { n, p } => {
                Binomial::new(*n, *p).map(|d| d.sample(rng)).unwrap_or(0)
            }
            ProcessSpec::Deterministic { value } => *value,
            ProcessSpec::Trace { values, cyclic } => {
                if values.is_empty() || t == 0 {
                    return 0;
                }
                let i = (t - 1) as usize;
                if i < values.len() {
                    values[i]
                } else if *cyclic {
                    values[i % values.len()]
                } else {
                    0
                }
            }
        }
    }
}

/// Sub-stream namespaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Arrivals = 1,
    Availability = 2,
    Policy = 3,
    TraceGen = 4,
    WorkerSkills = 5,
    Fuzz = 6,
}

/// Root of all randomness in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    pub seed: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed }
    }

    /// Independent generator for one `(domain, epoch, entity)` cell.
    pub fn stream(&self, domain: Domain, epoch: u64, entity: u64) -> ChaCha8Rng {
        let mut h = splitmix(self.seed);
        h = splitmix(h ^ domain as u64);
        h = splitmix(h ^ epoch);
        h = splitmix(h ^ entity);
        let mut key = [0u8; 32];
        let mut w = h;
        for chunk in key.chunks_mut(8) {
            w = splitmix(w);
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn sample_all(specs: &[ProcessSpec], rng: &Rng, domain: Domain, t: u64) -> Vec<u64> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| spec.sample(&mut rng.stream(domain, t, i as u64), t))
        .collect()
}

/// External task arrivals `A(t)`, one entry per task type.
pub fn sample_arrivals(specs: &[ProcessSpec], rng: &Rng, t: u64) -> Vec<u64> {
    sample_all(specs, rng, Domain::Arrivals, t)
}

/// Available agents `U(t)`, one entry per agent type.
pub fn sample_availability(specs: &[ProcessSpec], rng: &Rng, t: u64) -> Vec<u64> {
    sample_all(specs, rng, Domain::Availability, t)
}

/// Finite probability table over availability vectors, the `Gamma` used by
/// capacity queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTable {
    pub support: Vec<(Vec<u64>, f64)>,
}

impl GammaTable {
    pub fn deterministic(u: Vec<u64>) -> Self {
        GammaTable {
            support: vec![(u, 1.0)],
        }
    }

    /// Mean availability per agent type.
    pub fn mean(&self, num_types: usize) -> Vec<f64> {
        let mut mu = vec![0.0; num_types];
        for (u, p) in &self.support {
            for (m, &x) in u.iter().enumerate() {
                mu[m] += p * x as f64;
            }
        }
        mu
    }

    pub fn total_probability(&self) -> f64 {
        self.support.iter().map(|(_, p)| p).sum()
    }

    /// Product distribution of independent per-type availability specs.
    /// Poisson specs have infinite support and are rejected.
    pub fn from_specs(specs: &[ProcessSpec]) -> Result<GammaTable, String> {
        let mut support = vec![(Vec::new(), 1.0)];
        for spec in specs {
            let marginal: Vec<(u64, f64)> = match spec {
                ProcessSpec::Deterministic { value } => vec![(*value, 1.0)],
                ProcessSpec::Bernoulli { n, p } => (0..=*n)
                    .map(|k| (k, binomial_pmf(*n, *p, k)))
                    .filter(|(_, q)| *q > 0.0)
                    .collect(),
                ProcessSpec::Trace { values, .. } if !values.is_empty() => {
                    let mut counts = std::collections::BTreeMap::new();
                    for &v in values {
                        *counts.entry(v).or_insert(0u64) += 1;
                    }
                    counts
                        .into_iter()
                        .map(|(v, c)| (v, c as f64 / values.len() as f64))
                        .collect()
                }
                other => return Err(format!("availability {other:?} has no finite table")),
            };
            let mut next = Vec::with_capacity(support.len() * marginal.len());
            for (u, p) in &support {
                for &(x, q) in &marginal {
                    let mut v: Vec<u64> = u.clone();
                    v.push(x);
                    next.push((v, p * q));
                }
            }
            support = next;
        }
        Ok(GammaTable { support })
    }
}

fn binomial_pmf(n: u64, p: f64, k: u64) -> f64 {
    let mut c = 1.0f64;
    for i in 0..k {
        c *= (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}
