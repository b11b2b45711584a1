//! Noise distributions and the cell-key mechanism.
//!
//! Unbounded mechanisms (Laplace, two-tailed geometric) come with their
//! densities and samplers; bounded ones (truncated Laplace, cell-key p-tables)
//! are represented as finite-support pmfs on `{-E..E}`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdcError};
use crate::rng::task_rng;

const SUM_TOLERANCE: f64 = 1e-12;

/// Finite-support pmf over consecutive integers starting at `min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePmf {
    min: i64,
    probs: Vec<f64>,
}

impl DiscretePmf {
    pub fn new(min: i64, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(SdcError::Empty("pmf support".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SdcError::InvalidParameter(
                "pmf has negative or non-finite mass".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(SdcError::InvalidParameter(format!(
                "pmf sums to {total}, not 1"
            )));
        }
        Ok(Self { min, probs })
    }

    /// Symmetric pmf on `{-bound..bound}`.
    pub fn symmetric(bound: u32, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != 2 * bound as usize + 1 {
            return Err(SdcError::InvalidParameter(format!(
                "expected {} probabilities for bound {bound}, got {}",
                2 * bound + 1,
                probs.len()
            )));
        }
        Self::new(-(bound as i64), probs)
    }

    pub fn uniform(bound: u32) -> Self {
        let n = 2 * bound as usize + 1;
        Self {
            min: -(bound as i64),
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn min(&self) -> i64 {
        self.min
    }

    pub fn max(&self) -> i64 {
        self.min + self.probs.len() as i64 - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: i64) -> f64 {
        if x < self.min {
            return 0.0;
        }
        self.probs
            .get((x - self.min) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.min + i as i64, p))
    }

    /// Largest `|x|` in the support.
    pub fn max_abs(&self) -> u64 {
        self.min.unsigned_abs().max(self.max().unsigned_abs())
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, p)| x as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.iter().map(|(x, p)| (x as f64 - mu).powi(2) * p).sum()
    }

    pub fn entropy(&self) -> f64 {
        self.iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(_, p)| -p * p.ln())
            .sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.iter().all(|(x, p)| (p - self.prob(-x)).abs() <= tol)
    }
}

/// Variance of the Laplace mechanism `Lap(Δ/ε)`: `2(Δ/ε)²`.
pub fn laplace_variance(epsilon: f64, delta_sens: u32) -> Result<f64> {
    check_epsilon(epsilon)?;
    if delta_sens == 0 {
        return Err(SdcError::InvalidParameter(
            "sensitivity must be >= 1".into(),
        ));
    }
    let scale = delta_sens as f64 / epsilon;
    Ok(2.0 * scale * scale)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && !epsilon.is_nan() {
        Ok(())
    } else {
        Err(SdcError::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )))
    }
}

/// Two-tailed geometric pmf `(1-e^{-ε})/(1+e^{-ε}) e^{-ε|x|}`.
pub fn geometric2_pmf(x: i64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let q = (-epsilon).exp();
    Ok((1.0 - q) / (1.0 + q) * (-epsilon * x.unsigned_abs() as f64).exp())
}

/// Two-tailed geometric restricted to `|x| <= cutoff` and renormalised.
pub fn geometric2_truncated(epsilon: f64, cutoff: u32) -> Result<DiscretePmf> {
    check_epsilon(epsilon)?;
    let c = cutoff as i64;
    let raw: Vec<f64> = (-c..=c)
        .map(|x| geometric2_pmf(x, epsilon))
        .collect::<Result<_>>()?;
    let total: f64 = raw.iter().sum();
    DiscretePmf::new(-c, raw.into_iter().map(|p| p / total).collect())
}

fn laplace_cdf(x: f64, epsilon: f64) -> f64 {
    if x < 0.0 {
        0.5 * (epsilon * x).exp()
    } else {
        1.0 - 0.5 * (-epsilon * x).exp()
    }
}

/// Mass of `Lap(1/ε)` in the unit bin centred at `x`.
pub fn laplace_binned(x: i64, epsilon: f64) -> f64 {
    let (lo, hi) = (x as f64 - 0.5, x as f64 + 0.5);
    if x >= 0 {
        // upper tail differences keep precision far from the origin
        let tail = |v: f64| 0.5 * (-epsilon * v).exp();
        if lo < 0.0 {
            laplace_cdf(hi, epsilon) - laplace_cdf(lo, epsilon)
        } else {
            tail(lo) - tail(hi)
        }
    } else {
        laplace_binned(-x, epsilon)
    }
}

/// Rounded `Lap(1/ε)` conditioned on `|x| <= bound`.
pub fn truncated_laplace_pmf(epsilon: f64, bound: u32) -> Result<DiscretePmf> {
    check_epsilon(epsilon)?;
    let b = bound as i64;
    let half: Vec<f64> = (0..=b).map(|x| laplace_binned(x, epsilon)).collect();
    Ok(mirror_normalised(&half))
}

/// Builds a symmetric pmf from weights on `0..=E`, normalised to one.
fn mirror_normalised(half: &[f64]) -> DiscretePmf {
    let total: f64 = half[0] + 2.0 * half[1..].iter().sum::<f64>();
    let e = half.len() - 1;
    let probs: Vec<f64> = (0..=2 * e).map(|i| half[i.abs_diff(e)] / total).collect();
    DiscretePmf {
        min: -(e as i64),
        probs,
    }
}

/// Discrete bounded noise distribution on `{-E..E}` with its cumulative
/// sums, used for quantile lookup by cell keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PTable {
    bound: u32,
    pmf: DiscretePmf,
    cumulative: Vec<f64>,
}

/// Maximum variance of any distribution on `{-E..E}`: the uniform one.
pub fn max_variance(bound: u32) -> f64 {
    let e = bound as f64;
    e * (e + 1.0) / 3.0
}

impl PTable {
    /// Wraps an externally produced probability vector for `-E..E`.
    pub fn from_probabilities(bound: u32, probs: Vec<f64>) -> Result<Self> {
        let pmf = DiscretePmf::symmetric(bound, probs)?;
        if !pmf.is_symmetric(SUM_TOLERANCE) {
            return Err(SdcError::InvalidParameter(
                "p-table is not symmetric".into(),
            ));
        }
        Ok(Self::from_pmf(bound, pmf))
    }

    fn from_pmf(bound: u32, pmf: DiscretePmf) -> Self {
        let mut cumulative: Vec<f64> = pmf
            .probs()
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        // every key below 1 must land inside the support
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            bound,
            pmf,
            cumulative,
        }
    }

    pub fn uniform(bound: u32) -> Self {
        Self::from_pmf(bound, DiscretePmf::uniform(bound))
    }

    pub fn bound(&self) -> u32 {
        self.bound
    }

    pub fn pmf(&self) -> &DiscretePmf {
        &self.pmf
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn prob(&self, j: i64) -> f64 {
        self.pmf.prob(j)
    }

    pub fn variance(&self) -> f64 {
        self.pmf.variance()
    }

    pub fn entropy(&self) -> f64 {
        self.pmf.entropy()
    }

    /// Smallest `j` whose cumulative probability reaches `u`.
    pub fn quantile(&self, u: f64) -> i64 {
        let idx = self
            .cumulative
            .partition_point(|&c| c < u)
            .min(self.cumulative.len() - 1);
        idx as i64 - self.bound as i64
    }

    /// CSV with columns `j, p_j, cumulative`, rows ordered `-E..E`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "p_j", "cumulative"])?;
        for ((j, p), c) in self.pmf.iter().zip(&self.cumulative) {
            w.write_record([j.to_string(), format!("{p:.17e}"), format!("{c:.17e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn gaussian_family_variance(lambda: f64, bound: u32) -> f64 {
    let (mut norm, mut second) = (1.0, 0.0);
    for j in 1..=bound {
        let j2 = (j as f64).powi(2);
        let w = (-lambda * j2).exp();
        norm += 2.0 * w;
        second += 2.0 * j2 * w;
    }
    second / norm
}

/// Maximum-entropy p-table on `{-E..E}` with mean 0 and variance `V`.
///
/// Under normalisation, zero mean and fixed second moment the solution is
/// `p_j ∝ exp(-λ j²)`; λ is found by bisection, λ = 0 being uniform.
pub fn gen_ptable(variance: f64, bound: u32, js: u32) -> Result<PTable> {
    if js != 0 {
        return Err(SdcError::NotImplemented(format!(
            "p-tables with smallest published count js={js}; only js=0 is supported"
        )));
    }
    if bound == 0 {
        return Err(SdcError::InvalidParameter(
            "noise bound must be >= 1".into(),
        ));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(SdcError::InvalidParameter(format!(
            "variance must be positive, got {variance}"
        )));
    }
    let vmax = max_variance(bound);
    if variance > vmax * (1.0 + 1e-12) {
        return Err(SdcError::InfeasibleVariance {
            variance,
            bound,
            max: vmax,
        });
    }
    if variance >= vmax - 1e-12 {
        return Ok(PTable::uniform(bound));
    }

    let (mut lo, mut hi) = (0.0_f64, 50.0_f64);
    while gaussian_family_variance(hi, bound) > variance {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(SdcError::InvalidParameter(format!(
                "variance {variance} too small to represent"
            )));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let v = gaussian_family_variance(mid, bound);
        if v == variance {
            lo = mid;
            hi = mid;
            break;
        }
        // variance decreases in λ
        if v > variance {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let half: Vec<f64> = (0..=bound)
        .map(|j| (-lambda * (j as f64).powi(2)).exp())
        .collect();
    Ok(PTable::from_pmf(bound, mirror_normalised(&half)))
}

/// Per-record key: a fixed-point fraction `value / 2^64` in `[0, 1)`.
///
/// Cell keys add modulo one, which wrapping `u64` addition performs exactly,
/// so a cell key does not depend on summation order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct RecordKey(pub u64);

impl RecordKey {
    pub fn from_fraction(x: f64) -> Self {
        let frac = x - x.floor();
        RecordKey((frac * 2f64.powi(64)) as u64)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        RecordKey(rng.random())
    }

    pub fn as_fraction(self) -> f64 {
        (self.0 >> 11) as f64 * 2f64.powi(-53)
    }
}

/// Fractional part of the sum of member record keys; `0` for an empty cell.
pub fn cell_key<'a, I>(records: I) -> RecordKey
where
    I: IntoIterator<Item = &'a RecordKey>,
{
    RecordKey(
        records
            .into_iter()
            .fold(0u64, |acc, k| acc.wrapping_add(k.0)),
    )
}

/// Noise of a cell under the cell-key method: the p-table quantile at the
/// cell key. Identical record sets get identical noise in every table.
pub fn cell_key_noise<'a, I>(records: I, ptable: &PTable) -> i64
where
    I: IntoIterator<Item = &'a RecordKey>,
{
    ptable.quantile(cell_key(records).as_fraction())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum NoiseSpec {
    Laplace {
        epsilon: f64,
        delta_sens: u32,
    },
    TwoTailedGeometric {
        epsilon: f64,
    },
    TruncatedLaplace {
        epsilon: f64,
        bound: u32,
    },
    CellKey {
        variance: f64,
        bound: u32,
        #[serde(default)]
        js: u32,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Laplace {
                epsilon,
                delta_sens,
            } => laplace_variance(epsilon, delta_sens).map(|_| ()),
            NoiseSpec::TwoTailedGeometric { epsilon } => check_epsilon(epsilon),
            NoiseSpec::TruncatedLaplace { epsilon, bound } => {
                check_epsilon(epsilon)?;
                if bound == 0 {
                    return Err(SdcError::InvalidParameter(
                        "noise bound must be >= 1".into(),
                    ));
                }
                Ok(())
            }
            NoiseSpec::CellKey {
                variance,
                bound,
                js,
            } => gen_ptable(variance, bound, js).map(|_| ()),
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(
            self,
            NoiseSpec::TruncatedLaplace { .. } | NoiseSpec::CellKey { .. }
        )
    }

    /// Noise variance of a single count.
    pub fn variance(&self) -> Result<f64> {
        match *self {
            NoiseSpec::Laplace {
                epsilon,
                delta_sens,
            } => laplace_variance(epsilon, delta_sens),
            NoiseSpec::TwoTailedGeometric { epsilon } => {
                check_epsilon(epsilon)?;
                let q = (-epsilon).exp();
                Ok(2.0 * q / (1.0 - q).powi(2))
            }
            NoiseSpec::TruncatedLaplace { epsilon, bound } => {
                Ok(truncated_laplace_pmf(epsilon, bound)?.variance())
            }
            NoiseSpec::CellKey { variance, .. } => Ok(variance),
        }
    }

    /// Builds a sampler, generating the p-table once for cell-key noise.
    pub fn sampler(&self) -> Result<NoiseSampler> {
        self.validate()?;
        Ok(match *self {
            NoiseSpec::Laplace {
                epsilon,
                delta_sens,
            } => NoiseSampler::Laplace {
                exp: Exp::new(epsilon / delta_sens as f64).expect("validated rate"),
            },
            NoiseSpec::TwoTailedGeometric { epsilon } => NoiseSampler::Geometric {
                geo: Geometric::new(1.0 - (-epsilon).exp()).expect("validated p"),
            },
            NoiseSpec::TruncatedLaplace { epsilon, bound } => NoiseSampler::TruncatedLaplace {
                exp: Exp::new(epsilon).expect("validated rate"),
                bound: bound as f64,
            },
            NoiseSpec::CellKey {
                variance,
                bound,
                js,
            } => NoiseSampler::CellKey {
                ptable: gen_ptable(variance, bound, js)?,
            },
        })
    }
}

#[derive(Debug, Clone)]
pub enum NoiseSampler {
    Laplace { exp: Exp<f64> },
    Geometric { geo: Geometric },
    TruncatedLaplace { exp: Exp<f64>, bound: f64 },
    CellKey { ptable: PTable },
}

impl NoiseSampler {
    pub fn is_integer(&self) -> bool {
        !matches!(self, NoiseSampler::Laplace { .. })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseSampler::Laplace { exp } => signed(exp.sample(rng), rng),
            NoiseSampler::Geometric { geo } => geo.sample(rng) as f64 - geo.sample(rng) as f64,
            NoiseSampler::TruncatedLaplace { exp, bound } => loop {
                let x = signed(exp.sample(rng), rng).round();
                if x.abs() <= *bound {
                    break x;
                }
            },
            NoiseSampler::CellKey { ptable } => {
                ptable.quantile(RecordKey::random(rng).as_fraction()) as f64
            }
        }
    }
}

fn signed<R: Rng + ?Sized>(magnitude: f64, rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum NoiseValues {
    Real(Vec<f64>),
    Integer(Vec<i64>),
}

impl NoiseValues {
    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            NoiseValues::Real(v) => v.clone(),
            NoiseValues::Integer(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

/// Reproducible batch of noise draws.
pub fn sample_noise(spec: &NoiseSpec, seed: u64, count: usize) -> Result<NoiseValues> {
    let sampler = spec.sampler()?;
    let mut rng = task_rng(seed, 0);
    let draws = (0..count).map(|_| sampler.draw(&mut rng));
    Ok(if sampler.is_integer() {
        NoiseValues::Integer(draws.map(|x| x as i64).collect())
    } else {
        NoiseValues::Real(draws.collect())
    })
}
