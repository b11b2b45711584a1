//! Attacks on noisy count outputs: noise-bound disclosure, margin
//! exploitation, and massive averaging over redundant representations.

use std::collections::BTreeSet;
use std::ops::{Add, Mul};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Result, SdcError};
use crate::irr::{count_k_t, enumerate_irrs, irr_value, optimize_kt2};
use crate::noise::{DiscretePmf, NoiseSampler, PTable};
use crate::release::NoisyRelease;
use crate::rng::task_rng;
use crate::table::{tabulate, Microdata, StatisticKey, TableProgramme};

/// Noisy `{F, M, T}` with `E(F + M - T) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleObservation {
    pub f: i64,
    pub m: i64,
    pub t: i64,
}

impl TripleObservation {
    pub fn residual(&self) -> i64 {
        self.f + self.m - self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    BoundDisclosure,
    MarginExploit,
    Averaging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disclosure {
    pub cell: String,
    pub recovered: i64,
    pub truth: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: AttackKind,
    /// `p1` for bound disclosure, the model success probability `α` for
    /// averaging, the per-tuple flag probability for margin exploits.
    pub probability: f64,
    pub m_required: Option<u64>,
    pub disclosed: Vec<Disclosure>,
    pub mc_trials: u64,
    pub mc_successes: u64,
    pub seed: Option<u64>,
}

impl AttackReport {
    pub fn new(attack: AttackKind, probability: f64) -> Self {
        Self {
            attack,
            probability,
            m_required: None,
            disclosed: Vec::new(),
            mc_trials: 0,
            mc_successes: 0,
            seed: None,
        }
    }

    pub fn success_rate(&self) -> Option<f64> {
        (self.mc_trials > 0).then(|| self.mc_successes as f64 / self.mc_trials as f64)
    }

    /// Combines two Monte Carlo reports of the same attack.
    pub fn merge(mut self, other: AttackReport) -> AttackReport {
        self.mc_trials += other.mc_trials;
        self.mc_successes += other.mc_successes;
        self.disclosed.extend(other.disclosed);
        self
    }
}

fn convolve<T>(a: &[T], b: &[T]) -> Vec<T>
where
    T: Copy + Default + Add<Output = T> + Mul<Output = T>,
{
    let mut out = vec![T::default(); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = out[i + j] + x * y;
        }
    }
    out
}

/// `Pr[|x1 + x2 + x3| > 3(E-1)]` for weights of `x` on `-E..E`, in any
/// arithmetic (floats or exact rationals).
pub fn p1_from_weights<T>(weights: &[T], bound: u32) -> T
where
    T: Copy + Default + Add<Output = T> + Mul<Output = T>,
{
    let triple = convolve(&convolve(weights, weights), weights);
    let offset = 3 * bound as i64;
    let threshold = 3 * (bound as i64 - 1);
    triple
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as i64 - offset).abs() > threshold)
        .fold(T::default(), |acc, (_, &p)| acc + p)
}

/// Probability that a single constraint triple reveals the bound `E`
/// through the estimator `⌈|F+M-T|/3⌉`.
///
/// The third count enters with a minus sign, which for symmetric noise does
/// not change the distribution of the sum.
pub fn p1_exact(pmf: &DiscretePmf, bound: u32) -> Result<f64> {
    if pmf.max_abs() > bound as u64 {
        return Err(SdcError::InvalidParameter(format!(
            "pmf support exceeds the bound {bound}"
        )));
    }
    let b = bound as i64;
    let weights: Vec<f64> = (-b..=b).map(|x| pmf.prob(x)).collect();
    Ok(p1_from_weights(&weights, bound))
}

/// Number of independent triples needed to reveal `E` with confidence
/// `alpha`; `None` when `p1 = 0` and the bound can never be revealed.
pub fn tuples_needed(p1: f64, alpha: f64) -> Result<Option<u64>> {
    if !(0.0..=1.0).contains(&p1) {
        return Err(SdcError::InvalidParameter(format!("p1={p1} outside [0,1]")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SdcError::InvalidParameter(format!(
            "alpha={alpha} outside (0,1)"
        )));
    }
    if p1 == 0.0 {
        return Ok(None);
    }
    if p1 >= 1.0 {
        return Ok(Some(1));
    }
    let m = ((-alpha).ln_1p() / (-p1).ln_1p()).ceil();
    Ok(Some((m as u64).max(1)))
}

/// Probability of revealing `E` from `m` independent triples.
pub fn disclosure_probability(p1: f64, m: f64) -> f64 {
    -((-p1).ln_1p() * m).exp_m1()
}

/// Running estimate `max ⌈|F+M-T|/3⌉` after each observation.
pub fn estimate_bound(stream: &[TripleObservation]) -> Result<Vec<u64>> {
    if stream.is_empty() {
        return Err(SdcError::Empty("observation stream".into()));
    }
    let mut best = 0u64;
    Ok(stream
        .iter()
        .map(|o| {
            best = best.max(o.residual().unsigned_abs().div_ceil(3));
            best
        })
        .collect())
}

/// Noisy constraint tuple: internal categories plus their total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginTuple {
    pub internals: Vec<i64>,
    pub total: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginDisclosure {
    pub index: usize,
    pub internals: Vec<i64>,
    pub total: i64,
}

/// Flags tuples whose residual `Σ internals - total` reaches `±(n+1)E`.
///
/// Only one noise pattern produces that residual: every internal count at
/// `∓E` and the total at `±E`. Undoing it recovers the true counts exactly.
pub fn margin_exploit_scan(tuples: &[MarginTuple], bound: u32) -> Vec<MarginDisclosure> {
    let e = bound as i64;
    tuples
        .iter()
        .enumerate()
        .filter_map(|(index, tuple)| {
            let n = tuple.internals.len() as i64;
            let residual: i64 = tuple.internals.iter().sum::<i64>() - tuple.total;
            if bound == 0 || residual.abs() != (n + 1) * e {
                return None;
            }
            // residual < 0: internals were pushed down, total up
            let shift = -residual.signum() * e;
            Some(MarginDisclosure {
                index,
                internals: tuple.internals.iter().map(|x| x + shift).collect(),
                total: tuple.total - shift,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingModel {
    /// Inverse Chebyshev bound; a lower limit on the success probability.
    ChebyshevLower,
    /// Gaussian noise sums with variance `kV/t²`.
    Gaussian,
}

/// Probability that averaging `t` IRRs with total weight `k` pins the
/// target to within `xi`.
pub fn averaging_success(
    variance: f64,
    k: f64,
    t: f64,
    model: AveragingModel,
    xi: f64,
) -> Result<f64> {
    if !(variance >= 0.0 && k > 0.0 && t > 0.0 && xi > 0.0) {
        return Err(SdcError::InvalidParameter(
            "averaging needs V >= 0 and positive k, t, xi".into(),
        ));
    }
    let var = k * variance / (t * t);
    Ok(match model {
        AveragingModel::ChebyshevLower => (1.0 - var / (xi * xi)).max(0.0),
        AveragingModel::Gaussian => {
            if var == 0.0 {
                1.0
            } else {
                erf(xi / (2.0 * var).sqrt())
            }
        }
    })
}

/// Monte Carlo of averaging `t` representations that sum `k` independent
/// noise terms in total; success when the averaged noise is below `xi`.
pub fn simulate_averaging(
    sampler: &NoiseSampler,
    k: u64,
    t: u64,
    trials: u64,
    seed: u64,
    xi: f64,
) -> Result<AttackReport> {
    if k == 0 || t == 0 {
        return Err(SdcError::InvalidParameter(
            "k and t must be positive".into(),
        ));
    }
    let successes = (0..trials)
        .into_par_iter()
        .filter(|&trial| {
            let mut rng = task_rng(seed, trial);
            let sum: f64 = (0..k).map(|_| sampler.draw(&mut rng)).sum();
            (sum / t as f64).abs() < xi
        })
        .count() as u64;
    let mut report = AttackReport::new(AttackKind::Averaging, f64::NAN);
    report.mc_trials = trials;
    report.mc_successes = successes;
    report.seed = Some(seed);
    Ok(report)
}

/// Monte Carlo of the bound estimator on `streams` independent streams of
/// `stream_len` triples each. Success: the final estimate equals `E`.
/// `m_required` is reported for confidence `alpha`.
pub fn simulate_bound_disclosure(
    ptable: &PTable,
    stream_len: u64,
    streams: u64,
    alpha: f64,
    seed: u64,
) -> Result<AttackReport> {
    let bound = ptable.bound();
    let p1 = p1_exact(ptable.pmf(), bound)?;
    let successes = (0..streams)
        .into_par_iter()
        .filter(|&s| {
            let mut rng = task_rng(seed, s);
            let stream: Vec<TripleObservation> = (0..stream_len)
                .map(|_| noisy_triple(ptable, &mut rng))
                .collect();
            estimate_bound(&stream)
                .map(|est| est.last().copied() == Some(bound as u64))
                .unwrap_or(false)
        })
        .count() as u64;
    let mut report = AttackReport::new(AttackKind::BoundDisclosure, p1);
    report.m_required = tuples_needed(p1, alpha)?;
    report.mc_trials = streams;
    report.mc_successes = successes;
    report.seed = Some(seed);
    Ok(report)
}

fn draw<R: Rng + ?Sized>(ptable: &PTable, rng: &mut R) -> i64 {
    ptable.quantile(crate::noise::RecordKey::random(rng).as_fraction())
}

fn noisy_triple<R: Rng + ?Sized>(ptable: &PTable, rng: &mut R) -> TripleObservation {
    let f = rng.random_range(0..200i64);
    let m = rng.random_range(0..200i64);
    TripleObservation {
        f: f + draw(ptable, rng),
        m: m + draw(ptable, rng),
        t: f + m + draw(ptable, rng),
    }
}

/// Simulates `tuples` noisy constraint tuples with `internals` categories,
/// runs the margin scan and checks every recovery against the truth.
/// `mc_successes` counts flagged tuples; `disclosed` lists them with truths.
pub fn simulate_margin_exploit(
    ptable: &PTable,
    internals: usize,
    tuples: u64,
    seed: u64,
) -> Result<AttackReport> {
    if internals == 0 {
        return Err(SdcError::InvalidParameter(
            "need at least one internal category".into(),
        ));
    }
    let mut rng = task_rng(seed, 0);
    let mut truths = Vec::with_capacity(tuples as usize);
    let mut noisy = Vec::with_capacity(tuples as usize);
    for _ in 0..tuples {
        let inner: Vec<i64> = (0..internals).map(|_| rng.random_range(0..100)).collect();
        let total: i64 = inner.iter().sum();
        noisy.push(MarginTuple {
            internals: inner.iter().map(|x| x + draw(ptable, &mut rng)).collect(),
            total: total + draw(ptable, &mut rng),
        });
        truths.push(MarginTuple {
            internals: inner,
            total,
        });
    }
    let flagged = margin_exploit_scan(&noisy, ptable.bound());
    // all-extreme patterns: two signs, each with probability p_E^(n+1)
    let pe = ptable.prob(ptable.bound() as i64);
    let mut report = AttackReport::new(
        AttackKind::MarginExploit,
        2.0 * pe.powi(internals as i32 + 1),
    );
    report.mc_trials = tuples;
    report.mc_successes = flagged.len() as u64;
    report.seed = Some(seed);
    for d in flagged {
        let truth = &truths[d.index];
        for (j, (&rec, &tru)) in d.internals.iter().zip(&truth.internals).enumerate() {
            report.disclosed.push(Disclosure {
                cell: format!("tuple{}:internal{}", d.index, j),
                recovered: rec,
                truth: Some(tru),
            });
        }
        report.disclosed.push(Disclosure {
            cell: format!("tuple{}:total", d.index),
            recovered: d.total,
            truth: Some(truth.total),
        });
    }
    Ok(report)
}

/// Report for a scan of published tuples whose truth is unknown.
pub fn margin_report(tuples: &[MarginTuple], bound: u32) -> AttackReport {
    let flagged = margin_exploit_scan(tuples, bound);
    let mut report = AttackReport::new(
        AttackKind::MarginExploit,
        if tuples.is_empty() {
            0.0
        } else {
            flagged.len() as f64 / tuples.len() as f64
        },
    );
    report.mc_trials = tuples.len() as u64;
    report.mc_successes = flagged.len() as u64;
    for d in flagged {
        for (j, &v) in d.internals.iter().enumerate() {
            report.disclosed.push(Disclosure {
                cell: format!("tuple{}:internal{}", d.index, j),
                recovered: v,
                truth: None,
            });
        }
        report.disclosed.push(Disclosure {
            cell: format!("tuple{}:total", d.index),
            recovered: d.total,
            truth: None,
        });
    }
    report
}

/// Averages all (or the greedy-optimised subset of) IRRs of the target in a
/// noisy release and compares the rounded estimate with the true count.
///
/// Whole-table targets are attacked cell by cell; each cell is one trial.
pub fn run_averaging_attack(
    programme: &TableProgramme,
    release: &NoisyRelease,
    truth: &Microdata,
    target: &StatisticKey,
    spsn: bool,
    optimize: bool,
) -> Result<AttackReport> {
    let irrs = enumerate_irrs(programme, target, spsn)?;
    let stats = if optimize {
        optimize_kt2(target, &irrs)?
    } else {
        count_k_t(target, &irrs)?
    };
    let alpha = averaging_success(
        release.variance(),
        stats.k as f64,
        stats.t as f64,
        AveragingModel::Gaussian,
        0.5,
    )?;
    let base = StatisticKey {
        breakdowns: target.breakdowns.clone(),
        cell: None,
    };
    let true_counts = tabulate(
        programme,
        truth,
        &StatisticKey {
            breakdowns: target.breakdowns.clone(),
            cell: target.cell.clone(),
        },
    )?;

    let mut report = AttackReport::new(AttackKind::Averaging, alpha);
    let mut missing: BTreeSet<String> = BTreeSet::new();
    for (cell, count) in &true_counts {
        let sum: f64 = stats
            .irrs
            .iter()
            .map(|irr| {
                irr_value(programme, irr, &base, cell, |table, keys, c| {
                    release.value(table, keys, c).unwrap_or_else(|| {
                        missing.insert(format!("{keys:?}"));
                        0.0
                    })
                })
            })
            .sum();
        let estimate = (sum / stats.t as f64).round() as i64;
        report.mc_trials += 1;
        if estimate == *count as i64 {
            report.mc_successes += 1;
        }
        report.disclosed.push(Disclosure {
            cell: format!("{}", base.clone().with_cell(cell.clone())),
            recovered: estimate,
            truth: Some(*count as i64),
        });
    }
    if !missing.is_empty() {
        return Err(SdcError::InvalidParameter(format!(
            "release lacks outputs {missing:?}; was it produced with spsn={spsn}?"
        )));
    }
    Ok(report)
}
