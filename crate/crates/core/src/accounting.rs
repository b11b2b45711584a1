//! Differential-privacy accounting for person-count outputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdcError};
use crate::noise::{laplace_variance, DiscretePmf};

/// `(ε, δ)` guarantee; `δ = 0` is strict ε-DP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
}

impl DpGuarantee {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(SdcError::InvalidParameter(format!("epsilon {epsilon}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(SdcError::InvalidParameter(format!("delta {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn is_strict(&self) -> bool {
        self.delta == 0.0
    }
}

/// Smallest δ such that count noise `pmf` makes the unit-shifted pair of
/// neighbouring outputs `(ε, δ)`-indistinguishable on every event.
///
/// For each shift `s = ±1` the worst event collects all outcomes where the
/// likelihood ratio exceeds `e^ε`, giving `Σ_x max(0, p(x) - e^ε p(x-s))`.
pub fn tightest_delta(pmf: &DiscretePmf, epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(SdcError::InvalidParameter(format!(
            "epsilon must be finite and nonnegative, got {epsilon}"
        )));
    }
    let factor = epsilon.exp();
    let shifted = |s: i64| -> f64 {
        (pmf.min() - 1..=pmf.max() + 1)
            .map(|x| {
                let p = pmf.prob(x);
                let diff = p - factor * pmf.prob(x - s);
                // ratios equal to e^ε up to rounding are not violations
                if diff <= 8.0 * f64::EPSILON * p {
                    0.0
                } else {
                    diff
                }
            })
            .sum()
    };
    Ok(shifted(1).max(shifted(-1)))
}

/// One requested tabulation. `table` is only meaningful without SPSN, where
/// the same marginal from two tables is a distinct output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutputRequest {
    pub table: Option<String>,
    pub breakdowns: BTreeSet<String>,
}

impl OutputRequest {
    pub fn new<I, S>(table: Option<&str>, breakdowns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            table: table.map(str::to_string),
            breakdowns: breakdowns.into_iter().map(Into::into).collect(),
        }
    }
}

/// Global L1 sensitivity of a set of disjoint tabulations.
///
/// One record changes exactly one cell of each tabulation by one, so Δ is
/// the number of distinct tabulations released. Under SPSN the same marginal
/// requested from several tables is a single output.
pub fn sensitivity(query: &[OutputRequest], spsn: bool) -> Result<u32> {
    if query.is_empty() {
        return Err(SdcError::Empty("sensitivity query".into()));
    }
    let distinct = if spsn {
        query
            .iter()
            .map(|q| &q.breakdowns)
            .collect::<BTreeSet<_>>()
            .len()
    } else {
        query.iter().collect::<BTreeSet<_>>().len()
    };
    Ok(distinct as u32)
}

/// Sequential composition: budgets add up.
pub fn compose(parts: &[f64]) -> f64 {
    parts.iter().sum()
}

/// Budget of the `i`-th query (from 1) when spending `ε/2^i` iteratively.
pub fn halving_schedule(global_epsilon: f64, i: u32) -> f64 {
    global_epsilon / 2f64.powi(i as i32)
}

/// Split of a global budget over several outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub global_epsilon: f64,
    pub parts: Vec<f64>,
}

impl BudgetSplit {
    pub fn new(global_epsilon: f64, parts: Vec<f64>) -> Result<Self> {
        if !(global_epsilon > 0.0) {
            return Err(SdcError::InvalidParameter(
                "global epsilon must be positive".into(),
            ));
        }
        if parts.iter().any(|p| !(*p > 0.0)) {
            return Err(SdcError::InvalidParameter(
                "budget parts must be positive".into(),
            ));
        }
        let total = compose(&parts);
        if (total - global_epsilon).abs() > 1e-12 * global_epsilon.max(1.0) {
            return Err(SdcError::InvalidParameter(format!(
                "parts sum to {total}, not {global_epsilon}"
            )));
        }
        Ok(Self {
            global_epsilon,
            parts,
        })
    }

    pub fn even(global_epsilon: f64, outputs: usize) -> Result<Self> {
        if outputs == 0 {
            return Err(SdcError::Empty("budget split".into()));
        }
        let share = global_epsilon / outputs as f64;
        Self::new(global_epsilon, vec![share; outputs])
    }
}

/// Lower limit on the per-query ε below which a reconstruction attack with
/// `t = n log²n` queries still succeeds at confidence `alpha`:
/// `(1/√n) ln(n ln²n / (1-α))`.
pub fn eps_alpha_n(n: f64, alpha: f64) -> Result<f64> {
    if n < 2.0 {
        return Err(SdcError::InvalidParameter(format!(
            "n must be >= 2, got {n}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SdcError::InvalidParameter(format!(
            "alpha must be in (0,1), got {alpha}"
        )));
    }
    let ln_n = n.ln();
    let t = n * ln_n * ln_n;
    Ok((t / (1.0 - alpha)).ln() / n.sqrt())
}

/// Per-count Laplace standard deviation when a global budget is split evenly
/// over `t` outputs: `√2 t / ε`.
pub fn noise_scale_for_global(global_epsilon: f64, t: f64) -> Result<f64> {
    if !(global_epsilon > 0.0 && t > 0.0) {
        return Err(SdcError::InvalidParameter(
            "epsilon and output complexity must be positive".into(),
        ));
    }
    Ok(2f64.sqrt() * t / global_epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// The working approximation `ε_table ≃ 10% ε_global`.
    #[default]
    Rounded,
    /// `67.5% × 1/6 × ε_global`.
    Exact,
}

/// Share of a global budget spent on one person table at one geographic
/// level in the reference census setup.
pub fn us_table_budget(global_epsilon: f64, mode: BudgetMode) -> Result<f64> {
    if !(global_epsilon > 0.0) {
        return Err(SdcError::InvalidParameter(
            "global epsilon must be positive".into(),
        ));
    }
    Ok(match mode {
        BudgetMode::Rounded => global_epsilon / 10.0,
        BudgetMode::Exact => 0.675 * global_epsilon / 6.0,
    })
}

/// Re-identification success decomposed into reconstruction and matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReidRates {
    pub r_recon: f64,
    pub r_match: f64,
    pub r_reid: f64,
}

pub fn reid_rate(r_recon: f64, r_match: f64) -> Result<ReidRates> {
    for (name, v) in [("r_recon", r_recon), ("r_match", r_match)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(SdcError::InvalidParameter(format!(
                "{name}={v} outside [0,1]"
            )));
        }
    }
    Ok(ReidRates {
        r_recon,
        r_match,
        r_reid: r_recon * r_match,
    })
}

/// Laplace variance per output when `ε` is split evenly over `t` outputs.
pub fn split_laplace_variance(global_epsilon: f64, t: u32) -> Result<f64> {
    laplace_variance(global_epsilon / t as f64, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{gen_ptable, geometric2_pmf, geometric2_truncated};

    /// Enumerates every event (subset of outcomes) — only viable for tiny
    /// supports, used to pin the closed form.
    fn delta_by_events(pmf: &DiscretePmf, epsilon: f64) -> f64 {
        let points: Vec<i64> = (pmf.min() - 1..=pmf.max() + 1).collect();
        let mut best = 0.0f64;
        for s in [1i64, -1] {
            for mask in 0u32..(1 << points.len()) {
                let (mut p, mut q) = (0.0, 0.0);
                for (i, &x) in points.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        p += pmf.prob(x);
                        q += pmf.prob(x - s);
                    }
                }
                best = best.max(p - epsilon.exp() * q);
            }
        }
        best
    }

    #[test]
    fn uniform_delta_is_boundary_atom() {
        for e in 1..=4u32 {
            let pmf = DiscretePmf::uniform(e);
            let d = tightest_delta(&pmf, 5.0).unwrap();
            assert!((d - 1.0 / (2 * e + 1) as f64).abs() < 1e-15);
            assert!((d - delta_by_events(&pmf, 5.0)).abs() < 1e-12);
            assert!(
                (tightest_delta(&pmf, 0.3).unwrap() - delta_by_events(&pmf, 0.3)).abs() < 1e-12
            );
        }
    }

    #[test]
    fn ptable_delta_matches_events() {
        let t = gen_ptable(1.5, 3, 0).unwrap();
        for eps in [0.0, 0.2, 1.0, 3.0] {
            let closed = tightest_delta(t.pmf(), eps).unwrap();
            assert!((closed - delta_by_events(t.pmf(), eps)).abs() < 1e-12);
            assert!(closed > 0.0);
        }
    }

    #[test]
    fn truncated_geometric_delta() {
        let pmf = geometric2_truncated(0.5, 50).unwrap();
        let d = tightest_delta(&pmf, 0.5).unwrap();
        assert!(d < 1e-6);
        assert!(d > 0.0);
        // only the boundary atom violates the ratio bound
        assert!((d - pmf.prob(50)).abs() < 1e-9 * d);
        // and it is below the untruncated mass beyond the cutoff
        let tail: f64 = (50..2000).map(|x| geometric2_pmf(x, 0.5).unwrap()).sum();
        assert!(d <= tail);
    }

    #[test]
    fn delta_shrinks_with_support() {
        let mut last = f64::INFINITY;
        for k in [5u32, 10, 20, 40, 80] {
            let d = tightest_delta(&geometric2_truncated(0.5, k).unwrap(), 0.5).unwrap();
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-17);
    }

    #[test]
    fn delta_rejects_bad_epsilon() {
        let pmf = DiscretePmf::uniform(2);
        assert!(tightest_delta(&pmf, -0.1).is_err());
        assert!(tightest_delta(&pmf, f64::INFINITY).is_err());
    }

    #[test]
    fn sensitivities() {
        let sex = OutputRequest::new(Some("T1"), ["SEX"]);
        let total = OutputRequest::new(Some("T1"), Vec::<String>::new());
        assert_eq!(sensitivity(std::slice::from_ref(&sex), true).unwrap(), 1);
        assert_eq!(
            sensitivity(&[sex.clone(), total.clone()], false).unwrap(),
            2
        );
        let irrs: Vec<OutputRequest> = [vec![], vec!["SEX"], vec!["AGE"], vec!["SEX", "AGE"]]
            .into_iter()
            .map(|b| OutputRequest::new(Some("T1"), b))
            .collect();
        assert_eq!(sensitivity(&irrs, true).unwrap(), 4);
        let dup = vec![sex.clone(), OutputRequest::new(Some("T2"), ["SEX"])];
        assert_eq!(sensitivity(&dup, true).unwrap(), 1);
        assert_eq!(sensitivity(&dup, false).unwrap(), 2);
        assert!(sensitivity(&[], true).is_err());
    }

    #[test]
    fn composition() {
        assert!((compose(&[0.1; 10]) - 1.0).abs() < 1e-12);
        assert_eq!(halving_schedule(1.0, 10), 1.0 / 1024.0);
        let scale = laplace_variance(halving_schedule(1.0, 10), 1)
            .unwrap()
            .sqrt();
        assert!((scale - 1448.15).abs() < 0.01);
        let mut partial = 0.0;
        for i in 1..=60 {
            partial += halving_schedule(2.5, i);
            assert!(partial <= 2.5);
        }
        assert!(BudgetSplit::new(1.0, vec![0.5, 0.5]).is_ok());
        assert!(BudgetSplit::new(1.0, vec![0.5, 0.6]).is_err());
        assert!(BudgetSplit::even(1.0, 7).is_ok());
    }

    #[test]
    fn eps_alpha() {
        let e = eps_alpha_n(1e6, 0.99).unwrap();
        assert!((e - 0.0237).abs() < 5e-5, "{e}");
        assert!(eps_alpha_n(1e6, 0.9).unwrap() < e);
        // n = 1e4: ln n = 9.21034037..., t = 848337.14...
        let ln_n = 4.0 * std::f64::consts::LN_10;
        let expected = (1e4 * ln_n * ln_n / 0.01).ln() / 100.0;
        assert!((eps_alpha_n(1e4, 0.99).unwrap() - expected).abs() < 1e-15);
        assert!((eps_alpha_n(1e4, 0.99).unwrap() - 0.18251).abs() < 1e-4);
        assert!(eps_alpha_n(1.0, 0.5).is_err());
        assert!(eps_alpha_n(10.0, 1.0).is_err());
    }

    #[test]
    fn global_noise_scale() {
        let s = noise_scale_for_global(1.0, 2775.0).unwrap();
        assert!((s - 3924.4).abs() < 0.1);
        assert!((noise_scale_for_global(1.0, 1.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            noise_scale_for_global(1.0, 20.0).unwrap() * 2.0,
            noise_scale_for_global(1.0, 40.0).unwrap()
        );
        for t in [1u32, 3, 68, 2775] {
            let direct = noise_scale_for_global(0.7, t as f64).unwrap();
            let via_split = split_laplace_variance(0.7, t).unwrap().sqrt();
            assert!((direct - via_split).abs() / direct < 1e-12);
        }
    }

    #[test]
    fn us_budget() {
        assert_eq!(us_table_budget(0.25, BudgetMode::Rounded).unwrap(), 0.025);
        assert_eq!(us_table_budget(8.0, BudgetMode::Rounded).unwrap(), 0.8);
        assert!((us_table_budget(1.0, BudgetMode::Exact).unwrap() - 0.1125).abs() < 1e-15);
        for g in [0.25, 1.0, 3.3] {
            let r = us_table_budget(g, BudgetMode::Rounded).unwrap()
                / us_table_budget(g, BudgetMode::Exact).unwrap();
            assert!((r - 0.10 / 0.1125).abs() < 1e-12);
        }
    }

    #[test]
    fn reid() {
        assert_eq!(reid_rate(1.0, 1.0).unwrap().r_reid, 1.0);
        assert_eq!(reid_rate(0.5, 0.2).unwrap().r_reid, 0.1);
        let r = reid_rate(0.9, 0.8).unwrap();
        assert!(r.r_reid < 0.8);
        assert!(reid_rate(1.2, 0.5).is_err());
    }

    #[test]
    fn guarantee() {
        assert!(DpGuarantee::new(1.0, 0.0).unwrap().is_strict());
        assert!(DpGuarantee::new(1.0, 2.0).is_err());
    }
}
