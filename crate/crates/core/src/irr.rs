//! Independent redundant representations (IRRs) of output statistics.
//!
//! Summing a table `T_{A ∪ S}` over all categories of the breakdowns `S`
//! yields another representation of `T_A`, with noise independent of the
//! other representations. For a target `A` every table containing it offers
//! one IRR per subset of its remaining breakdowns. With SPSN the same
//! marginal table carries the same noise in every table, so IRRs are unique
//! per summed-out set; without it every (table, subset) pair counts.
//!
//! An IRR summing out `S` adds up `k = Π_{B∈S} |B|` noisy counts. Averaging
//! `t` IRRs with total weight `k` leaves noise variance `kV/t²`, hence the
//! risk measure `k/t²`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdcError};
use crate::table::StatisticKey;
use crate::table::{cartesian, TableProgramme};

/// Replacement cardinalities, typically for geographic breakdowns whose size
/// depends on the reporting country.
pub type CardinalityOverrides = HashMap<String, u64>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Irr {
    /// Source table; `None` under SPSN where the table is irrelevant.
    pub table_id: Option<String>,
    pub summed_out: BTreeSet<String>,
    pub k_weight: u64,
}

impl Irr {
    fn sort_key(&self) -> (u64, &BTreeSet<String>, &Option<String>) {
        (self.k_weight, &self.summed_out, &self.table_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrStats {
    pub target: StatisticKey,
    pub t: u64,
    pub k: u64,
    pub ratio: f64,
    pub irrs: Vec<Irr>,
}

fn cardinality(programme: &TableProgramme, overrides: &CardinalityOverrides, id: &str) -> u64 {
    overrides
        .get(id)
        .copied()
        .or_else(|| programme.cardinality(id).map(|c| c as u64))
        .unwrap_or(0)
}

fn subsets(items: &[String]) -> Vec<BTreeSet<String>> {
    (0u64..(1u64 << items.len()))
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| s.clone())
                .collect()
        })
        .collect()
}

pub fn enumerate_irrs(
    programme: &TableProgramme,
    target: &StatisticKey,
    spsn: bool,
) -> Result<Vec<Irr>> {
    enumerate_irrs_with(programme, target, spsn, &CardinalityOverrides::new())
}

/// All IRRs of `target` in the programme, sorted by `(k, summed_out, table)`.
pub fn enumerate_irrs_with(
    programme: &TableProgramme,
    target: &StatisticKey,
    spsn: bool,
    overrides: &CardinalityOverrides,
) -> Result<Vec<Irr>> {
    programme.validate_key(target)?;
    let mut irrs = Vec::new();
    let mut seen = BTreeSet::new();
    for table in programme.tables() {
        let set = table.breakdown_set();
        if !target.breakdowns.is_subset(&set) {
            continue;
        }
        let rest: Vec<String> = set.difference(&target.breakdowns).cloned().collect();
        for summed_out in subsets(&rest) {
            if spsn && !seen.insert(summed_out.clone()) {
                continue;
            }
            let k_weight = summed_out
                .iter()
                .map(|id| cardinality(programme, overrides, id))
                .product();
            irrs.push(Irr {
                table_id: (!spsn).then(|| table.id.clone()),
                summed_out,
                k_weight,
            });
        }
    }
    if irrs.is_empty() {
        return Err(SdcError::NoRepresentation(target.to_string()));
    }
    irrs.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(irrs)
}

/// `t`, `k` and `k/t²` of averaging over all given IRRs.
pub fn count_k_t(target: &StatisticKey, irrs: &[Irr]) -> Result<IrrStats> {
    if irrs.is_empty() {
        return Err(SdcError::Empty("IRR list".into()));
    }
    let t = irrs.len() as u64;
    let k: u64 = irrs.iter().map(|i| i.k_weight).sum();
    Ok(IrrStats {
        target: target.clone(),
        t,
        k,
        ratio: k as f64 / (t * t) as f64,
        irrs: irrs.to_vec(),
    })
}

/// `k1/t1² < k2/t2²` without rounding.
fn ratio_less(k1: u64, t1: u64, k2: u64, t2: u64) -> bool {
    (k1 as u128) * (t2 as u128).pow(2) < (k2 as u128) * (t1 as u128).pow(2)
}

/// Greedy search for the most risky IRR average: admit IRRs in ascending
/// weight while the aggregate `k/t²` strictly decreases, and stop at the
/// first one that would increase it.
pub fn optimize_kt2(target: &StatisticKey, irrs: &[Irr]) -> Result<IrrStats> {
    if irrs.is_empty() {
        return Err(SdcError::Empty("IRR list".into()));
    }
    let mut sorted = irrs.to_vec();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let (mut k, mut t) = (sorted[0].k_weight, 1u64);
    let mut admitted = 1;
    for irr in &sorted[1..] {
        if ratio_less(k + irr.k_weight, t + 1, k, t) {
            k += irr.k_weight;
            t += 1;
            admitted += 1;
        } else {
            break;
        }
    }
    sorted.truncate(admitted);
    count_k_t(target, &sorted)
}

/// Full and greedy-optimised IRR statistics of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedStatistic {
    pub target: StatisticKey,
    pub spsn: bool,
    pub full: IrrStats,
    pub optimized: IrrStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Ascending optimised `k/t²` (most risky first).
    pub by_ratio: Vec<RankedStatistic>,
    /// Descending number of IRRs.
    pub by_t: Vec<RankedStatistic>,
}

/// Every marginal key occurring in any table, deduplicated.
pub fn statistic_universe(programme: &TableProgramme) -> Vec<StatisticKey> {
    let mut keys = BTreeSet::new();
    for table in programme.tables() {
        for s in subsets(&table.breakdowns) {
            keys.insert(s);
        }
    }
    keys.into_iter()
        .map(|breakdowns| StatisticKey {
            breakdowns,
            cell: None,
        })
        .collect()
}

fn catalog_order(programme: &TableProgramme, key: &StatisticKey) -> Vec<usize> {
    let mut pos: Vec<usize> = key
        .breakdowns
        .iter()
        .filter_map(|id| programme.position(id))
        .collect();
    pos.sort_unstable();
    pos
}

/// Ranks every statistic of the programme by averaging risk.
pub fn rank_statistics(
    programme: &TableProgramme,
    spsn: bool,
    overrides: &CardinalityOverrides,
) -> Result<Ranking> {
    let stats: Vec<RankedStatistic> = statistic_universe(programme)
        .into_par_iter()
        .map(|target| {
            let irrs = enumerate_irrs_with(programme, &target, spsn, overrides)?;
            Ok(RankedStatistic {
                full: count_k_t(&target, &irrs)?,
                optimized: optimize_kt2(&target, &irrs)?,
                target,
                spsn,
            })
        })
        .collect::<Result<_>>()?;

    let tie = |a: &RankedStatistic, b: &RankedStatistic| {
        a.target
            .breakdowns
            .len()
            .cmp(&b.target.breakdowns.len())
            .then_with(|| {
                catalog_order(programme, &a.target).cmp(&catalog_order(programme, &b.target))
            })
    };
    let mut by_ratio = stats.clone();
    by_ratio.sort_by(|a, b| {
        a.optimized
            .ratio
            .partial_cmp(&b.optimized.ratio)
            .unwrap_or(Ordering::Equal)
            .then_with(|| tie(a, b))
    });
    let mut by_t = stats;
    by_t.sort_by(|a, b| b.full.t.cmp(&a.full.t).then_with(|| tie(a, b)));
    Ok(Ranking { by_ratio, by_t })
}

/// CSV with one row per statistic: the full IRR set and the greedy optimum.
pub fn write_ranking_csv<W: Write>(rows: &[RankedStatistic], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "statistic",
        "spsn",
        "t",
        "k",
        "ratio",
        "opt_t",
        "opt_k",
        "opt_ratio",
    ])?;
    for r in rows {
        w.write_record([
            r.target.label(),
            r.spsn.to_string(),
            r.full.t.to_string(),
            r.full.k.to_string(),
            format!("{}", r.full.ratio),
            r.optimized.t.to_string(),
            r.optimized.k.to_string(),
            format!("{}", r.optimized.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The marginal table and cell addressed when an IRR of `target` is
/// expanded over one cell of its summed-out breakdowns.
pub fn expand_cell(
    target: &StatisticKey,
    target_cell: &[usize],
    summed_out: &BTreeSet<String>,
    summed_cell: &[usize],
) -> (BTreeSet<String>, Vec<usize>) {
    let mut merged: BTreeMap<&String, usize> = target
        .breakdowns
        .iter()
        .zip(target_cell.iter().copied())
        .collect();
    merged.extend(summed_out.iter().zip(summed_cell.iter().copied()));
    let keys = merged.keys().map(|s| (*s).clone()).collect();
    (keys, merged.into_values().collect())
}

/// Value of one IRR of the target cell: the sum over all cells of the
/// summed-out breakdowns, read through `lookup(table, breakdowns, cell)`.
pub fn irr_value<F>(
    programme: &TableProgramme,
    irr: &Irr,
    target: &StatisticKey,
    target_cell: &[usize],
    mut lookup: F,
) -> f64
where
    F: FnMut(Option<&str>, &BTreeSet<String>, &[usize]) -> f64,
{
    let dims: Vec<usize> = irr
        .summed_out
        .iter()
        .map(|id| programme.cardinality(id).unwrap_or(0))
        .collect();
    cartesian(&dims)
        .iter()
        .map(|sc| {
            let (keys, cell) = expand_cell(target, target_cell, &irr.summed_out, sc);
            lookup(irr.table_id.as_deref(), &keys, &cell)
        })
        .sum()
}
