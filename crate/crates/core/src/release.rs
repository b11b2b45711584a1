//! Noisy releases of a full table programme.
//!
//! Every table is published with all of its marginal sub-tables. Under the
//! cell-key method the noise of a cell is a function of the records in it,
//! so the same marginal cell carries the same noise in every table (SPSN).
//! Independent mechanisms draw fresh noise per table unless asked to key
//! noise by marginal cell.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;

use crate::error::{Result, SdcError};
use crate::noise::{cell_key, NoiseSpec, PTable, RecordKey};
use crate::rng::task_rng;
use crate::table::{enumerate_subtables, tabulate, Microdata, StatisticKey, TableProgramme};

#[derive(Debug, Clone)]
pub enum ReleaseMechanism {
    /// No noise at all.
    Exact,
    /// Cell-key method with per-record keys; SPSN by construction.
    CellKey {
        ptable: PTable,
        record_keys: Vec<RecordKey>,
    },
    /// Noise drawn independently per output cell.
    Independent { spec: NoiseSpec, spsn: bool },
}

impl ReleaseMechanism {
    pub fn spsn(&self) -> bool {
        match self {
            ReleaseMechanism::Exact | ReleaseMechanism::CellKey { .. } => true,
            ReleaseMechanism::Independent { spsn, .. } => *spsn,
        }
    }

    pub fn variance(&self) -> Result<f64> {
        match self {
            ReleaseMechanism::Exact => Ok(0.0),
            ReleaseMechanism::CellKey { ptable, .. } => Ok(ptable.variance()),
            ReleaseMechanism::Independent { spec, .. } => spec.variance(),
        }
    }
}

type OutputCell = (Option<String>, BTreeSet<String>, Vec<usize>);

/// Published (noisy) counts of every cell of every sub-table.
#[derive(Debug, Clone)]
pub struct NoisyRelease {
    spsn: bool,
    variance: f64,
    values: HashMap<OutputCell, f64>,
}

impl NoisyRelease {
    pub fn spsn(&self) -> bool {
        self.spsn
    }

    /// Per-count noise variance of the mechanism that produced the release.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Published value of `cell` in the marginal `breakdowns` of `table`;
    /// the table is ignored for SPSN releases.
    pub fn value(
        &self,
        table: Option<&str>,
        breakdowns: &BTreeSet<String>,
        cell: &[usize],
    ) -> Option<f64> {
        let table = if self.spsn {
            None
        } else {
            table.map(str::to_string)
        };
        self.values
            .get(&(table, breakdowns.clone(), cell.to_vec()))
            .copied()
    }
}

/// One uniformly random key per record.
pub fn assign_record_keys(n: usize, seed: u64) -> Vec<RecordKey> {
    let mut rng = task_rng(seed, 0);
    (0..n).map(|_| RecordKey::random(&mut rng)).collect()
}

/// Uniformly random microdata over the programme's catalog.
pub fn synthetic_microdata(programme: &TableProgramme, n: usize, seed: u64) -> Microdata {
    let mut rng = task_rng(seed, 1);
    let records = (0..n)
        .map(|_| {
            programme
                .breakdowns()
                .iter()
                .map(|b| rng.random_range(0..b.cardinality()))
                .collect()
        })
        .collect();
    Microdata::new(programme, records).expect("generated within catalog")
}

fn cell_keys_of(
    programme: &TableProgramme,
    d: &Microdata,
    keys: &[RecordKey],
    breakdowns: &BTreeSet<String>,
) -> BTreeMap<Vec<usize>, RecordKey> {
    let positions: Vec<usize> = breakdowns
        .iter()
        .filter_map(|id| programme.position(id))
        .collect();
    let mut members: BTreeMap<Vec<usize>, Vec<RecordKey>> = BTreeMap::new();
    for (r, k) in d.records().iter().zip(keys) {
        let cell: Vec<usize> = positions.iter().map(|&p| r[p]).collect();
        members.entry(cell).or_default().push(*k);
    }
    members
        .into_iter()
        .map(|(c, ks)| (c, cell_key(&ks)))
        .collect()
}

/// Perturbs every cell of every sub-table of the programme.
pub fn release(
    programme: &TableProgramme,
    d: &Microdata,
    mechanism: &ReleaseMechanism,
    seed: u64,
) -> Result<NoisyRelease> {
    if let ReleaseMechanism::CellKey { record_keys, .. } = mechanism {
        if record_keys.len() != d.len() {
            return Err(SdcError::InvalidParameter(format!(
                "{} record keys for {} records",
                record_keys.len(),
                d.len()
            )));
        }
    }
    let spsn = mechanism.spsn();
    let sampler = match mechanism {
        ReleaseMechanism::Independent { spec, .. } => Some(spec.sampler()?),
        _ => None,
    };

    // (table, marginal) pairs in deterministic order; SPSN keeps one per marginal
    let mut outputs: BTreeSet<(Option<String>, BTreeSet<String>)> = BTreeSet::new();
    for table in programme.tables() {
        for key in enumerate_subtables(table) {
            let owner = (!spsn).then(|| table.id.clone());
            outputs.insert((owner, key.breakdowns));
        }
    }

    let mut values = HashMap::new();
    for (stream, (owner, breakdowns)) in outputs.into_iter().enumerate() {
        let key = StatisticKey {
            breakdowns: breakdowns.clone(),
            cell: None,
        };
        let counts = tabulate(programme, d, &key)?;
        let mut rng = task_rng(seed, stream as u64);
        let cell_keys = match mechanism {
            ReleaseMechanism::CellKey { record_keys, .. } => {
                Some(cell_keys_of(programme, d, record_keys, &breakdowns))
            }
            _ => None,
        };
        for (cell, count) in counts {
            let noise = match mechanism {
                ReleaseMechanism::Exact => 0.0,
                ReleaseMechanism::CellKey { ptable, .. } => {
                    let ck = cell_keys
                        .as_ref()
                        .and_then(|m| m.get(&cell).copied())
                        .unwrap_or_default();
                    ptable.quantile(ck.as_fraction()) as f64
                }
                ReleaseMechanism::Independent { .. } => {
                    sampler.as_ref().expect("built above").draw(&mut rng)
                }
            };
            values.insert(
                (owner.clone(), breakdowns.clone(), cell),
                count as f64 + noise,
            );
        }
    }
    Ok(NoisyRelease {
        spsn,
        variance: mechanism.variance()?,
        values,
    })
}
