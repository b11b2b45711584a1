//! Static table programmes, microdata and exact tabulation.
//!
//! A programme is a catalog of categorical breakdowns plus a list of
//! cross-tabulations over them. Totals are never stored as categories: a
//! margin exists only as the full summation over a breakdown, so every
//! sub-table of an `m`-dimensional table is one of the `2^m` subsets of its
//! breakdowns.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdcError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub id: String,
    pub categories: Vec<String>,
}

impl Breakdown {
    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub id: String,
    pub breakdowns: Vec<String>,
}

impl TableSpec {
    pub fn dimension(&self) -> usize {
        self.breakdowns.len()
    }

    pub fn breakdown_set(&self) -> BTreeSet<String> {
        self.breakdowns.iter().cloned().collect()
    }
}

/// Target statistic `T_A` (a whole marginal table) or, with `cell` set, one
/// cell `T_a` of it.
///
/// `cell` holds category indices aligned with the iteration order of
/// `breakdowns`, i.e. sorted by breakdown id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StatisticKey {
    pub breakdowns: BTreeSet<String>,
    pub cell: Option<Vec<usize>>,
}

impl StatisticKey {
    pub fn total() -> Self {
        Self {
            breakdowns: BTreeSet::new(),
            cell: None,
        }
    }

    pub fn table<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            breakdowns: ids.into_iter().map(Into::into).collect(),
            cell: None,
        }
    }

    pub fn with_cell(mut self, cell: Vec<usize>) -> Self {
        self.cell = Some(cell);
        self
    }

    pub fn is_total(&self) -> bool {
        self.breakdowns.is_empty()
    }

    /// Space-separated breakdown ids, `total` for the empty key.
    pub fn label(&self) -> String {
        if self.breakdowns.is_empty() {
            "total".to_string()
        } else {
            self.breakdowns
                .iter()
                .map(String::as_str)
                .collect::<Vec<_>>()
                .join(" ")
        }
    }
}

impl fmt::Display for StatisticKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())?;
        if let Some(cell) = &self.cell {
            let idx: Vec<String> = cell.iter().map(|c| c.to_string()).collect();
            write!(f, "[{}]", idx.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgrammeDocument {
    breakdowns: Vec<Breakdown>,
    tables: Vec<TableSpec>,
}

/// The static output universe: a breakdown catalog and the `M` tables
/// cross-tabulating it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableProgramme {
    breakdowns: Vec<Breakdown>,
    tables: Vec<TableSpec>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TableProgramme {
    /// Validates and builds a programme. Identical repeated breakdown
    /// declarations collapse into one; conflicting ones are an error.
    pub fn new(breakdowns: Vec<Breakdown>, tables: Vec<TableSpec>) -> Result<Self> {
        let mut catalog: Vec<Breakdown> = Vec::with_capacity(breakdowns.len());
        let mut index = HashMap::new();
        for (i, b) in breakdowns.into_iter().enumerate() {
            let location = format!("breakdowns[{i}]");
            if b.id.is_empty() {
                return Err(SdcError::Schema {
                    location,
                    message: "empty breakdown id".into(),
                });
            }
            if b.categories.is_empty() {
                return Err(SdcError::Schema {
                    location,
                    message: format!("breakdown '{}' has no categories", b.id),
                });
            }
            let mut seen = BTreeSet::new();
            for (j, c) in b.categories.iter().enumerate() {
                if !seen.insert(c.as_str()) {
                    return Err(SdcError::DuplicateId {
                        id: c.clone(),
                        location: format!("{location}.categories[{j}]"),
                    });
                }
            }
            match index.get(&b.id) {
                Some(&existing) => {
                    if catalog[existing] != b {
                        return Err(SdcError::DuplicateId { id: b.id, location });
                    }
                }
                None => {
                    index.insert(b.id.clone(), catalog.len());
                    catalog.push(b);
                }
            }
        }

        let mut table_ids = BTreeSet::new();
        for (i, t) in tables.iter().enumerate() {
            let location = format!("tables[{i}]");
            if !table_ids.insert(t.id.as_str()) {
                return Err(SdcError::DuplicateId {
                    id: t.id.clone(),
                    location,
                });
            }
            if t.breakdowns.is_empty() {
                return Err(SdcError::Schema {
                    location,
                    message: format!("table '{}' has no breakdowns", t.id),
                });
            }
            let mut seen = BTreeSet::new();
            for (j, id) in t.breakdowns.iter().enumerate() {
                let location = format!("{location}.breakdowns[{j}]");
                if !index.contains_key(id) {
                    return Err(SdcError::UnknownBreakdown {
                        id: id.clone(),
                        location,
                    });
                }
                if !seen.insert(id.as_str()) {
                    return Err(SdcError::DuplicateId {
                        id: id.clone(),
                        location,
                    });
                }
            }
        }

        Ok(Self {
            breakdowns: catalog,
            tables,
            index,
        })
    }

    /// Parses the JSON programme document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProgrammeDocument = serde_json::from_str(text).map_err(|e| SdcError::Schema {
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        Self::new(doc.breakdowns, doc.tables)
    }

    pub fn from_reader<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn breakdowns(&self) -> &[Breakdown] {
        &self.breakdowns
    }

    pub fn tables(&self) -> &[TableSpec] {
        &self.tables
    }

    pub fn table(&self, id: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.id == id)
    }

    pub fn breakdown(&self, id: &str) -> Option<&Breakdown> {
        self.index.get(id).map(|&i| &self.breakdowns[i])
    }

    /// Position of a breakdown in the catalog (and thus in microdata records).
    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn cardinality(&self, id: &str) -> Option<usize> {
        self.breakdown(id).map(Breakdown::cardinality)
    }

    /// Checks that every breakdown of `key` exists and that its cell, if any,
    /// addresses valid categories.
    pub fn validate_key(&self, key: &StatisticKey) -> Result<()> {
        for id in &key.breakdowns {
            if !self.index.contains_key(id) {
                return Err(SdcError::UnknownBreakdown {
                    id: id.clone(),
                    location: format!("statistic {key}"),
                });
            }
        }
        if let Some(cell) = &key.cell {
            if cell.len() != key.breakdowns.len() {
                return Err(SdcError::InvalidParameter(format!(
                    "cell of {key} has {} values for {} breakdowns",
                    cell.len(),
                    key.breakdowns.len()
                )));
            }
            for (id, &c) in key.breakdowns.iter().zip(cell) {
                let b = self.breakdown(id).expect("validated above");
                if c >= b.cardinality() {
                    return Err(SdcError::InvalidCategory {
                        breakdown: id.clone(),
                        value: c.to_string(),
                        location: format!("statistic {key}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Resolves `BREAKDOWN=label` pairs into a cell key.
    pub fn cell_key(&self, assignments: &[(String, String)]) -> Result<StatisticKey> {
        let mut by_id = BTreeMap::new();
        for (id, label) in assignments {
            let b = self
                .breakdown(id)
                .ok_or_else(|| SdcError::UnknownBreakdown {
                    id: id.clone(),
                    location: "cell assignment".into(),
                })?;
            let c = b
                .category_index(label)
                .ok_or_else(|| SdcError::InvalidCategory {
                    breakdown: id.clone(),
                    value: label.clone(),
                    location: "cell assignment".into(),
                })?;
            if by_id.insert(id.clone(), c).is_some() {
                return Err(SdcError::DuplicateId {
                    id: id.clone(),
                    location: "cell assignment".into(),
                });
            }
        }
        Ok(StatisticKey {
            breakdowns: by_id.keys().cloned().collect(),
            cell: Some(by_id.into_values().collect()),
        })
    }

    /// All cells of the marginal table over `breakdowns`, in lexicographic
    /// order of category indices.
    pub fn cells(&self, breakdowns: &BTreeSet<String>) -> Vec<Vec<usize>> {
        let dims: Vec<usize> = breakdowns
            .iter()
            .map(|id| self.cardinality(id).unwrap_or(0))
            .collect();
        cartesian(&dims)
    }
}

pub(crate) fn cartesian(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::with_capacity(dims.len())];
    for &d in dims {
        let mut next = Vec::with_capacity(out.len() * d);
        for prefix in &out {
            for c in 0..d {
                let mut v = prefix.clone();
                v.push(c);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// All `2^m` marginal keys of a table, from the total margin up to the table
/// itself, ordered by size then lexicographically.
pub fn enumerate_subtables(table: &TableSpec) -> Vec<StatisticKey> {
    let ids: Vec<&String> = table.breakdowns.iter().collect();
    let m = ids.len();
    let mut keys: Vec<StatisticKey> = (0u64..(1u64 << m))
        .map(|mask| StatisticKey {
            breakdowns: (0..m)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ids[i].clone())
                .collect(),
            cell: None,
        })
        .collect();
    keys.sort_by(|a, b| {
        a.breakdowns
            .len()
            .cmp(&b.breakdowns.len())
            .then_with(|| a.breakdowns.cmp(&b.breakdowns))
    });
    keys
}

/// Person-level database `d`: one category index per catalog breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Microdata {
    records: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborOp {
    Add,
    Remove,
}

impl Microdata {
    pub fn new(programme: &TableProgramme, records: Vec<Vec<usize>>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            check_record(programme, r, &format!("records[{i}]"))?;
        }
        Ok(Self { records })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Vec<usize>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Reads CSV microdata with one column per catalog breakdown, holding
    /// category labels. Extra columns are rejected.
    pub fn from_csv<R: Read>(programme: &TableProgramme, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut column_of = vec![None; programme.breakdowns().len()];
        for (col, h) in headers.iter().enumerate() {
            let pos = programme
                .position(h)
                .ok_or_else(|| SdcError::UnknownBreakdown {
                    id: h.to_string(),
                    location: format!("header column {}", col + 1),
                })?;
            column_of[pos] = Some(col);
        }
        if let Some(missing) = column_of.iter().position(Option::is_none) {
            return Err(SdcError::Schema {
                location: "header".into(),
                message: format!(
                    "missing column for breakdown '{}'",
                    programme.breakdowns()[missing].id
                ),
            });
        }
        let mut records = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut values = Vec::with_capacity(column_of.len());
            for (pos, col) in column_of.iter().enumerate() {
                let col = col.expect("checked above");
                let b = &programme.breakdowns()[pos];
                let label = rec.get(col).unwrap_or("");
                let c = b
                    .category_index(label)
                    .ok_or_else(|| SdcError::InvalidCategory {
                        breakdown: b.id.clone(),
                        value: label.to_string(),
                        location: format!("row {}", row + 2),
                    })?;
                values.push(c);
            }
            records.push(values);
        }
        Ok(Self { records })
    }

    /// Neighbouring database differing in exactly one record.
    pub fn neighbor(&self, op: NeighborOp, record: &[usize]) -> Result<Self> {
        let mut records = self.records.clone();
        match op {
            NeighborOp::Add => records.push(record.to_vec()),
            NeighborOp::Remove => {
                let pos = records
                    .iter()
                    .position(|r| r.as_slice() == record)
                    .ok_or(SdcError::RecordNotFound)?;
                records.remove(pos);
            }
        }
        Ok(Self { records })
    }
}

fn check_record(programme: &TableProgramme, r: &[usize], location: &str) -> Result<()> {
    if r.len() != programme.breakdowns().len() {
        return Err(SdcError::Schema {
            location: location.to_string(),
            message: format!(
                "record has {} values, catalog has {} breakdowns",
                r.len(),
                programme.breakdowns().len()
            ),
        });
    }
    for (b, &c) in programme.breakdowns().iter().zip(r) {
        if c >= b.cardinality() {
            return Err(SdcError::InvalidCategory {
                breakdown: b.id.clone(),
                value: c.to_string(),
                location: location.to_string(),
            });
        }
    }
    Ok(())
}

/// Exact counts per cell, zero cells included.
pub type Tabulation = BTreeMap<Vec<usize>, u64>;

/// Exact output mechanism: counts records per cell of `key`. For a cell key
/// only that cell is returned.
pub fn tabulate(
    programme: &TableProgramme,
    d: &Microdata,
    key: &StatisticKey,
) -> Result<Tabulation> {
    programme.validate_key(key)?;
    let positions: Vec<usize> = key
        .breakdowns
        .iter()
        .map(|id| programme.position(id).expect("validated"))
        .collect();
    let mut counts: Tabulation = match &key.cell {
        Some(cell) => std::iter::once((cell.clone(), 0)).collect(),
        None => programme
            .cells(&key.breakdowns)
            .into_iter()
            .map(|c| (c, 0))
            .collect(),
    };
    let mut probe = Vec::with_capacity(positions.len());
    for r in &d.records {
        probe.clear();
        probe.extend(positions.iter().map(|&p| r[p]));
        if let Some(c) = counts.get_mut(probe.as_slice()) {
            *c += 1;
        }
    }
    Ok(counts)
}

/// Sums a tabulation over `full` down to the sub-key `sub`, returning the
/// count of the cell `sub_cell`.
pub fn marginal_sum(
    full: &BTreeSet<String>,
    table: &BTreeMap<Vec<usize>, f64>,
    sub: &BTreeSet<String>,
    sub_cell: &[usize],
) -> f64 {
    let keep: Vec<Option<usize>> = full
        .iter()
        .map(|id| sub.iter().position(|s| s == id))
        .collect();
    table
        .iter()
        .filter(|(cell, _)| {
            keep.iter()
                .zip(cell.iter())
                .all(|(k, &c)| k.is_none_or(|j| sub_cell[j] == c))
        })
        .map(|(_, v)| v)
        .sum()
}
