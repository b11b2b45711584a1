//! Risk/utility scans over noise parameter space.
//!
//! Grids record raw probabilities alongside the pass/fail flags derived from
//! them, so the CSV can be re-thresholded or plotted externally.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    averaging_success, disclosure_probability, p1_exact, tuples_needed, AveragingModel,
};
use crate::error::{Result, SdcError};
use crate::noise::gen_ptable;
use crate::utility::dp_utility_eps;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<f64>,
}

impl GridAxis {
    pub fn new(name: &str, values: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            values,
        }
    }

    /// Inclusive range `min, min+step, …, max`, computed by index and rounded
    /// to 12 decimals so grid values print cleanly.
    pub fn range(name: &str, min: f64, max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(max >= min) || !min.is_finite() || !max.is_finite() {
            return Err(SdcError::InvalidParameter(format!(
                "bad range for {name}: {min}..{max} step {step}"
            )));
        }
        let n = ((max - min) / step + 1e-9).floor() as usize + 1;
        let tidy = |x: f64| (x * 1e12).round() / 1e12;
        Ok(Self::new(
            name,
            (0..n).map(|i| tidy(min + i as f64 * step)).collect(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Number(f64),
    Flag(bool),
    Missing,
}

impl CellValue {
    fn render(&self) -> String {
        match self {
            CellValue::Number(x) if x.is_infinite() => "inf".to_string(),
            CellValue::Number(x) => format!("{x}"),
            CellValue::Flag(b) => (if *b { "1" } else { "0" }).to_string(),
            CellValue::Missing => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            CellValue::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_flag(&self) -> Option<bool> {
        match self {
            CellValue::Flag(b) => Some(*b),
            _ => None,
        }
    }
}

/// Rectangular grid; every cell carries the same ordered columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintGrid {
    pub axes: Vec<GridAxis>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<CellValue>>,
}

impl ConstraintGrid {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn value(&self, row: usize, name: &str) -> Option<CellValue> {
        self.column(name).map(|c| self.cells[row][c])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.cells {
            w.write_record(row.iter().map(CellValue::render))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Heat map over the `V`–`E` plane of bounded (cell-key) noise.
///
/// Per point: p-table, `p1`, tuples needed for `E` disclosure at `alpha`,
/// the disclosure probability for each `m_avail`, and, if `kt2` is given,
/// the Gaussian averaging success for that `k/t²`.
pub fn scan_ve(
    v_axis: &GridAxis,
    e_axis: &GridAxis,
    m_avail: &[f64],
    kt2: Option<f64>,
    alpha: f64,
) -> Result<ConstraintGrid> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SdcError::InvalidParameter(format!(
            "alpha={alpha} outside (0,1)"
        )));
    }
    if e_axis.values.iter().any(|e| *e < 1.0 || e.fract() != 0.0) {
        return Err(SdcError::InvalidParameter(
            "E values must be positive integers".into(),
        ));
    }
    let mut columns: Vec<String> = ["V", "E", "feasible", "p1", "m_required"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in m_avail {
        columns.push(format!("p_disclose_m{m}"));
        columns.push(format!("e_safe_m{m}"));
    }
    if kt2.is_some() {
        columns.push("alpha_averaging".into());
        columns.push("averaging_safe".into());
    }

    let points: Vec<(f64, f64)> = e_axis
        .values
        .iter()
        .flat_map(|&e| v_axis.values.iter().map(move |&v| (v, e)))
        .collect();
    let cells = points
        .par_iter()
        .map(|&(v, e)| -> Result<Vec<CellValue>> {
            let mut row = vec![CellValue::Number(v), CellValue::Number(e)];
            let bound = e as u32;
            let ptable = match gen_ptable(v, bound, 0) {
                Ok(t) => t,
                Err(SdcError::InfeasibleVariance { .. }) => {
                    row.push(CellValue::Flag(false));
                    row.resize(columns.len(), CellValue::Missing);
                    return Ok(row);
                }
                Err(other) => return Err(other),
            };
            let p1 = p1_exact(ptable.pmf(), bound)?;
            row.push(CellValue::Flag(true));
            row.push(CellValue::Number(p1));
            row.push(CellValue::Number(
                tuples_needed(p1, alpha)?.map_or(f64::INFINITY, |m| m as f64),
            ));
            for &m in m_avail {
                let p = disclosure_probability(p1, m);
                row.push(CellValue::Number(p));
                row.push(CellValue::Flag(p < alpha));
            }
            if let Some(kt2) = kt2 {
                let a = averaging_success(v, kt2, 1.0, AveragingModel::Gaussian, 0.5)?;
                row.push(CellValue::Number(a));
                row.push(CellValue::Flag(a < alpha));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConstraintGrid {
        axes: vec![v_axis.clone(), e_axis.clone()],
        columns,
        cells,
    })
}

/// One-parameter scan over the per-count DP budget ε with `V = 2/ε²`.
///
/// Flags per point:
/// * `averaging_safe_i`: Gaussian averaging success for `kt2[i]` below `alpha`;
/// * `utility_ok_j`: ε at least `dp_utility_eps(E_α, t[j], α)`;
/// * `strict`: every averaging and utility constraint holds;
/// * `relaxed`: the smallest `k/t²` may be vulnerable (the next smallest
///   must hold) and only the smallest `t` needs the utility bound.
pub fn scan_eps(
    eps_axis: &GridAxis,
    kt2_values: &[f64],
    e_alpha: f64,
    t_outputs: &[f64],
    alpha: f64,
) -> Result<ConstraintGrid> {
    if kt2_values.is_empty() || t_outputs.is_empty() {
        return Err(SdcError::Empty("k/t² values and output counts".into()));
    }
    if eps_axis.values.iter().any(|e| !(*e > 0.0)) {
        return Err(SdcError::InvalidParameter(
            "epsilon values must be positive".into(),
        ));
    }
    let mut kt2_sorted = kt2_values.to_vec();
    kt2_sorted.sort_by(f64::total_cmp);
    let mut t_sorted = t_outputs.to_vec();
    t_sorted.sort_by(f64::total_cmp);
    let relaxed_kt2 = kt2_sorted[1.min(kt2_sorted.len() - 1)];
    let utility_bounds: Vec<f64> = t_sorted
        .iter()
        .map(|&t| dp_utility_eps(e_alpha, t, alpha))
        .collect::<Result<_>>()?;

    let mut columns = vec!["epsilon".to_string(), "V".to_string()];
    for k in &kt2_sorted {
        columns.push(format!("alpha_averaging_kt2_{k}"));
        columns.push(format!("averaging_safe_kt2_{k}"));
    }
    for t in &t_sorted {
        columns.push(format!("eps_utility_min_t{t}"));
        columns.push(format!("e_alpha_t{t}"));
        columns.push(format!("utility_ok_t{t}"));
    }
    columns.push("strict".into());
    columns.push("relaxed".into());

    let cells = eps_axis
        .values
        .par_iter()
        .map(|&eps| -> Result<Vec<CellValue>> {
            let v = 2.0 / (eps * eps);
            let mut row = vec![CellValue::Number(eps), CellValue::Number(v)];
            let mut strict = true;
            let mut relaxed = true;
            for &k in &kt2_sorted {
                let a = averaging_success(v, k, 1.0, AveragingModel::Gaussian, 0.5)?;
                let safe = a < alpha;
                strict &= safe;
                if k >= relaxed_kt2 {
                    relaxed &= safe;
                }
                row.push(CellValue::Number(a));
                row.push(CellValue::Flag(safe));
            }
            for (i, (&t, &bound)) in t_sorted.iter().zip(&utility_bounds).enumerate() {
                let ok = eps >= bound;
                strict &= ok;
                if i == 0 {
                    relaxed &= ok;
                }
                row.push(CellValue::Number(bound));
                row.push(CellValue::Number((t / (1.0 - alpha)).ln() / eps));
                row.push(CellValue::Flag(ok));
            }
            row.push(CellValue::Flag(strict));
            row.push(CellValue::Flag(relaxed));
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConstraintGrid {
        axes: vec![eps_axis.clone()],
        columns,
        cells,
    })
}

/// First and last ε where `flag` holds, if any.
pub fn feasible_band(grid: &ConstraintGrid, flag: &str) -> Option<(f64, f64)> {
    let col = grid.column(flag)?;
    let eps = grid.column("epsilon")?;
    let hits: Vec<f64> = grid
        .cells
        .iter()
        .filter(|row| row[col].as_flag() == Some(true))
        .filter_map(|row| row[eps].as_f64())
        .collect();
    Some((*hits.first()?, *hits.last()?))
}

/// Largest per-count ε for which Gaussian averaging success at `k/t²` stays
/// below `alpha`, with `V = 2/ε²`.
pub fn max_safe_epsilon(kt2: f64, alpha: f64) -> Result<f64> {
    if !(kt2 > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(SdcError::InvalidParameter(
            "need kt2 > 0 and alpha in (0,1)".into(),
        ));
    }
    let success =
        |eps: f64| averaging_success(2.0 / (eps * eps), kt2, 1.0, AveragingModel::Gaussian, 0.5);
    let (mut lo, mut hi) = (1e-9, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if success(mid)? < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        let a = GridAxis::range("V", 0.5, 2.0, 0.5).unwrap();
        assert_eq!(a.values, vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!(
            GridAxis::range("E", 1.0, 10.0, 1.0).unwrap().values.len(),
            10
        );
        assert!(GridAxis::range("E", 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn uniform_column_matches_combinatorics() {
        let e_axis = GridAxis::new("E", (1..=8).map(f64::from).collect());
        for e in 1..=8u32 {
            let v = (e * (e + 1)) as f64 / 3.0;
            let grid = scan_ve(&GridAxis::new("V", vec![v]), &e_axis, &[], None, 0.68).unwrap();
            let row = (e - 1) as usize;
            let p1 = grid.value(row, "p1").unwrap().as_f64().unwrap();
            let expected = 20.0 / ((2 * e + 1) as f64).powi(3);
            assert!((p1 - expected).abs() < 1e-14);
            let m = grid.value(row, "m_required").unwrap().as_f64().unwrap();
            assert_eq!(m, tuples_needed(expected, 0.68).unwrap().unwrap() as f64);
        }
    }

    #[test]
    fn ve_cell_v2_e5() {
        let grid = scan_ve(
            &GridAxis::new("V", vec![2.0]),
            &GridAxis::new("E", vec![5.0]),
            &[2.8e7, 7e5],
            Some(0.0867),
            0.68,
        )
        .unwrap();
        let m = grid.value(0, "m_required").unwrap().as_f64().unwrap();
        assert!(m > 1e6 && m < 1e8, "m={m}");
        assert_eq!(
            grid.value(0, "e_safe_m28000000").unwrap().as_flag(),
            Some(false)
        );
        assert_eq!(
            grid.value(0, "e_safe_m700000").unwrap().as_flag(),
            Some(true)
        );
    }

    #[test]
    fn infeasible_cells_are_marked() {
        let grid = scan_ve(
            &GridAxis::new("V", vec![1.0, 10.0]),
            &GridAxis::new("E", vec![3.0]),
            &[1e5],
            Some(0.1),
            0.68,
        )
        .unwrap();
        assert_eq!(grid.value(0, "feasible").unwrap().as_flag(), Some(true));
        assert_eq!(grid.value(1, "feasible").unwrap().as_flag(), Some(false));
        assert_eq!(grid.value(1, "p1"), Some(CellValue::Missing));
        assert_eq!(grid.cells[1].len(), grid.columns.len());
    }

    #[test]
    fn safe_epsilon_limits() {
        let no_spsn = max_safe_epsilon(0.0118, 0.68).unwrap();
        assert!((no_spsn - 0.3).abs() < 0.01, "{no_spsn}");
        let spsn = max_safe_epsilon(0.0867, 0.68).unwrap();
        assert!((spsn - 0.8).abs() < 0.05, "{spsn}");
        let next = max_safe_epsilon(0.0170, 0.68).unwrap();
        assert!((next - 0.37).abs() < 0.005, "{next}");
        assert!(max_safe_epsilon(0.112, 0.68).unwrap() > 0.9);
    }

    #[test]
    fn eps_band() {
        let axis = GridAxis::range("epsilon", 0.01, 1.0, 0.001).unwrap();
        let grid = scan_eps(&axis, &[0.0118, 0.0170], 20.0, &[68.0, 3.7e4], 0.68).unwrap();
        assert_eq!(feasible_band(&grid, "strict"), None);
        let (lo, hi) = feasible_band(&grid, "relaxed").unwrap();
        assert!((lo - 0.27).abs() < 0.005, "{lo}");
        assert!((hi - 0.37).abs() < 0.005, "{hi}");
    }

    #[test]
    fn grid_csv_is_deterministic() {
        let axis = GridAxis::range("epsilon", 0.1, 1.0, 0.1).unwrap();
        let render = || {
            let g = scan_eps(&axis, &[0.0118], 20.0, &[68.0], 0.68).unwrap();
            let mut buf = Vec::new();
            g.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(render(), render());
    }
}
