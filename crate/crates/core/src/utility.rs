//! Utility of noisy small-area counts: how often noise distorts a count by
//! more than a given relative error.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdcError};
use crate::noise::NoiseSpec;
use crate::rng::task_rng;

/// Sex breakdown `{F, M, T}` of one small area.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaRecord {
    pub area_id: String,
    pub country: String,
    pub f: u64,
    pub m: u64,
    pub t: u64,
}

impl AreaRecord {
    pub fn counts(&self) -> [u64; 3] {
        [self.f, self.m, self.t]
    }
}

pub fn read_areas<R: Read>(reader: R) -> Result<Vec<AreaRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut areas = Vec::new();
    for (row, rec) in rdr.deserialize().enumerate() {
        let a: AreaRecord = rec?;
        if a.f + a.m != a.t {
            return Err(SdcError::Schema {
                location: format!("row {}", row + 2),
                message: format!("area {}: f + m != t", a.area_id),
            });
        }
        areas.push(a);
    }
    Ok(areas)
}

pub fn write_areas<W: Write>(areas: &[AreaRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for a in areas {
        w.serialize(a)?;
    }
    w.flush()?;
    Ok(())
}

/// Areas with log-uniform totals on `[1, 500]` split binomially into F/M.
pub fn synthetic_areas(n: usize, seed: u64, countries: &[&str]) -> Vec<AreaRecord> {
    let (lo, hi) = (1f64.ln(), 501f64.ln());
    (0..n)
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let t = (rng.random_range(lo..hi).exp().floor() as u64).clamp(1, 500);
            let f = Binomial::new(t, 0.5).expect("valid").sample(&mut rng);
            let country = if countries.is_empty() {
                "XX"
            } else {
                countries[i % countries.len()]
            };
            AreaRecord {
                area_id: format!("{country}{i:06}"),
                country: country.to_string(),
                f,
                m: t - f,
                t,
            }
        })
        .collect()
}

/// Histogram over bins `(edges[i], edges[i+1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountHistogram {
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<u64>,
}

impl CountHistogram {
    pub fn new(bin_edges: Vec<f64>, bin_counts: Vec<u64>) -> Result<Self> {
        if bin_edges.len() != bin_counts.len() + 1 {
            return Err(SdcError::InvalidParameter(format!(
                "{} edges for {} bins",
                bin_edges.len(),
                bin_counts.len()
            )));
        }
        if bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SdcError::InvalidParameter(
                "bin edges must be strictly ascending".into(),
            ));
        }
        Ok(Self {
            bin_edges,
            bin_counts,
        })
    }

    /// Bins the values; values outside `(first, last]` are dropped.
    pub fn from_values<I: IntoIterator<Item = u64>>(
        values: I,
        bin_edges: Vec<f64>,
    ) -> Result<Self> {
        let mut counts = vec![0u64; bin_edges.len().saturating_sub(1)];
        for v in values {
            let v = v as f64;
            if let Some(i) = bin_edges.windows(2).position(|w| v > w[0] && v <= w[1]) {
                counts[i] += 1;
            }
        }
        Self::new(bin_edges, counts)
    }

    /// All F, M and T counts of the areas.
    pub fn from_areas(areas: &[AreaRecord], bin_edges: Vec<f64>) -> Result<Self> {
        Self::from_values(areas.iter().flat_map(AreaRecord::counts), bin_edges)
    }
}

/// `Pr(|x| > E)` for `x ~ Lap(1/ε)`: `exp(-εE)`.
pub fn tail_prob(epsilon: f64, bound: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !(bound >= 0.0) {
        return Err(SdcError::InvalidParameter(format!(
            "tail probability needs epsilon > 0 and E >= 0, got ({epsilon}, {bound})"
        )));
    }
    Ok((-epsilon * bound).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEstimate {
    pub lower: f64,
    pub upper: f64,
    pub observations: u64,
    /// Noise magnitude that breaks the relative-error threshold at the
    /// bin's right edge.
    pub magnitude: f64,
    pub tail_prob: f64,
    pub expected: f64,
}

/// Expected number of counts per bin whose Laplace noise exceeds
/// `re_threshold` times the count. Using the right bin edge makes the
/// estimate a lower bound.
pub fn binned_distortion_estimate(
    hist: &CountHistogram,
    epsilon: f64,
    re_threshold: f64,
) -> Result<Vec<BinEstimate>> {
    if !(re_threshold > 0.0) {
        return Err(SdcError::InvalidParameter(
            "relative error threshold must be positive".into(),
        ));
    }
    hist.bin_edges
        .windows(2)
        .zip(&hist.bin_counts)
        .map(|(w, &n)| {
            let magnitude = re_threshold * w[1];
            let p = tail_prob(epsilon, magnitude)?;
            Ok(BinEstimate {
                lower: w[0],
                upper: w[1],
                observations: n,
                magnitude,
                tail_prob: p,
                expected: n as f64 * p,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionTally {
    pub threshold: f64,
    /// Observations with a nonzero true count.
    pub populated: u64,
    /// Single observations beyond the threshold, per component and overall.
    pub f_exceed: u64,
    pub m_exceed: u64,
    pub t_exceed: u64,
    pub single_exceed: u64,
    /// Areas where F, M and T all exceed it with the same sign.
    pub broadband: u64,
    /// True zeros, reported as absolute distortions.
    pub zero_true: u64,
    pub zero_true_distorted: u64,
    /// True counts of the exceeding single observations, for binning.
    pub exceeding_counts: Vec<u64>,
}

impl DistortionTally {
    fn empty(threshold: f64) -> Self {
        Self {
            threshold,
            populated: 0,
            f_exceed: 0,
            m_exceed: 0,
            t_exceed: 0,
            single_exceed: 0,
            broadband: 0,
            zero_true: 0,
            zero_true_distorted: 0,
            exceeding_counts: Vec::new(),
        }
    }

    fn merge(mut self, o: Self) -> Self {
        self.populated += o.populated;
        self.f_exceed += o.f_exceed;
        self.m_exceed += o.m_exceed;
        self.t_exceed += o.t_exceed;
        self.single_exceed += o.single_exceed;
        self.broadband += o.broadband;
        self.zero_true += o.zero_true;
        self.zero_true_distorted += o.zero_true_distorted;
        self.exceeding_counts.extend(o.exceeding_counts);
        self
    }
}

/// Samples independent noise for F, M and T of every area and tallies
/// relative-error exceedances per threshold.
pub fn sample_distortions(
    areas: &[AreaRecord],
    spec: &NoiseSpec,
    seed: u64,
    re_thresholds: &[f64],
) -> Result<Vec<DistortionTally>> {
    let sampler = spec.sampler()?;
    let noises: Vec<[f64; 3]> = (0..areas.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            [
                sampler.draw(&mut rng),
                sampler.draw(&mut rng),
                sampler.draw(&mut rng),
            ]
        })
        .collect();

    Ok(re_thresholds
        .iter()
        .map(|&thr| {
            areas
                .par_iter()
                .zip(&noises)
                .fold(
                    || DistortionTally::empty(thr),
                    |mut tally, (area, noise)| {
                        let mut signs = [0i8; 3];
                        for (j, (&truth, &x)) in area.counts().iter().zip(noise).enumerate() {
                            if truth == 0 {
                                tally.zero_true += 1;
                                if x != 0.0 {
                                    tally.zero_true_distorted += 1;
                                }
                                continue;
                            }
                            tally.populated += 1;
                            if x.abs() / truth as f64 > thr {
                                signs[j] = if x > 0.0 { 1 } else { -1 };
                                tally.single_exceed += 1;
                                tally.exceeding_counts.push(truth);
                                match j {
                                    0 => tally.f_exceed += 1,
                                    1 => tally.m_exceed += 1,
                                    _ => tally.t_exceed += 1,
                                }
                            }
                        }
                        if signs[0] != 0 && signs[0] == signs[1] && signs[1] == signs[2] {
                            tally.broadband += 1;
                        }
                        tally
                    },
                )
                .reduce(|| DistortionTally::empty(thr), DistortionTally::merge)
        })
        .map(|mut t| {
            t.exceeding_counts.sort_unstable();
            t
        })
        .collect())
}

/// Smallest ε for which `t` Laplace-noised outputs all stay within `E_α`
/// with confidence `α` (union bound): `ln(t/(1-α)) / E_α`.
pub fn dp_utility_eps(e_alpha: f64, t_outputs: f64, alpha: f64) -> Result<f64> {
    if !(e_alpha > 0.0 && t_outputs > 0.0) {
        return Err(SdcError::InvalidParameter(
            "E_alpha and t must be positive".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SdcError::InvalidParameter(format!(
            "alpha={alpha} outside (0,1)"
        )));
    }
    Ok((t_outputs / (1.0 - alpha)).ln() / e_alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_values() {
        assert!((tail_prob(0.1, 40.0).unwrap() - 0.0183).abs() < 1e-4);
        assert_eq!(tail_prob(0.7, 0.0).unwrap(), 1.0);
        assert!((tail_prob(0.025, 100.0).unwrap() - 0.0821).abs() < 1e-4);
        assert!(tail_prob(0.0, 1.0).is_err());
    }

    #[test]
    fn tail_frequency_of_laplace_draws() {
        let spec = NoiseSpec::Laplace {
            epsilon: 0.025,
            delta_sens: 1,
        };
        let xs = crate::noise::sample_noise(&spec, 21, 1_000_000)
            .unwrap()
            .as_f64();
        let n = xs.len() as f64;
        let freq = xs.iter().filter(|x| x.abs() > 100.0).count() as f64 / n;
        let p = tail_prob(0.025, 100.0).unwrap();
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!((freq - p).abs() < 3.0 * sigma, "freq {freq} vs {p}");
    }

    #[test]
    fn worked_bin() {
        let h = CountHistogram::new(vec![60.0, 80.0], vec![11_680]).unwrap();
        let est = binned_distortion_estimate(&h, 0.1, 0.5).unwrap();
        assert_eq!(est[0].magnitude, 40.0);
        assert_eq!(est[0].expected.round(), 214.0);
        let empty = CountHistogram::new(vec![0.0, 20.0], vec![0]).unwrap();
        assert_eq!(
            binned_distortion_estimate(&empty, 0.1, 0.5).unwrap()[0].expected,
            0.0
        );
    }

    #[test]
    fn histogram_validation() {
        assert!(CountHistogram::new(vec![0.0, 0.0], vec![1]).is_err());
        assert!(CountHistogram::new(vec![0.0, 1.0], vec![1, 2]).is_err());
        let h = CountHistogram::from_values([1, 5, 10, 11, 0], vec![0.0, 5.0, 10.0]).unwrap();
        assert_eq!(h.bin_counts, vec![2, 1]);
    }

    #[test]
    fn bounded_noise_cannot_distort_large_counts() {
        let areas = synthetic_areas(3000, 1, &["AA"]);
        let spec = NoiseSpec::CellKey {
            variance: 2.0,
            bound: 5,
            js: 0,
        };
        let tallies = sample_distortions(&areas, &spec, 4, &[0.2]).unwrap();
        assert!(tallies[0].exceeding_counts.iter().all(|&c| c < 25));
        assert!(tallies[0].single_exceed > 0);
    }

    #[test]
    fn broadband_bounded_by_components() {
        let areas = synthetic_areas(5000, 2, &["AA", "BB"]);
        let spec = NoiseSpec::Laplace {
            epsilon: 0.1,
            delta_sens: 1,
        };
        for t in sample_distortions(&areas, &spec, 8, &[0.2, 0.5, 1.0]).unwrap() {
            assert!(t.broadband <= t.f_exceed.min(t.m_exceed).min(t.t_exceed));
            assert_eq!(t.single_exceed, t.f_exceed + t.m_exceed + t.t_exceed);
            assert_eq!(t.populated + t.zero_true, 3 * 5000);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let areas = synthetic_areas(500, 3, &[]);
        let spec = NoiseSpec::Laplace {
            epsilon: 0.2,
            delta_sens: 1,
        };
        assert_eq!(
            sample_distortions(&areas, &spec, 1, &[0.5]).unwrap(),
            sample_distortions(&areas, &spec, 1, &[0.5]).unwrap()
        );
    }

    #[test]
    fn area_csv_round_trip() {
        let areas = synthetic_areas(20, 4, &["MT"]);
        let mut buf = Vec::new();
        write_areas(&areas, &mut buf).unwrap();
        assert_eq!(read_areas(buf.as_slice()).unwrap(), areas);
        let bad = "area_id,country,f,m,t\nA,MT,1,1,3\n";
        assert!(read_areas(bad.as_bytes()).is_err());
    }

    #[test]
    fn synthetic_areas_are_consistent() {
        let areas = synthetic_areas(2000, 5, &["AA"]);
        assert!(areas
            .iter()
            .all(|a| a.f + a.m == a.t && (1..=500).contains(&a.t)));
    }

    #[test]
    fn utility_eps() {
        assert!((dp_utility_eps(20.0, 68.0, 0.68).unwrap() - 0.268).abs() < 5e-4);
        assert!((dp_utility_eps(20.0, 3.7e4, 0.68).unwrap() - 0.583).abs() < 5e-4);
        assert!(
            dp_utility_eps(30.0, 68.0, 0.68).unwrap() < dp_utility_eps(20.0, 68.0, 0.68).unwrap()
        );
        assert!(
            dp_utility_eps(20.0, 100.0, 0.68).unwrap() > dp_utility_eps(20.0, 68.0, 0.68).unwrap()
        );
        assert!(dp_utility_eps(20.0, 68.0, 1.0).is_err());
    }
}
