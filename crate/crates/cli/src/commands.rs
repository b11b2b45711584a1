use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde_json::{json, Value};

use sdcrisk_core::accounting::{
    noise_scale_for_global, sensitivity, split_laplace_variance, tightest_delta, us_table_budget,
    BudgetMode, OutputRequest,
};
use sdcrisk_core::attack::{
    averaging_success, margin_report, p1_exact, run_averaging_attack, simulate_averaging,
    simulate_bound_disclosure, simulate_margin_exploit, tuples_needed, AttackKind, AttackReport,
    AveragingModel, MarginTuple,
};
use sdcrisk_core::irr::{rank_statistics, write_ranking_csv, CardinalityOverrides};
use sdcrisk_core::noise::{gen_ptable, geometric2_truncated, DiscretePmf, NoiseSpec, PTable};
use sdcrisk_core::release::{assign_record_keys, release, synthetic_microdata, ReleaseMechanism};
use sdcrisk_core::scan::{feasible_band, scan_eps, scan_ve, GridAxis};
use sdcrisk_core::table::{enumerate_subtables, Microdata, StatisticKey, TableProgramme};
use sdcrisk_core::utility::{
    binned_distortion_estimate, read_areas, sample_distortions, synthetic_areas, AreaRecord,
    CountHistogram,
};

use crate::args::*;
use crate::error::CliError;
use crate::output::{resolve_seed, write_csv, write_json, Meta};

type Result<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn load_programme(path: &Path) -> Result<TableProgramme> {
    Ok(TableProgramme::from_reader(open(path)?)?)
}

fn required<T: Copy>(value: Option<T>, flag: &str, why: &str) -> Result<T> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required {why}")))
}

pub fn ptable(args: &PtableArgs) -> Result<()> {
    let table = gen_ptable(args.v, args.e, args.js)?;
    let meta = Meta::new("ptable", args, None)?;
    write_csv(&meta, args.out.as_deref(), |buf| Ok(table.write_csv(buf)?))
}

fn parse_overrides(programme: &TableProgramme, specs: &[String]) -> Result<CardinalityOverrides> {
    let mut overrides = CardinalityOverrides::new();
    for spec in specs {
        let (id, card) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--geo expects ID=CARD, got {spec:?}")))?;
        if programme.breakdown(id).is_none() {
            return Err(CliError::Usage(format!("--geo: unknown breakdown {id:?}")));
        }
        let card: u64 = card
            .parse()
            .map_err(|_| CliError::Usage(format!("--geo: bad cardinality in {spec:?}")))?;
        overrides.insert(id.to_string(), card);
    }
    Ok(overrides)
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let programme = load_programme(&args.programme)?;
    let overrides = parse_overrides(&programme, &args.geo)?;
    let ranking = rank_statistics(&programme, args.spsn.enabled(), &overrides)?;
    let rows = match args.sort {
        SortKey::Ratio => &ranking.by_ratio,
        SortKey::T => &ranking.by_t,
    };
    let meta = Meta::new("analyze", args, None)?;
    write_csv(&meta, args.out.as_deref(), |buf| {
        Ok(write_ranking_csv(rows, buf)?)
    })
}

fn ptable_for(e: u32, v: Option<f64>) -> Result<PTable> {
    Ok(match v {
        Some(v) => gen_ptable(v, e, 0)?,
        None => PTable::uniform(e),
    })
}

pub fn bound_disclosure(args: &mut BoundArgs) -> Result<()> {
    let table = match args.dist {
        PTableDist::Uniform => PTable::uniform(args.e),
        PTableDist::Ptable => gen_ptable(required(args.v, "v", "with --dist ptable")?, args.e, 0)?,
    };
    let report = if args.streams == 0 {
        let p1 = p1_exact(table.pmf(), args.e)?;
        let mut r = AttackReport::new(AttackKind::BoundDisclosure, p1);
        r.m_required = tuples_needed(p1, args.alpha)?;
        r
    } else {
        let seed = resolve_seed(args.seed);
        args.seed = Some(seed);
        let len = match args.stream_len {
            Some(n) => n,
            None => {
                let p1 = p1_exact(table.pmf(), args.e)?;
                tuples_needed(p1, args.alpha)?.ok_or_else(|| {
                    CliError::Domain(
                        "p1 = 0: the bound can never be disclosed; give --stream-len".into(),
                    )
                })?
            }
        };
        simulate_bound_disclosure(&table, len, args.streams, args.alpha, seed)?
    };
    let meta = Meta::new("attack bound-disclosure", args, args.seed)?;
    write_json(&meta, args.out.as_deref(), &report)
}

fn read_tuples(path: &Path) -> Result<Vec<MarginTuple>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut tuples = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .map(|s| s.parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(format!("{} row {}: {e}", path.display(), row + 2)))?;
        let Some((&total, internals)) = values.split_last() else {
            continue;
        };
        if internals.is_empty() {
            return Err(CliError::Usage(format!(
                "{} row {}: need internal columns and a total",
                path.display(),
                row + 2
            )));
        }
        tuples.push(MarginTuple {
            internals: internals.to_vec(),
            total,
        });
    }
    Ok(tuples)
}

pub fn margin(args: &mut MarginArgs) -> Result<()> {
    let report = match (&args.input, args.simulate) {
        (Some(path), _) => margin_report(&read_tuples(path)?, args.e),
        (None, Some(n)) => {
            let seed = resolve_seed(args.seed);
            args.seed = Some(seed);
            simulate_margin_exploit(&ptable_for(args.e, args.v)?, args.internals, n, seed)?
        }
        (None, None) => return Err(CliError::Usage("give --input or --simulate".into())),
    };
    let meta = Meta::new("attack margin", args, args.seed)?;
    write_json(&meta, args.out.as_deref(), &report)
}

impl NoiseArgs {
    fn spec(&self, default: NoiseKind) -> Result<NoiseSpec> {
        let kind = match (self.noise, self.e, self.epsilon) {
            (Some(k), _, _) => k,
            (None, Some(_), None) => NoiseKind::CellKey,
            (None, None, Some(_)) => NoiseKind::Laplace,
            (None, Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "both --e and --epsilon given; choose --noise".into(),
                ))
            }
            (None, None, None) => default,
        };
        let spec = match kind {
            NoiseKind::CellKey => NoiseSpec::CellKey {
                variance: required(self.v, "v", "for cell-key noise")?,
                bound: required(self.e, "e", "for cell-key noise")?,
                js: 0,
            },
            NoiseKind::Laplace => NoiseSpec::Laplace {
                epsilon: required(self.epsilon, "epsilon", "for Laplace noise")?,
                delta_sens: 1,
            },
            NoiseKind::Geometric => NoiseSpec::TwoTailedGeometric {
                epsilon: required(self.epsilon, "epsilon", "for geometric noise")?,
            },
            NoiseKind::TruncatedLaplace => NoiseSpec::TruncatedLaplace {
                epsilon: required(self.epsilon, "epsilon", "for truncated Laplace noise")?,
                bound: required(self.e, "e", "for truncated Laplace noise")?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_target(programme: &TableProgramme, text: &str) -> Result<StatisticKey> {
    let text = text.trim();
    let key = if text.is_empty() || text == "total" {
        StatisticKey::total()
    } else {
        StatisticKey::table(text.split([',', ' ']).filter(|s| !s.is_empty()))
    };
    programme.validate_key(&key)?;
    Ok(key)
}

pub fn averaging(args: &mut AveragingArgs) -> Result<()> {
    let spec = args.noise.spec(NoiseKind::CellKey)?;
    let seed = resolve_seed(args.seed);
    args.seed = Some(seed);
    let report = match &args.programme {
        None => {
            let k = required(args.k, "k", "without --programme")?;
            let t = required(args.t, "t", "without --programme")?;
            let mut r = simulate_averaging(&spec.sampler()?, k, t, args.trials, seed, 0.5)?;
            r.probability = averaging_success(
                spec.variance()?,
                k as f64,
                t as f64,
                AveragingModel::Gaussian,
                0.5,
            )?;
            r
        }
        Some(path) => {
            let programme = load_programme(path)?;
            let target = parse_target(&programme, &args.target)?;
            let data = match &args.microdata {
                Some(m) => Microdata::from_csv(&programme, open(m)?)?,
                None => synthetic_microdata(&programme, args.records, seed),
            };
            let mechanism = match spec {
                NoiseSpec::CellKey {
                    variance,
                    bound,
                    js,
                } => ReleaseMechanism::CellKey {
                    ptable: gen_ptable(variance, bound, js)?,
                    record_keys: assign_record_keys(data.len(), seed),
                },
                other => ReleaseMechanism::Independent {
                    spec: other,
                    spsn: args.spsn.enabled(),
                },
            };
            let published = release(&programme, &data, &mechanism, seed)?;
            let mut r = run_averaging_attack(
                &programme,
                &published,
                &data,
                &target,
                args.spsn.enabled(),
                args.optimize,
            )?;
            r.seed = Some(seed);
            r
        }
    };
    let meta = Meta::new("attack averaging", args, Some(seed))?;
    write_json(&meta, args.out.as_deref(), &report)
}

fn load_areas(source: &AreaSource, seed: &mut Option<u64>) -> Result<Vec<AreaRecord>> {
    match (&source.areas, source.synthetic) {
        (Some(path), _) => Ok(read_areas(open(path)?)?),
        (None, Some(n)) => {
            let s = resolve_seed(*seed);
            *seed = Some(s);
            Ok(synthetic_areas(n, s, &[]))
        }
        (None, None) => Err(CliError::Usage("give --areas or --synthetic".into())),
    }
}

pub fn estimate(args: &mut EstimateArgs) -> Result<()> {
    let areas = load_areas(&args.source, &mut args.seed)?;
    let hist = CountHistogram::from_areas(&areas, args.bins.clone())?;
    let bins = binned_distortion_estimate(&hist, args.epsilon, args.re)?;
    let meta = Meta::new("utility estimate", args, args.seed)?;
    write_csv(&meta, args.out.as_deref(), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for b in &bins {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    })
}

pub fn sample(args: &mut SampleArgs) -> Result<()> {
    let areas = load_areas(&args.source, &mut args.seed)?;
    let spec = args.noise.spec(NoiseKind::Laplace)?;
    let seed = resolve_seed(args.seed);
    args.seed = Some(seed);
    let tallies = sample_distortions(&areas, &spec, seed, &args.re)?;
    let mut results = Vec::new();
    for tally in tallies {
        let mut entry = serde_json::to_value(&tally)?;
        if let Value::Object(map) = &mut entry {
            map.remove("exceeding_counts");
        }
        if !args.bins.is_empty() {
            let sampled = CountHistogram::from_values(
                tally.exceeding_counts.iter().copied(),
                args.bins.clone(),
            )?;
            entry["sampled_by_bin"] = json!(sampled.bin_counts);
            if let NoiseSpec::Laplace { epsilon, .. } = spec {
                let hist = CountHistogram::from_areas(&areas, args.bins.clone())?;
                let est = binned_distortion_estimate(&hist, epsilon, tally.threshold)?;
                entry["estimated_by_bin"] =
                    json!(est.iter().map(|b| b.expected).collect::<Vec<_>>());
            }
            entry["bin_edges"] = json!(args.bins);
        }
        results.push(entry);
    }
    let meta = Meta::new("utility sample", args, Some(seed))?;
    write_json(&meta, args.out.as_deref(), &results)
}

pub fn scan_ve_cmd(args: &ScanVeArgs) -> Result<()> {
    if args.e_min > args.e_max {
        return Err(CliError::Usage("--e-min exceeds --e-max".into()));
    }
    let v_axis = GridAxis::range("V", args.v_min, args.v_max, args.v_step)?;
    let e_axis = GridAxis::new("E", (args.e_min..=args.e_max).map(f64::from).collect());
    let grid = scan_ve(&v_axis, &e_axis, &args.m_avail, args.kt2, args.alpha)?;
    let meta = Meta::new("scan ve", args, None)?;
    write_csv(&meta, args.out.as_deref(), |buf| Ok(grid.write_csv(buf)?))
}

pub fn scan_eps_cmd(args: &ScanEpsArgs) -> Result<()> {
    let axis = GridAxis::range("epsilon", args.eps_min, args.eps_max, args.eps_step)?;
    let grid = scan_eps(&axis, &args.kt2, args.e_alpha, &args.t_lau, args.alpha)?;
    for flag in ["strict", "relaxed"] {
        match feasible_band(&grid, flag) {
            Some((lo, hi)) => eprintln!("{flag} band: epsilon in [{lo}, {hi}]"),
            None => eprintln!("{flag} band: empty"),
        }
    }
    let meta = Meta::new("scan eps", args, None)?;
    write_csv(&meta, args.out.as_deref(), |buf| Ok(grid.write_csv(buf)?))
}

pub fn delta(args: &DeltaArgs) -> Result<()> {
    let pmf: DiscretePmf = match args.dist {
        DeltaDist::Ptable => gen_ptable(
            required(args.v, "v", "with --dist ptable")?,
            required(args.e, "e", "with --dist ptable")?,
            0,
        )?
        .pmf()
        .clone(),
        DeltaDist::Uniform => DiscretePmf::uniform(required(args.e, "e", "with --dist uniform")?),
        DeltaDist::Geometric => geometric2_truncated(
            required(args.noise_epsilon, "noise-epsilon", "with --dist geometric")?,
            required(args.cutoff, "cutoff", "with --dist geometric")?,
        )?,
    };
    let rows = args
        .epsilon
        .iter()
        .map(|&eps| Ok(json!({ "epsilon": eps, "delta": tightest_delta(&pmf, eps)? })))
        .collect::<Result<Vec<_>>>()?;
    let meta = Meta::new("account delta", args, None)?;
    write_json(&meta, args.out.as_deref(), &rows)
}

pub fn sensitivity_cmd(args: &SensitivityArgs) -> Result<()> {
    let programme = load_programme(&args.programme)?;
    let spsn = args.spsn.enabled();
    for id in &args.tables {
        if programme.table(id).is_none() {
            return Err(CliError::Usage(format!("--tables: unknown table {id:?}")));
        }
    }
    let mut outputs = BTreeSet::new();
    for table in programme.tables() {
        if !args.tables.is_empty() && !args.tables.contains(&table.id) {
            continue;
        }
        for key in enumerate_subtables(table) {
            outputs.insert(OutputRequest {
                table: Some(table.id.clone()),
                breakdowns: key.breakdowns,
            });
        }
    }
    let query: Vec<OutputRequest> = outputs.into_iter().collect();
    let delta = sensitivity(&query, spsn)?;
    let meta = Meta::new("account sensitivity", args, None)?;
    write_json(
        &meta,
        args.out.as_deref(),
        &json!({ "spsn": spsn, "requested_outputs": query.len(), "sensitivity": delta }),
    )
}

pub fn budget(args: &BudgetArgs) -> Result<()> {
    let mode = match args.mode {
        BudgetModeArg::Rounded => BudgetMode::Rounded,
        BudgetModeArg::Exact => BudgetMode::Exact,
    };
    let rows = args
        .global
        .iter()
        .map(|&g| {
            let per_table = us_table_budget(g, mode)?;
            let mut row = json!({
                "global_epsilon": g,
                "per_table_epsilon": per_table,
                "laplace_variance": sdcrisk_core::noise::laplace_variance(per_table, 1)?,
            });
            if let Some(t) = args.outputs {
                if t == 0 {
                    return Err(CliError::Usage("--outputs must be positive".into()));
                }
                row["split_laplace_variance"] = json!(split_laplace_variance(g, t)?);
                row["split_noise_scale"] = json!(noise_scale_for_global(g, t as f64)?);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = Meta::new("account budget", args, None)?;
    write_json(&meta, args.out.as_deref(), &rows)
}
