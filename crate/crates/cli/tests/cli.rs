use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

use sdcrisk_core::attack::{averaging_success, simulate_averaging, AveragingModel};
use sdcrisk_core::irr::{rank_statistics, write_ranking_csv, CardinalityOverrides};
use sdcrisk_core::noise::{gen_ptable, NoiseSpec};
use sdcrisk_core::table::TableProgramme;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .display()
        .to_string()
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn sdcrisk(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_sdcrisk"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let r = sdcrisk(args);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
    r.stdout
}

/// CSV body without the `#` header.
fn body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn rows(text: &str) -> Vec<Vec<String>> {
    body(text)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn ptable_file_recomputes_to_the_target_variance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    ok(&[
        "ptable",
        "--v",
        "2",
        "--e",
        "5",
        "--out",
        path.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# sdcrisk "));
    let rows = rows(&text);
    assert_eq!(rows.len(), 11);
    let (mut mean, mut second) = (0.0, 0.0);
    let lib = gen_ptable(2.0, 5, 0).unwrap();
    for r in &rows {
        let j: f64 = r[0].parse().unwrap();
        let p: f64 = r[1].parse().unwrap();
        assert_eq!(p, lib.prob(j as i64));
        mean += j * p;
        second += j * j * p;
    }
    assert!((second - mean * mean - 2.0).abs() < 1e-9);
}

#[test]
fn ptable_uniform_limit_and_infeasible() {
    for r in rows(&ok(&["ptable", "--v", "4", "--e", "3"])) {
        assert!((r[1].parse::<f64>().unwrap() - 1.0 / 7.0).abs() < 1e-15);
    }
    let r = sdcrisk(&["ptable", "--v", "10", "--e", "3"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("infeasible"), "{}", r.stderr);
    assert_eq!(
        sdcrisk(&["ptable", "--v", "1", "--e", "3", "--js", "1"]).code,
        2
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(sdcrisk(&["ptable", "--e", "3"]).code, 1);
    assert_eq!(sdcrisk(&["frobnicate"]).code, 1);
    assert_eq!(
        sdcrisk(&["analyze", "--programme", "/nonexistent.json"]).code,
        1
    );
    assert_eq!(sdcrisk(&["attack", "margin", "--e", "2"]).code, 1);
    assert_eq!(
        sdcrisk(&["attack", "averaging", "--v", "2", "--e", "5", "--seed", "1"]).code,
        1
    );
    assert_eq!(
        sdcrisk(&[
            "analyze",
            "--programme",
            &fixture("sex_age.json"),
            "--geo",
            "NOPE=3"
        ])
        .code,
        1
    );
    assert_eq!(sdcrisk(&["scan", "eps"]).code, 1);
    assert_eq!(
        sdcrisk(&["account", "delta", "--dist", "ptable", "--epsilon", "1"]).code,
        1
    );
    assert_eq!(
        sdcrisk(&["--threads", "0", "account", "budget", "--global", "1"]).code,
        1
    );
    assert_eq!(sdcrisk(&["--help"]).code, 0);
    assert_eq!(sdcrisk(&["--version"]).code, 0);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"breakdowns":[{"id":"A","categories":["x"]}],"tables":[{"id":"T","breakdowns":["B"]}]}"#).unwrap();
    let r = sdcrisk(&["analyze", "--programme", bad.to_str().unwrap()]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("tables[0].breakdowns[0]"), "{}", r.stderr);
}

#[test]
fn domain_errors_exit_two() {
    assert_eq!(
        sdcrisk(&["attack", "bound-disclosure", "--e", "3", "--v", "9"]).code,
        2
    );
    assert_eq!(sdcrisk(&["account", "budget", "--global=-1"]).code, 2);
    assert_eq!(
        sdcrisk(&[
            "utility",
            "estimate",
            "--areas",
            &fixture("areas_10k.csv"),
            "--epsilon",
            "0"
        ])
        .code,
        2
    );
    assert_eq!(sdcrisk(&["scan", "ve", "--alpha", "1.5"]).code, 2);
}

#[test]
fn analyze_demo_rows() {
    let rows = rows(&ok(&["analyze", "--programme", &fixture("sex_age.json")]));
    let got: Vec<(&str, &str, &str, &str)> = rows
        .iter()
        .map(|r| (r[0].as_str(), r[2].as_str(), r[3].as_str(), r[4].as_str()))
        .collect();
    assert_eq!(
        got,
        vec![
            ("total", "4", "9", "0.5625"),
            ("SEX", "2", "3", "0.75"),
            ("AGE", "2", "3", "0.75"),
            ("AGE SEX", "1", "1", "1"),
        ]
    );
}

#[test]
fn analyze_matches_the_library_exactly() {
    let path = fixture("desk12.json");
    let cli = ok(&["analyze", "--programme", &path, "--geo", "GEO=96"]);
    let programme = TableProgramme::from_reader(std::fs::File::open(&path).unwrap()).unwrap();
    let overrides: CardinalityOverrides = [("GEO".to_string(), 96)].into_iter().collect();
    let ranking = rank_statistics(&programme, true, &overrides).unwrap();
    let mut lib = Vec::new();
    write_ranking_csv(&ranking.by_ratio, &mut lib).unwrap();
    assert_eq!(body(&cli), String::from_utf8(lib).unwrap());
}

#[test]
fn duplicated_tables_double_t_without_spsn() {
    let path = fixture("duplicated.json");
    let with = rows(&ok(&["analyze", "--programme", &path, "--spsn"]));
    let without = rows(&ok(&["analyze", "--programme", &path, "--no-spsn"]));
    for (a, b) in with.iter().zip(&without) {
        assert_eq!(a[0], b[0]);
        assert_eq!(
            2 * a[2].parse::<u64>().unwrap(),
            b[2].parse::<u64>().unwrap()
        );
    }
}

#[test]
fn bound_disclosure_needs_seven_tuples() {
    let v = json(&[
        "attack",
        "bound-disclosure",
        "--dist",
        "uniform",
        "--e",
        "2",
        "--alpha",
        "0.68",
    ]);
    assert_eq!(v["result"]["m_required"], 7);
    assert!((v["result"]["probability"].as_f64().unwrap() - 0.16).abs() < 1e-15);
    let sim = json(&[
        "attack",
        "bound-disclosure",
        "--dist",
        "uniform",
        "--e",
        "2",
        "--streams",
        "2000",
        "--seed",
        "5",
    ]);
    assert_eq!(sim["result"]["mc_trials"], 2000);
    assert_eq!(sim["meta"]["seed"], 5);
}

#[test]
fn margin_fixture_discloses() {
    let v = json(&[
        "attack",
        "margin",
        "--e",
        "2",
        "--input",
        &fixture("margin_tuples.csv"),
    ]);
    let recovered: Vec<i64> = v["result"]["disclosed"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["recovered"].as_i64().unwrap())
        .collect();
    assert_eq!(recovered, vec![5, 4, 9]);
    assert_eq!(v["result"]["mc_successes"], 1);
}

#[test]
fn averaging_matches_library_and_footnote_range() {
    let v = json(&[
        "attack",
        "averaging",
        "--v",
        "2",
        "--e",
        "10",
        "--k",
        "1000",
        "--t",
        "100",
        "--trials",
        "1000",
        "--seed",
        "1",
    ]);
    let successes = v["result"]["mc_successes"].as_u64().unwrap();
    assert!((700..=780).contains(&successes), "{successes}");
    let spec = NoiseSpec::CellKey {
        variance: 2.0,
        bound: 10,
        js: 0,
    };
    let lib = simulate_averaging(&spec.sampler().unwrap(), 1000, 100, 1000, 1, 0.5).unwrap();
    assert_eq!(successes, lib.mc_successes);
    let model = averaging_success(2.0, 1000.0, 100.0, AveragingModel::Gaussian, 0.5).unwrap();
    assert_eq!(v["result"]["probability"].as_f64().unwrap(), model);
}

#[test]
fn averaging_on_a_programme() {
    let v = json(&[
        "attack",
        "averaging",
        "--programme",
        &fixture("desk12.json"),
        "--target",
        "SEX",
        "--v",
        "2",
        "--e",
        "5",
        "--records",
        "3000",
        "--seed",
        "9",
    ]);
    assert_eq!(v["result"]["mc_trials"], 2);
    assert!(v["result"]["disclosed"][0]["truth"].is_i64());
}

#[test]
fn scan_ve_uniform_limit() {
    let text = ok(&["scan", "ve", "--m-avail", "2.8e7"]);
    let header: Vec<String> = body(&text)
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let col = |n: &str| header.iter().position(|h| h == n).unwrap();
    let mut checked = 0;
    for r in rows(&text) {
        let (v, e): (f64, f64) = (r[col("V")].parse().unwrap(), r[col("E")].parse().unwrap());
        if (v - e * (e + 1.0) / 3.0).abs() < 1e-12 {
            let p1: f64 = r[col("p1")].parse().unwrap();
            assert!((p1 - 20.0 / (2.0 * e + 1.0).powi(3)).abs() < 1e-15);
            checked += 1;
        }
    }
    assert_eq!(checked, 3);
}

#[test]
fn scan_eps_relaxed_band() {
    let r = sdcrisk(&[
        "scan",
        "eps",
        "--kt2",
        "0.0118",
        "--kt2",
        "0.0170",
        "--e-alpha",
        "20",
        "--t-lau",
        "68",
    ]);
    assert_eq!(r.code, 0);
    let line = r
        .stderr
        .lines()
        .find(|l| l.starts_with("relaxed band"))
        .unwrap();
    let nums: Vec<f64> = line
        .split(['[', ']', ','])
        .filter_map(|s| s.trim().parse().ok())
        .collect();
    assert!(
        (nums[0] - 0.27).abs() < 0.005 && (nums[1] - 0.37).abs() < 0.005,
        "{line}"
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let cases: [&[&str]; 4] = [
        &["scan", "eps", "--kt2", "0.0118", "--eps-step", "0.01"],
        &[
            "attack",
            "averaging",
            "--v",
            "2",
            "--e",
            "5",
            "--k",
            "100",
            "--t",
            "10",
            "--trials",
            "200",
            "--seed",
            "3",
        ],
        &[
            "utility",
            "sample",
            "--areas",
            &fixture("areas_10k.csv"),
            "--epsilon",
            "0.1",
            "--seed",
            "8",
            "--bins",
            "0,20,40,60,80,100,200,500",
        ],
        &[
            "attack",
            "margin",
            "--e",
            "2",
            "--simulate",
            "5000",
            "--seed",
            "2",
        ],
    ];
    for args in cases {
        assert_eq!(ok(args), ok(args), "{args:?}");
    }
    let a = ok(&[
        "--threads",
        "1",
        "utility",
        "sample",
        "--synthetic",
        "500",
        "--epsilon",
        "0.5",
        "--seed",
        "4",
    ]);
    let b = ok(&[
        "--threads",
        "3",
        "utility",
        "sample",
        "--synthetic",
        "500",
        "--epsilon",
        "0.5",
        "--seed",
        "4",
    ]);
    assert_eq!(a, b);
}

#[test]
fn missing_seed_is_generated_and_recorded() {
    let r = sdcrisk(&["attack", "margin", "--e", "2", "--simulate", "100"]);
    assert_eq!(r.code, 0);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    let seed = v["meta"]["seed"].as_u64().unwrap();
    assert!(r.stderr.contains(&seed.to_string()));
    assert_eq!(v["meta"]["params"]["seed"].as_u64(), Some(seed));
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"v": 10, "e": 5}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(sdcrisk(&["ptable", "--config", cfg]).code, 0);
    let text = ok(&["ptable", "--config", cfg, "--v", "2"]);
    assert!(text.contains(r#""v":2.0"#), "{text}");
    assert_eq!(body(&text), body(&ok(&["ptable", "--v", "2", "--e", "5"])));

    std::fs::write(dir.path().join("spsn.json"), r#"{"spsn": false}"#).unwrap();
    let spsn_cfg = dir.path().join("spsn.json");
    let path = fixture("duplicated.json");
    let via_config = ok(&[
        "analyze",
        "--programme",
        &path,
        "--config",
        spsn_cfg.to_str().unwrap(),
    ]);
    assert!(via_config.contains("total,false,8"));
    let flag_wins = ok(&[
        "analyze",
        "--programme",
        &path,
        "--spsn",
        "--config",
        spsn_cfg.to_str().unwrap(),
    ]);
    assert!(flag_wins.contains("total,true,4"));
}

#[test]
fn utility_estimate_bins() {
    let text = ok(&[
        "utility",
        "estimate",
        "--areas",
        &fixture("areas_10k.csv"),
        "--epsilon",
        "0.1",
        "--bins",
        "60,80",
    ]);
    let r = &rows(&text)[0];
    let n: f64 = r[2].parse().unwrap();
    let expected: f64 = r[5].parse().unwrap();
    assert_eq!(expected, n * (-4f64).exp());

    let v = json(&[
        "utility",
        "sample",
        "--areas",
        &fixture("areas_10k.csv"),
        "--epsilon",
        "0.1",
        "--seed",
        "1",
        "--bins",
        "0,20,40,60,80,100,200,500",
    ]);
    let entry = &v["result"][0];
    let sampled: u64 = entry["sampled_by_bin"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .sum();
    let estimated: f64 = entry["estimated_by_bin"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .sum();
    assert!(sampled as f64 >= estimated);
    assert!(entry["broadband"].as_u64().unwrap() <= entry["t_exceed"].as_u64().unwrap());
}

#[test]
fn accounting_commands() {
    let v = json(&["account", "budget", "--global", "0.25", "--global", "8"]);
    assert_eq!(v["result"][0]["per_table_epsilon"].as_f64(), Some(0.025));
    assert_eq!(v["result"][0]["laplace_variance"].as_f64(), Some(3200.0));
    assert_eq!(v["result"][1]["laplace_variance"].as_f64(), Some(3.125));

    let path = fixture("duplicated.json");
    let s = json(&["account", "sensitivity", "--programme", &path]);
    let n = json(&["account", "sensitivity", "--programme", &path, "--no-spsn"]);
    assert_eq!(s["result"]["sensitivity"], 4);
    assert_eq!(n["result"]["sensitivity"], 8);

    let d = json(&[
        "account",
        "delta",
        "--dist",
        "uniform",
        "--e",
        "2",
        "--epsilon",
        "0",
        "--epsilon",
        "3",
    ]);
    for row in d["result"].as_array().unwrap() {
        assert!((row["delta"].as_f64().unwrap() - 0.2).abs() < 1e-15);
    }
}
