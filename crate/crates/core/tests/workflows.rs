use sdcrisk_core::attack::{run_averaging_attack, AttackKind};
use sdcrisk_core::irr::rank_statistics;
use sdcrisk_core::noise::{gen_ptable, NoiseSpec};
use sdcrisk_core::release::{assign_record_keys, release, synthetic_microdata, ReleaseMechanism};
use sdcrisk_core::rng::task_rng;
use sdcrisk_core::table::{StatisticKey, TableProgramme};
use sdcrisk_core::utility::dp_utility_eps;

fn desk() -> TableProgramme {
    TableProgramme::from_json(
        r#"{"breakdowns":[{"id":"SEX","categories":["F","M"]},
                           {"id":"AGE","categories":["0-14","15-64","65+"]},
                           {"id":"GEO","categories":["n","s","e","w"]},
                           {"id":"EDU","categories":["low","mid","high"]}],
            "tables":[{"id":"A","breakdowns":["SEX","AGE","GEO"]},
                      {"id":"B","breakdowns":["SEX","AGE","EDU"]},
                      {"id":"C","breakdowns":["SEX","GEO","EDU"]},
                      {"id":"D","breakdowns":["AGE","GEO"]}]}"#,
    )
    .unwrap()
}

#[test]
fn averaging_a_noiseless_release_always_succeeds() {
    let p = desk();
    let d = synthetic_microdata(&p, 500, 1);
    let r = release(&p, &d, &ReleaseMechanism::Exact, 0).unwrap();
    let report =
        run_averaging_attack(&p, &r, &d, &StatisticKey::table(["SEX"]), true, false).unwrap();
    assert_eq!(report.attack, AttackKind::Averaging);
    assert_eq!(report.mc_trials, 2);
    assert_eq!(report.mc_successes, 2);
    assert_eq!(report.probability, 1.0);
}

#[test]
fn averaging_through_cell_key_noise_tracks_the_model() {
    let p = desk();
    let target = StatisticKey::table(["AGE"]);
    let ptable = gen_ptable(2.0, 5, 0).unwrap();
    let (mut trials, mut successes, mut alpha) = (0, 0, 0.0);
    for seed in 0..40u64 {
        let d = synthetic_microdata(&p, 400, seed);
        let mech = ReleaseMechanism::CellKey {
            ptable: ptable.clone(),
            record_keys: assign_record_keys(d.len(), seed + 1000),
        };
        let r = release(&p, &d, &mech, seed).unwrap();
        let rep = run_averaging_attack(&p, &r, &d, &target, true, false).unwrap();
        trials += rep.mc_trials;
        successes += rep.mc_successes;
        alpha = rep.probability;
    }
    let rate = successes as f64 / trials as f64;
    let sd = (alpha * (1.0 - alpha) / trials as f64).sqrt();
    // IRRs in one release share marginal cells, so allow extra slack
    assert!(
        (rate - alpha).abs() < 5.0 * sd + 0.05,
        "rate {rate}, model {alpha}"
    );
}

#[test]
fn spsn_attack_needs_an_spsn_release() {
    let p = desk();
    let d = synthetic_microdata(&p, 100, 2);
    let per_table = |spsn| ReleaseMechanism::Independent {
        spec: NoiseSpec::TwoTailedGeometric { epsilon: 1.0 },
        spsn,
    };
    let r = release(&p, &d, &per_table(false), 2).unwrap();
    assert!(run_averaging_attack(&p, &r, &d, &StatisticKey::total(), true, false).is_err());
    assert!(run_averaging_attack(&p, &r, &d, &StatisticKey::total(), false, false).is_ok());
    // an attacker unaware of SPSN still reads every output, just overcounts t
    let shared = release(&p, &d, &per_table(true), 2).unwrap();
    let naive = run_averaging_attack(&p, &shared, &d, &StatisticKey::total(), false, true).unwrap();
    assert_eq!(naive.mc_trials, 1);
}

#[test]
fn no_spsn_ranking_is_riskier() {
    let p = desk();
    let none = Default::default();
    let with = rank_statistics(&p, true, &none).unwrap();
    let without = rank_statistics(&p, false, &none).unwrap();
    assert!(without.by_ratio[0].optimized.ratio < with.by_ratio[0].optimized.ratio);
    assert!(without.by_t[0].full.t > with.by_t[0].full.t);
}

/// The union bound makes `dp_utility_eps` conservative: all `t` Laplace
/// errors stay within `E_α` at least `α` of the time.
#[test]
fn utility_epsilon_is_conservative() {
    let (e_alpha, t, alpha) = (20.0, 68usize, 0.68);
    let eps = dp_utility_eps(e_alpha, t as f64, alpha).unwrap();
    let sampler = NoiseSpec::Laplace {
        epsilon: eps,
        delta_sens: 1,
    }
    .sampler()
    .unwrap();
    let trials = 4000u64;
    let within = (0..trials)
        .filter(|&i| {
            let mut rng = task_rng(77, i);
            (0..t).all(|_| sampler.draw(&mut rng).abs() <= e_alpha)
        })
        .count() as f64;
    let rate = within / trials as f64;
    assert!(rate >= alpha, "rate {rate}");
}
