use std::fs;

use dduio::io;
use dduio::lti::{self, rng_from_seed};
use dduio::microgrid::{self, AttackSignal, AttackSpec, DguParams, ScenarioSummary};
use dduio::trajectory::{self, PeVerdict};
use dduio::uio;
use dduio::{Error, Tolerance};
use nalgebra::DVector;
use proptest::prelude::*;

fn history() -> dduio::Trajectory {
    microgrid::collect_historical(&DguParams::default(), microgrid::default_historical_length(), 7).unwrap()
}

#[test]
fn files_reproduce_in_memory_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let hist = history();
    let path = dir.path().join("hist.csv");
    io::write_trajectory(&hist, &path).unwrap();
    let back = io::read_trajectory(&path).unwrap();
    assert_eq!(back, hist);

    let tol = Tolerance::default();
    let (r, report) = uio::synthesize_from_trajectory(&hist, &tol).unwrap();
    let (r2, report2) = uio::synthesize_from_trajectory(&back, &tol).unwrap();
    assert_eq!(r.gain, r2.gain);
    assert_eq!(report, report2);
    assert_eq!(r.source_digest, hist.digest());

    let rpath = dir.path().join("observer.json");
    io::write_realization(&r, Some(&report), &rpath).unwrap();
    let r3 = io::read_realization(&rpath).unwrap();
    assert_eq!(r3.gain, r.gain);
    assert_eq!(r3.a_uio, r.a_uio);
    assert_eq!(r3.b_uio, r.b_uio);
    assert_eq!(r3.d_uio, r.d_uio);
}

#[test]
fn tampered_trajectory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hist.csv");
    io::write_trajectory(&history(), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
    fields[3] = "1.5".into();
    lines[3] = fields.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(io::read_trajectory(&path), Err(Error::InvalidData(_))));
}

#[test]
fn online_file_without_states_or_disturbances() {
    let dir = tempfile::tempdir().unwrap();
    let run = microgrid::simulate_run(&DguParams::default(), 10, 8, "online").unwrap();
    let path = dir.path().join("online.csv");
    let mut text = String::from("t,y_0,y_1,y_2\n");
    for t in 0..run.len() {
        let row: Vec<String> = run.y().column(t).iter().map(|&v| io::fmt_f64(v)).collect();
        text.push_str(&format!("{t},{}\n", row.join(",")));
    }
    fs::write(&path, text).unwrap();
    let data = io::read_online(&path).unwrap();
    assert!(data.x.is_none());
    assert_eq!(data.y, *run.y());

    let r = microgrid::observer_from_history(&history()).unwrap();
    let est = uio::run_estimator(&r, &DVector::zeros(3), &data.v()).unwrap();
    let reference = microgrid::run_safe_scenario(&DguParams::default(), &history(), 10, 8).unwrap();
    assert_eq!(est, reference.estimates);

    let out = dir.path().join("est.csv");
    io::write_estimates_csv(&est, None, &out).unwrap();
    assert_eq!(io::read_estimates_csv(&out).unwrap(), est);
}

#[test]
fn state_space_form_tracks_recursive_form() {
    let r = microgrid::observer_from_history(&history()).unwrap();
    let run = microgrid::simulate_run(&DguParams::default(), 40, 3, "online").unwrap();
    let xhat0 = DVector::from_vec(vec![40.0, 4.0, 0.0]);
    let rec = uio::run_estimator(&r, &xhat0, &run.v()).unwrap();
    let ss = uio::run_state_space(&r, &xhat0, &run.v()).unwrap();
    assert!((&rec - &ss).amax() <= 1e-9 * rec.amax());
}

#[test]
fn scenario_csv_and_summary_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let params = DguParams::default();
    let spec = AttackSpec::default_constant();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let res = microgrid::run_attack_scenario(&params, &history(), 100, &spec, 8).unwrap();
        let path = dir.path().join(format!("attack{k}.csv"));
        io::write_scenario_csv(&res, &path).unwrap();
        let summary = ScenarioSummary::from_result(&res, microgrid::DEFAULT_BURN_IN);
        outputs.push((fs::read(&path).unwrap(), serde_json::to_string(&summary).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn attack_without_onset_matches_safe_run() {
    let params = DguParams::default();
    let never = AttackSpec::new(100, AttackSignal::Constant(vec![0.1; 3])).unwrap();
    let attacked = microgrid::run_attack_scenario(&params, &history(), 100, &never, 8).unwrap();
    let safe = microgrid::run_safe_scenario(&params, &history(), 100, 8).unwrap();
    assert_eq!(attacked.estimates, safe.estimates);
    assert_eq!(attacked.residuals, safe.residuals);
}

#[test]
fn short_history_is_refused_with_a_verdict() {
    let hist = history();
    let short = hist.truncated(10).unwrap();
    assert_eq!(
        trajectory::check_assumption1(&short, &Tolerance::default()).unwrap(),
        PeVerdict::NotExciting
    );
    let (_, report) = uio::synthesize_from_trajectory(&short, &Tolerance::default()).unwrap();
    assert_eq!(report.pe_checked, Some(PeVerdict::NotExciting));
}

#[test]
fn noisy_outputs_still_produce_finite_estimates() {
    let r = microgrid::observer_from_history(&history()).unwrap();
    let run = microgrid::simulate_run(&DguParams::default(), 30, 4, "online").unwrap();
    let noisy = lti::add_output_noise(&run, 0.05, 9).unwrap();
    let est = uio::run_estimator(&r, &DVector::zeros(3), &noisy.v()).unwrap();
    assert!(est.iter().all(|v| v.is_finite()));
    assert_ne!(est, uio::run_estimator(&r, &DVector::zeros(3), &run.v()).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn microgrid_runs_extend_without_changing_their_prefix(seed in any::<u64>(), short in 2usize..20, extra in 1usize..30) {
        let params = DguParams::default();
        let a = microgrid::simulate_run(&params, short, seed, "a").unwrap();
        let b = microgrid::simulate_run(&params, short + extra, seed, "b").unwrap();
        prop_assert_eq!(a.x(), &b.x().columns(0, short).into_owned());
        prop_assert_eq!(a.offline_unknown_input().unwrap(), &b.offline_unknown_input().unwrap().columns(0, short).into_owned());
    }

    #[test]
    fn observers_of_random_systems_are_exact_one_step(seed in any::<u64>()) {
        let tol = Tolerance::default();
        let mut rng = rng_from_seed(seed);
        let sys = lti::random_minimal_system(3, 1, 3, 1, &mut rng, &tol).unwrap();
        let len = trajectory::min_exciting_length(2, 5) + 6;
        let hist = lti::random_experiment(&sys, len, seed).unwrap();
        prop_assume!(trajectory::check_assumption1(&hist, &tol).unwrap().holds());
        let (r, report) = uio::synthesize_from_trajectory(&hist, &tol).unwrap();
        prop_assert!(report.kernel_inclusion_holds);
        let fresh = lti::random_experiment(&sys, 12, seed.wrapping_add(1)).unwrap();
        let est = uio::run_estimator(&r, &fresh.x().column(0).into_owned(), &fresh.v()).unwrap();
        prop_assert!((&est - fresh.x()).amax() <= 1e-8 * fresh.x().amax().max(1.0));
    }

    #[test]
    fn trajectory_files_round_trip(seed in any::<u64>(), len in 2usize..25) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng_from_seed(seed);
        let sys = lti::random_minimal_system(2, 1, 1, 1, &mut rng, &Tolerance::default()).unwrap();
        let traj = lti::random_experiment(&sys, len, seed).unwrap();
        let path = dir.path().join("t.csv");
        io::write_trajectory(&traj, &path).unwrap();
        prop_assert_eq!(io::read_trajectory(&path).unwrap(), traj);
    }

    #[test]
    fn estimator_is_affine_in_the_initial_estimate(seed in any::<u64>(), shift in prop::array::uniform3(-5.0f64..5.0)) {
        let r = microgrid::observer_from_history(&history()).unwrap();
        let run = microgrid::simulate_run(&DguParams::default(), 15, seed, "online").unwrap();
        let base = uio::run_estimator(&r, &DVector::zeros(3), &run.v()).unwrap();
        let s = DVector::from_column_slice(&shift);
        let moved = uio::run_estimator(&r, &s, &run.v()).unwrap();
        let mut prop = s.clone();
        for t in 0..15 {
            let d = moved.column(t) - base.column(t);
            prop_assert!((&d - &prop).amax() <= 1e-9 * (1.0 + base.amax()));
            prop = &r.a_uio * prop;
        }
    }
}
