use qdpair::harness::{
    convergence_report, run_scenario, sweep, write_sweep_csv, ScenarioConfig, SweepAxis, SweepSummary,
};
use qdpair::model::{InitialState, PhysicalParams, PulsePolarization};
use qdpair::Error;

fn biexciton(g: f64, delta: f64) -> PhysicalParams {
    PhysicalParams { g_coupling: g, delta, ..PhysicalParams::biexciton_no_pulse() }
}

fn pulsed(g: f64, polarization: PulsePolarization) -> PhysicalParams {
    PhysicalParams {
        g_coupling: g,
        pulse_polarization: polarization,
        initial_state: InitialState::Ground,
        ..PhysicalParams::default()
    }
}

/// Short fixed horizon, two photons per mode.
fn small(name: &str, params: PhysicalParams) -> ScenarioConfig {
    let mut c = ScenarioConfig::with_params(name, params);
    c.n_max_h = 2;
    c.n_max_v = 2;
    c.t_max = 150.0;
    c.n_points = 301;
    c.auto_extend = false;
    c
}

#[test]
fn config_file_loads_and_accepts_overrides() {
    let text = r#"
        name = "file"
        g_coupling = 130
        delta = 40
        pulse_polarization = "diagonal"
        initial_state = "ground"
        tau_fwhm = 2.0
        n_max_h = 2
        n_max_v = 3
        t_max = 400
        n_points = 801
        tolerance = 1e-10
        workers = 2
    "#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    let mut c = ScenarioConfig::from_file(&path).unwrap();
    assert_eq!(c.name, "file");
    assert_eq!(c.params.g_coupling, 130.0);
    assert_eq!(c.params.pulse_polarization, PulsePolarization::Diagonal);
    assert_eq!(c.params.t0, 8.0);
    assert_eq!((c.n_max_h, c.n_max_v, c.n_points, c.workers), (2, 3, 801, 2));
    c.apply_override("g_coupling=45").unwrap();
    assert_eq!(c.params.g_coupling, 45.0);
    assert!(c.apply_override("kappa").is_err());
    assert!(ScenarioConfig::from_file(&dir.path().join("missing.toml")).is_err());
}

#[test]
fn ground_state_without_pulse_has_no_photon_pairs() {
    let params = PhysicalParams {
        pulse_polarization: PulsePolarization::None,
        initial_state: InitialState::Ground,
        ..PhysicalParams::default()
    };
    let err = run_scenario(&small("dark", params)).unwrap_err();
    match err {
        Error::Scenario { scenario, source } => {
            assert_eq!(scenario, "dark");
            assert!(matches!(*source, Error::NoPhotonPairs { .. }), "{source}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn single_value_sweep_equals_run_scenario() {
    let config = small("single", biexciton(60.0, 20.0));
    let table = sweep(&config, SweepAxis::GCoupling, &[90.0]).unwrap();
    let direct = run_scenario(&config.with_axis_value(SweepAxis::GCoupling, 90.0)).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].summary.as_ref().unwrap(), &SweepSummary::of(&direct));
}

#[test]
fn sweep_output_does_not_depend_on_worker_count() {
    let values = [40.0, 80.0, 120.0];
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for workers in [1, 3] {
        let mut config = small("workers", biexciton(0.0, 40.0));
        config.workers = workers;
        let table = sweep(&config, SweepAxis::GCoupling, &values).unwrap();
        let path = dir.path().join(format!("w{workers}.csv"));
        write_sweep_csv(&path, &table).unwrap();
        files.push(std::fs::read(path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn sweep_keeps_going_past_failed_points() {
    let config = small("partial", biexciton(90.0, 0.0));
    let table = sweep(&config, SweepAxis::Delta, &[0.0, 5000.0, 40.0]).unwrap();
    assert_eq!(table.failures(), 1);
    assert!(table.rows[1].error.as_ref().unwrap().contains("delta"));
    for i in [0, 2] {
        let c = table.rows[i].summary.as_ref().unwrap().concurrence;
        assert!((0.0..=1.0).contains(&c));
    }
    assert_eq!(table.rows.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn biexciton_concurrence_rises_with_coupling() {
    let config = ScenarioConfig::with_params("fig2a", biexciton(0.0, 0.0));
    let values = [20.0, 50.0, 80.0, 110.0, 150.0];
    let table = sweep(&config, SweepAxis::GCoupling, &values).unwrap();
    let c: Vec<f64> = table.rows.iter().map(|r| r.summary.as_ref().unwrap().concurrence).collect();
    for w in c.windows(2) {
        assert!(w[1] >= w[0], "{c:?}");
    }
}

#[test]
fn pulses_lower_strong_coupling_concurrence() {
    let reference = run_scenario(&ScenarioConfig::with_params("cascade", biexciton(130.0, 0.0))).unwrap();
    let c0 = reference.concurrence.concurrence;
    for polarization in [PulsePolarization::Horizontal, PulsePolarization::Diagonal] {
        let r = run_scenario(&ScenarioConfig::with_params("tpe", pulsed(130.0, polarization))).unwrap();
        assert!(r.concurrence.concurrence < c0 - 0.05, "{polarization:?}: {} vs {c0}", r.concurrence.concurrence);
    }
}

#[test]
fn defaults_pass_every_convergence_probe() {
    let report = convergence_report(&ScenarioConfig::default());
    assert!(report.base_error.is_none());
    assert_eq!(report.probes.len(), 3);
    for p in &report.probes {
        assert!(p.delta.unwrap() < 1e-2 && !p.flagged, "{}: {:?}", p.label, p.delta);
    }
    assert!(!report.flagged());
}

#[test]
fn short_horizon_is_flagged() {
    let mut config = ScenarioConfig::default();
    config.t_max = 20.0;
    config.n_points = 81;
    config.auto_extend = false;
    let report = convergence_report(&config);
    let probe = report.probes.iter().find(|p| p.label == "t_max_doubled").unwrap();
    assert!(probe.flagged && probe.delta.unwrap() > 1e-2);
    assert!(report.flagged());
}

#[test]
fn two_photon_truncation_is_flagged_under_a_pulse() {
    let mut config = ScenarioConfig::with_params("nmax2", pulsed(130.0, PulsePolarization::Horizontal));
    config.n_max_h = 2;
    config.n_max_v = 2;
    let report = convergence_report(&config);
    let probe = report.probes.iter().find(|p| p.label == "n_max_plus_one").unwrap();
    assert_eq!(probe.n_max, 3);
    assert!(probe.flagged && probe.delta.unwrap() > 1e-2, "{:?}", probe.delta);
}
