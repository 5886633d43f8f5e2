use cdu::config::{DataSource, DriftSpec, ScenarioConfig};
use cdu::harness::{run_scenario, run_suite, Conditions, SuiteReport};
use cdu::report::{load_report, metrics_csv, write_report, Report, METRICS_CSV, METRICS_HEADER};
use cdu_core::streams::{FaultKind, SynthNetConfig};

/// Small synthetic-network scenario that runs in about a second.
fn small_synth(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::with_source(DataSource::Synth {
        network: SynthNetConfig {
            sensors: 8,
            factors: 2,
            samples: 1200,
            ..SynthNetConfig::default()
        },
    });
    cfg.seed = seed;
    cfg.autoencoder.epochs = 50;
    cfg.unlearner.epochs = 100;
    cfg
}

#[test]
fn digits_scenario_report_round_trips() {
    let cfg = ScenarioConfig::digits();
    let report = run_scenario(&cfg).unwrap();
    assert!(report.hashes_consistent());
    assert_eq!(report.detected_at, Some(report.onset));
    assert!(report.ae_loss_ratio >= 2.0, "loss ratio {}", report.ae_loss_ratio);
    assert!(report.warnings.is_empty());
    assert_eq!(report.tasks.len(), 1);
    let t = &report.tasks[0];
    assert!(t.before.unwrap() > t.after_drift.unwrap());

    let dir = tempfile::tempdir().unwrap();
    let wrapped = Report::Scenario(report.clone());
    write_report(&wrapped, dir.path()).unwrap();
    assert_eq!(load_report(dir.path()).unwrap(), wrapped);
    let csv = std::fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + report.tasks.len());

    // The embedded configuration reproduces the run.
    let again = run_scenario(&report.config).unwrap();
    assert_eq!(again.tasks, report.tasks);
    assert_eq!(again.hashes, report.hashes);
}

#[test]
fn digits_without_drift_is_left_alone() {
    let cfg = ScenarioConfig {
        drift: Some(DriftSpec::None),
        ..ScenarioConfig::digits()
    };
    let report = run_scenario(&cfg).unwrap();
    assert_eq!(report.detected_at, None);
    assert!(report.fit.is_none());
    let t = &report.tasks[0];
    assert_eq!(t.before, t.after_drift);
    assert_eq!(t.after_drift, t.unlearned);
    assert!((t.ae_baseline.unwrap() - t.before.unwrap()).abs() <= 0.05);
}

#[test]
fn synth_scenarios_are_deterministic_and_resolved() {
    let cfg = small_synth(3);
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.tasks, b.tasks);
    assert_eq!(a.fault, b.fault);
    assert_eq!(a.onset, 600);
    assert_eq!(a.tasks.len(), 8);
    assert!(a.hashes_consistent());
    // The random fault is written back as a concrete one.
    let f = a.fault.unwrap();
    match a.config.drift.as_ref().unwrap() {
        DriftSpec::Fault { fault, target, .. } => assert_eq!((*fault, *target), (f.kind, f.target)),
        other => panic!("unresolved drift {other:?}"),
    }
    let power = a.fault.map(|f| f.kind) == Some(FaultKind::PowerFailure);
    assert_eq!(a.degenerate_tasks.is_empty(), !power);
    assert_eq!(
        metrics_csv(&Report::Scenario(a.clone())),
        metrics_csv(&Report::Scenario(b))
    );
}

#[test]
fn explicit_fault_is_injected_at_the_onset() {
    let mut cfg = small_synth(4);
    cfg.drift = Some(DriftSpec::Fault {
        fault: FaultKind::ConstantOffset,
        target: 2,
        parameter: 25.0,
        seed: 0,
    });
    cfg.windows.onset = Some(700);
    let r = run_scenario(&cfg).unwrap();
    assert_eq!((r.onset, r.detected_at), (700, Some(700)));
    assert_eq!(r.collection, 700..900);
    assert!(r.ae_loss_post > r.ae_loss_pre);
    assert!(r.reconstruction_improved());
}

#[test]
fn single_scenario_suite_medians_equal_the_scenario() {
    let mut base = small_synth(0);
    base.suite.filter = Some(false);
    let suite = run_suite(&base, 1, 5).unwrap();
    let only = &suite.scenarios[0];
    assert_eq!(suite.kept, vec![true]);
    for (t, s) in only.tasks.iter().zip(&suite.summary) {
        if t.is_degenerate() {
            assert_eq!(s.scenarios, 0);
        } else {
            assert_eq!(s.median, Conditions::of(t));
            assert_eq!(s.mean, Conditions::of(t));
            assert_eq!(s.variance.before, Some(0.0));
        }
    }
}

#[test]
fn suite_filter_accounts_for_every_scenario() {
    let base = small_synth(0);
    let suite = run_suite(&base, 4, 9).unwrap();
    assert!(suite.filter);
    assert_eq!(suite.kept_count() + suite.filtered, 4);
    for (s, k) in suite.scenarios.iter().zip(&suite.kept) {
        assert_eq!(*k, s.reconstruction_improved());
        assert!(s.hashes_consistent());
    }
    let again = run_suite(&base, 4, 9).unwrap();
    assert_eq!((&again.summary, &again.kept), (&suite.summary, &suite.kept));

    let unfiltered = SuiteReport::aggregate(base.clone(), 9, suite.scenarios.clone(), false);
    assert_eq!(unfiltered.filtered, 0);
    assert_eq!(unfiltered.kept_count(), 4);
}

#[test]
fn digits_suite_walks_the_folds() {
    let suite = run_suite(&ScenarioConfig::digits(), 2, 0).unwrap();
    assert!(!suite.filter);
    let folds: Vec<_> = suite.scenarios.iter().map(|s| s.config.data.clone()).collect();
    assert_eq!(
        folds,
        vec![
            DataSource::Digits { folds: 10, fold: 0 },
            DataSource::Digits { folds: 10, fold: 1 }
        ]
    );
    assert_ne!(suite.scenarios[0].tasks, suite.scenarios[1].tasks);
}
