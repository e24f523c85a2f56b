use hmloc::{evaluate, run_localization, LocalizerConfig, Mode, Scenario, SimConfig, Stage};

fn short(cfg: SimConfig) -> SimConfig {
    SimConfig { duration: 3.0, ..cfg }
}

#[test]
fn noiseless_run_tracks_ground_truth() {
    let scn = Scenario::generate(&SimConfig::noiseless()).unwrap();
    let out = run_localization(&scn, &LocalizerConfig::default()).unwrap();
    let e = evaluate(&out.estimates, &scn.gt.frames).unwrap();
    assert!(e.mape_m < 1e-6, "{}", e.mape_m);
    assert_eq!(e.recall_pct, 100.0);
    assert!(out.stats.landmarks_activated > 0);
}

#[test]
fn repeated_runs_are_identical() {
    let scn = Scenario::generate(&short(SimConfig::default())).unwrap();
    let a = run_localization(&scn, &LocalizerConfig::default()).unwrap();
    let b = run_localization(&scn, &LocalizerConfig::default()).unwrap();
    assert_eq!(a.estimates, b.estimates);
    assert_eq!(a.stats, b.stats);
}

#[test]
fn every_mode_localizes_a_noisy_sequence() {
    let scn = Scenario::generate(&short(SimConfig::default())).unwrap();
    for mode in Mode::ALL {
        let out = run_localization(&scn, &LocalizerConfig { mode, ..Default::default() }).unwrap();
        let e = evaluate(&out.estimates, &scn.gt.frames).unwrap();
        assert_eq!(e.recall_pct, 100.0, "{mode}");
        assert!(e.mape_m < 0.05, "{mode}: {}", e.mape_m);
        let names: Vec<_> = out.timer.summary().into_iter().map(|r| r.name).collect();
        assert_eq!(names, Stage::ALL.map(|s| s.name()).to_vec());
    }
}

#[test]
fn temporal_landmarks_supply_extra_factors() {
    let scn = Scenario::generate(&short(SimConfig::default())).unwrap();
    let on = run_localization(&scn, &LocalizerConfig::default()).unwrap();
    let off = run_localization(&scn, &LocalizerConfig { temporal_landmarks: false, ..Default::default() }).unwrap();
    assert!(on.stats.temporal_factors > 0);
    assert_eq!(off.stats.temporal_factors, 0);
    assert_eq!(off.stats.seeds_created, 0);
}
