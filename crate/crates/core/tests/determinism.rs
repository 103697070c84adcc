use caopd_core::distill::{exact_report, train};
use caopd_core::world::{build_world, WorldSpec};
use caopd_core::{Policy, Regime, TrainConfig};

fn world() -> caopd_core::World {
    let mut spec = WorldSpec::small(8, 3, 2, 31);
    spec.difficulty_profile = vec![0.6];
    spec.context_helpfulness = 0.2;
    spec.context_confidence_bias = 3.0;
    build_world(&spec).unwrap()
}

#[test]
fn identical_seeds_give_identical_logs() {
    let w = world();
    for regime in [Regime::Opd, Regime::Caopd, Regime::RlcrLite] {
        let config = TrainConfig::new(regime, 0.5, 30, 3);
        let run = || {
            let mut p = Policy::from_world(&w).unwrap();
            let log = train(&config, &w, &mut p).unwrap();
            (log.to_csv(), log.to_json().unwrap(), p.to_checkpoint_json().unwrap())
        };
        assert_eq!(run(), run(), "{regime:?}");
    }
}

#[test]
fn snapshot_restore_reproduces_metrics() {
    let w = world();
    let mut p = Policy::from_world(&w).unwrap();
    train(&TrainConfig::new(Regime::Caopd, 0.5, 25, 8), &w, &mut p).unwrap();
    let before = serde_json::to_string(&exact_report(&p, &w, 10).unwrap()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snapshot.json");
    p.save(&path).unwrap();
    let mut restored = Policy::load(&path).unwrap();
    assert_eq!(restored, p);
    train(&TrainConfig::new(Regime::Caopd, 0.5, 0, 8), &w, &mut restored).unwrap();
    let after = serde_json::to_string(&exact_report(&restored, &w, 10).unwrap()).unwrap();
    assert_eq!(before, after);
}
