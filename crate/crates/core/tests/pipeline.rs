use lifelong_core::config::RunConfigFile;
use lifelong_core::lifecycle::{self, KnowledgeBase, OuterConfig, StopReason};
use lifelong_core::space::RadiusPolicy;
use lifelong_core::strategy::{FnEvaluator, SamplerRegistry, SamplerSettings, TrafficEvaluator};

fn small() -> OuterConfig {
    OuterConfig {
        batch_size: 40,
        max_rounds: 5,
        probes: 10_000,
        seed: 11,
        ..OuterConfig::default()
    }
}

#[test]
fn every_sampler_drives_the_same_loop() {
    let reg = SamplerRegistry::standard();
    let settings = SamplerSettings::default();
    // Critical iff the first coordinate is small: exact counts are checkable.
    let ev = FnEvaluator(|x: &lifelong_core::space::Point| x.coords()[0] < 0.3);
    for name in reg.names() {
        let sampler = reg.create(name, &settings).unwrap();
        let mut kb = KnowledgeBase::new(2);
        let mut seen = 0;
        let report = lifecycle::run(&small(), RadiusPolicy::default(), sampler.as_ref(), &ev, &mut kb, |kb| {
            seen += 1;
            assert_eq!(kb.rounds().len(), seen);
            Ok(())
        })
        .unwrap();
        let expected = kb.spheres().iter().filter(|s| s.center.coords()[0] < 0.3).count();
        assert_eq!(report.total_critical, expected, "{name}");
        assert_eq!(report.final_score + expected as f64, 4000.0, "{name}");
        assert_eq!(report.sampler, name);
        let crates: Vec<f64> = report.rounds.iter().map(|r| r.crate_rate).collect();
        assert!(crates.windows(2).all(|w| w[1] >= w[0]), "{name}");
        if report.stop == StopReason::MaxRounds {
            assert_eq!(report.rounds.len(), 5);
        }
    }
}

#[test]
fn knowledge_file_round_trips_through_a_configured_run() {
    let settings = RunConfigFile::parse(
        "space_mode = \"subset\"\nspace_dims = [\"T\", \"delta_a_th\"]\nbatch_size = 30\npoints_per_iteration = 30\nmax_rounds = 3\nprobes = 5000\nseed = 4\n",
    )
    .unwrap()
    .resolve()
    .unwrap();
    let sampler = SamplerRegistry::standard()
        .create(&settings.sampler, &settings.samplers)
        .unwrap();
    let ev = TrafficEvaluator {
        space: settings.space.clone(),
        sim: settings.sim.clone(),
    };
    let mut kb = KnowledgeBase::new(settings.space.dim());
    let report = lifecycle::run(
        &settings.outer,
        settings.samplers.packing.radii,
        sampler.as_ref(),
        &ev,
        &mut kb,
        |_| Ok(()),
    )
    .unwrap();
    assert_eq!(report.total, 90);

    let mut buf = Vec::new();
    kb.write_csv(&mut buf).unwrap();
    let back = KnowledgeBase::read_csv(
        buf.as_slice(),
        "knowledge.csv".as_ref(),
        settings.outer.max_score,
        settings.outer.kde_bandwidth,
        settings.outer.probes,
    )
    .unwrap();
    assert_eq!(back.len(), kb.len());
    assert_eq!(back.critical_count(), kb.critical_count());
    let mut again = Vec::new();
    back.write_csv(&mut again).unwrap();
    assert_eq!(buf, again);
    for (a, b) in back.rounds().iter().zip(kb.rounds()) {
        assert_eq!((a.n_total, a.n_critical, a.score), (b.n_total, b.n_critical, b.score));
        assert!((a.crate_rate - b.crate_rate).abs() < 1e-3);
    }
}
