use duty_energy::presets::{preset_source, DEFAULT_PRESETS};
use duty_energy::{
    accuracy_percent, integrate_trace, label_segments, parse_trace_csv, predict, segment_trace, synthesize_trace,
    write_trace_csv, DurationSeconds, Error, ParameterCatalog, PhaseLabel, ScenarioConfig, ScenarioProfile,
    SegmentConfig,
};

fn preset(name: &str) -> ScenarioProfile {
    ScenarioConfig::from_toml_str(preset_source(name).unwrap())
        .unwrap()
        .resolve(&ParameterCatalog::builtin())
        .unwrap()
}

/// (start, current) of each non-empty phase on the timeline up to `T`.
fn phase_starts(s: &ScenarioProfile) -> Vec<(f64, f64)> {
    let total = s.total_time.value();
    let mut out = vec![];
    let mut t = 0.0;
    let mut push = |p: &duty_energy::PhaseSpec, t: &mut f64| {
        if *t < total && p.duration.value() > 0.0 {
            out.push((*t, p.current.value()));
        }
        *t += p.duration.value();
    };
    for p in s.init_phases() {
        push(p, &mut t);
    }
    while t < total {
        for p in s.cycle_phases() {
            push(p, &mut t);
        }
    }
    out
}

#[test]
fn noisy_segmentation_recovers_means() {
    for name in ["lowpower-cyclic", "vlp-default"] {
        let s = preset(name).with_total_time(DurationSeconds::new(240.0).unwrap()).unwrap();
        let clean = synthesize_trace(&s, 10_000.0).unwrap();
        let noisy = clean.with_uniform_noise(0.02, 7).unwrap();
        let segments = segment_trace(&noisy, &SegmentConfig::default()).unwrap();
        let expected = phase_starts(&s);
        assert_eq!(segments.len(), expected.len(), "{name}");
        for (seg, (start, current)) in segments.iter().zip(&expected) {
            assert!((seg.mean_current / current - 1.0).abs() < 0.01, "{name}: {} vs {current}", seg.mean_current);
            assert!((seg.start - start).abs() < 0.005, "{name}: starts {} vs {start}", seg.start);
        }
    }
}

#[test]
fn labels_follow_phase_order() {
    let s = preset("vlp-nbvlc");
    let s = s.with_total_time(s.t_one_cycle()).unwrap();
    let trace = synthesize_trace(&s, 10_000.0).unwrap();
    let mut segments = segment_trace(&trace, &SegmentConfig::default()).unwrap();
    label_segments(&mut segments, s.cycle_phases());
    let labels: Vec<PhaseLabel> = segments.iter().filter_map(|g| g.label).collect();
    let want: Vec<PhaseLabel> = s
        .cycle_phases()
        .iter()
        .filter(|p| p.duration.value() > 0.0)
        .map(|p| p.label)
        .collect();
    assert_eq!(labels, want);
}

#[test]
fn self_validation_against_synthesized_measurement() {
    for name in DEFAULT_PRESETS {
        let s = preset(name);
        let report = predict(&s).unwrap();
        let trace = synthesize_trace(&s, 10_000.0).unwrap();
        let measured_mwh = integrate_trace(&trace).unwrap().value() * s.operating_voltage.value() / 3600.0;
        let acc = accuracy_percent(report.p_total_mwh(), measured_mwh).unwrap();
        assert!(acc >= 99.9, "{name}: {acc}");
    }
}

#[test]
fn csv_file_round_trip() {
    let s = preset("vlp-default").with_total_time(DurationSeconds::new(120.0).unwrap()).unwrap();
    let trace = synthesize_trace(&s, 1000.0).unwrap();
    let path = std::env::temp_dir().join(format!("duty-energy-roundtrip-{}.csv", std::process::id()));
    write_trace_csv(&trace, std::io::BufWriter::new(std::fs::File::create(&path).unwrap())).unwrap();
    let parsed = parse_trace_csv(&std::fs::read(&path).unwrap()).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert!(parsed.is_uniform());
    assert_eq!(parsed.len(), trace.len());
    assert_eq!(integrate_trace(&parsed).unwrap(), integrate_trace(&trace).unwrap());
}

#[test]
fn irregular_csv_integrates_by_gaps() {
    let csv = "time_s,current_mA\n# bench log\n0,2\n0.5,4\r\n2,1\n2.25,-0.5\n";
    let t = parse_trace_csv(csv.as_bytes()).unwrap();
    assert!(!t.is_uniform());
    assert_eq!(t.clamped_negative(), 1);
    let q = integrate_trace(&t).unwrap().value();
    assert!((q - (2.0 * 0.5 + 4.0 * 1.5 + 1.0 * 0.25)).abs() < 1e-12);
    assert!(matches!(
        parse_trace_csv(b"time_s,current_mA\n0,1\n0,2\n"),
        Err(Error::NonMonotonicTime { line: 3 })
    ));
    assert!(matches!(parse_trace_csv(b""), Err(Error::EmptyFile)));
}
