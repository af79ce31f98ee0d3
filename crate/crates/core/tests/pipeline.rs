use tro_core::eval::evaluate_tros;
use tro_core::experiment::{run_offline, run_online};
use tro_core::io::{
    parse_model, read_ground_truth, read_stream_dir, write_ground_truth, write_model, write_stream_dir,
};
use tro_core::models::reload_snippet;
use tro_core::offline::{KChoice, Method, OfflineConfig};
use tro_core::online::{MixtureMode, OnlineConfig};
use tro_core::stream::{ChannelMode, FeatureConfig};
use tro_core::synth::{generate_scenario, ScenarioSpec};

fn small_spec() -> ScenarioSpec {
    ScenarioSpec {
        operators: 1,
        sequences_per_operator: 2,
        visits_per_sequence: 12,
        ..ScenarioSpec::default()
    }
}

#[test]
fn scenario_survives_the_file_formats() {
    let (streams, gt) = generate_scenario(&small_spec()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_stream_dir(tmp.path(), &streams).unwrap();
    std::fs::write(tmp.path().join("gt.txt"), write_ground_truth(&gt)).unwrap();
    let back = read_stream_dir(tmp.path()).unwrap();
    assert_eq!(back.len(), streams.len());
    for ((na, a), (nb, b)) in streams.iter().zip(&back) {
        assert_eq!(na, nb);
        assert_eq!(a.records.len(), b.records.len());
        assert_eq!(a.header, b.header);
    }
    let gt_back = read_ground_truth(&tmp.path().join("gt.txt")).unwrap();
    // Coordinates are written with nine significant digits.
    let (a, b) = (gt_back.boxes(), gt.boxes());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        for k in 0..3 {
            assert!((x.min[k] - y.min[k]).abs() < 1e-8 && (x.max[k] - y.max[k]).abs() < 1e-8);
        }
    }
    for (x, y) in gt_back.script.iter().flatten().zip(gt.script.iter().flatten()) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn offline_model_reloads_with_snippets() {
    let (streams, gt) = generate_scenario(&small_spec()).unwrap();
    let names: Vec<String> = streams.iter().map(|s| s.0.clone()).collect();
    let streams: Vec<_> = streams.into_iter().map(|s| s.1).collect();
    let config = OfflineConfig {
        method: Method::KMeans,
        k: KChoice::Known(20),
        features: FeatureConfig {
            channels: ChannelMode::Both,
            window: 5,
            attention: true,
        },
        ..OfflineConfig::default()
    };
    let run = run_offline(&streams, &config).unwrap();
    assert!(!run.kb.objects.is_empty());
    let score = evaluate_tros(&run.boxes, &gt.boxes(), 0.2);
    assert!(score.true_positives > 0, "{score:?}");

    let text = write_model(&run.kb, &names);
    let file = parse_model(std::path::Path::new("model.tro"), &text).unwrap();
    assert_eq!(file.stream_names, names);
    assert_eq!(file.kb.objects.len(), run.kb.objects.len());
    for (a, b) in run.kb.objects.iter().zip(&file.kb.objects) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.snippets.len(), b.snippets.len());
        for (sa, sb) in a.snippets.iter().zip(&b.snippets) {
            let full = reload_snippet(&streams[sb.stream], sb).unwrap();
            assert_eq!((full.start, full.end), (sa.start, sa.end));
            assert_eq!(full.frames.len(), sa.frames.len());
        }
    }
    assert_eq!(write_model(&file.kb, &names), text);
}

#[test]
fn online_objects_cover_fixed_sites() {
    let (streams, gt) = generate_scenario(&small_spec()).unwrap();
    let streams: Vec<_> = streams.into_iter().map(|s| s.1).collect();
    let features = FeatureConfig {
        channels: ChannelMode::Both,
        window: 1,
        attention: true,
    };
    let config = OnlineConfig {
        eps1: 3.0,
        eps2: 25.0,
        eps3: 5.0,
        mixture: MixtureMode::Min,
        ..OnlineConfig::default()
    };
    let run = run_online(&streams, &features, &config, 60).unwrap();
    let score = evaluate_tros(&run.boxes, &gt.boxes(), 0.2);
    assert!(score.precision >= 0.8, "{score:?}");
    for o in &run.kb.objects {
        let total: f64 = o.location.components.iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
