//! Fixtures shared by the benchmarks.

use tro_core::experiment::online_features;
use tro_core::stream::{ChannelMode, FeatureConfig, Stream};
use tro_core::synth::{generate_scenario, ScenarioSpec};

/// Single-operator version of the default scenario.
pub fn scene() -> Vec<Stream> {
    let spec = ScenarioSpec {
        operators: 1,
        ..ScenarioSpec::default()
    };
    let (streams, _) = generate_scenario(&spec).expect("default scenario is valid");
    streams.into_iter().map(|s| s.1).collect()
}

/// Gaze-centered single-frame features of both channels, every `stride`-th frame.
pub fn feature_rows(streams: &[Stream], stride: usize) -> Vec<Vec<f64>> {
    let config = FeatureConfig {
        channels: ChannelMode::Both,
        window: 1,
        attention: true,
    };
    online_features(streams, &config)
        .expect("valid feature config")
        .into_iter()
        .step_by(stride.max(1))
        .map(|(_, _, f)| f.values)
        .collect()
}
