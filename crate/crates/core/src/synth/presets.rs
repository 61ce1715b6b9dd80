//! Built-in scenarios used by the demo, the tests and `synth --preset`.

use super::{LayerSpec, SynthScenario, TaskSpec};
use crate::model::TaskKind;

pub const PRESET_NAMES: [&str; 4] = ["demo", "mid-layer", "height", "null"];

fn task(name: &str, kind: TaskKind, loading: &[f64], noise: f64) -> TaskSpec {
    TaskSpec {
        name: name.to_string(),
        kind,
        loading: loading.to_vec(),
        noise,
        missing_rate: 0.0,
    }
}

fn layer(layer_id: u32, channels: usize, relevance: f64, specialization: f64, nuisance: usize) -> LayerSpec {
    LayerSpec {
        layer_id,
        layer_name: format!("mixed_{layer_id}"),
        channels,
        relevance,
        specialization,
        nuisance_dims: nuisance,
        spatial: None,
    }
}

/// Four tasks, three layers peaking in the middle; small enough to run
/// end to end in well under a second.
fn demo() -> SynthScenario {
    use TaskKind::*;
    let mut tasks = vec![
        task("age", Continuous, &[1.0, 0.3, 0.0, 0.0], 0.5),
        task("sex", Binary, &[0.0, 1.0, 0.0, 0.3], 0.3),
        task("eye_position", Binary, &[0.0, 0.0, 1.0, 0.0], 0.1),
        task("height_like", Continuous, &[0.6, 0.5, 0.0, 0.0], 1.4),
    ];
    tasks[0].missing_rate = 0.05;
    let mut layers = vec![
        layer(0, 8, 0.3, 0.0, 2),
        layer(1, 12, 0.9, 0.3, 3),
        layer(2, 16, 0.4, 1.0, 4),
    ];
    layers[0].spatial = Some([2, 2]);
    SynthScenario {
        name: "demo".into(),
        n_patients: 1200,
        images_per_patient: 2,
        latent_dim: 4,
        seed: 20_240_601,
        tasks,
        layers,
        sources: None,
        prediction_noise: 0.5,
    }
}

/// Six nearly independent tasks; shared relevance peaks at layer 2 while
/// own-task specialization keeps rising to the last layer.
fn mid_layer() -> SynthScenario {
    let names = ["task_a", "task_b", "task_c", "task_d", "task_e", "task_f"];
    let tasks = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut loading = vec![0.0; 7];
            loading[j] = 1.0;
            loading[6] = 0.2;
            let kind = if j < 2 { TaskKind::Binary } else { TaskKind::Continuous };
            task(name, kind, &loading, 0.4)
        })
        .collect();
    SynthScenario {
        name: "mid-layer".into(),
        n_patients: 8000,
        images_per_patient: 2,
        latent_dim: 7,
        seed: 7,
        tasks,
        layers: vec![
            layer(0, 10, 0.3, 0.0, 2),
            layer(1, 12, 0.6, 0.1, 2),
            layer(2, 14, 0.95, 0.3, 2),
            layer(3, 16, 0.6, 0.75, 2),
            layer(4, 16, 0.45, 1.0, 2),
        ],
        sources: None,
        prediction_noise: 0.5,
    }
}

/// A hard target (self R² ceiling 0.3) that shares its latent with easier
/// correlated tasks.
fn height() -> SynthScenario {
    use TaskKind::*;
    SynthScenario {
        name: "height".into(),
        n_patients: 8000,
        images_per_patient: 2,
        latent_dim: 4,
        seed: 11,
        tasks: vec![
            task("height_like", Continuous, &[1.0, 0.0, 0.0, 0.0], (7.0f64 / 3.0).sqrt()),
            task("testosterone_like", Continuous, &[1.0, 0.5, 0.0, 0.0], 0.2),
            task("sex_like", Binary, &[0.8, 0.6, 0.0, 0.0], 0.3),
            task("eye_position", Binary, &[0.0, 0.0, 1.0, 0.0], 0.1),
            task("age", Continuous, &[0.0, 0.0, 0.0, 1.0], 0.5),
        ],
        layers: vec![
            layer(0, 8, 0.3, 0.0, 2),
            layer(1, 10, 0.6, 0.2, 2),
            layer(2, 12, 0.7, 0.6, 2),
            layer(3, 12, 0.5, 1.0, 2),
        ],
        sources: None,
        prediction_noise: 0.5,
    }
}

/// Enough single-image patients for a test split above 2000 rows.
fn null() -> SynthScenario {
    use TaskKind::*;
    SynthScenario {
        name: "null".into(),
        n_patients: 18_000,
        images_per_patient: 1,
        latent_dim: 2,
        seed: 3,
        tasks: vec![
            task("bin_a", Binary, &[1.0, 0.0], 0.5),
            task("bin_b", Binary, &[0.0, 1.0], 1.0),
            task("cont_a", Continuous, &[1.0, 0.5], 0.5),
            task("cont_b", Continuous, &[0.0, 1.0], 2.0),
        ],
        layers: vec![layer(0, 4, 0.8, 0.0, 1)],
        sources: Some(vec!["bin_a".into()]),
        prediction_noise: 0.5,
    }
}

pub fn preset(name: &str) -> Option<SynthScenario> {
    match name {
        "demo" => Some(demo()),
        "mid-layer" => Some(mid_layer()),
        "height" => Some(height()),
        "null" => Some(null()),
        _ => None,
    }
}
