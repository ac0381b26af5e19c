//! Small experiment configurations that run in seconds.

use lobpredict_core::labeling::{LabelingPolicy, TargetKind};
use lobpredict_core::nn::{PresetWidths, TrainConfig};
use lobpredict_core::runner::{DataSource, ExperimentConfig, ModelChoice};
use lobpredict_core::synth::SynthConfig;
use lobpredict_core::Variant;

pub fn tiny_synth(n_days: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_days,
        events_per_day: 400,
        seed,
        signal_beta: 1.0,
        // Short horizons need frequent moves, or most targets are zero.
        activity: 0.4,
        ..SynthConfig::default()
    }
}

pub fn tiny_policy(target: TargetKind) -> LabelingPolicy {
    LabelingPolicy {
        k: 5,
        k_prime: 5,
        target,
        window: 20,
        ..LabelingPolicy::default()
    }
}

/// Level-1 network, two scaler days, two training days.
pub fn tiny_experiment(n_days: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synth {
            config: tiny_synth(n_days, seed),
        },
        variant: Variant::Level1,
        policy: tiny_policy(TargetKind::R1K),
        model: ModelChoice::Network {
            preset: None,
            widths: PresetWidths {
                conv: 2,
                inception: 2,
                lstm: 3,
                dropout: 0.2,
            },
        },
        train_days: 2,
        scaler_days: 2,
        train_stride: 2,
        train: TrainConfig {
            epochs: 1,
            batch_size: 32,
            seed: 5,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

pub fn tiny_naive(n_days: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        policy: tiny_policy(TargetKind::RkK),
        model: ModelChoice::Naive,
        ..tiny_experiment(n_days, seed)
    }
}
