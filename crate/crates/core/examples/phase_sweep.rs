//! Trains every phase and both baselines on the synthetic conflict benchmark
//! and prints test accuracy and mean uncertainty per phase.
//!
//! Usage: phase_sweep [eta] [seed]

use apln_core::data::{synthesize_dataset, CorruptionSpec};
use apln_core::pipeline::{
    prepare_experiment, run_apln, run_baseline, Phase, PreparedData, TrainConfig,
};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args()
        .nth(i)
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() -> apln_core::Result<()> {
    let eta: f64 = arg(1, 0.5);
    let seed: u64 = arg(2, 0);
    let ds = synthesize_dataset(2000, 6, 10, 8, 2.5, seed)?;
    let corruption = CorruptionSpec {
        eta,
        conflict_fraction: 0.4,
        seed,
    };
    let PreparedData { train, test, .. } = prepare_experiment(&ds, &corruption, 0.2)?;
    let cfg = TrainConfig {
        epochs_f: 30,
        epochs_v: 30,
        epochs_j: 30,
        lr_f: 3e-3,
        lr_v: 3e-3,
        feature_dim: 32,
        latent_dim: 16,
        vae_hidden: 64,
        seed,
        ..TrainConfig::default()
    };
    let print = |name: &str, acc: f64, u: f64, secs: f64| {
        println!("{name:7} acc {acc:.4} u {u:.4} secs {secs:.1}");
    };
    for out in run_apln(&train, &test, &cfg)? {
        let m = &out.evaluation.metrics;
        print(
            out.report.phase.name(),
            m.accuracy,
            m.mean_uncertainty,
            out.report.wall_clock_seconds,
        );
    }
    for phase in [Phase::Zimp, Phase::Mimp] {
        let out = run_baseline(&train, &test, phase, &cfg)?;
        let m = &out.evaluation.metrics;
        print(
            phase.name(),
            m.accuracy,
            m.mean_uncertainty,
            out.report.wall_clock_seconds,
        );
    }
    Ok(())
}
