//! Shared fixtures for the pipeline benchmarks: deterministic synthetic
//! rosters at the sizes the benches exercise.

use stagewise_core::roster::PopulationRoster;
use stagewise_core::synth::{self, SynthConfig};

/// Roster of `n_units` over `horizon` days from the default generator
/// design, deterministic in the fixed seed.
pub fn bench_roster(n_units: usize, horizon: u32) -> PopulationRoster {
    let config = SynthConfig {
        n_units,
        treat_count: n_units / 2,
        horizon,
        seed: 17,
        ..SynthConfig::default()
    };
    let (roster, _) = synth::generate(&config).expect("bench config is valid");
    roster
}
