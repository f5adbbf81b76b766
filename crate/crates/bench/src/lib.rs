//! Shared fixtures for the criterion benchmarks.

use delaystab_core::{
    compute_spectrum, project_sources, synthesize, GainSet, Measurement, PlantSpec, SpectralData,
};

/// Spectral data and synthesized gains of the reference plant.
pub fn reference_setup(measurement: Measurement, n_modes: usize, grid_size: usize) -> (SpectralData, GainSet) {
    let plant = PlantSpec::reference(measurement);
    let spec = compute_spectrum(&plant, n_modes, grid_size).expect("reference spectrum");
    let spec = project_sources(&spec).expect("source projections");
    let gains = synthesize(&spec, 0.5, measurement).expect("gain synthesis");
    (spec, gains)
}
