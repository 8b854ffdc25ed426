//! Fixtures shared by the criterion benches.

use cfmm_core::beamselect::select_beams;
use cfmm_core::channel::{complex_gaussian, generate_channels};
use cfmm_core::precoder::{effective_channels, init_precoders, wsmse_step};
use cfmm_core::topology::{form_clusters, generate_drop, large_scale_gains};
use cfmm_core::{rng_from_seed, CMatrix, EffectiveChannels, PrecoderState, SolverMode, SystemConfig};

/// Random Hermitian positive semidefinite matrix `X X^H / m` of rank `rank`.
pub fn gram_matrix(m: usize, rank: usize, seed: u64) -> CMatrix {
    let mut rng = rng_from_seed(seed);
    let x = CMatrix::from_fn(m, rank, |_, _| complex_gaussian(&mut rng, 1.0));
    x.matmul(&x.adjoint()).scale((1.0 / m as f64).into())
}

/// Effective channels of one drop after two-stage beam selection.
pub fn drop_channels(cfg: &SystemConfig, seed: u64) -> EffectiveChannels {
    let mut rng = rng_from_seed(seed);
    let topo = generate_drop(cfg, &mut rng);
    let ls = large_scale_gains(&topo, cfg, &mut rng);
    let topo = form_clusters(&topo, &ls, cfg).expect("clusters");
    let channels = generate_channels(&topo, cfg, &mut rng);
    let assign = select_beams(&channels, &topo, cfg, true).expect("beams");
    effective_channels(&channels, &assign, &topo).expect("effective channels")
}

/// Precoder state after `iters` exact WSMSE iterations.
pub fn warm_state(eff: &EffectiveChannels, cfg: &SystemConfig, iters: usize) -> PrecoderState {
    let mut state = init_precoders(eff, cfg);
    for _ in 0..iters {
        wsmse_step(&mut state, eff, cfg, SolverMode::Exact).expect("wsmse step");
    }
    state
}
