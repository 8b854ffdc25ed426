#![allow(dead_code)]

use cfmm_core::beamselect::select_beams;
use cfmm_core::channel::{complex_gaussian, generate_channels};
use cfmm_core::numerics::CMatrix;
use cfmm_core::precoder::{effective_channels, ApProblem};
use cfmm_core::topology::{form_clusters, generate_drop, large_scale_gains};
use cfmm_core::{rng_from_seed, ChannelSet, EffectiveChannels, PrecoderState, SimRng, SystemConfig, Topology, C64};
use rand::Rng;

pub struct Scenario {
    pub topo: Topology,
    pub channels: ChannelSet,
    pub eff: EffectiveChannels,
}

/// Full drop with two-stage beam selection.
pub fn scenario(cfg: &SystemConfig, seed: u64) -> Scenario {
    let mut rng = rng_from_seed(seed);
    let topo = generate_drop(cfg, &mut rng);
    let ls = large_scale_gains(&topo, cfg, &mut rng);
    let topo = form_clusters(&topo, &ls, cfg).expect("clusters");
    let channels = generate_channels(&topo, cfg, &mut rng);
    let assign = select_beams(&channels, &topo, cfg, true).expect("beams");
    let eff = effective_channels(&channels, &assign, &topo).expect("effective channels");
    Scenario { topo, channels, eff }
}

pub fn random_vec(rng: &mut SimRng, m: usize, var: f64) -> Vec<C64> {
    (0..m).map(|_| complex_gaussian(rng, var)).collect()
}

/// `l` APs with `m` RF chains each; every UE picks `per_ue` distinct APs.
/// Channel entries are `CN(0, scale^2)`.
pub fn random_instance(
    rng: &mut SimRng,
    l: usize,
    k: usize,
    m: usize,
    per_ue: usize,
    scale: f64,
) -> (EffectiveChannels, SystemConfig) {
    let serving: Vec<Vec<usize>> = (0..k)
        .map(|_| {
            let mut aps: Vec<usize> = (0..l).collect();
            for i in 0..per_ue {
                let j = rng.random_range(i..l);
                aps.swap(i, j);
            }
            aps.truncate(per_ue);
            aps
        })
        .collect();
    let hbar = (0..l)
        .map(|_| (0..k).map(|_| random_vec(rng, m, scale * scale)).collect())
        .collect();
    let eff = EffectiveChannels::new(serving, hbar, vec![vec![true; m]; l]).unwrap();
    let cfg = SystemConfig {
        num_aps: l,
        num_ues: k,
        num_antennas: m,
        num_rf: m,
        cluster_size: per_ue,
        ..Default::default()
    };
    (eff, cfg)
}

/// Random precoders with per-AP power drawn up to `p_max`.
pub fn random_state(rng: &mut SimRng, eff: &EffectiveChannels, cfg: &SystemConfig) -> PrecoderState {
    let mut state = PrecoderState::zeros(eff);
    for l in 0..eff.num_aps() {
        let served = eff.served_ues(l).len();
        let zs: Vec<Vec<C64>> = (0..served).map(|_| random_vec(rng, eff.num_rf(), 1.0)).collect();
        let total: f64 = zs.iter().flatten().map(|x| x.norm_sqr()).sum();
        let target = cfg.p_max * rng.random_range(0.05..1.0);
        let s = if total > 0.0 { (target / total).sqrt() } else { 0.0 };
        state.z[l] = zs.into_iter().map(|z| z.into_iter().map(|x| x * s).collect()).collect();
    }
    state
}

/// Per-AP subproblem with `k` visible UEs, the first `served` of them served.
pub fn random_ap_problem(rng: &mut SimRng, m: usize, k: usize, served: usize) -> ApProblem {
    ApProblem {
        hbar: (0..k).map(|_| random_vec(rng, m, 1e-10)).collect(),
        omega: (0..k).map(|_| rng.random_range(0.1..10.0) * 1e10).collect(),
        served: (0..served).collect(),
        rhs_coef: (0..served).map(|_| complex_gaussian(rng, 1e10)).collect(),
    }
}

fn to_na(a: &CMatrix) -> nalgebra::DMatrix<C64> {
    nalgebra::DMatrix::from_fn(a.rows(), a.cols(), |r, c| a[(r, c)])
}

/// `(a + shift I)^{-1} b` by dense LU.
pub fn dense_solve(a: &CMatrix, shift: f64, b: &[C64]) -> Vec<C64> {
    let mut m = to_na(a);
    for i in 0..a.rows() {
        m[(i, i)] += C64::new(shift, 0.0);
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    m.lu().solve(&rhs).expect("nonsingular").iter().copied().collect()
}

pub fn rel_err(got: &[C64], want: &[C64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = want.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
