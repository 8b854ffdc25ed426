//! Random network drops and user-centric serving clusters.

mod config;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use config::{SolverMode, SystemConfig};

use crate::channel::path_loss_db;
use crate::{Error, Result};

/// AP/UE geometry plus serving clusters. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub ap_xy: Vec<[f64; 2]>,
    pub ue_xy: Vec<[f64; 2]>,
    /// `serving_aps[k]`: sorted APs serving UE `k`.
    pub serving_aps: Vec<Vec<usize>>,
    /// `served_ues[l]`: sorted UEs served by AP `l`.
    pub served_ues: Vec<Vec<usize>>,
    /// `large_scale_db[l][k]`: path gain (dB, shadowing included) from AP `l` to UE `k`.
    pub large_scale_db: Vec<Vec<f64>>,
}

impl Topology {
    pub fn num_aps(&self) -> usize {
        self.ap_xy.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ue_xy.len()
    }

    pub fn distance(&self, k: usize, l: usize) -> f64 {
        let [ax, ay] = self.ap_xy[l];
        let [ux, uy] = self.ue_xy[k];
        (ux - ax).hypot(uy - ay)
    }

    /// Planar bearing of UE `k` as seen from AP `l`, radians.
    pub fn bearing(&self, k: usize, l: usize) -> f64 {
        let [ax, ay] = self.ap_xy[l];
        let [ux, uy] = self.ue_xy[k];
        (uy - ay).atan2(ux - ax)
    }

    /// Checks the cluster invariants: transpose consistency, cluster size,
    /// AP capacity, and coverage.
    pub fn check_clusters(&self, cfg: &SystemConfig) -> Result<()> {
        let m = cfg.effective_cluster_size();
        for (k, aps) in self.serving_aps.iter().enumerate() {
            if aps.len() != m {
                return Err(Error::Internal(format!(
                    "UE {k} has {} serving APs, expected {m}",
                    aps.len()
                )));
            }
            for &l in aps {
                if !self.served_ues[l].contains(&k) {
                    return Err(Error::Internal(format!("AP {l} serves UE {k} one-sidedly")));
                }
            }
        }
        for (l, ues) in self.served_ues.iter().enumerate() {
            if ues.len() > cfg.num_rf {
                return Err(Error::Internal(format!(
                    "AP {l} serves {} UEs with {} RF chains",
                    ues.len(),
                    cfg.num_rf
                )));
            }
            for &k in ues {
                if !self.serving_aps[k].contains(&l) {
                    return Err(Error::Internal(format!("AP {l} serves UE {k} one-sidedly")));
                }
            }
        }
        Ok(())
    }
}

/// Drops APs and UEs i.i.d. uniformly over `[0, area_m]^2`. Clusters are left empty.
pub fn generate_drop<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Topology {
    let point = |rng: &mut R| [rng.random::<f64>() * cfg.area_m, rng.random::<f64>() * cfg.area_m];
    let ap_xy = (0..cfg.num_aps).map(|_| point(rng)).collect();
    let ue_xy = (0..cfg.num_ues).map(|_| point(rng)).collect();
    Topology {
        ap_xy,
        ue_xy,
        serving_aps: vec![Vec::new(); cfg.num_ues],
        served_ues: vec![Vec::new(); cfg.num_aps],
        large_scale_db: Vec::new(),
    }
}

/// Path gain of every AP-UE pair with an independent shadowing draw,
/// indexed `[l][k]`.
pub fn large_scale_gains<R: Rng + ?Sized>(
    topo: &Topology,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let shadow = Normal::new(0.0, cfg.shadow_var_db2.sqrt()).expect("validated shadowing variance");
    (0..topo.num_aps())
        .map(|l| {
            (0..topo.num_ues())
                .map(|k| path_loss_db(topo.distance(k, l), cfg, shadow.sample(rng)))
                .collect()
        })
        .collect()
}

/// Forms user-centric clusters: each UE picks its `M` strongest APs, then
/// every AP holding more than `N_RF` UEs keeps its strongest `N_RF` and the
/// evicted UEs move to their next-best AP with spare RF chains.
pub fn form_clusters(
    topo: &Topology,
    large_scale_db: &[Vec<f64>],
    cfg: &SystemConfig,
) -> Result<Topology> {
    let num_aps = topo.num_aps();
    let num_ues = topo.num_ues();
    if large_scale_db.len() != num_aps || large_scale_db.iter().any(|row| row.len() != num_ues) {
        return Err(Error::Config(format!(
            "large-scale gain matrix must be {num_aps}x{num_ues}"
        )));
    }
    let m = cfg.cluster_size.min(num_aps);
    if num_aps * cfg.num_rf < num_ues * m {
        return Err(Error::Config(format!(
            "infeasible load: {} RF chains for {} links",
            num_aps * cfg.num_rf,
            num_ues * m
        )));
    }
    let gain = |l: usize, k: usize| large_scale_db[l][k];

    // APs per UE, strongest first, ties to the lower AP index
    let ranked: Vec<Vec<usize>> = (0..num_ues)
        .map(|k| {
            let mut aps: Vec<usize> = (0..num_aps).collect();
            aps.sort_by(|&a, &b| gain(b, k).total_cmp(&gain(a, k)).then(a.cmp(&b)));
            aps
        })
        .collect();

    let mut serving: Vec<Vec<usize>> = ranked.iter().map(|r| r[..m].to_vec()).collect();
    let mut served: Vec<Vec<usize>> = vec![Vec::new(); num_aps];
    for (k, aps) in serving.iter().enumerate() {
        for &l in aps {
            served[l].push(k);
        }
    }

    // Evicted UEs only move to non-full APs, so one pass in AP order suffices.
    for l in 0..num_aps {
        if served[l].len() <= cfg.num_rf {
            continue;
        }
        let mut ues = std::mem::take(&mut served[l]);
        ues.sort_by(|&a, &b| gain(l, b).total_cmp(&gain(l, a)).then(a.cmp(&b)));
        let evicted = ues.split_off(cfg.num_rf);
        served[l] = ues;
        for k in evicted {
            serving[k].retain(|&a| a != l);
            let target = ranked[k]
                .iter()
                .copied()
                .find(|&a| a != l && !serving[k].contains(&a) && served[a].len() < cfg.num_rf);
            let Some(a) = target else {
                return Err(Error::Config(format!(
                    "infeasible load: UE {k} evicted from AP {l} has no AP with a free RF chain"
                )));
            };
            serving[k].push(a);
            served[a].push(k);
        }
    }

    for list in serving.iter_mut().chain(served.iter_mut()) {
        list.sort_unstable();
    }
    Ok(Topology {
        ap_xy: topo.ap_xy.clone(),
        ue_xy: topo.ue_xy.clone(),
        serving_aps: serving,
        served_ues: served,
        large_scale_db: large_scale_db.to_vec(),
    })
}

/// Whether AP `l` transmits to UE `i`.
pub fn serving_mask(topo: &Topology, i: usize, l: usize) -> bool {
    topo.serving_aps[i].binary_search(&l).is_ok()
}
