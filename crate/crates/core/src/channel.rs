//! Multipath mmWave channels on a half-wavelength ULA and their DFT
//! beamspace representation.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::{norm_sqr, CMatrix, C64};
use crate::topology::{SystemConfig, Topology};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Distances below this are clamped before taking the log.
pub const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub gain: C64,
    /// Normalized spatial direction in `[-0.5, 0.5]`.
    pub spatial_dir: f64,
}

/// Channels of every AP-UE pair. Index with `(k, l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    num_aps: usize,
    num_ues: usize,
    num_antennas: usize,
    antenna_domain: Vec<Vec<C64>>,
    beamspace: Vec<Vec<C64>>,
    /// Path 0 is the LoS path.
    paths: Vec<Vec<PathParams>>,
}

impl ChannelSet {
    /// Builds a channel set from antenna-domain vectors laid out as
    /// `h[l][k]`; the beamspace is derived.
    pub fn from_antenna_domain(h: Vec<Vec<Vec<C64>>>) -> Self {
        let num_aps = h.len();
        let num_ues = h.first().map_or(0, Vec::len);
        let num_antennas = h.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let dft = dft_matrix(num_antennas);
        let mut antenna_domain = Vec::with_capacity(num_aps * num_ues);
        let mut beamspace = Vec::with_capacity(num_aps * num_ues);
        for row in h {
            assert_eq!(row.len(), num_ues, "ragged channel array");
            for v in row {
                assert_eq!(v.len(), num_antennas, "ragged channel array");
                beamspace.push(dft.matvec(&v));
                antenna_domain.push(v);
            }
        }
        Self {
            num_aps,
            num_ues,
            num_antennas,
            antenna_domain,
            beamspace,
            paths: vec![Vec::new(); num_aps * num_ues],
        }
    }

    /// Builds a channel set directly from beamspace vectors `hb[l][k]`,
    /// which are stored as given; the antenna domain is derived.
    pub fn from_beamspace(hb: Vec<Vec<Vec<C64>>>) -> Self {
        let n = hb.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let inverse = dft_matrix(n).adjoint();
        let h = hb
            .iter()
            .map(|row| row.iter().map(|v| inverse.matvec(v)).collect())
            .collect();
        let mut out = Self::from_antenna_domain(h);
        out.beamspace = hb.into_iter().flatten().collect();
        out
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    #[inline]
    fn idx(&self, k: usize, l: usize) -> usize {
        debug_assert!(k < self.num_ues && l < self.num_aps);
        l * self.num_ues + k
    }

    pub fn antenna(&self, k: usize, l: usize) -> &[C64] {
        &self.antenna_domain[self.idx(k, l)]
    }

    pub fn beamspace(&self, k: usize, l: usize) -> &[C64] {
        &self.beamspace[self.idx(k, l)]
    }

    pub fn paths(&self, k: usize, l: usize) -> &[PathParams] {
        &self.paths[self.idx(k, l)]
    }

    /// `|h_kl|^2`.
    pub fn gain(&self, k: usize, l: usize) -> f64 {
        norm_sqr(self.antenna(k, l))
    }
}

/// `a(theta)` for an `n`-element ULA, elements indexed symmetrically about the center.
pub fn steering_vector(theta: f64, n: usize) -> Vec<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    let center = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| C64::from_polar(scale, -2.0 * PI * theta * (i as f64 - center)))
        .collect()
}

/// Critically sampled spatial grid `(n - (N+1)/2) / N`, `n = 1..N`.
pub fn dft_grid(n: usize) -> Vec<f64> {
    let nf = n as f64;
    (1..=n).map(|i| (i as f64 - (nf + 1.0) / 2.0) / nf).collect()
}

/// Unitary beamspace operator whose row `n` is `a(grid[n])^H`.
pub fn dft_matrix(n: usize) -> CMatrix {
    let cols: Vec<Vec<C64>> = dft_grid(n).into_iter().map(|t| steering_vector(t, n)).collect();
    CMatrix::from_columns(n, &cols).adjoint()
}

pub fn beamspace_transform(h: &[C64]) -> Vec<C64> {
    dft_matrix(h.len()).matvec(h)
}

/// Path gain in dB at distance `d_m`; `shadow_db` is subtracted as drawn.
pub fn path_loss_db(d_m: f64, cfg: &SystemConfig, shadow_db: f64) -> f64 {
    let d = d_m.max(MIN_DISTANCE_M);
    let f = cfg.carrier_hz;
    -20.0 * (4.0 * PI * f / SPEED_OF_LIGHT).log10()
        - 10.0 * cfg.pl_exponent * (1.0 + cfg.pl_b * f / cfg.pl_f0_hz) * d.log10()
        - shadow_db
}

/// Circularly symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Draws LoS plus `P` NLoS paths for every pair, reusing the path gains
/// stored in `topo.large_scale_db`.
pub fn generate_channels<R: Rng + ?Sized>(
    topo: &Topology,
    cfg: &SystemConfig,
    rng: &mut R,
) -> ChannelSet {
    let n = cfg.num_antennas;
    let (num_aps, num_ues) = (topo.num_aps(), topo.num_ues());
    let nlos_scale = 10f64.powf(cfg.nlos_power_offset_db / 10.0);
    let dft = dft_matrix(n);
    let mut antenna_domain = Vec::with_capacity(num_aps * num_ues);
    let mut beamspace = Vec::with_capacity(num_aps * num_ues);
    let mut paths = Vec::with_capacity(num_aps * num_ues);

    for l in 0..num_aps {
        for k in 0..num_ues {
            let pl = 10f64.powf(topo.large_scale_db[l][k] / 10.0);
            let mut p = Vec::with_capacity(cfg.nlos_paths + 1);
            p.push(PathParams {
                gain: complex_gaussian(rng, 1.0) * pl.sqrt(),
                spatial_dir: 0.5 * topo.bearing(k, l).sin(),
            });
            for _ in 0..cfg.nlos_paths {
                let spatial_dir = rng.random_range(-0.5..=0.5);
                p.push(PathParams {
                    gain: complex_gaussian(rng, pl * nlos_scale),
                    spatial_dir,
                });
            }
            let mut h = vec![C64::new(0.0, 0.0); n];
            for path in &p {
                for (hi, ai) in h.iter_mut().zip(steering_vector(path.spatial_dir, n)) {
                    *hi += path.gain * ai;
                }
            }
            beamspace.push(dft.matvec(&h));
            antenna_domain.push(h);
            paths.push(p);
        }
    }
    ChannelSet {
        num_aps,
        num_ues,
        num_antennas: n,
        antenna_domain,
        beamspace,
        paths,
    }
}
