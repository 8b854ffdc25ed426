//! SINR, rate, sum-rate and MSE of a precoder state.
//!
//! The default per-link convention adds the powers received from each AP
//! separately; the coherent convention adds amplitudes across APs first and
//! exists for reporting only.

use serde::{Deserialize, Serialize};

use crate::numerics::{dot, C64};
use crate::precoder::{EffectiveChannels, PrecoderState};
use crate::topology::SystemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    #[default]
    PerLink,
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub rate_bps_hz: Vec<f64>,
    pub sum_rate: f64,
    pub mode: RateMode,
}

/// What UE `k` receives: `signal[j] = h_kl^H z_kl` for the `j`-th serving AP
/// and the interference from every other UE's precoders.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    pub signal: Vec<C64>,
    /// `sum_{i != k} sum_{l in M_i} |h_kl^H z_il|^2`.
    pub interference: f64,
    /// `sum_{i != k} |sum_{l in M_i} h_kl^H z_il|^2`.
    pub coherent_interference: f64,
}

impl LinkBudget {
    /// Per-link useful power `sum_l |h_kl^H z_kl|^2`.
    pub fn signal_power(&self) -> f64 {
        self.signal.iter().map(|g| g.norm_sqr()).sum()
    }

    /// Total received power (all streams) plus noise.
    pub fn total_power(&self, noise: f64) -> f64 {
        self.signal_power() + self.interference + noise
    }
}

pub fn link_budgets(state: &PrecoderState, eff: &EffectiveChannels) -> Vec<LinkBudget> {
    let num_ues = eff.num_ues();
    (0..num_ues)
        .map(|k| {
            let signal = eff.serving_aps(k)
                .iter()
                .map(|&l| dot(eff.hbar(k, l), state.zvec(k, l, eff)))
                .collect();
            let mut interference = 0.0;
            let mut coherent_interference = 0.0;
            for i in (0..num_ues).filter(|&i| i != k) {
                let mut sum = C64::new(0.0, 0.0);
                for &l in eff.serving_aps(i) {
                    let g = dot(eff.hbar(k, l), state.zvec(i, l, eff));
                    interference += g.norm_sqr();
                    sum += g;
                }
                coherent_interference += sum.norm_sqr();
            }
            LinkBudget {
                signal,
                interference,
                coherent_interference,
            }
        })
        .collect()
}

fn sinr_from_budget(b: &LinkBudget, noise: f64, mode: RateMode) -> f64 {
    match mode {
        RateMode::PerLink => b.signal_power() / (b.interference + noise),
        RateMode::Coherent => {
            let s: C64 = b.signal.iter().sum();
            s.norm_sqr() / (b.coherent_interference + noise)
        }
    }
}

pub fn sinr(k: usize, state: &PrecoderState, eff: &EffectiveChannels, cfg: &SystemConfig, mode: RateMode) -> f64 {
    let b = &link_budgets(state, eff)[k];
    sinr_from_budget(b, cfg.noise_power_w(), mode)
}

pub fn rate_from_sinr(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

pub fn rate(k: usize, state: &PrecoderState, eff: &EffectiveChannels, cfg: &SystemConfig, mode: RateMode) -> f64 {
    rate_from_sinr(sinr(k, state, eff, cfg, mode))
}

pub fn rate_report(state: &PrecoderState, eff: &EffectiveChannels, cfg: &SystemConfig, mode: RateMode) -> RateReport {
    let noise = cfg.noise_power_w();
    let sinr: Vec<f64> = link_budgets(state, eff)
        .iter()
        .map(|b| sinr_from_budget(b, noise, mode))
        .collect();
    let rate_bps_hz: Vec<f64> = sinr.iter().map(|&s| rate_from_sinr(s)).collect();
    RateReport {
        sum_rate: rate_bps_hz.iter().sum(),
        sinr,
        rate_bps_hz,
        mode,
    }
}

pub fn sum_rate(state: &PrecoderState, eff: &EffectiveChannels, cfg: &SystemConfig) -> f64 {
    rate_report(state, eff, cfg, RateMode::PerLink).sum_rate
}

/// Determinant of UE `k`'s per-link MSE matrix for the stored receive
/// coefficients. With a single serving AP this is the scalar MSE; with fresh
/// coefficients it equals `1 / (1 + SINR_k)`.
pub fn mse(k: usize, state: &PrecoderState, eff: &EffectiveChannels, cfg: &SystemConfig) -> f64 {
    let b = &link_budgets(state, eff)[k];
    mse_from_budget(&state.mu[k], b, cfg.noise_power_w())
}

pub(crate) fn mse_from_budget(mu: &[C64], b: &LinkBudget, noise: f64) -> f64 {
    // E = I + U C U^H with U = [mu, g], C = [[A, -1], [-1, 0]];
    // det E = det(I_2 + C U^H U).
    let a = b.total_power(noise);
    let g = &b.signal;
    let mm = dot(mu, mu);
    let mg = dot(mu, g);
    let gm = mg.conj();
    let gg = dot(g, g);
    let one = C64::new(1.0, 0.0);
    let m00 = one + mm * a - gm;
    let m01 = mg * a - gg;
    let m10 = -mm;
    let m11 = one - mg;
    (m00 * m11 - m01 * m10).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precoder::tests::single_link;

    #[test]
    fn rate_examples() {
        assert!((rate_from_sinr(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(rate_from_sinr(0.0), 0.0);
    }

    #[test]
    fn single_link_sinr() {
        let (eff, mut state, cfg) = single_link(2.0, 0.5);
        let noise = cfg.noise_power_w();
        // |h^H z|^2 = 4 * 0.5 = 2
        let want = 2.0 / noise;
        assert!((sinr(0, &state, &eff, &cfg, RateMode::PerLink) / want - 1.0).abs() < 1e-12);
        assert!((sinr(0, &state, &eff, &cfg, RateMode::Coherent) / want - 1.0).abs() < 1e-12);
        state.z[0][0] = vec![C64::new(0.0, 0.0)];
        assert_eq!(sinr(0, &state, &eff, &cfg, RateMode::PerLink), 0.0);
        assert_eq!(mse(0, &state, &eff, &cfg), 1.0);
    }
}
