use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::numerics::KappaMode;
use crate::precoder::GramScope;
use crate::{Error, Result};

/// How the precoder applies `Z^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMode {
    /// Closed-form eigenbasis inverse.
    #[default]
    Exact,
    /// Neumann series truncated after this many correction terms.
    Nse(usize),
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverMode::Exact => f.write_str("exact"),
            SolverMode::Nse(t) => write!(f, "nse{t}"),
        }
    }
}

impl Serialize for SolverMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SolverMode::Exact => s.serialize_str("exact"),
            SolverMode::Nse(t) => s.serialize_u64(*t as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SolverMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Order(usize),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Order(t) => Ok(SolverMode::Nse(t)),
            Repr::Name(s) if s == "exact" => Ok(SolverMode::Exact),
            Repr::Name(s) => Err(serde::de::Error::custom(format!(
                "nse_order must be a nonnegative integer or \"exact\", got {s:?}"
            ))),
        }
    }
}

/// Scenario parameters. JSON keys follow the usual symbols (`L`, `K`, `N`,
/// `N_RF`, `P_max`, ...); missing keys take the defaults below and unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of access points.
    #[serde(rename = "L")]
    pub num_aps: usize,
    /// Number of single-antenna users.
    #[serde(rename = "K")]
    pub num_ues: usize,
    /// Antennas per AP.
    #[serde(rename = "N")]
    pub num_antennas: usize,
    /// RF chains (selected beams) per AP.
    #[serde(rename = "N_RF")]
    pub num_rf: usize,
    /// Per-AP transmit power budget, watts.
    #[serde(rename = "P_max")]
    pub p_max: f64,
    pub noise_dbm: f64,
    /// Side of the square deployment area, meters.
    pub area_m: f64,
    /// APs per user cluster.
    pub cluster_size: usize,
    /// Out-of-cluster to in-cluster beam energy ratio that triggers reassignment.
    pub gamma_th: f64,
    pub carrier_hz: f64,
    pub pl_exponent: f64,
    pub pl_b: f64,
    pub pl_f0_hz: f64,
    /// Variance of the log-normal shadowing term, dB^2.
    pub shadow_var_db2: f64,
    pub nlos_paths: usize,
    /// Mean NLoS path power relative to the LoS path, dB.
    pub nlos_power_offset_db: f64,
    pub nse_order: SolverMode,
    pub max_iters: usize,
    /// Relative sum-rate change that ends the WSMSE loop.
    pub conv_tol: f64,
    pub rng_seed: u64,
    /// Smallest-eigenvalue convention for the Neumann scaling factor.
    pub kappa_mode: KappaMode,
    /// UEs included in each AP's Gram matrix.
    pub gram_scope: GramScope,
    /// Relative power tolerance of the multiplier bisection.
    pub bisection_tol: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_aps: 32,
            num_ues: 8,
            num_antennas: 16,
            num_rf: 8,
            p_max: 1.0,
            noise_dbm: -85.0,
            area_m: 250.0,
            cluster_size: 4,
            gamma_th: 0.5,
            carrier_hz: 28e9,
            pl_exponent: 3.19,
            pl_b: 0.0,
            pl_f0_hz: 2e9,
            shadow_var_db2: 4.2,
            nlos_paths: 3,
            nlos_power_offset_db: -10.0,
            nse_order: SolverMode::Exact,
            max_iters: 50,
            conv_tol: 1e-4,
            rng_seed: 1,
            kappa_mode: KappaMode::Range,
            gram_scope: GramScope::All,
            bisection_tol: 1e-8,
        }
    }
}

impl SystemConfig {
    /// Noise power in watts.
    pub fn noise_power_w(&self) -> f64 {
        10f64.powf((self.noise_dbm - 30.0) / 10.0)
    }

    /// Cluster size clipped to the number of APs.
    pub fn effective_cluster_size(&self) -> usize {
        self.cluster_size.min(self.num_aps)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_aps == 0 {
            return fail("L must be at least 1".into());
        }
        if self.num_ues == 0 {
            return fail("K must be at least 1".into());
        }
        if self.num_rf == 0 || self.num_rf > self.num_antennas {
            return fail(format!(
                "N_RF must satisfy 1 <= N_RF <= N (N_RF = {}, N = {})",
                self.num_rf, self.num_antennas
            ));
        }
        if self.cluster_size == 0 || self.cluster_size > self.num_aps {
            return fail(format!(
                "cluster_size must satisfy 1 <= M <= L (M = {}, L = {})",
                self.cluster_size, self.num_aps
            ));
        }
        if self.num_aps * self.num_rf < self.num_ues * self.effective_cluster_size() {
            return fail(format!(
                "infeasible load: L*N_RF = {} RF chains cannot host K*M = {} links",
                self.num_aps * self.num_rf,
                self.num_ues * self.effective_cluster_size()
            ));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return fail(format!("P_max must be positive, got {}", self.p_max));
        }
        if !(self.conv_tol > 0.0) {
            return fail(format!("conv_tol must be positive, got {}", self.conv_tol));
        }
        if !(self.gamma_th > 0.0) {
            return fail(format!("gamma_th must be positive, got {}", self.gamma_th));
        }
        if !(self.bisection_tol > 0.0 && self.bisection_tol < 1.0) {
            return fail(format!(
                "bisection_tol must lie in (0, 1), got {}",
                self.bisection_tol
            ));
        }
        if !(self.area_m >= 0.0 && self.area_m.is_finite()) {
            return fail(format!("area_m must be nonnegative, got {}", self.area_m));
        }
        for (name, v) in [
            ("noise_dbm", self.noise_dbm),
            ("carrier_hz", self.carrier_hz),
            ("pl_exponent", self.pl_exponent),
            ("pl_b", self.pl_b),
            ("pl_f0_hz", self.pl_f0_hz),
            ("nlos_power_offset_db", self.nlos_power_offset_db),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite, got {v}"));
            }
        }
        if !(self.carrier_hz > 0.0 && self.pl_f0_hz > 0.0) {
            return fail("carrier_hz and pl_f0_hz must be positive".into());
        }
        if !(self.shadow_var_db2 >= 0.0 && self.shadow_var_db2.is_finite()) {
            return fail(format!(
                "shadow_var_db2 must be nonnegative, got {}",
                self.shadow_var_db2
            ));
        }
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SystemConfig::default().validate().unwrap();
    }

    #[test]
    fn noise_conversion() {
        let cfg = SystemConfig {
            noise_dbm: 30.0,
            ..Default::default()
        };
        assert!((cfg.noise_power_w() - 1.0).abs() < 1e-15);
        let cfg = SystemConfig::default();
        assert!((cfg.noise_power_w() - 10f64.powf(-11.5)).abs() < 1e-25);
    }

    #[test]
    fn json_uses_symbol_keys_and_rejects_unknown() {
        let cfg = SystemConfig::from_json_str(r#"{"L": 4, "K": 2, "N_RF": 2, "nse_order": 7}"#)
            .unwrap();
        assert_eq!(cfg.num_aps, 4);
        assert_eq!(cfg.num_ues, 2);
        assert_eq!(cfg.nse_order, SolverMode::Nse(7));
        assert_eq!(cfg.num_antennas, 16);

        let err = SystemConfig::from_json_str(r#"{"L": 4, "bogus": 1}"#).unwrap_err();
        assert!(err.is_config());
        let err = SystemConfig::from_json_str(r#"{"nse_order": "fast"}"#).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = SystemConfig {
            nse_order: SolverMode::Nse(3),
            kappa_mode: KappaMode::Tight,
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"N_RF\":8"));
        assert_eq!(SystemConfig::from_json_str(&text).unwrap(), cfg);
    }

    #[test]
    fn invariant_violations() {
        let bad = [
            SystemConfig { num_rf: 0, ..Default::default() },
            SystemConfig { num_rf: 17, ..Default::default() },
            SystemConfig { cluster_size: 0, ..Default::default() },
            SystemConfig { cluster_size: 33, ..Default::default() },
            SystemConfig { num_ues: 0, ..Default::default() },
            SystemConfig { p_max: 0.0, ..Default::default() },
            SystemConfig { conv_tol: 0.0, ..Default::default() },
            SystemConfig { gamma_th: -1.0, ..Default::default() },
            SystemConfig { num_aps: 1, cluster_size: 1, num_rf: 2, num_ues: 3, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().unwrap_err().is_config(), "{cfg:?}");
        }
        // An infinite threshold disables refinement and stays valid.
        SystemConfig { gamma_th: f64::INFINITY, ..Default::default() }
            .validate()
            .unwrap();
    }
}
