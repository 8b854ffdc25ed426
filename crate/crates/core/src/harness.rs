//! Monte-Carlo experiment driver.
//!
//! Every drop draws its own topology and channels from `seed ^ drop`, so
//! rows do not depend on how drops are scheduled across threads. Within one
//! drop the same scenario is reused for every scheme, which makes scheme
//! comparisons paired.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamselect::{select_beams, BeamAssignment};
use crate::channel::generate_channels;
use crate::error::{Error, Result};
use crate::metrics::{rate_report, RateMode, RateReport};
use crate::precoder::{effective_channels, run_wsmse, zf_baseline, IterationRecord};
use crate::topology::{form_clusters, generate_drop, large_scale_gains, SolverMode, SystemConfig, Topology};
use crate::{rng_from_seed, SimRng};

/// Beam selection plus precoder combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Two-stage beam selection with the WSMSE precoder.
    Proposed,
    /// Intra-cluster beam selection only, WSMSE precoder.
    IabsOnly,
    /// Two-stage beam selection with per-AP zero forcing.
    ProposedZf,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Proposed, Scheme::IabsOnly, Scheme::ProposedZf];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::IabsOnly => "iabs_only",
            Scheme::ProposedZf => "proposed_zf",
        }
    }

    fn refines(self) -> bool {
        !matches!(self, Scheme::IabsOnly)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// Config field varied by a custom sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PMax,
    NumAntennas,
    NumRf,
    NumUes,
    GammaTh,
    ClusterSize,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PMax => "p_max",
            SweepParam::NumAntennas => "num_antennas",
            SweepParam::NumRf => "num_rf",
            SweepParam::NumUes => "num_ues",
            SweepParam::GammaTh => "gamma_th",
            SweepParam::ClusterSize => "cluster_size",
        }
    }

    fn apply(self, cfg: &mut SystemConfig, v: f64) -> Result<()> {
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("sweep value {v} is not a positive integer")))
            }
        };
        match self {
            SweepParam::PMax => cfg.p_max = v,
            SweepParam::NumAntennas => cfg.num_antennas = count(v)?,
            SweepParam::NumRf => cfg.num_rf = count(v)?,
            SweepParam::NumUes => cfg.num_ues = count(v)?,
            SweepParam::GammaTh => cfg.gamma_th = v,
            SweepParam::ClusterSize => cfg.cluster_size = count(v)?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Sum-rate per iteration for each NSE order and for the exact solver.
    Convergence,
    /// Sweep over `P_max` in watts.
    PowerSweep,
    /// Sweep over the antenna count `N`.
    AntennaSweep,
    Custom(SweepParam),
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentKind::Convergence => f.write_str("convergence"),
            ExperimentKind::PowerSweep => f.write_str("power_sweep"),
            ExperimentKind::AntennaSweep => f.write_str("antenna_sweep"),
            ExperimentKind::Custom(p) => write!(f, "custom:{}", p.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub config: SystemConfig,
    /// Swept values. Ignored by the convergence kind, which sweeps over
    /// `nse_orders` followed by the exact solver.
    pub sweep: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub nse_orders: Vec<usize>,
    pub drops: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Default sweep values and schemes for `kind`.
    pub fn preset(kind: ExperimentKind, config: SystemConfig, drops: usize, seed: u64) -> Self {
        let (sweep, schemes) = match kind {
            ExperimentKind::Convergence => (Vec::new(), vec![Scheme::Proposed]),
            ExperimentKind::PowerSweep => (vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0], Scheme::ALL.to_vec()),
            ExperimentKind::AntennaSweep => (vec![16.0, 32.0, 64.0], Scheme::ALL.to_vec()),
            ExperimentKind::Custom(_) => (Vec::new(), Scheme::ALL.to_vec()),
        };
        Self {
            kind,
            config,
            sweep,
            schemes,
            nse_orders: vec![1, 3, 5, 7],
            drops,
            seed,
        }
    }

    /// The values rows are keyed by; `inf` stands for the exact solver in
    /// convergence runs.
    pub fn sweep_values(&self) -> Vec<f64> {
        match self.kind {
            ExperimentKind::Convergence => self
                .nse_orders
                .iter()
                .map(|&t| t as f64)
                .chain(std::iter::once(f64::INFINITY))
                .collect(),
            _ => self.sweep.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.drops == 0 {
            return fail("drops must be at least 1".into());
        }
        if self.schemes.is_empty() {
            return fail("at least one scheme is required".into());
        }
        let values = self.sweep_values();
        if values.is_empty() {
            return fail("sweep values must not be empty".into());
        }
        if values.iter().any(|v| v.is_nan()) || values.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("sweep values must be strictly increasing, got {values:?}"));
        }
        for &v in &values {
            self.config_at(v)?;
        }
        Ok(())
    }

    /// Base config with the sweep value applied, validated.
    fn config_at(&self, v: f64) -> Result<SystemConfig> {
        let mut cfg = self.config.clone();
        match self.kind {
            ExperimentKind::Convergence => {}
            ExperimentKind::PowerSweep => SweepParam::PMax.apply(&mut cfg, v)?,
            ExperimentKind::AntennaSweep => SweepParam::NumAntennas.apply(&mut cfg, v)?,
            ExperimentKind::Custom(p) => p.apply(&mut cfg, v)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn mode_at(&self, v: f64) -> SolverMode {
        match self.kind {
            ExperimentKind::Convergence if v.is_infinite() => SolverMode::Exact,
            ExperimentKind::Convergence => SolverMode::Nse(v as usize),
            _ => self.config.nse_order,
        }
    }
}

/// Everything a single drop produced besides the rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropTrace {
    pub topology: Topology,
    pub assignment: BeamAssignment,
    /// Empty for zero forcing.
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub flops: u64,
}

/// Draws a scenario from `rng` and runs beam selection, precoding and rate
/// evaluation for one scheme.
pub fn run_drop(
    cfg: &SystemConfig,
    scheme: Scheme,
    mode: SolverMode,
    rng: &mut SimRng,
) -> Result<(RateReport, DropTrace)> {
    cfg.validate()?;
    let topo = generate_drop(cfg, rng);
    let ls = large_scale_gains(&topo, cfg, rng);
    let topo = form_clusters(&topo, &ls, cfg)?;
    let ch = generate_channels(&topo, cfg, rng);
    run_scheme(cfg, scheme, mode, &topo, &ch)
}

fn run_scheme(
    cfg: &SystemConfig,
    scheme: Scheme,
    mode: SolverMode,
    topo: &Topology,
    ch: &crate::channel::ChannelSet,
) -> Result<(RateReport, DropTrace)> {
    let assignment = select_beams(ch, topo, cfg, scheme.refines())?;
    let eff = effective_channels(ch, &assignment, topo)?;
    let state = match scheme {
        Scheme::ProposedZf => zf_baseline(&eff, cfg)?,
        Scheme::Proposed | Scheme::IabsOnly => run_wsmse(&eff, cfg, mode)?,
    };
    let report = rate_report(&state, &eff, cfg, RateMode::PerLink);
    let trace = DropTrace {
        topology: topo.clone(),
        assignment,
        history: state.history,
        iterations: state.iterations,
        flops: state.flops.complex_multiplies,
    };
    Ok((report, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    #[serde(with = "sweep_value")]
    pub sweep: f64,
    pub drop: usize,
    pub iter: Option<usize>,
    pub sum_rate: f64,
    pub rates: Vec<f64>,
    /// Complex multiplies spent in precoder solves, cumulative up to `iter`.
    pub flops: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub kind: ExperimentKind,
    pub config: SystemConfig,
    pub seed: u64,
    pub drops: usize,
    pub schemes: Vec<Scheme>,
    pub sweep: Vec<SweepLabel>,
    pub version: String,
}

/// A sweep value that survives JSON even when infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SweepLabel(#[serde(with = "sweep_value")] pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub metadata: RunMetadata,
    pub rows: Vec<ResultRow>,
}

impl SimResult {
    /// Final-iteration rows of `scheme` at sweep value `sweep`, in drop order.
    pub fn final_rows(&self, scheme: Scheme, sweep: f64) -> Vec<&ResultRow> {
        let mut out: Vec<&ResultRow> = Vec::new();
        for row in self.rows.iter().filter(|r| r.scheme == scheme && r.sweep == sweep) {
            match out.last_mut() {
                Some(last) if last.drop == row.drop => *last = row,
                _ => out.push(row),
            }
        }
        out
    }

    pub fn mean_sum_rate(&self, scheme: Scheme, sweep: f64) -> Option<f64> {
        let rows = self.final_rows(scheme, sweep);
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|r| r.sum_rate).sum::<f64>() / rows.len() as f64)
    }
}

fn rows_for_drop(spec: &ExperimentSpec, drop: usize) -> Result<Vec<ResultRow>> {
    let convergence = spec.kind == ExperimentKind::Convergence;
    let mut rows = Vec::new();
    for v in spec.sweep_values() {
        let mut cfg = spec.config_at(v)?;
        if convergence {
            // every order runs the full iteration budget
            cfg.conv_tol = 0.0;
        }
        let mode = spec.mode_at(v);
        let mut rng = rng_from_seed(spec.seed ^ drop as u64);
        let topo = generate_drop(&cfg, &mut rng);
        let ls = large_scale_gains(&topo, &cfg, &mut rng);
        let topo = form_clusters(&topo, &ls, &cfg)?;
        let ch = generate_channels(&topo, &cfg, &mut rng);
        for &scheme in &spec.schemes {
            let start = Instant::now();
            let (report, trace) = run_scheme(&cfg, scheme, mode, &topo, &ch)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            if convergence && !trace.history.is_empty() {
                rows.extend(trace.history.iter().map(|h| ResultRow {
                    scheme,
                    sweep: v,
                    drop,
                    iter: Some(h.iteration),
                    sum_rate: h.sum_rate,
                    rates: h.rates.clone(),
                    flops: h.flops,
                    wall_ms,
                }));
            } else {
                rows.push(ResultRow {
                    scheme,
                    sweep: v,
                    drop,
                    iter: convergence.then_some(0),
                    sum_rate: report.sum_rate,
                    rates: report.rate_bps_hz,
                    flops: trace.flops,
                    wall_ms,
                });
            }
        }
    }
    Ok(rows)
}

/// Runs every drop in parallel. Rows are ordered by sweep value, scheme
/// (in `schemes` order), drop and iteration.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<SimResult> {
    spec.validate()?;
    let per_drop: Vec<Vec<ResultRow>> = (0..spec.drops)
        .into_par_iter()
        .map(|d| rows_for_drop(spec, d))
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = per_drop.into_iter().flatten().collect();
    let values = spec.sweep_values();
    let key = |r: &ResultRow| {
        (
            values.iter().position(|&v| v == r.sweep),
            spec.schemes.iter().position(|&s| s == r.scheme),
            r.drop,
            r.iter,
        )
    };
    rows.sort_by_key(key);
    Ok(SimResult {
        metadata: RunMetadata {
            kind: spec.kind,
            config: spec.config.clone(),
            seed: spec.seed,
            drops: spec.drops,
            schemes: spec.schemes.clone(),
            sweep: values.into_iter().map(SweepLabel).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::Config(format!("unknown output format {s:?}"))),
        }
    }
}

pub const CSV_HEADER: [&str; 7] = ["scheme", "sweep", "drop", "iter", "sum_rate", "flops", "wall_ms"];

/// `inf` for the exact solver, shortest round-trip decimal otherwise.
pub fn format_sweep(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

pub fn write_csv<W: Write>(result: &SimResult, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &result.rows {
        w.write_record([
            r.scheme.name().to_string(),
            format_sweep(r.sweep),
            r.drop.to_string(),
            r.iter.map(|i| i.to_string()).unwrap_or_default(),
            r.sum_rate.to_string(),
            r.flops.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results(result: &SimResult, path: &Path, format: OutputFormat) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    match format {
        OutputFormat::Csv => write_csv(result, &mut out).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?,
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, result).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            out.write_all(b"\n").map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// Serializes `+inf` as the string `"inf"` so it survives JSON.
mod sweep_value {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad sweep value {t:?}"))),
        }
    }
}
