//! Distributed weighted sum-MSE precoding over the selected beams.
//!
//! Each UE decodes one stream per serving AP, so it keeps one receive
//! coefficient per serving link. One outer iteration updates the receive
//! coefficients, then the MSE weights, then every AP's precoders from its
//! own effective channels and the broadcast scalars. The per-AP step solves
//! `(H + lambda I) z = rhs` with the multiplier found by bisection, either
//! exactly in the eigenbasis of `H` or with a truncated Neumann series.

use serde::{Deserialize, Serialize};

use crate::beamselect::BeamAssignment;
use crate::channel::ChannelSet;
use crate::metrics::{self, link_budgets, LinkBudget};
use crate::numerics::{
    dot, effective_rank, hermitian_eig, invert, norm_sqr, nse_beta, nse_solve, project_onto_basis,
    range_inverse, CMatrix, FlopCounter, HermitianEig, KappaMode, LowRankOperator, C64, DEFAULT_RANK_TOL,
};
use crate::topology::{SolverMode, SystemConfig, Topology};
use crate::{Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);
/// Relative slack on the per-AP power budget.
pub const POWER_SLACK: f64 = 1e-9;
const MAX_BISECTIONS: usize = 400;

/// Selected-beam channels `h_kl` of every AP toward every UE, with the
/// serving structure they are used under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveChannels {
    num_rf: usize,
    num_ues: usize,
    serving_aps: Vec<Vec<usize>>,
    served_ues: Vec<Vec<usize>>,
    /// `active_rows[l][r]`: RF chain `r` of AP `l` carries a UE.
    active_rows: Vec<Vec<bool>>,
    /// Flat `l * K + k`.
    hbar: Vec<Vec<C64>>,
}

impl EffectiveChannels {
    /// `hbar[l][k]` must all have `num_rf` entries; `serving_aps[k]` lists
    /// the APs serving UE `k`.
    pub fn new(
        serving_aps: Vec<Vec<usize>>,
        hbar: Vec<Vec<Vec<C64>>>,
        active_rows: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let num_aps = hbar.len();
        let num_ues = serving_aps.len();
        let num_rf = active_rows.first().map_or(0, Vec::len);
        if active_rows.len() != num_aps
            || active_rows.iter().any(|r| r.len() != num_rf)
            || hbar.iter().any(|row| row.len() != num_ues || row.iter().any(|v| v.len() != num_rf))
        {
            return Err(Error::Config("effective channel dimensions disagree".into()));
        }
        let mut served_ues = vec![Vec::new(); num_aps];
        let mut serving = serving_aps;
        for (k, aps) in serving.iter_mut().enumerate() {
            aps.sort_unstable();
            aps.dedup();
            for &l in aps.iter() {
                if l >= num_aps {
                    return Err(Error::Config(format!("UE {k} served by missing AP {l}")));
                }
                served_ues[l].push(k);
            }
        }
        Ok(Self {
            num_rf,
            num_ues,
            serving_aps: serving,
            served_ues,
            active_rows,
            hbar: hbar.into_iter().flatten().collect(),
        })
    }

    pub fn num_rf(&self) -> usize {
        self.num_rf
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_aps(&self) -> usize {
        self.served_ues.len()
    }

    pub fn serving_aps(&self, k: usize) -> &[usize] {
        &self.serving_aps[k]
    }

    pub fn served_ues(&self, l: usize) -> &[usize] {
        &self.served_ues[l]
    }

    pub fn active_rows(&self, l: usize) -> &[bool] {
        &self.active_rows[l]
    }

    pub fn hbar(&self, k: usize, l: usize) -> &[C64] {
        &self.hbar[l * self.num_ues + k]
    }

    /// `h_kl` with the rows of UE-less RF chains zeroed.
    pub fn masked_hbar(&self, k: usize, l: usize) -> Vec<C64> {
        self.hbar(k, l)
            .iter()
            .zip(&self.active_rows[l])
            .map(|(&h, &on)| if on { h } else { ZERO })
            .collect()
    }

    fn serving_index(&self, k: usize, l: usize) -> Option<usize> {
        self.serving_aps[k].binary_search(&l).ok()
    }

    fn served_index(&self, l: usize, k: usize) -> Option<usize> {
        self.served_ues[l].binary_search(&k).ok()
    }
}

/// Row `r` of `h_kl` is the beamspace entry on the beam of RF chain `r`.
pub fn effective_channels(
    ch: &ChannelSet,
    assign: &BeamAssignment,
    topo: &Topology,
) -> Result<EffectiveChannels> {
    let num_rf = assign.num_rf;
    let mut hbar = Vec::with_capacity(topo.num_aps());
    let mut active = Vec::with_capacity(topo.num_aps());
    for (l, ap) in assign.aps.iter().enumerate() {
        let rows = ap.rows();
        if rows.len() != num_rf {
            return Err(Error::Internal(format!(
                "AP {l} has {} RF rows, expected {num_rf}",
                rows.len()
            )));
        }
        hbar.push(
            (0..topo.num_ues())
                .map(|k| {
                    let hb = ch.beamspace(k, l);
                    rows.iter().map(|r| hb[r.beam]).collect()
                })
                .collect(),
        );
        active.push(rows.iter().map(|r| r.ue.is_some()).collect());
    }
    EffectiveChannels::new(topo.serving_aps.clone(), hbar, active)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub sum_rate: f64,
    /// Per-UE rates in bit/s/Hz.
    pub rates: Vec<f64>,
    pub lambda: Vec<f64>,
    pub ap_power: Vec<f64>,
    /// Cumulative complex multiplies spent in precoder solves.
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecoderState {
    /// `z[l][j]` is the precoder of the `j`-th UE served by AP `l`.
    pub z: Vec<Vec<Vec<C64>>>,
    /// `mu[k][j]` is UE `k`'s receive coefficient for its `j`-th serving AP.
    pub mu: Vec<Vec<C64>>,
    pub alpha: Vec<f64>,
    /// Unit direction of the rank-one part of UE `k`'s MSE weight
    /// `I + (alpha - 1) d d^H`.
    pub weight_dir: Vec<Vec<C64>>,
    pub lambda: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub flops: FlopCounter,
}

impl PrecoderState {
    /// Zero precoders, `mu = 0`, `alpha = 1`.
    pub fn zeros(eff: &EffectiveChannels) -> Self {
        let z = (0..eff.num_aps())
            .map(|l| vec![vec![ZERO; eff.num_rf()]; eff.served_ues(l).len()])
            .collect();
        let mu: Vec<Vec<C64>> = (0..eff.num_ues())
            .map(|k| vec![ZERO; eff.serving_aps(k).len()])
            .collect();
        Self {
            z,
            weight_dir: mu.clone(),
            mu,
            alpha: vec![1.0; eff.num_ues()],
            lambda: vec![0.0; eff.num_aps()],
            history: Vec::new(),
            iterations: 0,
            flops: FlopCounter::default(),
        }
    }

    /// `z_kl`; panics unless AP `l` serves UE `k`.
    pub fn zvec(&self, k: usize, l: usize, eff: &EffectiveChannels) -> &[C64] {
        let j = eff
            .served_index(l, k)
            .unwrap_or_else(|| panic!("AP {l} does not serve UE {k}"));
        &self.z[l][j]
    }

    /// `sum_k |z_kl|^2` per AP.
    pub fn ap_power(&self) -> Vec<f64> {
        self.z.iter().map(|zs| zs.iter().map(|z| norm_sqr(z)).sum()).collect()
    }

    pub fn objective_history(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.objective).collect()
    }

    pub fn sum_rate_history(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.sum_rate).collect()
    }
}

/// Matched filter at full power on every AP.
pub fn init_precoders(eff: &EffectiveChannels, cfg: &SystemConfig) -> PrecoderState {
    let mut state = PrecoderState::zeros(eff);
    for l in 0..eff.num_aps() {
        let dirs: Vec<Vec<C64>> = eff.served_ues(l).iter().map(|&k| eff.masked_hbar(k, l)).collect();
        let total: f64 = dirs.iter().map(|d| norm_sqr(d)).sum();
        if total == 0.0 {
            continue;
        }
        let c = (cfg.p_max / total).sqrt();
        state.z[l] = dirs.into_iter().map(|d| d.iter().map(|x| x * c).collect()).collect();
    }
    state
}

/// Fresh receive coefficients `mu_kl = h_kl^H z_kl / (received power + noise)`.
pub fn update_mu(state: &PrecoderState, eff: &EffectiveChannels, cfg: &SystemConfig) -> Vec<Vec<C64>> {
    let noise = cfg.noise_power_w();
    link_budgets(state, eff)
        .iter()
        .map(|b| {
            let a = b.total_power(noise);
            b.signal.iter().map(|g| g / a).collect()
        })
        .collect()
}

/// MSE weights `alpha_k = 1 + signal / (interference + noise)` and the
/// direction of the current receive coefficients.
pub fn update_alpha(
    state: &PrecoderState,
    eff: &EffectiveChannels,
    cfg: &SystemConfig,
) -> (Vec<f64>, Vec<Vec<C64>>) {
    let noise = cfg.noise_power_w();
    let alpha = link_budgets(state, eff)
        .iter()
        .map(|b| 1.0 + b.signal_power() / (b.interference + noise))
        .collect();
    let dirs = state
        .mu
        .iter()
        .map(|mu| {
            let n = norm_sqr(mu).sqrt();
            if n > 0.0 {
                mu.iter().map(|x| x / n).collect()
            } else {
                vec![ZERO; mu.len()]
            }
        })
        .collect();
    (alpha, dirs)
}

/// `(mu^H W mu, W mu)` for `W = I + (alpha - 1) d d^H`.
fn weighted_mu(mu: &[C64], alpha: f64, dir: &[C64]) -> (f64, Vec<C64>) {
    let proj = dot(dir, mu);
    let omega = norm_sqr(mu) + (alpha - 1.0) * proj.norm_sqr();
    let rho = mu
        .iter()
        .zip(dir)
        .map(|(m, d)| m + d * (proj * (alpha - 1.0)))
        .collect();
    (omega, rho)
}

fn ue_objective(mu: &[C64], alpha: f64, dir: &[C64], b: &LinkBudget, noise: f64) -> f64 {
    let a = b.total_power(noise);
    let g = &b.signal;
    let m = mu.len() as f64;
    let trace = a * norm_sqr(mu) - 2.0 * dot(g, mu).re + m;
    let dm = dot(dir, mu);
    let gd = dot(g, dir);
    let quad = a * dm.norm_sqr() - 2.0 * (dm * gd).re + 1.0;
    trace + (alpha - 1.0) * quad - (m - 1.0) - alpha.ln()
}

/// `sum_k tr(W_k E_k) - ln det W_k`, offset so that a UE with a single
/// serving AP contributes `alpha E - ln alpha`.
pub fn wsmse_objective(state: &PrecoderState, eff: &EffectiveChannels, cfg: &SystemConfig) -> f64 {
    let noise = cfg.noise_power_w();
    link_budgets(state, eff)
        .iter()
        .enumerate()
        .map(|(k, b)| ue_objective(&state.mu[k], state.alpha[k], &state.weight_dir[k], b, noise))
        .sum()
}

/// Everything AP `l` needs for its precoder update: its own masked
/// effective channels toward every UE and the broadcast per-UE scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct ApProblem {
    /// Masked `h_kl` for every UE `k`.
    pub hbar: Vec<Vec<C64>>,
    /// `mu_k^H W_k mu_k` for every UE (equals `alpha_k |mu_k|^2` after a fresh update).
    pub omega: Vec<f64>,
    /// UEs served by the AP.
    pub served: Vec<usize>,
    /// Component of `W_k mu_k` on this AP's link, per served UE.
    pub rhs_coef: Vec<C64>,
}

impl ApProblem {
    pub fn dim(&self) -> usize {
        self.hbar.first().map_or(0, Vec::len)
    }

    /// Right-hand sides `(W_k mu_k)_l h_kl`, one per served UE.
    pub fn rhs(&self) -> Vec<Vec<C64>> {
        self.served
            .iter()
            .zip(&self.rhs_coef)
            .map(|(&k, &c)| self.hbar[k].iter().map(|h| h * c).collect())
            .collect()
    }
}

/// Which UEs enter an AP's Gram matrix `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramScope {
    /// Only the UEs the AP serves; `H` has rank at most `|K_l|`.
    Served,
    /// Every UE, so the update also accounts for the interference the AP
    /// causes outside its own cluster. This makes the z block update exact.
    #[default]
    All,
}

pub fn ap_problem(state: &PrecoderState, eff: &EffectiveChannels, l: usize, scope: GramScope) -> ApProblem {
    let weights: Vec<(f64, Vec<C64>)> = (0..eff.num_ues())
        .map(|k| weighted_mu(&state.mu[k], state.alpha[k], &state.weight_dir[k]))
        .collect();
    let served = eff.served_ues(l).to_vec();
    let rhs_coef = served
        .iter()
        .map(|&k| weights[k].1[eff.serving_index(k, l).expect("served UE lists AP")])
        .collect();
    ApProblem {
        hbar: (0..eff.num_ues()).map(|k| eff.masked_hbar(k, l)).collect(),
        omega: weights
            .iter()
            .enumerate()
            .map(|(k, w)| match scope {
                GramScope::All => w.0,
                GramScope::Served if served.binary_search(&k).is_ok() => w.0,
                GramScope::Served => 0.0,
            })
            .collect(),
        served,
        rhs_coef,
    }
}

/// `H = sum_k omega_k h_kl h_kl^H`.
pub fn local_gram(problem: &ApProblem) -> CMatrix {
    let m = problem.dim();
    let mut h = CMatrix::zeros(m, m);
    for (hk, &w) in problem.hbar.iter().zip(&problem.omega) {
        if w > 0.0 {
            h.add_outer(w, hk);
        }
    }
    h
}

/// Per-AP transmit power as a function of the multiplier, evaluated in the
/// eigenbasis of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProfile {
    /// Eigenvalues with the numerically null ones set to zero.
    eigenvalues: Vec<f64>,
    /// `sum_k |(J^H rhs_k)_i|^2`.
    weights: Vec<f64>,
}

impl PowerProfile {
    pub fn new(eig: &HermitianEig, rank: usize, rhs: &[Vec<C64>]) -> Self {
        Self::build(eig, rank, rhs, eig.dim())
    }

    /// Ignores the components of the right-hand sides outside the leading
    /// `rank` eigenvectors.
    pub fn on_range(eig: &HermitianEig, rank: usize, rhs: &[Vec<C64>]) -> Self {
        Self::build(eig, rank, rhs, rank)
    }

    fn build(eig: &HermitianEig, rank: usize, rhs: &[Vec<C64>], keep: usize) -> Self {
        let m = eig.dim();
        let mut weights = vec![0.0; m];
        for b in rhs {
            let coeffs = eig.eigenvectors.adjoint_matvec(b);
            for (w, c) in weights.iter_mut().zip(coeffs).take(keep) {
                *w += c.norm_sqr();
            }
        }
        let eigenvalues = (0..m)
            .map(|i| if i < rank { eig.eigenvalues[i] } else { 0.0 })
            .collect();
        Self { eigenvalues, weights }
    }

    /// `+inf` where the system is singular.
    pub fn power(&self, lambda: f64) -> f64 {
        let mut p = 0.0;
        for (&e, &w) in self.eigenvalues.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            let d = e + lambda;
            if d <= 0.0 {
                return f64::INFINITY;
            }
            p += w / (d * d);
        }
        p
    }

    /// `sum_k |rhs_k|^2`.
    pub fn rhs_energy(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn power_given_lambda(eig: &HermitianEig, rank: usize, rhs: &[Vec<C64>], lambda: f64) -> f64 {
    PowerProfile::new(eig, rank, rhs).power(lambda)
}

/// Smallest multiplier used in place of zero.
pub fn lambda_floor(eig_max: f64) -> f64 {
    1e-12 * (eig_max.max(0.0) + 1.0)
}

/// Multiplier that meets the power budget: `lambda_floor` when the budget is
/// slack there, otherwise bisection on `[lambda_floor, lambda_max]` until the
/// power is within `tol * p_max` of `p_max`.
pub fn bisect_lambda(profile: &PowerProfile, eig_max: f64, p_max: f64, tol: f64) -> Result<f64> {
    let floor = lambda_floor(eig_max);
    if profile.power(floor) <= p_max {
        return Ok(floor);
    }
    let hi_bound = (profile.rhs_energy() / p_max).sqrt();
    let mut lo = floor;
    let mut hi = hi_bound.max(floor);
    if profile.power(hi) > p_max * (1.0 + tol) {
        return Err(Error::Internal(format!(
            "power {} exceeds the budget at the analytic multiplier bound {hi}",
            profile.power(hi)
        )));
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let p = profile.power(mid);
        if (p - p_max).abs() <= tol * p_max {
            return Ok(mid);
        }
        if p > p_max {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let p = profile.power(hi);
    if (p - p_max).abs() <= tol * p_max {
        Ok(hi)
    } else {
        Err(Error::Internal(format!(
            "multiplier bisection stalled at lambda {hi} with power {p} (budget {p_max})"
        )))
    }
}

/// Solver settings shared by every AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub mode: SolverMode,
    pub kappa: KappaMode,
    pub scope: GramScope,
    pub p_max: f64,
    pub bisection_tol: f64,
}

impl SolveOptions {
    pub fn from_config(cfg: &SystemConfig, mode: SolverMode) -> Self {
        Self {
            mode,
            kappa: cfg.kappa_mode,
            scope: cfg.gram_scope,
            p_max: cfg.p_max,
            bisection_tol: cfg.bisection_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApSolution {
    /// One precoder per served UE.
    pub z: Vec<Vec<C64>>,
    pub lambda: f64,
    pub power: f64,
    /// Numerical rank of `H`.
    pub rank: usize,
}

/// Per-AP precoder update. Reads only the AP's own problem data.
pub fn solve_ap(problem: &ApProblem, opts: &SolveOptions, fc: &mut FlopCounter) -> Result<ApSolution> {
    let m = problem.dim();
    let rhs = problem.rhs();
    if m == 0 || rhs.iter().all(|b| b.iter().all(|x| *x == ZERO)) {
        return Ok(ApSolution {
            z: vec![vec![ZERO; m]; rhs.len()],
            lambda: 0.0,
            power: 0.0,
            rank: 0,
        });
    }
    let gram = local_gram(problem);
    let eig = hermitian_eig(&gram)?;
    let rank = effective_rank(&eig, DEFAULT_RANK_TOL);
    // Every right-hand side lies in the range of H by construction, so the
    // solve is restricted to the retained eigenspace; rounding noise outside
    // it would otherwise be amplified by 1/lambda.
    let profile = PowerProfile::on_range(&eig, rank, &rhs);
    let lambda = bisect_lambda(&profile, eig.max_eigenvalue(), opts.p_max, opts.bisection_tol)?;
    let op = LowRankOperator::from_eig(&eig, rank, lambda)?;
    let rhs: Vec<Vec<C64>> = rhs.iter().map(|b| project_onto_basis(&op, b, fc)).collect();

    let mut z: Vec<Vec<C64>> = match opts.mode {
        SolverMode::Exact => {
            let zinv = range_inverse(&op, fc)?;
            rhs.iter().map(|b| zinv.matvec_counted(b, fc)).collect()
        }
        SolverMode::Nse(t) => {
            let beta = nse_beta(&op, opts.kappa);
            rhs.iter().map(|b| nse_solve(&op, beta, t, b, fc)).collect()
        }
    };
    let mut power: f64 = z.iter().map(|v| norm_sqr(v)).sum();
    if power > opts.p_max * (1.0 + POWER_SLACK) {
        let s = (opts.p_max / power).sqrt();
        for v in &mut z {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
        power = z.iter().map(|v| norm_sqr(v)).sum();
    }
    if !power.is_finite() {
        return Err(Error::Numerics(crate::numerics::NumericsError::NonFinite("precoder")));
    }
    Ok(ApSolution { z, lambda, power, rank })
}

/// Outcome of one precoder block update across all APs.
#[derive(Debug, Clone, PartialEq)]
pub struct ZUpdate {
    pub z: Vec<Vec<Vec<C64>>>,
    pub lambda: Vec<f64>,
    pub power: Vec<f64>,
    pub flops: FlopCounter,
}

pub fn update_z(
    state: &PrecoderState,
    eff: &EffectiveChannels,
    cfg: &SystemConfig,
    mode: SolverMode,
) -> Result<ZUpdate> {
    let opts = SolveOptions::from_config(cfg, mode);
    let mut out = ZUpdate {
        z: Vec::with_capacity(eff.num_aps()),
        lambda: Vec::with_capacity(eff.num_aps()),
        power: Vec::with_capacity(eff.num_aps()),
        flops: FlopCounter::default(),
    };
    for l in 0..eff.num_aps() {
        let sol = solve_ap(&ap_problem(state, eff, l, opts.scope), &opts, &mut out.flops)?;
        out.z.push(sol.z);
        out.lambda.push(sol.lambda);
        out.power.push(sol.power);
    }
    Ok(out)
}

fn record(state: &mut PrecoderState, eff: &EffectiveChannels, cfg: &SystemConfig) -> f64 {
    let report = metrics::rate_report(state, eff, cfg, metrics::RateMode::PerLink);
    let sum_rate = report.sum_rate;
    let rec = IterationRecord {
        iteration: state.iterations,
        objective: wsmse_objective(state, eff, cfg),
        sum_rate,
        rates: report.rate_bps_hz,
        lambda: state.lambda.clone(),
        ap_power: state.ap_power(),
        flops: state.flops.complex_multiplies,
    };
    state.history.push(rec);
    sum_rate
}

/// One full `(mu, alpha, z)` pass.
pub fn wsmse_step(
    state: &mut PrecoderState,
    eff: &EffectiveChannels,
    cfg: &SystemConfig,
    mode: SolverMode,
) -> Result<()> {
    state.mu = update_mu(state, eff, cfg);
    let (alpha, dirs) = update_alpha(state, eff, cfg);
    state.alpha = alpha;
    state.weight_dir = dirs;
    let upd = update_z(state, eff, cfg, mode)?;
    state.z = upd.z;
    state.lambda = upd.lambda;
    state.flops.merge(&upd.flops);
    state.iterations += 1;
    Ok(())
}

/// Iterates from the matched-filter start until the relative sum-rate
/// change drops below `conv_tol` or `max_iters` passes have run. History
/// entry 0 is the starting point.
pub fn run_wsmse(eff: &EffectiveChannels, cfg: &SystemConfig, mode: SolverMode) -> Result<PrecoderState> {
    let mut state = init_precoders(eff, cfg);
    let mut prev = record(&mut state, eff, cfg);
    for _ in 0..cfg.max_iters {
        wsmse_step(&mut state, eff, cfg, mode)?;
        let rate = record(&mut state, eff, cfg);
        let change = (rate - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = rate;
        if change < cfg.conv_tol {
            break;
        }
    }
    Ok(state)
}

/// Iterations until the relative sum-rate change first drops below `tol`.
pub fn iterations_to_converge(sum_rates: &[f64], tol: f64) -> Option<usize> {
    sum_rates
        .windows(2)
        .position(|w| (w[1] - w[0]).abs() / w[0].abs().max(f64::MIN_POSITIVE) < tol)
        .map(|i| i + 1)
}

/// Per-AP zero forcing on the served UEs' effective channels, each UE
/// getting an equal share of `P_max`.
pub fn zf_baseline(eff: &EffectiveChannels, cfg: &SystemConfig) -> Result<PrecoderState> {
    let mut state = PrecoderState::zeros(eff);
    let mut fc = FlopCounter::default();
    for l in 0..eff.num_aps() {
        let served = eff.served_ues(l);
        let n = served.len();
        if n == 0 {
            continue;
        }
        let rows: Vec<usize> = (0..eff.num_rf()).filter(|&r| eff.active_rows(l)[r]).collect();
        // H: n x a, row i = h_il^H on the active RF chains
        let h = CMatrix::from_fn(n, rows.len(), |i, c| eff.hbar(served[i], l)[rows[c]].conj());
        let hh = h.adjoint();
        let mut gram = h.matmul(&hh);
        let inv = match invert(&gram, &mut fc) {
            Ok(inv) => inv,
            Err(_) => {
                let load = 1e-10 * gram.trace().re;
                if load <= 0.0 {
                    continue;
                }
                gram.add_diagonal(load);
                invert(&gram, &mut fc)?
            }
        };
        let w = hh.matmul(&inv);
        let share = (cfg.p_max / n as f64).sqrt();
        for i in 0..n {
            let col = w.column(i);
            let nrm = norm_sqr(&col).sqrt();
            let mut z = vec![ZERO; eff.num_rf()];
            if nrm > 0.0 && nrm.is_finite() {
                for (c, &r) in rows.iter().enumerate() {
                    z[r] = col[c] * (share / nrm);
                }
            }
            state.z[l][i] = z;
        }
    }
    state.flops = fc;
    Ok(state)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::metrics::{mse, rate_report, RateMode};
    use crate::rng_from_seed;
    use crate::channel::complex_gaussian;
    use rand::Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    /// One AP, one UE, one RF chain with `h = [h]` and `z = [sqrt(p)]`.
    pub(crate) fn single_link(h: f64, p: f64) -> (EffectiveChannels, PrecoderState, SystemConfig) {
        let eff = EffectiveChannels::new(vec![vec![0]], vec![vec![vec![c(h)]]], vec![vec![true]]).unwrap();
        let mut state = PrecoderState::zeros(&eff);
        state.z[0][0] = vec![c(p.sqrt())];
        let cfg = SystemConfig {
            num_aps: 1,
            num_ues: 1,
            num_antennas: 1,
            num_rf: 1,
            cluster_size: 1,
            ..Default::default()
        };
        (eff, state, cfg)
    }

    /// Random instance with `l` APs, `k` UEs, `m` RF chains, each UE served
    /// by `per_ue` random APs.
    pub(crate) fn random_instance(seed: u64, l: usize, k: usize, m: usize, per_ue: usize) -> (EffectiveChannels, SystemConfig) {
        let mut rng = rng_from_seed(seed);
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
        let scale = 1e-5;
        let hbar = (0..l)
            .map(|_| {
                (0..k)
                    .map(|_| (0..m).map(|_| complex_gaussian(&mut rng, scale * scale)).collect())
                    .collect()
            })
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

    #[test]
    fn effective_channel_rows_follow_assignment() {
        let hb = vec![c(0.0), c(0.0), c(1.0), c(0.5)];
        let ch = ChannelSet::from_beamspace(vec![vec![hb.clone()]]);
        let topo = Topology {
            ap_xy: vec![[0.0; 2]],
            ue_xy: vec![[0.0; 2]],
            serving_aps: vec![vec![0]],
            served_ues: vec![vec![0]],
            large_scale_db: Vec::new(),
        };
        let mut assign = BeamAssignment {
            num_rf: 2,
            aps: vec![crate::beamselect::ApBeams {
                ue_beams: vec![(0, 2)],
                padding: vec![3],
                classes: Vec::new(),
            }],
            trace: Vec::new(),
        };
        let eff = effective_channels(&ch, &assign, &topo).unwrap();
        assert_eq!(eff.hbar(0, 0), &[c(1.0), c(0.5)]);
        assert_eq!(eff.masked_hbar(0, 0), vec![c(1.0), c(0.0)]);
        assign.aps[0].ue_beams = vec![(0, 3)];
        assign.aps[0].padding = vec![2];
        let eff = effective_channels(&ch, &assign, &topo).unwrap();
        assert_eq!(eff.hbar(0, 0), &[c(0.5), c(1.0)]);
    }

    #[test]
    fn init_uses_full_power() {
        let (eff, cfg) = random_instance(1, 3, 4, 3, 2);
        let s = init_precoders(&eff, &cfg);
        for p in s.ap_power() {
            assert!((p - cfg.p_max).abs() < 1e-12);
        }
        let (eff, _, cfg) = single_link(1.0, 0.0);
        let s = init_precoders(&eff, &cfg);
        assert!((s.z[0][0][0] - c(cfg.p_max.sqrt())).norm() < 1e-15);
    }

    #[test]
    fn mu_and_alpha_scalar_case() {
        let p = 0.7;
        let (eff, state, cfg) = single_link(1.0, p);
        let noise = cfg.noise_power_w();
        let mu = update_mu(&state, &eff, &cfg);
        assert!((mu[0][0] - c(p.sqrt() / (p + noise))).norm() < 1e-9 * mu[0][0].norm());
        let (alpha, _) = update_alpha(&state, &eff, &cfg);
        assert!((alpha[0] / (1.0 + p / noise) - 1.0).abs() < 1e-12);

        let zero = PrecoderState::zeros(&eff);
        assert_eq!(update_mu(&zero, &eff, &cfg), vec![vec![c(0.0)]]);
        assert_eq!(update_alpha(&zero, &eff, &cfg).0, vec![1.0]);
        assert!((wsmse_objective(&zero, &eff, &cfg) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_state_objective_counts_users() {
        let (eff, cfg) = random_instance(4, 4, 5, 3, 3);
        let s = PrecoderState::zeros(&eff);
        assert!((wsmse_objective(&s, &eff, &cfg) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fresh_weights_match_mse_identity() {
        let (eff, cfg) = random_instance(7, 4, 5, 3, 2);
        let mut s = init_precoders(&eff, &cfg);
        s.mu = update_mu(&s, &eff, &cfg);
        let (alpha, dirs) = update_alpha(&s, &eff, &cfg);
        s.alpha = alpha;
        s.weight_dir = dirs;
        let report = rate_report(&s, &eff, &cfg, RateMode::PerLink);
        for k in 0..5 {
            let e = mse(k, &s, &eff, &cfg);
            assert!((s.alpha[k] * e - 1.0).abs() < 1e-10);
            assert!((1.0 / e - 1.0 - report.sinr[k]).abs() <= 1e-10 * report.sinr[k].max(1.0));
        }
    }

    #[test]
    fn gram_single_user() {
        let problem = ApProblem {
            hbar: vec![vec![c(1.0), c(0.0)]],
            omega: vec![1.0],
            served: vec![0],
            rhs_coef: vec![c(1.0)],
        };
        let h = local_gram(&problem);
        assert_eq!(h, CMatrix::from_row_major(2, 2, vec![c(1.0), c(0.0), c(0.0), c(0.0)]));
        let eig = hermitian_eig(&h).unwrap();
        let rank = effective_rank(&eig, DEFAULT_RANK_TOL);
        let rhs = problem.rhs();
        for lam in [0.1, 1.0, 3.0] {
            let want = 1.0 / ((1.0 + lam) * (1.0 + lam));
            assert!((power_given_lambda(&eig, rank, &rhs, lam) - want).abs() < 1e-14);
        }
        assert_eq!(power_given_lambda(&eig, rank, &rhs, 1e300), 0.0);
        let profile = PowerProfile::new(&eig, rank, &rhs);
        let lam = bisect_lambda(&profile, eig.max_eigenvalue(), 0.25, 1e-12).unwrap();
        assert!((lam - 1.0).abs() < 1e-8);
        let lam = bisect_lambda(&profile, eig.max_eigenvalue(), 1e6, 1e-8).unwrap();
        assert_eq!(lam, lambda_floor(1.0));
    }

    #[test]
    fn single_user_update_is_matched_filter() {
        let problem = ApProblem {
            hbar: vec![vec![c(0.6), C64::new(0.0, 0.8), c(0.0)]],
            omega: vec![2.0],
            served: vec![0],
            rhs_coef: vec![C64::new(0.3, -0.1)],
        };
        let opts = SolveOptions {
            mode: SolverMode::Exact,
            kappa: KappaMode::Range,
            scope: GramScope::All,
            p_max: 1.0,
            bisection_tol: 1e-10,
        };
        let sol = solve_ap(&problem, &opts, &mut FlopCounter::default()).unwrap();
        let z = &sol.z[0];
        // z parallel to h
        let h = &problem.hbar[0];
        let cos = dot(h, z).norm() / (norm_sqr(h) * norm_sqr(z)).sqrt();
        assert!((cos - 1.0).abs() < 1e-10);

        let zero = ApProblem { rhs_coef: vec![c(0.0)], ..problem };
        let sol = solve_ap(&zero, &opts, &mut FlopCounter::default()).unwrap();
        assert!(sol.z[0].iter().all(|x| *x == c(0.0)));
    }

    #[test]
    fn single_user_converges_to_mrt() {
        let (eff, _, cfg) = single_link(3e-5, 0.0);
        let s = run_wsmse(&eff, &cfg, SolverMode::Exact).unwrap();
        let want = (1.0 + cfg.p_max * 9e-10 / cfg.noise_power_w()).log2();
        let got = *s.sum_rate_history().last().unwrap();
        assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
    }

    #[test]
    fn nse_tracks_exact_for_long_series() {
        let (eff, cfg) = random_instance(3, 3, 5, 4, 2);
        let mut s = init_precoders(&eff, &cfg);
        s.mu = update_mu(&s, &eff, &cfg);
        let (alpha, dirs) = update_alpha(&s, &eff, &cfg);
        s.alpha = alpha;
        s.weight_dir = dirs;
        let exact = update_z(&s, &eff, &cfg, SolverMode::Exact).unwrap();
        let cfg_t = SystemConfig { kappa_mode: KappaMode::Tight, ..cfg.clone() };
        let approx = update_z(&s, &eff, &cfg_t, SolverMode::Nse(4000)).unwrap();
        for (a, b) in exact.z.iter().flatten().zip(approx.z.iter().flatten()) {
            let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
            assert!(diff <= 1e-6 * norm_sqr(a).sqrt().max(1e-300), "{diff}");
        }
    }

    #[test]
    fn objective_descends() {
        for seed in 0..10 {
            let (eff, cfg) = random_instance(seed, 4, 5, 3, 2);
            let cfg = SystemConfig { conv_tol: 1e-12, max_iters: 15, ..cfg };
            let s = run_wsmse(&eff, &cfg, SolverMode::Exact).unwrap();
            let obj = s.objective_history();
            for w in obj.windows(2) {
                assert!(w[1] <= w[0] + 1e-8, "seed {seed}: {obj:?}");
            }
            for p in s.ap_power() {
                assert!(p <= cfg.p_max * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn zf_nulls_intra_ap_crosstalk() {
        let (eff, cfg) = random_instance(5, 2, 3, 4, 2);
        let s = zf_baseline(&eff, &cfg).unwrap();
        for l in 0..2 {
            let served = eff.served_ues(l);
            let p: f64 = s.z[l].iter().map(|z| norm_sqr(z)).sum();
            assert!((p - cfg.p_max).abs() < 1e-10);
            for (j, &i) in served.iter().enumerate() {
                for &k in served {
                    let g = dot(eff.hbar(k, l), &s.z[l][j]).norm();
                    let scale = norm_sqr(eff.hbar(k, l)).sqrt() * norm_sqr(&s.z[l][j]).sqrt();
                    if k != i {
                        assert!(g <= 1e-8 * scale, "{g} {scale}");
                    }
                }
            }
        }
    }

    #[test]
    fn zf_on_orthonormal_channels_is_mrt() {
        let eff = EffectiveChannels::new(
            vec![vec![0], vec![0]],
            vec![vec![vec![c(1.0), c(0.0)], vec![c(0.0), C64::new(0.0, 1.0)]]],
            vec![vec![true, true]],
        )
        .unwrap();
        let cfg = SystemConfig { p_max: 2.0, ..Default::default() };
        let s = zf_baseline(&eff, &cfg).unwrap();
        assert!((s.z[0][0][0] - c(1.0)).norm() < 1e-12 && s.z[0][0][1].norm() < 1e-12);
        assert!((s.z[0][1][1] - C64::new(0.0, 1.0)).norm() < 1e-12 && s.z[0][1][0].norm() < 1e-12);
    }
}
