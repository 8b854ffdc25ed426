//! Two-stage beam selection. Stage one gives every served UE a distinct
//! beam per AP, resolving strongest-beam collisions inside the cluster.
//! Stage two moves UEs off beams where an out-of-cluster UE collects too
//! much energy relative to the served UE.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::topology::{SystemConfig, Topology};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserClass {
    /// Strongest beam not shared with another served UE.
    Niu,
    /// Strongest beam contested within the cluster.
    Iu,
}

/// One RF chain of an AP: the beam it is tuned to and the UE it carries.
/// Padding rows carry no UE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfRow {
    pub ue: Option<usize>,
    pub beam: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ApBeams {
    /// `(ue, beam)` for every served UE, in ascending UE order.
    pub ue_beams: Vec<(usize, usize)>,
    /// Beams held by RF chains without a UE.
    pub padding: Vec<usize>,
    /// Stage-one classification of each served UE.
    pub classes: Vec<(usize, UserClass)>,
}

impl ApBeams {
    /// RF rows: served UEs first, then padding.
    pub fn rows(&self) -> Vec<RfRow> {
        self.ue_beams
            .iter()
            .map(|&(ue, beam)| RfRow { ue: Some(ue), beam })
            .chain(self.padding.iter().map(|&beam| RfRow { ue: None, beam }))
            .collect()
    }

    pub fn beam_of(&self, ue: usize) -> Option<usize> {
        self.ue_beams.iter().find(|(k, _)| *k == ue).map(|&(_, b)| b)
    }

    fn holds(&self, beam: usize) -> bool {
        self.ue_beams.iter().any(|&(_, b)| b == beam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub ue: usize,
    pub ap: usize,
    pub beam: usize,
    pub ice: f64,
    pub oce: f64,
    pub ratio: f64,
    pub offender: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reassignment {
    pub ap: usize,
    pub ue: usize,
    pub from: usize,
    pub to: usize,
    /// No untried free beam was left; the UE settled on its best-ratio beam.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStep {
    pub iteration: usize,
    pub reports: Vec<RatioReport>,
    pub moves: Vec<Reassignment>,
}

/// Per-AP beam maps plus the refinement trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamAssignment {
    pub num_rf: usize,
    pub aps: Vec<ApBeams>,
    pub trace: Vec<RefinementStep>,
}

impl BeamAssignment {
    /// Checks the selection-matrix constraints: one distinct beam per served
    /// UE, at most `N_RF` rows, all beams in range.
    pub fn validate(&self, topo: &Topology, num_beams: usize) -> Result<()> {
        for (l, ap) in self.aps.iter().enumerate() {
            let ues: Vec<usize> = ap.ue_beams.iter().map(|&(k, _)| k).collect();
            if ues != topo.served_ues[l] {
                return Err(Error::Internal(format!(
                    "AP {l} assigns beams to {ues:?}, serves {:?}",
                    topo.served_ues[l]
                )));
            }
            let rows = ap.rows();
            if rows.len() > self.num_rf {
                return Err(Error::Internal(format!("AP {l} uses {} RF chains", rows.len())));
            }
            let mut seen = vec![false; num_beams];
            for row in rows {
                if row.beam >= num_beams || std::mem::replace(&mut seen[row.beam], true) {
                    return Err(Error::Internal(format!(
                        "AP {l} beam {} out of range or reused",
                        row.beam
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `|h~_kl[n]|^2`.
pub fn beam_energy(ch: &ChannelSet, k: usize, l: usize, n: usize) -> f64 {
    ch.beamspace(k, l)[n].norm_sqr()
}

/// Highest-energy beam, ties to the lowest index.
pub fn strongest_beam(ch: &ChannelSet, k: usize, l: usize) -> usize {
    best_beam(ch, k, l, |_| true).expect("at least one antenna")
}

fn best_beam(ch: &ChannelSet, k: usize, l: usize, allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let hb = ch.beamspace(k, l);
    let mut best: Option<(usize, f64)> = None;
    for (n, x) in hb.iter().enumerate() {
        let e = x.norm_sqr();
        if allowed(n) && best.is_none_or(|(_, b)| e > b) {
            best = Some((n, e));
        }
    }
    best.map(|(n, _)| n)
}

/// Splits the UEs served by AP `l` into (NIU, IU) by strongest-beam collisions.
pub fn classify_users(ch: &ChannelSet, topo: &Topology, l: usize) -> (Vec<usize>, Vec<usize>) {
    let served = &topo.served_ues[l];
    let strongest: Vec<usize> = served.iter().map(|&k| strongest_beam(ch, k, l)).collect();
    let mut niu = Vec::new();
    let mut iu = Vec::new();
    for (i, &k) in served.iter().enumerate() {
        if strongest.iter().filter(|&&b| b == strongest[i]).count() == 1 {
            niu.push(k);
        } else {
            iu.push(k);
        }
    }
    (niu, iu)
}

/// Stage one at AP `l`. NIUs keep their strongest beam. In each collision
/// group the UE with the largest channel norm keeps the contested beam; the
/// others, strongest first, take their best beam still free at the AP.
pub fn assign_intra(ch: &ChannelSet, topo: &Topology, l: usize, num_rf: usize) -> Result<ApBeams> {
    let served = &topo.served_ues[l];
    let n = ch.num_antennas();
    if served.len() > n {
        return Err(Error::Config(format!(
            "AP {l} serves {} UEs but has only {n} beams",
            served.len()
        )));
    }
    if served.len() > num_rf {
        return Err(Error::Config(format!(
            "AP {l} serves {} UEs but has only {num_rf} RF chains",
            served.len()
        )));
    }
    let (niu, iu) = classify_users(ch, topo, l);
    let mut beams: BTreeMap<usize, usize> = BTreeMap::new();
    let mut taken = vec![false; n];
    for &k in &niu {
        let b = strongest_beam(ch, k, l);
        beams.insert(k, b);
        taken[b] = true;
    }

    let mut by_norm = iu.clone();
    by_norm.sort_by(|&a, &b| ch.gain(b, l).total_cmp(&ch.gain(a, l)).then(a.cmp(&b)));
    let mut losers = Vec::new();
    for &k in &by_norm {
        let b = strongest_beam(ch, k, l);
        if taken[b] {
            losers.push(k);
        } else {
            beams.insert(k, b);
            taken[b] = true;
        }
    }
    for k in losers {
        let b = best_beam(ch, k, l, |b| !taken[b]).expect("enough beams checked above");
        beams.insert(k, b);
        taken[b] = true;
    }

    let mut classes: Vec<(usize, UserClass)> = niu
        .iter()
        .map(|&k| (k, UserClass::Niu))
        .chain(iu.iter().map(|&k| (k, UserClass::Iu)))
        .collect();
    classes.sort_unstable_by_key(|&(k, _)| k);
    let mut ap = ApBeams {
        ue_beams: beams.into_iter().collect(),
        padding: Vec::new(),
        classes,
    };
    pad_rows(&mut ap, ch, topo, l, num_rf);
    Ok(ap)
}

/// Fills unused RF chains with the free beams of largest aggregate energy
/// over the served UEs.
fn pad_rows(ap: &mut ApBeams, ch: &ChannelSet, topo: &Topology, l: usize, num_rf: usize) {
    let n = ch.num_antennas();
    let mut free: Vec<(usize, f64)> = (0..n)
        .filter(|&b| !ap.holds(b))
        .map(|b| {
            let e = topo.served_ues[l].iter().map(|&k| beam_energy(ch, k, l, b)).sum();
            (b, e)
        })
        .collect();
    free.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let want = num_rf.saturating_sub(ap.ue_beams.len()).min(free.len());
    ap.padding = free[..want].iter().map(|&(b, _)| b).collect();
}

/// Stage one at every AP.
pub fn assign_all(ch: &ChannelSet, topo: &Topology, cfg: &SystemConfig) -> Result<BeamAssignment> {
    let aps = (0..topo.num_aps())
        .map(|l| assign_intra(ch, topo, l, cfg.num_rf))
        .collect::<Result<_>>()?;
    Ok(BeamAssignment {
        num_rf: cfg.num_rf,
        aps,
        trace: Vec::new(),
    })
}

/// Ratio of the strongest out-of-cluster energy to the served UE's energy on
/// beam `n` at AP `l`. `None` when every UE is in the cluster.
fn beam_ratio(ch: &ChannelSet, topo: &Topology, k: usize, l: usize, n: usize) -> Option<RatioReport> {
    let served = &topo.served_ues[l];
    let mut worst: Option<(usize, f64)> = None;
    for k2 in (0..topo.num_ues()).filter(|k2| served.binary_search(k2).is_err()) {
        let e = beam_energy(ch, k2, l, n);
        if worst.is_none_or(|(_, w)| e > w) {
            worst = Some((k2, e));
        }
    }
    let (offender, oce) = worst?;
    let ice = beam_energy(ch, k, l, n);
    let ratio = if ice > 0.0 { oce / ice } else { f64::INFINITY };
    Some(RatioReport {
        ue: k,
        ap: l,
        beam: n,
        ice,
        oce,
        ratio,
        offender,
    })
}

/// Every assigned `(UE, beam)` whose out-of-cluster ratio exceeds `gamma_th`.
pub fn scan_intercluster(
    assign: &BeamAssignment,
    ch: &ChannelSet,
    topo: &Topology,
    cfg: &SystemConfig,
) -> Vec<RatioReport> {
    let mut out = Vec::new();
    for (l, ap) in assign.aps.iter().enumerate() {
        for &(k, n) in &ap.ue_beams {
            if let Some(r) = beam_ratio(ch, topo, k, l, n) {
                if r.ratio > cfg.gamma_th {
                    out.push(r);
                }
            }
        }
    }
    out
}

/// Stage two. Each reported UE moves to its best beam that is free at the
/// AP and not yet tried; with nothing left it settles on the lowest-ratio
/// beam it has tried. Runs at most `N` rounds.
pub fn refine_assignment(
    assign: &BeamAssignment,
    ch: &ChannelSet,
    topo: &Topology,
    cfg: &SystemConfig,
) -> BeamAssignment {
    let mut out = assign.clone();
    let mut tried: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    let mut exhausted: Vec<(usize, usize)> = Vec::new();

    for iteration in 0..ch.num_antennas() {
        let reports: Vec<RatioReport> = scan_intercluster(&out, ch, topo, cfg)
            .into_iter()
            .filter(|r| !exhausted.contains(&(r.ap, r.ue)))
            .collect();
        if reports.is_empty() {
            break;
        }
        let mut moves = Vec::new();
        for r in &reports {
            let ap = &mut out.aps[r.ap];
            let seen = tried.entry((r.ap, r.ue)).or_default();
            if !seen.iter().any(|&(b, _)| b == r.beam) {
                seen.push((r.beam, r.ratio));
            }
            let next = best_beam(ch, r.ue, r.ap, |b| {
                !ap.holds(b) && !seen.iter().any(|&(t, _)| t == b)
            });
            let (to, done) = match next {
                Some(b) => (b, false),
                None => {
                    exhausted.push((r.ap, r.ue));
                    let best = seen
                        .iter()
                        .copied()
                        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                        .map(|(b, _)| b)
                        .unwrap_or(r.beam);
                    let to = if best == r.beam || !ap.holds(best) { best } else { r.beam };
                    (to, true)
                }
            };
            if let Some(slot) = ap.ue_beams.iter_mut().find(|(k, _)| *k == r.ue) {
                slot.1 = to;
            }
            moves.push(Reassignment {
                ap: r.ap,
                ue: r.ue,
                from: r.beam,
                to,
                exhausted: done,
            });
        }
        out.trace.push(RefinementStep {
            iteration,
            reports,
            moves,
        });
    }

    for l in 0..out.aps.len() {
        pad_rows(&mut out.aps[l], ch, topo, l, cfg.num_rf);
    }
    out
}

/// Whether `(ap, ue)` gave up during refinement.
pub fn exhausted_pairs(assign: &BeamAssignment) -> Vec<(usize, usize)> {
    assign
        .trace
        .iter()
        .flat_map(|s| s.moves.iter())
        .filter(|m| m.exhausted)
        .map(|m| (m.ap, m.ue))
        .collect()
}

/// Stage one followed, when `refine` is set, by stage two.
pub fn select_beams(
    ch: &ChannelSet,
    topo: &Topology,
    cfg: &SystemConfig,
    refine: bool,
) -> Result<BeamAssignment> {
    let stage1 = assign_all(ch, topo, cfg)?;
    Ok(if refine {
        refine_assignment(&stage1, ch, topo, cfg)
    } else {
        stage1
    })
}
