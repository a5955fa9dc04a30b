//! Closed-loop sub-scores and the PDMS / EPDMS aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{rollout, Scenario, SimConfig, SimulationTrace};
use crate::types::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub ttc_threshold: f64,
    pub a_max: f64,
    pub j_max: f64,
    pub lane_half_width: f64,
    /// Floor on the progress denominator.
    pub eps_progress: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            ttc_threshold: 1.0,
            a_max: 3.0,
            j_max: 5.0,
            lane_half_width: 1.75,
            eps_progress: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub nc: f64,
    pub dac: f64,
    pub ep: f64,
    pub ttc: f64,
    pub comfort: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedSubScores {
    pub base: SubScores,
    pub ddc: f64,
    pub tlc: f64,
    pub lk: f64,
    pub hc: f64,
    pub ec: f64,
}

impl ExtendedSubScores {
    pub const ALL_ONES: ExtendedSubScores = ExtendedSubScores {
        base: SubScores {
            nc: 1.0,
            dac: 1.0,
            ep: 1.0,
            ttc: 1.0,
            comfort: 1.0,
        },
        ddc: 1.0,
        tlc: 1.0,
        lk: 1.0,
        hc: 1.0,
        ec: 1.0,
    };

    /// `(name, value)` in report column order.
    pub fn columns(&self) -> [(&'static str, f64); 10] {
        let b = &self.base;
        [
            ("nc", b.nc),
            ("dac", b.dac),
            ("ep", b.ep),
            ("ttc", b.ttc),
            ("c", b.comfort),
            ("ddc", self.ddc),
            ("tlc", self.tlc),
            ("lk", self.lk),
            ("hc", self.hc),
            ("ec", self.ec),
        ]
    }
}

/// Multiplicative penalties the human demonstration itself fails; those are
/// not charged in [`epdms`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HumanMask {
    pub nc: bool,
    pub dac: bool,
    pub ddc: bool,
    pub tlc: bool,
}

impl HumanMask {
    pub fn from_expert(s: &ExtendedSubScores) -> Self {
        HumanMask {
            nc: s.base.nc == 0.0,
            dac: s.base.dac == 0.0,
            ddc: s.ddc == 0.0,
            tlc: s.tlc == 0.0,
        }
    }
}

fn indicator(ok: bool) -> f64 {
    if ok {
        1.0
    } else {
        0.0
    }
}

fn comfortable(trace: &SimulationTrace, cfg: &MetricsConfig, include_history: bool) -> bool {
    let n = trace.accel.len();
    let accel_ok = (1..n).all(|k| trace.accel[k].abs() <= cfg.a_max);
    let first_jerk = if include_history { 1 } else { 2 };
    let jerk_ok = (first_jerk..n).all(|k| trace.jerk[k].abs() <= cfg.j_max);
    accel_ok && jerk_ok
}

pub fn subscores(
    trace: &SimulationTrace,
    scenario: &Scenario,
    reference_progress: f64,
    cfg: &MetricsConfig,
) -> ExtendedSubScores {
    let nc = indicator(!trace.collision.iter().any(|&c| c));
    let dac = indicator(!trace.off_drivable.iter().any(|&o| o));
    let ep = (trace.progress / reference_progress.max(cfg.eps_progress)).clamp(0.0, 1.0);
    let ttc = indicator(trace.min_ttc >= cfg.ttc_threshold);
    let comfort = indicator(comfortable(trace, cfg, false));
    let ddc = indicator(trace.heading_error.iter().all(|e| e.abs() <= std::f64::consts::FRAC_PI_2));
    let tlc = match (scenario.traffic_light, trace.stop_line_crossing) {
        (Some(tl), Some(k)) => indicator(!tl.is_red(k)),
        _ => 1.0,
    };
    let n = trace.lateral_deviation.len() as f64;
    let lk = trace
        .lateral_deviation
        .iter()
        .filter(|&&d| d <= cfg.lane_half_width)
        .count() as f64
        / n;
    let hc = indicator(comfortable(trace, cfg, true));
    ExtendedSubScores {
        base: SubScores {
            nc,
            dac,
            ep,
            ttc,
            comfort,
        },
        ddc,
        tlc,
        lk,
        hc,
        ec: 1.0,
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Contract(format!("sub-score {name} = {v} outside [0, 1]")))
    }
}

fn check_binary(name: &str, v: f64) -> Result<()> {
    if v == 0.0 || v == 1.0 {
        Ok(())
    } else {
        Err(Error::Contract(format!("penalty {name} = {v} must be 0 or 1")))
    }
}

pub fn pdms(s: &SubScores) -> Result<f64> {
    check_binary("nc", s.nc)?;
    check_binary("dac", s.dac)?;
    check_unit("ep", s.ep)?;
    check_unit("ttc", s.ttc)?;
    check_unit("c", s.comfort)?;
    Ok(s.nc * s.dac * (5.0 * s.ep + 5.0 * s.ttc + 2.0 * s.comfort) / 12.0)
}

pub fn epdms(s: &ExtendedSubScores, mask: &HumanMask) -> Result<f64> {
    let b = &s.base;
    for (name, v) in [("nc", b.nc), ("dac", b.dac), ("ddc", s.ddc), ("tlc", s.tlc)] {
        check_binary(name, v)?;
    }
    epdms_of_means(s, mask)
}

/// The EPDMS formula applied to sub-scores averaged over many scenarios, as
/// in published benchmark tables. Penalties are then pass rates in [0, 1].
pub fn epdms_of_means(s: &ExtendedSubScores, mask: &HumanMask) -> Result<f64> {
    let b = &s.base;
    for (name, v) in [
        ("nc", b.nc),
        ("dac", b.dac),
        ("ddc", s.ddc),
        ("tlc", s.tlc),
        ("ep", b.ep),
        ("ttc", b.ttc),
        ("lk", s.lk),
        ("hc", s.hc),
        ("ec", s.ec),
    ] {
        check_unit(name, v)?;
    }
    let pen = |masked: bool, v: f64| if masked { 1.0 } else { v };
    let penalty = pen(mask.nc, b.nc) * pen(mask.dac, b.dac) * pen(mask.ddc, s.ddc) * pen(mask.tlc, s.tlc);
    Ok(penalty * (5.0 * b.ep + 5.0 * b.ttc + 2.0 * s.lk + 2.0 * s.hc + 2.0 * s.ec) / 16.0)
}

/// Everything needed to score trajectories on one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioScorer<'a> {
    pub scenario: &'a Scenario,
    pub sim: &'a SimConfig,
    pub metrics: &'a MetricsConfig,
    pub reference_progress: f64,
    pub mask: HumanMask,
}

impl<'a> ScenarioScorer<'a> {
    /// The mask comes from the scenario's own expert trajectory.
    pub fn new(scenario: &'a Scenario, sim: &'a SimConfig, metrics: &'a MetricsConfig) -> Result<Self> {
        let reference_progress = crate::sim::reference_progress(scenario, sim);
        let mut scorer = ScenarioScorer {
            scenario,
            sim,
            metrics,
            reference_progress,
            mask: HumanMask::default(),
        };
        let human = scorer.subscores(&scenario.expert)?;
        scorer.mask = HumanMask::from_expert(&human);
        Ok(scorer)
    }

    pub fn subscores(&self, traj: &Trajectory) -> Result<ExtendedSubScores> {
        let trace = rollout(self.scenario, traj, self.sim)?;
        Ok(subscores(&trace, self.scenario, self.reference_progress, self.metrics))
    }

    pub fn pdms(&self, traj: &Trajectory) -> Result<f64> {
        pdms(&self.subscores(traj)?.base)
    }

    /// `(sub-scores, pdms, epdms)`.
    pub fn score(&self, traj: &Trajectory) -> Result<(ExtendedSubScores, f64, f64)> {
        let s = self.subscores(traj)?;
        let p = pdms(&s.base)?;
        let e = epdms(&s, &self.mask)?;
        Ok((s, p, e))
    }
}
