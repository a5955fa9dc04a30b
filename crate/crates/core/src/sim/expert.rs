//! Rule-based demonstrations: an IDM-style longitudinal planner that follows
//! the route centerline, plus deliberate corruptions that emulate flawed
//! human driving.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::SimConfig;
use crate::error::{Error, Result};
use crate::types::{normalize_angle, Trajectory, Waypoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    #[default]
    None,
    /// Smooth lateral drift off the drivable area.
    OffroadDrift,
    /// Ignores the traffic light.
    RedLightRun,
    /// Crawls at a fraction of the speed limit.
    SlowProgress,
}

impl Corruption {
    pub const ALL: [Corruption; 4] = [
        Corruption::None,
        Corruption::OffroadDrift,
        Corruption::RedLightRun,
        Corruption::SlowProgress,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Corruption::None => "none",
            Corruption::OffroadDrift => "offroad_drift",
            Corruption::RedLightRun => "red_light_run",
            Corruption::SlowProgress => "slow_progress",
        }
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Corruption::ALL
            .into_iter()
            .find(|c| c.name().replace('_', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown corruption '{s}'")))
    }
}

// IDM constants
const IDM_ACCEL: f64 = 1.5;
const IDM_DECEL: f64 = 2.0;
const IDM_GAP: f64 = 3.0;
const IDM_HEADWAY: f64 = 1.2;
const STOP_GAP: f64 = 1.5;
const MAX_ACCEL: f64 = 2.0;
const MAX_BRAKE: f64 = 2.8;
const MAX_JERK: f64 = 4.0;
/// Agents closer than this to the route centerline count as in-path.
const CORRIDOR: f64 = 2.5;
const SLOW_FACTOR: f64 = 0.35;
const DRIFT_MARGIN: f64 = 1.5;

/// Route arclength reached at every step when driving toward `target_speed`.
pub(crate) fn plan_arclength(scenario: &Scenario, cfg: &SimConfig, target_speed: f64, respect_light: bool) -> Vec<f64> {
    let horizon = scenario.horizon();
    let dt = scenario.dt();
    let route = &scenario.route.line;
    let ego_r = cfg.ego_half_extents[0].hypot(cfg.ego_half_extents[1]);
    let tracks: Vec<Vec<Waypoint>> = scenario.agents.iter().map(|a| a.poses(dt)).collect();
    let target = target_speed.max(0.1);

    let start = scenario.ego_init.pose;
    let mut s = vec![route.project(start.x, start.y).s];
    let mut v = scenario.ego_init.speed.max(0.0);
    let mut a_prev = 0.0;
    for k in 0..horizon {
        let sk = s[k];
        let mut interaction: f64 = 0.0;
        let mut add_obstacle = |gap: f64, lead_speed: f64, s0: f64| {
            let gap = gap.max(0.1);
            let dv = v - lead_speed;
            let s_star = s0 + (v * IDM_HEADWAY + v * dv / (2.0 * (IDM_ACCEL * IDM_DECEL).sqrt())).max(0.0);
            interaction = interaction.max((s_star / gap).powi(2));
        };
        for (agent, track) in scenario.agents.iter().zip(&tracks) {
            let p = track[k];
            let proj = route.project(p.x, p.y);
            if proj.d.abs() < CORRIDOR && proj.s > sk {
                let along = agent.speed_profile[k] * normalize_angle(p.h - proj.heading).cos();
                add_obstacle(proj.s - sk - ego_r - agent.radius(), along, IDM_GAP);
            }
        }
        if let (true, Some(tl)) = (respect_light, scenario.traffic_light) {
            if sk < tl.stop_line_s && (tl.is_red(k) || tl.is_red(k + 1)) {
                add_obstacle(tl.stop_line_s - sk - 0.5, 0.0, STOP_GAP);
            }
        }
        let free = 1.0 - (v / target).powi(4);
        let mut a = IDM_ACCEL * (free - interaction);
        let dj = MAX_JERK * dt;
        a = a.clamp(a_prev - dj, a_prev + dj).clamp(-MAX_BRAKE, MAX_ACCEL);
        let mut v_next = v + a * dt;
        if v_next < 0.0 {
            v_next = 0.0;
            a = -v / dt;
        }
        s.push(sk + 0.5 * (v + v_next) * dt);
        v = v_next;
        a_prev = a;
    }
    s
}

/// Arclength the unconstrained rule planner covers at the speed limit, the
/// denominator of the progress sub-score.
pub fn reference_progress(scenario: &Scenario, cfg: &SimConfig) -> f64 {
    let s = plan_arclength(scenario, cfg, scenario.route.speed_limit, true);
    s[s.len() - 1] - s[0]
}

/// Centerline tracking at the speed limit, obeying lights and leads.
pub fn reference_trajectory(scenario: &Scenario, cfg: &SimConfig) -> Trajectory {
    let s = plan_arclength(scenario, cfg, scenario.route.speed_limit, true);
    let mut points = poses_along(scenario, &s, &vec![0.0; s.len()]);
    points[0] = scenario.ego_init.pose;
    Trajectory::new(points, scenario.dt()).expect("planner output is finite")
}

/// Lateral room on each side of the route at arclength `s`: `(left, right)`.
fn drivable_extent(scenario: &Scenario, s: f64) -> (f64, f64) {
    let probe = |sign: f64| {
        let mut d = 0.0;
        while d < 15.0 {
            let p = scenario.route.line.offset_pose_at(s, sign * (d + 0.25));
            if !scenario.drivable_grid.is_drivable(p.x, p.y) {
                break;
            }
            d += 0.25;
        }
        d
    };
    (probe(1.0), probe(-1.0))
}

fn poses_along(scenario: &Scenario, s: &[f64], d: &[f64]) -> Vec<Waypoint> {
    let line = &scenario.route.line;
    let n = s.len();
    (0..n)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let ds = s[hi] - s[lo];
            let slope = if ds > 1e-6 { (d[hi] - d[lo]) / ds } else { 0.0 };
            let p = line.offset_pose_at(s[k], d[k]);
            Waypoint::new(p.x, p.y, p.h + slope.atan())
        })
        .collect()
}

/// Demonstration for `scenario`. The clean variant tracks the centerline at
/// 85-95% of the speed limit (the fraction is a pure function of the id);
/// corruptions each break one rule.
pub fn synthesize_expert(scenario: &Scenario, corruption: Corruption, cfg: &SimConfig) -> Trajectory {
    let v_lim = scenario.route.speed_limit;
    let frac = 0.85 + 0.1 * (crate::rng::fnv1a(scenario.id.as_bytes()) % 1000) as f64 / 999.0;
    let (target, respect) = match corruption {
        Corruption::None | Corruption::OffroadDrift => (frac * v_lim, true),
        Corruption::RedLightRun => (frac * v_lim, false),
        Corruption::SlowProgress => (SLOW_FACTOR * v_lim, true),
    };
    let s = plan_arclength(scenario, cfg, target, respect);
    let horizon = s.len() - 1;
    let mut d = vec![0.0; s.len()];
    if corruption == Corruption::OffroadDrift {
        let (left, right) = drivable_extent(scenario, s[horizon]);
        let (sign, room) = if left <= right { (1.0, left) } else { (-1.0, right) };
        let amp = room + DRIFT_MARGIN;
        for (k, dk) in d.iter_mut().enumerate() {
            let phase = std::f64::consts::PI * k as f64 / horizon as f64;
            *dk = sign * amp * 0.5 * (1.0 - phase.cos());
        }
    }
    let mut points = poses_along(scenario, &s, &d);
    points[0] = scenario.ego_init.pose;
    Trajectory::new(points, scenario.dt()).expect("planner output is finite")
}
