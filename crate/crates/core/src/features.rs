//! Fixed-length scene encoding shared by every learned component.
//!
//! Layout of the default 256-wide vector:
//!
//! | slots       | content                                                   |
//! |-------------|-----------------------------------------------------------|
//! | `0..64`     | 8x8 pooled drivable fraction                              |
//! | `64..96`    | left/right drivable room at 16 route stations             |
//! | `96..128`   | route centerline samples at the same stations             |
//! | `128..182`  | agent occupancy: 9 steps x 3 lanes x (presence, position) |
//! | `182..186`  | ego speed, speed limit, heading error, lateral offset     |
//! | `186..197`  | traffic light: present, stop line, red flag per step      |
//! | last 3      | driving command one-hot                                   |
//!
//! Remaining slots are zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Scenario;
use crate::types::{normalize_angle, DrivingCommand, Trajectory};

pub const DEFAULT_FEATURE_DIM: usize = 256;
/// Smallest width that fits every block.
pub const MIN_FEATURE_DIM: usize = 200;

pub const GRID_SLOTS: std::ops::Range<usize> = 0..64;
pub const ROOM_SLOTS: std::ops::Range<usize> = 64..96;
pub const ROUTE_SLOTS: std::ops::Range<usize> = 96..128;
pub const AGENT_SLOTS: std::ops::Range<usize> = 128..182;
pub const EGO_SLOTS: std::ops::Range<usize> = 182..186;
pub const LIGHT_SLOTS: std::ops::Range<usize> = 186..197;

const STATIONS: usize = 16;
const STATION_STEP: f64 = 4.0;
const OCC_STEPS: usize = 9;
const POS_SCALE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFeatures(pub Vec<f64>);

impl SceneFeatures {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn command_slots(dim: usize) -> std::ops::Range<usize> {
        dim - DrivingCommand::COUNT..dim
    }
}

fn room(scenario: &Scenario, s: f64, sign: f64) -> f64 {
    let mut d = 0.0;
    while d < 8.0 {
        let p = scenario.route.line.offset_pose_at(s, sign * (d + 0.5));
        if !scenario.drivable_grid.is_drivable(p.x, p.y) {
            break;
        }
        d += 0.5;
    }
    d
}

pub fn encode_scene(scenario: &Scenario) -> SceneFeatures {
    encode_scene_dim(scenario, DEFAULT_FEATURE_DIM).expect("default width fits")
}

pub fn encode_scene_dim(scenario: &Scenario, dim: usize) -> Result<SceneFeatures> {
    if dim < MIN_FEATURE_DIM {
        return Err(Error::Config(format!("feature dimension {dim} below minimum {MIN_FEATURE_DIM}")));
    }
    let mut f = vec![0.0; dim];

    let g = &scenario.drivable_grid;
    let (bw, bh) = (g.width.div_ceil(8), g.height.div_ceil(8));
    for bj in 0..8 {
        for bi in 0..8 {
            let (mut on, mut total) = (0usize, 0usize);
            for j in bj * bh..((bj + 1) * bh).min(g.height) {
                for i in bi * bw..((bi + 1) * bw).min(g.width) {
                    total += 1;
                    on += usize::from(g.cells[j * g.width + i]);
                }
            }
            f[GRID_SLOTS.start + bj * 8 + bi] = if total > 0 { on as f64 / total as f64 } else { 0.0 };
        }
    }

    let line = &scenario.route.line;
    let ego = scenario.ego_init.pose;
    let ego_proj = line.project(ego.x, ego.y);
    for k in 0..STATIONS {
        let s = ego_proj.s + k as f64 * STATION_STEP;
        f[ROOM_SLOTS.start + 2 * k] = room(scenario, s, 1.0) / 8.0;
        f[ROOM_SLOTS.start + 2 * k + 1] = room(scenario, s, -1.0) / 8.0;
        let p = line.pose_at(s);
        f[ROUTE_SLOTS.start + 2 * k] = (p.x - ego.x) / POS_SCALE;
        f[ROUTE_SLOTS.start + 2 * k + 1] = (p.y - ego.y) / POS_SCALE;
    }

    let dt = scenario.dt();
    let horizon = scenario.horizon();
    let tracks: Vec<_> = scenario.agents.iter().map(|a| a.poses(dt)).collect();
    for step in 0..OCC_STEPS {
        let k = step.min(horizon);
        for lane in 0..3 {
            let mut nearest: Option<f64> = None;
            for track in &tracks {
                let p = line.project(track[k].x, track[k].y);
                let lane_of = if p.d < -2.0 {
                    0
                } else if p.d > 2.0 {
                    2
                } else {
                    1
                };
                let rel = p.s - ego_proj.s;
                if lane_of == lane && p.d.abs() < 6.0 && rel > -10.0 && rel < 60.0 {
                    nearest = Some(nearest.map_or(rel, |n: f64| if rel.abs() < n.abs() { rel } else { n }));
                }
            }
            if let Some(rel) = nearest {
                let base = AGENT_SLOTS.start + (step * 3 + lane) * 2;
                f[base] = 1.0;
                f[base + 1] = rel / POS_SCALE;
            }
        }
    }

    f[EGO_SLOTS.start] = scenario.ego_init.speed / 20.0;
    f[EGO_SLOTS.start + 1] = scenario.route.speed_limit / 20.0;
    f[EGO_SLOTS.start + 2] = scenario.heading_error(&ego);
    f[EGO_SLOTS.start + 3] = ego_proj.d;

    if let Some(tl) = scenario.traffic_light {
        f[LIGHT_SLOTS.start] = 1.0;
        f[LIGHT_SLOTS.start + 1] = (tl.stop_line_s - ego_proj.s) / POS_SCALE;
        for step in 0..OCC_STEPS {
            f[LIGHT_SLOTS.start + 2 + step] = if tl.is_red(step) { 1.0 } else { 0.0 };
        }
    }

    let cmd = SceneFeatures::command_slots(dim);
    f[cmd].copy_from_slice(&scenario.command.one_hot());
    Ok(SceneFeatures(f))
}

/// Values per planned step in [`trajectory_probe`].
pub const PROBE_PER_STEP: usize = 11;
/// Nominal ego disc radius for the time-to-contact channel.
const PROBE_EGO_RADIUS: f64 = 1.7;
const PROBE_TAU_MAX: f64 = 3.0;

/// Queries the scene along a candidate trajectory, one block per step
/// `1..=T`: drivable flag, clearance to the nearest agent and its position in
/// the waypoint frame, route offset, heading error, signed stop-line distance
/// while the light is red, speed, acceleration, jerk, and the shortest
/// constant-velocity time to contact with any agent.
pub fn trajectory_probe(scenario: &Scenario, traj: &Trajectory) -> Vec<f64> {
    let dt = traj.dt();
    let pts = traj.points();
    let tracks: Vec<_> = scenario.agents.iter().map(|a| a.poses(dt)).collect();
    let line = &scenario.route.line;
    let mut out = Vec::with_capacity(PROBE_PER_STEP * (pts.len() - 1));
    let (mut v_prev, mut a_prev) = (scenario.ego_init.speed, 0.0);
    for k in 1..pts.len() {
        let p = pts[k];
        let (sin, cos) = p.h.sin_cos();
        let mut clearance = 3.0;
        let mut rel = [0.0, 0.0];
        let mut tau = PROBE_TAU_MAX;
        let ego_vel = [(p.x - pts[k - 1].x) / dt, (p.y - pts[k - 1].y) / dt];
        for (agent, track) in scenario.agents.iter().zip(&tracks) {
            let q = track[k.min(track.len() - 1)];
            let q_prev = track[(k - 1).min(track.len() - 1)];
            let (rx, ry) = (q.x - p.x, q.y - p.y);
            let dist = rx.hypot(ry);
            let rel_vel = [(q.x - q_prev.x) / dt - ego_vel[0], (q.y - q_prev.y) / dt - ego_vel[1]];
            let closing = -(rx * rel_vel[0] + ry * rel_vel[1]) / dist.max(1e-6);
            let gap = dist - agent.radius() - PROBE_EGO_RADIUS;
            if gap <= 0.0 {
                tau = 0.0;
            } else if closing > 1e-6 {
                tau = tau.min(gap / closing);
            }
            let c = ((p.x - q.x).hypot(p.y - q.y) - agent.radius()) / 10.0;
            if c < clearance {
                clearance = c;
                let (dx, dy) = (q.x - p.x, q.y - p.y);
                rel = [(cos * dx + sin * dy) / 20.0, (-sin * dx + cos * dy) / 5.0];
            }
        }
        let proj = line.project(p.x, p.y);
        let light = scenario
            .traffic_light
            .filter(|tl| tl.is_red(k))
            .map_or(0.0, |tl| ((proj.s - tl.stop_line_s) / 10.0).clamp(-1.0, 1.0) + 1.5);
        let mid = pts[k - 1].h + 0.5 * normalize_angle(p.h - pts[k - 1].h);
        let v = ((p.x - pts[k - 1].x) * mid.cos() + (p.y - pts[k - 1].y) * mid.sin()) / dt;
        let a = (v - v_prev) / dt;
        let j = (a - a_prev) / dt;
        out.extend_from_slice(&[
            f64::from(u8::from(scenario.drivable_grid.is_drivable(p.x, p.y))),
            clearance.clamp(-1.0, 3.0),
            rel[0],
            rel[1],
            proj.d / 5.0,
            normalize_angle(p.h - proj.heading),
            light,
            v / 10.0,
            (a / 5.0).clamp(-3.0, 3.0),
            (j / 10.0).clamp(-3.0, 3.0),
            tau / PROBE_TAU_MAX,
        ]);
        (v_prev, a_prev) = (v, a);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scenario, ScenarioFamily, SimConfig};

    #[test]
    fn encoding_is_deterministic() {
        let scn = generate_scenario(ScenarioFamily::LeadBrake, 4, &SimConfig::default()).unwrap();
        assert_eq!(encode_scene(&scn), encode_scene(&scn));
        assert!(encode_scene(&scn).0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn command_change_touches_only_command_slots() {
        let scn = generate_scenario(ScenarioFamily::Turn, 1, &SimConfig::default()).unwrap();
        let mut other = scn.clone();
        other.command = DrivingCommand::Straight;
        assert_ne!(scn.command, other.command);
        let (a, b) = (encode_scene(&scn), encode_scene(&other));
        let cmd = SceneFeatures::command_slots(DEFAULT_FEATURE_DIM);
        for i in 0..DEFAULT_FEATURE_DIM {
            if cmd.contains(&i) {
                continue;
            }
            assert_eq!(a.0[i], b.0[i], "slot {i}");
        }
        assert_ne!(a.0[cmd.clone()], b.0[cmd]);
    }

    #[test]
    fn no_agents_means_empty_occupancy() {
        let scn = generate_scenario(ScenarioFamily::Turn, 2, &SimConfig::default()).unwrap();
        assert!(scn.agents.is_empty());
        let f = encode_scene(&scn);
        assert!(f.0[AGENT_SLOTS].iter().all(|&v| v == 0.0));
        let with = generate_scenario(ScenarioFamily::StraightFollow, 2, &SimConfig::default()).unwrap();
        assert!(encode_scene(&with).0[AGENT_SLOTS].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn probe_sees_collisions_and_kinematics() {
        let sim = SimConfig::default();
        let scn = generate_scenario(ScenarioFamily::LeadBrake, 3, &sim).unwrap();
        let probe = trajectory_probe(&scn, &scn.expert);
        assert_eq!(probe.len(), PROBE_PER_STEP * scn.horizon());
        assert!(probe.iter().all(|v| v.is_finite()));
        // Driving straight through the lead vehicle leaves no clearance.
        let lead = scn.agents[0].poses(scn.dt());
        let pts: Vec<_> = (0..=scn.horizon()).map(|k| lead[k]).collect();
        let rammed = Trajectory::new(pts, scn.dt()).unwrap();
        let probe = trajectory_probe(&scn, &rammed);
        assert!((1..=scn.horizon()).all(|k| probe[(k - 1) * PROBE_PER_STEP + 1] < 0.0));
    }

    #[test]
    fn too_narrow_is_rejected() {
        let scn = generate_scenario(ScenarioFamily::Turn, 2, &SimConfig::default()).unwrap();
        assert!(encode_scene_dim(&scn, 64).is_err());
        assert_eq!(encode_scene_dim(&scn, 300).unwrap().dim(), 300);
    }
}
