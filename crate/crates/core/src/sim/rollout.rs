use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::SimConfig;
use crate::error::Result;
use crate::types::{Trajectory, Waypoint};

/// Per-step bookkeeping of one open-loop rollout against scripted agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub dt: f64,
    pub ego: Vec<Waypoint>,
    /// `agents[k][a]` is agent `a` at step `k`.
    pub agents: Vec<Vec<Waypoint>>,
    pub ego_radius: f64,
    pub agent_radii: Vec<f64>,
    pub ego_init_velocity: [f64; 2],
    pub agent_init_velocity: Vec<[f64; 2]>,
    pub collision: Vec<bool>,
    pub off_drivable: Vec<bool>,
    /// Unsigned distance to the route centerline.
    pub lateral_deviation: Vec<f64>,
    /// Heading minus route tangent, wrapped.
    pub heading_error: Vec<f64>,
    pub min_ttc: f64,
    /// Signed longitudinal speed; step 0 is the initial ego speed.
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
    /// `jerk[1]` assumes zero acceleration one step before the plan starts.
    pub jerk: Vec<f64>,
    pub stop_line_crossing: Option<usize>,
    pub progress: f64,
    pub speed_floor: f64,
}

/// Closed disc test: touching boundaries count as a collision.
pub fn check_collision(pose_a: &Waypoint, foot_a: [f64; 2], pose_b: &Waypoint, foot_b: [f64; 2]) -> bool {
    let ra = foot_a[0].hypot(foot_a[1]);
    let rb = foot_b[0].hypot(foot_b[1]);
    pose_a.distance(pose_b) <= ra + rb
}

/// Time until two discs touch under constant relative velocity. `None` when
/// they never do, or when the relative speed is below `speed_floor`.
fn disc_time_to_contact(rel_pos: [f64; 2], rel_vel: [f64; 2], radius_sum: f64, speed_floor: f64) -> Option<f64> {
    let a = rel_vel[0] * rel_vel[0] + rel_vel[1] * rel_vel[1];
    if a.sqrt() < speed_floor {
        return None;
    }
    let b = 2.0 * (rel_pos[0] * rel_vel[0] + rel_pos[1] * rel_vel[1]);
    let c = rel_pos[0] * rel_pos[0] + rel_pos[1] * rel_pos[1] - radius_sum * radius_sum;
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    // numerically stable smaller root of a t^2 + b t + c = 0 (b < 0)
    let q = -0.5 * (b - disc.sqrt());
    Some((c / q).max(0.0))
}

fn velocities(poses: &[Waypoint], init: [f64; 2], dt: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(poses.len());
    out.push(init);
    for w in poses.windows(2) {
        out.push([(w[1].x - w[0].x) / dt, (w[1].y - w[0].y) / dt]);
    }
    out
}

/// Time-to-collision at every step: the smallest disc time-to-contact over
/// agents, using finite-difference velocities. Steps at or after an agent's
/// first overlap are skipped for that agent. Infinite when nothing closes in.
pub fn ttc_profile(trace: &SimulationTrace) -> Vec<f64> {
    let steps = trace.ego.len();
    let mut profile = vec![f64::INFINITY; steps];
    let ego_vel = velocities(&trace.ego, trace.ego_init_velocity, trace.dt);
    for (a, &ra) in trace.agent_radii.iter().enumerate() {
        let poses: Vec<Waypoint> = trace.agents.iter().map(|step| step[a]).collect();
        let vel = velocities(&poses, trace.agent_init_velocity[a], trace.dt);
        let radius_sum = trace.ego_radius + ra;
        for k in 0..steps {
            let e = trace.ego[k];
            let p = poses[k];
            if e.distance(&p) <= radius_sum {
                break;
            }
            let rel_pos = [p.x - e.x, p.y - e.y];
            let rel_vel = [vel[k][0] - ego_vel[k][0], vel[k][1] - ego_vel[k][1]];
            if let Some(t) = disc_time_to_contact(rel_pos, rel_vel, radius_sum, trace.speed_floor) {
                profile[k] = profile[k].min(t);
            }
        }
    }
    profile
}

pub fn min_ttc(trace: &SimulationTrace) -> f64 {
    ttc_profile(trace).into_iter().fold(f64::INFINITY, f64::min).max(0.0)
}

fn heading_vec(h: f64) -> [f64; 2] {
    let (s, c) = h.sin_cos();
    [c, s]
}

/// Plays `trajectory` against the scenario's scripted agents.
///
/// Agent motion never depends on the ego, so the agent half of the trace is
/// identical for every trajectory on one scenario.
pub fn rollout(scenario: &Scenario, trajectory: &Trajectory, cfg: &SimConfig) -> Result<SimulationTrace> {
    trajectory.expect_horizon(scenario.horizon())?;
    let dt = trajectory.dt();
    let ego: Vec<Waypoint> = trajectory.points().to_vec();
    let steps = ego.len();
    let agent_tracks: Vec<Vec<Waypoint>> = scenario.agents.iter().map(|a| a.poses(dt)).collect();
    let agents: Vec<Vec<Waypoint>> = (0..steps)
        .map(|k| agent_tracks.iter().map(|t| t[k]).collect())
        .collect();
    let ego_fp = cfg.ego_half_extents;

    let collision: Vec<bool> = (0..steps)
        .map(|k| {
            scenario
                .agents
                .iter()
                .zip(&agents[k])
                .any(|(a, pose)| check_collision(&ego[k], ego_fp, pose, a.half_extents))
        })
        .collect();
    let off_drivable: Vec<bool> = ego
        .iter()
        .map(|p| !scenario.drivable_grid.is_drivable(p.x, p.y))
        .collect();

    let projections: Vec<_> = ego.iter().map(|p| scenario.route.line.project(p.x, p.y)).collect();
    let lateral_deviation = projections.iter().map(|p| p.d.abs()).collect();
    let heading_error = ego
        .iter()
        .zip(&projections)
        .map(|(e, p)| crate::types::normalize_angle(e.h - p.heading))
        .collect();

    let mut speed = vec![scenario.ego_init.speed; steps];
    for k in 1..steps {
        let (a, b) = (ego[k - 1], ego[k]);
        let mid = a.h + 0.5 * crate::types::normalize_angle(b.h - a.h);
        let u = heading_vec(mid);
        speed[k] = ((b.x - a.x) * u[0] + (b.y - a.y) * u[1]) / dt;
    }
    let mut accel = vec![0.0; steps];
    for k in 1..steps {
        accel[k] = (speed[k] - speed[k - 1]) / dt;
    }
    let mut jerk = vec![0.0; steps];
    for k in 1..steps {
        jerk[k] = (accel[k] - accel[k - 1]) / dt;
    }

    let stop_line_crossing = scenario.traffic_light.and_then(|tl| {
        (1..steps).find(|&k| projections[k - 1].s < tl.stop_line_s && projections[k].s >= tl.stop_line_s)
    });
    let progress = projections[steps - 1].s - projections[0].s;

    let init_h = heading_vec(scenario.ego_init.pose.h);
    let mut trace = SimulationTrace {
        dt,
        ego,
        agents,
        ego_radius: ego_fp[0].hypot(ego_fp[1]),
        agent_radii: scenario.agents.iter().map(|a| a.radius()).collect(),
        ego_init_velocity: [init_h[0] * scenario.ego_init.speed, init_h[1] * scenario.ego_init.speed],
        agent_init_velocity: scenario
            .agents
            .iter()
            .map(|a| {
                let u = heading_vec(a.init.h);
                [u[0] * a.speed_profile[0], u[1] * a.speed_profile[0]]
            })
            .collect(),
        collision,
        off_drivable,
        lateral_deviation,
        heading_error,
        min_ttc: f64::INFINITY,
        speed,
        accel,
        jerk,
        stop_line_crossing,
        progress,
        speed_floor: cfg.ttc_speed_floor,
    };
    trace.min_ttc = min_ttc(&trace);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generate::{generate_scenario, straight_test_scenario};
    use crate::sim::scenario::{Agent, ScenarioFamily};
    use crate::types::{apply_offsets, OffsetStep};

    const FOOT: [f64; 2] = [1.5, 0.75];

    fn cruise(v: f64, cfg: &SimConfig) -> Trajectory {
        apply_offsets(
            Waypoint::ORIGIN,
            &vec![OffsetStep::new(v * cfg.dt, 0.0, 0.0); cfg.horizon],
            cfg.horizon,
            cfg.dt,
        )
        .unwrap()
    }

    #[test]
    fn collision_disc_cases() {
        let p = Waypoint::new(3.0, -1.0, 0.4);
        assert!(check_collision(&p, FOOT, &p, FOOT));
        assert!(!check_collision(&Waypoint::ORIGIN, [2.0, 2.0], &Waypoint::new(100.0, 0.0, 0.0), [2.0, 2.0]));
        // exact boundary: centers separated by ra + rb; use a 3-4-5 footprint so
        // the radius is exactly representable.
        let (fa, fb) = ([3.0, 4.0], [0.6, 0.8]);
        let (ra, rb) = (5.0, 1.0);
        assert!(check_collision(&Waypoint::ORIGIN, fa, &Waypoint::new(ra + rb, 0.0, 0.0), fb));
        assert!(!check_collision(&Waypoint::ORIGIN, fa, &Waypoint::new(ra + rb + 1e-9, 0.0, 0.0), fb));
    }

    #[test]
    fn empty_scene_never_collides() {
        let cfg = SimConfig::default();
        let scn = straight_test_scenario(&cfg, 10.0, vec![]);
        let trace = rollout(&scn, &cruise(10.0, &cfg), &cfg).unwrap();
        assert!(trace.collision.iter().all(|c| !c));
        assert_eq!(trace.min_ttc, f64::INFINITY);
        assert_eq!(trace.agents.len(), cfg.horizon + 1);
    }

    #[test]
    fn driving_through_static_agent_collides() {
        let cfg = SimConfig::default();
        let agent = Agent {
            init: Waypoint::new(20.0, 0.0, 0.0),
            half_extents: FOOT,
            speed_profile: vec![0.0; cfg.horizon + 1],
        };
        let scn = straight_test_scenario(&cfg, 10.0, vec![agent]);
        let trace = rollout(&scn, &cruise(10.0, &cfg), &cfg).unwrap();
        // ego at x = 20 on step 4
        assert!(trace.collision[4]);
        assert!(!trace.collision[0]);
    }

    #[test]
    fn ttc_of_ego_closing_on_static_agent() {
        let cfg = SimConfig::default();
        let r = FOOT[0].hypot(FOOT[1]);
        // surface gap of 20 m at 10 m/s, nudged so the contact step overlaps
        // instead of grazing in floating point
        let agent = Agent {
            init: Waypoint::new(20.0 - 1e-7 + 2.0 * r, 0.0, 0.0),
            half_extents: FOOT,
            speed_profile: vec![0.0; cfg.horizon + 1],
        };
        let scn = straight_test_scenario(&cfg, 10.0, vec![agent]);
        let trace = rollout(&scn, &cruise(10.0, &cfg), &cfg).unwrap();
        let profile = ttc_profile(&trace);
        // gap / closing speed at the planning instant
        assert!((profile[0] - 2.0).abs() < 1e-6);
        // first contact step lands within one step of 2.0 s
        let contact = trace.collision.iter().position(|&c| c).unwrap() as f64 * cfg.dt;
        assert!((contact - 2.0).abs() <= cfg.dt);
        // the minimum over the approach is the last pre-contact step: 5 m at 10 m/s
        assert!((trace.min_ttc - 0.5).abs() < 1e-6);
    }

    #[test]
    fn ttc_constant_closing_speed() {
        let cfg = SimConfig::default();
        let r = FOOT[0].hypot(FOOT[1]);
        // agent drives toward the ego at 5 m/s; ego stands still; surface gap 10 m
        let agent = Agent {
            init: Waypoint::new(10.0 + 2.0 * r, 0.0, std::f64::consts::PI),
            half_extents: FOOT,
            speed_profile: vec![5.0; cfg.horizon + 1],
        };
        let mut scn = straight_test_scenario(&cfg, 0.0, vec![agent]);
        scn.ego_init.speed = 0.0;
        let trace = rollout(&scn, &Trajectory::stationary(Waypoint::ORIGIN, cfg.horizon, cfg.dt), &cfg).unwrap();
        let profile = ttc_profile(&trace);
        assert!((profile[0] - 2.0).abs() < 1e-9);
        for k in 0..4 {
            assert!((profile[k] - (2.0 - k as f64 * cfg.dt)).abs() < 1e-9);
        }
    }

    #[test]
    fn receding_agents_give_infinite_ttc() {
        let cfg = SimConfig::default();
        let agent = Agent {
            init: Waypoint::new(15.0, 0.0, 0.0),
            half_extents: FOOT,
            speed_profile: vec![14.0; cfg.horizon + 1],
        };
        let scn = straight_test_scenario(&cfg, 10.0, vec![agent]);
        let trace = rollout(&scn, &cruise(10.0, &cfg), &cfg).unwrap();
        assert_eq!(trace.min_ttc, f64::INFINITY);
    }

    #[test]
    fn passing_in_the_next_lane_is_not_a_ttc_event() {
        let cfg = SimConfig::default();
        let agent = Agent {
            init: Waypoint::new(20.0, cfg.lane_width, 0.0),
            half_extents: FOOT,
            speed_profile: vec![0.0; cfg.horizon + 1],
        };
        let scn = straight_test_scenario(&cfg, 10.0, vec![agent]);
        let trace = rollout(&scn, &cruise(10.0, &cfg), &cfg).unwrap();
        assert_eq!(trace.min_ttc, f64::INFINITY);
        assert!(trace.collision.iter().all(|c| !c));
    }

    #[test]
    fn leaving_the_grid_is_off_drivable() {
        let cfg = SimConfig::default();
        let scn = straight_test_scenario(&cfg, 10.0, vec![]);
        let far = apply_offsets(
            Waypoint::ORIGIN,
            &vec![OffsetStep::new(0.0, 10.0, 0.0); cfg.horizon],
            cfg.horizon,
            cfg.dt,
        )
        .unwrap();
        let trace = rollout(&scn, &far, &cfg).unwrap();
        assert!(*trace.off_drivable.last().unwrap());
        assert!(!trace.off_drivable[0]);
    }

    #[test]
    fn rollout_is_pure_and_agents_are_ego_independent() {
        let cfg = SimConfig::default();
        let scn = generate_scenario(ScenarioFamily::LeadBrake, 3, &cfg).unwrap();
        let a = rollout(&scn, &scn.expert, &cfg).unwrap();
        let b = rollout(&scn, &scn.expert, &cfg).unwrap();
        assert_eq!(a, b);
        let c = rollout(&scn, &cruise(3.0, &cfg), &cfg).unwrap();
        assert_eq!(a.agents, c.agents);
    }

    #[test]
    fn wrong_length_trajectory_is_rejected() {
        let cfg = SimConfig::default();
        let scn = straight_test_scenario(&cfg, 10.0, vec![]);
        let short = Trajectory::stationary(Waypoint::ORIGIN, 3, cfg.dt);
        assert!(rollout(&scn, &short, &cfg).is_err());
    }
}
