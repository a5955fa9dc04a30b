//! Procedural scenario families.

use rand::Rng as _;

use super::expert::{plan_arclength, synthesize_expert, Corruption};
use super::scenario::{
    Agent, DrivableGrid, EgoState, Polyline, Route, Scenario, ScenarioFamily, TrafficLight, SCENARIO_SCHEMA,
};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};
use crate::types::{DrivingCommand, Trajectory, Waypoint};

const CAR: [f64; 2] = [1.5, 0.75];
const ROUTE_START: f64 = -8.0;
const ROUTE_LEN: f64 = 110.0;

/// A stretch of road: drivable between `-right` and `left` of `line`.
struct Road {
    line: Polyline,
    left: f64,
    right: f64,
}

fn straight_line() -> Polyline {
    let n = ROUTE_LEN as usize;
    Polyline::from_points((0..=n).map(|i| [ROUTE_START + i as f64, 0.0]).collect(), ROUTE_START)
}

fn rasterize(cfg: &SimConfig, roads: &[Road]) -> Result<DrivableGrid> {
    let n = (cfg.grid_size / cfg.grid_cell).round() as usize;
    if n == 0 || cfg.grid_cell <= 0.0 {
        return Err(Error::Config("grid must have at least one cell".into()));
    }
    let origin = [-cfg.grid_rear, -0.5 * cfg.grid_size];
    let mut grid = DrivableGrid {
        origin,
        cell_size: cfg.grid_cell,
        width: n,
        height: n,
        cells: vec![false; n * n],
    };
    for j in 0..n {
        for i in 0..n {
            let (x, y) = grid.cell_center(i, j);
            grid.cells[j * n + i] = roads.iter().any(|r| {
                let p = r.line.project(x, y);
                p.s > r.line.start() && p.s < r.line.end() && p.d <= r.left && p.d >= -r.right
            });
        }
    }
    Ok(grid)
}

/// Ego lane plus one neighbouring lane on `side` (+1 left, -1 right).
fn two_lane(line: Polyline, side: f64, lane: f64) -> Road {
    let half = 0.5 * lane;
    let (left, right) = if side > 0.0 { (half + lane, half) } else { (half, half + lane) };
    Road { line, left, right }
}

fn lane_agent(x: f64, y: f64, speeds: Vec<f64>) -> Agent {
    Agent {
        init: Waypoint::new(x, y, 0.0),
        half_extents: CAR,
        speed_profile: speeds,
    }
}

fn side(rng: &mut Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn assemble(
    id: String,
    cfg: &SimConfig,
    speed: f64,
    agents: Vec<Agent>,
    roads: &[Road],
    route: Route,
    traffic_light: Option<TrafficLight>,
    command: DrivingCommand,
) -> Result<Scenario> {
    let pose = route.line.offset_pose_at(0.0, 0.0);
    let mut scn = Scenario {
        schema: SCENARIO_SCHEMA.into(),
        id,
        ego_init: EgoState { pose, speed },
        agents,
        drivable_grid: rasterize(cfg, roads)?,
        route,
        traffic_light,
        expert: Trajectory::stationary(pose, cfg.horizon, cfg.dt),
        command,
    };
    scn.expert = synthesize_expert(&scn, Corruption::None, cfg);
    scn.validate(cfg.horizon)?;
    Ok(scn)
}

/// Deterministic scenario for `(family, seed)`; the ego starts at the origin
/// heading along +x.
pub fn generate_scenario(family: ScenarioFamily, seed: u64, cfg: &SimConfig) -> Result<Scenario> {
    if cfg.horizon < 2 || cfg.dt <= 0.0 {
        return Err(Error::Config("horizon must be >= 2 and dt positive".into()));
    }
    let mut rng = seeded(derive_seed(seed, family.name()));
    let id = format!("{}_{seed:06}", family.name());
    let steps = cfg.horizon + 1;
    let lane = cfg.lane_width;
    let r_car = CAR[0].hypot(CAR[1]);
    match family {
        ScenarioFamily::StraightFollow | ScenarioFamily::LeadBrake => {
            let v_lim: f64 = rng.random_range(9.0..12.0);
            let v0 = v_lim * rng.random_range(0.75..0.95);
            let side = side(&mut rng);
            let mut agents = Vec::new();
            if family == ScenarioFamily::StraightFollow {
                let v_lead = v_lim * rng.random_range(0.55..0.85);
                let x = 2.0 * r_car + rng.random_range(12.0..24.0) + (v0 - v_lead).powi(2) / 4.0;
                agents.push(lane_agent(x, 0.0, vec![v_lead; steps]));
            } else {
                let v_lead = v0 * rng.random_range(0.95..1.05);
                let x = 2.0 * r_car + 4.0 + v0 * rng.random_range(1.6..2.4);
                let k_brake = rng.random_range(1..=2usize).min(cfg.horizon - 1);
                let time_left = (cfg.horizon - k_brake - 1).max(1) as f64 * cfg.dt;
                let decel = rng.random_range(3.0..5.0f64).max(v_lead / time_left);
                let speeds = (0..steps)
                    .map(|k| {
                        if k < k_brake {
                            v_lead
                        } else {
                            (v_lead - decel * (k - k_brake) as f64 * cfg.dt).max(0.0)
                        }
                    })
                    .collect();
                agents.push(lane_agent(x, 0.0, speeds));
            }
            if rng.random_bool(0.5) {
                let x = rng.random_range(-6.0..30.0);
                let v = v_lim * rng.random_range(0.8..1.1);
                agents.push(lane_agent(x, side * lane, vec![v; steps]));
            }
            let roads = [two_lane(straight_line(), side, lane)];
            let route = Route {
                line: straight_line(),
                speed_limit: v_lim,
            };
            assemble(id, cfg, v0, agents, &roads, route, None, DrivingCommand::Straight)
        }
        ScenarioFamily::LaneChange => {
            let v_lim: f64 = rng.random_range(9.0..12.0);
            let v0 = v_lim * rng.random_range(0.75..0.95);
            let side = side(&mut rng);
            let x_start = rng.random_range(1.0..4.0);
            let length = rng.random_range(14.0..18.0);
            let x_obstacle = rng.random_range(26.0..34.0);
            let n = ROUTE_LEN as usize;
            let pts = (0..=n)
                .map(|i| {
                    let x = ROUTE_START + i as f64;
                    let u = ((x - x_start) / length).clamp(0.0, 1.0);
                    [x, side * lane * u * u * (3.0 - 2.0 * u)]
                })
                .collect();
            let route = Route {
                line: Polyline::from_points(pts, ROUTE_START),
                speed_limit: v_lim,
            };
            let mut agents = vec![lane_agent(x_obstacle, 0.0, vec![0.0; steps])];
            if rng.random_bool(0.5) {
                let x = rng.random_range(40.0..55.0);
                agents.push(lane_agent(x, side * lane, vec![v_lim * rng.random_range(0.9..1.1); steps]));
            }
            let roads = [two_lane(straight_line(), side, lane)];
            assemble(id, cfg, v0, agents, &roads, route, None, DrivingCommand::Straight)
        }
        ScenarioFamily::Turn => {
            let v_lim: f64 = rng.random_range(6.0..8.0);
            let v0 = v_lim * rng.random_range(0.8..1.0);
            let dir = side(&mut rng);
            let x_arc = rng.random_range(4.0..10.0);
            let radius = rng.random_range(22.0..35.0);
            let sweep = rng.random_range(70.0f64..100.0).to_radians();
            let arc_len = radius * sweep;
            let n = ROUTE_LEN as usize;
            let pts = (0..=n)
                .map(|i| {
                    let s = ROUTE_START + i as f64;
                    if s <= x_arc {
                        [s, 0.0]
                    } else if s <= x_arc + arc_len {
                        let phi = (s - x_arc) / radius;
                        [x_arc + radius * phi.sin(), dir * radius * (1.0 - phi.cos())]
                    } else {
                        let rest = s - x_arc - arc_len;
                        let (sn, cs) = sweep.sin_cos();
                        [
                            x_arc + radius * sn + rest * cs,
                            dir * (radius * (1.0 - cs) + rest * sn),
                        ]
                    }
                })
                .collect();
            let line = Polyline::from_points(pts, ROUTE_START);
            let extra = side(&mut rng);
            let roads = [two_lane(line.clone(), extra, lane)];
            let route = Route {
                line,
                speed_limit: v_lim,
            };
            let command = if dir > 0.0 {
                DrivingCommand::TurnLeft
            } else {
                DrivingCommand::TurnRight
            };
            assemble(id, cfg, v0, vec![], &roads, route, None, command)
        }
        ScenarioFamily::RedLight => {
            let v_lim: f64 = rng.random_range(9.0..12.0);
            let v0 = v_lim * rng.random_range(0.75..0.95);
            let side = side(&mut rng);
            let stop_s = v0 * v0 / 4.4 + rng.random_range(4.0..7.0);
            let tail = rng.random_range(0.0..1.0f64);
            let roads = [two_lane(straight_line(), side, lane)];
            let route = Route {
                line: straight_line(),
                speed_limit: v_lim,
            };
            let light = TrafficLight {
                stop_line_s: stop_s,
                red: [0, cfg.horizon],
            };
            let mut scn = assemble(id.clone(), cfg, v0, vec![], &roads, route.clone(), Some(light), DrivingCommand::Straight)?;
            // stretch the red phase past the step a light-ignoring driver would cross
            let s = plan_arclength(&scn, cfg, 0.9 * v_lim, false);
            let k_cross = (1..s.len()).find(|&k| s[k - 1] < stop_s && s[k] >= stop_s);
            let r1 = match k_cross {
                Some(k) if k < cfg.horizon => k + 1 + (tail * (cfg.horizon - k) as f64) as usize,
                _ => cfg.horizon,
            };
            scn.traffic_light = Some(TrafficLight {
                stop_line_s: stop_s,
                red: [0, r1.min(cfg.horizon)],
            });
            scn.expert = synthesize_expert(&scn, Corruption::None, cfg);
            scn.validate(cfg.horizon)?;
            Ok(scn)
        }
    }
}

/// Straight two-lane road (neighbour lane on the left) with the given agents,
/// and an expert cruising at `ego_speed`.
pub fn straight_test_scenario(cfg: &SimConfig, ego_speed: f64, agents: Vec<Agent>) -> Scenario {
    let roads = [two_lane(straight_line(), 1.0, cfg.lane_width)];
    let pose = Waypoint::ORIGIN;
    let expert_pts = (0..=cfg.horizon)
        .map(|k| Waypoint::new(ego_speed * cfg.dt * k as f64, 0.0, 0.0))
        .collect();
    Scenario {
        schema: SCENARIO_SCHEMA.into(),
        id: "straight_test".into(),
        ego_init: EgoState { pose, speed: ego_speed },
        agents,
        drivable_grid: rasterize(cfg, &roads).expect("default grid"),
        route: Route {
            line: straight_line(),
            speed_limit: ego_speed.max(1.0),
        },
        traffic_light: None,
        expert: Trajectory::new(expert_pts, cfg.dt).expect("finite"),
        command: DrivingCommand::Straight,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rollout;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SimConfig::default();
        for fam in ScenarioFamily::ALL {
            let a = generate_scenario(fam, 1, &cfg).unwrap();
            let b = generate_scenario(fam, 1, &cfg).unwrap();
            assert_eq!(a.to_json(), b.to_json());
            let c = generate_scenario(fam, 2, &cfg).unwrap();
            assert_ne!(a.to_json(), c.to_json());
        }
    }

    #[test]
    fn lead_brake_has_a_stopping_agent() {
        let cfg = SimConfig::default();
        for seed in 0..20 {
            let scn = generate_scenario(ScenarioFamily::LeadBrake, seed, &cfg).unwrap();
            assert!(scn.agents.iter().any(|a| {
                *a.speed_profile.last().unwrap() == 0.0
                    && a.speed_profile.windows(2).all(|w| w[1] <= w[0])
                    && a.speed_profile[0] > 0.0
            }));
        }
    }

    #[test]
    fn red_interval_covers_the_unconstrained_crossing() {
        let cfg = SimConfig::default();
        let scn = generate_scenario(ScenarioFamily::RedLight, 7, &cfg).unwrap();
        let tl = scn.traffic_light.unwrap();
        let runner = synthesize_expert(&scn, Corruption::RedLightRun, &cfg);
        let trace = rollout(&scn, &runner, &cfg).unwrap();
        let k = trace.stop_line_crossing.expect("light runner crosses the line");
        assert!(tl.is_red(k), "crossing at {k}, red {:?}", tl.red);
        let clean = rollout(&scn, &scn.expert, &cfg).unwrap();
        assert!(clean.stop_line_crossing.map_or(true, |k| !tl.is_red(k)));
    }

    #[test]
    fn ego_starts_on_the_road() {
        let cfg = SimConfig::default();
        for fam in ScenarioFamily::ALL {
            for seed in 0..5 {
                let scn = generate_scenario(fam, seed, &cfg).unwrap();
                assert_eq!(scn.ego_init.pose, Waypoint::ORIGIN);
                scn.validate(cfg.horizon).unwrap();
            }
        }
    }
}
