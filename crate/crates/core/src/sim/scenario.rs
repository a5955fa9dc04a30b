use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::types::{normalize_angle, DrivingCommand, Trajectory, Waypoint};

pub const SCENARIO_SCHEMA: &str = "scenario_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    StraightFollow,
    LeadBrake,
    LaneChange,
    Turn,
    RedLight,
}

impl ScenarioFamily {
    pub const ALL: [ScenarioFamily; 5] = [
        ScenarioFamily::StraightFollow,
        ScenarioFamily::LeadBrake,
        ScenarioFamily::LaneChange,
        ScenarioFamily::Turn,
        ScenarioFamily::RedLight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioFamily::StraightFollow => "straight_follow",
            ScenarioFamily::LeadBrake => "lead_brake",
            ScenarioFamily::LaneChange => "lane_change",
            ScenarioFamily::Turn => "turn",
            ScenarioFamily::RedLight => "red_light",
        }
    }
}

impl fmt::Display for ScenarioFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        ScenarioFamily::ALL
            .into_iter()
            .find(|f| f.name().replace('_', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown scenario family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Waypoint,
    pub speed: f64,
}

/// Scripted, non-reactive traffic participant moving along its initial heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub init: Waypoint,
    pub half_extents: [f64; 2],
    /// Speed at every step `0..=T`.
    pub speed_profile: Vec<f64>,
}

impl Agent {
    pub fn radius(&self) -> f64 {
        self.half_extents[0].hypot(self.half_extents[1])
    }

    /// Pose at every step, trapezoidal integration of the speed profile.
    pub fn poses(&self, dt: f64) -> Vec<Waypoint> {
        let (s, c) = self.init.h.sin_cos();
        let mut dist = 0.0;
        let mut out = Vec::with_capacity(self.speed_profile.len());
        for (k, v) in self.speed_profile.iter().enumerate() {
            if k > 0 {
                dist += 0.5 * (self.speed_profile[k - 1] + v) * dt;
            }
            out.push(Waypoint::new(self.init.x + c * dist, self.init.y + s * dist, self.init.h));
        }
        out
    }
}

/// Boolean raster of drivable cells. Cell `(i, j)` covers
/// `[origin.x + i*cell, origin.x + (i+1)*cell) x [origin.y + j*cell, ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivableGrid {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major, serialized as one `0`/`1` string.
    #[serde(serialize_with = "cells_to_rows", deserialize_with = "rows_to_cells")]
    pub cells: Vec<bool>,
}

fn cells_to_rows<S: Serializer>(cells: &[bool], s: S) -> std::result::Result<S::Ok, S::Error> {
    let text: String = cells.iter().map(|&c| if c { '1' } else { '0' }).collect();
    s.serialize_str(&text)
}

fn rows_to_cells<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<bool>, D::Error> {
    let text = String::deserialize(d)?;
    text.chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(serde::de::Error::custom(format!("invalid grid cell '{other}'"))),
        })
        .collect()
}

impl DrivableGrid {
    pub fn cell_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin[0]) / self.cell_size;
        let fy = (y - self.origin[1]) / self.cell_size;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        (i < self.width && j < self.height).then_some((i, j))
    }

    /// Outside the raster counts as not drivable.
    pub fn is_drivable(&self, x: f64, y: f64) -> bool {
        self.cell_index(x, y)
            .map(|(i, j)| self.cells[j * self.width + i])
            .unwrap_or(false)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin[0] + (i as f64 + 0.5) * self.cell_size,
            self.origin[1] + (j as f64 + 0.5) * self.cell_size,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arclength of the closest point.
    pub s: f64,
    /// Signed lateral offset, left positive.
    pub d: f64,
    /// Tangent heading at the closest point.
    pub heading: f64,
}

/// Centerline polyline with cumulative arclength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub arclength: Vec<f64>,
}

impl Polyline {
    /// Builds arclength starting at `s0` for the first point.
    pub fn from_points(points: Vec<[f64; 2]>, s0: f64) -> Self {
        let mut arclength = Vec::with_capacity(points.len());
        let mut s = s0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                let q = points[i - 1];
                s += (p[0] - q[0]).hypot(p[1] - q[1]);
            }
            arclength.push(s);
        }
        Polyline { points, arclength }
    }

    fn segment_heading(&self, i: usize) -> f64 {
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    pub fn project(&self, x: f64, y: f64) -> Projection {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = vx * vx + vy * vy;
            let u = (((x - a[0]) * vx + (y - a[1]) * vy) / len2).clamp(0.0, 1.0);
            let (px, py) = (a[0] + u * vx, a[1] + u * vy);
            let dist2 = (x - px).powi(2) + (y - py).powi(2);
            if dist2 < best.0 {
                best = (dist2, i, u);
            }
        }
        let (_, i, u) = best;
        let (a, b) = (self.points[i], self.points[i + 1]);
        let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
        let len = vx.hypot(vy);
        let s = self.arclength[i] + u * (self.arclength[i + 1] - self.arclength[i]);
        let cross = (vx * (y - a[1]) - vy * (x - a[0])) / len;
        Projection {
            s,
            d: cross,
            heading: vy.atan2(vx),
        }
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len();
        match self.arclength.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Point and tangent heading at arclength `s`, extrapolating linearly
    /// past either end.
    pub fn pose_at(&self, s: f64) -> Waypoint {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.arclength[i + 1] - self.arclength[i];
        let u = (s - self.arclength[i]) / seg;
        Waypoint::new(
            a[0] + u * (b[0] - a[0]),
            a[1] + u * (b[1] - a[1]),
            self.segment_heading(i),
        )
    }

    /// Pose at arclength `s` shifted by `d` along the left normal.
    pub fn offset_pose_at(&self, s: f64, d: f64) -> Waypoint {
        let p = self.pose_at(s);
        let (sn, cs) = p.h.sin_cos();
        Waypoint::new(p.x - sn * d, p.y + cs * d, p.h)
    }

    pub fn start(&self) -> f64 {
        self.arclength[0]
    }

    pub fn end(&self) -> f64 {
        *self.arclength.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    #[serde(flatten)]
    pub line: Polyline,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    /// Route arclength of the stop line.
    pub stop_line_s: f64,
    /// Inclusive step interval during which the light is red.
    pub red: [usize; 2],
}

impl TrafficLight {
    pub fn is_red(&self, step: usize) -> bool {
        step >= self.red[0] && step <= self.red[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: String,
    pub id: String,
    pub ego_init: EgoState,
    pub agents: Vec<Agent>,
    pub drivable_grid: DrivableGrid,
    pub route: Route,
    pub traffic_light: Option<TrafficLight>,
    /// Human demonstration `w_0 .. w_T`.
    pub expert: Trajectory,
    pub command: DrivingCommand,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.expert.horizon()
    }

    pub fn dt(&self) -> f64 {
        self.expert.dt()
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(Error::Version {
                expected: SCENARIO_SCHEMA.into(),
                found: self.schema.clone(),
            });
        }
        self.expert.expect_horizon(horizon)?;
        let g = &self.drivable_grid;
        if g.cells.len() != g.width * g.height {
            return Err(Error::Contract(format!(
                "scenario {}: grid has {} cells, expected {}x{}",
                self.id,
                g.cells.len(),
                g.width,
                g.height
            )));
        }
        let p = self.ego_init.pose;
        if !g.is_drivable(p.x, p.y) {
            return Err(Error::Contract(format!("scenario {}: ego starts off the drivable area", self.id)));
        }
        if self.route.line.points.len() < 2
            || self.route.line.points.len() != self.route.line.arclength.len()
            || self.route.line.arclength.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Contract(format!(
                "scenario {}: route arclength must be strictly increasing",
                self.id
            )));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.speed_profile.len() != horizon + 1 {
                return Err(Error::Contract(format!(
                    "scenario {}: agent {i} has {} speeds, expected {}",
                    self.id,
                    a.speed_profile.len(),
                    horizon + 1
                )));
            }
            if a.half_extents.iter().any(|e| !(*e > 0.0)) {
                return Err(Error::Contract(format!("scenario {}: agent {i} footprint", self.id)));
            }
        }
        Ok(())
    }

    /// Route tangent vs heading difference, wrapped.
    pub fn heading_error(&self, p: &Waypoint) -> f64 {
        let proj = self.route.line.project(p.x, p.y);
        normalize_angle(p.h - proj.heading)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        if s.schema != SCENARIO_SCHEMA {
            return Err(Error::Version {
                expected: SCENARIO_SCHEMA.into(),
                found: s.schema,
            });
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_parsing() {
        assert_eq!("LeadBrake".parse::<ScenarioFamily>().unwrap(), ScenarioFamily::LeadBrake);
        assert_eq!("red_light".parse::<ScenarioFamily>().unwrap(), ScenarioFamily::RedLight);
        assert!(matches!("Roundabout".parse::<ScenarioFamily>(), Err(Error::Config(_))));
    }

    #[test]
    fn polyline_projection_on_straight_line() {
        let line = Polyline::from_points((0..=10).map(|i| [i as f64, 0.0]).collect(), -2.0);
        let p = line.project(3.5, 1.25);
        assert!((p.s - 1.5).abs() < 1e-12);
        assert!((p.d - 1.25).abs() < 1e-12);
        let q = line.offset_pose_at(4.0, -2.0);
        assert!((q.x - 6.0).abs() < 1e-12 && (q.y + 2.0).abs() < 1e-12);
    }

    #[test]
    fn agent_poses_integrate_speed() {
        let a = Agent {
            init: Waypoint::new(10.0, 0.0, 0.0),
            half_extents: [1.5, 0.75],
            speed_profile: vec![2.0, 2.0, 0.0],
        };
        let p = a.poses(0.5);
        assert_eq!(p[1].x, 11.0);
        assert_eq!(p[2].x, 11.5);
    }
}
