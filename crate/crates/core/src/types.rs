//! Geometric and trajectory primitives shared across the planner.
//!
//! Everything lives in a planar ego frame: `x` is longitudinal, `y` lateral
//! (positive to the left), headings in radians normalized to `(-pi, pi]`.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`. Values already in range are returned
/// untouched, which makes the operation exactly idempotent.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub h: f64,
}

impl Waypoint {
    pub const ORIGIN: Waypoint = Waypoint {
        x: 0.0,
        y: 0.0,
        h: 0.0,
    };

    pub fn new(x: f64, y: f64, h: f64) -> Self {
        Waypoint {
            x,
            y,
            h: normalize_angle(h),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.h.is_finite()
    }

    pub fn offset(&self, step: &OffsetStep) -> Waypoint {
        Waypoint::new(self.x + step.dx, self.y + step.dy, self.h + step.dh)
    }

    /// Displacement that carries `self` onto `next`, heading difference wrapped.
    pub fn step_to(&self, next: &Waypoint) -> OffsetStep {
        OffsetStep {
            dx: next.x - self.x,
            dy: next.y - self.y,
            dh: normalize_angle(next.h - self.h),
        }
    }

    pub fn distance(&self, other: &Waypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Per-step displacement in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffsetStep {
    pub dx: f64,
    pub dy: f64,
    pub dh: f64,
}

impl OffsetStep {
    pub fn new(dx: f64, dy: f64, dh: f64) -> Self {
        OffsetStep { dx, dy, dh }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dh]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        OffsetStep {
            dx: a[0],
            dy: a[1],
            dh: a[2],
        }
    }
}

/// Discrete maneuver label conditioning the sampler's offset prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intention {
    Keep,
    Left,
    Right,
    Accelerate,
    Decelerate,
}

impl Intention {
    pub const DEFAULT_SET: [Intention; 5] = [
        Intention::Keep,
        Intention::Left,
        Intention::Right,
        Intention::Accelerate,
        Intention::Decelerate,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingCommand {
    Straight,
    TurnLeft,
    TurnRight,
}

impl DrivingCommand {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            DrivingCommand::Straight => 0,
            DrivingCommand::TurnLeft => 1,
            DrivingCommand::TurnRight => 2,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

/// Ordered waypoints `w_0 .. w_T` sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Waypoint>,
    dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<Waypoint>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Contract(format!("trajectory dt must be positive, got {dt}")));
        }
        if points.is_empty() {
            return Err(Error::LengthMismatch {
                expected: 1,
                found: 0,
            });
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Contract(format!("non-finite waypoint at index {i}")));
        }
        let points = points
            .into_iter()
            .map(|p| Waypoint::new(p.x, p.y, p.h))
            .collect();
        Ok(Trajectory { points, dt })
    }

    /// A trajectory that holds `pose` for `horizon` steps.
    pub fn stationary(pose: Waypoint, horizon: usize, dt: f64) -> Self {
        Trajectory {
            points: vec![pose; horizon + 1],
            dt,
        }
    }

    pub fn points(&self) -> &[Waypoint] {
        &self.points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps `T`; the trajectory holds `T + 1` points.
    pub fn horizon(&self) -> usize {
        self.points.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn expect_horizon(&self, horizon: usize) -> Result<()> {
        if self.points.len() != horizon + 1 {
            return Err(Error::LengthMismatch {
                expected: horizon + 1,
                found: self.points.len(),
            });
        }
        Ok(())
    }

    /// Largest distance between consecutive points.
    pub fn max_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .fold(0.0, f64::max)
    }

    /// True when no step moves faster than `v_max`.
    pub fn respects_speed_limit(&self, v_max: f64) -> bool {
        self.max_spacing() <= v_max * self.dt + 1e-9
    }

    pub fn offsets(&self) -> Vec<OffsetStep> {
        self.points.windows(2).map(|w| w[0].step_to(&w[1])).collect()
    }

    /// Flattened `(x, y, h)` triples, point by point.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.h]).collect()
    }

    /// `t,x,y,h` rows with six fixed decimals, header included.
    pub fn to_rows(&self) -> String {
        let mut out = String::from("t,x,y,h\n");
        for (t, p) in self.points.iter().enumerate() {
            let _ = writeln!(out, "{t},{:.6},{:.6},{:.6}", p.x, p.y, p.h);
        }
        out
    }

    pub fn from_rows(text: &str, dt: f64) -> Result<Self> {
        let mut points = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Contract(format!(
                    "trajectory row {line_no}: expected 4 columns, found {}",
                    cols.len()
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Contract(format!("trajectory row {line_no}: {e}")))
            };
            points.push(Waypoint::new(parse(cols[1])?, parse(cols[2])?, parse(cols[3])?));
        }
        Trajectory::new(points, dt)
    }
}

/// Rolls the recurrence `w_t = w_{t-1} + dw_{t-1}` forward from `root`.
pub fn apply_offsets(root: Waypoint, offsets: &[OffsetStep], horizon: usize, dt: f64) -> Result<Trajectory> {
    if offsets.len() != horizon {
        return Err(Error::LengthMismatch {
            expected: horizon,
            found: offsets.len(),
        });
    }
    let mut points = Vec::with_capacity(horizon + 1);
    let mut current = Waypoint::new(root.x, root.y, root.h);
    points.push(current);
    for step in offsets {
        current = current.offset(step);
        points.push(current);
    }
    Trajectory::new(points, dt)
}

/// Expresses `traj` in the frame where `pose` is the origin with zero heading.
pub fn to_ego_frame(traj: &Trajectory, pose: Waypoint) -> Trajectory {
    let (s, c) = pose.h.sin_cos();
    let points = traj
        .points
        .iter()
        .map(|p| {
            let dx = p.x - pose.x;
            let dy = p.y - pose.y;
            Waypoint::new(c * dx + s * dy, -s * dx + c * dy, p.h - pose.h)
        })
        .collect();
    Trajectory {
        points,
        dt: traj.dt,
    }
}

/// Inverse of [`to_ego_frame`].
pub fn from_ego_frame(traj: &Trajectory, pose: Waypoint) -> Trajectory {
    let (s, c) = pose.h.sin_cos();
    let points = traj
        .points
        .iter()
        .map(|p| Waypoint::new(pose.x + c * p.x - s * p.y, pose.y + s * p.x + c * p.y, p.h + pose.h))
        .collect();
    Trajectory {
        points,
        dt: traj.dt,
    }
}
