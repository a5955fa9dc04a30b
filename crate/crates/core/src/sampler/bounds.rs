//! Per-intention offset boxes and the smooth squash into them.
//!
//! Offsets are deltas on top of the reference step, expressed in the frame of
//! the reference heading: `x` along track, `y` to the left, `h` heading.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{normalize_angle, Intention, OffsetStep, Waypoint};

/// Axis-aligned box over `(dx, dy, dh)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

/// Largest `|tanh|` argument kept when inverting the squash.
const ATANH_LIMIT: f64 = 1.0 - 1e-12;

impl OffsetBox {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        if (0..3).any(|i| !(hi[i] > lo[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
            return Err(Error::Config(format!("degenerate offset box {lo:?}..{hi:?}")));
        }
        Ok(OffsetBox { lo, hi })
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.lo[i] + self.hi[i]))
    }

    pub fn half_width(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.hi[i] - self.lo[i]))
    }

    pub fn contains(&self, delta: [f64; 3]) -> bool {
        (0..3).all(|i| delta[i] >= self.lo[i] && delta[i] <= self.hi[i])
    }

    /// `center + half * tanh(u)`, clamped so rounding never leaves the box.
    pub fn squash(&self, u: [f64; 3]) -> [f64; 3] {
        let (c, h) = (self.center(), self.half_width());
        std::array::from_fn(|i| (c[i] + h[i] * u[i].tanh()).clamp(self.lo[i], self.hi[i]))
    }

    /// Inverse of [`squash`](Self::squash). The flag is set when some
    /// coordinate sat on or outside the boundary and had to be clamped.
    pub fn unsquash(&self, delta: [f64; 3]) -> ([f64; 3], bool) {
        let (c, h) = (self.center(), self.half_width());
        let mut clamped = false;
        let u = std::array::from_fn(|i| {
            let t = (delta[i] - c[i]) / h[i];
            if t.abs() >= ATANH_LIMIT {
                clamped = true;
            }
            t.clamp(-ATANH_LIMIT, ATANH_LIMIT).atanh()
        });
        (u, clamped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    /// Keep box half-widths, centered on the reference step.
    pub keep_half: [f64; 3],
    /// Lateral reach per step for Left/Right.
    pub lateral_max: f64,
    /// Heading reach per step for Left/Right.
    pub heading_max: f64,
    /// Extra along-track distance per step for Accelerate.
    pub accel_max: f64,
    /// Along-track distance removed per step for Decelerate.
    pub decel_max: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            keep_half: [0.2, 0.2, 0.05],
            lateral_max: 1.0,
            heading_max: 0.15,
            accel_max: 1.5,
            decel_max: 1.5,
        }
    }
}

/// One offset box per intention, in intention-set order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionOffsetBounds {
    pub intentions: Vec<Intention>,
    pub boxes: Vec<OffsetBox>,
}

impl IntentionOffsetBounds {
    pub fn new(intentions: &[Intention], cfg: &BoundsConfig) -> Result<Self> {
        if intentions.is_empty() {
            return Err(Error::Config("intention set is empty".into()));
        }
        let k = cfg.keep_half;
        let boxes = intentions
            .iter()
            .map(|i| {
                let (lo, hi) = match i {
                    Intention::Keep => ([-k[0], -k[1], -k[2]], k),
                    Intention::Left => ([-k[0], 0.0, 0.0], [k[0], cfg.lateral_max, cfg.heading_max]),
                    Intention::Right => ([-k[0], -cfg.lateral_max, -cfg.heading_max], [k[0], 0.0, 0.0]),
                    Intention::Accelerate => ([0.0, -k[1], -k[2]], [cfg.accel_max, k[1], k[2]]),
                    Intention::Decelerate => ([-cfg.decel_max, -k[1], -k[2]], [0.0, k[1], k[2]]),
                };
                OffsetBox::new(lo, hi)
            })
            .collect::<Result<_>>()?;
        Ok(IntentionOffsetBounds {
            intentions: intentions.to_vec(),
            boxes,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn index_of(&self, intention: Intention) -> Option<usize> {
        self.intentions.iter().position(|&i| i == intention)
    }
}

/// World-frame step from a reference step and a box-frame delta.
/// `ref_heading` is the reference heading at the start of the step.
pub fn delta_to_step(reference_step: &OffsetStep, ref_heading: f64, delta: [f64; 3]) -> OffsetStep {
    let (s, c) = ref_heading.sin_cos();
    OffsetStep::new(
        reference_step.dx + c * delta[0] - s * delta[1],
        reference_step.dy + s * delta[0] + c * delta[1],
        reference_step.dh + delta[2],
    )
}

/// Inverse of [`delta_to_step`].
pub fn step_to_delta(reference_step: &OffsetStep, ref_heading: f64, step: &OffsetStep) -> [f64; 3] {
    let (s, c) = ref_heading.sin_cos();
    let (ex, ey) = (step.dx - reference_step.dx, step.dy - reference_step.dy);
    [c * ex + s * ey, -s * ex + c * ey, normalize_angle(step.dh - reference_step.dh)]
}

/// Steps of `reference` and the heading each one starts from.
pub fn reference_steps(reference: &[Waypoint]) -> Vec<(OffsetStep, f64)> {
    reference.windows(2).map(|w| (w[0].step_to(&w[1]), w[0].h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_boxes_are_valid_and_keep_is_centered() {
        let b = IntentionOffsetBounds::new(&Intention::DEFAULT_SET, &BoundsConfig::default()).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.boxes[0].center(), [0.0, 0.0, 0.0]);
        assert!(b.boxes[1].lo[1] >= 0.0 && b.boxes[2].hi[1] <= 0.0);
        assert!(OffsetBox::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_latent_maps_to_center() {
        let bx = OffsetBox::new([0.0, -1.0, 0.0], [1.5, 0.2, 0.15]).unwrap();
        assert_eq!(bx.squash([0.0; 3]), bx.center());
    }

    #[test]
    fn saturated_inverse_is_flagged() {
        let bx = OffsetBox::new([-1.0; 3], [1.0; 3]).unwrap();
        let (_, flagged) = bx.unsquash([1.0, 0.0, 0.0]);
        assert!(flagged);
        let (u, flagged) = bx.unsquash([0.5, 0.0, -0.25]);
        assert!(!flagged);
        assert!((u[0] - 0.5f64.atanh()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn squash_stays_inside(u in prop::array::uniform3(-50.0f64..50.0), which in 0usize..5) {
            let b = IntentionOffsetBounds::new(&Intention::DEFAULT_SET, &BoundsConfig::default()).unwrap();
            prop_assert!(b.boxes[which].contains(b.boxes[which].squash(u)));
        }

        #[test]
        fn squash_round_trips(u in prop::array::uniform3(-3.0f64..3.0), which in 0usize..5) {
            let b = IntentionOffsetBounds::new(&Intention::DEFAULT_SET, &BoundsConfig::default()).unwrap();
            let bx = b.boxes[which];
            let (back, flagged) = bx.unsquash(bx.squash(u));
            prop_assert!(!flagged);
            for i in 0..3 {
                prop_assert!((back[i] - u[i]).abs() < 1e-8);
            }
        }

        #[test]
        fn frame_change_round_trips(
            r in prop::array::uniform3(-5.0f64..5.0),
            h in -3.0f64..3.0,
            d in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let rs = OffsetStep::from_array(r);
            let step = delta_to_step(&rs, h, d);
            let back = step_to_delta(&rs, h, &step);
            for i in 0..3 {
                prop_assert!((back[i] - d[i]).abs() < 1e-12);
            }
        }
    }
}
