//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many coordinates, sampled without replacement.
    pub max_coords: usize,
    pub seed: u64,
    /// Denominator floor of the relative error. Coordinates whose analytic
    /// and numeric values both sit below it are compared absolutely, since
    /// central differences of a zero gradient return only round-off.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: 64,
            seed: 0,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest error.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Checked coordinates where both values fell below the floor.
    pub below_floor: usize,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` around `x`.
pub fn finite_diff_check(
    x: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length must match the point");
    let coords: Vec<usize> = if x.len() <= opts.max_coords {
        (0..x.len()).collect()
    } else {
        let mut idx = sample(&mut seeded(opts.seed), x.len(), opts.max_coords).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut probe = x.to_vec();
    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut below_floor = 0;
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + opts.step;
        let up = loss(&probe);
        probe[i] = orig - opts.step;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        if analytic[i].abs().max(numeric.abs()) < opts.floor {
            below_floor += 1;
        }
        let err = relative_error(analytic[i], numeric, opts.floor);
        if !(err <= max_rel_err) {
            max_rel_err = err;
            worst = Some(i);
        }
    }
    GradCheckReport {
        max_rel_err,
        worst,
        checked: coords.len(),
        below_floor,
        pass: max_rel_err < opts.tolerance,
    }
}
