//! Greedy alternating search over rig height `t` and pitch `α`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::VoxelGrid;
use crate::alignment::camera::{PinholeCamera, PseudoCameraRig};
use crate::alignment::color::{grid_hues, pseudo_color, PseudoColorParams};
use crate::alignment::metric::DomainScorer;
use crate::alignment::render::project_voxels;
use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSearch {
    /// Half-width of the `t` grid around the initial height (m).
    pub t_range: f64,
    pub t_step: f64,
    /// Pitch grid step (rad).
    pub alpha_step: f64,
    pub batch: usize,
    pub max_rounds: usize,
}

impl Default for RigSearch {
    fn default() -> Self {
        Self {
            t_range: 4.0,
            t_step: 0.25,
            alpha_step: 1f64.to_radians(),
            batch: 8,
            max_rounds: 20,
        }
    }
}

impl RigSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_step > 0.0 && self.alpha_step > 0.0 && self.t_range >= 0.0) {
            return Err(Error::param("search grid steps must be positive"));
        }
        if self.batch == 0 || self.max_rounds == 0 {
            return Err(Error::param("batch size and round limit must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRound {
    pub batch: usize,
    pub round: usize,
    pub t: f64,
    pub alpha: f64,
    /// Batch-mean domain distance at the round's resulting `t`.
    pub distance: f64,
    pub t_accepted: bool,
}

#[derive(Clone, Debug)]
pub struct OptimizedRig<T> {
    pub rig: PseudoCameraRig<T>,
    pub trace: Vec<SearchRound>,
}

/// Grid `start, start + step, …` up to `end` inclusive (within rounding).
fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor().max(0.0) as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

fn score_camera<T: Real, S: DomainScorer<T>>(grid: &VoxelGrid<T>, hues: &[T], cam: &PinholeCamera<T>, scorer: &S, color: &PseudoColorParams) -> T {
    let (map, _) = project_voxels(grid, cam);
    scorer.score(&pseudo_color(map, hues, color).gray())
}

fn mapped_pixels<T: Real>(grid: &VoxelGrid<T>, cam: &PinholeCamera<T>) -> usize {
    project_voxels(grid, cam).0.mapped_count()
}

/// First index of the minimum (or maximum) — ties go to the earlier grid value.
fn arg_best<T: PartialOrd + Copy>(values: &[T], better: impl Fn(T, T) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best]) {
            best = i;
        }
    }
    best
}

/// Alternates a domain-distance search over `t` with a coverage search over
/// `α` on the primary camera, one keyframe batch at a time. `motion`, when
/// given, selects the primary camera first.
pub fn optimize_rig<T: Real, S: DomainScorer<T>>(
    keyframes: &[VoxelGrid<T>],
    scorer: &S,
    initial: &PseudoCameraRig<T>,
    search: &RigSearch,
    color: &PseudoColorParams,
    motion: Option<Vec3<T>>,
) -> Result<OptimizedRig<T>> {
    if keyframes.is_empty() {
        return Err(Error::param("rig optimization needs at least one keyframe"));
    }
    search.validate()?;
    color.validate()?;
    initial.validate()?;
    let mut rig = initial.clone();
    if let Some(m) = motion {
        rig.select_primary(m);
    }
    let t0 = rig.height.to_f64_lossy();
    let t_grid = grid(t0 - search.t_range, t0 + search.t_range, search.t_step);
    let (a, b) = (rig.pitch_bounds.0.to_f64_lossy(), rig.pitch_bounds.1.to_f64_lossy());
    let a_grid = grid(a, b, search.alpha_step);
    let hues: Vec<Vec<T>> = keyframes.iter().map(grid_hues).collect();
    let mut trace = Vec::new();
    let primary = rig.primary;

    for (bi, batch) in keyframes.chunks(search.batch).enumerate() {
        let bhues = &hues[bi * search.batch..bi * search.batch + batch.len()];
        let mean_distance = |t: f64, alpha: f64| -> f64 {
            let cam = rig.camera_with(primary, T::c(t), T::c(alpha));
            let total: f64 = batch
                .par_iter()
                .zip(bhues)
                .map(|(g, h)| score_camera(g, h, &cam, scorer, color).to_f64_lossy())
                .sum();
            total / batch.len() as f64
        };
        let mut t = rig.height.to_f64_lossy();
        let mut alpha = rig.pitch.to_f64_lossy();
        let mut current = mean_distance(t, alpha);
        for round in 0..search.max_rounds {
            let t_picks: Vec<f64> = batch
                .par_iter()
                .zip(bhues)
                .map(|(g, h)| {
                    let scores: Vec<T> = t_grid
                        .iter()
                        .map(|&tc| score_camera(g, h, &rig.camera_with(primary, T::c(tc), T::c(alpha)), scorer, color))
                        .collect();
                    t_grid[arg_best(&scores, |x, y| x < y)]
                })
                .collect();
            let t_new = t_picks.iter().sum::<f64>() / t_picks.len() as f64;
            let candidate = mean_distance(t_new, alpha);
            let accepted = candidate <= current;
            let dt = if accepted { (t_new - t).abs() } else { 0.0 };
            if accepted {
                t = t_new;
                current = candidate;
            }

            let a_picks: Vec<f64> = batch
                .par_iter()
                .map(|g| {
                    let counts: Vec<usize> = a_grid
                        .iter()
                        .map(|&ac| mapped_pixels(g, &rig.camera_with(primary, T::c(t), T::c(ac))))
                        .collect();
                    a_grid[arg_best(&counts, |x, y| x > y)]
                })
                .collect();
            let a_new = (a_picks.iter().sum::<f64>() / a_picks.len() as f64).clamp(a, b);
            let da = (a_new - alpha).abs();
            alpha = a_new;
            if da > 0.0 {
                current = mean_distance(t, alpha);
            }
            trace.push(SearchRound {
                batch: bi,
                round,
                t,
                alpha,
                distance: current,
                t_accepted: accepted,
            });
            log::debug!("rig batch {bi} round {round}: t={t:.3} α={alpha:.4} d={current:.5}");
            if dt < search.t_step && da < search.alpha_step {
                break;
            }
        }
        rig.height = T::c(t);
        rig.pitch = T::c(alpha).max(rig.pitch_bounds.0).min(rig.pitch_bounds.1);
    }
    Ok(OptimizedRig { rig, trace })
}
