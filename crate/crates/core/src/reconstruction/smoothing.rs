//! Merging instance ids that flicker between consecutive frames.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Vec3};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingParams {
    pub enabled: bool,
    /// Maximum centroid distance (m).
    pub d_c: f64,
    /// Maximum relative difference per box side.
    pub r: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            enabled: true,
            d_c: 0.3,
            r: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment<T> {
    pub centroid: Vec3<T>,
    pub bounds: Aabb<T>,
    pub points: usize,
}

/// Per-label centroid and box of one frame's points; label 0 is skipped.
pub fn frame_segments<T: Real>(points: &[Vec3<T>], labels: &[u32]) -> BTreeMap<u32, Segment<T>> {
    let mut acc: BTreeMap<u32, (Vec3<T>, Aabb<T>, usize)> = BTreeMap::new();
    for (&p, &l) in points.iter().zip(labels) {
        if l == 0 {
            continue;
        }
        acc.entry(l)
            .and_modify(|(s, b, n)| {
                *s += p;
                *b = b.expanded(p);
                *n += 1;
            })
            .or_insert((p, Aabb::new(p, p), 1));
    }
    acc.into_iter()
        .map(|(l, (s, b, n))| {
            (
                l,
                Segment {
                    centroid: s / T::from_usize_lossy(n),
                    bounds: b,
                    points: n,
                },
            )
        })
        .collect()
}

fn similar<T: Real>(a: &Segment<T>, b: &Segment<T>, p: &SmoothingParams) -> bool {
    if a.centroid.distance(b.centroid).to_f64_lossy() > p.d_c {
        return false;
    }
    let (ea, eb) = (a.bounds.extent(), b.bounds.extent());
    (0..3).all(|k| {
        let (x, y) = (ea[k].to_f64_lossy(), eb[k].to_f64_lossy());
        let m = x.max(y);
        m <= 0.0 || (x - y).abs() / m <= p.r
    })
}

fn find(parent: &mut BTreeMap<u32, u32>, x: u32) -> u32 {
    let mut r = x;
    while let Some(&p) = parent.get(&r) {
        if p == r {
            break;
        }
        r = p;
    }
    let mut c = x;
    while c != r {
        let next = parent[&c];
        parent.insert(c, r);
        c = next;
    }
    r
}

/// Relabeling map (old → new, identities omitted). Matching labels in
/// consecutive frames are unioned across the whole sequence and every
/// component takes its smallest id.
pub fn interframe_smoothing<T: Real>(frames: &[BTreeMap<u32, Segment<T>>], p: &SmoothingParams) -> BTreeMap<u32, u32> {
    let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
    for f in frames {
        for &l in f.keys() {
            parent.insert(l, l);
        }
    }
    if !p.enabled {
        return BTreeMap::new();
    }
    for w in frames.windows(2) {
        for (&a, sa) in &w[0] {
            for (&b, sb) in &w[1] {
                if a != b && similar(sa, sb, p) {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        // Smaller root wins, so each root is its component's minimum.
                        parent.insert(ra.max(rb), ra.min(rb));
                    }
                }
            }
        }
    }
    let labels: Vec<u32> = parent.keys().copied().collect();
    labels
        .into_iter()
        .filter_map(|l| {
            let r = find(&mut parent, l);
            (r != l).then_some((l, r))
        })
        .collect()
}

pub fn apply_relabel(labels: &mut [u32], map: &BTreeMap<u32, u32>) {
    for l in labels {
        if let Some(&n) = map.get(l) {
            *l = n;
        }
    }
}
