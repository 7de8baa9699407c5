//! Scoring against ground truth: majority-vote semantic alignment of
//! predicted segments, panoptic quality and 4D association quality.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::{Error, Result};

/// Which semantic classes count as things and which are ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassSet {
    pub things: BTreeSet<u16>,
    /// Points with these ground-truth classes are left out entirely.
    pub ignore: BTreeSet<u16>,
}

impl Default for ClassSet {
    /// SemanticKITTI raw ids: vehicles and people are things, 0 and 1
    /// (unlabeled, outlier) are ignored.
    fn default() -> Self {
        let mut things: BTreeSet<u16> = [10, 11, 13, 15, 16, 18, 20, 30, 31, 32].into();
        things.extend(252..=259);
        Self {
            things,
            ignore: [0, 1].into(),
        }
    }
}

impl ClassSet {
    pub fn is_thing(&self, c: u16) -> bool {
        self.things.contains(&c)
    }
}

fn check_shapes<A, B>(a: &[Vec<A>], b: &[Vec<B>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} frames", a.len(), b.len())));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!("frame {i}: {} vs {} labels", x.len(), y.len())));
        }
    }
    Ok(())
}

/// Majority ground-truth class per predicted segment id (0 = no segment).
/// Ties go to the smaller class; segments covering only ignored points get
/// class 0.
pub fn semantic_oracle_align(pred: &[Vec<u32>], gt: &[Vec<Label>], classes: &ClassSet) -> Result<BTreeMap<u32, u16>> {
    check_shapes(pred, gt)?;
    let mut votes: BTreeMap<u32, BTreeMap<u16, usize>> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        for (&s, l) in p.iter().zip(g) {
            if s == 0 {
                continue;
            }
            let v = votes.entry(s).or_default();
            if !classes.ignore.contains(&l.semantic) {
                *v.entry(l.semantic).or_default() += 1;
            }
        }
    }
    Ok(votes
        .into_iter()
        .map(|(s, v)| {
            // BTreeMap order makes the first maximum the smallest class.
            let best = v.iter().fold((0u16, 0usize), |b, (&c, &n)| if n > b.1 { (c, n) } else { b });
            (s, best.0)
        })
        .collect())
}

/// Per-point `(class, instance)` from segment ids and their classes;
/// instance ids are renumbered from 1 within each class in segment-id order.
pub fn apply_alignment(pred: &[Vec<u32>], classes_of: &BTreeMap<u32, u16>) -> Result<Vec<Vec<Label>>> {
    let mut next: BTreeMap<u16, u32> = BTreeMap::new();
    let mut inst: BTreeMap<u32, u16> = BTreeMap::new();
    for (&s, &c) in classes_of {
        let n = next.entry(c).or_insert(0);
        *n += 1;
        let id = u16::try_from(*n).map_err(|_| Error::Range(format!("more than 65535 segments in class {c}")))?;
        inst.insert(s, id);
    }
    Ok(pred
        .iter()
        .map(|f| {
            f.iter()
                .map(|&s| match classes_of.get(&s) {
                    Some(&c) if s != 0 => Label::new(c, inst[&s]),
                    _ => Label::UNLABELED,
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub iou: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanopticReport {
    pub per_class: BTreeMap<u16, ClassScores>,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_st: f64,
    pub pq_th: f64,
    pub miou: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl PanopticReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("pq", self.pq),
            ("sq", self.sq),
            ("rq", self.rq),
            ("pq_st", self.pq_st),
            ("pq_th", self.pq_th),
            ("miou", self.miou),
        ] {
            let _ = writeln!(s, "{k}={v:.6}");
        }
        for (c, r) in &self.per_class {
            let _ = writeln!(
                s,
                "class.{c}.pq={:.6} class.{c}.sq={:.6} class.{c}.rq={:.6} class.{c}.iou={:.6}",
                r.pq, r.sq, r.rq, r.iou
            );
        }
        s
    }
}

/// Per-class semantic IoU over every non-ignored point of the sequence;
/// only classes present in prediction or ground truth are reported.
fn class_ious(pred: &[Vec<Label>], gt: &[Vec<Label>], classes: &ClassSet) -> BTreeMap<u16, f64> {
    let mut inter: BTreeMap<u16, usize> = BTreeMap::new();
    let mut pc: BTreeMap<u16, usize> = BTreeMap::new();
    let mut gc: BTreeMap<u16, usize> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.iter().zip(g) {
            if classes.ignore.contains(&b.semantic) {
                continue;
            }
            *gc.entry(b.semantic).or_default() += 1;
            *pc.entry(a.semantic).or_default() += 1;
            if a.semantic == b.semantic {
                *inter.entry(a.semantic).or_default() += 1;
            }
        }
    }
    let all: BTreeSet<u16> = pc
        .keys()
        .chain(gc.keys())
        .copied()
        .filter(|c| !classes.ignore.contains(c))
        .collect();
    all.into_iter()
        .map(|c| {
            let i = inter.get(&c).copied().unwrap_or(0);
            let u = pc.get(&c).copied().unwrap_or(0) + gc.get(&c).copied().unwrap_or(0) - i;
            (c, if u == 0 { 0.0 } else { i as f64 / u as f64 })
        })
        .collect()
}

/// Segment key within one frame and class: the instance for things, a
/// single segment per class for stuff.
fn segment_key(l: &Label, classes: &ClassSet) -> Option<(u16, u16)> {
    if classes.is_thing(l.semantic) {
        (l.instance != 0).then_some((l.semantic, l.instance))
    } else {
        Some((l.semantic, 0))
    }
}

/// Panoptic quality of aligned labels, matched per frame and accumulated
/// over the sequence. Predicted segments of a stuff class are merged.
pub fn panoptic_quality(pred: &[Vec<Label>], gt: &[Vec<Label>], classes: &ClassSet) -> Result<PanopticReport> {
    check_shapes(pred, gt)?;
    #[derive(Default)]
    struct Acc {
        iou_sum: f64,
        tp: usize,
        fp: usize,
        fn_: usize,
    }
    let mut acc: BTreeMap<u16, Acc> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        let mut ps: HashMap<(u16, u16), usize> = HashMap::new();
        let mut gs: HashMap<(u16, u16), usize> = HashMap::new();
        let mut inter: HashMap<((u16, u16), (u16, u16)), usize> = HashMap::new();
        for (a, b) in p.iter().zip(g) {
            if classes.ignore.contains(&b.semantic) {
                continue;
            }
            let pk = if classes.ignore.contains(&a.semantic) { None } else { segment_key(a, classes) };
            let gk = segment_key(b, classes);
            if let Some(k) = pk {
                *ps.entry(k).or_default() += 1;
            }
            if let Some(k) = gk {
                *gs.entry(k).or_default() += 1;
            }
            if let (Some(x), Some(y)) = (pk, gk) {
                if x.0 == y.0 {
                    *inter.entry((x, y)).or_default() += 1;
                }
            }
        }
        let mut matched_p = BTreeSet::new();
        let mut matched_g = BTreeSet::new();
        for (&(pk, gk), &i) in &inter {
            let u = ps[&pk] + gs[&gk] - i;
            let iou = i as f64 / u as f64;
            // IoU above one half makes the match unique.
            if iou > 0.5 {
                matched_p.insert(pk);
                matched_g.insert(gk);
                let a = acc.entry(pk.0).or_default();
                a.iou_sum += iou;
                a.tp += 1;
            }
        }
        for k in ps.keys().filter(|k| !matched_p.contains(*k)) {
            acc.entry(k.0).or_default().fp += 1;
        }
        for k in gs.keys().filter(|k| !matched_g.contains(*k)) {
            acc.entry(k.0).or_default().fn_ += 1;
        }
    }
    let ious = class_ious(pred, gt, classes);
    let mut per_class = BTreeMap::new();
    for (c, a) in acc {
        let den = a.tp as f64 + 0.5 * a.fp as f64 + 0.5 * a.fn_ as f64;
        let (sq, rq) = if a.tp == 0 { (0.0, 0.0) } else { (a.iou_sum / a.tp as f64, a.tp as f64 / den) };
        per_class.insert(
            c,
            ClassScores {
                pq: sq * rq,
                sq,
                rq,
                iou: ious.get(&c).copied().unwrap_or(0.0),
                tp: a.tp,
                fp: a.fp,
                fn_: a.fn_,
            },
        );
    }
    let pick = |thing: Option<bool>| {
        mean(
            per_class
                .iter()
                .filter(|(c, _)| thing.is_none_or(|t| classes.is_thing(**c) == t))
                .map(|(_, s)| s.pq),
        )
    };
    Ok(PanopticReport {
        pq: pick(None),
        pq_th: pick(Some(true)),
        pq_st: pick(Some(false)),
        sq: mean(per_class.values().map(|s| s.sq)),
        rq: mean(per_class.values().map(|s| s.rq)),
        miou: mean(ious.values().copied()),
        per_class,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub lstq: f64,
    pub s_assoc: f64,
    pub s_cls: f64,
}

impl TrackingReport {
    pub fn from_parts(s_assoc: f64, s_cls: f64) -> Self {
        Self {
            lstq: (s_assoc * s_cls).sqrt(),
            s_assoc,
            s_cls,
        }
    }

    pub fn to_text(&self) -> String {
        format!("lstq={:.6}\ns_assoc={:.6}\ns_cls={:.6}\n", self.lstq, self.s_assoc, self.s_cls)
    }
}

/// Association score over sequence-wide tracks: ground-truth tracks are
/// thing `(class, instance)` pairs, predicted tracks are every non-zero
/// `(class, instance)`. With no ground-truth track it is 1 when nothing was
/// predicted either, else 0.
pub fn association_score(pred: &[Vec<Label>], gt: &[Vec<Label>], classes: &ClassSet) -> Result<f64> {
    check_shapes(pred, gt)?;
    let mut ps: HashMap<(u16, u16), usize> = HashMap::new();
    let mut gs: BTreeMap<(u16, u16), usize> = BTreeMap::new();
    let mut inter: HashMap<((u16, u16), (u16, u16)), usize> = HashMap::new();
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.iter().zip(g) {
            if classes.ignore.contains(&b.semantic) {
                continue;
            }
            let pk = (a.instance != 0).then_some((a.semantic, a.instance));
            let gk = (classes.is_thing(b.semantic) && b.instance != 0).then_some((b.semantic, b.instance));
            if let Some(k) = pk {
                *ps.entry(k).or_default() += 1;
            }
            if let Some(k) = gk {
                *gs.entry(k).or_default() += 1;
            }
            if let (Some(x), Some(y)) = (pk, gk) {
                *inter.entry((x, y)).or_default() += 1;
            }
        }
    }
    if gs.is_empty() {
        return Ok(if ps.is_empty() { 1.0 } else { 0.0 });
    }
    let mut per_gt: BTreeMap<(u16, u16), f64> = BTreeMap::new();
    for (&(pk, gk), &i) in &inter {
        let iou = i as f64 / (ps[&pk] + gs[&gk] - i) as f64;
        *per_gt.entry(gk).or_default() += i as f64 * iou;
    }
    Ok(mean(gs.iter().map(|(k, &n)| per_gt.get(k).copied().unwrap_or(0.0) / n as f64)))
}

/// LSTQ: geometric mean of association and mean class IoU.
pub fn lstq(pred: &[Vec<Label>], gt: &[Vec<Label>], classes: &ClassSet) -> Result<TrackingReport> {
    let s_assoc = association_score(pred, gt, classes)?;
    let s_cls = mean(class_ious(pred, gt, classes).into_values());
    Ok(TrackingReport::from_parts(s_assoc, s_cls))
}
