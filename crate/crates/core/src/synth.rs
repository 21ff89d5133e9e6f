//! Deterministic synthetic scene generator: scripted ground truth plus
//! corruptible detections with embeddings.
//!
//! Objects follow piecewise-linear waypoints. Directives corrupt the
//! detections without touching the ground truth: blur spans scale down
//! confidence and add alternating diagonal box jitter, merged occlusions
//! collapse a group of objects into one union-box detection, and exits
//! remove an object (detections and ground truth) until it re-enters at a
//! declared side. Everything is drawn from one seeded xoshiro generator
//! (splitmix-seeded), so a spec generates byte-identical output every run.
//!
//! Draw order is part of the format: first one base unit embedding per
//! object, then one fresh embedding per scrambled re-entry (in exit order),
//! then per frame and per emitted detection: box noise (when `noise_px` is
//! positive), blur jitter magnitude (when blurred), and the embedding
//! perturbation direction and angle (when `emb_dim` is positive and
//! `emb_noise_deg` is positive). Suppressed detections draw nothing.

use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Normal, StandardNormal, Uniform};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabeledBox;
use crate::geometry::BBox;
use crate::matcher::Detection;
use crate::mot_io::SequenceBundle;
use crate::scalar::{sc, Scalar};

/// Image border a re-entering object comes back through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

/// One object's track: waypoints `(frame, cx, cy)` interpolated linearly,
/// with a fixed box size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotion<T: Scalar> {
    /// Strictly increasing frames; must start at 1 and end at `n_frames`.
    pub waypoints: Vec<(u64, T, T)>,
    pub w: T,
    pub h: T,
}

/// Motion-blur span for one object: confidence is multiplied by
/// `conf_scale` and the detection box is displaced diagonally by a jitter
/// magnitude near `jitter_px` whose sign alternates with frame parity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurSpan<T: Scalar> {
    pub object: usize,
    pub start: u64,
    pub end: u64,
    pub conf_scale: T,
    pub jitter_px: T,
}

/// Occlusion of a group of objects over a frame span. The first listed
/// object is in front. With `merged` the whole group emits one union-box
/// detection carrying the front object's appearance; without it only the
/// front object's detection survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub objects: Vec<usize>,
    pub start: u64,
    pub end: u64,
    pub merged: bool,
}

/// Exit and re-entry of one object. The object is absent (no ground truth,
/// no detections) in `exit_frame..reentry_frame`; a re-entry past the last
/// frame means it never returns. With `scramble_reentry` the object comes
/// back with a fresh appearance embedding, severing the ReID signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exit {
    pub object: usize,
    pub exit_frame: u64,
    pub reentry_frame: u64,
    pub side: Side,
    pub scramble_reentry: bool,
}

/// Full scenario description; `generate` is a pure function of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec<T: Scalar> {
    pub name: String,
    pub seed: u64,
    pub n_frames: u64,
    pub width: T,
    pub height: T,
    /// 0 disables embeddings.
    pub emb_dim: usize,
    /// Angular std of per-detection embedding noise, degrees.
    pub emb_noise_deg: T,
    pub base_conf: T,
    /// Gaussian std of detection box displacement, pixels.
    pub noise_px: T,
    pub objects: Vec<ObjectMotion<T>>,
    pub blurs: Vec<BlurSpan<T>>,
    pub occlusions: Vec<Occlusion>,
    pub exits: Vec<Exit>,
}

impl<T: Scalar> ScenarioSpec<T> {
    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    fn validate(&self) -> Result<()> {
        let conflict = |msg: String| Err(Error::ScenarioConflict(msg));
        if self.n_frames == 0 {
            return conflict("scenario needs at least one frame".into());
        }
        if !(self.base_conf > T::zero() && self.base_conf <= T::one()) {
            return conflict(format!("base_conf {} outside (0, 1]", self.base_conf));
        }
        if !(self.noise_px >= T::zero() && self.noise_px.is_finite()) {
            return conflict(format!("noise_px {} must be finite and >= 0", self.noise_px));
        }
        if !(self.emb_noise_deg >= T::zero() && self.emb_noise_deg.is_finite()) {
            return conflict(format!("emb_noise_deg {} must be finite and >= 0", self.emb_noise_deg));
        }
        for (o, m) in self.objects.iter().enumerate() {
            if m.w <= T::zero() || m.h <= T::zero() {
                return conflict(format!("object {o} has non-positive box size"));
            }
            let frames: Vec<u64> = m.waypoints.iter().map(|w| w.0).collect();
            if frames.first() != Some(&1) || frames.last() != Some(&self.n_frames) {
                return conflict(format!("object {o} waypoints must span frames 1..={}", self.n_frames));
            }
            if !frames.windows(2).all(|p| p[0] < p[1]) {
                return conflict(format!("object {o} waypoint frames must be strictly increasing"));
            }
        }
        let span_ok = |s: u64, e: u64| s >= 1 && s <= e && e <= self.n_frames;
        for b in &self.blurs {
            if b.object >= self.objects.len() {
                return conflict(format!("blur references unknown object {}", b.object));
            }
            if !span_ok(b.start, b.end) {
                return conflict(format!("blur span {}..={} outside 1..={}", b.start, b.end, self.n_frames));
            }
            if !(b.conf_scale >= T::zero() && b.conf_scale <= T::one()) {
                return conflict(format!("blur conf_scale {} outside [0, 1]", b.conf_scale));
            }
            if !(b.jitter_px >= T::zero() && b.jitter_px.is_finite()) {
                return conflict(format!("blur jitter_px {} must be finite and >= 0", b.jitter_px));
            }
        }
        for oc in &self.occlusions {
            if oc.objects.len() < 2 && oc.merged {
                return conflict("merged occlusion needs at least two objects".into());
            }
            if oc.objects.is_empty() {
                return conflict("occlusion with no objects".into());
            }
            let mut sorted = oc.objects.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != oc.objects.len() {
                return conflict("occlusion lists an object twice".into());
            }
            if let Some(&o) = oc.objects.iter().find(|&&o| o >= self.objects.len()) {
                return conflict(format!("occlusion references unknown object {o}"));
            }
            if !span_ok(oc.start, oc.end) {
                return conflict(format!("occlusion span {}..={} outside 1..={}", oc.start, oc.end, self.n_frames));
            }
        }
        for e in &self.exits {
            if e.object >= self.objects.len() {
                return conflict(format!("exit references unknown object {}", e.object));
            }
            if e.exit_frame < 1 || e.exit_frame > self.n_frames || e.exit_frame >= e.reentry_frame {
                return conflict(format!(
                    "exit frames {}..{} invalid for a {}-frame scenario",
                    e.exit_frame, e.reentry_frame, self.n_frames
                ));
            }
        }
        // Overlap conflicts: an absent object cannot be occluded or blurred,
        // and occlusions of one object must not overlap each other.
        let overlaps = |a0: u64, a1: u64, b0: u64, b1: u64| a0 <= b1 && b0 <= a1;
        for e in &self.exits {
            let (gone0, gone1) = (e.exit_frame, e.reentry_frame - 1);
            for oc in &self.occlusions {
                if oc.objects.contains(&e.object) && overlaps(gone0, gone1, oc.start, oc.end) {
                    return conflict(format!(
                        "object {} is exited in frames {}..={} but occluded in {}..={}",
                        e.object, gone0, gone1, oc.start, oc.end
                    ));
                }
            }
            for b in &self.blurs {
                if b.object == e.object && overlaps(gone0, gone1, b.start, b.end) {
                    return conflict(format!(
                        "object {} is exited in frames {}..={} but blurred in {}..={}",
                        e.object, gone0, gone1, b.start, b.end
                    ));
                }
            }
            for e2 in &self.exits {
                if !std::ptr::eq(e, e2) && e2.object == e.object && overlaps(gone0, gone1, e2.exit_frame, e2.reentry_frame - 1) {
                    return conflict(format!("object {} has overlapping exits", e.object));
                }
            }
        }
        for (i, a) in self.occlusions.iter().enumerate() {
            for b in &self.occlusions[i + 1..] {
                if overlaps(a.start, a.end, b.start, b.end) && a.objects.iter().any(|o| b.objects.contains(o)) {
                    return conflict("an object appears in two overlapping occlusions".into());
                }
            }
        }
        Ok(())
    }
}

/// Linear interpolation along the waypoints at `frame`. Integer waypoint
/// coordinates stay exact on frames where the step divides evenly.
fn position<T: Scalar>(m: &ObjectMotion<T>, frame: u64) -> (T, T) {
    let wp = &m.waypoints;
    let seg = wp.windows(2).find(|p| p[0].0 <= frame && frame <= p[1].0);
    match seg {
        None => {
            let last = wp.last().expect("validated non-empty");
            (last.1, last.2)
        }
        Some(p) => {
            let (f0, x0, y0) = p[0];
            let (f1, x1, y1) = p[1];
            let k = (frame - f0) as f64;
            let n = (f1 - f0) as f64;
            let x = x0.as_f64() + (x1.as_f64() - x0.as_f64()) * k / n;
            let y = y0.as_f64() + (y1.as_f64() - y0.as_f64()) * k / n;
            (sc(x), sc(y))
        }
    }
}

fn gt_box<T: Scalar>(m: &ObjectMotion<T>, frame: u64) -> BBox<T> {
    let (cx, cy) = position(m, frame);
    let two = sc::<T>(2.0);
    BBox::new(cx - m.w / two, cy - m.h / two, m.w, m.h)
}

fn unit_gaussian(rng: &mut Xoshiro256PlusPlus, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Rotates `base` by `theta` radians toward a random orthogonal direction.
fn perturb_emb(rng: &mut Xoshiro256PlusPlus, base: &[f64], noise_rad: f64) -> Vec<f64> {
    if base.len() < 2 || noise_rad <= 0.0 {
        return base.to_vec();
    }
    let dir = unit_gaussian(rng, base.len());
    let theta: f64 = rng.sample(Normal::new(0.0, noise_rad).expect("finite std"));
    let dot: f64 = dir.iter().zip(base).map(|(a, b)| a * b).sum();
    let mut orth: Vec<f64> = dir.iter().zip(base).map(|(d, b)| d - dot * b).collect();
    let n = orth.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-9 {
        return base.to_vec();
    }
    for v in &mut orth {
        *v /= n;
    }
    let (c, s) = (theta.cos(), theta.sin());
    let raw: Vec<f64> = base.iter().zip(&orth).map(|(b, o)| c * b + s * o).collect();
    let rn = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.into_iter().map(|x| x / rn).collect()
}

fn to_unit_t<T: Scalar>(e: &[f64]) -> Vec<T> {
    let mut out: Vec<T> = e.iter().map(|&v| sc::<T>(v)).collect();
    let n = out.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b).sqrt();
    for v in &mut out {
        *v /= n;
    }
    out
}

/// Generates the ground-truth table and the detection bundle for a spec.
/// Deterministic: equal specs produce equal outputs.
pub fn generate<T: Scalar>(spec: &ScenarioSpec<T>) -> Result<(Vec<LabeledBox<T>>, SequenceBundle<T>)> {
    spec.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);

    // Base embeddings, then scrambled re-entry embeddings, in fixed order.
    let mut base_embs: Vec<Vec<f64>> = Vec::new();
    if spec.emb_dim > 0 {
        for _ in 0..spec.objects.len() {
            base_embs.push(unit_gaussian(&mut rng, spec.emb_dim));
        }
    }
    let mut reentry_embs: Vec<Option<Vec<f64>>> = vec![None; spec.exits.len()];
    if spec.emb_dim > 0 {
        for (i, e) in spec.exits.iter().enumerate() {
            if e.scramble_reentry {
                reentry_embs[i] = Some(unit_gaussian(&mut rng, spec.emb_dim));
            }
        }
    }

    let absent = |o: usize, f: u64| {
        spec.exits
            .iter()
            .any(|e| e.object == o && e.exit_frame <= f && f < e.reentry_frame)
    };
    // Embedding in effect for an object at a frame: the latest scrambled
    // re-entry at or before the frame wins, otherwise the base.
    let emb_for = |o: usize, f: u64| -> &Vec<f64> {
        let mut best: Option<(u64, usize)> = None;
        for (i, e) in spec.exits.iter().enumerate() {
            if e.object == o && reentry_embs[i].is_some() && e.reentry_frame <= f {
                if best.map_or(true, |(bf, _)| e.reentry_frame > bf) {
                    best = Some((e.reentry_frame, i));
                }
            }
        }
        match best {
            Some((_, i)) => reentry_embs[i].as_ref().expect("checked is_some"),
            None => &base_embs[o],
        }
    };

    let noise_rad = spec.emb_noise_deg.as_f64().to_radians();
    let mut gt: Vec<LabeledBox<T>> = Vec::new();
    let mut frames: Vec<Vec<Detection<T>>> = Vec::with_capacity(spec.n_frames as usize);

    for f in 1..=spec.n_frames {
        let mut dets: Vec<Detection<T>> = Vec::new();
        for (o, m) in spec.objects.iter().enumerate() {
            if absent(o, f) {
                continue;
            }
            let gb = gt_box(m, f);
            gt.push(LabeledBox { frame: f, id: o as u64 + 1, bbox: gb });

            // Occlusion role of this object at this frame.
            let group = spec
                .occlusions
                .iter()
                .find(|oc| oc.start <= f && f <= oc.end && oc.objects.contains(&o));
            let (suppressed, merged_group) = match group {
                None => (false, None),
                Some(oc) => {
                    let front = oc.objects[0];
                    if o != front {
                        (true, None)
                    } else {
                        (false, oc.merged.then_some(oc))
                    }
                }
            };
            if suppressed {
                continue;
            }

            let mut bbox = match merged_group {
                None => gb,
                Some(oc) => {
                    let mut u = gb;
                    for &other in &oc.objects[1..] {
                        u = BBox::union_bound(&u, &gt_box(&spec.objects[other], f));
                    }
                    u
                }
            };

            if spec.noise_px > T::zero() {
                let dist = Normal::new(0.0, spec.noise_px.as_f64()).expect("finite std");
                let dx: f64 = rng.sample(dist);
                let dy: f64 = rng.sample(dist);
                bbox.x += sc(dx);
                bbox.y += sc(dy);
            }

            let blur = spec.blurs.iter().find(|b| b.object == o && b.start <= f && f <= b.end);
            let mut conf = spec.base_conf;
            if let Some(b) = blur {
                conf *= b.conf_scale;
                if b.jitter_px > T::zero() {
                    let j = b.jitter_px.as_f64();
                    let lo = (j - 2.0).max(0.0);
                    let mag: f64 = rng.sample(Uniform::new_inclusive(lo, j + 2.0).expect("ordered range"));
                    // Diagonal smear whose direction flips with frame parity.
                    let sign = if f % 2 == 0 { 1.0 } else { -1.0 };
                    bbox.x += sc(sign * mag);
                    bbox.y -= sc(sign * mag);
                }
            }

            let emb = if spec.emb_dim == 0 {
                None
            } else {
                let base = emb_for(o, f);
                let e = if noise_rad > 0.0 {
                    perturb_emb(&mut rng, base, noise_rad)
                } else {
                    base.clone()
                };
                Some(to_unit_t::<T>(&e))
            };

            dets.push(Detection { frame: f, bbox, conf: conf.clamp(T::zero(), T::one()), emb });
        }
        frames.push(dets);
    }

    let bundle = SequenceBundle {
        name: spec.name.clone(),
        width: spec.width,
        height: spec.height,
        fps: 30.0,
        emb_dim: spec.emb_dim,
        frames,
    };
    Ok((gt, bundle))
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 4] = ["crossing", "boxout_merge", "blur_dip", "edge_reentry"];

/// Fixed, documented scenarios, one per tracked failure mode:
///
/// - `crossing`: two players swap sides, paths intersecting mid-sequence;
///   appearance must carry identity through the pass.
/// - `boxout_merge`: a defender holds position while an opponent leans in;
///   the detector fuses both into one box for eight frames.
/// - `blur_dip`: motion blur drops one player's confidence to 0.21 and
///   smears the box for six frames.
/// - `edge_reentry`: a player leaves through the left border and comes back
///   fifteen frames later at a different height.
pub fn preset<T: Scalar>(name: &str) -> Result<ScenarioSpec<T>> {
    let obj = |waypoints: Vec<(u64, f64, f64)>, w: f64, h: f64| ObjectMotion {
        waypoints: waypoints.into_iter().map(|(f, x, y)| (f, sc::<T>(x), sc::<T>(y))).collect(),
        w: sc(w),
        h: sc(h),
    };
    let base = |name: &str, n_frames: u64| ScenarioSpec::<T> {
        name: name.to_string(),
        seed: 7,
        n_frames,
        width: sc(1280.0),
        height: sc(720.0),
        emb_dim: 16,
        emb_noise_deg: sc(5.0),
        base_conf: sc(0.9),
        noise_px: T::zero(),
        objects: Vec::new(),
        blurs: Vec::new(),
        occlusions: Vec::new(),
        exits: Vec::new(),
    };
    match name {
        "crossing" => {
            let mut s = base("crossing", 40);
            s.emb_dim = 8;
            s.objects = vec![
                obj(vec![(1, 240.0, 360.0), (40, 1020.0, 360.0)], 40.0, 80.0),
                obj(vec![(1, 1020.0, 360.0), (40, 240.0, 360.0)], 40.0, 80.0),
            ];
            Ok(s)
        }
        "boxout_merge" => {
            let mut s = base("boxout_merge", 60);
            // Eight identical union-box updates erase the motion separation,
            // so the post-merge split has to be resolved by appearance.
            s.emb_dim = 8;
            s.objects = vec![
                obj(vec![(1, 640.0, 360.0), (60, 640.0, 360.0)], 44.0, 88.0),
                obj(
                    vec![(1, 880.0, 356.0), (20, 652.0, 356.0), (28, 628.0, 356.0), (60, 532.0, 356.0)],
                    44.0,
                    88.0,
                ),
            ];
            s.occlusions = vec![Occlusion { objects: vec![0, 1], start: 20, end: 27, merged: true }];
            Ok(s)
        }
        "blur_dip" => {
            let mut s = base("blur_dip", 50);
            s.base_conf = sc(0.84);
            s.objects = vec![obj(vec![(1, 300.0, 300.0), (50, 790.0, 300.0)], 40.0, 80.0)];
            s.blurs = vec![BlurSpan { object: 0, start: 20, end: 25, conf_scale: sc(0.25), jitter_px: sc(7.0) }];
            Ok(s)
        }
        "edge_reentry" => {
            let mut s = base("edge_reentry", 60);
            s.objects = vec![obj(
                vec![(1, 400.0, 360.0), (29, 64.0, 360.0), (45, 64.0, 380.0), (60, 244.0, 380.0)],
                40.0,
                80.0,
            )];
            s.exits = vec![Exit {
                object: 0,
                exit_frame: 30,
                reentry_frame: 45,
                side: Side::Left,
                scramble_reentry: false,
            }];
            Ok(s)
        }
        _ => Err(Error::UnknownPreset { name: name.to_string(), available: PRESET_NAMES.join(", ") }),
    }
}
