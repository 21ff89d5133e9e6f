//! The per-frame association pipeline.
//!
//! Each frame runs four gated matching rounds over a hybrid
//! IOU/appearance cost (an IOU-dominant tight round over all detections,
//! an appearance-dominant round and a loose IOU round over high-confidence
//! leftovers, then a loose round over low-confidence detections), followed
//! by mistrack removal, one-to-many fill-in for crowded tracks, loss
//! classification, pruning, spawn logic, and restoration of tracks that
//! left through the image border.

use std::collections::BTreeMap;

use crate::assignment::gated_match;
use crate::error::{Error, Result};
use crate::geometry::{
    cosine_distance, hybrid_distance, iou, iou_distance_matrix, nms_keep_indices, BBox,
    CostMatrix,
};
use crate::motion::{kf_box, kf_predict};
use crate::scalar::{sc, Scalar};
use crate::track::{
    mark_lost, prune, track_new, track_update, Track, TrackState, TrackerConfig,
};

/// One detector output box.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T: Scalar> {
    pub frame: u64,
    pub bbox: BBox<T>,
    /// Detector confidence in `[0, 1]`.
    pub conf: T,
    /// Unit appearance embedding; `None` runs the pipeline in IOU-only mode
    /// where every appearance distance is the neutral midpoint 1.0.
    pub emb: Option<Vec<T>>,
}

/// Frame geometry the pipeline needs for edge handling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameContext<T: Scalar> {
    pub frame: u64,
    pub width: T,
    pub height: T,
}

/// Which mechanism produced an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStage {
    /// Tight IOU-dominant round over all detections.
    Stage1,
    /// Appearance-dominant round over high-confidence leftovers.
    Stage2,
    /// Loose IOU-dominant round over high-confidence leftovers.
    Stage3,
    /// Loose IOU-dominant round over low-confidence detections.
    Stage4,
    /// One-to-many crowded-track fill-in.
    Crowded,
}

/// One track-detection pairing decided this frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T: Scalar> {
    pub track_id: u64,
    pub det_index: usize,
    pub stage: MatchStage,
    /// The stage's matching cost; for `Crowded`, the IOU distance between
    /// the predicted box and the candidate detection.
    pub cost: T,
}

/// Everything that happened in one [`SportsTracker::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult<T: Scalar> {
    pub frame: u64,
    /// A detection index appears in at most one assignment, except as a
    /// crowded candidate, which may serve several tracks at once.
    pub assignments: Vec<Assignment<T>>,
    /// Ids spawned this frame, ascending.
    pub spawned: Vec<u64>,
    /// Detection indices the spawns came from, parallel to `spawned`.
    pub spawned_dets: Vec<usize>,
    /// Ids retired this frame (mistracks and stale lost tracks), ascending.
    /// Disjoint from `spawned`.
    pub removed: Vec<u64>,
    /// `(surviving id, absorbed id)` restoration merges.
    pub restored_merges: Vec<(u64, u64)>,
}

/// One output row of a tracking run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRow<T: Scalar> {
    pub frame: u64,
    pub id: u64,
    pub bbox: BBox<T>,
    pub conf: T,
}

/// Whether [`run_sequence`] may rewrite already-emitted frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Relabel absorbed ids retroactively and sort at the end. Default for
    /// evaluation.
    Batch,
    /// Emit rows as frames complete; merges only affect later frames.
    Streaming,
}

/// Counters for a whole-sequence run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub frames: u64,
    pub spawned: u64,
    pub removed: u64,
    pub restored: u64,
}

/// A single-sequence tracking session.
///
/// Owns the track store; call [`step`](Self::step) once per frame with
/// strictly increasing frame numbers, then read rows back per frame or via
/// [`run_sequence`].
#[derive(Debug, Clone)]
pub struct SportsTracker<T: Scalar> {
    cfg: TrackerConfig<T>,
    /// Active tracks (`New`, `Tracked`, `Lost`), ascending id.
    tracks: Vec<Track<T>>,
    /// Retired tracks, in retirement order.
    archive: Vec<Track<T>>,
    /// Absorbed id -> surviving id, possibly chained.
    alias: BTreeMap<u64, u64>,
    next_id: u64,
    first_frame: Option<u64>,
    last_frame: Option<u64>,
    emb_dim: Option<usize>,
}

impl<T: Scalar> SportsTracker<T> {
    pub fn new(cfg: TrackerConfig<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            archive: Vec::new(),
            alias: BTreeMap::new(),
            next_id: 1,
            first_frame: None,
            last_frame: None,
            emb_dim: None,
        })
    }

    pub fn cfg(&self) -> &TrackerConfig<T> {
        &self.cfg
    }

    /// Active tracks, ascending id.
    pub fn tracks(&self) -> &[Track<T>] {
        &self.tracks
    }

    /// Retired tracks (pruned, mistracks, absorbed by restoration).
    pub fn archive(&self) -> &[Track<T>] {
        &self.archive
    }

    /// Follows restoration aliases to the surviving id.
    pub fn resolve_id(&self, id: u64) -> u64 {
        let mut cur = id;
        while let Some(&next) = self.alias.get(&cur) {
            cur = next;
        }
        cur
    }

    /// Output rows for `frame`: every track that absorbed a detection this
    /// frame and is in `Tracked` state, ascending id, carrying the matched
    /// detection's box (not the filter posterior).
    pub fn frame_rows(&self, frame: u64) -> Vec<TrackRow<T>> {
        self.tracks
            .iter()
            .filter(|t| t.state == TrackState::Tracked && t.last_update_frame == frame)
            .map(|t| TrackRow {
                frame,
                id: t.id,
                bbox: t.last_det_box,
                conf: t.last_confidence,
            })
            .collect()
    }

    /// Runs one frame of the pipeline. `dets` must all carry `ctx.frame`,
    /// and frames must strictly increase between calls.
    pub fn step(&mut self, dets: &[Detection<T>], ctx: &FrameContext<T>) -> Result<FrameResult<T>> {
        let frame = ctx.frame;
        let two = sc::<T>(2.0);
        if ctx.width <= self.cfg.edge_band_px * two || ctx.height <= self.cfg.edge_band_px * two {
            return Err(Error::Config {
                key: "edge_band_px".to_string(),
                msg: "image must be larger than twice the border band".to_string(),
            });
        }
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::FrameRegression { frame, last });
            }
        }
        self.first_frame.get_or_insert(frame);
        for d in dets {
            debug_assert_eq!(d.frame, frame, "detection from a different frame");
            if let Some(e) = &d.emb {
                match self.emb_dim {
                    None => self.emb_dim = Some(e.len()),
                    Some(dim) if dim != e.len() => {
                        return Err(Error::EmbeddingDim {
                            expected: dim,
                            got: e.len(),
                        })
                    }
                    _ => {}
                }
            }
        }

        // (a) Predict every active track; edge-lost tracks stay suspended
        // (their recovery path does not use the motion model).
        for t in &mut self.tracks {
            if !t.lost_at_edge {
                t.kf = kf_predict(&t.kf);
            }
        }

        // Crowded candidates come from this frame's predictions, before any
        // round can move a filter state.
        let crowd = crowded_candidates(&self.tracks, dets, &self.cfg);

        // Matchable pool: everything except edge-lost tracks.
        let pool: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| !self.tracks[i].lost_at_edge)
            .collect();
        let pred: Vec<BBox<T>> = pool
            .iter()
            .map(|&i| kf_box(&self.tracks[i].kf))
            .collect::<Result<_>>()?;
        let det_boxes: Vec<BBox<T>> = dets.iter().map(|d| d.bbox).collect();
        let d_full = iou_distance_matrix(&pred, &det_boxes);
        let e_full = CostMatrix::from_fn(pool.len(), dets.len(), |i, j| {
            match (&self.tracks[pool[i]].smooth_feat, &dets[j].emb) {
                (Some(s), Some(e)) => cosine_distance(s, e),
                _ => T::one(),
            }
        });

        let mut pool_matched = vec![false; pool.len()];
        let mut det_taken = vec![false; dets.len()];
        let mut assignments: Vec<Assignment<T>> = Vec::new();

        // (b), (d), (e), (f): the four gated rounds.
        let rounds = [
            (MatchStage::Stage1, self.cfg.stage1_gate, true),
            (
                MatchStage::Stage2,
                self.cfg.stage2_gate,
                !self.cfg.stage2_invert_weights,
            ),
            (MatchStage::Stage3, self.cfg.stage3_gate, true),
            (MatchStage::Stage4, self.cfg.stage4_gate, true),
        ];
        for (stage, gate, iou_dominant) in rounds {
            let rows: Vec<usize> = (0..pool.len()).filter(|&p| !pool_matched[p]).collect();
            let cols: Vec<usize> = (0..dets.len())
                .filter(|&j| !det_taken[j])
                .filter(|&j| match stage {
                    MatchStage::Stage1 => true,
                    MatchStage::Stage4 => dets[j].conf < self.cfg.conf_split,
                    _ => dets[j].conf >= self.cfg.conf_split,
                })
                .collect();
            if rows.is_empty() || cols.is_empty() {
                continue;
            }
            let sub = |m: &CostMatrix<T>| {
                CostMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
            };
            let cost = hybrid_distance(&sub(&d_full), &sub(&e_full), self.cfg.alpha, iou_dominant)?;
            for (r, c) in gated_match(&cost, gate).matches {
                let (p, j) = (rows[r], cols[c]);
                pool_matched[p] = true;
                det_taken[j] = true;
                let t = &mut self.tracks[pool[p]];
                track_update(t, &dets[j], frame, &self.cfg)?;
                assignments.push(Assignment {
                    track_id: t.id,
                    det_index: j,
                    stage,
                    cost: cost[(r, c)],
                });
            }
        }

        // (g) Mistrack removal: an unmatched track that never survived a
        // re-match and did not start the sequence is noise.
        let first = self.first_frame.unwrap();
        let mut removed_ids: Vec<u64> = Vec::new();
        for (p, &ti) in pool.iter().enumerate() {
            if pool_matched[p] {
                continue;
            }
            let t = &mut self.tracks[ti];
            if t.start_frame != first && t.length == 1 {
                t.state = TrackState::Removed;
                removed_ids.push(t.id);
            }
        }

        // (h) Crowded fill-in: unmatched crowded tracks consume their
        // candidate detection, one-to-many.
        let unmatched_idx: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|&(p, _)| !pool_matched[p])
            .map(|(_, &ti)| ti)
            .collect();
        let mut crowd_used = vec![false; dets.len()];
        let crowd_applied =
            apply_crowded(&mut self.tracks, &unmatched_idx, &crowd, dets, frame, &self.cfg)?;
        for (ti, j, dist) in crowd_applied {
            crowd_used[j] = true;
            let p = pool.iter().position(|&x| x == ti).expect("crowded track is in the pool");
            pool_matched[p] = true;
            assignments.push(Assignment {
                track_id: self.tracks[ti].id,
                det_index: j,
                stage: MatchStage::Crowded,
                cost: dist,
            });
        }

        // (i) Remaining unmatched tracked tracks go lost, classified
        // edge/center from the predicted position.
        for (p, &ti) in pool.iter().enumerate() {
            if pool_matched[p] {
                continue;
            }
            if self.tracks[ti].state == TrackState::Tracked {
                mark_lost(&mut self.tracks[ti], frame, ctx, &self.cfg);
            }
        }

        // (j) Retire mistracks and stale lost tracks. Index-based phases
        // are done; the list may shrink now.
        let mut drained: Vec<Track<T>> = Vec::new();
        self.tracks.retain_mut(|t| {
            if t.state == TrackState::Removed {
                drained.push(t.clone());
                false
            } else {
                true
            }
        });
        for t in prune(&mut self.tracks, frame, &self.cfg) {
            removed_ids.push(t.id);
            drained.push(t);
        }
        self.archive.extend(drained);
        removed_ids.sort_unstable();

        // (k) Spawn: NMS over unmatched high-confidence detections, then
        // suppress anything overlapping a detection already assigned this
        // frame (matched or crowded-consumed). Low-confidence leftovers are
        // discarded, never spawned.
        let spawn_pool: Vec<usize> = (0..dets.len())
            .filter(|&j| !det_taken[j] && !crowd_used[j] && dets[j].conf >= self.cfg.conf_split)
            .collect();
        let nms_input: Vec<(BBox<T>, T)> =
            spawn_pool.iter().map(|&j| (dets[j].bbox, dets[j].conf)).collect();
        let keep = nms_keep_indices(&nms_input, self.cfg.nms_thr);
        let used_boxes: Vec<BBox<T>> = (0..dets.len())
            .filter(|&j| det_taken[j] || crowd_used[j])
            .map(|j| dets[j].bbox)
            .collect();
        let mut spawned: Vec<u64> = Vec::new();
        let mut spawned_dets: Vec<usize> = Vec::new();
        for k in keep {
            let j = spawn_pool[k];
            let suppressed = used_boxes
                .iter()
                .any(|b| iou(b, &dets[j].bbox) > self.cfg.spawn_iou_suppress);
            if suppressed {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let mut t = track_new(&dets[j], frame, id);
            if frame == first {
                t.state = TrackState::Tracked;
            }
            self.tracks.push(t);
            spawned.push(id);
            spawned_dets.push(j);
        }

        // (l) Border restoration; absorbed young tracks are drained to the
        // archive under an alias, not reported as removed.
        let restored_merges = restore_edge_tracks(&mut self.tracks, ctx, &self.cfg);
        for &(surviving, absorbed) in &restored_merges {
            self.alias.insert(absorbed, surviving);
        }
        let mut absorbed_tracks: Vec<Track<T>> = Vec::new();
        self.tracks.retain_mut(|t| {
            if t.state == TrackState::Removed {
                absorbed_tracks.push(t.clone());
                false
            } else {
                true
            }
        });
        self.archive.extend(absorbed_tracks);

        debug_assert!(self.tracks.windows(2).all(|w| w[0].id < w[1].id));
        self.last_frame = Some(frame);
        Ok(FrameResult {
            frame,
            assignments,
            spawned,
            spawned_dets,
            removed: removed_ids,
            restored_merges,
        })
    }
}

/// Crowded-track candidate map, computed from predicted boxes.
///
/// Every unordered pair of unlost (`New` or `Tracked`) tracks whose
/// predicted boxes overlap above `crowd_iou` marks both tracks crowded.
/// Each crowded track maps to its maximum-IOU detection (ties to the lower
/// index) if that IOU clears `crowd_candidate_iou`; one detection may serve
/// several tracks.
pub fn crowded_candidates<T: Scalar>(
    tracks: &[Track<T>],
    dets: &[Detection<T>],
    cfg: &TrackerConfig<T>,
) -> BTreeMap<u64, usize> {
    let unlost: Vec<(&Track<T>, BBox<T>)> = tracks
        .iter()
        .filter(|t| matches!(t.state, TrackState::New | TrackState::Tracked))
        .map(|t| (t, kf_box(&t.kf).expect("track dimensions stay positive")))
        .collect();
    let mut crowded = vec![false; unlost.len()];
    for i in 0..unlost.len() {
        for j in i + 1..unlost.len() {
            if iou(&unlost[i].1, &unlost[j].1) > cfg.crowd_iou {
                crowded[i] = true;
                crowded[j] = true;
            }
        }
    }
    let mut out = BTreeMap::new();
    for (k, (t, pb)) in unlost.iter().enumerate() {
        if !crowded[k] {
            continue;
        }
        let mut best: Option<(T, usize)> = None;
        for (j, d) in dets.iter().enumerate() {
            let v = iou(pb, &d.bbox);
            if best.map_or(true, |(bv, _)| v > bv) {
                best = Some((v, j));
            }
        }
        if let Some((v, j)) = best {
            if v > cfg.crowd_candidate_iou {
                out.insert(t.id, j);
            }
        }
    }
    out
}

/// Updates each still-unmatched crowded track from its candidate detection.
///
/// `unmatched` indexes into `tracks`. The candidate's box drives the Kalman
/// update and bookkeeping, but its embedding is NOT folded into the track's
/// appearance: a shared box depicts more than one body, and mixing it in
/// would corrupt later appearance matching. Returns
/// `(track index, detection index, IOU distance)` per update.
pub fn apply_crowded<T: Scalar>(
    tracks: &mut [Track<T>],
    unmatched: &[usize],
    candidates: &BTreeMap<u64, usize>,
    dets: &[Detection<T>],
    frame: u64,
    cfg: &TrackerConfig<T>,
) -> Result<Vec<(usize, usize, T)>> {
    let mut out = Vec::new();
    for &ti in unmatched {
        if !matches!(tracks[ti].state, TrackState::New | TrackState::Tracked) {
            continue;
        }
        let Some(&j) = candidates.get(&tracks[ti].id) else {
            continue;
        };
        let dist = T::one() - iou(&kf_box(&tracks[ti].kf)?, &dets[j].bbox);
        let boxed = Detection {
            emb: None,
            ..dets[j].clone()
        };
        track_update(&mut tracks[ti], &boxed, frame, cfg)?;
        out.push((ti, j, dist));
    }
    Ok(out)
}

/// Merges edge-lost tracks with compatible young tracks.
///
/// A young track qualifies against a lost one when it spawned strictly
/// after the loss, is shorter than `restore_max_new_len`, is currently
/// alive (`New` or `Tracked`), and its entry angle (first detection center
/// about the image center) sits within `restore_max_angle_deg` of the exit
/// angle. Appearance then votes: all pairwise distances between the lost
/// track's latest `restore_lost_hist` embeddings and the young track's
/// latest `restore_new_hist`; a distance under `restore_reid_thr` is one
/// vote, and at least `restore_min_votes` are required. Pairs merge
/// greedily by ascending mean distance (ties by ids); each track merges at
/// most once per call. The survivor keeps its identity but continues from
/// the young track's motion state, appearance, and bookkeeping; the
/// absorbed track is left in place marked `Removed` for the caller to
/// drain. Returns `(surviving id, absorbed id)` pairs.
pub fn restore_edge_tracks<T: Scalar>(
    tracks: &mut [Track<T>],
    ctx: &FrameContext<T>,
    cfg: &TrackerConfig<T>,
) -> Vec<(u64, u64)> {
    let two = sc::<T>(2.0);
    let max_gap = cfg.restore_max_angle_deg.to_radians();
    let lost_idx: Vec<usize> = (0..tracks.len())
        .filter(|&i| tracks[i].state == TrackState::Lost && tracks[i].lost_at_edge)
        .collect();
    let young_idx: Vec<usize> = (0..tracks.len())
        .filter(|&i| matches!(tracks[i].state, TrackState::New | TrackState::Tracked))
        .collect();

    // Score all eligible pairs.
    let mut scored: Vec<(T, u64, u64, usize, usize)> = Vec::new();
    for &li in &lost_idx {
        let lost = &tracks[li];
        let (Some(lost_since), Some(lost_angle)) = (lost.lost_since, lost.lost_angle) else {
            continue;
        };
        let lost_feats: Vec<&Vec<T>> = lost
            .feat_history
            .iter()
            .rev()
            .take(cfg.restore_lost_hist)
            .collect();
        for &yi in &young_idx {
            let young = &tracks[yi];
            if young.start_frame <= lost_since || young.length >= cfg.restore_max_new_len {
                continue;
            }
            let entry = (young.first_center.1 - ctx.height / two)
                .atan2(young.first_center.0 - ctx.width / two);
            let mut gap = (entry - lost_angle).abs();
            if gap > T::PI() {
                gap = two * T::PI() - gap;
            }
            if gap >= max_gap {
                continue;
            }
            let young_feats: Vec<&Vec<T>> = young
                .feat_history
                .iter()
                .rev()
                .take(cfg.restore_new_hist)
                .collect();
            let mut votes = 0usize;
            let mut total = T::zero();
            let mut pairs = 0usize;
            for lf in &lost_feats {
                for yf in &young_feats {
                    let d = cosine_distance(lf, yf);
                    total += d;
                    pairs += 1;
                    if d < cfg.restore_reid_thr {
                        votes += 1;
                    }
                }
            }
            if pairs == 0 || votes < cfg.restore_min_votes {
                continue;
            }
            let mean = total / sc(pairs as f64);
            scored.push((mean, lost.id, young.id, li, yi));
        }
    }

    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("mean distances are finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut merges = Vec::new();
    let mut taken_lost = std::collections::BTreeSet::new();
    let mut taken_young = std::collections::BTreeSet::new();
    for (_, lost_id, young_id, li, yi) in scored {
        if taken_lost.contains(&lost_id) || taken_young.contains(&young_id) {
            continue;
        }
        taken_lost.insert(lost_id);
        taken_young.insert(young_id);
        let young = tracks[yi].clone();
        let surv = &mut tracks[li];
        surv.kf = young.kf;
        surv.state = TrackState::Tracked;
        surv.lost_since = None;
        surv.lost_at_edge = false;
        surv.lost_angle = None;
        surv.last_update_frame = young.last_update_frame;
        surv.last_det_box = young.last_det_box;
        surv.last_confidence = young.last_confidence;
        surv.length += young.length;
        if young.smooth_feat.is_some() {
            surv.smooth_feat = young.smooth_feat;
        }
        for f in young.feat_history {
            surv.feat_history.push_back(f);
        }
        while surv.feat_history.len() > cfg.restore_lost_hist.max(1) {
            surv.feat_history.pop_front();
        }
        tracks[yi].state = TrackState::Removed;
        merges.push((lost_id, young_id));
    }
    merges
}

/// Runs a whole sequence and returns the output table plus counters.
///
/// `dets_by_frame[k]` holds frame `k + 1`. In batch mode restoration
/// merges are applied to the entire table (absorbed ids relabeled to their
/// survivors) and rows are sorted by `(frame, id)`; streaming mode leaves
/// history as it was emitted.
pub fn run_sequence<T: Scalar>(
    dets_by_frame: &[Vec<Detection<T>>],
    width: T,
    height: T,
    cfg: &TrackerConfig<T>,
    mode: RunMode,
) -> Result<(Vec<TrackRow<T>>, RunSummary)> {
    let mut tracker = SportsTracker::new(cfg.clone())?;
    let mut rows: Vec<TrackRow<T>> = Vec::new();
    let mut summary = RunSummary::default();
    for (k, dets) in dets_by_frame.iter().enumerate() {
        let ctx = FrameContext {
            frame: k as u64 + 1,
            width,
            height,
        };
        let res = tracker.step(dets, &ctx)?;
        summary.frames += 1;
        summary.spawned += res.spawned.len() as u64;
        summary.removed += res.removed.len() as u64;
        summary.restored += res.restored_merges.len() as u64;
        rows.extend(tracker.frame_rows(ctx.frame));
    }
    if mode == RunMode::Batch {
        for r in &mut rows {
            r.id = tracker.resolve_id(r.id);
        }
        rows.sort_by_key(|r| (r.frame, r.id));
    }
    Ok((rows, summary))
}
