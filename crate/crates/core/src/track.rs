//! Track identity, lifecycle state machine, appearance-feature maintenance,
//! and tracker configuration.
//!
//! Legal state transitions: `New -> {Tracked, Removed}`,
//! `Tracked -> {Tracked, Lost, Removed}`, `Lost -> {Tracked, Removed}`;
//! `Removed` is terminal. A matched detection always lands a track back in
//! `Tracked` regardless of where it came from.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::matcher::{Detection, FrameContext};
use crate::motion::{kf_initiate, kf_update, KalmanState};
use crate::scalar::{sc, Scalar};

/// Lifecycle state of a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    /// Spawned but not yet confirmed by a second match.
    New,
    /// Actively tracked this frame.
    Tracked,
    /// Unmatched; kept alive for re-association.
    Lost,
    /// Permanently retired. Terminal.
    Removed,
}

/// One tracked identity.
#[derive(Debug, Clone)]
pub struct Track<T: Scalar> {
    pub id: u64,
    pub state: TrackState,
    pub kf: KalmanState<T>,
    pub start_frame: u64,
    pub last_update_frame: u64,
    /// Number of frames with a matched detection.
    pub length: u64,
    /// EMA-smoothed unit appearance vector, when embeddings are present.
    pub smooth_feat: Option<Vec<T>>,
    /// Raw embeddings of matched detections, newest last, bounded ring.
    pub feat_history: VecDeque<Vec<T>>,
    pub lost_since: Option<u64>,
    pub lost_at_edge: bool,
    /// Exit direction in radians, set iff lost at the image border.
    pub lost_angle: Option<T>,
    pub last_confidence: T,
    /// Box of the last matched detection (not the filter posterior).
    pub last_det_box: BBox<T>,
    /// Center of the spawning detection; used as the entry angle anchor.
    pub first_center: (T, T),
}

/// Tunable parameters of the association pipeline. Defaults are the
/// published operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig<T: Scalar> {
    /// IOU weight in the hybrid distance (appearance gets `1 - alpha`).
    pub alpha: T,
    pub stage1_gate: T,
    pub stage2_gate: T,
    pub stage3_gate: T,
    pub stage4_gate: T,
    /// Confidence split between high and low detections.
    pub conf_split: T,
    /// Pairwise predicted-box IOU above which two tracks count as crowded.
    pub crowd_iou: T,
    /// Minimum IOU for a detection to serve as a crowded track's candidate.
    pub crowd_candidate_iou: T,
    /// NMS threshold applied to spawn candidates.
    pub nms_thr: T,
    /// Spawn suppression: drop candidates overlapping a matched detection.
    pub spawn_iou_suppress: T,
    /// Border band width in pixels for edge-loss classification.
    pub edge_band_px: T,
    /// Lost tracks older than this many frames are removed.
    pub max_lost_frames: u64,
    /// Restoration considers young tracks shorter than this.
    pub restore_max_new_len: u64,
    /// Maximum circular gap between exit and entry angles, degrees.
    pub restore_max_angle_deg: T,
    /// Embedding-distance vote threshold for restoration.
    pub restore_reid_thr: T,
    /// Minimum number of votes required to merge (4 means "more than 3").
    pub restore_min_votes: usize,
    /// How many stored embeddings of the lost track enter the vote.
    pub restore_lost_hist: usize,
    /// How many stored embeddings of the young track enter the vote.
    pub restore_new_hist: usize,
    /// EMA momentum for `smooth_feat`.
    pub ema_momentum: T,
    /// Swap the hybrid weights in stage 2 (appearance-dominant), as
    /// published. Disabling reverts stage 2 to the stage-1 weighting.
    pub stage2_invert_weights: bool,
}

impl<T: Scalar> Default for TrackerConfig<T> {
    fn default() -> Self {
        Self {
            alpha: sc(0.9),
            stage1_gate: sc(0.05),
            stage2_gate: sc(0.3),
            stage3_gate: sc(0.7),
            stage4_gate: sc(0.7),
            conf_split: sc(0.6),
            crowd_iou: sc(0.45),
            crowd_candidate_iou: sc(0.6),
            nms_thr: sc(0.45),
            spawn_iou_suppress: sc(0.45),
            edge_band_px: sc(60.0),
            max_lost_frames: 120,
            restore_max_new_len: 30,
            restore_max_angle_deg: sc(90.0),
            restore_reid_thr: sc(0.2),
            restore_min_votes: 4,
            restore_lost_hist: 60,
            restore_new_hist: 10,
            ema_momentum: sc(0.9),
            stage2_invert_weights: true,
        }
    }
}

impl<T: Scalar> TrackerConfig<T> {
    /// Checks every field against its admissible range; the error names the
    /// offending key. NaN fails every range test.
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, key: &'static str, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config {
                    key: key.to_string(),
                    msg: msg.to_string(),
                })
            }
        }
        let zero = T::zero();
        let one = T::one();
        check(
            self.alpha >= zero && self.alpha <= one,
            "alpha",
            "must be in [0, 1]",
        )?;
        for (key, g) in [
            ("stage1_gate", self.stage1_gate),
            ("stage2_gate", self.stage2_gate),
            ("stage3_gate", self.stage3_gate),
            ("stage4_gate", self.stage4_gate),
        ] {
            check(g >= zero && g.is_finite(), key, "must be finite and >= 0")?;
        }
        check(
            self.conf_split > zero && self.conf_split < one,
            "conf_split",
            "must be in (0, 1)",
        )?;
        for (key, v) in [
            ("crowd_iou", self.crowd_iou),
            ("crowd_candidate_iou", self.crowd_candidate_iou),
            ("nms_thr", self.nms_thr),
            ("spawn_iou_suppress", self.spawn_iou_suppress),
            ("edge_band_px", self.edge_band_px),
            ("restore_reid_thr", self.restore_reid_thr),
        ] {
            check(v >= zero && v.is_finite(), key, "must be finite and >= 0")?;
        }
        check(
            self.restore_max_angle_deg >= zero && self.restore_max_angle_deg <= sc(180.0),
            "restore_max_angle_deg",
            "must be in [0, 180]",
        )?;
        check(
            self.ema_momentum >= zero && self.ema_momentum <= one,
            "ema_momentum",
            "must be in [0, 1]",
        )?;
        Ok(())
    }
}

/// Builds a track from a spawning detection. State starts at `New`; the
/// session promotes first-frame spawns to `Tracked` directly and later
/// spawns on their first successful re-match. Id uniqueness is the
/// caller's contract (the session allocates ids monotonically).
pub fn track_new<T: Scalar>(det: &Detection<T>, frame: u64, id: u64) -> Track<T> {
    let mut feat_history = VecDeque::new();
    if let Some(e) = &det.emb {
        feat_history.push_back(e.clone());
    }
    Track {
        id,
        state: TrackState::New,
        kf: kf_initiate(&det.bbox),
        start_frame: frame,
        last_update_frame: frame,
        length: 1,
        smooth_feat: det.emb.clone(),
        feat_history,
        lost_since: None,
        lost_at_edge: false,
        lost_angle: None,
        last_confidence: det.conf,
        last_det_box: det.bbox,
        first_center: det.bbox.center(),
    }
}

/// Absorbs a matched detection: Kalman update, length and bookkeeping,
/// state back to `Tracked`, and appearance fold-in when an embedding is
/// present. Time must advance between updates.
pub fn track_update<T: Scalar>(
    t: &mut Track<T>,
    det: &Detection<T>,
    frame: u64,
    cfg: &TrackerConfig<T>,
) -> Result<()> {
    debug_assert!(t.state != TrackState::Removed, "update on removed track");
    if frame <= t.last_update_frame {
        return Err(Error::FrameRegression {
            frame,
            last: t.last_update_frame,
        });
    }
    t.kf = kf_update(&t.kf, &det.bbox)?;
    t.length += 1;
    t.last_update_frame = frame;
    t.state = TrackState::Tracked;
    t.lost_since = None;
    t.lost_at_edge = false;
    t.lost_angle = None;
    t.last_confidence = det.conf;
    t.last_det_box = det.bbox;
    if let Some(e) = &det.emb {
        fold_embedding(t, e, cfg);
    }
    Ok(())
}

/// EMA-smooths the track appearance and records the raw embedding in the
/// bounded history.
pub(crate) fn fold_embedding<T: Scalar>(t: &mut Track<T>, emb: &[T], cfg: &TrackerConfig<T>) {
    let m = cfg.ema_momentum;
    t.smooth_feat = Some(match &t.smooth_feat {
        None => emb.to_vec(),
        Some(s) => {
            let mut mixed: Vec<T> = s
                .iter()
                .zip(emb)
                .map(|(&a, &b)| m * a + (T::one() - m) * b)
                .collect();
            let norm = mixed.iter().map(|&x| x * x).fold(T::zero(), |a, b| a + b).sqrt();
            if norm > T::zero() {
                for x in &mut mixed {
                    *x /= norm;
                }
            }
            mixed
        }
    });
    t.feat_history.push_back(emb.to_vec());
    while t.feat_history.len() > cfg.restore_lost_hist.max(1) {
        t.feat_history.pop_front();
    }
}

/// Transitions an unmatched `Tracked` track to `Lost`, classifying the loss
/// as edge or center from the Kalman-predicted center. A center on the band
/// boundary counts as edge (the interior test is strict). Edge losses store
/// the exit angle about the image center.
pub fn mark_lost<T: Scalar>(t: &mut Track<T>, frame: u64, ctx: &FrameContext<T>, cfg: &TrackerConfig<T>) {
    debug_assert_eq!(t.state, TrackState::Tracked, "mark_lost on non-tracked track");
    let (cx, cy) = (t.kf.mean[0], t.kf.mean[1]);
    let b = cfg.edge_band_px;
    let two = sc::<T>(2.0);
    let inside =
        cx > b && cx < ctx.width - b && cy > b && cy < ctx.height - b;
    t.state = TrackState::Lost;
    t.lost_since = Some(frame);
    t.lost_at_edge = !inside;
    t.lost_angle = (!inside)
        .then(|| (cy - ctx.height / two).atan2(cx - ctx.width / two));
}

/// Retires tracks lost for more than `max_lost_frames`, draining them out
/// of the active list. The returned tracks (now `Removed`) belong in the
/// session archive.
pub fn prune<T: Scalar>(
    tracks: &mut Vec<Track<T>>,
    frame: u64,
    cfg: &TrackerConfig<T>,
) -> Vec<Track<T>> {
    let mut removed = Vec::new();
    tracks.retain_mut(|t| {
        let stale = t.state == TrackState::Lost
            && t.lost_since.is_some_and(|s| frame - s > cfg.max_lost_frames);
        if stale {
            t.state = TrackState::Removed;
            removed.push(t.clone());
        }
        !stale
    });
    removed
}
