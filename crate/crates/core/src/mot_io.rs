//! File formats: JSON-Lines detections with embeddings in, MOTChallenge
//! track/ground-truth tables in and out, JSON tracker config in.
//!
//! The JSONL detection format starts with a header record
//! `{"type":"header","name":…,"width":…,"height":…,"fps":…,"emb_dim":…}`
//! followed by one record per detection
//! `{"frame":…,"bbox":[x,y,w,h],"conf":…,"emb":[…]}`. A record carrying only
//! `"frame"` marks that frame as present but empty, which keeps the frame
//! numbering contiguous through detector dropouts. Frames are 1-based and
//! must arrive in order.
//!
//! Every parse error names the file and the 1-based line that caused it.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabeledBox;
use crate::geometry::BBox;
use crate::matcher::{Detection, TrackRow};
use crate::scalar::{sc, Scalar};
use crate::track::TrackerConfig;

/// Embedding norms further than this from 1 are rejected instead of
/// silently renormalized.
pub const EMB_NORM_TOL: f64 = 1e-3;

/// A named detection sequence: per-frame detection lists plus the video
/// geometry the tracker needs.
///
/// `frames[k]` holds the detections of frame `k + 1`; the list is contiguous
/// by construction of the readers.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle<T: Scalar> {
    pub name: String,
    pub width: T,
    pub height: T,
    /// Frames per second as declared by the source; 0 when unknown. The
    /// tracker itself never consumes it.
    pub fps: f64,
    /// Embedding dimensionality; 0 means IOU-only mode.
    pub emb_dim: usize,
    pub frames: Vec<Vec<Detection<T>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    #[serde(rename = "type")]
    kind: String,
    name: String,
    width: f64,
    height: f64,
    fps: f64,
    emb_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetRecord {
    frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb: Option<Vec<f64>>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Clamps a confidence into `[0, 1]`, warning when it was out of range.
fn clamp_conf(path: &Path, line: usize, conf: f64) -> Result<f64> {
    if !conf.is_finite() {
        return Err(parse_err(path, line, format!("non-finite confidence {conf}")));
    }
    if (0.0..=1.0).contains(&conf) {
        return Ok(conf);
    }
    let clamped = conf.clamp(0.0, 1.0);
    log::warn!(
        "{}:{}: confidence {} clamped to {}",
        path.display(),
        line,
        conf,
        clamped
    );
    Ok(clamped)
}

fn check_box(path: &Path, line: usize, b: &[f64; 4]) -> Result<()> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(parse_err(path, line, "non-finite box coordinate"));
    }
    if b[2] <= 0.0 || b[3] <= 0.0 {
        return Err(parse_err(
            path,
            line,
            format!("degenerate box: w={}, h={} (both must be positive)", b[2], b[3]),
        ));
    }
    Ok(())
}

/// Validates and unit-normalizes an embedding read from a file.
fn convert_emb<T: Scalar>(path: &Path, line: usize, emb_dim: usize, raw: Vec<f64>) -> Result<Vec<T>> {
    if raw.len() != emb_dim {
        return Err(parse_err(
            path,
            line,
            format!("embedding length {} does not match emb_dim {}", raw.len(), emb_dim),
        ));
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > EMB_NORM_TOL {
        return Err(parse_err(
            path,
            line,
            format!("embedding norm {norm} departs from unit length beyond {EMB_NORM_TOL}"),
        ));
    }
    // Renormalize in the working scalar type so downstream cosine math sees
    // unit vectors at that type's precision.
    let mut out: Vec<T> = raw.into_iter().map(sc::<T>).collect();
    let n = out.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b).sqrt();
    for v in &mut out {
        *v /= n;
    }
    Ok(out)
}

/// Reads the JSONL detection format described at module level.
pub fn read_detections<T: Scalar>(path: impl AsRef<Path>) -> Result<SequenceBundle<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing header record"))?;
    let header: HeaderRecord = serde_json::from_str(&first?)
        .map_err(|e| parse_err(path, 1, format!("bad header: {e}")))?;
    if header.kind != "header" {
        return Err(parse_err(
            path,
            1,
            format!("first record has type `{}`, expected `header`", header.kind),
        ));
    }
    if !(header.width > 0.0 && header.height > 0.0 && header.width.is_finite() && header.height.is_finite()) {
        return Err(parse_err(path, 1, "header width/height must be positive"));
    }
    if !(header.fps >= 0.0 && header.fps.is_finite()) {
        return Err(parse_err(path, 1, "header fps must be finite and >= 0"));
    }

    let mut frames: Vec<Vec<Detection<T>>> = Vec::new();
    // Whether the currently open frame was declared by an empty-frame
    // marker; detections may not follow a marker for the same frame.
    let mut open_is_marker = false;

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, lineno, format!("bad detection record: {e}")))?;

        let next = frames.len() as u64 + 1;
        if rec.frame == next {
            frames.push(Vec::new());
            open_is_marker = false;
        } else if rec.frame != frames.len() as u64 || frames.is_empty() {
            return Err(parse_err(
                path,
                lineno,
                format!("non-contiguous frames: got {}, expected {} or {}", rec.frame, next - 1, next),
            ));
        }

        match rec.bbox {
            None => {
                if rec.conf.is_some() || rec.emb.is_some() {
                    return Err(parse_err(path, lineno, "record without bbox must not carry conf or emb"));
                }
                let open = frames.last().expect("frame opened above");
                if !open.is_empty() {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("empty-frame marker for frame {} that already has detections", rec.frame),
                    ));
                }
                open_is_marker = true;
            }
            Some(b) => {
                if open_is_marker {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("detection for frame {} after its empty-frame marker", rec.frame),
                    ));
                }
                check_box(path, lineno, &b)?;
                let conf = rec
                    .conf
                    .ok_or_else(|| parse_err(path, lineno, "detection record missing conf"))?;
                let conf = clamp_conf(path, lineno, conf)?;
                let emb = match (header.emb_dim, rec.emb) {
                    (0, None) => None,
                    (0, Some(e)) if e.is_empty() => None,
                    (0, Some(e)) => {
                        return Err(parse_err(
                            path,
                            lineno,
                            format!("embedding length {} does not match emb_dim 0", e.len()),
                        ))
                    }
                    (d, None) => {
                        return Err(parse_err(path, lineno, format!("missing embedding (emb_dim = {d})")))
                    }
                    (d, Some(e)) => Some(convert_emb::<T>(path, lineno, d, e)?),
                };
                frames.last_mut().expect("frame opened above").push(Detection {
                    frame: rec.frame,
                    bbox: BBox::new(sc(b[0]), sc(b[1]), sc(b[2]), sc(b[3])),
                    conf: sc(conf),
                    emb,
                });
            }
        }
    }

    Ok(SequenceBundle {
        name: header.name,
        width: sc(header.width),
        height: sc(header.height),
        fps: header.fps,
        emb_dim: header.emb_dim,
        frames,
    })
}

/// Writes the JSONL detection format; inverse of [`read_detections`].
///
/// Empty frames are written as `{"frame":k}` markers so the read-back stays
/// contiguous.
pub fn write_detections<T: Scalar>(path: impl AsRef<Path>, bundle: &SequenceBundle<T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    let header = HeaderRecord {
        kind: "header".to_string(),
        name: bundle.name.clone(),
        width: bundle.width.as_f64(),
        height: bundle.height.as_f64(),
        fps: bundle.fps,
        emb_dim: bundle.emb_dim,
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for (k, dets) in bundle.frames.iter().enumerate() {
        let frame = k as u64 + 1;
        if dets.is_empty() {
            writeln!(w, "{}", serde_json::to_string(&DetRecord { frame, bbox: None, conf: None, emb: None }).expect("marker serializes"))?;
            continue;
        }
        for d in dets {
            debug_assert_eq!(d.frame, frame, "detection frame field out of step with its slot");
            let rec = DetRecord {
                frame,
                bbox: Some([d.bbox.x.as_f64(), d.bbox.y.as_f64(), d.bbox.w.as_f64(), d.bbox.h.as_f64()]),
                conf: Some(d.conf.as_f64()),
                emb: d.emb.as_ref().map(|e| e.iter().map(|v| v.as_f64()).collect()),
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("detection serializes"))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a MOTChallenge `det.txt`: rows `frame,id,x,y,w,h,conf,…`.
///
/// The resulting bundle is embedding-free (IOU-only mode). Frames absent
/// from the file come back as empty lists so the bundle stays contiguous;
/// the video geometry is not part of the format and must be supplied.
pub fn read_mot_det<T: Scalar>(path: impl AsRef<Path>, width: T, height: T) -> Result<SequenceBundle<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut by_frame: Vec<Vec<Detection<T>>> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if f.len() < 7 {
            return Err(parse_err(path, lineno, format!("expected at least 7 fields, got {}", f.len())));
        }
        let frame: u64 = f[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad frame number `{}`", f[0])))?;
        if frame == 0 {
            return Err(parse_err(path, lineno, "frame numbers are 1-based"));
        }
        let mut nums = [0.0f64; 5];
        for (slot, raw) in nums.iter_mut().zip(&f[2..7]) {
            *slot = raw
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad number `{raw}`")))?;
        }
        let b = [nums[0], nums[1], nums[2], nums[3]];
        check_box(path, lineno, &b)?;
        let conf = clamp_conf(path, lineno, nums[4])?;
        if by_frame.len() < frame as usize {
            by_frame.resize_with(frame as usize, Vec::new);
        }
        by_frame[frame as usize - 1].push(Detection {
            frame,
            bbox: BBox::new(sc(b[0]), sc(b[1]), sc(b[2]), sc(b[3])),
            conf: sc(conf),
            emb: None,
        });
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".to_string());
    Ok(SequenceBundle { name, width, height, fps: 0.0, emb_dim: 0, frames: by_frame })
}

/// Writes a MOTChallenge track table: `frame,id,x,y,w,h,conf,-1,-1,-1` per
/// row, coordinates at 2 decimal places, newline-terminated.
///
/// Rows must already be strictly sorted by `(frame, id)`; unsorted input or
/// a duplicate `(frame, id)` is an error.
pub fn write_mot_tracks<T: Scalar>(path: impl AsRef<Path>, rows: &[TrackRow<T>]) -> Result<()> {
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if (b.frame, b.id) == (a.frame, a.id) {
            return Err(Error::DuplicateRow { frame: b.frame, id: b.id });
        }
        if (b.frame, b.id) < (a.frame, a.id) {
            return Err(Error::UnsortedRows { frame: b.frame, id: b.id });
        }
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for r in rows {
        writeln!(
            w,
            "{},{},{:.2},{:.2},{:.2},{:.2},{},-1,-1,-1",
            r.frame,
            r.id,
            r.bbox.x.as_f64(),
            r.bbox.y.as_f64(),
            r.bbox.w.as_f64(),
            r.bbox.h.as_f64(),
            r.conf.as_f64()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a MOTChallenge track table back; inverse of [`write_mot_tracks`]
/// at the written precision. Trailing columns beyond conf are ignored.
pub fn read_mot_tracks<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<TrackRow<T>>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if f.len() < 7 {
            return Err(parse_err(path, lineno, format!("expected at least 7 fields, got {}", f.len())));
        }
        let frame: u64 = f[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad frame number `{}`", f[0])))?;
        if frame == 0 {
            return Err(parse_err(path, lineno, "frame numbers are 1-based"));
        }
        let id: u64 = f[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad track id `{}`", f[1])))?;
        if !seen.insert((frame, id)) {
            return Err(Error::DuplicateRow { frame, id });
        }
        let mut nums = [0.0f64; 5];
        for (slot, raw) in nums.iter_mut().zip(&f[2..7]) {
            *slot = raw
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad number `{raw}`")))?;
        }
        let b = [nums[0], nums[1], nums[2], nums[3]];
        check_box(path, lineno, &b)?;
        let conf = clamp_conf(path, lineno, nums[4])?;
        rows.push(TrackRow {
            frame,
            id,
            bbox: BBox::new(sc(b[0]), sc(b[1]), sc(b[2]), sc(b[3])),
            conf: sc(conf),
        });
    }
    Ok(rows)
}

/// Reads a MOTChallenge ground-truth table: rows
/// `frame,id,x,y,w,h,flag,class,visibility`, where rows with flag 0 are
/// ignored. Class and visibility may be omitted.
pub fn read_gt<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<LabeledBox<T>>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if !(7..=9).contains(&f.len()) {
            return Err(parse_err(path, lineno, format!("expected 7 to 9 fields, got {}", f.len())));
        }
        let frame: u64 = f[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad frame number `{}`", f[0])))?;
        if frame == 0 {
            return Err(parse_err(path, lineno, "frame numbers are 1-based"));
        }
        let id: u64 = f[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad object id `{}`", f[1])))?;
        let flag: i64 = f[6]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad flag `{}`", f[6])))?;
        // Remaining optional columns (class, visibility) only need to parse.
        for raw in &f[7..] {
            let _: f64 = raw
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad number `{raw}`")))?;
        }
        if flag == 0 {
            continue;
        }
        let mut nums = [0.0f64; 4];
        for (slot, raw) in nums.iter_mut().zip(&f[2..6]) {
            *slot = raw
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad number `{raw}`")))?;
        }
        check_box(path, lineno, &nums)?;
        if !seen.insert((frame, id)) {
            return Err(Error::DuplicateRow { frame, id });
        }
        rows.push(LabeledBox {
            frame,
            id,
            bbox: BBox::new(sc(nums[0]), sc(nums[1]), sc(nums[2]), sc(nums[3])),
        });
    }
    Ok(rows)
}

/// Writes a ground-truth table readable by [`read_gt`]: flag 1, class 1,
/// visibility 1.0 on every row.
pub fn write_mot_gt<T: Scalar>(path: impl AsRef<Path>, rows: &[LabeledBox<T>]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in rows {
        if !seen.insert((r.frame, r.id)) {
            return Err(Error::DuplicateRow { frame: r.frame, id: r.id });
        }
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for r in rows {
        writeln!(
            w,
            "{},{},{:.2},{:.2},{:.2},{:.2},1,1,1.0",
            r.frame,
            r.id,
            r.bbox.x.as_f64(),
            r.bbox.y.as_f64(),
            r.bbox.w.as_f64(),
            r.bbox.h.as_f64()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Tracker config file: a JSON object holding any subset of the
/// [`TrackerConfig`] keys. Unknown keys are rejected so typos cannot
/// silently fall back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    alpha: Option<f64>,
    stage1_gate: Option<f64>,
    stage2_gate: Option<f64>,
    stage3_gate: Option<f64>,
    stage4_gate: Option<f64>,
    conf_split: Option<f64>,
    crowd_iou: Option<f64>,
    crowd_candidate_iou: Option<f64>,
    nms_thr: Option<f64>,
    spawn_iou_suppress: Option<f64>,
    edge_band_px: Option<f64>,
    max_lost_frames: Option<u64>,
    restore_max_new_len: Option<u64>,
    restore_max_angle_deg: Option<f64>,
    restore_reid_thr: Option<f64>,
    restore_min_votes: Option<usize>,
    restore_lost_hist: Option<usize>,
    restore_new_hist: Option<usize>,
    ema_momentum: Option<f64>,
    stage2_invert_weights: Option<bool>,
}

fn fold_config<T: Scalar>(raw: RawConfig) -> Result<TrackerConfig<T>> {
    let mut cfg = TrackerConfig::<T>::default();
    macro_rules! take {
        (sc $field:ident) => {
            if let Some(v) = raw.$field {
                cfg.$field = sc(v);
            }
        };
        (raw $field:ident) => {
            if let Some(v) = raw.$field {
                cfg.$field = v;
            }
        };
    }
    take!(sc alpha);
    take!(sc stage1_gate);
    take!(sc stage2_gate);
    take!(sc stage3_gate);
    take!(sc stage4_gate);
    take!(sc conf_split);
    take!(sc crowd_iou);
    take!(sc crowd_candidate_iou);
    take!(sc nms_thr);
    take!(sc spawn_iou_suppress);
    take!(sc edge_band_px);
    take!(raw max_lost_frames);
    take!(raw restore_max_new_len);
    take!(sc restore_max_angle_deg);
    take!(sc restore_reid_thr);
    take!(raw restore_min_votes);
    take!(raw restore_lost_hist);
    take!(raw restore_new_hist);
    take!(sc ema_momentum);
    take!(raw stage2_invert_weights);
    cfg.validate()?;
    Ok(cfg)
}

/// Builds a [`TrackerConfig`] from an in-memory JSON object; shared by
/// [`read_config`] and command-line overrides. Missing keys keep their
/// defaults, unknown keys and out-of-range values are errors.
pub fn config_from_value<T: Scalar>(value: serde_json::Value) -> Result<TrackerConfig<T>> {
    let raw: RawConfig = serde_json::from_value(value).map_err(|e| Error::Config {
        key: "<json>".to_string(),
        msg: e.to_string(),
    })?;
    fold_config(raw)
}

/// Reads a JSON config file as described on [`config_from_value`].
pub fn read_config<T: Scalar>(path: impl AsRef<Path>) -> Result<TrackerConfig<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let raw: RawConfig = serde_json::from_str(&text)
        .map_err(|e| parse_err(path, e.line(), e.to_string()))?;
    fold_config(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().expect("tempfile");
        f.write_all(content.as_bytes()).expect("write");
        f
    }

    const HEADER: &str =
        r#"{"type":"header","name":"seq","width":1280,"height":720,"fps":30.0,"emb_dim":0}"#;
    const HEADER4: &str =
        r#"{"type":"header","name":"seq","width":1280,"height":720,"fps":30.0,"emb_dim":4}"#;

    #[test]
    fn jsonl_header_plus_one_detection() {
        let f = tmp(&format!(
            "{HEADER}\n{}\n",
            r#"{"frame":1,"bbox":[10,20,30,40],"conf":0.9}"#
        ));
        let b: SequenceBundle<f64> = read_detections(f.path()).unwrap();
        assert_eq!(b.name, "seq");
        assert_eq!((b.width, b.height, b.fps, b.emb_dim), (1280.0, 720.0, 30.0, 0));
        assert_eq!(b.frames.len(), 1);
        assert_eq!(b.frames[0].len(), 1);
        let d = &b.frames[0][0];
        assert_eq!((d.frame, d.conf), (1, 0.9));
        assert_eq!((d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h), (10.0, 20.0, 30.0, 40.0));
        assert!(d.emb.is_none());
    }

    #[test]
    fn jsonl_wrong_emb_length_names_line() {
        let f = tmp(&format!(
            "{HEADER4}\n{}\n",
            r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5,"emb":[1.0,0.0,0.0]}"#
        ));
        let err = read_detections::<f64>(f.path()).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("emb"), "msg: {msg}");
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_missing_emb_is_an_error_when_dim_positive() {
        let f = tmp(&format!("{HEADER4}\n{}\n", r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5}"#));
        let err = read_detections::<f64>(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn jsonl_noncontiguous_frames_rejected() {
        let f = tmp(&format!(
            "{HEADER}\n{}\n{}\n{}\n",
            r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5}"#,
            r#"{"frame":2,"bbox":[0,0,1,1],"conf":0.5}"#,
            r#"{"frame":4,"bbox":[0,0,1,1],"conf":0.5}"#
        ));
        let err = read_detections::<f64>(f.path()).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 4);
                assert!(msg.contains("non-contiguous"), "msg: {msg}");
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_first_frame_must_be_one() {
        let f = tmp(&format!("{HEADER}\n{}\n", r#"{"frame":2,"bbox":[0,0,1,1],"conf":0.5}"#));
        assert!(matches!(read_detections::<f64>(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn jsonl_empty_frame_markers_keep_contiguity() {
        let f = tmp(&format!(
            "{HEADER}\n{}\n{}\n{}\n",
            r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5}"#,
            r#"{"frame":2}"#,
            r#"{"frame":3,"bbox":[5,5,1,1],"conf":0.5}"#
        ));
        let b: SequenceBundle<f64> = read_detections(f.path()).unwrap();
        assert_eq!(b.frames.len(), 3);
        assert!(b.frames[1].is_empty());
        assert_eq!(b.frames[2].len(), 1);
    }

    #[test]
    fn jsonl_marker_conflicts_are_errors() {
        // Marker after a detection of the same frame.
        let f = tmp(&format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5}"#,
            r#"{"frame":1}"#
        ));
        assert!(matches!(read_detections::<f64>(f.path()), Err(Error::Parse { line: 3, .. })));
        // Detection after a marker of the same frame.
        let f = tmp(&format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"frame":1}"#,
            r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5}"#
        ));
        assert!(matches!(read_detections::<f64>(f.path()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn jsonl_embedding_normalized_within_tolerance_rejected_beyond() {
        let near = format!(
            "{HEADER4}\n{}\n",
            r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5,"emb":[0.9995,0.0,0.0,0.0]}"#
        );
        let b: SequenceBundle<f64> = read_detections(tmp(&near).path()).unwrap();
        let e = b.frames[0][0].emb.as_ref().unwrap();
        assert_eq!(e.as_slice(), &[1.0, 0.0, 0.0, 0.0]);

        let far = format!(
            "{HEADER4}\n{}\n",
            r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5,"emb":[0.9,0.0,0.0,0.0]}"#
        );
        let err = read_detections::<f64>(tmp(&far).path()).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("norm"), "msg: {msg}");
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_unknown_key_and_bad_header_rejected() {
        let f = tmp(&format!(
            "{HEADER}\n{}\n",
            r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5,"score":1.0}"#
        ));
        assert!(matches!(read_detections::<f64>(f.path()), Err(Error::Parse { line: 2, .. })));
        let f = tmp(r#"{"frame":1,"bbox":[0,0,1,1],"conf":0.5}"#);
        assert!(matches!(read_detections::<f64>(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let bundle = SequenceBundle::<f64> {
            name: "rt".to_string(),
            width: 640.0,
            height: 360.0,
            fps: 25.0,
            emb_dim: 2,
            frames: vec![
                vec![Detection {
                    frame: 1,
                    bbox: BBox::new(1.5, 2.25, 10.0, 20.0),
                    conf: 0.875,
                    emb: Some(vec![0.6, 0.8]),
                }],
                vec![],
                vec![Detection {
                    frame: 3,
                    bbox: BBox::new(0.0, 0.0, 5.0, 5.0),
                    conf: 1.0,
                    emb: Some(vec![1.0, 0.0]),
                }],
            ],
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_detections(f.path(), &bundle).unwrap();
        let back: SequenceBundle<f64> = read_detections(f.path()).unwrap();
        assert_eq!(back, bundle);
    }

    #[test]
    fn mot_det_example_row() {
        let f = tmp("1,-1,10,20,30,40,0.9\n");
        let b: SequenceBundle<f64> = read_mot_det(f.path(), 1920.0, 1080.0).unwrap();
        assert_eq!(b.frames.len(), 1);
        let d = &b.frames[0][0];
        assert_eq!((d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h), (10.0, 20.0, 30.0, 40.0));
        assert_eq!(d.conf, 0.9);
        assert!(d.emb.is_none());
        assert_eq!(b.emb_dim, 0);
    }

    #[test]
    fn mot_det_empty_file_gives_empty_bundle() {
        let f = tmp("");
        let b: SequenceBundle<f64> = read_mot_det(f.path(), 100.0, 100.0).unwrap();
        assert!(b.frames.is_empty());
    }

    #[test]
    fn mot_det_conf_clamped() {
        let f = tmp("1,-1,0,0,10,10,1.5\n2,-1,0,0,10,10,-0.25\n");
        let b: SequenceBundle<f64> = read_mot_det(f.path(), 100.0, 100.0).unwrap();
        assert_eq!(b.frames[0][0].conf, 1.0);
        assert_eq!(b.frames[1][0].conf, 0.0);
    }

    #[test]
    fn mot_det_gap_frames_come_back_empty() {
        let f = tmp("1,-1,0,0,10,10,0.9\n3,-1,0,0,10,10,0.9\n");
        let b: SequenceBundle<f64> = read_mot_det(f.path(), 100.0, 100.0).unwrap();
        assert_eq!(b.frames.len(), 3);
        assert!(b.frames[1].is_empty());
    }

    #[test]
    fn mot_det_bad_row_names_line() {
        let f = tmp("1,-1,0,0,10,10,0.9\n2,-1,zero,0,10,10,0.9\n");
        assert!(matches!(
            read_mot_det::<f64>(f.path(), 100.0, 100.0),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn track_row_formatting_matches_contract() {
        let rows = vec![TrackRow { frame: 1, id: 3, bbox: BBox::<f64>::new(0.0, 0.0, 10.0, 10.0), conf: 0.9 }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_mot_tracks(f.path(), &rows).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(text, "1,3,0.00,0.00,10.00,10.00,0.9,-1,-1,-1\n");
    }

    #[test]
    fn empty_track_table_writes_empty_file() {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_mot_tracks::<f64>(f.path(), &[]).unwrap();
        assert_eq!(std::fs::read_to_string(f.path()).unwrap(), "");
    }

    #[test]
    fn unsorted_or_duplicate_track_rows_rejected() {
        let row = |frame, id| TrackRow { frame, id, bbox: BBox::<f64>::new(0.0, 0.0, 1.0, 1.0), conf: 0.5 };
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(
            write_mot_tracks(f.path(), &[row(2, 1), row(1, 1)]),
            Err(Error::UnsortedRows { frame: 1, id: 1 })
        ));
        assert!(matches!(
            write_mot_tracks(f.path(), &[row(1, 7), row(1, 7)]),
            Err(Error::DuplicateRow { frame: 1, id: 7 })
        ));
    }

    #[test]
    fn gt_reader_skips_flag_zero_and_rejects_duplicates() {
        let f = tmp("1,5,0,0,10,10,1,1,1.0\n1,6,20,0,10,10,0,1,1.0\n2,5,1,0,10,10,1\n");
        let gt: Vec<LabeledBox<f64>> = read_gt(f.path()).unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!((gt[0].frame, gt[0].id), (1, 5));
        assert_eq!((gt[1].frame, gt[1].id), (2, 5));

        let f = tmp("1,5,0,0,10,10,1,1,1.0\n1,5,3,0,10,10,1,1,1.0\n");
        assert!(matches!(read_gt::<f64>(f.path()), Err(Error::DuplicateRow { frame: 1, id: 5 })));
    }

    #[test]
    fn gt_round_trip() {
        let rows = vec![
            LabeledBox::<f64> { frame: 1, id: 2, bbox: BBox::new(4.25, 8.5, 30.0, 60.0) },
            LabeledBox::<f64> { frame: 2, id: 2, bbox: BBox::new(5.25, 8.5, 30.0, 60.0) },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_mot_gt(f.path(), &rows).unwrap();
        assert_eq!(read_gt::<f64>(f.path()).unwrap(), rows);
    }

    #[test]
    fn empty_config_object_gives_defaults() {
        let f = tmp("{}");
        let cfg: TrackerConfig<f64> = read_config(f.path()).unwrap();
        assert_eq!(cfg, TrackerConfig::default());
        assert_eq!(cfg.alpha, 0.9);
        assert_eq!(cfg.stage1_gate, 0.05);
    }

    #[test]
    fn out_of_range_config_names_key() {
        let f = tmp(r#"{"alpha": 1.5}"#);
        match read_config::<f64>(f.path()).unwrap_err() {
            Error::Config { key, msg } => {
                assert_eq!(key, "alpha");
                assert!(msg.contains("[0, 1]"));
            }
            other => panic!("expected Config, got {other:?}"),
        }
    }

    #[test]
    fn single_key_config_changes_only_that_key() {
        let f = tmp(r#"{"stage2_gate": 0.25}"#);
        let cfg: TrackerConfig<f64> = read_config(f.path()).unwrap();
        let mut want = TrackerConfig::<f64>::default();
        want.stage2_gate = 0.25;
        assert_eq!(cfg, want);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let f = tmp(r#"{"alpa": 0.5}"#);
        match read_config::<f64>(f.path()).unwrap_err() {
            Error::Parse { msg, .. } => assert!(msg.contains("alpa"), "msg: {msg}"),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn config_from_value_applies_overrides() {
        let v = serde_json::json!({"max_lost_frames": 30, "stage2_invert_weights": false});
        let cfg: TrackerConfig<f64> = config_from_value(v).unwrap();
        assert_eq!(cfg.max_lost_frames, 30);
        assert!(!cfg.stage2_invert_weights);
    }

    proptest! {
        #[test]
        fn track_table_round_trips_at_written_precision(
            raw in proptest::collection::btree_set((1u64..40, 1u64..20), 0..40),
            coords in proptest::collection::vec((-100000i64..100000, -100000i64..100000, 1i64..50000, 1i64..50000, 0u32..=1000), 40)
        ) {
            let rows: Vec<TrackRow<f64>> = raw
                .iter()
                .zip(&coords)
                .map(|(&(frame, id), &(x, y, w, h, c))| TrackRow {
                    frame,
                    id,
                    bbox: BBox::new(x as f64 / 100.0, y as f64 / 100.0, w as f64 / 100.0, h as f64 / 100.0),
                    conf: c as f64 / 1000.0,
                })
                .collect();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_mot_tracks(f.path(), &rows).unwrap();
            let back: Vec<TrackRow<f64>> = read_mot_tracks(f.path()).unwrap();
            prop_assert_eq!(back, rows);
        }
    }
}
