//! HOTA-family and classical MOT metrics over predicted vs ground-truth
//! track tables.
//!
//! HOTA is computed definitionally: for each localization threshold alpha in
//! {0.05, 0.10, ..., 0.95} an optimal per-frame matching (maximum TP count,
//! then maximum total IOU, ties broken lexicographically) yields detection
//! accuracy, and association accuracy averages the per-TP Jaccard overlap of
//! the (gt id, pred id) co-occurrence counts. Association errors only count
//! detections that were matched to somebody else; a plainly missed box is a
//! detection error, not an association error. MOTA and id switches follow
//! the CLEAR convention at IOU 0.5 with match carryover, and IDF1 solves the
//! global id bipartite matching.

use std::collections::{BTreeMap, BTreeSet};

use crate::assignment::gated_match;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, CostMatrix};
use crate::matcher::TrackRow;
use crate::scalar::Scalar;

/// One box of a track table: a frame, an identity, and a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox<T: Scalar> {
    pub frame: u64,
    pub id: u64,
    pub bbox: BBox<T>,
}

impl<T: Scalar> From<TrackRow<T>> for LabeledBox<T> {
    fn from(r: TrackRow<T>) -> Self {
        LabeledBox { frame: r.frame, id: r.id, bbox: r.bbox }
    }
}

/// Metric bundle; every rate lives in [0, 1] and is conventionally shown
/// multiplied by 100 (see [`MetricsReport::to_json`] and [`compare_table`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub det_re: f64,
    pub det_pr: f64,
    pub ass_re: f64,
    pub ass_pr: f64,
    pub mota: f64,
    pub idf1: f64,
    pub id_switches: u64,
}

impl MetricsReport {
    /// JSON object with the conventional x100 scaling on every rate.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "HOTA": 100.0 * self.hota,
            "DetA": 100.0 * self.det_a,
            "AssA": 100.0 * self.ass_a,
            "DetRe": 100.0 * self.det_re,
            "DetPr": 100.0 * self.det_pr,
            "AssRe": 100.0 * self.ass_re,
            "AssPr": 100.0 * self.ass_pr,
            "MOTA": 100.0 * self.mota,
            "IDF1": 100.0 * self.idf1,
            "IDSW": self.id_switches,
        })
    }
}

/// Localization thresholds of the HOTA average: 0.05 to 0.95 in 0.05 steps.
const ALPHA_STEPS: usize = 19;
/// Guard so a similarity that equals a threshold up to float noise still
/// counts as reaching it.
const SIM_EPS: f64 = 1e-12;
/// Offset that makes the per-frame assignment maximize match count before
/// total similarity; similarities are bounded by 1 and frames are far
/// smaller than this.
const COUNT_BIAS: f64 = 1000.0;
/// CLEAR / IDF1 localization threshold.
const CLEAR_THR: f64 = 0.5;

fn ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Per-frame view: dense gt/pred index lists plus their pairwise IOUs.
struct FrameSim {
    gt: Vec<usize>,
    pred: Vec<usize>,
    /// `sim[g][p]`, indices into the frame-local `gt`/`pred` lists.
    sim: Vec<Vec<f64>>,
}

/// Maximum-cardinality, then maximum-similarity matching among pairs with
/// `sim >= thr - eps`; returns frame-local `(gt, pred)` index pairs,
/// lexicographically smallest among optima.
fn match_frame(fs: &FrameSim, thr: f64) -> Vec<(usize, usize)> {
    if fs.gt.is_empty() || fs.pred.is_empty() {
        return Vec::new();
    }
    let cost = CostMatrix::from_fn(fs.gt.len(), fs.pred.len(), |g, p| {
        let s = fs.sim[g][p];
        if s >= thr - SIM_EPS {
            -(COUNT_BIAS + s)
        } else {
            1.0
        }
    });
    gated_match(&cost, -COUNT_BIAS).matches
}

/// Computes the full metric bundle. Ground truth must be non-empty; both
/// tables must hold at most one box per `(frame, id)`.
pub fn evaluate<T: Scalar>(pred: &[LabeledBox<T>], gt: &[LabeledBox<T>]) -> Result<MetricsReport> {
    if gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    for table in [pred, gt] {
        let mut seen = BTreeSet::new();
        for r in table {
            if !seen.insert((r.frame, r.id)) {
                return Err(Error::DuplicateRow { frame: r.frame, id: r.id });
            }
        }
    }

    // Dense id indices, deterministic by id order.
    let gt_ids: BTreeSet<u64> = gt.iter().map(|r| r.id).collect();
    let pred_ids: BTreeSet<u64> = pred.iter().map(|r| r.id).collect();
    let gt_index: BTreeMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let pred_index: BTreeMap<u64, usize> = pred_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let (n_gt_ids, n_pred_ids) = (gt_index.len(), pred_index.len());

    // Per-frame boxes sorted by id so matrix order is deterministic.
    let mut frames: BTreeMap<u64, (Vec<(usize, BBox<f64>)>, Vec<(usize, BBox<f64>)>)> = BTreeMap::new();
    let as64 = |b: &BBox<T>| BBox::new(b.x.as_f64(), b.y.as_f64(), b.w.as_f64(), b.h.as_f64());
    for r in gt {
        frames.entry(r.frame).or_default().0.push((gt_index[&r.id], as64(&r.bbox)));
    }
    for r in pred {
        frames.entry(r.frame).or_default().1.push((pred_index[&r.id], as64(&r.bbox)));
    }

    let sims: Vec<FrameSim> = frames
        .into_values()
        .map(|(mut g, mut p)| {
            g.sort_by_key(|&(i, _)| i);
            p.sort_by_key(|&(i, _)| i);
            let sim = g
                .iter()
                .map(|(_, gb)| p.iter().map(|(_, pb)| iou(gb, pb)).collect())
                .collect();
            FrameSim {
                gt: g.into_iter().map(|(i, _)| i).collect(),
                pred: p.into_iter().map(|(i, _)| i).collect(),
                sim,
            }
        })
        .collect();

    let gt_total = gt.len() as f64;
    let pred_total = pred.len() as f64;

    // HOTA over the alpha grid.
    let (mut hota, mut det_a, mut ass_a, mut det_re, mut det_pr, mut ass_re, mut ass_pr) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for step in 1..=ALPHA_STEPS {
        let alpha = step as f64 * 0.05;
        let mut tp = 0u64;
        let mut pair_count: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for fs in &sims {
            for (gl, pl) in match_frame(fs, alpha) {
                tp += 1;
                *pair_count.entry((fs.gt[gl], fs.pred[pl])).or_insert(0) += 1;
            }
        }
        let fne = gt_total - tp as f64;
        let fpe = pred_total - tp as f64;

        // gm/pm: how many TPs each gt/pred id participates in at this alpha.
        let mut gm = vec![0u64; n_gt_ids];
        let mut pm = vec![0u64; n_pred_ids];
        for (&(gi, pj), &m) in &pair_count {
            gm[gi] += m;
            pm[pj] += m;
        }
        let (mut a_sum, mut are_sum, mut apr_sum) = (0.0, 0.0, 0.0);
        for (&(gi, pj), &m) in &pair_count {
            let m = m as f64;
            a_sum += m * ratio(m, gm[gi] as f64 + pm[pj] as f64 - m);
            are_sum += m * ratio(m, gm[gi] as f64);
            apr_sum += m * ratio(m, pm[pj] as f64);
        }
        let da = ratio(tp as f64, tp as f64 + fne + fpe);
        let aa = ratio(a_sum, tp as f64);
        det_a += da;
        ass_a += aa;
        det_re += ratio(tp as f64, tp as f64 + fne);
        det_pr += ratio(tp as f64, tp as f64 + fpe);
        ass_re += ratio(are_sum, tp as f64);
        ass_pr += ratio(apr_sum, tp as f64);
        hota += (da * aa).sqrt();
    }
    let k = ALPHA_STEPS as f64;
    let (hota, det_a, ass_a, det_re, det_pr, ass_re, ass_pr) =
        (hota / k, det_a / k, ass_a / k, det_re / k, det_pr / k, ass_re / k, ass_pr / k);

    // CLEAR at 0.5: carry the previous pairing forward where it still holds,
    // match the rest optimally, count switches against the last known pred
    // id of each gt id (gaps included).
    let mut last_match: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut fne, mut fpe, mut idsw) = (0u64, 0u64, 0u64);
    for fs in &sims {
        let mut gt_used = vec![false; fs.gt.len()];
        let mut pred_used = vec![false; fs.pred.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (gl, &gi) in fs.gt.iter().enumerate() {
            if let Some(&pj) = last_match.get(&gi) {
                if let Some(pl) = fs.pred.iter().position(|&p| p == pj) {
                    if !pred_used[pl] && fs.sim[gl][pl] >= CLEAR_THR - SIM_EPS {
                        gt_used[gl] = true;
                        pred_used[pl] = true;
                        pairs.push((gl, pl));
                    }
                }
            }
        }
        let free_gt: Vec<usize> = (0..fs.gt.len()).filter(|&g| !gt_used[g]).collect();
        let free_pred: Vec<usize> = (0..fs.pred.len()).filter(|&p| !pred_used[p]).collect();
        if !free_gt.is_empty() && !free_pred.is_empty() {
            let cost = CostMatrix::from_fn(free_gt.len(), free_pred.len(), |r, c| {
                let s = fs.sim[free_gt[r]][free_pred[c]];
                if s >= CLEAR_THR - SIM_EPS {
                    -(COUNT_BIAS + s)
                } else {
                    1.0
                }
            });
            for (r, c) in gated_match(&cost, -COUNT_BIAS).matches {
                pairs.push((free_gt[r], free_pred[c]));
            }
        }
        fne += (fs.gt.len() - pairs.len()) as u64;
        fpe += (fs.pred.len() - pairs.len()) as u64;
        for (gl, pl) in pairs {
            let (gi, pj) = (fs.gt[gl], fs.pred[pl]);
            if let Some(&prev) = last_match.get(&gi) {
                if prev != pj {
                    idsw += 1;
                }
            }
            last_match.insert(gi, pj);
        }
    }
    let mota = (1.0 - (fne + fpe + idsw) as f64 / gt_total).clamp(0.0, 1.0);

    // IDF1: maximum-overlap global bipartite matching between gt and pred
    // ids, overlap counting frames where the pair's boxes reach IOU 0.5.
    let mut overlap = vec![vec![0u64; n_pred_ids]; n_gt_ids];
    for fs in &sims {
        for (gl, &gi) in fs.gt.iter().enumerate() {
            for (pl, &pj) in fs.pred.iter().enumerate() {
                if fs.sim[gl][pl] >= CLEAR_THR - SIM_EPS {
                    overlap[gi][pj] += 1;
                }
            }
        }
    }
    let idtp = if n_pred_ids == 0 {
        0.0
    } else {
        let cost = CostMatrix::from_fn(n_gt_ids, n_pred_ids, |g, p| -(overlap[g][p] as f64));
        crate::assignment::hungarian(&cost)
            .into_iter()
            .map(|(g, p)| overlap[g][p] as f64)
            .sum()
    };
    let idf1 = ratio(2.0 * idtp, gt_total + pred_total);

    Ok(MetricsReport {
        hota,
        det_a,
        ass_a,
        det_re,
        det_pr,
        ass_re,
        ass_pr,
        mota,
        idf1,
        id_switches: idsw,
    })
}

/// Side-by-side rendering of named reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    /// Aligned, human-readable text.
    pub text: String,
    /// The same rows as CSV.
    pub csv: String,
}

const TABLE_COLUMNS: [&str; 7] = ["HOTA", "DetA", "AssA", "DetRe", "DetPr", "AssRe", "AssPr"];

/// Renders reports as an aligned text table and as CSV, sorted by descending
/// HOTA (ties by name). Rates are shown multiplied by 100.
pub fn compare_table(reports: &[(String, MetricsReport)]) -> ComparisonTable {
    let mut order: Vec<&(String, MetricsReport)> = reports.iter().collect();
    order.sort_by(|a, b| {
        b.1.hota
            .partial_cmp(&a.1.hota)
            .expect("HOTA is never NaN")
            .then_with(|| a.0.cmp(&b.0))
    });

    let values = |r: &MetricsReport| [r.hota, r.det_a, r.ass_a, r.det_re, r.det_pr, r.ass_re, r.ass_pr];
    let name_w = order.iter().map(|(n, _)| n.len()).chain(["name".len()]).max().unwrap_or(4);

    let mut text = format!("{:name_w$}", "name");
    for c in TABLE_COLUMNS {
        text.push_str(&format!(" {c:>8}"));
    }
    text.push('\n');
    let mut csv = format!("name,{}\n", TABLE_COLUMNS.join(","));
    for (name, r) in order {
        text.push_str(&format!("{name:name_w$}"));
        for v in values(r) {
            text.push_str(&format!(" {:>8.3}", 100.0 * v));
        }
        text.push('\n');
        let row: Vec<String> = values(r).iter().map(|v| format!("{:.3}", 100.0 * v)).collect();
        csv.push_str(&format!("{},{}\n", name, row.join(",")));
    }
    ComparisonTable { text, csv }
}
