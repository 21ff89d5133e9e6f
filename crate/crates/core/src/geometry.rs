//! Box geometry, IoU and ReID cost matrices, hybrid distances, and NMS.
//!
//! Everything here is a pure function over value types; no shared state.

use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};
use std::ops::{Index, IndexMut};

/// Tolerance for accepting an embedding as unit-norm.
pub const NORM_TOL: f64 = 1e-6;

/// Axis-aligned box in pixels, top-left origin (MOTChallenge convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T: Scalar> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BBox<T> {
    /// Builds a box. Panics if `w` or `h` is not strictly positive or any
    /// field is non-finite; file readers validate raw input before calling.
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        assert!(
            x.is_finite() && y.is_finite() && w > T::zero() && h > T::zero() && w.is_finite() && h.is_finite(),
            "invalid box: x={x:?} y={y:?} w={w:?} h={h:?}"
        );
        Self { x, y, w, h }
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn center(&self) -> (T, T) {
        let half: T = sc(0.5);
        (self.x + self.w * half, self.y + self.h * half)
    }

    /// Smallest box covering both inputs.
    pub fn union_bound(a: &Self, b: &Self) -> Self {
        let x = a.x.min(b.x);
        let y = a.y.min(b.y);
        let r = a.right().max(b.right());
        let bo = a.bottom().max(b.bottom());
        Self::new(x, y, r - x, bo - y)
    }
}

/// Intersection over union of two boxes, in [0, 1]. Zero when disjoint,
/// including boxes that only share an edge.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let ix = a.right().min(b.right()) - a.x.max(b.x);
    let iy = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if ix <= T::zero() || iy <= T::zero() {
        return T::zero();
    }
    let inter = ix * iy;
    // The intersection extent is recomputed from the box corners, so for
    // large coordinates rounding can push the ratio a hair above 1 even for
    // identical boxes. Clamp to keep the documented range.
    (inter / (a.area() + b.area() - inter)).min(T::one())
}

/// Dense row-major cost matrix (rows = tracks, cols = detections).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// True when either dimension is zero.
    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }
}

impl<T: Scalar> Index<(usize, usize)> for CostMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for CostMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// IoU distance matrix: `D[i][j] = 1 - iou(track_i, det_j)`, shape M x N.
/// Either input may be empty, yielding a zero-sized matrix.
pub fn iou_distance_matrix<T: Scalar>(track_boxes: &[BBox<T>], det_boxes: &[BBox<T>]) -> CostMatrix<T> {
    CostMatrix::from_fn(track_boxes.len(), det_boxes.len(), |i, j| {
        T::one() - iou(&track_boxes[i], &det_boxes[j])
    })
}

/// Cosine distance `1 - a.b` of two unit vectors, clamped into [0, 2].
/// Callers guarantee equal dimensions and unit norm.
pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = T::zero();
    for (x, y) in a.iter().zip(b) {
        dot += *x * *y;
    }
    (T::one() - dot).max(T::zero()).min(sc(2.0))
}

/// ReID distance matrix `E[i][j] = 1 - e_i . f_j` (cosine distance in
/// [0, 2]) between track and detection embeddings.
///
/// All vectors must share one dimension and be L2-normalized within
/// [`NORM_TOL`]; violations are reported as errors rather than silently
/// renormalized, since they indicate a broken upstream exporter.
pub fn reid_distance_matrix<T: Scalar>(
    track_feats: &[Vec<T>],
    det_feats: &[Vec<T>],
) -> Result<CostMatrix<T>> {
    let mut dim: Option<usize> = None;
    for v in track_feats.iter().chain(det_feats.iter()) {
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::EmbeddingDim {
                    expected: d,
                    got: v.len(),
                })
            }
            _ => {}
        }
        let norm = v.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt().as_f64();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::EmbeddingNorm {
                norm,
                tol: NORM_TOL,
            });
        }
    }
    Ok(CostMatrix::from_fn(
        track_feats.len(),
        det_feats.len(),
        |i, j| cosine_distance(&track_feats[i], &det_feats[j]),
    ))
}

/// Convex mix of an IoU-distance matrix and a ReID-distance matrix.
///
/// With `iou_dominant` the output is `alpha*D + (1-alpha)*E` (the first,
/// third and fourth matching rounds); otherwise the weights swap to
/// `(1-alpha)*D + alpha*E` (the second round's inverted form).
pub fn hybrid_distance<T: Scalar>(
    d: &CostMatrix<T>,
    e: &CostMatrix<T>,
    alpha: T,
    iou_dominant: bool,
) -> Result<CostMatrix<T>> {
    if d.rows() != e.rows() || d.cols() != e.cols() {
        return Err(Error::ShapeMismatch {
            a_rows: d.rows(),
            a_cols: d.cols(),
            b_rows: e.rows(),
            b_cols: e.cols(),
        });
    }
    let (wd, we) = if iou_dominant {
        (alpha, T::one() - alpha)
    } else {
        (T::one() - alpha, alpha)
    };
    Ok(CostMatrix::from_fn(d.rows(), d.cols(), |i, j| {
        wd * d[(i, j)] + we * e[(i, j)]
    }))
}

/// Indices kept by greedy confidence-descending NMS.
///
/// Ties in confidence are broken by original index (lower first), so the
/// result is deterministic. A box is dropped when its IoU with an already
/// kept box exceeds `threshold` (strictly).
pub fn nms_keep_indices<T: Scalar>(dets: &[(BBox<T>, T)], threshold: T) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .1
            .partial_cmp(&dets[a].1)
            .expect("finite confidences")
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.iter().all(|&k| iou(&dets[k].0, &dets[i].0) <= threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Greedy NMS over `(box, confidence)` pairs. Output is in confidence-
/// descending order (ties by original index).
pub fn nms<T: Scalar>(dets: &[(BBox<T>, T)], threshold: T) -> Vec<(BBox<T>, T)> {
    nms_keep_indices(dets, threshold)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox<f64> {
        BBox::new(x, y, w, h)
    }

    #[test]
    fn iou_identity_is_one() {
        let a = b(3.0, 4.0, 10.0, 20.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        assert_eq!(iou(&b(0.0, 0.0, 10.0, 10.0), &b(20.0, 20.0, 5.0, 5.0)), 0.0);
    }

    #[test]
    fn iou_shared_edge_is_zero() {
        assert_eq!(iou(&b(0.0, 0.0, 10.0, 10.0), &b(10.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        let v = iou(&b(0.0, 0.0, 10.0, 10.0), &b(5.0, 0.0, 10.0, 10.0));
        assert_relative_eq!(v, 50.0 / 150.0, max_relative = 1e-12);
    }

    #[test]
    fn iou_distance_matrix_examples() {
        let t = [b(0.0, 0.0, 10.0, 10.0)];
        let d = [b(0.0, 0.0, 10.0, 10.0), b(5.0, 0.0, 10.0, 10.0)];
        let m = iou_distance_matrix(&t, &d);
        assert_eq!((m.rows(), m.cols()), (1, 2));
        assert_eq!(m[(0, 0)], 0.0);
        assert_relative_eq!(m[(0, 1)], 1.0 - 50.0 / 150.0, max_relative = 1e-12);

        let empty = iou_distance_matrix::<f64>(&[], &d);
        assert_eq!((empty.rows(), empty.cols()), (0, 2));
        assert!(empty.is_empty());
    }

    #[test]
    fn reid_matrix_examples() {
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        let e3 = vec![-1.0, 0.0];
        let m = reid_distance_matrix(&[e1.clone()], &[e1.clone(), e2, e3]).unwrap();
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(0, 2)], 2.0);
    }

    #[test]
    fn reid_matrix_rejects_bad_input() {
        let ok = vec![1.0, 0.0];
        let short = vec![1.0];
        let long = vec![0.5, 0.5]; // norm = 0.707
        assert!(matches!(
            reid_distance_matrix(&[ok.clone()], &[short]),
            Err(Error::EmbeddingDim { expected: 2, got: 1 })
        ));
        assert!(matches!(
            reid_distance_matrix(&[ok], &[long]),
            Err(Error::EmbeddingNorm { .. })
        ));
    }

    #[test]
    fn hybrid_distance_examples() {
        let d = CostMatrix::from_fn(1, 1, |_, _| 0.2);
        let e = CostMatrix::from_fn(1, 1, |_, _| 0.1);
        let d1 = hybrid_distance(&d, &e, 0.9, true).unwrap();
        assert_relative_eq!(d1[(0, 0)], 0.19, max_relative = 1e-12);
        let d2 = hybrid_distance(&d, &e, 0.9, false).unwrap();
        assert_relative_eq!(d2[(0, 0)], 0.11, max_relative = 1e-12);
    }

    #[test]
    fn hybrid_distance_shape_mismatch_errors() {
        let d = CostMatrix::<f64>::zeros(2, 2);
        let e = CostMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            hybrid_distance(&d, &e, 0.9, true),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn nms_examples() {
        let thr = 0.45;
        // Identical boxes: keep only the higher confidence one.
        let dets = [(b(0.0, 0.0, 10.0, 10.0), 0.9), (b(0.0, 0.0, 10.0, 10.0), 0.8)];
        let kept = nms(&dets, thr);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].1, 0.9);
        // Disjoint boxes: both kept.
        let dets = [(b(0.0, 0.0, 10.0, 10.0), 0.5), (b(50.0, 0.0, 10.0, 10.0), 0.9)];
        assert_eq!(nms(&dets, thr).len(), 2);
        // IoU 0.333 is not above 0.45: both kept.
        let dets = [(b(0.0, 0.0, 10.0, 10.0), 0.9), (b(5.0, 0.0, 10.0, 10.0), 0.8)];
        assert_eq!(nms(&dets, thr).len(), 2);
    }

    #[test]
    fn nms_tie_breaks_by_original_index() {
        let dets = [(b(0.0, 0.0, 10.0, 10.0), 0.8), (b(1.0, 0.0, 10.0, 10.0), 0.8)];
        let kept = nms_keep_indices(&dets, 0.45);
        assert_eq!(kept, vec![0]);
    }

    #[test]
    fn works_in_f32_too() {
        let a = BBox::<f32>::new(0.0, 0.0, 10.0, 10.0);
        let c = BBox::<f32>::new(5.0, 0.0, 10.0, 10.0);
        assert_relative_eq!(iou(&a, &c), 1.0 / 3.0, max_relative = 1e-6);
    }

    fn arb_box() -> impl Strategy<Value = BBox<f64>> {
        (
            -500.0..1500.0f64,
            -500.0..1500.0f64,
            0.1..400.0f64,
            0.1..400.0f64,
        )
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    fn arb_unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0..1.0f64, dim).prop_filter_map("nonzero", |v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-3 {
                None
            } else {
                Some(v.into_iter().map(|x| x / n).collect())
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn iou_symmetric_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            let ba = iou(&c, &a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_one_means_identical(a in arb_box()) {
            // Exact equality is not float-sound for arbitrary coordinates
            // (the intersection extent is recomputed from corners), so allow
            // a rounding-sized band below 1.
            let self_iou = iou(&a, &a);
            prop_assert!(self_iou <= 1.0 && self_iou >= 1.0 - 1e-9);
            let shifted = BBox::new(a.x + 0.5, a.y, a.w, a.h);
            prop_assert!(iou(&a, &shifted) < 1.0);
        }

        #[test]
        fn iou_matrix_entries_in_range(
            ts in proptest::collection::vec(arb_box(), 0..6),
            ds in proptest::collection::vec(arb_box(), 0..6),
        ) {
            let m = iou_distance_matrix(&ts, &ds);
            prop_assert_eq!((m.rows(), m.cols()), (ts.len(), ds.len()));
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    prop_assert!(m[(i, j)].is_finite());
                    prop_assert!((0.0..=1.0).contains(&m[(i, j)]));
                }
            }
        }

        #[test]
        fn reid_matrix_zero_diagonal_and_range(
            fs in proptest::collection::vec(arb_unit_vec(6), 1..5),
        ) {
            let m = reid_distance_matrix(&fs, &fs).unwrap();
            for i in 0..fs.len() {
                prop_assert!(m[(i, i)].abs() < 1e-9);
                for j in 0..fs.len() {
                    prop_assert!((0.0..=2.0).contains(&m[(i, j)]));
                }
            }
        }

        #[test]
        fn hybrid_monotone_in_entries(
            d0 in 0.0..1.0f64, e0 in 0.0..2.0f64,
            bump in 0.001..0.5f64,
            alpha in 0.0..=1.0f64,
            dominant in any::<bool>(),
        ) {
            let base_d = CostMatrix::from_fn(1, 1, |_, _| d0);
            let base_e = CostMatrix::from_fn(1, 1, |_, _| e0);
            let up_d = CostMatrix::from_fn(1, 1, |_, _| d0 + bump);
            let up_e = CostMatrix::from_fn(1, 1, |_, _| e0 + bump);
            let h0 = hybrid_distance(&base_d, &base_e, alpha, dominant).unwrap()[(0, 0)];
            let hd = hybrid_distance(&up_d, &base_e, alpha, dominant).unwrap()[(0, 0)];
            let he = hybrid_distance(&base_d, &up_e, alpha, dominant).unwrap()[(0, 0)];
            prop_assert!(hd >= h0);
            prop_assert!(he >= h0);
        }

        #[test]
        fn hybrid_of_equal_matrices_is_identity(
            vals in proptest::collection::vec(0.0..1.0f64, 4),
            alpha in 0.0..=1.0f64,
            dominant in any::<bool>(),
        ) {
            let d = CostMatrix::from_fn(2, 2, |i, j| vals[i * 2 + j]);
            let h = hybrid_distance(&d, &d, alpha, dominant).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((h[(i, j)] - d[(i, j)]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn nms_output_subset_and_sparse(
            dets in proptest::collection::vec((arb_box(), 0.0..1.0f64), 0..10),
            thr in 0.05..1.0f64,
        ) {
            let kept = nms_keep_indices(&dets, thr);
            // Subset, without duplicates.
            let mut seen = std::collections::BTreeSet::new();
            for &k in &kept {
                prop_assert!(k < dets.len());
                prop_assert!(seen.insert(k));
            }
            // No two kept boxes overlap above the threshold.
            for (ai, &a) in kept.iter().enumerate() {
                for &c in kept.iter().skip(ai + 1) {
                    prop_assert!(iou(&dets[a].0, &dets[c].0) <= thr);
                }
            }
            // Every dropped box conflicts with some kept box.
            for i in 0..dets.len() {
                if !kept.contains(&i) {
                    prop_assert!(kept.iter().any(|&k| iou(&dets[k].0, &dets[i].0) > thr));
                }
            }
        }
    }
}
