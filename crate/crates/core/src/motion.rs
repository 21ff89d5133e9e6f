//! Constant-velocity Kalman filter for per-track box prediction.
//!
//! State layout is `(cx, cy, w, h, v_cx, v_cy, v_w, v_h)` in pixels and
//! pixels per frame, with `dt` fixed at one frame. Process and measurement
//! noise are diagonal and scale with the current box height, the usual
//! SORT-family parameterization.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::{sc, Scalar};

/// Position noise weight (std per unit of box height).
pub const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
/// Velocity noise weight (std per unit of box height).
pub const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

/// Floor applied to predicted box dimensions so downstream geometry always
/// sees a valid box even for long-coasting tracks with shrinking size.
const MIN_DIM: f64 = 1e-2;

/// Extra factor on the velocity process noise. New tracks start with a tight
/// zero-velocity prior, so the filter needs enough process noise on the
/// velocity states to lock onto a moving target within a ~10-frame burn-in;
/// the usual SORT-family 10x velocity factor does exactly that.
const VELOCITY_PROCESS_BOOST: f64 = 10.0;

/// Kalman mean and covariance. Value type: predict and update return new
/// states instead of mutating.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<T: Scalar> {
    pub mean: [T; 8],
    pub cov: [[T; 8]; 8],
}

/// New filter state centered on `b` with zero velocity.
///
/// The covariance is diagonal: position entries get std `h/20`, velocity
/// entries `h/160`.
pub fn kf_initiate<T: Scalar>(b: &BBox<T>) -> KalmanState<T> {
    let (cx, cy) = b.center();
    let mean = [cx, cy, b.w, b.h, T::zero(), T::zero(), T::zero(), T::zero()];
    let sp = sc::<T>(STD_WEIGHT_POSITION) * b.h;
    let sv = sc::<T>(STD_WEIGHT_VELOCITY) * b.h;
    let mut cov = [[T::zero(); 8]; 8];
    for i in 0..4 {
        cov[i][i] = sp * sp;
        cov[i + 4][i + 4] = sv * sv;
    }
    KalmanState { mean, cov }
}

/// One-frame prediction: position components advance by their velocities,
/// covariance grows by the process noise.
pub fn kf_predict<T: Scalar>(s: &KalmanState<T>) -> KalmanState<T> {
    let h = s.mean[3];
    let sp = sc::<T>(STD_WEIGHT_POSITION) * h;
    let sv = sc::<T>(STD_WEIGHT_VELOCITY * VELOCITY_PROCESS_BOOST) * h;

    let mut mean = s.mean;
    for i in 0..4 {
        mean[i] = mean[i] + mean[i + 4];
    }
    // Keep box dimensions positive; a coasting track with negative size
    // velocity would otherwise hand degenerate boxes to the geometry layer.
    mean[2] = mean[2].max(sc(MIN_DIM));
    mean[3] = mean[3].max(sc(MIN_DIM));

    // P' = F P F^T + Q with F the constant-velocity transition. F only
    // couples i with i+4, so expand the product directly.
    let p = &s.cov;
    let mut cov = [[T::zero(); 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            let mut v = p[i][j];
            if i < 4 {
                v += p[i + 4][j];
            }
            if j < 4 {
                v += p[i][j + 4];
            }
            if i < 4 && j < 4 {
                v += p[i + 4][j + 4];
            }
            cov[i][j] = v;
        }
    }
    for i in 0..4 {
        cov[i][i] += sp * sp;
        cov[i + 4][i + 4] += sv * sv;
    }
    KalmanState { mean, cov }
}

/// Measurement update on `(cx, cy, w, h)`.
///
/// Measurement noise is diagonal with std `h/20` scaled by the state's
/// current height. Uses the Joseph-form covariance update and resymmetrizes,
/// so the covariance stays symmetric PSD. Fails only when the innovation
/// covariance cannot be factorized, which signals a degenerate state.
pub fn kf_update<T: Scalar>(s: &KalmanState<T>, z: &BBox<T>) -> Result<KalmanState<T>> {
    let (zcx, zcy) = z.center();
    let zvec = [zcx, zcy, z.w, z.h];

    let sp = sc::<T>(STD_WEIGHT_POSITION) * s.mean[3];
    let r = sp * sp;

    // Innovation covariance S = P[0..4,0..4] + R.
    let mut smat = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            smat[i][j] = s.cov[i][j];
        }
        smat[i][i] += r;
    }
    let chol = cholesky4(&smat).ok_or(Error::SingularInnovation)?;

    // Gain K = P H^T S^-1, where P H^T is the first four columns of P.
    let mut k = [[T::zero(); 4]; 8];
    for i in 0..8 {
        let col = [s.cov[i][0], s.cov[i][1], s.cov[i][2], s.cov[i][3]];
        k[i] = chol_solve4(&chol, &col);
    }

    let mut mean = s.mean;
    let innov = [
        zvec[0] - s.mean[0],
        zvec[1] - s.mean[1],
        zvec[2] - s.mean[2],
        zvec[3] - s.mean[3],
    ];
    for i in 0..8 {
        let mut acc = T::zero();
        for j in 0..4 {
            acc += k[i][j] * innov[j];
        }
        mean[i] += acc;
    }

    // Joseph form: P' = (I - K H) P (I - K H)^T + K R K^T.
    let mut a = [[T::zero(); 8]; 8];
    for i in 0..8 {
        a[i][i] = T::one();
        for j in 0..4 {
            a[i][j] -= k[i][j];
        }
    }
    let mut ap = [[T::zero(); 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = T::zero();
            for l in 0..8 {
                acc += a[i][l] * s.cov[l][j];
            }
            ap[i][j] = acc;
        }
    }
    let mut cov = [[T::zero(); 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = T::zero();
            for l in 0..8 {
                acc += ap[i][l] * a[j][l];
            }
            for l in 0..4 {
                acc += k[i][l] * r * k[j][l];
            }
            cov[i][j] = acc;
        }
    }
    // Wash out rounding asymmetry.
    for i in 0..8 {
        for j in (i + 1)..8 {
            let m = (cov[i][j] + cov[j][i]) * sc::<T>(0.5);
            cov[i][j] = m;
            cov[j][i] = m;
        }
    }
    Ok(KalmanState { mean, cov })
}

/// Converts the state's `(cx, cy, w, h)` back to a top-left box.
pub fn kf_box<T: Scalar>(s: &KalmanState<T>) -> Result<BBox<T>> {
    let w = s.mean[2];
    let h = s.mean[3];
    if w <= T::zero() || h <= T::zero() || !w.is_finite() || !h.is_finite() {
        return Err(Error::DegenerateBox {
            w: w.as_f64(),
            h: h.as_f64(),
        });
    }
    let half: T = sc(0.5);
    Ok(BBox::new(s.mean[0] - w * half, s.mean[1] - h * half, w, h))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite 4x4
/// matrix, or None when a pivot is not strictly positive.
fn cholesky4<T: Scalar>(m: &[[T; 4]; 4]) -> Option<[[T; 4]; 4]> {
    let mut l = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= T::zero() || !sum.is_finite() {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `S x = b` given the Cholesky factor of S.
fn chol_solve4<T: Scalar>(l: &[[T; 4]; 4], b: &[T; 4]) -> [T; 4] {
    let mut y = [T::zero(); 4];
    for i in 0..4 {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i][k] * y[k];
        }
        y[i] = v / l[i][i];
    }
    let mut x = [T::zero(); 4];
    for i in (0..4).rev() {
        let mut v = y[i];
        for k in (i + 1)..4 {
            v -= l[k][i] * x[k];
        }
        x[i] = v / l[i][i];
    }
    x
}
