//! Input conditioning around the network: fill hidden joints to get a
//! continuous motion, keep an interpolated reference, and recombine the
//! network's delta output with that reference.

use crate::kinematics::{
    quaternion_to_rot6d, rot6d_to_quaternion, slerp, KinError, MotionTensor, Repr,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FillError {
    #[error("joint {joint} has no visible frame; cannot fill")]
    UnfillableJoint { joint: usize },
    #[error("shape mismatch: delta has {delta} values, reference {reference}")]
    DeltaShape { delta: usize, reference: usize },
    #[error(transparent)]
    Kin(#[from] KinError),
}

type Result<T> = std::result::Result<T, FillError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillStrategy {
    /// Linear (positions) or slerp (rotations) between bracketing visible
    /// frames; hold beyond the last visible frame, back-fill before the first.
    Interpolate,
    /// Hold the last visible value everywhere.
    RepeatLast,
}

/// The network input `x_fill` and the reference motion the delta output is
/// added to. Both keep the original visibility.
#[derive(Debug, Clone)]
pub struct FilledMotion {
    pub x_fill: MotionTensor,
    pub x_ref: MotionTensor,
}

impl FilledMotion {
    /// Swap in an alternative reference motion. The default reference equals
    /// `x_fill`; this is the hook for experimenting with other bases.
    pub fn with_reference(mut self, x_ref: MotionTensor) -> Self {
        self.x_ref = x_ref;
        self
    }
}

/// Fill every hidden `(t, j)` from that joint's visible frames. Visible
/// entries are copied through untouched.
pub fn fill_motion(x: &MotionTensor, strategy: FillStrategy) -> Result<FilledMotion> {
    let frames = x.frames();
    let joints = x.joints();
    
    let mut filled = x.clone();
    for j in 0..joints {
        let visible: Vec<usize> = (0..frames)
            .filter(|&t| x.visibility().is_visible(t, j))
            .collect();
        if visible.is_empty() {
            return Err(FillError::UnfillableJoint { joint: j });
        }
        for t in 0..frames {
            if x.visibility().is_visible(t, j) {
                continue;
            }
            let prev = visible.iter().rev().find(|&&v| v < t).copied();
            let next = visible.iter().find(|&&v| v > t).copied();
            let value: Vec<f64> = match (strategy, prev, next) {
                (FillStrategy::Interpolate, Some(p), Some(q)) => {
                    let frac = (t - p) as f64 / (q - p) as f64;
                    interpolate_joint(x, j, p, q, frac)?
                }
                (_, Some(p), _) => x.joint_vector(p, j).to_vec(),
                (_, None, Some(q)) => x.joint_vector(q, j).to_vec(),
                (_, None, None) => unreachable!("visible is non-empty"),
            };
            for (c, v) in value.iter().enumerate() {
                filled.set_value(t, j, c, *v);
            }
        }
    }
    debug_assert!(filled.values().iter().all(|v| v.is_finite()));
    let x_ref = filled.clone();
    Ok(FilledMotion {
        x_fill: filled,
        x_ref,
    })
}

fn interpolate_joint(
    x: &MotionTensor,
    joint: usize,
    p: usize,
    q: usize,
    frac: f64,
) -> Result<Vec<f64>> {
    let a = x.joint_vector(p, joint);
    let b = x.joint_vector(q, joint);
    match x.repr {
        Repr::Position3 => Ok(a
            .iter()
            .zip(b)
            .map(|(va, vb)| va + (vb - va) * frac)
            .collect()),
        Repr::Ortho6d => {
            let qa = rot6d_to_quaternion(a)?;
            let qb = rot6d_to_quaternion(b)?;
            Ok(quaternion_to_rot6d(&slerp(&qa, &qb, frac)).to_vec())
        }
    }
}

/// The reference motion the delta output is measured against. Identical to
/// `x_fill` by construction.
pub fn build_reference(filled: &FilledMotion) -> &MotionTensor {
    &filled.x_ref
}

/// `Y = delta + x_ref`, then visible entries are overwritten with the
/// original observed values when `overwrite_observed` is set.
pub fn apply_delta(
    delta: &[f64],
    x_ref: &MotionTensor,
    original: &MotionTensor,
    overwrite_observed: bool,
) -> Result<MotionTensor> {
    if delta.len() != x_ref.values().len() {
        return Err(FillError::DeltaShape {
            delta: delta.len(),
            reference: x_ref.values().len(),
        });
    }
    let mut out = x_ref.clone();
    for (o, d) in out.values_mut().iter_mut().zip(delta) {
        *o += d;
    }
    let n = out.channels();
    if overwrite_observed {
        for t in 0..out.frames() {
            for j in 0..out.joints() {
                if original.visibility().is_visible(t, j) {
                    for c in 0..n {
                        out.set_value(t, j, c, original.value(t, j, c));
                    }
                }
            }
        }
    }
    out.set_visibility(original.visibility().clone())?;
    Ok(out)
}

/// Time-axis DCT of a `[T, P]` motion matrix (per joint channel).
pub fn dct_wrap(values: &[f64], frames: usize, pose_dim: usize) -> Vec<f64> {
    crate::numkit::dct_apply(values, frames, pose_dim)
}

/// Inverse of [`dct_wrap`].
pub fn idct_unwrap(freq: &[f64], frames: usize, pose_dim: usize) -> Vec<f64> {
    crate::numkit::idct_apply(freq, frames, pose_dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Quaternion, Visibility};
    use crate::masking::gen_forecast_mask;

    fn scalarish_motion(values: Vec<f64>, frames: usize) -> MotionTensor {
        // 1-joint position motion where only channel 0 varies
        let mut v = Vec::new();
        for x in &values {
            v.extend_from_slice(&[*x, 0.0, 0.0]);
        }
        MotionTensor::new(v, frames, 1, Repr::Position3, 30.0).unwrap()
    }

    #[test]
    fn fully_visible_input_is_identity() {
        let m = scalarish_motion(vec![1.0, 2.0, 3.0], 3);
        let f = fill_motion(&m, FillStrategy::Interpolate).unwrap();
        assert_eq!(f.x_fill.values(), m.values());
        assert_eq!(f.x_ref.values(), m.values());
    }

    #[test]
    fn linear_midpoint_fill() {
        let mut m = scalarish_motion(vec![0.0, 99.0, 2.0], 3);
        let mut vis = Visibility::all_visible(3, 1);
        vis.set(1, 0, false);
        m.set_visibility(vis).unwrap();
        let f = fill_motion(&m, FillStrategy::Interpolate).unwrap();
        assert_eq!(f.x_fill.value(1, 0, 0), 1.0);
        // visible frames untouched
        assert_eq!(f.x_fill.value(0, 0, 0), 0.0);
        assert_eq!(f.x_fill.value(2, 0, 0), 2.0);
    }

    #[test]
    fn forecast_repeat_last_holds_final_pose() {
        let mut m = scalarish_motion(vec![1.0, 4.0, -1.0, -1.0, -1.0], 5);
        m.set_visibility(gen_forecast_mask(5, 2, 1).unwrap()).unwrap();
        for strategy in [FillStrategy::RepeatLast, FillStrategy::Interpolate] {
            let f = fill_motion(&m, strategy).unwrap();
            for t in 2..5 {
                assert_eq!(f.x_fill.value(t, 0, 0), 4.0, "{strategy:?} frame {t}");
            }
        }
    }

    #[test]
    fn backfill_before_first_visible() {
        let mut m = scalarish_motion(vec![-9.0, -9.0, 7.0, 8.0], 4);
        let mut vis = Visibility::all_visible(4, 1);
        vis.set(0, 0, false);
        vis.set(1, 0, false);
        m.set_visibility(vis).unwrap();
        let f = fill_motion(&m, FillStrategy::Interpolate).unwrap();
        assert_eq!(f.x_fill.value(0, 0, 0), 7.0);
        assert_eq!(f.x_fill.value(1, 0, 0), 7.0);
    }

    #[test]
    fn repeat_last_ignores_interior_interpolation() {
        let mut m = scalarish_motion(vec![0.0, 50.0, 2.0], 3);
        let mut vis = Visibility::all_visible(3, 1);
        vis.set(1, 0, false);
        m.set_visibility(vis).unwrap();
        let f = fill_motion(&m, FillStrategy::RepeatLast).unwrap();
        assert_eq!(f.x_fill.value(1, 0, 0), 0.0);
    }

    #[test]
    fn unfillable_joint_is_an_error() {
        let mut m = scalarish_motion(vec![1.0, 2.0], 2);
        let vis = Visibility::from_flags(2, 1, vec![false, false]).unwrap();
        m.set_visibility(vis).unwrap();
        let err = fill_motion(&m, FillStrategy::Interpolate).unwrap_err();
        assert!(matches!(err, FillError::UnfillableJoint { joint: 0 }));
    }

    #[test]
    fn rotation_fill_uses_slerp() {
        let q0 = Quaternion::IDENTITY;
        let q1 = Quaternion::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::PI / 2.0);
        let r0 = quaternion_to_rot6d(&q0);
        let r1 = quaternion_to_rot6d(&q1);
        let mut values = Vec::new();
        values.extend_from_slice(&r0);
        values.extend_from_slice(&[0.0; 6]);
        values.extend_from_slice(&r1);
        let mut m = MotionTensor::new(values, 3, 1, Repr::Ortho6d, 30.0).unwrap();
        let mut vis = Visibility::all_visible(3, 1);
        vis.set(1, 0, false);
        m.set_visibility(vis).unwrap();
        let f = fill_motion(&m, FillStrategy::Interpolate).unwrap();
        let got = rot6d_to_quaternion(f.x_fill.joint_vector(1, 0)).unwrap();
        let expect = Quaternion::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::PI / 4.0);
        assert!(got.dot(&expect).abs() > 1.0 - 1e-12);
    }

    #[test]
    fn interpolated_values_stay_within_bracket() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..50 {
            let vals: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut m = scalarish_motion(vals.clone(), 8);
            let mut vis = Visibility::all_visible(8, 1);
            for t in 2..6 {
                vis.set(t, 0, false);
            }
            m.set_visibility(vis).unwrap();
            let f = fill_motion(&m, FillStrategy::Interpolate).unwrap();
            let lo = vals[1].min(vals[6]);
            let hi = vals[1].max(vals[6]);
            for t in 2..6 {
                let v = f.x_fill.value(t, 0, 0);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn build_reference_equals_fill_bit_exact() {
        let mut m = scalarish_motion(vec![0.3, 0.0, 0.9, 1.4], 4);
        let mut vis = Visibility::all_visible(4, 1);
        vis.set(1, 0, false);
        m.set_visibility(vis).unwrap();
        let f = fill_motion(&m, FillStrategy::Interpolate).unwrap();
        let r = build_reference(&f);
        assert!(f
            .x_fill
            .values()
            .iter()
            .zip(r.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn apply_delta_identity_and_inverse() {
        let mut m = scalarish_motion(vec![1.0, 2.0, 3.0, 4.0], 4);
        m.set_visibility(gen_forecast_mask(4, 2, 1).unwrap()).unwrap();
        let f = fill_motion(&m, FillStrategy::Interpolate).unwrap();
        let zero = vec![0.0; 12];
        let y = apply_delta(&zero, &f.x_ref, &m, true).unwrap();
        assert_eq!(y.values(), f.x_ref.values());

        // delta = truth - ref restores the ground truth
        let truth = scalarish_motion(vec![1.0, 2.0, 5.0, 7.0], 4);
        let delta: Vec<f64> = truth
            .values()
            .iter()
            .zip(f.x_ref.values())
            .map(|(t, r)| t - r)
            .collect();
        let y = apply_delta(&delta, &f.x_ref, &m, false).unwrap();
        for (a, b) in y.values().iter().zip(truth.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_delta_masked_entries_offset_by_delta() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(77);
        let mut m = scalarish_motion((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(), 6);
        m.set_visibility(gen_forecast_mask(6, 3, 1).unwrap()).unwrap();
        let f = fill_motion(&m, FillStrategy::Interpolate).unwrap();
        let delta: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = apply_delta(&delta, &f.x_ref, &m, true).unwrap();
        for t in 0..6 {
            for c in 0..3 {
                let i = t * 3 + c;
                if t < 3 {
                    assert_eq!(y.value(t, 0, c), m.value(t, 0, c));
                } else {
                    assert!((y.value(t, 0, c) - f.x_ref.value(t, 0, c) - delta[i]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn apply_delta_shape_error() {
        let m = scalarish_motion(vec![1.0, 2.0], 2);
        let f = fill_motion(&m, FillStrategy::Interpolate).unwrap();
        assert!(apply_delta(&[0.0; 3], &f.x_ref, &m, true).is_err());
    }

    #[test]
    fn dct_wrap_round_trip_and_constant() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(5);
        let (t, p) = (16, 6);
        let x: Vec<f64> = (0..t * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = idct_unwrap(&dct_wrap(&x, t, p), t, p);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }

        let constant = vec![2.0; t * p];
        let freq = dct_wrap(&constant, t, p);
        for row in 1..t {
            for c in 0..p {
                assert!(freq[row * p + c].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sinusoid_energy_concentrates_in_few_bins() {
        // single-frequency gait-like signal: DCT energy in <= 3 bins
        let t = 64;
        let x: Vec<f64> = (0..t)
            .map(|i| (2.0 * std::f64::consts::PI * 4.0 * i as f64 / t as f64).cos())
            .collect();
        let freq = dct_wrap(&x, t, 1);
        let total: f64 = freq.iter().map(|v| v * v).sum();
        let mut powers: Vec<f64> = freq.iter().map(|v| v * v).collect();
        powers.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let top3: f64 = powers[..3].iter().sum();
        assert!(top3 / total >= 0.95, "top-3 share {}", top3 / total);
    }
}
