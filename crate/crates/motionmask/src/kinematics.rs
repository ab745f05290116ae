//! Skeleton data model, rotation representations and forward kinematics.
//!
//! Motions carry a per-joint visibility mask; joints are stored either as
//! xyz positions (n=3) or ortho-6D rotations (n=6). All functions here are
//! pure and safe to call concurrently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KinError {
    #[error("degenerate 6d rotation: {0}")]
    Degenerate(String),
    #[error("input is not a rotation matrix (orthonormality residual {0:.3e})")]
    NotARotation(f64),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("motion error: {0}")]
    Motion(String),
}

type Result<T> = std::result::Result<T, KinError>;

// ── topology ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Index of the parent joint; `None` for the root.
    pub parent: Option<usize>,
    /// Rest offset from the parent, in topology units.
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub name: String,
    pub joints: Vec<Joint>,
}

impl SkeletonTopology {
    pub fn new(name: impl Into<String>, joints: Vec<Joint>) -> Result<Self> {
        let mut roots = 0;
        for (i, j) in joints.iter().enumerate() {
            match j.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(KinError::Topology(format!(
                        "joint {} ({}) has parent {} not preceding it",
                        i, j.name, p
                    )))
                }
                _ => {}
            }
        }
        if roots != 1 {
            return Err(KinError::Topology(format!(
                "expected exactly one root joint, found {}",
                roots
            )));
        }
        Ok(SkeletonTopology {
            name: name.into(),
            joints,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Built-in 22-joint humanoid matching common MOCAP skeletons.
    /// Offsets are millimetres.
    pub fn default22() -> Self {
        let j = |name: &str, parent: Option<usize>, offset: [f64; 3]| Joint {
            name: name.to_string(),
            parent,
            offset,
        };
        SkeletonTopology {
            name: "default22".to_string(),
            joints: vec![
                j("Hips", None, [0.0, 950.0, 0.0]),
                j("LeftUpLeg", Some(0), [100.0, -30.0, 0.0]),
                j("LeftLeg", Some(1), [0.0, -420.0, 0.0]),
                j("LeftFoot", Some(2), [0.0, -400.0, 0.0]),
                j("LeftToe", Some(3), [0.0, -60.0, 130.0]),
                j("RightUpLeg", Some(0), [-100.0, -30.0, 0.0]),
                j("RightLeg", Some(5), [0.0, -420.0, 0.0]),
                j("RightFoot", Some(6), [0.0, -400.0, 0.0]),
                j("RightToe", Some(7), [0.0, -60.0, 130.0]),
                j("Spine", Some(0), [0.0, 100.0, 0.0]),
                j("Spine1", Some(9), [0.0, 110.0, 0.0]),
                j("Spine2", Some(10), [0.0, 120.0, 0.0]),
                j("Neck", Some(11), [0.0, 130.0, 0.0]),
                j("Head", Some(12), [0.0, 120.0, 0.0]),
                j("LeftShoulder", Some(11), [70.0, 90.0, 0.0]),
                j("LeftArm", Some(14), [120.0, 0.0, 0.0]),
                j("LeftForeArm", Some(15), [270.0, 0.0, 0.0]),
                j("LeftHand", Some(16), [250.0, 0.0, 0.0]),
                j("RightShoulder", Some(11), [-70.0, 90.0, 0.0]),
                j("RightArm", Some(18), [-120.0, 0.0, 0.0]),
                j("RightForeArm", Some(19), [-270.0, 0.0, 0.0]),
                j("RightHand", Some(20), [-250.0, 0.0, 0.0]),
            ],
        }
    }
}

// ── motion tensor ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repr {
    Position3,
    Ortho6d,
}

impl Repr {
    pub fn channels(self) -> usize {
        match self {
            Repr::Position3 => 3,
            Repr::Ortho6d => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Repr::Position3 => "position3",
            Repr::Ortho6d => "ortho6d",
        }
    }
}

/// Per-frame, per-joint visibility flags; `true` means observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visibility {
    frames: usize,
    joints: usize,
    flags: Vec<bool>,
}

impl Visibility {
    pub fn all_visible(frames: usize, joints: usize) -> Self {
        Visibility {
            frames,
            joints,
            flags: vec![true; frames * joints],
        }
    }

    pub fn from_flags(frames: usize, joints: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != frames * joints {
            return Err(KinError::Motion(format!(
                "visibility needs {}x{} flags, got {}",
                frames,
                joints,
                flags.len()
            )));
        }
        Ok(Visibility {
            frames,
            joints,
            flags,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn is_visible(&self, frame: usize, joint: usize) -> bool {
        self.flags[frame * self.joints + joint]
    }

    pub fn set(&mut self, frame: usize, joint: usize, visible: bool) {
        self.flags[frame * self.joints + joint] = visible;
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count_hidden(&self) -> usize {
        self.flags.iter().filter(|v| !**v).count()
    }
}

/// A `T x J x n` motion with paired visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTensor {
    values: Vec<f64>,
    visibility: Visibility,
    pub repr: Repr,
    pub frame_rate: f64,
    frames: usize,
    joints: usize,
}

impl MotionTensor {
    pub fn new(
        values: Vec<f64>,
        frames: usize,
        joints: usize,
        repr: Repr,
        frame_rate: f64,
    ) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(KinError::Motion("motion needs T >= 1 and J >= 1".into()));
        }
        let expect = frames * joints * repr.channels();
        if values.len() != expect {
            return Err(KinError::Motion(format!(
                "expected {} values for {}x{}x{}, got {}",
                expect,
                frames,
                joints,
                repr.channels(),
                values.len()
            )));
        }
        Ok(MotionTensor {
            values,
            visibility: Visibility::all_visible(frames, joints),
            repr,
            frame_rate,
            frames,
            joints,
        })
    }

    pub fn zeros(frames: usize, joints: usize, repr: Repr, frame_rate: f64) -> Self {
        MotionTensor {
            values: vec![0.0; frames * joints * repr.channels()],
            visibility: Visibility::all_visible(frames, joints),
            repr,
            frame_rate,
            frames,
            joints,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn channels(&self) -> usize {
        self.repr.channels()
    }

    /// Flattened pose dimension P = J * n.
    pub fn pose_dim(&self) -> usize {
        self.joints * self.channels()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn visibility(&self) -> &Visibility {
        &self.visibility
    }

    pub fn set_visibility(&mut self, visibility: Visibility) -> Result<()> {
        if visibility.frames != self.frames || visibility.joints != self.joints {
            return Err(KinError::Motion(format!(
                "visibility {}x{} does not match motion {}x{}",
                visibility.frames, visibility.joints, self.frames, self.joints
            )));
        }
        self.visibility = visibility;
        Ok(())
    }

    pub fn value(&self, frame: usize, joint: usize, channel: usize) -> f64 {
        self.values[(frame * self.joints + joint) * self.channels() + channel]
    }

    pub fn set_value(&mut self, frame: usize, joint: usize, channel: usize, v: f64) {
        let n = self.channels();
        self.values[(frame * self.joints + joint) * n + channel] = v;
    }

    pub fn joint_vector(&self, frame: usize, joint: usize) -> &[f64] {
        let n = self.channels();
        let base = (frame * self.joints + joint) * n;
        &self.values[base..base + n]
    }

    /// Copy of frames `[start, start+len)` with the matching visibility window.
    pub fn window(&self, start: usize, len: usize) -> Result<MotionTensor> {
        if start + len > self.frames {
            return Err(KinError::Motion(format!(
                "window {}..{} out of range for {} frames",
                start,
                start + len,
                self.frames
            )));
        }
        let n = self.channels();
        let per_frame = self.joints * n;
        let values = self.values[start * per_frame..(start + len) * per_frame].to_vec();
        let flags = self.visibility.flags[start * self.joints..(start + len) * self.joints].to_vec();
        let mut out = MotionTensor::new(values, len, self.joints, self.repr, self.frame_rate)?;
        out.set_visibility(Visibility::from_flags(len, self.joints, flags)?)?;
        Ok(out)
    }
}

// ── quaternion ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Quaternion {
        let n = self.norm();
        Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn negated(&self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Flip sign if needed so that `dot(reference, self) >= 0`.
    pub fn hemisphere_aligned(&self, reference: &Quaternion) -> Quaternion {
        if reference.dot(self) < 0.0 {
            self.negated()
        } else {
            *self
        }
    }

    /// Hamilton product `self * rhs` (apply rhs first).
    pub fn multiply(&self, rhs: &Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
    }

    pub fn rotate_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let q = self;
        let u = [q.x, q.y, q.z];
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        [
            v[0] + 2.0 * (q.w * uv[0] + uuv[0]),
            v[1] + 2.0 * (q.w * uv[1] + uuv[1]),
            v[2] + 2.0 * (q.w * uv[2] + uuv[2]),
        ]
    }

    /// Rotation about a unit axis by `angle` radians.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Quaternion {
        let half = angle / 2.0;
        let s = half.sin();
        Quaternion::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s).normalized()
    }

    /// Angle of the relative rotation between two unit quaternions.
    pub fn angle_to(&self, other: &Quaternion) -> f64 {
        let d = self.dot(other).abs().min(1.0);
        2.0 * d.acos()
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

// ── rotation conversions ─────────────────────────────────────────────

/// Row-major 3x3 rotation matrix.
pub type Mat3 = [f64; 9];

/// Gram-Schmidt recovery of a rotation matrix from the 6-value form.
/// The two 3-vectors become the first two columns; the third is their
/// cross product, guaranteeing det = +1.
pub fn rot6d_to_matrix(r: &[f64]) -> Result<Mat3> {
    assert_eq!(r.len(), 6, "ortho-6D value must have 6 components");
    let a = [r[0], r[1], r[2]];
    let b = [r[3], r[4], r[5]];
    let na = norm3(a);
    if na < 1e-12 {
        return Err(KinError::Degenerate("first column has zero norm".into()));
    }
    let c0 = [a[0] / na, a[1] / na, a[2] / na];
    let proj = dot3(c0, b);
    let res = [b[0] - proj * c0[0], b[1] - proj * c0[1], b[2] - proj * c0[2]];
    let nr = norm3(res);
    if nr < 1e-12 {
        return Err(KinError::Degenerate(
            "second column is parallel to the first".into(),
        ));
    }
    let c1 = [res[0] / nr, res[1] / nr, res[2] / nr];
    let c2 = cross(c0, c1);
    Ok([
        c0[0], c1[0], c2[0], //
        c0[1], c1[1], c2[1], //
        c0[2], c1[2], c2[2],
    ])
}

/// First two columns of a rotation matrix, flattened.
pub fn matrix_to_rot6d(m: &Mat3) -> [f64; 6] {
    [m[0], m[3], m[6], m[1], m[4], m[7]]
}

fn orthonormality_residual(m: &Mat3) -> f64 {
    let mut max = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let mut dot = 0.0;
            for k in 0..3 {
                dot += m[k * 3 + i] * m[k * 3 + j];
            }
            let expect = if i == j { 1.0 } else { 0.0 };
            max = max.max((dot - expect).abs());
        }
    }
    max
}

/// Shepperd's method; input must be a rotation matrix to 1e-6.
pub fn matrix_to_quaternion(m: &Mat3) -> Result<Quaternion> {
    let residual = orthonormality_residual(m);
    if residual > 1e-6 {
        return Err(KinError::NotARotation(residual));
    }
    let trace = m[0] + m[4] + m[8];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Quaternion::new(
            0.25 * s,
            (m[7] - m[5]) / s,
            (m[2] - m[6]) / s,
            (m[3] - m[1]) / s,
        )
    } else if m[0] > m[4] && m[0] > m[8] {
        let s = (1.0 + m[0] - m[4] - m[8]).sqrt() * 2.0;
        Quaternion::new(
            (m[7] - m[5]) / s,
            0.25 * s,
            (m[1] + m[3]) / s,
            (m[2] + m[6]) / s,
        )
    } else if m[4] > m[8] {
        let s = (1.0 + m[4] - m[0] - m[8]).sqrt() * 2.0;
        Quaternion::new(
            (m[2] - m[6]) / s,
            (m[1] + m[3]) / s,
            0.25 * s,
            (m[5] + m[7]) / s,
        )
    } else {
        let s = (1.0 + m[8] - m[0] - m[4]).sqrt() * 2.0;
        Quaternion::new(
            (m[3] - m[1]) / s,
            (m[2] + m[6]) / s,
            (m[5] + m[7]) / s,
            0.25 * s,
        )
    };
    Ok(q.normalized())
}

pub fn quaternion_to_matrix(q: &Quaternion) -> Mat3 {
    let q = q.normalized();
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

pub fn rot6d_to_quaternion(r: &[f64]) -> Result<Quaternion> {
    matrix_to_quaternion(&rot6d_to_matrix(r)?)
}

pub fn quaternion_to_rot6d(q: &Quaternion) -> [f64; 6] {
    matrix_to_rot6d(&quaternion_to_matrix(q))
}

// ── slerp ────────────────────────────────────────────────────────────

/// Constant-angular-velocity interpolation between unit quaternions.
/// `q1` is hemisphere-aligned to `q0` first; tiny angles fall back to a
/// normalized lerp.
pub fn slerp(q0: &Quaternion, q1: &Quaternion, t: f64) -> Quaternion {
    let q1 = q1.hemisphere_aligned(q0);
    let dot = q0.dot(&q1).clamp(-1.0, 1.0);
    let theta = dot.acos();
    if theta < 1e-6 {
        let lerped = Quaternion::new(
            q0.w + t * (q1.w - q0.w),
            q0.x + t * (q1.x - q0.x),
            q0.y + t * (q1.y - q0.y),
            q0.z + t * (q1.z - q0.z),
        );
        return lerped.normalized();
    }
    let sin_theta = theta.sin();
    let a = ((1.0 - t) * theta).sin() / sin_theta;
    let b = (t * theta).sin() / sin_theta;
    Quaternion::new(
        a * q0.w + b * q1.w,
        a * q0.x + b * q1.x,
        a * q0.y + b * q1.y,
        a * q0.z + b * q1.z,
    )
    .normalized()
}

// ── forward kinematics ───────────────────────────────────────────────

/// Chain accumulation of local joint rotations into global positions.
///
/// `rotations[t][j]` is the local rotation of joint `j` at frame `t`;
/// `root_translation[t]` is the root's world position. Returns `T*J*3`
/// flattened positions.
pub fn forward_kinematics(
    topology: &SkeletonTopology,
    rotations: &[Vec<Quaternion>],
    root_translation: &[[f64; 3]],
) -> Result<Vec<f64>> {
    let j_count = topology.joint_count();
    let frames = rotations.len();
    if root_translation.len() != frames {
        return Err(KinError::Motion(format!(
            "{} rotation frames but {} root translations",
            frames,
            root_translation.len()
        )));
    }
    let mut positions = vec![0.0; frames * j_count * 3];
    let mut global_rot = vec![Quaternion::IDENTITY; j_count];
    let mut global_pos = vec![[0.0f64; 3]; j_count];
    for (t, frame_rots) in rotations.iter().enumerate() {
        if frame_rots.len() != j_count {
            return Err(KinError::Motion(format!(
                "frame {} has {} rotations for {} joints",
                t,
                frame_rots.len(),
                j_count
            )));
        }
        for (j, joint) in topology.joints.iter().enumerate() {
            match joint.parent {
                None => {
                    global_rot[j] = frame_rots[j];
                    // root rest offset plus per-frame translation, per BVH convention
                    global_pos[j] = [
                        joint.offset[0] + root_translation[t][0],
                        joint.offset[1] + root_translation[t][1],
                        joint.offset[2] + root_translation[t][2],
                    ];
                }
                Some(p) => {
                    let parent_rot = global_rot[p];
                    let off = parent_rot.rotate_vector(joint.offset);
                    global_pos[j] = [
                        global_pos[p][0] + off[0],
                        global_pos[p][1] + off[1],
                        global_pos[p][2] + off[2],
                    ];
                    global_rot[j] = parent_rot.multiply(&frame_rots[j]);
                }
            }
            let base = (t * j_count + j) * 3;
            positions[base..base + 3].copy_from_slice(&global_pos[j]);
        }
    }
    Ok(positions)
}

/// FK over an ortho-6D motion; the root travels along `root_translation`
/// (zeros if `None`). Returns a position-representation motion with the
/// same visibility.
pub fn fk_positions(
    topology: &SkeletonTopology,
    motion: &MotionTensor,
    root_translation: Option<&[[f64; 3]]>,
) -> Result<MotionTensor> {
    if motion.repr != Repr::Ortho6d {
        return Err(KinError::Motion(
            "forward kinematics needs an ortho-6D motion".into(),
        ));
    }
    if motion.joints() != topology.joint_count() {
        return Err(KinError::Motion(format!(
            "motion has {} joints, topology {}",
            motion.joints(),
            topology.joint_count()
        )));
    }
    let frames = motion.frames();
    let zeros;
    let root = match root_translation {
        Some(r) => r,
        None => {
            zeros = vec![[0.0; 3]; frames];
            &zeros
        }
    };
    let mut rotations = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut row = Vec::with_capacity(motion.joints());
        for j in 0..motion.joints() {
            row.push(rot6d_to_quaternion(motion.joint_vector(t, j))?);
        }
        rotations.push(row);
    }
    let positions = forward_kinematics(topology, &rotations, root)?;
    let mut out = MotionTensor::new(
        positions,
        frames,
        motion.joints(),
        Repr::Position3,
        motion.frame_rate,
    )?;
    out.set_visibility(motion.visibility().clone())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_quat(r: &mut StdRng) -> Quaternion {
        Quaternion::new(
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
        )
        .normalized()
    }

    #[test]
    fn rot6d_identity() {
        let m = rot6d_to_matrix(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        for (i, v) in m.iter().enumerate() {
            let expect = if i % 4 == 0 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn rot6d_scale_invariant() {
        let m = rot6d_to_matrix(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        let id = rot6d_to_matrix(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        for (a, b) in m.iter().zip(&id) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rot6d_gram_schmidt_orthonormality() {
        let m = rot6d_to_matrix(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(orthonormality_residual(&m) < 1e-12);
        let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6]);
        assert!((det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rot6d_degenerate_inputs_error() {
        assert!(rot6d_to_matrix(&[0.0; 6]).is_err());
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn quaternion_matrix_round_trip() {
        assert_eq!(
            matrix_to_quaternion(&quaternion_to_matrix(&Quaternion::IDENTITY)).unwrap(),
            Quaternion::IDENTITY
        );
        // 180 degrees about z
        let q = Quaternion::new(0.0, 0.0, 0.0, 1.0);
        let back = matrix_to_quaternion(&quaternion_to_matrix(&q)).unwrap();
        let aligned = back.hemisphere_aligned(&q);
        assert!((aligned.z - 1.0).abs() < 1e-12 && aligned.w.abs() < 1e-12);

        let mut r = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let q = random_quat(&mut r);
            let back = matrix_to_quaternion(&quaternion_to_matrix(&q)).unwrap();
            let aligned = back.hemisphere_aligned(&q);
            let dist = ((aligned.w - q.w).powi(2)
                + (aligned.x - q.x).powi(2)
                + (aligned.y - q.y).powi(2)
                + (aligned.z - q.z).powi(2))
            .sqrt();
            assert!(dist < 1e-9, "round trip distance {dist}");
        }
    }

    #[test]
    fn matrix_to_quaternion_rejects_non_rotation() {
        let m = [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(matches!(
            matrix_to_quaternion(&m),
            Err(KinError::NotARotation(_))
        ));
    }

    #[test]
    fn slerp_endpoints_and_fixed_point() {
        let mut r = StdRng::seed_from_u64(6);
        let q = random_quat(&mut r);
        for &t in &[0.0, 0.25, 0.5, 1.0] {
            let s = slerp(&q, &q, t);
            assert!(q.dot(&s).abs() > 1.0 - 1e-12);
        }
    }

    #[test]
    fn slerp_geodesic_midpoint() {
        let q0 = Quaternion::IDENTITY;
        let q1 = Quaternion::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::PI);
        let mid = slerp(&q0, &q1, 0.5);
        let expect = Quaternion::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        assert!(mid.dot(&expect).abs() > 1.0 - 1e-12);
    }

    #[test]
    fn slerp_constant_angular_velocity() {
        let mut r = StdRng::seed_from_u64(7);
        for _ in 0..30 {
            let q0 = random_quat(&mut r);
            let q1 = random_quat(&mut r);
            let total = q0.angle_to(&q1);
            for &t in &[0.2, 0.5, 0.8] {
                let s = slerp(&q0, &q1, t);
                assert!(
                    (q0.angle_to(&s) - t * total).abs() < 1e-9,
                    "angle mismatch at t={t}"
                );
            }
        }
    }

    #[test]
    fn fk_identity_rotations_accumulate_offsets() {
        let topo = SkeletonTopology::default22();
        let rots = vec![vec![Quaternion::IDENTITY; topo.joint_count()]];
        let pos = forward_kinematics(&topo, &rots, &[[0.0, 0.0, 0.0]]).unwrap();
        // LeftLeg = root + LeftUpLeg offset + LeftLeg offset
        let i = topo.joint_index("LeftLeg").unwrap();
        assert_eq!(&pos[i * 3..i * 3 + 3], &[100.0, 500.0, 0.0]);
        // Head = root + Spine..Head chain
        let h = topo.joint_index("Head").unwrap();
        assert_eq!(&pos[h * 3..h * 3 + 3], &[0.0, 1530.0, 0.0]);
    }

    #[test]
    fn fk_two_joint_chain_rotated_root() {
        let topo = SkeletonTopology::new(
            "chain2",
            vec![
                Joint {
                    name: "root".into(),
                    parent: None,
                    offset: [0.0, 0.0, 0.0],
                },
                Joint {
                    name: "child".into(),
                    parent: Some(0),
                    offset: [1.0, 0.0, 0.0],
                },
            ],
        )
        .unwrap();
        let rot90z = Quaternion::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let rots = vec![vec![rot90z, Quaternion::IDENTITY]];
        let pos = forward_kinematics(&topo, &rots, &[[0.0, 0.0, 0.0]]).unwrap();
        assert!((pos[3] - 0.0).abs() < 1e-12);
        assert!((pos[4] - 1.0).abs() < 1e-12);
        assert!((pos[5] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn fk_matches_recursive_oracle() {
        // independent recursive evaluation on a random 5-joint chain
        fn oracle(
            topo: &SkeletonTopology,
            rots: &[Quaternion],
            j: usize,
            root: [f64; 3],
        ) -> ([f64; 3], Quaternion) {
            match topo.joints[j].parent {
                None => {
                    let off = topo.joints[j].offset;
                    ([root[0] + off[0], root[1] + off[1], root[2] + off[2]], rots[j])
                }
                Some(p) => {
                    let (ppos, prot) = oracle(topo, rots, p, root);
                    let off = prot.rotate_vector(topo.joints[j].offset);
                    (
                        [ppos[0] + off[0], ppos[1] + off[1], ppos[2] + off[2]],
                        prot.multiply(&rots[j]),
                    )
                }
            }
        }
        let mut r = StdRng::seed_from_u64(9);
        let joints: Vec<Joint> = (0..5)
            .map(|i| Joint {
                name: format!("j{i}"),
                parent: if i == 0 { None } else { Some(i - 1) },
                offset: [
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                ],
            })
            .collect();
        let topo = SkeletonTopology::new("chain5", joints).unwrap();
        let rots: Vec<Quaternion> = (0..5).map(|_| random_quat(&mut r)).collect();
        let root = [0.3, -0.7, 1.1];
        let pos = forward_kinematics(&topo, &[rots.clone()], &[root]).unwrap();
        for j in 0..5 {
            let (expect, _) = oracle(&topo, &rots, j, root);
            for c in 0..3 {
                assert!(
                    (pos[j * 3 + c] - expect[c]).abs() < 1e-9,
                    "joint {j} channel {c}"
                );
            }
        }
    }

    #[test]
    fn fk_root_rotation_equivariance() {
        let topo = SkeletonTopology::default22();
        let mut r = StdRng::seed_from_u64(10);
        let mut rots = vec![Quaternion::IDENTITY; topo.joint_count()];
        for q in rots.iter_mut().skip(1) {
            *q = random_quat(&mut r);
        }
        let base = forward_kinematics(&topo, &[rots.clone()], &[[0.0; 3]]).unwrap();
        let extra = random_quat(&mut r);
        let mut rotated = rots.clone();
        rotated[0] = extra.multiply(&rots[0]);
        let turned = forward_kinematics(&topo, &[rotated], &[[0.0; 3]]).unwrap();
        let root = [base[0], base[1], base[2]];
        for j in 0..topo.joint_count() {
            // every joint rotates rigidly about the root position
            let rel = [base[j * 3] - root[0], base[j * 3 + 1] - root[1], base[j * 3 + 2] - root[2]];
            let got = extra.rotate_vector(rel);
            for c in 0..3 {
                assert!((turned[j * 3 + c] - (root[c] + got[c])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn topology_rejects_bad_parent_order() {
        let joints = vec![
            Joint {
                name: "a".into(),
                parent: Some(1),
                offset: [0.0; 3],
            },
            Joint {
                name: "b".into(),
                parent: None,
                offset: [0.0; 3],
            },
        ];
        assert!(SkeletonTopology::new("bad", joints).is_err());
    }
}
