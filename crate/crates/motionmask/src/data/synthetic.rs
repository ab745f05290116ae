//! Procedural gait sequences on the built-in 22-joint skeleton: per-joint
//! sinusoidal local rotations, a translating root, FK-resolved to positions.
//! A desk-scale stand-in for MOCAP corpora.

use super::{write_motion_file, DataError, MotionFile};
use crate::kinematics::{forward_kinematics, MotionTensor, Quaternion, Repr, SkeletonTopology};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticGaitParams {
    pub sequence_count: usize,
    pub test_count: usize,
    pub frames: usize,
    pub frame_rate: f64,
    /// Gait cycle frequency; torso/head sway runs at twice this.
    pub base_frequency_hz: f64,
    /// Peak leg swing in radians; other joints scale from it.
    pub amplitude_rad: f64,
    /// Forward root speed in topology units (mm) per second.
    pub root_speed: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticGaitParams {
    fn default() -> Self {
        SyntheticGaitParams {
            sequence_count: 200,
            test_count: 50,
            frames: 64,
            frame_rate: 32.0,
            base_frequency_hz: 1.0,
            amplitude_rad: 0.5,
            root_speed: 1200.0,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticGaitParams {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.base_frequency_hz <= 0.0 || self.frame_rate <= 0.0 {
            return Err(DataError::Contract(
                "frequencies and frame rate must be positive".into(),
            ));
        }
        if self.frames == 0 || self.sequence_count == 0 {
            return Err(DataError::Contract(
                "frames and sequence_count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Swing axis, frequency multiple, amplitude factor and phase offset of one
/// joint's local sinusoid.
struct JointWave {
    axis: [f64; 3],
    freq_mult: f64,
    amp: f64,
    phase: f64,
}

fn wave_for(name: &str) -> JointWave {
    const X: [f64; 3] = [1.0, 0.0, 0.0];
    const Y: [f64; 3] = [0.0, 1.0, 0.0];
    let half_pi = std::f64::consts::FRAC_PI_2;
    let left = name.starts_with("Left");
    let side = if left { 0.0 } else { std::f64::consts::PI };
    match name.trim_start_matches("Left").trim_start_matches("Right") {
        "UpLeg" => JointWave { axis: X, freq_mult: 1.0, amp: 1.0, phase: side },
        "Leg" => JointWave { axis: X, freq_mult: 1.0, amp: 0.7, phase: side - half_pi },
        "Foot" => JointWave { axis: X, freq_mult: 1.0, amp: 0.3, phase: side + half_pi },
        "Toe" => JointWave { axis: X, freq_mult: 1.0, amp: 0.0, phase: 0.0 },
        // arms counter-swing their own side's leg; the rest pose points the
        // arms along x, so a y-axis rotation swings the hands forward/back
        "Arm" => JointWave { axis: Y, freq_mult: 1.0, amp: 0.5, phase: side + std::f64::consts::PI },
        "ForeArm" => JointWave { axis: Y, freq_mult: 1.0, amp: 0.3, phase: side + std::f64::consts::PI - 0.6 },
        "Shoulder" | "Hand" => JointWave { axis: X, freq_mult: 1.0, amp: 0.0, phase: 0.0 },
        "Hips" => JointWave { axis: Y, freq_mult: 1.0, amp: 0.12, phase: 0.0 },
        "Spine" | "Spine1" | "Spine2" => JointWave { axis: Y, freq_mult: 2.0, amp: 0.08, phase: 0.0 },
        "Neck" | "Head" => JointWave { axis: Y, freq_mult: 2.0, amp: 0.05, phase: half_pi },
        _ => JointWave { axis: X, freq_mult: 1.0, amp: 0.0, phase: 0.0 },
    }
}

/// Deterministic batch of gait motions; `stream` separates splits drawn from
/// the same seed.
pub fn generate_motions(
    params: &SyntheticGaitParams,
    count: usize,
    stream: u64,
) -> Result<Vec<MotionTensor>, DataError> {
    params.validate()?;
    let topo = SkeletonTopology::default22();
    let waves: Vec<JointWave> = topo.joints.iter().map(|j| wave_for(&j.name)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let phase0: f64 = rng.gen_range(0.0..TAU);
        let amp_scale: f64 = rng.gen_range(0.7..1.3);
        let heading: f64 = rng.gen_range(0.0..TAU);
        let mut rotations = Vec::with_capacity(params.frames);
        let mut root = Vec::with_capacity(params.frames);
        for t in 0..params.frames {
            let time = t as f64 / params.frame_rate;
            let mut frame = Vec::with_capacity(topo.joint_count());
            for wave in &waves {
                let angle = amp_scale
                    * params.amplitude_rad
                    * wave.amp
                    * (TAU * params.base_frequency_hz * wave.freq_mult * time + phase0 + wave.phase)
                        .sin();
                frame.push(Quaternion::from_axis_angle(wave.axis, angle));
            }
            rotations.push(frame);
            let dist = params.root_speed * time;
            let bob = 30.0 * (TAU * 2.0 * params.base_frequency_hz * time + phase0).sin();
            root.push([heading.cos() * dist, bob, heading.sin() * dist]);
        }
        let mut positions = forward_kinematics(&topo, &rotations, &root)?;
        if params.noise_std > 0.0 {
            for v in positions.iter_mut() {
                // Box-Muller
                let u1: f64 = rng.gen::<f64>().max(1e-12);
                let u2: f64 = rng.gen();
                *v += params.noise_std * (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
            }
        }
        out.push(MotionTensor::new(
            positions,
            params.frames,
            topo.joint_count(),
            Repr::Position3,
            params.frame_rate,
        )?);
    }
    Ok(out)
}

/// Write `train/` and `test/` splits under `out_dir` with disjoint RNG
/// streams. Regenerating with the same params is byte-identical.
pub fn write_dataset(params: &SyntheticGaitParams, out_dir: &Path) -> Result<(), DataError> {
    let splits = [
        ("train", params.sequence_count, 1u64),
        ("test", params.test_count, 2u64),
    ];
    for (name, count, stream) in splits {
        let motions = generate_motions(params, count, stream)?;
        let dir = out_dir.join(name);
        for (i, motion) in motions.into_iter().enumerate() {
            let doc = MotionFile {
                topology_name: "default22".to_string(),
                motion,
                root_translation: None,
            };
            write_motion_file(&dir.join(format!("seq_{i:04}.motion.txt")), &doc)?;
        }
    }
    Ok(())
}
