use super::*;
use crate::kinematics::Quaternion;
use crate::masking::gen_occlusion_mask;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::path::Path;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

// ── motion files ─────────────────────────────────────────────────────

#[test]
fn motion_file_round_trip_is_bit_exact() {
    let mut rng = StdRng::seed_from_u64(1);
    let values: Vec<f64> = (0..6 * 4 * 3)
        .map(|_| rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-8..8)))
        .collect();
    let mut motion = MotionTensor::new(values, 6, 4, Repr::Position3, 30.0).unwrap();
    let vis = gen_occlusion_mask(
        6,
        4,
        0.5,
        4,
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap();
    motion.set_visibility(vis).unwrap();
    let doc = MotionFile {
        topology_name: "default22".into(),
        motion,
        root_translation: Some(vec![[0.1, -2.0, 3.5]; 6]),
    };

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("roundtrip.motion.txt");
    write_motion_file(&path, &doc).unwrap();
    let back = read_motion_file(&path).unwrap();
    assert_eq!(back.topology_name, doc.topology_name);
    assert_eq!(back.motion.repr, doc.motion.repr);
    assert_eq!(back.motion.frame_rate, doc.motion.frame_rate);
    assert!(back
        .motion
        .values()
        .iter()
        .zip(doc.motion.values())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(back.motion.visibility(), doc.motion.visibility());
    assert_eq!(back.root_translation, doc.root_translation);
}

#[test]
fn motion_file_errors_carry_line_numbers() {
    let path = Path::new("test.motion.txt");
    let bad_header = "motionfile v2\n";
    assert!(parse_motion_file(path, bad_header).is_err());

    let bad_value = "motionfile v1\ntopology t\nframe_rate 30\nrepr position3\ndims 1 1 3\nframe 0: 1.0 oops 3.0\n";
    match parse_motion_file(path, bad_value) {
        Err(DataError::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("expected parse error, got {other:?}"),
    }

    let wrong_count = "motionfile v1\ntopology t\nframe_rate 30\nrepr position3\ndims 2 1 3\nframe 0: 1 2 3\n";
    assert!(matches!(
        parse_motion_file(path, wrong_count),
        Err(DataError::Contract(_))
    ));

    let wrong_width = "motionfile v1\ntopology t\nframe_rate 30\nrepr position3\ndims 1 2 3\nframe 0: 1 2 3\n";
    assert!(parse_motion_file(path, wrong_width).is_err());
}

#[test]
fn mask_file_round_trip() {
    let vis = gen_occlusion_mask(
        5,
        3,
        0.4,
        7,
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(3),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mask.txt");
    write_mask_file(&path, &vis).unwrap();
    assert_eq!(read_mask_file(&path).unwrap(), vis);
}

// ── synthetic data ───────────────────────────────────────────────────

#[test]
fn synthetic_counts_and_shapes() {
    let params = SyntheticGaitParams {
        sequence_count: 10,
        test_count: 2,
        frames: 64,
        ..SyntheticGaitParams::default()
    };
    let motions = generate_motions(&params, 10, 1).unwrap();
    assert_eq!(motions.len(), 10);
    for m in &motions {
        assert_eq!(m.frames(), 64);
        assert_eq!(m.joints(), 22);
        assert_eq!(m.repr, Repr::Position3);
        assert!(m.values().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn synthetic_is_deterministic_per_seed() {
    let params = SyntheticGaitParams {
        sequence_count: 3,
        test_count: 1,
        frames: 16,
        noise_std: 0.5,
        ..SyntheticGaitParams::default()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    write_dataset(&params, dir_a.path()).unwrap();
    write_dataset(&params, dir_b.path()).unwrap();
    for split in ["train", "test"] {
        let a = std::fs::read(dir_a.path().join(split).join("seq_0000.motion.txt")).unwrap();
        let b = std::fs::read(dir_b.path().join(split).join("seq_0000.motion.txt")).unwrap();
        assert_eq!(a, b, "split {split} not byte-identical");
    }
    // different streams differ
    let train = generate_motions(&params, 1, 1).unwrap();
    let test = generate_motions(&params, 1, 2).unwrap();
    assert_ne!(train[0].values(), test[0].values());
}

#[test]
fn synthetic_dominant_frequency_matches_configuration() {
    // frames=64 at 16 fps with a 1 Hz gait puts the leg swing in DFT bin 4
    let params = SyntheticGaitParams {
        sequence_count: 1,
        test_count: 1,
        frames: 64,
        frame_rate: 16.0,
        base_frequency_hz: 1.0,
        noise_std: 0.0,
        ..SyntheticGaitParams::default()
    };
    let motions = generate_motions(&params, 3, 1).unwrap();
    let topo = crate::kinematics::SkeletonTopology::default22();
    let expected_bin = (params.base_frequency_hz * params.frames as f64 / params.frame_rate)
        .round() as usize;
    for motion in &motions {
        for joint_name in ["LeftFoot", "RightHand"] {
            let j = topo.joint_index(joint_name).unwrap();
            // root-relative forward coordinate isolates the limb swing
            // (a joint's position reflects its ancestors' rotations)
            let signal: Vec<f64> = (0..motion.frames())
                .map(|t| motion.value(t, j, 2) - motion.value(t, 0, 2))
                .collect();
            let t = signal.len();
            let mut best = (0usize, 0.0f64);
            for k in 1..t / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in signal.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / t as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                let p = re * re + im * im;
                if p > best.1 {
                    best = (k, p);
                }
            }
            assert_eq!(best.0, expected_bin, "joint {joint_name}");
        }
    }
}

#[test]
fn load_motion_dir_sorted_and_validated() {
    let params = SyntheticGaitParams {
        sequence_count: 3,
        test_count: 1,
        frames: 8,
        ..SyntheticGaitParams::default()
    };
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&params, dir.path()).unwrap();
    let motions = load_motion_dir(&dir.path().join("train")).unwrap();
    assert_eq!(motions.len(), 3);
    assert!(load_motion_dir(&dir.path().join("missing")).is_err());
}

// ── BVH ──────────────────────────────────────────────────────────────

#[test]
fn bvh_fixture_parses_to_known_topology() {
    let parsed = parse_bvh(&fixture("sample.bvh")).unwrap();
    assert_eq!(parsed.topology.joint_count(), 3);
    let names: Vec<&str> = parsed
        .topology
        .joints
        .iter()
        .map(|j| j.name.as_str())
        .collect();
    assert_eq!(names, vec!["Hips", "Spine", "Head"]);
    assert_eq!(parsed.topology.joints[1].offset, [0.0, 10.0, 0.0]);
    assert_eq!(parsed.topology.joints[2].parent, Some(1));
    assert_eq!(parsed.rotations.frames(), 2);
    assert!((parsed.frame_time - 0.033333).abs() < 1e-9);
    assert_eq!(parsed.root_translation[1], [1.5, 95.5, 0.2]);

    // frame 1: root rotated 90 about z, spine 45 about y, head 10 about z
    let q_root = crate::kinematics::rot6d_to_quaternion(parsed.rotations.joint_vector(1, 0)).unwrap();
    let expect = Quaternion::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
    assert!(q_root.dot(&expect).abs() > 1.0 - 1e-9);
    let q_spine = crate::kinematics::rot6d_to_quaternion(parsed.rotations.joint_vector(1, 1)).unwrap();
    let expect = Quaternion::from_axis_angle([0.0, 1.0, 0.0], std::f64::consts::FRAC_PI_4);
    assert!(q_spine.dot(&expect).abs() > 1.0 - 1e-9);
}

#[test]
fn bvh_channel_order_is_honored() {
    // ZXY vs XYZ on the same angles give different rotations
    let template = |order: &str| {
        format!(
            "HIERARCHY\nROOT A\n{{\nOFFSET 0 0 0\nCHANNELS 3 {order}\n}}\nMOTION\nFrames: 1\nFrame Time: 0.04\n30.0 40.0 0.0\n"
        )
    };
    let p = Path::new("inline.bvh");
    let zxy = parse_bvh_str(p, &template("Zrotation Xrotation Yrotation")).unwrap();
    let xzy = parse_bvh_str(p, &template("Xrotation Zrotation Yrotation")).unwrap();
    let qa = crate::kinematics::rot6d_to_quaternion(zxy.rotations.joint_vector(0, 0)).unwrap();
    let qb = crate::kinematics::rot6d_to_quaternion(xzy.rotations.joint_vector(0, 0)).unwrap();
    // compose manually in the declared order (values are positional: the
    // first listed channel reads 30, the second 40)
    let qz30 = Quaternion::from_axis_angle([0.0, 0.0, 1.0], 30f64.to_radians());
    let qx40 = Quaternion::from_axis_angle([1.0, 0.0, 0.0], 40f64.to_radians());
    let qx30 = Quaternion::from_axis_angle([1.0, 0.0, 0.0], 30f64.to_radians());
    let qz40 = Quaternion::from_axis_angle([0.0, 0.0, 1.0], 40f64.to_radians());
    assert!(qa.dot(&qz30.multiply(&qx40)).abs() > 1.0 - 1e-9);
    assert!(qb.dot(&qx30.multiply(&qz40)).abs() > 1.0 - 1e-9);
    assert!(qa.dot(&qb).abs() < 1.0 - 1e-6);
}

#[test]
fn bvh_frame_count_mismatch_names_line() {
    let text = "HIERARCHY\nROOT A\n{\nOFFSET 0 0 0\nCHANNELS 3 Zrotation Yrotation Xrotation\n}\nMOTION\nFrames: 5\nFrame Time: 0.04\n0 0 0\n0 0 0\n0 0 0\n0 0 0\n";
    match parse_bvh_str(Path::new("inline.bvh"), text) {
        Err(DataError::Parse { line, message, .. }) => {
            assert!(message.contains("Frames: 5"), "{message}");
            assert!(line >= 13, "line {line}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn bvh_rejects_unknown_channel_and_unbalanced_braces() {
    let unknown = "HIERARCHY\nROOT A\n{\nOFFSET 0 0 0\nCHANNELS 3 Wrotation Yrotation Xrotation\n}\nMOTION\nFrames: 0\nFrame Time: 0.04\n";
    match parse_bvh_str(Path::new("inline.bvh"), unknown) {
        Err(DataError::Parse { line, message, .. }) => {
            assert!(message.contains("Wrotation"));
            assert_eq!(line, 5);
        }
        other => panic!("{other:?}"),
    }

    let unbalanced = "HIERARCHY\nROOT A\n{\nOFFSET 0 0 0\nCHANNELS 3 Zrotation Yrotation Xrotation\nMOTION\nFrames: 0\nFrame Time: 0.04\n";
    assert!(parse_bvh_str(Path::new("inline.bvh"), unbalanced).is_err());

    let non_root_position = "HIERARCHY\nROOT A\n{\nOFFSET 0 0 0\nCHANNELS 3 Zrotation Yrotation Xrotation\nJOINT B\n{\nOFFSET 1 0 0\nCHANNELS 3 Xposition Yrotation Xrotation\n}\n}\nMOTION\nFrames: 0\nFrame Time: 0.04\n";
    assert!(parse_bvh_str(Path::new("inline.bvh"), non_root_position).is_err());
}

#[test]
fn bvh_to_motion_file_round_trip() {
    let parsed = parse_bvh(&fixture("sample.bvh")).unwrap();
    let doc = MotionFile {
        topology_name: parsed.topology.name.clone(),
        motion: parsed.rotations.clone(),
        root_translation: Some(parsed.root_translation.clone()),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("converted.motion.txt");
    write_motion_file(&path, &doc).unwrap();
    let back = read_motion_file(&path).unwrap();
    for (a, b) in back.motion.values().iter().zip(parsed.rotations.values()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert_eq!(back.root_translation.unwrap(), parsed.root_translation);
}
