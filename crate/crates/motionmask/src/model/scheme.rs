//! Body-part patch schemes: how a pose's joints are grouped into the L
//! patches that become tokens.

use crate::kinematics::SkeletonTopology;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Patch granularity strategies, from one-joint-per-patch down to the whole
/// body as a single patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchVariant {
    /// One patch per joint (L = J).
    Joints,
    /// Whole pose as a single patch (L = 1); disables pose decomposition.
    WholeBody,
    /// Trunk plus four limbs (L = 5).
    FiveParts,
    /// Like `FiveParts` but shoulder joints belong to the trunk (L = 5).
    ClavicleInTrunk,
    /// Like `FiveParts` but the hip joint is its own patch (L = 6).
    HipsSeparate,
}

impl PatchVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PatchVariant::Joints => "joints",
            PatchVariant::WholeBody => "whole_body",
            PatchVariant::FiveParts => "five_parts",
            PatchVariant::ClavicleInTrunk => "clavicle_in_trunk",
            PatchVariant::HipsSeparate => "hips_separate",
        }
    }
}

/// Assignment of every joint to exactly one patch, in token order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchScheme {
    name: String,
    joint_count: usize,
    groups: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Limb {
    Trunk,
    LeftLeg,
    RightLeg,
    LeftArm,
    RightArm,
}

fn classify(name: &str) -> Option<(Limb, bool)> {
    // (limb, is_shoulder) by name keywords; covers LaFAN1-style skeletons
    let lower = name.to_lowercase();
    let left = lower.contains("left") || lower.starts_with("l_") || lower.starts_with("l.");
    let legish = ["leg", "foot", "toe", "knee", "ankle"]
        .iter()
        .any(|k| lower.contains(k));
    let shoulder = lower.contains("shoulder") || lower.contains("clavicle");
    let armish = shoulder
        || ["arm", "hand", "elbow", "wrist"]
            .iter()
            .any(|k| lower.contains(k));
    let trunkish = ["hip", "spine", "neck", "head", "chest", "pelvis", "root"]
        .iter()
        .any(|k| lower.contains(k));
    if legish {
        Some((if left { Limb::LeftLeg } else { Limb::RightLeg }, false))
    } else if armish {
        Some((if left { Limb::LeftArm } else { Limb::RightArm }, shoulder))
    } else if trunkish {
        Some((Limb::Trunk, false))
    } else {
        None
    }
}

impl PatchScheme {
    /// Build a scheme for `topology` from a named variant. Limb-based
    /// variants classify joints by name and fail on joints they cannot place.
    pub fn from_variant(
        variant: PatchVariant,
        topology: &SkeletonTopology,
    ) -> Result<Self, ModelError> {
        let j = topology.joint_count();
        let groups = match variant {
            PatchVariant::Joints => (0..j).map(|i| vec![i]).collect(),
            PatchVariant::WholeBody => vec![(0..j).collect()],
            PatchVariant::FiveParts | PatchVariant::ClavicleInTrunk | PatchVariant::HipsSeparate => {
                let mut trunk = Vec::new();
                let mut hips = Vec::new();
                let mut limbs = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
                for (i, joint) in topology.joints.iter().enumerate() {
                    let (limb, is_shoulder) = classify(&joint.name).ok_or_else(|| {
                        ModelError::Config(format!(
                            "cannot assign joint '{}' to a body part; use the joints/whole_body \
                             variant or an explicit patch list",
                            joint.name
                        ))
                    })?;
                    let slot = match limb {
                        Limb::Trunk => {
                            if variant == PatchVariant::HipsSeparate
                                && joint.parent.is_none()
                            {
                                hips.push(i);
                            } else {
                                trunk.push(i);
                            }
                            continue;
                        }
                        Limb::LeftLeg => 0,
                        Limb::RightLeg => 1,
                        Limb::LeftArm => 2,
                        Limb::RightArm => 3,
                    };
                    if is_shoulder && variant == PatchVariant::ClavicleInTrunk {
                        trunk.push(i);
                    } else {
                        limbs[slot].push(i);
                    }
                }
                let mut groups = Vec::new();
                if !hips.is_empty() {
                    groups.push(hips);
                }
                groups.push(trunk);
                groups.extend(limbs);
                groups
            }
        };
        Self::custom(variant.as_str(), j, groups)
    }

    /// Explicit joint groups; must partition `[0, joint_count)`.
    pub fn custom(
        name: impl Into<String>,
        joint_count: usize,
        mut groups: Vec<Vec<usize>>,
    ) -> Result<Self, ModelError> {
        groups.retain(|g| !g.is_empty());
        for g in &mut groups {
            g.sort_unstable();
        }
        let mut seen = vec![false; joint_count];
        for g in &groups {
            for &i in g {
                if i >= joint_count {
                    return Err(ModelError::Config(format!(
                        "patch joint index {} out of range for {} joints",
                        i, joint_count
                    )));
                }
                if seen[i] {
                    return Err(ModelError::Config(format!(
                        "joint {} appears in more than one patch",
                        i
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ModelError::Config(format!(
                "joint {} is not covered by any patch",
                missing
            )));
        }
        if groups.is_empty() {
            return Err(ModelError::Config("patch scheme has no groups".into()));
        }
        Ok(PatchScheme {
            name: name.into(),
            joint_count,
            groups,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of patches L.
    pub fn patch_count(&self) -> usize {
        self.groups.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    /// Joint indices of patch `l`, ascending.
    pub fn group(&self, l: usize) -> &[usize] {
        &self.groups[l]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Joints per patch, n_l.
    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }

    /// Patch index of each joint.
    pub fn joint_to_patch(&self) -> Vec<usize> {
        let mut map = vec![0usize; self.joint_count];
        for (l, g) in self.groups.iter().enumerate() {
            for &j in g {
                map[j] = l;
            }
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_parts_on_default22() {
        let topo = SkeletonTopology::default22();
        let s = PatchScheme::from_variant(PatchVariant::FiveParts, &topo).unwrap();
        assert_eq!(s.patch_count(), 5);
        assert_eq!(s.sizes(), vec![6, 4, 4, 4, 4]);
        // trunk first
        assert!(s.group(0).contains(&topo.joint_index("Hips").unwrap()));
        assert!(s.group(0).contains(&topo.joint_index("Head").unwrap()));
    }

    #[test]
    fn clavicle_variant_moves_shoulders_into_trunk() {
        let topo = SkeletonTopology::default22();
        let s = PatchScheme::from_variant(PatchVariant::ClavicleInTrunk, &topo).unwrap();
        assert_eq!(s.patch_count(), 5);
        assert_eq!(s.sizes(), vec![8, 4, 4, 3, 3]);
        assert!(s.group(0).contains(&topo.joint_index("LeftShoulder").unwrap()));
    }

    #[test]
    fn hips_separate_has_six_patches() {
        let topo = SkeletonTopology::default22();
        let s = PatchScheme::from_variant(PatchVariant::HipsSeparate, &topo).unwrap();
        assert_eq!(s.patch_count(), 6);
        assert_eq!(s.sizes(), vec![1, 5, 4, 4, 4, 4]);
        assert_eq!(s.group(0), &[topo.joint_index("Hips").unwrap()]);
    }

    #[test]
    fn joints_and_whole_body_extremes() {
        let topo = SkeletonTopology::default22();
        let s1 = PatchScheme::from_variant(PatchVariant::Joints, &topo).unwrap();
        assert_eq!(s1.patch_count(), 22);
        let s2 = PatchScheme::from_variant(PatchVariant::WholeBody, &topo).unwrap();
        assert_eq!(s2.patch_count(), 1);
        assert_eq!(s2.sizes(), vec![22]);
    }

    #[test]
    fn custom_scheme_must_partition() {
        assert!(PatchScheme::custom("bad", 4, vec![vec![0, 1], vec![1, 2, 3]]).is_err());
        assert!(PatchScheme::custom("bad", 4, vec![vec![0, 1], vec![3]]).is_err());
        assert!(PatchScheme::custom("ok", 4, vec![vec![0, 1], vec![2, 3]]).is_ok());
    }
}
