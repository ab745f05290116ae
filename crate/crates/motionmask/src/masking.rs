//! Visibility-mask generators. Every synthesis task is a reconstruction
//! problem; these produce the `T x J` masks that define each task, the
//! token-level mask over patches, and the curriculum schedule for the
//! masking probability.
//!
//! Convention throughout: `true` = visible/observed, `false` = hidden and
//! to be reconstructed.

use crate::kinematics::Visibility;
use crate::model::PatchScheme;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask parameter error: {0}")]
    BadParams(String),
    #[error("patch scheme covers {scheme} joints but mask has {mask}")]
    SchemeMismatch { scheme: usize, mask: usize },
}

type Result<T> = std::result::Result<T, MaskError>;

/// Task description: which frames/joints are observed and which get hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSpec {
    /// Frames `[0, observed)` visible, the rest hidden.
    Forecast { frames: usize, observed: usize },
    /// First `past` and last `future` frames visible, middle hidden.
    Inbetween {
        past: usize,
        transition: usize,
        future: usize,
    },
    /// Past context visible; each later patch hidden with `probability`.
    Completion {
        frames: usize,
        observed: usize,
        probability: f64,
    },
    /// Joints of observed frames hidden with `probability`; later frames
    /// fully hidden (forecasting with occluded input).
    Occlusion {
        frames: usize,
        observed: usize,
        probability: f64,
    },
    /// Explicit per-frame rows of joint visibility flags.
    Custom { rows: Vec<Vec<bool>> },
}

impl MaskSpec {
    /// Window length this spec describes.
    pub fn frames(&self) -> usize {
        match self {
            MaskSpec::Forecast { frames, .. } => *frames,
            MaskSpec::Inbetween {
                past,
                transition,
                future,
            } => past + transition + future,
            MaskSpec::Completion { frames, .. } => *frames,
            MaskSpec::Occlusion { frames, .. } => *frames,
            MaskSpec::Custom { rows } => rows.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MaskSpec::Forecast { .. } => "forecast",
            MaskSpec::Inbetween { .. } => "inbetween",
            MaskSpec::Completion { .. } => "completion",
            MaskSpec::Occlusion { .. } => "occlusion",
            MaskSpec::Custom { .. } => "custom",
        }
    }

    /// Probability-bearing specs get `p` swapped in; others are unchanged.
    pub fn with_probability(&self, p: f64) -> MaskSpec {
        let mut spec = self.clone();
        match &mut spec {
            MaskSpec::Completion { probability, .. } => *probability = p,
            MaskSpec::Occlusion { probability, .. } => *probability = p,
            _ => {}
        }
        spec
    }

    /// Realize the spec as a `T x J` visibility mask. Pure in `(self, seed)`:
    /// the RNG is created here and never shared.
    pub fn generate(&self, joints: usize, scheme: &PatchScheme, seed: u64) -> Result<Visibility> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match *self {
            MaskSpec::Forecast { frames, observed } => gen_forecast_mask(frames, observed, joints),
            MaskSpec::Inbetween {
                past,
                transition,
                future,
            } => gen_inbetween_mask(past, transition, future, joints),
            MaskSpec::Completion {
                frames,
                observed,
                probability,
            } => gen_completion_mask(frames, observed, probability, joints, scheme, &mut rng),
            MaskSpec::Occlusion {
                frames,
                observed,
                probability,
            } => gen_occlusion_mask(frames, observed, probability, joints, &mut rng),
            MaskSpec::Custom { ref rows } => {
                let frames = rows.len();
                let mut flags = Vec::with_capacity(frames * joints);
                for (t, row) in rows.iter().enumerate() {
                    if row.len() != joints {
                        return Err(MaskError::BadParams(format!(
                            "custom mask row {} has {} flags for {} joints",
                            t,
                            row.len(),
                            joints
                        )));
                    }
                    flags.extend_from_slice(row);
                }
                Visibility::from_flags(frames, joints, flags)
                    .map_err(|e| MaskError::BadParams(e.to_string()))
            }
        }
    }
}

/// Frames `[0, observed)` fully visible, `[observed, frames)` fully hidden.
pub fn gen_forecast_mask(frames: usize, observed: usize, joints: usize) -> Result<Visibility> {
    if observed == 0 || observed >= frames {
        return Err(MaskError::BadParams(format!(
            "forecast needs 1 <= observed < frames, got observed={} frames={}",
            observed, frames
        )));
    }
    let mut vis = Visibility::all_visible(frames, joints);
    for t in observed..frames {
        for j in 0..joints {
            vis.set(t, j, false);
        }
    }
    Ok(vis)
}

/// First `past` and last `future` frames visible, the transition hidden.
/// `future` may be zero, which degenerates to a forecast mask.
pub fn gen_inbetween_mask(
    past: usize,
    transition: usize,
    future: usize,
    joints: usize,
) -> Result<Visibility> {
    if past == 0 || transition == 0 {
        return Err(MaskError::BadParams(format!(
            "inbetween needs past >= 1 and transition >= 1, got past={} transition={}",
            past, transition
        )));
    }
    let frames = past + transition + future;
    let mut vis = Visibility::all_visible(frames, joints);
    for t in past..past + transition {
        for j in 0..joints {
            vis.set(t, j, false);
        }
    }
    Ok(vis)
}

/// Past context stays visible; each patch of each later frame is hidden
/// independently with probability `p`.
pub fn gen_completion_mask(
    frames: usize,
    observed: usize,
    p: f64,
    joints: usize,
    scheme: &PatchScheme,
    rng: &mut impl Rng,
) -> Result<Visibility> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MaskError::BadParams(format!("probability {} not in [0,1]", p)));
    }
    if observed >= frames {
        return Err(MaskError::BadParams(format!(
            "completion needs observed < frames, got observed={} frames={}",
            observed, frames
        )));
    }
    if scheme.joint_count() != joints {
        return Err(MaskError::SchemeMismatch {
            scheme: scheme.joint_count(),
            mask: joints,
        });
    }
    let mut vis = Visibility::all_visible(frames, joints);
    for t in observed..frames {
        for l in 0..scheme.patch_count() {
            if rng.gen::<f64>() < p {
                for &j in scheme.group(l) {
                    vis.set(t, j, false);
                }
            }
        }
    }
    Ok(vis)
}

/// Joints of frames `[0, observed)` are hidden independently with
/// probability `p`; frames `[observed, frames)` are fully hidden.
pub fn gen_occlusion_mask(
    frames: usize,
    observed: usize,
    p: f64,
    joints: usize,
    rng: &mut impl Rng,
) -> Result<Visibility> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MaskError::BadParams(format!("probability {} not in [0,1]", p)));
    }
    if observed == 0 || observed >= frames {
        return Err(MaskError::BadParams(format!(
            "occlusion needs 1 <= observed < frames, got observed={} frames={}",
            observed, frames
        )));
    }
    let mut vis = Visibility::all_visible(frames, joints);
    for t in 0..observed {
        for j in 0..joints {
            if rng.gen::<f64>() < p {
                vis.set(t, j, false);
            }
        }
    }
    for t in observed..frames {
        for j in 0..joints {
            vis.set(t, j, false);
        }
    }
    Ok(vis)
}

// ── token-level mask ─────────────────────────────────────────────────

/// Per-token visibility over the flattened `L*T` sequence, frame-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    frames: usize,
    patches: usize,
    flags: Vec<bool>,
}

impl TokenMask {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Token (frame, patch) in frame-major order.
    pub fn is_visible(&self, frame: usize, patch: usize) -> bool {
        self.flags[frame * self.patches + patch]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }
}

/// A token is visible iff every joint of its patch is visible at that frame.
pub fn patchify_mask(vis: &Visibility, scheme: &PatchScheme) -> Result<TokenMask> {
    if scheme.joint_count() != vis.joints() {
        return Err(MaskError::SchemeMismatch {
            scheme: scheme.joint_count(),
            mask: vis.joints(),
        });
    }
    let frames = vis.frames();
    let patches = scheme.patch_count();
    let mut flags = Vec::with_capacity(frames * patches);
    for t in 0..frames {
        for l in 0..patches {
            flags.push(scheme.group(l).iter().all(|&j| vis.is_visible(t, j)));
        }
    }
    Ok(TokenMask {
        frames,
        patches,
        flags,
    })
}

/// Linear curriculum for the masking probability, `p_start` at step 0 up to
/// `p_end` at `total_steps`.
pub fn curriculum_p(step: usize, total_steps: usize, p_start: f64, p_end: f64) -> f64 {
    if total_steps == 0 {
        return p_end;
    }
    let frac = (step as f64 / total_steps as f64).clamp(0.0, 1.0);
    p_start + (p_end - p_start) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::SkeletonTopology;
    use crate::model::PatchVariant;

    fn scheme() -> PatchScheme {
        PatchScheme::from_variant(PatchVariant::FiveParts, &SkeletonTopology::default22()).unwrap()
    }

    #[test]
    fn forecast_mask_layout() {
        let vis = gen_forecast_mask(10, 4, 3).unwrap();
        for t in 0..10 {
            for j in 0..3 {
                assert_eq!(vis.is_visible(t, j), t < 4);
            }
        }
        let vis = gen_forecast_mask(2, 1, 1).unwrap();
        assert!(vis.is_visible(0, 0) && !vis.is_visible(1, 0));
        assert!(gen_forecast_mask(5, 5, 3).is_err());
        assert!(gen_forecast_mask(5, 0, 3).is_err());
    }

    #[test]
    fn forecast_protocol_h36m_shape() {
        // 400ms past / 1000ms future at 25 fps
        let vis = gen_forecast_mask(35, 10, 22).unwrap();
        assert_eq!(vis.frames(), 35);
        assert!((0..10).all(|t| vis.is_visible(t, 0)));
        assert!((10..35).all(|t| !vis.is_visible(t, 0)));
    }

    #[test]
    fn inbetween_mask_layout() {
        let vis = gen_inbetween_mask(10, 5, 1, 2).unwrap();
        assert_eq!(vis.frames(), 16);
        for t in 0..16 {
            let expect = t < 10 || t >= 15;
            assert_eq!(vis.is_visible(t, 0), expect, "frame {t}");
        }
        let long = gen_inbetween_mask(10, 30, 1, 2).unwrap();
        assert_eq!(long.frames(), 41);
        assert!((10..40).all(|t| !long.is_visible(t, 1)));

        let single = gen_inbetween_mask(3, 1, 2, 2).unwrap();
        assert_eq!(single.count_hidden(), 2);
        assert!(gen_inbetween_mask(3, 0, 1, 2).is_err());
    }

    #[test]
    fn forecast_is_inbetween_special_case() {
        let f = gen_forecast_mask(12, 4, 5).unwrap();
        let i = gen_inbetween_mask(4, 8, 0, 5).unwrap();
        assert_eq!(f, i);
    }

    #[test]
    fn completion_mask_extremes() {
        let s = scheme();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all = gen_completion_mask(8, 2, 0.0, 22, &s, &mut rng).unwrap();
        assert_eq!(all.count_hidden(), 0);
        let none = gen_completion_mask(8, 2, 1.0, 22, &s, &mut rng).unwrap();
        let forecast = gen_forecast_mask(8, 2, 22).unwrap();
        assert_eq!(none, forecast);
    }

    #[test]
    fn completion_fraction_within_binomial_interval() {
        let s = scheme();
        let p = 0.9;
        let mut hidden = 0usize;
        let mut total = 0usize;
        let mut seed = 0u64;
        while total < 10_000 {
            let spec = MaskSpec::Completion {
                frames: 12,
                observed: 2,
                probability: p,
            };
            let vis = spec.generate(22, &s, seed).unwrap();
            let tokens = patchify_mask(&vis, &s).unwrap();
            for t in 2..12 {
                for l in 0..s.patch_count() {
                    total += 1;
                    if !tokens.is_visible(t, l) {
                        hidden += 1;
                    }
                }
            }
            seed += 1;
        }
        let frac = hidden as f64 / total as f64;
        let half_width = 2.576 * (p * (1.0 - p) / total as f64).sqrt();
        assert!(
            (frac - p).abs() <= half_width,
            "hidden fraction {frac} outside 99% interval around {p}"
        );
    }

    #[test]
    fn occlusion_extremes_and_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean = gen_occlusion_mask(10, 4, 0.0, 22, &mut rng).unwrap();
        assert_eq!(clean, gen_forecast_mask(10, 4, 22).unwrap());
        let full = gen_occlusion_mask(10, 4, 1.0, 22, &mut rng).unwrap();
        assert_eq!(full.count_hidden(), 10 * 22);

        let p = 0.2;
        let mut hidden = 0usize;
        let mut total = 0usize;
        let mut seed = 100u64;
        while total < 10_000 {
            let spec = MaskSpec::Occlusion {
                frames: 12,
                observed: 10,
                probability: p,
            };
            let vis = spec.generate(22, &scheme(), seed).unwrap();
            for t in 0..10 {
                for j in 0..22 {
                    total += 1;
                    if !vis.is_visible(t, j) {
                        hidden += 1;
                    }
                }
            }
            seed += 1;
        }
        let frac = hidden as f64 / total as f64;
        let half_width = 2.576 * (p * (1.0 - p) / total as f64).sqrt();
        assert!((frac - p).abs() <= half_width, "fraction {frac}");
    }

    #[test]
    fn masks_are_deterministic_in_seed() {
        let s = scheme();
        let spec = MaskSpec::Completion {
            frames: 16,
            observed: 4,
            probability: 0.5,
        };
        let a = spec.generate(22, &s, 42).unwrap();
        let b = spec.generate(22, &s, 42).unwrap();
        assert_eq!(a, b);
        let c = spec.generate(22, &s, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn patchify_and_rule() {
        let s = scheme();
        let all = Visibility::all_visible(4, 22);
        let tokens = patchify_mask(&all, &s).unwrap();
        assert!(tokens.flags().iter().all(|&v| v));
        assert_eq!(tokens.len(), 4 * 5);

        // hide one trunk joint at frame 2: only the trunk token there flips
        let mut vis = Visibility::all_visible(4, 22);
        let head = SkeletonTopology::default22().joint_index("Head").unwrap();
        vis.set(2, head, false);
        let tokens = patchify_mask(&vis, &s).unwrap();
        for t in 0..4 {
            for l in 0..5 {
                let expect = !(t == 2 && l == 0);
                assert_eq!(tokens.is_visible(t, l), expect, "token ({t},{l})");
            }
        }
    }

    #[test]
    fn patchify_matches_brute_force_oracle() {
        let s = scheme();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let flags: Vec<bool> = (0..6 * 22).map(|_| rng.gen::<f64>() < 0.5).collect();
            let vis = Visibility::from_flags(6, 22, flags).unwrap();
            let tokens = patchify_mask(&vis, &s).unwrap();
            for t in 0..6 {
                for (l, group) in s.groups().iter().enumerate() {
                    let mut expect = true;
                    for &j in group {
                        if !vis.is_visible(t, j) {
                            expect = false;
                        }
                    }
                    assert_eq!(tokens.is_visible(t, l), expect);
                }
            }
        }
    }

    #[test]
    fn patchify_zero_visibility_hides_all_tokens() {
        let s = scheme();
        let vis = Visibility::from_flags(3, 22, vec![false; 66]).unwrap();
        let tokens = patchify_mask(&vis, &s).unwrap();
        assert!(tokens.flags().iter().all(|&v| !v));
    }

    #[test]
    fn curriculum_schedule() {
        assert_eq!(curriculum_p(0, 100, 0.85, 1.0), 0.85);
        assert_eq!(curriculum_p(100, 100, 0.85, 1.0), 1.0);
        assert!((curriculum_p(50, 100, 0.85, 1.0) - 0.925).abs() < 1e-15);
        // monotone
        let mut last = 0.0;
        for step in 0..=20 {
            let p = curriculum_p(step, 20, 0.3, 0.9);
            assert!(p >= last);
            last = p;
        }
        assert_eq!(curriculum_p(0, 0, 0.5, 0.8), 0.8);
    }
}
