//! Motion synthesis as masked-sequence reconstruction.
//!
//! Skeleton motions are decomposed into body-part patches, projected to
//! tokens, and reconstructed by a transformer encoder-decoder that predicts
//! deviations from an interpolated reference motion. Forecasting,
//! inbetweening, completion and occlusion recovery are all expressed as
//! visibility masks over the same model.

pub mod data;
pub mod kinematics;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod trainer;
pub mod numkit;
