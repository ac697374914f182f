//! Reading a moving object's coordinates off rendered frames with visual
//! tools (measurement overlay, quadrant amplifier, marker replay), then
//! smoothing the raw track with a feedback-tuned Savitzky-Golay filter.

mod detect;
mod feedback;
mod locator;
mod tools;

pub use crate::smoothing::{sg_filter, FilterParams};
pub use detect::{detect_sequence, DetectOptions, Detection, ToolSet};
pub use feedback::{smooth_with_feedback, AdvisorJudge, DeterministicJudge, Judgement, ScriptedJudge, SmoothingAdvisor};
pub use locator::{AdvisorLocator, Locator, OracleLocator, VisualContext};
pub use tools::{crop_quadrant, frame_to_rgb, overlay_measurement, quadrant_of, replay_marker, Affine, AxesSpec, GRID};
