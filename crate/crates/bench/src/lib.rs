//! Shared inputs for the criterion benchmarks.

use mocap_core::corruption::MarkerFrame;
use mocap_core::model::{desk_body, BodyModel, BodyParams};
use mocap_core::rng::seeded;

/// Desk model with a seeded random pose and its labeled marker frame.
pub struct Scene {
    pub model: BodyModel,
    pub params: BodyParams,
    pub frame: MarkerFrame,
}

impl Scene {
    pub fn new(seed: u64) -> Self {
        let model = desk_body();
        let params = BodyParams::random(&model, &mut seeded(seed), 0.3);
        let lm = model.landmarks_for(&params).expect("valid pose");
        let frame = MarkerFrame::from_landmarks(0, &lm);
        Self { model, params, frame }
    }
}
