//! Fine and coarse mask construction.
//!
//! Coarse masks are keypoint rectangles. With `m = ceil(H / 32)` and pixel
//! coordinates `floor(k.x)`, `floor(k.y)` of each confident keypoint:
//!
//! * upper body: rows `min(shoulder.y) - m ..= max(hip.y) + 4m`, columns
//!   spanning shoulders, hips, elbows and wrists, widened by `m`;
//! * lower body: rows `min(hip.y) - m ..= max(ankle.y) + m`, columns spanning
//!   hips, knees and ankles, widened by `m`;
//! * dresses: rows `min(shoulder.y) - m ..= max(knee.y) + m`, columns spanning
//!   shoulders, elbows, wrists, hips and knees, widened by `m`.
//!
//! The rectangle is clamped to the frame, unioned with the fine mask and has
//! hand and foot pixels removed, so `fine ⊆ coarse` always holds.

use super::{Mask, MaskError, MaskKind};
use crate::data::{Category, Joint, ParseLabel, TryOnSample};

/// Keypoints at or below this confidence count as missing.
pub const CONFIDENCE_THRESHOLD: f64 = 0.1;

/// Parse label of the garment for a category.
pub fn garment_label(category: Category) -> ParseLabel {
    match category {
        Category::UpperBody => ParseLabel::UpperClothes,
        Category::LowerBody => ParseLabel::LowerClothes,
        Category::Dresses => ParseLabel::Dress,
    }
}

/// Parse labels making up the fine mask of a category.
pub fn fine_labels(category: Category) -> &'static [ParseLabel] {
    match category {
        Category::UpperBody => &[ParseLabel::UpperClothes, ParseLabel::Arms],
        Category::LowerBody => &[ParseLabel::LowerClothes, ParseLabel::Legs],
        Category::Dresses => &[ParseLabel::Dress, ParseLabel::Arms, ParseLabel::Legs],
    }
}

/// Hand and foot pixels of a sample.
pub fn hand_foot_mask(sample: &TryOnSample) -> Mask {
    Mask::from_labels(&sample.parsing, MaskKind::Fine, ParseLabel::is_hand_or_foot)
}

/// Target-category garment plus adjoining arm/leg skin; never hands, feet,
/// face, hair or background.
pub fn build_fine_mask(sample: &TryOnSample) -> Result<Mask, MaskError> {
    let garment = garment_label(sample.category);
    if sample.parsing.count(garment) == 0 {
        return Err(MaskError::EmptyRegion(format!("{garment:?}")));
    }
    let labels = fine_labels(sample.category);
    Ok(Mask::from_labels(&sample.parsing, MaskKind::Fine, |l| labels.contains(&l))
        .with_source(format!("fine:{}:{}", sample.sample_id, sample.category.as_str())))
}

fn joint_px(sample: &TryOnSample, j: Joint) -> Option<(i64, i64)> {
    sample
        .pose
        .joint(j)
        .filter(|k| k.confidence > CONFIDENCE_THRESHOLD)
        .map(|k| (k.y.floor() as i64, k.x.floor() as i64))
}

/// Inclusive `(y0, y1, x0, x1)` keypoint rectangle before clamping.
pub fn coarse_rectangle(sample: &TryOnSample) -> Result<(i64, i64, i64, i64), MaskError> {
    use Joint::*;
    let m = sample.height().div_ceil(32) as i64;
    let (top, bottom, required, optional): (&[Joint], &[Joint], &[Joint], &[Joint]) = match sample.category {
        Category::UpperBody => (
            &[RightShoulder, LeftShoulder],
            &[RightHip, LeftHip],
            &[RightShoulder, LeftShoulder, RightHip, LeftHip],
            &[RightElbow, LeftElbow, RightWrist, LeftWrist],
        ),
        Category::LowerBody => (
            &[RightHip, LeftHip],
            &[RightAnkle, LeftAnkle],
            &[RightHip, LeftHip, RightAnkle, LeftAnkle],
            &[RightKnee, LeftKnee],
        ),
        Category::Dresses => (
            &[RightShoulder, LeftShoulder],
            &[RightKnee, LeftKnee],
            &[RightShoulder, LeftShoulder, RightKnee, LeftKnee],
            &[RightElbow, LeftElbow, RightWrist, LeftWrist, RightHip, LeftHip],
        ),
    };
    let missing: Vec<String> = required
        .iter()
        .filter(|&&j| joint_px(sample, j).is_none())
        .map(|j| format!("{j:?}"))
        .collect();
    if !missing.is_empty() {
        return Err(MaskError::PoseIncomplete(missing.join(", ")));
    }
    let pts = |js: &[Joint]| js.iter().filter_map(|&j| joint_px(sample, j)).collect::<Vec<_>>();
    let y0 = pts(top).iter().map(|p| p.0).min().unwrap() - m;
    let below = if sample.category == Category::UpperBody { 4 * m } else { m };
    let y1 = pts(bottom).iter().map(|p| p.0).max().unwrap() + below;
    let span: Vec<(i64, i64)> = pts(required).into_iter().chain(pts(optional)).collect();
    let x0 = span.iter().map(|p| p.1).min().unwrap() - m;
    let x1 = span.iter().map(|p| p.1).max().unwrap() + m;
    Ok((y0, y1, x0, x1))
}

/// Garment-shape-agnostic bounding region; always a superset of the fine mask.
pub fn build_coarse_mask(sample: &TryOnSample) -> Result<Mask, MaskError> {
    let (y0, y1, x0, x1) = coarse_rectangle(sample)?;
    let rect = Mask::from_fn(sample.height(), sample.width(), MaskKind::Coarse, |y, x| {
        let (y, x) = (y as i64, x as i64);
        y >= y0 && y <= y1 && x >= x0 && x <= x1
    });
    let fine = build_fine_mask(sample)?;
    let coarse = rect.union(&fine)?.subtract(&hand_foot_mask(sample))?;
    Ok(coarse
        .with_kind(MaskKind::Coarse)
        .with_source(format!("coarse:{}:{}", sample.sample_id, sample.category.as_str())))
}
