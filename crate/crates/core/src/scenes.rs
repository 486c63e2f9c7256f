//! Synthetic scenes with exact ground truth, used by end-to-end tests and
//! the self-check command.

use crate::image::{Frame, FrameSequence};

const BAR_BACKGROUND: f64 = 0.1;
const BAR_FOREGROUND: f64 = 0.9;

/// Fraction of the pixel column [x, x+1) covered by the bar [left, right).
fn coverage(x: usize, left: f64, right: f64) -> f64 {
    let lo = x as f64;
    (right.min(lo + 1.0) - left.max(lo)).clamp(0.0, 1.0)
}

/// A bright vertical bar sweeping left to right over a dark background, with
/// box-filter antialiasing at the bar edges so sub-pixel motion shows up as
/// smooth intensity change.
///
/// The bar is width/4 pixels wide and travels at constant speed, staying
/// inside a width/8 margin. Timestamps span [0, duration].
pub fn moving_bar_sequence(
    width: usize,
    height: usize,
    n_frames: usize,
    duration: f64,
) -> FrameSequence {
    assert!(n_frames >= 2, "a sequence needs at least 2 frames");
    assert!(width >= 8, "bar scene needs width >= 8");
    let bar_w = (width / 4).max(2) as f64;
    let margin = (width / 8) as f64;
    let travel = width as f64 - 2.0 * margin - bar_w;
    let mut frames = Vec::with_capacity(n_frames);
    let mut timestamps = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let s = k as f64 / (n_frames - 1) as f64;
        let left = margin + s * travel;
        let right = left + bar_w;
        let mut frame = Frame::zeros(width, height, 1);
        for x in 0..width {
            let v = BAR_BACKGROUND + (BAR_FOREGROUND - BAR_BACKGROUND) * coverage(x, left, right);
            for y in 0..height {
                frame.set(x, y, 0, v);
            }
        }
        frames.push(frame);
        timestamps.push(s * duration);
    }
    FrameSequence::new(frames, timestamps).expect("bar scene construction is infallible")
}
