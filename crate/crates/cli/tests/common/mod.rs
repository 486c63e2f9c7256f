//! Shared scene generators for the integration and acceptance tests.

use evikit_core::{Frame, SimConfig, ThresholdMode};

/// Vertical bright bar on a dark background, box-filtered against the pixel
/// grid so sub-pixel positions shade the edge columns.
pub fn bar_frame(width: usize, height: usize, center: f64, half_width: f64) -> Frame {
    let (bg, fg) = (0.15, 0.85);
    let mut data = Vec::with_capacity(width * height);
    for _y in 0..height {
        for x in 0..width {
            let lo = (x as f64).max(center - half_width);
            let hi = ((x + 1) as f64).min(center + half_width);
            let coverage = (hi - lo).clamp(0.0, 1.0);
            data.push(bg + (fg - bg) * coverage);
        }
    }
    Frame::new(width, height, 1, data).unwrap()
}

/// Deterministic sensor: one fixed threshold, no noise, no hot pixels.
pub fn fixed_sensor(c: f64) -> SimConfig {
    SimConfig {
        c_mean: c,
        c_std: 0.0,
        c_mode: ThresholdMode::Fixed,
        log_eps: 1e-3,
        seed: 0,
        noise_rate: 0.0,
        hot_pixel_fraction: 0.0,
    }
}
