//! Contrast-threshold event simulation from sharp frame sequences, plus a
//! least-squares threshold calibrator.
//!
//! Log-intensity is interpolated linearly between consecutive frames, so
//! threshold crossings have closed-form times and no temporal upsampling is
//! needed. Heavily aliased inputs will therefore differ from simulators that
//! upsample frames before thresholding.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};
use crate::image::{Frame, FrameSequence};

/// Sampled per-pixel thresholds are clamped to at least this, since a
/// Gaussian tail can produce zero or negative draws.
pub const THRESHOLD_FLOOR: f64 = 1e-4;

/// Hot pixels fire continuously at this rate (events per second).
pub const HOT_PIXEL_RATE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Every pixel uses exactly c_mean.
    Fixed,
    /// Per-pixel thresholds drawn once from N(c_mean, c_std).
    GaussianPerPixel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Contrast threshold mean, in log-intensity units.
    pub c_mean: f64,
    /// Contrast threshold standard deviation (gaussian-per-pixel mode).
    pub c_std: f64,
    pub c_mode: ThresholdMode,
    /// Intensity floor inside the log: L = ln(I + log_eps).
    pub log_eps: f64,
    pub seed: u64,
    /// Spurious uniform noise events per pixel per second.
    pub noise_rate: f64,
    /// Fraction of pixels that fire continuously regardless of the scene.
    pub hot_pixel_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            c_mean: 0.2,
            c_std: 0.03,
            c_mode: ThresholdMode::GaussianPerPixel,
            log_eps: 1e-3,
            seed: 0,
            noise_rate: 0.0,
            hot_pixel_fraction: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_mean > 0.0 && self.c_mean.is_finite()) {
            return Err(Error::validation(format!("c_mean must be > 0, got {}", self.c_mean)));
        }
        if !(self.c_std >= 0.0 && self.c_std.is_finite()) {
            return Err(Error::validation(format!("c_std must be >= 0, got {}", self.c_std)));
        }
        if !(self.log_eps > 0.0 && self.log_eps.is_finite()) {
            return Err(Error::validation(format!(
                "log_eps must be > 0, got {}",
                self.log_eps
            )));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(Error::validation(format!(
                "noise_rate must be >= 0, got {}",
                self.noise_rate
            )));
        }
        if !(0.0..1.0).contains(&self.hot_pixel_fraction) {
            return Err(Error::validation(format!(
                "hot_pixel_fraction must lie in [0, 1), got {}",
                self.hot_pixel_fraction
            )));
        }
        Ok(())
    }
}

/// Per-pixel RNG: one seed, one independent ChaCha stream per pixel, so the
/// result is identical however pixels are scheduled.
fn pixel_rng(seed: u64, pixel_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel_index);
    rng
}

/// Events of one pixel, from threshold crossings of the piecewise-linear
/// log-intensity plus configured noise. Returned sorted by time.
fn simulate_pixel(
    x: u16,
    y: u16,
    log_levels: &[f64],
    timestamps: &[f64],
    cfg: &SimConfig,
    mut rng: ChaCha8Rng,
) -> Vec<Event> {
    // Draw order is fixed: threshold, hot-pixel roll, hot polarity, noise.
    // Adding a draw for one feature must not shift the others, so every draw
    // happens even when its feature is disabled.
    let c = match cfg.c_mode {
        ThresholdMode::Fixed => {
            let _ = rng.gen::<f64>();
            cfg.c_mean
        }
        ThresholdMode::GaussianPerPixel => {
            let normal = Normal::new(cfg.c_mean, cfg.c_std).expect("validated c_std");
            normal.sample(&mut rng).max(THRESHOLD_FLOOR)
        }
    };
    let is_hot = rng.gen::<f64>() < cfg.hot_pixel_fraction;
    let hot_polarity = if rng.gen::<bool>() {
        Polarity::Positive
    } else {
        Polarity::Negative
    };

    let t_begin = timestamps[0];
    let t_end = *timestamps.last().unwrap();
    let duration = t_end - t_begin;
    let mut events = Vec::new();

    let mut l_ref = log_levels[0];
    for k in 0..log_levels.len() - 1 {
        let (l_a, l_b) = (log_levels[k], log_levels[k + 1]);
        let (t_a, t_b) = (timestamps[k], timestamps[k + 1]);
        // |l_a - l_ref| < c at segment entry, so crossings inside the segment
        // appear in time order as l_ref steps toward l_b.
        while l_b - l_ref >= c {
            let target = l_ref + c;
            let t = t_a + (t_b - t_a) * (target - l_a) / (l_b - l_a);
            events.push(Event::new(x, y, t, Polarity::Positive));
            l_ref = target;
        }
        while l_ref - l_b >= c {
            let target = l_ref - c;
            let t = t_a + (t_b - t_a) * (target - l_a) / (l_b - l_a);
            events.push(Event::new(x, y, t, Polarity::Negative));
            l_ref = target;
        }
    }

    if cfg.noise_rate > 0.0 && duration > 0.0 {
        let lambda = cfg.noise_rate * duration;
        let poisson = Poisson::new(lambda).expect("validated noise_rate");
        let count = poisson.sample(&mut rng) as u64;
        for _ in 0..count {
            let t = t_begin + rng.gen::<f64>() * duration;
            let p = if rng.gen::<bool>() {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            events.push(Event::new(x, y, t.min(t_end), p));
        }
    }

    if is_hot && duration > 0.0 {
        let count = (HOT_PIXEL_RATE * duration).floor() as u64;
        for i in 0..count {
            let t = t_begin + (i as f64 + 0.5) * duration / count as f64;
            events.push(Event::new(x, y, t, hot_polarity));
        }
    }

    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    events
}

/// Simulates a sensor over a sharp frame sequence.
///
/// Color frames are converted to luminance first. The stream window is
/// [first, last] frame timestamp.
pub fn simulate(seq: &FrameSequence, cfg: &SimConfig) -> Result<EventStream> {
    cfg.validate()?;
    if seq.len() < 2 {
        return Err(Error::validation(format!(
            "simulation needs at least 2 frames, got {}",
            seq.len()
        )));
    }
    let width = seq.frame(0).width();
    let height = seq.frame(0).height();
    if width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(Error::validation(format!(
            "sensor {width}x{height} exceeds 16-bit coordinate range"
        )));
    }
    let grays: Vec<Frame> = seq.frames().iter().map(Frame::luminance).collect();
    let timestamps = seq.timestamps();

    let per_pixel: Vec<Vec<Event>> = (0..width * height)
        .into_par_iter()
        .map(|idx| {
            let x = (idx % width) as u16;
            let y = (idx / width) as u16;
            let log_levels: Vec<f64> = grays
                .iter()
                .map(|f| (f.data()[idx] + cfg.log_eps).ln())
                .collect();
            simulate_pixel(x, y, &log_levels, timestamps, cfg, pixel_rng(cfg.seed, idx as u64))
        })
        .collect();

    let mut events: Vec<Event> = per_pixel.into_iter().flatten().collect();
    // Deterministic global order: time, then pixel, then polarity. Per-pixel
    // output is already time-sorted, so ties within a pixel keep their order
    // only across pixels do we need the index key.
    events.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then_with(|| (a.y, a.x).cmp(&(b.y, b.x)))
            .then_with(|| a.p.sign().cmp(&b.p.sign()))
    });
    EventStream::new(
        width as u16,
        height as u16,
        (timestamps[0], *timestamps.last().unwrap()),
        events,
    )
}

/// Least-squares threshold estimate from a sequence and its event stream.
///
/// Over all pixels and consecutive frame pairs, minimizes
/// sum (dL - c * S)^2 where S is the pixel's polarity sum across the pair,
/// giving c = sum(dL * S) / sum(S^2). `log_eps` must match the convention
/// used when the events were produced.
pub fn estimate_threshold(
    seq: &FrameSequence,
    stream: &EventStream,
    log_eps: f64,
) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::validation(format!(
            "threshold estimation needs at least 2 frames, got {}",
            seq.len()
        )));
    }
    if !(log_eps > 0.0 && log_eps.is_finite()) {
        return Err(Error::validation(format!("log_eps must be > 0, got {log_eps}")));
    }
    let grays: Vec<Frame> = seq.frames().iter().map(Frame::luminance).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..seq.len() - 1 {
        let sums = stream.polarity_image(seq.timestamp(k), seq.timestamp(k + 1))?;
        let (a, b) = (grays[k].data(), grays[k + 1].data());
        for (idx, &s) in sums.iter().enumerate() {
            if s == 0 {
                continue;
            }
            let dl = (b[idx] + log_eps).ln() - (a[idx] + log_eps).ln();
            let s = s as f64;
            num += dl * s;
            den += s * s;
        }
    }
    if den == 0.0 {
        return Err(Error::Estimation(
            "no events overlap the frame pairs, threshold unidentifiable".to_string(),
        ));
    }
    let c = num / den;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Estimation(format!(
            "estimated threshold {c} is not positive; events inconsistent with frames"
        )));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_cfg(c: f64) -> SimConfig {
        SimConfig {
            c_mean: c,
            c_std: 0.0,
            c_mode: ThresholdMode::Fixed,
            ..SimConfig::default()
        }
    }

    /// Single-pixel sequence whose log-intensity takes the given values.
    fn seq_from_logs(logs: &[f64], times: &[f64], log_eps: f64) -> FrameSequence {
        let frames: Vec<Frame> = logs
            .iter()
            .map(|&l| Frame::constant(1, 1, l.exp() - log_eps))
            .collect();
        FrameSequence::new(frames, times.to_vec()).unwrap()
    }

    #[test]
    fn constant_sequence_is_silent() {
        let frames = vec![Frame::constant(4, 3, 0.37); 5];
        let seq = FrameSequence::with_fps(frames, 100.0).unwrap();
        let stream = simulate(&seq, &fixed_cfg(0.2)).unwrap();
        assert!(stream.is_empty());
        assert_eq!(stream.window(), (0.0, 0.04));
    }

    #[test]
    fn linear_rise_of_three_thresholds_fires_at_thirds() {
        let cfg = fixed_cfg(0.2);
        let l0 = (0.3f64 + cfg.log_eps).ln();
        let seq = seq_from_logs(&[l0, l0 + 3.0 * cfg.c_mean], &[0.0, 1.0], cfg.log_eps);
        let stream = simulate(&seq, &cfg).unwrap();
        let times: Vec<f64> = stream.iter().map(|e| e.t).collect();
        assert_eq!(times.len(), 3, "expected 3 events, got {times:?}");
        for (got, want) in times.iter().zip([1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(stream.iter().all(|e| e.p == Polarity::Positive));
    }

    #[test]
    fn step_down_two_thresholds_fires_twice_negative() {
        let cfg = fixed_cfg(0.15);
        let l0 = (0.8f64 + cfg.log_eps).ln();
        let seq = seq_from_logs(&[l0, l0 - 2.0 * cfg.c_mean], &[0.0, 0.5], cfg.log_eps);
        let stream = simulate(&seq, &cfg).unwrap();
        assert_eq!(stream.len(), 2);
        assert!(stream.iter().all(|e| e.p == Polarity::Negative));
        assert!(stream.iter().all(|e| e.t > 0.0 && e.t <= 0.5));
    }

    #[test]
    fn monotone_scene_events_share_sign() {
        // Noiseless rising scene: no negative event may appear, whatever the
        // per-pixel threshold draw.
        let mut frames = Vec::new();
        for k in 0..8 {
            let v = 0.05 + 0.1 * k as f64;
            frames.push(Frame::constant(3, 3, v));
        }
        let seq = FrameSequence::with_fps(frames, 30.0).unwrap();
        let cfg = SimConfig {
            c_mode: ThresholdMode::GaussianPerPixel,
            seed: 7,
            ..SimConfig::default()
        };
        let stream = simulate(&seq, &cfg).unwrap();
        assert!(!stream.is_empty());
        assert!(stream.iter().all(|e| e.p == Polarity::Positive));
    }

    #[test]
    fn event_count_bounded_by_log_variation() {
        let cfg = fixed_cfg(0.1);
        let logs = [-1.0, -0.65, -1.2, -0.6, -0.9];
        let seq = seq_from_logs(&logs, &[0.0, 0.1, 0.2, 0.3, 0.4], cfg.log_eps);
        let stream = simulate(&seq, &cfg).unwrap();
        let variation: f64 = logs.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let bound = (variation / cfg.c_mean).ceil() as usize + 1;
        assert!(stream.len() <= bound, "{} events, bound {bound}", stream.len());
    }

    #[test]
    fn same_seed_same_stream_bytes() {
        let mut frames = Vec::new();
        for k in 0..6 {
            let mut f = Frame::zeros(5, 4, 1);
            for (i, v) in f.data_mut().iter_mut().enumerate() {
                *v = ((i + k) as f64 * 0.37).sin().abs();
            }
            frames.push(f);
        }
        let seq = FrameSequence::with_fps(frames, 60.0).unwrap();
        let cfg = SimConfig {
            noise_rate: 50.0,
            hot_pixel_fraction: 0.1,
            seed: 99,
            ..SimConfig::default()
        };
        let a = simulate(&seq, &cfg).unwrap();
        let b = simulate(&seq, &cfg).unwrap();
        assert_eq!(crate::io::encode_events(&a), crate::io::encode_events(&b));
        let different = SimConfig { seed: 100, ..cfg };
        let c = simulate(&seq, &different).unwrap();
        assert_ne!(crate::io::encode_events(&a), crate::io::encode_events(&c));
    }

    #[test]
    fn noise_rate_adds_roughly_expected_count() {
        let frames = vec![Frame::constant(10, 10, 0.5); 2];
        let seq = FrameSequence::new(frames, vec![0.0, 2.0]).unwrap();
        let cfg = SimConfig {
            noise_rate: 25.0,
            ..fixed_cfg(0.2)
        };
        let stream = simulate(&seq, &cfg).unwrap();
        // 100 pixels * 25 ev/s * 2 s = 5000 expected; Poisson sd ~ 71.
        let n = stream.len() as f64;
        assert!((n - 5000.0).abs() < 400.0, "noise count {n} far from 5000");
    }

    #[test]
    fn hot_pixels_fire_at_fixed_rate() {
        // Constant scene: every event comes from a hot pixel, and each hot
        // pixel emits exactly HOT_PIXEL_RATE * duration events of one sign.
        let frames = vec![Frame::constant(10, 10, 0.5); 2];
        let seq = FrameSequence::new(frames, vec![0.0, 1.0]).unwrap();
        let mut cfg = fixed_cfg(0.2);
        cfg.hot_pixel_fraction = 0.5;
        let stream = simulate(&seq, &cfg).unwrap();
        assert!(!stream.is_empty());
        let mut per_pixel = std::collections::HashMap::new();
        for e in stream.iter() {
            let entry = per_pixel.entry((e.x, e.y)).or_insert((0usize, e.p));
            entry.0 += 1;
            assert_eq!(entry.1, e.p, "hot pixel changed polarity");
        }
        for (pixel, (count, _)) in per_pixel {
            assert_eq!(count, HOT_PIXEL_RATE as usize, "pixel {pixel:?}");
        }
    }

    #[test]
    fn rejects_single_frame() {
        let seq = FrameSequence::new(vec![Frame::zeros(2, 2, 1)], vec![0.0]).unwrap();
        assert!(simulate(&seq, &SimConfig::default()).is_err());
    }

    #[test]
    fn rejects_invalid_config() {
        let frames = vec![Frame::constant(2, 2, 0.5); 2];
        let seq = FrameSequence::new(frames, vec![0.0, 1.0]).unwrap();
        for bad in [
            SimConfig { c_mean: 0.0, ..SimConfig::default() },
            SimConfig { c_std: -1.0, ..SimConfig::default() },
            SimConfig { log_eps: 0.0, ..SimConfig::default() },
            SimConfig { noise_rate: -0.5, ..SimConfig::default() },
            SimConfig { hot_pixel_fraction: 1.0, ..SimConfig::default() },
        ] {
            assert!(simulate(&seq, &bad).is_err());
        }
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let parsed: SimConfig = serde_json::from_str(r#"{"c_mode": "fixed", "seed": 3}"#).unwrap();
        assert_eq!(parsed.c_mode, ThresholdMode::Fixed);
        assert_eq!(parsed.seed, 3);
        assert_eq!(parsed.c_mean, 0.2);
        assert!(serde_json::from_str::<SimConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn estimate_recovers_fixed_threshold() {
        let mut frames = Vec::new();
        for k in 0..12 {
            let mut f = Frame::zeros(8, 8, 1);
            for (i, v) in f.data_mut().iter_mut().enumerate() {
                let phase = (i as f64) * 0.13 + (k as f64) * 0.4;
                *v = 0.3 + 0.25 * phase.sin();
            }
            frames.push(f);
        }
        let seq = FrameSequence::with_fps(frames, 50.0).unwrap();
        let cfg = fixed_cfg(0.2);
        let stream = simulate(&seq, &cfg).unwrap();
        assert!(stream.len() > 100);
        let c = estimate_threshold(&seq, &stream, cfg.log_eps).unwrap();
        assert!((0.19..=0.21).contains(&c), "estimated {c}");
    }

    #[test]
    fn estimate_exact_on_single_event_pixels() {
        // Two frames, dL = 0.2 per pixel, one positive event each: the
        // least-squares solution is the mean dL.
        let log_eps = 1e-3;
        let a = Frame::constant(3, 1, 0.4);
        let b = a.map(|v| (v + log_eps) * 0.2f64.exp() - log_eps);
        let seq = FrameSequence::new(vec![a, b], vec![0.0, 1.0]).unwrap();
        let events = (0..3)
            .map(|x| Event::new(x, 0, 0.5, Polarity::Positive))
            .collect();
        let stream = EventStream::new(3, 1, (0.0, 1.0), events).unwrap();
        let c = estimate_threshold(&seq, &stream, log_eps).unwrap();
        assert!((c - 0.2).abs() < 1e-12, "estimated {c}");
    }

    #[test]
    fn doubling_every_event_halves_the_estimate() {
        let mut frames = Vec::new();
        for k in 0..6 {
            frames.push(Frame::constant(4, 4, 0.2 + 0.12 * k as f64));
        }
        let seq = FrameSequence::with_fps(frames, 20.0).unwrap();
        let cfg = fixed_cfg(0.2);
        let stream = simulate(&seq, &cfg).unwrap();
        let c1 = estimate_threshold(&seq, &stream, cfg.log_eps).unwrap();
        let doubled: Vec<Event> = stream.iter().flat_map(|e| [*e, *e]).collect();
        let stream2 = EventStream::new(4, 4, stream.window(), doubled).unwrap();
        let c2 = estimate_threshold(&seq, &stream2, cfg.log_eps).unwrap();
        assert!((c2 - 0.5 * c1).abs() < 1e-12, "{c2} vs half of {c1}");
    }

    #[test]
    fn estimate_errors_without_events() {
        let frames = vec![Frame::constant(2, 2, 0.5); 2];
        let seq = FrameSequence::new(frames, vec![0.0, 1.0]).unwrap();
        let stream = EventStream::empty(2, 2, (0.0, 1.0)).unwrap();
        assert!(matches!(
            estimate_threshold(&seq, &stream, 1e-3),
            Err(Error::Estimation(_))
        ));
    }
}
