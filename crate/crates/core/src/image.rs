//! Dense intensity frames, exposure-tagged frames, and timed frame sequences.

use crate::error::{Error, Result};

/// A dense H x W intensity image with 1 (gray) or 3 (color) channels.
///
/// Data is row-major with interleaved channels, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Frame> {
        if channels != 1 && channels != 3 {
            return Err(Error::validation(format!(
                "frame must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::validation(format!(
                "frame data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Frame {
        Frame {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Frame {
        Frame {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    pub fn validate_values(&self) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::validation(format!(
                    "frame value {v} at element {i} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Rec. 601 luma; the identity for grayscale frames.
    pub fn luminance(&self) -> Frame {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Frame::zeros(self.width, self.height, 1);
        for i in 0..self.width * self.height {
            let r = self.data[i * 3];
            let g = self.data[i * 3 + 1];
            let b = self.data[i * 3 + 2];
            out.data[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A frame together with its exposure interval [t_s, t_e].
///
/// When the interval is long relative to scene motion the image is the
/// time-averaged (blurry) observation; the interval length scales the blur.
#[derive(Debug, Clone)]
pub struct ExposedFrame {
    pub image: Frame,
    pub t_s: f64,
    pub t_e: f64,
}

impl ExposedFrame {
    pub fn new(image: Frame, t_s: f64, t_e: f64) -> Result<ExposedFrame> {
        if !(t_s.is_finite() && t_e.is_finite() && t_s < t_e) {
            return Err(Error::validation(format!(
                "exposure interval [{t_s}, {t_e}] must be finite with t_s < t_e"
            )));
        }
        Ok(ExposedFrame { image, t_s, t_e })
    }

    /// Exposure length T.
    #[inline]
    pub fn duration(&self) -> f64 {
        self.t_e - self.t_s
    }

    #[inline]
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_s + self.t_e)
    }
}

/// An ordered sequence of same-sized frames with strictly increasing
/// timestamps, the input to blur synthesis and event simulation.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    timestamps: Vec<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, timestamps: Vec<f64>) -> Result<FrameSequence> {
        if frames.len() != timestamps.len() {
            return Err(Error::validation(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if let Some(first) = frames.first() {
            for (i, f) in frames.iter().enumerate() {
                if !f.same_shape(first) {
                    return Err(Error::validation(format!(
                        "frame {i} is {}x{}x{}, expected {}x{}x{}",
                        f.width(),
                        f.height(),
                        f.channels(),
                        first.width(),
                        first.height(),
                        first.channels()
                    )));
                }
                f.validate_values()?;
            }
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::validation(format!(
                    "timestamps must increase strictly: t[{i}]={} >= t[{}]={}",
                    w[0],
                    i + 1,
                    w[1]
                )));
            }
        }
        if let Some(t) = timestamps.iter().find(|t| !t.is_finite()) {
            return Err(Error::validation(format!("non-finite timestamp {t}")));
        }
        Ok(FrameSequence { frames, timestamps })
    }

    /// Sequence with frame k at timestamp k / fps.
    pub fn with_fps(frames: Vec<Frame>, fps: f64) -> Result<FrameSequence> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::validation(format!("fps must be positive, got {fps}")));
        }
        let timestamps = (0..frames.len()).map(|k| k as f64 / fps).collect();
        FrameSequence::new(frames, timestamps)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    #[inline]
    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    #[inline]
    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.timestamps[i]
    }
}
