//! Blur synthesis from sharp sequences, the skip-k dataset protocol, and
//! image metrics (PSNR, SSIM, Charbonnier).

use crate::error::{Error, Result};
use crate::image::{ExposedFrame, Frame, FrameSequence};

/// Identical images have infinite PSNR; report this sentinel instead so
/// metric tables stay finite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// How a sharp sequence is folded into blurry frames: every window averages
/// `frames_per_blur` consecutive frames, then `skip` sharp frames are held
/// out as interpolation ground truth before the next window starts.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurProtocol {
    pub frames_per_blur: usize,
    pub skip: usize,
    /// Source frame rate; used when building timestamps from frame files.
    pub fps: f64,
}

impl BlurProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_blur == 0 || self.frames_per_blur % 2 == 0 {
            return Err(Error::validation(format!(
                "frames_per_blur must be odd and >= 1, got {}",
                self.frames_per_blur
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::validation(format!("fps must be > 0, got {}", self.fps)));
        }
        Ok(())
    }
}

/// Blur windows plus the held-out sharp frames between them.
#[derive(Debug, Clone)]
pub struct BlurSynthesis {
    pub blurry: Vec<ExposedFrame>,
    /// Ground-truth latent frames with their timestamps, in time order.
    pub skipped: Vec<(f64, Frame)>,
}

/// Averages consecutive sharp frames into blurry exposures per the protocol.
///
/// Exposure bounds are the first and last constituent timestamps. Skipped
/// frames between two consecutive windows are returned as ground truth;
/// trailing frames after the last window are not.
pub fn synthesize_blur(seq: &FrameSequence, proto: &BlurProtocol) -> Result<BlurSynthesis> {
    proto.validate()?;
    let fpb = proto.frames_per_blur;
    let stride = fpb + proto.skip;
    if seq.len() < fpb {
        return Err(Error::validation(format!(
            "{} frames cannot fill one {fpb}-frame blur window",
            seq.len()
        )));
    }
    let mut blurry = Vec::new();
    let mut skipped = Vec::new();
    let mut start = 0;
    while start + fpb <= seq.len() {
        let window = &seq.frames()[start..start + fpb];
        let mut mean = vec![0.0f64; window[0].data().len()];
        for f in window {
            for (acc, v) in mean.iter_mut().zip(f.data()) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= fpb as f64;
        }
        let image = Frame::new(window[0].width(), window[0].height(), window[0].channels(), mean)?;
        blurry.push(ExposedFrame::new(
            image,
            seq.timestamp(start),
            seq.timestamp(start + fpb - 1),
        )?);
        let next = start + stride;
        if next + fpb <= seq.len() {
            for i in start + fpb..next {
                skipped.push((seq.timestamp(i), seq.frame(i).clone()));
            }
        }
        start = next;
    }
    Ok(BlurSynthesis { blurry, skipped })
}

/// Peak signal-to-noise ratio in dB, MSE taken jointly over all channels.
/// Capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Frame, b: &Frame, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::validation("psnr: frames differ in shape".to_string()));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::validation(format!("psnr: peak must be > 0, got {peak}")));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable Gaussian blur; output is (h-10) x (w-10).
fn blur_valid(src: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * src[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let oh = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over 11x11 Gaussian windows (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, unit dynamic range), averaged across channels.
/// Windows are valid-mode: no padding at the borders.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::validation("ssim: frames differ in shape".to_string()));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "ssim: image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let kernel = ssim_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..a.channels() {
        let plane = |f: &Frame| -> Vec<f64> {
            (0..w * h)
                .map(|i| f.data()[i * f.channels() + ch])
                .collect()
        };
        let pa = plane(a);
        let pb = plane(b);
        let sq = |p: &[f64]| -> Vec<f64> { p.iter().map(|v| v * v).collect() };
        let cross: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = blur_valid(&pa, w, h, &kernel);
        let mu_b = blur_valid(&pb, w, h, &kernel);
        let e_aa = blur_valid(&sq(&pa), w, h, &kernel);
        let e_bb = blur_valid(&sq(&pb), w, h, &kernel);
        let e_ab = blur_valid(&cross, w, h, &kernel);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
        }
        count += mu_a.len();
    }
    Ok(total / count as f64)
}

/// Mean Charbonnier penalty, sqrt(d^2 + eps^2) per element. With hypot the
/// identical-input case returns eps exactly.
pub fn charbonnier(pred: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::validation(format!(
            "charbonnier: length mismatch {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::validation("charbonnier: empty input".to_string()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).hypot(eps))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub const CHARBONNIER_EPS_DEFAULT: f64 = 1e-6;
