//! Subcommand implementations. File-shaped things happen here; numerics
//! live in the library crates.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use evikit_core::io::{
    atomic_write, read_events, read_image, write_events, write_image, write_voxel,
};
use evikit_core::{
    bidirectional_pair, edi_deblur, exposure_voxel, psnr, simulate, ssim, synthesize_blur,
    voxelize, BlurProtocol, EventStream, ExposedFrame, Frame, FrameSequence, LatentQuery,
    LatentSource, SimConfig,
};
use evikit_nn::{load_model, save_model, train_toy, AdamConfig, RefidConfig, RefidInputs, RefidModel};

use crate::config::{load_section, EvalConfig, PhysicalConfig, VoxelConfig};

/// Fraction of the event window used as the stand-in exposure length when a
/// key frame arrives without one: long enough to be a valid interval,
/// short enough that deblurring it is a no-op in practice.
const DEFAULT_EXPOSURE_FRACTION: f64 = 1e-6;

fn log(stage: &str, message: &str) {
    eprintln!("[{stage}] {message}");
}

/// Image files of a directory in lexicographic order.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing frames in {}", dir.display()))?
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("listing frames in {}", dir.display()))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm" | "ppm" | "pnm")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .pgm/.ppm/.pnm files in {}", dir.display());
    }
    Ok(files)
}

fn read_frame(path: &Path) -> Result<Frame> {
    read_image(path).with_context(|| format!("reading image {}", path.display()))
}

fn read_frames(dir: &Path) -> Result<Vec<(PathBuf, Frame)>> {
    image_files(dir)?
        .into_iter()
        .map(|p| {
            let f = read_frame(&p)?;
            Ok((p, f))
        })
        .collect()
}

fn read_stream(path: &Path) -> Result<EventStream> {
    read_events(path).with_context(|| format!("reading events from {}", path.display()))
}

pub fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        bail!("{what} must be two comma-separated numbers, got {s:?}");
    }
    let a: f64 = parts[0].trim().parse().with_context(|| format!("parsing {what} {s:?}"))?;
    let b: f64 = parts[1].trim().parse().with_context(|| format!("parsing {what} {s:?}"))?;
    Ok((a, b))
}

fn exposed(
    frame: Frame,
    exposure: Option<(f64, f64)>,
    window: (f64, f64),
    at_start: bool,
) -> Result<ExposedFrame> {
    let (t_s, t_e) = match exposure {
        Some(pair) => pair,
        None => {
            let delta = (window.1 - window.0) * DEFAULT_EXPOSURE_FRACTION;
            if at_start {
                (window.0, window.0 + delta)
            } else {
                (window.1 - delta, window.1)
            }
        }
    };
    Ok(ExposedFrame::new(frame, t_s, t_e)?)
}

pub fn cmd_simulate(frames: &Path, fps: f64, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: SimConfig = load_section(config, "simulate")?;
    let frames = read_frames(frames)?;
    log("simulate", &format!("{} frames at {fps} fps", frames.len()));
    let seq = FrameSequence::with_fps(frames.into_iter().map(|(_, f)| f).collect(), fps)?;
    let stream = simulate(&seq, &cfg)?;
    log("simulate", &format!("{} events", stream.len()));
    write_events(&stream, out).with_context(|| format!("writing events to {}", out.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct WindowReport {
    file: String,
    t_s: f64,
    t_e: f64,
    midpoint: f64,
}

#[derive(Serialize)]
struct SkippedReport {
    file: Option<String>,
    t: f64,
}

#[derive(Serialize)]
struct BlurReport {
    fps: f64,
    frames_per_blur: usize,
    skip: usize,
    blurry: Vec<WindowReport>,
    skipped: Vec<SkippedReport>,
}

pub fn cmd_blur(
    frames: &Path,
    per_blur: Option<usize>,
    skip: Option<usize>,
    fps: Option<f64>,
    config: Option<&Path>,
    outdir: &Path,
    gt_outdir: Option<&Path>,
    deep: bool,
) -> Result<()> {
    let mut proto = match load_section::<Option<BlurProtocol>>(config, "blur")? {
        Some(p) => p,
        None => BlurProtocol {
            frames_per_blur: 11,
            skip: 1,
            fps: 240.0,
        },
    };
    if let Some(p) = per_blur {
        proto.frames_per_blur = p;
    }
    if let Some(s) = skip {
        proto.skip = s;
    }
    if let Some(f) = fps {
        proto.fps = f;
    }
    let frames = read_frames(frames)?;
    let seq = FrameSequence::with_fps(frames.into_iter().map(|(_, f)| f).collect(), proto.fps)?;
    let synth = synthesize_blur(&seq, &proto)?;
    log(
        "blur",
        &format!(
            "{} exposures of {} frames, {} held-out frames",
            synth.blurry.len(),
            proto.frames_per_blur,
            synth.skipped.len()
        ),
    );
    std::fs::create_dir_all(outdir)
        .with_context(|| format!("creating output dir {}", outdir.display()))?;
    let mut report = BlurReport {
        fps: proto.fps,
        frames_per_blur: proto.frames_per_blur,
        skip: proto.skip,
        blurry: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, ef) in synth.blurry.iter().enumerate() {
        let name = format!("blur_{i:03}.pgm");
        write_image(&ef.image, &outdir.join(&name), deep)?;
        report.blurry.push(WindowReport {
            file: name,
            t_s: ef.t_s,
            t_e: ef.t_e,
            midpoint: ef.midpoint(),
        });
    }
    for (i, (t, frame)) in synth.skipped.iter().enumerate() {
        let file = match gt_outdir {
            Some(dir) => {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating output dir {}", dir.display()))?;
                let name = format!("skip_{i:03}.pgm");
                write_image(frame, &dir.join(&name), deep)?;
                Some(name)
            }
            None => None,
        };
        report.skipped.push(SkippedReport { file, t: *t });
    }
    let json = serde_json::to_vec_pretty(&report)?;
    atomic_write(&outdir.join("windows.json"), &json)?;
    Ok(())
}

pub fn cmd_voxelize(
    events: &Path,
    n: Option<usize>,
    config: Option<&Path>,
    out: &Path,
    out_bwd: Option<&Path>,
) -> Result<()> {
    let voxel: VoxelConfig = load_section(config, "voxel")?;
    let n = n.unwrap_or(voxel.n);
    let stream = read_stream(events)?;
    match out_bwd {
        None => {
            let grid = voxelize(&stream, n)?;
            log("voxelize", &format!("{} bins, mass {:.3}", grid.bins(), grid.total_mass()));
            write_voxel(&grid, out)?;
        }
        Some(bwd_path) => {
            let (fwd, bwd) = bidirectional_pair(&stream, n)?;
            log("voxelize", &format!("{} bins per direction", fwd.bins()));
            write_voxel(&fwd, out)?;
            write_voxel(&bwd, bwd_path)?;
        }
    }
    Ok(())
}

pub fn cmd_deblur(
    frame: &Path,
    exposure: (f64, f64),
    events: &Path,
    c: Option<f64>,
    config: Option<&Path>,
    target: Option<f64>,
    out: &Path,
    deep: bool,
) -> Result<()> {
    let physical: PhysicalConfig = load_section(config, "physical")?;
    let c = c.unwrap_or(physical.c);
    let image = read_frame(frame)?;
    let stream = read_stream(events)?;
    let ef = ExposedFrame::new(image, exposure.0, exposure.1)?;
    let sharp = edi_deblur(&ef, &stream, c, target)?;
    log(
        "deblur",
        &format!("exposure [{}, {}], c={c}, target {}", ef.t_s, ef.t_e, target.unwrap_or(ef.midpoint())),
    );
    write_image(&sharp, out, deep).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_interpolate(
    left: &Path,
    right: &Path,
    events: &Path,
    taus: &str,
    c: Option<f64>,
    config: Option<&Path>,
    left_exposure: Option<(f64, f64)>,
    right_exposure: Option<(f64, f64)>,
    source: &str,
    outdir: &Path,
    deep: bool,
) -> Result<()> {
    let physical: PhysicalConfig = load_section(config, "physical")?;
    let c = c.unwrap_or(physical.c);
    let source = match source {
        "fused" => LatentSource::Fused,
        "left" => LatentSource::Left,
        "right" => LatentSource::Right,
        other => bail!("unknown source {other:?}, expected fused|left|right"),
    };
    let taus: Vec<f64> = taus
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("parsing tau {s:?}")))
        .collect::<Result<_>>()?;
    if taus.is_empty() {
        bail!("no interpolation instants given");
    }
    for &t in &taus {
        if !(0.0..=1.0).contains(&t) {
            bail!("normalized tau {t} outside [0, 1]");
        }
    }
    let stream = read_stream(events)?;
    let window = stream.window();
    let left = exposed(read_frame(left)?, left_exposure, window, true)?;
    let right = exposed(read_frame(right)?, right_exposure, window, false)?;
    std::fs::create_dir_all(outdir)
        .with_context(|| format!("creating output dir {}", outdir.display()))?;
    let span = window.1 - window.0;
    for (i, &tau) in taus.iter().enumerate() {
        let t_abs = window.0 + tau * span;
        let query = LatentQuery { tau: t_abs, source };
        let frame = evikit_core::latent_frame(&left, &right, &stream, c, query)?;
        let name = format!("interp_{i:02}_tau{tau:.4}.pgm");
        write_image(&frame, &outdir.join(&name), deep)?;
        log("interpolate", &format!("{name} at t={t_abs:.6}"));
    }
    Ok(())
}

/// One training sample directory: left.pgm, right.pgm, events.evt1,
/// target_*.pgm (n+2 of them, lexicographic), optional meta.json with
/// {"left_exposure": [a, b], "right_exposure": [a, b]}.
fn load_sample(dir: &Path, cfg: &RefidConfig) -> Result<evikit_nn::TrainSample> {
    #[derive(serde::Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    struct Meta {
        left_exposure: Option<(f64, f64)>,
        right_exposure: Option<(f64, f64)>,
    }
    let meta: Meta = {
        let p = dir.join("meta.json");
        if p.exists() {
            let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?
        } else {
            Meta::default()
        }
    };
    let stream = read_stream(&dir.join("events.evt1"))?;
    let window = stream.window();
    let left = exposed(read_frame(&dir.join("left.pgm"))?, meta.left_exposure, window, true)?;
    let right = exposed(read_frame(&dir.join("right.pgm"))?, meta.right_exposure, window, false)?;
    let targets: Vec<Frame> = image_files(dir)?
        .into_iter()
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("target_"))
        })
        .map(|p| read_frame(&p))
        .collect::<Result<_>>()?;
    if targets.len() != cfg.n_interp + 2 {
        bail!(
            "{} has {} target_*.pgm frames, model with n_interp={} needs {}",
            dir.display(),
            targets.len(),
            cfg.n_interp,
            cfg.n_interp + 2
        );
    }
    let left_exposure = exposure_voxel(&stream, &left, cfg.exposure_voxel_bins)?;
    let right_exposure = exposure_voxel(&stream, &right, cfg.exposure_voxel_bins)?;
    // The recurrence spans midpoint to midpoint: bin centers of this grid
    // are the instants the n+2 outputs reconstruct.
    let mid_stream = stream.slice(left.midpoint(), right.midpoint())?;
    let (forward, backward) = bidirectional_pair(&mid_stream, cfg.n_interp)?;
    Ok(evikit_nn::TrainSample {
        left,
        right,
        left_exposure,
        right_exposure,
        forward,
        backward,
        targets,
    })
}

pub fn cmd_train_toy(
    config: Option<&Path>,
    data: &Path,
    steps: usize,
    lr: f64,
    out: &Path,
    losses_out: Option<&Path>,
) -> Result<()> {
    let cfg: RefidConfig = load_section(config, "model")?;
    let mut sample_dirs: Vec<PathBuf> = std::fs::read_dir(data)
        .with_context(|| format!("listing samples in {}", data.display()))?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    sample_dirs.sort();
    if sample_dirs.is_empty() {
        bail!("no sample directories in {}", data.display());
    }
    let samples: Vec<evikit_nn::TrainSample> = sample_dirs
        .iter()
        .map(|d| load_sample(d, &cfg))
        .collect::<Result<_>>()?;
    log("train", &format!("{} samples, {steps} steps, lr {lr}", samples.len()));
    let mut model = RefidModel::new(cfg)?;
    let losses = train_toy(&mut model, &samples, steps, AdamConfig::with_lr(lr))?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        log("train", &format!("loss {first:.6} -> {last:.6}"));
    }
    save_model(out, &model)?;
    if let Some(p) = losses_out {
        atomic_write(p, &serde_json::to_vec_pretty(&losses)?)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_infer(
    weights: &Path,
    left: &Path,
    right: &Path,
    events: &Path,
    left_exposure: Option<(f64, f64)>,
    right_exposure: Option<(f64, f64)>,
    outdir: &Path,
    deep: bool,
) -> Result<()> {
    let model = load_model(weights)
        .with_context(|| format!("loading weights from {}", weights.display()))?;
    let cfg = model.cfg().clone();
    let stream = read_stream(events)?;
    let window = stream.window();
    let left = exposed(read_frame(left)?, left_exposure, window, true)?;
    let right = exposed(read_frame(right)?, right_exposure, window, false)?;
    let le = exposure_voxel(&stream, &left, cfg.exposure_voxel_bins)?;
    let re = exposure_voxel(&stream, &right, cfg.exposure_voxel_bins)?;
    let mid_stream = stream.slice(left.midpoint(), right.midpoint())?;
    let (fwd, bwd) = bidirectional_pair(&mid_stream, cfg.n_interp)?;
    let frames = model.predict_frames(&RefidInputs {
        left: &left,
        right: &right,
        left_exposure: &le,
        right_exposure: &re,
        forward: &fwd,
        backward: &bwd,
    })?;
    std::fs::create_dir_all(outdir)
        .with_context(|| format!("creating output dir {}", outdir.display()))?;
    log("infer", &format!("{} frames", frames.len()));
    for (i, frame) in frames.iter().enumerate() {
        write_image(frame, &outdir.join(format!("frame_{i:02}.pgm")), deep)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FrameMetrics {
    pred: String,
    gt: String,
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct EvalReport {
    psnr_mean: f64,
    ssim_mean: f64,
    per_frame: Vec<FrameMetrics>,
}

pub fn cmd_eval(pred: &Path, gt: &Path, config: Option<&Path>, report: &Path) -> Result<()> {
    // No eval knobs yet; loading still validates the section when given.
    let _eval: EvalConfig = load_section(config, "eval")?;
    let preds = read_frames(pred)?;
    let gts = read_frames(gt)?;
    if preds.len() != gts.len() {
        bail!(
            "{} predictions vs {} ground-truth frames; pairing is by sorted file name",
            preds.len(),
            gts.len()
        );
    }
    let mut per_frame = Vec::with_capacity(preds.len());
    for ((pp, pf), (gp, gf)) in preds.iter().zip(&gts) {
        let psnr_db = psnr(pf, gf, 1.0)?;
        let ssim_v = ssim(pf, gf)?;
        per_frame.push(FrameMetrics {
            pred: pp.file_name().unwrap().to_string_lossy().into_owned(),
            gt: gp.file_name().unwrap().to_string_lossy().into_owned(),
            psnr: psnr_db,
            ssim: ssim_v,
        });
    }
    let n = per_frame.len() as f64;
    let out = EvalReport {
        psnr_mean: per_frame.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim_mean: per_frame.iter().map(|m| m.ssim).sum::<f64>() / n,
        per_frame,
    };
    log(
        "eval",
        &format!("{} pairs, psnr {:.4} dB, ssim {:.6}", out.per_frame.len(), out.psnr_mean, out.ssim_mean),
    );
    atomic_write(report, &serde_json::to_vec_pretty(&out)?)?;
    Ok(())
}
