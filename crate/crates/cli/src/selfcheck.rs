//! Built-in numeric vectors. Each check recomputes a value whose answer is
//! known in closed form and prints one line; the command fails if any line
//! does. Run this first when porting to a new platform or toolchain.

use anyhow::{ensure, Result};

use evikit_core::io::{decode_events, decode_voxel, encode_events, encode_voxel};
use evikit_core::{
    charbonnier, edi_deblur, fusion_weights, psnr, simulate, ssim, voxelize, Event, EventStream,
    ExposedFrame, Frame, FrameSequence, Polarity, SimConfig, ThresholdMode,
};
use evikit_nn::{decode_model, encode_model, RefidConfig, RefidModel, Tape, Tensor, LEAKY_SLOPE};

type Check = (&'static str, fn() -> Result<()>);

fn frame_1x1(v: f64) -> Frame {
    Frame::new(1, 1, 1, vec![v]).unwrap()
}

fn near(a: f64, b: f64, tol: f64) -> Result<()> {
    ensure!((a - b).abs() <= tol, "got {a}, want {b} within {tol}");
    Ok(())
}

fn psnr_peak255_mse1() -> Result<()> {
    let a = frame_1x1(0.0);
    let b = frame_1x1(1.0);
    near(psnr(&a, &b, 255.0)?, 48.1308, 1e-3)
}

fn psnr_identical_capped() -> Result<()> {
    let a = Frame::new(2, 2, 1, vec![0.1, 0.4, 0.7, 1.0])?;
    near(psnr(&a, &a, 1.0)?, 99.0, 0.0)
}

fn ssim_identical_is_one() -> Result<()> {
    let mut data = Vec::with_capacity(16 * 16);
    for y in 0..16 {
        for x in 0..16 {
            data.push(((x + 2 * y) as f64 / 46.0).sin().abs());
        }
    }
    let a = Frame::new(16, 16, 1, data)?;
    near(ssim(&a, &a)?, 1.0, 1e-9)
}

fn charbonnier_identical_is_eps() -> Result<()> {
    let x = [0.0, 0.25, 0.5, 1.0];
    let got = charbonnier(&x, &x, 1e-6)?;
    ensure!(got == 1e-6, "got {got:e}, want exactly 1e-6");
    Ok(())
}

fn sigmoid_of_zero_is_half() -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![1], vec![0.0]));
    let y = tape.sigmoid(x);
    near(tape.data(y)[0], 0.5, 0.0)
}

fn leaky_relu_slope() -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![2], vec![-1.0, 2.0]));
    let y = tape.leaky_relu(x, LEAKY_SLOPE);
    near(tape.data(y)[0], -0.1, 0.0)?;
    near(tape.data(y)[1], 2.0, 0.0)
}

fn identity_conv_passes_input() -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![1, 2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.5, 7.0]));
    let w = tape.leaf(&Tensor::new(vec![1, 1, 1, 1], vec![1.0]));
    let b = tape.leaf(&Tensor::zeros(vec![1]));
    let y = tape.conv2d(x, w, b, 1, 0);
    ensure!(tape.data(y) == tape.data(x), "1x1 identity conv changed values");
    Ok(())
}

fn strided_conv_halves_extent() -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(vec![1, 4, 6]));
    let w = tape.leaf(&Tensor::zeros(vec![1, 1, 3, 3]));
    let b = tape.leaf(&Tensor::zeros(vec![1]));
    let y = tape.conv2d(x, w, b, 2, 1);
    ensure!(tape.shape(y) == [1, 2, 3], "got shape {:?}, want [1, 2, 3]", tape.shape(y));
    Ok(())
}

fn transpose_conv_doubles_extent() -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(vec![1, 4, 5]));
    let w = tape.leaf(&Tensor::zeros(vec![1, 1, 4, 4]));
    let b = tape.leaf(&Tensor::zeros(vec![1]));
    let y = tape.conv_transpose2d(x, w, b, 2, 1);
    ensure!(tape.shape(y) == [1, 8, 10], "got shape {:?}, want [1, 8, 10]", tape.shape(y));
    Ok(())
}

fn global_pool_is_mean() -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let y = tape.global_avg_pool(x);
    near(tape.data(y)[0], 2.5, 0.0)
}

fn dense_affine_map() -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![2], vec![3.0, 4.0]));
    let w = tape.leaf(&Tensor::new(vec![1, 2], vec![2.0, -1.0]));
    let b = tape.leaf(&Tensor::new(vec![1], vec![0.5]));
    let y = tape.dense(x, w, b);
    near(tape.data(y)[0], 2.5, 0.0)
}

fn voxel_tent_split() -> Result<()> {
    let stream = EventStream::new(
        1,
        1,
        (0.0, 1.0),
        vec![Event::new(0, 0, 0.125, Polarity::Positive)],
    )?;
    let grid = voxelize(&stream, 1)?;
    near(grid.at(0, 0, 0), 0.75, 1e-12)?;
    near(grid.at(1, 0, 0), 0.25, 1e-12)?;
    near(grid.total_mass(), 1.0, 1e-12)
}

fn voxel_empty_stream_is_zero() -> Result<()> {
    let stream = EventStream::new(2, 2, (0.0, 1.0), Vec::new())?;
    near(voxelize(&stream, 1)?.total_mass(), 0.0, 0.0)
}

fn time_reversal_flips_polarity_mass() -> Result<()> {
    let stream = EventStream::new(
        1,
        1,
        (0.0, 1.0),
        vec![Event::new(0, 0, 0.3, Polarity::Positive)],
    )?;
    let (fwd, bwd) = evikit_core::bidirectional_pair(&stream, 1)?;
    near(fwd.total_mass(), 1.0, 1e-12)?;
    near(bwd.total_mass(), -1.0, 1e-12)
}

fn deblur_without_events_is_identity() -> Result<()> {
    let frame = Frame::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4])?;
    let stream = EventStream::new(2, 2, (0.0, 1.0), Vec::new())?;
    let ef = ExposedFrame::new(frame.clone(), 0.0, 1.0)?;
    let sharp = edi_deblur(&ef, &stream, 0.2, None)?;
    ensure!(sharp.data() == frame.data(), "pixels changed with no events");
    Ok(())
}

/// One positive event at the exposure end, target there too: the whole
/// integral sits one threshold below the target level, so the gain is
/// exactly e^c.
fn deblur_single_event_gain() -> Result<()> {
    let stream = EventStream::new(
        1,
        1,
        (0.0, 1.0),
        vec![Event::new(0, 0, 1.0, Polarity::Positive)],
    )?;
    let ef = ExposedFrame::new(frame_1x1(0.5), 0.0, 1.0)?;
    let sharp = edi_deblur(&ef, &stream, 0.2, Some(1.0))?;
    near(sharp.data()[0], 0.5 * 0.2f64.exp(), 1e-9)
}

fn fusion_weights_at_midpoint() -> Result<()> {
    let (wl, wr) = fusion_weights(0.0, 1.0, 0.5);
    near(wl, 0.5, 0.0)?;
    near(wr, 0.5, 0.0)
}

/// Log ramp of height 2.5 thresholds across one frame interval: crossings
/// land at fractions 0.4 and 0.8, both positive.
fn simulator_ramp_crossings() -> Result<()> {
    let i0 = 0.1;
    let i1 = 0.101 * 0.5f64.exp() - 1e-3;
    let seq = FrameSequence::with_fps(vec![frame_1x1(i0), frame_1x1(i1)], 1.0)?;
    let cfg = SimConfig {
        c_mean: 0.2,
        c_std: 0.0,
        c_mode: ThresholdMode::Fixed,
        log_eps: 1e-3,
        seed: 0,
        noise_rate: 0.0,
        hot_pixel_fraction: 0.0,
    };
    let stream = simulate(&seq, &cfg)?;
    ensure!(stream.len() == 2, "got {} events, want 2", stream.len());
    let events: Vec<_> = stream.iter().collect();
    ensure!(
        events.iter().all(|e| e.p == Polarity::Positive),
        "expected all positive polarities"
    );
    near(events[0].t, 0.4, 1e-9)?;
    near(events[1].t, 0.8, 1e-9)
}

fn event_bytes_round_trip() -> Result<()> {
    let stream = EventStream::new(
        3,
        2,
        (0.0, 0.5),
        vec![
            Event::new(0, 0, 0.1, Polarity::Positive),
            Event::new(2, 1, 0.2, Polarity::Negative),
            Event::new(1, 0, 0.5, Polarity::Positive),
        ],
    )?;
    let bytes = encode_events(&stream);
    let again = encode_events(&decode_events(&bytes)?);
    ensure!(bytes == again, "event bytes changed across a round trip");
    Ok(())
}

fn voxel_bytes_round_trip() -> Result<()> {
    let stream = EventStream::new(
        2,
        2,
        (0.0, 1.0),
        vec![
            Event::new(0, 1, 0.25, Polarity::Positive),
            Event::new(1, 0, 0.75, Polarity::Negative),
        ],
    )?;
    let grid = voxelize(&stream, 2)?;
    let bytes = encode_voxel(&grid);
    let again = encode_voxel(&decode_voxel(&bytes)?);
    ensure!(bytes == again, "voxel bytes changed across a round trip");
    Ok(())
}

fn weight_bytes_round_trip() -> Result<()> {
    let cfg: RefidConfig = serde_json::from_str(
        r#"{"scales": 1, "base_channels": 4, "n_interp": 1,
            "residual_blocks_per_evr": 1, "image_residual_blocks": 0}"#,
    )?;
    let model = RefidModel::new(cfg)?;
    let bytes = encode_model(&model);
    let again = encode_model(&decode_model(&bytes)?);
    ensure!(bytes == again, "weight bytes changed across a round trip");
    Ok(())
}

const CHECKS: &[Check] = &[
    ("psnr_peak255_mse1", psnr_peak255_mse1),
    ("psnr_identical_capped", psnr_identical_capped),
    ("ssim_identical_is_one", ssim_identical_is_one),
    ("charbonnier_identical_is_eps", charbonnier_identical_is_eps),
    ("sigmoid_of_zero_is_half", sigmoid_of_zero_is_half),
    ("leaky_relu_slope", leaky_relu_slope),
    ("identity_conv_passes_input", identity_conv_passes_input),
    ("strided_conv_halves_extent", strided_conv_halves_extent),
    ("transpose_conv_doubles_extent", transpose_conv_doubles_extent),
    ("global_pool_is_mean", global_pool_is_mean),
    ("dense_affine_map", dense_affine_map),
    ("voxel_tent_split", voxel_tent_split),
    ("voxel_empty_stream_is_zero", voxel_empty_stream_is_zero),
    ("time_reversal_flips_polarity_mass", time_reversal_flips_polarity_mass),
    ("deblur_without_events_is_identity", deblur_without_events_is_identity),
    ("deblur_single_event_gain", deblur_single_event_gain),
    ("fusion_weights_at_midpoint", fusion_weights_at_midpoint),
    ("simulator_ramp_crossings", simulator_ramp_crossings),
    ("event_bytes_round_trip", event_bytes_round_trip),
    ("voxel_bytes_round_trip", voxel_bytes_round_trip),
    ("weight_bytes_round_trip", weight_bytes_round_trip),
];

/// Runs every vector, one status line each; Err carries the failure count.
pub fn run() -> Result<()> {
    let mut failures = 0usize;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => eprintln!("ok {name}"),
            Err(e) => {
                failures += 1;
                eprintln!("FAIL {name}: {e}");
            }
        }
    }
    if failures > 0 {
        anyhow::bail!("{failures} of {} self-checks failed", CHECKS.len());
    }
    eprintln!("all {} self-checks passed", CHECKS.len());
    Ok(())
}
