mod commands;
mod config;
mod selfcheck;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Event-camera toolkit: simulate sensors from sharp frames, deblur and
/// interpolate from events, and drive the recurrent fusion model end to end.
#[derive(Parser)]
#[command(name = "evikit", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an event stream from a directory of sharp frames.
    Simulate {
        /// Directory of .pgm/.ppm frames, consumed in lexicographic order.
        #[arg(long)]
        frames: PathBuf,
        /// Frame rate assigned to the sequence.
        #[arg(long)]
        fps: f64,
        /// JSON config; reads the `simulate` section or a bare body.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output event file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Average sharp frames into blurry exposures with held-out frames between.
    Blur {
        #[arg(long)]
        frames: PathBuf,
        /// Sharp frames averaged per blurry exposure (odd).
        #[arg(long)]
        per_blur: Option<usize>,
        /// Held-out frames between consecutive exposures.
        #[arg(long)]
        skip: Option<usize>,
        /// Source frame rate.
        #[arg(long)]
        fps: Option<f64>,
        /// JSON config; reads the `blur` section or a bare body.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Receives blur_NNN.pgm plus windows.json with exposure intervals.
        #[arg(long)]
        outdir: PathBuf,
        /// Also write the held-out sharp frames here.
        #[arg(long)]
        gt_outdir: Option<PathBuf>,
        /// Write 16-bit images.
        #[arg(long)]
        deep: bool,
    },
    /// Bin an event stream into a voxel grid (and optionally its reversal).
    Voxelize {
        #[arg(long)]
        events: PathBuf,
        /// Interior frame count; the grid gets n+2 temporal channels.
        /// Falls back to the config `voxel` section, then 1.
        #[arg(long)]
        n: Option<usize>,
        /// JSON config; reads the `voxel` section or a bare body.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the time-and-polarity reversed grid.
        #[arg(long)]
        out_bwd: Option<PathBuf>,
    },
    /// Sharpen one blurry frame through its event stream.
    Deblur {
        #[arg(long)]
        frame: PathBuf,
        /// Exposure interval as t_start,t_end in stream time.
        #[arg(long)]
        exposure: String,
        #[arg(long)]
        events: PathBuf,
        /// Contrast threshold in log-intensity units.
        #[arg(long)]
        c: Option<f64>,
        /// JSON config; reads the `physical` section or a bare body.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Latent time to sharpen to; defaults to the exposure midpoint.
        #[arg(long)]
        target: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        deep: bool,
    },
    /// Reconstruct latent frames between two blurry inputs.
    Interpolate {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Comma-separated normalized instants in [0, 1] across the window.
        #[arg(long)]
        taus: String,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Left exposure as t_start,t_end; near-instant at the window start
        /// when omitted.
        #[arg(long)]
        left_exposure: Option<String>,
        /// Right exposure as t_start,t_end; near-instant at the window end
        /// when omitted.
        #[arg(long)]
        right_exposure: Option<String>,
        /// Estimate source: fused, left, or right.
        #[arg(long, default_value = "fused")]
        source: String,
        #[arg(long)]
        outdir: PathBuf,
        #[arg(long)]
        deep: bool,
    },
    /// Fit the fusion model on a small dataset and save weights.
    TrainToy {
        /// JSON config; reads the `model` section or a bare body.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of sample subdirectories (left.pgm, right.pgm,
        /// events.evt1, target_*.pgm, optional meta.json).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Output weight file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-step loss curve as JSON.
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Run a trained model on one blurry pair.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        left_exposure: Option<String>,
        #[arg(long)]
        right_exposure: Option<String>,
        #[arg(long)]
        outdir: PathBuf,
        #[arg(long)]
        deep: bool,
    },
    /// Compare predictions against ground truth, paired by sorted file name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON config; reads the `eval` section or a bare body.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output JSON report with psnr_mean, ssim_mean, per_frame.
        #[arg(long)]
        report: PathBuf,
    },
    /// Verify built-in numeric vectors on this platform.
    Selfcheck,
}

/// I/O problems exit 2; everything else that fails exits 1. The error chain
/// reaches wrapped `std::io::Error`s through their sources, so a filesystem
/// failure is recognized however many context layers sit above it.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            // InvalidData comes from our own decoders rejecting malformed
            // payloads; that is bad data, not a filesystem problem.
            if io.kind() != std::io::ErrorKind::InvalidData {
                return 2;
            }
        }
    }
    1
}

fn init_threads() {
    if let Ok(v) = std::env::var("EVIKIT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { frames, fps, config, out } => {
            commands::cmd_simulate(&frames, fps, config.as_deref(), &out)
        }
        Command::Blur {
            frames,
            per_blur,
            skip,
            fps,
            config,
            outdir,
            gt_outdir,
            deep,
        } => commands::cmd_blur(
            &frames,
            per_blur,
            skip,
            fps,
            config.as_deref(),
            &outdir,
            gt_outdir.as_deref(),
            deep,
        ),
        Command::Voxelize { events, n, config, out, out_bwd } => {
            commands::cmd_voxelize(&events, n, config.as_deref(), &out, out_bwd.as_deref())
        }
        Command::Deblur {
            frame,
            exposure,
            events,
            c,
            config,
            target,
            out,
            deep,
        } => {
            let exposure = commands::parse_pair(&exposure, "--exposure")?;
            commands::cmd_deblur(&frame, exposure, &events, c, config.as_deref(), target, &out, deep)
        }
        Command::Interpolate {
            left,
            right,
            events,
            taus,
            c,
            config,
            left_exposure,
            right_exposure,
            source,
            outdir,
            deep,
        } => {
            let le = left_exposure
                .map(|s| commands::parse_pair(&s, "--left-exposure"))
                .transpose()?;
            let re = right_exposure
                .map(|s| commands::parse_pair(&s, "--right-exposure"))
                .transpose()?;
            commands::cmd_interpolate(
                &left,
                &right,
                &events,
                &taus,
                c,
                config.as_deref(),
                le,
                re,
                &source,
                &outdir,
                deep,
            )
        }
        Command::TrainToy { config, data, steps, lr, out, losses } => {
            commands::cmd_train_toy(config.as_deref(), &data, steps, lr, &out, losses.as_deref())
        }
        Command::Infer {
            weights,
            left,
            right,
            events,
            left_exposure,
            right_exposure,
            outdir,
            deep,
        } => {
            let le = left_exposure
                .map(|s| commands::parse_pair(&s, "--left-exposure"))
                .transpose()?;
            let re = right_exposure
                .map(|s| commands::parse_pair(&s, "--right-exposure"))
                .transpose()?;
            commands::cmd_infer(&weights, &left, &right, &events, le, re, &outdir, deep)
        }
        Command::Eval { pred, gt, config, report } => {
            commands::cmd_eval(&pred, &gt, config.as_deref(), &report)
        }
        Command::Selfcheck => selfcheck::run(),
    }
}

fn main() -> ExitCode {
    init_threads();
    // clap exits 2 on usage errors by default; here 2 is reserved for I/O.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help and --version land here.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
