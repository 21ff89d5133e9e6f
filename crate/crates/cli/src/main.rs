//! Command-line frontend: run the tracker over a detection dump, score a
//! result against ground truth, generate synthetic scenarios, and render
//! per-frame SVG overlays.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime or I/O failure,
//! 2 usage or configuration error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use sportstrack_core::eval::{compare_table, evaluate, LabeledBox};
use sportstrack_core::matcher::{run_sequence, RunMode, TrackRow};
use sportstrack_core::mot_io::{
    config_from_value, read_detections, read_gt, read_mot_tracks, write_detections, write_mot_gt,
    write_mot_tracks,
};
use sportstrack_core::synth::{generate, preset};
use sportstrack_core::track::TrackerConfig;

#[derive(Parser)]
#[command(name = "sportstrack", version, about = "Sports multi-object tracking toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the tracker over a JSON-Lines detection dump and write MOT rows.
    Track(TrackArgs),
    /// Score a MOT track file against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scenario into a directory.
    Synth(SynthArgs),
    /// Render one SVG overlay per frame of a MOT track file.
    Overlay(OverlayArgs),
}

#[derive(Args)]
struct TrackArgs {
    /// JSON-Lines detection dump (header line, then one record per detection).
    #[arg(long)]
    dets: PathBuf,
    /// Tracker configuration, a JSON object of overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output MOT track file.
    #[arg(long, default_value = "tracks.txt")]
    out: PathBuf,
    /// Emit rows as they are produced instead of rewriting restored ids.
    #[arg(long)]
    streaming: bool,
    /// Override a single configuration key, e.g. --set alpha=0.8. Wins over
    /// --config, which wins over the defaults. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// MOT track file under test.
    #[arg(long)]
    pred: PathBuf,
    /// MOT ground-truth file.
    #[arg(long)]
    gt: PathBuf,
    /// Also dump the metrics as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario preset name.
    #[arg(long)]
    preset: String,
    /// Override the preset's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving detections.jsonl, gt.txt, and spec.json.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OverlayArgs {
    /// MOT track file to render.
    #[arg(long)]
    tracks: PathBuf,
    /// Canvas width in pixels.
    #[arg(long)]
    width: f64,
    /// Canvas height in pixels.
    #[arg(long)]
    height: f64,
    /// Directory receiving frame_NNNNNN.svg files.
    #[arg(long)]
    out: PathBuf,
    /// Inclusive frame range, e.g. 10..25. Default: all frames.
    #[arg(long)]
    frames: Option<String>,
}

/// An error carrying its exit code: 1 for runtime failures, 2 for usage
/// and configuration mistakes.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn runtime(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, err: err.into() }
}

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Track(args) => cmd_track(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Overlay(args) => cmd_overlay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

/// Flag > config file > defaults: the file (when given) is parsed as a JSON
/// object, --set pairs are folded on top, and the merged object is then
/// validated as one configuration.
fn load_config(path: Option<&Path>, sets: &[String]) -> Result<TrackerConfig<f64>, Failure> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .map_err(runtime)?;
            serde_json::from_str::<serde_json::Value>(&text)
                .with_context(|| format!("parsing config {}", p.display()))
                .map_err(usage)?
        }
        None => serde_json::Value::Object(Default::default()),
    };
    let map = value
        .as_object_mut()
        .ok_or_else(|| usage(anyhow::anyhow!("config root must be a JSON object")))?;
    for pair in sets {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| usage(anyhow::anyhow!("--set expects KEY=VALUE, got {pair:?}")))?;
        let parsed = serde_json::from_str::<serde_json::Value>(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        map.insert(key.to_string(), parsed);
    }
    config_from_value::<f64>(value).map_err(usage)
}

fn cmd_track(args: TrackArgs) -> Result<(), Failure> {
    let cfg = load_config(args.config.as_deref(), &args.set)?;
    let bundle = read_detections::<f64>(&args.dets)
        .with_context(|| format!("reading detections {}", args.dets.display()))
        .map_err(runtime)?;
    let mode = if args.streaming { RunMode::Streaming } else { RunMode::Batch };
    let (rows, summary) =
        run_sequence(&bundle.frames, bundle.width, bundle.height, &cfg, mode).map_err(runtime)?;
    write_mot_tracks(&args.out, &rows)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(runtime)?;
    eprintln!(
        "{}: {} frames, {} tracks spawned, {} removed, {} restored -> {}",
        bundle.name,
        summary.frames,
        summary.spawned,
        summary.removed,
        summary.restored,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let pred_rows = read_mot_tracks::<f64>(&args.pred)
        .with_context(|| format!("reading predictions {}", args.pred.display()))
        .map_err(runtime)?;
    let gt = read_gt::<f64>(&args.gt)
        .with_context(|| format!("reading ground truth {}", args.gt.display()))
        .map_err(runtime)?;
    let pred: Vec<LabeledBox<f64>> = pred_rows.into_iter().map(Into::into).collect();
    let report = evaluate(&pred, &gt).map_err(runtime)?;
    let name = args
        .pred
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pred".to_string());
    print!("{}", compare_table(&[(name, report)]).text);
    if let Some(path) = args.json {
        let text = serde_json::to_string_pretty(&report.to_json()).expect("metrics serialize");
        fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let mut spec = preset::<f64>(&args.preset).map_err(usage)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (gt, bundle) = generate(&spec).map_err(runtime)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .map_err(runtime)?;
    write_detections(args.out_dir.join("detections.jsonl"), &bundle).map_err(runtime)?;
    write_mot_gt(args.out_dir.join("gt.txt"), &gt).map_err(runtime)?;
    let spec_json = serde_json::to_string_pretty(&spec).expect("spec serialize");
    fs::write(args.out_dir.join("spec.json"), spec_json + "\n")
        .with_context(|| format!("writing spec.json to {}", args.out_dir.display()))
        .map_err(runtime)?;
    eprintln!(
        "{}: wrote detections.jsonl, gt.txt, spec.json to {}",
        spec.name,
        args.out_dir.display()
    );
    Ok(())
}

/// Stable scramble of the id so neighboring ids get unrelated colors; each
/// channel is kept in 64..=224 to stay visible on light and dark ground.
fn id_color(id: u64) -> String {
    let mut z = id.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let ch = |b: u64| 64 + (b & 0xFF) % 161;
    format!("#{:02x}{:02x}{:02x}", ch(z), ch(z >> 8), ch(z >> 16))
}

fn parse_frame_range(s: &str) -> Result<(u64, u64), Failure> {
    let parts = s
        .split_once("..")
        .ok_or_else(|| usage(anyhow::anyhow!("--frames expects A..B, got {s:?}")))?;
    let lo: u64 = parts.0.trim().parse().map_err(usage)?;
    let hi: u64 = parts.1.trim().parse().map_err(usage)?;
    if lo > hi {
        return Err(usage(anyhow::anyhow!("--frames range {s:?} is empty")));
    }
    Ok((lo, hi))
}

fn render_frame_svg(width: f64, height: f64, rows: &[TrackRow<f64>]) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    for row in rows {
        let color = id_color(row.id);
        let b = row.bbox;
        let _ = writeln!(
            svg,
            r#"  <rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            b.x, b.y, b.w, b.h
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" font-family="monospace" font-size="14" fill="{color}">{}</text>"#,
            b.x + 2.0,
            b.y - 4.0,
            row.id
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn cmd_overlay(args: OverlayArgs) -> Result<(), Failure> {
    if !(args.width > 0.0 && args.height > 0.0) {
        return Err(usage(anyhow::anyhow!("--width and --height must be positive")));
    }
    let range = match args.frames.as_deref() {
        Some(s) => Some(parse_frame_range(s)?),
        None => None,
    };
    let rows = read_mot_tracks::<f64>(&args.tracks)
        .with_context(|| format!("reading tracks {}", args.tracks.display()))
        .map_err(runtime)?;
    let mut by_frame: BTreeMap<u64, Vec<TrackRow<f64>>> = BTreeMap::new();
    for row in rows {
        if range.is_none_or(|(lo, hi)| (lo..=hi).contains(&row.frame)) {
            by_frame.entry(row.frame).or_default().push(row);
        }
    }
    if by_frame.is_empty() {
        log::warn!("no track rows selected, nothing to render");
        eprintln!("warning: no track rows selected, nothing to render");
        return Ok(());
    }
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(runtime)?;
    let n = by_frame.len();
    for (frame, rows) in by_frame {
        let path = args.out.join(format!("frame_{frame:06}.svg"));
        fs::write(&path, render_frame_svg(args.width, args.height, &rows))
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
    }
    eprintln!("rendered {n} frames to {}", args.out.display());
    Ok(())
}
