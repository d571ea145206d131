//! `ttlbp convert-dvs`: accumulate an event-CSV recording into binary
//! two-channel frames, stored as IDX plus a dataset manifest.

use std::path::PathBuf;

use ttlbp::encodings::{
    dvs_to_frames, read_event_csv, write_idx, DatasetManifest, FileLabel,
};

use crate::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct ConvertArgs {
    pub events_in: PathBuf,
    pub dt_ms: f64,
    pub t_steps: usize,
    pub sensor: String,
    pub label: usize,
    pub out: PathBuf,
}

pub fn parse_sensor(s: &str) -> CliResult<[usize; 2]> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!(
            "sensor must look like 128x128, got '{s}'"
        )));
    }
    let h: usize = parts[0]
        .parse()
        .map_err(|_| CliError::Usage(format!("bad sensor height '{}'", parts[0])))?;
    let w: usize = parts[1]
        .parse()
        .map_err(|_| CliError::Usage(format!("bad sensor width '{}'", parts[1])))?;
    if h == 0 || w == 0 {
        return Err(CliError::Usage("sensor dimensions must be positive".into()));
    }
    Ok([h, w])
}

pub fn cmd_convert(args: &ConvertArgs) -> CliResult<()> {
    if !args.events_in.exists() {
        return Err(CliError::Usage(format!(
            "event file {} does not exist",
            args.events_in.display()
        )));
    }
    if !(args.dt_ms > 0.0) {
        return Err(CliError::Usage("--dt-ms must be positive".into()));
    }
    let sensor = parse_sensor(&args.sensor)?;
    let dt_us = (args.dt_ms * 1000.0).round() as u64;

    let mut stream = read_event_csv(&args.events_in, sensor)?;
    stream.normalize();
    if stream.events.is_empty() {
        eprintln!(
            "warning: {} contains no events; writing all-zero frames",
            args.events_in.display()
        );
    }
    let seq = dvs_to_frames(&stream, dt_us, args.t_steps)?;

    std::fs::create_dir_all(&args.out)?;
    let stem = args
        .events_in
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "frames".into());
    let frames_name = format!("{stem}.frames.idx");
    write_idx(&args.out.join(&frames_name), &seq.to_idx())?;

    let manifest = DatasetManifest::Frames {
        num_classes: args.label + 1,
        time_steps: args.t_steps,
        train: vec![FileLabel {
            path: frames_name.clone(),
            label: args.label,
        }],
        test: vec![],
    };
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "convert-dvs: {} events -> {} frames in {}",
        stream.events.len(),
        args.t_steps,
        args.out.join(&frames_name).display()
    );
    Ok(())
}
