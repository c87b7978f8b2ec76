use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context as _, Result};
use clap::Subcommand;
use serde::{Deserialize, Serialize};

use mocap_core::capture::{
    calibrate_wand, reconstruct, simulate_capture, simulate_wand_tracks, Rig, SensorFrame, WandTrack, CLUSTER_RADIUS, DEFAULT_THRESHOLD,
};
use mocap_core::corruption::MarkerFrame;
use mocap_core::heatmap::{read_container, write_container};
use mocap_core::model::PoseRecord;
use mocap_core::rng::{frame_rng, Stream};

use crate::context::Context;

/// Nominal frame rate used to timestamp simulated frames.
const FRAME_RATE: f64 = 30.0;

#[derive(Subcommand, Debug)]
pub enum CaptureAction {
    /// Render IR and depth frames of posed marker sets for every sensor.
    Simulate {
        /// Rig JSON; defaults to a ring of `--sensors` sensors.
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        sensors: usize,
    },
    /// Extract, fuse and cluster markers from a simulated capture directory.
    Extract {
        /// Rig JSON; defaults to the one stored with the capture.
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = CLUSTER_RADIUS)]
        radius: f64,
    },
    /// Extrinsic calibration from wand tracks (simulated when no input is given).
    Calibrate {
        /// Nominal rig: source of the simulated sweep and of the reference sensor's pose.
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        sensors: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Per-axis wand noise in meters.
        #[arg(long, default_value_t = 0.001)]
        noise: f64,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
    },
}

impl CaptureAction {
    pub fn name(&self) -> &'static str {
        match self {
            CaptureAction::Simulate { .. } => "simulate",
            CaptureAction::Extract { .. } => "extract",
            CaptureAction::Calibrate { .. } => "calibrate",
        }
    }
}

/// Index of a simulated capture directory.
#[derive(Debug, Serialize, Deserialize)]
struct CaptureIndex {
    sensors: usize,
    frames: Vec<CaptureEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptureEntry {
    frame_id: u64,
    timestamp: f64,
    /// One container per sensor, relative to the capture directory.
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct SensorStats {
    blobs: usize,
    dropped: usize,
    observations: usize,
}

#[derive(Serialize)]
struct ExtractRecord {
    frame_id: u64,
    markers: usize,
    sensors: Vec<SensorStats>,
}

#[derive(Serialize)]
struct CalibrationReport {
    rms: f64,
    history: Vec<f64>,
    /// Largest sensor-position error against the nominal rig, meters.
    max_position_error: f64,
    simulated: bool,
}

fn rig_or_ring(path: Option<&Path>, sensors: usize) -> Result<Rig> {
    match path {
        Some(p) => Rig::load(p).with_context(|| format!("loading rig {}", p.display())),
        None => Ok(Rig::ring(sensors, 2.5, 1.2, 1.0)?),
    }
}

pub fn run(ctx: &mut Context, action: &CaptureAction) -> Result<()> {
    match action {
        CaptureAction::Simulate { rig, sensors } => simulate(ctx, rig_or_ring(rig.as_deref(), *sensors)?),
        CaptureAction::Extract { rig, threshold, radius } => extract(ctx, rig.as_deref(), *threshold, *radius),
        CaptureAction::Calibrate { rig, sensors, samples, noise, iterations } => {
            calibrate(ctx, rig_or_ring(rig.as_deref(), *sensors)?, *samples, *noise, *iterations)
        }
    }
}

fn simulate(ctx: &mut Context, rig: Rig) -> Result<()> {
    let path = ctx.input("pose stream")?.to_path_buf();
    let poses: Vec<PoseRecord> = Context::read_jsonl(&path)?;
    let model = ctx.model()?.clone();
    let cfg = ctx.config.sim.clone();
    cfg.validate()?;
    let seed = ctx.seed;
    let rendered = ctx.time("simulate", |ctx| {
        ctx.par_map(&poses, |p| {
            let set = model.landmarks_for(&p.params)?;
            let scene = MarkerFrame::from_landmarks(p.frame_id, &set);
            let normals = model.marker_normals(&p.params)?;
            let timestamp = p.frame_id as f64 / FRAME_RATE;
            let frames = simulate_capture(&rig, &scene, Some(&normals), &cfg, seed, timestamp)?;
            let encoded = frames
                .iter()
                .map(|f| {
                    let mut buf = Vec::new();
                    write_container(&mut buf, &f.to_container())?;
                    Ok(buf)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((scene, timestamp, encoded))
        })
    })?;
    let mut index = CaptureIndex { sensors: rig.sensors.len(), frames: Vec::new() };
    let mut scenes = Vec::new();
    for (scene, timestamp, encoded) in rendered {
        let mut files = Vec::new();
        for (k, bytes) in encoded.iter().enumerate() {
            let name = PathBuf::from(format!("sensors/f{:06}_s{k}.mchm", scene.frame_id));
            ctx.write(name.to_str().expect("ascii path"), bytes)?;
            files.push(name);
        }
        index.frames.push(CaptureEntry { frame_id: scene.frame_id, timestamp, files });
        scenes.push(scene);
    }
    ctx.write("rig.json", rig.to_json()?.as_bytes())?;
    ctx.write_jsonl("scene.jsonl", &scenes)?;
    ctx.write_json("capture.json", &index)?;
    Ok(())
}

fn extract(ctx: &mut Context, rig: Option<&Path>, threshold: f64, radius: f64) -> Result<()> {
    let dir = ctx.input("capture directory")?.to_path_buf();
    let index: CaptureIndex = Context::read_json(&dir.join("capture.json"))?;
    let rig = Rig::load(rig.map_or_else(|| dir.join("rig.json"), Path::to_path_buf))?;
    ensure!(rig.sensors.len() == index.sensors, "rig has {} sensors, capture has {}", rig.sensors.len(), index.sensors);
    let out = ctx.time("extract", |ctx| {
        ctx.par_map(&index.frames, |entry| {
            let frames = entry
                .files
                .iter()
                .map(|f| {
                    let path = dir.join(f);
                    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                    let c = read_container(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
                    Ok(SensorFrame::from_container(&c, entry.timestamp)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let (frame, extractions) = reconstruct(&rig, &frames, threshold, radius, entry.frame_id)?;
            let record = ExtractRecord {
                frame_id: entry.frame_id,
                markers: frame.points.len(),
                sensors: extractions
                    .iter()
                    .map(|e| SensorStats { blobs: e.blobs, dropped: e.dropped, observations: e.observations.len() })
                    .collect(),
            };
            Ok((frame, record))
        })
    })?;
    let (frames, records): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    ctx.write_jsonl("frames.jsonl", &frames)?;
    ctx.write_jsonl("extract.jsonl", &records)?;
    Ok(())
}

fn calibrate(ctx: &mut Context, nominal: Rig, samples: usize, noise: f64, iterations: usize) -> Result<()> {
    let (tracks, simulated): (Vec<WandTrack>, bool) = match ctx.inputs.as_slice() {
        [] => {
            let mut rng = frame_rng(ctx.seed, 0, Stream::Capture);
            (simulate_wand_tracks(&nominal, samples, noise, &mut rng)?.0, true)
        }
        _ => (Context::read_json(ctx.input("wand tracks")?)?, false),
    };
    ensure!(tracks.len() == nominal.sensors.len(), "{} wand tracks for {} sensors", tracks.len(), nominal.sensors.len());
    let cal = ctx.time("calibrate", |_| Ok(calibrate_wand(&tracks, iterations)?))?;
    // The reference sensor keeps its nominal pose; the others follow from the calibration.
    let anchor = nominal.sensors[0].extrinsics;
    let mut rig = nominal.clone();
    for (s, x) in rig.sensors.iter_mut().zip(&cal.extrinsics) {
        s.extrinsics = anchor.compose(x);
    }
    let max_position_error =
        rig.sensors.iter().zip(&nominal.sensors).map(|(a, b)| (a.position() - b.position()).norm()).fold(0.0, f64::max);
    ctx.write("rig.json", rig.to_json()?.as_bytes())?;
    ctx.write_json("calibration.json", &CalibrationReport { rms: cal.rms, history: cal.history, max_position_error, simulated })?;
    Ok(())
}
