use std::collections::HashMap;

use anyhow::{bail, ensure, Context as _, Result};
use clap::Args;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use mocap_core::balance::{Autoencoder, PcaAutoencoder};
use mocap_core::corruption::{apply_pipeline, MarkerFrame, Provenance};
use mocap_core::fitter::{fit as fit_frame, FitMode, FitProblem, FitResult};
use mocap_core::heatmap::{normalize_frame, render_ortho, write_container, Container, HeatmapStack, View, DEFAULT_MARGIN, DEFAULT_SIGMA_PX, RESOLUTION};
use mocap_core::metrics::{write_csv, EvalReport, SynthesisSets};
use mocap_core::model::{BodyModel, BodyParams, PoseRecord};
use mocap_core::rng::{frame_rng, Stream};

use crate::context::Context;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of random poses when no pose file is given.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Per-component pose range in radians for random poses.
    #[arg(long, default_value_t = 0.5)]
    pub amplitude: f64,
    /// Use the rest pose instead of random poses.
    #[arg(long)]
    pub rest: bool,
}

fn marker_frame(model: &BodyModel, record: &PoseRecord) -> Result<MarkerFrame> {
    Ok(MarkerFrame::from_landmarks(record.frame_id, &model.landmarks_for(&record.params)?))
}

/// Reads a pose stream and checks it against the model.
fn read_poses(ctx: &mut Context, path: &std::path::Path) -> Result<Vec<PoseRecord>> {
    let poses: Vec<PoseRecord> = Context::read_jsonl(path)?;
    let model = ctx.model()?;
    for p in &poses {
        p.params.validate(model).with_context(|| format!("pose {}", p.frame_id))?;
    }
    Ok(poses)
}

pub fn synth(ctx: &mut Context, args: &SynthArgs) -> Result<()> {
    let poses: Vec<PoseRecord> = if ctx.inputs.is_empty() {
        let (seed, amplitude) = (ctx.seed, args.amplitude);
        let model = ctx.model()?.clone();
        (0..args.count as u64)
            .map(|frame_id| {
                let params = if args.rest {
                    BodyParams::rest(&model)
                } else {
                    BodyParams::random(&model, &mut frame_rng(seed, frame_id, Stream::Synthesis), amplitude)
                };
                PoseRecord { frame_id, params }
            })
            .collect()
    } else {
        let path = ctx.input("pose stream")?.to_path_buf();
        read_poses(ctx, &path)?
    };
    let model = ctx.model()?.clone();
    let frames = ctx.time("synthesize", |ctx| ctx.par_map(&poses, |p| marker_frame(&model, p)))?;
    ctx.write_jsonl("poses.jsonl", &poses)?;
    ctx.write_jsonl("frames.jsonl", &frames)?;
    log::info!("synthesized {} frames", frames.len());
    Ok(())
}

pub fn corrupt(ctx: &mut Context) -> Result<()> {
    let path = ctx.input("pose stream")?.to_path_buf();
    let poses = read_poses(ctx, &path)?;
    let model = ctx.model()?.clone();
    let (seed, cfg) = (ctx.seed, ctx.config.corruption.clone());
    cfg.validate()?;
    let out: Vec<(PoseRecord, MarkerFrame, Provenance)> = ctx.time("corrupt", |ctx| {
        ctx.par_map(&poses, |p| {
            let frame = marker_frame(&model, p)?;
            let mut rng = frame_rng(seed, p.frame_id, Stream::Corruption);
            let (params, frame, prov) = apply_pipeline(&model, &p.params, &frame, &cfg, &mut rng)?;
            Ok((PoseRecord { frame_id: p.frame_id, params }, frame, prov))
        })
    })?;
    let poses: Vec<_> = out.iter().map(|o| o.0.clone()).collect();
    let frames: Vec<_> = out.iter().map(|o| o.1.clone()).collect();
    let prov: Vec<_> = out.iter().map(|o| o.2.clone()).collect();
    ctx.write_jsonl("poses.jsonl", &poses)?;
    ctx.write_jsonl("frames.jsonl", &frames)?;
    ctx.write_jsonl("provenance.jsonl", &prov)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long, default_value_t = RESOLUTION)]
    pub resolution: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA_PX)]
    pub sigma_px: f64,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
}

#[derive(Serialize)]
struct NormalizationRecord {
    frame_id: u64,
    center: Vector3<f64>,
    scale: f64,
    labels: Vec<Option<String>>,
    clamped: Vec<usize>,
}

fn container_bytes(c: &Container) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_container(&mut buf, c)?;
    Ok(buf)
}

pub fn render(ctx: &mut Context, args: &RenderArgs) -> Result<()> {
    let path = ctx.input("frame stream")?.to_path_buf();
    let frames: Vec<MarkerFrame> = Context::read_jsonl(&path)?;
    let rendered = ctx.time("render", |ctx| {
        ctx.par_map(&frames, |f| {
            let n = normalize_frame(f, args.margin)?;
            let mut files = Vec::new();
            for view in [View::Xy, View::Yz] {
                let tag = if view == View::Xy { "xy" } else { "yz" };
                let depth = render_ortho(&n, view, args.resolution);
                files.push((format!("render/{:06}_{tag}_depth.mchm", f.frame_id), container_bytes(&Container::from_depth(&depth))?));
                let stack = HeatmapStack::encode(&n.coords, view, args.sigma_px, args.resolution)?;
                files.push((format!("render/{:06}_{tag}_heatmaps.mchm", f.frame_id), container_bytes(&Container::from_stack(&stack))?));
            }
            let record = NormalizationRecord { frame_id: f.frame_id, center: n.center, scale: n.scale, labels: n.labels, clamped: n.clamped };
            Ok((record, files))
        })
    })?;
    let mut records = Vec::with_capacity(rendered.len());
    for (record, files) in rendered {
        for (name, bytes) in files {
            ctx.write(&name, &bytes)?;
        }
        records.push(record);
    }
    ctx.write_jsonl("normalization.jsonl", &records)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// PCA pose prior (as written by `balance anchors`).
    #[arg(long)]
    pub prior: Option<std::path::PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct FitRecord {
    frame_id: u64,
    result: FitResult,
}

/// Landmark targets from a labeled frame; unknown labels (ghosts) are ignored.
fn targets(model: &BodyModel, frame: &MarkerFrame) -> Vec<Option<Vector3<f64>>> {
    let index: HashMap<String, usize> = model.landmark_labels().into_iter().enumerate().map(|(i, l)| (l, i)).collect();
    let mut t = vec![None; model.num_landmarks()];
    for (p, l) in frame.points.iter().zip(&frame.labels) {
        if let Some(&i) = l.as_ref().and_then(|l| index.get(l)) {
            t[i] = Some(*p);
        }
    }
    t
}

pub fn fit(ctx: &mut Context, args: &FitArgs) -> Result<()> {
    let path = ctx.input("frame stream")?.to_path_buf();
    let frames: Vec<MarkerFrame> = Context::read_jsonl(&path)?;
    let prior: Option<PcaAutoencoder> = match &args.prior {
        Some(p) => Some(PcaAutoencoder::from_json(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let model = ctx.model()?.clone();
    let cfg = ctx.config.fit.clone();
    cfg.validate()?;
    let results = ctx.time("fit", |ctx| {
        ctx.par_map(&frames, |f| {
            let ae = prior.as_ref().map(|a| a as &dyn Autoencoder);
            let problem = FitProblem::new(&model, ae, targets(&model, f)).with_context(|| format!("frame {}", f.frame_id))?;
            let result = fit_frame(&problem, &cfg).with_context(|| format!("fitting frame {}", f.frame_id))?;
            Ok(FitRecord { frame_id: f.frame_id, result })
        })
    })?;
    let poses: Vec<PoseRecord> = results.iter().map(|r| PoseRecord { frame_id: r.frame_id, params: r.result.params.clone() }).collect();
    ctx.write_jsonl("fits.jsonl", &results)?;
    ctx.write_jsonl("poses.jsonl", &poses)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth pose stream.
    #[arg(long)]
    pub reference: std::path::PathBuf,
    /// Generated pose stream; adds DIV and FID of its poses against the reference poses.
    #[arg(long)]
    pub generated: Option<std::path::PathBuf>,
    /// Dataset name recorded in the report.
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
}

/// Evaluation report plus the labels `report` groups rows by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub dataset: String,
    pub mode: String,
    pub report: EvalReport,
}

fn mode_name(mode: FitMode) -> &'static str {
    match mode {
        FitMode::NoiseAware => "noise-aware",
        FitMode::Plain => "plain",
        FitMode::Barron => "barron",
    }
}

pub fn eval(ctx: &mut Context, args: &EvalArgs) -> Result<()> {
    let path = ctx.input("fitted pose stream")?.to_path_buf();
    let est = read_poses(ctx, &path)?;
    let gt = read_poses(ctx, &args.reference)?;
    let by_id: HashMap<u64, &BodyParams> = gt.iter().map(|p| (p.frame_id, &p.params)).collect();
    ensure!(!est.is_empty(), "no fitted poses to evaluate");
    let mut gt_params = Vec::with_capacity(est.len());
    for e in &est {
        match by_id.get(&e.frame_id) {
            Some(p) => gt_params.push((*p).clone()),
            None => bail!("frame {} has no reference pose", e.frame_id),
        }
    }
    let est_params: Vec<BodyParams> = est.iter().map(|p| p.params.clone()).collect();
    let generated = match &args.generated {
        Some(g) => Some(read_poses(ctx, g)?.into_iter().map(|p| p.params.theta_flat()).collect::<Vec<_>>()),
        None => None,
    };
    let real: Vec<Vec<f64>> = gt.iter().map(|p| p.params.theta_flat()).collect();
    let model = ctx.model()?.clone();
    let report = ctx.time("evaluate", |_| {
        let synthesis = generated.as_deref().map(|g| SynthesisSets { real: &real, generated: g });
        Ok(EvalReport::from_params(&model, &gt_params, &est_params, synthesis)?)
    })?;
    let record = ReportRecord { dataset: args.dataset.clone(), mode: mode_name(ctx.config.fit.mode).into(), report };
    ctx.write_json("report.json", &record)?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &[(format!("{}/{}", record.dataset, record.mode), record.report.clone())])?;
    ctx.write("report.csv", &csv)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub mode: String,
    pub metric: String,
    /// Empty when the metric was not computed.
    pub value: Option<f64>,
}

pub fn report_rows(record: &ReportRecord) -> Vec<ReportRow> {
    let r = &record.report;
    let metrics: [(&str, Option<f64>); 10] = [
        ("samples", Some(r.samples as f64)),
        ("rmse", Some(r.rmse)),
        ("pck1", Some(r.pck1)),
        ("pck3", Some(r.pck3)),
        ("pck7", Some(r.pck7)),
        ("mae", Some(r.mae)),
        ("div", r.div),
        ("fid", r.fid),
        ("rmse3", Some(r.rmse3)),
        ("synthesis", r.synthesis),
    ];
    metrics
        .into_iter()
        .map(|(metric, value)| ReportRow { dataset: record.dataset.clone(), mode: record.mode.clone(), metric: metric.into(), value })
        .collect()
}

pub fn report(ctx: &mut Context) -> Result<()> {
    ensure!(!ctx.inputs.is_empty(), "report needs at least one --input report.json");
    let records: Vec<ReportRecord> = ctx.inputs.iter().map(|p| Context::read_json(p)).collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in &records {
        for row in report_rows(rec) {
            w.serialize(row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("flushing CSV: {e}"))?;
    ctx.write("report.csv", &bytes)?;
    Ok(())
}
