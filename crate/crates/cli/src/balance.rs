use anyhow::{ensure, Result};
use clap::{Subcommand, ValueEnum};
use serde::Serialize;

use mocap_core::balance::fixture::LongTailFixture;
use mocap_core::balance::{
    fit_pca, reconstruction_error, relevance, sample_tail, select_anchors, PcaAutoencoder, RelevanceConfig, RelevanceVariant, SampleMode, SamplerConfig,
};
use mocap_core::model::{BodyModel, BodyParams, PoseRecord, RootTransform};
use mocap_core::rng::{frame_rng, Stream};

use crate::context::Context;

#[derive(Subcommand, Debug)]
pub enum BalanceAction {
    /// Write a synthetic long-tailed pose set.
    Fixture {
        #[arg(long, default_value_t = 400)]
        count: usize,
    },
    /// Fit a PCA pose prior and select tail anchors.
    Anchors {
        #[arg(long, default_value_t = 2)]
        latent: usize,
        /// Anchor threshold: mean + c·std of the reconstruction error.
        #[arg(long, default_value_t = 2.0)]
        c: f64,
    },
    /// Generate poses by blending jittered anchors.
    Sample {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, value_enum, default_value = "slerp")]
        sampler: SamplerArg,
        #[arg(long, default_value_t = 2)]
        latent: usize,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
    },
    /// Per-pose reconstruction error and relevance weight.
    Relevance {
        #[arg(long, value_enum, default_value = "exp1p")]
        variant: VariantArg,
        #[arg(long, default_value_t = 2)]
        latent: usize,
    },
}

impl BalanceAction {
    pub fn name(&self) -> &'static str {
        match self {
            BalanceAction::Fixture { .. } => "fixture",
            BalanceAction::Anchors { .. } => "anchors",
            BalanceAction::Sample { .. } => "sample",
            BalanceAction::Relevance { .. } => "relevance",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SamplerArg {
    Slerp,
    Lerp,
    Random,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum VariantArg {
    Exp1p,
    Sigmoid,
    ExpClamped,
}

fn pose(model: &BodyModel, frame_id: u64, theta: &[f64]) -> Result<PoseRecord> {
    let params = BodyParams { theta: BodyParams::theta_from_flat(theta)?, root: RootTransform::identity(), ..BodyParams::rest(model) };
    params.validate(model)?;
    Ok(PoseRecord { frame_id, params })
}

struct Dataset {
    thetas: Vec<Vec<f64>>,
    ids: Vec<u64>,
    beta: Vec<f64>,
}

/// Pose vectors of the input stream. Errors are measured at zero shape so
/// that only the pose contributes.
fn dataset(ctx: &mut Context) -> Result<Dataset> {
    let path = ctx.input("pose stream")?.to_path_buf();
    let poses: Vec<PoseRecord> = Context::read_jsonl(&path)?;
    ensure!(!poses.is_empty(), "{} holds no poses", path.display());
    let model = ctx.model()?;
    for p in &poses {
        p.params.validate(model)?;
    }
    Ok(Dataset {
        thetas: poses.iter().map(|p| p.params.theta_flat()).collect(),
        ids: poses.iter().map(|p| p.frame_id).collect(),
        beta: vec![0.0; model.num_shapes()],
    })
}

fn prior(ctx: &mut Context, data: &Dataset, latent: usize) -> Result<PcaAutoencoder> {
    ctx.time("pca", |_| Ok(fit_pca(&data.thetas, latent)?))
}

#[derive(Serialize)]
struct RelevanceRecord {
    frame_id: u64,
    error: f64,
    relevance: f64,
}

pub fn run(ctx: &mut Context, action: &BalanceAction) -> Result<()> {
    match *action {
        BalanceAction::Fixture { count } => {
            let model = ctx.model()?.clone();
            let seed = ctx.seed;
            let fixture = ctx.time("fixture", |_| Ok(LongTailFixture::build(&model, count, seed)?))?;
            let poses = fixture.poses.iter().enumerate().map(|(i, t)| pose(&model, i as u64, t)).collect::<Result<Vec<_>>>()?;
            ctx.write_jsonl("poses.jsonl", &poses)?;
        }
        BalanceAction::Anchors { latent, c } => {
            let data = dataset(ctx)?;
            let ae = prior(ctx, &data, latent)?;
            let model = ctx.model()?.clone();
            let (anchors, _) = ctx.time("anchors", |_| Ok(select_anchors(&data.thetas, &ae, &model, &data.beta, c)?))?;
            ctx.write("ae.json", ae.to_json()?.as_bytes())?;
            ctx.write_json("anchors.json", &anchors)?;
        }
        BalanceAction::Sample { count, sampler, latent, c } => {
            let data = dataset(ctx)?;
            let ae = prior(ctx, &data, latent)?;
            let model = ctx.model()?.clone();
            let (anchors, _) = select_anchors(&data.thetas, &ae, &model, &data.beta, c)?;
            let mode = match sampler {
                SamplerArg::Slerp => SampleMode::Slerp,
                SamplerArg::Lerp => SampleMode::Lerp,
                SamplerArg::Random => SampleMode::Random,
            };
            let cfg = SamplerConfig::from_latent_std(&ae.latent_std(), mode);
            let seed = ctx.seed;
            let ids: Vec<u64> = (0..count as u64).collect();
            let poses = ctx.time("sample", |ctx| {
                ctx.par_map(&ids, |&i| {
                    let s = sample_tail(&anchors, &ae, &cfg, &mut frame_rng(seed, i, Stream::Sampling))?;
                    pose(&model, i, &s.theta)
                })
            })?;
            ctx.write_jsonl("poses.jsonl", &poses)?;
        }
        BalanceAction::Relevance { variant, latent } => {
            let data = dataset(ctx)?;
            let ae = prior(ctx, &data, latent)?;
            let model = ctx.model()?.clone();
            let errors = ctx.time("errors", |ctx| {
                ctx.par_map(&data.thetas, |t| Ok(reconstruction_error(&model, &ae, t, &data.beta)?))
            })?;
            let variant = match variant {
                VariantArg::Exp1p => RelevanceVariant::Exp1p,
                VariantArg::Sigmoid => RelevanceVariant::Sigmoid,
                VariantArg::ExpClamped => RelevanceVariant::ExpClamped,
            };
            let cfg = RelevanceConfig::calibrated(variant, &errors)?;
            let records: Vec<RelevanceRecord> = data
                .ids
                .iter()
                .zip(&errors)
                .map(|(&frame_id, &error)| RelevanceRecord { frame_id, error, relevance: relevance(error, &cfg) })
                .collect();
            ctx.write_jsonl("relevance.jsonl", &records)?;
        }
    }
    Ok(())
}
