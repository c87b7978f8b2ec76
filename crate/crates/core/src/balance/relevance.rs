use log::warn;
use serde::{Deserialize, Serialize};

use super::Autoencoder;
use crate::error::{check_len, param, Error, Result};
use crate::model::{BodyModel, BodyParams, RootTransform};

/// Mean joint displacement between a pose and its reconstruction, after
/// scaling each joint set by its own bounding-box diagonal:
/// `ε = √((1/J) Σ_j ||ℓ̄_j − ℓ̄‡_j||)`.
pub fn reconstruction_error(model: &BodyModel, ae: &dyn Autoencoder, theta: &[f64], beta: &[f64]) -> Result<f64> {
    check_len(ae.pose_dim(), theta.len())?;
    if theta.iter().any(|t| !t.is_finite()) {
        return param("pose contains non-finite values");
    }
    let rec = ae.reconstruct(theta);
    let a = normalized_joints(model, theta, beta)?;
    let b = normalized_joints(model, &rec, beta)?;
    let mean = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64;
    Ok(mean.sqrt())
}

fn normalized_joints(model: &BodyModel, theta: &[f64], beta: &[f64]) -> Result<Vec<nalgebra::Vector3<f64>>> {
    let params = BodyParams { beta: beta.to_vec(), theta: BodyParams::theta_from_flat(theta)?, root: RootTransform::identity() };
    let joints = model.landmarks_for(&params)?.joints();
    if joints.is_empty() {
        return param("model has no joint landmarks");
    }
    let diag = bbox_diagonal(&joints);
    if !(diag > 0.0) {
        return Err(Error::Degenerate("joint bounding box has zero diagonal".into()));
    }
    Ok(joints.into_iter().map(|j| j / diag).collect())
}

pub fn bbox_diagonal(points: &[nalgebra::Vector3<f64>]) -> f64 {
    let lo = points.iter().fold(nalgebra::Vector3::repeat(f64::INFINITY), |m, p| m.inf(p));
    let hi = points.iter().fold(nalgebra::Vector3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
    (hi - lo).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceVariant {
    /// `1 + exp(ε/σ)`, range `[2, ∞)`.
    Exp1p,
    /// `1 + 2(sigmoid(ε/σ) − ½)`, range `[1, 2)`.
    Sigmoid,
    /// `min(exp(ε/σ), clamp_max)`, range `[1, clamp_max]`.
    ExpClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceConfig {
    pub variant: RelevanceVariant,
    pub sigma: f64,
    pub clamp_max: f64,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        Self { variant: RelevanceVariant::Exp1p, sigma: 1.0, clamp_max: 3.0 }
    }
}

impl RelevanceConfig {
    /// Scale set to the mean reconstruction error of a dataset, so `ε/σ` is scale-free.
    pub fn calibrated(variant: RelevanceVariant, errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return param("cannot calibrate relevance on an empty dataset");
        }
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        if !(mean > 0.0) {
            return param("mean reconstruction error is zero; relevance scale undefined");
        }
        Ok(Self { variant, sigma: mean, ..Default::default() })
    }
}

pub fn relevance(epsilon: f64, config: &RelevanceConfig) -> f64 {
    let x = epsilon / config.sigma;
    match config.variant {
        RelevanceVariant::Exp1p => 1.0 + x.exp(),
        // 1 + 2(eˣ/(eˣ+1) − ½) = 1 + tanh(x/2), which stays finite for large x.
        RelevanceVariant::Sigmoid => 1.0 + (0.5 * x).tanh(),
        RelevanceVariant::ExpClamped => x.exp().min(config.clamp_max),
    }
}

/// Latent codes of the dataset's tail poses.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<Vec<f64>>,
    /// Dataset index of each anchor.
    pub source_ids: Vec<usize>,
    pub threshold: f64,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Poses whose reconstruction error exceeds `mean + c·std` (strictly).
/// Duplicate codes are kept once. Returns the errors alongside.
pub fn select_anchors(
    dataset: &[Vec<f64>],
    ae: &dyn Autoencoder,
    model: &BodyModel,
    beta: &[f64],
    c: f64,
) -> Result<(AnchorSet, Vec<f64>)> {
    if dataset.is_empty() {
        return param("anchor selection needs a non-empty dataset");
    }
    let errors = dataset.iter().map(|t| reconstruction_error(model, ae, t, beta)).collect::<Result<Vec<_>>>()?;
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = if c == f64::NEG_INFINITY { f64::NEG_INFINITY } else { mean + c * std };

    let mut set = AnchorSet { threshold, ..Default::default() };
    for (i, e) in errors.iter().enumerate() {
        if *e > threshold {
            let z = ae.encode(&dataset[i]);
            if !set.anchors.contains(&z) {
                set.anchors.push(z);
                set.source_ids.push(i);
            }
        }
    }
    if set.is_empty() {
        warn!("no pose exceeds the anchor threshold {threshold:.6}");
    }
    Ok((set, errors))
}
