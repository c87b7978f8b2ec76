//! Evaluation metrics and model-selection indicators.
//!
//! Positions are in meters. The report converts distances to millimeters
//! before applying the formulas, so `EvalReport::rmse` is the RMSE formula
//! evaluated on millimeter distances.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::balance::{div_metric, fid_metric};
use crate::error::{check_len, param, Error, Result};
use crate::model::{BodyModel, BodyParams};
use crate::rotation::{geodesic_angle, is_rotation};

/// PCK thresholds in meters: 10, 30 and 70 mm.
pub const PCK_TAUS: [f64; 3] = [0.01, 0.03, 0.07];
const ROTATION_TOL: f64 = 1e-6;

fn check_sets<T>(gt: &[Vec<T>], est: &[Vec<T>]) -> Result<()> {
    check_len(gt.len(), est.len())?;
    if gt.is_empty() {
        return param("metrics need at least one sample");
    }
    for (g, e) in gt.iter().zip(est) {
        check_len(g.len(), e.len())?;
        if g.is_empty() {
            return param("every sample needs at least one joint");
        }
    }
    Ok(())
}

fn per_sample_mean(gt: &[Vec<Vector3<f64>>], est: &[Vec<Vector3<f64>>], f: impl Fn(f64) -> f64) -> Vec<f64> {
    gt.iter().zip(est).map(|(g, e)| g.iter().zip(e).map(|(a, b)| f((a - b).norm())).sum::<f64>() / g.len() as f64).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(1/N) Σ_n sqrt((1/J) Σ_j ‖gt − est‖)`: the per-joint distances are
/// averaged, square-rooted per sample, then averaged over samples.
pub fn rmse(gt: &[Vec<Vector3<f64>>], est: &[Vec<Vector3<f64>>]) -> Result<f64> {
    check_sets(gt, est)?;
    Ok(mean(&per_sample_mean(gt, est, |d| d).into_iter().map(f64::sqrt).collect::<Vec<_>>()))
}

/// Percentage of joints strictly closer than `tau`, averaged per sample and
/// then over samples.
pub fn pck(gt: &[Vec<Vector3<f64>>], est: &[Vec<Vector3<f64>>], tau: f64) -> Result<f64> {
    check_sets(gt, est)?;
    if !(tau > 0.0) {
        return param("PCK threshold must be positive");
    }
    Ok(100.0 * mean(&per_sample_mean(gt, est, |d| if d < tau { 1.0 } else { 0.0 })))
}

/// Mean geodesic angle in degrees over samples and joints.
pub fn mae_geodesic(gt: &[Vec<Matrix3<f64>>], est: &[Vec<Matrix3<f64>>]) -> Result<f64> {
    check_sets(gt, est)?;
    let mut per_sample = Vec::with_capacity(gt.len());
    for (g, e) in gt.iter().zip(est) {
        let mut sum = 0.0;
        for (a, b) in g.iter().zip(e) {
            if !is_rotation(a, ROTATION_TOL) || !is_rotation(b, ROTATION_TOL) {
                return Err(Error::Parameter("geodesic error needs rotation matrices".into()));
            }
            sum += geodesic_angle(a, b);
        }
        per_sample.push(sum / g.len() as f64);
    }
    Ok(mean(&per_sample).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indicators {
    /// `(1 − PCK3) · RMSE`, PCK3 as a fraction.
    pub rmse3: f64,
    /// `FID / DIV`; `None` when DIV is zero or either is missing.
    pub synthesis: Option<f64>,
}

pub fn indicators(rmse: f64, pck3_percent: f64, div: Option<f64>, fid: Option<f64>) -> Indicators {
    let synthesis = match (fid, div) {
        (Some(f), Some(d)) if d != 0.0 => Some(f / d),
        (Some(_), Some(_)) => {
            log::warn!("DIV is zero; the synthesis indicator is undefined");
            None
        }
        _ => None,
    };
    Indicators { rmse3: (1.0 - pck3_percent / 100.0) * rmse, synthesis }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Millimeter distances.
    pub rmse: f64,
    pub pck1: f64,
    pub pck3: f64,
    pub pck7: f64,
    /// Degrees.
    pub mae: f64,
    pub div: Option<f64>,
    pub fid: Option<f64>,
    pub rmse3: f64,
    pub synthesis: Option<f64>,
}

/// Pose samples as flat feature vectors, for DIV and FID.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisSets<'a> {
    pub real: &'a [Vec<f64>],
    pub generated: &'a [Vec<f64>],
}

impl EvalReport {
    pub fn compute(
        gt_joints: &[Vec<Vector3<f64>>],
        est_joints: &[Vec<Vector3<f64>>],
        gt_rotations: &[Vec<Matrix3<f64>>],
        est_rotations: &[Vec<Matrix3<f64>>],
        synthesis: Option<SynthesisSets<'_>>,
    ) -> Result<Self> {
        check_len(gt_joints.len(), gt_rotations.len())?;
        let mm = |sets: &[Vec<Vector3<f64>>]| -> Vec<Vec<Vector3<f64>>> { sets.iter().map(|s| s.iter().map(|p| p * 1000.0).collect()).collect() };
        let rmse = rmse(&mm(gt_joints), &mm(est_joints))?;
        let [pck1, pck3, pck7] = [0, 1, 2].map(|i| pck(gt_joints, est_joints, PCK_TAUS[i]));
        let (pck1, pck3, pck7) = (pck1?, pck3?, pck7?);
        let mae = mae_geodesic(gt_rotations, est_rotations)?;
        let (div, fid) = match synthesis {
            Some(s) => (Some(div_metric(s.real, s.generated)?), Some(fid_metric(s.real, s.generated)?)),
            None => (None, None),
        };
        let ind = indicators(rmse, pck3, div, fid);
        Ok(Self { samples: gt_joints.len(), rmse, pck1, pck3, pck7, mae, div, fid, rmse3: ind.rmse3, synthesis: ind.synthesis })
    }

    /// Evaluates fitted parameters against ground truth through the model's
    /// posed joints and global joint rotations.
    pub fn from_params(model: &BodyModel, gt: &[BodyParams], est: &[BodyParams], synthesis: Option<SynthesisSets<'_>>) -> Result<Self> {
        check_len(gt.len(), est.len())?;
        let joints = |ps: &[BodyParams]| ps.iter().map(|p| model.posed_joints(p)).collect::<Result<Vec<_>>>();
        let rots = |ps: &[BodyParams]| ps.iter().map(|p| model.global_rotations(p)).collect::<Result<Vec<_>>>();
        Self::compute(&joints(gt)?, &joints(est)?, &rots(gt)?, &rots(est)?, synthesis)
    }
}

/// Writes one CSV row per named report; absent values are empty cells.
pub fn write_csv(w: impl Write, reports: &[(String, EvalReport)]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        name: &'a str,
        samples: usize,
        rmse: f64,
        pck1: f64,
        pck3: f64,
        pck7: f64,
        mae: f64,
        div: Option<f64>,
        fid: Option<f64>,
        rmse3: f64,
        synthesis: Option<f64>,
    }
    let mut writer = csv::Writer::from_writer(w);
    for (name, r) in reports {
        let row = Row {
            name,
            samples: r.samples,
            rmse: r.rmse,
            pck1: r.pck1,
            pck3: r.pck3,
            pck7: r.pck7,
            mae: r.mae,
            div: r.div,
            fid: r.fid,
            rmse3: r.rmse3,
            synthesis: r.synthesis,
        };
        writer.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
