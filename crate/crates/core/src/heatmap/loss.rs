use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{HeatmapStack, Image};
use crate::error::{check_len, param, Result};

/// Allowed deviation of a map's total mass from 1.
pub const NORMALIZATION_TOL: f64 = 1e-6;

fn check_normalized(h: &Image) -> Result<()> {
    let s = h.sum();
    if (s - 1.0).abs() > NORMALIZATION_TOL || h.data.iter().any(|v| *v < 0.0) {
        return param(format!("heatmap is not a distribution (mass {s})"));
    }
    Ok(())
}

/// `KL(p || (p+q)/2)`. Subnormal masses are skipped: their terms are below
/// 1e-297 but halving them can underflow the mixture to zero.
fn kl_to_mixture(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a >= f64::MIN_POSITIVE).map(|(a, b)| a * (2.0 * a / (a + b)).ln()).sum()
}

/// Jensen–Shannon divergence in nats; bounded by `ln 2`.
pub fn js_divergence(a: &Image, b: &Image) -> Result<f64> {
    check_len(a.data.len(), b.data.len())?;
    check_normalized(a)?;
    check_normalized(b)?;
    Ok(0.5 * kl_to_mixture(&a.data, &b.data) + 0.5 * kl_to_mixture(&b.data, &a.data))
}

/// `1 − exp(−r²/(2ν²))`.
pub fn welsch(r: f64, nu: f64) -> f64 {
    -(-(r * r) / (2.0 * nu * nu)).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_js: f64,
    pub lambda_welsch: f64,
    pub nu: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_js: 1.0, lambda_welsch: 1.0, nu: 0.05 }
    }
}

/// Per-sample loss `ρ · Σ_l (λ_JS · JS_l + λ_w · Welsch_l)`, where `JS_l`
/// sums the divergence over both views and `Welsch_l` acts on the
/// normalized coordinate residual norm.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    gt: (&HeatmapStack, &HeatmapStack),
    est: (&HeatmapStack, &HeatmapStack),
    gt_coords: &[Vector3<f64>],
    est_coords: &[Vector3<f64>],
    relevance: f64,
    config: &LossConfig,
) -> Result<f64> {
    if !(config.nu > 0.0) {
        return param("Welsch scale must be positive");
    }
    let n = gt_coords.len();
    for len in [est_coords.len(), gt.0.len(), gt.1.len(), est.0.len(), est.1.len()] {
        check_len(n, len)?;
    }
    let mut total = 0.0;
    for l in 0..n {
        let js = js_divergence(&gt.0.maps[l], &est.0.maps[l])? + js_divergence(&gt.1.maps[l], &est.1.maps[l])?;
        let w = welsch((gt_coords[l] - est_coords[l]).norm(), config.nu);
        total += config.lambda_js * js + config.lambda_welsch * w;
    }
    Ok(relevance * total)
}
