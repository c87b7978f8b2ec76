use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AnchorSet, Autoencoder};
use crate::error::{check_len, param, Result};

/// Below this angle (or this close to antipodal) slerp falls back to lerp.
pub const SLERP_FALLBACK_ANGLE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Blend {
    pub z: Vec<f64>,
    /// Set when the vectors were (anti)parallel and linear interpolation was used.
    pub linear_fallback: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

/// Spherical interpolation of directions with the radius interpolated
/// linearly between `|a|` and `|b|`.
pub fn slerp(a: &[f64], b: &[f64], t: f64) -> Result<Blend> {
    check_len(a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return param("slerp of a zero vector");
    }
    if t == 0.0 {
        return Ok(Blend { z: a.to_vec(), linear_fallback: false });
    }
    if t == 1.0 {
        return Ok(Blend { z: b.to_vec(), linear_fallback: false });
    }
    let cos = (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if omega < SLERP_FALLBACK_ANGLE || std::f64::consts::PI - omega < SLERP_FALLBACK_ANGLE {
        return Ok(Blend { z: lerp(a, b, t), linear_fallback: true });
    }
    let s = omega.sin();
    let (wa, wb) = (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s);
    let radius = (1.0 - t) * na + t * nb;
    let z = a.iter().zip(b).map(|(x, y)| radius * (wa * x / na + wb * y / nb)).collect();
    Ok(Blend { z, linear_fallback: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Slerp,
    Lerp,
    /// Draws from the latent Gaussian `N(0, diag(prior_std²))`, ignoring anchors.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Per-dimension jitter std around each anchor.
    pub s: Vec<f64>,
    /// Upper end of the blend factor `b ~ U(0, B)`.
    pub max_blend: f64,
    pub mode: SampleMode,
    /// Per-dimension latent std used by the random mode.
    pub prior_std: Vec<f64>,
}

impl SamplerConfig {
    /// Jitter at a tenth of the latent std and full blending range.
    pub fn from_latent_std(latent_std: &[f64], mode: SampleMode) -> Self {
        Self { s: latent_std.iter().map(|v| 0.1 * v).collect(), max_blend: 1.0, mode, prior_std: latent_std.to_vec() }
    }

    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_blend) {
            return param(format!("max blend {} outside [0, 1]", self.max_blend));
        }
        if self.s.iter().chain(&self.prior_std).any(|v| !(*v >= 0.0)) {
            return param("sampler standard deviations must be non-negative");
        }
        check_len(latent_dim, self.s.len())?;
        if self.mode == SampleMode::Random {
            check_len(latent_dim, self.prior_std.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailSample {
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    /// Anchor pair and blend factor; `None` in random mode.
    pub source: Option<(usize, usize, f64)>,
    pub linear_fallback: bool,
}

fn jitter<R: Rng + ?Sized>(anchor: &[f64], s: &[f64], rng: &mut R) -> Vec<f64> {
    anchor
        .iter()
        .zip(s)
        .map(|(&a, &sd)| if sd > 0.0 { { let n: f64 = StandardNormal.sample(rng); a + sd * n } } else { a })
        .collect()
}

/// Draws one synthetic tail pose: two distinct anchors, each jittered by
/// `N(0, s²)`, blended with `b ~ U(0, B)` and decoded.
pub fn sample_tail<R: Rng + ?Sized>(
    anchors: &AnchorSet,
    ae: &dyn Autoencoder,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<TailSample> {
    config.validate(ae.latent_dim())?;
    if config.mode == SampleMode::Random {
        let z: Vec<f64> = config
            .prior_std
            .iter()
            .map(|&sd| if sd > 0.0 { Normal::new(0.0, sd).expect("finite std").sample(rng) } else { 0.0 })
            .collect();
        return Ok(TailSample { theta: ae.decode(&z), z, source: None, linear_fallback: false });
    }
    if anchors.len() < 2 {
        return param(format!("blending needs at least two anchors, have {}", anchors.len()));
    }
    for a in &anchors.anchors {
        check_len(ae.latent_dim(), a.len())?;
    }
    let i = rng.random_range(0..anchors.len());
    let mut j = rng.random_range(0..anchors.len() - 1);
    if j >= i {
        j += 1;
    }
    let za = jitter(&anchors.anchors[i], &config.s, rng);
    let zb = jitter(&anchors.anchors[j], &config.s, rng);
    let b = if config.max_blend > 0.0 { rng.random_range(0.0..config.max_blend) } else { 0.0 };
    let (z, linear_fallback) = match config.mode {
        SampleMode::Slerp => {
            let blend = slerp(&za, &zb, b)?;
            (blend.z, blend.linear_fallback)
        }
        _ => (if b == 0.0 { za } else { lerp(&za, &zb, b) }, false),
    };
    Ok(TailSample { theta: ae.decode(&z), z, source: Some((i, j, b)), linear_fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::IdentityAutoencoder;
    use crate::rng::seeded;

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        assert_eq!(slerp(&a, &b, 0.0).unwrap().z, a);
        assert_eq!(slerp(&a, &b, 1.0).unwrap().z, b);
        let m = slerp(&a, &b, 0.5).unwrap().z;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m[0] - h).abs() < 1e-15 && (m[1] - h).abs() < 1e-15 && m[2] == 0.0);
        assert!(slerp(&a, &[0.0; 3], 0.5).is_err());
    }

    #[test]
    fn parallel_and_antipodal_fall_back() {
        let a = [1.0, 2.0];
        assert!(slerp(&a, &[2.0, 4.0], 0.3).unwrap().linear_fallback);
        assert!(slerp(&a, &[-1.0, -2.0], 0.3).unwrap().linear_fallback);
    }

    fn anchors() -> AnchorSet {
        AnchorSet { anchors: vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]], source_ids: vec![0, 1, 2], threshold: 0.0 }
    }

    #[test]
    fn degenerate_sampler_returns_an_anchor() {
        let ae = IdentityAutoencoder { dim: 2 };
        let cfg = SamplerConfig { s: vec![0.0; 2], max_blend: 0.0, mode: SampleMode::Slerp, prior_std: vec![] };
        let set = anchors();
        let mut rng = seeded(1);
        for _ in 0..20 {
            let t = sample_tail(&set, &ae, &cfg, &mut rng).unwrap();
            let (i, j, _) = t.source.unwrap();
            assert_ne!(i, j);
            assert_eq!(t.theta, set.anchors[i]);
        }
    }

    #[test]
    fn lerp_midpoint() {
        let ae = IdentityAutoencoder { dim: 2 };
        let set = AnchorSet { anchors: vec![vec![1.0, 0.0], vec![0.0, 2.0]], ..Default::default() };
        let a = lerp(&set.anchors[0], &set.anchors[1], 0.5);
        assert_eq!(a, vec![0.5, 1.0]);
        let cfg = SamplerConfig { s: vec![0.0; 2], max_blend: 1.0, mode: SampleMode::Lerp, prior_std: vec![] };
        let t = sample_tail(&set, &ae, &cfg, &mut seeded(3)).unwrap();
        let (i, j, b) = t.source.unwrap();
        assert_eq!(t.theta, lerp(&set.anchors[i], &set.anchors[j], b));
    }

    #[test]
    fn blending_needs_two_anchors() {
        let ae = IdentityAutoencoder { dim: 2 };
        let one = AnchorSet { anchors: vec![vec![1.0, 0.0]], ..Default::default() };
        let cfg = SamplerConfig::from_latent_std(&[1.0, 1.0], SampleMode::Slerp);
        assert!(sample_tail(&one, &ae, &cfg, &mut seeded(0)).is_err());
        let random = SamplerConfig::from_latent_std(&[1.0, 1.0], SampleMode::Random);
        assert!(sample_tail(&one, &ae, &random, &mut seeded(0)).is_ok());
    }
}
