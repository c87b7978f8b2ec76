//! Synthetic long-tailed pose dataset.
//!
//! Most poses vary along two dominant directions; a small fraction is
//! displaced along a handful of rare directions. A low-rank PCA fit to the
//! whole set reconstructs the bulk and fails on the tail, which makes the
//! tail the natural anchor set.
//!
//! A linear autoencoder reproduces its own decoded outputs exactly, so the
//! error of generated poses is measured with the low-rank *evaluator* while
//! poses are generated with a richer *generator* PCA that still represents
//! the rare directions.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{fit_pca, reconstruction_error, sample_tail, select_anchors, AnchorSet, PcaAutoencoder, SampleMode, SamplerConfig};
use crate::error::Result;
use crate::model::BodyModel;
use crate::rng::seeded;

pub struct LongTailFixture {
    pub poses: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub evaluator: PcaAutoencoder,
    pub generator: PcaAutoencoder,
    pub anchors: AnchorSet,
    pub errors: Vec<f64>,
}

pub const BULK_DIRECTIONS: usize = 2;
pub const TAIL_DIRECTIONS: usize = 4;

impl LongTailFixture {
    /// `n` poses, 5 % in the tail.
    pub fn build(model: &BodyModel, n: usize, seed: u64) -> Result<Self> {
        let d = 3 * model.num_joints();
        let mut rng = seeded(seed);
        let dirs = orthonormal_directions(d, BULK_DIRECTIONS + TAIL_DIRECTIONS, &mut rng);
        let bulk = Normal::new(0.0, 0.3).expect("valid std");
        let noise = Normal::new(0.0, 0.01).expect("valid std");
        let poses: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut p: DVector<f64> = DVector::from_fn(d, |_, _| noise.sample(&mut rng));
                for u in &dirs[..BULK_DIRECTIONS] {
                    p += u * bulk.sample(&mut rng);
                }
                if i % 20 == 19 {
                    let k = rng.random_range(0..TAIL_DIRECTIONS);
                    p += &dirs[BULK_DIRECTIONS + k] * rng.random_range(0.7..0.9);
                }
                p.as_slice().to_vec()
            })
            .collect();
        let beta = vec![0.0; model.num_shapes()];
        let evaluator = fit_pca(&poses, BULK_DIRECTIONS)?;
        let generator = fit_pca(&poses, BULK_DIRECTIONS + TAIL_DIRECTIONS + 2)?;
        let (mut anchors, errors) = select_anchors(&poses, &evaluator, model, &beta, 2.0)?;
        // Anchors live in the generator's latent space.
        anchors.anchors = anchors.source_ids.iter().map(|&i| super::Autoencoder::encode(&generator, &poses[i])).collect();
        Ok(Self { poses, beta, evaluator, generator, anchors, errors })
    }

    pub fn sampler(&self, mode: SampleMode) -> SamplerConfig {
        SamplerConfig::from_latent_std(&self.generator.latent_std(), mode)
    }

    /// Mean evaluator error of `count` generated poses.
    pub fn mean_sample_error(&self, model: &BodyModel, mode: SampleMode, count: usize, seed: u64) -> Result<f64> {
        let cfg = self.sampler(mode);
        let mut rng = seeded(seed);
        let mut total = 0.0;
        for _ in 0..count {
            let s = sample_tail(&self.anchors, &self.generator, &cfg, &mut rng)?;
            total += reconstruction_error(model, &self.evaluator, &s.theta, &self.beta)?;
        }
        Ok(total / count as f64)
    }
}

fn orthonormal_directions<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        for u in &out {
            v -= u * u.dot(&v);
        }
        let n = v.norm();
        if n > 1e-6 {
            out.push(v / n);
        }
    }
    out
}
