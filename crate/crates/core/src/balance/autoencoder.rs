use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, param, Result};

/// Pose autoencoder: `θ → z → θ‡`.
///
/// `decode_vjp` pulls a pose-space gradient back into latent space; the
/// fitter uses it to optimize the latent code directly.
pub trait Autoencoder: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn pose_dim(&self) -> usize;
    fn encode(&self, theta: &[f64]) -> Vec<f64>;
    fn decode(&self, z: &[f64]) -> Vec<f64>;
    fn decode_vjp(&self, z: &[f64], grad_theta: &[f64]) -> Vec<f64>;

    fn reconstruct(&self, theta: &[f64]) -> Vec<f64> {
        self.decode(&self.encode(theta))
    }
}

/// Passes poses through unchanged.
#[derive(Debug, Clone, Copy)]
pub struct IdentityAutoencoder {
    pub dim: usize,
}

impl Autoencoder for IdentityAutoencoder {
    fn latent_dim(&self) -> usize {
        self.dim
    }
    fn pose_dim(&self) -> usize {
        self.dim
    }
    fn encode(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }
    fn decode(&self, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }
    fn decode_vjp(&self, _z: &[f64], grad_theta: &[f64]) -> Vec<f64> {
        grad_theta.to_vec()
    }
}

/// Returns the same pose for every input.
#[derive(Debug, Clone)]
pub struct ConstantAutoencoder {
    pub pose: Vec<f64>,
}

impl Autoencoder for ConstantAutoencoder {
    fn latent_dim(&self) -> usize {
        1
    }
    fn pose_dim(&self) -> usize {
        self.pose.len()
    }
    fn encode(&self, _theta: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn decode(&self, _z: &[f64]) -> Vec<f64> {
        self.pose.clone()
    }
    fn decode_vjp(&self, _z: &[f64], _grad_theta: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

/// Linear principal-components autoencoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaAutoencoder {
    pub mean: Vec<f64>,
    /// Z rows of length D, orthonormal, by descending explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaAutoencoder {
    fn component_matrix(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        DMatrix::from_row_iterator(self.components.len(), d, self.components.iter().flatten().copied())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pca: Self = serde_json::from_str(text)?;
        for c in &pca.components {
            check_len(pca.mean.len(), c.len())?;
        }
        check_len(pca.components.len(), pca.explained_variance.len())?;
        Ok(pca)
    }
}

impl Autoencoder for PcaAutoencoder {
    fn latent_dim(&self) -> usize {
        self.components.len()
    }

    fn pose_dim(&self) -> usize {
        self.mean.len()
    }

    fn encode(&self, theta: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(theta.iter().zip(&self.mean)).map(|(w, (t, m))| w * (t - m)).sum())
            .collect()
    }

    fn decode(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &zi) in self.components.iter().zip(z) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += w * zi;
            }
        }
        out
    }

    fn decode_vjp(&self, _z: &[f64], grad_theta: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.iter().zip(grad_theta).map(|(w, g)| w * g).sum()).collect()
    }
}

/// Relative eigenvalue floor below which a direction counts as rank deficient.
const RANK_TOL: f64 = 1e-12;

/// Fits a PCA autoencoder with `latent_dim` components; rank-deficient data
/// keeps only the available components (logged as a warning).
pub fn fit_pca(dataset: &[Vec<f64>], latent_dim: usize) -> Result<PcaAutoencoder> {
    let n = dataset.len();
    if n <= latent_dim {
        return param(format!("PCA needs more samples ({n}) than components ({latent_dim})"));
    }
    let d = dataset[0].len();
    if d == 0 {
        return param("PCA input has zero dimension");
    }
    for row in dataset {
        check_len(d, row.len())?;
    }
    if latent_dim > d {
        return param(format!("latent dimension {latent_dim} exceeds pose dimension {d}"));
    }
    let data = DMatrix::from_row_iterator(n, d, dataset.iter().flatten().copied());
    let mean: DVector<f64> = data.row_mean().transpose();
    let mut centered = data;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut components = Vec::with_capacity(latent_dim);
    let mut explained = Vec::with_capacity(latent_dim);
    for &k in order.iter().take(latent_dim) {
        let lambda = eig.eigenvalues[k];
        if top == 0.0 || lambda <= RANK_TOL * top {
            log::warn!("PCA data is rank deficient: keeping {} of {latent_dim} components", components.len());
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Deterministic sign: largest-magnitude entry positive.
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained.push(lambda);
    }
    Ok(PcaAutoencoder { mean: mean.iter().copied().collect(), components, explained_variance: explained })
}

impl PcaAutoencoder {
    /// Per-dimension standard deviation of the latent codes (sqrt of explained variance).
    pub fn latent_std(&self) -> Vec<f64> {
        self.explained_variance.iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Orthonormality defect `max |C Cᵀ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let c = self.component_matrix();
        let g = &c * c.transpose();
        (g - DMatrix::identity(c.nrows(), c.nrows())).amax()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_subspace_data(n: usize, d: usize, rank: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis: Vec<Vec<f64>> = (0..rank).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        (0..n)
            .map(|_| {
                let coef: Vec<f64> = (0..rank).map(|_| rng.random_range(-2.0..2.0)).collect();
                (0..d).map(|j| offset[j] + (0..rank).map(|k| coef[k] * basis[k][j]).sum::<f64>()).collect()
            })
            .collect()
    }

    #[test]
    fn subspace_data_reconstructs_exactly() {
        let data = random_subspace_data(50, 9, 3, 1);
        let pca = fit_pca(&data, 3).unwrap();
        for x in &data {
            let r = pca.reconstruct(x);
            assert!(x.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn full_dimension_is_identity() {
        let data = random_subspace_data(40, 6, 6, 2);
        let pca = fit_pca(&data, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let r = pca.reconstruct(&x);
        assert!(x.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(pca.orthonormality_error() < 1e-12);
    }

    #[test]
    fn rank_deficiency_keeps_available_components() {
        let data = random_subspace_data(30, 8, 2, 4);
        let pca = fit_pca(&data, 5).unwrap();
        assert_eq!(pca.latent_dim(), 2);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let data = random_subspace_data(3, 4, 2, 5);
        assert!(fit_pca(&data, 3).is_err());
    }

    #[test]
    fn decode_vjp_is_transpose_of_decode() {
        let data = random_subspace_data(40, 6, 6, 6);
        let pca = fit_pca(&data, 4).unwrap();
        let z = vec![0.1, -0.2, 0.3, 0.05];
        let g = vec![1.0, 0.5, -0.5, 2.0, 0.0, -1.0];
        let vjp = pca.decode_vjp(&z, &g);
        for k in 0..4 {
            let h = 1e-6;
            let mut zp = z.clone();
            zp[k] += h;
            let mut zm = z.clone();
            zm[k] -= h;
            let fd: f64 = pca.decode(&zp).iter().zip(pca.decode(&zm)).zip(&g).map(|((a, b), gi)| (a - b) / (2.0 * h) * gi).sum();
            assert!((fd - vjp[k]).abs() < 1e-8);
        }
    }
}
