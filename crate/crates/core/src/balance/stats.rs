use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, param, Result};

/// Mean distance between paired samples of two equal-size subsets.
pub fn div_metric(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return param("diversity needs non-empty subsets");
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        check_len(x.len(), y.len())?;
        total += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    }
    Ok(total / a.len() as f64)
}

fn moments(x: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.len() < 2 {
        return param("Fréchet distance needs at least two samples per set");
    }
    let d = x[0].len();
    let mut mean = DVector::zeros(d);
    for v in x {
        check_len(d, v.len())?;
        mean += DVector::from_column_slice(v);
    }
    mean /= x.len() as f64;
    let mut cov = DMatrix::zeros(d, d);
    for v in x {
        let c = DVector::from_column_slice(v) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (x.len() - 1) as f64;
    Ok((mean, cov))
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// from round-off are clipped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.amax().max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&l| l < -1e-9 * scale) {
        warn!("clipping negative eigenvalues in covariance square root");
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Gaussian Fréchet distance `||μ₁−μ₂||² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^½)`.
pub fn fid_metric(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    let (m1, s1) = moments(real)?;
    let (m2, s2) = moments(fake)?;
    check_len(m1.len(), m2.len())?;
    // Tr((Σ₁Σ₂)^½) = Tr((Σ₁^½ Σ₂ Σ₁^½)^½), whose argument is symmetric.
    let r1 = psd_sqrt(&s1);
    let cross = psd_sqrt(&(&r1 * &s2 * &r1)).trace();
    Ok(((m1 - m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross).max(0.0))
}
