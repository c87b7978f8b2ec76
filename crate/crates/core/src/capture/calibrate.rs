//! Wand calibration: closed-form initialization against the reference
//! sensor, then a joint Levenberg–Marquardt refinement of all extrinsics and
//! wand positions. Wand positions are eliminated per timestamp with a Schur
//! complement, so each iteration solves only a `6(K−1)` system.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Rig;
use crate::error::{param, Error, Result};
use crate::geometry::{centroid, kabsch, Rigid};
use crate::rotation::{rodrigues, skew};

/// Sensor-frame wand observations, indexed by timestamp.
pub type WandTrack = Vec<Option<Vector3<f64>>>;

#[derive(Debug, Clone)]
pub struct Calibration {
    /// Sensor → reference-sensor frame; the first entry is the identity.
    pub extrinsics: Vec<Rigid>,
    /// Refined wand position per timestamp, `None` where nobody saw it.
    pub wand: Vec<Option<Vector3<f64>>>,
    /// Root-mean-square 3D residual per observation.
    pub rms: f64,
    /// Sum of squared residuals after each accepted step, starting at the initialization.
    pub history: Vec<f64>,
}

const SPREAD_TOL: f64 = 1e-6;

/// Rejects point sets whose spread is (nearly) one-dimensional.
fn check_spread(points: &[Vector3<f64>], who: usize) -> Result<()> {
    let c = centroid(points);
    let cov: Matrix3<f64> = points.iter().map(|p| (p - c) * (p - c).transpose()).sum();
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= SPREAD_TOL * SPREAD_TOL * ev[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!("wand path seen by sensor {who} is collinear")));
    }
    Ok(())
}

struct Problem<'a> {
    tracks: &'a [WandTrack],
}

impl Problem<'_> {
    fn timestamps(&self) -> usize {
        self.tracks[0].len()
    }

    fn energy(&self, ext: &[Rigid], wand: &[Option<Vector3<f64>>]) -> f64 {
        let mut e = 0.0;
        for (track, t) in self.tracks.iter().zip(ext) {
            for (o, w) in track.iter().zip(wand) {
                if let (Some(o), Some(w)) = (o, w) {
                    e += (t.apply(o) - w).norm_squared();
                }
            }
        }
        e
    }

    fn best_wand(&self, ext: &[Rigid]) -> Vec<Option<Vector3<f64>>> {
        (0..self.timestamps())
            .map(|t| {
                let seen: Vec<Vector3<f64>> = self.tracks.iter().zip(ext).filter_map(|(tr, x)| tr[t].map(|o| x.apply(&o))).collect();
                (!seen.is_empty()).then(|| centroid(&seen))
            })
            .collect()
    }

    /// One damped Gauss–Newton step; returns updated extrinsics and wand.
    fn step(&self, ext: &[Rigid], wand: &[Option<Vector3<f64>>], damping: f64) -> Option<(Vec<Rigid>, Vec<Option<Vector3<f64>>>)> {
        let k = self.tracks.len();
        let nx = 6 * (k - 1);
        let mut a = DMatrix::<f64>::zeros(nx, nx);
        let mut gx = DVector::<f64>::zeros(nx);
        // Per timestamp: B_t (nx × 3), D_t = n_t I, g_t.
        let mut blocks: Vec<Option<(DMatrix<f64>, f64, Vector3<f64>)>> = Vec::with_capacity(self.timestamps());
        for (t, w) in wand.iter().enumerate() {
            let Some(w) = w else {
                blocks.push(None);
                continue;
            };
            let mut b = DMatrix::<f64>::zeros(nx, 3);
            let mut n = 0.0;
            let mut gw = Vector3::zeros();
            for (s, (track, x)) in self.tracks.iter().zip(ext).enumerate() {
                let Some(o) = track[t] else { continue };
                let ro = x.rotation * o;
                let r = ro + x.translation - w;
                n += 1.0;
                gw -= r;
                if s == 0 {
                    continue;
                }
                // ∂r/∂(δω, δt) for the update R ← exp(δω) R, t ← t + δt.
                let mut j = Matrix3x6::zeros();
                j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&ro)));
                j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
                let off = 6 * (s - 1);
                let jtj = j.transpose() * j;
                let mut view = a.view_mut((off, off), (6, 6));
                view += jtj;
                let mut gv = gx.rows_mut(off, 6);
                gv += j.transpose() * r;
                let mut bv = b.view_mut((off, 0), (6, 3));
                bv -= j.transpose();
            }
            blocks.push(Some((b, n, gw)));
        }
        let diag_floor = 1e-12 * (0..nx).map(|i| a[(i, i)]).fold(0.0, f64::max).max(1e-12);
        for i in 0..nx {
            a[(i, i)] += damping * a[(i, i)].max(diag_floor);
        }
        // Schur complement over the wand positions.
        let mut s = a;
        let mut rhs = -gx;
        for (b, n, gw) in blocks.iter().flatten() {
            let d = n * (1.0 + damping);
            s -= b * b.transpose() / d;
            rhs += b * gw / d;
        }
        let dx = s.cholesky()?.solve(&rhs);
        let mut next_ext = ext.to_vec();
        for i in 1..k {
            let d = dx.rows(6 * (i - 1), 6);
            let x = &mut next_ext[i];
            x.rotation = rodrigues(&Vector3::new(d[0], d[1], d[2])) * x.rotation;
            x.translation += Vector3::new(d[3], d[4], d[5]);
        }
        let next_wand = wand
            .iter()
            .zip(&blocks)
            .map(|(w, blk)| match (w, blk) {
                (Some(w), Some((b, n, gw))) => {
                    let d = n * (1.0 + damping);
                    let dw: Vector3<f64> = (gw - (b.transpose() * &dx).fixed_rows::<3>(0).into_owned()) / d;
                    Some(w + dw)
                }
                _ => None,
            })
            .collect();
        Some((next_ext, next_wand))
    }
}

/// Calibrates every sensor against sensor 0 from per-sensor wand tracks of
/// equal length. Each other sensor needs at least three non-collinear
/// timestamps in common with sensor 0.
pub fn calibrate_wand(tracks: &[WandTrack], max_iterations: usize) -> Result<Calibration> {
    let Some(first) = tracks.first() else {
        return param("calibration needs at least one sensor track");
    };
    if let Some(bad) = tracks.iter().find(|t| t.len() != first.len()) {
        return Err(Error::ShapeMismatch { expected: first.len(), actual: bad.len() });
    }
    let mut ext = vec![Rigid::identity()];
    for (k, track) in tracks.iter().enumerate().skip(1) {
        let (src, dst): (Vec<_>, Vec<_>) = track.iter().zip(first).filter_map(|(o, r)| Some(((*o)?, (*r)?))).unzip();
        if src.len() < 3 {
            return param(format!("sensor {k} shares only {} wand timestamps with sensor 0", src.len()));
        }
        check_spread(&dst, 0)?;
        check_spread(&src, k)?;
        ext.push(kabsch(&src, &dst)?);
    }
    let problem = Problem { tracks };
    let mut wand = problem.best_wand(&ext);
    let mut energy = problem.energy(&ext, &wand);
    let mut history = vec![energy];
    let observations: usize = tracks.iter().flatten().filter(|o| o.is_some()).count();
    if tracks.len() > 1 {
        let mut damping = 1e-4;
        for _ in 0..max_iterations {
            if energy == 0.0 {
                break;
            }
            let accepted = loop {
                if damping > 1e12 {
                    break None;
                }
                match problem.step(&ext, &wand, damping) {
                    Some((e2, w2)) => {
                        let en = problem.energy(&e2, &w2);
                        if en < energy {
                            damping = (damping / 3.0).max(1e-12);
                            break Some((e2, w2, en));
                        }
                        damping *= 4.0;
                    }
                    None => damping *= 4.0,
                }
            };
            let Some((e2, w2, en)) = accepted else { break };
            let previous = energy;
            (ext, wand, energy) = (e2, w2, en);
            history.push(energy);
            if previous - energy <= 1e-14 * previous {
                break;
            }
        }
    }
    let rms = if observations > 0 { (energy / observations as f64).sqrt() } else { 0.0 };
    Ok(Calibration { extrinsics: ext, wand, rms, history })
}

/// Wand sweep through the rig's shared view volume. Returns sensor-frame
/// tracks with isotropic Gaussian noise of `noise` meters per axis and the
/// true world positions. Samples behind a sensor are recorded as missing.
pub fn simulate_wand_tracks<R: Rng + ?Sized>(rig: &Rig, samples: usize, noise: f64, rng: &mut R) -> Result<(Vec<WandTrack>, Vec<Vector3<f64>>)> {
    if !(noise >= 0.0) {
        return param("noise must be non-negative");
    }
    let gauss = Normal::new(0.0, noise).map_err(|e| Error::Parameter(e.to_string()))?;
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let truth: Vec<Vector3<f64>> = (0..samples)
        .map(|i| {
            let s = i as f64 / samples.max(1) as f64 * std::f64::consts::TAU;
            Vector3::new(0.6 * (2.0 * s + phase[0]).sin(), 1.0 + 0.5 * (3.0 * s + phase[1]).sin(), 0.6 * (5.0 * s + phase[2]).cos())
        })
        .collect();
    let tracks = rig
        .sensors
        .iter()
        .map(|sensor| {
            truth
                .iter()
                .map(|w| {
                    let p = sensor.to_sensor(w);
                    (p.z > 0.0).then(|| p + Vector3::from_fn(|_, _| if noise > 0.0 { gauss.sample(rng) } else { 0.0 }))
                })
                .collect()
        })
        .collect();
    Ok((tracks, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::rotation::geodesic_angle;

    fn relative_truth(rig: &Rig) -> Vec<Rigid> {
        let inv = rig.sensors[0].extrinsics.inverse();
        rig.sensors.iter().map(|s| inv.compose(&s.extrinsics)).collect()
    }

    #[test]
    fn common_frame_tracks_give_identity() {
        let rig = Rig::ring(1, 2.5, 1.0, 1.0).unwrap();
        let (track, _) = simulate_wand_tracks(&rig, 50, 0.0, &mut seeded(1)).unwrap();
        let tracks = vec![track[0].clone(), track[0].clone(), track[0].clone()];
        let cal = calibrate_wand(&tracks, 50).unwrap();
        for x in &cal.extrinsics {
            assert!(geodesic_angle(&x.rotation, &Matrix3::identity()) < 1e-12);
            assert!(x.translation.norm() < 1e-12);
        }
        assert!(cal.rms < 1e-12);
    }

    #[test]
    fn noiseless_sweep_recovers_the_rig() {
        let rig = Rig::ring(3, 2.5, 1.2, 1.0).unwrap();
        let (tracks, _) = simulate_wand_tracks(&rig, 200, 0.0, &mut seeded(2)).unwrap();
        let cal = calibrate_wand(&tracks, 50).unwrap();
        for (x, t) in cal.extrinsics.iter().zip(relative_truth(&rig)) {
            assert!(geodesic_angle(&x.rotation, &t.rotation) < 1e-6);
            assert!((x.translation - t.translation).norm() < 1e-6);
        }
    }

    #[test]
    fn noisy_sweep_stays_within_millimeters() {
        let rig = Rig::ring(3, 2.5, 1.2, 1.0).unwrap();
        let (tracks, _) = simulate_wand_tracks(&rig, 200, 0.001, &mut seeded(3)).unwrap();
        let cal = calibrate_wand(&tracks, 50).unwrap();
        for (x, t) in cal.extrinsics.iter().zip(relative_truth(&rig)) {
            let err = (x.translation - t.translation).norm();
            assert!(err < 0.003, "translation error {err}");
        }
        assert!(cal.history.windows(2).all(|w| w[1] < w[0]));
        assert!(cal.history.len() > 1);
        // The residual approaches the noise floor: sqrt(3) mm scaled by the
        // fraction of degrees of freedom left after fitting.
        assert!(cal.rms < 0.002, "rms {}", cal.rms);
    }

    #[test]
    fn collinear_sweep_is_degenerate() {
        let line: WandTrack = (0..20).map(|i| Some(Vector3::new(0.1 * i as f64, 0.0, 2.0))).collect();
        let err = calibrate_wand(&[line.clone(), line], 10).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn insufficient_overlap_is_an_error() {
        let a: WandTrack = (0..6).map(|i| (i < 3).then(|| Vector3::new(i as f64, (i * i) as f64, 2.0))).collect();
        let b: WandTrack = (0..6).map(|i| (i >= 2).then(|| Vector3::new(i as f64, (i * i) as f64, 2.0))).collect();
        assert!(calibrate_wand(&[a.clone(), b], 10).is_err());
        assert!(calibrate_wand(&[a.clone(), a[..5].to_vec()], 10).is_err());
    }
}
