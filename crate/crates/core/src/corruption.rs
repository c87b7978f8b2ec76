//! Training-time augmentation of body parameters and corruption of marker
//! frames: shape shifting, left/right flipping, occlusion, ghost markers and
//! marker shifting, each gated by its own Bernoulli draw.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::model::{BodyModel, BodyParams, LandmarkKind, LandmarkSet};

/// Jitter added to a singular ghost covariance.
pub const GHOST_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub p_shape_aug: f64,
    pub p_flip: f64,
    pub p_occlude: f64,
    pub p_ghost: f64,
    pub p_shift: f64,
    /// Inclusive range of occluded marker counts.
    pub occlude_range: [usize; 2],
    pub ghost_count_range: [usize; 2],
    /// Per-axis shift bound in meters.
    pub shift_max: f64,
    /// Inclusive range of shifted marker counts.
    pub shift_count_range: [usize; 2],
    /// Inclusive range of resampled shape coefficients.
    pub shape_shift_coeffs: [usize; 2],
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            p_shape_aug: 0.5,
            p_flip: 0.5,
            p_occlude: 0.7,
            p_ghost: 0.7,
            p_shift: 0.8,
            occlude_range: [1, 5],
            ghost_count_range: [1, 3],
            shift_max: 0.05,
            shift_count_range: [1, 10],
            shape_shift_coeffs: [0, 2],
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_shape_aug, self.p_flip, self.p_occlude, self.p_ghost, self.p_shift];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return param("corruption probabilities must lie in [0, 1]");
        }
        for (name, [lo, hi]) in [
            ("occlude_range", self.occlude_range),
            ("ghost_count_range", self.ghost_count_range),
            ("shift_count_range", self.shift_count_range),
            ("shape_shift_coeffs", self.shape_shift_coeffs),
        ] {
            if lo > hi {
                return param(format!("{name} [{lo}, {hi}] is empty"));
            }
        }
        if !(self.shift_max > 0.0 && self.shift_max.is_finite()) {
            return param("shift_max must be positive");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

/// Unordered marker observations; ghosts carry no label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarkerFrame {
    pub frame_id: u64,
    pub points: Vec<Vector3<f64>>,
    pub labels: Vec<Option<String>>,
}

impl MarkerFrame {
    pub fn new(frame_id: u64, points: Vec<Vector3<f64>>, labels: Vec<Option<String>>) -> Result<Self> {
        let f = Self { frame_id, points, labels };
        f.validate()?;
        Ok(f)
    }

    /// The marker landmarks of `set`, labeled by name.
    pub fn from_landmarks(frame_id: u64, set: &LandmarkSet) -> Self {
        let (points, labels) = set
            .of_kind(LandmarkKind::Marker)
            .map(|(i, p)| (*p, Some(set.labels[i].clone())))
            .unzip();
        Self { frame_id, points, labels }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.labels.len() {
            return Err(Error::ShapeMismatch { expected: self.points.len(), actual: self.labels.len() });
        }
        let mut seen = HashSet::new();
        for l in self.labels.iter().flatten() {
            if !seen.insert(l) {
                return param(format!("duplicate label {l} in frame {}", self.frame_id));
            }
        }
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return param(format!("frame {} has non-finite points", self.frame_id));
        }
        Ok(())
    }

    /// Position of the point labeled `label`.
    pub fn find(&self, label: &str) -> Option<Vector3<f64>> {
        self.labels.iter().position(|l| l.as_deref() == Some(label)).map(|i| self.points[i])
    }

    fn remove_indices(&mut self, removed: &[usize]) {
        fn retain<T>(v: &mut Vec<T>, drop: &HashSet<usize>) {
            let mut k = 0;
            v.retain(|_| {
                k += 1;
                !drop.contains(&(k - 1))
            });
        }
        let drop: HashSet<usize> = removed.iter().copied().collect();
        retain(&mut self.points, &drop);
        retain(&mut self.labels, &drop);
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame_id: u64,
    points: Vec<[f64; 3]>,
    labels: Vec<Option<String>>,
}

impl Serialize for MarkerFrame {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FrameRecord {
            frame_id: self.frame_id,
            points: self.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            labels: self.labels.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MarkerFrame {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = FrameRecord::deserialize(d)?;
        let frame = MarkerFrame {
            frame_id: r.frame_id,
            points: r.points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
            labels: r.labels,
        };
        frame.validate().map_err(serde::de::Error::custom)?;
        Ok(frame)
    }
}

/// Reads a line-delimited frame stream; blank lines are skipped.
pub fn read_frames(reader: impl BufRead) -> Result<Vec<MarkerFrame>> {
    crate::jsonl::read(reader).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("frame stream {m}")),
        e => e,
    })
}

pub fn write_frames(writer: impl Write, frames: &[MarkerFrame]) -> Result<()> {
    crate::jsonl::write(writer, frames)
}

fn uniform_count<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [usize; 2]) -> usize {
    rng.random_range(lo..=hi)
}

/// `β + u`, then the coefficients in `resampled` replaced by the given values.
pub fn shift_shape(beta: &[f64], u: &[f64], resampled: &[(usize, f64)]) -> Result<Vec<f64>> {
    if u.len() != beta.len() {
        return Err(Error::ShapeMismatch { expected: beta.len(), actual: u.len() });
    }
    let mut out: Vec<f64> = beta.iter().zip(u).map(|(b, d)| b + d).collect();
    for &(i, v) in resampled {
        *out.get_mut(i).ok_or_else(|| Error::Parameter(format!("shape index {i} out of range")))? = v;
    }
    Ok(out)
}

/// Shifts every coefficient by `U(−1, 1)` and redraws a random subset of
/// `coeff_range` coefficients from `N(0, 1)`.
pub fn augment_shape<R: Rng + ?Sized>(beta: &[f64], rng: &mut R, coeff_range: [usize; 2]) -> Vec<f64> {
    let u: Vec<f64> = beta.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = uniform_count(rng, coeff_range).min(beta.len());
    let resampled: Vec<(usize, f64)> =
        sample(rng, beta.len(), k).into_iter().map(|i| (i, StandardNormal.sample(rng))).collect();
    shift_shape(beta, &u, &resampled).expect("lengths agree by construction")
}

/// Mirrors a pose through the x = 0 plane: left/right joints trade rotations
/// and every axis-angle has its y and z components negated.
pub fn flip_handedness(theta: &[Vector3<f64>], mirror_pairs: &[(usize, usize)]) -> Result<Vec<Vector3<f64>>> {
    if mirror_pairs.is_empty() {
        return param("model declares no left/right joint pairs");
    }
    let mut out = theta.to_vec();
    for &(a, b) in mirror_pairs {
        if a >= theta.len() || b >= theta.len() {
            return param(format!("mirror pair ({a}, {b}) out of range"));
        }
        out.swap(a, b);
    }
    for w in &mut out {
        w.y = -w.y;
        w.z = -w.z;
    }
    Ok(out)
}

/// Removes `k ~ U{m..n'}` distinct points; returns the removed indices
/// (into the input frame) in ascending order.
pub fn occlude<R: Rng + ?Sized>(frame: &MarkerFrame, rng: &mut R, range: [usize; 2]) -> Result<(MarkerFrame, Vec<usize>)> {
    let [m, n] = range;
    if m > n || n > frame.len() {
        return param(format!("occlusion range [{m}, {n}] invalid for a frame of {} points", frame.len()));
    }
    let k = uniform_count(rng, range);
    let mut removed = sample(rng, frame.len(), k).into_vec();
    removed.sort_unstable();
    let mut out = frame.clone();
    out.remove_indices(&removed);
    Ok((out, removed))
}

/// Center and spread used for ghost markers.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostModel {
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    /// Lower Cholesky factor of the (possibly jittered) covariance.
    pub factor: Matrix3<f64>,
    pub jittered: bool,
}

impl GhostModel {
    /// Per-axis median center and sample covariance of `points`.
    pub fn fit(points: &[Vector3<f64>]) -> Result<Self> {
        if points.len() < 4 {
            return param(format!("ghost model needs at least 4 points, got {}", points.len()));
        }
        let mean = Vector3::from_fn(|a, _| median(points.iter().map(|p| p[a]).collect()));
        let avg = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
        let mut covariance = Matrix3::zeros();
        for p in points {
            let d = p - avg;
            covariance += d * d.transpose();
        }
        covariance /= (points.len() - 1) as f64;
        let (factor, jittered) = match covariance.cholesky() {
            Some(c) if c.l().diagonal().min() > 1e-12 => (c.l(), false),
            _ => {
                let c = (covariance + Matrix3::identity() * GHOST_JITTER)
                    .cholesky()
                    .ok_or_else(|| Error::Numerical("ghost covariance is not positive semi-definite".into()))?;
                (c.l(), true)
            }
        };
        Ok(Self { mean, covariance, factor, jittered })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        let n = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        self.mean + self.factor * n
    }

    /// Squared Mahalanobis distance under the sampling covariance.
    pub fn mahalanobis_sq(&self, p: &Vector3<f64>) -> f64 {
        let y = self.factor.solve_lower_triangular(&(p - self.mean)).expect("factor has a positive diagonal");
        y.norm_squared()
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GhostReport {
    /// Indices of the appended points in the output frame.
    pub added: Vec<usize>,
    pub jittered: bool,
}

/// Appends `U{count_range}` unlabeled points drawn from `N(median, Σ)` of the frame.
pub fn ghost<R: Rng + ?Sized>(frame: &MarkerFrame, rng: &mut R, count_range: [usize; 2]) -> Result<(MarkerFrame, GhostReport)> {
    let count = uniform_count(rng, count_range);
    let mut out = frame.clone();
    if count == 0 {
        return Ok((out, GhostReport::default()));
    }
    let model = GhostModel::fit(&frame.points)?;
    let start = out.len();
    for _ in 0..count {
        out.points.push(model.sample(rng));
        out.labels.push(None);
    }
    Ok((out, GhostReport { added: (start..start + count).collect(), jittered: model.jittered }))
}

/// Adds `o ~ U(−M, M)³` to `count` distinct points; returns their indices.
pub fn shift<R: Rng + ?Sized>(frame: &MarkerFrame, rng: &mut R, count: usize, max: f64) -> Result<(MarkerFrame, Vec<usize>)> {
    if count > frame.len() {
        return param(format!("cannot shift {count} of {} points", frame.len()));
    }
    let mut out = frame.clone();
    let mut idx = sample(rng, frame.len(), count).into_vec();
    idx.sort_unstable();
    if max > 0.0 {
        for &i in &idx {
            out.points[i] += Vector3::from_fn(|_, _| rng.random_range(-max..=max));
        }
    }
    Ok((out, idx))
}

/// Pipeline stages in application order.
pub const STAGES: [&str; 5] = ["shape", "flip", "occlude", "ghost", "shift"];

/// What the pipeline did to one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub frame_id: u64,
    /// Firing flag per stage, in [`STAGES`] order.
    pub fired: [bool; 5],
    pub occluded_labels: Vec<String>,
    /// Indices (into the frame entering the stage) removed by occlusion.
    pub occluded: Vec<usize>,
    /// Indices of ghost points in the output frame.
    pub ghosts: Vec<usize>,
    pub ghost_jitter: bool,
    /// Indices of shifted points in the output frame.
    pub shifted: Vec<usize>,
}

/// Runs shape augmentation → flip → occlusion → ghosts → shift, each gated
/// by an independent Bernoulli draw. If either parameter augmentation fires,
/// the frame is re-synthesized from the augmented parameters first.
pub fn apply_pipeline<R: Rng + ?Sized>(
    model: &BodyModel,
    params: &BodyParams,
    frame: &MarkerFrame,
    config: &CorruptionConfig,
    rng: &mut R,
) -> Result<(BodyParams, MarkerFrame, Provenance)> {
    config.validate()?;
    let mut prov = Provenance { frame_id: frame.frame_id, ..Default::default() };
    let mut p = params.clone();

    if rng.random_bool(config.p_shape_aug) {
        prov.fired[0] = true;
        p.beta = augment_shape(&p.beta, rng, config.shape_shift_coeffs);
    }
    if rng.random_bool(config.p_flip) {
        prov.fired[1] = true;
        p.theta = flip_handedness(&p.theta, model.mirror_pairs())?;
    }
    let mut f = if prov.fired[0] || prov.fired[1] {
        MarkerFrame::from_landmarks(frame.frame_id, &model.landmarks_for(&p)?)
    } else {
        frame.clone()
    };

    if rng.random_bool(config.p_occlude) {
        prov.fired[2] = true;
        let [lo, hi] = config.occlude_range;
        let hi = hi.min(f.len());
        let (next, removed) = occlude(&f, rng, [lo.min(hi), hi])?;
        prov.occluded_labels = removed.iter().filter_map(|&i| f.labels[i].clone()).collect();
        prov.occluded = removed;
        f = next;
    }
    if rng.random_bool(config.p_ghost) {
        prov.fired[3] = true;
        if f.len() >= 4 {
            let (next, report) = ghost(&f, rng, config.ghost_count_range)?;
            prov.ghosts = report.added;
            prov.ghost_jitter = report.jittered;
            f = next;
        }
    }
    if rng.random_bool(config.p_shift) {
        prov.fired[4] = true;
        let n = uniform_count(rng, config.shift_count_range).min(f.len());
        let (next, idx) = shift(&f, rng, n, config.shift_max)?;
        prov.shifted = idx;
        f = next;
    }
    Ok((p, f, prov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::desk_body;
    use crate::rng::seeded;

    fn frame(n: usize) -> MarkerFrame {
        let points = (0..n).map(|i| Vector3::new(i as f64, (i * i % 7) as f64, (i % 3) as f64)).collect();
        let labels = (0..n).map(|i| Some(format!("m{i}"))).collect();
        MarkerFrame::new(0, points, labels).unwrap()
    }

    #[test]
    fn zero_shift_and_no_resampling_is_identity() {
        let beta = [0.3, -1.2, 0.0];
        assert_eq!(shift_shape(&beta, &[0.0; 3], &[]).unwrap(), beta.to_vec());
    }

    #[test]
    fn shape_shift_moments() {
        let mut rng = seeded(1);
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let b = augment_shape(&[0.5], &mut rng, [0, 0]);
            let d = b[0] - 0.5;
            s += d;
            s2 += d * d;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.05 / 3.0, "{var}");
    }

    #[test]
    fn flip_is_an_involution_and_fixes_rest() {
        let m = desk_body();
        let zero = vec![Vector3::zeros(); m.num_joints()];
        assert_eq!(flip_handedness(&zero, m.mirror_pairs()).unwrap(), zero);
        let mut rng = seeded(4);
        let theta: Vec<_> = (0..m.num_joints()).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let twice = flip_handedness(&flip_handedness(&theta, m.mirror_pairs()).unwrap(), m.mirror_pairs()).unwrap();
        for (a, b) in theta.iter().zip(&twice) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(flip_handedness(&theta, &[]).is_err());
    }

    #[test]
    fn raised_left_arm_becomes_raised_right_arm() {
        let m = desk_body();
        let names = m.joint_names();
        let l = names.iter().position(|n| n == "l_shoulder").unwrap();
        let r = names.iter().position(|n| n == "r_shoulder").unwrap();
        let mut p = BodyParams::rest(&m);
        p.theta[l] = Vector3::new(0.2, 0.3, 1.1);
        let mut q = p.clone();
        q.theta = flip_handedness(&p.theta, m.mirror_pairs()).unwrap();
        assert!(q.theta[r].z < 0.0 && q.theta[l].norm() == 0.0);
        let jp = m.posed_joints(&p).unwrap();
        let jq = m.posed_joints(&q).unwrap();
        let mut mirror: Vec<usize> = (0..names.len()).collect();
        for &(a, b) in m.mirror_pairs() {
            mirror[a] = b;
            mirror[b] = a;
        }
        for (i, x) in jp.iter().enumerate() {
            let y = jq[mirror[i]];
            assert!((Vector3::new(-x.x, x.y, x.z) - y).norm() < 1e-9, "joint {}", names[i]);
        }
    }

    #[test]
    fn occlusion_extremes_and_labels() {
        let f = frame(8);
        let mut rng = seeded(2);
        assert_eq!(occlude(&f, &mut rng, [0, 0]).unwrap().0, f);
        assert!(occlude(&f, &mut rng, [8, 8]).unwrap().0.is_empty());
        assert!(occlude(&f, &mut rng, [3, 2]).is_err());
        assert!(occlude(&f, &mut rng, [1, 9]).is_err());
        let (g, removed) = occlude(&f, &mut rng, [3, 3]).unwrap();
        assert_eq!(g.len(), 5);
        for i in removed {
            assert!(g.find(f.labels[i].as_deref().unwrap()).is_none());
        }
    }

    #[test]
    fn occlusion_count_is_uniform() {
        let f = frame(10);
        let mut rng = seeded(3);
        let mut counts = [0usize; 5];
        let trials = 100_000;
        for _ in 0..trials {
            let (_, removed) = occlude(&f, &mut rng, [1, 5]).unwrap();
            counts[removed.len() - 1] += 1;
        }
        let expected = trials as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // χ²₄ critical value at 0.01.
        assert!(chi2 < 13.277, "{chi2} {counts:?}");
    }

    #[test]
    fn ghost_center_is_the_median() {
        let f = MarkerFrame::new(
            0,
            vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.0, -2.0, -3.0), Vector3::new(2.0, -1.0, 0.5), Vector3::new(-2.0, 1.0, -0.5)],
            vec![None, None, None, None],
        )
        .unwrap();
        let g = GhostModel::fit(&f.points).unwrap();
        assert!(g.mean.norm() < 1e-15);
        let mut rng = seeded(0);
        assert_eq!(ghost(&f, &mut rng, [0, 0]).unwrap().0, f);
    }

    #[test]
    fn ghost_moments_match_model() {
        let f = frame(12);
        let g = GhostModel::fit(&f.points).unwrap();
        let mut rng = seeded(5);
        let n = 100_000;
        let samples: Vec<_> = (0..n).map(|_| g.sample(&mut rng)).collect();
        let mean = samples.iter().sum::<Vector3<f64>>() / n as f64;
        let mut cov = Matrix3::zeros();
        for s in &samples {
            cov += (s - mean) * (s - mean).transpose();
        }
        cov /= (n - 1) as f64;
        let scale = g.covariance.diagonal().map(f64::sqrt);
        for a in 0..3 {
            assert!((mean[a] - g.mean[a]).abs() < 0.02 * scale[a]);
            for b in 0..3 {
                let tol = 0.02 * scale[a] * scale[b];
                assert!((cov[(a, b)] - g.covariance[(a, b)]).abs() < tol, "{a}{b}");
            }
        }
    }

    #[test]
    fn degenerate_ghost_covariance_is_jittered() {
        let points: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let f = MarkerFrame::new(0, points, vec![None; 6]).unwrap();
        let (g, report) = ghost(&f, &mut seeded(1), [2, 2]).unwrap();
        assert!(report.jittered);
        assert_eq!(g.len(), 8);
        assert!(g.labels[6..].iter().all(Option::is_none));
    }

    #[test]
    fn shift_bounds_and_cardinality() {
        let f = frame(10);
        let mut rng = seeded(6);
        assert_eq!(shift(&f, &mut rng, 10, 0.0).unwrap().0, f);
        let (g, idx) = shift(&f, &mut rng, 1, 0.05).unwrap();
        let differing = f.points.iter().zip(&g.points).filter(|(a, b)| a != b).count();
        assert_eq!((differing, idx.len()), (1, 1));
        assert_eq!(g.labels, f.labels);
        let m = 0.05;
        let mut sum = Vector3::zeros();
        let n = 10_000;
        for _ in 0..n {
            let (g, _) = shift(&f, &mut rng, 10, m).unwrap();
            for (a, b) in f.points.iter().zip(&g.points) {
                let o = b - a;
                assert!(o.amax() <= m);
                sum += o;
            }
        }
        let mean = sum / (10 * n) as f64;
        assert!(mean.amax() < 0.01 * m);
    }

    #[test]
    fn pipeline_identity_and_determinism() {
        let m = desk_body();
        let p = BodyParams::rest(&m);
        let f = MarkerFrame::from_landmarks(3, &m.landmarks_for(&p).unwrap());
        let off = CorruptionConfig { p_shape_aug: 0.0, p_flip: 0.0, p_occlude: 0.0, p_ghost: 0.0, p_shift: 0.0, ..Default::default() };
        let (p2, f2, prov) = apply_pipeline(&m, &p, &f, &off, &mut seeded(1)).unwrap();
        assert_eq!((p2, f2, prov.fired), (p.clone(), f.clone(), [false; 5]));

        let on = CorruptionConfig { p_shape_aug: 1.0, p_flip: 1.0, p_occlude: 1.0, p_ghost: 1.0, p_shift: 1.0, ..Default::default() };
        let a = apply_pipeline(&m, &p, &f, &on, &mut seeded(9)).unwrap();
        let b = apply_pipeline(&m, &p, &f, &on, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.2.fired, [true; 5]);
        a.1.validate().unwrap();
        assert!(a.2.ghosts.iter().all(|&i| a.1.labels[i].is_none()));
    }

    #[test]
    fn frame_stream_round_trip() {
        let frames = vec![frame(3), MarkerFrame::new(7, vec![Vector3::new(0.5, 0.25, -1.0)], vec![None]).unwrap()];
        let mut buf = Vec::new();
        write_frames(&mut buf, &frames).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("\"labels\":[null]"));
        assert_eq!(read_frames(buf.as_slice()).unwrap(), frames);
        assert!(read_frames(&b"{\"frame_id\":1,\"points\":[[0,0,0]],\"labels\":[\"a\",\"b\"]}\n"[..]).is_err());
    }
}
