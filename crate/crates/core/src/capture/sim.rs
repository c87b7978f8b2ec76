use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Rig, Sensor, SensorFrame};
use crate::corruption::MarkerFrame;
use crate::error::{param, Error, Result};
use crate::rng::{frame_rng, Stream};

/// Disc-and-annulus sensor model. Every visible marker lights a disc of
/// `halo · r` pixels, where `r` is the marker's apparent radius; depth is
/// invalid inside `r` and reads the marker's depth on the rest of the disc.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Physical marker radius in meters.
    pub marker_radius: f64,
    pub halo: f64,
    /// Lower bound on the lit disc radius, in pixels.
    pub min_disc_px: f64,
    pub ir_level: f64,
    pub background_ir: f64,
    /// Depth reported off the markers; 0 leaves it invalid.
    pub background_depth: f64,
    /// Standard deviation of additive depth noise, meters.
    pub depth_noise: f64,
    pub ir_noise: f64,
    /// Markers closer than this are not rendered.
    pub near: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            marker_radius: 0.0095,
            halo: 2.0,
            min_disc_px: 2.5,
            ir_level: 1.0,
            background_ir: 0.05,
            background_depth: 0.0,
            depth_noise: 0.0,
            ir_noise: 0.0,
            near: 0.05,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.marker_radius, self.halo, self.min_disc_px, self.near];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return param("marker radius, halo, minimum disc size and near plane must be positive");
        }
        if self.halo <= 1.0 {
            return param("halo must exceed 1 so the disc has a valid-depth annulus");
        }
        if [self.depth_noise, self.ir_noise, self.background_depth].iter().any(|v| !(*v >= 0.0)) {
            return param("noise levels and background depth must be non-negative");
        }
        Ok(())
    }

    /// `(invalid core, lit disc)` radii in pixels for a marker at depth `z`.
    fn radii(&self, sensor: &Sensor, z: f64) -> (f64, f64) {
        let r = sensor.intrinsics.fx.min(sensor.intrinsics.fy) * self.marker_radius / z;
        (r, (self.halo * r).max(self.min_disc_px))
    }
}

fn faces(point: &Vector3<f64>, normal: Option<&Vector3<f64>>, sensor: &Sensor) -> bool {
    normal.is_none_or(|n| n.norm() == 0.0 || n.dot(&(sensor.position() - point)) > 0.0)
}

/// Renders one sensor frame. With `normals`, markers whose normal points away
/// from the sensor are culled; overlapping discs are z-buffered.
pub fn simulate_sensor<R: Rng + ?Sized>(
    scene: &MarkerFrame,
    normals: Option<&[Vector3<f64>]>,
    sensor: &Sensor,
    cfg: &SimConfig,
    timestamp: f64,
    rng: &mut R,
) -> Result<SensorFrame> {
    cfg.validate()?;
    sensor.validate()?;
    if let Some(n) = normals {
        crate::error::check_len(scene.len(), n.len())?;
    }
    let (w, h) = (sensor.width, sensor.height);
    let mut frame = SensorFrame::blank(w, h, timestamp);
    let ir_noise = Normal::new(0.0, cfg.ir_noise).map_err(|e| Error::Parameter(e.to_string()))?;
    let depth_noise = Normal::new(0.0, cfg.depth_noise).map_err(|e| Error::Parameter(e.to_string()))?;
    for (ir, depth) in frame.ir.data.iter_mut().zip(frame.depth.data.iter_mut()) {
        *ir = cfg.background_ir + if cfg.ir_noise > 0.0 { ir_noise.sample(rng) } else { 0.0 };
        if cfg.background_depth > 0.0 {
            *depth = (cfg.background_depth + if cfg.depth_noise > 0.0 { depth_noise.sample(rng) } else { 0.0 }).max(0.0);
        }
    }
    let mut zbuf = vec![f64::INFINITY; w * h];
    for (i, world) in scene.points.iter().enumerate() {
        let p = sensor.to_sensor(world);
        if p.z < cfg.near || !faces(world, normals.map(|n| &n[i]), sensor) {
            continue;
        }
        let Some(c) = sensor.project(&p) else { continue };
        let (core, disc) = cfg.radii(sensor, p.z);
        let cols = (c.x - disc).floor().max(0.0)..=(c.x + disc).ceil().min(w as f64 - 1.0);
        let rows = (c.y - disc).floor().max(0.0)..=(c.y + disc).ceil().min(h as f64 - 1.0);
        if cols.is_empty() || rows.is_empty() {
            continue;
        }
        for row in *rows.start() as usize..=*rows.end() as usize {
            for col in *cols.start() as usize..=*cols.end() as usize {
                let d = ((col as f64 - c.x).powi(2) + (row as f64 - c.y).powi(2)).sqrt();
                let k = row * w + col;
                if d > disc || p.z >= zbuf[k] {
                    continue;
                }
                zbuf[k] = p.z;
                frame.ir.data[k] = cfg.ir_level;
                frame.depth.data[k] = if d <= core {
                    0.0
                } else {
                    let noise = if cfg.depth_noise > 0.0 { depth_noise.sample(rng) } else { 0.0 };
                    (p.z + noise).max(0.0)
                };
            }
        }
    }
    Ok(frame)
}

/// One frame from every sensor in the rig; sensor `k` draws from its own
/// stream so frames do not depend on rig order or evaluation order.
pub fn simulate_capture(
    rig: &Rig,
    scene: &MarkerFrame,
    normals: Option<&[Vector3<f64>]>,
    cfg: &SimConfig,
    seed: u64,
    timestamp: f64,
) -> Result<Vec<SensorFrame>> {
    rig.sensors
        .iter()
        .enumerate()
        .map(|(k, sensor)| {
            let mut rng = frame_rng(seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)), scene.frame_id, Stream::Capture);
            simulate_sensor(scene, normals, sensor, cfg, timestamp, &mut rng)
        })
        .collect()
}

/// Random marker positions inside `[lo, hi]` that every sensor of the rig
/// sees as separate, fully visible discs: candidates closer than
/// `min_separation` in space, or whose discs would come within two pixels of
/// another disc in any sensor, are redrawn.
pub fn resolvable_scene<R: Rng + ?Sized>(
    rig: &Rig,
    cfg: &SimConfig,
    count: usize,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    min_separation: f64,
    rng: &mut R,
) -> Result<Vec<Vector3<f64>>> {
    const MAX_ATTEMPTS: usize = 200_000;
    cfg.validate()?;
    let mut points: Vec<Vector3<f64>> = Vec::with_capacity(count);
    // Per sensor: (pixel center, disc radius) of accepted points.
    let mut discs: Vec<Vec<(nalgebra::Vector2<f64>, f64)>> = vec![Vec::new(); rig.sensors.len()];
    let mut attempts = 0;
    while points.len() < count {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Degenerate(format!("could only place {} of {count} resolvable markers", points.len())));
        }
        let q = Vector3::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]));
        if points.iter().any(|p| (p - q).norm() < min_separation) {
            continue;
        }
        let mut placed = Vec::with_capacity(rig.sensors.len());
        for (sensor, existing) in rig.sensors.iter().zip(&discs) {
            let local = sensor.to_sensor(&q);
            let Some(c) = sensor.project(&local).filter(|_| local.z >= cfg.near) else { break };
            let (_, r) = cfg.radii(sensor, local.z);
            let inside = c.x - r >= 1.0 && c.y - r >= 1.0 && c.x + r <= sensor.width as f64 - 2.0 && c.y + r <= sensor.height as f64 - 2.0;
            if !inside || existing.iter().any(|(e, re)| (e - c).norm() <= r + re + 2.0) {
                break;
            }
            placed.push((c, r));
        }
        if placed.len() == rig.sensors.len() {
            points.push(q);
            for (d, p) in discs.iter_mut().zip(placed) {
                d.push(p);
            }
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::super::{extract_blobs, MIN_BLOB_AREA};
    use super::*;
    use crate::rng::seeded;

    fn sensor() -> Sensor {
        Rig::ring(1, 2.5, 1.0, 1.0).unwrap().sensors.remove(0)
    }

    fn scene(points: Vec<Vector3<f64>>) -> MarkerFrame {
        let n = points.len();
        MarkerFrame::new(0, points, vec![None; n]).unwrap()
    }

    #[test]
    fn marker_on_axis_renders_one_centered_blob() {
        let s = sensor();
        let f = simulate_sensor(&scene(vec![Vector3::new(0.0, 1.0, 0.0)]), None, &s, &SimConfig::default(), 0.0, &mut seeded(1)).unwrap();
        let blobs = extract_blobs(&f, 0.5, MIN_BLOB_AREA);
        assert_eq!(blobs.len(), 1);
        let n = blobs[0].pixels.len() as f64;
        let (sc, sr) = blobs[0].pixels.iter().fold((0.0, 0.0), |(a, b), &(c, r)| (a + c as f64, b + r as f64));
        assert!((sc / n - 319.5).abs() < 0.5 && (sr / n - 287.5).abs() < 0.5);
        // Center depth is invalid, the annulus reads the marker depth.
        assert_eq!(f.depth.at(319, 287), 0.0);
        let valid: Vec<f64> = f.depth.data.iter().copied().filter(|&d| d > 0.0).collect();
        assert!(!valid.is_empty() && valid.iter().all(|&d| (d - 2.5).abs() < 1e-12));
    }

    #[test]
    fn marker_behind_sensor_leaves_frame_empty() {
        let s = sensor();
        let f = simulate_sensor(&scene(vec![Vector3::new(0.0, 1.0, 3.0)]), None, &s, &SimConfig::default(), 0.0, &mut seeded(1)).unwrap();
        assert!(extract_blobs(&f, 0.5, MIN_BLOB_AREA).is_empty());
        assert!(f.depth.data.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn back_facing_markers_are_culled() {
        let s = sensor();
        let sc = scene(vec![Vector3::new(0.0, 1.0, 0.0)]);
        let away = [Vector3::new(0.0, 0.0, -1.0)];
        let toward = [Vector3::new(0.0, 0.0, 1.0)];
        let cfg = SimConfig::default();
        let f = simulate_sensor(&sc, Some(&away), &s, &cfg, 0.0, &mut seeded(1)).unwrap();
        assert!(extract_blobs(&f, 0.5, MIN_BLOB_AREA).is_empty());
        let f = simulate_sensor(&sc, Some(&toward), &s, &cfg, 0.0, &mut seeded(1)).unwrap();
        assert_eq!(extract_blobs(&f, 0.5, MIN_BLOB_AREA).len(), 1);
    }

    #[test]
    fn nearer_disc_wins_overlaps() {
        let s = sensor();
        // Two markers on the optical axis: only the nearer one's depth survives.
        let sc = scene(vec![Vector3::new(0.0, 1.0, -0.5), Vector3::new(0.0, 1.0, 0.5)]);
        let f = simulate_sensor(&sc, None, &s, &SimConfig::default(), 0.0, &mut seeded(1)).unwrap();
        let valid: Vec<f64> = f.depth.data.iter().copied().filter(|&d| d > 0.0).collect();
        assert!(valid.iter().all(|&d| (d - 2.0).abs() < 1e-12));
    }

    #[test]
    fn resolvable_scene_blob_count_matches_markers() {
        let rig = Rig::ring(3, 2.5, 1.2, 1.0).unwrap();
        let cfg = SimConfig::default();
        let pts = resolvable_scene(&rig, &cfg, 53, Vector3::new(-0.4, 0.2, -0.3), Vector3::new(0.4, 1.8, 0.3), 0.05, &mut seeded(4)).unwrap();
        let frames = simulate_capture(&rig, &scene(pts), None, &cfg, 9, 0.0).unwrap();
        for f in &frames {
            assert_eq!(extract_blobs(f, 0.5, MIN_BLOB_AREA).len(), 53);
        }
    }

    #[test]
    fn capture_is_seed_deterministic() {
        let rig = Rig::ring(2, 2.5, 1.2, 1.0).unwrap();
        let cfg = SimConfig { depth_noise: 0.002, ir_noise: 0.01, ..Default::default() };
        let sc = scene(vec![Vector3::new(0.1, 1.1, 0.0)]);
        let a = simulate_capture(&rig, &sc, None, &cfg, 5, 0.0).unwrap();
        let b = simulate_capture(&rig, &sc, None, &cfg, 5, 0.0).unwrap();
        let c = simulate_capture(&rig, &sc, None, &cfg, 6, 0.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
