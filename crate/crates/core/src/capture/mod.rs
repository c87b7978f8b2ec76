//! Simulated time-of-flight capture: sensors, blob extraction, multi-sensor
//! fusion, wand calibration and floor alignment.
//!
//! Camera frames follow the pinhole convention: x right, y down, z forward,
//! and pixel `(col, row)` has its center at `(u, v) = (col, row)`.

mod calibrate;
mod extract;
mod fuse;
mod gravity;
mod sim;

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::corruption::MarkerFrame;
use crate::error::{param, Error, Result};
use crate::geometry::Rigid;
use crate::heatmap::{Container, Image, Layout};
use crate::rotation::{log_map, rodrigues};

pub use calibrate::{calibrate_wand, simulate_wand_tracks, Calibration, WandTrack};
pub use extract::{blob_to_marker, extract_blobs, extract_markers, mad_filter, Blob, Extraction, MAD_SCALE, MIN_BLOB_AREA};
pub use fuse::{fuse_and_cluster, CLUSTER_RADIUS};
pub use gravity::{gravity_align, GAMMA_EDGE_RATIO};
pub use sim::{resolvable_scene, simulate_capture, simulate_sensor, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub name: String,
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    /// Sensor → world.
    pub extrinsics: Rigid,
}

impl Sensor {
    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) || ![k.fx, k.fy, k.cx, k.cy, k.skew].iter().all(|v| v.is_finite()) {
            return param(format!("sensor {}: focal lengths must be positive and finite", self.name));
        }
        if self.width == 0 || self.height == 0 {
            return param(format!("sensor {}: empty resolution", self.name));
        }
        Ok(())
    }

    /// A sensor at `position` looking at `target`, with image rows pointing
    /// away from world +y.
    pub fn looking_at(name: &str, intrinsics: Intrinsics, width: usize, height: usize, position: Vector3<f64>, target: Vector3<f64>) -> Result<Self> {
        let z = (target - position).try_normalize(1e-12).ok_or(Error::Degenerate("sensor looks at itself".into()))?;
        let x = z.cross(&Vector3::y()).try_normalize(1e-9).ok_or(Error::Degenerate("sensor looks straight up or down".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        let sensor = Self { name: name.into(), intrinsics, width, height, extrinsics: Rigid { rotation, translation: position } };
        sensor.validate()?;
        Ok(sensor)
    }

    /// Pixel coordinates of a sensor-frame point; `None` behind the sensor.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some(Vector2::new((k.fx * p.x + k.skew * p.y) / p.z + k.cx, k.fy * p.y / p.z + k.cy))
    }

    /// Back-projects a pixel to the sensor-frame point whose z equals `depth`.
    pub fn unproject(&self, pixel: Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0 && depth.is_finite()) {
            return param(format!("invalid depth {depth}"));
        }
        let k = &self.intrinsics;
        let y = (pixel.y - k.cy) / k.fy;
        let x = (pixel.x - k.cx - k.skew * y) / k.fx;
        Ok(Vector3::new(x, y, 1.0) * depth)
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsics.apply(p)
    }

    pub fn to_sensor(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsics.rotation.transpose() * (p - self.extrinsics.translation)
    }

    pub fn position(&self) -> Vector3<f64> {
        self.extrinsics.translation
    }
}

/// Pixel-registered infrared and depth images; depth 0 marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub ir: Image,
    pub depth: Image,
    pub timestamp: f64,
}

impl SensorFrame {
    pub fn blank(width: usize, height: usize, timestamp: f64) -> Self {
        Self { ir: Image::zeros(width, height), depth: Image::zeros(width, height), timestamp }
    }

    pub fn width(&self) -> usize {
        self.ir.width
    }

    pub fn height(&self) -> usize {
        self.ir.height
    }

    pub fn to_container(&self) -> Container {
        Container::from_images(Layout::Sensor, &[self.ir.clone(), self.depth.clone()])
    }

    /// Timestamps are not stored in the container.
    pub fn from_container(c: &Container, timestamp: f64) -> Result<Self> {
        if c.layout != Layout::Sensor || c.channels.len() != 2 {
            return Err(Error::Format("expected a sensor container with ir and depth channels".into()));
        }
        let mut images = c.images().into_iter();
        let ir = images.next().unwrap();
        let depth = images.next().unwrap();
        Ok(Self { ir, depth, timestamp })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerObservation {
    /// World frame.
    pub position: Vector3<f64>,
    pub sensor: usize,
    /// Depth samples that survived outlier rejection.
    pub support: usize,
}

/// IR threshold separating lit marker discs from background.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Extracts markers from one frame per sensor and fuses them into a single
/// unlabeled marker frame. Also returns per-sensor extraction diagnostics.
pub fn reconstruct(rig: &Rig, frames: &[SensorFrame], threshold: f64, radius: f64, frame_id: u64) -> Result<(MarkerFrame, Vec<Extraction>)> {
    crate::error::check_len(rig.sensors.len(), frames.len())?;
    let extractions = rig
        .sensors
        .iter()
        .zip(frames)
        .enumerate()
        .map(|(k, (sensor, frame))| extract_markers(frame, sensor, k, threshold))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<MarkerObservation> = extractions.iter().flat_map(|e| e.observations.iter().cloned()).collect();
    Ok((fuse_and_cluster(&all, radius, frame_id)?, extractions))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SensorRecord {
    name: String,
    intrinsics: Intrinsics,
    width: usize,
    height: usize,
    /// Axis-angle.
    rotation: [f64; 3],
    translation: [f64; 3],
}

/// Rig description: every sensor with its intrinsics and extrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub sensors: Vec<Sensor>,
}

#[derive(Serialize, Deserialize)]
struct RigRecord {
    sensors: Vec<SensorRecord>,
}

impl Rig {
    /// `count` sensors evenly spaced on a circle of `radius` around the
    /// vertical axis, at `height`, all looking at `(0, target_height, 0)`.
    pub fn ring(count: usize, radius: f64, height: f64, target_height: f64) -> Result<Self> {
        if count == 0 {
            return param("a rig needs at least one sensor");
        }
        let intrinsics = Intrinsics { fx: 504.0, fy: 504.0, cx: 319.5, cy: 287.5, skew: 0.0 };
        let sensors = (0..count)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / count as f64;
                let position = Vector3::new(radius * a.sin(), height, radius * a.cos());
                Sensor::looking_at(&format!("sensor{i}"), intrinsics, 640, 576, position, Vector3::new(0.0, target_height, 0.0))
            })
            .collect::<Result<_>>()?;
        Ok(Self { sensors })
    }

    pub fn validate(&self) -> Result<()> {
        self.sensors.iter().try_for_each(Sensor::validate)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: RigRecord = serde_json::from_str(text)?;
        let rig = Self {
            sensors: record
                .sensors
                .into_iter()
                .map(|s| Sensor {
                    name: s.name,
                    intrinsics: s.intrinsics,
                    width: s.width,
                    height: s.height,
                    extrinsics: Rigid { rotation: rodrigues(&s.rotation.into()), translation: s.translation.into() },
                })
                .collect(),
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn to_json(&self) -> Result<String> {
        let record = RigRecord {
            sensors: self
                .sensors
                .iter()
                .map(|s| SensorRecord {
                    name: s.name.clone(),
                    intrinsics: s.intrinsics,
                    width: s.width,
                    height: s.height,
                    rotation: log_map(&s.extrinsics.rotation).into(),
                    translation: s.extrinsics.translation.into(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
