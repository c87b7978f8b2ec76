use std::collections::VecDeque;

use nalgebra::{Vector2, Vector3};

use super::{MarkerObservation, Sensor, SensorFrame};
use crate::corruption::median;
use crate::error::{param, Result};

pub const MIN_BLOB_AREA: usize = 3;
/// Consistency constant turning the MAD into a Gaussian standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

/// Pixels of one connected bright region as `(col, row)`, in scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub pixels: Vec<(usize, usize)>,
}

impl Blob {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// 8-connected components of `ir > threshold`, ordered by their first pixel
/// in row-major scan order; components below `min_area` are dropped.
pub fn extract_blobs(frame: &SensorFrame, threshold: f64, min_area: usize) -> Vec<Blob> {
    let (w, h) = (frame.width(), frame.height());
    let bright = |k: usize| frame.ir.data[k] > threshold;
    let mut seen = vec![false; w * h];
    let mut blobs = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || !bright(start) {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(k) = queue.pop_front() {
            let (col, row) = (k % w, k / w);
            pixels.push((col, row));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (c, r) = (col as i64 + dc, row as i64 + dr);
                    if (dr, dc) == (0, 0) || c < 0 || r < 0 || c >= w as i64 || r >= h as i64 {
                        continue;
                    }
                    let n = r as usize * w + c as usize;
                    if !seen[n] && bright(n) {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        if pixels.len() >= min_area {
            pixels.sort_by_key(|&(c, r)| (r, c));
            blobs.push(Blob { pixels });
        }
    }
    blobs
}

/// Keep-mask of values within `3 · MAD_SCALE · MAD` of the median.
pub fn mad_filter(values: &[f64]) -> Vec<bool> {
    if values.is_empty() {
        return Vec::new();
    }
    let med = median(values.to_vec());
    let mad = median(values.iter().map(|v| (v - med).abs()).collect());
    let tol = 3.0 * MAD_SCALE * mad;
    values.iter().map(|v| (v - med).abs() <= tol).collect()
}

/// Sensor-frame marker estimate from the blob's valid-depth pixels, with
/// outliers on z rejected; returns the support count alongside.
fn blob_point(frame: &SensorFrame, sensor: &Sensor, blob: &Blob) -> Result<Option<(Vector3<f64>, usize)>> {
    let samples = blob
        .pixels
        .iter()
        .filter_map(|&(c, r)| {
            let d = frame.depth.at(c, r);
            (d > 0.0 && d.is_finite()).then(|| sensor.unproject(Vector2::new(c as f64, r as f64), d))
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Ok(None);
    }
    let keep = mad_filter(&samples.iter().map(|p| p.z).collect::<Vec<_>>());
    let survivors: Vec<&Vector3<f64>> = samples.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p).collect();
    let n = survivors.len();
    Ok(Some((survivors.into_iter().sum::<Vector3<f64>>() / n as f64, n)))
}

/// World-frame observation of one blob, or `None` when no pixel of the blob
/// carries a valid depth.
pub fn blob_to_marker(frame: &SensorFrame, sensor: &Sensor, sensor_index: usize, blob: &Blob) -> Result<Option<MarkerObservation>> {
    if blob.pixels.is_empty() {
        return param("blob has no pixels");
    }
    if frame.width() != sensor.width || frame.height() != sensor.height {
        return param(format!("frame is {}x{}, sensor {} is {}x{}", frame.width(), frame.height(), sensor.name, sensor.width, sensor.height));
    }
    Ok(blob_point(frame, sensor, blob)?.map(|(p, support)| MarkerObservation { position: sensor.to_world(&p), sensor: sensor_index, support }))
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub observations: Vec<MarkerObservation>,
    pub blobs: usize,
    /// Blobs without valid-depth support.
    pub dropped: usize,
}

pub fn extract_markers(frame: &SensorFrame, sensor: &Sensor, sensor_index: usize, threshold: f64) -> Result<Extraction> {
    let blobs = extract_blobs(frame, threshold, MIN_BLOB_AREA);
    let mut out = Extraction { blobs: blobs.len(), ..Default::default() };
    for blob in &blobs {
        match blob_to_marker(frame, sensor, sensor_index, blob)? {
            Some(obs) => out.observations.push(obs),
            None => out.dropped += 1,
        }
    }
    Ok(out)
}
