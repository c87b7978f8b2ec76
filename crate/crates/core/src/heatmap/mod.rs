//! Representation layer around a heatmap predictor: normalization into the
//! unit cube, orthographic depth rendering, Gaussian heatmap encoding,
//! center-of-mass decoding, two-view marginal fusion and the training losses.
//!
//! Both views share the vertical (gravity, y) axis as image rows. The xy
//! view has x along columns and depth z; the yz view has z along columns and
//! depth x. Pixel `i` of an `n`-pixel axis sits at normalized coordinate
//! `i / (n − 1)`.

mod container;
mod loss;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::corruption::MarkerFrame;
use crate::error::{check_len, param, Error, Result};

pub use container::{read_container, write_container, Container, Layout, MAGIC};
pub use loss::{js_divergence, total_loss, welsch, LossConfig, NORMALIZATION_TOL};

pub const RESOLUTION: usize = 160;
pub const DEFAULT_SIGMA_PX: f64 = 2.0;
pub const DEFAULT_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Xy,
    Yz,
}

impl View {
    /// `(column, row, depth)` coordinates of a normalized point.
    pub fn project(self, p: &Vector3<f64>) -> (f64, f64, f64) {
        match self {
            View::Xy => (p.x, p.y, p.z),
            View::Yz => (p.z, p.y, p.x),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            View::Xy => 0,
            View::Yz => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(View::Xy),
            1 => Ok(View::Yz),
            _ => Err(Error::Format(format!("unknown view code {code}"))),
        }
    }
}

/// Points mapped into `[0, 1]³` by an isotropic scale about the bounding-box center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedFrame {
    pub coords: Vec<Vector3<f64>>,
    pub labels: Vec<Option<String>>,
    pub center: Vector3<f64>,
    /// Meters per normalized unit.
    pub scale: f64,
    /// Indices clamped back into the cube.
    pub clamped: Vec<usize>,
}

impl NormalizedFrame {
    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.center + (p - Vector3::repeat(0.5)) * self.scale
    }

    pub fn to_unit(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::repeat(0.5) + (p - self.center) / self.scale
    }

    pub fn denormalize(&self) -> Vec<Vector3<f64>> {
        self.coords.iter().map(|p| self.to_world(p)).collect()
    }
}

/// Centers the labeled points' bounding box in the unit cube and scales its
/// longest side to `1 − 2·margin`. Frames without labels use every point.
pub fn normalize_frame(frame: &MarkerFrame, margin: f64) -> Result<NormalizedFrame> {
    if !(0.0..0.5).contains(&margin) {
        return param(format!("margin {margin} outside [0, 0.5)"));
    }
    let labeled: Vec<Vector3<f64>> =
        frame.points.iter().zip(&frame.labels).filter(|(_, l)| l.is_some()).map(|(p, _)| *p).collect();
    let support = if labeled.is_empty() { frame.points.clone() } else { labeled };
    if support.is_empty() {
        return param("cannot normalize an empty frame");
    }
    let lo = support.iter().fold(Vector3::repeat(f64::INFINITY), |m, p| m.inf(p));
    let hi = support.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
    let side = (hi - lo).max();
    if !(side > 0.0) {
        return param("frame bounding box has zero extent");
    }
    let center = 0.5 * (lo + hi);
    let scale = side / (1.0 - 2.0 * margin);
    let mut out = NormalizedFrame { coords: Vec::new(), labels: frame.labels.clone(), center, scale, clamped: Vec::new() };
    out.coords = frame
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let u = out.to_unit(p);
            let c = u.map(|v| v.clamp(0.0, 1.0));
            if c != u {
                out.clamped.push(i);
            }
            c
        })
        .collect();
    Ok(out)
}

/// Single-channel image, row-major with rows along the vertical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn pixel_of(&self, u: f64, v: f64) -> (usize, usize) {
        let col = (u * (self.width - 1) as f64).round().clamp(0.0, (self.width - 1) as f64) as usize;
        let row = (v * (self.height - 1) as f64).round().clamp(0.0, (self.height - 1) as f64) as usize;
        (col, row)
    }
}

/// Orthographic depth render; 0 marks an empty pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoDepthMap {
    pub view: View,
    pub image: Image,
}

/// Splats every point to its nearest pixel; the smallest depth wins.
pub fn render_ortho(frame: &NormalizedFrame, view: View, resolution: usize) -> OrthoDepthMap {
    let mut image = Image::zeros(resolution, resolution);
    for p in &frame.coords {
        let (u, v, depth) = view.project(p);
        let (col, row) = image.pixel_of(u, v);
        let px = &mut image.data[row * resolution + col];
        if *px == 0.0 || depth < *px {
            *px = depth;
        }
    }
    OrthoDepthMap { view, image }
}

/// Gaussian centered at the continuous target `c` (normalized), summing to 1.
pub fn encode_heatmap(c: &Vector2<f64>, sigma_px: f64, resolution: usize) -> Result<Image> {
    if !(sigma_px > 0.0) {
        return param("heatmap sigma must be positive");
    }
    let scale = (resolution - 1) as f64;
    let (cu, cv) = (c.x * scale, c.y * scale);
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    // Separable: the map is the outer product of two 1-D Gaussians.
    let gu: Vec<f64> = (0..resolution).map(|i| (-(i as f64 - cu).powi(2) * inv).exp()).collect();
    let gv: Vec<f64> = (0..resolution).map(|i| (-(i as f64 - cv).powi(2) * inv).exp()).collect();
    let mut img = Image::zeros(resolution, resolution);
    for (row, a) in gv.iter().enumerate() {
        for (col, b) in gu.iter().enumerate() {
            img.data[row * resolution + col] = a * b;
        }
    }
    let total = img.sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("heatmap underflowed to zero".into()));
    }
    img.data.iter_mut().for_each(|v| *v /= total);
    Ok(img)
}

/// How a map is turned into a distribution before taking its expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Divide by the total mass (identity on normalized maps).
    Mass,
    /// `softmax(map / temperature)`.
    Softmax { temperature: f64 },
}

impl Default for Readout {
    fn default() -> Self {
        Readout::Mass
    }
}

/// Center of mass of `map` in normalized coordinates.
pub fn soft_argmax(map: &Image, readout: Readout) -> Result<Vector2<f64>> {
    if map.data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return param("heatmap must be finite and non-negative");
    }
    let weights: Vec<f64> = match readout {
        Readout::Mass => map.data.clone(),
        Readout::Softmax { temperature } => {
            if !(temperature > 0.0) {
                return param("softmax temperature must be positive");
            }
            let max = map.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            map.data.iter().map(|v| ((v - max) / temperature).exp()).collect()
        }
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return param("heatmap has no mass");
    }
    let (mut su, mut sv) = (0.0, 0.0);
    for row in 0..map.height {
        let mut row_mass = 0.0;
        for col in 0..map.width {
            let w = weights[row * map.width + col];
            su += w * col as f64;
            row_mass += w;
        }
        sv += row_mass * row as f64;
    }
    Ok(Vector2::new(su / total / (map.width - 1) as f64, sv / total / (map.height - 1) as f64))
}

/// One map per landmark for a single view.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub view: View,
    pub maps: Vec<Image>,
}

impl HeatmapStack {
    /// Ground-truth stack for normalized landmark positions.
    pub fn encode(coords: &[Vector3<f64>], view: View, sigma_px: f64, resolution: usize) -> Result<Self> {
        let maps = coords
            .iter()
            .map(|p| {
                let (u, v, _) = view.project(p);
                encode_heatmap(&Vector2::new(u, v), sigma_px, resolution)
            })
            .collect::<Result<_>>()?;
        Ok(Self { view, maps })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// x from the xy view, z from the yz view, y averaged over both.
pub fn marginal_fuse(xy: &HeatmapStack, yz: &HeatmapStack, readout: Readout) -> Result<Vec<Vector3<f64>>> {
    if xy.view != View::Xy || yz.view != View::Yz {
        return param("fusion expects an xy stack and a yz stack");
    }
    if xy.len() != yz.len() {
        return param(format!("landmark counts differ between views ({} vs {})", xy.len(), yz.len()));
    }
    xy.maps
        .iter()
        .zip(&yz.maps)
        .map(|(a, b)| {
            let (pa, pb) = (soft_argmax(a, readout)?, soft_argmax(b, readout)?);
            Ok(Vector3::new(pa.x, 0.5 * (pa.y + pb.y), pb.x))
        })
        .collect()
}

/// Stand-in for the heatmap network: depth maps in, heatmap stacks out.
pub trait HeatmapPredictor {
    fn predict(&self, xy: &OrthoDepthMap, yz: &OrthoDepthMap) -> Result<(HeatmapStack, HeatmapStack)>;
}

/// Emits ground-truth stacks for known normalized landmark positions.
pub struct OraclePredictor {
    pub landmarks: Vec<Vector3<f64>>,
    pub sigma_px: f64,
}

impl HeatmapPredictor for OraclePredictor {
    fn predict(&self, xy: &OrthoDepthMap, yz: &OrthoDepthMap) -> Result<(HeatmapStack, HeatmapStack)> {
        check_len(xy.image.width, yz.image.width)?;
        let res = xy.image.width;
        Ok((
            HeatmapStack::encode(&self.landmarks, View::Xy, self.sigma_px, res)?,
            HeatmapStack::encode(&self.landmarks, View::Yz, self.sigma_px, res)?,
        ))
    }
}
