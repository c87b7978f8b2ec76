//! Flat binary container for depth maps, heatmap stacks and sensor frames: a
//! header `{magic, view, width, height, channels}` of little-endian u32 fields
//! after the 4-byte magic, then row-major little-endian f32 values, channel by
//! channel. The view field is 0 = xy, 1 = yz, 2 = sensor frame.

use std::io::{Read, Write};

use super::{HeatmapStack, Image, OrthoDepthMap, View};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MCHM";

/// What the channels of a container hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    View(View),
    /// Infrared then depth.
    Sensor,
}

impl Layout {
    fn code(self) -> u32 {
        match self {
            Layout::View(v) => v.code(),
            Layout::Sensor => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            2 => Ok(Layout::Sensor),
            c => Ok(Layout::View(View::from_code(c)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub layout: Layout,
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Vec<f32>>,
}

impl Container {
    pub fn from_depth(map: &OrthoDepthMap) -> Self {
        Self::from_images(Layout::View(map.view), std::slice::from_ref(&map.image))
    }

    pub fn from_stack(stack: &HeatmapStack) -> Self {
        Self::from_images(Layout::View(stack.view), &stack.maps)
    }

    pub fn from_images(layout: Layout, images: &[Image]) -> Self {
        let (width, height) = images.first().map_or((0, 0), |i| (i.width, i.height));
        Self { layout, width, height, channels: images.iter().map(|i| i.data.iter().map(|&v| v as f32).collect()).collect() }
    }

    pub fn images(&self) -> Vec<Image> {
        self.channels
            .iter()
            .map(|c| Image { width: self.width, height: self.height, data: c.iter().map(|&v| v as f64).collect() })
            .collect()
    }

    pub fn into_stack(self) -> Result<HeatmapStack> {
        match self.layout {
            Layout::View(view) => Ok(HeatmapStack { view, maps: self.images() }),
            Layout::Sensor => Err(Error::Format("container holds a sensor frame, not a heatmap stack".into())),
        }
    }
}

pub fn write_container(mut w: impl Write, c: &Container) -> Result<()> {
    w.write_all(&MAGIC)?;
    for v in [c.layout.code(), c.width as u32, c.height as u32, c.channels.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for ch in &c.channels {
        if ch.len() != c.width * c.height {
            return Err(Error::ShapeMismatch { expected: c.width * c.height, actual: ch.len() });
        }
        for v in ch {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_container(mut r: impl Read) -> Result<Container> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format("bad heatmap container magic".into()));
    }
    let mut word = [0u8; 4];
    let mut header = [0u32; 4];
    for h in &mut header {
        r.read_exact(&mut word)?;
        *h = u32::from_le_bytes(word);
    }
    let [view, width, height, channels] = header;
    let n = width as usize * height as usize;
    let mut data = vec![0u8; n * 4];
    let mut out = Vec::with_capacity(channels as usize);
    for _ in 0..channels {
        r.read_exact(&mut data)?;
        out.push(data.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect());
    }
    Ok(Container { layout: Layout::from_code(view)?, width: width as usize, height: height as usize, channels: out })
}
