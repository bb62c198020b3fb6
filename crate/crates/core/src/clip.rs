//! Frames, depth maps and the clips built from them.
//!
//! Storage is `f32` so that the raw on-disk format round-trips losslessly;
//! all arithmetic on top of it is done in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Depth value marking "no surface". Largest finite `f32`, so depth arrays
/// stay finite.
pub const DEPTH_SENTINEL: f32 = f32::MAX;

#[inline]
pub fn is_sentinel(d: f32) -> bool {
    d >= DEPTH_SENTINEL
}

/// Rec. 601 luma.
#[inline]
pub fn luminance(rgb: [f32; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f32; 3]>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Self {
            width,
            height,
            rgb: vec![color; width * height],
        }
    }

    pub fn new(width: usize, height: usize, rgb: Vec<[f32; 3]>) -> Result<Self> {
        if width * height == 0 || rgb.len() != width * height {
            return Err(invalid(format!(
                "frame {width}x{height} with {} pixels",
                rgb.len()
            )));
        }
        Ok(Self { width, height, rgb })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.rgb[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f32; 3]) {
        self.rgb[y * self.width + x] = c;
    }

    pub fn luma(&self) -> Vec<f64> {
        self.rgb.iter().map(|&c| luminance(c)).collect()
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![DEPTH_SENTINEL; width * height],
        }
    }

    pub fn new(width: usize, height: usize, depth: Vec<f32>) -> Result<Self> {
        if width * height == 0 || depth.len() != width * height {
            return Err(invalid(format!(
                "depth map {width}x{height} with {} values",
                depth.len()
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub frame_rate: f64,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| invalid("clip needs at least one frame"))?;
        if frames.iter().any(|f| !f.same_size(first)) {
            return Err(invalid("clip frames differ in size"));
        }
        Ok(Self {
            frames,
            frame_rate: 8.0,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn same_shape(&self, other: &VideoClip) -> bool {
        self.len() == other.len()
            && self.width() == other.width()
            && self.height() == other.height()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthClip {
    pub maps: Vec<DepthMap>,
}

impl DepthClip {
    pub fn new(maps: Vec<DepthMap>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| invalid("depth clip needs at least one map"))?;
        if maps
            .iter()
            .any(|m| m.width != first.width || m.height != first.height)
        {
            return Err(invalid("depth maps differ in size"));
        }
        Ok(Self { maps })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn matches(&self, clip: &VideoClip) -> bool {
        self.len() == clip.len()
            && self.maps[0].width == clip.width()
            && self.maps[0].height == clip.height()
    }
}

/// Per-frame binary visibility: 1 = covered by at least one splat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionMask {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<u8>>,
}

impl OcclusionMask {
    pub fn full(width: usize, height: usize, n_frames: usize, value: u8) -> Self {
        Self {
            width,
            height,
            frames: vec![vec![value; width * height]; n_frames],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn matches(&self, clip: &VideoClip) -> bool {
        self.len() == clip.len() && self.width == clip.width() && self.height == clip.height()
    }

    pub fn visible_count(&self) -> usize {
        self.frames
            .iter()
            .map(|f| f.iter().filter(|&&v| v != 0).count())
            .sum()
    }
}
