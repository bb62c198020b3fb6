//! Depth-based forward warping with a z-buffer.
//!
//! Every source pixel with a valid depth is lifted to 3-D, moved by the
//! relative pose and splatted into the target view. The splat covers the
//! target pixels whose centers fall strictly inside a 2x2-pixel square
//! centered on the projected point. Nearest depth wins; equal depths keep the
//! earlier source pixel in row-major order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Pose, Trajectory};
use crate::clip::{is_sentinel, DepthClip, DepthMap, Frame, OcclusionMask, VideoClip, DEPTH_SENTINEL};
use crate::error::{invalid, Result};

const NEAR_PLANE: f64 = 1e-3;
const HALF: f64 = 1.0;
/// Projections this close to a pixel center are treated as exactly on it.
const SNAP: f64 = 1e-6;

#[inline]
fn snap(u: f64) -> f64 {
    let c = (u - 0.5).round() + 0.5;
    if (u - c).abs() < SNAP {
        c
    } else {
        u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionResult {
    pub clip: VideoClip,
    pub mask: OcclusionMask,
    /// Target-view depth, sentinel where nothing landed.
    pub depth: DepthClip,
}

impl ReprojectionResult {
    pub fn len(&self) -> usize {
        self.clip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip.is_empty()
    }

    /// Frames `range` of all three parts.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Ok(Self {
            clip: VideoClip::new(self.clip.frames[range.clone()].to_vec())?,
            mask: OcclusionMask {
                width: self.mask.width,
                height: self.mask.height,
                frames: self.mask.frames[range.clone()].to_vec(),
            },
            depth: DepthClip::new(self.depth.maps[range].to_vec())?,
        })
    }

    /// Concatenates `other` after `self` along time.
    pub fn concat(mut self, other: Self) -> Result<Self> {
        if self.mask.width != other.mask.width || self.mask.height != other.mask.height {
            return Err(invalid("cannot concatenate clips of different sizes"));
        }
        self.clip.frames.extend(other.clip.frames);
        self.mask.frames.extend(other.mask.frames);
        self.depth.maps.extend(other.depth.maps);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mask.matches(&self.clip) || !self.depth.matches(&self.clip) {
            return Err(invalid("reprojection parts are inconsistent"));
        }
        Ok(())
    }
}

/// Range of target pixel indices whose centers lie strictly within 1 of `u`.
#[inline]
fn footprint(u: f64, size: usize, half: f64) -> std::ops::Range<usize> {
    let lo = ((u - 0.5 - half).floor() as i64 + 1).max(0);
    let hi = ((u - 0.5 + half).ceil() as i64 - 1).min(size as i64 - 1);
    if hi < lo {
        0..0
    } else {
        lo as usize..hi as usize + 1
    }
}

/// Warps one frame into the view reached by `relative_pose`.
pub fn reproject_frame(
    frame: &Frame,
    depth: &DepthMap,
    intr: &Intrinsics,
    relative_pose: &Pose,
) -> Result<(Frame, Vec<u8>, DepthMap)> {
    if depth.width != frame.width || depth.height != frame.height {
        return Err(invalid("depth map does not match frame size"));
    }
    if intr.width != frame.width || intr.height != frame.height {
        return Err(invalid("intrinsics do not match frame size"));
    }
    let (w, h) = (frame.width, frame.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut out = Frame::filled(w, h, [0.0; 3]);
    let mut mask = vec![0u8; w * h];
    for sy in 0..h {
        for sx in 0..w {
            let d = depth.get(sx, sy);
            if is_sentinel(d) {
                continue;
            }
            let p = intr.pixel_ray(sx, sy) * d as f64;
            let q = relative_pose.apply(&p);
            if q.z <= NEAR_PLANE {
                continue;
            }
            let (u, v) = intr.project(&q);
            let (u, v) = (snap(u), snap(v));
            if !u.is_finite() || !v.is_finite() {
                continue;
            }
            let color = frame.get(sx, sy);
            for ty in footprint(v, h, HALF) {
                for tx in footprint(u, w, HALF) {
                    let i = ty * w + tx;
                    if q.z < zbuf[i] {
                        zbuf[i] = q.z;
                        out.rgb[i] = color;
                        mask[i] = 1;
                    }
                }
            }
        }
    }
    let out_depth = zbuf
        .iter()
        .map(|&z| if z.is_finite() { z as f32 } else { DEPTH_SENTINEL })
        .collect();
    Ok((out, mask, DepthMap::new(w, h, out_depth)?))
}

/// Frame-wise [`reproject_frame`] with one relative pose per frame.
pub fn reproject_clip(
    clip: &VideoClip,
    depths: &DepthClip,
    intr: &Intrinsics,
    traj: &Trajectory,
) -> Result<ReprojectionResult> {
    if depths.len() != clip.len() || traj.len() != clip.len() {
        return Err(invalid(format!(
            "length mismatch: clip {}, depth {}, trajectory {}",
            clip.len(),
            depths.len(),
            traj.len()
        )));
    }
    let warped = clip
        .frames
        .par_iter()
        .zip(depths.maps.par_iter())
        .zip(traj.poses.par_iter())
        .map(|((f, d), p)| reproject_frame(f, d, intr, p))
        .collect::<Result<Vec<_>>>()?;
    let mut frames = Vec::with_capacity(warped.len());
    let mut masks = Vec::with_capacity(warped.len());
    let mut maps = Vec::with_capacity(warped.len());
    for (f, m, d) in warped {
        frames.push(f);
        masks.push(m);
        maps.push(d);
    }
    Ok(ReprojectionResult {
        clip: VideoClip::new(frames)?,
        mask: OcclusionMask {
            width: clip.width(),
            height: clip.height(),
            frames: masks,
        },
        depth: DepthClip::new(maps)?,
    })
}

/// Fraction of visible pixels over all frames.
pub fn visible_fraction(mask: &OcclusionMask) -> f64 {
    let total = mask.width * mask.height * mask.len();
    if total == 0 {
        return 0.0;
    }
    mask.visible_count() as f64 / total as f64
}
