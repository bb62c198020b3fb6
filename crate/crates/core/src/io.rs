//! On-disk formats: raw float clips, PNG previews, JSON/CSV helpers and the
//! hashed manifest.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clip::{DepthClip, DepthMap, Frame, OcclusionMask, VideoClip, DEPTH_SENTINEL};
use crate::error::{DevisError, Result};

pub const RAW_MAGIC: &str = "DVRAW1";
/// Raw depth values at or above this are read back as the sentinel.
pub const RAW_SENTINEL_MIN: f32 = 3.4e38;
pub const MANIFEST_NAME: &str = "manifest.json";
/// Files that legitimately differ between identical runs; kept out of the manifest.
pub const UNHASHED: [&str; 1] = ["timing.csv"];

fn data_err(path: &Path, msg: impl std::fmt::Display) -> DevisError {
    DevisError::Data(format!("{}: {msg}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Raw array: header line then planar, frame-major little-endian `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn write_raw(path: &Path, raw: &RawArray) -> Result<()> {
    let n = raw.width * raw.height * raw.frames * raw.channels;
    if raw.data.len() != n {
        return Err(data_err(path, format!("raw payload has {} values, header implies {n}", raw.data.len())));
    }
    let mut f = create(path)?;
    writeln!(f, "{RAW_MAGIC} {} {} {} {}", raw.width, raw.height, raw.frames, raw.channels)?;
    for v in &raw.data {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<RawArray> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != RAW_MAGIC {
        return Err(data_err(path, "missing DVRAW1 header"));
    }
    let dims: Vec<usize> = parts[1..]
        .iter()
        .map(|s| s.parse::<usize>().map_err(|e| data_err(path, e)))
        .collect::<Result<_>>()?;
    let (width, height, frames, channels) = (dims[0], dims[1], dims[2], dims[3]);
    let n = width * height * frames * channels;
    let mut bytes = Vec::with_capacity(n * 4);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(data_err(path, format!("expected {} payload bytes, found {}", n * 4, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(RawArray { width, height, frames, channels, data })
}

pub fn write_clip_raw(path: &Path, clip: &VideoClip) -> Result<()> {
    let (w, h) = (clip.width(), clip.height());
    let mut data = Vec::with_capacity(w * h * 3 * clip.len());
    for f in &clip.frames {
        for c in 0..3 {
            data.extend(f.rgb.iter().map(|p| p[c]));
        }
    }
    write_raw(path, &RawArray { width: w, height: h, frames: clip.len(), channels: 3, data })
}

pub fn read_clip_raw(path: &Path) -> Result<VideoClip> {
    let raw = read_raw(path)?;
    if raw.channels != 3 {
        return Err(data_err(path, format!("clip needs 3 channels, found {}", raw.channels)));
    }
    let plane = raw.width * raw.height;
    let frames = raw
        .data
        .chunks_exact(3 * plane)
        .map(|fd| Frame::new(raw.width, raw.height, (0..plane).map(|i| [fd[i], fd[plane + i], fd[2 * plane + i]]).collect()))
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames).map_err(|e| data_err(path, e))
}

pub fn write_depth_raw(path: &Path, depth: &DepthClip) -> Result<()> {
    let first = depth.maps.first().ok_or_else(|| data_err(path, "empty depth clip"))?;
    let data = depth.maps.iter().flat_map(|m| m.depth.iter().copied()).collect();
    write_raw(path, &RawArray { width: first.width, height: first.height, frames: depth.len(), channels: 1, data })
}

pub fn read_depth_raw(path: &Path) -> Result<DepthClip> {
    let raw = read_raw(path)?;
    if raw.channels != 1 {
        return Err(data_err(path, format!("depth needs 1 channel, found {}", raw.channels)));
    }
    let maps = raw
        .data
        .chunks_exact(raw.width * raw.height)
        .map(|d| {
            let v = d.iter().map(|&x| if x >= RAW_SENTINEL_MIN { DEPTH_SENTINEL } else { x }).collect();
            DepthMap::new(raw.width, raw.height, v)
        })
        .collect::<Result<Vec<_>>>()?;
    DepthClip::new(maps).map_err(|e| data_err(path, e))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Frames laid out left to right.
pub fn write_clip_png(path: &Path, clip: &VideoClip) -> Result<()> {
    write_montage(path, &[clip])
}

/// One row per frame, one column per clip.
pub fn write_montage(path: &Path, panels: &[&VideoClip]) -> Result<()> {
    let first = panels.first().ok_or_else(|| data_err(path, "montage needs at least one panel"))?;
    let (w, h) = (first.width(), first.height());
    if panels.iter().any(|p| p.width() != w || p.height() != h) {
        return Err(data_err(path, "montage panels differ in size"));
    }
    let rows = panels.iter().map(|p| p.len()).max().unwrap_or(0);
    let (cols, tile_rows) = if panels.len() == 1 { (first.len(), 1) } else { (panels.len(), rows) };
    let mut img = RgbImage::new((cols * w) as u32, (tile_rows * h) as u32);
    let mut put = |frame: &Frame, col: usize, row: usize| {
        for y in 0..h {
            for x in 0..w {
                let p = frame.get(x, y);
                img.put_pixel((col * w + x) as u32, (row * h + y) as u32, Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])]));
            }
        }
    };
    if panels.len() == 1 {
        for (t, f) in first.frames.iter().enumerate() {
            put(f, t, 0);
        }
    } else {
        for (c, p) in panels.iter().enumerate() {
            for (t, f) in p.frames.iter().enumerate() {
                put(f, c, t);
            }
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    img.save(path)?;
    Ok(())
}

/// Mask frames left to right as 8-bit grey, 255 = visible.
pub fn write_mask_png(path: &Path, mask: &OcclusionMask) -> Result<()> {
    let (w, h) = (mask.width, mask.height);
    let mut img = GrayImage::new((w * mask.len().max(1)) as u32, h as u32);
    for (t, m) in mask.frames.iter().enumerate() {
        for (i, &v) in m.iter().enumerate() {
            img.put_pixel((t * w + i % w) as u32, (i / w) as u32, Luma([if v != 0 { 255 } else { 0 }]));
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    img.save(path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| data_err(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(DevisError::from)).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes every file under `root` (paths relative, `/`-separated, sorted).
pub fn build_manifest(root: &Path) -> Result<Manifest> {
    let mut paths = Vec::new();
    walk(root, &mut paths)?;
    let mut files = Vec::new();
    for p in paths {
        let rel = p.strip_prefix(root).map_err(|e| data_err(&p, e))?;
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if rel == MANIFEST_NAME || UNHASHED.contains(&name.as_str()) {
            continue;
        }
        files.push(ManifestEntry { sha256: sha256_file(&p)?, bytes: fs::metadata(&p)?.len(), path: rel });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(Manifest { files })
}

pub fn write_manifest(root: &Path) -> Result<Manifest> {
    let m = build_manifest(root)?;
    write_json(&root.join(MANIFEST_NAME), &m)?;
    Ok(m)
}
