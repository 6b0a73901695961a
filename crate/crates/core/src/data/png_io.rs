//! 16-bit KITTI-convention PNG codec and image readers.
//!
//! A stored pixel `p` encodes the value `p / 256`; `p == 0` marks an invalid
//! pixel. Depth maps are in meters. Files whose stem ends in `_disp` hold
//! disparity in pixels with the same encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder};

use crate::error::{Error, Result};
use crate::geometry::{depth_to_disparity, CameraCalibration, SparseDisparityMap};
use crate::numerics::Tensor;
use crate::scalar::{cst, Scalar};

/// Largest value the 16-bit codec can store.
pub const MAX_ENCODED: f64 = u16::MAX as f64 / 256.0;

/// Values decoded from one 16-bit PNG.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major; `None` where the stored pixel is 0.
    pub values: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.width + col]
    }

    pub fn n_valid(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Keeps the bottom `height` rows.
    pub fn crop_bottom(&self, height: usize) -> Result<Self> {
        if height == 0 || height > self.height {
            return Err(Error::invalid("crop_bottom", format!("cannot keep {height} of {} rows", self.height)));
        }
        let top = self.height - height;
        Ok(DepthMap {
            width: self.width,
            height,
            values: self.values[top * self.width..].to_vec(),
        })
    }

    /// Metric depth to left-view disparity `f * B / z`.
    pub fn depth_to_disparity(&self, calib: &CameraCalibration) -> Result<SparseDisparityMap> {
        let mut out = SparseDisparityMap::empty(self.width, self.height);
        for (i, v) in self.values.iter().enumerate() {
            if let Some(z) = v {
                out.set(i / self.width, i % self.width, depth_to_disparity(*z, calib)?);
            }
        }
        Ok(out)
    }

    /// Reads the stored values as disparities.
    pub fn as_disparity(&self) -> SparseDisparityMap {
        let mut out = SparseDisparityMap::empty(self.width, self.height);
        for (i, v) in self.values.iter().enumerate() {
            if let Some(d) = v {
                out.set(i / self.width, i % self.width, *d);
            }
        }
        out
    }

    pub fn from_disparity(map: &SparseDisparityMap) -> Self {
        let values = map.values().iter().zip(map.valid()).map(|(&v, &ok)| ok.then_some(v)).collect();
        DepthMap {
            width: map.width(),
            height: map.height(),
            values,
        }
    }
}

/// True when the file stem carries the `_disp` suffix.
pub fn is_disparity_file(path: impl AsRef<Path>) -> bool {
    path.as_ref()
        .file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.ends_with("_disp"))
}

fn open(path: &Path) -> Result<png::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    dec.read_info().map_err(|e| Error::format(path, format!("not a readable PNG: {e}")))
}

fn read_frame(path: &Path, reader: &mut png::Reader<BufReader<File>>) -> Result<Vec<u8>> {
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("corrupt PNG data: {e}")))?;
    buf.truncate(info.buffer_size());
    Ok(buf)
}

/// Reads a 16-bit single-channel PNG; anything else is an error naming the file.
pub fn read_depth_png(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.color_type != ColorType::Grayscale || info.bit_depth != BitDepth::Sixteen {
        return Err(Error::format(
            path,
            format!(
                "expected a 16-bit single-channel PNG, found {:?} at {} bits",
                info.color_type, info.bit_depth as u8
            ),
        ));
    }
    let buf = read_frame(path, &mut reader)?;
    let values = buf
        .chunks_exact(2)
        .map(|b| match u16::from_be_bytes([b[0], b[1]]) {
            0 => None,
            p => Some(p as f64 / 256.0),
        })
        .collect();
    Ok(DepthMap { width: w, height: h, values })
}

/// Writes `round(256 * v)` per pixel, 0 for `None`.
///
/// Values that would round to 0 or exceed [`MAX_ENCODED`] are rejected
/// because they cannot be read back as the same valid value.
pub fn write_depth_png(path: impl AsRef<Path>, map: &DepthMap) -> Result<()> {
    let path = path.as_ref();
    if map.values.len() != map.width * map.height || map.width == 0 || map.height == 0 {
        return Err(Error::invalid("write_depth_png", "pixel count does not match the extents"));
    }
    let mut bytes = Vec::with_capacity(2 * map.values.len());
    for v in &map.values {
        let p = match *v {
            None => 0u16,
            Some(v) => {
                let p = (v * 256.0).round();
                if !(p >= 1.0 && p <= u16::MAX as f64) {
                    return Err(Error::format(path, format!("value {v} is not representable in a 16-bit map")));
                }
                p as u16
            }
        };
        bytes.extend_from_slice(&p.to_be_bytes());
    }
    write_png(path, map.width, map.height, ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}

fn write_png(path: &Path, w: usize, h: usize, color: ColorType, depth: BitDepth, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let fail = |e: png::EncodingError| Error::format(path, format!("PNG encoding failed: {e}"));
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(bytes).map_err(fail)?;
    writer.finish().map_err(fail)
}

/// Reads an 8- or 16-bit gray, RGB or RGBA PNG as a `[3, H, W]` tensor in `[0, 1]`.
pub fn read_rgb_png<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        other => return Err(Error::format(path, format!("unsupported color type {other:?}"))),
    };
    let (bytes_per, scale) = match info.bit_depth {
        BitDepth::Eight => (1, 255.0),
        BitDepth::Sixteen => (2, 65535.0),
        other => return Err(Error::format(path, format!("unsupported bit depth {}", other as u8))),
    };
    let buf = read_frame(path, &mut reader)?;
    let npx = w * h;
    let mut data = vec![T::zero(); 3 * npx];
    for i in 0..npx {
        for ch in 0..3 {
            let k = (i * channels + ch.min(channels - 1)) * bytes_per;
            let v = if bytes_per == 1 {
                buf[k] as f64
            } else {
                u16::from_be_bytes([buf[k], buf[k + 1]]) as f64
            };
            data[ch * npx + i] = cst(v / scale);
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Writes a `[3, H, W]` tensor in `[0, 1]` as 8-bit RGB.
pub fn write_rgb_png<T: Scalar>(path: impl AsRef<Path>, image: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let &[3, h, w] = image.shape() else {
        return Err(Error::shape("write_rgb_png", "image", "[3, H, W]", image.shape()));
    };
    let npx = h * w;
    let d = image.data();
    let bytes: Vec<u8> = (0..npx)
        .flat_map(|i| (0..3).map(move |ch| (d[ch * npx + i].to_f64().unwrap_or(0.0).clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    write_png(path, w, h, ColorType::Rgb, BitDepth::Eight, &bytes)
}

/// 8-bit grayscale view of an `[H, W]` map, linearly scaled from `[0, max]`.
pub fn write_visualization_png<T: Scalar>(path: impl AsRef<Path>, map: &Tensor<T>, max: f64) -> Result<()> {
    let path = path.as_ref();
    let &[h, w] = map.shape() else {
        return Err(Error::shape("write_visualization_png", "map", "[H, W]", map.shape()));
    };
    if !(max > 0.0) {
        return Err(Error::invalid("write_visualization_png", "scale maximum must be positive"));
    }
    let bytes: Vec<u8> = map
        .data()
        .iter()
        .map(|v| ((v.to_f64().unwrap_or(0.0) / max).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_png(path, w, h, ColorType::Grayscale, BitDepth::Eight, &bytes)
}

/// Stores a dense `[H, W]` disparity tensor; pixels where `valid` is false
/// (or the value rounds to 0) are written as invalid.
pub fn write_disparity_png<T: Scalar>(path: impl AsRef<Path>, disp: &Tensor<T>, valid: Option<&[bool]>) -> Result<()> {
    let &[h, w] = disp.shape() else {
        return Err(Error::shape("write_disparity_png", "map", "[H, W]", disp.shape()));
    };
    let values = disp
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let v = v.to_f64().unwrap_or(0.0).clamp(0.0, MAX_ENCODED);
            (valid.is_none_or(|m| m[i]) && (v * 256.0).round() >= 1.0).then_some(v)
        })
        .collect();
    write_depth_png(path, &DepthMap { width: w, height: h, values })
}
