//! Rectified pinhole stereo geometry and sparse LiDAR disparity maps.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Value stored at invalid pixels of every sparse map.
pub const DEFAULT_FILL: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraCalibration {
    pub focal_px: f64,
    pub baseline_m: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: usize,
    pub image_h: usize,
}

impl CameraCalibration {
    pub fn new(focal_px: f64, baseline_m: f64, cx: f64, cy: f64, image_w: usize, image_h: usize) -> Result<Self> {
        let c = CameraCalibration {
            focal_px,
            baseline_m,
            cx,
            cy,
            image_w,
            image_h,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0) || !(self.baseline_m > 0.0) {
            return Err(Error::invalid("calibration", "focal_px and baseline_m must be positive"));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::invalid("calibration", "image extents must be positive"));
        }
        Ok(())
    }

    /// Parses whitespace-separated `key value` lines.
    ///
    /// Required keys: `focal_px baseline_m cx cy width height`. Blank lines
    /// and `#` comments are ignored.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut vals: [Option<f64>; 6] = [None; 6];
        const KEYS: [&str; 6] = ["focal_px", "baseline_m", "cx", "cy", "width", "height"];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(key), Some(value), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::format(origin, format!("line {}: expected `key value`", lineno + 1)));
            };
            let slot = KEYS
                .iter()
                .position(|&k| k == key)
                .ok_or_else(|| Error::format(origin, format!("line {}: unknown key `{key}`", lineno + 1)))?;
            let v: f64 = value
                .parse()
                .map_err(|_| Error::format(origin, format!("line {}: `{value}` is not a number", lineno + 1)))?;
            vals[slot] = Some(v);
        }
        let get = |i: usize| vals[i].ok_or_else(|| Error::format(origin, format!("missing key `{}`", KEYS[i])));
        let (w, h) = (get(4)?, get(5)?);
        if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
            return Err(Error::format(origin, "width and height must be positive integers"));
        }
        let c = CameraCalibration {
            focal_px: get(0)?,
            baseline_m: get(1)?,
            cx: get(2)?,
            cy: get(3)?,
            image_w: w as usize,
            image_h: h as usize,
        };
        c.validate().map_err(|e| Error::format(origin, e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Calibration of the window `height x width` whose first pixel is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.image_h || left + width > self.image_w {
            return Err(Error::invalid("calibration", "crop window exceeds the image"));
        }
        CameraCalibration::new(
            self.focal_px,
            self.baseline_m,
            self.cx - left as f64,
            self.cy - top as f64,
            width,
            height,
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "focal_px {}\nbaseline_m {}\ncx {}\ncy {}\nwidth {}\nheight {}\n",
            self.focal_px, self.baseline_m, self.cx, self.cy, self.image_w, self.image_h
        )
    }
}

pub fn depth_to_disparity(z_m: f64, calib: &CameraCalibration) -> Result<f64> {
    if !(z_m > 0.0) {
        return Err(Error::invalid("depth_to_disparity", format!("depth must be positive, got {z_m}")));
    }
    Ok(calib.focal_px * calib.baseline_m / z_m)
}

pub fn disparity_to_depth(d_px: f64, calib: &CameraCalibration) -> Result<f64> {
    if !(d_px > 0.0) {
        return Err(Error::invalid("disparity_to_depth", format!("disparity must be positive, got {d_px}")));
    }
    Ok(calib.focal_px * calib.baseline_m / d_px)
}

/// Per-pixel disparity with a validity mask. Invalid pixels hold `fill`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
    fill: f64,
}

impl SparseDisparityMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self::empty_with_fill(width, height, DEFAULT_FILL)
    }

    pub fn empty_with_fill(width: usize, height: usize, fill: f64) -> Self {
        SparseDisparityMap {
            width,
            height,
            values: vec![fill; width * height],
            valid: vec![false; width * height],
            fill,
        }
    }

    /// Builds a map from dense values; pixels with `valid[p] == false` are
    /// overwritten with the fill constant.
    pub fn from_parts(width: usize, height: usize, mut values: Vec<f64>, valid: Vec<bool>, fill: f64) -> Result<Self> {
        let n = width * height;
        if values.len() != n || valid.len() != n {
            return Err(Error::shape("sparse_map", "pixel count", n, (values.len(), valid.len())));
        }
        for (v, &ok) in values.iter_mut().zip(&valid) {
            if ok {
                if !(*v >= 0.0) || !v.is_finite() {
                    return Err(Error::invalid("sparse_map", format!("valid disparity must be finite and >= 0, got {v}")));
                }
            } else {
                *v = fill;
            }
        }
        Ok(SparseDisparityMap {
            width,
            height,
            values,
            valid,
            fill,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fill(&self) -> f64 {
        self.fill
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.width + col;
        self.valid[i].then_some(self.values[i])
    }

    pub fn set(&mut self, row: usize, col: usize, d: f64) {
        assert!(d >= 0.0 && d.is_finite(), "disparity must be finite and >= 0");
        let i = row * self.width + col;
        self.values[i] = d;
        self.valid[i] = true;
    }

    pub fn clear(&mut self, row: usize, col: usize) {
        let i = row * self.width + col;
        self.values[i] = self.fill;
        self.valid[i] = false;
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn is_all_invalid(&self) -> bool {
        !self.valid.iter().any(|&v| v)
    }

    /// Valid pixels as `(row, col, disparity)` in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.valid
            .iter()
            .enumerate()
            .filter(|(_, &ok)| ok)
            .map(move |(i, _)| (i / self.width, i % self.width, self.values[i]))
    }

    /// Rectangular crop; `top, left` is the first kept pixel.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        assert!(top + height <= self.height && left + width <= self.width, "crop out of bounds");
        let mut out = Self::empty_with_fill(width, height, self.fill);
        for r in 0..height {
            for c in 0..width {
                let src = (top + r) * self.width + left + c;
                let dst = r * width + c;
                out.values[dst] = self.values[src];
                out.valid[dst] = self.valid[src];
            }
        }
        out
    }

    /// Downsamples by an integer factor: validity is OR-pooled over each
    /// `factor x factor` cell and the value is the mean of the valid
    /// disparities in the cell, divided by `factor`.
    pub fn downsample(&self, factor: usize) -> Self {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = Self::empty_with_fill(w, h, self.fill);
        for r in 0..h {
            for c in 0..w {
                let (mut sum, mut n) = (0.0, 0usize);
                for dr in 0..factor {
                    for dc in 0..factor {
                        if let Some(v) = self.get(r * factor + dr, c * factor + dc) {
                            sum += v;
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    out.set(r, c, sum / n as f64 / factor as f64);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StereoView {
    Left,
    Right,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LidarPointCloud {
    points: Vec<[f64; 3]>,
}

impl LidarPointCloud {
    /// Keeps only points in front of the camera (`z > 0`).
    pub fn new(points: impl IntoIterator<Item = [f64; 3]>) -> Self {
        LidarPointCloud {
            points: points.into_iter().filter(|p| p[2] > 0.0 && p.iter().all(|v| v.is_finite())).collect(),
        }
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Back-projects every valid pixel of a left-view disparity map.
    pub fn from_left_disparity(map: &SparseDisparityMap, calib: &CameraCalibration) -> Self {
        let pts = map.iter_valid().filter(|&(_, _, d)| d > 0.0).map(|(r, c, d)| {
            let z = calib.focal_px * calib.baseline_m / d;
            [(c as f64 - calib.cx) * z / calib.focal_px, (r as f64 - calib.cy) * z / calib.focal_px, z]
        });
        LidarPointCloud::new(pts)
    }
}

/// Pinhole projection of a cloud into one view of the rectified pair.
///
/// Pixels are rounded to nearest; on collision the nearest point wins.
/// Points outside the image are dropped.
pub fn project_lidar(cloud: &LidarPointCloud, calib: &CameraCalibration, target: StereoView) -> Result<SparseDisparityMap> {
    project_lidar_with_fill(cloud, calib, target, DEFAULT_FILL)
}

pub fn project_lidar_with_fill(
    cloud: &LidarPointCloud,
    calib: &CameraCalibration,
    target: StereoView,
    fill: f64,
) -> Result<SparseDisparityMap> {
    if cloud.is_empty() {
        return Err(Error::invalid("project_lidar", "empty point cloud"));
    }
    let (w, h) = (calib.image_w, calib.image_h);
    let mut map = SparseDisparityMap::empty_with_fill(w, h, fill);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let shift = match target {
        StereoView::Left => 0.0,
        StereoView::Right => calib.baseline_m,
    };
    for &[x, y, z] in cloud.points() {
        let u = (calib.focal_px * (x - shift) / z + calib.cx).round();
        let v = (calib.focal_px * y / z + calib.cy).round();
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            continue;
        }
        let i = v as usize * w + u as usize;
        if z < zbuf[i] {
            zbuf[i] = z;
            map.set(v as usize, u as usize, depth_to_disparity(z, calib)?);
        }
    }
    Ok(map)
}

/// Re-renders a left-view sparse map into the right view through depth.
pub fn reproject_left_to_right(left: &SparseDisparityMap, calib: &CameraCalibration) -> Result<SparseDisparityMap> {
    let cloud = LidarPointCloud::from_left_disparity(left, calib);
    if cloud.is_empty() {
        return Ok(SparseDisparityMap::empty_with_fill(calib.image_w, calib.image_h, left.fill()));
    }
    project_lidar_with_fill(&cloud, calib, StereoView::Right, left.fill())
}

/// Keeps `round(density * n_valid)` valid pixels chosen uniformly without
/// replacement by a generator seeded with `seed`.
pub fn subsample_sparse(map: &SparseDisparityMap, density: f64, seed: u64) -> Result<SparseDisparityMap> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid("subsample_sparse", format!("density must lie in (0, 1], got {density}")));
    }
    let valid: Vec<usize> = map.valid.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect();
    let keep = (density * valid.len() as f64).round() as usize;
    if keep == valid.len() {
        return Ok(map.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SparseDisparityMap::empty_with_fill(map.width, map.height, map.fill);
    let mut chosen: Vec<usize> = sample(&mut rng, valid.len(), keep).into_iter().map(|k| valid[k]).collect();
    chosen.sort_unstable();
    for i in chosen {
        out.values[i] = map.values[i];
        out.valid[i] = true;
    }
    Ok(out)
}

/// Uniform bin of `d_px` among `d_hat` levels over `[0, d_max]`, clamped.
pub fn discretize_disparity(d_px: f64, d_hat: usize, d_max: f64) -> Result<usize> {
    if d_px < 0.0 || d_px.is_nan() {
        return Err(Error::invalid("discretize_disparity", format!("negative disparity {d_px}")));
    }
    if d_hat < 2 || !(d_max > 0.0) {
        return Err(Error::invalid("discretize_disparity", "need d_hat >= 2 and d_max > 0"));
    }
    let bin = (d_px / d_max * d_hat as f64).floor();
    Ok((bin.max(0.0) as usize).min(d_hat - 1))
}
