//! KITTI-layout frames and dataset manifests.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{reproject_left_to_right, CameraCalibration};
use crate::network::StereoSample;
use crate::numerics::Tensor;
use crate::scalar::{cst, Scalar};

use super::png_io::{is_disparity_file, read_depth_png, read_rgb_png};

/// Files of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KittiRecord {
    pub left: PathBuf,
    pub right: PathBuf,
    pub lidar: PathBuf,
    pub gt: PathBuf,
    pub calib: PathBuf,
}

fn crop_rgb<T: Scalar>(img: &Tensor<T>, top: usize, h: usize) -> Tensor<T> {
    let (full_h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    let mut out = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        let start = (ch * full_h + top) * w;
        out.extend_from_slice(&d[start..start + h * w]);
    }
    Tensor::from_vec(&[3, h, w], out).expect("crop inside the image")
}

/// Loads one frame, keeping the bottom `crop_h` rows when given.
///
/// LiDAR and ground truth are metric depth converted with `f * B / z`,
/// except ground truth files named `*_disp.png`, which already hold
/// disparity. The right LiDAR map is the left map reprojected through depth.
/// The calibration extents must match the uncropped images.
pub fn load_kitti_sample<T: Scalar>(rec: &KittiRecord, crop_h: Option<usize>) -> Result<StereoSample<T>> {
    let calib = CameraCalibration::load(&rec.calib)?;
    let left = read_rgb_png::<T>(&rec.left)?;
    let right = read_rgb_png::<T>(&rec.right)?;
    let lidar = read_depth_png(&rec.lidar)?;
    let gt = read_depth_png(&rec.gt)?;

    let (h, w) = (left.shape()[1], left.shape()[2]);
    let extents = [
        (&rec.right, right.shape()[1], right.shape()[2]),
        (&rec.lidar, lidar.height, lidar.width),
        (&rec.gt, gt.height, gt.width),
        (&rec.calib, calib.image_h, calib.image_w),
    ];
    for (path, eh, ew) in extents {
        if (eh, ew) != (h, w) {
            return Err(Error::format(
                path,
                format!("extent {ew}x{eh} does not match the left image {w}x{h}"),
            ));
        }
    }

    let keep = crop_h.unwrap_or(h);
    if keep == 0 || keep > h {
        return Err(Error::format(&rec.left, format!("cannot crop {h} rows to {keep}")));
    }
    let top = h - keep;
    let calib = calib.crop(top, 0, keep, w)?;
    let lidar = lidar.crop_bottom(keep)?;
    let gt = gt.crop_bottom(keep)?;

    let lidar_left = lidar.depth_to_disparity(&calib).map_err(|e| Error::format(&rec.lidar, e.to_string()))?;
    let gt_map = if is_disparity_file(&rec.gt) {
        gt.as_disparity()
    } else {
        gt.depth_to_disparity(&calib).map_err(|e| Error::format(&rec.gt, e.to_string()))?
    };
    let lidar_right = reproject_left_to_right(&lidar_left, &calib)?;
    Ok(StereoSample {
        left_rgb: crop_rgb(&left, top, keep),
        right_rgb: crop_rgb(&right, top, keep),
        lidar_left,
        lidar_right,
        gt_disparity: Tensor::from_vec(&[keep, w], gt_map.values().iter().map(|&v| cst(v)).collect())?,
        gt_valid: gt_map.valid().to_vec(),
        calib,
    })
}

/// Parses a manifest: one `left right lidar gt calib` record per line,
/// paths relative to the manifest's directory. Blank lines and `#`
/// comments are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<KittiRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let &[left, right, lidar, gt, calib] = fields.as_slice() else {
            return Err(Error::format(
                path,
                format!("line {}: expected 5 fields `left right lidar gt calib`, found {}", lineno + 1, fields.len()),
            ));
        };
        records.push(KittiRecord {
            left: base.join(left),
            right: base.join(right),
            lidar: base.join(lidar),
            gt: base.join(gt),
            calib: base.join(calib),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(records)
}

pub fn load_manifest<T: Scalar>(path: impl AsRef<Path>, crop_h: Option<usize>) -> Result<Vec<StereoSample<T>>> {
    read_manifest(path)?.iter().map(|r| load_kitti_sample(r, crop_h)).collect()
}
