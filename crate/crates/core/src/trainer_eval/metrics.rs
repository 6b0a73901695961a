use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraCalibration;
use crate::network::{Network, StereoSample};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Predicted disparities are clamped to at least this many pixels before
/// conversion to depth.
pub const MIN_PRED_DISPARITY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityMetrics {
    /// Percent of pixels with `|error| > 1` px.
    pub err_gt_1px: f64,
    pub err_gt_2px: f64,
    pub err_gt_3px: f64,
    pub rmse_px: f64,
    pub mae_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse_m: f64,
    pub mae_m: f64,
    /// Inverse depth errors in 1/km.
    pub irmse_km: f64,
    pub imae_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub disparity: DisparityMetrics,
    pub depth: DepthMetrics,
    pub n_pixels: usize,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 9] = [
        "err_gt_1px",
        "err_gt_2px",
        "err_gt_3px",
        "rmse_px",
        "mae_px",
        "rmse_m",
        "mae_m",
        "irmse_km",
        "imae_km",
    ];

    /// Metric values in [`Self::NAMES`] order.
    pub fn values(&self) -> [f64; 9] {
        let (d, z) = (&self.disparity, &self.depth);
        [d.err_gt_1px, d.err_gt_2px, d.err_gt_3px, d.rmse_px, d.mae_px, z.rmse_m, z.mae_m, z.irmse_km, z.imae_km]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES.iter().position(|&n| n == name).map(|i| self.values()[i])
    }

    /// `metric,value` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (n, v) in Self::NAMES.iter().zip(self.values()) {
            s.push_str(&format!("{n},{v}\n"));
        }
        s.push_str(&format!("n_pixels,{}\n", self.n_pixels));
        s
    }
}

/// Running sums over valid pixels of any number of frames.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    n: usize,
    over: [usize; 3],
    sq_px: f64,
    abs_px: f64,
    sq_m: f64,
    abs_m: f64,
    sq_inv: f64,
    abs_inv: f64,
}

impl MetricsAccumulator {
    pub fn add_pixel(&mut self, pred: f64, gt: f64, calib: &CameraCalibration) -> Result<()> {
        if !(gt > 0.0) || !pred.is_finite() {
            return Err(Error::invalid(
                "metrics",
                format!("need positive ground truth and finite prediction, got {gt} and {pred}"),
            ));
        }
        let e = pred - gt;
        self.n += 1;
        for (k, c) in self.over.iter_mut().enumerate() {
            if e.abs() > (k + 1) as f64 {
                *c += 1;
            }
        }
        self.sq_px += e * e;
        self.abs_px += e.abs();
        let fb = calib.focal_px * calib.baseline_m;
        let (zp, zg) = (fb / pred.max(MIN_PRED_DISPARITY), fb / gt);
        let ez = zp - zg;
        self.sq_m += ez * ez;
        self.abs_m += ez.abs();
        let ei = 1000.0 / zp - 1000.0 / zg;
        self.sq_inv += ei * ei;
        self.abs_inv += ei.abs();
        Ok(())
    }

    /// Adds every valid pixel of one `[H, W]` prediction.
    pub fn add<T: Scalar>(&mut self, pred: &Tensor<T>, gt: &Tensor<T>, valid: &[bool], calib: &CameraCalibration) -> Result<()> {
        gt.expect_shape("metrics", "ground truth", pred.shape())?;
        if valid.len() != pred.len() {
            return Err(Error::shape("metrics", "mask length", pred.len(), valid.len()));
        }
        for ((&p, &g), &ok) in pred.data().iter().zip(gt.data()).zip(valid) {
            if ok {
                self.add_pixel(p.to_f64_lossy(), g.to_f64_lossy(), calib)?;
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.n == 0 {
            return Err(Error::NoSupervisedPixels);
        }
        let n = self.n as f64;
        let pct = |c: usize| 100.0 * c as f64 / n;
        Ok(MetricsReport {
            disparity: DisparityMetrics {
                err_gt_1px: pct(self.over[0]),
                err_gt_2px: pct(self.over[1]),
                err_gt_3px: pct(self.over[2]),
                rmse_px: (self.sq_px / n).sqrt(),
                mae_px: self.abs_px / n,
            },
            depth: DepthMetrics {
                rmse_m: (self.sq_m / n).sqrt(),
                mae_m: self.abs_m / n,
                irmse_km: (self.sq_inv / n).sqrt(),
                imae_km: self.abs_inv / n,
            },
            n_pixels: self.n,
        })
    }
}

/// Metrics of precomputed predictions, pooled over all valid pixels.
pub fn metrics_for<T: Scalar>(preds: &[Tensor<T>], dataset: &[StereoSample<T>]) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if preds.len() != dataset.len() {
        return Err(Error::shape("metrics", "prediction count", dataset.len(), preds.len()));
    }
    let mut acc = MetricsAccumulator::default();
    for (p, s) in preds.iter().zip(dataset) {
        acc.add(p, &s.gt_disparity, &s.gt_valid, &s.calib)?;
    }
    acc.finish()
}

/// Inference-mode predictions and metrics over a dataset.
///
/// Disparity errors use every valid ground-truth pixel; depth errors use
/// `f B / d` of both maps with each frame's calibration.
pub fn evaluate<T: Scalar>(net: &mut Network<T>, dataset: &[StereoSample<T>]) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = dataset.iter().map(|s| net.predict(s)).collect::<Result<Vec<_>>>()?;
    metrics_for(&preds, dataset)
}
