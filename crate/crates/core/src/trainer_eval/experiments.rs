use std::time::Instant;

use crate::conditioning::param_count;
use crate::data::{gen_scene, SceneConfig};
use crate::error::{Error, Result};
use crate::geometry::{reproject_left_to_right, subsample_sparse};
use crate::layers::Module;
use crate::network::{Network, NetworkConfig, StereoSample, Variant};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

use super::metrics::{evaluate, MetricsReport};

/// Per-frame subsampling seed: distinct frames draw independent subsets.
fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub density: f64,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Mean and population standard deviation of one metric at one density.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub density: f64,
    pub mean: [f64; 9],
    pub std: [f64; 9],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensitySweep {
    pub runs: Vec<SweepRun>,
    /// One row per density, in input order.
    pub summary: Vec<SweepSummary>,
}

impl DensitySweep {
    /// Long format `density,seed,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("density,seed,metric,value\n");
        for r in &self.runs {
            for (name, v) in MetricsReport::NAMES.iter().zip(r.report.values()) {
                s.push_str(&format!("{},{},{name},{v}\n", r.density, r.seed));
            }
        }
        s
    }

    /// `density,metric,mean,std`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("density,metric,mean,std\n");
        for row in &self.summary {
            for (k, name) in MetricsReport::NAMES.iter().enumerate() {
                s.push_str(&format!("{},{name},{},{}\n", row.density, row.mean[k], row.std[k]));
            }
        }
        s
    }

    pub fn mean(&self, density: f64, metric: &str) -> Option<f64> {
        let k = MetricsReport::NAMES.iter().position(|&n| n == metric)?;
        self.summary.iter().find(|r| r.density == density).map(|r| r.mean[k])
    }
}

/// Evaluates the network with every frame's LiDAR uniformly subsampled to
/// each density, once per seed. The right map is the reprojection of the
/// subsampled left map; density 1.0 leaves frames untouched.
pub fn density_sweep<T: Scalar>(
    net: &mut Network<T>,
    dataset: &[StereoSample<T>],
    densities: &[f64],
    seeds: &[u64],
) -> Result<DensitySweep> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if densities.is_empty() || seeds.is_empty() {
        return Err(Error::Config("density sweep needs at least one density and one seed".into()));
    }
    if let Some(d) = densities.iter().find(|&&d| !(d > 0.0 && d <= 1.0)) {
        return Err(Error::Config(format!("density {d} is outside (0, 1]")));
    }
    let mut runs = Vec::with_capacity(densities.len() * seeds.len());
    let mut summary = Vec::with_capacity(densities.len());
    for &density in densities {
        let mut reports = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let report = if density == 1.0 {
                evaluate(net, dataset)?
            } else {
                let thinned = dataset
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let left = subsample_sparse(&s.lidar_left, density, frame_seed(seed, i))?;
                        let right = reproject_left_to_right(&left, &s.calib)?;
                        Ok(s.with_lidar(left, right))
                    })
                    .collect::<Result<Vec<_>>>()?;
                evaluate(net, &thinned)?
            };
            runs.push(SweepRun { density, seed, report });
            reports.push(report.values());
        }
        let n = reports.len() as f64;
        let mean: [f64; 9] = std::array::from_fn(|k| reports.iter().map(|r| r[k]).sum::<f64>() / n);
        let std: [f64; 9] =
            std::array::from_fn(|k| (reports.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt());
        summary.push(SweepSummary { density, mean, std });
    }
    Ok(DensitySweep { runs, summary })
}

/// Pixel rectangle `[top, top + height) x [left, left + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.top + self.height).contains(&row) && (self.left..self.left + self.width).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult<T> {
    /// `|after - before|`, `[H, W]`.
    pub delta: Tensor<T>,
    pub mean_abs_change_inside: f64,
    pub mean_abs_change_outside: f64,
}

/// Sets every valid left LiDAR pixel inside `region` to `new_disparity` and
/// measures how the inference-mode prediction moves. Both passes use right
/// maps reprojected from their left maps.
pub fn sensitivity_probe<T: Scalar>(
    net: &mut Network<T>,
    sample: &StereoSample<T>,
    region: Region,
    new_disparity: f64,
) -> Result<ProbeResult<T>> {
    let (h, w) = (sample.height(), sample.width());
    if region.height == 0 || region.width == 0 || region.top + region.height > h || region.left + region.width > w {
        return Err(Error::invalid("sensitivity_probe", format!("region {region:?} does not fit in {h}x{w}")));
    }
    let d_max = net.config().d_max() as f64;
    if !(new_disparity >= 0.0 && new_disparity < d_max) {
        return Err(Error::invalid(
            "sensitivity_probe",
            format!("new disparity {new_disparity} must lie in [0, {d_max})"),
        ));
    }
    let targets: Vec<(usize, usize)> = sample
        .lidar_left
        .iter_valid()
        .filter(|&(r, c, _)| region.contains(r, c))
        .map(|(r, c, _)| (r, c))
        .collect();
    if targets.is_empty() {
        return Err(Error::NoConditioningSignal);
    }
    let before_right = reproject_left_to_right(&sample.lidar_left, &sample.calib)?;
    let before = net.predict(&sample.with_lidar(sample.lidar_left.clone(), before_right))?;
    let mut left = sample.lidar_left.clone();
    for (r, c) in targets {
        left.set(r, c, new_disparity);
    }
    let right = reproject_left_to_right(&left, &sample.calib)?;
    let after = net.predict(&sample.with_lidar(left, right))?;

    let delta = Tensor::from_vec(
        &[h, w],
        after.data().iter().zip(before.data()).map(|(&a, &b)| (a - b).abs()).collect(),
    )?;
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for (i, v) in delta.data().iter().enumerate() {
        if region.contains(i / w, i % w) {
            sin += v.to_f64_lossy();
            nin += 1;
        } else {
            sout += v.to_f64_lossy();
            nout += 1;
        }
    }
    Ok(ProbeResult {
        delta,
        mean_abs_change_inside: sin / nin as f64,
        mean_abs_change_outside: if nout == 0 { 0.0 } else { sout / nout as f64 },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeRow {
    pub variant: Variant,
    /// Median wall time of one inference forward pass.
    pub forward_seconds: f64,
    pub total_params: usize,
    /// Conditioning parameters counted from checkpoint entries.
    pub conditioning_params: usize,
    /// Conditioning parameters from the closed-form count.
    pub conditioning_formula: usize,
}

impl RuntimeRow {
    pub fn counts_agree(&self) -> bool {
        self.conditioning_params == self.conditioning_formula
    }
}

pub fn runtime_csv(rows: &[RuntimeRow]) -> String {
    let mut s = String::from("variant,forward_seconds,total_params,conditioning_params,conditioning_formula\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant, r.forward_seconds, r.total_params, r.conditioning_params, r.conditioning_formula
        ));
    }
    s
}

pub const RUNTIME_WARMUP: usize = 2;

/// Times `runs` inference forwards per config on one synthetic `height x
/// width` frame after [`RUNTIME_WARMUP`] untimed passes.
pub fn runtime_report<T: Scalar>(configs: &[NetworkConfig], height: usize, width: usize, runs: usize) -> Result<Vec<RuntimeRow>> {
    if runs < 10 {
        return Err(Error::Config(format!("runtime report needs at least 10 timed runs, got {runs}")));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let mut net = Network::<T>::new(cfg, 0)?;
        let d_max = cfg.d_max() as f64;
        let scene = SceneConfig {
            width,
            height,
            disparity_range: [1.0, (0.8 * d_max).max(1.0)],
            ..SceneConfig::default()
        };
        let sample = gen_scene::<T>(&scene)?;
        for _ in 0..RUNTIME_WARMUP {
            net.predict(&sample)?;
        }
        let mut times = Vec::with_capacity(runs);
        for _ in 0..runs {
            let t0 = Instant::now();
            std::hint::black_box(net.predict(&sample)?);
            times.push(t0.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        let median = if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) };
        let ck = net.to_checkpoint();
        let variant = cfg.variant();
        let formula = param_count(variant.conditioning.name(), &cfg.conditioning_dims()?)?;
        rows.push(RuntimeRow {
            variant,
            forward_seconds: median,
            total_params: net.n_learnable(),
            conditioning_params: ck.count_with_prefix("conditioning."),
            conditioning_formula: formula,
        });
    }
    Ok(rows)
}
