use fusion_stereo::geometry::{CameraCalibration, SparseDisparityMap};
use fusion_stereo::layers::{Module, ParamKind};
use fusion_stereo::network::{NetworkConfig, StereoSample};
use fusion_stereo::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A network small enough for exhaustive finite differences.
pub fn tiny(variant: &str) -> NetworkConfig {
    let mut c = NetworkConfig::desk(variant.parse().expect("known variant"));
    c.network.d_max = 8;
    c.features.channels = 2;
    c.features.blocks = 2;
    c.regularizer.channels = vec![3, 3];
    c.regularizer.conditioned_layers = vec![1, 2];
    c.conditioning.d_hat = 4;
    c.conditioning.encoder_channels = 3;
    c.conditioning.mlp_hidden = 4;
    c
}

pub fn random_map(h: usize, w: usize, density: f64, d_max: f64, rng: &mut ChaCha8Rng) -> SparseDisparityMap {
    let mut m = SparseDisparityMap::empty(w, h);
    for r in 0..h {
        for c in 0..w {
            if rng.random::<f64>() < density {
                m.set(r, c, rng.random::<f64>() * (d_max - 1.0));
            }
        }
    }
    m
}

pub fn random_sample(h: usize, w: usize, density: f64, d_max: f64, seed: u64) -> StereoSample<f64> {
    let mut rng = rng(seed);
    StereoSample {
        left_rgb: Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut rng),
        right_rgb: Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut rng),
        lidar_left: random_map(h, w, density, d_max, &mut rng),
        lidar_right: random_map(h, w, density, d_max, &mut rng),
        gt_disparity: Tensor::uniform(&[h, w], 0.5, d_max - 1.0, &mut rng),
        gt_valid: (0..h * w).map(|_| rng.random::<f64>() < 0.8).collect(),
        calib: CameraCalibration::new(50.0, 0.5, w as f64 / 2.0, h as f64 / 2.0, w, h).expect("valid calibration"),
    }
}

pub fn learnable_names<M: Module<f64>>(m: &M) -> Vec<String> {
    let mut names = Vec::new();
    m.visit("", &mut |n, _, k| {
        if k == ParamKind::Learnable {
            names.push(n.to_string());
        }
    });
    names
}

pub fn param<M: Module<f64>>(m: &M, name: &str) -> Tensor<f64> {
    let mut out = None;
    m.visit("", &mut |n, t, _| {
        if n == name {
            out = Some(t.clone());
        }
    });
    out.unwrap_or_else(|| panic!("no parameter {name}"))
}

pub fn set_params<M: Module<f64>>(m: &mut M, names: &[String], values: &[Tensor<f64>]) {
    m.visit_mut("", &mut |n, t, _| {
        if let Some(i) = names.iter().position(|x| x == n) {
            t.data_mut().copy_from_slice(values[i].data());
        }
    });
}

/// Accumulated gradient of a tensor, zeros if none was written.
pub fn grad(t: &Tensor<f64>) -> Tensor<f64> {
    let g = t.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]);
    Tensor::from_vec(t.shape(), g).expect("same shape")
}

pub fn grads_of<M: Module<f64>>(m: &M, names: &[String]) -> Vec<Tensor<f64>> {
    names.iter().map(|n| grad(&param(m, n))).collect()
}
