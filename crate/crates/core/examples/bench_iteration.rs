//! Times one forward + backward pass of each variant at desk scale.

use std::time::Instant;

use fusion_stereo::geometry::{CameraCalibration, SparseDisparityMap};
use fusion_stereo::network::{Network, NetworkConfig, StereoSample, Variant};
use fusion_stereo::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample<T: Scalar>(h: usize, w: usize) -> StereoSample<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut map = SparseDisparityMap::empty(w, h);
    for r in 0..h {
        for c in 0..w {
            if rng.random::<f64>() < 0.3 {
                map.set(r, c, rng.random::<f64>() * 15.0);
            }
        }
    }
    StereoSample {
        left_rgb: Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut rng),
        right_rgb: Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut rng),
        lidar_left: map.clone(),
        lidar_right: map,
        gt_disparity: Tensor::zeros(&[h, w]),
        gt_valid: vec![true; h * w],
        calib: CameraCalibration::new(50.0, 0.5, 32.0, 16.0, w, h).unwrap(),
    }
}

fn time<T: Scalar>(v: Variant) -> f64 {
    let mut net = Network::<T>::new(&NetworkConfig::desk(v), 0).unwrap();
    let s = sample::<T>(32, 64);
    let g = Tensor::<T>::ones(&[32, 64]);
    let n = 20;
    let t = Instant::now();
    for _ in 0..n {
        let (_, cache) = net.forward(&s, true).unwrap();
        net.backward(&cache, &g).unwrap();
    }
    t.elapsed().as_secs_f64() / n as f64 * 1e3
}

fn main() {
    for v in Variant::all() {
        println!("{:<22} f32 {:6.1} ms   f64 {:6.1} ms", v.name(), time::<f32>(v), time::<f64>(v));
    }
}
