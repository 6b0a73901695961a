//! Independent nested-loop implementations compared against the library.

use fusion_stereo::conditioning::{
    apply_conditioned_norm, bn3d, ccvnorm_categorical_params, ccvnorm_continuous_params, feature_concat_encode,
    hierccvnorm_params, naive_cbn_params, CategoricalTable, ContinuousEncoder, FeatureConcatEncoder, HierTable, NaiveCbn,
    NormStats,
};
use fusion_stereo::cost_volume::{build_cost_volume, soft_argmin};
use fusion_stereo::geometry::{CameraCalibration, SparseDisparityMap};
use fusion_stereo::layers::Module;
use fusion_stereo::network::StereoSample;
use fusion_stereo::numerics::{conv2d, conv3d};
use fusion_stereo::trainer_eval::metrics_for;
use fusion_stereo::Tensor;
use rand::Rng;

use super::fixtures::{param, random_map, rng};
use super::{fail, Check};

/// Tolerance for floating reductions evaluated in a different order.
pub const REDUCTION_TOL: f64 = 1e-10;

fn close(what: &str, got: &Tensor<f64>, want: &Tensor<f64>, worst: &mut f64) -> Result<(), String> {
    if got.shape() != want.shape() {
        return Err(format!("{what}: shape {:?} != {:?}", got.shape(), want.shape()));
    }
    let d = got.max_abs_diff(want);
    *worst = worst.max(d);
    if d > REDUCTION_TOL {
        return Err(format!("{what}: max abs difference {d:e}"));
    }
    Ok(())
}

fn exact(what: &str, got: &Tensor<f64>, want: &Tensor<f64>) -> Result<(), String> {
    if got.shape() != want.shape() || got.data() != want.data() {
        return Err(format!("{what}: not bitwise equal"));
    }
    Ok(())
}

pub fn conv2d_loops(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for o in 0..co {
        for y in 0..oh {
            for xo in 0..ow {
                let mut s = b.data()[o];
                for i in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xo * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                s += w.at(&[o, i, ky, kx]) * x.at(&[i, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                out.set(&[o, y, xo], s);
            }
        }
    }
    out
}

pub fn conv3d_loops(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let s = x.shape();
    let (ci, n) = (s[0], [s[1], s[2], s[3]]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let o: Vec<usize> = n.iter().map(|&e| (e + 2 * pad - k) / stride + 1).collect();
    let mut out = Tensor::zeros(&[co, o[0], o[1], o[2]]);
    let src = |p: usize, kk: usize, e: usize| {
        let v = (p * stride + kk) as isize - pad as isize;
        (v >= 0 && (v as usize) < e).then_some(v as usize)
    };
    for oc in 0..co {
        for a in 0..o[0] {
            for bb in 0..o[1] {
                for c in 0..o[2] {
                    let mut acc = b.data()[oc];
                    for i in 0..ci {
                        for ka in 0..k {
                            for kb in 0..k {
                                for kc in 0..k {
                                    if let (Some(ya), Some(yb), Some(yc)) = (src(a, ka, n[0]), src(bb, kb, n[1]), src(c, kc, n[2])) {
                                        acc += w.at(&[oc, i, ka, kb, kc]) * x.at(&[i, ya, yb, yc]);
                                    }
                                }
                            }
                        }
                    }
                    out.set(&[oc, a, bb, c], acc);
                }
            }
        }
    }
    out
}

fn relu_loops(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// `relu(conv2(relu(conv1(s))) + s)` with `s = relu(stem(x))`, all 3x3 same.
fn residual_encoder_loops<M: Module<f64>>(m: &M, prefix: &str, x: &Tensor<f64>) -> Tensor<f64> {
    let layer = |name: &str, input: &Tensor<f64>| {
        let w = param(m, &format!("{prefix}{name}.weight"));
        let b = param(m, &format!("{prefix}{name}.bias"));
        conv2d_loops(input, &w, &b, 1, 1)
    };
    let stem = relu_loops(&layer("stem", x));
    let mid = relu_loops(&layer("res1", &stem));
    let out = layer("res2", &mid);
    relu_loops(&Tensor::from_fn(out.shape(), |i| out.data()[i] + stem.data()[i]))
}

fn encoder_input_loops(map: &SparseDisparityMap, d_max: f64) -> Tensor<f64> {
    let (h, w) = (map.height(), map.width());
    let mut t = Tensor::zeros(&[2, h, w]);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            t.set(&[0, r, c], map.values()[i] / d_max);
            t.set(&[1, r, c], if map.valid()[i] { 1.0 } else { 0.0 });
        }
    }
    t
}

fn bin_loops(d: f64, d_hat: usize, d_max: f64) -> usize {
    let mut k = 0;
    while k + 1 < d_hat && d >= (k + 1) as f64 * d_max / d_hat as f64 {
        k += 1;
    }
    k
}

fn convolutions(seed: u64, worst: &mut f64) -> Result<(), String> {
    let mut r = rng(seed);
    for (k, s, p) in [(3, 1, 1), (5, 2, 2), (1, 1, 0), (3, 2, 0)] {
        let x = Tensor::randn(&[3, 9, 7], 0.0, 1.0, &mut r);
        let w = Tensor::randn(&[4, 3, k, k], 0.0, 1.0, &mut r);
        let b = Tensor::randn(&[4], 0.0, 1.0, &mut r);
        let got = conv2d(&x, &w, &b, s, p).map_err(fail("conv2d"))?;
        close(&format!("conv2d k{k} s{s} p{p}"), &got, &conv2d_loops(&x, &w, &b, s, p), worst)?;
    }
    for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
        let x = Tensor::randn(&[3, 5, 6, 7], 0.0, 1.0, &mut r);
        let w = Tensor::randn(&[2, 3, k, k, k], 0.0, 1.0, &mut r);
        let b = Tensor::randn(&[2], 0.0, 1.0, &mut r);
        let got = conv3d(&x, &w, &b, s, p).map_err(fail("conv3d"))?;
        close(&format!("conv3d k{k} s{s} p{p}"), &got, &conv3d_loops(&x, &w, &b, s, p), worst)?;
    }
    Ok(())
}

fn volume_and_regression(seed: u64, worst: &mut f64) -> Result<(), String> {
    let mut r = rng(100 + seed);
    let (c, h, w, levels) = (3, 4, 9, 6);
    let l = Tensor::randn(&[c, h, w], 0.0, 1.0, &mut r);
    let rt = Tensor::randn(&[c, h, w], 0.0, 1.0, &mut r);
    let got = build_cost_volume(&l, &rt, levels).map_err(fail("build_cost_volume"))?.into_tensor();
    let mut want = Tensor::zeros(&[2 * c, h, w, levels]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                for d in 0..levels {
                    want.set(&[ch, y, x, d], l.at(&[ch, y, x]));
                    if x >= d {
                        want.set(&[c + ch, y, x, d], rt.at(&[ch, y, x - d]));
                    }
                }
            }
        }
    }
    exact("build_cost_volume", &got, &want)?;

    let v = Tensor::<f64>::randn(&[1, h, w, levels], 0.0, 3.0, &mut r);
    let got = soft_argmin(&v, 2.5).map_err(fail("soft_argmin"))?;
    let mut want = Tensor::zeros(&[h, w]);
    for y in 0..h {
        for x in 0..w {
            let (mut num, mut den) = (0.0, 0.0);
            for d in 0..levels {
                let e = (-v.at(&[0, y, x, d])).exp();
                num += d as f64 * e;
                den += e;
            }
            want.set(&[y, x], 2.5 * num / den);
        }
    }
    close("soft_argmin", &got, &want, worst)
}

fn normalization(seed: u64, worst: &mut f64) -> Result<(), String> {
    let mut r = rng(200 + seed);
    let (c, h, w, d) = (3, 4, 5, 6);
    let f = Tensor::randn(&[c, h, w, d], 2.0, 3.0, &mut r);
    let gamma: Vec<f64> = (0..c).map(|_| r.random_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut stats = NormStats::<f64>::new(c);
    let eps = stats.epsilon;
    let got = bn3d(&f, &mut stats, &gamma, &beta, true).map_err(fail("bn3d"))?;
    let n = (h * w * d) as f64;
    let mut want = Tensor::zeros(f.shape());
    let (mut means, mut vars) = (vec![0.0; c], vec![0.0; c]);
    for ch in 0..c {
        let mut m = 0.0;
        for y in 0..h {
            for x in 0..w {
                for k in 0..d {
                    m += f.at(&[ch, y, x, k]);
                }
            }
        }
        m /= n;
        let mut v = 0.0;
        for y in 0..h {
            for x in 0..w {
                for k in 0..d {
                    v += (f.at(&[ch, y, x, k]) - m).powi(2);
                }
            }
        }
        v /= n;
        for y in 0..h {
            for x in 0..w {
                for k in 0..d {
                    want.set(&[ch, y, x, k], gamma[ch] * (f.at(&[ch, y, x, k]) - m) / (v + eps).sqrt() + beta[ch]);
                }
            }
        }
        means[ch] = m;
        vars[ch] = v;
    }
    close("bn3d training", &got, &want, worst)?;
    let running = Tensor::from_vec(&[c], means.iter().map(|m| 0.1 * m).collect()).unwrap();
    close("bn3d running mean", &stats.running_mean, &running, worst)?;
    let running = Tensor::from_vec(&[c], vars.iter().map(|v| 0.9 + 0.1 * v).collect()).unwrap();
    close("bn3d running variance", &stats.running_var, &running, worst)?;

    let got = bn3d(&f, &mut stats, &gamma, &beta, false).map_err(fail("bn3d"))?;
    let (rm, rv) = (stats.running_mean.clone(), stats.running_var.clone());
    let want = Tensor::from_fn(f.shape(), |i| {
        let ch = i / (h * w * d);
        gamma[ch] * (f.data()[i] - rm.data()[ch]) / (rv.data()[ch] + eps).sqrt() + beta[ch]
    });
    close("bn3d inference", &got, &want, worst)?;

    let gf = Tensor::randn(&[h, w, d, c], 1.0, 0.5, &mut r);
    let bf = Tensor::randn(&[h, w, d, c], 0.0, 0.5, &mut r);
    let mut stats = NormStats::<f64>::new(c);
    let got = apply_conditioned_norm(&f, &mut stats, &gf, &bf, true).map_err(fail("apply_conditioned_norm"))?;
    let want = Tensor::from_fn(f.shape(), |i| {
        let (ch, rest) = (i / (h * w * d), i % (h * w * d));
        let (y, x, k) = (rest / (w * d), rest / d % w, rest % d);
        gf.at(&[y, x, k, ch]) * (f.data()[i] - means[ch]) / (vars[ch] + eps).sqrt() + bf.at(&[y, x, k, ch])
    });
    close("apply_conditioned_norm", &got, &want, worst)
}

fn producers(seed: u64, worst: &mut f64) -> Result<(), String> {
    let mut r = rng(300 + seed);
    let (h, w, levels, c, d_hat, d_max) = (5, 6, 4, 3, 8, 12.0);
    let mut map = random_map(h, w, 0.5, d_max, &mut r);
    // bin edges and the top of the range
    map.set(0, 0, 0.0);
    map.set(0, 1, 3.0 * d_max / d_hat as f64);
    map.set(0, 2, d_max);

    let mut cat = CategoricalTable::<f64>::new(d_hat, levels, c, &mut r);
    cat.gamma_invalid = Tensor::randn(&[levels, c], 1.0, 0.5, &mut r);
    let (g, b) = ccvnorm_categorical_params(&map, &cat, d_hat, d_max).map_err(fail("categorical"))?;
    let (mut wg, mut wb) = (Tensor::zeros(&[h, w, levels, c]), Tensor::zeros(&[h, w, levels, c]));
    for y in 0..h {
        for x in 0..w {
            for d in 0..levels {
                for ch in 0..c {
                    let (gv, bv) = match map.get(y, x) {
                        Some(v) => {
                            let k = bin_loops(v, d_hat, d_max);
                            (cat.gamma_table.at(&[k, d, ch]), cat.beta_table.at(&[k, d, ch]))
                        }
                        None => (cat.gamma_invalid.at(&[d, ch]), cat.beta_invalid.at(&[d, ch])),
                    };
                    wg.set(&[y, x, d, ch], gv);
                    wb.set(&[y, x, d, ch], bv);
                }
            }
        }
    }
    exact("categorical gamma", &g, &wg)?;
    exact("categorical beta", &b, &wb)?;

    let hier = HierTable::<f64>::new(d_hat, levels, c, &mut r);
    let (g, b) = hierccvnorm_params(&map, &hier, d_hat, d_max).map_err(fail("hierarchical"))?;
    for y in 0..h {
        for x in 0..w {
            for d in 0..levels {
                for ch in 0..c {
                    let (gv, bv) = match map.get(y, x) {
                        Some(v) => {
                            let k = bin_loops(v, d_hat, d_max);
                            (
                                hier.phi_g.at(&[d, ch]) * hier.g_table.at(&[k, ch]) + hier.psi_g.at(&[d, ch]),
                                hier.phi_h.at(&[d, ch]) * hier.h_table.at(&[k, ch]) + hier.psi_h.at(&[d, ch]),
                            )
                        }
                        None => (hier.gamma_invalid.at(&[d, ch]), hier.beta_invalid.at(&[d, ch])),
                    };
                    wg.set(&[y, x, d, ch], gv);
                    wb.set(&[y, x, d, ch], bv);
                }
            }
        }
    }
    exact("hierarchical gamma", &g, &wg)?;
    exact("hierarchical beta", &b, &wb)?;

    let mlp = NaiveCbn::<f64>::new(5, levels, c, &mut r);
    let mut mlp = mlp;
    mlp.w2 = Tensor::randn(mlp.w2.shape(), 0.0, 1.0, &mut r);
    let (g, b) = naive_cbn_params(&map, &mlp, d_max).map_err(fail("naive"))?;
    let (mut pg, mut pb) = (Tensor::zeros(&[h, w, c]), Tensor::zeros(&[h, w, c]));
    for y in 0..h {
        for x in 0..w {
            let out: Vec<f64> = match map.get(y, x) {
                Some(v) => {
                    let hidden: Vec<f64> = (0..5).map(|j| (mlp.w1.data()[j] * (v / d_max) + mlp.b1.data()[j]).tanh()).collect();
                    (0..2 * c)
                        .map(|o| (0..5).map(|j| mlp.w2.at(&[o, j]) * hidden[j]).sum::<f64>() + mlp.b2.data()[o])
                        .collect()
                }
                None => mlp.gamma_uncond.data().iter().chain(mlp.beta_uncond.data()).copied().collect(),
            };
            for ch in 0..c {
                pg.set(&[y, x, ch], out[ch]);
                pb.set(&[y, x, ch], out[c + ch]);
                for d in 0..levels {
                    wg.set(&[y, x, d, ch], out[ch]);
                    wb.set(&[y, x, d, ch], out[c + ch]);
                }
            }
        }
    }
    close("naive gamma", &g, &pg, worst)?;
    close("naive beta", &b, &pb, worst)?;
    let (g, b) = mlp.params(&map, d_max).map_err(fail("naive"))?;
    close("naive gamma field", &g, &wg, worst)?;
    close("naive beta field", &b, &wb, worst)?;

    let enc = ContinuousEncoder::<f64>::new(4, levels, c, &[2], &mut r);
    let (g, b) = ccvnorm_continuous_params(&map, &enc, 2, d_max).map_err(fail("continuous"))?;
    let feats = residual_encoder_loops(&enc, "encoder.", &encoder_input_loops(&map, d_max));
    let head = conv2d_loops(&feats, &param(&enc, "layer2.head.weight"), &param(&enc, "layer2.head.bias"), 1, 0);
    for y in 0..h {
        for x in 0..w {
            for d in 0..levels {
                for ch in 0..c {
                    wg.set(&[y, x, d, ch], head.at(&[d * c + ch, y, x]));
                    wb.set(&[y, x, d, ch], head.at(&[levels * c + d * c + ch, y, x]));
                }
            }
        }
    }
    close("continuous gamma", &g, &wg, worst)?;
    close("continuous beta", &b, &wb, worst)?;

    let fc = FeatureConcatEncoder::<f64>::new(3, &mut r);
    let got = feature_concat_encode(&map, &fc, levels, d_max).map_err(fail("feature concat"))?;
    let feats = residual_encoder_loops(&fc, "", &encoder_input_loops(&map, d_max));
    let want = Tensor::from_fn(&[3, h, w, levels], |i| feats.data()[i / levels]);
    close("feature concat", &got, &want, worst)
}

fn metrics(seed: u64, worst: &mut f64) -> Result<(), String> {
    let mut r = rng(400 + seed);
    let (h, w) = (8, 8);
    let calib = CameraCalibration::new(80.0, 0.4, 3.5, 3.5, w, h).unwrap();
    let mut preds = Vec::new();
    let mut samples = Vec::new();
    for _ in 0..3 {
        let gt = Tensor::<f64>::uniform(&[h, w], 0.5, 20.0, &mut r);
        let pred = Tensor::from_fn(&[h, w], |i| (gt.data()[i] + r.random_range(-5.0..5.0)).max(0.0));
        let valid: Vec<bool> = (0..h * w).map(|_| r.random::<f64>() < 0.6).collect();
        samples.push(StereoSample {
            left_rgb: Tensor::zeros(&[3, h, w]),
            right_rgb: Tensor::zeros(&[3, h, w]),
            lidar_left: SparseDisparityMap::empty(w, h),
            lidar_right: SparseDisparityMap::empty(w, h),
            gt_disparity: gt,
            gt_valid: valid,
            calib: calib.clone(),
        });
        preds.push(pred);
    }
    let got = metrics_for(&preds, &samples).map_err(fail("metrics"))?;
    let fb = calib.focal_px * calib.baseline_m;
    let (mut n, mut gt1, mut gt2, mut gt3) = (0usize, 0usize, 0usize, 0usize);
    let (mut se, mut ae, mut sez, mut aez, mut sei, mut aei) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, s) in preds.iter().zip(&samples) {
        for y in 0..h {
            for x in 0..w {
                if !s.gt_valid[y * w + x] {
                    continue;
                }
                let (pd, gd) = (p.at(&[y, x]), s.gt_disparity.at(&[y, x]));
                let e = (pd - gd).abs();
                n += 1;
                gt1 += usize::from(e > 1.0);
                gt2 += usize::from(e > 2.0);
                gt3 += usize::from(e > 3.0);
                se += e * e;
                ae += e;
                let (zp, zg) = (fb / pd.max(0.01), fb / gd);
                sez += (zp - zg).powi(2);
                aez += (zp - zg).abs();
                let ie = 1000.0 / zp - 1000.0 / zg;
                sei += ie * ie;
                aei += ie.abs();
            }
        }
    }
    if got.n_pixels != n {
        return Err(format!("metrics: {} pixels, loops count {n}", got.n_pixels));
    }
    let nf = n as f64;
    let want = [
        100.0 * gt1 as f64 / nf,
        100.0 * gt2 as f64 / nf,
        100.0 * gt3 as f64 / nf,
        (se / nf).sqrt(),
        ae / nf,
        (sez / nf).sqrt(),
        aez / nf,
        (sei / nf).sqrt(),
        aei / nf,
    ];
    let names = [
        "err_gt_1px", "err_gt_2px", "err_gt_3px", "rmse_px", "mae_px", "rmse_m", "mae_m", "irmse_km", "imae_km",
    ];
    let have = [
        got.disparity.err_gt_1px,
        got.disparity.err_gt_2px,
        got.disparity.err_gt_3px,
        got.disparity.rmse_px,
        got.disparity.mae_px,
        got.depth.rmse_m,
        got.depth.mae_m,
        got.depth.irmse_km,
        got.depth.imae_km,
    ];
    for i in 0..9 {
        // counts are exact; the percentage is one division
        let tol = if i < 3 { 0.0 } else { REDUCTION_TOL * want[i].abs().max(1.0) };
        let d = (have[i] - want[i]).abs();
        if i >= 3 {
            *worst = worst.max(d / want[i].abs().max(1.0));
        }
        if d > tol {
            return Err(format!("metric {}: {} vs loops {}", names[i], have[i], want[i]));
        }
    }
    Ok(())
}

/// Every oracle comparison over `seeds` random draws.
pub fn suite(seeds: u64) -> Check {
    let mut worst = 0.0;
    for seed in 0..seeds {
        convolutions(seed, &mut worst)?;
        volume_and_regression(seed, &mut worst)?;
        normalization(seed, &mut worst)?;
        producers(seed, &mut worst)?;
        metrics(seed, &mut worst)?;
    }
    Ok(format!("{seeds} seeds, lookups and counts exact, worst reduction difference {worst:.2e}"))
}
