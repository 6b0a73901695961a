use fusion_stereo::conditioning::{param_count, ConditioningDims};
use fusion_stereo::data::{gen_scenes, SceneConfig};
use fusion_stereo::layers::Module;
use fusion_stereo::network::{Network, NetworkConfig, Variant};
use fusion_stereo::trainer_eval::{format_log, train, TrainConfig};
use fusion_stereo::Tensor;

use super::fixtures::{random_map, random_sample, rng};
use super::{fail, Check};

/// With no valid LiDAR pixel, outputs of the table-driven variants do not
/// depend on any table entry outside the invalid branch.
pub fn degeneracy() -> Check {
    let mut runs = 0;
    for variant in ["ccvnorm_cat", "hier_ccvnorm", "if_ccvnorm_cat", "if_hier_ccvnorm"] {
        let cfg = NetworkConfig::desk(variant.parse().map_err(fail(variant))?);
        for seed in 0..3 {
            let mut sample = random_sample(16, 32, 0.0, 16.0, 50 + seed);
            sample.lidar_right = random_map(16, 32, 0.0, 16.0, &mut rng(seed));
            let base = Network::<f64>::new(&cfg, seed).map_err(fail(variant))?;
            let mut scrambled = base.clone();
            let mut r = rng(60 + seed);
            let mut touched = 0;
            scrambled.conditioner.visit_mut("", &mut |n, t, _| {
                if !n.ends_with("_invalid") {
                    let v = Tensor::<f64>::randn(t.shape(), 0.0, 3.0, &mut r);
                    t.data_mut().copy_from_slice(v.data());
                    touched += t.len();
                }
            });
            if touched == 0 {
                return Err(format!("{variant}: no valid-branch tables found"));
            }
            for training in [true, false] {
                let a = base.clone().forward(&sample, training).map_err(fail(variant))?.0;
                let b = scrambled.clone().forward(&sample, training).map_err(fail(variant))?.0;
                if a.data() != b.data() {
                    return Err(format!("{variant} seed {seed} training={training}: output depends on valid-branch tables"));
                }
                runs += 1;
            }
            // the scramble is visible once LiDAR is present
            let live = random_sample(16, 32, 0.3, 16.0, 50 + seed);
            let a = base.clone().forward(&live, true).map_err(fail(variant))?.0;
            let b = scrambled.clone().forward(&live, true).map_err(fail(variant))?.0;
            if a.data() == b.data() {
                return Err(format!("{variant}: scrambled tables had no effect even with LiDAR"));
            }
        }
    }
    Ok(format!("{runs} forward passes bitwise identical"))
}

/// Per-layer counts at `C=32, D=48, D_hat=192` and agreement of the formula
/// with the checkpoint for every variant at that size.
pub fn param_accounting() -> Check {
    let dims = ConditioningDims::new(32, 48, 192, 1);
    let cat = param_count("ccvnorm_cat", &dims).map_err(fail("param_count"))?;
    let hier = param_count("hier_ccvnorm", &dims).map_err(fail("param_count"))?;
    if (cat, hier) != (592_896, 21_504) {
        return Err(format!("per-layer counts {cat} / {hier}, expected 592896 / 21504"));
    }
    let ratio = cat as f64 / hier as f64;
    if ratio < 27.0 {
        return Err(format!("reduction {ratio:.2}x below 27x"));
    }
    for v in Variant::all() {
        for layers in [vec![3], vec![1, 2, 3, 4, 5, 6]] {
            let mut cfg = NetworkConfig::desk(v);
            cfg.network.d_max = 96;
            cfg.regularizer.channels = vec![32; 6];
            cfg.regularizer.conditioned_layers = layers.clone();
            cfg.conditioning.d_hat = 192;
            let dims = cfg.conditioning_dims().map_err(fail("dims"))?;
            if (dims.channels, dims.levels, dims.d_hat) != (32, 48, 192) {
                return Err(format!("{v}: dims {dims:?}"));
            }
            let formula = param_count(v.conditioning.name(), &dims).map_err(fail("param_count"))?;
            let net = Network::<f32>::new(&cfg, 0).map_err(fail("network"))?;
            let counted = net.to_checkpoint().count_with_prefix("conditioning.");
            if counted != formula {
                return Err(format!("{v} with {} layers: checkpoint {counted}, formula {formula}", layers.len()));
            }
        }
    }
    Ok(format!("592896 vs 21504 per layer ({ratio:.1}x); checkpoint counts match for every variant"))
}

/// Two identical training runs give identical checkpoints and logs.
pub fn determinism(iters: usize) -> Check {
    let data = gen_scenes::<f32>(&SceneConfig::default(), 0..3).map_err(fail("scenes"))?;
    let t = TrainConfig {
        iters,
        checkpoint_every: iters / 2,
        ..TrainConfig::default()
    };
    for variant in ["hier_ccvnorm", "ccvnorm_cont", "if_feature_concat", "naive_cbn"] {
        let cfg = NetworkConfig::desk(variant.parse().map_err(fail(variant))?);
        let run = || -> Result<(Vec<Vec<u8>>, String), String> {
            let mut snaps = Vec::new();
            let out = train(&cfg, &data, &t, 11, |_, n| {
                snaps.push(n.to_checkpoint().to_bytes());
                Ok(())
            })
            .map_err(fail(variant))?;
            snaps.push(out.network.to_checkpoint().to_bytes());
            Ok((snaps, format_log(&out.log)))
        };
        let (a, b) = (run()?, run()?);
        if a.0 != b.0 {
            return Err(format!("{variant}: checkpoints differ"));
        }
        if a.1 != b.1 {
            return Err(format!("{variant}: logs differ"));
        }
    }
    Ok(format!("4 variants x {iters} iterations: checkpoints and logs bitwise identical"))
}
