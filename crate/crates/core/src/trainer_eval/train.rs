use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Module;
use crate::network::{Network, NetworkConfig, StereoSample};
use crate::numerics::{l1_loss, l1_loss_backward};
use crate::scalar::Scalar;

use super::optim::{RmsProp, RMSPROP_ALPHA, RMSPROP_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iters: usize,
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    /// `[height, width]` of the random training crop; full frames when absent.
    pub crop: Option<[usize; 2]>,
    /// Checkpoint interval in iterations; 0 checkpoints only at the end.
    pub checkpoint_every: usize,
    /// Stop once an iteration's loss falls below this value.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 1000,
            lr: 1e-3,
            alpha: RMSPROP_ALPHA,
            eps: RMSPROP_EPS,
            crop: None,
            checkpoint_every: 0,
            target_loss: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
}

/// Newline-delimited `iter,loss` with a header line.
pub fn format_log(log: &[LogRecord]) -> String {
    let mut s = String::from("iter,loss\n");
    for r in log {
        s.push_str(&format!("{},{:e}\n", r.iter, r.loss));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub network: Network<T>,
    pub log: Vec<LogRecord>,
}

const MAX_CROP_TRIES: usize = 64;

fn draw_crop<T: Scalar>(
    sample: &StereoSample<T>,
    crop: Option<[usize; 2]>,
    rng: &mut ChaCha8Rng,
) -> Result<StereoSample<T>> {
    let Some([ch, cw]) = crop else {
        return Ok(sample.clone());
    };
    let (h, w) = (sample.height(), sample.width());
    if ch > h || cw > w {
        return Err(Error::Config(format!("crop {ch}x{cw} exceeds the {h}x{w} frame")));
    }
    for _ in 0..MAX_CROP_TRIES {
        let top = rng.random_range(0..=h - ch);
        let left = rng.random_range(0..=w - cw);
        let c = sample.crop(top, left, ch, cw)?;
        if c.n_gt_valid() > 0 {
            return Ok(c);
        }
    }
    Err(Error::NoSupervisedPixels)
}

/// Batch-size-1 training with masked L1 on valid ground truth.
///
/// Weights come from `seed`; frame and crop choices come from an independent
/// stream of the same seed, so the run is a pure function of its inputs.
/// `on_checkpoint(iter, net)` fires every `checkpoint_every` iterations and
/// once at the end (iteration 0 when `iters == 0`).
pub fn train<T: Scalar>(
    net_cfg: &NetworkConfig,
    dataset: &[StereoSample<T>],
    cfg: &TrainConfig,
    seed: u64,
    mut on_checkpoint: impl FnMut(usize, &Network<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut net = Network::<T>::new(net_cfg, seed)?;
    let mut opt = RmsProp::<T>::new(cfg.lr, cfg.alpha, cfg.eps)?;
    if let Some([ch, cw]) = cfg.crop {
        let s = net_cfg.downsample();
        if ch == 0 || cw == 0 || ch % s != 0 || cw % s != 0 {
            return Err(Error::Config(format!("crop {ch}x{cw} must be positive multiples of the stride {s}")));
        }
    }
    for s in dataset {
        s.validate(Some(net_cfg.d_max() as f64))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut log = Vec::with_capacity(cfg.iters);
    let mut done = 0;
    for iter in 0..cfg.iters {
        let idx = rng.random_range(0..dataset.len());
        let sample = draw_crop(&dataset[idx], cfg.crop, &mut rng)?;
        let mask = sample.gt_mask();
        let (disp, cache) = net.forward(&sample, true)?;
        let loss = l1_loss(&disp, &sample.gt_disparity, &mask)?.to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iter,
                detail: format!("loss = {loss}"),
            });
        }
        log.push(LogRecord { iter, loss });
        let grad = l1_loss_backward(&disp, &sample.gt_disparity, &mask)?;
        net.zero_grad();
        net.backward(&cache, &grad)?;
        opt.step(&mut net);
        let mut bad = None;
        net.visit("", &mut |name, t, _| {
            if bad.is_none() && !t.is_finite() {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::Divergence {
                iter,
                detail: format!("non-finite values in `{name}` after the update (loss = {loss})"),
            });
        }
        done = iter + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iters {
            on_checkpoint(done, &net)?;
        }
        if cfg.target_loss.is_some_and(|t| loss < t) {
            break;
        }
    }
    on_checkpoint(done, &net)?;
    Ok(TrainOutcome { network: net, log })
}
