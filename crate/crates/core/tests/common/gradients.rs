use std::cell::RefCell;

use fusion_stereo::conditioning::{
    conditioned_backward, conditioned_forward, feature_concat_encode, BatchNorm, ConditioningKind, FeatureConcatEncoder, NormStats,
};
use fusion_stereo::cost_volume::{build_cost_volume, build_cost_volume_backward, soft_argmin, soft_argmin_backward, CostVolume};
use fusion_stereo::layers::Module;
use fusion_stereo::network::{Conditioner, ConditionerSpec, Network, Upsampler, Variant};
use fusion_stereo::numerics::{
    conv2d, conv2d_backward, conv3d, conv3d_backward, gradient_check, l1_loss, l1_loss_backward, relu, relu_backward,
    softmax_neg, softmax_neg_backward, Differentiable, GRADCHECK_EPSILON,
};
use fusion_stereo::Tensor;
use rand::Rng;

use super::fixtures::{grad, grads_of, learnable_names, param, random_map, random_sample, rng, set_params, tiny};
use super::{fail, Check};

pub const TOLERANCE: f64 = 1e-5;

#[derive(Default)]
struct Tally {
    checks: usize,
    elements: usize,
    refined: usize,
    flagged: usize,
    worst: f64,
    worst_label: String,
}

impl Tally {
    fn run<D: Differentiable>(&mut self, label: &str, op: &mut D, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<(), String> {
        let r = gradient_check(op, inputs, eps, tol).map_err(fail(label))?;
        self.checks += 1;
        self.elements += r.checked;
        self.flagged += r.flagged;
        if r.max_rel_error >= self.worst {
            self.worst = r.max_rel_error;
            self.worst_label = label.to_string();
        }
        if !r.passed(tol) {
            return Err(format!("{label}: relative error {:.3e} at {:?}", r.max_rel_error, r.worst));
        }
        if 10 * r.flagged > r.checked {
            return Err(format!("{label}: {} of {} elements at kinks", r.flagged, r.checked));
        }
        Ok(())
    }

    fn summary(&self) -> String {
        format!(
            "{} checks, {} elements ({} at a smaller step), {} flagged kinks, worst {:.2e} ({})",
            self.checks, self.elements, self.refined, self.flagged, self.worst, self.worst_label
        )
    }
}

/// Values bounded away from zero so ReLU and L1 kinks are not straddled.
fn away_from_zero(shape: &[usize], margin: f64, r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = r.random_range(margin..1.0);
        if r.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// Moves parameters off their initialization so no gradient is structurally
/// tiny (a 0.01-scale head shrinks upstream gradients below what a 1e-5 step
/// resolves in 64-bit).
fn jitter(t: &Tensor<f64>, r: &mut impl Rng) -> Tensor<f64> {
    let noise = Tensor::<f64>::randn(t.shape(), 0.0, 0.3, r);
    Tensor::from_fn(t.shape(), |i| t.data()[i] + noise.data()[i])
}

fn primitive_ops(seed: u64, t: &mut Tally) -> Result<(), String> {
    let mut r = rng(seed);
    for (k, s, p) in [(3, 1, 1), (5, 2, 2), (1, 1, 0)] {
        let x = Tensor::randn(&[2, 7, 6], 0.0, 1.0, &mut r);
        let w = Tensor::randn(&[3, 2, k, k], 0.0, 0.5, &mut r);
        let b = Tensor::randn(&[3], 0.0, 0.5, &mut r);
        let mut op = (
            |i: &[Tensor<f64>]| conv2d(&i[0], &i[1], &i[2], s, p),
            |i: &[Tensor<f64>], g: &Tensor<f64>| {
                let c = conv2d_backward(&i[0], &i[1], s, p, g)?;
                Ok(vec![c.input, c.weight, c.bias])
            },
        );
        t.run(&format!("conv2d k{k} s{s} seed {seed}"), &mut op, &[x, w, b], GRADCHECK_EPSILON, TOLERANCE)?;
    }
    for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
        let x = Tensor::randn(&[2, 4, 5, 4], 0.0, 1.0, &mut r);
        let w = Tensor::randn(&[2, 2, k, k, k], 0.0, 0.3, &mut r);
        let b = Tensor::randn(&[2], 0.0, 0.5, &mut r);
        let mut op = (
            |i: &[Tensor<f64>]| conv3d(&i[0], &i[1], &i[2], s, p),
            |i: &[Tensor<f64>], g: &Tensor<f64>| {
                let c = conv3d_backward(&i[0], &i[1], s, p, g)?;
                Ok(vec![c.input, c.weight, c.bias])
            },
        );
        t.run(&format!("conv3d k{k} s{s} seed {seed}"), &mut op, &[x, w, b], GRADCHECK_EPSILON, TOLERANCE)?;
    }

    let l = Tensor::randn(&[2, 3, 6], 0.0, 1.0, &mut r);
    let rt = Tensor::randn(&[2, 3, 6], 0.0, 1.0, &mut r);
    let mut op = (
        |i: &[Tensor<f64>]| Ok(build_cost_volume(&i[0], &i[1], 4)?.into_tensor()),
        |i: &[Tensor<f64>], g: &Tensor<f64>| {
            let (a, b) = build_cost_volume_backward(&i[0], &i[1], 4, g)?;
            Ok(vec![a, b])
        },
    );
    t.run(&format!("build_cost_volume seed {seed}"), &mut op, &[l, rt], GRADCHECK_EPSILON, TOLERANCE)?;

    let v = Tensor::randn(&[1, 3, 4, 5], 0.0, 2.0, &mut r);
    let mut op = (
        |i: &[Tensor<f64>]| soft_argmin(&i[0], 2.0),
        |i: &[Tensor<f64>], g: &Tensor<f64>| Ok(vec![soft_argmin_backward(&i[0], 2.0, g)?]),
    );
    t.run(&format!("soft_argmin seed {seed}"), &mut op, &[v], GRADCHECK_EPSILON, TOLERANCE)?;

    let c = Tensor::randn(&[5], 0.0, 1.0, &mut r);
    let mut op = (
        |i: &[Tensor<f64>]| Tensor::from_vec(&[5], softmax_neg(i[0].data())),
        |i: &[Tensor<f64>], g: &Tensor<f64>| {
            let p = softmax_neg(i[0].data());
            Ok(vec![Tensor::from_vec(&[5], softmax_neg_backward(&p, g.data()))?])
        },
    );
    t.run(&format!("softmax_neg seed {seed}"), &mut op, &[c], GRADCHECK_EPSILON, 1e-6)?;

    let x = away_from_zero(&[3, 4, 5], 0.05, &mut r);
    let mut op = (
        |i: &[Tensor<f64>]| Ok(relu(&i[0])),
        |i: &[Tensor<f64>], g: &Tensor<f64>| Ok(vec![relu_backward(&relu(&i[0]), g)]),
    );
    t.run(&format!("relu seed {seed}"), &mut op, &[x], GRADCHECK_EPSILON, TOLERANCE)?;

    let target = Tensor::uniform(&[4, 6], 0.0, 5.0, &mut r);
    let offset = away_from_zero(&[4, 6], 0.05, &mut r);
    let pred = Tensor::from_fn(&[4, 6], |i| target.data()[i] + offset.data()[i]);
    let mask = Tensor::from_fn(&[4, 6], |_| if r.random::<f64>() < 0.7 { 1.0 } else { 0.0 });
    let mut op = (
        |i: &[Tensor<f64>]| Tensor::from_vec(&[1], vec![l1_loss(&i[0], &target, &mask)?]),
        |i: &[Tensor<f64>], g: &Tensor<f64>| Ok(vec![l1_loss_backward(&i[0], &target, &mask)?.map(|v| v * g.data()[0])]),
    );
    t.run(&format!("l1_loss seed {seed}"), &mut op, &[pred], GRADCHECK_EPSILON, TOLERANCE)?;

    let up = Upsampler::new([2, 3, 2], [4, 6, 4]);
    let x = Tensor::randn(&[1, 2, 3, 2], 0.0, 1.0, &mut r);
    let mut op = (
        |i: &[Tensor<f64>]| up.forward(&i[0]),
        |_: &[Tensor<f64>], g: &Tensor<f64>| Ok(vec![up.backward(g)?]),
    );
    t.run(&format!("upsample seed {seed}"), &mut op, &[x], GRADCHECK_EPSILON, TOLERANCE)
}

fn normalization_ops(seed: u64, t: &mut Tally) -> Result<(), String> {
    let mut r = rng(100 + seed);
    for training in [true, false] {
        let mut bn = BatchNorm::<f64>::new(3, 2);
        bn.stats.running_mean = Tensor::randn(&[3], 0.0, 1.0, &mut r);
        bn.stats.running_var = Tensor::uniform(&[3], 0.5, 2.0, &mut r);
        let bn = RefCell::new(bn);
        let x = Tensor::randn(&[2, 3, 4, 5], 0.5, 1.5, &mut r);
        let gamma = Tensor::randn(&[3], 1.0, 0.3, &mut r);
        let beta = Tensor::randn(&[3], 0.0, 0.3, &mut r);
        let load = |b: &mut BatchNorm<f64>, i: &[Tensor<f64>]| {
            b.gamma.data_mut().copy_from_slice(i[1].data());
            b.beta.data_mut().copy_from_slice(i[2].data());
        };
        let mut op = (
            |i: &[Tensor<f64>]| {
                let mut b = bn.borrow_mut();
                load(&mut b, i);
                Ok(b.forward(&i[0], training)?.0)
            },
            |i: &[Tensor<f64>], g: &Tensor<f64>| {
                let mut b = bn.borrow_mut();
                load(&mut b, i);
                b.zero_grad();
                let (_, cache) = b.forward(&i[0], training)?;
                let gx = b.backward(&cache, g)?;
                Ok(vec![gx, grad(&b.gamma), grad(&b.beta)])
            },
        );
        t.run(&format!("batch_norm training={training} seed {seed}"), &mut op, &[x, gamma, beta], GRADCHECK_EPSILON, TOLERANCE)?;

        let mut stats = NormStats::<f64>::new(3);
        stats.running_mean = Tensor::randn(&[3], 0.0, 1.0, &mut r);
        stats.running_var = Tensor::uniform(&[3], 0.5, 2.0, &mut r);
        let stats = RefCell::new(stats);
        let f = Tensor::randn(&[3, 3, 4, 4], -0.5, 1.5, &mut r);
        let gamma = Tensor::randn(&[3, 4, 4, 3], 1.0, 0.3, &mut r);
        let beta = Tensor::randn(&[3, 4, 4, 3], 0.0, 0.3, &mut r);
        let mut op = (
            |i: &[Tensor<f64>]| Ok(conditioned_forward(&i[0], &mut stats.borrow_mut(), &i[1], &i[2], training)?.0),
            |i: &[Tensor<f64>], g: &Tensor<f64>| {
                let (_, cache) = conditioned_forward(&i[0], &mut stats.borrow_mut(), &i[1], &i[2], training)?;
                let (gx, gg, gb) = conditioned_backward(&cache, &i[1], g)?;
                Ok(vec![gx, gg, gb])
            },
        );
        t.run(
            &format!("conditioned norm training={training} seed {seed}"),
            &mut op,
            &[f, gamma, beta],
            GRADCHECK_EPSILON,
            TOLERANCE,
        )?;
    }
    Ok(())
}

/// One conditioned normalization layer on a `2x4x4x4` volume: gradient
/// w.r.t. the volume and every parameter of the producer.
fn conditioning_layer(kind: ConditioningKind, seed: u64, t: &mut Tally) -> Result<(), String> {
    let mut r = rng(2000 + seed);
    let (channels, levels, d_max) = (2, 4, 4.0);
    let map = random_map(4, 4, 0.5, d_max, &mut r);
    let f = Tensor::randn(&[channels, 4, 4, levels], 0.0, 1.5, &mut r);
    let spec = ConditionerSpec {
        kind,
        layer_ids: vec![1],
        channels,
        levels,
        d_hat: 4,
        encoder_channels: 3,
        mlp_hidden: 4,
    };
    let cond = Conditioner::<f64>::new(&spec, &mut r);
    let names = learnable_names(&cond);
    let mut inputs = vec![f];
    inputs.extend(names.iter().map(|n| jitter(&param(&cond, n), &mut r)));
    let cond = RefCell::new(cond);
    for training in [true, false] {
        let label = format!("{} layer training={training} seed {seed}", kind.name());
        let mut stats = NormStats::<f64>::new(channels);
        stats.running_mean = Tensor::randn(&[channels], 0.0, 1.0, &mut r);
        stats.running_var = Tensor::uniform(&[channels], 0.5, 2.0, &mut r);
        let stats = RefCell::new(stats);
        let mut op = (
            |i: &[Tensor<f64>]| {
                let mut c = cond.borrow_mut();
                set_params(&mut *c, &names, &i[1..]);
                let (g, b) = c.params(&c.prepare(&map, d_max)?, 1)?;
                Ok(conditioned_forward(&i[0], &mut stats.borrow_mut(), &g, &b, training)?.0)
            },
            |i: &[Tensor<f64>], grad_out: &Tensor<f64>| {
                let mut c = cond.borrow_mut();
                set_params(&mut *c, &names, &i[1..]);
                c.zero_grad();
                let state = c.prepare(&map, d_max)?;
                let (g, b) = c.params(&state, 1)?;
                let (_, cache) = conditioned_forward(&i[0], &mut stats.borrow_mut(), &g, &b, training)?;
                let (gx, gg, gb) = conditioned_backward(&cache, &g, grad_out)?;
                if let Conditioner::Continuous(e) = &mut *c {
                    let enc = e.encode(&map, d_max)?;
                    let trunk = e.head_backward(&enc, 1, &gg, &gb)?;
                    e.trunk_backward(&enc, &trunk)?;
                } else {
                    c.params_backward(&state, 1, &gg, &gb, &mut None)?;
                }
                let mut out = vec![gx];
                out.extend(grads_of(&*c, &names));
                Ok(out)
            },
        );
        t.run(&label, &mut op, &inputs, GRADCHECK_EPSILON, TOLERANCE)?;
    }
    Ok(())
}

/// Plain 3-D batch norm, the layer of the unconditioned variant.
fn plain_layer(seed: u64, t: &mut Tally) -> Result<(), String> {
    let mut r = rng(3000 + seed);
    let bn = RefCell::new(BatchNorm::<f64>::new(2, 3));
    let inputs = [
        Tensor::randn(&[2, 4, 4, 4], 0.0, 1.5, &mut r),
        Tensor::randn(&[2], 1.0, 0.3, &mut r),
        Tensor::randn(&[2], 0.0, 0.3, &mut r),
    ];
    let load = |b: &mut BatchNorm<f64>, i: &[Tensor<f64>]| {
        b.gamma.data_mut().copy_from_slice(i[1].data());
        b.beta.data_mut().copy_from_slice(i[2].data());
    };
    let mut op = (
        |i: &[Tensor<f64>]| {
            let mut b = bn.borrow_mut();
            load(&mut b, i);
            Ok(b.forward(&i[0], true)?.0)
        },
        |i: &[Tensor<f64>], g: &Tensor<f64>| {
            let mut b = bn.borrow_mut();
            load(&mut b, i);
            b.zero_grad();
            let (_, cache) = b.forward(&i[0], true)?;
            let gx = b.backward(&cache, g)?;
            Ok(vec![gx, grad(&b.gamma), grad(&b.beta)])
        },
    );
    t.run(&format!("none layer seed {seed}"), &mut op, &inputs, GRADCHECK_EPSILON, TOLERANCE)
}

/// LiDAR features broadcast over disparity and appended to the volume.
fn concat_layer(seed: u64, t: &mut Tally) -> Result<(), String> {
    let mut r = rng(4000 + seed);
    let (levels, d_max) = (4, 4.0);
    let map = random_map(4, 4, 0.5, d_max, &mut r);
    let enc = FeatureConcatEncoder::<f64>::new(3, &mut r);
    let names = learnable_names(&enc);
    let mut inputs = vec![Tensor::randn(&[2, 4, 4, levels], 0.0, 1.0, &mut r)];
    inputs.extend(names.iter().map(|n| jitter(&param(&enc, n), &mut r)));
    let enc = RefCell::new(enc);
    let mut op = (
        |i: &[Tensor<f64>]| {
            let mut e = enc.borrow_mut();
            set_params(&mut *e, &names, &i[1..]);
            let extra = feature_concat_encode(&map, &e, levels, d_max)?;
            let mut data = i[0].data().to_vec();
            data.extend_from_slice(extra.data());
            Tensor::from_vec(&[2 + extra.shape()[0], 4, 4, levels], data)
        },
        |i: &[Tensor<f64>], g: &Tensor<f64>| {
            let mut e = enc.borrow_mut();
            set_params(&mut *e, &names, &i[1..]);
            e.zero_grad();
            let encoded = e.encode(&map, d_max)?;
            let split = i[0].len();
            let extra = Tensor::from_vec(&[g.shape()[0] - 2, 4, 4, levels], g.data()[split..].to_vec())?;
            e.backward(&encoded, &extra)?;
            let mut out = vec![Tensor::from_vec(i[0].shape(), g.data()[..split].to_vec())?];
            out.extend(grads_of(&*e, &names));
            Ok(out)
        },
    );
    t.run(&format!("feature_concat layer seed {seed}"), &mut op, &inputs, GRADCHECK_EPSILON, TOLERANCE)
}

/// Central differences at the default step for deep compositions.
///
/// A deep forward pass carries roundoff of order `eps_mach * |y|` per output,
/// which the difference quotient amplifies by `1 / step`. An element passes
/// when `|a - fd| <= tol * max(|a|, |fd|, 1e-8) + eps_mach * sum|r * y| / step`;
/// the second term is that roundoff bound. With many ReLUs some unit sits
/// within one step of its kink; an element that fails at the default step is
/// counted as a kink if the difference at a 4x or 16x smaller step meets the
/// same bound, or if its one-sided differences still disagree by more than
/// ten times the tolerance at the smallest step (a point exactly on a kink).
fn composite<D: Differentiable>(label: &str, op: &mut D, inputs: &[Tensor<f64>], t: &mut Tally) -> Result<(), String> {
    let y0 = op.forward(inputs).map_err(fail(label))?;
    let proj = Tensor::uniform(y0.shape(), -1.0, 1.0, &mut rng(0x636f_6d70));
    let analytic = op.backward(inputs, &proj).map_err(fail(label))?;
    let mass: f64 = y0.data().iter().zip(proj.data()).map(|(y, r)| (y * r).abs()).sum();
    let (mut checked, mut refined, mut flagged, mut worst) = (0, 0, 0, 0.0f64);
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let a = analytic[i].data()[j];
            let (mut excess, mut fd, mut asym) = (f64::INFINITY, 0.0, 0.0);
            for (attempt, step) in [GRADCHECK_EPSILON, GRADCHECK_EPSILON / 4.0, GRADCHECK_EPSILON / 16.0].into_iter().enumerate() {
                let x = inputs[i].data()[j];
                let mut eval = |v: f64| -> Result<f64, String> {
                    work[i].data_mut()[j] = v;
                    let y = op.forward(&work).map_err(fail(label))?;
                    Ok(y.data().iter().zip(y0.data()).zip(proj.data()).map(|((&p, &q), &r)| r * (p - q)).sum())
                };
                let (plus, minus) = (eval(x + step)?, eval(x - step)?);
                work[i].data_mut()[j] = x;
                fd = (plus - minus) / (2.0 * step);
                let (fwd, bwd) = (plus / step, -minus / step);
                asym = (fwd - bwd).abs() / fwd.abs().max(bwd.abs()).max(1e-8);
                let floor = f64::EPSILON * mass / step;
                excess = ((a - fd).abs() - floor).max(0.0) / a.abs().max(fd.abs()).max(1e-8);
                if excess <= TOLERANCE {
                    refined += usize::from(attempt > 0);
                    break;
                }
            }
            checked += 1;
            if excess > TOLERANCE {
                if asym > 10.0 * TOLERANCE {
                    flagged += 1;
                    continue;
                }
                return Err(format!("{label}: input {i} element {j}: analytic {a:e}, finite difference {fd:e}"));
            }
            worst = worst.max(excess);
        }
    }
    t.checks += 1;
    t.elements += checked;
    t.refined += refined;
    t.flagged += flagged;
    if worst >= t.worst {
        t.worst = worst;
        t.worst_label = label.to_string();
    }
    if 10 * flagged > checked {
        return Err(format!("{label}: {flagged} of {checked} elements at kinks"));
    }
    Ok(())
}

/// Regularizer with two conditioned layers: gradient w.r.t. the cost volume
/// and every regularizer and conditioning parameter.
fn conditioned_regularizer(variant: Variant, seed: u64, t: &mut Tally) -> Result<(), String> {
    let label = format!("{variant} regularizer seed {seed}");
    let net = Network::<f64>::new(&tiny(&variant.name()), seed).map_err(fail(&label))?;
    let names: Vec<String> = learnable_names(&net)
        .into_iter()
        .filter(|n| n.starts_with("regularizer.") || n.starts_with("conditioning."))
        .collect();
    let mut r = rng(1000 + seed);
    let lidar = random_map(8, 8, 0.5, 8.0, &mut r);
    let mut inputs = vec![Tensor::randn(&[4, 4, 4, 4], 0.0, 1.0, &mut r)];
    inputs.extend(names.iter().map(|n| param(&net, n)));
    let net = RefCell::new(net);
    let mut op = (
        |i: &[Tensor<f64>]| {
            let mut n = net.borrow_mut();
            set_params(&mut *n, &names, &i[1..]);
            Ok(n.regularize(&CostVolume::from_tensor(i[0].clone())?, &lidar, true)?.0)
        },
        |i: &[Tensor<f64>], g: &Tensor<f64>| {
            let mut n = net.borrow_mut();
            set_params(&mut *n, &names, &i[1..]);
            n.zero_grad();
            let (_, cache) = n.regularize(&CostVolume::from_tensor(i[0].clone())?, &lidar, true)?;
            let Network { regularizer, conditioner, .. } = &mut *n;
            let mut out = vec![regularizer.backward(&cache, conditioner, g)?];
            out.extend(grads_of(&*n, &names));
            Ok(out)
        },
    );
    composite(&label, &mut op, &inputs, t)
}

/// Whole network, every learnable tensor. The output-conv bias is checked
/// to have an exactly vanishing gradient instead: soft-argmin ignores a
/// constant shift of all costs.
fn end_to_end(variant: Variant, seed: u64, t: &mut Tally) -> Result<(), String> {
    let label = format!("{variant} network seed {seed}");
    let mut net = Network::<f64>::new(&tiny(&variant.name()), 10 + seed).map_err(fail(&label))?;
    let sample = random_sample(8, 16, 0.4, 8.0, 20 + seed);
    let (out, cache) = net.forward(&sample, true).map_err(fail(&label))?;
    net.backward(&cache, &Tensor::ones(out.shape())).map_err(fail(&label))?;
    let bias = grad(&param(&net, "regularizer.output.bias")).data()[0];
    if bias.abs() >= 1e-10 {
        return Err(format!("{label}: output bias gradient {bias:e} is not zero"));
    }
    let names: Vec<String> = learnable_names(&net).into_iter().filter(|n| n != "regularizer.output.bias").collect();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| param(&net, n)).collect();
    let net = RefCell::new(net);
    let mut op = (
        |i: &[Tensor<f64>]| {
            let mut n = net.borrow_mut();
            set_params(&mut *n, &names, i);
            Ok(n.forward(&sample, true)?.0)
        },
        |i: &[Tensor<f64>], g: &Tensor<f64>| {
            let mut n = net.borrow_mut();
            set_params(&mut *n, &names, i);
            n.zero_grad();
            let (_, cache) = n.forward(&sample, true)?;
            n.backward(&cache, g)?;
            Ok(grads_of(&*n, &names))
        },
    );
    composite(&label, &mut op, &inputs, t)
}

/// Every differentiable primitive, every seed.
pub fn ops_suite(seeds: u64) -> Check {
    let mut t = Tally::default();
    for seed in 0..seeds {
        primitive_ops(seed, &mut t)?;
        normalization_ops(seed, &mut t)?;
    }
    Ok(t.summary())
}

/// One layer of every conditioning kind, every seed.
pub fn conditioning_suite(seeds: u64) -> Check {
    let mut t = Tally::default();
    for seed in 0..seeds {
        for kind in ConditioningKind::ALL {
            match kind {
                ConditioningKind::None => plain_layer(seed, &mut t)?,
                ConditioningKind::FeatureConcat => concat_layer(seed, &mut t)?,
                k => conditioning_layer(k, seed, &mut t)?,
            }
        }
    }
    Ok(t.summary())
}

/// Regularizer stacks and whole networks for every variant.
pub fn composite_suite(regularizer_seeds: u64, network_seeds: u64) -> Check {
    let mut t = Tally::default();
    for v in Variant::all() {
        for seed in 0..regularizer_seeds {
            conditioned_regularizer(v, seed, &mut t)?;
        }
        for seed in 0..network_seeds {
            end_to_end(v, seed, &mut t)?;
        }
    }
    Ok(t.summary())
}
