use std::path::{Path, PathBuf};

use fusion_stereo::conditioning::{param_count, ConditioningDims};
use fusion_stereo::data::{gen_scenes, load_manifest, write_disparity_png, write_visualization_png};
use fusion_stereo::network::{Network, NetworkConfig, StereoSample, Variant};
use fusion_stereo::trainer_eval::{
    density_sweep, evaluate, format_log, runtime_csv, runtime_report, sensitivity_probe, train, Region,
};
use fusion_stereo::{Error, Result, Scalar, Tensor};

use crate::config::{DataSource, Precision, RunConfig};

pub fn run(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::Config(format!("{}: {e}", cfg.out.display())))?;
    cfg.write_resolved()?;
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg),
        Precision::F64 => run_typed::<f64>(cfg),
    }
}

fn run_typed<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    match cfg.command.as_str() {
        "train" => cmd_train::<T>(cfg),
        "eval" => cmd_eval::<T>(cfg),
        "density" => cmd_density::<T>(cfg),
        "sensitivity" => cmd_sensitivity::<T>(cfg),
        "params" => cmd_params::<T>(cfg),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_data<T: Scalar>(cfg: &RunConfig, d_max: usize) -> Result<Vec<StereoSample<T>>> {
    match cfg.data_source()? {
        DataSource::Synthetic => {
            if cfg.data.scenes == 0 {
                return Err(Error::EmptyDataset);
            }
            cfg.scene.validate(Some(d_max as f64))?;
            let first = cfg.scene.seed;
            gen_scenes(&cfg.scene, first..first + cfg.data.scenes as u64)
        }
        DataSource::Manifest(path) => load_manifest(path, cfg.data.crop_h),
    }
}

fn load_checkpoint<T: Scalar>(cfg: &RunConfig) -> Result<Network<T>> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --checkpoint".into()))?;
    Network::load(path)
}

fn checkpoint_path(out: &Path, iter: Option<usize>) -> PathBuf {
    match iter {
        None => out.join("checkpoint.bin"),
        Some(i) => out.join("checkpoints").join(format!("iter_{i:06}.bin")),
    }
}

fn cmd_train<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let net_cfg = cfg.network_config();
    net_cfg.validate()?;
    let data = load_data::<T>(cfg, net_cfg.d_max())?;
    let every = cfg.train.checkpoint_every;
    if every > 0 {
        let dir = cfg.out.join("checkpoints");
        std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    }
    let out = train(&net_cfg, &data, &cfg.train, cfg.seed, |iter, net| {
        if every > 0 && iter > 0 && iter % every == 0 {
            net.save(checkpoint_path(&cfg.out, Some(iter)))?;
        }
        Ok(())
    })?;
    out.network.save(checkpoint_path(&cfg.out, None))?;
    write(&cfg.out.join("loss.csv"), &format_log(&out.log))?;
    match out.log.last() {
        Some(r) => println!("trained {} iterations, final loss {:.4}", out.log.len(), r.loss),
        None => println!("0 iterations: wrote the initial checkpoint"),
    }
    Ok(())
}

fn write_maps<T: Scalar>(out: &Path, stem: &str, map: &Tensor<T>, scale: f64) -> Result<()> {
    write_disparity_png(out.join(format!("{stem}_disp.png")), map, None)?;
    write_visualization_png(out.join(format!("{stem}_vis.png")), map, scale)
}

fn cmd_eval<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let mut net = load_checkpoint::<T>(cfg)?;
    let d_max = net.config().d_max();
    let data = load_data::<T>(cfg, d_max)?;
    let report = evaluate(&mut net, &data)?;
    for (i, s) in data.iter().enumerate() {
        write_maps(&cfg.out, &format!("pred_{i:04}"), &net.predict(s)?, d_max as f64)?;
    }
    let csv = report.to_csv();
    write(&cfg.out.join("metrics.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_density<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let mut net = load_checkpoint::<T>(cfg)?;
    let data = load_data::<T>(cfg, net.config().d_max())?;
    let sweep = density_sweep(&mut net, &data, &cfg.density.densities, &cfg.density.seeds)?;
    write(&cfg.out.join("density.csv"), &sweep.to_csv())?;
    let summary = sweep.summary_csv();
    write(&cfg.out.join("density_summary.csv"), &summary)?;
    println!("density,mae_px_mean,mae_px_std");
    for row in &sweep.summary {
        println!("{},{},{}", row.density, row.mean[4], row.std[4]);
    }
    Ok(())
}

fn cmd_sensitivity<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let mut net = load_checkpoint::<T>(cfg)?;
    let d_max = net.config().d_max();
    let data = load_data::<T>(cfg, d_max)?;
    let s = &cfg.sensitivity;
    let sample = data.get(s.frame).ok_or_else(|| {
        Error::Config(format!("frame {} requested but the dataset has {} frames", s.frame, data.len()))
    })?;
    let (h, w) = (sample.height(), sample.width());
    let [top, left, height, width] = s.region.unwrap_or([h / 4, w / 4, h / 2, w / 2]);
    let region = Region { top, left, height, width };
    let probe = sensitivity_probe(&mut net, sample, region, s.new_disparity)?;
    let max = probe
        .delta
        .data()
        .iter()
        .map(|v| v.to_f64_lossy())
        .fold(0.0, f64::max);
    write_maps(&cfg.out, "delta", &probe.delta, if max > 0.0 { max } else { 1.0 })?;
    let csv = format!(
        "metric,value\nmean_abs_change_inside,{}\nmean_abs_change_outside,{}\n",
        probe.mean_abs_change_inside, probe.mean_abs_change_outside
    );
    write(&cfg.out.join("sensitivity.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_params<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.params;
    let dims = ConditioningDims::new(p.channels, p.levels, p.d_hat, 1);
    let cat = param_count("ccvnorm_cat", &dims)?;
    let hier = param_count("hier_ccvnorm", &dims)?;
    let accounting = format!(
        "channels,levels,d_hat,categorical_per_layer,hierarchical_per_layer,ratio\n{},{},{},{cat},{hier},{:.4}\n",
        p.channels,
        p.levels,
        p.d_hat,
        cat as f64 / hier as f64
    );
    write(&cfg.out.join("param_accounting.csv"), &accounting)?;
    print!("{accounting}");

    let variants = if p.variants.is_empty() { Variant::all() } else { p.variants.clone() };
    let configs: Vec<NetworkConfig> = variants.into_iter().map(NetworkConfig::desk).collect();
    let rows = runtime_report::<T>(&configs, p.height, p.width, p.runs)?;
    if let Some(r) = rows.iter().find(|r| !r.counts_agree()) {
        return Err(Error::Config(format!(
            "conditioning parameter count mismatch for {}: checkpoint {} vs formula {}",
            r.variant, r.conditioning_params, r.conditioning_formula
        )));
    }
    let table = runtime_csv(&rows);
    write(&cfg.out.join("runtime.csv"), &table)?;
    print!("{table}");
    Ok(())
}
