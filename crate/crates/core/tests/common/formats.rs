use std::fs::File;

use fusion_stereo::data::{read_depth_png, write_depth_png, DepthMap, MAX_ENCODED};
use fusion_stereo::geometry::{depth_to_disparity, disparity_to_depth, CameraCalibration};
use rand::Rng;

use super::fixtures::rng;
use super::{fail, Check};

fn raw_pixels(path: &std::path::Path) -> Result<Vec<u16>, String> {
    let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path).map_err(fail("open"))?));
    let mut reader = decoder.read_info().map_err(fail("decode"))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("no buffer size")?];
    let info = reader.next_frame(&mut buf).map_err(fail("decode"))?;
    Ok(buf[..info.buffer_size()].chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect())
}

/// Codec identity on the 1/256 grid, pixel 0 as invalid, and the
/// depth/disparity conversion round trip.
pub fn round_trips() -> Check {
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let mut r = rng(0);
    let (w, h) = (97, 61);
    let values: Vec<Option<f64>> = (0..w * h)
        .map(|i| match i {
            0 => None,
            1 => Some(1.0 / 256.0),
            2 => Some(MAX_ENCODED),
            3 => Some(1.0),
            _ if r.random::<f64>() < 0.3 => None,
            _ => Some(r.random_range(1..=u16::MAX) as f64 / 256.0),
        })
        .collect();
    let map = DepthMap { width: w, height: h, values };
    let path = dir.path().join("depth.png");
    write_depth_png(&path, &map).map_err(fail("write"))?;
    let back = read_depth_png(&path).map_err(fail("read"))?;
    if back != map {
        return Err("16-bit codec is not the identity on the 1/256 grid".into());
    }
    let raw = raw_pixels(&path)?;
    for (i, (p, v)) in raw.iter().zip(&map.values).enumerate() {
        if (*p == 0) != v.is_none() {
            return Err(format!("pixel {i}: stored {p}, value {v:?}"));
        }
    }
    if raw[3] != 256 {
        return Err(format!("1 m stored as {} instead of 256", raw[3]));
    }

    let calib = CameraCalibration::new(721.5377, 0.5327, 609.6, 172.9, 1242, 375).map_err(fail("calibration"))?;
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let z: f64 = r.random_range(0.5..120.0);
        let back = disparity_to_depth(depth_to_disparity(z, &calib).map_err(fail("depth"))?, &calib).map_err(fail("disparity"))?;
        worst = worst.max((back - z).abs());
        let d: f64 = r.random_range(0.1..300.0);
        let back = depth_to_disparity(disparity_to_depth(d, &calib).map_err(fail("disparity"))?, &calib).map_err(fail("depth"))?;
        worst = worst.max((back - d).abs());
    }
    if worst > 1e-12 {
        return Err(format!("depth/disparity round trip off by {worst:e}"));
    }
    Ok(format!("{} pixels exact, pixel 0 <=> invalid, conversion round trip within {worst:.1e}", w * h))
}
