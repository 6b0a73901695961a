//! Synthetic rectified stereo scenes with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reproject_left_to_right, CameraCalibration, SparseDisparityMap};
use crate::network::StereoSample;
use crate::numerics::Tensor;
use crate::scalar::{cst, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Noise,
    Checker,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Background plus `n_planes - 1` rectangular foreground planes.
    pub n_planes: usize,
    /// `[d_lo, d_hi]` in pixels.
    pub disparity_range: [f64; 2],
    pub texture: Texture,
    /// Fraction of left pixels carrying a LiDAR return.
    pub lidar_coverage: f64,
    pub noise_sigma_px: f64,
    pub seed: u64,
    /// Largest disparity change per pixel along either axis; 0 gives
    /// fronto-parallel planes.
    pub max_slope: f64,
    /// Fronto-parallel planes at integer disparities.
    pub integer_disparity: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 64,
            height: 32,
            n_planes: 4,
            disparity_range: [1.0, 14.0],
            texture: Texture::Noise,
            lidar_coverage: 0.3,
            noise_sigma_px: 0.0,
            seed: 0,
            max_slope: 0.05,
            integer_disparity: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self, d_max: Option<f64>) -> Result<()> {
        let [lo, hi] = self.disparity_range;
        let bad = |m: String| Err(Error::Config(format!("scene: {m}")));
        if self.width < 2 || self.height < 1 || self.n_planes == 0 {
            return bad("need width >= 2, height >= 1 and at least one plane".into());
        }
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("disparity range [{lo}, {hi}] must satisfy 0 <= d_lo <= d_hi"));
        }
        if let Some(d_max) = d_max {
            if hi >= d_max {
                return bad(format!("d_hi ({hi}) must be below d_max ({d_max})"));
            }
        }
        if self.integer_disparity && lo.ceil() > hi.floor() {
            return bad("no integer disparity inside the range".into());
        }
        if !(self.lidar_coverage > 0.0 && self.lidar_coverage <= 1.0) {
            return bad(format!("lidar_coverage must lie in (0, 1], got {}", self.lidar_coverage));
        }
        if !(self.noise_sigma_px >= 0.0) || !(0.0..0.5).contains(&self.max_slope) {
            return bad("need noise_sigma_px >= 0 and max_slope in [0, 0.5)".into());
        }
        Ok(())
    }

    /// Pinhole calibration shared by every synthetic scene of this size.
    pub fn calibration(&self) -> CameraCalibration {
        CameraCalibration::new(100.0, 0.5, (self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0, self.width, self.height)
            .expect("positive extents")
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SceneConfig { seed, ..self.clone() }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
enum SurfaceTexture {
    /// Per-lattice-point colors, linear along rows.
    Noise { key: u64 },
    Checker { period: f64, colors: [[f64; 3]; 2] },
    Gradient { origin: [f64; 3], dx: [f64; 3], dy: [f64; 3] },
}

impl SurfaceTexture {
    fn lattice(key: u64, ix: i64, iy: i64, ch: usize) -> f64 {
        let h = splitmix(key ^ splitmix((ix as u64) ^ splitmix((iy as u64) << 2 | ch as u64)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn color(&self, x: f64, y: usize) -> [f64; 3] {
        match self {
            SurfaceTexture::Noise { key } => {
                let (x0, t) = (x.floor(), x - x.floor());
                std::array::from_fn(|ch| {
                    let a = Self::lattice(*key, x0 as i64, y as i64, ch);
                    if t == 0.0 {
                        a
                    } else {
                        let b = Self::lattice(*key, x0 as i64 + 1, y as i64, ch);
                        (1.0 - t) * a + t * b
                    }
                })
            }
            SurfaceTexture::Checker { period, colors } => {
                let parity = ((x / period).floor() as i64 + (y as f64 / period).floor() as i64).rem_euclid(2);
                colors[parity as usize]
            }
            SurfaceTexture::Gradient { origin, dx, dy } => {
                std::array::from_fn(|ch| (origin[ch] + dx[ch] * x + dy[ch] * y as f64).clamp(0.0, 1.0))
            }
        }
    }
}

/// Plane `d(x, y) = a + bx * x + by * y` over a left-image rectangle.
#[derive(Debug, Clone)]
struct Surface {
    a: f64,
    bx: f64,
    by: f64,
    /// `[x0, y0, x1, y1)` in continuous left coordinates.
    rect: [f64; 4],
    texture: SurfaceTexture,
}

impl Surface {
    fn disparity(&self, x: f64, y: f64) -> f64 {
        self.a + self.bx * x + self.by * y
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        let [x0, y0, x1, y1] = self.rect;
        x >= x0 && x < x1 && y >= y0 && y < y1
    }

    /// Left coordinate of the surface point seen at right-image `xr`.
    fn left_x(&self, xr: f64, y: f64) -> f64 {
        (xr + self.a + self.by * y) / (1.0 - self.bx)
    }
}

struct Scene {
    surfaces: Vec<Surface>,
}

impl Scene {
    /// Nearest surface at a left pixel.
    fn visible_left(&self, x: f64, y: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            if s.covers(x, y) {
                let d = s.disparity(x, y);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// Nearest surface at a right-image position, with its left coordinate.
    fn visible_right(&self, xr: f64, y: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            let xl = s.left_x(xr, y);
            if s.covers(xl, y) {
                let d = s.disparity(xl, y);
                if best.is_none_or(|(_, _, bd)| d > bd) {
                    best = Some((i, xl, d));
                }
            }
        }
        best.map(|(i, xl, _)| (i, xl))
    }
}

fn random_texture(kind: Texture, rng: &mut ChaCha8Rng) -> SurfaceTexture {
    match kind {
        Texture::Noise => SurfaceTexture::Noise { key: rng.random() },
        Texture::Checker => SurfaceTexture::Checker {
            period: rng.random_range(2..=5) as f64,
            colors: [std::array::from_fn(|_| rng.random_range(0.0..0.45)), std::array::from_fn(|_| rng.random_range(0.55..1.0))],
        },
        Texture::Gradient => SurfaceTexture::Gradient {
            origin: std::array::from_fn(|_| rng.random_range(0.2..0.8)),
            dx: std::array::from_fn(|_| rng.random_range(-0.02..0.02)),
            dy: std::array::from_fn(|_| rng.random_range(-0.02..0.02)),
        },
    }
}

/// A plane whose disparity stays inside `[lo, hi]` over the in-image part
/// of `rect`.
fn random_plane(cfg: &SceneConfig, rect: [f64; 4], rng: &mut ChaCha8Rng) -> Surface {
    let [lo, hi] = cfg.disparity_range;
    let texture = random_texture(cfg.texture, rng);
    if cfg.integer_disparity {
        let d = rng.random_range(lo.ceil() as i64..=hi.floor() as i64) as f64;
        return Surface { a: d, bx: 0.0, by: 0.0, rect, texture };
    }
    let dc = rng.random_range(lo..=hi);
    let (mut bx, mut by) = if cfg.max_slope > 0.0 {
        (rng.random_range(-cfg.max_slope..cfg.max_slope), rng.random_range(-cfg.max_slope..cfg.max_slope))
    } else {
        (0.0, 0.0)
    };
    let cx0 = rect[0].max(-0.5);
    let cy0 = rect[1].max(-0.5);
    let cx1 = rect[2].min(cfg.width as f64 - 0.5);
    let cy1 = rect[3].min(cfg.height as f64 - 0.5);
    let (mx, my) = ((cx0 + cx1) / 2.0, (cy0 + cy1) / 2.0);
    let (hx, hy) = ((cx1 - cx0) / 2.0, (cy1 - cy0) / 2.0);
    let reach = bx.abs() * hx + by.abs() * hy;
    if reach > 0.0 {
        let k = ((dc - lo) / reach).min((hi - dc) / reach).min(1.0);
        bx *= k;
        by *= k;
    }
    Surface {
        a: dc - bx * mx - by * my,
        bx,
        by,
        rect,
        texture,
    }
}

fn build_scene(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Scene {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut surfaces = vec![random_plane(cfg, [f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY], rng)];
    for _ in 1..cfg.n_planes {
        let rw = rng.random_range((w / 6.0).max(1.0)..=(w / 2.0).max(1.0)).round();
        let rh = rng.random_range((h / 4.0).max(1.0)..=(h * 0.6).max(1.0)).round();
        let x0 = rng.random_range(0.0..=(w - rw).max(0.0)).round();
        let y0 = rng.random_range(0.0..=(h - rh).max(0.0)).round();
        surfaces.push(random_plane(cfg, [x0 - 0.5, y0 - 0.5, x0 + rw - 0.5, y0 + rh - 0.5], rng));
    }
    Scene { surfaces }
}

/// Renders one scene.
///
/// Ground truth is the left-view disparity of the nearest plane; a pixel is
/// valid when its scene point lands inside the right image unoccluded. The
/// right image is the left image inverse-warped with linear interpolation,
/// falling back to the surface texture where the point is hidden in the left
/// view. The left LiDAR map samples ground truth at `lidar_coverage` with
/// optional Gaussian noise; the right map is its reprojection.
pub fn gen_scene<T: Scalar>(cfg: &SceneConfig) -> Result<StereoSample<T>> {
    cfg.validate(None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene = build_scene(cfg, &mut rng);
    let (w, h) = (cfg.width, cfg.height);
    let npx = w * h;

    let mut owner = vec![0usize; npx];
    let mut gt = vec![0.0; npx];
    let mut left = vec![0.0; 3 * npx];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let s = scene.visible_left(xf, yf).expect("background covers the plane");
            let i = y * w + x;
            owner[i] = s;
            gt[i] = scene.surfaces[s].disparity(xf, yf);
            let c = scene.surfaces[s].texture.color(xf, y);
            for ch in 0..3 {
                left[ch * npx + i] = c[ch];
            }
        }
    }

    let mut valid = vec![false; npx];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let xr = x as f64 - gt[i];
            valid[i] = xr >= 0.0 && scene.visible_right(xr, y as f64).is_some_and(|(s, _)| s == owner[i]);
        }
    }

    let mut right = vec![0.0; 3 * npx];
    for y in 0..h {
        for xr in 0..w {
            let (s, xl) = scene.visible_right(xr as f64, y as f64).expect("background covers the plane");
            let i = y * w + xr;
            let x0 = xl.floor();
            let t = xl - x0;
            let in_left = |x: f64| x >= 0.0 && x <= (w - 1) as f64 && owner[y * w + x as usize] == s;
            let c = if in_left(x0) && (t == 0.0 || in_left(x0 + 1.0)) {
                let j = y * w + x0 as usize;
                std::array::from_fn(|ch| {
                    let a = left[ch * npx + j];
                    if t == 0.0 {
                        a
                    } else {
                        (1.0 - t) * a + t * left[ch * npx + j + 1]
                    }
                })
            } else {
                scene.surfaces[s].texture.color(xl, y)
            };
            for ch in 0..3 {
                right[ch * npx + i] = c[ch];
            }
        }
    }

    let calib = cfg.calibration();
    let mut lidar = SparseDisparityMap::empty(w, h);
    let noise = Normal::new(0.0, cfg.noise_sigma_px.max(f64::MIN_POSITIVE)).expect("finite sigma");
    for i in 0..npx {
        if rng.random::<f64>() < cfg.lidar_coverage {
            let mut d = gt[i];
            if cfg.noise_sigma_px > 0.0 {
                d = (d + noise.sample(&mut rng)).max(0.0);
            }
            lidar.set(i / w, i % w, d);
        }
    }
    let lidar_right = reproject_left_to_right(&lidar, &calib)?;

    let to_t = |v: Vec<f64>| v.into_iter().map(cst::<T>).collect::<Vec<T>>();
    Ok(StereoSample {
        left_rgb: Tensor::from_vec(&[3, h, w], to_t(left))?,
        right_rgb: Tensor::from_vec(&[3, h, w], to_t(right))?,
        lidar_left: lidar,
        lidar_right,
        gt_disparity: Tensor::from_vec(&[h, w], to_t(gt))?,
        gt_valid: valid,
        calib,
    })
}

/// One scene per seed in `seeds`, otherwise identical to `cfg`.
pub fn gen_scenes<T: Scalar>(cfg: &SceneConfig, seeds: impl IntoIterator<Item = u64>) -> Result<Vec<StereoSample<T>>> {
    seeds.into_iter().map(|s| gen_scene(&cfg.with_seed(s))).collect()
}
